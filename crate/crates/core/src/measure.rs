//! Set sampling, intermediate-point clouds, grid-occupancy volumes and the
//! Monte Carlo Brunn-Minkowski, MCP and Borell-Brascamp-Lieb checks.

use std::collections::HashSet;
use std::f64::consts::PI;

use nalgebra::DVector;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::distortion::{least_squares, pmean};
use crate::error::{Error, Result};
use crate::flow::exp_map;
use crate::geodesy::{cut_time, minimizing_geodesic, SolverOptions};
use crate::models::{heisenberg_mul, measure_density, ModelKind, ModelSpec, Point};

/// Statistical slack: Monte Carlo sides must reach `(1 - EPS_STAT)` of the bound.
pub const EPS_STAT: f64 = 0.05;
/// Abort threshold for the fraction of pairs without a boundary-value solution.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;
const MAX_PAIRS: usize = 1_000_000;
const MAX_CELLS: f64 = 1e8;

/// Description of a subset of the model's coordinate space.
#[derive(Debug, Clone, PartialEq)]
pub enum SetSpec {
    /// Axis-aligned box `[lo_i, hi_i]`.
    Box(Vec<(f64, f64)>),
    /// Metric ball.
    Ball { center: Vec<f64>, radius: f64 },
    /// Explicit finite set.
    Points(Vec<Vec<f64>>),
}

impl SetSpec {
    pub fn describe(&self) -> String {
        match self {
            SetSpec::Box(b) => {
                let s: Vec<String> = b.iter().map(|(l, h)| format!("[{l},{h}]")).collect();
                format!("box {}", s.join("x"))
            }
            SetSpec::Ball { center, radius } => format!("ball center {center:?} radius {radius}"),
            SetSpec::Points(p) => format!("{} points", p.len()),
        }
    }
}

/// Seeded samples of a set.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSet {
    pub model: String,
    pub spec: SetSpec,
    pub points: Vec<Point>,
    /// Lebesgue volume where known in closed form (boxes).
    pub exact_volume: Option<f64>,
    pub seed: u64,
}

/// Grid-occupancy estimate of a volume.  Cells only partially covered by the
/// set count fully and sparse clouds miss cells, so the value is neither a
/// strict lower nor upper bound.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeEstimate {
    pub h: f64,
    pub count: usize,
    pub value: f64,
    pub statistical: bool,
}

/// A cloud of intermediate points `gamma(t)` of minimizing geodesics.
#[derive(Debug, Clone, PartialEq)]
pub struct MidpointCloud {
    pub t: f64,
    pub points: Vec<Point>,
    pub pairs: usize,
    pub failures: usize,
    pub failure_fraction: f64,
    /// Pairs whose endpoints are joined by several minimizers.
    pub multiple: usize,
}

/// One row of an [`InequalityReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct InequalityEntry {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub verdict: bool,
    pub samples: usize,
    pub h: f64,
    pub failure_fraction: f64,
}

/// Per-`t` verdicts of a Monte Carlo inequality check.
#[derive(Debug, Clone, PartialEq)]
pub struct InequalityReport {
    pub exponent: f64,
    pub seed: u64,
    pub entries: Vec<InequalityEntry>,
    pub pass: bool,
}

fn box_volume(b: &[(f64, f64)]) -> f64 {
    b.iter().map(|(l, h)| h - l).product()
}

fn uniform_in_box(rng: &mut ChaCha8Rng, b: &[(f64, f64)]) -> Vec<f64> {
    b.iter().map(|&(l, h)| l + (h - l) * rng.random::<f64>()).collect()
}

fn solver() -> SolverOptions {
    SolverOptions::default()
}

/// Box enclosing `B_r(x)`, in coordinates relative to `x` when `translated`
/// is set (points are then mapped by left translation).
struct BallFrame {
    lo_hi: Vec<(f64, f64)>,
    translated: bool,
}

fn ball_frame(model: &ModelSpec, x: &[f64], r: f64) -> Result<BallFrame> {
    match model.kind() {
        ModelKind::Heisenberg3 => {
            // the endpoint's z is the area between the curve and its chord,
            // at most r^2 / (2 pi) (half disc)
            let zmax = r * r / (2.0 * PI);
            Ok(BallFrame {
                lo_hi: vec![(-r, r), (-r, r), (-zmax, zmax)],
                translated: true,
            })
        }
        ModelKind::Grushin2 => {
            let dy = r * (x[0].abs() + r);
            Ok(BallFrame {
                lo_hi: vec![(x[0] - r, x[0] + r), (x[1] - dy, x[1] + dy)],
                translated: false,
            })
        }
        _ => Err(Error::capability(model.name(), "metric-ball bounding box")),
    }
}

impl BallFrame {
    fn place(&self, x: &[f64], p: Vec<f64>) -> Vec<f64> {
        if self.translated {
            heisenberg_mul(x, &p).as_slice().to_vec()
        } else {
            p
        }
    }

    fn volume(&self) -> f64 {
        box_volume(&self.lo_hi)
    }
}

fn check_nonempty(model: &ModelSpec, spec: &SetSpec) -> Result<()> {
    let n = model.dim();
    match spec {
        SetSpec::Box(b) => {
            if b.len() != n {
                return Err(Error::input(format!("box has {} sides, model dimension is {n}", b.len())));
            }
            if b.iter().any(|(l, h)| !(l.is_finite() && h.is_finite() && h > l)) {
                return Err(Error::input("empty or non-finite box"));
            }
        }
        SetSpec::Ball { center, radius } => {
            model.check_len(center, "ball center")?;
            if !(*radius > 0.0 && radius.is_finite()) {
                return Err(Error::input("ball radius must be positive"));
            }
        }
        SetSpec::Points(p) => {
            if p.is_empty() {
                return Err(Error::input("empty point list"));
            }
            for q in p {
                model.check_len(q, "point")?;
            }
        }
    }
    Ok(())
}

/// Seeded uniform samples: direct for boxes, rejection against the
/// boundary-value distance for balls.  Point lists are returned as given.
pub fn sample_set(model: &ModelSpec, spec: &SetSpec, count: usize, seed: u64) -> Result<SampledSet> {
    if count == 0 {
        return Err(Error::input("count must be at least 1"));
    }
    check_nonempty(model, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (points, exact_volume) = match spec {
        SetSpec::Box(b) => (
            (0..count)
                .map(|_| DVector::from_vec(uniform_in_box(&mut rng, b)))
                .collect(),
            Some(box_volume(b)),
        ),
        SetSpec::Ball { center, radius } => {
            let frame = ball_frame(model, center, *radius)?;
            let mut out = Vec::with_capacity(count);
            let mut tries = 0usize;
            while out.len() < count {
                let batch: Vec<Vec<f64>> = (0..count.max(64))
                    .map(|_| frame.place(center, uniform_in_box(&mut rng, &frame.lo_hi)))
                    .collect();
                tries += batch.len();
                let keep: Vec<Option<Point>> = batch
                    .into_par_iter()
                    .map(|p| {
                        let d = minimizing_geodesic(model, center, &p, &solver()).ok()?.solution.length;
                        (d <= *radius).then(|| DVector::from_vec(p))
                    })
                    .collect();
                out.extend(keep.into_iter().flatten().take(count - out.len()));
                if tries > 1000 * count {
                    return Err(Error::numerical("ball rejection sampling accepts almost nothing"));
                }
            }
            (out, None)
        }
        SetSpec::Points(p) => (p.iter().map(|q| DVector::from_column_slice(q)).collect(), None),
    };
    Ok(SampledSet {
        model: model.name().to_string(),
        spec: spec.clone(),
        points,
        exact_volume,
        seed,
    })
}

fn pair_indices(na: usize, nb: usize, seed: u64) -> Vec<(usize, usize)> {
    let total = na * nb;
    if total <= MAX_PAIRS {
        (0..total).map(|k| (k / nb, k % nb)).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut idx: Vec<usize> = sample_indices(&mut rng, total, MAX_PAIRS).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|k| (k / nb, k % nb)).collect()
    }
}

fn intermediate(model: &ModelSpec, a: &[f64], b: &[f64], t: f64) -> Result<(Point, bool)> {
    if t == 0.0 {
        return Ok((DVector::from_column_slice(a), false));
    }
    if t == 1.0 {
        return Ok((DVector::from_column_slice(b), false));
    }
    let g = minimizing_geodesic(model, a, b, &solver())?;
    Ok((exp_map(model, a, g.solution.lambda.as_slice(), t)?, g.multiple_minimizers))
}

/// `t`-intermediate points for pairs from `A x B` (all pairs up to 10^6,
/// otherwise a seeded uniform subsample of 10^6 pairs).  Pairs without a
/// solution are dropped and counted; more than 5% aborts.
pub fn midpoint_set(model: &ModelSpec, a: &SampledSet, b: &SampledSet, t: f64, seed: u64) -> Result<MidpointCloud> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::input(format!("t = {t} outside [0, 1]")));
    }
    if a.points.is_empty() || b.points.is_empty() {
        return Err(Error::input("empty sample set"));
    }
    let pairs = pair_indices(a.points.len(), b.points.len(), seed);
    let res: Vec<Option<(Point, bool)>> = pairs
        .par_iter()
        .map(|&(i, j)| intermediate(model, a.points[i].as_slice(), b.points[j].as_slice(), t).ok())
        .collect();
    finish_cloud(t, pairs.len(), res)
}

fn finish_cloud(t: f64, pairs: usize, res: Vec<Option<(Point, bool)>>) -> Result<MidpointCloud> {
    let failures = res.iter().filter(|r| r.is_none()).count();
    let failure_fraction = failures as f64 / pairs as f64;
    if failure_fraction > MAX_FAILURE_FRACTION {
        return Err(Error::numerical(format!(
            "{failures} of {pairs} pairs have no boundary-value solution"
        )));
    }
    let multiple = res.iter().flatten().filter(|r| r.1).count();
    Ok(MidpointCloud {
        t,
        points: res.into_iter().flatten().map(|r| r.0).collect(),
        pairs,
        failures,
        failure_fraction,
        multiple,
    })
}

/// Intermediate points from the single point `x` to each sample of `B`.
pub fn point_midpoint_set(model: &ModelSpec, x: &[f64], b: &SampledSet, t: f64) -> Result<MidpointCloud> {
    model.check_len(x, "point")?;
    let single = SampledSet {
        model: model.name().to_string(),
        spec: SetSpec::Points(vec![x.to_vec()]),
        points: vec![DVector::from_column_slice(x)],
        exact_volume: None,
        seed: 0,
    };
    midpoint_set(model, &single, b, t, 0)
}

fn cell_of(p: &[f64], h: f64) -> Vec<i64> {
    p.iter().map(|v| (v / h).floor() as i64).collect()
}

/// Number of distinct occupied cells of the grid `h Z^n`, times the measure
/// of a cell (`h^n` times the density at the cell centre).
pub fn volume_estimate(model: &ModelSpec, points: &[Point], h: f64) -> Result<VolumeEstimate> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::input("pitch h must be positive"));
    }
    let n = model.dim();
    if points.is_empty() {
        return Ok(VolumeEstimate {
            h,
            count: 0,
            value: 0.0,
            statistical: true,
        });
    }
    let mut cells_in_box = 1.0;
    for d in 0..n {
        let lo = points.iter().map(|p| p[d]).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| p[d]).fold(f64::NEG_INFINITY, f64::max);
        cells_in_box *= ((hi / h).floor() - (lo / h).floor() + 1.0).max(1.0);
    }
    if cells_in_box > MAX_CELLS {
        return Err(Error::Resource(format!(
            "pitch {h} gives {cells_in_box:.3e} grid cells (limit 1e8)"
        )));
    }
    let cells: HashSet<Vec<i64>> = points
        .par_iter()
        .fold(HashSet::new, |mut s, p| {
            s.insert(cell_of(p.as_slice(), h));
            s
        })
        .reduce(HashSet::new, |mut a, b| {
            a.extend(b);
            a
        });
    let cell = h.powi(n as i32);
    let value = cells
        .iter()
        .map(|c| {
            let centre: Vec<f64> = c.iter().map(|&i| (i as f64 + 0.5) * h).collect();
            cell * measure_density(model, &centre)
        })
        .sum();
    Ok(VolumeEstimate {
        h,
        count: cells.len(),
        value,
        statistical: true,
    })
}

/// Default pitch: the largest side of the bounding box over 40, coarsened
/// until the box holds at least 8 points per cell on average so that sparse
/// clouds do not leave interior cells empty.
pub fn default_pitch(points: &[Point]) -> f64 {
    if points.is_empty() {
        return 1.0;
    }
    let n = points[0].len();
    let mut diam: f64 = 0.0;
    let mut sides = Vec::with_capacity(n);
    for d in 0..n {
        let lo = points.iter().map(|p| p[d]).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| p[d]).fold(f64::NEG_INFINITY, f64::max);
        diam = diam.max(hi - lo);
        sides.push(hi - lo);
    }
    if !(diam > 0.0) {
        return 1.0;
    }
    let h = diam / 40.0;
    let cells: f64 = sides.iter().map(|s| (s / h).max(1.0)).product();
    let per_cell = points.len() as f64 / cells;
    if per_cell >= 8.0 {
        h
    } else {
        h * (8.0 / per_cell).powf(1.0 / n as f64)
    }
}

fn set_volume(model: &ModelSpec, s: &SampledSet, h: f64) -> Result<f64> {
    match s.exact_volume {
        Some(v) if model.kind() != ModelKind::GenericFrame => Ok(v),
        _ => Ok(volume_estimate(model, &s.points, h)?.value),
    }
}

/// `mu(Z_t(A,B))^(1/n) >= (1-t)^(N/n) mu(A)^(1/n) + t^(N/n) mu(B)^(1/n)`
/// with the left side estimated from intermediate-point clouds.
pub fn bm_check(
    model: &ModelSpec,
    a: &SampledSet,
    b: &SampledSet,
    n_exp: f64,
    ts: &[f64],
    h: Option<f64>,
    seed: u64,
) -> Result<InequalityReport> {
    let n = model.dim() as f64;
    let mut entries = Vec::with_capacity(ts.len());
    for &t in ts {
        let cloud = midpoint_set(model, a, b, t, seed)?;
        let pitch = h.unwrap_or_else(|| default_pitch(&cloud.points));
        let z = volume_estimate(model, &cloud.points, pitch)?.value;
        let va = set_volume(model, a, pitch)?;
        let vb = set_volume(model, b, pitch)?;
        let lhs = z.powf(1.0 / n);
        let rhs = (1.0 - t).powf(n_exp / n) * va.powf(1.0 / n) + t.powf(n_exp / n) * vb.powf(1.0 / n);
        entries.push(InequalityEntry {
            t,
            lhs,
            rhs,
            slack: 1.0 - EPS_STAT,
            verdict: lhs >= rhs * (1.0 - EPS_STAT),
            samples: cloud.points.len(),
            h: pitch,
            failure_fraction: cloud.failure_fraction,
        });
    }
    Ok(InequalityReport {
        exponent: n_exp,
        seed,
        pass: entries.iter().all(|e| e.verdict),
        entries,
    })
}

/// `mu(Z_t(x, B)) >= t^N mu(B)`.
pub fn mcp_check(
    model: &ModelSpec,
    x: &[f64],
    b: &SampledSet,
    n_exp: f64,
    ts: &[f64],
    h: Option<f64>,
    seed: u64,
) -> Result<InequalityReport> {
    let mut entries = Vec::with_capacity(ts.len());
    for &t in ts {
        let cloud = point_midpoint_set(model, x, b, t)?;
        let pitch = h.unwrap_or_else(|| default_pitch(&cloud.points));
        let lhs = volume_estimate(model, &cloud.points, pitch)?.value;
        let rhs = t.powf(n_exp) * set_volume(model, b, pitch)?;
        entries.push(InequalityEntry {
            t,
            lhs,
            rhs,
            slack: 1.0 - EPS_STAT,
            verdict: lhs >= rhs * (1.0 - EPS_STAT),
            samples: cloud.points.len(),
            h: pitch,
            failure_fraction: cloud.failure_fraction,
        });
    }
    Ok(InequalityReport {
        exponent: n_exp,
        seed,
        pass: entries.iter().all(|e| e.verdict),
        entries,
    })
}

/// Non-negative function sampled at the centres of a regular grid with
/// cubic cells.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedFunction {
    pub lo: Vec<f64>,
    pub pitch: f64,
    pub shape: Vec<usize>,
    /// Row-major, last axis fastest.
    pub values: Vec<f64>,
}

impl GriddedFunction {
    pub fn new(lo: Vec<f64>, pitch: f64, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if lo.len() != shape.len() || shape.iter().product::<usize>() != values.len() {
            return Err(Error::input("grid shape does not match the value count"));
        }
        if !(pitch > 0.0) || values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::input("grid needs positive pitch and finite non-negative values"));
        }
        Ok(GriddedFunction { lo, pitch, shape, values })
    }

    /// Indicator of the box `[lo, lo + shape * pitch]`.
    pub fn indicator(lo: Vec<f64>, pitch: f64, shape: Vec<usize>) -> Result<Self> {
        let len = shape.iter().product();
        Self::new(lo, pitch, shape, vec![1.0; len])
    }

    pub fn cell_volume(&self) -> f64 {
        self.pitch.powi(self.shape.len() as i32)
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    fn cell_lo(&self, mut k: usize) -> Vec<f64> {
        let mut idx = vec![0; self.shape.len()];
        for d in (0..self.shape.len()).rev() {
            idx[d] = k % self.shape[d];
            k /= self.shape[d];
        }
        idx.iter().zip(&self.lo).map(|(&i, &l)| l + i as f64 * self.pitch).collect()
    }

    /// Seeded points uniform in the support, each with the value of its cell.
    fn sample_support(&self, count: usize, seed: u64) -> Vec<(Vec<f64>, f64)> {
        let support: Vec<usize> = (0..self.values.len()).filter(|&k| self.values[k] > 0.0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let k = support[rng.random_range(0..support.len())];
                let lo = self.cell_lo(k);
                let p = lo.iter().map(|l| l + self.pitch * rng.random::<f64>()).collect();
                (p, self.values[k])
            })
            .collect()
    }
}

/// Outcome of [`bbl_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct BblReport {
    pub t: f64,
    pub p: f64,
    pub exponent: f64,
    pub integral_f: f64,
    pub integral_g: f64,
    pub integral_h: f64,
    pub rhs: f64,
    pub slack: f64,
    pub samples: usize,
    pub h: f64,
    pub failure_fraction: f64,
    pub seed: u64,
    pub verdict: bool,
}

/// Builds the smallest `h` allowed by the p-mean hypothesis, with the
/// distortion coefficients replaced by the bounds `t^N`, `(1-t)^N`, on the
/// cells of the intermediate cloud, and checks
/// `int h >= M_t^(p/(1+np))(int f, int g) (1 - eps)`.
pub fn bbl_check(
    model: &ModelSpec,
    f: &GriddedFunction,
    g: &GriddedFunction,
    t: f64,
    p: f64,
    n_exp: f64,
    samples: usize,
    seed: u64,
) -> Result<BblReport> {
    let n = model.dim();
    let nf = n as f64;
    if f.shape.len() != n || g.shape.len() != n || f.pitch != g.pitch {
        return Err(Error::input("f and g must live on grids of the model dimension with equal pitch"));
    }
    if !(0.0..=1.0).contains(&t) || t == 0.0 || t == 1.0 {
        return Err(Error::input("t must lie in (0, 1)"));
    }
    if !(p >= -1.0 / nf) {
        return Err(Error::input("p must be at least -1/n"));
    }
    let (int_f, int_g) = (f.integral(), g.integral());
    if !(int_f > 0.0 && int_g > 0.0) {
        return Err(Error::input("f and g need positive mass"));
    }
    let m = (samples as f64).sqrt().ceil() as usize;
    let xs = f.sample_support(m, seed);
    let ys = g.sample_support(m, seed.wrapping_add(1));
    let pairs = pair_indices(xs.len(), ys.len(), seed);
    let cf = (1.0 - t).powf(nf - n_exp);
    let cg = t.powf(nf - n_exp);
    let res: Vec<Option<(Point, f64)>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (z, _) = intermediate(model, &xs[i].0, &ys[j].0, t).ok()?;
            Some((z, pmean(p, t, cf * xs[i].1, cg * ys[j].1)))
        })
        .collect();
    let failures = res.iter().filter(|r| r.is_none()).count();
    let failure_fraction = failures as f64 / pairs.len() as f64;
    if failure_fraction > MAX_FAILURE_FRACTION {
        return Err(Error::numerical(format!("{failures} of {} pairs failed", pairs.len())));
    }
    let pts: Vec<Point> = res.iter().flatten().map(|r| r.0.clone()).collect();
    let pitch = default_pitch(&pts);
    let mut best: std::collections::HashMap<Vec<i64>, f64> = std::collections::HashMap::new();
    for (z, v) in res.iter().flatten() {
        let e = best.entry(cell_of(z.as_slice(), pitch)).or_insert(0.0);
        *e = e.max(*v);
    }
    let cell = pitch.powi(n as i32);
    let int_h: f64 = best.values().sum::<f64>() * cell;
    let q = if p == f64::INFINITY {
        1.0 / nf
    } else if p == -1.0 / nf {
        f64::NEG_INFINITY
    } else {
        p / (1.0 + nf * p)
    };
    let rhs = pmean(q, t, int_f, int_g);
    Ok(BblReport {
        t,
        p,
        exponent: n_exp,
        integral_f: int_f,
        integral_g: int_g,
        integral_h: int_h,
        rhs,
        slack: 1.0 - EPS_STAT,
        samples: pts.len(),
        h: pitch,
        failure_fraction,
        seed,
        verdict: int_h >= rhs * (1.0 - EPS_STAT),
    })
}

/// Hit-or-miss Monte Carlo volume of `B_r(x)` inside a box that contains it.
pub fn ball_volume_mc(model: &ModelSpec, x: &[f64], r: f64, samples: usize, seed: u64) -> Result<f64> {
    hit_or_miss(model, x, r, samples, seed, |_, len| len <= r)
}

/// Hit-or-miss Monte Carlo volume of `Z_t(x, B_r(x))`: points `p` within
/// `t r` of `x` whose minimizer from `x`, run for time `1/t`, stays
/// minimizing.
pub fn intermediate_ball_volume_mc(model: &ModelSpec, x: &[f64], r: f64, t: f64, samples: usize, seed: u64) -> Result<f64> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::input("t must lie in (0, 1]"));
    }
    hit_or_miss(model, x, t * r, samples, seed, |lambda, len| {
        len <= t * r && cut_time(model, lambda).map(|c| c * t >= 1.0 - 1e-9).unwrap_or(false)
    })
}

fn hit_or_miss(
    model: &ModelSpec,
    x: &[f64],
    r: f64,
    samples: usize,
    seed: u64,
    accept: impl Fn(&[f64], f64) -> bool + Sync,
) -> Result<f64> {
    model.check_len(x, "point")?;
    if !(r > 0.0) || samples == 0 {
        return Err(Error::input("need r > 0 and at least one sample"));
    }
    let frame = ball_frame(model, x, r)?;
    // samples are drawn in the unit box and scaled, so every radius sees the
    // same normalized pattern
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit: Vec<Vec<f64>> = (0..samples)
        .map(|_| (0..model.dim()).map(|_| rng.random::<f64>()).collect())
        .collect();
    let hits: Vec<Result<bool>> = unit
        .par_iter()
        .map(|u| {
            let local: Vec<f64> = u.iter().zip(&frame.lo_hi).map(|(c, (l, h))| l + (h - l) * c).collect();
            let p = frame.place(x, local);
            let g = minimizing_geodesic(model, x, &p, &solver())?;
            Ok(accept(g.solution.lambda.as_slice(), g.solution.length))
        })
        .collect();
    let mut count = 0usize;
    for h in hits {
        if h? {
            count += 1;
        }
    }
    Ok(frame.volume() * count as f64 / samples as f64)
}

/// Slope of `log mu(B_r(x))` against `log r`, with the volumes used.
pub fn ball_volume_exponent(model: &ModelSpec, x: &[f64], radii: &[f64], samples: usize, seed: u64) -> Result<(f64, Vec<f64>)> {
    if radii.len() < 2 {
        return Err(Error::input("need at least two radii"));
    }
    let vols = radii
        .iter()
        .map(|&r| ball_volume_mc(model, x, r, samples, seed))
        .collect::<Result<Vec<_>>>()?;
    if vols.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::numerical("a ball received no Monte Carlo hits"));
    }
    let lx: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let ly: Vec<f64> = vols.iter().map(|v| v.ln()).collect();
    Ok((least_squares(&lx, &ly).0, vols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesy::distance;

    fn unit_box(n: usize) -> SetSpec {
        SetSpec::Box(vec![(0.0, 1.0); n])
    }

    #[test]
    fn box_sampling_is_seeded() {
        let m = ModelSpec::heisenberg();
        let a = sample_set(&m, &unit_box(3), 10, 4).unwrap();
        assert_eq!(a.points.len(), 10);
        assert!(a.points.iter().all(|p| p.iter().all(|c| (0.0..=1.0).contains(c))));
        assert_eq!(a, sample_set(&m, &unit_box(3), 10, 4).unwrap());
        assert_eq!(a.exact_volume, Some(1.0));
        assert!(sample_set(&m, &SetSpec::Points(vec![]), 3, 0).is_err());
        assert!(sample_set(&m, &SetSpec::Box(vec![(0.0, 0.0); 3]), 3, 0).is_err());
    }

    #[test]
    fn ball_samples_lie_in_ball() {
        let m = ModelSpec::heisenberg();
        let spec = SetSpec::Ball {
            center: vec![0.0; 3],
            radius: 1.0,
        };
        let s = sample_set(&m, &spec, 50, 1).unwrap();
        for p in &s.points {
            assert!(distance(&m, &[0.0; 3], p.as_slice()).unwrap() <= 1.0);
        }
    }

    #[test]
    fn heisenberg_ball_box_is_tight() {
        // the half-circle geodesic of length r reaches z = r^2 / (2 pi)
        let m = ModelSpec::heisenberg();
        let r: f64 = 0.8;
        let rad = r / PI;
        let end = [2.0 * rad, 0.0, PI * rad * rad / 2.0];
        let d = distance(&m, &[0.0; 3], &end).unwrap();
        assert!((d - r).abs() < 1e-8, "{d}");
        assert!((end[2] - r * r / (2.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn volume_estimator() {
        let m = ModelSpec::heisenberg();
        assert_eq!(volume_estimate(&m, &[], 0.1).unwrap().value, 0.0);
        let one = volume_estimate(&m, &[DVector::from_vec(vec![0.3, 0.2, 0.1])], 0.1).unwrap();
        assert!((one.value - 1e-3).abs() < 1e-15);
        let s = sample_set(&m, &unit_box(3), 1_000_000, 2).unwrap();
        let v = volume_estimate(&m, &s.points, 0.05).unwrap().value;
        assert!((0.95..=1.0 + 1e-12).contains(&v), "{v}");
        assert!(matches!(volume_estimate(&m, &s.points, 1e-4), Err(Error::Resource(_))));
    }

    #[test]
    fn midpoint_endpoints() {
        let m = ModelSpec::grushin();
        let a = sample_set(&m, &SetSpec::Box(vec![(-2.0, -1.0), (0.0, 1.0)]), 30, 1).unwrap();
        let b = sample_set(&m, &SetSpec::Box(vec![(1.0, 2.0), (0.0, 1.0)]), 30, 2).unwrap();
        let c0 = midpoint_set(&m, &a, &b, 0.0, 0).unwrap();
        assert_eq!(c0.points[0], a.points[0]);
        let c = midpoint_set(&m, &a, &b, 0.5, 0).unwrap();
        assert!(c.failure_fraction < MAX_FAILURE_FRACTION);
        assert_eq!(c.pairs, 900);
    }

    #[test]
    fn heisenberg_point_to_box_midpoints() {
        let m = ModelSpec::heisenberg();
        let b = sample_set(&m, &SetSpec::Box(vec![(0.5, 1.5); 3]), 20, 3).unwrap();
        let c = point_midpoint_set(&m, &[0.0; 3], &b, 0.3).unwrap();
        for (p, q) in c.points.iter().zip(&b.points) {
            let g = minimizing_geodesic(&m, &[0.0; 3], q.as_slice(), &solver()).unwrap();
            let e = exp_map(&m, &[0.0; 3], g.solution.lambda.as_slice(), 0.3).unwrap();
            assert!((p - e).amax() < 1e-12);
        }
    }

    #[test]
    fn intermediate_points_stay_in_shrunk_ball() {
        let m = ModelSpec::heisenberg();
        let r = 0.5;
        let spec = SetSpec::Ball {
            center: vec![0.0; 3],
            radius: r,
        };
        let b = sample_set(&m, &spec, 40, 5).unwrap();
        let t = 0.4;
        let c = point_midpoint_set(&m, &[0.0; 3], &b, t).unwrap();
        for p in &c.points {
            assert!(distance(&m, &[0.0; 3], p.as_slice()).unwrap() <= t * r + 1e-6);
        }
    }

    #[test]
    fn ball_scaling() {
        let m = ModelSpec::heisenberg();
        let (q, _) = ball_volume_exponent(&m, &[0.3, -0.2, 0.1], &[0.1, 0.2, 0.4], 2000, 1).unwrap();
        assert!((q - 4.0).abs() < 1e-9, "{q}");
        let g = ModelSpec::grushin();
        let (q, _) = ball_volume_exponent(&g, &[0.0, 0.0], &[0.05, 0.1, 0.2], 2000, 1).unwrap();
        assert!((q - 3.0).abs() < 1e-9, "{q}");
    }

    #[test]
    fn default_pitch_keeps_cells_populated() {
        let m = ModelSpec::heisenberg();
        let s = sample_set(&m, &unit_box(3), 100_000, 9).unwrap();
        let h = default_pitch(&s.points);
        assert!(h > 1.0 / 40.0);
        let v = volume_estimate(&m, &s.points, h).unwrap().value;
        assert!((v - 1.0).abs() < 0.1, "{v}");
        let dense = sample_set(&m, &unit_box(3), 1_000_000, 9).unwrap();
        assert!((default_pitch(&dense.points) - 1.0 / 40.0).abs() < 1e-4);
    }

    #[test]
    fn bbl_rejects_bad_input() {
        let m = ModelSpec::grushin();
        let f = GriddedFunction::indicator(vec![0.0, 0.0], 0.1, vec![10, 10]).unwrap();
        let zero = GriddedFunction::new(vec![0.0, 0.0], 0.1, vec![2, 2], vec![0.0; 4]).unwrap();
        assert!(bbl_check(&m, &f, &zero, 0.5, 1.0, 5.0, 100, 0).is_err());
        let other = GriddedFunction::indicator(vec![0.0, 0.0], 0.2, vec![5, 5]).unwrap();
        assert!(bbl_check(&m, &f, &other, 0.5, 1.0, 5.0, 100, 0).is_err());
    }
}
