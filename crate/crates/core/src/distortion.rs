//! Distortion coefficients, geodesic-dimension fits, power-law bound
//! verification and the Grushin inequality chain.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{jacobi_propagate_with, propagate_with_state, JacobiMatrixState};
use crate::geodesy::cut_time_estimate;
use crate::measure;
use crate::models::{measure_density, Covector, ModelKind, ModelSpec, Point};
use crate::ode::Tolerances;
use crate::special::{sin_minus_s_cos_over_cube as g3, sinc};

/// Tolerances for determinant ratios.  The absolute tolerance keeps the
/// `t^3` entries of `N^V_0(t)` accurate down to `t = 1e-3`; much smaller
/// values drown in rounding noise of components that vanish identically.
const BETA_TOL: Tolerances = Tolerances {
    atol: 1e-18,
    rtol: 1e-12,
};

const BOUND_TOL: f64 = 1e-12;
const MAX_LISTED_VIOLATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Closed,
    Numeric,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Closed => "closed",
            Method::Numeric => "numeric",
        }
    }
}

/// Sampled `t -> beta_t(x, y)` along one geodesic.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionCurve {
    pub model: String,
    pub x: Point,
    pub lambda: Covector,
    pub t: Vec<f64>,
    pub beta: Vec<f64>,
    pub method: Method,
}

impl DistortionCurve {
    /// CSV with header `t,beta,method`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,beta,method\n");
        for (t, b) in self.t.iter().zip(&self.beta) {
            s.push_str(&format!(
                "{},{},{}\n",
                crate::format_float(*t),
                crate::format_float(*b),
                self.method.as_str()
            ));
        }
        s
    }
}

/// One grid point where `beta_t < t^N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub x: Point,
    pub lambda: Covector,
    pub t: f64,
    pub beta: f64,
    pub bound: f64,
}

/// Outcome of [`verify_power_bound`].
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub exponent: f64,
    pub grid: String,
    pub samples: usize,
    /// Minimum over the grid of `beta_t / t^N`.
    pub min_ratio: f64,
    /// Minimum over the grid of `beta_t - t^N`.
    pub min_difference: f64,
    pub violation_count: usize,
    /// The worst violations, most negative difference first.
    pub violations: Vec<Violation>,
    pub pass: bool,
}

/// Parameter grid for [`verify_power_bound`].
#[derive(Debug, Clone, PartialEq)]
pub enum BoundGrid {
    /// `w0` uniform in `(1-delta)[-2 pi, 2 pi]`, `t` in `(0, 1]`.
    Heisenberg { w: usize, t: usize, delta: f64 },
    /// `x0, u0` in `[-3, 3]`, `v0` in `(1-delta)[-pi, pi]`, `t` in `(0, 1]`.
    Grushin { x: usize, u: usize, v: usize, t: usize, delta: f64 },
    /// Seeded in-cut covectors at the identity, numeric coefficients.
    Sampled { covectors: usize, t: usize, delta: f64 },
}

impl BoundGrid {
    pub fn describe(&self) -> String {
        match self {
            BoundGrid::Heisenberg { w, t, delta } => format!("w0:{w} x t:{t} (delta {delta:e})"),
            BoundGrid::Grushin { x, u, v, t, delta } => {
                format!("x0:{x} x u0:{u} x v0:{v} x t:{t} (delta {delta:e})")
            }
            BoundGrid::Sampled { covectors, t, delta } => {
                format!("covectors:{covectors} x t:{t} (delta {delta:e})")
            }
        }
    }
}

fn check_t(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::input(format!("t = {t} outside [0, 1]")));
    }
    Ok(())
}

/// Closed-form distortion coefficient for the Heisenberg group (|w0| < 2 pi)
/// and the Grushin plane (|v0| < pi).
pub fn beta_closed(model: &ModelSpec, x: &[f64], lambda: &[f64], t: f64) -> Result<f64> {
    model.check_len(x, "point")?;
    model.check_len(lambda, "covector")?;
    check_t(t)?;
    match model.kind() {
        ModelKind::Heisenberg3 => {
            let w = lambda[2];
            if w.abs() >= 2.0 * PI {
                return Err(Error::domain(format!("|w0| = {} is not below 2 pi", w.abs())));
            }
            Ok(heisenberg_beta(w, t))
        }
        ModelKind::Grushin2 => {
            let (u, v) = (lambda[0], lambda[1]);
            if v.abs() >= PI {
                return Err(Error::domain(format!("|v0| = {} is not below pi", v.abs())));
            }
            grushin_beta(x[0], u, v, t)
        }
        _ => Err(Error::capability(model.name(), "closed-form distortion coefficient")),
    }
}

/// `t^5 sinc(ta) g(ta) / (sinc(a) g(a))` with `a = w/2`, the cancellation-free
/// form of `t (sin(ta)/sin a)(sin(ta) - ta cos(ta))/(sin a - a cos a)`.
fn heisenberg_beta(w: f64, t: f64) -> f64 {
    let a = 0.5 * w;
    let ta = t * a;
    t.powi(5) * sinc(ta) * g3(ta) / (sinc(a) * g3(a))
}

/// Grushin coefficient with the factor `v^3` divided out of numerator and
/// denominator.
fn grushin_beta(x0: f64, u: f64, v: f64, t: f64) -> Result<f64> {
    let tv = t * v;
    let num = t * (t.powi(3) * u * u * g3(tv) + t * (t * u * x0 + x0 * x0) * sinc(tv));
    let den = u * u * g3(v) + (u * x0 + x0 * x0) * sinc(v);
    if den == 0.0 {
        return Err(Error::domain("degenerate covector (zero horizontal energy)"));
    }
    Ok(num / den)
}

/// `log |det a|` and the sign of `det a` from an LU factorization.
fn log_abs_det(a: &DMatrix<f64>) -> (f64, f64) {
    let lu = a.clone().lu();
    let u = lu.u();
    let mut log = 0.0;
    let mut sign = if lu.p().determinant::<f64>() < 0.0 { -1.0 } else { 1.0 };
    for i in 0..u.nrows() {
        let d = u[(i, i)];
        if d == 0.0 {
            return (f64::NEG_INFINITY, 0.0);
        }
        log += d.abs().ln();
        if d < 0.0 {
            sign = -sign;
        }
    }
    (log, sign)
}

fn singular(a: &DMatrix<f64>) -> bool {
    let sv = a.clone().svd(false, false).singular_values;
    !(sv.max() > 0.0) || sv.min() <= 1e-9 * sv.max()
}

/// `beta_t = det N^V_0(t) / det N^V_0(1)` times the density ratio
/// `rho(gamma(t)) / rho(gamma(1))`.
pub fn beta_numeric(model: &ModelSpec, x: &[f64], lambda: &[f64], t: f64) -> Result<f64> {
    Ok(beta_numeric_curve(model, x, lambda, &[t])?.beta[0])
}

/// [`beta_numeric`] on an increasing list of times in `[0, 1]`, from a
/// single propagation.
pub fn beta_numeric_curve(model: &ModelSpec, x: &[f64], lambda: &[f64], ts: &[f64]) -> Result<DistortionCurve> {
    model.check_len(x, "point")?;
    model.check_len(lambda, "covector")?;
    for &t in ts {
        check_t(t)?;
    }
    if ts.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::input("times must be non-decreasing"));
    }
    let n = model.dim();
    let mut out_t: Vec<f64> = ts.iter().copied().filter(|&t| t > 0.0).collect();
    out_t.push(1.0);
    let mut init = DMatrix::zeros(2 * n, n);
    init.view_mut((0, 0), (n, n)).fill_with_identity();
    let prop = propagate_with_state(model, x, lambda, 0.0, &init, &out_t, BETA_TOL)?;
    let (end_state, end_block) = prop.last().expect("t = 1 output");
    let n1 = end_block.view((n, 0), (n, n)).into_owned();
    if singular(&n1) {
        return Err(Error::domain("N^V_0(1) is singular: endpoint conjugate to x"));
    }
    let (l1, s1) = log_abs_det(&n1);
    let rho1 = measure_density(model, &end_state[..n]);
    let mut betas = Vec::with_capacity(ts.len());
    let mut k = 0;
    for &t in ts {
        if t == 0.0 {
            betas.push(0.0);
            continue;
        }
        if t == 1.0 {
            betas.push(1.0);
            k += 1;
            continue;
        }
        let (state, block) = &prop[k];
        k += 1;
        let nt = block.view((n, 0), (n, n)).into_owned();
        let (lt, st) = log_abs_det(&nt);
        let rho = measure_density(model, &state[..n]);
        betas.push(st * s1 * (lt - l1).exp() * rho / rho1);
    }
    Ok(DistortionCurve {
        model: model.name().to_string(),
        x: DVector::from_column_slice(x),
        lambda: DVector::from_column_slice(lambda),
        t: ts.to_vec(),
        beta: betas,
        method: Method::Numeric,
    })
}

/// Closed-form curve on the given times.
pub fn beta_closed_curve(model: &ModelSpec, x: &[f64], lambda: &[f64], ts: &[f64]) -> Result<DistortionCurve> {
    let beta = ts
        .iter()
        .map(|&t| beta_closed(model, x, lambda, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(DistortionCurve {
        model: model.name().to_string(),
        x: DVector::from_column_slice(x),
        lambda: DVector::from_column_slice(lambda),
        t: ts.to_vec(),
        beta,
        method: Method::Closed,
    })
}

/// Reverse coefficient `beta_{1-t}(y, x)` for `y = exp_x(lambda)`, from the
/// Jacobi matrix `J^V_1` started at the endpoint:
/// `det N^V_1(t) / det N^V_1(0)` times `rho(gamma(t)) / rho(gamma(0))`.
pub fn beta_reverse(model: &ModelSpec, x: &[f64], lambda: &[f64], t: f64) -> Result<f64> {
    model.check_len(x, "point")?;
    model.check_len(lambda, "covector")?;
    check_t(t)?;
    let n = model.dim();
    if t == 0.0 {
        return Ok(1.0);
    }
    if t == 1.0 {
        return Ok(0.0);
    }
    let init = JacobiMatrixState::vertical(n, 1.0);
    let js = jacobi_propagate_with(model, x, lambda, 1.0, &[t, 0.0], &init, BETA_TOL)?;
    if singular(&js[1].n) {
        return Err(Error::domain("N^V_1(0) is singular: x conjugate to the endpoint"));
    }
    let (lt, st) = log_abs_det(&js[0].n);
    let (l0, s0) = log_abs_det(&js[1].n);
    let gt = crate::flow::exp_map(model, x, lambda, t)?;
    let rho = measure_density(model, gt.as_slice()) / measure_density(model, x);
    Ok(st * s0 * (lt - l0).exp() * rho)
}

/// Least-squares fit of `log beta_t = N log t + log C` on a 50-point
/// logarithmic grid in `[t_min, t_max]`; returns `(N, C)`.
pub fn fit_geodesic_exponent(model: &ModelSpec, x: &[f64], lambda: &[f64], t_min: f64, t_max: f64) -> Result<(f64, f64)> {
    if !(t_min > 0.0 && t_min < t_max && t_max <= 0.1) {
        return Err(Error::input("need 0 < t_min < t_max <= 0.1"));
    }
    let k = 50;
    let ts: Vec<f64> = (0..k)
        .map(|i| (t_min.ln() + (t_max.ln() - t_min.ln()) * i as f64 / (k - 1) as f64).exp())
        .collect();
    let curve = beta_numeric_curve(model, x, lambda, &ts)?;
    if let Some(b) = curve.beta.iter().find(|b| !(**b > 0.0)) {
        return Err(Error::domain(format!("non-positive distortion {b} in the fit range")));
    }
    let lx: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let ly: Vec<f64> = curve.beta.iter().map(|b| b.ln()).collect();
    let (slope, intercept) = least_squares(&lx, &ly);
    Ok((slope, intercept.exp()))
}

pub(crate) fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

fn linspace(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect()
}

fn t_grid(k: usize) -> Vec<f64> {
    (1..=k).map(|i| i as f64 / k as f64).collect()
}

/// Seeded covectors at the identity strictly inside the cut time: horizontal
/// part in `[-3, 3]^k`, vertical norm below `(1 - delta)` times the band.
pub fn sample_in_cut_covectors(model: &ModelSpec, count: usize, seed: u64, delta: f64) -> Result<Vec<Covector>> {
    let n = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let x0 = vec![0.0; n];
    while out.len() < count {
        let lam = match model.kind() {
            ModelKind::Heisenberg3 => DVector::from_vec(vec![
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-1.0..1.0) * (1.0 - delta) * 2.0 * PI,
            ]),
            ModelKind::Grushin2 => DVector::from_vec(vec![
                rng.random_range(-3.0..3.0),
                rng.random_range(-1.0..1.0) * (1.0 - delta) * PI,
            ]),
            ModelKind::HType => {
                let p = model.htype_params().expect("htype params");
                let smax = p.s.clone().symmetric_eigen().eigenvalues.max();
                let mut l = DVector::zeros(n);
                for i in 0..p.k {
                    l[i] = rng.random_range(-3.0..3.0);
                }
                let mut w = DVector::from_fn(n - p.k, |_, _| rng.random_range(-1.0..1.0));
                let wn = w.norm();
                if wn == 0.0 {
                    continue;
                }
                let radius: f64 = rng.random_range(0.0..1.0);
                w *= radius * (1.0 - delta) * 2.0 * PI / (smax * wn);
                for a in 0..n - p.k {
                    l[p.k + a] = w[a];
                }
                l
            }
            ModelKind::GenericFrame => DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0)),
        };
        if cut_time_estimate(model, &x0, lam.as_slice())? > 1.0 {
            out.push(lam);
        }
    }
    Ok(out)
}

#[derive(Default)]
struct Acc {
    min_ratio: f64,
    min_diff: f64,
    count: usize,
    samples: usize,
    worst: Vec<Violation>,
}

impl Acc {
    fn new() -> Self {
        Acc {
            min_ratio: f64::INFINITY,
            min_diff: f64::INFINITY,
            ..Default::default()
        }
    }

    fn add(&mut self, x: &[f64], lambda: &[f64], t: f64, beta: f64, n: f64) {
        let bound = t.powf(n);
        self.samples += 1;
        self.min_ratio = self.min_ratio.min(beta / bound);
        let d = beta - bound;
        self.min_diff = self.min_diff.min(d);
        if d < -BOUND_TOL || d.is_nan() {
            self.count += 1;
            self.worst.push(Violation {
                x: DVector::from_column_slice(x),
                lambda: DVector::from_column_slice(lambda),
                t,
                beta,
                bound,
            });
            self.trim();
        }
    }

    fn merge(mut self, other: Acc) -> Acc {
        self.min_ratio = self.min_ratio.min(other.min_ratio);
        self.min_diff = self.min_diff.min(other.min_diff);
        self.count += other.count;
        self.samples += other.samples;
        self.worst.extend(other.worst);
        self.trim();
        self
    }

    fn trim(&mut self) {
        if self.worst.len() > 2 * MAX_LISTED_VIOLATIONS {
            self.sort();
            self.worst.truncate(MAX_LISTED_VIOLATIONS);
        }
    }

    fn sort(&mut self) {
        self.worst.sort_by(|a, b| {
            (a.beta - a.bound)
                .partial_cmp(&(b.beta - b.bound))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.t.partial_cmp(&b.t).unwrap_or(std::cmp::Ordering::Equal))
                .then_with(|| {
                    a.lambda
                        .iter()
                        .zip(b.lambda.iter())
                        .map(|(p, q)| p.partial_cmp(q).unwrap_or(std::cmp::Ordering::Equal))
                        .find(|o| *o != std::cmp::Ordering::Equal)
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
        });
    }
}

/// Checks `beta_t >= t^N` over a parameter grid.  Violations are data: the
/// report passes iff `min(beta_t - t^N) >= -1e-12`.
pub fn verify_power_bound(model: &ModelSpec, n_exp: f64, grid: &BoundGrid, seed: u64) -> Result<BoundReport> {
    let acc = match (model.kind(), grid) {
        (ModelKind::Heisenberg3, BoundGrid::Heisenberg { w, t, delta }) => {
            let ws = linspace(-(1.0 - delta) * 2.0 * PI, (1.0 - delta) * 2.0 * PI, *w);
            let ts = t_grid(*t);
            ws.par_iter()
                .map(|&w0| {
                    let mut a = Acc::new();
                    let lam = [1.0, 0.0, w0];
                    for &t in &ts {
                        a.add(&[0.0; 3], &lam, t, heisenberg_beta(w0, t), n_exp);
                    }
                    a
                })
                .reduce(Acc::new, Acc::merge)
        }
        (ModelKind::Grushin2, BoundGrid::Grushin { x, u, v, t, delta }) => {
            let xs = linspace(-3.0, 3.0, *x);
            let us = linspace(-3.0, 3.0, *u);
            let vs = linspace(-(1.0 - delta) * PI, (1.0 - delta) * PI, *v);
            let ts = t_grid(*t);
            let mut cells: Vec<(f64, f64, f64)> = Vec::with_capacity(xs.len() * us.len() * vs.len());
            for &a in &xs {
                for &b in &us {
                    for &c in &vs {
                        cells.push((a, b, c));
                    }
                }
            }
            let results: Vec<Result<Acc>> = cells
                .par_iter()
                .map(|&(x0, u0, v0)| {
                    let mut a = Acc::new();
                    for &t in &ts {
                        a.add(&[x0, 0.0], &[u0, v0], t, grushin_beta(x0, u0, v0, t)?, n_exp);
                    }
                    Ok(a)
                })
                .collect();
            let mut acc = Acc::new();
            for r in results {
                acc = acc.merge(r?);
            }
            acc
        }
        (_, BoundGrid::Sampled { covectors, t, delta }) => {
            let lams = sample_in_cut_covectors(model, *covectors, seed, *delta)?;
            let ts = t_grid(*t);
            let x0 = vec![0.0; model.dim()];
            let results: Vec<Result<Acc>> = lams
                .par_iter()
                .map(|lam| {
                    let curve = beta_numeric_curve(model, &x0, lam.as_slice(), &ts)?;
                    let mut a = Acc::new();
                    for (&t, &b) in ts.iter().zip(&curve.beta) {
                        a.add(&x0, lam.as_slice(), t, b, n_exp);
                    }
                    Ok(a)
                })
                .collect();
            let mut acc = Acc::new();
            for r in results {
                acc = acc.merge(r?);
            }
            acc
        }
        _ => {
            return Err(Error::input(format!(
                "grid {} does not apply to model {}",
                grid.describe(),
                model.name()
            )))
        }
    };
    let mut acc = acc;
    acc.sort();
    acc.worst.truncate(MAX_LISTED_VIOLATIONS);
    Ok(BoundReport {
        exponent: n_exp,
        grid: grid.describe(),
        samples: acc.samples,
        min_ratio: acc.min_ratio,
        min_difference: acc.min_diff,
        violation_count: acc.count,
        pass: acc.count == 0,
        violations: acc.worst,
    })
}

/// Searches for `(lambda, t)` with `beta_t < t^N'`; returns the most
/// violating configuration found, or `None`.
///
/// The Grushin search first scans the `v0 = 0`, `u0 < 0` branch, where the
/// bound reduces to the quadratic condition
/// `(N-4) z^2 + 3 x0 (N-3) z + 3 x0^2 (N-2) >= 0`.
pub fn sharpness_search(model: &ModelSpec, n_prime: f64) -> Result<Option<Violation>> {
    match model.kind() {
        ModelKind::Heisenberg3 => {
            let f = |p: &[f64]| heisenberg_beta(p[0], p[1]);
            let mk = |p: &[f64]| (vec![0.0; 3], vec![1.0, 0.0, p[0]]);
            let wmax = 2.0 * PI * (1.0 - 1e-3);
            Ok(refine_search(&[(-wmax, wmax), (1e-3, 1.0)], n_prime, &f, &mk))
        }
        ModelKind::Grushin2 => {
            let f0 = |p: &[f64]| grushin_beta(p[0], p[1], 0.0, p[2]).unwrap_or(f64::INFINITY);
            let mk0 = |p: &[f64]| (vec![p[0], 0.0], vec![p[1], 0.0]);
            if let Some(w) = refine_search(&[(-3.0, 3.0), (-3.0, -1e-3), (1e-3, 1.0)], n_prime, &f0, &mk0) {
                return Ok(Some(w));
            }
            let f = |p: &[f64]| grushin_beta(p[0], p[1], p[2], p[3]).unwrap_or(f64::INFINITY);
            let mk = |p: &[f64]| (vec![p[0], 0.0], vec![p[1], p[2]]);
            let vmax = PI * (1.0 - 1e-3);
            Ok(refine_search(&[(-3.0, 3.0), (-3.0, 3.0), (-vmax, vmax), (1e-3, 1.0)], n_prime, &f, &mk))
        }
        _ => Err(Error::capability(model.name(), "sharpness search needs a closed-form coefficient")),
    }
}

/// Coarse-to-fine grid minimization of `beta - t^N` over a box whose last
/// coordinate is `t`.
fn refine_search(
    bounds: &[(f64, f64)],
    n_exp: f64,
    beta: &dyn Fn(&[f64]) -> f64,
    point: &dyn Fn(&[f64]) -> (Vec<f64>, Vec<f64>),
) -> Option<Violation> {
    let d = bounds.len();
    let per_axis = match d {
        1 | 2 => 41,
        3 => 21,
        _ => 11,
    };
    let mut box_ = bounds.to_vec();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _level in 0..6 {
        let axes: Vec<Vec<f64>> = box_.iter().map(|&(lo, hi)| linspace(lo, hi, per_axis)).collect();
        let total = per_axis.pow(d as u32);
        for idx in 0..total {
            let mut p = Vec::with_capacity(d);
            let mut r = idx;
            for axis in &axes {
                p.push(axis[r % per_axis]);
                r /= per_axis;
            }
            let t = p[d - 1];
            let diff = beta(&p) - t.powf(n_exp);
            if diff.is_finite() && best.as_ref().is_none_or(|(b, _)| diff < *b) {
                best = Some((diff, p));
            }
        }
        let (_, c) = best.as_ref().expect("non-empty grid");
        box_ = box_
            .iter()
            .zip(bounds)
            .zip(c)
            .map(|((&(lo, hi), &(blo, bhi)), &ci)| {
                let half = (hi - lo) / (per_axis - 1) as f64 * 2.0;
                ((ci - half).max(blo), (ci + half).min(bhi))
            })
            .collect();
    }
    let (diff, p) = best?;
    if diff < -BOUND_TOL {
        let t = p[d - 1];
        let (x, lambda) = point(&p);
        Some(Violation {
            x: DVector::from_vec(x),
            lambda: DVector::from_vec(lambda),
            t,
            beta: beta(&p),
            bound: t.powf(n_exp),
        })
    } else {
        None
    }
}

/// `W(z) = (64 - 25z^2) sin^2 z + 10z(z^2 - 8) cos z sin z + z^2 (16 - z^2) cos^2 z`,
/// through its Maclaurin series below 0.5 where the terms cancel to `O(z^6)`.
pub fn wbar(z: f64) -> f64 {
    if z.abs() < 0.5 {
        const C: [f64; 8] = [
            8.0 / 45.0,
            -1.0 / 105.0,
            1.0 / 4725.0,
            -59.0 / 467775.0,
            188.0 / 14189175.0,
            -46.0 / 70945875.0,
            1901.0 / 97692469875.0,
            -139.0 / 343732764375.0,
        ];
        let z2 = z * z;
        let mut acc = 0.0;
        for c in C.iter().rev() {
            acc = acc * z2 + c;
        }
        return acc * z2 * z2 * z2;
    }
    let (s, c) = z.sin_cos();
    (64.0 - 25.0 * z * z) * s * s + 10.0 * z * (z * z - 8.0) * c * s + z * z * (16.0 - z * z) * c * c
}

/// The Taylor lower bound `z^6 (-4z^6/13365 - z^2/105 + 8/45)`.
pub fn wbar_taylor_bound(z: f64) -> f64 {
    let z2 = z * z;
    z2 * z2 * z2 * (-4.0 * z2 * z2 * z2 / 13365.0 - z2 / 105.0 + 8.0 / 45.0)
}

/// `a_min(z) = -(z/2)(3 sin z - z cos z)/(4 sin z - z cos z)`.
pub fn a_min(z: f64) -> f64 {
    let (s, c) = z.sin_cos();
    -0.5 * z * (3.0 * s - z * c) / (4.0 * s - z * c)
}

/// `W_a(z) = Q_a(z) sin z - z P_a(z) cos z` with `P_a = a(a+z) + 4` and
/// `Q_a = (a+z)(4a-z) + 4`.
pub fn w_a(a: f64, z: f64) -> f64 {
    let (s, c) = z.sin_cos();
    let p = a * (a + z) + 4.0;
    let q = (a + z) * (4.0 * a - z) + 4.0;
    q * s - z * p * c
}

/// First positive root of the Taylor lower bound, by bisection on its
/// cubic factor in `z^2`.
pub fn taylor_bound_root() -> f64 {
    let f = |z: f64| {
        let z2 = z * z;
        -4.0 * z2 * z2 * z2 / 13365.0 - z2 / 105.0 + 8.0 / 45.0
    };
    let (mut lo, mut hi) = (1.0, PI);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Outcome of [`grushin_proof_chain`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProofChainReport {
    pub samples: usize,
    pub min_wbar: f64,
    pub wbar_nonnegative: bool,
    pub min_w_amin: f64,
    pub w_amin_nonnegative: bool,
    /// Max over samples of `|4(4 sin z - z cos z) W_{a_min}(z) - W(z)| / (1 + |W(z)|)`.
    pub identity_defect: f64,
    pub taylor_underestimates: bool,
    pub taylor_root: f64,
    pub root_matches: bool,
    pub pass: bool,
}

/// Evaluates the chain of inequalities behind the Grushin bound on the given
/// samples of `(0, pi)`.
pub fn grushin_proof_chain(zs: &[f64]) -> Result<ProofChainReport> {
    if let Some(z) = zs.iter().find(|&&z| !(z > 0.0 && z < PI)) {
        return Err(Error::input(format!("sample {z} outside (0, pi)")));
    }
    let root = taylor_bound_root();
    let per: Vec<(f64, f64, f64, bool)> = zs
        .par_iter()
        .map(|&z| {
            let wb = wbar(z);
            let wa = w_a(a_min(z), z);
            let (s, c) = z.sin_cos();
            let defect = (4.0 * (4.0 * s - z * c) * wa - wb).abs() / (1.0 + wb.abs());
            let under = z >= 2.67 || wbar_taylor_bound(z) <= wb + 1e-12;
            (wb, wa, defect, under)
        })
        .collect();
    let min_wbar = per.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let min_w_amin = per.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let identity_defect = per.iter().map(|p| p.2).fold(0.0, f64::max);
    let taylor_underestimates = per.iter().all(|p| p.3);
    let wbar_nonnegative = min_wbar >= -1e-12;
    let w_amin_nonnegative = min_w_amin >= -1e-12;
    let root_matches = (root - 2.67491).abs() <= 1e-3;
    Ok(ProofChainReport {
        samples: zs.len(),
        min_wbar,
        wbar_nonnegative,
        min_w_amin,
        w_amin_nonnegative,
        identity_defect,
        taylor_underestimates,
        taylor_root: root,
        root_matches,
        pass: wbar_nonnegative && w_amin_nonnegative && taylor_underestimates && root_matches,
    })
}

/// Homogeneous dimension `Q(x)` from the weights of the growth vector.
pub fn homogeneous_dimension(model: &ModelSpec, x: &[f64]) -> Result<f64> {
    model.check_len(x, "point")?;
    match model.kind() {
        ModelKind::Heisenberg3 => Ok(4.0),
        ModelKind::Grushin2 => Ok(if x[0] == 0.0 { 3.0 } else { 2.0 }),
        ModelKind::HType => {
            let p = model.htype_params().expect("htype params");
            Ok((p.k + 2 * (p.n - p.k)) as f64)
        }
        ModelKind::GenericFrame => Err(Error::capability(model.name(), "homogeneous dimension")),
    }
}

/// One row of a [`DiagonalReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalEntry {
    pub t: f64,
    pub r: f64,
    pub estimate: f64,
    pub bound: f64,
    pub ok: bool,
}

/// Outcome of [`diagonal_bound_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalReport {
    pub q: f64,
    pub samples: usize,
    pub seed: u64,
    pub entries: Vec<DiagonalEntry>,
    pub pass: bool,
}

/// Estimates `beta_t(x, x)` by `mu(Z_t(x, B_r(x))) / mu(B_r(x))` with
/// hit-or-miss Monte Carlo and checks it against `1.1 t^Q(x)`.
pub fn diagonal_bound_check(
    model: &ModelSpec,
    x: &[f64],
    ts: &[f64],
    rs: &[f64],
    samples: usize,
    seed: u64,
) -> Result<DiagonalReport> {
    let q = homogeneous_dimension(model, x)?;
    if let Some(r) = rs.iter().find(|&&r| !(r > 0.0 && r <= 0.5)) {
        return Err(Error::input(format!("radius {r} outside (0, 0.5]")));
    }
    let mut entries = Vec::new();
    for &r in rs {
        let ball = measure::ball_volume_mc(model, x, r, samples, seed)?;
        for &t in ts {
            check_t(t)?;
            let z = measure::intermediate_ball_volume_mc(model, x, r, t, samples, seed)?;
            let estimate = if ball > 0.0 { z / ball } else { f64::NAN };
            let bound = t.powf(q) * 1.1;
            entries.push(DiagonalEntry {
                t,
                r,
                estimate,
                bound,
                ok: estimate <= bound,
            });
        }
    }
    Ok(DiagonalReport {
        q,
        samples,
        seed,
        pass: entries.iter().all(|e| e.ok),
        entries,
    })
}

/// Power mean `M_t^p(a, b)` with the limits `p = 0, +-inf` and the value 0
/// when `ab = 0` (except for `p = +inf`, the maximum).
pub fn pmean(p: f64, t: f64, a: f64, b: f64) -> f64 {
    if p == f64::INFINITY {
        return a.max(b);
    }
    if a * b == 0.0 {
        return 0.0;
    }
    if p == f64::NEG_INFINITY {
        return a.min(b);
    }
    if p == 0.0 {
        return a.powf(1.0 - t) * b.powf(t);
    }
    ((1.0 - t) * a.powf(p) + t * b.powf(p)).powf(1.0 / p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::propagate_block;
    use crate::models::{complex_structure, HTypeParams};
    use crate::poly::Polynomial;
    use proptest::prelude::*;

    fn h3() -> ModelSpec {
        ModelSpec::heisenberg()
    }

    fn g2() -> ModelSpec {
        ModelSpec::grushin()
    }

    fn h5() -> ModelSpec {
        ModelSpec::htype(HTypeParams {
            n: 5,
            k: 4,
            j: vec![complex_structure(4)],
            s: DMatrix::identity(4, 4),
        })
        .unwrap()
    }

    // reference values computed with 30-digit arithmetic from the unsimplified
    // trigonometric formulas
    #[test]
    fn closed_form_reference_values() {
        let b = beta_closed(&h3(), &[0.0; 3], &[1.0, 0.0, PI], 0.5).unwrap();
        assert!((b - 0.053650459150637922596).abs() < 1e-15);
        let b = beta_closed(&g2(), &[0.0, 0.0], &[1.0, PI / 2.0], 0.5).unwrap();
        assert!((b - 0.075873206958375871762).abs() < 1e-15);
        let b = beta_closed(&g2(), &[1.0, 0.0], &[1.0, 0.0], 0.5).unwrap();
        assert!((b - 0.25 * 4.75 / 7.0).abs() < 1e-15);
        let b = beta_closed(&g2(), &[0.5, 0.0], &[1.0, 1.0], 0.3).unwrap();
        assert!((b - 0.040908882975754116274).abs() < 1e-15);
    }

    #[test]
    fn closed_form_limits_and_domain() {
        for w in [-5.0, 0.3, 6.0] {
            assert!((beta_closed(&h3(), &[0.0; 3], &[1.0, 2.0, w], 1.0).unwrap() - 1.0).abs() < 1e-15);
        }
        let b = beta_closed(&h3(), &[0.0; 3], &[1.0, 0.0, 1e-9], 0.4).unwrap();
        assert!((b - 0.4f64.powi(5)).abs() < 1e-15);
        assert!(matches!(beta_closed(&h3(), &[0.0; 3], &[1.0, 0.0, 7.0], 0.5), Err(Error::Domain(_))));
        assert!(matches!(beta_closed(&g2(), &[0.0; 2], &[1.0, 3.5], 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn numeric_matches_closed() {
        let cases: [(ModelSpec, Vec<f64>, Vec<f64>); 4] = [
            (h3(), vec![0.0; 3], vec![1.0, 0.0, PI]),
            (h3(), vec![0.3, -1.0, 2.0], vec![-0.4, 1.1, -4.0]),
            (g2(), vec![0.5, 0.0], vec![1.0, 1.0]),
            (g2(), vec![-1.2, 3.0], vec![0.7, -2.5]),
        ];
        for (m, x, l) in cases {
            for t in [0.05, 0.3, 0.77, 1.0] {
                let c = beta_closed(&m, &x, &l, t).unwrap();
                let n = beta_numeric(&m, &x, &l, t).unwrap();
                assert!((c - n).abs() <= 1e-6 * c, "{c} {n}");
            }
        }
        assert_eq!(beta_numeric(&h3(), &[0.0; 3], &[1.0, 0.0, 1.0], 1.0).unwrap(), 1.0);
        assert!(matches!(
            beta_numeric(&h3(), &[0.0; 3], &[1.0, 0.0, 2.0 * PI], 0.5),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn htype_distortion_is_positive() {
        let m = h5();
        for lam in sample_in_cut_covectors(&m, 5, 3, 1e-3).unwrap() {
            let ts: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
            let c = beta_numeric_curve(&m, &[0.0; 5], lam.as_slice(), &ts).unwrap();
            assert!(c.beta.iter().all(|b| *b > 0.0), "{:?}", c.beta);
        }
    }

    fn reversed(m: &ModelSpec, x: &[f64], l: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = m.dim();
        let init = DMatrix::zeros(2 * n, 0);
        let st = crate::flow::propagate_with_state(m, x, l, 0.0, &init, &[1.0], Tolerances::new(1e-14, 1e-13)).unwrap();
        let s = &st[0].0;
        (s[..n].to_vec(), s[n..].iter().map(|v| -v).collect())
    }

    #[test]
    fn reverse_coefficient() {
        let l = [0.7, -0.2, 2.5];
        assert_eq!(beta_reverse(&h3(), &[0.0; 3], &l, 0.0).unwrap(), 1.0);
        let (y, ly) = reversed(&h3(), &[0.0; 3], &l);
        for t in [0.2, 0.5, 0.9] {
            let r = beta_reverse(&h3(), &[0.0; 3], &l, t).unwrap();
            let c = beta_closed(&h3(), &y, &ly, 1.0 - t).unwrap();
            assert!((r - c).abs() < 1e-6, "{r} {c}");
        }
        let (y, ly) = reversed(&g2(), &[0.5, 0.0], &[1.0, 1.0]);
        let r = beta_reverse(&g2(), &[0.5, 0.0], &[1.0, 1.0], 0.3).unwrap();
        let n = beta_numeric(&g2(), &y, &ly, 0.7).unwrap();
        assert!(r > 0.0 && (r - n).abs() < 1e-6, "{r} {n}");
    }

    #[test]
    fn exponent_fits() {
        let (n, _) = fit_geodesic_exponent(&h3(), &[0.0; 3], &[1.0, 0.0, 1.0], 1e-3, 1e-1).unwrap();
        assert!((n - 5.0).abs() < 0.05, "{n}");
        let (n, _) = fit_geodesic_exponent(&h5(), &[0.0; 5], &[1.0, 0.5, -0.3, 0.2, 1.0], 1e-3, 1e-1).unwrap();
        assert!((n - 7.0).abs() < 0.1, "{n}");
        // Grushin: t^4 from the singular line, t^2 off it
        let (n, _) = fit_geodesic_exponent(&g2(), &[0.0, 0.0], &[1.0, 1.0], 1e-3, 1e-1).unwrap();
        assert!((n - 4.0).abs() < 0.05, "{n}");
        let (n, _) = fit_geodesic_exponent(&g2(), &[1.0, 0.0], &[1.0, 1.0], 1e-3, 1e-1).unwrap();
        assert!((n - 2.0).abs() < 0.05, "{n}");
        let plane = ModelSpec::generic(
            2,
            vec![
                vec![Polynomial::constant(2, 1.0), Polynomial::zero(2)],
                vec![Polynomial::zero(2), Polynomial::constant(2, 1.0)],
            ],
            None,
        )
        .unwrap();
        let (n, c) = fit_geodesic_exponent(&plane, &[0.0, 0.0], &[1.0, 2.0], 1e-3, 1e-1).unwrap();
        assert!((n - 2.0).abs() < 0.05 && (c - 1.0).abs() < 1e-6);
    }

    #[test]
    fn power_bounds() {
        let g = BoundGrid::Heisenberg { w: 50, t: 50, delta: 1e-3 };
        assert!(verify_power_bound(&h3(), 5.0, &g, 0).unwrap().pass);
        let r = verify_power_bound(&h3(), 4.9, &g, 0).unwrap();
        assert!(!r.pass && r.violation_count > 0);
        assert!(r.violations[0].beta < r.violations[0].bound);
        let g = BoundGrid::Grushin { x: 8, u: 8, v: 8, t: 20, delta: 1e-3 };
        assert!(verify_power_bound(&g2(), 5.0, &g, 0).unwrap().pass);
        assert!(verify_power_bound(&h3(), 5.0, &g, 0).is_err());
    }

    #[test]
    fn sharpness() {
        let w = sharpness_search(&g2(), 4.9).unwrap().unwrap();
        assert_eq!(w.lambda[1], 0.0);
        assert!(w.beta < w.bound);
        let w = sharpness_search(&h3(), 4.99).unwrap().unwrap();
        assert!(w.lambda[2].abs() < 1.0, "{}", w.lambda);
        assert!(sharpness_search(&g2(), 5.0).unwrap().is_none());
    }

    #[test]
    fn wbar_values() {
        assert!((wbar(PI) - 60.504579383427300665).abs() < 1e-12);
        assert!((wbar(1.0) - 0.16835209966684930511).abs() < 1e-14);
        let z: f64 = 1e-3;
        assert!((wbar(z) / z.powi(6) - 8.0 / 45.0).abs() < 1e-6);
        // series and direct branches meet
        let (a, b) = (wbar(0.5 - 1e-12), wbar(0.5 + 1e-12));
        assert!((a - b).abs() < 1e-12);
        assert!((taylor_bound_root() - 2.674907804581377).abs() < 1e-12);
    }

    #[test]
    fn proof_chain() {
        let zs: Vec<f64> = (1..1000).map(|i| PI * i as f64 / 1000.0).collect();
        let r = grushin_proof_chain(&zs).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.identity_defect < 1e-10);
        assert!(grushin_proof_chain(&[0.0]).is_err());
    }

    #[test]
    fn pmean_examples() {
        assert_eq!(pmean(1.0, 0.5, 2.0, 4.0), 3.0);
        for p in [-2.0, 0.0, 0.5, f64::NEG_INFINITY] {
            assert_eq!(pmean(p, 0.3, 5.0, 0.0), 0.0);
        }
        assert!((pmean(0.0, 0.25, 16.0, 1.0) - 8.0).abs() < 1e-14);
        assert_eq!(pmean(f64::INFINITY, 0.3, 5.0, 0.0), 5.0);
    }

    #[test]
    fn lagrangian_preserved_along_propagation() {
        let n = 3;
        let init = DMatrix::identity(2 * n, 2 * n);
        let out = propagate_block(&h3(), &[0.1, 0.2, 0.3], &[1.0, -0.5, 2.0], 0.0, &init, &[0.5, 1.0], Tolerances::default()).unwrap();
        for b in out {
            let jv = JacobiMatrixState {
                t: 0.0,
                m: b.view((0, 0), (n, n)).into_owned(),
                n: b.view((n, 0), (n, n)).into_owned(),
            };
            assert!(jv.lagrangian_defect() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn pmean_monotone_in_p(
            p in -5.0f64..5.0, q in -5.0f64..5.0,
            t in 0.0f64..1.0, a in 0.01f64..10.0, b in 0.01f64..10.0,
        ) {
            let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
            prop_assert!(pmean(lo, t, a, b) <= pmean(hi, t, a, b) + 1e-12);
            prop_assert!(pmean(f64::NEG_INFINITY, t, a, b) <= pmean(lo, t, a, b) + 1e-12);
            prop_assert!(pmean(hi, t, a, b) <= pmean(f64::INFINITY, t, a, b) + 1e-12);
        }
    }
}
