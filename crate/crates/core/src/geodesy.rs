//! Boundary-value geodesics, distances, cut and conjugate times, midpoints
//! and the semiconvexity probe for the squared distance.

use std::cmp::Ordering;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::{exp_jacobian_with, exp_map, exp_with_jacobian};
use crate::models::{hamiltonian, heisenberg_inv, heisenberg_mul, Covector, ModelKind, ModelSpec, Point};
use crate::ode::Tolerances;
use crate::special::{cosc, s_minus_sin_over_square as hh, sinc};

const DEDUP_TOL: f64 = 1e-6;
const CUT_SLACK: f64 = 1e-9;
const BAND: f64 = 1.0 - 1e-6;
const CONJ_GRID: usize = 1000;

/// One solution of `exp_x(lambda) = y`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicSolution {
    pub lambda: Covector,
    /// `sqrt(2 H(lambda))`, the length over the unit time horizon.
    pub length: f64,
    /// Max-norm of `exp_x(lambda) - y`.
    pub residual: f64,
    pub t_cut: f64,
    /// Set on the selected minimizer.
    pub minimizing: bool,
}

/// The selected minimizing geodesic and how it was chosen.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimizingGeodesic {
    pub solution: GeodesicSolution,
    /// Several distinct covectors attain the minimal length.
    pub multiple_minimizers: bool,
    /// Number of distinct admissible solutions found.
    pub candidates: usize,
}

/// Boundary-value solver settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub starts: usize,
    pub seed: u64,
    /// Required endpoint residual.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            starts: 64,
            seed: 0,
            tol: 1e-9,
            max_iter: 60,
        }
    }
}

/// Closed-form cut time: `2 pi / |w|` for the Heisenberg group and
/// `pi / |v|` for the Grushin plane.
pub fn cut_time(model: &ModelSpec, lambda: &[f64]) -> Result<f64> {
    model.check_len(lambda, "covector")?;
    match model.kind() {
        ModelKind::Heisenberg3 => Ok(2.0 * PI / lambda[2].abs()),
        ModelKind::Grushin2 => Ok(PI / lambda[1].abs()),
        _ => Err(Error::capability(model.name(), "closed-form cut time (use conjugate_time)")),
    }
}

/// Cut time where a formula is known, the first conjugate time up to 2
/// otherwise.  H-type groups use `2 pi / (|w| s_max)` with `s_max` the
/// largest eigenvalue of `S`.
pub fn cut_time_estimate(model: &ModelSpec, x: &[f64], lambda: &[f64]) -> Result<f64> {
    match model.kind() {
        ModelKind::Heisenberg3 | ModelKind::Grushin2 => cut_time(model, lambda),
        ModelKind::HType => {
            let p = model.htype_params().expect("htype params");
            let w = DVector::from_column_slice(&lambda[p.k..]).norm();
            let smax = p.s.clone().symmetric_eigen().eigenvalues.max();
            Ok(2.0 * PI / (w * smax))
        }
        ModelKind::GenericFrame => Ok(conjugate_time(model, x, lambda, 2.0)?.unwrap_or(f64::INFINITY)),
    }
}

/// First zero of `det N^V_0` in `(0, horizon]`, located by sign change on
/// a uniform grid and refined by bisection.
pub fn conjugate_time(model: &ModelSpec, x: &[f64], lambda: &[f64], horizon: f64) -> Result<Option<f64>> {
    if !(horizon > 0.0) {
        return Err(Error::input("horizon must be positive"));
    }
    let tol = Tolerances::default();
    let ts: Vec<f64> = (1..=CONJ_GRID).map(|i| horizon * i as f64 / CONJ_GRID as f64).collect();
    let dets: Vec<f64> = exp_jacobian_with(model, x, lambda, &ts, tol)?
        .iter()
        .map(|j| j.determinant())
        .collect();
    let det_at = |t: f64| -> Result<f64> {
        Ok(exp_jacobian_with(model, x, lambda, &[t], tol)?[0].determinant())
    };
    let mut prev_t = 0.0;
    // sign of det just after 0 is the sign at the first grid point
    let mut prev_d = dets[0];
    for (i, (&t, &d)) in ts.iter().zip(&dets).enumerate() {
        if d == 0.0 {
            return Ok(Some(t));
        }
        if i > 0 && d.signum() != prev_d.signum() {
            let (mut lo, mut hi) = (prev_t, t);
            let sign_lo = prev_d.signum();
            while hi - lo > 1e-10 {
                let mid = 0.5 * (lo + hi);
                let dm = det_at(mid)?;
                if dm == 0.0 {
                    return Ok(Some(mid));
                }
                if dm.signum() == sign_lo {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Ok(Some(0.5 * (lo + hi)));
        }
        prev_t = t;
        prev_d = d;
    }
    Ok(None)
}

fn sup_norm(v: &DVector<f64>) -> f64 {
    v.amax()
}

fn solution(model: &ModelSpec, x: &[f64], y: &[f64], lambda: Covector) -> Result<GeodesicSolution> {
    let end = exp_map(model, x, lambda.as_slice(), 1.0)?;
    let residual = sup_norm(&(end - DVector::from_column_slice(y)));
    let h = hamiltonian(model, x, lambda.as_slice())?;
    let t_cut = cut_time_estimate(model, x, lambda.as_slice())?;
    Ok(GeodesicSolution {
        length: (2.0 * h).max(0.0).sqrt(),
        lambda,
        residual,
        t_cut,
        minimizing: false,
    })
}

/// Damped Newton iteration on `exp_x(lambda) - y` with a Levenberg–Marquardt
/// fallback when the Jacobian is singular or the Newton direction stalls.
fn newton(model: &ModelSpec, x: &[f64], y: &[f64], start: &[f64], opts: &SolverOptions) -> Option<Covector> {
    let yv = DVector::from_column_slice(y);
    let mut lam = DVector::from_column_slice(start);
    let (end, mut jac) = exp_with_jacobian(model, x, lam.as_slice(), 1.0).ok()?;
    let mut f = &end - &yv;
    let mut fnorm = f.norm();
    for _ in 0..opts.max_iter {
        if sup_norm(&f) <= opts.tol * 0.1 {
            return Some(lam);
        }
        let newton_dir = jac.clone().lu().solve(&(-&f)).filter(|d| d.iter().all(|v| v.is_finite()));
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let mu = 1e-8 * jtj.diagonal().amax().max(1e-300);
        let lm_dir = (jtj + DMatrix::identity(lam.len(), lam.len()) * mu)
            .lu()
            .solve(&(-(&jt * &f)))
            .filter(|d| d.iter().all(|v| v.is_finite()));
        let mut accepted = false;
        for dir in [newton_dir, lm_dir].into_iter().flatten() {
            let mut alpha = 1.0;
            for _ in 0..40 {
                let cand = &lam + &dir * alpha;
                if let Ok((e, j)) = exp_with_jacobian(model, x, cand.as_slice(), 1.0) {
                    let fc = &e - &yv;
                    let nc = fc.norm();
                    if nc.is_finite() && nc < (1.0 - 1e-4 * alpha) * fnorm {
                        lam = cand;
                        jac = j;
                        f = fc;
                        fnorm = nc;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if accepted {
                break;
            }
        }
        if !accepted {
            break;
        }
    }
    if sup_norm(&f) <= opts.tol {
        Some(lam)
    } else {
        None
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut r = 0.0;
    while i > 0 {
        r += (i % base) as f64 * inv;
        i /= base;
        inv /= base as f64;
    }
    r
}

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Points of a Halton sequence in `[0,1)^d`, offset by a seeded index.
pub(crate) fn halton(count: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset: u64 = rng.random_range(0..1 << 16);
    (0..count as u64)
        .map(|i| (0..dim).map(|d| radical_inverse(i + offset + 1, PRIMES[d % PRIMES.len()])).collect())
        .collect()
}

/// Every solution of `exp_x(lambda) = y` reachable from the deterministic
/// start set, deduplicated and sorted by length then covector.
pub fn inverse_exp(model: &ModelSpec, x: &[f64], y: &[f64], starts: usize, seed: u64) -> Result<Vec<GeodesicSolution>> {
    let opts = SolverOptions {
        starts,
        seed,
        ..SolverOptions::default()
    };
    inverse_exp_with(model, x, y, &opts)
}

/// As [`inverse_exp`] with explicit solver settings.
pub fn inverse_exp_with(model: &ModelSpec, x: &[f64], y: &[f64], opts: &SolverOptions) -> Result<Vec<GeodesicSolution>> {
    model.check_len(x, "point")?;
    model.check_len(y, "point")?;
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::input("non-finite coordinates"));
    }
    let n = model.dim();
    if x == y {
        return Ok(vec![solution(model, x, y, DVector::zeros(n))?]);
    }
    let seeds: Vec<Covector> = match model.kind() {
        ModelKind::Heisenberg3 => heisenberg_candidates(x, y),
        ModelKind::Grushin2 => grushin_candidates(x, y, opts.starts.max(8)),
        _ => Vec::new(),
    };
    let mut found: Vec<GeodesicSolution> = Vec::new();
    let push = |found: &mut Vec<GeodesicSolution>, lam: Covector| -> Result<()> {
        if found.iter().any(|s| (&s.lambda - &lam).amax() < DEDUP_TOL) {
            return Ok(());
        }
        found.push(solution(model, x, y, lam)?);
        Ok(())
    };
    for s in seeds {
        let sol = solution(model, x, y, s.clone())?;
        if sol.residual <= opts.tol {
            push(&mut found, s)?;
        } else if let Some(l) = newton(model, x, y, s.as_slice(), opts) {
            push(&mut found, l)?;
        }
    }
    if matches!(model.kind(), ModelKind::HType | ModelKind::GenericFrame) {
        let dist = DVector::from_column_slice(y) - DVector::from_column_slice(x);
        let scale = dist.norm() + dist.norm().sqrt();
        let k = model.htype_params().map(|p| p.k).unwrap_or(n);
        let wmax = match model.htype_params() {
            Some(p) => 2.0 * PI * BAND / p.s.clone().symmetric_eigen().eigenvalues.max(),
            None => 0.0,
        };
        let pts = halton(opts.starts, n, opts.seed);
        for (i, h) in pts.iter().enumerate() {
            let mut lam = DVector::zeros(n);
            for d in 0..n {
                let c = 2.0 * h[d] - 1.0;
                lam[d] = if d < k { 3.0 * scale * c } else { wmax * c / (n - k) as f64 };
            }
            if i == 0 {
                // straight start along the displacement
                lam.fill(0.0);
                for d in 0..k.min(n) {
                    lam[d] = dist[d];
                }
            }
            if let Some(l) = newton(model, x, y, lam.as_slice(), opts) {
                let before = found.len();
                push(&mut found, l)?;
                if found.len() > before && found[before].t_cut > 1.0 + 1e-6 && model.kind() == ModelKind::HType {
                    // in-band solutions of H-type groups are the unique minimizer
                    break;
                }
            }
        }
    }
    if found.is_empty() {
        return Err(Error::NotFound(format!(
            "no convergent start among {} for {} -> {}",
            opts.starts,
            DVector::from_column_slice(x).transpose(),
            DVector::from_column_slice(y).transpose()
        )));
    }
    found.sort_by(compare_solutions);
    Ok(found)
}

fn lex(a: &DVector<f64>, b: &DVector<f64>) -> Ordering {
    for (u, v) in a.iter().zip(b.iter()) {
        match u.partial_cmp(v) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    Ordering::Equal
}

fn compare_solutions(a: &GeodesicSolution, b: &GeodesicSolution) -> Ordering {
    a.length
        .partial_cmp(&b.length)
        .unwrap_or(Ordering::Equal)
        .then_with(|| lex(&a.lambda, &b.lambda))
}

/// Candidate covectors for the Heisenberg group from the analytic inverse:
/// left-translate `y` by `x^-1`, solve the frequency equation by
/// bisection, and map the covector back to `x`.
fn heisenberg_candidates(x: &[f64], y: &[f64]) -> Vec<Covector> {
    let q = heisenberg_mul(heisenberg_inv(x).as_slice(), y);
    let (qx, qy, qz) = (q[0], q[1], q[2]);
    let r2 = qx * qx + qy * qy;
    let scale = q.amax().max(1e-300);
    let back = |u: f64, v: f64, w: f64| DVector::from_vec(vec![u + 0.5 * w * x[1], v - 0.5 * w * x[0], w]);
    if r2.sqrt() <= 1e-14 * scale {
        // vertical axis through x: a circle of minimizers with |w| = 2 pi
        let w = 2.0 * PI * qz.signum();
        let rho = (4.0 * PI * qz.abs()).sqrt();
        return (0..8)
            .map(|k| {
                let th = 2.0 * PI * k as f64 / 8.0;
                back(rho * th.cos(), rho * th.sin(), w)
            })
            .collect();
    }
    let target = qz / r2;
    let phi = |w: f64| {
        let (s, c) = (sinc(w), cosc(w));
        hh(w) / (2.0 * (s * s + c * c))
    };
    let (mut lo, mut hi) = (-2.0 * PI, 2.0 * PI);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if phi(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let w = 0.5 * (lo + hi);
    let (s, c) = (sinc(w), cosc(w));
    let det = s * s + c * c;
    let u = (s * qx + c * qy) / det;
    let v = (-c * qx + s * qy) / det;
    vec![back(u, v, w)]
}

/// `y(1) - y1` along the Grushin geodesic with frequency `v` whose
/// horizontal endpoint matches `x1`.
fn grushin_shoot(x: &[f64], y: &[f64], v: f64) -> (f64, f64) {
    let (x0, y0, x1, y1) = (x[0], x[1], y[0], y[1]);
    let u = (x1 - x0 * v.cos()) / sinc(v);
    let yt = y0 + x0 * x0 * 0.5 * v * (1.0 + sinc(2.0 * v)) + x0 * u * v.sin() * sinc(v) + u * u * hh(2.0 * v);
    (u, yt - y1)
}

/// Candidate covectors for the Grushin plane.  The horizontal equation
/// fixes `u` given `v`, so all in-band solutions are the roots of a scalar
/// function of `v`; roots are bracketed on a grid and bisected.
fn grushin_candidates(x: &[f64], y: &[f64], grid: usize) -> Vec<Covector> {
    let (x0, y0, x1, y1) = (x[0], x[1], y[0], y[1]);
    let mut out = Vec::new();
    let scale = x0.abs().max(x1.abs()).max((y1 - y0).abs()).max(1e-300);
    if (x1 + x0).abs() <= 1e-12 * scale {
        // |v| = pi: the horizontal equation is void and u solves a quadratic
        let dy = y1 - y0;
        let rest = dy.abs() - 0.5 * PI * x0 * x0;
        if rest >= 0.0 && dy != 0.0 {
            let u = (2.0 * PI * rest).sqrt();
            let v = PI * dy.signum();
            out.push(DVector::from_vec(vec![u, v]));
            if u > 0.0 {
                out.push(DVector::from_vec(vec![-u, v]));
            }
        }
    }
    let vmax = PI * BAND;
    let vs: Vec<f64> = (0..grid).map(|i| -vmax + 2.0 * vmax * i as f64 / (grid - 1) as f64).collect();
    let fs: Vec<f64> = vs.iter().map(|&v| grushin_shoot(x, y, v).1).collect();
    for i in 0..grid {
        if fs[i] == 0.0 {
            out.push(DVector::from_vec(vec![grushin_shoot(x, y, vs[i]).0, vs[i]]));
            continue;
        }
        if i + 1 < grid && fs[i + 1] != 0.0 && fs[i].signum() != fs[i + 1].signum() {
            let (mut lo, mut hi) = (vs[i], vs[i + 1]);
            let slo = fs[i].signum();
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                let fm = grushin_shoot(x, y, mid).1;
                if fm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if fm.signum() == slo {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let v = 0.5 * (lo + hi);
            out.push(DVector::from_vec(vec![grushin_shoot(x, y, v).0, v]));
        }
    }
    out
}

fn select(found: &[GeodesicSolution]) -> Result<MinimizingGeodesic> {
    let admissible: Vec<&GeodesicSolution> = found.iter().filter(|s| s.t_cut >= 1.0 - CUT_SLACK).collect();
    let best = admissible
        .first()
        .ok_or_else(|| Error::NotFound("no solution within its cut time".into()))?;
    let ties = admissible
        .iter()
        .filter(|s| (s.length - best.length).abs() <= 1e-8 * (1.0 + best.length))
        .count();
    let mut solution = (*best).clone();
    solution.minimizing = true;
    Ok(MinimizingGeodesic {
        solution,
        multiple_minimizers: ties > 1,
        candidates: admissible.len(),
    })
}

/// The minimal-length solution among those within their cut time; ties are
/// broken by lexicographic covector order and flagged.
pub fn minimizing_geodesic(model: &ModelSpec, x: &[f64], y: &[f64], opts: &SolverOptions) -> Result<MinimizingGeodesic> {
    let found = inverse_exp_with(model, x, y, opts)?;
    select(&found)
}

/// Sub-Riemannian distance.
pub fn distance(model: &ModelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(minimizing_geodesic(model, x, y, &SolverOptions::default())?.solution.length)
}

/// Distance with explicit solver settings.
pub fn distance_with(model: &ModelSpec, x: &[f64], y: &[f64], opts: &SolverOptions) -> Result<f64> {
    Ok(minimizing_geodesic(model, x, y, opts)?.solution.length)
}

/// Point at time `t` of the selected minimizing geodesic from `x` to `y`.
pub fn midpoint(model: &ModelSpec, x: &[f64], y: &[f64], t: f64) -> Result<Point> {
    if t == 0.0 {
        model.check_len(x, "point")?;
        return Ok(DVector::from_column_slice(x));
    }
    let g = minimizing_geodesic(model, x, y, &SolverOptions::default())?;
    exp_map(model, x, g.solution.lambda.as_slice(), t)
}

/// Fibonacci-lattice unit directions on the sphere `S^(n-1)` for `n = 2, 3`
/// and Halton-normalized directions otherwise.
fn directions(n: usize, count: usize) -> Vec<DVector<f64>> {
    match n {
        1 => vec![DVector::from_vec(vec![1.0])],
        2 => (0..count)
            .map(|i| {
                let th = PI * i as f64 / count as f64;
                DVector::from_vec(vec![th.cos(), th.sin()])
            })
            .collect(),
        3 => {
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|i| {
                    let zc = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
                    let rr = (1.0 - zc * zc).sqrt();
                    let th = golden * i as f64;
                    DVector::from_vec(vec![rr * th.cos(), rr * th.sin(), zc])
                })
                .collect()
        }
        _ => halton(count, n, 7)
            .into_iter()
            .map(|h| {
                let v = DVector::from_iterator(n, h.iter().map(|c| 2.0 * c - 1.0));
                let nv = v.norm();
                v / nv
            })
            .collect(),
    }
}

/// `q(r) = min_v (d^2(x+v,y) + d^2(x-v,y) - 2 d^2(x,y)) / r^2` over 64
/// directions with `|v| = r`, for each radius.
pub fn semiconvexity_probe(model: &ModelSpec, y: &[f64], x: &[f64], radii: &[f64]) -> Result<Vec<(f64, f64)>> {
    model.check_len(x, "point")?;
    model.check_len(y, "point")?;
    if x == y {
        return Err(Error::input("the probe needs x != y"));
    }
    if let Some(r) = radii.iter().find(|&&r| !(r >= 1e-4)) {
        return Err(Error::input(format!("radius {r} below the supported 1e-4")));
    }
    let opts = SolverOptions {
        tol: 1e-11,
        ..SolverOptions::default()
    };
    let d2 = |p: &[f64]| -> Result<f64> { Ok(distance_with(model, p, y, &opts)?.powi(2)) };
    let base = d2(x)?;
    let xv = DVector::from_column_slice(x);
    let dirs = directions(model.dim(), 64);
    let mut out = Vec::with_capacity(radii.len());
    for &r in radii {
        let mut q = f64::INFINITY;
        for d in &dirs {
            let plus = &xv + d * r;
            let minus = &xv - d * r;
            let val = (d2(plus.as_slice())? + d2(minus.as_slice())? - 2.0 * base) / (r * r);
            q = q.min(val);
        }
        out.push((r, q));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h3() -> ModelSpec {
        ModelSpec::heisenberg()
    }

    fn g2() -> ModelSpec {
        ModelSpec::grushin()
    }

    #[test]
    fn cut_time_examples() {
        assert_eq!(cut_time(&h3(), &[1.0, 0.0, PI]).unwrap(), 2.0);
        assert!((cut_time(&g2(), &[3.0, 2.0]).unwrap() - 1.5707963).abs() < 1e-7);
        assert_eq!(cut_time(&h3(), &[1.0, 1.0, 0.0]).unwrap(), f64::INFINITY);
    }

    #[test]
    fn conjugate_time_examples() {
        let t = conjugate_time(&h3(), &[0.0; 3], &[1.0, 0.0, PI], 3.0).unwrap().unwrap();
        assert!((t - 2.0).abs() < 1e-6, "{t}");
        assert_eq!(conjugate_time(&h3(), &[0.0; 3], &[1.0, 0.0, 0.0], 10.0).unwrap(), None);
        // from the singular line t = 1 is a cut point reached by two
        // covectors (+-u, pi) but not conjugate; the first conjugate time
        // solves tan(pi t) = pi t
        let t = conjugate_time(&g2(), &[0.0, 0.0], &[1.0, PI], 2.0).unwrap().unwrap();
        assert!((t - 1.430296653124203).abs() < 1e-6, "{t}");
    }

    #[test]
    fn heisenberg_boundary_values() {
        let sols = inverse_exp(&h3(), &[0.0; 3], &[2.5, 0.0, 0.0], 64, 0).unwrap();
        assert_eq!(sols.len(), 1);
        assert!((&sols[0].lambda - DVector::from_vec(vec![2.5, 0.0, 0.0])).amax() < 1e-12);
        assert!((sols[0].length - 2.5).abs() < 1e-12);
        let g = minimizing_geodesic(&h3(), &[0.0; 3], &[0.0, 0.0, 1.0], &SolverOptions::default()).unwrap();
        assert!((g.solution.length - 2.0 * PI.sqrt()).abs() < 1e-9);
        assert!((g.solution.lambda[2].abs() - 2.0 * PI).abs() < 1e-12);
        assert!(g.multiple_minimizers);
        assert!((distance(&h3(), &[0.0; 3], &[1.0, 0.0, 0.0]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grushin_boundary_values() {
        let g = minimizing_geodesic(&g2(), &[1.0, 0.0], &[2.0, 0.0], &SolverOptions::default()).unwrap();
        assert!((&g.solution.lambda - DVector::from_vec(vec![1.0, 0.0])).amax() < 1e-9);
        assert!((g.solution.length - 1.0).abs() < 1e-9);
        let d = distance(&g2(), &[-1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((d - 2.0).abs() < 1e-9, "{d}");
        let m = midpoint(&g2(), &[-1.0, 0.0], &[1.0, 0.0], 0.25).unwrap();
        assert!((m - DVector::from_vec(vec![-0.5, 0.0])).amax() < 1e-9);
        // cut point on the singular line: d((0,0),(0,y)) = sqrt(2 pi |y|)
        let g = minimizing_geodesic(&g2(), &[0.0, 0.0], &[0.0, 1.0], &SolverOptions::default()).unwrap();
        assert!((g.solution.length - (2.0 * PI).sqrt()).abs() < 1e-9);
        assert!(g.multiple_minimizers);
    }

    #[test]
    fn midpoint_examples() {
        let m = midpoint(&h3(), &[0.0; 3], &[1.0, 0.0, 0.0], 0.5).unwrap();
        assert!((m - DVector::from_vec(vec![0.5, 0.0, 0.0])).amax() < 1e-12);
        let y = [0.3, -0.7, 0.4];
        let m = midpoint(&h3(), &[0.1, 0.2, 0.0], &y, 1.0).unwrap();
        assert!((m - DVector::from_column_slice(&y)).amax() < 1e-9);
        let m = midpoint(&h3(), &[0.1, 0.2, 0.0], &y, 0.0).unwrap();
        assert_eq!(m.as_slice(), &[0.1, 0.2, 0.0]);
    }

    #[test]
    fn probe_rejects_tiny_radii_and_equal_points() {
        assert!(semiconvexity_probe(&h3(), &[0.0; 3], &[1.0, 0.0, 0.0], &[1e-5]).is_err());
        assert!(semiconvexity_probe(&h3(), &[0.0; 3], &[0.0; 3], &[1e-2]).is_err());
    }

    #[test]
    fn probe_separates_smooth_and_cut_points() {
        let radii = [1e-1, 1e-2, 1e-3];
        let smooth = semiconvexity_probe(&h3(), &[0.0; 3], &[1.0, 0.0, 0.0], &radii).unwrap();
        for (_, q) in &smooth {
            assert!(q.abs() <= 50.0, "{smooth:?}");
        }
        let cut = semiconvexity_probe(&h3(), &[0.0; 3], &[0.0, 0.0, 1.0], &radii).unwrap();
        assert!(cut[2].1 <= -1e3, "{cut:?}");
        assert!(cut[0].1 > cut[1].1 && cut[1].1 > cut[2].1);
    }

    #[test]
    fn htype_newton_recovers_covector() {
        use crate::models::{complex_structure, HTypeParams};
        let m = ModelSpec::htype(HTypeParams {
            n: 5,
            k: 4,
            j: vec![complex_structure(4)],
            s: DMatrix::identity(4, 4),
        })
        .unwrap();
        let x = [0.1, -0.2, 0.3, 0.0, 0.5];
        let lam = [0.6, -0.3, 0.2, 0.4, 1.5];
        let y = exp_map(&m, &x, &lam, 1.0).unwrap();
        let g = minimizing_geodesic(&m, &x, y.as_slice(), &SolverOptions::default()).unwrap();
        assert!((&g.solution.lambda - DVector::from_column_slice(&lam)).amax() < 1e-6, "{}", g.solution.lambda);
    }
}
