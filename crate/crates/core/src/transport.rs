//! Discrete optimal transport with cost `d^2 / 2`, displacement
//! interpolation and the Jacobian interpolation inequality on densities.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geodesy::{minimizing_geodesic, SolverOptions};
use crate::flow::exp_map;
use crate::measure::GriddedFunction;
use crate::models::{ModelSpec, Point};

pub const MAX_SUPPORT: usize = 512;
const WEIGHT_TOL: f64 = 1e-12;
const MERGE_TOL: f64 = 1e-12;
const DEGENERATE_SWITCH: usize = 50;

/// Weighted point cloud with weights summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    pub support: Vec<Point>,
    pub weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(support: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != weights.len() {
            return Err(Error::input("support and weights must be non-empty and of equal length"));
        }
        check_weights(&weights)?;
        let dim = support[0].len();
        for (i, p) in support.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::input("support points of mixed dimension"));
            }
            if support[..i].iter().any(|q| q == p) {
                return Err(Error::input(format!("support point {i} repeats an earlier point")));
            }
        }
        Ok(DiscreteMeasure { support, weights })
    }

    pub fn uniform(support: Vec<Point>) -> Result<Self> {
        let n = support.len();
        Self::new(support, vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// CSV with header `q1..qn,weight`.
    pub fn to_csv(&self) -> String {
        let n = self.support.first().map(|p| p.len()).unwrap_or(0);
        let mut head: Vec<String> = (1..=n).map(|i| format!("q{i}")).collect();
        head.push("weight".into());
        let mut s = head.join(",") + "\n";
        for (p, w) in self.support.iter().zip(&self.weights) {
            let mut row: Vec<String> = p.iter().map(|v| crate::format_float(*v)).collect();
            row.push(crate::format_float(*w));
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

fn check_weights(w: &[f64]) -> Result<()> {
    if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::input("weights must be finite and non-negative"));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::input(format!("weights sum to {s}, not 1")));
    }
    Ok(())
}

/// A coupling of two discrete measures and its cost.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub coupling: DMatrix<f64>,
    pub cost: f64,
}

impl TransportPlan {
    /// Largest deviation of the row and column sums from the marginals.
    pub fn marginal_residual(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut r: f64 = 0.0;
        for (i, ai) in a.iter().enumerate() {
            r = r.max((self.coupling.row(i).sum() - ai).abs());
        }
        for (j, bj) in b.iter().enumerate() {
            r = r.max((self.coupling.column(j).sum() - bj).abs());
        }
        r
    }
}

/// `c_ij = d(x_i, y_j)^2 / 2`.
pub fn cost_matrix(model: &ModelSpec, mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> Result<DMatrix<f64>> {
    let (m, n) = (mu0.len(), mu1.len());
    let opts = SolverOptions::default();
    let entries: Vec<Result<f64>> = (0..m * n)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / n, k % n);
            let (x, y) = (mu0.support[i].as_slice(), mu1.support[j].as_slice());
            minimizing_geodesic(model, x, y, &opts)
                .map(|g| 0.5 * g.solution.length * g.solution.length)
                .map_err(|e| Error::numerical(format!("cost entry ({i}, {j}): {e}")))
        })
        .collect();
    let mut c = DMatrix::zeros(m, n);
    for (k, e) in entries.into_iter().enumerate() {
        c[(k / n, k % n)] = e?;
    }
    Ok(c)
}

/// Exact transportation simplex: northwest-corner start, potentials on the
/// basis tree, Dantzig pricing, and Bland's rule after a run of degenerate
/// pivots.
pub fn solve_ot(cost: &DMatrix<f64>, a: &[f64], b: &[f64]) -> Result<TransportPlan> {
    let (m, n) = cost.shape();
    if m != a.len() || n != b.len() {
        return Err(Error::input("cost matrix shape does not match the marginals"));
    }
    if m == 0 || n == 0 || m > MAX_SUPPORT || n > MAX_SUPPORT {
        return Err(Error::input(format!("supports must have 1..={MAX_SUPPORT} points")));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::input("non-finite cost"));
    }
    check_weights(a)?;
    check_weights(b)?;
    let mut flow = DMatrix::<f64>::zeros(m, n);
    let mut basic = DMatrix::<bool>::from_element(m, n, false);
    {
        let (mut ra, mut rb) = (a.to_vec(), b.to_vec());
        let (mut i, mut j) = (0, 0);
        loop {
            let x = ra[i].min(rb[j]);
            flow[(i, j)] = x;
            basic[(i, j)] = true;
            ra[i] -= x;
            rb[j] -= x;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if j == n - 1 || (i < m - 1 && ra[i] <= rb[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
        // the last cell absorbs the rounding of the marginal sums
        flow[(m - 1, n - 1)] += ra[m - 1].min(rb[n - 1]).max(0.0);
    }
    let scale = cost.amax().max(1.0);
    let eps = 1e-12 * scale;
    let mut degenerate_run = 0usize;
    let mut bland = false;
    let max_pivots = 50 * (m + n) * (m + n) + 1000;
    let mut u = vec![0.0; m];
    let mut v = vec![0.0; n];
    for _ in 0..max_pivots {
        potentials(cost, &basic, &mut u, &mut v);
        let mut enter: Option<(usize, usize)> = None;
        let mut best = -eps;
        'scan: for i in 0..m {
            for j in 0..n {
                if basic[(i, j)] {
                    continue;
                }
                let r = cost[(i, j)] - u[i] - v[j];
                if r < best {
                    enter = Some((i, j));
                    if bland {
                        break 'scan;
                    }
                    best = r;
                }
            }
        }
        let Some((ie, je)) = enter else {
            let mut total = 0.0;
            for i in 0..m {
                for j in 0..n {
                    total += flow[(i, j)] * cost[(i, j)];
                }
            }
            return Ok(TransportPlan { coupling: flow, cost: total });
        };
        let path = tree_path(&basic, ie, je);
        // path edges alternate -, +, -, ... starting at row ie
        let minus: Vec<(usize, usize)> = path.iter().step_by(2).copied().collect();
        let theta = minus.iter().map(|&c| flow[c]).fold(f64::INFINITY, f64::min);
        let leave = if bland {
            *minus.iter().filter(|&&c| flow[c] == theta).min().expect("leaving cell")
        } else {
            *minus.iter().find(|&&c| flow[c] == theta).expect("leaving cell")
        };
        flow[(ie, je)] += theta;
        for (k, &c) in path.iter().enumerate() {
            if k % 2 == 0 {
                flow[c] -= theta;
            } else {
                flow[c] += theta;
            }
        }
        flow[leave] = 0.0;
        basic[leave] = false;
        basic[(ie, je)] = true;
        if theta == 0.0 {
            degenerate_run += 1;
            if degenerate_run > DEGENERATE_SWITCH {
                bland = true;
            }
        } else {
            degenerate_run = 0;
        }
    }
    Err(Error::numerical("transportation simplex did not terminate"))
}

fn potentials(cost: &DMatrix<f64>, basic: &DMatrix<bool>, u: &mut [f64], v: &mut [f64]) {
    let (m, n) = cost.shape();
    let mut seen_r = vec![false; m];
    let mut seen_c = vec![false; n];
    let mut queue = VecDeque::new();
    u[0] = 0.0;
    seen_r[0] = true;
    queue.push_back((true, 0usize));
    while let Some((is_row, k)) = queue.pop_front() {
        if is_row {
            for j in 0..n {
                if basic[(k, j)] && !seen_c[j] {
                    v[j] = cost[(k, j)] - u[k];
                    seen_c[j] = true;
                    queue.push_back((false, j));
                }
            }
        } else {
            for i in 0..m {
                if basic[(i, k)] && !seen_r[i] {
                    u[i] = cost[(i, k)] - v[k];
                    seen_r[i] = true;
                    queue.push_back((true, i));
                }
            }
        }
    }
}

/// Basic cells on the tree path from row `ie` to column `je`, in order.
fn tree_path(basic: &DMatrix<bool>, ie: usize, je: usize) -> Vec<(usize, usize)> {
    let (m, n) = basic.shape();
    // nodes: rows 0..m, columns m..m+n
    let mut parent = vec![usize::MAX; m + n];
    let mut queue = VecDeque::new();
    parent[ie] = ie;
    queue.push_back(ie);
    while let Some(node) = queue.pop_front() {
        if node == m + je {
            break;
        }
        if node < m {
            for j in 0..n {
                if basic[(node, j)] && parent[m + j] == usize::MAX {
                    parent[m + j] = node;
                    queue.push_back(m + j);
                }
            }
        } else {
            let j = node - m;
            for i in 0..m {
                if basic[(i, j)] && parent[i] == usize::MAX {
                    parent[i] = node;
                    queue.push_back(i);
                }
            }
        }
    }
    let mut rev = Vec::new();
    let mut node = m + je;
    while node != ie {
        let p = parent[node];
        let cell = if node >= m { (p, node - m) } else { (node, p - m) };
        rev.push(cell);
        node = p;
    }
    rev.reverse();
    rev
}

/// Interpolated measure with the number of coupled pairs joined by several
/// minimizers (routed along the selected one).
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolation {
    pub measure: DiscreteMeasure,
    pub multiple_minimizers: usize,
}

/// Pushes each coupled atom to the `t`-point of its minimizing geodesic and
/// merges coincident outputs.
pub fn displacement_interpolation(
    model: &ModelSpec,
    plan: &TransportPlan,
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    t: f64,
) -> Result<Interpolation> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::input(format!("t = {t} outside [0, 1]")));
    }
    if plan.coupling.shape() != (mu0.len(), mu1.len()) {
        return Err(Error::input("plan does not match the measures"));
    }
    if plan.marginal_residual(&mu0.weights, &mu1.weights) > 1e-10 {
        return Err(Error::input("plan marginals do not match the measures"));
    }
    let cells: Vec<(usize, usize, f64)> = plan
        .coupling
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > 0.0)
        .map(|(k, w)| (k % mu0.len(), k / mu0.len(), *w))
        .collect();
    let opts = SolverOptions::default();
    let moved: Vec<Result<(Point, f64, bool)>> = cells
        .par_iter()
        .map(|&(i, j, w)| {
            let (x, y) = (mu0.support[i].as_slice(), mu1.support[j].as_slice());
            if t == 0.0 {
                return Ok((mu0.support[i].clone(), w, false));
            }
            if t == 1.0 {
                return Ok((mu1.support[j].clone(), w, false));
            }
            let g = minimizing_geodesic(model, x, y, &opts)?;
            Ok((exp_map(model, x, g.solution.lambda.as_slice(), t)?, w, g.multiple_minimizers))
        })
        .collect();
    let mut support: Vec<Point> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut multiple = 0;
    for r in moved {
        let (p, w, mult) = r?;
        multiple += mult as usize;
        match support.iter().position(|q| (q - &p).amax() <= MERGE_TOL) {
            Some(k) => weights[k] += w,
            None => {
                support.push(p);
                weights.push(w);
            }
        }
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(Interpolation {
        measure: DiscreteMeasure { support, weights },
        multiple_minimizers: multiple,
    })
}

/// `W_2(mu, nu)` from the optimal plan for `d^2 / 2`.
pub fn wasserstein2(model: &ModelSpec, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    let c = cost_matrix(model, mu, nu)?;
    let plan = solve_ot(&c, &mu.weights, &nu.weights)?;
    Ok((2.0 * plan.cost).max(0.0).sqrt())
}

/// Outcome of [`interpolation_density_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct DensityReport {
    pub t: f64,
    pub exponent: f64,
    pub bandwidth: f64,
    pub checked_points: usize,
    /// Coupled pairs joined by several minimizers, left out of the check.
    pub excluded: usize,
    /// Minimum over checked points of left side over right side.
    pub min_slack: f64,
    pub slack_factor: f64,
    pub consistent: bool,
}

impl DensityReport {
    pub fn verdict(&self) -> &'static str {
        if self.consistent {
            "consistent"
        } else {
            "violated"
        }
    }
}

pub const DENSITY_SLACK: f64 = 0.8;

fn atoms(f: &GriddedFunction) -> Result<(Vec<Point>, Vec<f64>, Vec<f64>)> {
    let n = f.shape.len();
    let mass = f.integral();
    if !(mass > 0.0) {
        return Err(Error::input("density with zero mass"));
    }
    let (mut pts, mut w, mut rho) = (Vec::new(), Vec::new(), Vec::new());
    for (k, &v) in f.values.iter().enumerate() {
        if v <= 0.0 {
            continue;
        }
        let mut idx = vec![0; n];
        let mut r = k;
        for d in (0..n).rev() {
            idx[d] = r % f.shape[d];
            r /= f.shape[d];
        }
        pts.push(DVector::from_iterator(
            n,
            idx.iter().zip(&f.lo).map(|(&i, &l)| l + (i as f64 + 0.5) * f.pitch),
        ));
        w.push(v * f.cell_volume() / mass);
        rho.push(v / mass);
    }
    if pts.len() > MAX_SUPPORT {
        return Err(Error::input(format!("{} atoms exceed the limit {MAX_SUPPORT}", pts.len())));
    }
    Ok((pts, w, rho))
}

/// Product Epanechnikov kernel estimate at `z`.
fn kde(z: &Point, support: &[Point], weights: &[f64], bw: f64) -> f64 {
    let n = z.len() as i32;
    let mut s = 0.0;
    for (p, w) in support.iter().zip(weights) {
        let mut k = 1.0;
        for d in 0..z.len() {
            let u = (z[d] - p[d]) / bw;
            if u.abs() >= 1.0 {
                k = 0.0;
                break;
            }
            k *= 0.75 * (1.0 - u * u);
        }
        s += w * k;
    }
    s / bw.powi(n)
}

/// Discretizes two densities to atoms, transports them optimally, estimates
/// `rho_t` with a product Epanechnikov kernel at the transported atoms, and
/// checks
/// `rho_t^(-1/n) >= (1-t)^(N/n) rho_0(x)^(-1/n) + t^(N/n) rho_1(T x)^(-1/n)`
/// up to the factor 0.8.  This is a heuristic check of the inequality, not
/// a proof.
pub fn interpolation_density_check(
    model: &ModelSpec,
    f0: &GriddedFunction,
    f1: &GriddedFunction,
    t: f64,
    bandwidth: Option<f64>,
    n_exp: f64,
) -> Result<DensityReport> {
    let n = model.dim();
    if f0.shape.len() != n || f1.shape.len() != n {
        return Err(Error::input("density grids must match the model dimension"));
    }
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::input("t must lie in (0, 1)"));
    }
    let pitch = f0.pitch.max(f1.pitch);
    let bw = bandwidth.unwrap_or(2.0 * pitch);
    if !(bw > pitch) {
        return Err(Error::input("bandwidth must exceed the grid pitch"));
    }
    let (x0, w0, r0) = atoms(f0)?;
    let (x1, w1, r1) = atoms(f1)?;
    let mu0 = DiscreteMeasure::new(x0, w0)?;
    let mu1 = DiscreteMeasure::new(x1, w1)?;
    let plan = solve_ot(&cost_matrix(model, &mu0, &mu1)?, &mu0.weights, &mu1.weights)?;
    let opts = SolverOptions::default();
    let (m1, nn) = (mu0.len(), mu1.len());
    let cells: Vec<(usize, usize, f64)> = (0..m1 * nn)
        .map(|k| (k / nn, k % nn))
        .filter(|&(i, j)| plan.coupling[(i, j)] > 0.0)
        .map(|(i, j)| (i, j, plan.coupling[(i, j)]))
        .collect();
    let moved: Vec<Result<(Point, bool)>> = cells
        .par_iter()
        .map(|&(i, j, _)| {
            let (x, y) = (mu0.support[i].as_slice(), mu1.support[j].as_slice());
            let g = minimizing_geodesic(model, x, y, &opts)?;
            Ok((exp_map(model, x, g.solution.lambda.as_slice(), t)?, g.multiple_minimizers))
        })
        .collect();
    let mut zs = Vec::with_capacity(cells.len());
    let mut excluded_flag = Vec::with_capacity(cells.len());
    for r in moved {
        let (z, mult) = r?;
        zs.push(z);
        excluded_flag.push(mult);
    }
    let zw: Vec<f64> = cells.iter().map(|c| c.2).collect();
    let nf = n as f64;
    let slacks: Vec<Option<f64>> = cells
        .par_iter()
        .enumerate()
        .map(|(k, &(i, j, _))| {
            if excluded_flag[k] {
                return None;
            }
            let rho_t = kde(&zs[k], &zs, &zw, bw);
            let lhs = rho_t.powf(-1.0 / nf);
            let rhs = (1.0 - t).powf(n_exp / nf) * r0[i].powf(-1.0 / nf) + t.powf(n_exp / nf) * r1[j].powf(-1.0 / nf);
            Some(lhs / rhs)
        })
        .collect();
    let excluded = slacks.iter().filter(|s| s.is_none()).count();
    let min_slack = slacks.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    Ok(DensityReport {
        t,
        exponent: n_exp,
        bandwidth: bw,
        checked_points: cells.len() - excluded,
        excluded,
        min_slack,
        slack_factor: DENSITY_SLACK,
        consistent: min_slack >= DENSITY_SLACK,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn pts(v: &[&[f64]]) -> Vec<Point> {
        v.iter().map(|p| DVector::from_column_slice(p)).collect()
    }

    #[test]
    fn identity_coupling() {
        let c = DMatrix::from_fn(5, 5, |i, j| (i as f64 - j as f64).powi(2));
        let w = vec![0.2; 5];
        let p = solve_ot(&c, &w, &w).unwrap();
        assert_eq!(p.cost, 0.0);
        for i in 0..5 {
            assert!((p.coupling[(i, i)] - 0.2).abs() < 1e-15);
        }
        let c = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let p = solve_ot(&c, &[0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert_eq!(p.cost, 0.0);
        assert_eq!(p.coupling[(0, 1)], 0.0);
    }

    #[test]
    fn rejects_unnormalized() {
        let c = DMatrix::zeros(2, 2);
        assert!(matches!(solve_ot(&c, &[0.5, 0.6], &[0.5, 0.5]), Err(Error::Input(_))));
    }

    #[test]
    fn non_uniform_marginals() {
        // supply 0.7/0.3 into three sinks, optimum by hand
        let c = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 1.0, 0.0]);
        let p = solve_ot(&c, &[0.7, 0.3], &[0.5, 0.3, 0.2]).unwrap();
        assert!(p.marginal_residual(&[0.7, 0.3], &[0.5, 0.3, 0.2]) < 1e-15);
        // row 0 sends 0.5 to sink 0 and 0.2 to sink 1; row 1 sends 0.1 and 0.2
        assert!((p.cost - (0.5 + 0.4 + 0.1 + 0.0)).abs() < 1e-14, "{}", p.cost);
    }

    #[test]
    fn heisenberg_costs() {
        let m = ModelSpec::heisenberg();
        let a = DiscreteMeasure::uniform(pts(&[&[0.0, 0.0, 0.0]])).unwrap();
        let b = DiscreteMeasure::uniform(pts(&[&[1.0, 0.0, 0.0]])).unwrap();
        let c = DiscreteMeasure::uniform(pts(&[&[0.0, 0.0, 1.0]])).unwrap();
        assert!((cost_matrix(&m, &a, &b).unwrap()[(0, 0)] - 0.5).abs() < 1e-9);
        assert!((cost_matrix(&m, &a, &c).unwrap()[(0, 0)] - 2.0 * PI).abs() < 1e-8);
        let s = DiscreteMeasure::uniform(pts(&[&[0.0, 0.0, 0.0], &[1.0, 0.5, 0.0], &[0.0, 1.0, 1.0]])).unwrap();
        let cm = cost_matrix(&m, &s, &s).unwrap();
        for i in 0..3 {
            assert_eq!(cm[(i, i)], 0.0);
            for j in 0..3 {
                assert!((cm[(i, j)] - cm[(j, i)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn interpolation_endpoints_and_single_atoms() {
        let m = ModelSpec::grushin();
        let a = DiscreteMeasure::uniform(pts(&[&[-1.0, 0.0], &[-1.5, 0.5]])).unwrap();
        let b = DiscreteMeasure::uniform(pts(&[&[1.0, 0.2], &[1.2, 0.9]])).unwrap();
        let plan = solve_ot(&cost_matrix(&m, &a, &b).unwrap(), &a.weights, &b.weights).unwrap();
        let i0 = displacement_interpolation(&m, &plan, &a, &b, 0.0).unwrap().measure;
        let i1 = displacement_interpolation(&m, &plan, &a, &b, 1.0).unwrap().measure;
        for p in &i0.support {
            assert!(a.support.contains(p));
        }
        for p in &i1.support {
            assert!(b.support.contains(p));
        }
        assert!((i1.total_mass() - 1.0).abs() < 1e-12);
        let x = DiscreteMeasure::uniform(pts(&[&[0.5, 0.0]])).unwrap();
        let y = DiscreteMeasure::uniform(pts(&[&[1.0, 1.0]])).unwrap();
        let p = solve_ot(&DMatrix::zeros(1, 1), &[1.0], &[1.0]).unwrap();
        let mid = displacement_interpolation(&m, &p, &x, &y, 0.3).unwrap().measure;
        let expect = crate::geodesy::midpoint(&m, &[0.5, 0.0], &[1.0, 1.0], 0.3).unwrap();
        assert!((&mid.support[0] - expect).amax() < 1e-12);
    }

    #[test]
    fn self_transport_is_consistent() {
        let m = ModelSpec::grushin();
        let f = GriddedFunction::indicator(vec![1.0, 0.0], 0.25, vec![4, 4]).unwrap();
        let r = interpolation_density_check(&m, &f, &f, 0.5, None, 5.0).unwrap();
        assert!(r.consistent, "{r:?}");
        assert_eq!(r.checked_points, 16);
    }
}
