//! Hamiltonian geodesic flow and Jacobi matrices in canonical coordinates.
//!
//! Along an extremal `(q(t), p(t))` the linearized flow is written for the
//! pair `(M, N) = (delta p, delta q)`:
//!
//! ```text
//! M' = -A M - R N,    N' = B M + A^T N
//! ```
//!
//! with `B = H_pp`, `R = H_qq` and `A = H_qp`.  With this choice `N` of the
//! Jacobi matrix started at `(I; 0)` is exactly the coordinate Jacobian of
//! `lambda -> exp_x(t lambda)`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::models::{hamiltonian, heisenberg_mul, Covector, ModelKind, ModelSpec, Point};
use crate::ode::{integrate, Tolerances};
use crate::special::{
    cosc, cosc_prime, s_minus_sin_over_square as hh, s_minus_sin_over_square_prime as hh_prime,
    sinc, sinc_prime,
};

/// Sampled normal extremal.
#[derive(Debug, Clone)]
pub struct Extremal {
    pub x: Point,
    pub lambda: Covector,
    pub times: Vec<f64>,
    /// `(q, p)` at each sample time.
    pub states: Vec<(Point, Covector)>,
}

/// A Jacobi matrix `(M; N)` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobiMatrixState {
    pub t: f64,
    pub m: DMatrix<f64>,
    pub n: DMatrix<f64>,
}

impl JacobiMatrixState {
    /// `(I; 0)` at time `s`.
    pub fn vertical(dim: usize, s: f64) -> Self {
        JacobiMatrixState {
            t: s,
            m: DMatrix::identity(dim, dim),
            n: DMatrix::zeros(dim, dim),
        }
    }

    /// `(0; I)` at time `s`.
    pub fn horizontal(dim: usize, s: f64) -> Self {
        JacobiMatrixState {
            t: s,
            m: DMatrix::zeros(dim, dim),
            n: DMatrix::identity(dim, dim),
        }
    }

    /// `M^T N - N^T M`, which vanishes for Lagrangian Jacobi matrices.
    pub fn lagrangian_defect(&self) -> f64 {
        (self.m.transpose() * &self.n - self.n.transpose() * &self.m).amax()
    }
}

/// Hessian blocks of `H` along the extremal.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalCoefficients {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

/// Jacobi matrices started at `(I; 0)` and `(0; I)` at the same base time.
#[derive(Debug, Clone)]
pub struct SpecialJacobi {
    pub vertical: JacobiMatrixState,
    pub horizontal: JacobiMatrixState,
}

struct Gradients {
    dq: DVector<f64>,
    dp: DVector<f64>,
}

fn gradients(model: &ModelSpec, q: &[f64], p: &[f64]) -> (Gradients, DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let frame = model.frame();
    let n = model.dim();
    let f = frame.eval(q);
    let pv = DVector::from_column_slice(p);
    let h = &f * &pv;
    let d1 = frame.eval_d1(q);
    let mut g = DMatrix::zeros(f.nrows(), n);
    for (k, dfk) in d1.iter().enumerate() {
        g.set_column(k, &(dfk * &pv));
    }
    let dp = f.transpose() * &h;
    let dq = g.transpose() * &h;
    (Gradients { dq, dp }, f, g, h)
}

/// Hessian blocks of the Hamiltonian at `(q, p)`.
pub fn variational_coefficients(model: &ModelSpec, q: &[f64], p: &[f64]) -> Result<VariationalCoefficients> {
    model.check_len(q, "point")?;
    model.check_len(p, "covector")?;
    Ok(coefficients(model, q, p).1)
}

fn coefficients(model: &ModelSpec, q: &[f64], p: &[f64]) -> (Gradients, VariationalCoefficients) {
    let frame = model.frame();
    let n = model.dim();
    let (grads, f, g, h) = gradients(model, q, p);
    let d1 = frame.eval_d1(q);
    let b = f.transpose() * &f;
    // H_pq[j,k] = (F^T G)[j,k] + (dF_k^T h)_j
    let mut h_pq = f.transpose() * &g;
    for (k, dfk) in d1.iter().enumerate() {
        let col = dfk.transpose() * &h;
        for j in 0..n {
            h_pq[(j, k)] += col[j];
        }
    }
    let mut r = g.transpose() * &g;
    if !frame.is_affine() {
        let pv = DVector::from_column_slice(p);
        let d2 = frame.eval_d2(q);
        for k in 0..n {
            for l in 0..n {
                r[(k, l)] += h.dot(&(&d2[k * n + l] * &pv));
            }
        }
    }
    let a = h_pq.transpose();
    (grads, VariationalCoefficients { a, b, r })
}

fn hamilton_rhs(model: &ModelSpec, n: usize, y: &[f64], dy: &mut [f64]) {
    let (g, ..) = gradients(model, &y[..n], &y[n..2 * n]);
    dy[..n].copy_from_slice(g.dp.as_slice());
    for k in 0..n {
        dy[n + k] = -g.dq[k];
    }
}

fn check_inputs(model: &ModelSpec, x: &[f64], lambda: &[f64]) -> Result<()> {
    model.check_len(x, "point")?;
    model.check_len(lambda, "covector")?;
    if x.iter().chain(lambda).any(|v| !v.is_finite()) {
        return Err(Error::input("non-finite coordinates"));
    }
    Ok(())
}

/// Integrates Hamilton's equations from `(x, lambda)` and samples the
/// extremal at `times`, which must start at 0 and increase.
pub fn extremal(model: &ModelSpec, x: &[f64], lambda: &[f64], times: &[f64], tol: Tolerances) -> Result<Extremal> {
    check_inputs(model, x, lambda)?;
    if times.first() != Some(&0.0) {
        return Err(Error::input("sample times must start at 0"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::input("sample times must increase"));
    }
    let n = model.dim();
    let y0: Vec<f64> = x.iter().chain(lambda).copied().collect();
    let out = integrate(|_, y, dy| hamilton_rhs(model, n, y, dy), 0.0, &y0, times, tol)?;
    let states = out
        .into_iter()
        .map(|y| (DVector::from_column_slice(&y[..n]), DVector::from_column_slice(&y[n..])))
        .collect();
    Ok(Extremal {
        x: DVector::from_column_slice(x),
        lambda: DVector::from_column_slice(lambda),
        times: times.to_vec(),
        states,
    })
}

impl Extremal {
    /// Largest relative deviation of `H` from its initial value.
    pub fn energy_drift(&self, model: &ModelSpec) -> f64 {
        let h0 = hamiltonian(model, self.x.as_slice(), self.lambda.as_slice()).unwrap_or(0.0);
        self.states
            .iter()
            .map(|(q, p)| {
                let h = hamiltonian(model, q.as_slice(), p.as_slice()).unwrap_or(f64::NAN);
                (h - h0).abs() / h0.max(1e-30)
            })
            .fold(0.0, f64::max)
    }

    /// CSV with header `t,q1..qn,p1..pn,H`.
    pub fn to_csv(&self, model: &ModelSpec) -> String {
        let n = self.x.len();
        let mut s = String::from("t");
        for i in 1..=n {
            let _ = write!(s, ",q{i}");
        }
        for i in 1..=n {
            let _ = write!(s, ",p{i}");
        }
        s.push_str(",H\n");
        for (t, (q, p)) in self.times.iter().zip(&self.states) {
            let h = hamiltonian(model, q.as_slice(), p.as_slice()).unwrap_or(f64::NAN);
            s.push_str(&crate::format_float(*t));
            for v in q.iter().chain(p.iter()).chain(std::iter::once(&h)) {
                s.push(',');
                s.push_str(&crate::format_float(*v));
            }
            s.push('\n');
        }
        s
    }
}

/// CSV with header `t`, row-major `M`, row-major `N`, `detM`, `detN`.
pub fn jacobi_csv(states: &[JacobiMatrixState]) -> String {
    let mut s = String::from("t");
    if let Some(first) = states.first() {
        for name in ["M", "N"] {
            for i in 1..=first.m.nrows() {
                for j in 1..=first.m.ncols() {
                    let _ = write!(s, ",{name}{i}{j}");
                }
            }
        }
    }
    s.push_str(",detM,detN\n");
    for st in states {
        s.push_str(&crate::format_float(st.t));
        for mat in [&st.m, &st.n] {
            for i in 0..mat.nrows() {
                for j in 0..mat.ncols() {
                    s.push(',');
                    s.push_str(&crate::format_float(mat[(i, j)]));
                }
            }
        }
        let dm = if st.m.is_square() { st.m.determinant() } else { f64::NAN };
        let dn = if st.n.is_square() { st.n.determinant() } else { f64::NAN };
        s.push(',');
        s.push_str(&crate::format_float(dm));
        s.push(',');
        s.push_str(&crate::format_float(dn));
        s.push('\n');
    }
    s
}

/// Closed-form exponential map for the Heisenberg group and Grushin plane.
pub fn exp_closed(model: &ModelSpec, x: &[f64], lambda: &[f64], t: f64) -> Result<Point> {
    check_inputs(model, x, lambda)?;
    match model.kind() {
        ModelKind::Heisenberg3 => Ok(heisenberg_exp(x, lambda, t)),
        ModelKind::Grushin2 => Ok(grushin_exp(x, lambda, t)),
        _ => Err(Error::capability(model.name(), "closed-form exponential map")),
    }
}

/// Covector at the origin whose geodesic is the left translate by `x^-1`
/// of the geodesic from `x` with covector `lambda`.
pub(crate) fn heisenberg_pull_to_origin(x: &[f64], lambda: &[f64]) -> [f64; 3] {
    let w = lambda[2];
    [lambda[0] - 0.5 * w * x[1], lambda[1] + 0.5 * w * x[0], w]
}

fn heisenberg_exp_origin(l: &[f64; 3], t: f64) -> [f64; 3] {
    let [u, v, w] = *l;
    let s = w * t;
    let (sn, cs) = (sinc(s), cosc(s));
    [
        t * (u * sn - v * cs),
        t * (u * cs + v * sn),
        0.5 * (u * u + v * v) * t * t * hh(s),
    ]
}

fn heisenberg_exp(x: &[f64], lambda: &[f64], t: f64) -> Point {
    let l = heisenberg_pull_to_origin(x, lambda);
    let q = heisenberg_exp_origin(&l, t);
    heisenberg_mul(x, &q)
}

fn grushin_exp(x: &[f64], lambda: &[f64], t: f64) -> Point {
    let (x0, y0) = (x[0], x[1]);
    let (u, v) = (lambda[0], lambda[1]);
    let s = v * t;
    let xt = x0 * s.cos() + u * t * sinc(s);
    // x0^2 (s/2 + sin(2s)/4) written as x0^2 (s/2)(1 + sinc(2s))
    let yt = y0
        + x0 * x0 * 0.5 * s * (1.0 + sinc(2.0 * s))
        + x0 * u * t * s.sin() * sinc(s)
        + u * u * t * t * hh(2.0 * s);
    DVector::from_vec(vec![xt, yt])
}

/// Coordinate Jacobian of `lambda -> exp_x(t lambda)` from the closed
/// forms.
pub fn exp_jacobian_closed(model: &ModelSpec, x: &[f64], lambda: &[f64], t: f64) -> Result<DMatrix<f64>> {
    check_inputs(model, x, lambda)?;
    match model.kind() {
        ModelKind::Heisenberg3 => {
            let l = heisenberg_pull_to_origin(x, lambda);
            let j0 = heisenberg_jacobian_origin(&l, t);
            let (x0, y0) = (x[0], x[1]);
            let pull = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, -0.5 * y0, 0.0, 1.0, 0.5 * x0, 0.0, 0.0, 1.0]);
            let left = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, -0.5 * y0, 0.5 * x0, 1.0]);
            Ok(left * j0 * pull)
        }
        ModelKind::Grushin2 => Ok(grushin_jacobian(x, lambda, t)),
        _ => Err(Error::capability(model.name(), "closed-form exponential Jacobian")),
    }
}

fn heisenberg_jacobian_origin(l: &[f64; 3], t: f64) -> DMatrix<f64> {
    let [u, v, w] = *l;
    let s = w * t;
    let (sn, cs, hv) = (sinc(s), cosc(s), hh(s));
    let (snp, csp, hp) = (sinc_prime(s), cosc_prime(s), hh_prime(s));
    let t2 = t * t;
    DMatrix::from_row_slice(
        3,
        3,
        &[
            t * sn,
            -t * cs,
            t2 * (u * snp - v * csp),
            t * cs,
            t * sn,
            t2 * (u * csp + v * snp),
            u * t2 * hv,
            v * t2 * hv,
            0.5 * (u * u + v * v) * t2 * t * hp,
        ],
    )
}

fn grushin_jacobian(x: &[f64], lambda: &[f64], t: f64) -> DMatrix<f64> {
    let x0 = x[0];
    let (u, v) = (lambda[0], lambda[1]);
    let s = v * t;
    let (sn, cs) = (s.sin(), s.cos());
    let (sc, scp) = (sinc(s), sinc_prime(s));
    let t2 = t * t;
    let dx_du = t * sc;
    let dx_dv = -x0 * t * sn + u * t2 * scp;
    let dy_du = x0 * t * sn * sc + 2.0 * u * t2 * hh(2.0 * s);
    let dy_dv = t * (x0 * x0 * 0.5 * (1.0 + (2.0 * s).cos()) + x0 * u * t * (cs * sc + sn * scp))
        + 2.0 * u * u * t2 * t * hh_prime(2.0 * s);
    DMatrix::from_row_slice(2, 2, &[dx_du, dx_dv, dy_du, dy_dv])
}

/// Endpoint of the numerically integrated geodesic, `exp_x(t lambda)`.
pub fn exp_numeric(model: &ModelSpec, x: &[f64], lambda: &[f64], t: f64, tol: Tolerances) -> Result<Point> {
    check_inputs(model, x, lambda)?;
    let n = model.dim();
    let y0: Vec<f64> = x.iter().chain(lambda).copied().collect();
    let out = integrate(|_, y, dy| hamilton_rhs(model, n, y, dy), 0.0, &y0, &[t], tol)?;
    Ok(DVector::from_column_slice(&out[0][..n]))
}

/// Exponential map: closed form where available, numeric otherwise.
pub fn exp_map(model: &ModelSpec, x: &[f64], lambda: &[f64], t: f64) -> Result<Point> {
    match model.kind() {
        ModelKind::Heisenberg3 | ModelKind::Grushin2 => exp_closed(model, x, lambda, t),
        _ => exp_numeric(model, x, lambda, t, Tolerances::default()),
    }
}

/// State `(q, p)` of the extremal at time `s`.
fn state_at(model: &ModelSpec, x: &[f64], lambda: &[f64], s: f64, tol: Tolerances) -> Result<Vec<f64>> {
    let n = model.dim();
    let y0: Vec<f64> = x.iter().chain(lambda).copied().collect();
    if s == 0.0 {
        return Ok(y0);
    }
    let out = integrate(|_, y, dy| hamilton_rhs(model, n, y, dy), 0.0, &y0, &[s], tol)?;
    Ok(out.into_iter().next().expect("one output"))
}

/// Propagates a `2n x c` block of Jacobi fields, given at time `s` as
/// `init = [M; N]`, jointly with the extremal, returning it at every time
/// in `t_out`.
pub fn propagate_block(
    model: &ModelSpec,
    x: &[f64],
    lambda: &[f64],
    s: f64,
    init: &DMatrix<f64>,
    t_out: &[f64],
    tol: Tolerances,
) -> Result<Vec<DMatrix<f64>>> {
    Ok(propagate_with_state(model, x, lambda, s, init, t_out, tol)?
        .into_iter()
        .map(|(_, b)| b)
        .collect())
}

/// As [`propagate_block`], also returning the extremal state `(q, p)`.
pub(crate) fn propagate_with_state(
    model: &ModelSpec,
    x: &[f64],
    lambda: &[f64],
    s: f64,
    init: &DMatrix<f64>,
    t_out: &[f64],
    tol: Tolerances,
) -> Result<Vec<(Vec<f64>, DMatrix<f64>)>> {
    check_inputs(model, x, lambda)?;
    let n = model.dim();
    if init.nrows() != 2 * n {
        return Err(Error::input(format!(
            "Jacobi block has {} rows, expected {}",
            init.nrows(),
            2 * n
        )));
    }
    let c = init.ncols();
    let mut y0 = state_at(model, x, lambda, s, tol)?;
    y0.extend_from_slice(init.as_slice());
    let rhs = |_: f64, y: &[f64], dy: &mut [f64]| {
        let (g, vc) = coefficients(model, &y[..n], &y[n..2 * n]);
        dy[..n].copy_from_slice(g.dp.as_slice());
        for k in 0..n {
            dy[n + k] = -g.dq[k];
        }
        let phi = &y[2 * n..];
        let dphi = &mut dy[2 * n..];
        for col in 0..c {
            let m = &phi[col * 2 * n..col * 2 * n + n];
            let nn = &phi[col * 2 * n + n..(col + 1) * 2 * n];
            for i in 0..n {
                let mut dm = 0.0;
                let mut dn = 0.0;
                for j in 0..n {
                    dm -= vc.a[(i, j)] * m[j] + vc.r[(i, j)] * nn[j];
                    dn += vc.b[(i, j)] * m[j] + vc.a[(j, i)] * nn[j];
                }
                dphi[col * 2 * n + i] = dm;
                dphi[col * 2 * n + n + i] = dn;
            }
        }
    };
    let out = integrate(rhs, s, &y0, t_out, tol)?;
    Ok(out
        .into_iter()
        .map(|y| (y[..2 * n].to_vec(), DMatrix::from_column_slice(2 * n, c, &y[2 * n..])))
        .collect())
}

/// `exp_x(t lambda)` together with its Jacobian in `lambda`, closed form
/// where available.
pub fn exp_with_jacobian(model: &ModelSpec, x: &[f64], lambda: &[f64], t: f64) -> Result<(Point, DMatrix<f64>)> {
    match model.kind() {
        ModelKind::Heisenberg3 | ModelKind::Grushin2 => Ok((
            exp_closed(model, x, lambda, t)?,
            exp_jacobian_closed(model, x, lambda, t)?,
        )),
        _ => {
            let n = model.dim();
            let mut init = DMatrix::zeros(2 * n, n);
            init.view_mut((0, 0), (n, n)).fill_with_identity();
            let (state, block) = propagate_with_state(model, x, lambda, 0.0, &init, &[t], Tolerances::default())?
                .pop()
                .expect("one output");
            Ok((
                DVector::from_column_slice(&state[..n]),
                block.view((n, 0), (n, n)).into_owned(),
            ))
        }
    }
}

fn split(block: &DMatrix<f64>, n: usize, t: f64) -> JacobiMatrixState {
    let c = block.ncols();
    JacobiMatrixState {
        t,
        m: block.view((0, 0), (n, c)).into_owned(),
        n: block.view((n, 0), (n, c)).into_owned(),
    }
}

/// Propagates the Jacobi matrix `init`, given at time `init.t = s`, to
/// time `t` along the extremal of `lambda` from `x`.
pub fn jacobi_propagate(
    model: &ModelSpec,
    x: &[f64],
    lambda: &[f64],
    s: f64,
    t: f64,
    init: &JacobiMatrixState,
) -> Result<JacobiMatrixState> {
    jacobi_propagate_with(model, x, lambda, s, &[t], init, Tolerances::default())
        .map(|mut v| v.pop().expect("one output"))
}

/// As [`jacobi_propagate`] at several monotone target times with explicit
/// tolerances.
pub fn jacobi_propagate_with(
    model: &ModelSpec,
    x: &[f64],
    lambda: &[f64],
    s: f64,
    t_out: &[f64],
    init: &JacobiMatrixState,
    tol: Tolerances,
) -> Result<Vec<JacobiMatrixState>> {
    let n = model.dim();
    if init.m.shape() != init.n.shape() || init.m.nrows() != n {
        return Err(Error::input("Jacobi matrix blocks must be n x c"));
    }
    let mut block = DMatrix::zeros(2 * n, init.m.ncols());
    block.view_mut((0, 0), (n, init.m.ncols())).copy_from(&init.m);
    block.view_mut((n, 0), (n, init.m.ncols())).copy_from(&init.n);
    let out = propagate_block(model, x, lambda, s, &block, t_out, tol)?;
    Ok(out
        .iter()
        .zip(t_out)
        .map(|(b, &t)| split(b, n, t))
        .collect())
}

/// `J^V_s` and `J^H_s` evaluated at each time in `t_out`.
pub fn special_jacobi(
    model: &ModelSpec,
    x: &[f64],
    lambda: &[f64],
    s: f64,
    t_out: &[f64],
    tol: Tolerances,
) -> Result<Vec<SpecialJacobi>> {
    let n = model.dim();
    let id = DMatrix::identity(2 * n, 2 * n);
    let out = propagate_block(model, x, lambda, s, &id, t_out, tol)?;
    Ok(out
        .iter()
        .zip(t_out)
        .map(|(b, &t)| SpecialJacobi {
            vertical: split(&b.columns(0, n).into_owned(), n, t),
            horizontal: split(&b.columns(n, n).into_owned(), n, t),
        })
        .collect())
}

/// `N^V_0(t)`: the Jacobian of `lambda -> exp_x(t lambda)`, from the
/// variational equation.
pub fn exp_jacobian(model: &ModelSpec, x: &[f64], lambda: &[f64], t: f64) -> Result<DMatrix<f64>> {
    exp_jacobian_with(model, x, lambda, &[t], Tolerances::default()).map(|mut v| v.pop().expect("one output"))
}

/// `N^V_0` at several monotone times.
pub fn exp_jacobian_with(
    model: &ModelSpec,
    x: &[f64],
    lambda: &[f64],
    t_out: &[f64],
    tol: Tolerances,
) -> Result<Vec<DMatrix<f64>>> {
    let n = model.dim();
    let init = JacobiMatrixState::vertical(n, 0.0);
    Ok(jacobi_propagate_with(model, x, lambda, 0.0, t_out, &init, tol)?
        .into_iter()
        .map(|j| j.n)
        .collect())
}

/// Central finite-difference Jacobian of `lambda -> exp_x(t lambda)` with
/// step `1e-6 max(1, |lambda|)`.
pub fn exp_jacobian_fd(model: &ModelSpec, x: &[f64], lambda: &[f64], t: f64) -> Result<DMatrix<f64>> {
    check_inputs(model, x, lambda)?;
    let n = model.dim();
    let h = 1e-6 * DVector::from_column_slice(lambda).norm().max(1.0);
    let tol = Tolerances::new(1e-14, 1e-13);
    let eval = |l: &[f64]| -> Result<Point> {
        match model.kind() {
            ModelKind::Heisenberg3 | ModelKind::Grushin2 => exp_closed(model, x, l, t),
            _ => exp_numeric(model, x, l, t, tol),
        }
    };
    let mut jac = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut lp = lambda.to_vec();
        let mut lm = lambda.to_vec();
        lp[k] += h;
        lm[k] -= h;
        let d = (eval(&lp)? - eval(&lm)?) / (2.0 * h);
        jac.set_column(k, &d);
    }
    Ok(jac)
}

/// Inverts `a` unless it is numerically singular.
pub(crate) fn checked_inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sv = a.clone().svd(false, false).singular_values;
    let (lo, hi) = (sv.min(), sv.max());
    if !(hi > 0.0) || lo <= 1e-9 * hi {
        return Err(Error::domain(format!(
            "{what} is singular (condition {:.3e})",
            if lo > 0.0 { hi / lo } else { f64::INFINITY }
        )));
    }
    a.clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::domain(format!("{what} is singular")))
}

/// `S(t) = N^V_0(t)^-1 N^H_0(t)`.
pub fn s_matrix(model: &ModelSpec, x: &[f64], lambda: &[f64], t: f64) -> Result<DMatrix<f64>> {
    s_matrix_with(model, x, lambda, &[t], Tolerances::default()).map(|mut v| v.pop().expect("one output"))
}

/// `S` at several monotone positive times.
pub fn s_matrix_with(
    model: &ModelSpec,
    x: &[f64],
    lambda: &[f64],
    t_out: &[f64],
    tol: Tolerances,
) -> Result<Vec<DMatrix<f64>>> {
    let sj = special_jacobi(model, x, lambda, 0.0, t_out, tol)?;
    sj.iter()
        .map(|j| {
            let inv = checked_inverse(&j.vertical.n, "N^V_0(t)")?;
            Ok(inv * &j.horizontal.n)
        })
        .collect()
}

/// `W(t) = N^V_0(t) M^V_0(t)^-1`.
pub fn riccati_w(model: &ModelSpec, x: &[f64], lambda: &[f64], t: f64) -> Result<DMatrix<f64>> {
    let n = model.dim();
    let init = JacobiMatrixState::vertical(n, 0.0);
    let j = jacobi_propagate(model, x, lambda, 0.0, t, &init)?;
    let inv = checked_inverse(&j.m, "M^V_0(t)")?;
    Ok(&j.n * inv)
}

/// Norm of `W' - (B + A^T W + W A + W R W)` at time `t`, with `W'` from a
/// central difference of step `h`.
///
/// The ordering `A^T W + W A` is the one implied by the Jacobi equation
/// `M' = -A M - R N`, `N' = B M + A^T N` for `W = N M^-1`.
pub fn riccati_residual(model: &ModelSpec, x: &[f64], lambda: &[f64], t: f64, h: f64) -> Result<f64> {
    let n = model.dim();
    if !(h > 0.0) || t - h < 0.0 {
        return Err(Error::input("need 0 <= t - h"));
    }
    let tol = Tolerances::new(1e-15, 1e-13);
    let init = JacobiMatrixState::vertical(n, 0.0);
    let ts = [t - h, t, t + h];
    let js = if t - h == 0.0 {
        let mut v = vec![init.clone()];
        v.extend(jacobi_propagate_with(model, x, lambda, 0.0, &ts[1..], &init, tol)?);
        v
    } else {
        jacobi_propagate_with(model, x, lambda, 0.0, &ts, &init, tol)?
    };
    let w: Vec<DMatrix<f64>> = js
        .iter()
        .map(|j| Ok(&j.n * checked_inverse(&j.m, "M^V_0(t)")?))
        .collect::<Result<_>>()?;
    let dw = (&w[2] - &w[0]) / (2.0 * h);
    let q = state_at(model, x, lambda, t, tol)?;
    let vc = coefficients(model, &q[..n], &q[n..]).1;
    let wt = &w[1];
    let rhs = &vc.b + vc.a.transpose() * wt + wt * &vc.a + wt * &vc.r * wt;
    Ok((dw - rhs).norm())
}

/// Max-norm residual of
/// `J^V_s(t) = -J^V_0(t) N^V_0(s)^-1 N^H_0(s) N^V_s(0) + J^H_0(t) N^V_s(0)`.
pub fn change_of_basis_check(model: &ModelSpec, x: &[f64], lambda: &[f64], s: f64, t: f64) -> Result<f64> {
    let n = model.dim();
    let tol = Tolerances::new(1e-15, 1e-13);
    // J^V_s propagated to t and back to 0
    let jvs_t = jacobi_propagate_with(model, x, lambda, s, &[t], &JacobiMatrixState::vertical(n, s), tol)?
        .pop()
        .expect("one output");
    let nvs_0 = jacobi_propagate_with(model, x, lambda, s, &[0.0], &JacobiMatrixState::vertical(n, s), tol)?
        .pop()
        .expect("one output")
        .n;
    let at_s = special_jacobi(model, x, lambda, 0.0, &[s], tol)?.pop().expect("one output");
    let at_t = special_jacobi(model, x, lambda, 0.0, &[t], tol)?.pop().expect("one output");
    let inv = checked_inverse(&at_s.vertical.n, "N^V_0(s)")?;
    let coef_v = -(inv * &at_s.horizontal.n * &nvs_0);
    let rhs_m = &at_t.vertical.m * &coef_v + &at_t.horizontal.m * &nvs_0;
    let rhs_n = &at_t.vertical.n * &coef_v + &at_t.horizontal.n * &nvs_0;
    Ok((jvs_t.m - rhs_m).amax().max((jvs_t.n - rhs_n).amax()))
}
