//! Dormand–Prince 5(4) integrator with step control, exact landing on
//! requested output times and cubic Hermite dense output.

use crate::error::{Error, Result};

/// Absolute and relative local error tolerances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub atol: f64,
    pub rtol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            atol: 1e-12,
            rtol: 1e-10,
        }
    }
}

impl Tolerances {
    pub fn new(atol: f64, rtol: f64) -> Self {
        Tolerances { atol, rtol }
    }
}

const MAX_STEPS: usize = 2_000_000;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

struct Stepper<F> {
    f: F,
    tol: Tolerances,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    ynew: Vec<f64>,
    h: f64,
    steps: usize,
}

impl<F: FnMut(f64, &[f64], &mut [f64])> Stepper<F> {
    fn new(mut f: F, t0: f64, y0: &[f64], tol: Tolerances) -> Self {
        let n = y0.len();
        let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; n]);
        f(t0, y0, &mut k[0]);
        Stepper {
            f,
            tol,
            k,
            tmp: vec![0.0; n],
            ynew: vec![0.0; n],
            h: 0.0,
            steps: 0,
        }
    }

    fn initial_step(&self, y: &[f64], span: f64) -> f64 {
        let sc = |i: usize| self.tol.atol + self.tol.rtol * y[i].abs();
        let n = y.len().max(1) as f64;
        let d0 = (y.iter().enumerate().map(|(i, v)| (v / sc(i)).powi(2)).sum::<f64>() / n).sqrt();
        let d1 = (self.k[0]
            .iter()
            .enumerate()
            .map(|(i, v)| (v / sc(i)).powi(2))
            .sum::<f64>()
            / n)
            .sqrt();
        let h = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        h.min(span.abs()).max(1e-12 * span.abs().max(1e-300))
    }

    /// Advances `(t, y)` to exactly `t_end`.  `on_step` sees every accepted
    /// step as `(t0, y0, f0, t1, y1, f1)`.
    fn advance(
        &mut self,
        t: &mut f64,
        y: &mut [f64],
        t_end: f64,
        on_step: &mut dyn FnMut(f64, &[f64], &[f64], f64, &[f64], &[f64]),
    ) -> Result<()> {
        let span = t_end - *t;
        if span == 0.0 {
            return Ok(());
        }
        let dir = span.signum();
        if self.h == 0.0 || self.h.signum() != dir {
            self.h = dir * self.initial_step(y, span);
        }
        loop {
            let remaining = t_end - *t;
            if remaining * dir <= 0.0 {
                return Ok(());
            }
            let mut last = false;
            let mut h = self.h;
            if (h * dir) >= remaining * dir {
                h = remaining;
                last = true;
            }
            let min_h = 1e-14 * t.abs().max(t_end.abs()).max(1.0);
            if h.abs() < min_h {
                return Err(Error::numerical(format!(
                    "step size underflow at t={t:.6e} (h={h:.3e})"
                )));
            }
            self.steps += 1;
            if self.steps > MAX_STEPS {
                return Err(Error::numerical(format!(
                    "step budget exhausted at t={t:.6e}"
                )));
            }
            let err = self.trial(*t, y, h);
            if !err.is_finite() {
                self.h = h * 0.2;
                continue;
            }
            if err <= 1.0 {
                let t_new = if last { t_end } else { *t + h };
                // FSAL: stage 7 is f at the new point
                on_step(*t, y, &self.k[0], t_new, &self.ynew, &self.k[6]);
                y.copy_from_slice(&self.ynew);
                *t = t_new;
                self.k.swap(0, 6);
                let fac = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                // keep the natural step when the last one was shortened to land
                if !last {
                    self.h = h * fac;
                } else if fac < 1.0 {
                    self.h = self.h.min(h * fac);
                }
            } else {
                let fac = (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
                self.h = h * fac;
            }
        }
    }

    fn trial(&mut self, t: f64, y: &[f64], h: f64) -> f64 {
        let n = y.len();
        let f = &mut self.f;
        let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
        let tmp = &mut self.tmp;
        for i in 0..n {
            tmp[i] = y[i] + h * A21 * k1[i];
        }
        f(t + C2 * h, tmp, k2);
        for i in 0..n {
            tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        f(t + C3 * h, tmp, k3);
        for i in 0..n {
            tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(t + C4 * h, tmp, k4);
        for i in 0..n {
            tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(t + C5 * h, tmp, k5);
        for i in 0..n {
            tmp[i] = y[i]
                + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        f(t + h, tmp, k6);
        let ynew = &mut self.ynew;
        for i in 0..n {
            ynew[i] = y[i]
                + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        f(t + h, ynew, k7);
        let mut err: f64 = 0.0;
        for i in 0..n {
            let e = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = self.tol.atol + self.tol.rtol * y[i].abs().max(ynew[i].abs());
            err = err.max(e.abs() / sc);
        }
        err
    }
}

fn check_inputs(y0: &[f64], tol: Tolerances) -> Result<()> {
    if !(tol.atol > 0.0 && tol.rtol >= 0.0) {
        return Err(Error::input("tolerances must be positive"));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("non-finite initial state"));
    }
    Ok(())
}

/// Integrates `y' = f(t, y)` from `(t0, y0)` and returns the state at each
/// time in `t_out`.  The times must be monotone and on one side of `t0`;
/// the integration lands on each of them exactly.
pub fn integrate<F>(f: F, t0: f64, y0: &[f64], t_out: &[f64], tol: Tolerances) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    check_inputs(y0, tol)?;
    let mut dir = 0.0;
    let mut prev = t0;
    for &t in t_out {
        let d = t - prev;
        if d != 0.0 {
            if dir != 0.0 && d.signum() != dir {
                return Err(Error::input("output times must be monotone away from t0"));
            }
            dir = d.signum();
        }
        prev = t;
    }
    let mut stepper = Stepper::new(f, t0, y0, tol);
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut out = Vec::with_capacity(t_out.len());
    let mut noop = |_: f64, _: &[f64], _: &[f64], _: f64, _: &[f64], _: &[f64]| {};
    for &target in t_out {
        stepper.advance(&mut t, &mut y, target, &mut noop)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!("state blew up before t={target:e}")));
        }
        out.push(y.clone());
    }
    Ok(out)
}

/// Accepted steps of an integration with cubic Hermite interpolation between
/// them.
#[derive(Debug, Clone)]
pub struct DenseTrajectory {
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    slopes: Vec<Vec<f64>>,
}

impl DenseTrajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("non-empty trajectory")
    }

    /// State at `t`, clamped to the integrated interval.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let n = self.times.len();
        if n == 1 {
            return self.states[0].clone();
        }
        let forward = self.times[n - 1] >= self.times[0];
        let key = |s: f64| if forward { s } else { -s };
        let tk = key(t);
        if tk <= key(self.times[0]) {
            return self.states[0].clone();
        }
        if tk >= key(self.times[n - 1]) {
            return self.states[n - 1].clone();
        }
        let i = self.times.partition_point(|&s| key(s) <= tk).saturating_sub(1).min(n - 2);
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        (0..self.states[i].len())
            .map(|j| {
                h00 * self.states[i][j]
                    + h10 * h * self.slopes[i][j]
                    + h01 * self.states[i + 1][j]
                    + h11 * h * self.slopes[i + 1][j]
            })
            .collect()
    }
}

/// Integrates from `t0` to `t1`, keeping every accepted step for dense
/// output.
pub fn integrate_dense<F>(f: F, t0: f64, y0: &[f64], t1: f64, tol: Tolerances) -> Result<DenseTrajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    check_inputs(y0, tol)?;
    let mut stepper = Stepper::new(f, t0, y0, tol);
    let mut traj = DenseTrajectory {
        times: vec![t0],
        states: vec![y0.to_vec()],
        slopes: vec![stepper.k[0].clone()],
    };
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut record = |_: f64, _: &[f64], _: &[f64], tn: f64, yn: &[f64], fnew: &[f64]| {
        traj.times.push(tn);
        traj.states.push(yn.to_vec());
        traj.slopes.push(fnew.to_vec());
    };
    stepper.advance(&mut t, &mut y, t1, &mut record)?;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oscillator(_: f64, y: &[f64], dy: &mut [f64]) {
        dy[0] = y[1];
        dy[1] = -y[0];
    }

    #[test]
    fn harmonic_oscillator_lands_on_outputs() {
        let ts: Vec<f64> = (1..=10).map(|i| i as f64 * 0.7).collect();
        let out = integrate(oscillator, 0.0, &[1.0, 0.0], &ts, Tolerances::default()).unwrap();
        for (t, y) in ts.iter().zip(&out) {
            assert!((y[0] - t.cos()).abs() < 1e-9, "t={t}");
            assert!((y[1] + t.sin()).abs() < 1e-9);
        }
    }

    #[test]
    fn backward_integration() {
        let out = integrate(oscillator, 1.0, &[1.0_f64.cos(), -1.0_f64.sin()], &[0.0], Tolerances::default()).unwrap();
        assert!((out[0][0] - 1.0).abs() < 1e-10);
        assert!(out[0][1].abs() < 1e-10);
    }

    #[test]
    fn output_at_start_returns_initial_state() {
        let out = integrate(oscillator, 0.0, &[2.0, 3.0], &[0.0], Tolerances::default()).unwrap();
        assert_eq!(out[0], vec![2.0, 3.0]);
    }

    #[test]
    fn dense_output_is_accurate_between_steps() {
        let tr = integrate_dense(oscillator, 0.0, &[1.0, 0.0], 6.0, Tolerances::new(1e-12, 1e-12)).unwrap();
        assert_eq!(tr.t_end(), 6.0);
        for i in 0..60 {
            let t = i as f64 * 0.1 + 0.013;
            let y = tr.eval(t);
            assert!((y[0] - t.cos()).abs() < 1e-5, "t={t}");
        }
    }

    #[test]
    fn blow_up_reports_numerical_failure() {
        // y' = y^2 from y(0) = 1 explodes at t = 1
        let r = integrate(|_, y, dy| dy[0] = y[0] * y[0], 0.0, &[1.0], &[2.0], Tolerances::default());
        assert!(matches!(r, Err(Error::Numerical(_))));
    }

    #[test]
    fn non_monotone_outputs_rejected() {
        let r = integrate(oscillator, 0.0, &[1.0, 0.0], &[1.0, 0.5], Tolerances::default());
        assert!(matches!(r, Err(Error::Input(_))));
    }
}
