//! Fast consistency checks run by `srdist selftest`.

use std::f64::consts::PI;

use serde_json::Value;
use srdist_core::distortion::{beta_closed, grushin_proof_chain, sample_in_cut_covectors};
use srdist_core::flow::{exp_closed, exp_jacobian_with, exp_numeric};
use srdist_core::geodesy::conjugate_time;
use srdist_core::models::measure_density;
use srdist_core::ode::Tolerances;
use srdist_core::ModelSpec;

use crate::args::SelftestArgs;
use crate::output::{sha256_hex, Envelope, Obj};
use crate::{EXIT_NUMERICAL, EXIT_OK};

const COVECTORS: usize = 50;
const WBAR_SAMPLES: usize = 10_000;

struct Check {
    name: &'static str,
    metric: f64,
    limit: f64,
}

impl Check {
    fn pass(&self) -> bool {
        self.metric <= self.limit
    }
}

/// Deterministic base points in `[-1, 1]^n`.
fn base_point(i: usize, n: usize) -> Vec<f64> {
    (0..n)
        .map(|d| {
            let k = (i * n + d) as f64;
            2.0 * (k * 0.618_033_988_749_895).fract() - 1.0
        })
        .collect()
}

fn times() -> [f64; 4] {
    [0.25, 0.5, 0.75, 1.0]
}

fn exp_error(model: &ModelSpec, seed: u64, tol: Tolerances) -> srdist_core::Result<f64> {
    let mut worst = 0.0f64;
    for (i, l) in sample_in_cut_covectors(model, COVECTORS, seed, 0.1)?.iter().enumerate() {
        let x = base_point(i, model.dim());
        for t in times() {
            let c = exp_closed(model, &x, l.as_slice(), t)?;
            let n = exp_numeric(model, &x, l.as_slice(), t, tol)?;
            worst = worst.max((c - n).amax());
        }
    }
    Ok(worst)
}

/// Relative error of `det N(t) / det N(1)` times the density ratio against
/// the closed-form coefficient, at base points on the `x2 = 0` axis.
fn beta_error(model: &ModelSpec, seed: u64, tol: Tolerances) -> srdist_core::Result<f64> {
    let mut worst = 0.0f64;
    let ts = times();
    for (i, l) in sample_in_cut_covectors(model, COVECTORS, seed, 0.1)?.iter().enumerate() {
        let mut x = vec![0.0; model.dim()];
        x[0] = base_point(i, 1)[0];
        let jac = exp_jacobian_with(model, &x, l.as_slice(), &ts, tol)?;
        let end = exp_numeric(model, &x, l.as_slice(), 1.0, tol)?;
        let (d1, rho1) = (jac[3].determinant(), measure_density(model, end.as_slice()));
        for (k, &t) in ts[..3].iter().enumerate() {
            let q = exp_numeric(model, &x, l.as_slice(), t, tol)?;
            let b = jac[k].determinant() / d1 * measure_density(model, q.as_slice()) / rho1;
            let c = beta_closed(model, &x, l.as_slice(), t)?;
            worst = worst.max((b - c).abs() / c.abs().max(1e-300));
        }
    }
    Ok(worst)
}

/// Heisenberg conjugate times against `2 pi / |w|`.
fn conjugate_error(seed: u64) -> srdist_core::Result<f64> {
    let h = ModelSpec::heisenberg();
    let mut worst = 0.0f64;
    for l in sample_in_cut_covectors(&h, 10, seed, 0.1)? {
        let w = l[2].abs().max(0.5);
        let lam = [l[0], l[1], w];
        let expected = 2.0 * PI / w;
        let got = conjugate_time(&h, &[0.0; 3], &lam, 1.5 * expected)?
            .ok_or_else(|| srdist_core::Error::Numerical("no conjugate point found".into()))?;
        worst = worst.max((got - expected).abs() / expected);
    }
    Ok(worst)
}

fn wbar_defect() -> srdist_core::Result<f64> {
    let zs: Vec<f64> = (1..=WBAR_SAMPLES).map(|i| PI * i as f64 / (WBAR_SAMPLES + 1) as f64).collect();
    let r = grushin_proof_chain(&zs)?;
    // zero when every link of the chain holds
    Ok(if r.pass { 0.0 } else { 1.0 })
}

/// Runs every check and returns the report and exit code (3 on any
/// failure).
pub fn run(args: &SelftestArgs, seed: u64) -> (String, i32) {
    let tol = match args.inject_tolerance {
        Some(t) => Tolerances { atol: t, rtol: t },
        None => Tolerances::default(),
    };
    let (h, g) = (ModelSpec::heisenberg(), ModelSpec::grushin());
    let or_fail = |r: srdist_core::Result<f64>| r.unwrap_or(f64::INFINITY);
    let checks = [
        Check {
            name: "exp_heisenberg",
            metric: or_fail(exp_error(&h, seed, tol)),
            limit: 1e-8,
        },
        Check {
            name: "exp_grushin",
            metric: or_fail(exp_error(&g, seed, tol)),
            limit: 1e-8,
        },
        Check {
            name: "beta_heisenberg",
            metric: or_fail(beta_error(&h, seed, tol)),
            limit: 1e-6,
        },
        Check {
            name: "beta_grushin",
            metric: or_fail(beta_error(&g, seed, tol)),
            limit: 1e-6,
        },
        Check {
            name: "conjugate_time_heisenberg",
            metric: or_fail(conjugate_error(seed)),
            limit: 1e-6,
        },
        Check {
            name: "wbar_proof_chain",
            metric: or_fail(wbar_defect()),
            limit: 0.0,
        },
    ];
    let pass = checks.iter().all(Check::pass);
    let code = if pass { EXIT_OK } else { EXIT_NUMERICAL };
    if !args.json {
        let mut s = String::new();
        for c in &checks {
            let tag = if c.pass() { "ok  " } else { "FAIL" };
            s.push_str(&format!("{tag} {:<26} {:.3e} (limit {:.0e})\n", c.name, c.metric, c.limit));
        }
        s.push_str(if pass { "selftest passed\n" } else { "selftest FAILED\n" });
        return (s, code);
    }
    let mut per = Obj::new();
    for c in &checks {
        per = per.set(c.name, c.pass());
    }
    let models = "heisenberg,grushin";
    let result = Obj::new().set("checks", per.build()).set("pass", Value::Bool(pass)).build();
    let env = Envelope {
        command: "selftest",
        model: models,
        model_hash: &sha256_hex(models),
        seed,
        grid: format!("covectors:{COVECTORS} t:4 wbar:{WBAR_SAMPLES}"),
    };
    (env.wrap(result), code)
}
