//! Acceptance suite: one test per criterion, each with its runtime budget.
//! Run with `cargo test -p srdist --test acceptance`.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srdist_cli::config::ModelConfig;
use srdist_core::distortion::{
    beta_closed, beta_numeric, diagonal_bound_check, fit_geodesic_exponent, grushin_proof_chain,
    sample_in_cut_covectors, sharpness_search, verify_power_bound, BoundGrid,
};
use srdist_core::flow::{exp_closed, exp_numeric, s_matrix_with};
use srdist_core::geodesy::{conjugate_time, semiconvexity_probe};
use srdist_core::measure::{ball_volume_exponent, bm_check, mcp_check, sample_set, SetSpec};
use srdist_core::ode::Tolerances;
use srdist_core::transport::{cost_matrix, displacement_interpolation, solve_ot, wasserstein2, DiscreteMeasure};
use srdist_core::ModelSpec;

const SEED: u64 = 20_240_601;

fn budget(start: Instant, secs: u64, what: &str) {
    let el = start.elapsed();
    assert!(el < Duration::from_secs(secs), "{what} took {el:?}, budget {secs} s");
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn htype() -> ModelSpec {
    ModelConfig::named("htype").build().unwrap()
}

#[test]
fn c01_closed_form_exponential_matches_flow() {
    let start = Instant::now();
    for model in [ModelSpec::heisenberg(), ModelSpec::grushin()] {
        let mut rng = ChaCha8Rng::seed_from_u64(SEED);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let x = uniform(&mut rng, model.dim(), -1.0, 1.0);
            let l = uniform(&mut rng, model.dim(), -3.0, 3.0);
            let t = rng.random_range(0.0..1.0);
            let c = exp_closed(&model, &x, &l, t).unwrap();
            let n = exp_numeric(&model, &x, &l, t, Tolerances::default()).unwrap();
            worst = worst.max((c - n).amax());
        }
        assert!(worst <= 1e-8, "{}: max error {worst:e}", model.name());
    }
    budget(start, 10, "closed-form fidelity");
}

#[test]
fn c02_distortion_closed_matches_numeric() {
    let start = Instant::now();
    for model in [ModelSpec::heisenberg(), ModelSpec::grushin()] {
        let mut rng = ChaCha8Rng::seed_from_u64(SEED);
        let lams = sample_in_cut_covectors(&model, 1000, SEED, 1e-3).unwrap();
        let mut worst = 0.0f64;
        for l in &lams {
            let x = uniform(&mut rng, model.dim(), -1.0, 1.0);
            let t = rng.random_range(0.01..1.0);
            let c = beta_closed(&model, &x, l.as_slice(), t).unwrap();
            let n = beta_numeric(&model, &x, l.as_slice(), t).unwrap();
            worst = worst.max((c - n).abs() / c.abs());
        }
        assert!(worst <= 1e-6, "{}: max relative error {worst:e}", model.name());
    }
    budget(start, 30, "distortion cross-validation");
}

#[test]
fn c03_heisenberg_conjugate_time_is_first_cut_time() {
    let start = Instant::now();
    let h = ModelSpec::heisenberg();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for _ in 0..50 {
        let mut l = uniform(&mut rng, 3, -2.0, 2.0);
        l[2] = rng.random_range(0.5..6.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        let expected = 2.0 * PI / l[2].abs();
        let got = conjugate_time(&h, &[0.0; 3], &l, 1.5 * expected).unwrap().expect("a conjugate point");
        assert!((got - expected).abs() <= 1e-6 * expected, "lambda {l:?}: {got} vs {expected}");
    }
    budget(start, 30, "conjugate/cut agreement");
}

#[test]
fn c04_sharp_power_bounds_and_witnesses() {
    let start = Instant::now();
    let h = ModelSpec::heisenberg();
    let g = ModelSpec::grushin();
    let rh = verify_power_bound(&h, 5.0, &BoundGrid::Heisenberg { w: 200, t: 200, delta: 1e-3 }, SEED).unwrap();
    assert!(rh.pass && rh.min_difference >= -1e-12, "Heisenberg: {rh:?}");
    let grid = BoundGrid::Grushin { x: 20, u: 20, v: 20, t: 50, delta: 1e-3 };
    let rg = verify_power_bound(&g, 5.0, &grid, SEED).unwrap();
    assert!(rg.pass && rg.min_difference >= -1e-12, "Grushin: min difference {:e}", rg.min_difference);
    for m in [&h, &g] {
        let w = sharpness_search(m, 4.9).unwrap().unwrap_or_else(|| panic!("{}: no witness for 4.9", m.name()));
        assert!(w.beta < w.bound);
    }
    budget(start, 120, "sharp bounds");
}

#[test]
fn c05_htype_exponent_is_seven() {
    let start = Instant::now();
    let m = htype();
    let (n, _) = fit_geodesic_exponent(&m, &[0.0; 5], &[1.0, 0.3, -0.2, 0.5, 1.0], 1e-3, 0.1).unwrap();
    assert!((n - 7.0).abs() <= 0.1, "fitted exponent {n}");
    let r = verify_power_bound(&m, 7.0, &BoundGrid::Sampled { covectors: 100, t: 100, delta: 1e-3 }, SEED).unwrap();
    assert_eq!(r.samples, 10_000);
    assert!(r.pass, "min difference {:e}", r.min_difference);
    budget(start, 120, "H-type exponent");
}

#[test]
fn c06_grushin_proof_chain() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let zs: Vec<f64> = (0..1_000_000)
        .map(|_| loop {
            let z = rng.random_range(0.0..PI);
            if z > 0.0 {
                break z;
            }
        })
        .collect();
    let r = grushin_proof_chain(&zs).unwrap();
    assert!(r.min_wbar >= -1e-12, "min W = {:e}", r.min_wbar);
    assert!((r.taylor_root - 2.67491).abs() <= 1e-3, "root {}", r.taylor_root);
    budget(start, 10, "proof chain");
}

#[test]
fn c07_s_matrix_is_monotone() {
    let start = Instant::now();
    let ts: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    for model in [ModelSpec::heisenberg(), ModelSpec::grushin(), htype()] {
        let mut rng = ChaCha8Rng::seed_from_u64(SEED);
        let lams = sample_in_cut_covectors(&model, 50, SEED, 1e-2).unwrap();
        let mut worst = f64::INFINITY;
        for l in &lams {
            let x = uniform(&mut rng, model.dim(), -1.0, 1.0);
            let s = s_matrix_with(&model, &x, l.as_slice(), &ts, Tolerances::default()).unwrap();
            for i in 0..s.len() {
                for j in i + 1..s.len() {
                    let d = &s[i] - &s[j];
                    let sym = (&d + d.transpose()) * 0.5;
                    worst = worst.min(sym.symmetric_eigen().eigenvalues.min());
                }
            }
        }
        assert!(worst >= -1e-7, "{}: min eigenvalue {worst:e}", model.name());
    }
    budget(start, 60, "S-matrix monotonicity");
}

#[test]
fn c08_heisenberg_geodesic_and_ball_exponents() {
    let start = Instant::now();
    let h = ModelSpec::heisenberg();
    let (n, _) = fit_geodesic_exponent(&h, &[0.0; 3], &[1.0, 0.5, 1.0], 1e-3, 0.1).unwrap();
    assert!((n - 5.0).abs() <= 0.05, "geodesic exponent {n}");
    let (q, _) = ball_volume_exponent(&h, &[0.0; 3], &[0.05, 0.1, 0.2, 0.4], 100_000, SEED).unwrap();
    assert!((q - 4.0).abs() <= 0.05, "ball exponent {q}");
    let d = diagonal_bound_check(&h, &[0.0; 3], &[0.25, 0.5, 0.75], &[0.1], 100_000, SEED).unwrap();
    assert!(d.pass && d.q == 4.0, "{d:?}");
    budget(start, 60, "Heisenberg asymptotics");
}

#[test]
fn c08_grushin_generic_geodesic_exponent_is_five() {
    let start = Instant::now();
    let (n, _) = fit_geodesic_exponent(&ModelSpec::grushin(), &[0.0, 0.0], &[1.0, 1.0], 1e-3, 0.1).unwrap();
    budget(start, 60, "Grushin asymptotics");
    assert!((n - 5.0).abs() <= 0.05, "Grushin geodesic exponent {n}, expected 5.00 +- 0.05");
}

#[test]
fn c09_brunn_minkowski_and_measure_contraction() {
    let start = Instant::now();
    let s = 100_000;
    let h = ModelSpec::heisenberg();
    let g = ModelSpec::grushin();
    let cube = SetSpec::Box(vec![(0.0, 1.0); 3]);
    let a = sample_set(&h, &cube, s, SEED).unwrap();
    let b = sample_set(&h, &cube, s, SEED + 1).unwrap();
    let r = bm_check(&h, &a, &b, 5.0, &[0.5], None, SEED).unwrap();
    assert!(r.pass, "Heisenberg BM: {r:?}");

    let a = sample_set(&g, &SetSpec::Box(vec![(-2.0, -1.0), (0.0, 1.0)]), s, SEED).unwrap();
    let b = sample_set(&g, &SetSpec::Box(vec![(1.0, 2.0), (0.0, 1.0)]), s, SEED + 1).unwrap();
    let r = bm_check(&g, &a, &b, 5.0, &[0.25, 0.5, 0.75, 1.0], None, SEED).unwrap();
    assert!(r.pass, "Grushin BM: {r:?}");

    let b = sample_set(&h, &SetSpec::Box(vec![(0.5, 1.5); 3]), s, SEED).unwrap();
    let r = mcp_check(&h, &[0.0; 3], &b, 5.0, &[0.5, 1.0], None, SEED).unwrap();
    assert!(r.pass, "Heisenberg MCP: {r:?}");

    let b = sample_set(&g, &SetSpec::Box(vec![(1.0, 2.0), (0.0, 1.0)]), s, SEED).unwrap();
    let r = mcp_check(&g, &[0.0, 0.0], &b, 5.0, &[0.25, 0.5, 0.75, 1.0], None, SEED).unwrap();
    assert!(r.pass, "Grushin MCP: {r:?}");
    budget(start, 300, "BM/MCP Monte Carlo");
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<DVector<f64>> {
    (0..n).map(|_| DVector::from_vec(uniform(rng, 3, -1.0, 1.0))).collect()
}

#[test]
fn c10_optimal_transport() {
    let start = Instant::now();
    let h = ModelSpec::heisenberg();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for _ in 0..100 {
        let n = rng.random_range(2..=7);
        let mu = DiscreteMeasure::uniform(cloud(&mut rng, n)).unwrap();
        let nu = DiscreteMeasure::uniform(cloud(&mut rng, n)).unwrap();
        let c = cost_matrix(&h, &mu, &nu).unwrap();
        let plan = solve_ot(&c, &mu.weights, &nu.weights).unwrap();
        assert!(plan.marginal_residual(&mu.weights, &nu.weights) <= 1e-10);
        let w = 1.0 / n as f64;
        let brute = permutations(n)
            .iter()
            .map(|p| (0..n).fold(0.0, |s, i| s + c[(i, p[i])] * w))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(plan.cost, brute, "n = {n}");
    }
    let mu0 = DiscreteMeasure::uniform(cloud(&mut rng, 16)).unwrap();
    let mu1 = DiscreteMeasure::uniform(cloud(&mut rng, 16)).unwrap();
    let plan = solve_ot(&cost_matrix(&h, &mu0, &mu1).unwrap(), &mu0.weights, &mu1.weights).unwrap();
    let mid = displacement_interpolation(&h, &plan, &mu0, &mu1, 0.5).unwrap().measure;
    let w01 = wasserstein2(&h, &mu0, &mu1).unwrap();
    let sum = wasserstein2(&h, &mu0, &mid).unwrap() + wasserstein2(&h, &mid, &mu1).unwrap();
    assert!((sum - w01).abs() <= 1e-6, "W2 additivity: {sum} vs {w01}");
    budget(start, 60, "optimal transport");
}

#[test]
fn c11_semiconvexity_fails_on_the_vertical_axis() {
    let start = Instant::now();
    let h = ModelSpec::heisenberg();
    let radii = [1e-1, 1e-2, 1e-3];
    let cut = semiconvexity_probe(&h, &[0.0; 3], &[0.0, 0.0, 1.0], &radii).unwrap();
    assert!(cut.windows(2).all(|w| w[1].1 < w[0].1), "{cut:?}");
    assert!(cut[2].1 <= -1e3, "{cut:?}");
    let smooth = semiconvexity_probe(&h, &[0.0; 3], &[1.0, 0.0, 0.0], &radii).unwrap();
    assert!(smooth.iter().all(|(_, q)| (-50.0..=50.0).contains(q)), "{smooth:?}");
    budget(start, 120, "cut-locus probe");
}

#[test]
fn c12_selftest_json_is_deterministic() {
    let bin = env!("CARGO_BIN_EXE_srdist");
    let run = |threads: &str| {
        let o = std::process::Command::new(bin)
            .args(["selftest", "--json", "--threads", threads])
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0));
        o.stdout
    };
    let first = run("4");
    assert_eq!(first, run("4"));
    assert_eq!(first, run("1"));
}
