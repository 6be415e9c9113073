//! Subcommand implementations: resolve parameters, call the core library,
//! format the report.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde_json::Value;
use srdist_core::distortion::{
    beta_closed_curve, beta_numeric_curve, fit_geodesic_exponent, grushin_proof_chain, homogeneous_dimension,
    sharpness_search, verify_power_bound, wbar, wbar_taylor_bound, BoundGrid, Violation,
};
use srdist_core::flow::extremal;
use srdist_core::geodesy::{conjugate_time, cut_time_estimate, minimizing_geodesic, semiconvexity_probe, SolverOptions};
use srdist_core::measure::{
    ball_volume_exponent, bbl_check, bm_check, mcp_check, sample_set, GriddedFunction, InequalityReport, SetSpec,
};
use srdist_core::ode::Tolerances;
use srdist_core::transport::{cost_matrix, displacement_interpolation, interpolation_density_check, solve_ot, DiscreteMeasure};
use srdist_core::{ModelKind, ModelSpec};

use crate::args::*;
use crate::config::{load_config, ConfigFile, ModelRef};
use crate::output::{matrix, num, nums, sha256_hex, vector, Envelope, Obj};
use crate::{usage, CliError, UsageError, EXIT_OK, EXIT_VIOLATION};

/// A finished command: the report text, where it goes and the exit code.
pub struct Done {
    pub text: String,
    pub path: Option<String>,
    pub code: i32,
}

struct Ctx {
    model: ModelSpec,
    model_hash: String,
    seed: u64,
    format: Option<String>,
    command: &'static str,
}

type Res = Result<(String, i32), CliError>;

impl Ctx {
    /// Resolves `--format` against the formats a command supports; the
    /// first entry is the default.
    fn format(&self, allowed: &[&'static str]) -> Result<&'static str, CliError> {
        match &self.format {
            None => Ok(allowed[0]),
            Some(f) => allowed
                .iter()
                .find(|a| **a == f.as_str())
                .copied()
                .ok_or_else(|| usage(format!("{} does not support --format {f}", self.command))),
        }
    }

    fn report(&self, grid: String, result: Value) -> String {
        Envelope {
            command: self.command,
            model: self.model.name(),
            model_hash: &self.model_hash,
            seed: self.seed,
            grid,
        }
        .wrap(result)
    }

    fn point_or_origin(&self, v: Option<Vec<f64>>) -> Vec<f64> {
        v.unwrap_or_else(|| vec![0.0; self.model.dim()])
    }
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T, CliError> {
    v.ok_or_else(|| usage(format!("missing --{flag}")))
}

fn table<T: DeserializeOwned + Default>(file: &ConfigFile, name: &str) -> Result<T, CliError> {
    match file.commands.get(name) {
        None => Ok(T::default()),
        Some(v) => v
            .clone()
            .try_into()
            .map_err(|e| usage(format!("config table [{name}]: {e}"))),
    }
}

fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var("SRDIST_THREADS") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| usage(format!("SRDIST_THREADS = '{s}' is not a thread count"))),
        Err(_) => Ok(None),
    }
}

pub fn execute(cli: Cli) -> Result<Done, CliError> {
    let g = cli.global;
    let file = match &g.config {
        Some(p) => load_config(Path::new(p))?,
        None => ConfigFile::default(),
    };
    for (k, v) in &file.commands {
        check_table(k, v).map_err(UsageError)?;
    }
    let model_ref = match g.model {
        Some(s) => ModelRef::Name(s),
        None => file.model.clone().unwrap_or_else(|| ModelRef::Name("heisenberg".into())),
    };
    let model_cfg = model_ref.resolve()?;
    let model = model_cfg.build()?;
    let format = g.format.or(file.format.clone());
    if let Some(f) = &format {
        if f != "csv" && f != "json" {
            return Err(usage(format!("unknown format '{f}' (csv or json)")));
        }
    }
    let threads = match g.threads.or(file.threads) {
        Some(t) => Some(t),
        None => threads_from_env()?,
    };
    if threads == Some(0) {
        return Err(usage("thread count must be positive"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| usage(format!("thread pool: {e}")))?;
    let ctx = Ctx {
        model,
        model_hash: sha256_hex(&model_cfg.canonical()),
        seed: g.seed.or(file.seed).unwrap_or(0),
        format,
        command: cli.command.name(),
    };
    let path = g.out.or(file.out.clone());
    let (text, code) = pool.install(|| dispatch(&ctx, cli.command, &file))?;
    Ok(Done {
        text,
        path,
        code,
    })
}

fn dispatch(ctx: &Ctx, command: Command, file: &ConfigFile) -> Res {
    let name = ctx.command;
    match command {
        Command::Geodesic(a) => geodesic(ctx, a.merge(table(file, name)?)),
        Command::Distortion(a) => distortion(ctx, a.merge(table(file, name)?)),
        Command::Conjugate(a) => conjugate(ctx, a.merge(table(file, name)?)),
        Command::VerifyBound(a) => verify_bound(ctx, a.merge(table(file, name)?)),
        Command::Sharpness(a) => sharpness(ctx, a.merge(table(file, name)?)),
        Command::Wbar(a) => wbar_cmd(ctx, a.merge(table(file, name)?)),
        Command::ExponentFit(a) => exponent_fit(ctx, a.merge(table(file, name)?)),
        Command::Bm(a) => bm(ctx, a.merge(table(file, name)?)),
        Command::Mcp(a) => mcp(ctx, a.merge(table(file, name)?)),
        Command::Bbl(a) => bbl(ctx, a.merge(table(file, name)?)),
        Command::Ot(a) => ot(ctx, a.merge(table(file, name)?)),
        Command::InterpCheck(a) => interp_check(ctx, a.merge(table(file, name)?)),
        Command::BallExponent(a) => ball_exponent(ctx, a.merge(table(file, name)?)),
        Command::ProbeCut(a) => probe_cut(ctx, a.merge(table(file, name)?)),
        Command::Selftest(a) => {
            let f: SelftestArgs = table(file, name)?;
            let args = SelftestArgs {
                json: a.json || f.json,
                inject_tolerance: a.inject_tolerance,
            };
            Ok(crate::selftest::run(&args, ctx.seed))
        }
    }
}

fn verdict_code(pass: bool) -> i32 {
    if pass {
        EXIT_OK
    } else {
        EXIT_VIOLATION
    }
}

fn geodesic(ctx: &Ctx, a: GeodesicArgs) -> Res {
    let fmt = ctx.format(&["json", "csv"])?;
    let from = ctx.point_or_origin(a.from);
    let to = required(a.to, "to")?;
    let opts = SolverOptions {
        starts: a.starts.unwrap_or(SolverOptions::default().starts),
        seed: ctx.seed,
        ..SolverOptions::default()
    };
    let g = minimizing_geodesic(&ctx.model, &from, &to, &opts)?;
    let s = &g.solution;
    if fmt == "csv" {
        let n = a.samples.unwrap_or(101).max(2);
        let times: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let e = extremal(&ctx.model, &from, s.lambda.as_slice(), &times, Tolerances::default())?;
        return Ok((e.to_csv(&ctx.model), EXIT_OK));
    }
    let result = Obj::new()
        .set("from", nums(&from))
        .set("to", nums(&to))
        .set("lambda", vector(&s.lambda))
        .f("length", s.length)
        .f("residual", s.residual)
        .f("t_cut", s.t_cut)
        .set("multiple_minimizers", g.multiple_minimizers)
        .set("candidates", g.candidates)
        .build();
    Ok((ctx.report(format!("starts:{}", opts.starts), result), EXIT_OK))
}

fn distortion(ctx: &Ctx, a: DistortionArgs) -> Res {
    let fmt = ctx.format(&["csv", "json"])?;
    let x = ctx.point_or_origin(a.x);
    let lambda = required(a.lambda, "lambda")?;
    let ts = match a.t {
        Some(t) => t,
        None => {
            let n = a.steps.unwrap_or(20);
            if n == 0 {
                return Err(usage("--steps must be positive"));
            }
            (1..=n).map(|i| i as f64 / n as f64).collect()
        }
    };
    let closed_available = matches!(ctx.model.kind(), ModelKind::Heisenberg3 | ModelKind::Grushin2);
    let curve = match a.method.as_deref().unwrap_or("auto") {
        "closed" => beta_closed_curve(&ctx.model, &x, &lambda, &ts)?,
        "numeric" => beta_numeric_curve(&ctx.model, &x, &lambda, &ts)?,
        "auto" if closed_available => beta_closed_curve(&ctx.model, &x, &lambda, &ts)?,
        "auto" => beta_numeric_curve(&ctx.model, &x, &lambda, &ts)?,
        m => return Err(usage(format!("unknown method '{m}' (closed, numeric or auto)"))),
    };
    if fmt == "csv" {
        return Ok((curve.to_csv(), EXIT_OK));
    }
    let result = Obj::new()
        .set("x", vector(&curve.x))
        .set("lambda", vector(&curve.lambda))
        .set("method", curve.method.as_str())
        .set("t", nums(&curve.t))
        .set("beta", nums(&curve.beta))
        .build();
    Ok((ctx.report(format!("t:{}", ts.len()), result), EXIT_OK))
}

fn conjugate(ctx: &Ctx, a: ConjugateArgs) -> Res {
    ctx.format(&["json"])?;
    let x = ctx.point_or_origin(a.x);
    let lambda = required(a.lambda, "lambda")?;
    let horizon = a.horizon.unwrap_or(10.0);
    let tc = conjugate_time(&ctx.model, &x, &lambda, horizon)?;
    let cut = cut_time_estimate(&ctx.model, &x, &lambda).ok();
    let result = Obj::new()
        .set("x", nums(&x))
        .set("lambda", nums(&lambda))
        .f("horizon", horizon)
        .set("conjugate_time", tc.map(num).unwrap_or(Value::Null))
        .set("cut_time", cut.map(num).unwrap_or(Value::Null))
        .build();
    Ok((ctx.report(format!("uniform:1000 on (0,{horizon}]"), result), EXIT_OK))
}

fn parse_grid(model: &ModelSpec, spec: Option<&str>, delta: f64) -> Result<BoundGrid, CliError> {
    let default = match model.kind() {
        ModelKind::Heisenberg3 => "200x200",
        ModelKind::Grushin2 => "20x20x20x50",
        _ => "100x100",
    };
    let s = spec.unwrap_or(default);
    let dims: Vec<usize> = s
        .split('x')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("grid '{s}' is not of the form AxB or AxBxCxD")))?;
    if dims.contains(&0) {
        return Err(usage("grid sizes must be positive"));
    }
    match (model.kind(), dims.as_slice()) {
        (ModelKind::Heisenberg3, &[w, t]) => Ok(BoundGrid::Heisenberg { w, t, delta }),
        (ModelKind::Grushin2, &[x, u, v, t]) => Ok(BoundGrid::Grushin { x, u, v, t, delta }),
        (ModelKind::Grushin2 | ModelKind::HType | ModelKind::GenericFrame, &[covectors, t]) => {
            Ok(BoundGrid::Sampled { covectors, t, delta })
        }
        _ => Err(usage(format!("grid '{s}' does not fit model {}", model.name()))),
    }
}

fn violation(v: &Violation) -> Value {
    Obj::new()
        .set("x", vector(&v.x))
        .set("lambda", vector(&v.lambda))
        .f("t", v.t)
        .f("beta", v.beta)
        .f("bound", v.bound)
        .build()
}

fn verify_bound(ctx: &Ctx, a: VerifyBoundArgs) -> Res {
    ctx.format(&["json"])?;
    let n = required(a.exponent, "exponent")?;
    let delta = a.delta.unwrap_or(1e-3);
    if !(delta > 0.0 && delta < 1.0) {
        return Err(usage("--delta must lie in (0, 1)"));
    }
    let grid = parse_grid(&ctx.model, a.grid.as_deref(), delta)?;
    let r = verify_power_bound(&ctx.model, n, &grid, ctx.seed)?;
    let result = Obj::new()
        .f("exponent", r.exponent)
        .set("samples", r.samples)
        .f("min_ratio", r.min_ratio)
        .f("min_difference", r.min_difference)
        .set("violation_count", r.violation_count)
        .set("violations", Value::Array(r.violations.iter().map(violation).collect()))
        .set("pass", r.pass)
        .set("verdict", if r.pass { "no violation found" } else { "violated" })
        .build();
    Ok((ctx.report(r.grid.clone(), result), verdict_code(r.pass)))
}

fn sharpness(ctx: &Ctx, a: SharpnessArgs) -> Res {
    ctx.format(&["json"])?;
    let n = required(a.exponent, "exponent")?;
    let w = sharpness_search(&ctx.model, n)?;
    let result = Obj::new()
        .f("exponent", n)
        .set("found", w.is_some())
        .set("witness", w.as_ref().map(violation).unwrap_or(Value::Null))
        .build();
    let code = if w.is_some() { EXIT_VIOLATION } else { EXIT_OK };
    Ok((ctx.report("coarse-to-fine:6 levels".into(), result), code))
}

fn wbar_cmd(ctx: &Ctx, a: WbarArgs) -> Res {
    let fmt = ctx.format(&["csv", "json"])?;
    let n = a.samples.unwrap_or(10_000);
    if n == 0 {
        return Err(usage("--samples must be positive"));
    }
    let zs: Vec<f64> = (1..=n).map(|i| PI * i as f64 / (n + 1) as f64).collect();
    if fmt == "csv" {
        let mut s = String::from("z,wbar,taylor_bound\n");
        for &z in &zs {
            s.push_str(&format!(
                "{},{},{}\n",
                srdist_core::format_float(z),
                srdist_core::format_float(wbar(z)),
                srdist_core::format_float(wbar_taylor_bound(z))
            ));
        }
        return Ok((s, EXIT_OK));
    }
    let r = grushin_proof_chain(&zs)?;
    let result = Obj::new()
        .set("samples", r.samples)
        .f("min_wbar", r.min_wbar)
        .set("wbar_nonnegative", r.wbar_nonnegative)
        .f("min_w_amin", r.min_w_amin)
        .set("w_amin_nonnegative", r.w_amin_nonnegative)
        .f("identity_defect", r.identity_defect)
        .set("taylor_underestimates", r.taylor_underestimates)
        .f("taylor_root", r.taylor_root)
        .set("root_matches", r.root_matches)
        .set("pass", r.pass)
        .build();
    Ok((ctx.report(format!("uniform:{n} in (0,pi)"), result), verdict_code(r.pass)))
}

fn exponent_fit(ctx: &Ctx, a: ExponentFitArgs) -> Res {
    ctx.format(&["json"])?;
    let x = ctx.point_or_origin(a.x);
    let lambda = required(a.lambda, "lambda")?;
    let (lo, hi) = (a.t_min.unwrap_or(1e-3), a.t_max.unwrap_or(0.1));
    let (n, c) = fit_geodesic_exponent(&ctx.model, &x, &lambda, lo, hi)?;
    let result = Obj::new()
        .set("x", nums(&x))
        .set("lambda", nums(&lambda))
        .f("exponent", n)
        .f("constant", c)
        .build();
    Ok((ctx.report(format!("log-uniform:50 on [{lo},{hi}]"), result), EXIT_OK))
}

fn boxes(flat: &[f64], what: &str) -> Result<Vec<(f64, f64)>, CliError> {
    if flat.is_empty() || !flat.len().is_multiple_of(2) {
        return Err(usage(format!("--{what} needs lo1,hi1,lo2,hi2,...")));
    }
    let b: Vec<(f64, f64)> = flat.chunks(2).map(|c| (c[0], c[1])).collect();
    if b.iter().any(|(l, h)| !(h > l)) {
        return Err(usage(format!("--{what} has an empty side")));
    }
    Ok(b)
}

fn check_dim(model: &ModelSpec, len: usize, what: &str) -> Result<(), CliError> {
    if len != model.dim() {
        return Err(usage(format!("--{what} has {len} coordinates, model has dimension {}", model.dim())));
    }
    Ok(())
}

fn inequality(r: &InequalityReport) -> Value {
    let entries = r
        .entries
        .iter()
        .map(|e| {
            Obj::new()
                .f("t", e.t)
                .f("lhs", e.lhs)
                .f("rhs", e.rhs)
                .f("slack", e.slack)
                .set("verdict", e.verdict)
                .set("samples", e.samples)
                .f("h", e.h)
                .f("failure_fraction", e.failure_fraction)
                .build()
        })
        .collect();
    Obj::new()
        .f("exponent", r.exponent)
        .set("entries", Value::Array(entries))
        .set("pass", r.pass)
        .set("verdict", if r.pass { "no violation found" } else { "violated" })
        .build()
}

fn mc_grid(samples: usize, ts: &[f64], h: Option<f64>) -> String {
    let h = h.map(|h| h.to_string()).unwrap_or_else(|| "auto".into());
    format!("samples:{samples} t:{ts:?} h:{h}")
}

fn bm(ctx: &Ctx, a: BmArgs) -> Res {
    ctx.format(&["json"])?;
    let ab = boxes(&required(a.a, "a")?, "a")?;
    let bb = match a.b {
        Some(b) => boxes(&b, "b")?,
        None => ab.clone(),
    };
    check_dim(&ctx.model, ab.len(), "a")?;
    check_dim(&ctx.model, bb.len(), "b")?;
    let n = required(a.exponent, "exponent")?;
    let ts = a.t.unwrap_or_else(|| vec![0.25, 0.5, 0.75]);
    let samples = a.samples.unwrap_or(100_000);
    let sa = sample_set(&ctx.model, &SetSpec::Box(ab), samples, ctx.seed)?;
    let sb = sample_set(&ctx.model, &SetSpec::Box(bb), samples, ctx.seed.wrapping_add(1))?;
    let r = bm_check(&ctx.model, &sa, &sb, n, &ts, a.h, ctx.seed)?;
    Ok((ctx.report(mc_grid(samples, &ts, a.h), inequality(&r)), verdict_code(r.pass)))
}

fn mcp(ctx: &Ctx, a: McpArgs) -> Res {
    ctx.format(&["json"])?;
    let x = ctx.point_or_origin(a.x);
    let bb = boxes(&required(a.b, "b")?, "b")?;
    check_dim(&ctx.model, bb.len(), "b")?;
    let n = required(a.exponent, "exponent")?;
    let ts = a.t.unwrap_or_else(|| vec![0.25, 0.5, 0.75]);
    let samples = a.samples.unwrap_or(100_000);
    let sb = sample_set(&ctx.model, &SetSpec::Box(bb), samples, ctx.seed)?;
    let r = mcp_check(&ctx.model, &x, &sb, n, &ts, a.h, ctx.seed)?;
    Ok((ctx.report(mc_grid(samples, &ts, a.h), inequality(&r)), verdict_code(r.pass)))
}

/// Indicator of a box whose sides are whole multiples of `pitch`.
fn indicator(b: &[(f64, f64)], pitch: f64, what: &str) -> Result<GriddedFunction, CliError> {
    if !(pitch > 0.0) {
        return Err(usage("--pitch must be positive"));
    }
    let mut shape = Vec::with_capacity(b.len());
    for (l, h) in b {
        let cells = ((h - l) / pitch).round();
        if cells < 1.0 || ((cells * pitch) - (h - l)).abs() > 1e-9 * (1.0 + (h - l).abs()) {
            return Err(usage(format!("--{what} sides must be whole multiples of the pitch {pitch}")));
        }
        shape.push(cells as usize);
    }
    Ok(GriddedFunction::indicator(b.iter().map(|p| p.0).collect(), pitch, shape)?)
}

fn bbl(ctx: &Ctx, a: BblArgs) -> Res {
    ctx.format(&["json"])?;
    let fb = boxes(&required(a.f, "f")?, "f")?;
    let gb = match a.g {
        Some(g) => boxes(&g, "g")?,
        None => fb.clone(),
    };
    check_dim(&ctx.model, fb.len(), "f")?;
    check_dim(&ctx.model, gb.len(), "g")?;
    let pitch = a.pitch.unwrap_or(0.1);
    let f = indicator(&fb, pitch, "f")?;
    let g = indicator(&gb, pitch, "g")?;
    let t = a.t.unwrap_or(0.5);
    let p = a.p.unwrap_or(f64::INFINITY);
    let n = required(a.exponent, "exponent")?;
    let samples = a.samples.unwrap_or(100_000);
    let r = bbl_check(&ctx.model, &f, &g, t, p, n, samples, ctx.seed)?;
    let p_label = if p.is_finite() { Value::from(p) } else { Value::from(p.to_string()) };
    let result = Obj::new()
        .f("t", r.t)
        .set("p", p_label)
        .f("exponent", r.exponent)
        .f("integral_f", r.integral_f)
        .f("integral_g", r.integral_g)
        .f("integral_h", r.integral_h)
        .f("rhs", r.rhs)
        .f("slack", r.slack)
        .set("samples", r.samples)
        .f("h", r.h)
        .f("failure_fraction", r.failure_fraction)
        .set("verdict", r.verdict)
        .build();
    Ok((ctx.report(format!("pitch:{pitch} samples:{samples}"), result), verdict_code(r.verdict)))
}

/// Reads a measure CSV with header `q1..qn,weight`.
fn read_measure(path: &str, dim: usize) -> Result<DiscreteMeasure, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read '{path}': {e}")))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| usage(format!("'{path}' is empty")))?
        .split(',')
        .map(str::trim)
        .collect();
    let expected: Vec<String> = (1..=dim).map(|i| format!("q{i}")).chain(["weight".to_string()]).collect();
    if header != expected {
        return Err(usage(format!("'{path}': header must be {}", expected.join(","))));
    }
    let (mut support, mut weights) = (Vec::new(), Vec::new());
    for (k, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| usage(format!("'{path}' row {}: not a number", k + 1)))?;
        if row.len() != dim + 1 {
            return Err(usage(format!("'{path}' row {}: expected {} columns", k + 1, dim + 1)));
        }
        support.push(DVector::from_column_slice(&row[..dim]));
        weights.push(row[dim]);
    }
    Ok(DiscreteMeasure::new(support, weights)?)
}

fn ot(ctx: &Ctx, a: OtArgs) -> Res {
    let fmt = ctx.format(&["json", "csv"])?;
    let dim = ctx.model.dim();
    let mu0 = read_measure(&required(a.mu0, "mu0")?, dim)?;
    let mu1 = read_measure(&required(a.mu1, "mu1")?, dim)?;
    let cost = cost_matrix(&ctx.model, &mu0, &mu1)?;
    let plan = solve_ot(&cost, &mu0.weights, &mu1.weights)?;
    let interp = a
        .t
        .map(|t| displacement_interpolation(&ctx.model, &plan, &mu0, &mu1, t))
        .transpose()?;
    if fmt == "csv" {
        let i = interp.ok_or_else(|| usage("csv output of ot needs --t"))?;
        return Ok((i.measure.to_csv(), EXIT_OK));
    }
    let mut result = Obj::new()
        .f("cost", plan.cost)
        .f("w2", (2.0 * plan.cost).max(0.0).sqrt())
        .f("marginal_residual", plan.marginal_residual(&mu0.weights, &mu1.weights))
        .set("coupling", matrix(&plan.coupling));
    if let (Some(t), Some(i)) = (a.t, interp) {
        result = result.set(
            "interpolation",
            Obj::new()
                .f("t", t)
                .set("support", Value::Array(i.measure.support.iter().map(vector).collect()))
                .set("weights", nums(&i.measure.weights))
                .set("multiple_minimizers", i.multiple_minimizers)
                .build(),
        );
    }
    Ok((ctx.report(format!("support:{}x{}", mu0.len(), mu1.len()), result.build()), EXIT_OK))
}

fn interp_check(ctx: &Ctx, a: InterpCheckArgs) -> Res {
    ctx.format(&["json"])?;
    let b0 = boxes(&required(a.f0, "f0")?, "f0")?;
    let b1 = boxes(&required(a.f1, "f1")?, "f1")?;
    check_dim(&ctx.model, b0.len(), "f0")?;
    check_dim(&ctx.model, b1.len(), "f1")?;
    let pitch = a.pitch.unwrap_or(0.25);
    let f0 = indicator(&b0, pitch, "f0")?;
    let f1 = indicator(&b1, pitch, "f1")?;
    let n = required(a.exponent, "exponent")?;
    let r = interpolation_density_check(&ctx.model, &f0, &f1, a.t.unwrap_or(0.5), a.bandwidth, n)?;
    let result = Obj::new()
        .f("t", r.t)
        .f("exponent", r.exponent)
        .f("bandwidth", r.bandwidth)
        .set("checked_points", r.checked_points)
        .set("excluded", r.excluded)
        .f("min_slack", r.min_slack)
        .f("slack_factor", r.slack_factor)
        .set("verdict", r.verdict())
        .build();
    Ok((ctx.report(format!("pitch:{pitch}"), result), verdict_code(r.consistent)))
}

fn ball_exponent(ctx: &Ctx, a: BallExponentArgs) -> Res {
    ctx.format(&["json"])?;
    let x = ctx.point_or_origin(a.x);
    let radii = a.radii.unwrap_or_else(|| vec![0.05, 0.1, 0.2, 0.4]);
    let samples = a.samples.unwrap_or(100_000);
    let (e, vols) = ball_volume_exponent(&ctx.model, &x, &radii, samples, ctx.seed)?;
    let q = homogeneous_dimension(&ctx.model, &x).ok();
    let result = Obj::new()
        .set("x", nums(&x))
        .set("radii", nums(&radii))
        .set("volumes", nums(&vols))
        .f("exponent", e)
        .set("homogeneous_dimension", q.map(num).unwrap_or(Value::Null))
        .build();
    Ok((ctx.report(format!("samples:{samples} radii:{}", radii.len()), result), EXIT_OK))
}

fn probe_cut(ctx: &Ctx, a: ProbeCutArgs) -> Res {
    let fmt = ctx.format(&["json", "csv"])?;
    let y = ctx.point_or_origin(a.y);
    let x = required(a.x, "x")?;
    let radii = a.radii.unwrap_or_else(|| vec![1e-1, 1e-2, 1e-3]);
    let q = semiconvexity_probe(&ctx.model, &y, &x, &radii)?;
    if fmt == "csv" {
        let mut s = String::from("r,q\n");
        for (r, v) in &q {
            s.push_str(&format!("{},{}\n", srdist_core::format_float(*r), srdist_core::format_float(*v)));
        }
        return Ok((s, EXIT_OK));
    }
    let rows = q.iter().map(|(r, v)| Obj::new().f("r", *r).f("q", *v).build()).collect();
    let result = Obj::new()
        .set("y", nums(&y))
        .set("x", nums(&x))
        .set("quotients", Value::Array(rows))
        .build();
    Ok((ctx.report(format!("directions:64 radii:{}", radii.len()), result), EXIT_OK))
}
