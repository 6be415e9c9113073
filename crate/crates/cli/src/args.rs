//! Command-line surface.  Every command parameter can also be given in the
//! config file table of the same name; flags win over the file.

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

#[derive(Parser, Debug)]
#[command(name = "srdist", version, about = "Sub-Riemannian geodesics, distortion coefficients and interpolation inequalities")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Global {
    /// Model name (heisenberg, grushin, htype) or path to a model file.
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    pub out: Option<String>,
    /// csv or json.
    #[arg(long, global = true)]
    pub format: Option<String>,
    /// Worker threads (falls back to SRDIST_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

macro_rules! params {
    ($(#[$sm:meta])* $name:ident { $( $(#[$m:meta])* $field:ident : $ty:ty ),* $(,)? }) => {
        $(#[$sm])*
        #[derive(Args, Deserialize, Debug, Clone, Default)]
        #[serde(deny_unknown_fields, rename_all = "kebab-case")]
        pub struct $name {
            $( $(#[$m])* #[arg(long, allow_hyphen_values = true)] pub $field: Option<$ty>, )*
        }

        impl $name {
            /// Field-wise `self` (flags) over `file`.
            pub fn merge(self, file: Self) -> Self {
                Self { $( $field: self.$field.or(file.$field), )* }
            }
        }
    };
}

params!(GeodesicArgs {
    /// Start point, comma separated.
    #[arg(value_delimiter = ',')]
    from: Vec<f64>,
    #[arg(value_delimiter = ',')]
    to: Vec<f64>,
    /// Multi-start count of the boundary-value solver.
    starts: usize,
    /// Number of trajectory samples for CSV output.
    samples: usize,
});

params!(DistortionArgs {
    #[arg(value_delimiter = ',')]
    x: Vec<f64>,
    #[arg(value_delimiter = ',')]
    lambda: Vec<f64>,
    /// Explicit times in [0, 1].
    #[arg(value_delimiter = ',')]
    t: Vec<f64>,
    /// Uniform grid size on (0, 1] when no times are given.
    steps: usize,
    /// closed, numeric or auto.
    method: String,
});

params!(ConjugateArgs {
    #[arg(value_delimiter = ',')]
    x: Vec<f64>,
    #[arg(value_delimiter = ',')]
    lambda: Vec<f64>,
    horizon: f64,
});

params!(VerifyBoundArgs {
    exponent: f64,
    /// AxB (Heisenberg w x t, sampled covectors x t) or AxBxCxD (Grushin x0 x u0 x v0 x t).
    grid: String,
    /// Relative margin kept from the cut band.
    delta: f64,
});

params!(SharpnessArgs {
    exponent: f64,
});

params!(WbarArgs {
    /// Uniform samples of (0, pi).
    samples: usize,
});

params!(ExponentFitArgs {
    #[arg(value_delimiter = ',')]
    x: Vec<f64>,
    #[arg(value_delimiter = ',')]
    lambda: Vec<f64>,
    t_min: f64,
    t_max: f64,
});

params!(BmArgs {
    /// Box lo1,hi1,lo2,hi2,...
    #[arg(value_delimiter = ',')]
    a: Vec<f64>,
    #[arg(value_delimiter = ',')]
    b: Vec<f64>,
    exponent: f64,
    #[arg(value_delimiter = ',')]
    t: Vec<f64>,
    samples: usize,
    /// Grid pitch of the volume estimator.
    h: f64,
});

params!(McpArgs {
    #[arg(value_delimiter = ',')]
    x: Vec<f64>,
    #[arg(value_delimiter = ',')]
    b: Vec<f64>,
    exponent: f64,
    #[arg(value_delimiter = ',')]
    t: Vec<f64>,
    samples: usize,
    h: f64,
});

params!(BblArgs {
    /// Support box of the indicator f.
    #[arg(value_delimiter = ',')]
    f: Vec<f64>,
    #[arg(value_delimiter = ',')]
    g: Vec<f64>,
    pitch: f64,
    t: f64,
    /// p-mean exponent; inf and -inf accepted.
    p: f64,
    exponent: f64,
    samples: usize,
});

params!(OtArgs {
    /// CSV with columns q1..qn,weight.
    mu0: String,
    mu1: String,
    /// Emit the displacement interpolation at this time as CSV.
    t: f64,
});

params!(InterpCheckArgs {
    #[arg(value_delimiter = ',')]
    f0: Vec<f64>,
    #[arg(value_delimiter = ',')]
    f1: Vec<f64>,
    pitch: f64,
    t: f64,
    exponent: f64,
    bandwidth: f64,
});

params!(BallExponentArgs {
    #[arg(value_delimiter = ',')]
    x: Vec<f64>,
    #[arg(value_delimiter = ',')]
    radii: Vec<f64>,
    samples: usize,
});

params!(ProbeCutArgs {
    /// Base point of the squared distance.
    #[arg(value_delimiter = ',')]
    y: Vec<f64>,
    /// Probed point.
    #[arg(value_delimiter = ',')]
    x: Vec<f64>,
    #[arg(value_delimiter = ',')]
    radii: Vec<f64>,
});

#[derive(Args, Deserialize, Debug, Clone, Default)]
#[serde(deny_unknown_fields)]
pub struct SelftestArgs {
    /// Machine-readable summary.
    #[arg(long)]
    #[serde(default)]
    pub json: bool,
    /// Integrator tolerance override (failure-path testing).
    #[arg(long, hide = true)]
    #[serde(skip)]
    pub inject_tolerance: Option<f64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Minimizing geodesic between two points.
    Geodesic(GeodesicArgs),
    /// Distortion coefficient along a geodesic (CSV t,beta,method).
    Distortion(DistortionArgs),
    /// First conjugate time along a geodesic.
    Conjugate(ConjugateArgs),
    /// Check beta_t >= t^N on a parameter grid.
    VerifyBound(VerifyBoundArgs),
    /// Search for a violation of beta_t >= t^N'.
    Sharpness(SharpnessArgs),
    /// The Grushin auxiliary function and its Taylor bound (CSV z,wbar,taylor_bound).
    Wbar(WbarArgs),
    /// Fit beta_t ~ C t^N at small t.
    ExponentFit(ExponentFitArgs),
    /// Monte Carlo Brunn-Minkowski check.
    Bm(BmArgs),
    /// Monte Carlo measure contraction check.
    Mcp(McpArgs),
    /// Borell-Brascamp-Lieb check for box indicators.
    Bbl(BblArgs),
    /// Exact discrete optimal transport.
    Ot(OtArgs),
    /// Interpolation inequality on transported densities.
    InterpCheck(InterpCheckArgs),
    /// Volume growth exponent of small metric balls.
    BallExponent(BallExponentArgs),
    /// Semiconvexity quotient of the squared distance.
    ProbeCut(ProbeCutArgs),
    /// Fast consistency checks.
    Selftest(SelftestArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Geodesic(_) => "geodesic",
            Command::Distortion(_) => "distortion",
            Command::Conjugate(_) => "conjugate",
            Command::VerifyBound(_) => "verify-bound",
            Command::Sharpness(_) => "sharpness",
            Command::Wbar(_) => "wbar",
            Command::ExponentFit(_) => "exponent-fit",
            Command::Bm(_) => "bm",
            Command::Mcp(_) => "mcp",
            Command::Bbl(_) => "bbl",
            Command::Ot(_) => "ot",
            Command::InterpCheck(_) => "interp-check",
            Command::BallExponent(_) => "ball-exponent",
            Command::ProbeCut(_) => "probe-cut",
            Command::Selftest(_) => "selftest",
        }
    }
}

/// Rejects config tables that are not commands or that carry keys the
/// command does not know.
pub fn check_table(name: &str, v: &toml::Value) -> Result<(), String> {
    fn parse<T: serde::de::DeserializeOwned>(name: &str, v: &toml::Value) -> Result<(), String> {
        v.clone()
            .try_into::<T>()
            .map(|_| ())
            .map_err(|e| format!("config table [{name}]: {e}"))
    }
    match name {
        "geodesic" => parse::<GeodesicArgs>(name, v),
        "distortion" => parse::<DistortionArgs>(name, v),
        "conjugate" => parse::<ConjugateArgs>(name, v),
        "verify-bound" => parse::<VerifyBoundArgs>(name, v),
        "sharpness" => parse::<SharpnessArgs>(name, v),
        "wbar" => parse::<WbarArgs>(name, v),
        "exponent-fit" => parse::<ExponentFitArgs>(name, v),
        "bm" => parse::<BmArgs>(name, v),
        "mcp" => parse::<McpArgs>(name, v),
        "bbl" => parse::<BblArgs>(name, v),
        "ot" => parse::<OtArgs>(name, v),
        "interp-check" => parse::<InterpCheckArgs>(name, v),
        "ball-exponent" => parse::<BallExponentArgs>(name, v),
        "probe-cut" => parse::<ProbeCutArgs>(name, v),
        "selftest" => parse::<SelftestArgs>(name, v),
        other => Err(format!("unknown config key '{other}'")),
    }
}
