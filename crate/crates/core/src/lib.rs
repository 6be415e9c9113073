//! Numerical sub-Riemannian geometry: geodesics, Jacobi matrices,
//! distortion coefficients and the interpolation inequalities built on them,
//! for the Heisenberg group, the Grushin plane and generalized H-type groups.

pub mod distortion;
pub mod error;
pub mod flow;
pub mod geodesy;
pub mod measure;
pub mod models;
pub mod ode;
pub mod poly;
pub mod special;
pub mod transport;

pub use error::{Error, Result};
pub use models::{Covector, ModelKind, ModelSpec, Point};

/// Round-trip text form of a float: 17 significant digits in scientific
/// notation.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}
