//! Model descriptions and TOML run configurations.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use srdist_core::models::{complex_structure, HTypeParams};
use srdist_core::poly::Polynomial;
use srdist_core::ModelSpec;

use crate::UsageError;

/// One monomial `coef * q1^e1 * ... * qn^en`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    pub coef: f64,
    pub exps: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HTypeConfig {
    pub k: usize,
    /// One row-major `k x k` matrix per second-layer direction.
    #[serde(rename = "J")]
    pub j: Vec<Vec<f64>>,
    /// Row-major `k x k`.
    #[serde(rename = "S")]
    pub s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenericConfig {
    /// `fields[i][j]` is the `j`-th coordinate of the `i`-th vector field.
    pub fields: Vec<Vec<Vec<TermConfig>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<Vec<TermConfig>>,
}

/// Model file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub htype: Option<HTypeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generic: Option<GenericConfig>,
}

impl ModelConfig {
    pub fn named(kind: &str) -> Self {
        ModelConfig {
            kind: kind.to_string(),
            dim: None,
            rank: None,
            htype: None,
            generic: None,
        }
    }

    /// Default H-type group: `k = 4`, `n = 5`, one complex structure and
    /// `S = I`.
    fn default_htype() -> HTypeConfig {
        let j = complex_structure(4);
        HTypeConfig {
            k: 4,
            j: vec![row_major(&j)],
            s: row_major(&DMatrix::identity(4, 4)),
        }
    }

    pub fn build(&self) -> Result<ModelSpec, UsageError> {
        let spec = match self.kind.as_str() {
            "heisenberg" => ModelSpec::heisenberg(),
            "grushin" => ModelSpec::grushin(),
            "htype" => {
                let h = self.htype.clone().unwrap_or_else(Self::default_htype);
                let k = h.k;
                let n = self.dim.unwrap_or(k + h.j.len());
                let mat = |v: &[f64], what: &str| -> Result<DMatrix<f64>, UsageError> {
                    if v.len() != k * k {
                        return Err(UsageError(format!("{what} needs {} entries, got {}", k * k, v.len())));
                    }
                    Ok(DMatrix::from_row_slice(k, k, v))
                };
                let j = h.j.iter().map(|v| mat(v, "J")).collect::<Result<Vec<_>, _>>()?;
                let s = mat(&h.s, "S")?;
                ModelSpec::htype(HTypeParams { n, k, j, s }).map_err(|e| UsageError(e.to_string()))?
            }
            "generic" => {
                let g = self
                    .generic
                    .as_ref()
                    .ok_or_else(|| UsageError("generic model needs a [generic] table".into()))?;
                let dim = self
                    .dim
                    .ok_or_else(|| UsageError("generic model needs dim".into()))?;
                let poly = |terms: &[TermConfig]| {
                    let t: Vec<(f64, Vec<u32>)> = terms.iter().map(|t| (t.coef, t.exps.clone())).collect();
                    if t.is_empty() {
                        Ok(Polynomial::zero(dim))
                    } else {
                        Polynomial::from_terms(dim, &t).map_err(|e| UsageError(e.to_string()))
                    }
                };
                let fields = g
                    .fields
                    .iter()
                    .map(|f| f.iter().map(|c| poly(c)).collect::<Result<Vec<_>, _>>())
                    .collect::<Result<Vec<_>, _>>()?;
                let density = g.density.as_deref().map(poly).transpose()?;
                ModelSpec::generic(dim, fields, density).map_err(|e| UsageError(e.to_string()))?
            }
            other => return Err(UsageError(format!("unknown model kind '{other}'"))),
        };
        if let Some(d) = self.dim {
            if d != spec.dim() {
                return Err(UsageError(format!("dim = {d} but the model has dimension {}", spec.dim())));
            }
        }
        if let Some(r) = self.rank {
            if r != spec.rank() {
                return Err(UsageError(format!("rank = {r} but the model has rank {}", spec.rank())));
            }
        }
        Ok(spec)
    }

    /// Canonical description used for the model hash.
    pub fn canonical(&self) -> String {
        let mut c = self.clone();
        if c.kind == "htype" && c.htype.is_none() {
            c.htype = Some(Self::default_htype());
        }
        crate::output::to_string(&serde_json::to_value(&c).expect("model config serializes"))
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect()
}

/// A model given by name, by inline table, or by file path.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Name(String),
    Inline(ModelConfig),
}

impl ModelRef {
    pub fn resolve(&self) -> Result<ModelConfig, UsageError> {
        match self {
            ModelRef::Inline(c) => Ok(c.clone()),
            ModelRef::Name(s) => match s.as_str() {
                "heisenberg" | "grushin" | "htype" => Ok(ModelConfig::named(s)),
                path => load_model_file(Path::new(path)),
            },
        }
    }
}

pub fn load_model_file(path: &Path) -> Result<ModelConfig, UsageError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read model '{}': {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| UsageError(format!("model file '{}': {e}", path.display())))
}

/// Top level of a run configuration file.  Command parameters live in a
/// table named after the command; any other key is rejected when the
/// tables are checked against the command list.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct ConfigFile {
    pub model: Option<ModelRef>,
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub format: Option<String>,
    pub threads: Option<usize>,
    #[serde(flatten)]
    pub commands: toml::Table,
}

pub fn load_config(path: &Path) -> Result<ConfigFile, UsageError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read config '{}': {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| UsageError(format!("config '{}': {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn htype_file_round_trip() {
        let text = r#"
kind = "htype"
dim = 3
rank = 2
[htype]
k = 2
J = [[0.0, 2.0, -2.0, 0.0]]
S = [2.0, 0.0, 0.0, 2.0]
"#;
        let c: ModelConfig = toml::from_str(text).unwrap();
        let m = c.build().unwrap();
        assert_eq!((m.dim(), m.rank()), (3, 2));
        let bad = text.replace("S = [2.0, 0.0, 0.0, 2.0]", "S = [1.0, 0.0, 0.0, 1.0]");
        assert!(toml::from_str::<ModelConfig>(&bad).unwrap().build().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ModelConfig>("kind = \"grushin\"\ncolour = 1").is_err());
    }

    #[test]
    fn generic_plane() {
        let text = r#"
kind = "generic"
dim = 2
[generic]
fields = [[[{coef = 1.0, exps = [0, 0]}], []], [[], [{coef = 1.0, exps = [0, 0]}]]]
"#;
        let m = toml::from_str::<ModelConfig>(text).unwrap().build().unwrap();
        assert_eq!(m.rank(), 2);
    }
}
