//! JSON reports with 17-significant-digit floats and the common envelope.

use std::io;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::ser::Formatter;
use serde_json::{Map, Number, Value};
use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Compact JSON with every float written as `{:.16e}`.
struct RoundTrip;

impl Formatter for RoundTrip {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        write!(w, "{v:.16e}")
    }
}

pub fn to_string(v: &Value) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, RoundTrip);
    v.serialize(&mut ser).expect("serializing a Value cannot fail");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

/// Non-finite values become `null`.
pub fn num(v: f64) -> Value {
    Number::from_f64(v).map(Value::Number).unwrap_or(Value::Null)
}

pub fn nums(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|x| num(*x)).collect())
}

pub fn vector(v: &DVector<f64>) -> Value {
    nums(v.as_slice())
}

/// Row-major nested arrays.
pub fn matrix(m: &DMatrix<f64>) -> Value {
    Value::Array((0..m.nrows()).map(|i| nums(&m.row(i).iter().copied().collect::<Vec<_>>())).collect())
}

/// Object builder keeping insertion order.
#[derive(Default)]
pub struct Obj(Map<String, Value>);

impl Obj {
    pub fn new() -> Self {
        Obj(Map::new())
    }

    pub fn set(mut self, k: &str, v: impl Into<Value>) -> Self {
        self.0.insert(k.to_string(), v.into());
        self
    }

    pub fn f(self, k: &str, v: f64) -> Self {
        self.set(k, num(v))
    }

    pub fn build(self) -> Value {
        Value::Object(self.0)
    }
}

pub fn sha256_hex(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

/// Metadata embedded in every JSON report.
pub struct Envelope<'a> {
    pub command: &'a str,
    pub model: &'a str,
    pub model_hash: &'a str,
    pub seed: u64,
    pub grid: String,
}

impl Envelope<'_> {
    pub fn wrap(&self, result: Value) -> String {
        let v = Obj::new()
            .set("tool", "srdist")
            .set("version", VERSION)
            .set("command", self.command)
            .set("model", self.model)
            .set("model_hash", self.model_hash)
            .set("seed", self.seed)
            .set("grid", self.grid.clone())
            .set("result", result)
            .build();
        to_string(&v) + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        let v = Obj::new().f("a", 0.1).f("b", f64::NAN).set("c", 3u64).build();
        let s = to_string(&v);
        assert_eq!(s, r#"{"a":1.0000000000000001e-1,"b":null,"c":3}"#);
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["a"].as_f64().unwrap(), 0.1);
    }
}
