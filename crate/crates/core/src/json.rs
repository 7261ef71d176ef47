//! JSON helpers: floats are written with 17 significant digits.

use serde::ser::{Error as _, SerializeMap, SerializeSeq};
use serde::{Serialize, Serializer};
use serde_json::value::RawValue;
use serde_json::Value;

pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn raw(x: f64) -> Result<Box<RawValue>, String> {
    if !x.is_finite() {
        return Err(format!("cannot serialize non-finite float {x}"));
    }
    RawValue::from_string(format_f64(x)).map_err(|e| e.to_string())
}

pub fn ser_f64<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    raw(*x).map_err(S::Error::custom)?.serialize(s)
}

pub fn ser_f64_slice<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(xs.len()))?;
    for &x in xs {
        seq.serialize_element(&raw(x).map_err(S::Error::custom)?)?;
    }
    seq.end()
}

pub fn ser_f64_vec<S: Serializer>(xs: &Vec<f64>, s: S) -> Result<S::Ok, S::Error> {
    ser_f64_slice(xs, s)
}

pub fn ser_opt_f64<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match x {
        Some(v) => ser_f64(v, s),
        None => s.serialize_none(),
    }
}

/// Any JSON value, with every non-integer number written like [`ser_f64`].
pub fn ser_value<S: Serializer>(v: &Value, s: S) -> Result<S::Ok, S::Error> {
    Exact(v).serialize(s)
}

struct Exact<'a>(&'a Value);

impl Serialize for Exact<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            Value::Number(n) if n.is_f64() => ser_f64(&n.as_f64().expect("f64 number"), s),
            Value::Array(items) => {
                let mut seq = s.serialize_seq(Some(items.len()))?;
                for item in items {
                    seq.serialize_element(&Exact(item))?;
                }
                seq.end()
            }
            Value::Object(map) => {
                let mut m = s.serialize_map(Some(map.len()))?;
                for (k, item) in map {
                    m.serialize_entry(k, &Exact(item))?;
                }
                m.end()
            }
            other => other.serialize(s),
        }
    }
}
