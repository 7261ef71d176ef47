//! Binary matrix files: one JSON header line `{"n", "d", "dtype"}` followed
//! by `n × d` little-endian values, row-major.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Rng;
use crate::models::density::{squeeze_unit, Likelihood};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    U8,
    F64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    n: usize,
    d: usize,
    dtype: DType,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    dtype: DType,
    values: Vec<f64>,
}

impl Dataset {
    pub fn new(n: usize, d: usize, dtype: DType, values: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Data(format!(
                "dataset must be non-empty, got {n}x{d}"
            )));
        }
        if values.len() != n * d {
            return Err(Error::Data(format!(
                "expected {} values, got {}",
                n * d,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value {v}")));
        }
        if dtype == DType::U8 {
            if let Some(v) = values
                .iter()
                .find(|&&v| !(0.0..=255.0).contains(&v) || v.fract() != 0.0)
            {
                return Err(Error::Data(format!("{v} is not representable as u8")));
            }
        }
        Ok(Self {
            n,
            d,
            dtype,
            values,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn read_from(mut r: impl BufRead) -> Result<Self> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: Header = serde_json::from_str(line.trim_end())
            .map_err(|e| Error::Data(format!("bad header line: {e}")))?;
        let width = match header.dtype {
            DType::U8 => 1,
            DType::F64 => 8,
        };
        let count = header
            .n
            .checked_mul(header.d)
            .ok_or_else(|| Error::Data("header size overflows".into()))?;
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() != count * width {
            return Err(Error::Data(format!(
                "header promises {count} {:?} values ({} bytes), body has {} bytes",
                header.dtype,
                count * width,
                body.len()
            )));
        }
        let values = match header.dtype {
            DType::U8 => body.iter().map(|&b| f64::from(b)).collect(),
            DType::F64 => body
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect(),
        };
        Self::new(header.n, header.d, header.dtype, values)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(BufReader::new(f))
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = Header {
            n: self.n,
            d: self.d,
            dtype: self.dtype,
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        match self.dtype {
            DType::U8 => {
                let bytes: Vec<u8> = self.values.iter().map(|&v| v as u8).collect();
                w.write_all(&bytes)?;
            }
            DType::F64 => {
                for v in &self.values {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    /// Checks the values against `likelihood` and maps them into its support:
    /// Bernoulli needs `{0, 1}`; logit-normal rescales `[0, 1]` (or `u8`
    /// intensities divided by 255) into `[ε, 1 - ε]`.
    pub fn prepare(&self, likelihood: Likelihood) -> Result<Self> {
        let values: Vec<f64> = match likelihood {
            Likelihood::Bernoulli => {
                if let Some(v) = self.values.iter().find(|&&v| v != 0.0 && v != 1.0) {
                    return Err(Error::Data(format!(
                        "Bernoulli data must be 0/1, found {v}"
                    )));
                }
                self.values.clone()
            }
            Likelihood::LogitNormal => {
                let scale = match self.dtype {
                    DType::U8 if self.values.iter().any(|&v| v > 1.0) => 255.0,
                    _ => 1.0,
                };
                let mut out = Vec::with_capacity(self.values.len());
                for &v in &self.values {
                    let u = v / scale;
                    if !(0.0..=1.0).contains(&u) {
                        return Err(Error::Data(format!(
                            "logit-normal data must lie in [0, 1], found {v}"
                        )));
                    }
                    out.push(squeeze_unit(u));
                }
                out
            }
        };
        Ok(Self {
            n: self.n,
            d: self.d,
            dtype: DType::F64,
            values,
        })
    }

    /// `n` binary `side × side` images, each the union of random horizontal
    /// and vertical bars (each bar present with probability ¼, at least one
    /// bar per image).
    pub fn synthetic_bars(n: usize, side: usize, rng: &mut Rng) -> Result<Self> {
        if n == 0 || side == 0 {
            return Err(Error::InvalidArgument("need n >= 1 and side >= 1".into()));
        }
        let mut values = Vec::with_capacity(n * side * side);
        for _ in 0..n {
            let (rows, cols) = loop {
                let rows: Vec<bool> = (0..side).map(|_| rng.below(4) == 0).collect();
                let cols: Vec<bool> = (0..side).map(|_| rng.below(4) == 0).collect();
                if rows.iter().chain(&cols).any(|&b| b) {
                    break (rows, cols);
                }
            };
            for &r in &rows {
                for &c in &cols {
                    values.push(if r || c { 1.0 } else { 0.0 });
                }
            }
        }
        Self::new(n, side * side, DType::U8, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_both_dtypes() {
        let a = Dataset::new(2, 3, DType::U8, vec![0.0, 1.0, 255.0, 7.0, 0.0, 1.0]).unwrap();
        let b = Dataset::new(2, 2, DType::F64, vec![0.1, -2.5, 1e-300, 3.0]).unwrap();
        for ds in [a, b] {
            let mut buf = Vec::new();
            ds.write_to(&mut buf).unwrap();
            assert_eq!(Dataset::read_from(&buf[..]).unwrap(), ds);
        }
    }

    #[test]
    fn malformed_inputs() {
        assert!(Dataset::read_from(&b"not json\n"[..]).is_err());
        assert!(
            Dataset::read_from(&b"{\"n\":2,\"d\":2,\"dtype\":\"u8\"}\n\x00\x01\x00"[..]).is_err()
        );
        assert!(
            Dataset::read_from(&b"{\"n\":1,\"d\":2,\"dtype\":\"u8\"}\n\x00\x01\x00"[..]).is_err()
        );
        assert!(Dataset::read_from(&b"{\"n\":1,\"d\":1,\"dtype\":\"i32\"}\n\x00"[..]).is_err());
        assert!(Dataset::read_from(&b"{\"n\":0,\"d\":1,\"dtype\":\"u8\"}\n"[..]).is_err());
    }

    #[test]
    fn bars_are_binary_and_deterministic() {
        let a = Dataset::synthetic_bars(50, 8, &mut Rng::new(3)).unwrap();
        let b = Dataset::synthetic_bars(50, 8, &mut Rng::new(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.d(), 64);
        assert!(a.values().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!((0..50).all(|i| a.row(i).contains(&1.0)));
        assert!(a.prepare(Likelihood::Bernoulli).is_ok());
    }

    #[test]
    fn prepare_checks_support() {
        let grey = Dataset::new(1, 2, DType::F64, vec![0.5, 0.25]).unwrap();
        assert!(grey.prepare(Likelihood::Bernoulli).is_err());
        let p = grey.prepare(Likelihood::LogitNormal).unwrap();
        assert!(p.values().iter().all(|&v| v > 0.0 && v < 1.0));
        let bytes = Dataset::new(1, 2, DType::U8, vec![0.0, 255.0]).unwrap();
        let q = bytes.prepare(Likelihood::LogitNormal).unwrap();
        assert_eq!(q.values(), &[1e-4, 1.0 - 1e-4]);
    }
}
