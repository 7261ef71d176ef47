use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use flowvi_core::engine::MetricRow;
use flowvi_core::json::{format_f64, ser_value};
use flowvi_core::models::energy::grid_axis;

use crate::error::CliError;

pub const METRICS_HEADER: &str =
    "t,beta_t,free_energy,entropy_q0,neg_sum_logdet,neg_logp,wallclock_ms";
pub const DENSITY_HEADER: &str = "z1,z2,log_density";

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

pub fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Pretty JSON with every non-integer number at 17 significant digits.
pub fn json_string(value: &impl Serialize) -> Result<String, CliError> {
    let v = serde_json::to_value(value).map_err(|e| CliError::Internal(e.to_string()))?;
    let mut out = Vec::new();
    let mut ser =
        serde_json::Serializer::with_formatter(&mut out, serde_json::ser::PrettyFormatter::new());
    ser_value(&v, &mut ser).map_err(|e| CliError::Internal(e.to_string()))?;
    out.push(b'\n');
    String::from_utf8(out).map_err(|e| CliError::Internal(e.to_string()))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    write_text(path, &json_string(value)?)
}

/// Streams metric rows as they arrive.
pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<fs::File>,
}

impl MetricsWriter {
    pub fn create(path: PathBuf) -> Result<Self, CliError> {
        let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{METRICS_HEADER}").map_err(|e| io_err(&path, e))?;
        Ok(Self { path, out })
    }

    pub fn row(&mut self, r: &MetricRow) -> Result<(), CliError> {
        writeln!(
            self.out,
            "{},{},{},{},{},{},{}",
            r.t,
            format_f64(r.beta_t),
            format_f64(r.free_energy),
            format_f64(r.entropy_q0),
            format_f64(r.neg_sum_logdet),
            format_f64(r.neg_logp),
            r.wallclock_ms
        )
        .map_err(|e| io_err(&self.path, e))
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.out.flush().map_err(|e| io_err(&self.path, e))
    }
}

/// `z1,z2,log_density` rows over the `grid_n²` grid on `[-4, 4]²`, `z1`
/// varying slowest.
pub fn write_density(path: &Path, grid_n: usize, values: &[f64]) -> Result<(), CliError> {
    let axis = grid_axis::<f64>(grid_n);
    let mut s = String::with_capacity(values.len() * 72);
    s.push_str(DENSITY_HEADER);
    s.push('\n');
    for (i, &a) in axis.iter().enumerate() {
        for (j, &b) in axis.iter().enumerate() {
            let v = values[i * grid_n + j];
            s.push_str(&format!(
                "{},{},{}\n",
                format_f64(a),
                format_f64(b),
                format_f64(v)
            ));
        }
    }
    write_text(path, &s)
}
