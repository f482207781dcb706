//! Result and training-log CSV files.
//!
//! Both start with a `# ...` schema line, followed by an ordinary CSV header.

use std::path::Path;

use isac_core::objective::PenaltyBreakdown;
use isac_core::training::Metrics;
use serde::{Deserialize, Serialize};

use crate::config::{Method, SweepAxis};
use crate::error::{io_err, SimError, SimResult};

pub const RESULTS_SCHEMA: &str = "# isac-results schema=1";
pub const TRAIN_LOG_SCHEMA: &str = "# isac-train-log schema=1";

pub const RESULT_COLUMNS: [&str; 13] = [
    "seed",
    "axis_name",
    "axis_value",
    "method",
    "mean_sum_rate",
    "mean_crlb_theta",
    "sqrt_crlb_theta",
    "mean_crlb_dist",
    "sqrt_crlb_dist",
    "violation_rate_theta",
    "violation_rate_dist",
    "mean_power_w",
    "train_seconds",
];

/// One method evaluated at one sweep point for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub seed: u64,
    pub axis_name: String,
    pub axis_value: f64,
    pub method: String,
    pub mean_sum_rate: f64,
    pub mean_crlb_theta: f64,
    pub sqrt_crlb_theta: f64,
    pub mean_crlb_dist: f64,
    pub sqrt_crlb_dist: f64,
    pub violation_rate_theta: f64,
    pub violation_rate_dist: f64,
    pub mean_power_w: f64,
    pub train_seconds: f64,
}

impl ResultRow {
    pub fn new(seed: u64, axis: SweepAxis, axis_value: f64, method: Method, m: &Metrics, train_seconds: f64) -> Self {
        Self {
            seed,
            axis_name: axis.as_str().to_string(),
            axis_value,
            method: method.as_str().to_string(),
            mean_sum_rate: m.mean_sum_rate,
            mean_crlb_theta: m.mean_crlb_theta,
            sqrt_crlb_theta: m.sqrt_crlb_theta,
            mean_crlb_dist: m.mean_crlb_dist,
            sqrt_crlb_dist: m.sqrt_crlb_dist,
            violation_rate_theta: m.violation_rate_theta,
            violation_rate_dist: m.violation_rate_dist,
            mean_power_w: m.mean_power_w,
            train_seconds,
        }
    }

    pub fn method(&self) -> Option<Method> {
        Method::parse(&self.method)
    }

    /// Checks the row invariants; the message names the first violated one.
    pub fn validate(&self) -> Result<(), String> {
        if SweepAxis::parse(&self.axis_name).is_none() {
            return Err(format!("unknown axis {:?}", self.axis_name));
        }
        if self.method().is_none() {
            return Err(format!("unknown method {:?}", self.method));
        }
        let values = [
            ("axis_value", self.axis_value),
            ("mean_sum_rate", self.mean_sum_rate),
            ("mean_crlb_theta", self.mean_crlb_theta),
            ("sqrt_crlb_theta", self.sqrt_crlb_theta),
            ("mean_crlb_dist", self.mean_crlb_dist),
            ("sqrt_crlb_dist", self.sqrt_crlb_dist),
            ("violation_rate_theta", self.violation_rate_theta),
            ("violation_rate_dist", self.violation_rate_dist),
            ("mean_power_w", self.mean_power_w),
            ("train_seconds", self.train_seconds),
        ];
        for (name, v) in values {
            if !v.is_finite() {
                return Err(format!("{name} is not finite"));
            }
            if name != "axis_value" && v < 0.0 {
                return Err(format!("{name} = {v} is negative"));
            }
        }
        for (name, v) in [
            ("violation_rate_theta", self.violation_rate_theta),
            ("violation_rate_dist", self.violation_rate_dist),
        ] {
            if v > 1.0 {
                return Err(format!("{name} = {v} exceeds 1"));
            }
        }
        for (name, mean, root) in [
            ("sqrt_crlb_theta", self.mean_crlb_theta, self.sqrt_crlb_theta),
            ("sqrt_crlb_dist", self.mean_crlb_dist, self.sqrt_crlb_dist),
        ] {
            if (root - mean.sqrt()).abs() > 1e-12 * root.max(1.0) {
                return Err(format!("{name} = {root} but sqrt of the mean is {}", mean.sqrt()));
            }
        }
        Ok(())
    }
}

/// Training objective after each epoch; epoch 0 is the initial model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub seed: u64,
    pub axis_name: String,
    pub axis_value: f64,
    pub method: String,
    pub epoch: usize,
    pub cost: f64,
    pub sum_rate: f64,
    pub angle_penalty: f64,
    pub dist_penalty: f64,
    pub power_penalty: f64,
    pub mean_crlb_theta: f64,
    pub mean_crlb_dist: f64,
    pub mean_power_w: f64,
    pub seconds: f64,
}

impl TrainLogRow {
    pub fn new(
        seed: u64,
        axis: SweepAxis,
        axis_value: f64,
        method: Method,
        epoch: usize,
        b: &PenaltyBreakdown,
        seconds: f64,
    ) -> Self {
        Self {
            seed,
            axis_name: axis.as_str().to_string(),
            axis_value,
            method: method.as_str().to_string(),
            epoch,
            cost: -b.total,
            sum_rate: b.sum_rate_term,
            angle_penalty: b.angle_penalty,
            dist_penalty: b.dist_penalty,
            power_penalty: b.power_penalty,
            mean_crlb_theta: b.mean_crlb_angle,
            mean_crlb_dist: b.mean_crlb_dist,
            mean_power_w: b.power_used_w,
            seconds,
        }
    }
}

fn write_csv<T: Serialize>(schema: &str, rows: &[T]) -> SimResult<String> {
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| SimError::Schema(e.to_string()))?;
    }
    let body = w.into_inner().map_err(|e| SimError::Schema(e.to_string()))?;
    let mut out = String::with_capacity(schema.len() + 1 + body.len());
    out.push_str(schema);
    out.push('\n');
    out.push_str(std::str::from_utf8(&body).expect("csv output is utf-8"));
    Ok(out)
}

pub fn results_to_csv(rows: &[ResultRow]) -> SimResult<String> {
    if rows.is_empty() {
        let mut s = format!("{RESULTS_SCHEMA}\n");
        s.push_str(&RESULT_COLUMNS.join(","));
        s.push('\n');
        return Ok(s);
    }
    write_csv(RESULTS_SCHEMA, rows)
}

pub fn train_log_to_csv(rows: &[TrainLogRow]) -> SimResult<String> {
    write_csv(TRAIN_LOG_SCHEMA, rows)
}

/// Parses and validates a results file.
pub fn parse_results(text: &str) -> SimResult<Vec<ResultRow>> {
    let first = text.lines().next().unwrap_or("");
    if first != RESULTS_SCHEMA {
        return Err(SimError::Schema(format!(
            "expected schema line {RESULTS_SCHEMA:?}, found {first:?}"
        )));
    }
    let body = &text[first.len()..].trim_start_matches(['\r', '\n']);
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let headers = r.headers().map_err(|e| SimError::Schema(e.to_string()))?.clone();
    let missing: Vec<&str> = RESULT_COLUMNS
        .iter()
        .copied()
        .filter(|c| !headers.iter().any(|h| h == *c))
        .collect();
    if !missing.is_empty() {
        return Err(SimError::Schema(format!("missing columns: {}", missing.join(", "))));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize::<ResultRow>().enumerate() {
        let row = rec.map_err(|e| SimError::Schema(format!("row {}: {e}", i + 1)))?;
        row.validate()
            .map_err(|e| SimError::Schema(format!("row {}: {e}", i + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_results(path: &Path) -> SimResult<Vec<ResultRow>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_results(&text).map_err(|e| match e {
        SimError::Schema(m) => SimError::Schema(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_file(path: &Path, contents: &str) -> SimResult<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
    }
    std::fs::write(path, contents).map_err(io_err(path))
}
