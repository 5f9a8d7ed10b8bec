//! Crash-signal evaluation: channel-class filtering and CORA rating.

mod cfc;
mod cora;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cfc::{cfc_coefficients, cfc_filter, cfc_pad_len, Cfc, FilterCoefficients};
pub use cora::{average_components, classify_biofidelity, cora_rate, Biofidelity, CoraParams, CoraResult};

/// Uniformly sampled channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    /// Time of the first sample (s).
    pub t0: f64,
    /// Sample interval (s).
    pub dt: f64,
    pub samples: Vec<f64>,
    pub label: String,
    pub unit: String,
}

impl TimeSeries {
    pub fn new(t0: f64, dt: f64, samples: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        let s = TimeSeries {
            t0,
            dt,
            samples,
            label: label.into(),
            unit: String::new(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) || !self.t0.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "time step must be positive, got {}",
                self.dt
            )));
        }
        if self.samples.len() < 2 {
            return Err(Error::SignalTooShort {
                samples: self.samples.len(),
                required: 2,
            });
        }
        if let Some(i) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sample {i} of '{}' is not finite",
                self.label
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.samples.len() - 1)
    }

    pub fn with_samples(&self, samples: Vec<f64>) -> TimeSeries {
        TimeSeries {
            samples,
            ..self.clone()
        }
    }

    /// Linear interpolation at time `t`; `None` outside the sampled span.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        let c = (t - self.t0) / self.dt;
        let last = (self.samples.len() - 1) as f64;
        // Allow for rounding of grid times at both ends.
        if !(c >= -1e-9 && c <= last + 1e-9) {
            return None;
        }
        let c = c.clamp(0.0, last);
        let i = (c.floor() as usize).min(self.samples.len() - 2);
        let f = c - i as f64;
        Some(self.samples[i] * (1.0 - f) + self.samples[i + 1] * f)
    }
}

/// Read a CSV with a `time_s` column followed by one or more channels.
pub fn read_series_csv(path: impl AsRef<Path>) -> Result<Vec<TimeSeries>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let headers = reader.headers().map_err(|e| csv_parse(&e))?.clone();
    if headers.len() < 2 || headers.get(0).map(str::trim) != Some("time_s") {
        return Err(Error::parse(0, "expected header 'time_s,<label>[,...]'"));
    }
    let mut times = Vec::new();
    let mut columns = vec![Vec::new(); headers.len() - 1];
    for record in reader.records() {
        let record = record.map_err(|e| csv_parse(&e))?;
        let offset = record.position().map_or(0, |p| p.byte());
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::parse(offset, format!("invalid number '{s}'")))
        };
        if record.len() != headers.len() {
            return Err(Error::parse(
                offset,
                format!("expected {} fields, found {}", headers.len(), record.len()),
            ));
        }
        times.push(parse(&record[0])?);
        for (c, field) in columns.iter_mut().zip(record.iter().skip(1)) {
            c.push(parse(field)?);
        }
    }
    if times.len() < 2 {
        return Err(Error::SignalTooShort {
            samples: times.len(),
            required: 2,
        });
    }
    let n = times.len();
    let dt = (times[n - 1] - times[0]) / (n - 1) as f64;
    for (i, w) in times.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > 1e-6 * dt.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidParameter(format!(
                "non-uniform sampling in {} at row {}",
                path.display(),
                i + 2
            )));
        }
    }
    headers
        .iter()
        .skip(1)
        .zip(columns)
        .map(|(label, samples)| TimeSeries::new(times[0], dt, samples, label.trim()))
        .collect()
}

fn csv_parse(e: &csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte());
    Error::parse(offset, e.to_string())
}

/// Write channels sharing one time base as `time_s,<label>...`.
pub fn write_series_csv(series: &[TimeSeries], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let first = series
        .first()
        .ok_or_else(|| Error::InvalidParameter("no channels to write".into()))?;
    if series
        .iter()
        .any(|s| s.dt != first.dt || s.t0 != first.t0 || s.len() != first.len())
    {
        return Err(Error::InvalidParameter("channels do not share a time base".into()));
    }
    let io = |e: csv::Error| Error::io(path, e.into());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header = vec!["time_s".to_string()];
    header.extend(series.iter().map(|s| s.label.clone()));
    w.write_record(&header).map_err(io)?;
    for i in 0..first.len() {
        let mut row = vec![first.time(i).to_string()];
        row.extend(series.iter().map(|s| s.samples[i].to_string()));
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
