use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TimeSeries;
use crate::error::{Error, Result};

/// Channel frequency class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Cfc {
    Cfc60,
    Cfc180,
    Cfc600,
    Cfc1000,
}

impl Cfc {
    pub fn class(self) -> u32 {
        match self {
            Cfc::Cfc60 => 60,
            Cfc::Cfc180 => 180,
            Cfc::Cfc600 => 600,
            Cfc::Cfc1000 => 1000,
        }
    }
}

impl TryFrom<u32> for Cfc {
    type Error = Error;

    fn try_from(v: u32) -> Result<Self> {
        match v {
            60 => Ok(Cfc::Cfc60),
            180 => Ok(Cfc::Cfc180),
            600 => Ok(Cfc::Cfc600),
            1000 => Ok(Cfc::Cfc1000),
            _ => Err(Error::InvalidParameter(format!(
                "unsupported CFC class {v} (use 60, 180, 600 or 1000)"
            ))),
        }
    }
}

impl From<Cfc> for u32 {
    fn from(c: Cfc) -> u32 {
        c.class()
    }
}

impl FromStr for Cfc {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v: u32 = s
            .trim()
            .trim_start_matches("CFC")
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("invalid CFC class '{s}'")))?;
        Cfc::try_from(v)
    }
}

impl fmt::Display for Cfc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CFC{}", self.class())
    }
}

/// Two-pole section `y[n] = a0 x[n] + a1 x[n-1] + a2 x[n-2] + b1 y[n-1] + b2 y[n-2]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterCoefficients {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
}

pub fn cfc_coefficients(cfc: Cfc, dt: f64) -> FilterCoefficients {
    let wd = 2.0 * PI * cfc.class() as f64 * 2.0775;
    let wa = (wd * dt / 2.0).tan();
    let d = 1.0 + SQRT_2 * wa + wa * wa;
    let a0 = wa * wa / d;
    FilterCoefficients {
        a0,
        a1: 2.0 * a0,
        a2: a0,
        b1: -2.0 * (wa * wa - 1.0) / d,
        b2: (-1.0 + SQRT_2 * wa - wa * wa) / d,
    }
}

/// Samples of mirror padding at each end: ten filter time constants.
pub fn cfc_pad_len(cfc: Cfc, dt: f64) -> usize {
    let tau = 1.0 / (2.0 * PI * 1.65 * cfc.class() as f64);
    ((10.0 * tau / dt).ceil() as usize).max(1)
}

fn run(c: &FilterCoefficients, x: &mut [f64]) {
    // Start from the steady state of the first sample.
    let (mut x1, mut x2) = (x[0], x[0]);
    let (mut y1, mut y2) = (x[0], x[0]);
    for v in x.iter_mut() {
        let x0 = *v;
        let y0 = c.a0 * x0 + c.a1 * x1 + c.a2 * x2 + c.b1 * y1 + c.b2 * y2;
        x2 = x1;
        x1 = x0;
        y2 = y1;
        y1 = y0;
        *v = y0;
    }
}

/// Phaseless channel-class low-pass: the two-pole section is run forward
/// and then backward over the signal with odd mirror padding at both ends.
pub fn cfc_filter(s: &TimeSeries, cfc: Cfc) -> Result<TimeSeries> {
    s.validate()?;
    let fs = 1.0 / s.dt;
    if fs < 10.0 * cfc.class() as f64 {
        log::warn!(
            "'{}' sampled at {fs:.1} Hz, below ten times the {cfc} class frequency",
            s.label
        );
    }
    let pad = cfc_pad_len(cfc, s.dt);
    let n = s.samples.len();
    if n < 2 * pad {
        return Err(Error::SignalTooShort {
            samples: n,
            required: 2 * pad,
        });
    }
    let x = &s.samples;
    let mut buf = Vec::with_capacity(n + 2 * pad);
    buf.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i.min(n - 1)]));
    buf.extend_from_slice(x);
    buf.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[(n - 1).saturating_sub(i)]));

    let c = cfc_coefficients(cfc, s.dt);
    run(&c, &mut buf);
    buf.reverse();
    run(&c, &mut buf);
    buf.reverse();
    Ok(s.with_samples(buf[pad..pad + n].to_vec()))
}
