use std::fmt;

use serde::{Deserialize, Serialize};

use super::TimeSeries;
use crate::error::{Error, Result};

/// Rating parameters. Defaults follow the CORA 4.0.4 user manual.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoraParams {
    /// Inner corridor half-width, fraction of the reference peak.
    pub a_0: f64,
    /// Outer corridor half-width, fraction of the reference peak.
    pub b_0: f64,
    /// Corridor transition exponent.
    pub k: f64,
    /// Interval start: first sample reaching this fraction of the peak.
    pub a_eval: f64,
    /// Interval end: last sample reaching this fraction of the peak.
    pub b_eval: f64,
    /// Shift (fraction of interval) still rated as fully in phase.
    pub d_min: f64,
    /// Largest shift searched; rated zero in phase.
    pub d_max: f64,
    pub w_corridor: f64,
    pub w_phase: f64,
    pub w_size: f64,
    pub w_shape: f64,
}

impl Default for CoraParams {
    fn default() -> Self {
        CoraParams {
            a_0: 0.05,
            b_0: 0.5,
            k: 2.0,
            a_eval: 0.03,
            b_eval: 0.075,
            d_min: 0.01,
            d_max: 0.12,
            w_corridor: 0.5,
            w_phase: 1.0 / 6.0,
            w_size: 1.0 / 6.0,
            w_shape: 1.0 / 6.0,
        }
    }
}

impl CoraParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("CORA parameters: {m}")));
        let all = [
            self.a_0,
            self.b_0,
            self.k,
            self.a_eval,
            self.b_eval,
            self.d_min,
            self.d_max,
            self.w_corridor,
            self.w_phase,
            self.w_size,
            self.w_shape,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("all values must be finite");
        }
        if !(0.0 < self.a_0 && self.a_0 < self.b_0) {
            return bad("need 0 < a_0 < b_0");
        }
        if self.k <= 0.0 {
            return bad("k must be positive");
        }
        if !(0.0..1.0).contains(&self.a_eval) || !(0.0..1.0).contains(&self.b_eval) {
            return bad("a_eval and b_eval must lie in [0, 1)");
        }
        if !(0.0 <= self.d_min && self.d_min < self.d_max && self.d_max < 1.0) {
            return bad("need 0 <= d_min < d_max < 1");
        }
        let w = [self.w_corridor, self.w_phase, self.w_size, self.w_shape];
        if w.iter().any(|&x| x < 0.0) {
            return bad("weights must be non-negative");
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("weights must sum to 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoraResult {
    pub total: f64,
    pub corridor_rating: f64,
    pub phase_rating: f64,
    pub size_rating: f64,
    pub shape_rating: f64,
    pub t_start: f64,
    pub t_end: f64,
    /// Shift of the test signal (samples) at maximum correlation.
    pub shift_samples: i64,
    /// Test signal was linearly resampled onto the reference time base.
    pub resampled: bool,
    pub params: CoraParams,
}

/// Rate `test` against `reference` with the corridor and cross-correlation
/// methods.
pub fn cora_rate(reference: &TimeSeries, test: &TimeSeries, params: &CoraParams) -> Result<CoraResult> {
    params.validate()?;
    reference.validate()?;
    test.validate()?;

    let n = reference.len();
    let resampled = test.dt != reference.dt || test.t0 != reference.t0 || test.len() != n;
    if test.t_end() < reference.t0 || test.t0 > reference.t_end() {
        return Err(Error::UndefinedRating(
            "signals have no overlapping time support".into(),
        ));
    }
    // Test values on the reference time base; zero where the test has no data.
    let y: Vec<f64> = if resampled {
        (0..n)
            .map(|i| test.value_at(reference.time(i)).unwrap_or(0.0))
            .collect()
    } else {
        test.samples.clone()
    };
    let x = &reference.samples;

    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Err(Error::UndefinedRating("reference signal is identically zero".into()));
    }
    let i0 = x
        .iter()
        .position(|v| v.abs() >= params.a_eval * peak)
        .expect("peak sample qualifies");
    let i1 = x
        .iter()
        .rposition(|v| v.abs() >= params.b_eval * peak)
        .expect("peak sample qualifies");
    let (i0, i1) = (i0.min(i1), i0.max(i1));
    let len = i1 - i0 + 1;

    let inner = params.a_0 * peak;
    let outer = params.b_0 * peak;
    let corridor_rating = (i0..=i1)
        .map(|i| {
            let e = (y[i] - x[i]).abs();
            if e <= inner {
                1.0
            } else if e >= outer {
                0.0
            } else {
                ((outer - e) / (outer - inner)).powf(params.k)
            }
        })
        .sum::<f64>()
        / len as f64;

    let max_shift = (params.d_max * len as f64).floor() as i64;
    let min_shift = params.d_min * len as f64;
    let shifted = |m: i64, i: usize| {
        let j = i as i64 + m;
        if j < 0 || j >= n as i64 {
            0.0
        } else {
            y[j as usize]
        }
    };
    let sum_xx: f64 = (i0..=i1).map(|i| x[i] * x[i]).sum();
    let mut best = (f64::NEG_INFINITY, 0i64, 0.0f64);
    // Search outward from zero so ties resolve to the smallest shift.
    let order = std::iter::once(0).chain((1..=max_shift).flat_map(|m| [-m, m]));
    for m in order {
        let (mut xy, mut yy) = (0.0, 0.0);
        for (i, xi) in x.iter().enumerate().take(i1 + 1).skip(i0) {
            let v = shifted(m, i);
            xy += xi * v;
            yy += v * v;
        }
        let rho = if yy > 0.0 { xy / (sum_xx * yy).sqrt() } else { 0.0 };
        if rho > best.0 {
            best = (rho, m, yy);
        }
    }
    let (rho, shift, sum_yy) = best;

    let abs_shift = shift.unsigned_abs() as f64;
    let phase_rating = if abs_shift <= min_shift {
        1.0
    } else if abs_shift >= max_shift as f64 {
        0.0
    } else {
        (max_shift as f64 - abs_shift) / (max_shift as f64 - min_shift)
    };
    let size_rating = if sum_yy > 0.0 {
        let r = sum_yy / sum_xx;
        r.min(1.0 / r)
    } else {
        0.0
    };
    let shape_rating = rho.clamp(0.0, 1.0);

    let total = params.w_corridor * corridor_rating
        + params.w_phase * phase_rating
        + params.w_size * size_rating
        + params.w_shape * shape_rating;
    Ok(CoraResult {
        total,
        corridor_rating,
        phase_rating,
        size_rating,
        shape_rating,
        t_start: reference.time(i0),
        t_end: reference.time(i1),
        shift_samples: shift,
        resampled,
        params: params.clone(),
    })
}

/// Mean of the X, Y and Z component totals.
pub fn average_components(x: &CoraResult, y: &CoraResult, z: &CoraResult) -> f64 {
    (x.total + y.total + z.total) / 3.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Biofidelity {
    Poor,
    Fair,
    Good,
}

impl fmt::Display for Biofidelity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Biofidelity::Poor => "poor",
            Biofidelity::Fair => "fair",
            Biofidelity::Good => "good",
        })
    }
}

/// Good above 0.68, fair above 0.44, poor otherwise.
pub fn classify_biofidelity(score: f64) -> Result<Biofidelity> {
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::ScoreOutOfRange(score));
    }
    Ok(if score > 0.68 {
        Biofidelity::Good
    } else if score > 0.44 {
        Biofidelity::Fair
    } else {
        Biofidelity::Poor
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pulse(n: usize, centre: f64, width: f64, amp: f64) -> TimeSeries {
        let s = (0..n)
            .map(|i| amp * (-((i as f64 - centre) / width).powi(2)).exp())
            .collect();
        TimeSeries::new(0.0, 1e-3, s, "p").unwrap()
    }

    #[test]
    fn identity_is_one() {
        let r = pulse(400, 200.0, 30.0, 5.0);
        let c = cora_rate(&r, &r, &CoraParams::default()).unwrap();
        assert!((c.total - 1.0).abs() < 1e-6, "{c:?}");
        assert_eq!(c.shift_samples, 0);
    }

    #[test]
    fn large_shift_zero_phase() {
        let r = pulse(400, 150.0, 15.0, 1.0);
        let t = pulse(400, 250.0, 15.0, 1.0);
        let c = cora_rate(&r, &t, &CoraParams::default()).unwrap();
        assert_eq!(c.phase_rating, 0.0);
        let p = &c.params;
        assert!(
            c.total
                < p.w_corridor * c.corridor_rating + p.w_size * c.size_rating + p.w_shape * c.shape_rating + p.w_phase
        );
    }

    #[test]
    fn doubled_amplitude() {
        let r = pulse(400, 200.0, 30.0, 1.0);
        let t = pulse(400, 200.0, 30.0, 2.0);
        let c = cora_rate(&r, &t, &CoraParams::default()).unwrap();
        assert!((c.shape_rating - 1.0).abs() < 1e-12);
        assert!((c.size_rating - 0.25).abs() < 1e-12);
    }

    #[test]
    fn zero_reference_is_undefined() {
        let r = TimeSeries::new(0.0, 1e-3, vec![0.0; 50], "z").unwrap();
        let t = pulse(50, 25.0, 5.0, 1.0);
        assert!(matches!(
            cora_rate(&r, &t, &CoraParams::default()),
            Err(Error::UndefinedRating(_))
        ));
    }

    #[test]
    fn resamples_finer_test() {
        let r = pulse(200, 100.0, 20.0, 1.0);
        let fine: Vec<f64> = (0..399)
            .map(|i| (-((i as f64 / 2.0 - 100.0) / 20.0).powi(2)).exp())
            .collect();
        let t = TimeSeries::new(0.0, 0.5e-3, fine, "f").unwrap();
        let c = cora_rate(&r, &t, &CoraParams::default()).unwrap();
        assert!(c.resampled);
        assert!((c.total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn classification() {
        assert_eq!(classify_biofidelity(0.70).unwrap(), Biofidelity::Good);
        assert_eq!(classify_biofidelity(0.68).unwrap(), Biofidelity::Fair);
        assert_eq!(classify_biofidelity(0.50).unwrap(), Biofidelity::Fair);
        assert_eq!(classify_biofidelity(0.44).unwrap(), Biofidelity::Poor);
        assert!(classify_biofidelity(1.5).is_err());
        assert!(classify_biofidelity(f64::NAN).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(CoraParams::default().validate().is_ok());
        let p = CoraParams {
            a_0: 0.6,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let p = CoraParams {
            w_corridor: 0.7,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }
}
