//! Control metrics of a recorded response: stability, overshoot,
//! settling time and steady-state error, all relative to the setpoint.

use std::cmp::Ordering;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_STABILITY_MARGIN: f64 = 0.02;

/// Minimum length of the settled suffix for a run to count as stable.
pub const MIN_SETTLED_SAMPLES: usize = 5;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("response series is empty")]
    Empty,
    #[error("ticks must be strictly increasing (tick {tick} follows {prev})")]
    NonMonotonicTicks { prev: u64, tick: u64 },
    #[error("stability margin must be positive, got {0}")]
    BadMargin(f64),
    #[error("setpoint must be positive, got {0}")]
    BadSetpoint(f64),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseSeries {
    samples: Vec<(u64, f64)>,
    setpoint: f64,
    stability_margin: f64,
}

impl ResponseSeries {
    pub fn new(
        samples: Vec<(u64, f64)>,
        setpoint: f64,
        stability_margin: f64,
    ) -> Result<Self, MetricsError> {
        if !(stability_margin > 0.0) {
            return Err(MetricsError::BadMargin(stability_margin));
        }
        if !(setpoint > 0.0) {
            return Err(MetricsError::BadSetpoint(setpoint));
        }
        for w in samples.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(MetricsError::NonMonotonicTicks {
                    prev: w[0].0,
                    tick: w[1].0,
                });
            }
        }
        Ok(Self {
            samples,
            setpoint,
            stability_margin,
        })
    }

    /// Samples at ticks 0, 1, 2, ...
    pub fn from_values(
        values: &[f64],
        setpoint: f64,
        stability_margin: f64,
    ) -> Result<Self, MetricsError> {
        let samples = values
            .iter()
            .enumerate()
            .map(|(i, v)| (i as u64, *v))
            .collect();
        Self::new(samples, setpoint, stability_margin)
    }

    pub fn samples(&self) -> &[(u64, f64)] {
        &self.samples
    }

    pub fn setpoint(&self) -> f64 {
        self.setpoint
    }

    pub fn stability_margin(&self) -> f64 {
        self.stability_margin
    }

    pub fn in_band(&self, value: f64) -> bool {
        let lo = self.setpoint * (1.0 - self.stability_margin);
        let hi = self.setpoint * (1.0 + self.stability_margin);
        value >= lo && value <= hi
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), MetricsError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["tick", "value"])?;
        for (t, v) in &self.samples {
            out.write_record([t.to_string(), v.to_string()])?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(
        r: R,
        setpoint: f64,
        stability_margin: f64,
    ) -> Result<Self, MetricsError> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let mut samples = Vec::new();
        for row in rdr.deserialize() {
            let (tick, value): (u64, f64) = row?;
            samples.push((tick, value));
        }
        Self::new(samples, setpoint, stability_margin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlMetrics {
    pub stable: bool,
    pub overshoot: f64,
    pub settling_time: Option<u64>,
    pub steady_state_error: Option<f64>,
}

impl ControlMetrics {
    pub fn meets(&self, max_overshoot: f64, max_sse: f64) -> bool {
        self.stable
            && self.overshoot <= max_overshoot
            && self.steady_state_error.is_some_and(|e| e <= max_sse)
    }
}

pub fn compute_metrics(series: &ResponseSeries) -> Result<ControlMetrics, MetricsError> {
    let samples = &series.samples;
    if samples.is_empty() {
        return Err(MetricsError::Empty);
    }
    let sp = series.setpoint;

    let peak = samples
        .iter()
        .map(|s| s.1)
        .fold(f64::NEG_INFINITY, f64::max);
    let overshoot = ((peak - sp) / sp).max(0.0);

    // Scan backwards for the start of the settled suffix.
    let mut start = samples.len();
    while start > 0 && series.in_band(samples[start - 1].1) {
        start -= 1;
    }
    let settled = samples.len() - start;
    if settled < MIN_SETTLED_SAMPLES {
        return Ok(ControlMetrics {
            stable: false,
            overshoot,
            settling_time: None,
            steady_state_error: None,
        });
    }

    let tail = &samples[start..];
    let mean = tail.iter().map(|s| s.1).sum::<f64>() / tail.len() as f64;
    Ok(ControlMetrics {
        stable: true,
        overshoot,
        settling_time: Some(samples[start].0 - samples[0].0),
        steady_state_error: Some((sp - mean).abs() / sp),
    })
}

/// Reporting order: stable first, then lower overshoot, then lower SSE.
/// `Less` means `a` ranks ahead of `b`.
pub fn compare_metrics(a: &ControlMetrics, b: &ControlMetrics) -> Ordering {
    b.stable
        .cmp(&a.stable)
        .then_with(|| a.overshoot.total_cmp(&b.overshoot))
        .then_with(|| match (a.steady_state_error, b.steady_state_error) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => Ordering::Equal,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn series(values: &[f64], sp: f64, margin: f64) -> ResponseSeries {
        ResponseSeries::from_values(values, sp, margin).unwrap()
    }

    #[test]
    fn constant_at_setpoint() {
        let m = compute_metrics(&series(&[0.95; 20], 0.95, 0.03)).unwrap();
        assert!(m.stable);
        assert_eq!(m.overshoot, 0.0);
        assert_eq!(m.settling_time, Some(0));
        assert!(m.steady_state_error.unwrap() < 1e-12);
    }

    #[test]
    fn overshoot_from_peak() {
        let mut v = vec![0.90, 0.97];
        v.extend([0.95; 10]);
        let m = compute_metrics(&series(&v, 0.95, 0.03)).unwrap();
        assert_relative_eq!(m.overshoot, 0.02 / 0.95, epsilon = 1e-12);
        assert!(m.stable);
        // 0.90 sits outside the 3% band, 0.97 inside
        assert_eq!(m.settling_time, Some(1));
    }

    #[test]
    fn converging_below_setpoint() {
        let v: Vec<f64> = (0..200)
            .map(|t| 0.94 - 0.2 * (-(t as f64) / 5.0).exp())
            .collect();
        let m = compute_metrics(&series(&v, 0.95, 0.03)).unwrap();
        assert!(m.stable);
        assert_relative_eq!(m.steady_state_error.unwrap(), 0.01 / 0.95, epsilon = 1e-3);
    }

    #[test]
    fn final_sample_alone_is_not_stable() {
        let mut v = vec![0.5; 30];
        v.push(0.95);
        let m = compute_metrics(&series(&v, 0.95, 0.02)).unwrap();
        assert!(!m.stable);
        assert_eq!(m.settling_time, None);
        assert_eq!(m.steady_state_error, None);
    }

    #[test]
    fn empty_and_invalid_series() {
        assert!(matches!(
            compute_metrics(&series(&[], 0.95, 0.02)),
            Err(MetricsError::Empty)
        ));
        assert!(ResponseSeries::new(vec![(1, 0.9), (1, 0.9)], 0.95, 0.02).is_err());
        assert!(ResponseSeries::new(vec![], 0.95, 0.0).is_err());
    }

    #[test]
    fn settling_time_offsets_from_first_tick() {
        let s = ResponseSeries::new(
            (10..30)
                .map(|t| (t, if t < 15 { 0.5 } else { 0.95 }))
                .collect(),
            0.95,
            0.02,
        )
        .unwrap();
        assert_eq!(compute_metrics(&s).unwrap().settling_time, Some(5));
    }

    #[test]
    fn ordering_rules() {
        let stable = ControlMetrics {
            stable: true,
            overshoot: 0.5,
            settling_time: Some(3),
            steady_state_error: Some(0.1),
        };
        let unstable = ControlMetrics {
            stable: false,
            overshoot: 0.0,
            settling_time: None,
            steady_state_error: None,
        };
        assert_eq!(compare_metrics(&stable, &unstable), Ordering::Less);
        let a = ControlMetrics {
            overshoot: 0.01,
            ..stable
        };
        let b = ControlMetrics {
            overshoot: 0.02,
            ..stable
        };
        assert_eq!(compare_metrics(&a, &b), Ordering::Less);
        assert_eq!(compare_metrics(&a, &a), Ordering::Equal);
    }

    #[test]
    fn csv_round_trip() {
        let s = series(&[0.9, 0.93, 0.951, 0.95], 0.95, 0.02);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"tick,value\n"));
        let back = ResponseSeries::read_csv(&buf[..], 0.95, 0.02).unwrap();
        assert_eq!(back, s);
    }

    // Brute force: try every candidate settling index from the front.
    fn oracle(values: &[f64], sp: f64, margin: f64) -> (bool, Option<u64>, Option<f64>) {
        let inb = |v: f64| v >= sp * (1.0 - margin) && v <= sp * (1.0 + margin);
        for i in 0..values.len() {
            if values[i..].iter().all(|v| inb(*v)) {
                if values.len() - i < MIN_SETTLED_SAMPLES {
                    return (false, None, None);
                }
                let tail = &values[i..];
                let mean = tail.iter().sum::<f64>() / tail.len() as f64;
                return (true, Some(i as u64), Some((sp - mean).abs() / sp));
            }
        }
        (false, None, None)
    }

    proptest! {
        #[test]
        fn matches_brute_force(values in prop::collection::vec(0.9f64..1.0, 1..200)) {
            let m = compute_metrics(&series(&values, 0.95, 0.02)).unwrap();
            let (stable, ts, sse) = oracle(&values, 0.95, 0.02);
            prop_assert_eq!(m.stable, stable);
            prop_assert_eq!(m.settling_time, ts);
            prop_assert_eq!(m.steady_state_error, sse);
        }

        #[test]
        fn scale_invariant(values in prop::collection::vec(0.8f64..1.1, 1..100), k in 0.1f64..10.0) {
            let a = compute_metrics(&series(&values, 0.95, 0.02)).unwrap();
            let scaled: Vec<f64> = values.iter().map(|v| v * k).collect();
            let b = compute_metrics(&series(&scaled, 0.95 * k, 0.02)).unwrap();
            // band edges can flip under rounding; skip those knife-edge draws
            let edge = values.iter().any(|v| ((v / 0.95 - 1.0).abs() - 0.02).abs() < 1e-9);
            prop_assume!(!edge);
            prop_assert_eq!(a.stable, b.stable);
            prop_assert_eq!(a.settling_time, b.settling_time);
            prop_assert!((a.overshoot - b.overshoot).abs() < 1e-12);
            match (a.steady_state_error, b.steady_state_error) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                (x, y) => prop_assert_eq!(x, y),
            }
        }

        #[test]
        fn no_overshoot_below_setpoint(values in prop::collection::vec(0.0f64..0.95, 1..100)) {
            prop_assert_eq!(compute_metrics(&series(&values, 0.95, 0.02)).unwrap().overshoot, 0.0);
        }

        #[test]
        fn in_band_appends_keep_settling_time(
            head in prop::collection::vec(0.5f64..1.0, 0..40),
            settled in prop::collection::vec(0.94f64..0.96, 5..40),
            extra in prop::collection::vec(0.94f64..0.96, 1..20),
        ) {
            let values: Vec<f64> = head.into_iter().chain(settled).collect();
            let a = compute_metrics(&series(&values, 0.95, 0.02)).unwrap();
            prop_assert!(a.stable);
            let mut longer = values.clone();
            longer.extend(extra);
            let b = compute_metrics(&series(&longer, 0.95, 0.02)).unwrap();
            prop_assert_eq!(a.settling_time, b.settling_time);
        }
    }
}
