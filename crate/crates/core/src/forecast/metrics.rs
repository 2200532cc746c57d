use serde::{Deserialize, Serialize};

use super::ForecastError;

/// Mean squared error.
pub fn mse(pred: &[f64], actual: &[f64]) -> Result<f64, ForecastError> {
    if pred.len() != actual.len() {
        return Err(ForecastError::LengthMismatch {
            pred: pred.len(),
            actual: actual.len(),
        });
    }
    if pred.is_empty() {
        return Err(ForecastError::EmptySeries);
    }
    let sse: f64 = pred
        .iter()
        .zip(actual)
        .map(|(p, y)| (y - p) * (y - p))
        .sum();
    Ok(sse / pred.len() as f64)
}

/// Percentage gap of `value` from `best`.
pub fn pct_gap(value: f64, best: f64) -> Result<f64, ForecastError> {
    if best.is_nan() || best <= 0.0 {
        return Err(ForecastError::NonPositiveBest(best));
    }
    Ok(100.0 * (value - best) / best)
}

/// Min, quartiles and max.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl BoxStats {
    /// Quartiles by linear interpolation between order statistics.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(Self {
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[1.0, -1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert!(matches!(
            mse(&[1.0], &[1.0, 2.0]),
            Err(ForecastError::LengthMismatch { .. })
        ));
        assert!(mse(&[], &[]).is_err());
    }

    #[test]
    fn gap_examples() {
        assert_eq!(pct_gap(1.067, 1.067).unwrap(), 0.0);
        assert!((pct_gap(2.023, 1.067).unwrap() - 89.60).abs() < 0.05);
        assert!((pct_gap(2.115, 1.067).unwrap() - 98.22).abs() < 0.05);
        assert!(pct_gap(1.0, 0.0).is_err());
        assert!(pct_gap(1.0, -2.0).is_err());
    }

    #[test]
    fn box_stats() {
        let b = BoxStats::of(&[5.0, 1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!(
            (b.min, b.q1, b.median, b.q3, b.max),
            (1.0, 2.0, 3.0, 4.0, 5.0)
        );
        assert!(BoxStats::of(&[]).is_none());
    }

    proptest! {
        #[test]
        fn gap_identity_and_monotone(best in 0.001f64..1e3, a in 0.0f64..1e3, b in 0.0f64..1e3) {
            prop_assert_eq!(pct_gap(best, best).unwrap(), 0.0);
            if a < b {
                prop_assert!(pct_gap(a, best).unwrap() < pct_gap(b, best).unwrap());
            }
        }

        #[test]
        fn mse_scales_quadratically(
            pairs in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..50),
            k in 0.1f64..10.0,
        ) {
            let (p, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let base = mse(&p, &y).unwrap();
            let ps: Vec<f64> = p.iter().map(|v| v * k + 3.0).collect();
            let ys: Vec<f64> = y.iter().map(|v| v * k + 3.0).collect();
            let scaled = mse(&ps, &ys).unwrap();
            prop_assert!((scaled - k * k * base).abs() <= 1e-9 * (1.0 + scaled.abs()));
        }
    }
}
