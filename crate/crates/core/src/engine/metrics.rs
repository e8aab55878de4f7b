//! Run metrics: coverage ratio, coverage time, remaining reliability,
//! targets found and time-of-discovery percentiles.

use serde::{Deserialize, Serialize};

/// Discovery percentiles reported in `ToTD`: 10 %, 20 %, ..., 100 %.
pub const TOTD_STEPS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub cr: f64,
    /// Seconds until the last live robot finished its last step.
    pub ct: f64,
    pub rr_min: Option<f64>,
    pub rr_mean: Option<f64>,
    pub rr_max: Option<f64>,
    pub notf: usize,
    pub targets_placed: usize,
    /// `totd[k]` is the time at which `10 (k + 1)` % of the placed targets
    /// had been found, if ever.
    pub totd: Vec<Option<f64>>,
    pub games_resilience: usize,
    pub games_noidling: usize,
    pub failures: usize,
    pub ticks: u64,
    pub liveness_violation: bool,
}

impl Metrics {
    /// ToTD at a percentage in `{10, 20, ..., 100}`.
    pub fn totd_at(&self, percent: usize) -> Option<f64> {
        assert!(percent.is_multiple_of(10) && (10..=100).contains(&percent), "percent must be a multiple of 10");
        self.totd[percent / 10 - 1]
    }
}

/// Piecewise discovery timeline over `placed` targets.
pub fn time_of_discovery(discoveries: &[f64], placed: usize) -> Vec<Option<f64>> {
    let mut times = discoveries.to_vec();
    times.sort_by(f64::total_cmp);
    (1..=TOTD_STEPS)
        .map(|k| {
            if placed == 0 {
                return None;
            }
            let need = (k * placed).div_ceil(TOTD_STEPS).max(1);
            times.get(need - 1).copied()
        })
        .collect()
}

/// `(min, mean, max)` of the given reliabilities.
pub fn reliability_summary(values: &[f64]) -> Option<(f64, f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Some((min, mean, max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totd_steps() {
        let t = time_of_discovery(&[5.0, 1.0, 3.0, 9.0], 4);
        assert_eq!(t[0], Some(1.0));
        assert_eq!(t[2], Some(3.0));
        assert_eq!(t[4], Some(3.0));
        assert_eq!(t[9], Some(9.0));
        let partial = time_of_discovery(&[2.0], 4);
        assert_eq!(partial[1], Some(2.0));
        assert_eq!(partial[3], None);
        assert!(time_of_discovery(&[], 0).iter().all(Option::is_none));
    }

    #[test]
    fn totd_nondecreasing() {
        let t = time_of_discovery(&[4.0, 8.0, 1.0, 2.0, 2.0, 7.0, 3.0], 7);
        let vals: Vec<f64> = t.iter().map(|x| x.unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn rr_summary() {
        assert_eq!(reliability_summary(&[]), None);
        assert_eq!(reliability_summary(&[0.5, 0.7, 0.9]).map(|s| (s.0, s.2)), Some((0.5, 0.9)));
    }
}
