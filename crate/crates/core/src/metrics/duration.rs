//! Interview duration percentiles by condition.

use serde::{Deserialize, Serialize};

use crate::questionnaire::Condition;
use crate::transcript::{SessionStatus, Transcript};

pub const DURATION_PERCENTILES: [f64; 5] = [1.0, 25.0, 50.0, 75.0, 99.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationSummary {
    pub condition: Condition,
    pub n: usize,
    /// Minutes at the 1st, 25th, 50th, 75th and 99th percentiles.
    pub percentiles: Option<[f64; 5]>,
    pub mean: Option<f64>,
}

/// Linear interpolation between order statistics (Hyndman-Fan type 7).
/// `sorted` must be ascending and non-empty; `p` is in percent.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Durations in minutes (first to last turn). With `include_dropouts` the
/// population is completes plus dropouts, otherwise completes only.
pub fn duration_summary(transcripts: &[Transcript], include_dropouts: bool) -> Vec<DurationSummary> {
    Condition::ALL
        .iter()
        .map(|&condition| {
            let mut mins: Vec<f64> = transcripts
                .iter()
                .filter(|t| t.condition == condition)
                .filter(|t| match t.status {
                    SessionStatus::Completed => true,
                    SessionStatus::DroppedOut => include_dropouts,
                    _ => false,
                })
                .filter_map(|t| t.duration_millis())
                .map(|ms| ms as f64 / 60_000.0)
                .collect();
            mins.sort_by(f64::total_cmp);
            let n = mins.len();
            if n == 0 {
                return DurationSummary { condition, n, percentiles: None, mean: None };
            }
            DurationSummary {
                condition,
                n,
                percentiles: Some(DURATION_PERCENTILES.map(|p| percentile(&mins, p))),
                mean: Some(mins.iter().sum::<f64>() / n as f64),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type7_matches_known_values() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&xs, 50.0), 3.0);
        assert_eq!(percentile(&xs, 25.0), 2.0);
        assert!((percentile(&xs, 1.0) - 1.04).abs() < 1e-12);
        assert!((percentile(&xs, 99.0) - 4.96).abs() < 1e-12);
        assert_eq!(percentile(&[7.0], 99.0), 7.0);
    }
}
