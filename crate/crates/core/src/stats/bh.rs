//! Benjamini-Hochberg step-up adjustment.

use serde::{Deserialize, Serialize};

use super::StatsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BhResult {
    /// Adjusted p-values in input order.
    pub adjusted: Vec<f64>,
    pub rejected: Vec<bool>,
}

/// `adjusted_(k) = min_{j >= k} (m / j) p_(j)`, capped at 1; reject when
/// the adjusted value is at most `q`.
pub fn bh_adjust(pvalues: &[f64], q: f64) -> Result<BhResult, StatsError> {
    if pvalues.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(StatsError::InvalidArgument(format!("q = {q} is outside (0, 1)")));
    }
    if let Some(p) = pvalues.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(StatsError::InvalidArgument(format!("p = {p} is outside [0, 1]")));
    }
    let m = pvalues.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]).then(a.cmp(&b)));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0_f64;
    for rank in (1..=m).rev() {
        let i = order[rank - 1];
        running = running.min(pvalues[i] * m as f64 / rank as f64);
        adjusted[i] = running;
    }
    let rejected = adjusted.iter().map(|&p| p <= q).collect();
    Ok(BhResult { adjusted, rejected })
}
