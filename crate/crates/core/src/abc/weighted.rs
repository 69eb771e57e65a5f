use crate::error::{invalid, Error, Result};

use super::reject::check_weights;

/// Weighted quantile with linear interpolation. Draws with zero weight are
/// ignored. After sorting, draw `i` sits at position
/// `(S_i - w_i) / (1 - w_n)` where `S_i` is the normalized cumulative weight,
/// which reproduces the `(n - 1) q` rule when weights are equal.
pub fn weighted_quantile(values: &[f64], weights: &[f64], q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return invalid(format!("quantile level must lie in [0, 1], got {q}"));
    }
    if values.len() != weights.len() {
        return Err(Error::Dimension(format!("{} values with {} weights", values.len(), weights.len())));
    }
    check_weights(weights)?;
    let mut pts: Vec<(f64, f64)> =
        values.iter().zip(weights).filter(|(_, &w)| w > 0.0).map(|(&v, &w)| (v, w)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pts.len() == 1 {
        return Ok(pts[0].0);
    }
    let total: f64 = pts.iter().map(|p| p.1).sum();
    let last = pts.last().expect("nonempty").1 / total;
    let mut cum = 0.0;
    let pos: Vec<f64> = pts
        .iter()
        .map(|&(_, w)| {
            let wn = w / total;
            cum += wn;
            ((cum - wn) / (1.0 - last)).min(1.0)
        })
        .collect();
    let k = pos.partition_point(|&p| p <= q);
    if k == 0 {
        return Ok(pts[0].0);
    }
    if k == pts.len() {
        return Ok(pts[k - 1].0);
    }
    let (p0, p1) = (pos[k - 1], pos[k]);
    let frac = if p1 > p0 { (q - p0) / (p1 - p0) } else { 0.0 };
    Ok(pts[k - 1].0 + frac * (pts[k].0 - pts[k - 1].0))
}

/// Effective sample size `1 / sum w~^2` of normalized weights.
pub fn abc_ess(weights: &[f64]) -> Result<f64> {
    check_weights(weights)?;
    let total: f64 = weights.iter().sum();
    Ok(1.0 / weights.iter().map(|w| (w / total).powi(2)).sum::<f64>())
}
