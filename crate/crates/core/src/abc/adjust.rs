use log::warn;
use nalgebra::{DMatrix, DVector};

use super::reject::WeightedSamples;
use crate::error::{invalid, Error, Result};

/// Regression-adjusted draws.
#[derive(Clone, Debug, PartialEq)]
pub struct Adjusted {
    /// Adjusted parameter values, aligned with the input draws.
    pub values: Vec<f64>,
    /// Fitted intercept on the log scale, the prediction at the observation.
    pub intercept: f64,
    /// Slope per statistic coordinate; dropped coordinates get 0.
    pub beta: Vec<f64>,
    /// Statistic coordinates removed as collinear.
    pub dropped: Vec<usize>,
}

const COLLINEAR_TOL: f64 = 1e-8;

/// Local-linear adjustment on `log theta`: fits
/// `log theta_l ~ alpha + beta (S_l - S_obs)` by kernel-weighted least squares
/// and returns `exp(log theta_l - beta (S_l - S_obs))`. Weights are unchanged.
pub fn regression_adjust(ws: &WeightedSamples) -> Result<Adjusted> {
    let n = ws.len();
    let dim = ws.obs_stat.len();
    if ws.stats.len() != n || ws.stats.iter().any(|s| s.len() != dim) {
        return Err(Error::Dimension("statistics do not match the draws".into()));
    }
    if ws.values.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return invalid("adjustment on the log scale needs positive draws");
    }
    let active: Vec<usize> = (0..n).filter(|&l| ws.weights[l] > 0.0).collect();

    // weighted design over positive-weight draws: intercept then statistics
    let rows = active.len();
    let mut x = DMatrix::<f64>::zeros(rows, dim + 1);
    let mut y = DVector::<f64>::zeros(rows);
    for (r, &l) in active.iter().enumerate() {
        let sw = ws.weights[l].sqrt();
        x[(r, 0)] = sw;
        for k in 0..dim {
            x[(r, k + 1)] = sw * (ws.stats[l][k] - ws.obs_stat[k]);
        }
        y[r] = sw * ws.values[l].ln();
    }

    // weighted Gram-Schmidt to find a full-rank column subset
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut keep: Vec<usize> = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..=dim {
        let col = x.column(j).into_owned();
        let norm = col.norm();
        let mut r = col;
        for q in &basis {
            let p = q.dot(&r);
            r -= q * p;
        }
        let rn = r.norm();
        if norm > 0.0 && rn > COLLINEAR_TOL * norm {
            basis.push(r / rn);
            keep.push(j);
        } else if j == 0 {
            return Err(Error::DegenerateKernel("no draw has positive weight".into()));
        } else {
            dropped.push(j - 1);
        }
    }
    if !dropped.is_empty() {
        warn!("regression adjustment: dropped collinear statistic columns {dropped:?}");
    }
    if rows <= keep.len() {
        return Err(Error::InsufficientSamples(format!(
            "{rows} positive-weight draws for {} regression coefficients",
            keep.len()
        )));
    }

    let xs = x.select_columns(&keep);
    let coef = xs
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| Error::InvalidArgument(format!("least-squares solve failed: {e}")))?;
    let mut beta = vec![0.0; dim];
    for (c, &j) in keep.iter().enumerate().skip(1) {
        beta[j - 1] = coef[c];
    }
    let values = (0..n)
        .map(|l| {
            let shift: f64 = (0..dim).map(|k| beta[k] * (ws.stats[l][k] - ws.obs_stat[k])).sum();
            (ws.values[l].ln() - shift).exp()
        })
        .collect();
    Ok(Adjusted { values, intercept: coef[0], beta, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(values: Vec<f64>, stats: Vec<Vec<f64>>, obs: Vec<f64>) -> WeightedSamples {
        let n = values.len();
        let mut ws = WeightedSamples::new(values, (0..n).map(|i| 1.0 - (i as f64 / n as f64).powi(2)).collect()).unwrap();
        ws.stats = stats;
        ws.obs_stat = obs;
        ws
    }

    #[test]
    fn exact_linear_relation_collapses() {
        let stats: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 * 0.1, (i % 7) as f64]).collect();
        let values = stats.iter().map(|s| (0.5 + 0.3 * s[0] - 0.2 * s[1]).exp()).collect();
        let obs = vec![1.0, 2.0];
        let a = regression_adjust(&samples(values, stats, obs)).unwrap();
        let target = (0.5 + 0.3 - 0.4f64).exp();
        for v in &a.values {
            assert!((v - target).abs() < 1e-9, "{v} vs {target}");
        }
        assert!((a.intercept - target.ln()).abs() < 1e-9);
    }

    #[test]
    fn independent_statistics_leave_values_nearly_unchanged() {
        let stats: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 2) as f64]).collect();
        let values: Vec<f64> = (0..40).map(|i| 1.0 + (i / 2) as f64 * 0.01).collect();
        let ws = samples(values.clone(), stats, vec![0.5]);
        let a = regression_adjust(&ws).unwrap();
        for (x, y) in a.values.iter().zip(&values) {
            assert!((x / y - 1.0).abs() < 0.01);
        }
        assert_eq!(a.values.len(), ws.len());
    }

    #[test]
    fn collinear_columns_are_dropped() {
        let stats: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 2.0 * i as f64, 3.0]).collect();
        let values = (0..20).map(|i| (0.1 * i as f64).exp()).collect();
        let a = regression_adjust(&samples(values, stats, vec![4.0, 8.0, 3.0])).unwrap();
        assert_eq!(a.dropped, vec![1, 2]);
        assert!((a.beta[0] - 0.1).abs() < 1e-9);
        assert!(a.values.iter().all(|v| (v - 0.4f64.exp()).abs() < 1e-9));
    }

    #[test]
    fn too_few_positive_weights() {
        let mut ws = samples(vec![1.0; 3], vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 2.0]], vec![0.0, 0.0]);
        ws.weights = vec![1.0, 1.0, 1.0];
        assert!(matches!(regression_adjust(&ws), Err(Error::InsufficientSamples(_))));
    }
}
