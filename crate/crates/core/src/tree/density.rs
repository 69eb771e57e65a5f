use std::f64::consts::PI;

use nalgebra::linalg::Cholesky;
use nalgebra::DMatrix;
use statrs::function::factorial::ln_factorial;

use super::{build_cov_ordered, Tree};
use crate::data::DataMatrix;
use crate::error::{invalid, Error, Result};

/// `H_{l+r-1} - H_{l-1} - H_{r-1}` with `H_0 = 0`.
pub fn harmonic_j(l: usize, r: usize) -> Result<f64> {
    if l == 0 || r == 0 {
        return invalid(format!("harmonic_j needs positive counts, got ({l}, {r})"));
    }
    Ok(harmonic(l + r - 1) - harmonic(l - 1) - harmonic(r - 1))
}

fn harmonic(n: usize) -> f64 {
    (1..=n).map(|i| 1.0 / i as f64).sum()
}

/// `ln[(l-1)! (r-1)! / (l+r-1)!]`, the chance of the observed left/right split.
pub fn log_topology_factor(l: usize, r: usize) -> f64 {
    ln_factorial((l - 1) as u64) + ln_factorial((r - 1) as u64) - ln_factorial((l + r - 1) as u64)
}

/// Log prior density of topology and divergence times under the divergence
/// function `a(t) = c / (1 - t)`: a sum over internal nodes of the topology
/// factor plus `ln c + (c J_{l,r} - 1) ln(1 - t)`.
pub fn log_tree_prior(tree: &Tree, c: f64) -> Result<f64> {
    if !(c > 0.0 && c.is_finite()) {
        return invalid(format!("divergence parameter must be positive, got {c}"));
    }
    let mut total = 0.0;
    for id in tree.internal_nodes() {
        let t = tree.time(id);
        if t >= 1.0 {
            return invalid(format!("internal divergence time {t} is not below 1"));
        }
        let (l, r) = tree.split_counts(id);
        total += log_topology_factor(l, r) + c.ln() + (c * harmonic_j(l, r)? - 1.0) * (-t).ln_1p();
    }
    Ok(total)
}

/// Log density of the data given the tree: patient columns are iid
/// `N_I(0, sigma2 * Sigma)` with `Sigma` the tree-structured matrix. Rows are
/// matched to leaves by label.
pub fn log_likelihood(data: &DataMatrix, tree: &Tree, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return invalid(format!("diffusion variance must be positive, got {sigma2}"));
    }
    let n = data.rows();
    if n < 2 {
        return invalid("likelihood needs at least two leaves");
    }
    let cov = build_cov_ordered(tree, data.row_labels())?;
    gaussian_log_density(data, cov.entries(), sigma2)
}

/// Centered Gaussian log density of the data columns with covariance
/// `sigma2 * cov`, using one Cholesky factor for all columns.
pub(crate) fn gaussian_log_density(data: &DataMatrix, cov: &DMatrix<f64>, sigma2: f64) -> Result<f64> {
    let n = data.rows();
    let singular = || {
        let (i, j) = closest_pair(cov);
        Error::SingularCovariance(data.row_labels()[i].clone(), data.row_labels()[j].clone())
    };
    let chol = Cholesky::new(cov * sigma2).ok_or_else(singular)?;
    let l = chol.l_dirty();
    let log_det: f64 = (0..n).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    if !log_det.is_finite() {
        return Err(singular());
    }
    let z = l.solve_lower_triangular(data.values()).ok_or_else(singular)?;
    let quad = z.norm_squared();
    let j = data.cols() as f64;
    Ok(-0.5 * j * (n as f64 * (2.0 * PI).ln() + log_det) - 0.5 * quad)
}

// Off-diagonal pair with the largest shared time: the leaves whose separation
// vanishes first.
fn closest_pair(m: &DMatrix<f64>) -> (usize, usize) {
    let mut best = (0, 1, f64::NEG_INFINITY);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.nrows() {
            if m[(i, j)] > best.2 {
                best = (i, j, m[(i, j)]);
            }
        }
    }
    (best.0, best.1)
}
