use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{row_distances, ward};
use crate::data::DataMatrix;
use crate::error::{invalid, Result};
use crate::generate::{RngSeed, SyntheticSpec};
use crate::stats::percentile_sorted;

pub const SUMMARY_LEVELS: [f64; 5] = [0.10, 0.25, 0.50, 0.75, 0.90];

/// Sufficient statistic for the diffusion variance: `sum x_ij^2 / (I J)`.
pub fn summary_sigma(data: &DataMatrix) -> Result<f64> {
    let n = data.rows() * data.cols();
    if n == 0 {
        return invalid("empty data matrix");
    }
    Ok(data.values().norm_squared() / n as f64)
}

/// Percentiles of the pairwise row distances followed by percentiles of the
/// Ward dendrogram's leaf merge heights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryC(pub [f64; 10]);

impl SummaryC {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn summary_c(data: &DataMatrix) -> Result<SummaryC> {
    let n = data.rows();
    if n < 3 {
        return invalid(format!("summary for c needs at least 3 rows, got {n}"));
    }
    let dist = row_distances(data.values());
    let mut pair: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for k in (i + 1)..n {
            pair.push(dist[(i, k)]);
        }
    }
    let mut heights = ward(&dist)?.leaf_merge_heights();
    pair.sort_by(f64::total_cmp);
    heights.sort_by(f64::total_cmp);
    let mut out = [0.0; 10];
    for (k, &q) in SUMMARY_LEVELS.iter().enumerate() {
        out[k] = percentile_sorted(&pair, q);
        out[k + 5] = percentile_sorted(&heights, q);
    }
    Ok(SummaryC(out))
}

/// One cached synthetic draw: prior parameters and the statistics of the
/// simulated dataset. `seed` and `index` identify the generating substream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub c: f64,
    pub sigma2: f64,
    #[serde(rename = "S_c")]
    pub s_c: Vec<f64>,
    #[serde(rename = "S_sigma")]
    pub s_sigma: f64,
    pub seed: u64,
    pub index: u64,
}

pub fn simulate_record(spec: &SyntheticSpec, seed: RngSeed, index: u64) -> Result<SimRecord> {
    let draw = spec.draw(seed, index);
    Ok(SimRecord {
        c: draw.c,
        sigma2: draw.sigma2,
        s_c: summary_c(&draw.data)?.0.to_vec(),
        s_sigma: summary_sigma(&draw.data)?,
        seed: seed.0,
        index,
    })
}

/// Simulates draws `range` in parallel; output is in index order.
pub fn simulate_records(spec: &SyntheticSpec, range: std::ops::Range<u64>, seed: RngSeed) -> Result<Vec<SimRecord>> {
    spec.validate()?;
    if spec.n_leaves < 3 {
        return invalid("synthetic datasets need at least 3 leaves");
    }
    range.into_par_iter().map(|i| simulate_record(spec, seed, i)).collect()
}
