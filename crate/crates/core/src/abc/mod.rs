//! Approximate Bayesian computation for the Euclidean parameters: summary
//! statistics, nearest-neighbour rejection with kernel weights, local-linear
//! regression adjustment and weighted posterior summaries.

mod adjust;
mod calibrate;
mod reject;
mod summary;
mod weighted;

pub use adjust::{regression_adjust, Adjusted};
pub use calibrate::{calibrate, calibrate_pool, CalibrationConfig, CalibrationMode, CalibrationReport, ParamCalibration};
pub use reject::{abc_reject, abc_reject_scaled, StatScale, WeightedSamples, MIN_ACCEPTED};
pub use summary::{simulate_record, simulate_records, summary_c, summary_sigma, SimRecord, SummaryC, SUMMARY_LEVELS};
pub use weighted::{abc_ess, weighted_quantile};

use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatKind {
    C,
    Sigma2,
}

/// Posterior summary of one parameter after adjustment.
#[derive(Clone, Debug)]
pub struct AbcEstimate {
    pub samples: WeightedSamples,
    pub adjusted: Adjusted,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
    pub ess: f64,
}

impl AbcEstimate {
    fn from_samples(samples: WeightedSamples) -> Result<Self> {
        let adjusted = regression_adjust(&samples)?;
        let q = |p| weighted_quantile(&adjusted.values, &samples.weights, p);
        Ok(Self { median: q(0.5)?, lower: q(0.025)?, upper: q(0.975)?, ess: abc_ess(&samples.weights)?, samples, adjusted })
    }
}

/// A synthetic pool prepared for repeated ABC queries.
#[derive(Clone, Debug)]
pub struct AbcPool {
    c: Vec<f64>,
    sigma2: Vec<f64>,
    stats_c: Vec<Vec<f64>>,
    stats_sigma: Vec<Vec<f64>>,
    scale_c: StatScale,
    scale_sigma: StatScale,
}

impl AbcPool {
    pub fn new(records: &[SimRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InsufficientSamples("empty synthetic pool".into()));
        }
        let stats_c: Vec<Vec<f64>> = records.iter().map(|r| r.s_c.clone()).collect();
        let stats_sigma: Vec<Vec<f64>> = records.iter().map(|r| vec![r.s_sigma]).collect();
        Ok(Self {
            c: records.iter().map(|r| r.c).collect(),
            sigma2: records.iter().map(|r| r.sigma2).collect(),
            scale_c: StatScale::from_pool(&stats_c)?,
            scale_sigma: StatScale::from_pool(&stats_sigma)?,
            stats_c,
            stats_sigma,
        })
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    pub fn reject(&self, kind: StatKind, obs: &[f64], d: f64) -> Result<WeightedSamples> {
        match kind {
            StatKind::C => abc_reject_scaled(obs, &self.c, &self.stats_c, &self.scale_c, d),
            StatKind::Sigma2 => abc_reject_scaled(obs, &self.sigma2, &self.stats_sigma, &self.scale_sigma, d),
        }
    }

    pub fn estimate(&self, kind: StatKind, obs: &[f64], d: f64) -> Result<AbcEstimate> {
        AbcEstimate::from_samples(self.reject(kind, obs, d)?)
    }

    /// Estimates `(c, sigma2)` for an observed dataset.
    pub fn estimate_data(&self, data: &DataMatrix, d: f64) -> Result<(AbcEstimate, AbcEstimate)> {
        let sc = summary_c(data)?;
        let ss = summary_sigma(data)?;
        Ok((self.estimate(StatKind::C, sc.as_slice(), d)?, self.estimate(StatKind::Sigma2, &[ss], d)?))
    }
}
