use std::path::{Path, PathBuf};

use ddtrx_core::{ChainConfig, GammaSpec, SyntheticSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const DATA_DIR_ENV: &str = "DDTRX_DATA_DIR";

/// Settings of one inference run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Prior on the divergence parameter `c`.
    pub prior_c: GammaSpec,
    /// Prior on the precision `1 / sigma2`.
    pub prior_sigma2_inv: GammaSpec,
    pub n_syn: usize,
    /// Fraction of the synthetic pool kept by rejection.
    pub d: f64,
    pub chains: usize,
    pub iters: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Neighbours used to impute missing responses.
    pub k_neighbors: usize,
    pub untreated: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            prior_c: GammaSpec { shape: 2.0, rate: 2.0 },
            prior_sigma2_inv: GammaSpec { shape: 1.0, rate: 1.0 },
            n_syn: 20_000,
            d: 0.005,
            chains: 5,
            iters: 10_000,
            burn_in: 9_000,
            thin: 1,
            seed: 1,
            k_neighbors: ddtrx_core::ingest::DEFAULT_NEIGHBORS,
            untreated: ddtrx_core::ingest::DEFAULT_UNTREATED.to_string(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        GammaSpec::new(self.prior_c.shape, self.prior_c.rate)?;
        GammaSpec::new(self.prior_sigma2_inv.shape, self.prior_sigma2_inv.rate)?;
        let bad = |m: String| Err(CliError::Usage(m));
        if self.n_syn == 0 || self.chains == 0 || self.iters == 0 || self.k_neighbors == 0 {
            return bad("synthetic pool size, chains, iterations and neighbours must be positive".into());
        }
        if !(self.d > 0.0 && self.d <= 1.0) {
            return bad(format!("acceptance fraction must lie in (0, 1], got {}", self.d));
        }
        self.chain_config().validate()?;
        Ok(())
    }

    pub fn chain_config(&self) -> ChainConfig {
        ChainConfig { iters: self.iters, burn_in: self.burn_in, thin: self.thin }
    }

    pub fn synthetic_spec(&self, n_leaves: usize, n_cols: usize) -> SyntheticSpec {
        SyntheticSpec { n_leaves, n_cols, prior_c: self.prior_c, prior_sigma2_inv: self.prior_sigma2_inv }
    }
}

/// Resolves a relative path against the data directory when one is set.
pub fn resolve(path: &Path, data_dir: Option<&Path>) -> PathBuf {
    match data_dir {
        Some(root) if path.is_relative() => root.join(path),
        _ => path.to_path_buf(),
    }
}
