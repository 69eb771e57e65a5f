use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::diagnostics::{geweke_z, mcmc_ess};
use super::proposal::{propose, Proposal};
use crate::data::DataMatrix;
use crate::error::{invalid, Error, Result};
use crate::generate::RngSeed;
use crate::summaries::{PosteriorTreeSet, TreeSample};
use crate::tree::{log_likelihood, log_tree_prior, Tree};

/// Current tree with its cached log prior and log likelihood.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub tree: Tree,
    pub log_prior: f64,
    pub log_lik: f64,
    pub iteration: usize,
}

impl ChainState {
    pub fn new(tree: Tree, data: &DataMatrix, c: f64, sigma2: f64) -> Result<Self> {
        let log_prior = log_tree_prior(&tree, c)?;
        let log_lik = log_likelihood(data, &tree, sigma2)?;
        Ok(Self { tree, log_prior, log_lik, iteration: 0 })
    }

    pub fn log_f(&self) -> f64 {
        self.log_prior + self.log_lik
    }
}

/// Log Metropolis-Hastings ratio of moving to a candidate with the given
/// scores: `f' - f + log q(u) - log q(v)`.
pub fn log_acceptance_ratio(state: &ChainState, proposal: &Proposal, cand_prior: f64, cand_lik: f64) -> f64 {
    (cand_prior + cand_lik) - state.log_f() + proposal.log_q_u - proposal.log_q_v
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepOutcome {
    pub accepted: bool,
    pub proposal_failed: bool,
}

/// One detach-and-regraft update at fixed `(c, sigma2)`. A candidate whose
/// covariance is singular is rejected; an attach draw that keeps failing
/// leaves the state unchanged and is reported.
pub fn mh_step<R: Rng + ?Sized>(
    state: &ChainState,
    data: &DataMatrix,
    c: f64,
    sigma2: f64,
    rng: &mut R,
) -> Result<(ChainState, StepOutcome)> {
    let mut next = state.clone();
    next.iteration += 1;
    let proposal = match propose(&state.tree, c, rng) {
        Ok(p) => p,
        Err(Error::ProposalFailure(_)) => return Ok((next, StepOutcome { accepted: false, proposal_failed: true })),
        Err(e) => return Err(e),
    };
    let scores = log_tree_prior(&proposal.candidate, c)
        .and_then(|p| log_likelihood(data, &proposal.candidate, sigma2).map(|l| (p, l)));
    let (cand_prior, cand_lik) = match scores {
        Ok(s) => s,
        Err(Error::SingularCovariance(..)) | Err(Error::InvalidArgument(_)) => {
            return Ok((next, StepOutcome::default()))
        }
        Err(e) => return Err(e),
    };
    let log_alpha = log_acceptance_ratio(state, &proposal, cand_prior, cand_lik);
    let u: f64 = rng.random();
    if u.ln() < log_alpha {
        next.tree = proposal.candidate;
        next.log_prior = cand_prior;
        next.log_lik = cand_lik;
        return Ok((next, StepOutcome { accepted: true, proposal_failed: false }));
    }
    Ok((next, StepOutcome::default()))
}

/// Iterations, discarded prefix and thinning of a chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub iters: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self { iters: 10_000, burn_in: 9_000, thin: 1 }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return invalid("thinning interval must be positive");
        }
        if self.iters > 0 && self.burn_in >= self.iters {
            return invalid(format!("burn-in {} must be below the iteration count {}", self.burn_in, self.iters));
        }
        Ok(())
    }
}

/// Output of one chain.
#[derive(Clone, Debug)]
pub struct ChainRun {
    pub chain: usize,
    pub samples: Vec<TreeSample>,
    pub accepted: usize,
    pub iterations: usize,
    pub proposal_failures: usize,
}

impl ChainRun {
    pub fn acceptance_rate(&self) -> f64 {
        if self.iterations == 0 {
            0.0
        } else {
            self.accepted as f64 / self.iterations as f64
        }
    }

    /// `log_prior + log_lik` of the retained draws.
    pub fn trace(&self) -> Vec<f64> {
        self.samples.iter().map(TreeSample::log_score).collect()
    }

    pub fn diagnostics(&self) -> ChainDiagnostics {
        let trace = self.trace();
        ChainDiagnostics {
            chain: self.chain,
            acceptance_rate: self.acceptance_rate(),
            geweke_z: geweke_z(&trace).ok(),
            ess: mcmc_ess(&trace).ok(),
            proposal_failures: self.proposal_failures,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub chain: usize,
    pub acceptance_rate: f64,
    pub geweke_z: Option<f64>,
    pub ess: Option<f64>,
    pub proposal_failures: usize,
}

/// Runs chain number `chain` from `init`. The random stream is the chain's
/// substream of `seed`, so chains are reproducible one by one.
pub fn run_chain(
    data: &DataMatrix,
    c: f64,
    sigma2: f64,
    init: &Tree,
    cfg: ChainConfig,
    seed: RngSeed,
    chain: usize,
) -> Result<ChainRun> {
    cfg.validate()?;
    let mut state = ChainState::new(init.clone(), data, c, sigma2)?;
    let mut rng = seed.substream(chain as u64);
    let mut run = ChainRun { chain, samples: Vec::new(), accepted: 0, iterations: cfg.iters, proposal_failures: 0 };
    for i in 0..cfg.iters {
        let (next, outcome) = mh_step(&state, data, c, sigma2, &mut rng)?;
        state = next;
        run.accepted += outcome.accepted as usize;
        run.proposal_failures += outcome.proposal_failed as usize;
        if i >= cfg.burn_in && (i - cfg.burn_in) % cfg.thin == 0 {
            run.samples.push(TreeSample {
                chain,
                iter: i + 1,
                tree: state.tree.clone(),
                log_prior: state.log_prior,
                log_lik: state.log_lik,
            });
        }
    }
    Ok(run)
}

/// Runs `n_chains` independent chains in parallel; output is in chain order.
pub fn run_chains(
    data: &DataMatrix,
    c: f64,
    sigma2: f64,
    init: &Tree,
    cfg: ChainConfig,
    seed: RngSeed,
    n_chains: usize,
) -> Result<Vec<ChainRun>> {
    if n_chains == 0 {
        return invalid("need at least one chain");
    }
    (0..n_chains).into_par_iter().map(|k| run_chain(data, c, sigma2, init, cfg, seed, k)).collect()
}

/// Pools the retained draws of all chains.
pub fn pool_chains(runs: &[ChainRun]) -> Result<PosteriorTreeSet> {
    PosteriorTreeSet::new(runs.iter().flat_map(|r| r.samples.iter().cloned()).collect())
}
