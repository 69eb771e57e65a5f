//! Metropolis-Hastings over trees at fixed Euclidean parameters, using
//! detach-and-regraft proposals drawn from the diffusion tree prior.

mod chain;
mod diagnostics;
mod proposal;

pub use chain::{
    log_acceptance_ratio, mh_step, pool_chains, run_chain, run_chains, ChainConfig, ChainDiagnostics, ChainRun,
    ChainState, StepOutcome,
};
pub use diagnostics::{geweke_z, mcmc_ess};
pub use proposal::{
    attach_log_density, detach, detach_at, detach_candidates, propose, reattach, sample_attach, AttachPoint, Detached,
    Proposal, MAX_ATTACH_DRAWS,
};
