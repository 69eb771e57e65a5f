//! Dirichlet diffusion tree inference for matrix-valued responses: data
//! simulation, ABC estimation of the Euclidean parameters, Metropolis-Hastings
//! sampling of trees and posterior summaries.

pub mod abc;
pub mod cluster;
pub mod data;
pub mod error;
pub mod generate;
pub mod ingest;
pub mod mh;
pub mod stats;
pub mod summaries;
pub mod tree;

pub use abc::{AbcEstimate, AbcPool, SimRecord, StatKind};
pub use data::{DataMatrix, EuclideanParams};
pub use error::{Error, Result};
pub use generate::{GammaSpec, RngSeed, SyntheticSpec};
pub use ingest::RawPdxTable;
pub use mh::{ChainConfig, ChainDiagnostics, ChainRun};
pub use summaries::{PcpCurve, PosteriorTreeSet, Projection, TreeSample};
pub use tree::{parse_newick, serialize_newick, NodeId, Tree, TreeCov};
