//! Discrete Bayesian networks: factors, CPDs, BIF input/output, exact
//! inference, sampling, union combination and party splits.

pub mod bif;
pub mod combine;
pub mod community;
pub mod error;
pub mod factor;
pub mod inference;
pub mod network;
pub mod partition;
pub mod sampling;

pub use combine::{combine_union, pool_cpd, union_structure, Combined, WeightedModel, PROBABILITY_FLOOR};
pub use error::{ModelError, Result};
pub use factor::{Factor, Variable};
pub use inference::{posterior, var_elim, Elimination, EliminationTask};
pub use network::{moralize, Cpd, CpdMode, Dag, DiscreteNetwork, MoralizedModel};
