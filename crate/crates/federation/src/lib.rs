//! Confidential augmentation of partitioned Bayesian networks and
//! distributed inference over the augmented parties.

pub mod attacks;
pub mod cabn;
pub mod crypto;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod netsim;
pub mod party;
pub mod save;

pub use attacks::{cabn_attack, save_attack, AttackReport};
pub use cabn::{run_cabn, CabnConfig, CabnMode, Federation};
pub use error::{ProtocolError, Result};
pub use party::{party_id, Directory, Party, PartySpec};
pub use save::{count_messages, expose_node, run_query, Query, QueryOutcome, Scheduler, VarRef, Variant};
