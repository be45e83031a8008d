pub mod field;
pub mod norm;
pub mod obfuscate;
pub mod psi;
pub mod real;

pub use field::{GroupParams, MERSENNE_61};
pub use norm::{secure_l1_hadamard, NormBackend};
pub use obfuscate::{obfuscate, plain_digest, ObfuscationKey};
pub use psi::{run_psi, PsiGroup, PsiOutcome};
