//! Multiplicative shares of positive reals.
//!
//! Hiding is statistical: leading shares are log-uniform over
//! `[2^-MASK_EXPONENT, 2^MASK_EXPONENT]`.

use rand::Rng;

use crate::error::{ProtocolError, Result};

pub const MASK_EXPONENT: f64 = 20.0;

/// One log-uniform positive mask.
pub fn random_mask<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(-MASK_EXPONENT..=MASK_EXPONENT).exp2()
}

pub fn real_split<R: Rng + ?Sized>(secret: f64, k: usize, rng: &mut R) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(ProtocolError::Invalid("at least two shares are needed".into()));
    }
    let leading: Vec<f64> = (0..k - 1).map(|_| random_mask(rng)).collect();
    real_split_with(secret, &leading)
}

pub fn real_split_with(secret: f64, leading: &[f64]) -> Result<Vec<f64>> {
    if !(secret > 0.0 && secret.is_finite()) {
        return Err(ProtocolError::Invalid(format!("secret {secret} is not a positive real")));
    }
    if leading.is_empty() || leading.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(ProtocolError::Invalid("leading shares must be positive reals".into()));
    }
    let prod: f64 = leading.iter().product();
    let mut shares = leading.to_vec();
    shares.push(secret / prod);
    Ok(shares)
}

pub fn real_reconstruct(shares: &[f64]) -> f64 {
    shares.iter().product()
}
