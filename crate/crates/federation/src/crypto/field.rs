//! Multiplicative secret sharing over Z*_p, plus the additive pair over Z_p.

use rand::Rng;

use crate::error::{ProtocolError, Result};

/// 2^61 - 1.
pub const MERSENNE_61: u64 = (1 << 61) - 1;

/// The group Z*_p. Elements are `1..p`; `p` must be an odd prime below 2^63.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupParams {
    p: u64,
}

impl Default for GroupParams {
    fn default() -> Self {
        GroupParams { p: MERSENNE_61 }
    }
}

impl GroupParams {
    pub fn new(p: u64) -> Result<Self> {
        if p < 3 || p >= 1 << 63 || !is_prime(p) {
            return Err(ProtocolError::Invalid(format!("{p} is not a usable prime modulus")));
        }
        Ok(GroupParams { p })
    }

    pub fn modulus(&self) -> u64 {
        self.p
    }

    pub fn contains(&self, x: u64) -> bool {
        x >= 1 && x < self.p
    }

    fn check(&self, x: u64) -> Result<u64> {
        if self.contains(x) {
            Ok(x)
        } else {
            Err(ProtocolError::FieldElement(x))
        }
    }

    pub fn mul(&self, a: u64, b: u64) -> u64 {
        ((a as u128 * b as u128) % self.p as u128) as u64
    }

    pub fn pow(&self, base: u64, mut exp: u64) -> u64 {
        let mut acc = 1;
        let mut b = base % self.p;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, b);
            }
            b = self.mul(b, b);
            exp >>= 1;
        }
        acc
    }

    /// Fermat inverse `x^(p-2)`.
    pub fn inv(&self, x: u64) -> Result<u64> {
        Ok(self.pow(self.check(x)?, self.p - 2))
    }

    pub fn random_element<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        rng.random_range(1..self.p)
    }

    /// `k` shares whose product is `secret`; the first `k - 1` are uniform.
    pub fn split<R: Rng + ?Sized>(&self, secret: u64, k: usize, rng: &mut R) -> Result<Vec<u64>> {
        if k < 2 {
            return Err(ProtocolError::Invalid("at least two shares are needed".into()));
        }
        let forced: Vec<u64> = (0..k - 1).map(|_| self.random_element(rng)).collect();
        self.split_with(secret, &forced)
    }

    /// Completes the given leading shares with the one share that makes the
    /// product equal to `secret`.
    pub fn split_with(&self, secret: u64, leading: &[u64]) -> Result<Vec<u64>> {
        self.check(secret)?;
        if leading.is_empty() {
            return Err(ProtocolError::Invalid("at least two shares are needed".into()));
        }
        let mut prod = 1;
        for &s in leading {
            prod = self.mul(prod, self.check(s)?);
        }
        let last = self.mul(secret, self.inv(prod)?);
        let mut shares = leading.to_vec();
        shares.push(last);
        Ok(shares)
    }

    pub fn reconstruct(&self, shares: &[u64]) -> Result<u64> {
        shares.iter().try_fold(1, |acc, &s| Ok(self.mul(acc, self.check(s)?)))
    }

    /// Additive shares over Z_p: uniform leading shares, sum equal to `secret`.
    pub fn additive_split<R: Rng + ?Sized>(&self, secret: u64, k: usize, rng: &mut R) -> Result<Vec<u64>> {
        if k < 2 || secret >= self.p {
            return Err(ProtocolError::Invalid(format!("cannot split {secret} into {k} additive shares")));
        }
        let mut shares: Vec<u64> = (0..k - 1).map(|_| rng.random_range(0..self.p)).collect();
        let sum = shares.iter().fold(0, |acc, &s| (acc + s) % self.p);
        shares.push((secret + self.p - sum) % self.p);
        Ok(shares)
    }

    pub fn additive_reconstruct(&self, shares: &[u64]) -> u64 {
        shares.iter().fold(0, |acc, &s| (acc + s % self.p) % self.p)
    }
}

fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for p in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n % p == 0 {
            return n == p;
        }
    }
    // Deterministic Miller-Rabin for 64-bit inputs.
    let mut d = n - 1;
    let mut s = 0;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    let g = GroupParams { p: n };
    'witness: for a in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut x = g.pow(a, d);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = g.mul(x, x);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn small_field_worked_example() {
        let g = GroupParams::new(31).unwrap();
        assert_eq!(g.inv(7).unwrap(), 9);
        assert_eq!(g.pow(7, 29), 9);
        assert_eq!(g.mul(7, 9), 1);
        assert_eq!(g.split_with(5, &[7]).unwrap(), vec![7, 14]);
        assert_eq!(g.mul(7, 14), 5);
        assert_eq!(g.split_with(1, &[1]).unwrap(), vec![1, 1]);
    }

    #[test]
    fn zero_and_out_of_range_are_rejected() {
        let g = GroupParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(g.split(0, 2, &mut rng), Err(ProtocolError::FieldElement(0)));
        assert!(g.split(5, 1, &mut rng).is_err());
        assert!(g.reconstruct(&[MERSENNE_61]).is_err());
        assert!(GroupParams::new(33).is_err());
        assert!(GroupParams::new(MERSENNE_61).is_ok());
    }

    #[test]
    fn additive_pair() {
        let g = GroupParams::new(31).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = g.additive_split(12, 2, &mut rng).unwrap();
        let b = g.additive_split(25, 2, &mut rng).unwrap();
        assert_eq!(g.additive_reconstruct(&a), 12);
        // share-wise addition reconstructs the sum
        let sum: Vec<u64> = a.iter().zip(&b).map(|(x, y)| (x + y) % 31).collect();
        assert_eq!(g.additive_reconstruct(&sum), (12 + 25) % 31);
    }
}
