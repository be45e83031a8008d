//! Keyed-hash tokens for variable and state names.

use hmac::{Hmac, KeyInit, Mac};
use rand::Rng;
use sha2::{Digest, Sha256};

/// A 32-byte salt. Equal (salt, name) pairs give equal tokens.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ObfuscationKey {
    salt: [u8; 32],
}

impl std::fmt::Debug for ObfuscationKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ObfuscationKey(..)")
    }
}

impl ObfuscationKey {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut salt = [0u8; 32];
        rng.fill(&mut salt);
        ObfuscationKey { salt }
    }

    pub fn from_salt(salt: [u8; 32]) -> Self {
        ObfuscationKey { salt }
    }

    pub fn from_hex(hex_salt: &str) -> Option<Self> {
        let bytes = hex::decode(hex_salt).ok()?;
        Some(ObfuscationKey {
            salt: bytes.try_into().ok()?,
        })
    }

    /// Salt derived by hashing length-prefixed parts.
    pub fn derive(parts: &[&[u8]]) -> Self {
        let mut h = Sha256::new();
        for p in parts {
            h.update((p.len() as u64).to_le_bytes());
            h.update(p);
        }
        ObfuscationKey { salt: h.finalize().into() }
    }

    pub fn salt_hex(&self) -> String {
        hex::encode(self.salt)
    }

    fn mac(&self, parts: &[&[u8]]) -> String {
        let mut m = <Hmac<Sha256> as KeyInit>::new_from_slice(&self.salt).expect("hmac accepts any key length");
        for p in parts {
            m.update(&(p.len() as u64).to_le_bytes());
            m.update(p);
        }
        hex::encode(m.finalize().into_bytes())
    }

    /// 64 hex characters.
    pub fn token(&self, name: &str) -> String {
        self.mac(&[b"var", name.as_bytes()])
    }

    pub fn state_token(&self, name: &str, state: &str) -> String {
        self.mac(&[b"state", name.as_bytes(), state.as_bytes()])
    }
}

pub fn obfuscate(name: &str, key: &ObfuscationKey) -> String {
    key.token(name)
}

/// Unsalted SHA-256 of a name, used by leakage scans.
pub fn plain_digest(name: &str) -> String {
    hex::encode(Sha256::digest(name.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_are_deterministic_and_salted() {
        let a = ObfuscationKey::from_salt([1; 32]);
        let b = ObfuscationKey::from_salt([2; 32]);
        assert_eq!(obfuscate("X", &a), obfuscate("X", &a));
        assert_ne!(obfuscate("X", &a), obfuscate("X", &b));
        assert_eq!(obfuscate("X", &a).len(), 64);
        assert_ne!(a.state_token("X", "t"), a.state_token("X", "f"));
        assert_eq!(ObfuscationKey::from_hex(&a.salt_hex()), Some(a));
    }
}
