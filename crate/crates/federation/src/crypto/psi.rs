//! Diffie-Hellman private set intersection.
//!
//! Elements are hashed into the quadratic residues of a 2048-bit safe-prime
//! group and blinded with a secret exponent. Each side sends its blinded set,
//! then returns the peer's set raised to its own exponent. An element is in
//! the intersection when its doubly blinded value appears in both lists.
//! Only group elements cross the wire.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::seq::SliceRandom;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{ProtocolError, Result};
use crate::netsim::wire::{PsiBlinded, PsiDoubleBlinded};
use crate::netsim::{Transport, WireMessage};

/// RFC 3526 group 14 (2048-bit MODP) prime. Published; safe prime.
pub const RFC3526_2048_HEX: &str = "\
FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74020BBEA63B139B22514A08798E3404DD\
EF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED\
EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF0598DA48361C55D39A69163FA8FD24CF5F\
83655D23DCA3AD961C62F356208552BB9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B\
E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF6955817183995497CEA956AE515D2261898FA0510\
15728E5A8AACAA68FFFFFFFFFFFFFFFF";

/// Secret exponents are drawn with this many random bits.
const EXPONENT_BITS: usize = 256;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PsiGroup {
    p: BigUint,
}

impl Default for PsiGroup {
    fn default() -> Self {
        PsiGroup {
            p: BigUint::parse_bytes(RFC3526_2048_HEX.as_bytes(), 16).expect("valid constant"),
        }
    }
}

impl PsiGroup {
    pub fn modulus(&self) -> &BigUint {
        &self.p
    }

    /// SHA-256 counter expansion to 2304 bits, reduced mod p, then squared.
    pub fn hash_to_group(&self, element: &[u8]) -> BigUint {
        let mut wide = Vec::with_capacity(9 * 32);
        for ctr in 0u32..9 {
            let mut h = Sha256::new();
            h.update(b"bnshare-psi-h2g");
            h.update(ctr.to_be_bytes());
            h.update(element);
            wide.extend_from_slice(&h.finalize());
        }
        let x = BigUint::from_bytes_be(&wide) % &self.p;
        x.modpow(&BigUint::from(2u32), &self.p)
    }

    fn check(&self, x: &BigUint) -> Result<()> {
        if x <= &BigUint::one() || x >= &self.p {
            return Err(ProtocolError::Psi("element outside the group".into()));
        }
        Ok(())
    }

    fn encode(x: &BigUint) -> String {
        x.to_str_radix(16)
    }

    fn decode(&self, s: &str) -> Result<BigUint> {
        let x = BigUint::parse_bytes(s.as_bytes(), 16).ok_or_else(|| ProtocolError::Psi("malformed element".into()))?;
        self.check(&x)?;
        Ok(x)
    }
}

/// One side of a session.
pub struct PsiParty {
    group: PsiGroup,
    secret: BigUint,
    /// Own elements in the (shuffled) order they are sent.
    elements: Vec<Vec<u8>>,
    blinded: Vec<BigUint>,
}

impl PsiParty {
    pub fn new<R: Rng + ?Sized>(group: PsiGroup, elements: &BTreeSet<Vec<u8>>, rng: &mut R) -> Self {
        let mut bytes = vec![0u8; EXPONENT_BITS / 8];
        let secret = loop {
            rng.fill(&mut bytes[..]);
            let s = BigUint::from_bytes_be(&bytes);
            if !s.is_zero() {
                break s;
            }
        };
        let mut elements: Vec<Vec<u8>> = elements.iter().cloned().collect();
        elements.shuffle(rng);
        let blinded = elements
            .iter()
            .map(|e| group.hash_to_group(e).modpow(&secret, &group.p))
            .collect();
        PsiParty {
            group,
            secret,
            elements,
            blinded,
        }
    }

    pub fn blinded(&self) -> Vec<String> {
        self.blinded.iter().map(PsiGroup::encode).collect()
    }

    /// Raises the peer's blinded elements to this side's secret, keeping order.
    pub fn double_blind(&self, peer: &[String]) -> Result<Vec<String>> {
        peer.iter()
            .map(|s| Ok(PsiGroup::encode(&self.group.decode(s)?.modpow(&self.secret, &self.group.p))))
            .collect()
    }

    /// Given the peer's return of our blinded list and the peer's list raised
    /// to our secret, yields each shared element with its doubly blinded value.
    pub fn intersect(&self, mine_doubled: &[String], theirs_doubled: &[String]) -> Result<BTreeMap<Vec<u8>, String>> {
        if mine_doubled.len() != self.elements.len() {
            return Err(ProtocolError::Psi("peer returned a list of the wrong length".into()));
        }
        let theirs: BTreeSet<&String> = theirs_doubled.iter().collect();
        let mut out = BTreeMap::new();
        for (e, d) in self.elements.iter().zip(mine_doubled) {
            self.group.decode(d)?;
            if theirs.contains(d) {
                out.insert(e.clone(), d.clone());
            }
        }
        Ok(out)
    }
}

/// What one side learns from a session.
#[derive(Clone, Debug, PartialEq)]
pub struct PsiOutcome {
    /// Shared element -> hex doubly blinded value (equal on both sides).
    pub shared: BTreeMap<Vec<u8>, String>,
    /// Digest of the four exchanged lists, equal on both sides.
    pub transcript_digest: [u8; 32],
}

impl PsiOutcome {
    /// Short public handle for a shared element.
    pub fn handle(&self, element: &[u8]) -> Option<String> {
        self.shared.get(element).map(|d| hex::encode(Sha256::digest(d.as_bytes())))
    }
}

fn digest(lists: [&[String]; 4]) -> [u8; 32] {
    let mut h = Sha256::new();
    for l in lists {
        h.update((l.len() as u64).to_le_bytes());
        for s in l {
            h.update((s.len() as u64).to_le_bytes());
            h.update(s.as_bytes());
        }
    }
    h.finalize().into()
}

/// Runs a full two-round session between `a` and `b` over `net`. Party `a`
/// must sort before `b`; both outcomes are returned.
pub fn run_psi<R: Rng + ?Sized>(
    net: &mut dyn Transport,
    session: &str,
    (a, set_a): (&str, &BTreeSet<Vec<u8>>),
    (b, set_b): (&str, &BTreeSet<Vec<u8>>),
    rng: &mut R,
) -> Result<(PsiOutcome, PsiOutcome)> {
    let group = PsiGroup::default();
    let pa = PsiParty::new(group.clone(), set_a, rng);
    let pb = PsiParty::new(group, set_b, rng);

    net.send(&WireMessage::new(session, a, b, &PsiBlinded { elements: pa.blinded() })?)?;
    net.send(&WireMessage::new(session, b, a, &PsiBlinded { elements: pb.blinded() })?)?;
    let at_b = net.recv(a, b)?.decode::<PsiBlinded>()?.elements;
    let at_a = net.recv(b, a)?.decode::<PsiBlinded>()?.elements;

    let for_a = pb.double_blind(&at_b)?;
    let for_b = pa.double_blind(&at_a)?;
    net.send(&WireMessage::new(session, b, a, &PsiDoubleBlinded { elements: for_a.clone() })?)?;
    net.send(&WireMessage::new(session, a, b, &PsiDoubleBlinded { elements: for_b.clone() })?)?;
    let mine_a = net.recv(b, a)?.decode::<PsiDoubleBlinded>()?.elements;
    let mine_b = net.recv(a, b)?.decode::<PsiDoubleBlinded>()?.elements;

    let d = digest([&pa.blinded(), &at_a, &mine_a, &mine_b]);
    let out_a = PsiOutcome {
        shared: pa.intersect(&mine_a, &for_b)?,
        transcript_digest: d,
    };
    let out_b = PsiOutcome {
        shared: pb.intersect(&mine_b, &for_a)?,
        transcript_digest: digest([&at_b, &pb.blinded(), &for_a, &for_b]),
    };
    Ok((out_a, out_b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::Bus;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(items: &[&str]) -> BTreeSet<Vec<u8>> {
        items.iter().map(|s| s.as_bytes().to_vec()).collect()
    }

    #[test]
    fn both_sides_learn_the_intersection() {
        let mut bus = Bus::with_parties(&["a", "b"]);
        bus.transcript_mut().keep_frames();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, y) = run_psi(&mut bus, "psi", ("a", &set(&["a1", "b1", "c1"])), ("b", &set(&["b1", "c1", "d1"])), &mut rng)
            .unwrap();
        let expect: BTreeSet<Vec<u8>> = set(&["b1", "c1"]);
        assert_eq!(x.shared.keys().cloned().collect::<BTreeSet<_>>(), expect);
        assert_eq!(y.shared.keys().cloned().collect::<BTreeSet<_>>(), expect);
        assert_eq!(x.shared, y.shared);
        assert_eq!(x.transcript_digest, y.transcript_digest);
        assert_eq!(x.handle(b"b1"), y.handle(b"b1"));
        for frame in bus.transcript().frames() {
            let text = String::from_utf8_lossy(frame);
            for e in ["a1", "b1", "c1", "d1"] {
                assert!(!text.contains(&format!("\"{e}\"")));
                assert!(!text.contains(&crate::crypto::obfuscate::plain_digest(e)));
            }
        }
    }

    #[test]
    fn disjoint_sets_still_exchange_every_element() {
        let mut bus = Bus::with_parties(&["a", "b"]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (x, _) = run_psi(&mut bus, "psi", ("a", &set(&["p", "q"])), ("b", &set(&["r"])), &mut rng).unwrap();
        assert!(x.shared.is_empty());
        assert_eq!(bus.transcript().records().len(), 4);
    }

    #[test]
    fn malformed_elements_abort() {
        let group = PsiGroup::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = PsiParty::new(group, &set(&["x"]), &mut rng);
        assert!(p.double_blind(&["1".into()]).is_err());
        assert!(p.double_blind(&["zz".into()]).is_err());
    }
}
