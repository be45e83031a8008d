//! The augmentation protocol: private overlap identification, local
//! alignment, secure column normalization and multiplicative sharing.
//!
//! Afterwards the entrywise product of the holders' share CPDs for every
//! overlap equals the weighted geometric-mean pool of their original CPDs,
//! so distributed inference over the shares reproduces the centralized union.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use bnshare_core::combine::align_cpd;
use bnshare_core::{Cpd, CpdMode, Factor, ModelError, Variable};
use rand::Rng;

use crate::crypto::norm::{secure_l1_hadamard, NormBackend};
use crate::crypto::psi::{run_psi, PsiOutcome};
use crate::crypto::real::random_mask;
use crate::crypto::ObfuscationKey;
use crate::error::{ProtocolError, Result};
use crate::netsim::wire::{OverlapAnnounce, ShareCommit, SharePurpose, StateUnion, WireFactor, WireVariable};
use crate::netsim::{Transport, WireMessage};
use crate::party::{Directory, HeldCpd, OverlapState, Party, PartySpec};
use crate::save::{expose_node, ExposureRegistry};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CabnMode {
    /// Every holder keeps a re-randomized share.
    #[default]
    Ccbnet,
    /// The first holder stores the pooled CPD.
    Ccbnetj,
    /// The first party outside the holder set stores the pooled CPD.
    CcbnetjOutside,
}

impl CabnMode {
    pub fn is_joined(self) -> bool {
        !matches!(self, CabnMode::Ccbnet)
    }
}

impl fmt::Display for CabnMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CabnMode::Ccbnet => "ccbnet",
            CabnMode::Ccbnetj => "ccbnetj",
            CabnMode::CcbnetjOutside => "ccbnetj-outside",
        })
    }
}

impl FromStr for CabnMode {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ccbnet" => Ok(CabnMode::Ccbnet),
            "ccbnetj" => Ok(CabnMode::Ccbnetj),
            "ccbnetj-outside" => Ok(CabnMode::CcbnetjOutside),
            other => Err(ProtocolError::Invalid(format!(
                "unknown augmentation mode `{other}` (expected ccbnet, ccbnetj or ccbnetj-outside)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CabnConfig {
    pub mode: CabnMode,
    pub backend: NormBackend,
    /// Local changes to an overlap's CPD or parents before it is re-augmented.
    pub change_threshold: usize,
}

impl Default for CabnConfig {
    fn default() -> Self {
        CabnConfig {
            mode: CabnMode::Ccbnet,
            backend: NormBackend::Evaluator,
            change_threshold: 1,
        }
    }
}

impl CabnConfig {
    pub fn with_mode(mode: CabnMode) -> Self {
        CabnConfig {
            mode,
            ..CabnConfig::default()
        }
    }
}

/// The augmented parties.
#[derive(Clone, Debug)]
pub struct Federation {
    pub config: CabnConfig,
    /// Sorted by id.
    pub parties: Vec<Party>,
    /// Declared union-parent edges that lie on a directed cycle.
    pub cycle_edges: BTreeSet<(String, String)>,
    pub exposures: ExposureRegistry,
}

impl Federation {
    pub fn mode(&self) -> CabnMode {
        self.config.mode
    }

    pub fn ids(&self) -> Vec<&str> {
        self.parties.iter().map(|p| p.id.as_str()).collect()
    }

    pub fn party(&self, id: &str) -> Option<&Party> {
        self.parties.iter().find(|p| p.id == id)
    }

    pub fn party_mut(&mut self, id: &str) -> Option<&mut Party> {
        self.parties.iter_mut().find(|p| p.id == id)
    }

    pub fn directory(&self) -> Directory {
        Directory::from_parties(&self.parties)
    }

    /// Overlap token to holder ids.
    pub fn overlaps(&self) -> BTreeMap<String, Vec<String>> {
        let mut out = BTreeMap::new();
        for p in &self.parties {
            for o in p.overlaps.values() {
                out.entry(o.token.clone()).or_insert_with(|| o.holders.clone());
            }
        }
        out
    }

    /// Overlaps due for re-augmentation under the configured threshold.
    pub fn stale_overlaps(&self) -> BTreeSet<String> {
        self.parties
            .iter()
            .flat_map(|p| p.stale_overlaps(self.config.change_threshold))
            .collect()
    }

    /// Runs the protocol again from the parties' current models, keeping
    /// their rate limits. Tokens change, so exposed names are registered
    /// again under the consent already given.
    pub fn reaugment<R: Rng + ?Sized>(&self, net: &mut dyn Transport, rng: &mut R) -> Result<Federation> {
        let specs = self.parties.iter().map(Party::into_spec).collect();
        let mut next = run_cabn(specs, &self.config, net, rng)?;
        for (new, old) in next.parties.iter_mut().zip(&self.parties) {
            new.rate_limit = old.rate_limit.clone();
        }
        let everyone: BTreeSet<String> = self.parties.iter().map(|p| p.id.clone()).collect();
        for name in self.exposures.names() {
            expose_node(&mut next, name, &everyone)?;
        }
        Ok(next)
    }
}

/// Runs the full protocol over `net`. Party ids must be distinct.
pub fn run_cabn<R: Rng + ?Sized>(
    mut specs: Vec<PartySpec>,
    config: &CabnConfig,
    net: &mut dyn Transport,
    rng: &mut R,
) -> Result<Federation> {
    if specs.len() < 2 {
        return Err(ProtocolError::Invalid("augmentation needs at least two parties".into()));
    }
    specs.sort_by(|a, b| a.id.cmp(&b.id));
    if specs.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(ProtocolError::Invalid("party ids must be distinct".into()));
    }
    for s in &specs {
        net.register(&s.id)?;
    }
    let mut parties: Vec<Party> = specs
        .into_iter()
        .map(|s| {
            let key = ObfuscationKey::random(rng);
            Party::new(s, key)
        })
        .collect();

    let agreed = identify(&parties, net, rng)?;
    for (party, overlaps) in parties.iter_mut().zip(&agreed) {
        let keys = overlaps.iter().map(|(n, (k, _))| (n.clone(), k.clone())).collect();
        party.assign_tokens(&keys)?;
    }

    // One entry per overlap: (token, holder indices), leader first.
    let mut sessions: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, overlaps) in agreed.iter().enumerate() {
        for (name, (_, holders)) in overlaps {
            if holders[0] != parties[i].id {
                continue;
            }
            let idx: Vec<usize> = holders
                .iter()
                .map(|h| parties.iter().position(|p| &p.id == h).expect("known holder"))
                .collect();
            let token = parties[i].token_var(name).expect("own variable").token().to_string();
            sessions.push((token, idx));
        }
    }
    sessions.sort();

    let mut declared_edges = BTreeSet::new();
    for (n, (token, holders)) in sessions.iter().enumerate() {
        let union = state_union(&mut parties, net, &agreed, token, holders)?;
        for p in &union {
            declared_edges.insert((p.name().to_string(), token.clone()));
        }
        normalize(&mut parties, net, n, token, holders, config.backend, rng)?;
        match config.mode {
            CabnMode::Ccbnet => share(&mut parties, net, n, token, holders, rng)?,
            CabnMode::Ccbnetj | CabnMode::CcbnetjOutside => {
                join(&mut parties, net, n, token, holders, config.mode)?;
            }
        }
    }

    Ok(Federation {
        config: *config,
        parties,
        cycle_edges: cycle_edges(&declared_edges),
        exposures: ExposureRegistry::default(),
    })
}

/// Pairwise PSI, then the leader of each overlap (smallest holder id) sends
/// every other holder the agreed salt. Returns, per party, its overlaps by
/// cleartext name with their key and sorted holder ids.
#[allow(clippy::type_complexity)]
fn identify<R: Rng + ?Sized>(
    parties: &[Party],
    net: &mut dyn Transport,
    rng: &mut R,
) -> Result<Vec<BTreeMap<String, (ObfuscationKey, Vec<String>)>>> {
    let n = parties.len();
    let sets: Vec<BTreeSet<Vec<u8>>> = parties
        .iter()
        .map(|p| p.network().variables().iter().map(|v| v.name().as_bytes().to_vec()).collect())
        .collect();
    let mut outcomes: BTreeMap<(usize, usize), PsiOutcome> = BTreeMap::new();
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&parties[i].id, &parties[j].id);
            let session = format!("cabn/psi/{a}/{b}");
            match run_psi(net, &session, (a, &sets[i]), (b, &sets[j]), rng) {
                Ok((x, y)) => {
                    outcomes.insert((i, j), x);
                    outcomes.insert((j, i), y);
                }
                Err(e) => log::warn!("intersection between {a} and {b} aborted, no overlaps between them: {e}"),
            }
        }
    }

    let holders_of = |i: usize, element: &[u8]| -> Vec<String> {
        let mut h: Vec<String> = (0..n)
            .filter(|&j| j == i || outcomes.get(&(i, j)).is_some_and(|o| o.shared.contains_key(element)))
            .map(|j| parties[j].id.clone())
            .collect();
        h.sort();
        h
    };

    let mut agreed: Vec<BTreeMap<String, (ObfuscationKey, Vec<String>)>> = vec![BTreeMap::new(); n];
    let mut announced = Vec::new();
    for i in 0..n {
        for element in &sets[i] {
            let holders = holders_of(i, element);
            if holders.len() < 2 || holders[0] != parties[i].id {
                continue;
            }
            let others: Vec<usize> = holders[1..]
                .iter()
                .map(|h| parties.iter().position(|p| &p.id == h).expect("known holder"))
                .collect();
            let mut parts: Vec<&[u8]> = vec![b"overlap-salt"];
            parts.extend(holders.iter().map(|h| h.as_bytes()));
            let digests: Vec<[u8; 32]> = others.iter().map(|&j| outcomes[&(i, j)].transcript_digest).collect();
            parts.extend(digests.iter().map(|d| d.as_slice()));
            let key = ObfuscationKey::derive(&parts);
            let name = String::from_utf8(element.clone()).expect("names are utf-8");
            for &j in &others {
                let msg = OverlapAnnounce {
                    handle: outcomes[&(i, j)].handle(element).expect("shared element"),
                    salt: key.salt_hex(),
                    holders: holders.clone(),
                };
                net.send(&WireMessage::new("cabn/announce", &parties[i].id, &parties[j].id, &msg)?)?;
                announced.push((i, j));
            }
            agreed[i].insert(name, (key, holders));
        }
    }
    for (i, j) in announced {
        let msg = net.recv(&parties[i].id, &parties[j].id)?.decode::<OverlapAnnounce>()?;
        let outcome = &outcomes[&(j, i)];
        let element = outcome
            .shared
            .keys()
            .find(|e| outcome.handle(e).as_deref() == Some(msg.handle.as_str()))
            .ok_or_else(|| ProtocolError::Unexpected("announcement for an element not in the intersection".into()))?;
        if holders_of(j, element) != msg.holders {
            return Err(ProtocolError::Unexpected("holder sets disagree".into()));
        }
        let key = ObfuscationKey::from_hex(&msg.salt).ok_or_else(|| ProtocolError::Wire("malformed salt".into()))?;
        let name = String::from_utf8(element.clone()).expect("names are utf-8");
        agreed[j].insert(name, (key, msg.holders));
    }
    Ok(agreed)
}

fn merge_parent(into: &mut BTreeMap<String, Variable>, v: Variable) -> Result<()> {
    match into.get(v.name()) {
        Some(known) if known != &v => Err(ModelError::IncompatibleStates(v.name().to_string()).into()),
        Some(_) => Ok(()),
        None => {
            into.insert(v.name().to_string(), v);
            Ok(())
        }
    }
}

/// Holders declare states, parents and weight to the leader, which answers
/// with the union parents and total weight. Every holder then aligns.
fn state_union(
    parties: &mut [Party],
    net: &mut dyn Transport,
    agreed: &[BTreeMap<String, (ObfuscationKey, Vec<String>)>],
    token: &str,
    holders: &[usize],
) -> Result<Vec<Variable>> {
    let name_at = |parties: &[Party], i: usize| parties[i].name_of(token).expect("holder models the overlap").to_string();
    let leader = holders[0];
    for &h in &holders[1..] {
        let cpd = parties[h].token_cpd(&name_at(parties, h)).expect("own cpd").clone();
        let msg = StateUnion {
            overlap: token.to_string(),
            weight: parties[h].weight,
            states: cpd.child().states().to_vec(),
            parents: cpd.parents().iter().map(WireVariable::from_variable).collect(),
        };
        net.send(&WireMessage::new("cabn/state-union", &parties[h].id, &parties[leader].id, &msg)?)?;
    }
    let own = parties[leader].token_cpd(&name_at(parties, leader)).expect("own cpd").clone();
    let mut total = parties[leader].weight;
    let mut union = BTreeMap::new();
    for p in own.parents() {
        merge_parent(&mut union, p.clone())?;
    }
    for &h in &holders[1..] {
        let msg = net.recv(&parties[h].id, &parties[leader].id)?.decode::<StateUnion>()?;
        if msg.overlap != token {
            return Err(ProtocolError::Unexpected("declaration for another overlap".into()));
        }
        if msg.states != own.child().states() {
            return Err(ModelError::IncompatibleStates(token.to_string()).into());
        }
        if !(msg.weight > 0.0 && msg.weight <= 1.0) {
            return Err(ProtocolError::Invalid(format!("weight {} outside (0, 1]", msg.weight)));
        }
        total += msg.weight;
        for p in &msg.parents {
            merge_parent(&mut union, p.to_variable()?)?;
        }
    }
    let union: Vec<Variable> = union.into_values().collect();
    let answer = StateUnion {
        overlap: token.to_string(),
        weight: total,
        states: own.child().states().to_vec(),
        parents: union.iter().map(WireVariable::from_variable).collect(),
    };
    for &h in &holders[1..] {
        net.send(&WireMessage::new("cabn/state-union", &parties[leader].id, &parties[h].id, &answer)?)?;
    }

    let ids: Vec<String> = holders.iter().map(|&h| parties[h].id.clone()).collect();
    for &h in holders {
        let (total, union) = if h == leader {
            (total, union.clone())
        } else {
            let msg = net.recv(&parties[leader].id, &parties[h].id)?.decode::<StateUnion>()?;
            (msg.weight, msg.parents.iter().map(WireVariable::to_variable).collect::<Result<Vec<_>>>()?)
        };
        let name = name_at(parties, h);
        debug_assert_eq!(agreed[h][&name].1, ids);
        let original = parties[h].token_cpd(&name).expect("own cpd").clone();
        let aligned = align_cpd(&original, &union, parties[h].weight / total)?;
        parties[h].overlaps.insert(
            token.to_string(),
            OverlapState {
                token: token.to_string(),
                name,
                holders: ids.clone(),
                total_weight: total,
                union_parents: union,
                original,
                share: Some(aligned),
                changes: 0,
            },
        );
    }
    Ok(union)
}

fn share_of<'a>(parties: &'a [Party], i: usize, token: &str) -> &'a Cpd {
    parties[i].overlaps[token].share.as_ref().expect("share present")
}

fn set_share(parties: &mut [Party], i: usize, token: &str, cpd: Option<Cpd>) {
    parties[i].overlaps.get_mut(token).expect("overlap state").share = cpd;
}

fn columns(cpd: &Cpd) -> Vec<Vec<f64>> {
    (0..cpd.columns()).map(|j| cpd.column(j)).collect()
}

/// Divides every holder's columns by the K-th root of the norm of the
/// columns' entrywise product.
fn normalize<R: Rng + ?Sized>(
    parties: &mut [Party],
    net: &mut dyn Transport,
    n: usize,
    token: &str,
    holders: &[usize],
    backend: NormBackend,
    rng: &mut R,
) -> Result<()> {
    let inputs: Vec<(&str, Vec<Vec<f64>>)> = holders
        .iter()
        .map(|&h| (parties[h].id.as_str(), columns(share_of(parties, h, token))))
        .collect();
    let outsider = parties
        .iter()
        .map(|p| p.id.as_str())
        .find(|id| !inputs.iter().any(|(h, _)| h == id));
    let session = format!("cabn/norm/{n}");
    let norms = secure_l1_hadamard(net, &session, token, &inputs, backend, outsider, rng)?;
    let k = holders.len() as f64;
    let scale: Vec<f64> = norms.iter().map(|s| s.powf(1.0 / k)).collect();
    for &h in holders {
        let cpd = share_of(parties, h, token);
        let cols = cpd.columns();
        let table: Vec<f64> = cpd.table().iter().enumerate().map(|(i, x)| x / scale[i % cols]).collect();
        let scaled = cpd.with_table(table, CpdMode::Share)?;
        set_share(parties, h, token, Some(scaled));
    }
    Ok(())
}

/// Ring re-randomization: holder `i` multiplies its share by a fresh mask
/// table and sends the mask to holder `i + 1`, which divides it out.
fn share<R: Rng + ?Sized>(
    parties: &mut [Party],
    net: &mut dyn Transport,
    n: usize,
    token: &str,
    holders: &[usize],
    rng: &mut R,
) -> Result<()> {
    let k = holders.len();
    let session = format!("cabn/share/{n}");
    for (pos, &h) in holders.iter().enumerate() {
        let cpd = share_of(parties, h, token).clone();
        let mask: Vec<f64> = (0..cpd.table().len()).map(|_| random_mask(rng)).collect();
        let mask_factor = Factor::new(cpd.to_factor().scope().to_vec(), mask.clone())?;
        let masked = cpd.with_table(cpd.table().iter().zip(&mask).map(|(x, m)| x * m).collect(), CpdMode::Share)?;
        set_share(parties, h, token, Some(masked));
        let next = holders[(pos + 1) % k];
        let msg = ShareCommit {
            overlap: token.to_string(),
            purpose: SharePurpose::Mask,
            factor: WireFactor::from_factor(&mask_factor),
        };
        net.send(&WireMessage::new(&session, &parties[h].id, &parties[next].id, &msg)?)?;
    }
    for (pos, &h) in holders.iter().enumerate() {
        let prev = holders[(pos + k - 1) % k];
        let msg = net.recv(&parties[prev].id, &parties[h].id)?.decode::<ShareCommit>()?;
        if msg.purpose != SharePurpose::Mask || msg.overlap != token {
            return Err(ProtocolError::Unexpected("expected a mask for this overlap".into()));
        }
        let cpd = share_of(parties, h, token).clone();
        let mask = msg.factor.to_factor()?;
        if mask.scope() != cpd.to_factor().scope() {
            return Err(ProtocolError::Unexpected("mask scope differs from the share".into()));
        }
        let unmasked = cpd.with_table(
            cpd.table().iter().zip(mask.values()).map(|(x, m)| x / m).collect(),
            CpdMode::Share,
        )?;
        set_share(parties, h, token, Some(unmasked));
    }
    Ok(())
}

/// Holders hand their normalized shares to the storing party, which keeps
/// the product as a probability-mode CPD.
fn join(
    parties: &mut [Party],
    net: &mut dyn Transport,
    n: usize,
    token: &str,
    holders: &[usize],
    mode: CabnMode,
) -> Result<()> {
    let keeper = match mode {
        CabnMode::CcbnetjOutside => (0..parties.len()).find(|i| !holders.contains(i)).unwrap_or(holders[0]),
        _ => holders[0],
    };
    let session = format!("cabn/join/{n}");
    let senders: Vec<usize> = holders.iter().copied().filter(|&h| h != keeper).collect();
    for &h in &senders {
        let msg = ShareCommit {
            overlap: token.to_string(),
            purpose: SharePurpose::Joint,
            factor: WireFactor::from_factor(&share_of(parties, h, token).to_factor()),
        };
        net.send(&WireMessage::new(&session, &parties[h].id, &parties[keeper].id, &msg)?)?;
    }
    let mut table: Option<(Cpd, Vec<f64>)> = holders
        .contains(&keeper)
        .then(|| {
            let own = share_of(parties, keeper, token).clone();
            let t = own.table().to_vec();
            (own, t)
        });
    for &h in &senders {
        let msg = net.recv(&parties[h].id, &parties[keeper].id)?.decode::<ShareCommit>()?;
        if msg.purpose != SharePurpose::Joint || msg.overlap != token {
            return Err(ProtocolError::Unexpected("expected a share for this overlap".into()));
        }
        let f = msg.factor.to_factor()?;
        let child = f.scope()[0].name().to_string();
        let parents: Vec<&str> = f.scope()[1..].iter().map(Variable::name).collect();
        let cpd = Cpd::from_factor(&f, &child, &parents, CpdMode::Share)?;
        table = Some(match table {
            None => {
                let t = cpd.table().to_vec();
                (cpd, t)
            }
            Some((shape, t)) => {
                if shape.to_factor().scope() != cpd.to_factor().scope() {
                    return Err(ProtocolError::Unexpected("share shapes differ".into()));
                }
                let t = t.iter().zip(cpd.table()).map(|(a, b)| a * b).collect();
                (shape, t)
            }
        });
    }
    let (shape, t) = table.expect("at least two holders");
    let pooled = shape
        .with_table(t, CpdMode::Share)?
        .normalize_columns()
        .map_err(|_| ProtocolError::DegenerateOverlap(token.to_string()))?;
    let ids: Vec<String> = holders.iter().map(|&h| parties[h].id.clone()).collect();
    for &h in holders {
        set_share(parties, h, token, None);
    }
    parties[keeper].held.insert(token.to_string(), HeldCpd { cpd: pooled, holders: ids });
    Ok(())
}

/// Edges on a directed cycle of the declared parent-to-overlap graph.
fn cycle_edges(edges: &BTreeSet<(String, String)>) -> BTreeSet<(String, String)> {
    let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (a, b) in edges {
        adj.entry(a).or_default().push(b);
    }
    let reaches = |from: &str, to: &str| {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([from]);
        while let Some(x) = queue.pop_front() {
            if x == to {
                return true;
            }
            if seen.insert(x) {
                queue.extend(adj.get(x).into_iter().flatten().copied());
            }
        }
        false
    };
    edges.iter().filter(|(a, b)| reaches(b, a)).cloned().collect()
}
