//! Per-party state: the private model, its token space and the overlap state
//! produced by the augmentation protocol.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use bnshare_core::{Cpd, DiscreteNetwork, Factor, Variable};

use crate::crypto::ObfuscationKey;
use crate::error::{ProtocolError, Result};

/// Zero-padded party id, so that string order equals numeric order.
pub fn party_id(i: usize) -> String {
    format!("p{i:02}")
}

/// A variable in token space together with the way back to cleartext.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenVar {
    /// Token name, state tokens sorted.
    pub variable: Variable,
    /// `perm[i]` is the cleartext state index of token state `i`.
    pub perm: Vec<usize>,
}

impl TokenVar {
    pub fn new(cleartext: &Variable, key: &ObfuscationKey) -> Result<TokenVar> {
        let mut states: Vec<(String, usize)> = cleartext
            .states()
            .iter()
            .enumerate()
            .map(|(i, s)| (key.state_token(cleartext.name(), s), i))
            .collect();
        states.sort();
        let variable = Variable::new(
            key.token(cleartext.name()),
            states.iter().map(|(t, _)| t.clone()).collect::<Vec<_>>(),
        )?;
        Ok(TokenVar {
            variable,
            perm: states.into_iter().map(|(_, i)| i).collect(),
        })
    }

    pub fn token(&self) -> &str {
        self.variable.name()
    }

    /// Token of the cleartext state with index `index`.
    pub fn state_token(&self, index: usize) -> Option<&str> {
        let pos = self.perm.iter().position(|&i| i == index)?;
        Some(&self.variable.states()[pos])
    }

    /// Reorders a distribution over the token states into cleartext order.
    pub fn to_cleartext_order(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; values.len()];
        for (i, &v) in values.iter().enumerate() {
            out[self.perm[i]] = v;
        }
        out
    }
}

/// Relabels a cleartext CPD into token space.
pub fn tokenize_cpd(cpd: &Cpd, tokens: &BTreeMap<String, TokenVar>) -> Result<Cpd> {
    let lookup = |name: &str| {
        tokens
            .get(name)
            .ok_or_else(|| ProtocolError::Invalid(format!("no token for a variable of `{}`", cpd.child().name())))
    };
    let f = cpd
        .to_factor()
        .relabel(|v| tokens.get(v.name()).map(|t| (t.variable.clone(), t.perm.clone())))?;
    let child = lookup(cpd.child().name())?.token().to_string();
    let parents = cpd
        .parents()
        .iter()
        .map(|p| Ok(lookup(p.name())?.token().to_string()))
        .collect::<Result<Vec<_>>>()?;
    let parents: Vec<&str> = parents.iter().map(String::as_str).collect();
    Ok(Cpd::from_factor(&f, &child, &parents, cpd.mode())?)
}

/// One party's view of an overlap variable after augmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct OverlapState {
    pub token: String,
    /// Cleartext name, known only to this party.
    pub name: String,
    pub holders: Vec<String>,
    pub total_weight: f64,
    /// Union of every holder's parents, in token space, sorted by token.
    pub union_parents: Vec<Variable>,
    /// Token-space original CPD.
    pub original: Cpd,
    /// Share CPD; `None` once handed over to the party storing the pooled CPD.
    pub share: Option<Cpd>,
    /// Local changes to the CPD or its parents since the last augmentation.
    pub changes: usize,
}

/// A pooled CPD stored on behalf of an overlap's holders.
#[derive(Clone, Debug, PartialEq)]
pub struct HeldCpd {
    pub cpd: Cpd,
    pub holders: Vec<String>,
}

/// Refuses queries that pin every union parent of a single overlap target.
#[derive(Debug, Default)]
pub struct RateLimit {
    pub threshold: usize,
    counters: Mutex<BTreeMap<(String, String), usize>>,
}

impl RateLimit {
    pub fn new(threshold: usize) -> Self {
        RateLimit {
            threshold,
            counters: Mutex::new(BTreeMap::new()),
        }
    }

    /// Counts a matching query; true when it must be refused.
    pub fn hit(&self, requester: &str, overlap: &str) -> bool {
        let mut c = self.counters.lock().expect("rate limit lock");
        let n = c.entry((requester.to_string(), overlap.to_string())).or_default();
        *n += 1;
        *n > self.threshold
    }

    pub fn count(&self, requester: &str, overlap: &str) -> usize {
        let c = self.counters.lock().expect("rate limit lock");
        c.get(&(requester.to_string(), overlap.to_string())).copied().unwrap_or(0)
    }
}

impl Clone for RateLimit {
    fn clone(&self) -> Self {
        RateLimit {
            threshold: self.threshold,
            counters: Mutex::new(self.counters.lock().expect("rate limit lock").clone()),
        }
    }
}

/// Input to the augmentation protocol.
#[derive(Clone, Debug, PartialEq)]
pub struct PartySpec {
    pub id: String,
    pub network: DiscreteNetwork,
    pub weight: f64,
}

#[derive(Clone, Debug)]
pub struct Party {
    pub id: String,
    pub weight: f64,
    network: DiscreteNetwork,
    key: ObfuscationKey,
    tokens: BTreeMap<String, TokenVar>,
    token_cpds: BTreeMap<String, Cpd>,
    pub overlaps: BTreeMap<String, OverlapState>,
    pub held: BTreeMap<String, HeldCpd>,
    observations: BTreeMap<String, BTreeMap<String, String>>,
    pub rate_limit: Option<RateLimit>,
}

impl Party {
    pub fn new(spec: PartySpec, key: ObfuscationKey) -> Self {
        Party {
            id: spec.id,
            weight: spec.weight,
            network: spec.network,
            key,
            tokens: BTreeMap::new(),
            token_cpds: BTreeMap::new(),
            overlaps: BTreeMap::new(),
            held: BTreeMap::new(),
            observations: BTreeMap::new(),
            rate_limit: None,
        }
    }

    pub fn network(&self) -> &DiscreteNetwork {
        &self.network
    }

    pub fn key(&self) -> &ObfuscationKey {
        &self.key
    }

    pub fn models(&self, name: &str) -> bool {
        self.network.variable(name).is_some()
    }

    /// Fixes the token space. `overlap_keys` maps overlap names to the key
    /// agreed with the other holders; every other variable uses the own key.
    pub fn assign_tokens(&mut self, overlap_keys: &BTreeMap<String, ObfuscationKey>) -> Result<()> {
        self.tokens.clear();
        for v in self.network.variables() {
            let key = overlap_keys.get(v.name()).unwrap_or(&self.key);
            self.tokens.insert(v.name().to_string(), TokenVar::new(v, key)?);
        }
        self.token_cpds = self
            .network
            .cpds()
            .iter()
            .map(|c| Ok((c.child().name().to_string(), tokenize_cpd(c, &self.tokens)?)))
            .collect::<Result<_>>()?;
        Ok(())
    }

    pub fn tokens(&self) -> &BTreeMap<String, TokenVar> {
        &self.tokens
    }

    pub fn token_var(&self, name: &str) -> Option<&TokenVar> {
        self.tokens.get(name)
    }

    pub fn token_cpd(&self, name: &str) -> Option<&Cpd> {
        self.token_cpds.get(name)
    }

    /// Cleartext name behind one of this party's tokens.
    pub fn name_of(&self, token: &str) -> Option<&str> {
        self.tokens.iter().find(|(_, t)| t.token() == token).map(|(n, _)| n.as_str())
    }

    fn overlap_names(&self) -> BTreeSet<&str> {
        self.overlaps.values().map(|o| o.name.as_str()).collect()
    }

    /// Token-space CPDs of the variables this party models alone.
    pub fn private_cpds(&self) -> Vec<&Cpd> {
        let shared = self.overlap_names();
        self.token_cpds
            .iter()
            .filter(|(n, _)| !shared.contains(n.as_str()))
            .map(|(_, c)| c)
            .collect()
    }

    /// Every token-space original CPD; what DOM runs on.
    pub fn original_factors(&self) -> Vec<Factor> {
        self.token_cpds.values().map(Cpd::to_factor).collect()
    }

    /// Private CPDs, current shares and stored pooled CPDs.
    pub fn augmented_factors(&self) -> Vec<Factor> {
        let mut out: Vec<Factor> = self.private_cpds().into_iter().map(Cpd::to_factor).collect();
        out.extend(self.overlaps.values().filter_map(|o| o.share.as_ref()).map(Cpd::to_factor));
        out.extend(self.held.values().map(|h| h.cpd.to_factor()));
        out
    }

    /// Variables the party must never sum out locally: its overlaps (held,
    /// handed over or stored for others) and their union parents.
    pub fn protected_tokens(&self) -> BTreeSet<String> {
        let mut keep = BTreeSet::new();
        for o in self.overlaps.values() {
            keep.insert(o.token.clone());
            keep.extend(o.union_parents.iter().map(|v| v.name().to_string()));
        }
        for h in self.held.values() {
            keep.insert(h.cpd.child().name().to_string());
            keep.extend(h.cpd.parents().iter().map(|v| v.name().to_string()));
        }
        keep
    }

    pub fn defend_rate_limit(&mut self, threshold: usize) {
        self.rate_limit = Some(RateLimit::new(threshold));
    }

    /// Records a local observation under a key shared with other parties.
    pub fn observe(&mut self, key: &str, variable: &str, state: &str) -> Result<()> {
        let v = self
            .network
            .variable(variable)
            .ok_or_else(|| ProtocolError::Invalid(format!("party {} does not model that variable", self.id)))?;
        v.state_index_or_err(state)?;
        self.observations
            .entry(key.to_string())
            .or_default()
            .insert(variable.to_string(), state.to_string());
        Ok(())
    }

    /// Observations under `key` as token-space (variable, state) pairs.
    pub fn observations_for(&self, key: &str) -> Vec<(Variable, usize)> {
        let Some(obs) = self.observations.get(key) else {
            return vec![];
        };
        obs.iter()
            .filter_map(|(name, state)| {
                let tv = self.tokens.get(name)?;
                let idx = self.network.variable(name)?.state_index(state)?;
                let pos = tv.perm.iter().position(|&i| i == idx)?;
                Some((tv.variable.clone(), pos))
            })
            .collect()
    }

    /// Replaces a local CPD. Overlaps whose CPD or parents are touched count a change.
    pub fn update_cpd(&mut self, cpd: Cpd) -> Result<()> {
        let name = cpd.child().name().to_string();
        let mut cpds: Vec<Cpd> = self.network.cpds().to_vec();
        let slot = cpds
            .iter_mut()
            .find(|c| c.child().name() == name)
            .ok_or_else(|| ProtocolError::Invalid(format!("party {} has no CPD for that variable", self.id)))?;
        *slot = cpd;
        let net_name = self.network.name().to_string();
        self.network = DiscreteNetwork::new(net_name, cpds)?;
        let token = self.tokens.get(&name).map(|t| t.token().to_string());
        for o in self.overlaps.values_mut() {
            if o.name == name || token.as_deref().is_some_and(|t| o.union_parents.iter().any(|p| p.name() == t)) {
                o.changes += 1;
            }
        }
        if !self.tokens.is_empty() {
            let c = self.network.cpd(&name).expect("just inserted");
            self.token_cpds.insert(name, tokenize_cpd(c, &self.tokens)?);
        }
        Ok(())
    }

    /// Overlaps whose change counter reached `threshold`.
    pub fn stale_overlaps(&self, threshold: usize) -> Vec<String> {
        self.overlaps
            .values()
            .filter(|o| o.changes >= threshold.max(1))
            .map(|o| o.token.clone())
            .collect()
    }

    pub(crate) fn into_spec(&self) -> PartySpec {
        PartySpec {
            id: self.id.clone(),
            network: self.network.clone(),
            weight: self.weight,
        }
    }
}

/// Indicator factor pinning `var` to state index `state`.
pub fn indicator(var: &Variable, state: usize) -> Factor {
    let mut values = vec![0.0; var.cardinality()];
    values[state] = 1.0;
    Factor::new(vec![var.clone()], values).expect("valid indicator")
}

/// Simulation-only map from cleartext names to tokens across all parties.
/// The harness uses it to phrase queries and to read posteriors back; no
/// protocol participant holds it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Directory {
    by_name: BTreeMap<String, (Variable, TokenVar)>,
    by_token: BTreeMap<String, String>,
}

impl Directory {
    pub fn from_parties(parties: &[Party]) -> Self {
        let mut d = Directory::default();
        for p in parties {
            for (name, tv) in &p.tokens {
                let cleartext = p.network.variable(name).expect("own variable").clone();
                d.by_token.insert(tv.token().to_string(), name.clone());
                d.by_name.entry(name.clone()).or_insert((cleartext, tv.clone()));
            }
        }
        d
    }

    pub fn token(&self, name: &str) -> Option<&TokenVar> {
        self.by_name.get(name).map(|(_, t)| t)
    }

    pub fn name(&self, token: &str) -> Option<&str> {
        self.by_token.get(token).map(String::as_str)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.by_name.keys().map(String::as_str)
    }

    /// Cleartext (variable, state) to token (variable, state).
    pub fn encode(&self, name: &str, state: &str) -> Result<(String, String)> {
        let (v, t) = self
            .by_name
            .get(name)
            .ok_or_else(|| ProtocolError::Invalid(format!("unknown variable `{name}`")))?;
        let idx = v.state_index_or_err(state)?;
        Ok((t.token().to_string(), t.state_token(idx).expect("valid index").to_string()))
    }

    pub fn encode_evidence(&self, evidence: &BTreeMap<String, String>) -> Result<BTreeMap<String, String>> {
        evidence.iter().map(|(n, s)| self.encode(n, s)).collect()
    }

    /// A token-space posterior over a single variable, in cleartext state order.
    pub fn decode_marginal(&self, posterior: &Factor) -> Result<Vec<f64>> {
        let [v] = posterior.scope() else {
            return Err(ProtocolError::Invalid("expected a single-variable posterior".into()));
        };
        let name = self
            .name(v.name())
            .ok_or_else(|| ProtocolError::Invalid("posterior over an unknown token".into()))?;
        Ok(self.by_name[name].1.to_cleartext_order(posterior.values()))
    }
}
