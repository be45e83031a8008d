//! Distributed inference over augmented parties.
//!
//! The requester sends the query to every other party. Each party reduces its
//! factors by the evidence and sums out only what it alone models, keeping
//! targets, overlap variables and their union parents, and returns the
//! leftover factors. The requester multiplies everything it received with
//! its own leftovers and finishes the elimination; shares of pooled CPDs
//! recombine inside that product. A query costs `2N - 2` messages.
//!
//! DOM instead has every party answer with its own normalized posterior over
//! the targets it models, and pools those by weighted geometric mean.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use bnshare_core::{pool_cpd, var_elim, Cpd, CpdMode, EliminationTask, Factor};
use serde::{Deserialize, Serialize};

use crate::cabn::Federation;
use crate::error::{ProtocolError, Result};
use crate::netsim::wire::{MessageKind, Payload, WireFactor};
use crate::netsim::{Transport, WireMessage};
use crate::party::{indicator, Party};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Ccbnet,
    Ccbnetj,
    Dom,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Ccbnet => "ccbnet",
            Variant::Ccbnetj => "ccbnetj",
            Variant::Dom => "dom",
        })
    }
}

impl FromStr for Variant {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ccbnet" => Ok(Variant::Ccbnet),
            "ccbnetj" => Ok(Variant::Ccbnetj),
            "dom" => Ok(Variant::Dom),
            other => Err(ProtocolError::Invalid(format!(
                "unknown query variant `{other}` (expected ccbnet, ccbnetj or dom)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryEnvelope {
    pub request: String,
    pub targets: Vec<String>,
    /// Token to state token.
    pub evidence: BTreeMap<String, String>,
    pub shared_key: Option<String>,
    pub variant: Variant,
    pub hardened: bool,
}

impl QueryEnvelope {
    pub fn validate(&self) -> Result<()> {
        if self.targets.is_empty() {
            return Err(ProtocolError::Invalid("a query needs at least one target".into()));
        }
        if let Some(t) = self.targets.iter().find(|t| self.evidence.contains_key(*t)) {
            return Err(ProtocolError::Invalid(format!("target {t} is also evidence")));
        }
        Ok(())
    }
}

impl Payload for QueryEnvelope {
    const KIND: MessageKind = MessageKind::Query;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplyEnvelope {
    pub request: String,
    pub weight: f64,
    /// Set when the party refuses to answer.
    pub refused: Option<String>,
    /// Explicitly empty when the party has nothing to contribute.
    pub factors: Vec<WireFactor>,
}

impl Payload for ReplyEnvelope {
    const KIND: MessageKind = MessageKind::Reply;

    fn value_count(&self) -> usize {
        self.factors.iter().map(|f| f.values.len()).sum()
    }
}

/// A variable addressed by token, or by a cleartext name its holders exposed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum VarRef {
    Token(String),
    Exposed(String),
}

/// A query before name resolution. Evidence states are state tokens for
/// token references and cleartext states for exposed ones.
#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub targets: Vec<VarRef>,
    pub evidence: Vec<(VarRef, String)>,
    pub shared_key: Option<String>,
    pub variant: Variant,
    pub hardened: bool,
}

impl Query {
    pub fn tokens(targets: &[&str], evidence: &BTreeMap<String, String>, variant: Variant) -> Self {
        Query {
            targets: targets.iter().map(|t| VarRef::Token(t.to_string())).collect(),
            evidence: evidence
                .iter()
                .map(|(v, s)| (VarRef::Token(v.clone()), s.clone()))
                .collect(),
            shared_key: None,
            variant,
            hardened: false,
        }
    }

    pub fn hardened(mut self, on: bool) -> Self {
        self.hardened = on;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Exposure {
    pub name: String,
    pub token: String,
    /// (cleartext state, state token), cleartext order.
    pub states: Vec<(String, String)>,
}

/// Names every holder agreed to expose; replicated at every party.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExposureRegistry {
    entries: BTreeMap<String, Exposure>,
}

impl ExposureRegistry {
    pub fn get(&self, name: &str) -> Option<&Exposure> {
        self.entries.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// A posterior over an exposed variable's token as (state, probability).
    pub fn decode(&self, name: &str, posterior: &Factor) -> Result<Vec<(String, f64)>> {
        let e = self
            .get(name)
            .ok_or_else(|| ProtocolError::Invalid(format!("`{name}` is not exposed")))?;
        let [v] = posterior.scope() else {
            return Err(ProtocolError::Invalid("expected a single-variable posterior".into()));
        };
        if v.name() != e.token {
            return Err(ProtocolError::Invalid("posterior is over another variable".into()));
        }
        Ok(e.states
            .iter()
            .map(|(s, t)| (s.clone(), posterior.values()[v.state_index(t).expect("registered state")]))
            .collect())
    }
}

/// Registers `name` as queryable in cleartext. Every party modeling it must
/// be in `consenting`; its position in any network stays hidden.
pub fn expose_node(fed: &mut Federation, name: &str, consenting: &BTreeSet<String>) -> Result<()> {
    let holders: Vec<&Party> = fed.parties.iter().filter(|p| p.models(name)).collect();
    let first = holders
        .first()
        .ok_or_else(|| ProtocolError::Invalid("no party models the variable".into()))?;
    if holders.iter().any(|p| !consenting.contains(&p.id)) {
        return Err(ProtocolError::Consent(name.to_string()));
    }
    let tv = first.token_var(name).expect("holder has a token");
    let var = first.network().variable(name).expect("holder models it");
    let states = var
        .states()
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), tv.state_token(i).expect("valid index").to_string()))
        .collect();
    fed.exposures.entries.insert(
        name.to_string(),
        Exposure {
            name: name.to_string(),
            token: tv.token().to_string(),
            states,
        },
    );
    Ok(())
}

fn resolve(query: &Query, registry: &ExposureRegistry, requester: &str, request: &str) -> Result<QueryEnvelope> {
    let unknown = |n: &str| ProtocolError::Refused {
        party: requester.to_string(),
        reason: format!("unknown variable `{n}`"),
    };
    let target = |r: &VarRef| match r {
        VarRef::Token(t) => Ok(t.clone()),
        VarRef::Exposed(n) => registry.get(n).map(|e| e.token.clone()).ok_or_else(|| unknown(n)),
    };
    let targets = query.targets.iter().map(target).collect::<Result<Vec<_>>>()?;
    let mut evidence = BTreeMap::new();
    for (r, state) in &query.evidence {
        let (var, st) = match r {
            VarRef::Token(t) => (t.clone(), state.clone()),
            VarRef::Exposed(n) => {
                let e = registry.get(n).ok_or_else(|| unknown(n))?;
                let st = e
                    .states
                    .iter()
                    .find(|(s, _)| s == state)
                    .map(|(_, t)| t.clone())
                    .ok_or_else(|| ProtocolError::Invalid(format!("unknown state `{state}` of `{n}`")))?;
                (e.token.clone(), st)
            }
        };
        evidence.insert(var, st);
    }
    let env = QueryEnvelope {
        request: request.to_string(),
        targets,
        evidence,
        shared_key: query.shared_key.clone(),
        variant: query.variant,
        hardened: query.hardened,
    };
    env.validate()?;
    Ok(env)
}

/// Parents a rate-limited overlap target must have in the evidence to match.
fn guarded_parents<'a>(party: &'a Party, target: &str) -> Option<Vec<&'a str>> {
    if let Some(o) = party.overlaps.get(target) {
        return Some(o.union_parents.iter().map(|v| v.name()).collect());
    }
    party.held.get(target).map(|h| h.cpd.parent_names())
}

fn scope_names(factors: &[Factor]) -> BTreeSet<String> {
    factors
        .iter()
        .flat_map(|f| f.scope().iter().map(|v| v.name().to_string()))
        .collect()
}

/// One party's answer to a query.
pub fn local_solve(party: &Party, requester: &str, q: &QueryEnvelope) -> Result<ReplyEnvelope> {
    q.validate()?;
    let reply = |factors: Vec<Factor>| ReplyEnvelope {
        request: q.request.clone(),
        weight: party.weight,
        refused: None,
        factors: factors.iter().map(WireFactor::from_factor).collect(),
    };

    if let (Some(limit), [target]) = (&party.rate_limit, q.targets.as_slice()) {
        if let Some(parents) = guarded_parents(party, target) {
            if parents.iter().all(|p| q.evidence.contains_key(*p)) && limit.hit(requester, target) {
                return Ok(ReplyEnvelope {
                    request: q.request.clone(),
                    weight: party.weight,
                    refused: Some("request limit reached for this variable".into()),
                    factors: vec![],
                });
            }
        }
    }

    let mut evidence = q.evidence.clone();
    let mut pinned = Vec::new();
    if let Some(key) = &q.shared_key {
        for (var, state) in party.observations_for(key) {
            if q.targets.iter().any(|t| t == var.name()) || evidence.contains_key(var.name()) {
                continue;
            }
            if q.variant == Variant::Dom {
                evidence.insert(var.name().to_string(), var.states()[state].clone());
            } else {
                // Kept as a factor so every party's copy of the dimension agrees.
                pinned.push(indicator(&var, state));
            }
        }
    }

    if q.variant == Variant::Dom {
        let factors = party.original_factors();
        let modeled = scope_names(&factors);
        let mut out = Vec::new();
        for t in q.targets.iter().filter(|t| modeled.contains(*t)) {
            let task = EliminationTask::new(vec![t.clone()], evidence.clone(), factors.clone());
            out.push(var_elim(&task)?.into_posterior().expect("full elimination"));
        }
        return Ok(reply(out));
    }

    let mut factors = party.augmented_factors();
    factors.extend(pinned);
    let modeled = scope_names(&factors);
    let protected = party.protected_tokens();
    let mut keep: Vec<String> = q.targets.iter().filter(|t| modeled.contains(*t)).cloned().collect();
    if keep.is_empty() && protected.is_empty() {
        return Ok(reply(vec![]));
    }
    for p in protected {
        if modeled.contains(&p) && !keep.contains(&p) {
            keep.push(p);
        }
    }
    keep.retain(|v| !evidence.contains_key(v));
    let task = EliminationTask::new(keep, evidence, factors).early();
    let leftovers = var_elim(&task)?.into_leftovers().expect("early stop");
    if q.hardened && !leftovers.is_empty() {
        return Ok(reply(vec![Factor::product_all(&leftovers)?]));
    }
    Ok(reply(leftovers))
}

/// The requester's final step over every reply, its own included.
pub fn aggregate(q: &QueryEnvelope, replies: &[(String, ReplyEnvelope)]) -> Result<Factor> {
    if let Some((party, r)) = replies.iter().find(|(_, r)| r.refused.is_some()) {
        return Err(ProtocolError::Refused {
            party: party.clone(),
            reason: r.refused.clone().unwrap_or_default(),
        });
    }
    let factors = replies
        .iter()
        .flat_map(|(_, r)| r.factors.iter().map(|f| f.to_factor()))
        .collect::<Result<Vec<_>>>()?;

    if q.variant == Variant::Dom {
        let mut pooled = Factor::scalar(1.0);
        for t in &q.targets {
            let mut inputs = Vec::new();
            for (_, r) in replies {
                for f in &r.factors {
                    let f = f.to_factor()?;
                    if f.scope().len() == 1 && f.scope()[0].name() == t {
                        let col = f.normalize()?;
                        let cpd = Cpd::new(col.scope()[0].clone(), vec![], col.into_values(), CpdMode::Probability)?;
                        inputs.push((cpd, r.weight));
                    }
                }
            }
            if inputs.is_empty() {
                return Err(ProtocolError::Invalid(format!("no party models target {t}")));
            }
            let refs: Vec<(&Cpd, f64)> = inputs.iter().map(|(c, w)| (c, *w)).collect();
            // Targets are pooled one at a time; several targets give the product of the pools.
            pooled = pooled.product(&pool_cpd(&refs)?.to_factor())?;
        }
        let order: Vec<&str> = q.targets.iter().map(String::as_str).collect();
        return Ok(pooled.reorder(&order)?);
    }

    let modeled = scope_names(&factors);
    if let Some(t) = q.targets.iter().find(|t| !modeled.contains(*t)) {
        return Err(ProtocolError::Invalid(format!("no party models target {t}")));
    }
    let task = EliminationTask::new(q.targets.clone(), BTreeMap::new(), factors);
    Ok(var_elim(&task)?.into_posterior().expect("full elimination"))
}

/// Messages a query costs with `n` parties.
pub fn count_messages(n: usize) -> usize {
    2 * n.saturating_sub(1)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Scheduler {
    /// Parties answer one after the other.
    #[default]
    Sequential,
    /// Parties answer on separate threads; messages are still sent in party order.
    Concurrent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryOutcome {
    pub posterior: Factor,
    /// Messages between distinct parties.
    pub messages: usize,
    /// Factor values exchanged, requester-internal reply included.
    pub values: usize,
    pub bytes: usize,
    /// Local computation summed over parties, plus the final aggregation.
    pub compute: Duration,
}

/// Runs one query from `requester` over `net`.
pub fn run_query(
    fed: &Federation,
    net: &mut dyn Transport,
    session: &str,
    requester: &str,
    query: &Query,
    scheduler: Scheduler,
) -> Result<QueryOutcome> {
    let me = fed
        .party(requester)
        .ok_or_else(|| ProtocolError::Routing(requester.to_string()))?;
    match (query.variant, fed.mode().is_joined()) {
        (Variant::Ccbnet, true) | (Variant::Ccbnetj, false) => {
            return Err(ProtocolError::Invalid(format!(
                "variant {} does not match the {} augmentation",
                query.variant,
                fed.mode()
            )))
        }
        _ => {}
    }
    let env = resolve(query, &fed.exposures, &me.id, session)?;
    let start = net.transcript().records().len();

    for p in fed.parties.iter().filter(|p| p.id != me.id) {
        net.send(&WireMessage::new(session, &me.id, &p.id, &env)?)?;
    }
    let mut received = BTreeMap::new();
    for p in fed.parties.iter().filter(|p| p.id != me.id) {
        let q = net.recv(&me.id, &p.id)?.decode::<QueryEnvelope>()?;
        received.insert(p.id.clone(), q);
    }
    let envelope_for = |p: &Party| if p.id == me.id { &env } else { &received[&p.id] };

    let answers: Vec<(Result<ReplyEnvelope>, Duration)> = match scheduler {
        Scheduler::Sequential => fed
            .parties
            .iter()
            .map(|p| {
                let t = Instant::now();
                let r = local_solve(p, &me.id, envelope_for(p));
                (r, t.elapsed())
            })
            .collect(),
        Scheduler::Concurrent => std::thread::scope(|s| {
            let handles: Vec<_> = fed
                .parties
                .iter()
                .map(|p| {
                    let q = envelope_for(p);
                    let id = me.id.as_str();
                    s.spawn(move || {
                        let t = Instant::now();
                        let r = local_solve(p, id, q);
                        (r, t.elapsed())
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("party thread")).collect()
        }),
    };

    let mut compute = Duration::ZERO;
    let mut ready = Vec::with_capacity(answers.len());
    for (answer, took) in answers {
        compute += took;
        ready.push(answer?);
    }
    for (p, answer) in fed.parties.iter().zip(&ready) {
        net.send(&WireMessage::new(session, &p.id, &me.id, answer)?)?;
    }
    let mut replies = Vec::with_capacity(fed.parties.len());
    for p in &fed.parties {
        replies.push((p.id.clone(), net.recv(&p.id, &me.id)?.decode::<ReplyEnvelope>()?));
    }
    let t = Instant::now();
    let posterior = aggregate(&env, &replies)?;
    compute += t.elapsed();

    let records = &net.transcript().records()[start..];
    let mine = records.iter().filter(|r| r.session == session);
    let (mut messages, mut values, mut bytes) = (0, 0, 0);
    for r in mine {
        if !r.internal {
            messages += 1;
        }
        values += r.values;
        bytes += r.bytes;
    }
    Ok(QueryOutcome {
        posterior,
        messages,
        values,
        bytes,
        compute,
    })
}
