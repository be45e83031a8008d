//! Reconstruction attacks on a peer's overlap CPD, and the matching defense.
//!
//! Pooling raises each holder's aligned CPD to `w_i / W` and normalizes the
//! product column-wise. With two holders, whoever sees the pooled CPD can
//! undo that: `pooled^(W / w_v) / own^(w_a / w_v)` is the victim's CPD up to
//! a per-column constant. The pooled CPD is visible directly to the party
//! storing it under the joined variant, and column by column to anyone who
//! queries the overlap with every union parent observed.

use std::collections::BTreeMap;
use std::fmt;

use bnshare_core::{pool_cpd, Cpd, CpdMode, Variable, PROBABILITY_FLOOR};

use crate::cabn::Federation;
use crate::error::{ProtocolError, Result};
use crate::netsim::Transport;
use crate::party::OverlapState;
use crate::save::{run_query, Query, Scheduler, Variant};

#[derive(Clone, Debug, PartialEq)]
pub struct AttackReport {
    pub attacker: String,
    pub victim: String,
    pub overlap: String,
    /// Estimate after marginalizing to the reference's parents, token space.
    pub recovered: Cpd,
    pub reference: Cpd,
    pub max_abs_error: f64,
    pub queries_used: usize,
    /// Three or more holders: only the pool of everyone else is recoverable,
    /// and the reference is that pool.
    pub aggregate_only: bool,
    /// Some queries were refused.
    pub blocked: bool,
}

impl fmt::Display for AttackReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "attacker={}", self.attacker)?;
        writeln!(f, "victim={}", self.victim)?;
        writeln!(f, "overlap={}", self.overlap)?;
        writeln!(f, "max_abs_error={:e}", self.max_abs_error)?;
        writeln!(f, "queries_used={}", self.queries_used)?;
        writeln!(f, "aggregate_only={}", self.aggregate_only)?;
        write!(f, "blocked={}", self.blocked)
    }
}

/// Undoes pooling with the attacker's own contribution. Entries are clamped
/// at the same floor alignment uses.
pub fn invert_pool(pooled: &Cpd, own: &Cpd, own_weight: f64, total_weight: f64) -> Result<Cpd> {
    let rest = total_weight - own_weight;
    if !(rest > 0.0) {
        return Err(ProtocolError::Invalid("no other holder weight to recover".into()));
    }
    let own = own.broadcast_to(pooled.parents())?;
    let table = pooled
        .table()
        .iter()
        .zip(own.table())
        .map(|(p, o)| {
            p.max(PROBABILITY_FLOOR).powf(total_weight / rest) / o.max(PROBABILITY_FLOOR).powf(own_weight / rest)
        })
        .collect();
    Ok(pooled.with_table(table, CpdMode::Share)?)
}

/// Marginalizes `estimate` to the reference's parents, normalizes it and
/// measures the largest entry difference. A non-normalizable estimate scores
/// an infinite error.
pub fn score(estimate: &Cpd, reference: &Cpd) -> Result<(Cpd, f64)> {
    let f = estimate.to_factor();
    let extra: Vec<&str> = estimate
        .parents()
        .iter()
        .map(Variable::name)
        .filter(|p| !reference.parents().iter().any(|r| r.name() == *p))
        .collect();
    let f = f.marginalize(&extra)?;
    let child = reference.child().name();
    let parents = reference.parent_names();
    let shaped = Cpd::from_factor(&f, child, &parents, CpdMode::Share)?;
    match shaped.normalize_columns() {
        Ok(c) => {
            let err = c.max_abs_diff(reference)?;
            Ok((c, if err.is_finite() { err } else { f64::INFINITY }))
        }
        Err(_) => Ok((shaped, f64::INFINITY)),
    }
}

fn holder_state<'a>(fed: &'a Federation, party: &str, overlap: &str) -> Result<&'a OverlapState> {
    fed.party(party)
        .ok_or_else(|| ProtocolError::Routing(party.to_string()))?
        .overlaps
        .get(overlap)
        .ok_or_else(|| ProtocolError::Invalid(format!("{party} does not hold overlap {overlap}")))
}

/// What the attacker is scored against: the victim's CPD with two holders,
/// the pool of all other holders otherwise. Read from the simulation, not
/// available to the attacker.
fn reference(fed: &Federation, attacker: &str, victim: &str, overlap: &str) -> Result<(Cpd, bool)> {
    let mine = holder_state(fed, attacker, overlap)?;
    if mine.holders.len() == 2 {
        return Ok((holder_state(fed, victim, overlap)?.original.clone(), false));
    }
    let others: Vec<(Cpd, f64)> = mine
        .holders
        .iter()
        .filter(|h| *h != attacker)
        .map(|h| {
            let weight = fed.party(h).expect("holder").weight;
            Ok((holder_state(fed, h, overlap)?.original.clone(), weight))
        })
        .collect::<Result<_>>()?;
    let refs: Vec<(&Cpd, f64)> = others.iter().map(|(c, w)| (c, *w)).collect();
    Ok((pool_cpd(&refs)?, true))
}

/// Inverts the CPD the attacker stores for `overlap`: the pooled CPD under the
/// joined variant, or merely its own share otherwise.
pub fn cabn_attack(fed: &Federation, attacker: &str, victim: &str, overlap: &str) -> Result<AttackReport> {
    let a = fed.party(attacker).ok_or_else(|| ProtocolError::Routing(attacker.to_string()))?;
    let mine = holder_state(fed, attacker, overlap)?;
    let report = |recovered: Cpd, reference: Cpd, err: f64, aggregate_only: bool| AttackReport {
        attacker: attacker.to_string(),
        victim: victim.to_string(),
        overlap: overlap.to_string(),
        recovered,
        reference,
        max_abs_error: err,
        queries_used: 0,
        aggregate_only,
        blocked: false,
    };
    if attacker == victim {
        return Ok(report(mine.original.clone(), mine.original.clone(), 0.0, false));
    }
    let stored = a
        .held
        .get(overlap)
        .map(|h| &h.cpd)
        .or(mine.share.as_ref())
        .ok_or_else(|| ProtocolError::Invalid(format!("{attacker} stores no CPD for overlap {overlap}")))?;
    let estimate = invert_pool(stored, &mine.original, a.weight, mine.total_weight)?;
    let (reference, aggregate_only) = reference(fed, attacker, victim, overlap)?;
    let (recovered, err) = score(&estimate, &reference)?;
    Ok(report(recovered, reference, err, aggregate_only))
}

/// Queries `overlap` once per union-parent configuration with every parent
/// observed, reads each answer as a column of the pooled CPD and inverts it.
/// Refused columns are filled with the uniform distribution.
pub fn save_attack(
    fed: &Federation,
    net: &mut dyn Transport,
    attacker: &str,
    victim: &str,
    overlap: &str,
) -> Result<AttackReport> {
    let a = fed.party(attacker).ok_or_else(|| ProtocolError::Routing(attacker.to_string()))?;
    let mine = holder_state(fed, attacker, overlap)?;
    let parents = &mine.union_parents;
    let child = mine.original.child().clone();
    let variant = if fed.mode().is_joined() {
        Variant::Ccbnetj
    } else {
        Variant::Ccbnet
    };
    let cols: usize = parents.iter().map(Variable::cardinality).product();
    let rows = child.cardinality();
    let mut table = vec![0.0; rows * cols];
    let mut blocked = false;
    for col in 0..cols {
        let mut rem = col;
        let mut evidence = BTreeMap::new();
        for p in parents.iter().rev() {
            evidence.insert(p.name().to_string(), p.states()[rem % p.cardinality()].clone());
            rem /= p.cardinality();
        }
        let query = Query::tokens(&[child.name()], &evidence, variant);
        let session = format!("attack/save/{col}");
        let column = match run_query(fed, net, &session, attacker, &query, Scheduler::Sequential) {
            Ok(out) => out.posterior.into_values(),
            Err(ProtocolError::Refused { .. }) => {
                blocked = true;
                vec![1.0 / rows as f64; rows]
            }
            Err(e) => return Err(e),
        };
        for (r, v) in column.into_iter().enumerate() {
            table[r * cols + col] = v;
        }
    }
    let pooled = Cpd::new(child, parents.clone(), table, CpdMode::Share)?;
    let estimate = invert_pool(&pooled, &mine.original, a.weight, mine.total_weight)?;
    let (reference, aggregate_only) = reference(fed, attacker, victim, overlap)?;
    let (recovered, err) = score(&estimate, &reference)?;
    Ok(AttackReport {
        attacker: attacker.to_string(),
        victim: victim.to_string(),
        overlap: overlap.to_string(),
        recovered,
        reference,
        max_abs_error: err,
        queries_used: cols,
        aggregate_only,
        blocked,
    })
}

/// Installs the request limit at `party`.
pub fn defend_rate_limit(fed: &mut Federation, party: &str, threshold: usize) -> Result<()> {
    fed.party_mut(party)
        .ok_or_else(|| ProtocolError::Routing(party.to_string()))?
        .defend_rate_limit(threshold);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use bnshare_core::combine::align_cpd;

    fn bin(name: &str) -> Variable {
        Variable::with_states(name, &["a", "b"])
    }

    #[test]
    fn inversion_recovers_the_other_input() {
        let x = bin("x");
        let u = bin("u");
        let mine = Cpd::new(x.clone(), vec![], vec![0.7, 0.3], CpdMode::Probability).unwrap();
        let theirs = Cpd::new(x.clone(), vec![u.clone()], vec![0.9, 0.2, 0.1, 0.8], CpdMode::Probability).unwrap();
        let pooled = pool_cpd(&[(&mine, 1.0), (&theirs, 3.0)]).unwrap();
        let est = invert_pool(&pooled, &mine, 1.0, 4.0).unwrap();
        let (rec, err) = score(&est, &theirs).unwrap();
        assert!(err < 1e-12, "{err}");
        assert_eq!(rec.parents(), theirs.parents());
        let aligned = align_cpd(&mine, &[u], 0.5).unwrap();
        assert_eq!(aligned.columns(), 2);
    }
}
