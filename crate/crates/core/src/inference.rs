//! Exact inference by variable elimination.
//!
//! Evidence is applied by reduction before elimination. Every factor variable
//! that is neither a target nor evidence is summed out, in the greedy
//! min-weight order. With `stop_early` the leftover factors are returned
//! as-is instead of being multiplied and normalized, which is what the
//! distributed protocol needs from each party.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{ModelError, Result};
use crate::factor::Factor;

/// One variable-elimination request.
#[derive(Clone, Debug, Default)]
pub struct EliminationTask {
    pub targets: Vec<String>,
    pub evidence: BTreeMap<String, String>,
    pub factors: Vec<Factor>,
    pub stop_early: bool,
}

impl EliminationTask {
    pub fn new(targets: Vec<String>, evidence: BTreeMap<String, String>, factors: Vec<Factor>) -> Self {
        EliminationTask {
            targets,
            evidence,
            factors,
            stop_early: false,
        }
    }

    pub fn early(mut self) -> Self {
        self.stop_early = true;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Elimination {
    /// Normalized posterior over the targets present in the factors, in target order.
    Posterior(Factor),
    /// Unmultiplied leftover factors after the elimination loop.
    Leftovers(Vec<Factor>),
}

impl Elimination {
    pub fn into_posterior(self) -> Option<Factor> {
        match self {
            Elimination::Posterior(f) => Some(f),
            Elimination::Leftovers(_) => None,
        }
    }

    pub fn into_leftovers(self) -> Option<Vec<Factor>> {
        match self {
            Elimination::Leftovers(f) => Some(f),
            Elimination::Posterior(_) => None,
        }
    }
}

pub fn var_elim(task: &EliminationTask) -> Result<Elimination> {
    let leftovers = eliminate(task, None)?;
    if task.stop_early {
        Ok(Elimination::Leftovers(leftovers))
    } else {
        Ok(Elimination::Posterior(combine_leftovers(&leftovers, &task.targets)?))
    }
}

/// Shorthand for a full (normalized) query.
pub fn posterior(factors: &[Factor], targets: &[&str], evidence: &BTreeMap<String, String>) -> Result<Factor> {
    let task = EliminationTask::new(
        targets.iter().map(|s| s.to_string()).collect(),
        evidence.clone(),
        factors.to_vec(),
    );
    var_elim(&task).map(|e| e.into_posterior().expect("full elimination"))
}

/// Runs elimination with an explicit order instead of the min-weight heuristic.
/// Variables missing from `order` are eliminated afterwards in name order.
pub fn posterior_with_order(task: &EliminationTask, order: &[String]) -> Result<Factor> {
    let leftovers = eliminate(task, Some(order))?;
    combine_leftovers(&leftovers, &task.targets)
}

/// Multiplies leftovers, keeps the targets (in the given order) and normalizes.
pub fn combine_leftovers(leftovers: &[Factor], targets: &[String]) -> Result<Factor> {
    let product = Factor::product_all(leftovers)?;
    let extra: Vec<&str> = product
        .scope()
        .iter()
        .map(|v| v.name())
        .filter(|n| !targets.iter().any(|t| t == n))
        .collect();
    let product = product.marginalize(&extra)?;
    let order: Vec<&str> = targets
        .iter()
        .map(String::as_str)
        .filter(|t| product.contains(t))
        .collect();
    product.reorder(&order)?.normalize()
}

fn eliminate(task: &EliminationTask, order: Option<&[String]>) -> Result<Vec<Factor>> {
    for t in &task.targets {
        if task.evidence.contains_key(t) {
            return Err(ModelError::TargetIsEvidence(t.clone()));
        }
    }
    let mut working: Vec<Factor> = task
        .factors
        .iter()
        .map(|f| f.reduce_present(&task.evidence))
        .collect::<Result<_>>()?;

    let targets: BTreeSet<&str> = task.targets.iter().map(String::as_str).collect();
    let eliminable: BTreeSet<String> = working
        .iter()
        .flat_map(|f| f.scope().iter().map(|v| v.name()))
        .filter(|n| !targets.contains(n))
        .map(str::to_string)
        .collect();

    let order: Vec<String> = match order {
        Some(o) => {
            let mut o: Vec<String> = o.iter().filter(|v| eliminable.contains(*v)).cloned().collect();
            let seen: BTreeSet<String> = o.iter().cloned().collect();
            o.extend(eliminable.iter().filter(|v| !seen.contains(*v)).cloned());
            o
        }
        None => min_weight_order(&working, &eliminable),
    };

    for var in &order {
        let (with, without): (Vec<Factor>, Vec<Factor>) = working.into_iter().partition(|f| f.contains(var));
        working = without;
        if with.is_empty() {
            continue;
        }
        let product = Factor::product_all(&with)?;
        working.push(product.marginalize(&[var.as_str()])?);
    }

    // Constant factors do not change a normalized result; a zero constant
    // means the evidence is impossible and must be kept.
    let (scalars, mut rest): (Vec<Factor>, Vec<Factor>) = working.into_iter().partition(Factor::is_scalar);
    if scalars.iter().any(|s| s.values()[0] == 0.0) {
        rest.push(Factor::scalar(0.0));
    }
    Ok(rest)
}

/// Greedy elimination order: repeatedly picks the variable whose neighbours
/// in the interaction graph have the smallest joint state space (the size of
/// the factor left after summing it out of the product of its factors). Ties
/// go to the smaller name.
pub fn min_weight_order(factors: &[Factor], eliminable: &BTreeSet<String>) -> Vec<String> {
    let mut card: HashMap<&str, usize> = HashMap::new();
    let mut adj: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for f in factors {
        for v in f.scope() {
            card.insert(v.name(), v.cardinality());
            let entry = adj.entry(v.name()).or_default();
            for w in f.scope() {
                if w.name() != v.name() {
                    entry.insert(w.name());
                }
            }
        }
    }
    let mut remaining: BTreeSet<&str> = eliminable
        .iter()
        .map(String::as_str)
        .filter(|v| adj.contains_key(v))
        .collect();
    let mut order = Vec::with_capacity(remaining.len());
    while !remaining.is_empty() {
        let mut best: Option<(f64, &str)> = None;
        for &v in &remaining {
            let cost: f64 = adj[v].iter().map(|w| card[w] as f64).product();
            if best.is_none_or(|(c, _)| cost < c) {
                best = Some((cost, v));
            }
        }
        let (_, v) = best.expect("remaining is nonempty");
        remaining.remove(v);
        let neighbours: Vec<&str> = adj.remove(v).unwrap_or_default().into_iter().collect();
        for &a in &neighbours {
            let set = adj.get_mut(a).expect("symmetric adjacency");
            set.remove(v);
            for &b in &neighbours {
                if a != b {
                    set.insert(b);
                }
            }
        }
        order.push(v.to_string());
    }
    order
}
