//! Centralized union combination with weighted geometric-mean pooling.
//!
//! Overlapping CPDs are broadcast to the union of their parents, each raised
//! to `weight / total_weight`, multiplied entrywise and column-normalized.
//! The distributed protocol must reproduce exactly these tables, so the
//! alignment step is exported for reuse.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{ModelError, Result};
use crate::factor::Variable;
use crate::network::{Cpd, CpdMode, Dag, DiscreteNetwork, MoralizedModel};

/// Entries are clamped to this before exponentiation.
pub const PROBABILITY_FLOOR: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq)]
pub struct WeightedModel {
    pub network: DiscreteNetwork,
    pub weight: f64,
}

impl WeightedModel {
    pub fn new(network: DiscreteNetwork, weight: f64) -> Result<Self> {
        if !(weight > 0.0 && weight <= 1.0) {
            return Err(ModelError::Invalid(format!("model weight {weight} outside (0, 1]")));
        }
        Ok(WeightedModel { network, weight })
    }

    pub fn unweighted(network: DiscreteNetwork) -> Self {
        WeightedModel { network, weight: 1.0 }
    }
}

/// Union graph of several party networks.
#[derive(Clone, Debug, PartialEq)]
pub struct UnionStructure {
    /// Every variable by name.
    pub variables: BTreeMap<String, Variable>,
    /// Union of the parent sets declared by all holders.
    pub parents: BTreeMap<String, BTreeSet<String>>,
    /// Variables held by at least two models, with the holder indices.
    pub overlaps: BTreeMap<String, Vec<usize>>,
}

impl UnionStructure {
    pub fn edges(&self) -> BTreeSet<(String, String)> {
        self.parents
            .iter()
            .flat_map(|(child, ps)| ps.iter().map(move |p| (p.clone(), child.clone())))
            .collect()
    }

    pub fn is_acyclic(&self) -> bool {
        let names: Vec<&String> = self.variables.keys().collect();
        let index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let parents = names
            .iter()
            .map(|n| self.parents[*n].iter().map(|p| index[p.as_str()]).collect())
            .collect();
        let vars = self.variables.values().cloned().collect();
        Dag::new(vars, parents).is_ok()
    }
}

pub fn union_structure(models: &[WeightedModel]) -> Result<UnionStructure> {
    let mut variables: BTreeMap<String, Variable> = BTreeMap::new();
    let mut parents: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut holders: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (m, model) in models.iter().enumerate() {
        for v in model.network.variables() {
            merge_variable(&mut variables, v)?;
            holders.entry(v.name().to_string()).or_default().push(m);
        }
        for cpd in model.network.cpds() {
            let set = parents.entry(cpd.child().name().to_string()).or_default();
            set.extend(cpd.parents().iter().map(|p| p.name().to_string()));
        }
    }
    holders.retain(|_, h| h.len() >= 2);
    Ok(UnionStructure {
        variables,
        parents,
        overlaps: holders,
    })
}

fn merge_variable(known: &mut BTreeMap<String, Variable>, v: &Variable) -> Result<()> {
    match known.get(v.name()) {
        Some(existing) if existing.states() != v.states() => Err(ModelError::IncompatibleStates(format!(
            "`{}` has states {:?} and {:?}",
            v.name(),
            existing.states(),
            v.states()
        ))),
        Some(_) => Ok(()),
        None => {
            known.insert(v.name().to_string(), v.clone());
            Ok(())
        }
    }
}

/// Union of the parents of several CPDs for the same child, sorted by name.
pub fn union_parents<'a, I: IntoIterator<Item = &'a Cpd>>(cpds: I) -> Result<Vec<Variable>> {
    let mut known = BTreeMap::new();
    for cpd in cpds {
        for p in cpd.parents() {
            merge_variable(&mut known, p)?;
        }
    }
    Ok(known.into_values().collect())
}

/// Broadcasts `cpd` to `parents`, clamps it at the floor and raises every
/// entry to `exponent`. The result is a share-mode CPD.
pub fn align_cpd(cpd: &Cpd, parents: &[Variable], exponent: f64) -> Result<Cpd> {
    let wide = cpd.broadcast_to(parents)?;
    wide.map_entries(|x| x.max(PROBABILITY_FLOOR).powf(exponent), CpdMode::Share)
}

/// Weighted geometric mean of CPDs over the same child.
pub fn pool_cpd(inputs: &[(&Cpd, f64)]) -> Result<Cpd> {
    let (first, _) = inputs
        .first()
        .ok_or_else(|| ModelError::Invalid("nothing to pool".into()))?;
    for (cpd, w) in inputs {
        if cpd.child() != first.child() {
            return Err(ModelError::IncompatibleStates(format!(
                "cannot pool `{}` with `{}`",
                cpd.child().name(),
                first.child().name()
            )));
        }
        if !(*w > 0.0) {
            return Err(ModelError::Invalid(format!("weight {w} is not positive")));
        }
    }
    let parents = union_parents(inputs.iter().map(|(c, _)| *c))?;
    let total: f64 = inputs.iter().map(|(_, w)| w).sum();
    let mut table: Option<Vec<f64>> = None;
    for (cpd, w) in inputs {
        let aligned = align_cpd(cpd, &parents, w / total)?;
        table = Some(match table {
            None => aligned.table().to_vec(),
            Some(t) => t.iter().zip(aligned.table()).map(|(a, b)| a * b).collect(),
        });
    }
    let product = Cpd::new(
        first.child().clone(),
        parents,
        table.expect("at least one input"),
        CpdMode::Share,
    );
    // Underflow to exact zero is possible for extreme inputs; report it as degenerate.
    match product {
        Ok(p) => p.normalize_columns(),
        Err(_) => Err(ModelError::Degenerate {
            child: first.child().name().to_string(),
            column: 0,
        }),
    }
}

/// Result of union combination.
#[derive(Clone, Debug, PartialEq)]
pub enum Combined {
    Network(DiscreteNetwork),
    Markov(MoralizedModel),
}

impl Combined {
    pub fn factors(&self) -> Vec<crate::factor::Factor> {
        match self {
            Combined::Network(n) => n.factors(),
            Combined::Markov(m) => m.factors().to_vec(),
        }
    }

    pub fn cpds(&self) -> Option<&[Cpd]> {
        match self {
            Combined::Network(n) => Some(n.cpds()),
            Combined::Markov(_) => None,
        }
    }
}

/// Pools every shared variable's CPDs and keeps the rest untouched. Returns a
/// network when the union graph is acyclic and its moralization otherwise.
/// Variables are ordered by name so the result does not depend on model order.
pub fn combine_union(models: &[WeightedModel]) -> Result<Combined> {
    match models {
        [] => return Err(ModelError::Invalid("no models to combine".into())),
        [single] => return Ok(Combined::Network(single.network.clone())),
        _ => {}
    }
    let union = union_structure(models)?;
    let mut by_child: BTreeMap<&str, Vec<(&Cpd, f64)>> = BTreeMap::new();
    for model in models {
        for cpd in model.network.cpds() {
            by_child.entry(cpd.child().name()).or_default().push((cpd, model.weight));
        }
    }
    let cpds = by_child
        .into_values()
        .map(|inputs| match inputs.as_slice() {
            [(only, _)] => Ok((*only).clone()),
            _ => pool_cpd(&inputs),
        })
        .collect::<Result<Vec<_>>>()?;
    if union.is_acyclic() {
        Ok(Combined::Network(DiscreteNetwork::new("union", cpds)?))
    } else {
        Ok(Combined::Markov(MoralizedModel::from_cpds(&cpds, &[])))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bin(name: &str) -> Variable {
        Variable::with_states(name, &["t", "f"])
    }

    fn root(v: &Variable, p: f64) -> Cpd {
        Cpd::new(v.clone(), vec![], vec![p, 1.0 - p], CpdMode::Probability).unwrap()
    }

    #[test]
    fn symmetric_inputs_pool_to_uniform() {
        let x = bin("X");
        let (a, b) = (root(&x, 0.8), root(&x, 0.2));
        let p = pool_cpd(&[(&a, 1.0), (&b, 1.0)]).unwrap();
        assert!((p.table()[0] - 0.5).abs() < 1e-15);
        let single = pool_cpd(&[(&a, 0.3)]).unwrap();
        assert!(single.max_abs_diff(&a).unwrap() < 1e-15);
    }

    #[test]
    fn unequal_weights_follow_exponents() {
        let x = bin("X");
        let (a, b) = (root(&x, 0.8), root(&x, 0.2));
        let p = pool_cpd(&[(&a, 1.0), (&b, 3.0)]).unwrap();
        let u = 0.8f64.powf(0.25) * 0.2f64.powf(0.75);
        let v = 0.2f64.powf(0.25) * 0.8f64.powf(0.75);
        assert!((p.table()[0] - u / (u + v)).abs() < 1e-15);
    }

    #[test]
    fn figure_one_union() {
        let (a, b, x, y, z) = (bin("A"), bin("B"), bin("X"), bin("Y"), bin("Z"));
        let cond = |c: &Variable, p: &Variable| {
            Cpd::new(c.clone(), vec![p.clone()], vec![0.9, 0.3, 0.1, 0.7], CpdMode::Probability).unwrap()
        };
        let p1 = DiscreteNetwork::new("p1", vec![root(&a, 0.4), cond(&x, &a), cond(&y, &x)]).unwrap();
        let p2 = DiscreteNetwork::new("p2", vec![root(&b, 0.6), cond(&x, &b), cond(&z, &x)]).unwrap();
        let models = [WeightedModel::unweighted(p1), WeightedModel::unweighted(p2)];
        let u = union_structure(&models).unwrap();
        assert_eq!(u.overlaps.keys().collect::<Vec<_>>(), vec!["X"]);
        assert_eq!(u.parents["X"], ["A".to_string(), "B".to_string()].into());
        let Combined::Network(n) = combine_union(&models).unwrap() else {
            panic!("acyclic union")
        };
        assert_eq!(n.cpd("X").unwrap().parent_names(), vec!["A", "B"]);
    }

    #[test]
    fn conflicting_states_are_rejected() {
        let x2 = bin("X");
        let x3 = Variable::with_states("X", &["a", "b", "c"]);
        let n1 = DiscreteNetwork::new("1", vec![root(&x2, 0.5)]).unwrap();
        let n2 = DiscreteNetwork::new("2", vec![Cpd::new(x3, vec![], vec![0.2, 0.3, 0.5], CpdMode::Probability).unwrap()])
            .unwrap();
        let models = [WeightedModel::unweighted(n1), WeightedModel::unweighted(n2)];
        assert!(matches!(union_structure(&models), Err(ModelError::IncompatibleStates(_))));
    }

    #[test]
    fn cyclic_union_is_moralized() {
        let (a, b) = (bin("A"), bin("B"));
        let cond = |c: &Variable, p: &Variable| {
            Cpd::new(c.clone(), vec![p.clone()], vec![0.9, 0.3, 0.1, 0.7], CpdMode::Probability).unwrap()
        };
        let n1 = DiscreteNetwork::new("1", vec![root(&a, 0.5), cond(&b, &a)]).unwrap();
        let n2 = DiscreteNetwork::new("2", vec![root(&b, 0.5), cond(&a, &b)]).unwrap();
        let models = [WeightedModel::unweighted(n1), WeightedModel::unweighted(n2)];
        let Combined::Markov(m) = combine_union(&models).unwrap() else {
            panic!("cycle expected")
        };
        assert_eq!(m.factors().len(), 2);
        assert!(m.has_edge("A", "B"));
    }

    #[test]
    fn weights_outside_unit_interval_are_rejected() {
        let n = DiscreteNetwork::new("1", vec![root(&bin("A"), 0.5)]).unwrap();
        assert!(WeightedModel::new(n.clone(), 0.0).is_err());
        assert!(WeightedModel::new(n.clone(), 1.5).is_err());
        assert!(WeightedModel::new(n, 1.0).is_ok());
    }
}
