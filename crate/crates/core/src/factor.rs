//! Discrete variables and dense factors.
//!
//! A [`Factor`] stores one value per joint state of its scope, row-major with
//! the last scope variable varying fastest. Product, marginalization and
//! reduction are the only primitives inference needs; everything else in the
//! workspace (CPDs, shares, posteriors) is expressed through them.

use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use crate::error::{ModelError, Result};

#[derive(Debug, PartialEq, Eq)]
struct VariableData {
    name: String,
    states: Vec<String>,
}

/// A named discrete variable with an ordered list of state labels.
///
/// Cloning is cheap; equality compares name and states.
#[derive(Clone)]
pub struct Variable(Arc<VariableData>);

impl Variable {
    pub fn new<S: Into<String>>(name: impl Into<String>, states: Vec<S>) -> Result<Self> {
        let name = name.into();
        let states: Vec<String> = states.into_iter().map(Into::into).collect();
        if name.is_empty() {
            return Err(ModelError::InvalidVariable {
                name,
                reason: "empty name".into(),
            });
        }
        if states.len() < 2 {
            return Err(ModelError::InvalidVariable {
                name,
                reason: format!("needs at least two states, got {}", states.len()),
            });
        }
        for (i, s) in states.iter().enumerate() {
            if states[..i].contains(s) {
                return Err(ModelError::InvalidVariable {
                    name,
                    reason: format!("duplicate state `{s}`"),
                });
            }
        }
        Ok(Variable(Arc::new(VariableData { name, states })))
    }

    /// Shorthand for a variable with the given state labels.
    pub fn with_states(name: &str, states: &[&str]) -> Self {
        Self::new(name, states.to_vec()).expect("valid variable")
    }

    pub fn name(&self) -> &str {
        &self.0.name
    }

    pub fn states(&self) -> &[String] {
        &self.0.states
    }

    pub fn cardinality(&self) -> usize {
        self.0.states.len()
    }

    pub fn state_index(&self, state: &str) -> Option<usize> {
        self.0.states.iter().position(|s| s == state)
    }

    pub fn state_index_or_err(&self, state: &str) -> Result<usize> {
        self.state_index(state).ok_or_else(|| ModelError::Assignment {
            variable: self.name().to_string(),
            state: state.to_string(),
        })
    }
}

impl PartialEq for Variable {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || *self.0 == *other.0
    }
}

impl Eq for Variable {}

impl Hash for Variable {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.name.hash(state)
    }
}

impl fmt::Debug for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{:?}", self.name(), self.states())
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Multidimensional nonnegative table over an ordered variable scope.
#[derive(Clone, Debug, PartialEq)]
pub struct Factor {
    scope: Vec<Variable>,
    values: Vec<f64>,
}

fn strides(scope: &[Variable]) -> Vec<usize> {
    let mut strides = vec![0; scope.len()];
    let mut acc = 1;
    for (i, v) in scope.iter().enumerate().rev() {
        strides[i] = acc;
        acc *= v.cardinality();
    }
    strides
}

fn table_len(scope: &[Variable]) -> usize {
    scope.iter().map(Variable::cardinality).product()
}

/// Walks every index of an output table whose dimensions have the given
/// cardinalities, tracking the matching offset into an input table that has
/// `input_strides[d]` for output dimension `d` (zero for broadcast dims).
fn walk<F: FnMut(usize, usize)>(cards: &[usize], input_strides: &[usize], base: usize, mut f: F) {
    let n: usize = cards.iter().product();
    let d = cards.len();
    let mut counter = vec![0usize; d];
    let mut offset = base;
    for k in 0..n {
        f(k, offset);
        for dim in (0..d).rev() {
            counter[dim] += 1;
            offset += input_strides[dim];
            if counter[dim] < cards[dim] {
                break;
            }
            offset -= input_strides[dim] * cards[dim];
            counter[dim] = 0;
        }
    }
}

impl Factor {
    pub fn new(scope: Vec<Variable>, values: Vec<f64>) -> Result<Self> {
        for (i, v) in scope.iter().enumerate() {
            if scope[..i].iter().any(|w| w.name() == v.name()) {
                return Err(ModelError::InvalidFactor(format!(
                    "variable `{}` appears twice in scope",
                    v.name()
                )));
            }
        }
        let expected = table_len(&scope);
        if values.len() != expected {
            return Err(ModelError::InvalidFactor(format!(
                "expected {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(ModelError::InvalidFactor(format!(
                "value {bad} is not finite and nonnegative"
            )));
        }
        Ok(Factor { scope, values })
    }

    /// Factor with an empty scope holding a single value.
    pub fn scalar(value: f64) -> Self {
        Factor {
            scope: Vec::new(),
            values: vec![value],
        }
    }

    /// All-ones factor over `scope`; neutral for [`Factor::product`] up to broadcast.
    pub fn identity(scope: Vec<Variable>) -> Self {
        let n = table_len(&scope);
        Factor {
            scope,
            values: vec![1.0; n],
        }
    }

    pub fn scope(&self) -> &[Variable] {
        &self.scope
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.scope.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.scope.iter().position(|v| v.name() == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.position(name).is_some()
    }

    pub fn variable(&self, name: &str) -> Option<&Variable> {
        self.scope.iter().find(|v| v.name() == name)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Value at the joint state given by per-scope state indices.
    pub fn get(&self, indices: &[usize]) -> f64 {
        let s = strides(&self.scope);
        self.values[indices.iter().zip(&s).map(|(i, s)| i * s).sum::<usize>()]
    }

    /// Entrywise product over the union of both scopes.
    ///
    /// The result scope is `self`'s scope followed by the variables only `other` has.
    pub fn product(&self, other: &Factor) -> Result<Factor> {
        let mut scope = self.scope.clone();
        for v in &other.scope {
            match self.variable(v.name()) {
                Some(mine) if mine != v => return Err(ModelError::Alignment(v.name().to_string())),
                Some(_) => {}
                None => scope.push(v.clone()),
            }
        }
        let sa = strides(&self.scope);
        let sb = strides(&other.scope);
        let cards: Vec<usize> = scope.iter().map(Variable::cardinality).collect();
        let a_str: Vec<usize> = scope
            .iter()
            .map(|v| self.position(v.name()).map_or(0, |i| sa[i]))
            .collect();
        let b_str: Vec<usize> = scope
            .iter()
            .map(|v| other.position(v.name()).map_or(0, |i| sb[i]))
            .collect();

        // Walk with a combined offset encoding both input positions.
        let n: usize = cards.iter().product();
        let mut values = Vec::with_capacity(n);
        let d = cards.len();
        let mut counter = vec![0usize; d];
        let (mut ia, mut ib) = (0usize, 0usize);
        for _ in 0..n {
            values.push(self.values[ia] * other.values[ib]);
            for dim in (0..d).rev() {
                counter[dim] += 1;
                ia += a_str[dim];
                ib += b_str[dim];
                if counter[dim] < cards[dim] {
                    break;
                }
                ia -= a_str[dim] * cards[dim];
                ib -= b_str[dim] * cards[dim];
                counter[dim] = 0;
            }
        }
        Ok(Factor { scope, values })
    }

    /// Product of many factors; the scalar 1 for an empty list.
    pub fn product_all<'a, I: IntoIterator<Item = &'a Factor>>(factors: I) -> Result<Factor> {
        let mut acc: Option<Factor> = None;
        for f in factors {
            acc = Some(match acc {
                None => f.clone(),
                Some(a) => a.product(f)?,
            });
        }
        Ok(acc.unwrap_or_else(|| Factor::scalar(1.0)))
    }

    /// Sums out the named variables. Every name must be in scope.
    pub fn marginalize(&self, names: &[&str]) -> Result<Factor> {
        for n in names {
            if !self.contains(n) {
                return Err(ModelError::Scope(n.to_string()));
            }
        }
        if names.is_empty() {
            return Ok(self.clone());
        }
        let keep: Vec<usize> = (0..self.scope.len())
            .filter(|&i| !names.contains(&self.scope[i].name()))
            .collect();
        Ok(self.project(&keep))
    }

    /// Keeps the dimensions at `keep` (in that order), summing the rest.
    fn project(&self, keep: &[usize]) -> Factor {
        let scope: Vec<Variable> = keep.iter().map(|&i| self.scope[i].clone()).collect();
        let out_strides = strides(&scope);
        let cards: Vec<usize> = self.scope.iter().map(Variable::cardinality).collect();
        let mut map = vec![0usize; self.scope.len()];
        for (j, &i) in keep.iter().enumerate() {
            map[i] = out_strides[j];
        }
        let mut values = vec![0.0; table_len(&scope)];
        walk(&cards, &map, 0, |k, out| values[out] += self.values[k]);
        Factor { scope, values }
    }

    /// Fixes the assigned variables to the given states and drops them from the scope.
    ///
    /// Assigned variables that are not in scope are an error; use
    /// [`Factor::reduce_present`] to skip them.
    pub fn reduce(&self, assignment: &BTreeMap<String, String>) -> Result<Factor> {
        for name in assignment.keys() {
            if !self.contains(name) {
                return Err(ModelError::Scope(name.clone()));
            }
        }
        self.reduce_present(assignment)
    }

    /// Like [`Factor::reduce`] but ignores assigned variables outside the scope.
    pub fn reduce_present(&self, assignment: &BTreeMap<String, String>) -> Result<Factor> {
        let fixed: Vec<(usize, usize)> = self
            .scope
            .iter()
            .enumerate()
            .filter_map(|(i, v)| assignment.get(v.name()).map(|s| (i, s)))
            .map(|(i, s)| Ok((i, self.scope[i].state_index_or_err(s)?)))
            .collect::<Result<_>>()?;
        if fixed.is_empty() {
            return Ok(self.clone());
        }
        Ok(self.reduce_indices(&fixed))
    }

    /// Reduction by (scope position, state index) pairs.
    pub fn reduce_indices(&self, fixed: &[(usize, usize)]) -> Factor {
        let s = strides(&self.scope);
        let base: usize = fixed.iter().map(|&(i, st)| s[i] * st).sum();
        let keep: Vec<usize> = (0..self.scope.len())
            .filter(|i| !fixed.iter().any(|&(j, _)| j == *i))
            .collect();
        let scope: Vec<Variable> = keep.iter().map(|&i| self.scope[i].clone()).collect();
        let cards: Vec<usize> = scope.iter().map(Variable::cardinality).collect();
        let in_strides: Vec<usize> = keep.iter().map(|&i| s[i]).collect();
        let mut values = Vec::with_capacity(table_len(&scope));
        walk(&cards, &in_strides, base, |_, off| values.push(self.values[off]));
        Factor { scope, values }
    }

    /// Same factor with its scope permuted into `order` (which must list every scope name).
    pub fn reorder(&self, order: &[&str]) -> Result<Factor> {
        if order.len() != self.scope.len() {
            return Err(ModelError::InvalidFactor(format!(
                "reorder needs {} names, got {}",
                self.scope.len(),
                order.len()
            )));
        }
        let positions: Vec<usize> = order
            .iter()
            .map(|n| self.position(n).ok_or_else(|| ModelError::Scope(n.to_string())))
            .collect::<Result<_>>()?;
        if positions.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(self.clone());
        }
        let s = strides(&self.scope);
        let scope: Vec<Variable> = positions.iter().map(|&p| self.scope[p].clone()).collect();
        let cards: Vec<usize> = scope.iter().map(Variable::cardinality).collect();
        let in_strides: Vec<usize> = positions.iter().map(|&p| s[p]).collect();
        let mut values = Vec::with_capacity(self.values.len());
        walk(&cards, &in_strides, 0, |_, off| values.push(self.values[off]));
        Ok(Factor { scope, values })
    }

    /// Scope sorted by variable name.
    pub fn canonical(&self) -> Factor {
        let mut names: Vec<&str> = self.scope.iter().map(Variable::name).collect();
        names.sort_unstable();
        self.reorder(&names).expect("names come from the scope")
    }

    /// Divides by the total so values sum to one.
    pub fn normalize(&self) -> Result<Factor> {
        let total = self.sum();
        if !(total > 0.0) {
            return Err(ModelError::ImpossibleEvidence);
        }
        Ok(self.map_values(|x| x / total))
    }

    pub fn map_values<F: Fn(f64) -> f64>(&self, f: F) -> Factor {
        Factor {
            scope: self.scope.clone(),
            values: self.values.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Replaces variables, optionally permuting their states.
    ///
    /// `rename` returns the replacement variable and, for each of its states, the
    /// index of the corresponding state in the original variable.
    pub fn relabel<F>(&self, mut rename: F) -> Result<Factor>
    where
        F: FnMut(&Variable) -> Option<(Variable, Vec<usize>)>,
    {
        let mut scope = Vec::with_capacity(self.scope.len());
        let mut perms = Vec::with_capacity(self.scope.len());
        for v in &self.scope {
            match rename(v) {
                Some((nv, perm)) => {
                    if perm.len() != v.cardinality() || nv.cardinality() != v.cardinality() {
                        return Err(ModelError::Alignment(v.name().to_string()));
                    }
                    scope.push(nv);
                    perms.push(Some(perm));
                }
                None => {
                    scope.push(v.clone());
                    perms.push(None);
                }
            }
        }
        let s = strides(&self.scope);
        let cards: Vec<usize> = scope.iter().map(Variable::cardinality).collect();
        let n = self.values.len();
        let d = cards.len();
        let mut values = Vec::with_capacity(n);
        let mut counter = vec![0usize; d];
        for _ in 0..n {
            let off: usize = (0..d)
                .map(|i| s[i] * perms[i].as_ref().map_or(counter[i], |p| p[counter[i]]))
                .sum();
            values.push(self.values[off]);
            for dim in (0..d).rev() {
                counter[dim] += 1;
                if counter[dim] < cards[dim] {
                    break;
                }
                counter[dim] = 0;
            }
        }
        Factor::new(scope, values)
    }

    /// Largest absolute entry difference after aligning `other` to this scope order.
    pub fn max_abs_diff(&self, other: &Factor) -> Result<f64> {
        let names: Vec<&str> = self.scope.iter().map(Variable::name).collect();
        let other = other.reorder(&names)?;
        for (a, b) in self.scope.iter().zip(other.scope.iter()) {
            if a != b {
                return Err(ModelError::Alignment(a.name().to_string()));
            }
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> Variable {
        Variable::with_states("X", &["t", "f"])
    }

    fn y3() -> Variable {
        Variable::with_states("Y", &["a", "b", "c"])
    }

    fn assign(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn variable_rejects_bad_definitions() {
        assert!(Variable::new("", vec!["a", "b"]).is_err());
        assert!(Variable::new("v", vec!["a"]).is_err());
        assert!(Variable::new("v", vec!["a", "a"]).is_err());
    }

    #[test]
    fn identity_product_is_neutral() {
        let f = Factor::new(vec![x()], vec![0.3, 0.7]).unwrap();
        let p = Factor::identity(vec![x()]).product(&f).unwrap();
        assert_eq!(p.values(), &[0.3, 0.7]);
    }

    #[test]
    fn scalar_broadcasts() {
        let y = Variable::with_states("Y", &["a", "b"]);
        let f = Factor::new(vec![y], vec![0.5, 0.25]).unwrap();
        let p = Factor::scalar(2.0).product(&f).unwrap();
        assert_eq!(p.values(), &[1.0, 0.5]);
    }

    #[test]
    fn product_rejects_mismatched_states() {
        let a = Factor::identity(vec![x()]);
        let other = Variable::with_states("X", &["f", "t"]);
        let b = Factor::identity(vec![other]);
        assert!(matches!(a.product(&b), Err(ModelError::Alignment(_))));
    }

    #[test]
    fn product_aligns_shared_variables() {
        let a = Factor::new(vec![x(), y3()], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Factor::new(vec![y3()], vec![10., 100., 1000.]).unwrap();
        let p = a.product(&b).unwrap();
        assert_eq!(p.values(), &[10., 200., 3000., 40., 500., 6000.]);
    }

    #[test]
    fn marginalize_cases() {
        let f = Factor::new(vec![x()], vec![0.3, 0.7]).unwrap();
        let m = f.marginalize(&["X"]).unwrap();
        assert!(m.is_scalar());
        assert!((m.values()[0] - 1.0).abs() < 1e-15);
        assert_eq!(f.marginalize(&[]).unwrap(), f);
        assert!(matches!(f.marginalize(&["Z"]), Err(ModelError::Scope(_))));

        // Row sums of a 2x3 table.
        let g = Factor::new(vec![x(), y3()], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let rows = g.marginalize(&["Y"]).unwrap();
        assert_eq!(rows.values(), &[6., 15.]);
        let cols = g.marginalize(&["X"]).unwrap();
        assert_eq!(cols.values(), &[5., 7., 9.]);
    }

    #[test]
    fn reduce_cases() {
        let f = Factor::new(vec![x()], vec![0.3, 0.7]).unwrap();
        let r = f.reduce(&assign(&[("X", "t")])).unwrap();
        assert_eq!(r.values(), &[0.3]);
        assert_eq!(f.reduce(&BTreeMap::new()).unwrap(), f);
        assert!(matches!(
            f.reduce(&assign(&[("X", "maybe")])),
            Err(ModelError::Assignment { .. })
        ));

        let g = Factor::new(vec![x(), y3()], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(g.reduce(&assign(&[("Y", "b")])).unwrap().values(), &[2., 5.]);
        assert_eq!(g.reduce(&assign(&[("X", "f")])).unwrap().values(), &[4., 5., 6.]);
    }

    #[test]
    fn reorder_round_trips() {
        let g = Factor::new(vec![x(), y3()], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let r = g.reorder(&["Y", "X"]).unwrap();
        assert_eq!(r.values(), &[1., 4., 2., 5., 3., 6.]);
        assert_eq!(r.reorder(&["X", "Y"]).unwrap(), g);
        assert_eq!(r.canonical(), g);
    }

    #[test]
    fn relabel_permutes_states() {
        let f = Factor::new(vec![y3()], vec![1., 2., 3.]).unwrap();
        let renamed = Variable::with_states("T", &["c'", "a'", "b'"]);
        let g = f
            .relabel(|v| (v.name() == "Y").then(|| (renamed.clone(), vec![2, 0, 1])))
            .unwrap();
        assert_eq!(g.values(), &[3., 1., 2.]);
        assert_eq!(g.scope()[0].name(), "T");
    }

    #[test]
    fn rejects_negative_and_wrong_length() {
        assert!(Factor::new(vec![x()], vec![0.5]).is_err());
        assert!(Factor::new(vec![x()], vec![-0.5, 1.0]).is_err());
        assert!(Factor::new(vec![x()], vec![f64::NAN, 1.0]).is_err());
        assert!(Factor::new(vec![x(), x()], vec![1.0; 4]).is_err());
    }
}
