//! Conditional probability tables, directed networks and their moral graphs.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{ModelError, Result};
use crate::factor::{Factor, Variable};

/// Column sums of probability-mode CPDs must be within this of one.
pub const COLUMN_SUM_TOLERANCE: f64 = 1e-9;

/// Whether a CPD holds probabilities or multiplicative shares of them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CpdMode {
    Probability,
    Share,
}

/// Conditional probability table of `child` given ordered `parents`.
///
/// `table` is row-major: one row per child state, one column per joint parent
/// state with the last parent varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Cpd {
    child: Variable,
    parents: Vec<Variable>,
    table: Vec<f64>,
    mode: CpdMode,
}

impl Cpd {
    pub fn new(child: Variable, parents: Vec<Variable>, table: Vec<f64>, mode: CpdMode) -> Result<Self> {
        let err = |reason: String| ModelError::InvalidCpd {
            child: child.name().to_string(),
            reason,
        };
        if parents.iter().any(|p| p.name() == child.name()) {
            return Err(err("child listed as its own parent".into()));
        }
        for (i, p) in parents.iter().enumerate() {
            if parents[..i].iter().any(|q| q.name() == p.name()) {
                return Err(err(format!("parent `{}` listed twice", p.name())));
            }
        }
        let cols: usize = parents.iter().map(Variable::cardinality).product();
        let rows = child.cardinality();
        if table.len() != rows * cols {
            return Err(err(format!("expected {}x{} table, got {} values", rows, cols, table.len())));
        }
        match mode {
            CpdMode::Probability => {
                if let Some(bad) = table.iter().find(|x| !x.is_finite() || **x < 0.0) {
                    return Err(err(format!("entry {bad} is not a probability")));
                }
                for j in 0..cols {
                    let s: f64 = (0..rows).map(|i| table[i * cols + j]).sum();
                    if (s - 1.0).abs() > COLUMN_SUM_TOLERANCE {
                        return Err(err(format!("column {j} sums to {s}")));
                    }
                }
            }
            CpdMode::Share => {
                if let Some(bad) = table.iter().find(|x| !x.is_finite() || **x <= 0.0) {
                    return Err(err(format!("share entry {bad} is not strictly positive")));
                }
            }
        }
        Ok(Cpd {
            child,
            parents,
            table,
            mode,
        })
    }

    /// All-ones CPD over the given child and parents.
    pub fn identity(child: Variable, parents: Vec<Variable>) -> Self {
        let n = child.cardinality() * parents.iter().map(Variable::cardinality).product::<usize>();
        Cpd {
            child,
            parents,
            table: vec![1.0; n],
            mode: CpdMode::Share,
        }
    }

    pub fn child(&self) -> &Variable {
        &self.child
    }

    pub fn parents(&self) -> &[Variable] {
        &self.parents
    }

    pub fn parent_names(&self) -> Vec<&str> {
        self.parents.iter().map(Variable::name).collect()
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn mode(&self) -> CpdMode {
        self.mode
    }

    pub fn rows(&self) -> usize {
        self.child.cardinality()
    }

    pub fn columns(&self) -> usize {
        self.table.len() / self.rows()
    }

    pub fn entry(&self, row: usize, column: usize) -> f64 {
        self.table[row * self.columns() + column]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        let cols = self.columns();
        (0..self.rows()).map(|i| self.table[i * cols + j]).collect()
    }

    /// Independent parameters: `(rows - 1) * columns`.
    pub fn independent_parameters(&self) -> usize {
        (self.rows() - 1) * self.columns()
    }

    /// The flattened factor over `[child, parents...]`.
    pub fn to_factor(&self) -> Factor {
        let mut scope = Vec::with_capacity(self.parents.len() + 1);
        scope.push(self.child.clone());
        scope.extend(self.parents.iter().cloned());
        Factor::new(scope, self.table.clone()).expect("cpd tables are valid factors")
    }

    /// Builds a CPD from a factor, taking `parents` in the given order.
    pub fn from_factor(factor: &Factor, child: &str, parents: &[&str], mode: CpdMode) -> Result<Cpd> {
        let mut order = vec![child];
        order.extend_from_slice(parents);
        let f = factor.reorder(&order)?;
        let child_var = f.scope()[0].clone();
        let parent_vars = f.scope()[1..].to_vec();
        Cpd::new(child_var, parent_vars, f.into_values(), mode)
    }

    /// Same CPD with its values replaced; the mode is rechecked.
    pub fn with_table(&self, table: Vec<f64>, mode: CpdMode) -> Result<Cpd> {
        Cpd::new(self.child.clone(), self.parents.clone(), table, mode)
    }

    pub fn map_entries<F: Fn(f64) -> f64>(&self, f: F, mode: CpdMode) -> Result<Cpd> {
        self.with_table(self.table.iter().map(|&x| f(x)).collect(), mode)
    }

    /// Product with the identity CPD over `parents` (a superset of the current
    /// parents, in the desired order): columns are replicated over new parents.
    pub fn broadcast_to(&self, parents: &[Variable]) -> Result<Cpd> {
        for p in &self.parents {
            match parents.iter().find(|q| q.name() == p.name()) {
                Some(q) if q == p => {}
                Some(_) => return Err(ModelError::Alignment(p.name().to_string())),
                None => return Err(ModelError::Scope(p.name().to_string())),
            }
        }
        let ident = Cpd::identity(self.child.clone(), parents.to_vec()).to_factor();
        let prod = ident.product(&self.to_factor())?;
        let names: Vec<&str> = parents.iter().map(Variable::name).collect();
        let f = prod.reorder(&[&[self.child.name()][..], &names[..]].concat())?;
        Ok(Cpd {
            child: self.child.clone(),
            parents: parents.to_vec(),
            table: f.into_values(),
            mode: self.mode,
        })
    }

    /// Divides every column by its sum.
    pub fn normalize_columns(&self) -> Result<Cpd> {
        let cols = self.columns();
        let rows = self.rows();
        let mut table = self.table.clone();
        for j in 0..cols {
            let s: f64 = (0..rows).map(|i| table[i * cols + j]).sum();
            if !(s > 0.0) || !s.is_finite() {
                return Err(ModelError::Degenerate {
                    child: self.child.name().to_string(),
                    column: j,
                });
            }
            for i in 0..rows {
                table[i * cols + j] /= s;
            }
        }
        Ok(Cpd {
            child: self.child.clone(),
            parents: self.parents.clone(),
            table,
            mode: CpdMode::Probability,
        })
    }

    /// Largest entrywise difference against a CPD over the same variables
    /// (parents may be ordered differently).
    pub fn max_abs_diff(&self, other: &Cpd) -> Result<f64> {
        self.to_factor().max_abs_diff(&other.to_factor())
    }
}

/// Structure-only DAG over named variables.
#[derive(Clone, Debug, PartialEq)]
pub struct Dag {
    variables: Vec<Variable>,
    parents: Vec<Vec<usize>>,
    index: HashMap<String, usize>,
}

impl Dag {
    pub fn new(variables: Vec<Variable>, parents: Vec<Vec<usize>>) -> Result<Self> {
        if variables.len() != parents.len() {
            return Err(ModelError::InvalidNetwork("parent list length mismatch".into()));
        }
        let mut index = HashMap::with_capacity(variables.len());
        for (i, v) in variables.iter().enumerate() {
            if index.insert(v.name().to_string(), i).is_some() {
                return Err(ModelError::InvalidNetwork(format!("duplicate variable `{}`", v.name())));
            }
        }
        if let Some(bad) = parents.iter().flatten().find(|&&p| p >= variables.len()) {
            return Err(ModelError::InvalidNetwork(format!("parent index {bad} out of range")));
        }
        let dag = Dag {
            variables,
            parents,
            index,
        };
        dag.topological_order()?;
        Ok(dag)
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn parents_of(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.parents
            .iter()
            .enumerate()
            .flat_map(|(c, ps)| ps.iter().map(move |&p| (p, c)))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.parents.iter().map(Vec::len).sum()
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut ch = vec![Vec::new(); self.variables.len()];
        for (p, c) in self.edges() {
            ch[p].push(c);
        }
        for c in &mut ch {
            c.sort_unstable();
        }
        ch
    }

    /// Kahn's order, smallest index first among ready nodes.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let n = self.variables.len();
        let mut indeg: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let children = self.children();
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &c in &children[i] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() != n {
            let stuck = (0..n).find(|&i| indeg[i] > 0).unwrap_or(0);
            return Err(ModelError::Cycle(self.variables[stuck].name().to_string()));
        }
        Ok(order)
    }

    /// Subgraph induced on the named variables, in this DAG's variable order.
    pub fn induced(&self, names: &BTreeSet<String>) -> Dag {
        let keep: Vec<usize> = (0..self.variables.len())
            .filter(|&i| names.contains(self.variables[i].name()))
            .collect();
        let remap: HashMap<usize, usize> = keep.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        let variables = keep.iter().map(|&i| self.variables[i].clone()).collect();
        let parents = keep
            .iter()
            .map(|&i| self.parents[i].iter().filter_map(|p| remap.get(p).copied()).collect())
            .collect();
        Dag::new(variables, parents).expect("induced subgraph of a DAG is a DAG")
    }
}

/// Directed acyclic network with one CPD per variable.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteNetwork {
    name: String,
    cpds: Vec<Cpd>,
    dag: Dag,
}

impl DiscreteNetwork {
    /// Variables are taken in CPD order; every CPD parent must have its own CPD.
    pub fn new(name: impl Into<String>, cpds: Vec<Cpd>) -> Result<Self> {
        let variables: Vec<Variable> = cpds.iter().map(|c| c.child().clone()).collect();
        let index: HashMap<&str, usize> = variables.iter().enumerate().map(|(i, v)| (v.name(), i)).collect();
        let mut parents = Vec::with_capacity(cpds.len());
        for cpd in &cpds {
            let mut ps = Vec::with_capacity(cpd.parents().len());
            for p in cpd.parents() {
                let i = *index.get(p.name()).ok_or_else(|| {
                    ModelError::InvalidNetwork(format!(
                        "parent `{}` of `{}` has no CPD",
                        p.name(),
                        cpd.child().name()
                    ))
                })?;
                if variables[i] != *p {
                    return Err(ModelError::Alignment(p.name().to_string()));
                }
                ps.push(i);
            }
            parents.push(ps);
        }
        let dag = Dag::new(variables, parents)?;
        Ok(DiscreteNetwork {
            name: name.into(),
            cpds,
            dag,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn variables(&self) -> &[Variable] {
        self.dag.variables()
    }

    pub fn variable(&self, name: &str) -> Option<&Variable> {
        self.dag.index_of(name).map(|i| &self.dag.variables()[i])
    }

    pub fn variable_names(&self) -> Vec<String> {
        self.variables().iter().map(|v| v.name().to_string()).collect()
    }

    pub fn cpds(&self) -> &[Cpd] {
        &self.cpds
    }

    pub fn cpd(&self, name: &str) -> Option<&Cpd> {
        self.dag.index_of(name).map(|i| &self.cpds[i])
    }

    pub fn structure(&self) -> &Dag {
        &self.dag
    }

    pub fn len(&self) -> usize {
        self.cpds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cpds.is_empty()
    }

    /// Directed (parent, child) name pairs.
    pub fn edges(&self) -> Vec<(String, String)> {
        self.cpds
            .iter()
            .flat_map(|c| {
                c.parents()
                    .iter()
                    .map(move |p| (p.name().to_string(), c.child().name().to_string()))
            })
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.dag.edge_count()
    }

    pub fn parameter_count(&self) -> usize {
        self.cpds.iter().map(Cpd::independent_parameters).sum()
    }

    pub fn factors(&self) -> Vec<Factor> {
        self.cpds.iter().map(Cpd::to_factor).collect()
    }

    pub fn has_share_cpds(&self) -> bool {
        self.cpds.iter().any(|c| c.mode() == CpdMode::Share)
    }
}

/// Undirected model obtained by moralization: one factor per source CPD.
#[derive(Clone, Debug, PartialEq)]
pub struct MoralizedModel {
    variables: Vec<Variable>,
    edges: BTreeSet<(String, String)>,
    factors: Vec<Factor>,
}

fn undirected(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl MoralizedModel {
    /// Moralizes an arbitrary CPD collection; its parent relation may be cyclic.
    pub fn from_cpds(cpds: &[Cpd], extra_edges: &[(String, String)]) -> Self {
        let mut vars: BTreeMap<String, Variable> = BTreeMap::new();
        let mut edges = BTreeSet::new();
        for cpd in cpds {
            vars.insert(cpd.child().name().to_string(), cpd.child().clone());
            for p in cpd.parents() {
                vars.entry(p.name().to_string()).or_insert_with(|| p.clone());
                edges.insert(undirected(p.name(), cpd.child().name()));
            }
            let ps = cpd.parents();
            for i in 0..ps.len() {
                for j in i + 1..ps.len() {
                    edges.insert(undirected(ps[i].name(), ps[j].name()));
                }
            }
        }
        for (a, b) in extra_edges {
            if a != b {
                edges.insert(undirected(a, b));
            }
        }
        MoralizedModel {
            variables: vars.into_values().collect(),
            edges,
            factors: cpds.iter().map(Cpd::to_factor).collect(),
        }
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    /// Undirected edges as name pairs with the smaller name first.
    pub fn edges(&self) -> &BTreeSet<(String, String)> {
        &self.edges
    }

    pub fn has_edge(&self, a: &str, b: &str) -> bool {
        self.edges.contains(&undirected(a, b))
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }
}

/// Drops edge directions and marries co-parents. `extra_edges` may introduce cycles.
pub fn moralize(network: &DiscreteNetwork, extra_edges: &[(String, String)]) -> MoralizedModel {
    MoralizedModel::from_cpds(network.cpds(), extra_edges)
}
