//! Ancestral sampling and smoothed maximum-likelihood parameter fitting.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{ModelError, Result};
use crate::factor::Variable;
use crate::network::{Cpd, CpdMode, Dag, DiscreteNetwork};

/// Full assignments, one row per sample, columns aligned with `variables`.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    pub variables: Vec<Variable>,
    pub rows: Vec<Vec<usize>>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name() == name)
    }

    /// The first `n` rows.
    pub fn head(&self, n: usize) -> Samples {
        Samples {
            variables: self.variables.clone(),
            rows: self.rows.iter().take(n).cloned().collect(),
        }
    }

    /// Keeps only the named columns, in this sample set's column order.
    pub fn project(&self, names: &std::collections::BTreeSet<String>) -> Samples {
        let keep: Vec<usize> = (0..self.variables.len())
            .filter(|&i| names.contains(self.variables[i].name()))
            .collect();
        Samples {
            variables: keep.iter().map(|&i| self.variables[i].clone()).collect(),
            rows: self.rows.iter().map(|r| keep.iter().map(|&i| r[i]).collect()).collect(),
        }
    }

    /// State label of variable column `col` in row `row`.
    pub fn label(&self, row: usize, col: usize) -> &str {
        &self.variables[col].states()[self.rows[row][col]]
    }
}

fn draw<R: Rng + ?Sized>(rng: &mut R, column: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in column.enumerate() {
        if p > 0.0 {
            last = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last
}

/// Draws `count` ancestral samples in topological order.
pub fn forward_sample<R: Rng + ?Sized>(network: &DiscreteNetwork, count: usize, rng: &mut R) -> Samples {
    let dag = network.structure();
    let order = dag.topological_order().expect("networks are acyclic");
    let mut rows = Vec::with_capacity(count);
    for _ in 0..count {
        let mut row = vec![0usize; dag.len()];
        for &i in &order {
            let cpd = &network.cpds()[i];
            let mut col = 0;
            for (&p, pv) in dag.parents_of(i).iter().zip(cpd.parents()) {
                col = col * pv.cardinality() + row[p];
            }
            let cols = cpd.columns();
            row[i] = draw(rng, (0..cpd.rows()).map(|r| cpd.table()[r * cols + col]));
        }
        rows.push(row);
    }
    Samples {
        variables: network.variables().to_vec(),
        rows,
    }
}

/// Add-one smoothed relative frequencies for every CPD of `structure`.
pub fn mle_fit(structure: &Dag, samples: &Samples) -> Result<DiscreteNetwork> {
    let weighted = samples.rows.iter().map(|r| (r.as_slice(), 1.0));
    mle_fit_weighted(structure, &samples.variables, weighted, 1.0)
}

/// Fits CPDs from weighted rows with a per-cell pseudo-count.
///
/// `variables` names the columns of each row; every structure variable must be among them.
pub fn mle_fit_weighted<'a, I>(structure: &Dag, variables: &[Variable], rows: I, pseudo_count: f64) -> Result<DiscreteNetwork>
where
    I: IntoIterator<Item = (&'a [usize], f64)>,
{
    let column: HashMap<&str, usize> = variables.iter().enumerate().map(|(i, v)| (v.name(), i)).collect();
    let cols: Vec<usize> = structure
        .variables()
        .iter()
        .map(|v| {
            column
                .get(v.name())
                .copied()
                .ok_or_else(|| ModelError::Invalid(format!("variable `{}` is not observed", v.name())))
        })
        .collect::<Result<_>>()?;

    let mut counts: Vec<Vec<f64>> = (0..structure.len())
        .map(|i| {
            let ps: usize = structure
                .parents_of(i)
                .iter()
                .map(|&p| structure.variables()[p].cardinality())
                .product();
            vec![pseudo_count; structure.variables()[i].cardinality() * ps]
        })
        .collect();
    for (row, w) in rows {
        for i in 0..structure.len() {
            let mut col = 0;
            let mut ncols = 1;
            for &p in structure.parents_of(i) {
                let c = structure.variables()[p].cardinality();
                col = col * c + row[cols[p]];
                ncols *= c;
            }
            counts[i][row[cols[i]] * ncols + col] += w;
        }
    }

    let cpds = (0..structure.len())
        .map(|i| {
            let child = structure.variables()[i].clone();
            let parents: Vec<Variable> = structure
                .parents_of(i)
                .iter()
                .map(|&p| structure.variables()[p].clone())
                .collect();
            let raw = Cpd::identity(child, parents).with_table(
                counts[i].iter().map(|&c| c.max(f64::MIN_POSITIVE)).collect(),
                CpdMode::Share,
            )?;
            raw.normalize_columns()
        })
        .collect::<Result<Vec<_>>>()?;
    DiscreteNetwork::new("fitted", cpds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(p: f64) -> DiscreteNetwork {
        let a = Variable::with_states("A", &["x", "y"]);
        DiscreteNetwork::new("one", vec![Cpd::new(a, vec![], vec![p, 1.0 - p], CpdMode::Probability).unwrap()]).unwrap()
    }

    #[test]
    fn degenerate_distribution_always_draws_first_state() {
        let n = single(1.0);
        let s = forward_sample(&n, 500, &mut ChaCha8Rng::seed_from_u64(3));
        assert!(s.rows.iter().all(|r| r[0] == 0));
    }

    #[test]
    fn same_seed_same_samples() {
        let n = single(0.3);
        let a = forward_sample(&n, 100, &mut ChaCha8Rng::seed_from_u64(9));
        let b = forward_sample(&n, 100, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn unseen_parent_combination_gives_uniform_column() {
        let a = Variable::with_states("A", &["x", "y"]);
        let b = Variable::with_states("B", &["u", "v", "w"]);
        let dag = Dag::new(vec![a.clone(), b.clone()], vec![vec![], vec![0]]).unwrap();
        let samples = Samples {
            variables: vec![a, b],
            rows: vec![vec![0, 1], vec![0, 2]],
        };
        let fit = mle_fit(&dag, &samples).unwrap();
        let cpd = fit.cpd("B").unwrap();
        assert_eq!(cpd.column(1), vec![1.0 / 3.0; 3]);
        assert_eq!(cpd.column(0), vec![0.2, 0.4, 0.4]);
        assert_eq!(fit.cpd("A").unwrap().table(), &[0.75, 0.25]);
    }
}
