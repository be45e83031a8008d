//! Party variable sets carved out of a ground-truth network, and party model
//! construction from sampled data.
//!
//! Related splits group variables by greedy modularity on a DFS forest and
//! then share endpoints of cross-community edges. Random splits shuffle the
//! variables into equal parts and give every part the same overlap sample.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::combine::WeightedModel;
use crate::community::greedy_modularity;
use crate::error::{ModelError, Result};
use crate::network::{Dag, DiscreteNetwork};
use crate::sampling::{mle_fit, Samples};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SplitMethod {
    Related,
    Random,
}

impl fmt::Display for SplitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitMethod::Related => "related",
            SplitMethod::Random => "random",
        })
    }
}

impl FromStr for SplitMethod {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "related" => Ok(SplitMethod::Related),
            "random" => Ok(SplitMethod::Random),
            other => Err(ModelError::Invalid(format!("unknown split method `{other}`"))),
        }
    }
}

/// Number of shared variables for a fraction of `n_variables`, rounding half to even.
pub fn overlap_count(fraction: f64, n_variables: usize) -> usize {
    (fraction * n_variables as f64).round_ties_even().max(0.0) as usize
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub method: SplitMethod,
    pub n_parties: usize,
    pub overlap_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self, n_variables: usize) -> Result<()> {
        if self.n_parties == 0 || self.n_parties > n_variables {
            return Err(ModelError::Invalid(format!(
                "{} parties for {} variables",
                self.n_parties, n_variables
            )));
        }
        if !(0.0..=1.0).contains(&self.overlap_fraction) {
            return Err(ModelError::Invalid(format!(
                "overlap fraction {} outside [0, 1]",
                self.overlap_fraction
            )));
        }
        Ok(())
    }
}

/// Variable names per party, each list in ground-truth order.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub method: SplitMethod,
    pub seed: u64,
    pub parties: Vec<Vec<String>>,
}

impl Split {
    fn from_sets(method: SplitMethod, seed: u64, dag: &Dag, sets: Vec<BTreeSet<usize>>) -> Split {
        let parties = sets
            .into_iter()
            .map(|s| s.into_iter().map(|i| dag.variables()[i].name().to_string()).collect())
            .collect();
        Split { method, seed, parties }
    }

    /// Variables held by at least two parties.
    pub fn overlaps(&self) -> BTreeSet<String> {
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        for p in &self.parties {
            for v in p {
                *seen.entry(v).or_default() += 1;
            }
        }
        seen.into_iter().filter(|(_, c)| *c >= 2).map(|(v, _)| v.to_string()).collect()
    }

    pub fn party_set(&self, i: usize) -> BTreeSet<String> {
        self.parties[i].iter().cloned().collect()
    }

    pub fn to_manifest(&self) -> String {
        let mut out = String::from("split-manifest v1\n");
        out += &format!("method {}\nseed {}\nparties {}\n", self.method, self.seed, self.parties.len());
        let ov: Vec<String> = self.overlaps().into_iter().collect();
        out += &format!("overlaps {}\n", ov.join(" ")).replace(" \n", "\n");
        for (i, p) in self.parties.iter().enumerate() {
            out += &format!("party {} {}\n", i, p.join(" "));
        }
        out
    }

    pub fn from_manifest(text: &str) -> Result<Split> {
        let bad = |msg: &str| ModelError::Invalid(format!("split manifest: {msg}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some("split-manifest v1") {
            return Err(bad("missing `split-manifest v1` header"));
        }
        let mut method = None;
        let mut seed = None;
        let mut count = None;
        let mut parties: Vec<Vec<String>> = Vec::new();
        for line in lines {
            let mut words = line.split_whitespace();
            match words.next() {
                Some("method") => method = Some(words.next().ok_or_else(|| bad("empty method"))?.parse()?),
                Some("seed") => {
                    seed = Some(
                        words
                            .next()
                            .and_then(|w| w.parse::<u64>().ok())
                            .ok_or_else(|| bad("bad seed"))?,
                    )
                }
                Some("parties") => {
                    count = Some(
                        words
                            .next()
                            .and_then(|w| w.parse::<usize>().ok())
                            .ok_or_else(|| bad("bad party count"))?,
                    )
                }
                Some("overlaps") => {}
                Some("party") => {
                    let idx: usize = words.next().and_then(|w| w.parse().ok()).ok_or_else(|| bad("bad party id"))?;
                    if idx != parties.len() {
                        return Err(bad("party ids must be consecutive from 0"));
                    }
                    parties.push(words.map(str::to_string).collect());
                }
                Some(other) => return Err(bad(&format!("unknown key `{other}`"))),
                None => {}
            }
        }
        if count != Some(parties.len()) {
            return Err(bad("party count does not match party lines"));
        }
        Ok(Split {
            method: method.ok_or_else(|| bad("missing method"))?,
            seed: seed.ok_or_else(|| bad("missing seed"))?,
            parties,
        })
    }
}

/// Depth-first forest over directed edges, roots tried in variable order.
pub fn dfs_forest(dag: &Dag) -> Vec<(usize, usize)> {
    let children = dag.children();
    let mut visited = vec![false; dag.len()];
    let mut tree = Vec::new();
    for root in 0..dag.len() {
        if visited[root] {
            continue;
        }
        visited[root] = true;
        let mut stack = vec![(root, 0usize)];
        while let Some((node, next)) = stack.last_mut() {
            let node = *node;
            if let Some(&c) = children[node].get(*next) {
                *next += 1;
                if !visited[c] {
                    visited[c] = true;
                    tree.push((node, c));
                    stack.push((c, 0));
                }
            } else {
                stack.pop();
            }
        }
    }
    tree
}

/// Community split with overlaps taken from shuffled cross-community edges.
///
/// An edge between two communities shares each endpoint with the other
/// endpoint's community. Until every community has been connected, edges
/// whose communities are both already connected are deferred and used only
/// if the overlap budget is still open afterwards. The budget is checked per
/// edge, so the final count can exceed `n_overlaps` by one.
pub fn related_split<R: Rng + ?Sized>(dag: &Dag, n: usize, n_overlaps: usize, seed: u64, rng: &mut R) -> Split {
    let tree = dfs_forest(dag);
    let communities = greedy_modularity(dag.len(), &tree, n);
    let mut home = vec![0usize; dag.len()];
    for (c, set) in communities.iter().enumerate() {
        for &v in set {
            home[v] = c;
        }
    }
    let mut splits = communities;
    let mut edges = dag.edges();
    edges.shuffle(rng);

    let mut shared: BTreeSet<usize> = BTreeSet::new();
    let mut connected: BTreeSet<usize> = BTreeSet::new();
    let mut deferred = Vec::new();
    for (o, i) in edges {
        if shared.len() >= n_overlaps {
            break;
        }
        let (so, si) = (home[o], home[i]);
        if so == si {
            continue;
        }
        if connected.len() < n && connected.contains(&so) && connected.contains(&si) {
            deferred.push((o, i));
        } else {
            shared.extend([o, i]);
            connected.extend([so, si]);
            splits[si].insert(o);
            splits[so].insert(i);
        }
    }
    for (o, i) in deferred {
        if shared.len() >= n_overlaps {
            break;
        }
        shared.extend([o, i]);
        splits[home[i]].insert(o);
        splits[home[o]].insert(i);
    }
    if shared.len() < n_overlaps {
        log::warn!(
            "related split reached {} of {} requested overlaps for this topology",
            shared.len(),
            n_overlaps
        );
    }
    Split::from_sets(SplitMethod::Related, seed, dag, splits)
}

/// Equal parts of shuffled variables, each joined with one common overlap sample.
pub fn random_split<R: Rng + ?Sized>(dag: &Dag, n: usize, n_overlaps: usize, seed: u64, rng: &mut R) -> Split {
    let mut nodes: Vec<usize> = (0..dag.len()).collect();
    nodes.shuffle(rng);
    let overlaps: Vec<usize> = nodes
        .choose_multiple(rng, n_overlaps.min(nodes.len()))
        .copied()
        .collect();
    let base = nodes.len() / n;
    let extra = nodes.len() % n;
    let mut start = 0;
    let mut splits = Vec::with_capacity(n);
    for p in 0..n {
        let size = base + usize::from(p < extra);
        let mut part: BTreeSet<usize> = nodes[start..start + size].iter().copied().collect();
        part.extend(overlaps.iter().copied());
        splits.push(part);
        start += size;
    }
    Split::from_sets(SplitMethod::Random, seed, dag, splits)
}

pub fn split<R: Rng + ?Sized>(dag: &Dag, spec: &SplitSpec, rng: &mut R) -> Result<Split> {
    spec.validate(dag.len())?;
    let k = overlap_count(spec.overlap_fraction, dag.len());
    Ok(match spec.method {
        SplitMethod::Related => related_split(dag, spec.n_parties, k, spec.seed, rng),
        SplitMethod::Random => random_split(dag, spec.n_parties, k, spec.seed, rng),
    })
}

/// Party model: the induced subgraph with parameters fitted on `samples`.
pub fn build_party(
    ground_truth: &DiscreteNetwork,
    variables: &BTreeSet<String>,
    samples: &Samples,
    weight: f64,
) -> Result<WeightedModel> {
    if variables.is_empty() {
        return Err(ModelError::Invalid("party without variables".into()));
    }
    let structure = ground_truth.structure().induced(variables);
    let fitted = mle_fit(&structure, samples)?.renamed(ground_truth.name());
    WeightedModel::new(fitted, weight)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightPolicy {
    Uniform,
    /// Proportional to each party's sample count, summing to one.
    SampleProportional,
}

impl FromStr for WeightPolicy {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(WeightPolicy::Uniform),
            "samples" | "sample-proportional" => Ok(WeightPolicy::SampleProportional),
            other => Err(ModelError::Invalid(format!("unknown weight policy `{other}`"))),
        }
    }
}

pub fn weights(policy: WeightPolicy, samples_per_party: &[usize]) -> Vec<f64> {
    match policy {
        WeightPolicy::Uniform => vec![1.0; samples_per_party.len()],
        WeightPolicy::SampleProportional => {
            let total: usize = samples_per_party.iter().sum();
            samples_per_party.iter().map(|&s| s as f64 / total as f64).collect()
        }
    }
}

/// Alternating small and large sample allotments.
pub fn alternating_allotment(n_parties: usize, small: usize, large: usize) -> Vec<usize> {
    (0..n_parties).map(|i| if i % 2 == 0 { small } else { large }).collect()
}
