#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use bnshare_core::bif::load_bif;
use bnshare_core::DiscreteNetwork;

pub fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(format!("{name}.bif"))
}

pub fn load(name: &str) -> DiscreteNetwork {
    load_bif(&data(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Posterior of `target` by summing the full joint over every non-evidence
/// assignment, reading CPD entries directly.
pub fn brute_posterior(net: &DiscreteNetwork, target: &str, evidence: &BTreeMap<String, String>) -> Vec<f64> {
    let vars = net.variables();
    let dag = net.structure();
    let fixed: Vec<Option<usize>> = vars
        .iter()
        .map(|v| evidence.get(v.name()).map(|s| v.state_index(s).expect("valid evidence state")))
        .collect();
    let free: Vec<usize> = (0..vars.len()).filter(|&i| fixed[i].is_none()).collect();
    let t = dag.index_of(target).expect("target exists");
    let parent_idx: Vec<Vec<usize>> = net
        .cpds()
        .iter()
        .map(|c| c.parents().iter().map(|p| dag.index_of(p.name()).unwrap()).collect())
        .collect();
    let cpd_of: Vec<usize> = vars
        .iter()
        .map(|v| net.cpds().iter().position(|c| c.child().name() == v.name()).unwrap())
        .collect();

    let mut assign: Vec<usize> = fixed.iter().map(|f| f.unwrap_or(0)).collect();
    let mut out = vec![0.0; vars[t].cardinality()];
    loop {
        let mut p = 1.0;
        for (i, &ci) in cpd_of.iter().enumerate() {
            let cpd = &net.cpds()[ci];
            let mut col = 0;
            for (k, &pi) in parent_idx[ci].iter().enumerate() {
                col = col * cpd.parents()[k].cardinality() + assign[pi];
            }
            p *= cpd.entry(assign[i], col);
            if p == 0.0 {
                break;
            }
        }
        out[assign[t]] += p;
        // odometer over the free variables
        let mut k = free.len();
        loop {
            if k == 0 {
                let total: f64 = out.iter().sum();
                return out.iter().map(|x| x / total).collect();
            }
            k -= 1;
            let v = free[k];
            assign[v] += 1;
            if assign[v] < vars[v].cardinality() {
                break;
            }
            assign[v] = 0;
        }
    }
}
