mod common;

use std::collections::BTreeSet;

use bnshare_core::partition::{build_party, overlap_count, related_split, split, weights, SplitMethod, SplitSpec, WeightPolicy};
use bnshare_core::sampling::forward_sample;
use common::load;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn asia_two_parties_share_one_edge() {
    let asia = load("asia");
    let dag = asia.structure();
    let k = overlap_count(0.1, asia.len());
    assert_eq!(k, 1);
    let s = related_split(dag, 2, k, 3, &mut ChaCha8Rng::seed_from_u64(3));
    let ov: Vec<String> = s.overlaps().into_iter().collect();
    assert_eq!(ov.len(), 2);
    let edges = asia.edges();
    assert!(edges.contains(&(ov[0].clone(), ov[1].clone())) || edges.contains(&(ov[1].clone(), ov[0].clone())));
    // each party's induced subgraph is weakly connected
    for p in 0..2 {
        let set = s.party_set(p);
        let sub = dag.induced(&set);
        let mut reach: BTreeSet<usize> = [0].into();
        loop {
            let before = reach.len();
            for (a, b) in sub.edges() {
                if reach.contains(&a) || reach.contains(&b) {
                    reach.extend([a, b]);
                }
            }
            if reach.len() == before {
                break;
            }
        }
        assert_eq!(reach.len(), sub.len(), "party {p}");
    }
}

#[test]
fn overlap_variables_live_in_two_or_more_parties() {
    for name in ["child", "alarm", "insurance"] {
        let n = load(name);
        for method in [SplitMethod::Related, SplitMethod::Random] {
            let spec = SplitSpec {
                method,
                n_parties: 4,
                overlap_fraction: 0.3,
                seed: 9,
            };
            let s = split(n.structure(), &spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
            let ov = s.overlaps();
            for v in n.variable_names() {
                let holders = s.parties.iter().filter(|p| p.contains(&v)).count();
                assert_eq!(holders >= 2, ov.contains(&v), "{name} {v}");
                assert!(holders >= 1);
            }
        }
    }
}

#[test]
fn full_party_with_plenty_of_data_is_close_and_weights_follow_samples() {
    let asia = load("asia");
    let all: BTreeSet<String> = asia.variable_names().into_iter().collect();
    let samples = forward_sample(&asia, 1000, &mut ChaCha8Rng::seed_from_u64(1));
    let party = build_party(&asia, &all, &samples, 1.0).unwrap();
    assert_eq!(party.network.edges(), asia.edges());
    let sub: BTreeSet<String> = ["asia", "tub", "smoke"].iter().map(|s| s.to_string()).collect();
    let party = build_party(&asia, &sub, &samples, 0.5).unwrap();
    assert_eq!(party.network.edge_count(), 1);
    assert_eq!(weights(WeightPolicy::SampleProportional, &[1000, 9000]), vec![0.1, 0.9]);
}
