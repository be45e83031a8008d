#![allow(dead_code)]

use std::path::PathBuf;

use bnshare_core::bif::load_bif;
use bnshare_core::partition::SplitMethod;
use bnshare_core::DiscreteNetwork;
use bnshare_federation::harness::{setup, CellSpec};
use bnshare_federation::netsim::Bus;
use bnshare_federation::{run_cabn, CabnConfig, CabnMode, Federation};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

pub fn load(name: &str) -> DiscreteNetwork {
    load_bif(&data(&format!("{name}.bif"))).unwrap().renamed(name)
}

pub fn cell(split: SplitMethod, parties: usize, overlap: f64, seed: u64, queries: usize) -> CellSpec {
    let mut c = CellSpec::new(split, parties, overlap, seed);
    c.queries = queries;
    c
}

pub fn federate(
    name: &str,
    split: SplitMethod,
    parties: usize,
    overlap: f64,
    seed: u64,
    mode: CabnMode,
) -> (Federation, Bus) {
    let gt = load(name);
    let setup = setup(&gt, &CellSpec::new(split, parties, overlap, seed)).unwrap();
    let ids: Vec<String> = setup.specs.iter().map(|s| s.id.clone()).collect();
    let mut bus = Bus::with_parties(&ids);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fed = run_cabn(setup.specs, &CabnConfig::with_mode(mode), &mut bus, &mut rng).unwrap();
    (fed, bus)
}
