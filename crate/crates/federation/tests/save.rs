mod common;

use std::collections::{BTreeMap, BTreeSet};

use bnshare_core::combine::WeightedModel;
use bnshare_core::partition::SplitMethod;
use bnshare_core::{Cpd, CpdMode, DiscreteNetwork, Variable};
use bnshare_federation::harness::CentralUnion;
use bnshare_federation::netsim::{Bus, Transport};
use bnshare_federation::save::local_solve;
use bnshare_federation::{
    count_messages, expose_node, run_cabn, run_query, CabnConfig, CabnMode, Federation, PartySpec, ProtocolError,
    Query, Scheduler, VarRef, Variant,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bin(name: &str) -> Variable {
    Variable::with_states(name, &["no", "yes"])
}

fn prior(name: &str, p: f64) -> Cpd {
    Cpd::new(bin(name), vec![], vec![p, 1.0 - p], CpdMode::Probability).unwrap()
}

fn conditional(child: &str, parent: &str, table: [f64; 4]) -> Cpd {
    Cpd::new(bin(child), vec![bin(parent)], table.to_vec(), CpdMode::Probability).unwrap()
}

/// P1 models A -> X -> Y, P2 models B -> X -> Z; X is the only overlap.
fn two_sensor_specs() -> Vec<PartySpec> {
    vec![
        PartySpec {
            id: "p00".into(),
            network: DiscreteNetwork::new(
                "p1",
                vec![
                    prior("A", 0.3),
                    conditional("X", "A", [0.9, 0.2, 0.1, 0.8]),
                    conditional("Y", "X", [0.7, 0.1, 0.3, 0.9]),
                ],
            )
            .unwrap(),
            weight: 1.0,
        },
        PartySpec {
            id: "p01".into(),
            network: DiscreteNetwork::new(
                "p2",
                vec![
                    prior("B", 0.6),
                    conditional("X", "B", [0.8, 0.3, 0.2, 0.7]),
                    conditional("Z", "X", [0.95, 0.25, 0.05, 0.75]),
                ],
            )
            .unwrap(),
            weight: 1.0,
        },
    ]
}

fn augment(specs: Vec<PartySpec>, mode: CabnMode) -> (Federation, Bus) {
    let ids: Vec<String> = specs.iter().map(|s| s.id.clone()).collect();
    let mut bus = Bus::with_parties(&ids);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let fed = run_cabn(specs, &CabnConfig::with_mode(mode), &mut bus, &mut rng).unwrap();
    (fed, bus)
}

fn central(specs: &[PartySpec]) -> CentralUnion {
    let models: Vec<WeightedModel> = specs
        .iter()
        .map(|s| WeightedModel::new(s.network.clone(), s.weight).unwrap())
        .collect();
    CentralUnion::new(&models).unwrap()
}

fn ask(fed: &Federation, bus: &mut Bus, session: &str, requester: &str, target: &str, evidence: &[(&str, &str)], variant: Variant) -> Vec<f64> {
    let dir = fed.directory();
    let clear: BTreeMap<String, String> = evidence.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
    let ev = dir.encode_evidence(&clear).unwrap();
    let t = dir.token(target).unwrap().token().to_string();
    let q = Query::tokens(&[t.as_str()], &ev, variant);
    let out = run_query(fed, bus, session, requester, &q, Scheduler::Sequential).unwrap();
    dir.decode_marginal(&out.posterior).unwrap()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn evidence_propagates_between_parties() {
    let specs = two_sensor_specs();
    let cu = central(&specs);
    let evidence = BTreeMap::from([("A".to_string(), "yes".to_string())]);
    let reference = cu.query("Z", &evidence).unwrap();
    let prior_z = cu.query("Z", &BTreeMap::new()).unwrap();
    assert!(max_diff(&reference, &prior_z) > 1e-3);

    let (fed, mut bus) = augment(specs.clone(), CabnMode::Ccbnet);
    let got = ask(&fed, &mut bus, "q0", "p01", "Z", &[("A", "yes")], Variant::Ccbnet);
    assert!(max_diff(&got, &reference) < 1e-9, "{got:?} vs {reference:?}");

    let dom = ask(&fed, &mut bus, "q1", "p01", "Z", &[("A", "yes")], Variant::Dom);
    assert!(max_diff(&dom, &reference) > 1e-3, "{dom:?} vs {reference:?}");

    let (joined, mut bus) = augment(specs, CabnMode::Ccbnetj);
    let got = ask(&joined, &mut bus, "q2", "p00", "Z", &[("A", "yes")], Variant::Ccbnetj);
    assert!(max_diff(&got, &reference) < 1e-9);
}

#[test]
fn local_solve_keeps_query_overlap_and_parents() {
    let (fed, _) = augment(two_sensor_specs(), CabnMode::Ccbnet);
    let dir = fed.directory();
    let p2 = fed.party("p01").unwrap();
    let q = Query::tokens(&[dir.token("Z").unwrap().token()], &BTreeMap::new(), Variant::Ccbnet);
    let env = bnshare_federation::save::QueryEnvelope {
        request: "r".into(),
        targets: q.targets.iter().map(|t| match t {
            VarRef::Token(t) => t.clone(),
            VarRef::Exposed(_) => unreachable!(),
        }).collect(),
        evidence: BTreeMap::new(),
        shared_key: None,
        variant: Variant::Ccbnet,
        hardened: false,
    };
    let reply = local_solve(p2, "p00", &env).unwrap();
    let mut scope = BTreeSet::new();
    for f in &reply.factors {
        for v in &f.to_factor().unwrap().scope().to_vec() {
            scope.insert(dir.name(v.name()).unwrap().to_string());
        }
    }
    // A enters through the union parents of X in P2's share.
    let expected: BTreeSet<String> = ["A", "B", "X", "Z"].iter().map(|s| s.to_string()).collect();
    assert_eq!(scope, expected);

    // A party modeling none of the query or overlaps answers with nothing.
    let mut specs = two_sensor_specs();
    specs.push(PartySpec {
        id: "p02".into(),
        network: DiscreteNetwork::new("p3", vec![prior("W", 0.5)]).unwrap(),
        weight: 1.0,
    });
    let (fed, mut bus) = augment(specs, CabnMode::Ccbnet);
    let p3 = fed.party("p02").unwrap();
    assert!(local_solve(p3, "p00", &env).unwrap().factors.is_empty());
    let dir = fed.directory();
    let q = Query::tokens(&[dir.token("Z").unwrap().token()], &BTreeMap::new(), Variant::Ccbnet);
    let start = bus.transcript().records().len();
    let out = run_query(&fed, &mut bus, "q-empty", "p00", &q, Scheduler::Sequential).unwrap();
    assert_eq!(out.messages, 4);
    let p3_reply: Vec<_> = bus.transcript().records()[start..]
        .iter()
        .filter(|r| r.sender == "p02" && r.recipient == "p00")
        .collect();
    assert_eq!(p3_reply.len(), 1);
    assert_eq!(p3_reply[0].values, 0);
}

#[test]
fn exposure_needs_every_holder() {
    let (mut fed, mut bus) = augment(two_sensor_specs(), CabnMode::Ccbnet);
    let only_p1: BTreeSet<String> = ["p00".to_string()].into();
    assert!(matches!(expose_node(&mut fed, "X", &only_p1), Err(ProtocolError::Consent(_))));
    let both: BTreeSet<String> = ["p00".to_string(), "p01".to_string()].into();
    expose_node(&mut fed, "X", &both).unwrap();
    expose_node(&mut fed, "Z", &both).unwrap();

    let by_name = Query {
        targets: vec![VarRef::Exposed("Z".into())],
        evidence: vec![(VarRef::Exposed("X".into()), "yes".into())],
        shared_key: None,
        variant: Variant::Ccbnet,
        hardened: false,
    };
    let named = run_query(&fed, &mut bus, "e0", "p00", &by_name, Scheduler::Sequential).unwrap();
    let tokens = ask(&fed, &mut bus, "e1", "p00", "Z", &[("X", "yes")], Variant::Ccbnet);
    let decoded: Vec<f64> = fed.exposures.decode("Z", &named.posterior).unwrap().into_iter().map(|(_, p)| p).collect();
    assert!(max_diff(&decoded, &tokens) < 1e-12);

    let hidden = Query {
        targets: vec![VarRef::Exposed("Y".into())],
        ..by_name
    };
    assert!(matches!(
        run_query(&fed, &mut bus, "e2", "p00", &hidden, Scheduler::Sequential),
        Err(ProtocolError::Refused { .. })
    ));

    // Re-augmentation keeps exposed names queryable.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let again = fed.reaugment(&mut bus, &mut rng).unwrap();
    let q = Query {
        targets: vec![VarRef::Exposed("Z".into())],
        evidence: vec![],
        shared_key: None,
        variant: Variant::Ccbnet,
        hardened: false,
    };
    run_query(&again, &mut bus, "e3", "p01", &q, Scheduler::Sequential).unwrap();
}

#[test]
fn hardened_replies_keep_the_posterior() {
    let (fed, mut bus) = common::federate("child", SplitMethod::Related, 4, 0.3, 3, CabnMode::Ccbnet);
    let dir = fed.directory();
    let (token, holders) = fed.overlaps().into_iter().next().unwrap();
    let q = Query::tokens(&[token.as_str()], &BTreeMap::new(), Variant::Ccbnet);
    let plain = run_query(&fed, &mut bus, "h0", &holders[0], &q, Scheduler::Sequential).unwrap();
    let hard = run_query(&fed, &mut bus, "h1", &holders[0], &q.clone().hardened(true), Scheduler::Sequential).unwrap();
    let a = dir.decode_marginal(&plain.posterior).unwrap();
    let b = dir.decode_marginal(&hard.posterior).unwrap();
    assert!(max_diff(&a, &b) < 1e-9);
    println!("plain {} values, hardened {}", plain.values, hard.values);
    assert!(hard.values >= plain.values);
}

#[test]
fn shared_key_observations_act_as_evidence() {
    let specs = two_sensor_specs();
    let (mut fed, mut bus) = augment(specs, CabnMode::Ccbnet);
    fed.party_mut("p01").unwrap().observe("case-17", "B", "yes").unwrap();
    let explicit = ask(&fed, &mut bus, "k0", "p00", "Y", &[("B", "yes")], Variant::Ccbnet);
    let dir = fed.directory();
    let mut q = Query::tokens(&[dir.token("Y").unwrap().token()], &BTreeMap::new(), Variant::Ccbnet);
    q.shared_key = Some("case-17".into());
    let out = run_query(&fed, &mut bus, "k1", "p00", &q, Scheduler::Sequential).unwrap();
    let keyed = dir.decode_marginal(&out.posterior).unwrap();
    assert!(max_diff(&explicit, &keyed) < 1e-9);
    let unkeyed = ask(&fed, &mut bus, "k2", "p00", "Y", &[], Variant::Ccbnet);
    assert!(max_diff(&unkeyed, &keyed) > 1e-4);
}

/// Overlap X of the two-sensor federation has union parents A and B: four
/// parent configurations.
fn probe(fed: &Federation, bus: &mut Bus, session: &str, a: &str, b: &str) -> Result<(), ProtocolError> {
    let dir = fed.directory();
    let clear = BTreeMap::from([("A".to_string(), a.to_string()), ("B".to_string(), b.to_string())]);
    let q = Query::tokens(&[dir.token("X").unwrap().token()], &dir.encode_evidence(&clear).unwrap(), Variant::Ccbnet);
    run_query(fed, bus, session, "p00", &q, Scheduler::Sequential).map(|_| ())
}

#[test]
fn rate_limit_counts_full_parent_probes() {
    let (mut fed, mut bus) = augment(two_sensor_specs(), CabnMode::Ccbnet);
    fed.party_mut("p01").unwrap().defend_rate_limit(0);
    assert!(matches!(probe(&fed, &mut bus, "r0", "no", "no"), Err(ProtocolError::Refused { .. })));

    let (mut fed, mut bus) = augment(two_sensor_specs(), CabnMode::Ccbnet);
    fed.party_mut("p01").unwrap().defend_rate_limit(2);
    for (i, target) in ["Y", "Z", "X"].iter().cycle().take(100).enumerate() {
        let ev: &[(&str, &str)] = if *target == "X" { &[("A", "yes")] } else { &[("X", "no")] };
        ask(&fed, &mut bus, &format!("b{i}"), "p00", target, ev, Variant::Ccbnet);
    }
    let combos = [("no", "no"), ("no", "yes"), ("yes", "no"), ("yes", "yes")];
    let outcomes: Vec<bool> = combos
        .iter()
        .enumerate()
        .map(|(i, (a, b))| probe(&fed, &mut bus, &format!("t{i}"), a, b).is_ok())
        .collect();
    assert_eq!(outcomes, vec![true, true, false, false]);
}

#[test]
fn a_query_costs_two_messages_per_other_party() {
    for n in [2, 4, 8, 16] {
        let (fed, mut bus) = common::federate("win95pts", SplitMethod::Random, n, 0.3, 21, CabnMode::Ccbnet);
        let (token, holders) = fed.overlaps().into_iter().next().unwrap();
        let q = Query::tokens(&[token.as_str()], &BTreeMap::new(), Variant::Ccbnet);
        for scheduler in [Scheduler::Sequential, Scheduler::Concurrent] {
            let out = run_query(&fed, &mut bus, &format!("m{n}{scheduler:?}"), &holders[0], &q, scheduler).unwrap();
            assert_eq!(out.messages, count_messages(n));
            assert_eq!(out.messages, 2 * n - 2);
        }
    }
}

#[test]
fn concurrent_answers_match_sequential() {
    let (fed, mut bus) = common::federate("child", SplitMethod::Random, 4, 0.3, 8, CabnMode::Ccbnet);
    let dir = fed.directory();
    for (i, (token, holders)) in fed.overlaps().into_iter().enumerate().take(5) {
        let q = Query::tokens(&[token.as_str()], &BTreeMap::new(), Variant::Ccbnet);
        let a = run_query(&fed, &mut bus, &format!("s{i}"), &holders[0], &q, Scheduler::Sequential).unwrap();
        let b = run_query(&fed, &mut bus, &format!("c{i}"), &holders[0], &q, Scheduler::Concurrent).unwrap();
        assert_eq!(dir.decode_marginal(&a.posterior).unwrap(), dir.decode_marginal(&b.posterior).unwrap());
        assert_eq!((a.messages, a.values, a.bytes), (b.messages, b.values, b.bytes));
    }
}

#[test]
fn variant_must_match_augmentation() {
    let (fed, mut bus) = augment(two_sensor_specs(), CabnMode::Ccbnetj);
    let dir = fed.directory();
    let q = Query::tokens(&[dir.token("Z").unwrap().token()], &BTreeMap::new(), Variant::Ccbnet);
    assert!(matches!(
        run_query(&fed, &mut bus, "v0", "p00", &q, Scheduler::Sequential),
        Err(ProtocolError::Invalid(_))
    ));
    let _ = bus.transcript();
}
