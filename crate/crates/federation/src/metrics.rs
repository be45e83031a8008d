//! Brier score, computation overhead, communicated values, and the query
//! workload they are measured on.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use bnshare_core::sampling::forward_sample;
use bnshare_core::{posterior, DiscreteNetwork};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{ProtocolError, Result};
use crate::netsim::Transcript;

pub const DEFAULT_QUERY_COUNT: usize = 2000;
pub const DEFAULT_EVIDENCE_FRACTION: f64 = 0.6;

/// Mean over queries of the summed squared differences between predicted
/// and reference state probabilities.
pub fn brier(predictions: &[Vec<f64>], references: &[Vec<f64>]) -> Result<f64> {
    if predictions.len() != references.len() {
        return Err(ProtocolError::Invalid(format!(
            "{} predictions for {} references",
            predictions.len(),
            references.len()
        )));
    }
    if predictions.is_empty() {
        return Err(ProtocolError::Invalid("no queries to score".into()));
    }
    let mut total = 0.0;
    for (t, (f, o)) in predictions.iter().zip(references).enumerate() {
        if f.len() != o.len() {
            return Err(ProtocolError::Invalid(format!("query {t}: {} states vs {}", f.len(), o.len())));
        }
        total += f.iter().zip(o).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total / predictions.len() as f64)
}

/// Total method time over total baseline time; below 1 is a speedup.
pub fn time_overhead(method: &[Duration], baseline: &[Duration]) -> Result<f64> {
    let base: f64 = baseline.iter().map(Duration::as_secs_f64).sum();
    if !(base > 0.0) {
        return Err(ProtocolError::Invalid("baseline time is zero".into()));
    }
    Ok(method.iter().map(Duration::as_secs_f64).sum::<f64>() / base)
}

/// (factor values, messages between distinct parties) recorded for a query.
/// Values include the requester's internal reply.
pub fn count_values(transcript: &Transcript, session: &str) -> (usize, usize) {
    (transcript.values_for(session), transcript.messages_for(session))
}

/// One evaluation query over cleartext names.
#[derive(Clone, Debug, PartialEq)]
pub struct QuerySpec {
    pub target: String,
    pub evidence: BTreeMap<String, String>,
    /// Posterior of the target in the ground-truth network, cleartext state order.
    pub reference: Vec<f64>,
    pub reference_time: Duration,
}

/// Draws `count` queries: the target uniformly among `overlaps`, and
/// `round(evidence_frac * (|V| - 1))` other variables observed at the
/// states of one joint forward sample.
pub fn make_queries(
    ground_truth: &DiscreteNetwork,
    overlaps: &BTreeSet<String>,
    count: usize,
    evidence_frac: f64,
    seed: u64,
) -> Result<Vec<QuerySpec>> {
    if overlaps.is_empty() {
        return Err(ProtocolError::Invalid("no overlap variables to query".into()));
    }
    if !(0.0..1.0).contains(&evidence_frac) {
        return Err(ProtocolError::Invalid(format!("evidence fraction {evidence_frac} outside [0, 1)")));
    }
    for o in overlaps {
        if ground_truth.variable(o).is_none() {
            return Err(ProtocolError::Invalid(format!("overlap `{o}` is not in the network")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets: Vec<&String> = overlaps.iter().collect();
    let names = ground_truth.variable_names();
    let n_evidence = (evidence_frac * (names.len() - 1) as f64).round_ties_even() as usize;
    let factors = ground_truth.factors();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let target = (*targets.choose(&mut rng).expect("nonempty")).clone();
        let others: Vec<&String> = names.iter().filter(|n| **n != target).collect();
        let chosen: Vec<&&String> = others.choose_multiple(&mut rng, n_evidence).collect();
        let sample = forward_sample(ground_truth, 1, &mut rng);
        let evidence: BTreeMap<String, String> = chosen
            .into_iter()
            .map(|n| {
                let col = sample.column_of(n).expect("sampled variable");
                ((*n).clone(), sample.label(0, col).to_string())
            })
            .collect();
        let t = Instant::now();
        let post = posterior(&factors, &[target.as_str()], &evidence)?;
        let reference_time = t.elapsed();
        out.push(QuerySpec {
            target,
            evidence,
            reference: post.into_values(),
            reference_time,
        });
    }
    Ok(out)
}

/// Metrics of one method on one experiment cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub network: String,
    pub split: String,
    pub parties: usize,
    pub overlap: f64,
    pub method: String,
    pub brier: f64,
    pub time_overhead: f64,
    /// Mean factor values communicated per query.
    pub comm_values: f64,
    /// Mean messages per query.
    pub messages: f64,
}

impl MetricsRecord {
    pub fn metrics(&self) -> [(&'static str, f64); 4] {
        [
            ("brier", self.brier),
            ("time_overhead", self.time_overhead),
            ("comm_values", self.comm_values),
            ("messages", self.messages),
        ]
    }
}

/// Metrics that depend only on the configuration and seed.
pub const DETERMINISTIC_METRICS: [&str; 3] = ["brier", "comm_values", "messages"];

/// Long-format CSV: one row per (network, split, parties, overlap, method,
/// metric), restricted to the metrics named in `metrics`.
pub fn write_csv<W: std::io::Write>(records: &[MetricsRecord], metrics: &[&str], out: W) -> Result<()> {
    let err = |e: csv::Error| ProtocolError::Invalid(format!("csv output: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["network", "split", "parties", "overlap", "method", "metric", "value"])
        .map_err(err)?;
    for r in records {
        for (metric, value) in r.metrics().into_iter().filter(|(m, _)| metrics.contains(m)) {
            w.write_record([
                r.network.as_str(),
                r.split.as_str(),
                &r.parties.to_string(),
                &r.overlap.to_string(),
                r.method.as_str(),
                metric,
                &value.to_string(),
            ])
            .map_err(err)?;
        }
    }
    w.flush().map_err(|e| ProtocolError::Invalid(format!("csv output: {e}")))?;
    Ok(())
}
