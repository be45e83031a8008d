//! Experiment cells: split a ground-truth network into parties, augment
//! them, run the query workload with every method and collect metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use bnshare_core::partition::{build_party, split, weights, Split, SplitMethod, SplitSpec, WeightPolicy};
use bnshare_core::sampling::forward_sample;
use bnshare_core::{combine_union, posterior, DiscreteNetwork, Factor, WeightedModel};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cabn::{run_cabn, CabnConfig, CabnMode, Federation};
use crate::crypto::norm::NormBackend;
use crate::crypto::obfuscate::plain_digest;
use crate::error::{ProtocolError, Result};
use crate::metrics::{brier, make_queries, time_overhead, MetricsRecord, QuerySpec};
use crate::netsim::{Bus, TcpTransport, Transcript, Transport};
use crate::party::{party_id, PartySpec};
use crate::save::{run_query, Query, Scheduler, Variant};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Cu,
    Dom,
    Ccbnet,
    Ccbnetj,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Cu, Method::Dom, Method::Ccbnet, Method::Ccbnetj];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Cu => "cu",
            Method::Dom => "dom",
            Method::Ccbnet => "ccbnet",
            Method::Ccbnetj => "ccbnetj",
        })
    }
}

impl FromStr for Method {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cu" => Ok(Method::Cu),
            "dom" => Ok(Method::Dom),
            "ccbnet" => Ok(Method::Ccbnet),
            "ccbnetj" => Ok(Method::Ccbnetj),
            other => Err(ProtocolError::Invalid(format!(
                "unknown method `{other}` (expected cu, dom, ccbnet or ccbnetj)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TransportKind {
    #[default]
    Bus,
    Tcp,
}

impl FromStr for TransportKind {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bus" => Ok(TransportKind::Bus),
            "tcp" => Ok(TransportKind::Tcp),
            other => Err(ProtocolError::Invalid(format!("unknown transport `{other}` (expected bus or tcp)"))),
        }
    }
}

pub fn make_transport(kind: TransportKind, parties: &[String]) -> Result<Box<dyn Transport>> {
    Ok(match kind {
        TransportKind::Bus => Box::new(Bus::with_parties(parties)),
        TransportKind::Tcp => Box::new(TcpTransport::with_parties(parties)?),
    })
}

/// One experiment cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSpec {
    pub split: SplitMethod,
    pub parties: usize,
    pub overlap: f64,
    pub seed: u64,
    pub queries: usize,
    pub evidence_frac: f64,
    pub samples_per_party: Vec<usize>,
    pub weight_policy: WeightPolicy,
    pub backend: NormBackend,
    pub methods: Vec<Method>,
    pub transport: TransportKind,
    pub scheduler: Scheduler,
}

impl CellSpec {
    pub fn new(split: SplitMethod, parties: usize, overlap: f64, seed: u64) -> Self {
        CellSpec {
            split,
            parties,
            overlap,
            seed,
            queries: crate::metrics::DEFAULT_QUERY_COUNT,
            evidence_frac: crate::metrics::DEFAULT_EVIDENCE_FRACTION,
            samples_per_party: vec![10_000],
            weight_policy: WeightPolicy::SampleProportional,
            backend: NormBackend::Evaluator,
            methods: Method::ALL.to_vec(),
            transport: TransportKind::Bus,
            scheduler: Scheduler::Sequential,
        }
    }

    /// Sample count of party `i`; a short list repeats cyclically.
    pub fn samples_for(&self, i: usize) -> usize {
        self.samples_per_party[i % self.samples_per_party.len()]
    }
}

/// Parties generated from a ground truth, before augmentation.
#[derive(Clone, Debug)]
pub struct Setup {
    pub split: Split,
    pub specs: Vec<PartySpec>,
}

impl Setup {
    pub fn weighted_models(&self) -> Result<Vec<WeightedModel>> {
        self.specs
            .iter()
            .map(|s| Ok(WeightedModel::new(s.network.clone(), s.weight)?))
            .collect()
    }

    /// Ids of the parties modeling `name`.
    pub fn holders(&self, name: &str) -> Vec<String> {
        self.specs
            .iter()
            .filter(|s| s.network.variable(name).is_some())
            .map(|s| s.id.clone())
            .collect()
    }
}

/// Splits the ground truth and fits each party on its own forward samples.
pub fn setup(ground_truth: &DiscreteNetwork, cell: &CellSpec) -> Result<Setup> {
    if cell.samples_per_party.is_empty() {
        return Err(ProtocolError::Invalid("samples per party must not be empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cell.seed);
    let spec = SplitSpec {
        method: cell.split,
        n_parties: cell.parties,
        overlap_fraction: cell.overlap,
        seed: cell.seed,
    };
    let split = split(ground_truth.structure(), &spec, &mut rng)?;
    let counts: Vec<usize> = (0..cell.parties).map(|i| cell.samples_for(i)).collect();
    let w = weights(cell.weight_policy, &counts);
    let mut specs = Vec::with_capacity(cell.parties);
    for (i, &count) in counts.iter().enumerate() {
        let vars = split.party_set(i);
        let samples = forward_sample(ground_truth, count, &mut rng).project(&vars);
        let model = build_party(ground_truth, &vars, &samples, w[i])?;
        specs.push(PartySpec {
            id: party_id(i),
            network: model.network,
            weight: model.weight,
        });
    }
    Ok(Setup { split, specs })
}

/// Centralized union of the parties, queried by cleartext name.
pub struct CentralUnion {
    factors: Vec<Factor>,
}

impl CentralUnion {
    pub fn new(models: &[WeightedModel]) -> Result<Self> {
        Ok(CentralUnion {
            factors: combine_union(models)?.factors(),
        })
    }

    pub fn query(&self, target: &str, evidence: &BTreeMap<String, String>) -> Result<Vec<f64>> {
        Ok(posterior(&self.factors, &[target], evidence)?.into_values())
    }
}

/// Per-method answers on a workload.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodRun {
    pub method: Method,
    /// Cleartext state order, one per query.
    pub posteriors: Vec<Vec<f64>>,
    pub times: Vec<Duration>,
    pub values: Vec<usize>,
    pub messages: Vec<usize>,
}

impl MethodRun {
    fn new(method: Method) -> Self {
        MethodRun {
            method,
            posteriors: vec![],
            times: vec![],
            values: vec![],
            messages: vec![],
        }
    }

    pub fn mean_values(&self) -> f64 {
        mean(&self.values)
    }

    pub fn mean_messages(&self) -> f64 {
        mean(&self.messages)
    }

    /// Largest absolute posterior difference to another run on the same workload.
    pub fn max_diff(&self, other: &MethodRun) -> f64 {
        self.posteriors
            .iter()
            .zip(&other.posteriors)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

fn mean(xs: &[usize]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<usize>() as f64 / xs.len() as f64
    }
}

/// Runs the workload through an augmented federation with `variant`.
pub fn run_workload(
    fed: &Federation,
    net: &mut dyn Transport,
    queries: &[QuerySpec],
    requesters: &[String],
    variant: Variant,
    scheduler: Scheduler,
) -> Result<Vec<(Vec<f64>, Duration, usize, usize)>> {
    let dir = fed.directory();
    queries
        .iter()
        .zip(requesters)
        .enumerate()
        .map(|(k, (q, requester))| {
            let target = dir
                .token(&q.target)
                .ok_or_else(|| ProtocolError::Invalid("target unknown to every party".into()))?;
            let evidence = dir.encode_evidence(&q.evidence)?;
            let query = Query::tokens(&[target.token()], &evidence, variant);
            let session = format!("query/{variant}/{k}");
            let out = run_query(fed, net, &session, requester, &query, scheduler)?;
            Ok((dir.decode_marginal(&out.posterior)?, out.compute, out.values, out.messages))
        })
        .collect()
}

/// Everything measured on one cell.
#[derive(Debug)]
pub struct CellResult {
    pub network: String,
    pub spec: CellSpec,
    pub setup: Setup,
    pub queries: Vec<QuerySpec>,
    pub runs: BTreeMap<Method, MethodRun>,
    pub federations: BTreeMap<CabnMode, Federation>,
    /// Every message of the cell, augmentation included.
    pub transcript: Transcript,
}

impl CellResult {
    pub fn records(&self) -> Result<Vec<MetricsRecord>> {
        let refs: Vec<Vec<f64>> = self.queries.iter().map(|q| q.reference.clone()).collect();
        let base: Vec<Duration> = self.queries.iter().map(|q| q.reference_time).collect();
        self.runs
            .values()
            .map(|run| {
                Ok(MetricsRecord {
                    network: self.network.clone(),
                    split: self.spec.split.to_string(),
                    parties: self.spec.parties,
                    overlap: self.spec.overlap,
                    method: run.method.to_string(),
                    brier: brier(&run.posteriors, &refs)?,
                    time_overhead: time_overhead(&run.times, &base)?,
                    comm_values: run.mean_values(),
                    messages: run.mean_messages(),
                })
            })
            .collect()
    }

    /// Largest posterior difference of `method` to CU.
    pub fn diff_to_cu(&self, method: Method) -> Option<f64> {
        Some(self.runs.get(&method)?.max_diff(self.runs.get(&Method::Cu)?))
    }
}

/// Evaluates one cell with every requested method.
pub fn evaluate_cell(ground_truth: &DiscreteNetwork, cell: &CellSpec) -> Result<CellResult> {
    let setup = setup(ground_truth, cell)?;
    let overlaps = setup.split.overlaps();
    let queries = make_queries(ground_truth, &overlaps, cell.queries, cell.evidence_frac, cell.seed ^ 0x5155_4552)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cell.seed.wrapping_add(1));
    let requesters: Vec<String> = queries
        .iter()
        .map(|q| setup.holders(&q.target).choose(&mut rng).expect("overlap has holders").clone())
        .collect();
    let ids: Vec<String> = setup.specs.iter().map(|s| s.id.clone()).collect();
    let mut net = make_transport(cell.transport, &ids)?;

    let mut runs = BTreeMap::new();
    let mut federations = BTreeMap::new();
    let methods: BTreeSet<Method> = cell.methods.iter().copied().collect();
    for method in methods {
        let mut run = MethodRun::new(method);
        if method == Method::Cu {
            let t = Instant::now();
            let cu = CentralUnion::new(&setup.weighted_models()?)?;
            let build = t.elapsed();
            for (k, q) in queries.iter().enumerate() {
                let t = Instant::now();
                run.posteriors.push(cu.query(&q.target, &q.evidence)?);
                let took = t.elapsed();
                run.times.push(if k == 0 { took + build } else { took });
                run.values.push(0);
                run.messages.push(0);
            }
            runs.insert(method, run);
            continue;
        }
        let (mode, variant) = match method {
            Method::Ccbnetj => (CabnMode::Ccbnetj, Variant::Ccbnetj),
            Method::Dom => (CabnMode::Ccbnet, Variant::Dom),
            _ => (CabnMode::Ccbnet, Variant::Ccbnet),
        };
        if !federations.contains_key(&mode) {
            let config = CabnConfig {
                mode,
                backend: cell.backend,
                change_threshold: 1,
            };
            let mut cabn_rng = ChaCha8Rng::seed_from_u64(cell.seed.wrapping_add(2));
            let fed = run_cabn(setup.specs.clone(), &config, net.as_mut(), &mut cabn_rng)?;
            federations.insert(mode, fed);
        }
        let fed = &federations[&mode];
        for (post, took, values, messages) in run_workload(fed, net.as_mut(), &queries, &requesters, variant, cell.scheduler)? {
            run.posteriors.push(post);
            run.times.push(took);
            run.values.push(values);
            run.messages.push(messages);
        }
        runs.insert(method, run);
    }
    Ok(CellResult {
        network: ground_truth.name().to_string(),
        spec: cell.clone(),
        setup,
        queries,
        runs,
        federations,
        transcript: net.transcript().clone(),
    })
}

/// Cleartext names from `names` that appear in any frame, either quoted as a
/// JSON string or as their unsalted digest.
pub fn leaked_names<'a>(frames: &[Vec<u8>], names: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let needles: Vec<(String, Vec<u8>, Vec<u8>)> = names
        .into_iter()
        .map(|n| {
            let json = serde_json::to_string(n).expect("string encodes");
            (n.to_string(), json.into_bytes(), plain_digest(n).into_bytes())
        })
        .collect();
    let mut found = BTreeSet::new();
    for frame in frames {
        for (name, quoted, digest) in &needles {
            if contains(frame, quoted) || contains(frame, digest) {
                found.insert(name.clone());
            }
        }
    }
    found.into_iter().collect()
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Static SVG bar chart of one metric: a group per cell, a bar per method.
pub fn bar_chart_svg(records: &[MetricsRecord], metric: &str) -> String {
    let value = |r: &MetricsRecord| r.metrics().iter().find(|(m, _)| *m == metric).map(|(_, v)| *v).unwrap_or(0.0);
    let mut groups: BTreeMap<String, Vec<&MetricsRecord>> = BTreeMap::new();
    for r in records {
        let key = format!("{} {} {}p {:.0}%", r.network, r.split, r.parties, r.overlap * 100.0);
        groups.entry(key).or_default().push(r);
    }
    let methods: Vec<String> = records
        .iter()
        .map(|r| r.method.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let palette = ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948"];
    let max = records.iter().map(value).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let (bar, gap, height, left, top) = (14.0, 18.0, 240.0, 60.0, 30.0);
    let group_w = bar * methods.len() as f64 + gap;
    let width = left + group_w * groups.len() as f64 + 20.0;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{:.0}\" font-family=\"sans-serif\" font-size=\"10\">\n",
        top + height + 120.0
    );
    svg += &format!("<text x=\"{left}\" y=\"18\" font-size=\"13\">{}</text>\n", xml_escape(metric));
    svg += &format!(
        "<line x1=\"{left}\" y1=\"{}\" x2=\"{:.1}\" y2=\"{}\" stroke=\"black\"/>\n",
        top + height,
        width - 10.0,
        top + height
    );
    for tick in 0..=4 {
        let v = max * tick as f64 / 4.0;
        let y = top + height - height * tick as f64 / 4.0;
        svg += &format!(
            "<text x=\"{:.1}\" y=\"{y:.1}\" text-anchor=\"end\">{}</text>\n",
            left - 4.0,
            format_tick(v)
        );
    }
    for (g, (label, rs)) in groups.iter().enumerate() {
        let x0 = left + gap / 2.0 + g as f64 * group_w;
        for (m, method) in methods.iter().enumerate() {
            if let Some(r) = rs.iter().find(|r| &r.method == method) {
                let h = height * value(r) / max;
                svg += &format!(
                    "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{bar}\" height=\"{h:.1}\" fill=\"{}\"><title>{} {}</title></rect>\n",
                    x0 + m as f64 * bar,
                    top + height - h,
                    palette[m % palette.len()],
                    xml_escape(method),
                    value(r)
                );
            }
        }
        let cx = x0 + bar * methods.len() as f64 / 2.0;
        svg += &format!(
            "<text transform=\"translate({cx:.1},{:.1}) rotate(45)\">{}</text>\n",
            top + height + 12.0,
            xml_escape(label)
        );
    }
    for (m, method) in methods.iter().enumerate() {
        let x = left + 90.0 * m as f64;
        let y = top + height + 105.0;
        svg += &format!(
            "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{:.1}\" y=\"{y:.1}\">{}</text>\n",
            y - 9.0,
            palette[m % palette.len()],
            x + 14.0,
            xml_escape(method)
        );
    }
    svg += "</svg>\n";
    svg
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
