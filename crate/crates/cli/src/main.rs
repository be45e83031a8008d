//! `bnshare`: parse and convert BIF networks, split them into parties, fuse
//! them centrally, run augmentation and distributed queries, attack the
//! result, and drive whole experiment grids from a config file.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use bnshare_core::bif::{load_bif, parse_bif, write_bif, BifError};
use bnshare_core::combine::{combine_union, Combined, WeightedModel};
use bnshare_core::partition::{split, SplitMethod, SplitSpec};
use bnshare_core::{DiscreteNetwork, ModelError};
use bnshare_federation::attacks::{cabn_attack, save_attack, AttackReport};
use bnshare_federation::crypto::NormBackend;
use bnshare_federation::harness::{bar_chart_svg, evaluate_cell, setup, CellResult, CellSpec, CentralUnion};
use bnshare_federation::metrics::{write_csv, MetricsRecord, DETERMINISTIC_METRICS};
use bnshare_federation::netsim::Bus;
use bnshare_federation::{
    party_id, run_cabn, run_query, CabnConfig, CabnMode, Federation, PartySpec, ProtocolError, Query, Variant,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use config::{parse_scheduler, ExperimentConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Protocol(ProtocolError),
    #[error("{0}")]
    Blocked(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Protocol(_) => 2,
            CliError::Blocked(_) => 3,
        }
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::Invalid(m) => CliError::Validation(m),
            ProtocolError::Model(m) => CliError::Validation(m.to_string()),
            ProtocolError::Consent(_) => CliError::Validation(e.to_string()),
            other => CliError::Protocol(other),
        }
    }
}

impl From<BifError> for CliError {
    fn from(e: BifError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Validation(e.to_string())
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Validation(format!("{}: {e}", path.display()))
}

#[derive(Parser)]
#[command(name = "bnshare", version, about = "Confidential fusion of partitioned Bayesian networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a BIF file and print its node, edge and parameter counts.
    Parse { file: PathBuf },
    /// Parse a BIF file and write it back out.
    Roundtrip {
        file: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Partition a network's variables among parties.
    Split {
        file: PathBuf,
        #[arg(long, default_value = "related")]
        method: SplitMethod,
        #[arg(long)]
        parties: usize,
        #[arg(long)]
        overlap: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Manifest destination; stdout when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Also fit each party's model on forward samples and write `pNN.bif` here.
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Fuse party networks into the centralized union model.
    Combine {
        #[arg(long, num_args = 2.., required = true)]
        inputs: Vec<PathBuf>,
        /// One weight per input; equal weights when absent.
        #[arg(long, num_args = 1..)]
        weights: Vec<f64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run an experiment grid from a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Answer one query with a chosen method.
    Query(QueryArgs),
    /// Reconstruct a peer's CPDs from what an honest-but-curious party sees.
    Attack(AttackArgs),
}

#[derive(Args)]
struct Source {
    /// Party networks, one BIF file each; party ids follow argument order.
    #[arg(long, num_args = 1.., conflicts_with = "network")]
    inputs: Vec<PathBuf>,
    #[arg(long, num_args = 1.., requires = "inputs")]
    weights: Vec<f64>,
    /// Ground truth to split into parties instead of `--inputs`.
    #[arg(long)]
    network: Option<PathBuf>,
    #[arg(long, default_value = "related")]
    split: SplitMethod,
    #[arg(long, default_value_t = 2)]
    parties: usize,
    #[arg(long, default_value_t = 0.3)]
    overlap: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "evaluator")]
    backend: NormBackend,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum QueryVariant {
    Cu,
    Dom,
    Ccbnet,
    Ccbnetj,
}

#[derive(Args)]
struct QueryArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long)]
    target: String,
    /// `VARIABLE=STATE`, repeatable.
    #[arg(long, value_parser = parse_assignment)]
    evidence: Vec<(String, String)>,
    #[arg(long, value_enum, default_value = "ccbnet")]
    variant: QueryVariant,
    #[arg(long, default_value = "p00")]
    requester: String,
    #[arg(long, default_value = "sequential")]
    scheduler: String,
    /// Parties reply with the product of their leftover factors.
    #[arg(long)]
    hardened: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AttackKind {
    Cabn,
    Save,
}

#[derive(Args)]
struct AttackArgs {
    kind: AttackKind,
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value = "p00")]
    attacker: String,
    #[arg(long, default_value = "p01")]
    victim: String,
    /// Attack only this overlap variable.
    #[arg(long)]
    variable: Option<String>,
    /// Install a request limit at every other party.
    #[arg(long)]
    defense_threshold: Option<usize>,
    /// Augmentation to attack; ccbnetj for `cabn`, ccbnet for `save` by default.
    #[arg(long)]
    mode: Option<CabnMode>,
}

fn parse_assignment(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .filter(|(k, v)| !k.is_empty() && !v.is_empty())
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| format!("expected VARIABLE=STATE, got `{s}`"))
}

fn load_named(path: &Path) -> Result<DiscreteNetwork, CliError> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("network").to_string();
    Ok(load_bif(path)?.renamed(stem))
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(io_err(p)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn input_weights(count: usize, weights: &[f64]) -> Result<Vec<f64>, CliError> {
    match weights.len() {
        0 => Ok(vec![1.0; count]),
        n if n == count => Ok(weights.to_vec()),
        n => Err(CliError::Validation(format!("{n} weights for {count} inputs"))),
    }
}

impl Source {
    fn specs(&self) -> Result<Vec<PartySpec>, CliError> {
        if let Some(gt) = &self.network {
            let gt = load_named(gt)?;
            let cell = CellSpec::new(self.split, self.parties, self.overlap, self.seed);
            return Ok(setup(&gt, &cell)?.specs);
        }
        if self.inputs.len() < 2 {
            return Err(CliError::Validation("give --network or at least two --inputs".into()));
        }
        let weights = input_weights(self.inputs.len(), &self.weights)?;
        self.inputs
            .iter()
            .zip(weights)
            .enumerate()
            .map(|(i, (p, w))| {
                Ok(PartySpec {
                    id: party_id(i),
                    network: load_named(p)?,
                    weight: w,
                })
            })
            .collect()
    }

    fn federate(&self, specs: Vec<PartySpec>, mode: CabnMode) -> Result<(Federation, Bus), CliError> {
        let ids: Vec<String> = specs.iter().map(|s| s.id.clone()).collect();
        let mut bus = Bus::with_parties(&ids);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let config = CabnConfig {
            backend: self.backend,
            ..CabnConfig::with_mode(mode)
        };
        let fed = run_cabn(specs, &config, &mut bus, &mut rng)?;
        Ok((fed, bus))
    }
}

fn cmd_parse(file: &Path) -> Result<(), CliError> {
    let n = load_bif(file)?;
    println!("{} nodes, {} edges, {} parameters", n.len(), n.edge_count(), n.parameter_count());
    Ok(())
}

/// Writer output is shortest-round-trip decimal; parsing renormalizes columns.
const ROUNDTRIP_TOL: f64 = 1e-12;

fn cmd_roundtrip(file: &Path, output: Option<&Path>) -> Result<(), CliError> {
    let n = load_bif(file)?;
    let text = write_bif(&n)?;
    let back = parse_bif(&text)?;
    let same = back.variables() == n.variables()
        && back.edges() == n.edges()
        && back
            .cpds()
            .iter()
            .zip(n.cpds())
            .all(|(a, b)| a.parent_names() == b.parent_names() && a.max_abs_diff(b).is_ok_and(|d| d <= ROUNDTRIP_TOL));
    if !same {
        return Err(CliError::Validation(format!("{} does not survive a write/parse cycle", file.display())));
    }
    write_out(output, &text)
}

#[allow(clippy::too_many_arguments)]
fn cmd_split(
    file: &Path,
    method: SplitMethod,
    parties: usize,
    overlap: f64,
    seed: u64,
    output: Option<&Path>,
    models: Option<&Path>,
    samples: usize,
) -> Result<(), CliError> {
    let gt = load_named(file)?;
    let spec = SplitSpec {
        method,
        n_parties: parties,
        overlap_fraction: overlap,
        seed,
    };
    // Seeded exactly as the experiment harness seeds its splits.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = split(gt.structure(), &spec, &mut rng)?;
    write_out(output, &s.to_manifest())?;
    if let Some(dir) = models {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut cell = CellSpec::new(method, parties, overlap, seed);
        cell.samples_per_party = vec![samples];
        for spec in setup(&gt, &cell)?.specs {
            let path = dir.join(format!("{}.bif", spec.id));
            fs::write(&path, write_bif(&spec.network.renamed(spec.id.clone()))?).map_err(io_err(&path))?;
        }
    }
    Ok(())
}

fn cmd_combine(inputs: &[PathBuf], weights: &[f64], output: Option<&Path>) -> Result<(), CliError> {
    let weights = input_weights(inputs.len(), weights)?;
    let models = inputs
        .iter()
        .zip(weights)
        .map(|(p, w)| Ok(WeightedModel::new(load_named(p)?, w)?))
        .collect::<Result<Vec<_>, CliError>>()?;
    match combine_union(&models)? {
        Combined::Network(n) => write_out(output, &write_bif(&n)?),
        Combined::Markov(m) => {
            eprintln!(
                "union graph is cyclic; moralized into {} factors over {} variables, no BIF written",
                m.factors().len(),
                m.variables().len()
            );
            Ok(())
        }
    }
}

fn print_marginal(target: &str, states: &[String], values: &[f64]) {
    for (s, p) in states.iter().zip(values) {
        println!("P({target} = {s}) = {p:.9}");
    }
}

fn cmd_query(a: &QueryArgs) -> Result<(), CliError> {
    let specs = a.source.specs()?;
    let states = specs
        .iter()
        .find_map(|s| s.network.variable(&a.target))
        .ok_or_else(|| CliError::Validation(format!("no party models `{}`", a.target)))?
        .states()
        .to_vec();
    let evidence: BTreeMap<String, String> = a.evidence.iter().cloned().collect();
    if a.variant == QueryVariant::Cu {
        let models = specs
            .into_iter()
            .map(|s| WeightedModel::new(s.network, s.weight))
            .collect::<Result<Vec<_>, _>>()?;
        let posterior = CentralUnion::new(&models)?.query(&a.target, &evidence)?;
        print_marginal(&a.target, &states, &posterior);
        println!("messages=0 values=0");
        return Ok(());
    }
    let (mode, variant) = match a.variant {
        QueryVariant::Ccbnetj => (CabnMode::Ccbnetj, Variant::Ccbnetj),
        QueryVariant::Dom => (CabnMode::Ccbnet, Variant::Dom),
        _ => (CabnMode::Ccbnet, Variant::Ccbnet),
    };
    let (fed, mut bus) = a.source.federate(specs, mode)?;
    let dir = fed.directory();
    let target = dir
        .token(&a.target)
        .ok_or_else(|| CliError::Validation(format!("no party models `{}`", a.target)))?
        .token()
        .to_string();
    let query = Query::tokens(&[target.as_str()], &dir.encode_evidence(&evidence)?, variant).hardened(a.hardened);
    let out = run_query(&fed, &mut bus, "query", &a.requester, &query, parse_scheduler(&a.scheduler)?)?;
    print_marginal(&a.target, &states, &dir.decode_marginal(&out.posterior)?);
    println!("messages={} values={} bytes={}", out.messages, out.values, out.bytes);
    Ok(())
}

fn cmd_attack(a: &AttackArgs) -> Result<(), CliError> {
    let mode = a.mode.unwrap_or(match a.kind {
        AttackKind::Cabn => CabnMode::Ccbnetj,
        AttackKind::Save => CabnMode::Ccbnet,
    });
    let specs = a.source.specs()?;
    let (mut fed, mut bus) = a.source.federate(specs, mode)?;
    if let Some(t) = a.defense_threshold {
        let others: Vec<String> = fed.ids().into_iter().filter(|id| *id != a.attacker).map(String::from).collect();
        for id in others {
            fed.party_mut(&id).expect("listed party").defend_rate_limit(t);
        }
    }
    let dir = fed.directory();
    let wanted = match &a.variable {
        Some(v) => Some(
            dir.token(v)
                .ok_or_else(|| CliError::Validation(format!("no party models `{v}`")))?
                .token()
                .to_string(),
        ),
        None => None,
    };
    let targets: Vec<String> = fed
        .overlaps()
        .into_iter()
        .filter(|(t, h)| h.contains(&a.attacker) && h.contains(&a.victim) && wanted.as_ref().is_none_or(|w| w == t))
        .map(|(t, _)| t)
        .collect();
    if targets.is_empty() {
        return Err(CliError::Validation(format!(
            "{} and {} share no overlap to attack",
            a.attacker, a.victim
        )));
    }
    let mut reports: Vec<AttackReport> = Vec::new();
    for t in &targets {
        let r = match a.kind {
            AttackKind::Cabn => match cabn_attack(&fed, &a.attacker, &a.victim, t) {
                Ok(r) => r,
                Err(ProtocolError::Invalid(why)) => {
                    log::warn!("skipping {}: {why}", dir.name(t).unwrap_or(t));
                    continue;
                }
                Err(e) => return Err(e.into()),
            },
            AttackKind::Save => save_attack(&fed, &mut bus, &a.attacker, &a.victim, t)?,
        };
        println!("variable={}\n{r}\n", dir.name(t).unwrap_or(t));
        reports.push(r);
    }
    if reports.is_empty() {
        return Err(CliError::Validation(format!("{} stores nothing it could invert", a.attacker)));
    }
    let worst = reports.iter().map(|r| r.max_abs_error).fold(0.0, f64::max);
    println!("attacks={} worst_max_abs_error={worst:e}", reports.len());
    let blocked = reports.iter().filter(|r| r.blocked).count();
    if blocked > 0 {
        return Err(CliError::Blocked(format!("{blocked} of {} attacks were refused queries", reports.len())));
    }
    Ok(())
}

fn cell_stem(r: &CellResult) -> String {
    format!("{}-{}-{}p-{}", r.network, r.spec.split, r.spec.parties, r.spec.overlap)
}

fn cmd_run(path: &Path) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(path, |k| std::env::var(k).ok())?;
    let networks = cfg.networks.iter().map(|p| load_named(p)).collect::<Result<Vec<_>, _>>()?;
    let tasks: Vec<(usize, &CellSpec)> = (0..networks.len())
        .flat_map(|n| cfg.cells.iter().map(move |c| (n, c)))
        .collect();
    if cfg.jobs > 1 {
        log::warn!("{} cells run in parallel; time_overhead is measured under contention", cfg.jobs);
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<CellResult, ProtocolError>>>> = Mutex::new((0..tasks.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..cfg.jobs.min(tasks.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((n, cell)) = tasks.get(i) else { break };
                log::info!(
                    "cell {}/{}: {} {} {} parties {} overlap",
                    i + 1,
                    tasks.len(),
                    networks[*n].name(),
                    cell.split,
                    cell.parties,
                    cell.overlap
                );
                let r = evaluate_cell(&networks[*n], cell);
                results.lock().expect("result lock")[i] = Some(r);
            });
        }
    });
    let results: Vec<CellResult> = results
        .into_inner()
        .expect("result lock")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect::<Result<_, _>>()?;

    let out = &cfg.output;
    let transcripts = out.join("transcripts");
    let plots = out.join("plots");
    for d in [out, &transcripts, &plots] {
        fs::create_dir_all(d).map_err(io_err(d))?;
    }
    let mut records: Vec<MetricsRecord> = Vec::new();
    for r in &results {
        records.extend(r.records()?);
        let path = transcripts.join(format!("{}.tsv", cell_stem(r)));
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        r.transcript.dump(std::io::BufWriter::new(file)).map_err(io_err(&path))?;
    }
    let csv_err = |p: &Path, e: ProtocolError| CliError::Validation(format!("{}: {e}", p.display()));
    let metrics = out.join("metrics.csv");
    let file = fs::File::create(&metrics).map_err(io_err(&metrics))?;
    write_csv(&records, &DETERMINISTIC_METRICS, file).map_err(|e| csv_err(&metrics, e))?;
    let timing = out.join("timing.csv");
    let file = fs::File::create(&timing).map_err(io_err(&timing))?;
    write_csv(&records, &["time_overhead"], file).map_err(|e| csv_err(&timing, e))?;
    for metric in ["brier", "time_overhead", "comm_values", "messages"] {
        let path = plots.join(format!("{metric}.svg"));
        fs::write(&path, bar_chart_svg(&records, metric)).map_err(io_err(&path))?;
    }
    let mut stdout = std::io::stdout().lock();
    for r in &records {
        let _ = writeln!(
            stdout,
            "{:<10} {:<8} {:>2}p {:>4} {:<8} brier={:.6} values={:.1} messages={:.1} time_overhead={:.3}",
            r.network, r.split, r.parties, r.overlap, r.method, r.brier, r.comm_values, r.messages, r.time_overhead
        );
    }
    let _ = writeln!(stdout, "{} cells, results in {}", results.len(), out.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Parse { file } => cmd_parse(&file),
        Command::Roundtrip { file, output } => cmd_roundtrip(&file, output.as_deref()),
        Command::Split {
            file,
            method,
            parties,
            overlap,
            seed,
            output,
            models,
            samples,
        } => cmd_split(&file, method, parties, overlap, seed, output.as_deref(), models.as_deref(), samples),
        Command::Combine { inputs, weights, output } => cmd_combine(&inputs, &weights, output.as_deref()),
        Command::Run { config } => cmd_run(&config),
        Command::Query(a) => cmd_query(&a),
        Command::Attack(a) => cmd_attack(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

