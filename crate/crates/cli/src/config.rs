//! Experiment grid configuration.
//!
//! TOML with an explicit `schema_version`. Only the output directory and the
//! number of parallel cells can be overridden from the environment.

use std::path::{Path, PathBuf};

use bnshare_core::partition::{SplitMethod, WeightPolicy};
use bnshare_federation::crypto::NormBackend;
use bnshare_federation::harness::{CellSpec, Method, TransportKind};
use bnshare_federation::metrics::{DEFAULT_EVIDENCE_FRACTION, DEFAULT_QUERY_COUNT};
use bnshare_federation::Scheduler;
use serde::Deserialize;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;
pub const ENV_OUTPUT: &str = "BNSHARE_OUTPUT_DIR";
pub const ENV_JOBS: &str = "BNSHARE_JOBS";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema_version: u32,
    #[serde(default = "default_output")]
    output: PathBuf,
    #[serde(default = "default_jobs")]
    jobs: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_queries")]
    queries: usize,
    #[serde(default = "default_evidence")]
    evidence_fraction: f64,
    #[serde(default = "default_backend")]
    backend: String,
    #[serde(default = "default_transport")]
    transport: String,
    #[serde(default = "default_scheduler")]
    scheduler: String,
    #[serde(default = "default_weights")]
    weight_policy: String,
    #[serde(default = "default_samples")]
    samples_per_party: Vec<usize>,
    grid: RawGrid,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    networks: Vec<PathBuf>,
    #[serde(default = "default_methods")]
    methods: Vec<String>,
    parties: Vec<usize>,
    overlaps: Vec<f64>,
    #[serde(default = "default_splits")]
    splits: Vec<String>,
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}
fn default_jobs() -> usize {
    1
}
fn default_queries() -> usize {
    DEFAULT_QUERY_COUNT
}
fn default_evidence() -> f64 {
    DEFAULT_EVIDENCE_FRACTION
}
fn default_backend() -> String {
    "evaluator".into()
}
fn default_transport() -> String {
    "bus".into()
}
fn default_scheduler() -> String {
    "sequential".into()
}
fn default_weights() -> String {
    "samples".into()
}
fn default_samples() -> Vec<usize> {
    vec![10_000]
}
fn default_methods() -> Vec<String> {
    Method::ALL.iter().map(ToString::to_string).collect()
}
fn default_splits() -> Vec<String> {
    vec!["related".into(), "random".into()]
}

/// A validated grid.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub output: PathBuf,
    pub jobs: usize,
    pub networks: Vec<PathBuf>,
    /// One entry per (split, parties, overlap), in grid order.
    pub cells: Vec<CellSpec>,
}

pub fn parse_scheduler(s: &str) -> Result<Scheduler, CliError> {
    match s {
        "sequential" => Ok(Scheduler::Sequential),
        "concurrent" => Ok(Scheduler::Concurrent),
        other => Err(CliError::Validation(format!(
            "unknown scheduler `{other}` (expected sequential or concurrent)"
        ))),
    }
}

fn parse_each<T: std::str::FromStr>(field: &str, items: &[String]) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    items
        .iter()
        .map(|s| s.parse().map_err(|e| CliError::Validation(format!("{field}: {e}"))))
        .collect()
}

impl ExperimentConfig {
    /// Reads `path`; relative network and output paths resolve against its
    /// directory.
    /// `env` looks up environment overrides.
    pub fn load(path: &Path, env: impl Fn(&str) -> Option<String>) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, env)
    }

    pub fn parse(text: &str, base: &Path, env: impl Fn(&str) -> Option<String>) -> Result<Self, CliError> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {}", e.message())))?;
        if raw.schema_version != SCHEMA_VERSION {
            return Err(CliError::Validation(format!(
                "config schema_version {} is not supported (expected {SCHEMA_VERSION})",
                raw.schema_version
            )));
        }
        let g = &raw.grid;
        for (field, empty) in [
            ("grid.networks", g.networks.is_empty()),
            ("grid.methods", g.methods.is_empty()),
            ("grid.parties", g.parties.is_empty()),
            ("grid.overlaps", g.overlaps.is_empty()),
            ("grid.splits", g.splits.is_empty()),
            ("samples_per_party", raw.samples_per_party.is_empty()),
        ] {
            if empty {
                return Err(CliError::Validation(format!("{field} must list at least one entry")));
            }
        }
        let networks: Vec<PathBuf> = g.networks.iter().map(|p| base.join(p)).collect();
        if let Some(missing) = networks.iter().find(|p| !p.is_file()) {
            return Err(CliError::Validation(format!("network file {} does not exist", missing.display())));
        }
        if let Some(n) = g.parties.iter().find(|n| **n < 2) {
            return Err(CliError::Validation(format!("grid.parties: {n} is below the minimum of 2")));
        }
        if let Some(f) = g.overlaps.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(CliError::Validation(format!("grid.overlaps: {f} is outside [0, 1]")));
        }
        if !(0.0..1.0).contains(&raw.evidence_fraction) {
            return Err(CliError::Validation(format!(
                "evidence_fraction {} is outside [0, 1)",
                raw.evidence_fraction
            )));
        }
        if raw.queries == 0 {
            return Err(CliError::Validation("queries must be positive".into()));
        }
        let methods: Vec<Method> = parse_each("grid.methods", &g.methods)?;
        let splits: Vec<SplitMethod> = parse_each("grid.splits", &g.splits)?;
        let backend: NormBackend = raw.backend.parse().map_err(|e| CliError::Validation(format!("backend: {e}")))?;
        let transport: TransportKind =
            raw.transport.parse().map_err(|e| CliError::Validation(format!("transport: {e}")))?;
        let weight_policy: WeightPolicy = raw
            .weight_policy
            .parse()
            .map_err(|e| CliError::Validation(format!("weight_policy: {e}")))?;
        let scheduler = parse_scheduler(&raw.scheduler)?;

        let mut cells = Vec::new();
        for &split in &splits {
            for &parties in &g.parties {
                for &overlap in &g.overlaps {
                    let mut c = CellSpec::new(split, parties, overlap, raw.seed);
                    c.queries = raw.queries;
                    c.evidence_frac = raw.evidence_fraction;
                    c.samples_per_party = raw.samples_per_party.clone();
                    c.weight_policy = weight_policy;
                    c.backend = backend;
                    c.methods = methods.clone();
                    c.transport = transport;
                    c.scheduler = scheduler;
                    cells.push(c);
                }
            }
        }

        let output = env(ENV_OUTPUT).map(PathBuf::from).unwrap_or_else(|| base.join(&raw.output));
        let jobs = match env(ENV_JOBS) {
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Validation(format!("{ENV_JOBS}={v} is not a positive integer")))?,
            None => raw.jobs,
        };
        if jobs == 0 {
            return Err(CliError::Validation("jobs must be at least 1".into()));
        }
        Ok(ExperimentConfig {
            output,
            jobs,
            networks,
            cells,
        })
    }
}
