//! Command-line front end: planning runs, sweeps, oracle comparisons,
//! replanning studies, round simulation and input validation.
//!
//! Exit codes: 0 success, 1 unreadable or inconsistent input, 2 infeasible or
//! invalid plan, 3 oracle budget exceeded.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cut::{AccuracyError, AccuracyProfile, DEFAULT_THRESHOLD};
use crate::delay::{round_delay, DelayBreakdown};
use crate::oracle::{self, Comparison, OracleBudget, OracleError};
use crate::plan::{Plan, PlanError};
use crate::planner::{self, Decision, DecisionRecord, PlannerConfig, PlannerError};
use crate::profile::{load_profile_path, ModelProfile, ProfileError};
use crate::scenario::document::{DocumentError, ScenarioDocument};
use crate::scenario::{Scenario, ScenarioError, SystemChange};
use crate::sim::{simulate_round, SimError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Budget(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Infeasible(_) => 2,
            CliError::Budget(_) => 3,
        }
    }
}

impl From<ProfileError> for CliError {
    fn from(e: ProfileError) -> Self {
        CliError::Input(format!("profile: {e}"))
    }
}

impl From<DocumentError> for CliError {
    fn from(e: DocumentError) -> Self {
        CliError::Input(format!("scenario: {e}"))
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Input(format!("scenario: {e}"))
    }
}

impl From<AccuracyError> for CliError {
    fn from(e: AccuracyError) -> Self {
        CliError::Input(format!("accuracy: {e}"))
    }
}

impl From<PlanError> for CliError {
    fn from(e: PlanError) -> Self {
        CliError::Infeasible(format!("plan: {e}"))
    }
}

impl From<PlannerError> for CliError {
    fn from(e: PlannerError) -> Self {
        match e {
            PlannerError::Config(_) | PlannerError::Scenario(_) => {
                CliError::Input(format!("planner: {e}"))
            }
            _ => CliError::Infeasible(format!("planner: {e}")),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::TooManyClients { .. } | OracleError::BudgetExceeded { .. } => {
                CliError::Budget(format!("oracle: {e}"))
            }
            OracleError::InvalidBudget => CliError::Input(format!("oracle: {e}")),
            OracleError::Planner(p) => p.into(),
            _ => CliError::Infeasible(format!("oracle: {e}")),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Plan(p) => p.into(),
            other => CliError::Input(format!("simulation: {other}")),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(
    name = "hsfl",
    version,
    about = "Round-delay modeling and configuration planning for hierarchical split federated learning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Plan (h, v, aggregators, assignment) for one scenario.
    Plan(PlanArgs),
    /// Re-plan along one dimension and tabulate the decisions.
    Sweep(SweepArgs),
    /// Compare the planner against exhaustive search.
    Compare(CompareArgs),
    /// Delay increase of the fixed and re-planned configuration under system changes.
    Replan(ReplanArgs),
    /// Event-driven simulation of one round.
    Simulate(SimulateArgs),
    /// Load and cross-check inputs without planning.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Inputs {
    /// Scenario document (JSON).
    #[arg(long)]
    pub scenario: PathBuf,
    /// Layer profile: a JSON file or `builtin:<alexnet|vgg11|vgg19|resnet101>`.
    /// Overrides the scenario's `model` entry.
    #[arg(long)]
    pub profile: Option<String>,
    /// Accuracy profile used to select admissible cut layers.
    #[arg(long)]
    pub accuracy: Option<PathBuf>,
    /// Admissible cut layers, bypassing the accuracy profile.
    #[arg(long, value_delimiter = ',')]
    pub candidates: Option<Vec<usize>>,
    /// Seed for generated scenarios; replaces the document's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Accuracy tolerance for cut-layer admission.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub thr: f64,
}

#[derive(Debug, Clone, Args)]
pub struct Tuning {
    /// Balance threshold of the aggregator-layer search, seconds.
    #[arg(long, default_value_t = 0.5)]
    pub delta: f64,
    /// Step of the aggregator-fraction sweep.
    #[arg(long, default_value_t = 0.01)]
    pub lambda_step: f64,
    /// Cap on aggregator-layer updates per cut layer.
    #[arg(long)]
    pub max_h_iterations: Option<usize>,
}

impl Tuning {
    fn config(&self) -> PlannerConfig {
        PlannerConfig {
            delta: self.delta,
            lambda_step: self.lambda_step,
            max_h_iterations: self.max_h_iterations,
            aggregator_cap: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct Output {
    /// Directory for report files; without it the report goes to stdout.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct Parallel {
    /// Worker threads for batches and sweep points.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Args)]
pub struct BudgetArgs {
    #[arg(long, default_value_t = OracleBudget::default().max_clients)]
    pub max_clients: usize,
    /// Largest aggregator set the oracle enumerates.
    #[arg(long, default_value_t = OracleBudget::default().max_aggregator_set_size)]
    pub max_aggregators: usize,
    /// Refuse to search when the configuration count estimate exceeds this.
    #[arg(long, default_value_t = OracleBudget::default().max_configs)]
    pub max_configs: u64,
}

impl BudgetArgs {
    fn budget(&self) -> OracleBudget {
        OracleBudget {
            max_clients: self.max_clients,
            max_aggregator_set_size: self.max_aggregators,
            max_configs: self.max_configs,
        }
    }
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[command(flatten)]
    pub tuning: Tuning,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Dimension {
    Lambda,
    Gamma,
    NClients,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[command(flatten)]
    pub tuning: Tuning,
    #[command(flatten)]
    pub output: Output,
    #[command(flatten)]
    pub parallel: Parallel,
    #[arg(long, value_enum)]
    pub dimension: Dimension,
    /// Comma-separated sweep points; may be empty.
    #[arg(long, allow_hyphen_values = true)]
    pub values: String,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[command(flatten)]
    pub tuning: Tuning,
    #[command(flatten)]
    pub output: Output,
    #[command(flatten)]
    pub parallel: Parallel,
    #[command(flatten)]
    pub budget: BudgetArgs,
    /// Seeded instances per client count (generated scenarios only).
    #[arg(long, default_value_t = 1)]
    pub instances: u64,
    /// Client counts to compare at (generated scenarios only).
    #[arg(long, value_delimiter = ',')]
    pub clients: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct ReplanArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[command(flatten)]
    pub tuning: Tuning,
    #[command(flatten)]
    pub output: Output,
    #[command(flatten)]
    pub parallel: Parallel,
    /// JSON list of system changes; each is evaluated on its own.
    #[arg(long)]
    pub changes: PathBuf,
    /// Seeded instances (generated scenarios only).
    #[arg(long, default_value_t = 1)]
    pub instances: u64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[command(flatten)]
    pub tuning: Tuning,
    #[command(flatten)]
    pub output: Output,
    /// Plan to simulate instead of the planner's decision.
    #[arg(long)]
    pub plan: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    /// Plan to check against the scenario and admissible cut layers.
    #[arg(long)]
    pub plan: Option<PathBuf>,
}

/// Everything a run needs, resolved from the input flags.
struct Loaded {
    doc: ScenarioDocument,
    model: Arc<ModelProfile>,
    scenario: Scenario,
    seed: Option<u64>,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn load(inputs: &Inputs) -> Result<Loaded, CliError> {
    let doc = ScenarioDocument::parse(&read(&inputs.scenario)?)
        .map_err(|e| io_err(&inputs.scenario, e))?;
    let source = inputs
        .profile
        .clone()
        .or_else(|| doc.model.clone())
        .ok_or_else(|| {
            CliError::Input(
                "no layer profile: pass --profile or set `model` in the scenario".into(),
            )
        })?;
    let model = Arc::new(load_profile_path(&resolve_relative(
        &source,
        &inputs.scenario,
    ))?);
    let scenario = doc.build(model.clone(), inputs.seed)?;
    let seed = inputs.seed.or(doc.seed());
    Ok(Loaded {
        doc,
        model,
        scenario,
        seed,
    })
}

/// Profile paths in a scenario document are relative to the document.
fn resolve_relative(source: &str, scenario: &Path) -> String {
    if source.starts_with("builtin:")
        || Path::new(source).is_absolute()
        || Path::new(source).exists()
    {
        return source.to_string();
    }
    match scenario.parent() {
        Some(dir) => dir.join(source).to_string_lossy().into_owned(),
        None => source.to_string(),
    }
}

/// Admissible cut layers from `--candidates` or the accuracy profile.
fn candidates(inputs: &Inputs, model: &ModelProfile) -> Result<Vec<usize>, CliError> {
    if let Some(c) = &inputs.candidates {
        if c.is_empty() {
            return Err(CliError::Input("--candidates is empty".into()));
        }
        return Ok(c.clone());
    }
    let path = inputs.accuracy.as_ref().ok_or_else(|| {
        CliError::Input("no cut-layer candidates: pass --accuracy or --candidates".into())
    })?;
    let acc = AccuracyProfile::parse(&read(path)?)?;
    if acc.model_layers() != model.layer_count() {
        return Err(CliError::Input(format!(
            "accuracy profile covers a model with L={} but the layer profile has L={}",
            acc.model_layers(),
            model.layer_count()
        )));
    }
    Ok(acc.candidate_cut_layers(inputs.thr)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDigest {
    /// SHA-256 prefix of the explicit scenario description.
    pub fingerprint: String,
    pub model: String,
    pub layers: usize,
    pub batch_size: u32,
    pub clients: usize,
    pub heterogeneity: f64,
    pub server_throughput: f64,
    pub epochs_per_round: u32,
    pub batches_per_epoch: u64,
}

impl ScenarioDigest {
    pub fn of(s: &Scenario) -> Self {
        let explicit = serde_json::to_vec(&ScenarioDocument::from_scenario(s, None))
            .expect("document serializes");
        let mut hasher = Sha256::new();
        hasher.update(&explicit);
        hasher.update(s.model().to_json().as_bytes());
        let hash = hasher.finalize();
        ScenarioDigest {
            fingerprint: hash[..8].iter().map(|b| format!("{b:02x}")).collect(),
            model: s.model().name().to_string(),
            layers: s.model().layer_count(),
            batch_size: s.model().batch_size(),
            clients: s.client_count(),
            heterogeneity: s.heterogeneity(),
            server_throughput: s.server_throughput(),
            epochs_per_round: s.epochs_per_round(),
            batches_per_epoch: s.batches_per_epoch(),
        }
    }
}

/// Planner settings echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub delta: f64,
    pub lambda_step: f64,
    pub thr: f64,
    pub max_h_iterations: usize,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: ScenarioDigest,
    pub config: ConfigEcho,
    pub candidates: Vec<usize>,
    pub decision: DecisionRecord,
    pub delay_breakdown: DelayBreakdown,
    pub overhead_bytes: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Comparison>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_path: Option<String>,
}

/// CSV row of a planning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRow {
    pub h: usize,
    pub v: usize,
    pub lambda: f64,
    pub aggregators: usize,
    pub t1: f64,
    pub t_fp: f64,
    pub t_s: f64,
    pub t_bp: f64,
    pub t2: f64,
    pub t3: f64,
    pub t_round: f64,
    pub overhead_bytes: f64,
}

impl PlanRow {
    fn new(plan: &Plan, d: &DelayBreakdown) -> Self {
        PlanRow {
            h: plan.h,
            v: plan.v,
            lambda: plan.lambda(),
            aggregators: plan.aggregators.len(),
            t1: d.t1,
            t_fp: d.t_fp,
            t_s: d.t_s,
            t_bp: d.t_bp,
            t2: d.t2,
            t3: d.t3,
            t_round: d.t_round,
            overhead_bytes: d.overhead_bytes,
        }
    }
}

fn echo(inputs: &Inputs, cfg: &PlannerConfig, layers: usize, seed: Option<u64>) -> ConfigEcho {
    ConfigEcho {
        delta: cfg.delta,
        lambda_step: cfg.lambda_step,
        thr: inputs.thr,
        max_h_iterations: cfg.h_iteration_cap(layers),
        seed,
    }
}

fn report(
    loaded: &Loaded,
    inputs: &Inputs,
    cfg: &PlannerConfig,
    candidates: Vec<usize>,
    d: &Decision,
) -> RunReport {
    RunReport {
        scenario: ScenarioDigest::of(&loaded.scenario),
        config: echo(inputs, cfg, loaded.model.layer_count(), loaded.seed),
        candidates,
        decision: d.record(),
        delay_breakdown: d.delay,
        overhead_bytes: d.delay.overhead_bytes,
        comparison: None,
        trace_path: None,
    }
}

fn json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    text
}

fn csv_text<T: Serialize>(rows: &[T], header: &[&str]) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header).expect("in-memory write");
    }
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

/// Writes `json_text` and `csv` under `stem` in the output directory, or
/// prints the selected format.
fn emit(
    out: &mut dyn Write,
    o: &Output,
    stem: &str,
    json_text: &str,
    csv: &str,
) -> Result<(), CliError> {
    match &o.out_dir {
        Some(dir) => {
            write_file(dir, &format!("{stem}.json"), json_text)?;
            write_file(dir, &format!("{stem}.csv"), csv)?;
            Ok(())
        }
        None => {
            let text = match o.format {
                Format::Json => json_text,
                Format::Csv => csv,
            };
            out.write_all(text.as_bytes())
                .map_err(|e| CliError::Input(format!("stdout: {e}")))
        }
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    if jobs == 0 {
        return Err(CliError::Input("--jobs must be >= 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Input(format!("thread pool: {e}")))
}

fn plan_cmd(args: &PlanArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let loaded = load(&args.inputs)?;
    let cands = candidates(&args.inputs, &loaded.model)?;
    let cfg = args.tuning.config();
    let d = planner::plan(&loaded.scenario, &cands, &cfg)?;
    let r = report(&loaded, &args.inputs, &cfg, cands, &d);
    let row = PlanRow::new(&d.plan, &d.delay);
    emit(out, &args.output, "plan", &json(&r), &csv_text(&[row], &[]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub dimension: String,
    pub value: f64,
    pub clients: usize,
    pub heterogeneity: f64,
    pub h: usize,
    pub v: usize,
    pub lambda: f64,
    pub aggregators: usize,
    pub t1: f64,
    pub t2: f64,
    pub t_round: f64,
    pub overhead_bytes: f64,
}

const SWEEP_HEADER: &[&str] = &[
    "dimension",
    "value",
    "clients",
    "heterogeneity",
    "h",
    "v",
    "lambda",
    "aggregators",
    "t1",
    "t2",
    "t_round",
    "overhead_bytes",
];

fn parse_values(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| CliError::Input(format!("bad sweep value `{t}`")))
        })
        .collect()
}

/// Scenario for one sweep point.
fn sweep_point(loaded: &Loaded, dim: Dimension, value: f64) -> Result<Scenario, CliError> {
    match dim {
        Dimension::Lambda => Ok(loaded.scenario.clone()),
        Dimension::Gamma => Ok(loaded.scenario.with_heterogeneity(value)?),
        Dimension::NClients => {
            let g = loaded.doc.generate.as_ref().ok_or_else(|| {
                CliError::Input(
                    "an n_clients sweep needs a scenario with a `generate` block".into(),
                )
            })?;
            if value < 1.0 || value.fract() != 0.0 {
                return Err(CliError::Input(format!(
                    "client count must be a positive integer, got {value}"
                )));
            }
            let mut params = g.params.clone();
            params.n_clients = value as usize;
            Ok(params.generate(loaded.model.clone(), loaded.seed.unwrap_or(g.seed))?)
        }
    }
}

pub fn sweep_rows(
    scenario_of: impl Fn(f64) -> Result<Scenario, CliError> + Sync,
    dim: Dimension,
    values: &[f64],
    cands: &[usize],
    cfg: &PlannerConfig,
    jobs: usize,
) -> Result<Vec<SweepRow>, CliError> {
    let label = match dim {
        Dimension::Lambda => "lambda",
        Dimension::Gamma => "gamma",
        Dimension::NClients => "n_clients",
    };
    pool(jobs)?.install(|| {
        values
            .par_iter()
            .map(|&value| {
                let s = scenario_of(value)?;
                let d = match dim {
                    Dimension::Lambda => planner::plan_with_lambda(&s, cands, cfg, value)?,
                    _ => planner::plan(&s, cands, cfg)?,
                };
                Ok(SweepRow {
                    dimension: label.to_string(),
                    value,
                    clients: s.client_count(),
                    heterogeneity: s.heterogeneity(),
                    h: d.plan.h,
                    v: d.plan.v,
                    lambda: d.lambda(),
                    aggregators: d.plan.aggregators.len(),
                    t1: d.delay.t1,
                    t2: d.delay.t2,
                    t_round: d.delay.t_round,
                    overhead_bytes: d.delay.overhead_bytes,
                })
            })
            .collect()
    })
}

fn sweep_cmd(args: &SweepArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let loaded = load(&args.inputs)?;
    let cands = candidates(&args.inputs, &loaded.model)?;
    let values = parse_values(&args.values)?;
    let rows = sweep_rows(
        |v| sweep_point(&loaded, args.dimension, v),
        args.dimension,
        &values,
        &cands,
        &args.tuning.config(),
        args.parallel.jobs,
    )?;
    emit(
        out,
        &args.output,
        "sweep",
        &json(&rows),
        &csv_text(&rows, SWEEP_HEADER),
    )
}

const COMPARE_HEADER: &[&str] = &[
    "seed",
    "N",
    "oracle_t",
    "heuristic_t",
    "suboptimality_pct",
    "oracle_ms",
    "heuristic_ms",
    "speedup",
];

/// `(seed, scenario)` instances for batch commands.
fn instances(
    loaded: &Loaded,
    count: u64,
    clients: Option<&[usize]>,
) -> Result<Vec<(u64, Scenario)>, CliError> {
    let base = loaded.seed.unwrap_or(0);
    match &loaded.doc.generate {
        None => {
            if count > 1 || clients.is_some() {
                return Err(CliError::Input(
                    "several instances need a scenario with a `generate` block".into(),
                ));
            }
            Ok(vec![(base, loaded.scenario.clone())])
        }
        Some(g) => {
            let sizes = clients.map_or_else(|| vec![g.params.n_clients], <[usize]>::to_vec);
            let mut list = Vec::new();
            for n in sizes {
                let mut params = g.params.clone();
                params.n_clients = n;
                for i in 0..count {
                    let seed = base.wrapping_add(i);
                    list.push((seed, params.generate(loaded.model.clone(), seed)?));
                }
            }
            Ok(list)
        }
    }
}

fn compare_cmd(args: &CompareArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let loaded = load(&args.inputs)?;
    let cands = candidates(&args.inputs, &loaded.model)?;
    let cfg = args.tuning.config();
    let budget = args.budget.budget();
    let batch = instances(&loaded, args.instances, args.clients.as_deref())?;
    let rows: Result<Vec<Comparison>, CliError> = pool(args.parallel.jobs)?.install(|| {
        batch
            .par_iter()
            .map(|(seed, s)| Ok(oracle::compare(s, &cands, &cfg, &budget, *seed)?.row))
            .collect()
    });
    let rows = rows?;
    emit(
        out,
        &args.output,
        "compare",
        &json(&rows),
        &csv_text(&rows, COMPARE_HEADER),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplanRow {
    pub seed: u64,
    pub change: String,
    pub baseline_t: f64,
    pub fixed_t: f64,
    pub replanned_t: f64,
    pub fixed_delta_pct: f64,
    pub replanned_delta_pct: f64,
    pub kept_incumbent: bool,
}

const REPLAN_HEADER: &[&str] = &[
    "seed",
    "change",
    "baseline_t",
    "fixed_t",
    "replanned_t",
    "fixed_delta_pct",
    "replanned_delta_pct",
    "kept_incumbent",
];

#[derive(Deserialize)]
#[serde(untagged)]
enum ChangeDocument {
    List(Vec<SystemChange>),
    Wrapped { changes: Vec<SystemChange> },
}

pub fn parse_changes(text: &str) -> Result<Vec<SystemChange>, String> {
    match serde_json::from_str::<ChangeDocument>(text) {
        Ok(ChangeDocument::List(c) | ChangeDocument::Wrapped { changes: c }) => Ok(c),
        Err(_) => serde_json::from_str::<Vec<SystemChange>>(text).map_err(|e| e.to_string()),
    }
}

/// Rows for one instance: one per change, or a single `none` row.
pub fn replan_rows(
    seed: u64,
    s: &Scenario,
    changes: &[SystemChange],
    cands: &[usize],
    cfg: &PlannerConfig,
) -> Result<Vec<ReplanRow>, CliError> {
    let baseline = planner::plan(s, cands, cfg)?;
    let pct = |t: f64| (t - baseline.delay.t_round) / baseline.delay.t_round * 100.0;
    let mut rows = Vec::new();
    let singles: Vec<(String, Vec<SystemChange>)> = if changes.is_empty() {
        vec![("none".to_string(), Vec::new())]
    } else {
        changes
            .iter()
            .map(|c| (c.label(), vec![c.clone()]))
            .collect()
    };
    for (label, change) in singles {
        let o = planner::replan_from(s, &baseline, &change, cands, cfg)?;
        rows.push(ReplanRow {
            seed,
            change: label,
            baseline_t: baseline.delay.t_round,
            fixed_t: o.fixed.t_round,
            replanned_t: o.chosen.delay.t_round,
            fixed_delta_pct: pct(o.fixed.t_round),
            replanned_delta_pct: pct(o.chosen.delay.t_round),
            kept_incumbent: o.kept_incumbent,
        });
    }
    Ok(rows)
}

fn replan_cmd(args: &ReplanArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let loaded = load(&args.inputs)?;
    let cands = candidates(&args.inputs, &loaded.model)?;
    let changes = parse_changes(&read(&args.changes)?).map_err(|e| io_err(&args.changes, e))?;
    let cfg = args.tuning.config();
    let batch = instances(&loaded, args.instances, None)?;
    let rows: Result<Vec<Vec<ReplanRow>>, CliError> = pool(args.parallel.jobs)?.install(|| {
        batch
            .par_iter()
            .map(|(seed, s)| replan_rows(*seed, s, &changes, &cands, &cfg))
            .collect()
    });
    let rows: Vec<ReplanRow> = rows?.into_iter().flatten().collect();
    emit(
        out,
        &args.output,
        "replan",
        &json(&rows),
        &csv_text(&rows, REPLAN_HEADER),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub plan: Plan,
    pub makespan: f64,
    pub analytic_t_round: f64,
    pub relative_error: f64,
    pub tasks: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_path: Option<String>,
}

fn read_plan(path: &Path) -> Result<Plan, CliError> {
    serde_json::from_str(&read(path)?).map_err(|e| io_err(path, e))
}

fn simulate_cmd(args: &SimulateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let loaded = load(&args.inputs)?;
    let s = &loaded.scenario;
    let plan = match &args.plan {
        Some(path) => read_plan(path)?,
        None => {
            let cands = candidates(&args.inputs, &loaded.model)?;
            planner::plan(s, &cands, &args.tuning.config())?.plan
        }
    };
    let trace = simulate_round(s, &plan)?;
    let analytic = round_delay(s, &plan)?;
    let mut csv = Vec::new();
    trace
        .write_csv(&mut csv)
        .map_err(|e| CliError::Input(format!("trace: {e}")))?;
    let csv = String::from_utf8(csv).expect("csv is utf-8");
    let mut summary = SimulationSummary {
        plan,
        makespan: trace.makespan,
        analytic_t_round: analytic.t_round,
        relative_error: (trace.makespan - analytic.t_round).abs() / analytic.t_round,
        tasks: trace.tasks.len(),
        trace_path: None,
    };
    match &args.output.out_dir {
        Some(dir) => {
            let name = match args.output.format {
                Format::Json => "trace.json",
                Format::Csv => "trace.csv",
            };
            let text = match args.output.format {
                Format::Json => trace.to_json(),
                Format::Csv => csv,
            };
            let path = write_file(dir, name, &text)?;
            summary.trace_path = Some(path.to_string_lossy().into_owned());
            write_file(dir, "simulation.json", &json(&summary))?;
            out.write_all(json(&summary).as_bytes())
                .map_err(|e| CliError::Input(format!("stdout: {e}")))
        }
        None => {
            let text = match args.output.format {
                Format::Json => json(&trace),
                Format::Csv => csv,
            };
            out.write_all(text.as_bytes())
                .map_err(|e| CliError::Input(format!("stdout: {e}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub scenario: ScenarioDigest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_valid: Option<bool>,
}

fn validate_cmd(args: &ValidateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let loaded = load(&args.inputs)?;
    let have_candidates = args.inputs.candidates.is_some() || args.inputs.accuracy.is_some();
    let cands = if have_candidates {
        Some(candidates(&args.inputs, &loaded.model)?)
    } else {
        None
    };
    let plan_valid = match &args.plan {
        Some(path) => {
            let plan = read_plan(path)?;
            let (n, layers) = (loaded.scenario.client_count(), loaded.model.layer_count());
            match &cands {
                Some(c) => plan.validate_with_candidates(n, layers, c)?,
                None => plan.validate(n, layers)?,
            }
            plan.expand(layers).check(plan.h, plan.v)?;
            Some(true)
        }
        None => None,
    };
    let summary = ValidationSummary {
        scenario: ScenarioDigest::of(&loaded.scenario),
        candidates: cands,
        plan_valid,
    };
    out.write_all(json(&summary).as_bytes())
        .map_err(|e| CliError::Input(format!("stdout: {e}")))
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Plan(a) => plan_cmd(a, out),
        Command::Sweep(a) => sweep_cmd(a, out),
        Command::Compare(a) => compare_cmd(a, out),
        Command::Replan(a) => replan_cmd(a, out),
        Command::Simulate(a) => simulate_cmd(a, out),
        Command::Validate(a) => validate_cmd(a, out),
    }
}

/// Parses `args` (program name first) and runs the command. Argument errors
/// map to exit code 1 with clap's message.
pub fn run_args<I, T>(args: I, out: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Input(e.to_string()))?;
    run(&cli, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::from(PlannerError::NoCandidates).exit_code(), 2);
        assert_eq!(
            CliError::from(PlannerError::Config("x".into())).exit_code(),
            1
        );
        assert_eq!(
            CliError::from(OracleError::BudgetExceeded {
                estimate: 10,
                guard: 1
            })
            .exit_code(),
            3
        );
        assert_eq!(CliError::from(ProfileError::TooFewLayers(3)).exit_code(), 1);
    }

    #[test]
    fn sweep_values() {
        assert_eq!(parse_values("").unwrap(), Vec::<f64>::new());
        assert_eq!(parse_values("0.1, 0.25").unwrap(), vec![0.1, 0.25]);
        assert!(parse_values("0.1,x").is_err());
    }

    #[test]
    fn empty_csv_has_header() {
        let text = csv_text::<SweepRow>(&[], SWEEP_HEADER);
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("dimension,value"));
    }

    #[test]
    fn change_list_forms() {
        let a = parse_changes(r#"[{"kind": "throughput_scale", "targets": "all", "factor": 0.7}]"#)
            .unwrap();
        let b = parse_changes(
            r#"{"changes": [{"kind": "throughput_scale", "targets": "all", "factor": 0.7}]}"#,
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(parse_changes("[]").unwrap(), vec![]);
    }
}
