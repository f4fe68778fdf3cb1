//! The `embcomm` command line.
//!
//! Every command writes a manifest describing how to reproduce its output:
//! JSON reports embed it under `"manifest"`, other outputs (distribution
//! specs, traces, CSV tables) get a `<out>.manifest.json` sidecar.
//! `embcomm replay --manifest <file> --out <path>` re-runs the command from
//! the manifest and reproduces the original bytes.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 internal invariant
//! violation.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cache_planner::{
    delta_comm, optimal_cache_size_scan, optimal_cache_size_search, CachePlan, DatasetShape,
    DeviceModel,
};
use crate::cost_model::{
    baseline_epoch_cost, cached_epoch_cost, coalesced_batch_cost, coalesced_epoch_cost,
    expected_unique_per_batch, EmbeddingDistribution, WorkloadSpec,
};
use crate::distributions::{DistributionKind, DistributionSpec};
use crate::error::{Error, Result};
use crate::report::{canonical_json, format_float, now_timestamp, RunManifest};
use crate::simulator::{self, scaling_study, trial_rng, Sampler, SimConfig, Source};
use crate::trace::{
    self, build_schedule, build_skew_table, estimate_distribution, load_trace, Trace,
};

#[derive(Debug, Parser)]
#[command(
    name = "embcomm",
    version,
    about = "Embedding lookup communication cost models, cache planning and simulation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a parametric distribution spec as JSON.
    GenDist(GenDistArgs),
    /// Sample a lookup trace from a distribution.
    GenTrace(GenTraceArgs),
    /// Expected per-batch and per-epoch costs with and without coalescing.
    Analyze(AnalyzeArgs),
    /// Choose the cache size and batch size under a memory budget.
    Plan(PlanArgs),
    /// Monte Carlo epochs for a plan, compared against the analytical cost.
    Simulate(SimulateArgs),
    /// Coalesced cost growth when vocabulary and batch scale together.
    ScaleStudy(ScaleStudyArgs),
    /// Split a trace into hot-only and normal batches.
    Schedule(ScheduleArgs),
    /// Export a trace's ranked skew table as CSV.
    Skew(SkewArgs),
    /// Re-run a command from a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindArg {
    Zipf,
    Exponential,
    #[value(name = "half_normal", alias = "half-normal")]
    HalfNormal,
}

impl From<KindArg> for DistributionKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Zipf => DistributionKind::Zipf,
            KindArg::Exponential => DistributionKind::Exponential,
            KindArg::HalfNormal => DistributionKind::HalfNormal,
        }
    }
}

/// Exactly one of a distribution spec or a trace.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[group(required = true, multiple = false)]
pub struct InputArgs {
    /// Distribution spec JSON.
    #[arg(long)]
    pub dist: Option<PathBuf>,
    /// Lookup trace file.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenDistArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[arg(long)]
    pub size: usize,
    /// Shape parameter; defaults per kind (zipf 1, exponential 5, half_normal 0.08).
    #[arg(long)]
    pub shape: Option<f64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenTraceArgs {
    #[arg(long)]
    pub dist: PathBuf,
    #[arg(long)]
    pub samples: u64,
    #[arg(long)]
    pub lookups: u32,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub batch_size: u64,
    /// Lookups per sample; defaults to the trace's.
    #[arg(long)]
    pub lookups: Option<u32>,
    /// Dataset size; defaults to the trace's.
    #[arg(long)]
    pub samples: Option<u64>,
    /// Additive smoothing for distributions estimated from a trace.
    #[arg(long, default_value_t = 0.0)]
    pub smoothing: f64,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PlanArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Device parameter budget M.
    #[arg(long)]
    pub memory: u64,
    /// Parameters per in-flight sample a.
    #[arg(long)]
    pub activation: u64,
    /// Parameters per cached embedding.
    #[arg(long)]
    pub embed_params: u64,
    #[arg(long)]
    pub samples: Option<u64>,
    #[arg(long)]
    pub lookups: Option<u32>,
    /// Fraction of the budget the allocator can actually use, in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub efficiency: f64,
    /// Evaluate every cache size instead of binary searching.
    #[arg(long)]
    pub exhaustive: bool,
    #[arg(long, default_value_t = 0.0)]
    pub smoothing: f64,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Plan JSON (as written by `plan`); supplies cache, batch size, Q and d.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub epochs: u64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub batch_size: Option<u64>,
    /// Cache the k hottest ids instead of the plan's cache.
    #[arg(long)]
    pub cache_size: Option<usize>,
    #[arg(long)]
    pub samples: Option<u64>,
    #[arg(long)]
    pub lookups: Option<u32>,
    #[arg(long, default_value_t = 4)]
    pub portions: usize,
    /// Shuffle trace samples within each class every epoch.
    #[arg(long)]
    pub shuffle: bool,
    #[arg(long, default_value_t = 0.0)]
    pub smoothing: f64,
    /// Also write the result as flat `metric,value` CSV.
    #[arg(long)]
    #[serde(skip)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ScaleStudyArgs {
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "zipf,exponential,half_normal"
    )]
    pub kinds: Vec<KindArg>,
    #[arg(long, default_value_t = 5)]
    pub factor: usize,
    /// Base vocabulary size.
    #[arg(long, default_value_t = 1000)]
    pub size: usize,
    #[arg(long, default_value_t = 256)]
    pub batch_size: u64,
    #[arg(long, default_value_t = 4)]
    pub lookups: u32,
    #[arg(long)]
    pub zipf_shape: Option<f64>,
    #[arg(long)]
    pub exponential_shape: Option<f64>,
    #[arg(long)]
    pub half_normal_shape: Option<f64>,
    /// Also write the JSON report.
    #[arg(long)]
    #[serde(skip)]
    pub json: Option<PathBuf>,
    /// CSV ratio table.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ScheduleArgs {
    #[arg(long)]
    pub trace: PathBuf,
    /// Cache the k most accessed ids of the trace.
    #[arg(long)]
    pub cache_size: usize,
    #[arg(long)]
    pub batch_size: usize,
    #[arg(long)]
    pub shuffle_seed: Option<u64>,
    /// Also write the full `batch,kind,sample` assignment CSV.
    #[arg(long)]
    #[serde(skip)]
    pub assignments: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SkewArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// A JSON report with an embedded manifest, or a manifest sidecar.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_internal() {
                3
            } else {
                2
            }
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    let ts = now_timestamp();
    match command {
        Command::GenDist(a) => gen_dist(&a, &ts),
        Command::GenTrace(a) => gen_trace(&a, &ts),
        Command::Analyze(a) => analyze(&a, &ts),
        Command::Plan(a) => plan(&a, &ts),
        Command::Simulate(a) => simulate(&a, &ts),
        Command::ScaleStudy(a) => scale_study(&a, &ts),
        Command::Schedule(a) => schedule(&a, &ts),
        Command::Skew(a) => skew(&a, &ts),
        Command::Replay(a) => replay(&a),
    }
}

fn replay(args: &ReplayArgs) -> Result<()> {
    let text = read_text(&args.manifest)?;
    let mut doc: Value = serde_json::from_str(&text)?;
    let manifest: RunManifest = match doc.get_mut("manifest") {
        Some(m) => serde_json::from_value(m.take())?,
        None => serde_json::from_value(doc)?,
    };
    manifest.verify_inputs()?;
    let ts = manifest.timestamp.as_str();
    let params = manifest.parameters.clone();
    let out = args.out.clone();
    macro_rules! rerun {
        ($ty:ty, $f:ident) => {{
            let mut a: $ty = serde_json::from_value(params)?;
            a.out = out;
            $f(&a, ts)
        }};
    }
    match manifest.command.as_str() {
        "gen-dist" => rerun!(GenDistArgs, gen_dist),
        "gen-trace" => rerun!(GenTraceArgs, gen_trace),
        "analyze" => rerun!(AnalyzeArgs, analyze),
        "plan" => rerun!(PlanArgs, plan),
        "simulate" => rerun!(SimulateArgs, simulate),
        "scale-study" => rerun!(ScaleStudyArgs, scale_study),
        "schedule" => rerun!(ScheduleArgs, schedule),
        "skew" => rerun!(SkewArgs, skew),
        other => Err(Error::invalid(format!(
            "unknown command {other:?} in manifest"
        ))),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_output(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, content).map_err(|e| Error::io(path, e)),
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(content.as_bytes())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Writes a non-JSON artifact and, when it goes to a file, its manifest
/// sidecar.
fn write_with_sidecar(out: Option<&Path>, content: &str, manifest: &RunManifest) -> Result<()> {
    write_output(out, content)?;
    if let Some(path) = out {
        let sidecar = sidecar_path(path);
        std::fs::write(&sidecar, canonical_json(manifest)?).map_err(|e| Error::io(&sidecar, e))?;
    }
    Ok(())
}

fn write_report(out: Option<&Path>, manifest: RunManifest, mut body: Value) -> Result<()> {
    body["manifest"] = serde_json::to_value(manifest)?;
    write_output(out, &canonical_json(&body)?)
}

/// A distribution plus, for traces, the trace it was estimated from.
struct LoadedInput {
    dist: EmbeddingDistribution,
    trace: Option<Trace>,
    description: Value,
}

fn load_input(
    input: &InputArgs,
    smoothing: f64,
    manifest: &mut RunManifest,
) -> Result<LoadedInput> {
    match (&input.dist, &input.trace) {
        (Some(path), None) => {
            manifest.record_input(path)?;
            let spec = DistributionSpec::from_json(&read_text(path)?)?;
            let description = json!({"source": "distribution", "kind": spec.kind(), "size": spec.size(), "shape": spec.shape()});
            Ok(LoadedInput {
                dist: spec.materialize()?,
                trace: None,
                description,
            })
        }
        (None, Some(path)) => {
            manifest.record_input(path)?;
            let trace = load_trace(path)?;
            let table = build_skew_table(&trace);
            let dist = estimate_distribution(&table, trace.vocab_size(), smoothing)?;
            let description = json!({
                "source": "trace",
                "size": trace.vocab_size(),
                "num_samples": trace.num_samples(),
                "lookups_per_sample": trace.num_features(),
                "distinct_ids": table.entries.len(),
                "smoothing": smoothing,
            });
            Ok(LoadedInput {
                dist,
                trace: Some(trace),
                description,
            })
        }
        _ => Err(Error::invalid("pass exactly one of --dist or --trace")),
    }
}

/// Q and d from explicit flags, falling back to the trace (or a plan).
fn resolve_shape(
    samples: Option<u64>,
    lookups: Option<u32>,
    trace: Option<&Trace>,
    fallback: Option<(u64, u32)>,
) -> Result<DatasetShape> {
    let q = samples
        .or(trace.map(|t| t.num_samples() as u64))
        .or(fallback.map(|f| f.0))
        .ok_or_else(|| Error::invalid("--samples is required with --dist"))?;
    let d = lookups
        .or(trace.map(|t| t.num_features() as u32))
        .or(fallback.map(|f| f.1))
        .ok_or_else(|| Error::invalid("--lookups is required with --dist"))?;
    DatasetShape::new(q, d)
}

const INDEX_CONVENTION_NOTE: &str =
    "index cost counts one index per sample (b per batch, Q per epoch); \
charging one index per lookup would multiply the index term by lookups_per_sample";

fn gen_dist(args: &GenDistArgs, ts: &str) -> Result<()> {
    let manifest = RunManifest::new("gen-dist", args, None, ts.to_string())?;
    let kind = DistributionKind::from(args.kind);
    let spec = match args.shape {
        Some(shape) => DistributionSpec::parametric(kind, args.size, shape)?,
        None => DistributionSpec::with_default_shape(kind, args.size)?,
    };
    spec.materialize()?;
    write_with_sidecar(args.out.as_deref(), &canonical_json(&spec)?, &manifest)
}

fn gen_trace(args: &GenTraceArgs, ts: &str) -> Result<()> {
    let mut manifest = RunManifest::new("gen-trace", args, Some(args.seed), ts.to_string())?;
    manifest.record_input(&args.dist)?;
    if args.samples == 0 || args.lookups == 0 {
        return Err(Error::invalid("--samples and --lookups must be at least 1"));
    }
    let spec = DistributionSpec::from_json(&read_text(&args.dist)?)?;
    let dist = spec.materialize()?;
    let sampler = Sampler::new(&dist)?;
    let mut rng = trial_rng(args.seed, 0);
    let ids = simulator::sample_batch(
        &sampler,
        args.samples as usize,
        args.lookups as usize,
        &mut rng,
    );
    let trace = Trace::new(args.lookups as usize, dist.len() as u32, ids)?;
    write_with_sidecar(args.out.as_deref(), &trace.to_text(), &manifest)
}

fn analyze(args: &AnalyzeArgs, ts: &str) -> Result<()> {
    let mut manifest = RunManifest::new("analyze", args, None, ts.to_string())?;
    let input = load_input(&args.input, args.smoothing, &mut manifest)?;
    let shape = resolve_shape(args.samples, args.lookups, input.trace.as_ref(), None)?;
    let spec = WorkloadSpec::new(shape.num_samples, args.batch_size, shape.lookups_per_sample)?;
    let unique = expected_unique_per_batch(&input.dist, args.batch_size)?;
    let baseline = baseline_epoch_cost(&spec);
    let coalesced = coalesced_epoch_cost(&input.dist, &spec);
    let body = json!({
        "input": input.description,
        "workload": spec,
        "expected_unique_per_batch": unique,
        "coalesced_batch_cost": coalesced_batch_cost(&input.dist, args.batch_size)?,
        "baseline_epoch_cost": baseline,
        "coalesced_epoch_cost": coalesced,
        "savings_ratio": baseline / coalesced.total,
        "coalesced_to_baseline": coalesced.total / baseline,
        "notes": [INDEX_CONVENTION_NOTE],
    });
    write_report(args.out.as_deref(), manifest, body)
}

fn plan(args: &PlanArgs, ts: &str) -> Result<()> {
    let mut manifest = RunManifest::new("plan", args, None, ts.to_string())?;
    let input = load_input(&args.input, args.smoothing, &mut manifest)?;
    let shape = resolve_shape(args.samples, args.lookups, input.trace.as_ref(), None)?;
    let device = DeviceModel::with_efficiency(
        args.memory,
        args.activation,
        args.embed_params,
        args.efficiency,
    )?;
    let plan = if args.exhaustive {
        optimal_cache_size_scan(&input.dist, &device, &shape)?
    } else {
        optimal_cache_size_search(&input.dist, &device, &shape)?
    };
    let next = if (plan.cache_size as usize) < input.dist.len() {
        match delta_comm(&input.dist, &device, &shape, plan.cache_size) {
            Ok(r) => Some(r),
            Err(Error::Infeasible(_)) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let body = json!({
        "input": input.description,
        "device": device,
        "plan": plan,
        "fallback_used": plan.fallback_used(),
        "next_embedding": next,
        "notes": [INDEX_CONVENTION_NOTE],
    });
    write_report(args.out.as_deref(), manifest, body)
}

fn read_plan(path: &Path) -> Result<CachePlan> {
    let mut doc: Value = serde_json::from_str(&read_text(path)?)?;
    let plan = match doc.get_mut("plan") {
        Some(p) => p.take(),
        None => doc,
    };
    Ok(serde_json::from_value(plan)?)
}

fn simulate(args: &SimulateArgs, ts: &str) -> Result<()> {
    let mut manifest = RunManifest::new("simulate", args, Some(args.seed), ts.to_string())?;
    let input = load_input(&args.input, args.smoothing, &mut manifest)?;
    let plan = match &args.plan {
        Some(path) => {
            manifest.record_input(path)?;
            Some(read_plan(path)?)
        }
        None => None,
    };
    let shape = resolve_shape(
        args.samples,
        args.lookups,
        input.trace.as_ref(),
        plan.as_ref().map(|p| (p.num_samples, p.lookups_per_sample)),
    )?;
    let batch_size = args
        .batch_size
        .or(plan.as_ref().filter(|p| p.feasible).map(|p| p.batch_size))
        .ok_or_else(|| Error::invalid("--batch-size is required without a feasible --plan"))?;
    let spec = WorkloadSpec::new(shape.num_samples, batch_size, shape.lookups_per_sample)?;

    let cache: Vec<u32> = match (args.cache_size, &plan, &input.trace) {
        (Some(k), _, Some(trace)) => build_skew_table(trace).top_ids(k),
        (Some(k), _, None) => input.dist.top_ids(k).to_vec(),
        (None, Some(p), _) => p.cached_ids.clone(),
        (None, None, _) => Vec::new(),
    };
    let source = match input.trace {
        Some(t) => Source::Trace(t),
        None => Source::Distribution(input.dist.clone()),
    };
    let mut config = SimConfig::new(source, spec, args.seed, args.epochs).with_cache(cache.clone());
    config.portions = args.portions;
    config.shuffle = args.shuffle;
    let result = simulator::simulate_epoch(&config)?;

    let analytical = cached_epoch_cost(&input.dist, &spec, &cache)?;
    let rel = |measured: f64, expected: f64| {
        if expected == 0.0 {
            if measured == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (measured - expected).abs() / expected
        }
    };
    let expected_non_cached =
        analytical.embedding_cost / (spec.batches_per_epoch() * spec.lookups_per_sample() as f64);
    let agreement = json!({
        "analytical_epoch_cost": analytical,
        "total_relative_error": rel(result.measured_epoch_cost.total, analytical.total),
        "embedding_relative_error": rel(result.measured_epoch_cost.embedding_cost, analytical.embedding_cost),
        "expected_non_cached_unique_per_batch": expected_non_cached,
        "non_cached_unique_z_score": finite_or_null(result.mean_non_cached_unique.z_score(expected_non_cached)),
    });
    let body = json!({
        "input": input.description,
        "workload": spec,
        "cache_size": cache.len(),
        "epochs": args.epochs,
        "seed": args.seed,
        "result": result,
        "agreement": agreement,
    });
    if let Some(csv) = &args.csv {
        let mut flat = Vec::new();
        flatten(
            "",
            &json!({"result": body["result"], "agreement": body["agreement"]}),
            &mut flat,
        );
        let mut text = String::from("metric,value\n");
        for (k, v) in flat {
            text.push_str(&format!("{k},{v}\n"));
        }
        std::fs::write(csv, text).map_err(|e| Error::io(csv, e))?;
    }
    write_report(args.out.as_deref(), manifest, body)
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let key = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match v {
        Value::Object(map) => map.iter().for_each(|(k, v)| flatten(&key(k), v, out)),
        Value::Array(items) => items
            .iter()
            .enumerate()
            .for_each(|(i, v)| flatten(&key(&i.to_string()), v, out)),
        Value::Number(n) => {
            let s = match n.as_f64() {
                Some(x) if n.is_f64() => format_float(x),
                _ => n.to_string(),
            };
            out.push((prefix.to_string(), s));
        }
        Value::String(s) if s.contains(',') => out.push((prefix.to_string(), format!("\"{s}\""))),
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        Value::Bool(b) => out.push((prefix.to_string(), b.to_string())),
        Value::Null => out.push((prefix.to_string(), String::new())),
    }
}

fn scale_study(args: &ScaleStudyArgs, ts: &str) -> Result<()> {
    let manifest = RunManifest::new("scale-study", args, None, ts.to_string())?;
    let specs = args
        .kinds
        .iter()
        .map(|&k| {
            let kind = DistributionKind::from(k);
            let shape = match k {
                KindArg::Zipf => args.zipf_shape,
                KindArg::Exponential => args.exponential_shape,
                KindArg::HalfNormal => args.half_normal_shape,
            };
            match shape {
                Some(s) => DistributionSpec::parametric(kind, args.size, s),
                None => DistributionSpec::with_default_shape(kind, args.size),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let report = scaling_study(&specs, args.batch_size, args.lookups, args.factor)?;
    if let Some(json_path) = &args.json {
        let body = json!({
            "report": report,
            "all_within_bounds": report.all_within_bounds(),
            "manifest": manifest,
        });
        std::fs::write(json_path, canonical_json(&body)?).map_err(|e| Error::io(json_path, e))?;
    }
    for row in report.rows.iter().filter(|r| !r.within_bound) {
        eprintln!(
            "warning: {} coalesced ratio {} is not below {}",
            row.kind,
            format_float(row.coalesced_ratio),
            row.ratio_bound
        );
    }
    write_with_sidecar(args.out.as_deref(), &report.to_csv(), &manifest)
}

fn schedule(args: &ScheduleArgs, ts: &str) -> Result<()> {
    let mut manifest = RunManifest::new("schedule", args, args.shuffle_seed, ts.to_string())?;
    manifest.record_input(&args.trace)?;
    let trace = load_trace(&args.trace)?;
    let cache = build_skew_table(&trace).top_ids(args.cache_size);
    let s = build_schedule(&trace, &cache, args.batch_size, args.shuffle_seed)?;
    if let Some(path) = &args.assignments {
        std::fs::write(path, s.assignments_csv()).map_err(|e| Error::io(path, e))?;
    }
    let q = trace.num_samples();
    let body = json!({
        "num_samples": q,
        "batch_size": args.batch_size,
        "cache_size": cache.len(),
        "cached_ids": cache,
        "hot_samples": s.hot_samples(),
        "normal_samples": s.normal_samples(),
        "hot_batches": s.hot_batches.len(),
        "normal_batches": s.normal_batches.len(),
        "hot_sample_fraction": s.hot_samples() as f64 / q as f64,
        "hot_batch_fraction": s.hot_batches.len() as f64 / s.num_batches() as f64,
    });
    write_report(args.out.as_deref(), manifest, body)
}

fn skew(args: &SkewArgs, ts: &str) -> Result<()> {
    let mut manifest = RunManifest::new("skew", args, None, ts.to_string())?;
    manifest.record_input(&args.trace)?;
    let trace = trace::load_trace(&args.trace)?;
    write_with_sidecar(
        args.out.as_deref(),
        &build_skew_table(&trace).to_csv(),
        &manifest,
    )
}
