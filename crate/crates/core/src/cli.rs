//! The `rappp` command line: schema inference, query generation, fitting,
//! evaluation and the annealing ablation, each leaving a run manifest.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ablation::{ablate_annealing, AblationConfig, AblationRow, DEFAULT_FIXED_SIGMAS};
use crate::engine::{
    default_phase_plan, Engine, EngineConfig, EngineState, PhaseSpec, SelectionScoring, DEFAULT_QUERIES_PER_EPOCH,
    DEFAULT_SYNTHETIC_ROWS,
};
use crate::error::{Error, Result};
use crate::evaluation::{workload_error, ErrorReport};
use crate::privacy::{LedgerRow, NoiseMode};
use crate::projection::{AnnealConfig, OptimizerConfig};
use crate::queries::{gen_cm_queries, gen_lt_queries, gen_mm_queries, gen_prefix_queries, QuerySet};
use crate::schema::{infer_schema, read_csv, write_csv, ColumnOverride, DiscreteDataset, InferOptions, Schema};

pub const MANIFEST_VERSION: u32 = 1;
pub const DEFAULT_LT_POOL: usize = 2000;

#[derive(Debug, Parser)]
#[command(name = "rappp", version, about = "Private synthetic tabular data by relaxed adaptive projection")]
pub struct Cli {
    /// Master seed for every random draw in the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for data-parallel loops (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Write optimization traces as JSON to this path.
    #[arg(long, global = true)]
    pub trace: Option<PathBuf>,
    /// Directory for per-epoch state snapshots (fit only).
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Manifest path (default: next to the main output, suffixed `.manifest.json`).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Infer a schema from a CSV header and contents.
    SchemaInfer(SchemaInferArgs),
    /// Generate a query-set file.
    GenQueries(GenQueriesArgs),
    /// Fit a private synthetic dataset.
    Fit(FitArgs),
    /// Report workload error of a synthetic dataset.
    Eval(EvalArgs),
    /// Compare annealed and fixed-temperature projection.
    AblateAnnealing(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SchemaInferArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSON object mapping column names to bound/label/categorical overrides.
    #[arg(long)]
    pub overrides: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub max_categories: usize,
    /// Output path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryKind {
    Cm,
    Mm,
    Lt,
    Prefix,
}

#[derive(Debug, Args)]
pub struct GenQueriesArgs {
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long, value_enum)]
    pub kind: QueryKind,
    /// Number of queries; ignored for `cm`, which is exhaustive.
    #[arg(long, default_value_t = 1000)]
    pub m: usize,
    /// Columns per prefix query.
    #[arg(long, default_value_t = 2)]
    pub prefix_width: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AnnealArgs {
    #[arg(long, default_value_t = 2.0)]
    pub sigma_initial: f64,
    #[arg(long, default_value_t = 10)]
    pub doublings: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub grad_stop: f64,
    #[arg(long, default_value_t = 500)]
    pub max_inner_steps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub step_size: f64,
}

impl AnnealArgs {
    fn config(&self) -> AnnealConfig {
        AnnealConfig {
            sigma_initial: self.sigma_initial,
            doublings: self.doublings,
            grad_stop: self.grad_stop,
            max_inner_steps: self.max_inner_steps,
            optimizer: OptimizerConfig {
                step_size: self.step_size,
                ..Default::default()
            },
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scoring {
    Relaxed,
    Rounded,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// Phase as `label:queries.json:epochs`; repeat in training order.
    /// Without any, a categorical-marginal phase is followed by a
    /// linear-threshold phase.
    #[arg(long = "phase")]
    pub phases: Vec<String>,
    /// Pool size of the default linear-threshold phase.
    #[arg(long, default_value_t = DEFAULT_LT_POOL)]
    pub lt_queries: usize,
    #[arg(long)]
    pub epsilon: f64,
    /// Defaults to 1/n^2 for n input rows.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, short = 'k', default_value_t = DEFAULT_QUERIES_PER_EPOCH)]
    pub queries_per_epoch: usize,
    #[arg(long, default_value_t = DEFAULT_SYNTHETIC_ROWS)]
    pub rows: usize,
    #[arg(long, value_enum, default_value_t = Scoring::Relaxed)]
    pub scoring: Scoring,
    #[command(flatten)]
    pub anneal: AnnealArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub real: PathBuf,
    #[arg(long)]
    pub synthetic: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// Query-set files; each yields one report keyed by its file stem.
    #[arg(long = "workload", required = true)]
    pub workloads: Vec<PathBuf>,
    /// Include the full per-query error vector (JSON only).
    #[arg(long)]
    pub per_query: bool,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    pub format: ReportFormat,
    /// Output path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub workload: PathBuf,
    /// Fixed inverse temperatures, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_FIXED_SIGMAS.to_vec())]
    pub sigmas: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_SYNTHETIC_ROWS)]
    pub rows: usize,
    #[command(flatten)]
    pub anneal: AnnealArgs,
    #[arg(long)]
    pub out: PathBuf,
}

/// Reproduction record written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub tool_version: String,
    pub command_line: Vec<String>,
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub threads: Option<usize>,
    /// SHA-256 of each input file, keyed by role.
    pub inputs: BTreeMap<String, FileDigest>,
    pub outputs: BTreeMap<String, FileDigest>,
    pub wall_time_secs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub privacy: Option<PrivacySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacySummary {
    pub epsilon: f64,
    pub delta: f64,
    pub rho: f64,
    pub rho_spent: f64,
    pub ledger: Vec<LedgerRow>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn digest(path: &Path) -> Result<FileDigest> {
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: sha256_file(path)?,
    })
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn load_schema(path: &Path) -> Result<Arc<Schema>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(Arc::new(Schema::from_json(&text)?))
}

fn load_queries(path: &Path) -> Result<QuerySet> {
    QuerySet::read_json(open(path)?)
}

fn load_data(schema: Arc<Schema>, path: &Path) -> Result<DiscreteDataset> {
    let data = read_csv(schema, open(path)?)?;
    if data.clamped_cells() > 0 {
        eprintln!(
            "warning: {} numerical cells in {} were outside their declared bounds and were clamped",
            data.clamped_cells(),
            path.display()
        );
    }
    Ok(data)
}

fn csv_bytes(data: &DiscreteDataset) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_csv(data, &mut out)?;
    Ok(out)
}

struct Run<'a> {
    cli: &'a Cli,
    argv: Vec<String>,
    start: Instant,
}

impl Run<'_> {
    fn manifest(
        &self,
        command: &str,
        config: serde_json::Value,
        inputs: BTreeMap<String, FileDigest>,
        outputs: BTreeMap<String, FileDigest>,
        privacy: Option<PrivacySummary>,
    ) -> RunManifest {
        RunManifest {
            manifest_version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command_line: self.argv.clone(),
            command: command.to_string(),
            config,
            seed: self.cli.seed,
            threads: self.cli.threads,
            inputs,
            outputs,
            wall_time_secs: self.start.elapsed().as_secs_f64(),
            privacy,
        }
    }

    fn write_manifest(&self, main_output: &Path, manifest: &RunManifest) -> Result<()> {
        let path = self
            .cli
            .manifest
            .clone()
            .unwrap_or_else(|| with_suffix(main_output, ".manifest.json"));
        write_json(&path, manifest)
    }
}

fn schema_infer(run: &Run, args: &SchemaInferArgs) -> Result<()> {
    let overrides: BTreeMap<String, ColumnOverride> = match &args.overrides {
        Some(p) => serde_json::from_reader(open(p)?)?,
        None => BTreeMap::new(),
    };
    let opts = InferOptions {
        max_categories: args.max_categories,
        overrides,
    };
    let inferred = infer_schema(open(&args.data)?, &opts)?;
    if !inferred.data_derived_bounds.is_empty() {
        eprintln!(
            "WARNING: bounds for {} were read off the data. Data-derived bounds leak information \
             and void the privacy guarantee; declare them in an overrides file instead.",
            inferred.data_derived_bounds.join(", ")
        );
    }
    let mut text = inferred.schema.to_json();
    text.push('\n');
    match &args.out {
        None => {
            print!("{text}");
            Ok(())
        }
        Some(out) => {
            write_atomic(out, text.as_bytes())?;
            let mut inputs = BTreeMap::from([("data".to_string(), digest(&args.data)?)]);
            if let Some(p) = &args.overrides {
                inputs.insert("overrides".into(), digest(p)?);
            }
            let outputs = BTreeMap::from([("schema".to_string(), digest(out)?)]);
            let config = serde_json::json!({
                "max_categories": args.max_categories,
                "data_derived_bounds": inferred.data_derived_bounds,
            });
            run.write_manifest(out, &run.manifest("schema-infer", config, inputs, outputs, None))
        }
    }
}

fn gen_queries(run: &Run, args: &GenQueriesArgs) -> Result<()> {
    let schema = load_schema(&args.schema)?;
    let seed = run.cli.seed;
    let set = match args.kind {
        QueryKind::Cm => gen_cm_queries(&schema)?,
        QueryKind::Mm => gen_mm_queries(&schema, args.m, seed)?,
        QueryKind::Lt => gen_lt_queries(&schema, args.m, seed)?,
        QueryKind::Prefix => gen_prefix_queries(&schema, args.m, args.prefix_width, seed)?,
    };
    let mut text = set.to_json();
    text.push('\n');
    write_atomic(&args.out, text.as_bytes())?;
    let inputs = BTreeMap::from([("schema".to_string(), digest(&args.schema)?)]);
    let outputs = BTreeMap::from([("queries".to_string(), digest(&args.out)?)]);
    let config = serde_json::json!({
        "kind": args.kind,
        "m": set.len(),
        "prefix_width": args.prefix_width,
    });
    run.write_manifest(&args.out, &run.manifest("gen-queries", config, inputs, outputs, None))
}

fn parse_phase(spec: &str) -> Result<(String, PathBuf, usize)> {
    let bad = || Error::Parameter(format!("phase `{spec}` is not of the form label:path:epochs"));
    let (label, rest) = spec.split_once(':').ok_or_else(bad)?;
    let (path, epochs) = rest.rsplit_once(':').ok_or_else(bad)?;
    let epochs = epochs.parse().map_err(|_| bad())?;
    if label.is_empty() || path.is_empty() {
        return Err(bad());
    }
    Ok((label.to_string(), PathBuf::from(path), epochs))
}

#[derive(Serialize)]
struct FitTrace<'a> {
    epochs: &'a [crate::engine::EpochDiagnostics],
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    failed_projection: Option<&'a crate::projection::ProjectionReport>,
}

#[derive(Serialize)]
struct CheckpointMeta<'a> {
    epoch: usize,
    rows: usize,
    cat_width: usize,
    num_width: usize,
    blob: String,
    measured: &'a [crate::engine::MeasuredQuery],
    ledger: Vec<LedgerRow>,
}

fn write_checkpoint(dir: &Path, state: &EngineState) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let x = &state.relaxed;
    let blob_name = format!("epoch-{:04}.bin", state.epoch);
    let mut blob = Vec::with_capacity(8 * (x.cat().len() + x.num().len()));
    for v in x.cat().iter().chain(x.num()) {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(&dir.join(&blob_name), &blob)?;
    let meta = CheckpointMeta {
        epoch: state.epoch,
        rows: x.rows(),
        cat_width: x.schema().one_hot_width(),
        num_width: x.schema().numerical().len(),
        blob: blob_name,
        measured: &state.measured,
        ledger: state.accountant.export(),
    };
    write_json(&dir.join(format!("epoch-{:04}.json", state.epoch)), &meta)
}

fn fit(run: &Run, args: &FitArgs) -> Result<()> {
    // Parameter checks come before any file is read.
    if !(args.epsilon > 0.0 && args.epsilon.is_finite()) {
        return Err(Error::Parameter(format!("epsilon must be positive, got {}", args.epsilon)));
    }
    if let Some(d) = args.delta {
        if !(d > 0.0 && d < 1.0) {
            return Err(Error::Parameter(format!("delta must lie in (0, 1), got {d}")));
        }
    }
    let anneal = args.anneal.config();
    anneal.validate()?;
    let phase_specs = args.phases.iter().map(|s| parse_phase(s)).collect::<Result<Vec<_>>>()?;

    let schema = load_schema(&args.schema)?;
    let data = load_data(Arc::clone(&schema), &args.data)?;
    let mut inputs = BTreeMap::from([
        ("schema".to_string(), digest(&args.schema)?),
        ("data".to_string(), digest(&args.data)?),
    ]);
    let phases = if phase_specs.is_empty() {
        default_phase_plan(&schema, args.lt_queries, run.cli.seed)?
    } else {
        phase_specs
            .into_iter()
            .map(|(label, path, epochs)| {
                let queries = load_queries(&path)?;
                inputs.insert(format!("phase:{label}"), digest(&path)?);
                Ok(PhaseSpec { label, queries, epochs })
            })
            .collect::<Result<Vec<_>>>()?
    };
    let phase_summary: Vec<_> = phases
        .iter()
        .map(|p| serde_json::json!({"label": p.label, "epochs": p.epochs, "pool": p.queries.len()}))
        .collect();

    let cfg = EngineConfig {
        epsilon: args.epsilon,
        delta: args.delta,
        phases,
        queries_per_epoch: args.queries_per_epoch,
        synthetic_rows: args.rows,
        anneal,
        seed: run.cli.seed,
        noise: NoiseMode::Sampled,
        scoring: match args.scoring {
            Scoring::Relaxed => SelectionScoring::RelaxedFinalSigma,
            Scoring::Rounded => SelectionScoring::Rounded,
        },
    };
    let delta = cfg.resolved_delta(data.rows());
    let mut engine = Engine::new(&data, cfg)?;
    let trace_path = run.cli.trace.clone().unwrap_or_else(|| with_suffix(&args.out, ".trace.json"));
    while !engine.is_done() {
        if let Err(err) = engine.step() {
            let failed = match &err {
                Error::Optimization { trace, .. } => Some(trace.as_ref()),
                _ => None,
            };
            let trace = FitTrace {
                epochs: &engine.state().diagnostics,
                error: Some(err.to_string()),
                failed_projection: failed,
            };
            if write_json(&trace_path, &trace).is_ok() {
                eprintln!("partial trace written to {}", trace_path.display());
            }
            return Err(err);
        }
        if let Some(dir) = &run.cli.checkpoint {
            write_checkpoint(dir, engine.state())?;
        }
    }
    let (synthetic, state) = engine.finish();
    write_atomic(&args.out, &csv_bytes(&synthetic)?)?;
    let mut outputs = BTreeMap::from([("synthetic".to_string(), digest(&args.out)?)]);
    if run.cli.trace.is_some() {
        let trace = FitTrace {
            epochs: &state.diagnostics,
            error: None,
            failed_projection: None,
        };
        write_json(&trace_path, &trace)?;
        outputs.insert("trace".into(), digest(&trace_path)?);
    }

    let mut config = serde_json::to_value(args)?;
    config["delta_resolved"] = serde_json::json!(delta);
    config["phase_plan"] = serde_json::json!(phase_summary);
    let privacy = PrivacySummary {
        epsilon: state.accountant.epsilon(),
        delta: state.accountant.delta(),
        rho: state.accountant.rho_total(),
        rho_spent: state.accountant.spent(),
        ledger: state.accountant.export(),
    };
    run.write_manifest(&args.out, &run.manifest("fit", config, inputs, outputs, Some(privacy)))
}

fn eval(run: &Run, args: &EvalArgs) -> Result<()> {
    let schema = load_schema(&args.schema)?;
    let real = load_data(Arc::clone(&schema), &args.real)?;
    let synthetic = load_data(Arc::clone(&schema), &args.synthetic)?;
    let mut inputs = BTreeMap::from([
        ("schema".to_string(), digest(&args.schema)?),
        ("real".to_string(), digest(&args.real)?),
        ("synthetic".to_string(), digest(&args.synthetic)?),
    ]);
    let mut reports = Vec::new();
    for path in &args.workloads {
        let workload = load_queries(path)?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        inputs.insert(format!("workload:{label}"), digest(path)?);
        let mut report = workload_error(&real, &synthetic, &workload)?;
        report.workload = label;
        report.seed = Some(run.cli.seed);
        if !args.per_query {
            report.per_query = None;
        }
        reports.push(report);
    }
    let bytes = match args.format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(&reports)?;
            s.push('\n');
            s.into_bytes()
        }
        ReportFormat::Csv => {
            let mut out = Vec::new();
            ErrorReport::write_csv(&reports, &mut out)?;
            out
        }
    };
    match &args.out {
        None => {
            std::io::stdout().write_all(&bytes).map_err(|e| Error::io("<stdout>", e))?;
            Ok(())
        }
        Some(out) => {
            write_atomic(out, &bytes)?;
            let outputs = BTreeMap::from([("report".to_string(), digest(out)?)]);
            let config = serde_json::json!({"per_query": args.per_query});
            run.write_manifest(out, &run.manifest("eval", config, inputs, outputs, None))
        }
    }
}

fn ablate(run: &Run, args: &AblateArgs) -> Result<()> {
    let anneal = args.anneal.config();
    anneal.validate()?;
    let schema = load_schema(&args.schema)?;
    let data = load_data(Arc::clone(&schema), &args.data)?;
    let workload = load_queries(&args.workload)?;
    let cfg = AblationConfig {
        fixed_sigmas: args.sigmas.clone(),
        anneal,
        synthetic_rows: args.rows,
        seed: run.cli.seed,
    };
    let rows = ablate_annealing(&data, &workload, &cfg)?;
    let mut out = Vec::new();
    AblationRow::write_csv(&rows, &mut out)?;
    write_atomic(&args.out, &out)?;
    let inputs = BTreeMap::from([
        ("schema".to_string(), digest(&args.schema)?),
        ("data".to_string(), digest(&args.data)?),
        ("workload".to_string(), digest(&args.workload)?),
    ]);
    let mut outputs = BTreeMap::from([("table".to_string(), digest(&args.out)?)]);
    if let Some(trace) = &run.cli.trace {
        write_json(trace, &rows)?;
        outputs.insert("trace".into(), digest(trace)?);
    }
    let config = serde_json::to_value(args)?;
    run.write_manifest(&args.out, &run.manifest("ablate-annealing", config, inputs, outputs, None))
}

/// Runs a parsed command line.
pub fn execute(cli: &Cli, argv: Vec<String>) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Parameter("--threads must be at least 1".into()));
        }
        // A pool may already exist when called repeatedly in-process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let run = Run {
        cli,
        argv,
        start: Instant::now(),
    };
    match &cli.command {
        Command::SchemaInfer(a) => schema_infer(&run, a),
        Command::GenQueries(a) => gen_queries(&run, a),
        Command::Fit(a) => fit(&run, a),
        Command::Eval(a) => eval(&run, a),
        Command::AblateAnnealing(a) => ablate(&run, a),
    }
}

/// Parses `args`, runs the command, and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let argv = argv.iter().map(|s| s.to_string_lossy().into_owned()).collect();
    match execute(&cli, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phase_syntax() {
        assert_eq!(
            parse_phase("cm:q/cm.json:3").unwrap(),
            ("cm".into(), PathBuf::from("q/cm.json"), 3)
        );
        assert_eq!(parse_phase("lt:C:/x.json:2").unwrap().1, PathBuf::from("C:/x.json"));
        assert!(parse_phase("cm:3").is_err());
        assert!(parse_phase("cm:x.json:many").is_err());
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn zero_epsilon_is_a_usage_error_without_touching_files() {
        let code = run([
            "rappp", "fit", "--data", "/nonexistent.csv", "--schema", "/nonexistent.json", "--epsilon", "0", "--out",
            "/nonexistent/out.csv",
        ]);
        assert_eq!(code, 2);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
