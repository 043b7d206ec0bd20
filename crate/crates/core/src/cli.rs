//! Command-line surface: streaming runs, evaluation and oracles.
//!
//! Exit codes: `0` success, `2` usage error, `3` data error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::encoding::{decode, encode, eps_prime_schedule, exponent_bound, EncodedCoreset, MAGIC as KZC_MAGIC};
use crate::error::{Error, Result};
use crate::eval::{eval_clustering, uniform_points, ClusterEval};
use crate::geometry::{CenterSet, ClusteringParams, Dataset, GridPoint, WeightedPoint};
use crate::io::{read_points, write_real_csv, IntRows};
use crate::oracle::{exact_lp_sensitivity, exact_medoids_opt, exact_medoids_sensitivity, grid_clustering_sensitivity};
use crate::pipeline::{JlMode, Pipeline, PipelineConfig, MAGIC as PIPE_MAGIC};
use crate::rng::{derive, module};
use crate::subspace::{
    direction_ratio_extremes, rayleigh_spectrum, EmbedConfig, EmbedPipeline, EncodedRowSet, RealMatrix, LPE_MAGIC,
};

/// Version of every metrics document.
pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "streamkit", version, about = "Streaming coresets for clustering and subspace embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Stream points through the clustering pipeline.
    ClusterStream(ClusterArgs),
    /// Stream rows through the subspace-embedding pipeline.
    EmbedStream(EmbedArgs),
    /// Measure an artifact against its dataset.
    Eval(EvalArgs),
    /// Exact sensitivities and optimal costs of small fixtures.
    Oracle(OracleArgs),
}

#[derive(Args, Debug)]
pub struct Common {
    /// Seed of every random choice.
    #[arg(long, env = "STREAMKIT_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; runs are single threaded and the value is recorded.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Metrics JSON output path.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum JlArg {
    Auto,
    On,
    Off,
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    /// CSV of integer points or SCKZ binary.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 2.0)]
    pub z: f64,
    #[arg(long, default_value_t = 0.2)]
    pub epsilon: f64,
    /// Failure probability.
    #[arg(long, default_value_t = 0.01)]
    pub delta: f64,
    /// Stream length bound; the input length when unset.
    #[arg(long)]
    pub n_bound: Option<u64>,
    /// Grid bound; the largest input coordinate when unset.
    #[arg(long)]
    pub grid: Option<i64>,
    #[arg(long)]
    pub lambda_scale: Option<f64>,
    #[arg(long)]
    pub size_constant: Option<f64>,
    #[arg(long)]
    pub iota: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum, default_value_t = JlArg::Auto)]
    pub jl: JlArg,
    /// Skip the quadtree filter.
    #[arg(long)]
    pub no_rough: bool,
    /// The last input column is a point weight.
    #[arg(long)]
    pub weighted: bool,
    /// KZC1 coreset output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// PIPE snapshot output.
    #[arg(long)]
    pub state: Option<PathBuf>,
    /// Centers CSV output.
    #[arg(long)]
    pub centers: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    /// CSV of integer rows or SCKZ binary.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0.01)]
    pub delta: f64,
    #[arg(long)]
    pub n_bound: Option<u64>,
    /// Entry bound; the largest absolute input entry when unset.
    #[arg(long)]
    pub entry_bound: Option<i64>,
    #[arg(long)]
    pub lambda_scale: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Skip the crude sketch filter.
    #[arg(long)]
    pub no_crude: bool,
    /// LPE1 output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Cluster,
    Embed,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// The full dataset.
    #[arg(long)]
    pub input: PathBuf,
    /// KZC1, PIPE or LPE1 artifact, or raw points.
    #[arg(long)]
    pub coreset: PathBuf,
    /// Mode; inferred from the artifact magic, clustering for raw points.
    #[arg(long, value_enum)]
    pub mode: Option<EvalMode>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 2.0)]
    pub z: f64,
    /// Random center sets.
    #[arg(long, default_value_t = 500)]
    pub queries: usize,
    /// Local-search center sets.
    #[arg(long, default_value_t = 20)]
    pub local_search: usize,
    /// Subsample size of each local search.
    #[arg(long, default_value_t = 2000)]
    pub sample: usize,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    /// Random directions for p != 2.
    #[arg(long, default_value_t = 2000)]
    pub directions: usize,
    /// Both inputs carry a weight column.
    #[arg(long)]
    pub weighted: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OracleKind {
    MedoidsSensitivity,
    GridSensitivity,
    MedoidsOpt,
    LpSensitivity,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[arg(long, value_enum)]
    pub kind: OracleKind,
    /// Fixture CSV; a random fixture is drawn when unset.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub random: usize,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 32)]
    pub grid: i64,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value_t = 2.0)]
    pub z: f64,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    /// Grid spacing; the grid bound over 64 when unset.
    #[arg(long)]
    pub resolution: Option<f64>,
    #[arg(long)]
    pub directions: Option<usize>,
    /// Only this point or row.
    #[arg(long)]
    pub index: Option<usize>,
    #[arg(long)]
    pub weighted: bool,
    #[command(flatten)]
    pub common: Common,
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidParam(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Parses `args` and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::ClusterStream(a) => cmd_cluster_stream(&a).map(|_| ()),
        Command::EmbedStream(a) => cmd_embed_stream(&a).map(|_| ()),
        Command::Eval(a) => {
            let v = cmd_eval(&a)?;
            println!("{}", to_pretty(&v));
            Ok(())
        }
        Command::Oracle(a) => {
            let v = cmd_oracle(&a)?;
            println!("{}", to_pretty(&v));
            Ok(())
        }
    }
}

fn check_common(c: &Common) -> Result<()> {
    if c.threads == 0 {
        return Err(Error::param("--threads must be at least 1"));
    }
    Ok(())
}

fn to_pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("JSON values serialize")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes)?;
    Ok(())
}

fn write_metrics(c: &Common, v: &Value) -> Result<()> {
    if let Some(p) = &c.metrics {
        write_file(p, format!("{}\n", to_pretty(v)).as_bytes())?;
    }
    Ok(())
}

fn load_rows(path: &Path, weighted: bool) -> Result<IntRows> {
    read_points(&std::fs::read(path)?, weighted)
}

/// Per-update wall times bucketed by `⌊log₂ ns⌋`.
#[derive(Default)]
struct Timings {
    histogram: Vec<u64>,
    total_ns: u128,
    count: u64,
}

impl Timings {
    fn record(&mut self, ns: u128) {
        let bucket = (128 - ns.max(1).leading_zeros() - 1) as usize;
        if self.histogram.len() <= bucket {
            self.histogram.resize(bucket + 1, 0);
        }
        self.histogram[bucket] += 1;
        self.total_ns += ns;
        self.count += 1;
    }

    fn to_json(&self) -> Value {
        json!({
            "total_seconds": self.total_ns as f64 * 1e-9,
            "mean_ns": if self.count > 0 { self.total_ns as f64 / self.count as f64 } else { 0.0 },
            "histogram_log2_ns": self.histogram,
        })
    }
}

fn grid_points(rows: &IntRows) -> Vec<GridPoint> {
    rows.rows.iter().map(|r| GridPoint { coords: r.clone() }).collect()
}

/// Runs `cluster-stream`; returns the metrics document.
pub fn cmd_cluster_stream(a: &ClusterArgs) -> Result<Value> {
    check_common(&a.common)?;
    let params = ClusteringParams::new(a.k, a.z, a.epsilon, a.delta, a.common.seed)?;
    let rows = load_rows(&a.input, a.weighted)?;
    let n = rows.len();
    let d = rows.d.max(1);
    let grid = a.grid.unwrap_or_else(|| rows.rows.iter().flatten().copied().max().unwrap_or(1).max(1));
    let mut config = PipelineConfig::new(params, d, grid, a.n_bound.unwrap_or(n as u64));
    if let Some(v) = a.lambda_scale {
        config.lambda_scale = v;
    }
    if let Some(v) = a.size_constant {
        config.size_constant = v;
    }
    if let Some(v) = a.iota {
        config.iota = v;
    }
    if let Some(v) = a.alpha {
        config.alpha = v;
    }
    config.jl = match a.jl {
        JlArg::Auto => JlMode::Auto,
        JlArg::On => JlMode::On,
        JlArg::Off => JlMode::Off,
    };
    config.rough_filter = !a.no_rough;
    let mut pipe = Pipeline::new(config.clone())?;
    let mut timings = Timings::default();
    for (p, &w) in grid_points(&rows).iter().zip(&rows.weights) {
        let t = Instant::now();
        pipe.update_weighted(p, w)?;
        timings.record(t.elapsed().as_nanos());
    }
    let coreset = pipe.current_coreset()?;
    let centers = pipe.current_centers()?;
    let encoded = encode_coreset(&coreset, &centers, &config, n)?;
    let kzc = encoded.to_bytes();
    if let Some(p) = &a.out {
        write_file(p, &kzc)?;
    }
    if let Some(p) = &a.state {
        write_file(p, &pipe.to_bytes())?;
    }
    if let Some(p) = &a.centers {
        let mut buf = Vec::new();
        write_real_csv(&mut buf, &centers.centers)?;
        write_file(p, &buf)?;
    }
    let stats = pipe.stats().clone();
    let v = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "cluster-stream",
        "seed": a.common.seed,
        "threads": a.common.threads,
        "n": n,
        "d": d,
        "config": config,
        "coreset_size": coreset.len(),
        "sampled": stats.fine_kept,
        "rough_kept": stats.rough_kept,
        "peak_record_bytes": stats.peak_record_bytes,
        "peak_header_bytes": stats.peak_header_bytes,
        "kzc1_bytes": kzc.len(),
        "stats": stats,
        "timing": timings.to_json(),
    });
    write_metrics(&a.common, &v)?;
    Ok(v)
}

fn encode_coreset(coreset: &Dataset, centers: &CenterSet, config: &PipelineConfig, n: usize) -> Result<EncodedCoreset> {
    let p = &config.params;
    let delta = config.grid as f64;
    let eps_prime = eps_prime_schedule(p.epsilon, p.z, p.k, config.d, n as f64, delta, config.eps_prime_constant);
    if coreset.is_empty() || centers.is_empty() {
        return Ok(EncodedCoreset {
            d: config.d,
            delta,
            anchors: CenterSet::new(Vec::new()),
            eps_prime,
            exp_max: exponent_bound(eps_prime, config.d, delta),
            records: Vec::new(),
        });
    }
    encode(coreset, centers, eps_prime)
}

/// Runs `embed-stream`; returns the metrics document.
pub fn cmd_embed_stream(a: &EmbedArgs) -> Result<Value> {
    check_common(&a.common)?;
    if !(a.p >= 1.0 && a.p.is_finite()) {
        return Err(Error::param("--p must be at least 1"));
    }
    let rows = load_rows(&a.input, false)?;
    let n = rows.len();
    let d = rows.d.max(1);
    let mut config = EmbedConfig::new(d, a.p, a.epsilon, a.common.seed, a.n_bound.unwrap_or(n as u64).max(1));
    config.delta = a.delta;
    config.entry_bound = a.entry_bound.unwrap_or_else(|| rows.max_abs());
    if let Some(v) = a.lambda_scale {
        config.lambda_scale = v;
    }
    if let Some(v) = a.alpha {
        config.alpha = v;
    }
    if let Some(v) = a.trials {
        config.trials = v;
    }
    config.crude_filter = !a.no_crude;
    let mut pipe = EmbedPipeline::new(config.clone())?;
    let mut timings = Timings::default();
    for r in &rows.rows {
        let t = Instant::now();
        pipe.update(r)?;
        timings.record(t.elapsed().as_nanos());
    }
    let encoded = pipe.current_encoded()?;
    let bytes = encoded.to_bytes();
    if let Some(p) = &a.out {
        write_file(p, &bytes)?;
    }
    let stats = pipe.stats().clone();
    let v = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "embed-stream",
        "seed": a.common.seed,
        "threads": a.common.threads,
        "n": n,
        "d": d,
        "config": config,
        "retained_rows": stats.retained_rows,
        "anchor_rows": encoded.anchor.len(),
        "lpe1_bytes": bytes.len(),
        "stats": stats,
        "timing": timings.to_json(),
    });
    write_metrics(&a.common, &v)?;
    Ok(v)
}

enum Artifact {
    Points(Dataset),
    Rows(RealMatrix),
}

fn load_artifact(bytes: &[u8], weighted: bool) -> Result<Artifact> {
    if bytes.starts_with(KZC_MAGIC) {
        Ok(Artifact::Points(decode(&EncodedCoreset::from_bytes(bytes)?)?))
    } else if bytes.starts_with(PIPE_MAGIC) {
        Ok(Artifact::Points(Pipeline::from_bytes(bytes)?.current_coreset()?))
    } else if bytes.starts_with(LPE_MAGIC) {
        Ok(Artifact::Rows(EncodedRowSet::from_bytes(bytes)?.decode()?))
    } else {
        let rows = read_points(bytes, weighted)?;
        Ok(Artifact::Points(weighted_dataset(&rows)?))
    }
}

fn weighted_dataset(rows: &IntRows) -> Result<Dataset> {
    let delta = rows.max_abs() as f64;
    let mut x = Dataset::new(rows.d, delta);
    for (r, &w) in rows.rows.iter().zip(&rows.weights) {
        x.push(WeightedPoint::new(r.iter().map(|&v| v as f64).collect(), w)?)?;
    }
    Ok(x)
}

/// Runs `eval`; returns the report.
pub fn cmd_eval(a: &EvalArgs) -> Result<Value> {
    check_common(&a.common)?;
    let rows = load_rows(&a.input, a.weighted)?;
    let artifact = load_artifact(&std::fs::read(&a.coreset)?, a.weighted)?;
    let mode = a.mode.unwrap_or(match artifact {
        Artifact::Points(_) => EvalMode::Cluster,
        Artifact::Rows(_) => EvalMode::Embed,
    });
    let v = match (mode, artifact) {
        (EvalMode::Cluster, Artifact::Points(coreset)) => {
            let x = weighted_dataset(&rows)?;
            if !x.is_empty() && x.d != coreset.d && !coreset.is_empty() {
                return Err(Error::DimensionMismatch { expected: x.d, got: coreset.d });
            }
            let coreset = if coreset.is_empty() { Dataset::new(x.d, x.delta) } else { coreset };
            let report: ClusterEval =
                eval_clustering(&x, &coreset, a.k, a.z, a.queries, a.local_search, a.sample, a.common.seed)?;
            json!({
                "schema_version": SCHEMA_VERSION,
                "command": "eval",
                "mode": "cluster",
                "seed": a.common.seed,
                "n": x.len(),
                "coreset_size": coreset.len(),
                "k": a.k,
                "z": a.z,
                "max_error": report.max_error,
                "mean_error": report.mean_error,
                "random": report.random,
                "local_search": report.local_search,
            })
        }
        (EvalMode::Embed, Artifact::Rows(m)) => {
            let data = RealMatrix::from_integer_rows(rows.d, &rows.rows, i64::MAX)?;
            if !data.is_empty() && data.d != m.d {
                return Err(Error::DimensionMismatch { expected: data.d, got: m.d });
            }
            let (lo, hi) = if data.is_empty() {
                (1.0, 1.0)
            } else if a.p == 2.0 {
                rayleigh_spectrum(&data, &m)?
            } else {
                direction_ratio_extremes(&data, &m, a.p, a.directions, &mut derive(a.common.seed, module::EVAL, 5, 0))?
            };
            json!({
                "schema_version": SCHEMA_VERSION,
                "command": "eval",
                "mode": "embed",
                "seed": a.common.seed,
                "n": data.len(),
                "retained_rows": m.len(),
                "p": a.p,
                "measure": if a.p == 2.0 { "rayleigh_spectrum" } else { "direction_ratios" },
                "min_ratio": lo,
                "max_ratio": hi,
                "max_error": (1.0 - lo).max(hi - 1.0),
            })
        }
        _ => return Err(Error::Input("artifact does not match the evaluation mode".into())),
    };
    write_metrics(&a.common, &v)?;
    Ok(v)
}

/// Runs `oracle`; returns the values.
pub fn cmd_oracle(a: &OracleArgs) -> Result<Value> {
    check_common(&a.common)?;
    let rows = match &a.input {
        Some(p) => load_rows(p, a.weighted)?,
        None => {
            let pts = uniform_points(a.random, a.dim, a.grid, a.common.seed);
            let rows: Vec<Vec<i64>> = pts.into_iter().map(|p| p.coords).collect();
            IntRows { d: a.dim, weights: vec![1.0; rows.len()], rows }
        }
    };
    if rows.is_empty() {
        return Err(Error::Input("oracle fixture is empty".into()));
    }
    let indices: Vec<usize> = match a.index {
        Some(i) if i >= rows.len() => return Err(Error::Input(format!("index {i} out of range"))),
        Some(i) => vec![i],
        None => (0..rows.len()).collect(),
    };
    let mut out = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "oracle",
        "kind": a.kind.to_possible_value().expect("named").get_name(),
        "seed": a.common.seed,
        "n": rows.len(),
        "d": rows.d,
    });
    let fields = match a.kind {
        OracleKind::MedoidsOpt => {
            let x = weighted_dataset(&rows)?;
            let (c, cost) = exact_medoids_opt(&x, a.k, a.z)?;
            json!({ "k": a.k, "z": a.z, "cost": cost, "centers": c.centers })
        }
        OracleKind::MedoidsSensitivity | OracleKind::GridSensitivity => {
            let mut x = weighted_dataset(&rows)?;
            if a.input.is_none() {
                x.delta = a.grid as f64;
            }
            let mut values = Vec::with_capacity(indices.len());
            let mut spacing = 0.0;
            for &i in &indices {
                let s = if a.kind == OracleKind::MedoidsSensitivity {
                    exact_medoids_sensitivity(&x, i, a.k, a.z)?
                } else {
                    grid_clustering_sensitivity(&x, i, a.k, a.z, a.resolution)?
                };
                spacing = s.spacing;
                values.push(s.value);
            }
            json!({ "k": a.k, "z": a.z, "indices": indices, "values": values, "spacing": spacing })
        }
        OracleKind::LpSensitivity => {
            let m = DMatrix::from_fn(rows.len(), rows.d, |i, j| rows.rows[i][j] as f64);
            let mut values = Vec::with_capacity(indices.len());
            for &i in &indices {
                values.push(exact_lp_sensitivity(&m, i, a.p, a.directions, a.common.seed)?.value);
            }
            json!({ "p": a.p, "indices": indices, "values": values })
        }
    };
    if let (Value::Object(o), Value::Object(f)) = (&mut out, fields) {
        o.extend(f);
    }
    write_metrics(&a.common, &out)?;
    Ok(out)
}
