//! Command-line entry points. Every command maps its failures onto a stable
//! exit code: 0 on success, 1 on runtime failure, 2 on a usage error.
//!
//! Configuration precedence for `run`, `cluster` and `compare`: built-in
//! defaults, then the `--config` JSON file, then individual flags.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::clustering::{cluster_tracks, hac_baseline, ClusterOutcome, HacMetric, SimilarityKind};
use crate::config::RunConfig;
use crate::data::{load_dataset, mean_of, save_dataset, ClusterAssignment, Track, TrackDataset};
use crate::error::Error;
use crate::eval::{compare_csv, compare_json, evaluate, pca2d, CompareRow, EvalReport, UnknownPolicy};
use crate::nn::checkpoint::{load_checkpoint, save_checkpoint};
use crate::quality::QualityReport;
use crate::ssl::train::embed_crops;
use crate::ssl::{run_pipeline, PipelineOutput};
use crate::synthetic::generate_synthetic;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "trackcluster", version, about = "Finetune and cluster face-track embeddings")]
pub struct Cli {
    /// Worker threads; 1 gives bit-identical outputs across runs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset with ground-truth identities.
    Generate(GenerateArgs),
    /// Finetune, filter and cluster a dataset.
    Run(RunArgs),
    /// Cluster a dataset with a saved model (or raw features).
    Cluster(ClusterArgs),
    /// Score a cluster assignment against ground truth.
    Eval(EvalArgs),
    /// Compare clustering methods on one finetuned model.
    Compare(CompareArgs),
    /// Print dataset statistics.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub identities: Option<usize>,
    #[arg(long = "tracks-per-id")]
    pub tracks_per_id: Option<usize>,
    #[arg(long)]
    pub crops: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "identity-spread")]
    pub identity_spread: Option<f64>,
    #[arg(long = "track-shift")]
    pub track_shift: Option<f64>,
    #[arg(long = "crop-noise")]
    pub crop_noise: Option<f64>,
    #[arg(long)]
    pub outliers: Option<usize>,
    #[arg(long = "outlier-spread")]
    pub outlier_spread: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "ssl-iterations")]
    pub ssl_iterations: Option<usize>,
    /// loss, cosine or euclidean.
    #[arg(long)]
    pub similarity: Option<String>,
    /// exclude or count_wrong.
    #[arg(long, default_value = "exclude")]
    pub policy: String,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint from `run`; without it cosine/euclidean act on raw features.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// quality.csv from `run`; its filtered tracks become Unknown.
    #[arg(long)]
    pub quality: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub similarity: Option<String>,
    #[arg(long, default_value = "exclude")]
    pub policy: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "exclude")]
    pub policy: String,
    /// Output directory; defaults to the directory holding `--pred`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated subset of loss,cosine,euclidean,hac.
    #[arg(long, default_value = "loss,cosine,euclidean,hac")]
    pub methods: String,
    /// Cosine-distance cutoff for the HAC baseline; required with `hac`.
    #[arg(long = "hac-cutoff")]
    pub hac_cutoff: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "exclude")]
    pub policy: String,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// With `--pca`, colours the projection by this assignment.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Writes track-mean PCA coordinates as CSV x,y,track_id,cluster_id.
    #[arg(long)]
    pub pca: Option<PathBuf>,
}

/// A failure tagged with the pipeline stage it came from.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime { stage: &'static str, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime { .. } => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime { stage, message } => write!(f, "error [{stage}]: {message}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(m: impl Into<String>) -> CliError {
    CliError::Usage(m.into())
}

/// Tags a library error. Bad configuration and missing inputs the user must
/// supply are usage errors; everything else is a runtime failure.
fn tag(stage: &'static str) -> impl Fn(Error) -> CliError {
    move |e| match e {
        Error::Config(_) | Error::MissingTruth(_) | Error::MissingModel => usage(format!("{stage}: {e}")),
        _ => CliError::Runtime {
            stage,
            message: e.to_string(),
        },
    }
}

fn parse_policy(s: &str) -> CliResult<UnknownPolicy> {
    s.parse().map_err(|e: Error| usage(e.to_string()))
}

fn parse_similarity(s: &str) -> CliResult<SimilarityKind> {
    s.parse().map_err(|e: Error| usage(e.to_string()))
}

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    match RunConfig::load(path) {
        Ok(cfg) => Ok(cfg),
        Err(e @ Error::Io { .. }) => Err(tag("config")(e)),
        Err(e) => Err(usage(format!("config: {e}"))),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| tag("write")(Error::io(path, e)))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| tag("write")(Error::io(path, e)))
}

fn to_json<T: Serialize + ?Sized>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("output serializes");
    s.push('\n');
    s
}

fn load_data(path: &Path) -> CliResult<TrackDataset> {
    load_dataset(path).map_err(tag("load"))
}

fn read_assignment(path: &Path) -> CliResult<ClusterAssignment> {
    let text = fs::read_to_string(path).map_err(|e| tag("load")(Error::io(path, e)))?;
    serde_json::from_str(&text).map_err(|source| {
        tag("load")(Error::Json {
            path: path.to_path_buf(),
            source,
        })
    })
}

/// Parses `args` (including the program name) and runs the command, returning
/// the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> CliResult<()> {
    let threads = cli.threads;
    let command = cli.command;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime {
            stage: "threads",
            message: e.to_string(),
        })?;
    pool.install(|| match command {
        Command::Generate(a) => cmd_generate(a),
        Command::Run(a) => cmd_run(a, threads),
        Command::Cluster(a) => cmd_cluster(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Compare(a) => cmd_compare(a, threads),
        Command::Inspect(a) => cmd_inspect(a),
    })
}

fn cmd_generate(a: GenerateArgs) -> CliResult<()> {
    let mut cfg = load_config(a.config.as_deref())?.synthetic;
    if let Some(v) = a.identities {
        cfg.identities = v;
    }
    if let Some(v) = a.tracks_per_id {
        cfg.tracks_per_identity = v;
    }
    if let Some(v) = a.crops {
        cfg.crops_per_track = v;
    }
    if let Some(v) = a.dim {
        cfg.dim = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.identity_spread {
        cfg.identity_spread = v;
    }
    if let Some(v) = a.track_shift {
        cfg.track_shift = v;
    }
    if let Some(v) = a.crop_noise {
        cfg.crop_noise = v;
    }
    if let Some(v) = a.outliers {
        cfg.outlier_track_count = v;
    }
    if let Some(v) = a.outlier_spread {
        cfg.outlier_spread = v;
    }
    cfg.validate().map_err(tag("generate"))?;
    let ds = generate_synthetic(&cfg).map_err(tag("generate"))?;
    save_dataset(&ds, &a.out).map_err(tag("write"))?;
    println!(
        "wrote {} tracks ({} crops, dim {}) to {}",
        ds.len(),
        ds.crop_count(),
        ds.dim(),
        a.out.display()
    );
    Ok(())
}

/// Summary of one `run`, written as run_meta.json.
#[derive(Serialize)]
struct RunMeta<'a> {
    similarity: &'a str,
    iterations: &'a [crate::ssl::IterationSummary],
    kept: &'a [u64],
    unknown: &'a [u64],
    quality_threshold: f64,
    cluster_count: usize,
    rounds: &'a [crate::clustering::RoundInfo],
    track_thresholds: &'a BTreeMap<u64, f64>,
}

fn kept_tracks<'a>(ds: &'a TrackDataset, kept: &[u64]) -> Vec<&'a Track> {
    kept.iter()
        .map(|id| ds.get(*id).expect("kept ids come from the dataset"))
        .collect()
}

fn cluster_pipeline_output(
    ds: &TrackDataset,
    out: &PipelineOutput,
    kind: SimilarityKind,
) -> CliResult<(ClusterAssignment, ClusterOutcome)> {
    cluster_tracks(&kept_tracks(ds, &out.kept), &out.unknown, Some(&out.model), kind)
        .map_err(tag("cluster"))
}

/// Evaluates when the dataset carries truth labels. Unlabelled tracks that
/// survive filtering make the report impossible; that is reported, not fatal.
fn maybe_report(
    ds: &TrackDataset,
    assign: &ClusterAssignment,
    policy: UnknownPolicy,
    out_dir: &Path,
) -> CliResult<Option<EvalReport>> {
    if !ds.has_truth() {
        return Ok(None);
    }
    match evaluate(assign, &ds.truth(), policy) {
        Ok(r) => {
            write_file(&out_dir.join("report.json"), to_json(&r))?;
            write_file(&out_dir.join("report.csv"), r.to_csv())?;
            Ok(Some(r))
        }
        Err(Error::MissingTruth(id)) => {
            eprintln!("warning: no report, track_id {id} is clustered but has no truth label");
            Ok(None)
        }
        Err(e) => Err(tag("eval")(e)),
    }
}

fn resolve_run_config(
    path: Option<&Path>,
    seed: Option<u64>,
    threads: Option<usize>,
) -> CliResult<RunConfig> {
    let mut cfg = load_config(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(t) = threads {
        cfg.threads = t;
    }
    Ok(cfg)
}

fn cmd_run(a: RunArgs, threads: Option<usize>) -> CliResult<()> {
    let policy = parse_policy(&a.policy)?;
    let mut cfg = resolve_run_config(a.config.as_deref(), a.seed, threads)?;
    if let Some(n) = a.ssl_iterations {
        cfg.train.ssl_iterations = n;
    }
    if let Some(s) = &a.similarity {
        cfg.clustering.similarity = parse_similarity(s)?;
    }
    cfg.validate().map_err(tag("config"))?;
    let ds = load_data(&a.data)?;
    create_dir(&a.out)?;
    write_file(&a.out.join("config.json"), cfg.to_json() + "\n")?;

    let out = run_pipeline(&ds, &cfg).map_err(tag("train"))?;
    let kind = cfg.clustering.similarity;
    let (assign, outcome) = cluster_pipeline_output(&ds, &out, kind)?;

    let mut log = String::new();
    for entry in &out.logs {
        log += &serde_json::to_string(entry).expect("log serializes");
        log.push('\n');
    }
    write_file(&a.out.join("train_log.jsonl"), log)?;
    write_file(&a.out.join("quality.csv"), out.quality.to_csv())?;
    write_file(&a.out.join("matches.json"), to_json(&out.matches))?;
    write_file(&a.out.join("clusters.json"), to_json(&assign))?;
    save_checkpoint(&out.model, &a.out.join("model.ckpt")).map_err(tag("write"))?;
    let meta = RunMeta {
        similarity: kind.name(),
        iterations: &out.iterations,
        kept: &out.kept,
        unknown: &out.unknown,
        quality_threshold: out.quality.threshold,
        cluster_count: assign.cluster_count(),
        rounds: &outcome.rounds,
        track_thresholds: &outcome.track_thresholds,
    };
    write_file(&a.out.join("run_meta.json"), to_json(&meta))?;
    let report = maybe_report(&ds, &assign, policy, &a.out)?;

    println!(
        "{} clusters, {} unknown tracks",
        assign.cluster_count(),
        out.unknown.len()
    );
    if let Some(r) = report {
        println!("wcp {:.4}  pcr {:.4} ({}/{})", r.wcp, r.pcr, r.pcr_pred, r.pcr_gt);
    }
    Ok(())
}

fn cmd_cluster(a: ClusterArgs) -> CliResult<()> {
    let policy = parse_policy(&a.policy)?;
    let cfg = load_config(a.config.as_deref())?;
    let kind = match &a.similarity {
        Some(s) => parse_similarity(s)?,
        None => cfg.clustering.similarity,
    };
    let ds = load_data(&a.data)?;
    let model = match &a.model {
        Some(p) => Some(load_checkpoint(p).map_err(tag("load"))?),
        None => None,
    };
    if kind == SimilarityKind::Loss && model.is_none() {
        return Err(usage("loss similarity needs --model"));
    }
    let unknown: Vec<u64> = match &a.quality {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| tag("load")(Error::io(p, e)))?;
            let q = QualityReport::from_csv(&text, cfg.quality.mad_factor).map_err(tag("load"))?;
            q.filtered_ids.into_iter().collect()
        }
        None => Vec::new(),
    };
    let kept: Vec<&Track> = ds
        .tracks()
        .iter()
        .filter(|t| !unknown.contains(&t.track_id))
        .collect();
    let (assign, _) = cluster_tracks(&kept, &unknown, model.as_ref(), kind).map_err(tag("cluster"))?;
    create_dir(&a.out)?;
    write_file(&a.out.join("clusters.json"), to_json(&assign))?;
    let report = maybe_report(&ds, &assign, policy, &a.out)?;
    println!("{} clusters, {} unknown tracks", assign.cluster_count(), unknown.len());
    if let Some(r) = report {
        println!("wcp {:.4}  pcr {:.4} ({}/{})", r.wcp, r.pcr, r.pcr_pred, r.pcr_gt);
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CliResult<()> {
    let policy = parse_policy(&a.policy)?;
    let ds = load_data(&a.data)?;
    if !ds.has_truth() {
        return Err(usage(format!("{} has no truth labels", a.data.display())));
    }
    let assign = read_assignment(&a.pred)?;
    assign.check_covers(&ds).map_err(tag("eval"))?;
    let r = evaluate(&assign, &ds.truth(), policy).map_err(tag("eval"))?;
    let out = a.out.unwrap_or_else(|| {
        a.pred
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    });
    create_dir(&out)?;
    write_file(&out.join("report.json"), to_json(&r))?;
    write_file(&out.join("report.csv"), r.to_csv())?;
    println!("wcp {:.4}  pcr {:.4} ({}/{})", r.wcp, r.pcr, r.pcr_pred, r.pcr_gt);
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Method {
    Ours(SimilarityKind),
    Hac,
}

fn parse_methods(s: &str) -> CliResult<Vec<Method>> {
    s.split(',')
        .map(str::trim)
        .filter(|m| !m.is_empty())
        .map(|m| match m {
            "hac" => Ok(Method::Hac),
            other => other
                .parse()
                .map(Method::Ours)
                .map_err(|_| usage(format!("unknown method {other:?}; expected loss, cosine, euclidean or hac"))),
        })
        .collect::<CliResult<Vec<_>>>()
        .and_then(|v| {
            if v.is_empty() {
                Err(usage("--methods is empty"))
            } else {
                Ok(v)
            }
        })
}

/// Runs the pipeline once and clusters its kept tracks with every method.
/// The HAC baseline groups the same kept tracks by the mean of their
/// finetuned student outputs under cosine distance.
fn cmd_compare(a: CompareArgs, threads: Option<usize>) -> CliResult<()> {
    let methods = parse_methods(&a.methods)?;
    let policy = parse_policy(&a.policy)?;
    let cutoff = if methods.contains(&Method::Hac) {
        match a.hac_cutoff {
            Some(c) if c > 0.0 && c.is_finite() => Some(c),
            Some(c) => return Err(usage(format!("--hac-cutoff must be positive, got {c}"))),
            None => return Err(usage("method hac needs --hac-cutoff")),
        }
    } else {
        None
    };
    let cfg = resolve_run_config(a.config.as_deref(), a.seed, threads)?;
    cfg.validate().map_err(tag("config"))?;
    let ds = load_data(&a.data)?;
    if !ds.has_truth() {
        return Err(usage(format!("{} has no truth labels", a.data.display())));
    }
    let truth = ds.truth();
    let out = run_pipeline(&ds, &cfg).map_err(tag("train"))?;

    let mut rows = Vec::new();
    for m in methods {
        let (name, sim, assign) = match m {
            Method::Ours(kind) => {
                let (assign, _) = cluster_pipeline_output(&ds, &out, kind)?;
                ("ours", kind.name(), assign)
            }
            Method::Hac => {
                let points = kept_tracks(&ds, &out.kept)
                    .iter()
                    .map(|t| Ok((t.track_id, mean_of(&embed_crops(&out.model.student, &t.crops)?))))
                    .collect::<crate::Result<Vec<_>>>()
                    .map_err(tag("cluster"))?;
                let partition = hac_baseline(&points, cutoff.expect("checked above"), HacMetric::Cosine)
                    .map_err(tag("cluster"))?;
                (
                    "hac",
                    SimilarityKind::Cosine.name(),
                    ClusterAssignment::from_partition(&partition, out.unknown.iter().copied()),
                )
            }
        };
        let r = evaluate(&assign, &truth, policy).map_err(tag("eval"))?;
        rows.push(CompareRow::from_report(name, sim, &r));
    }

    let csv = compare_csv(&rows);
    print!("{csv}");
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_file(&dir.join("compare.csv"), &csv)?;
        write_file(&dir.join("compare.json"), compare_json(&rows) + "\n")?;
        write_file(&dir.join("config.json"), cfg.to_json() + "\n")?;
    }
    Ok(())
}

fn cmd_inspect(a: InspectArgs) -> CliResult<()> {
    let ds = load_data(&a.data)?;
    let lens: Vec<usize> = ds.tracks().iter().map(Track::len).collect();
    let truth = ds.truth();
    let identities: std::collections::BTreeSet<i64> = truth.values().copied().collect();
    println!("name        {}", ds.name());
    println!("tracks      {}", ds.len());
    println!("crops       {}", ds.crop_count());
    println!("dim         {}", ds.dim());
    println!(
        "crops/track min {} max {} mean {:.2}",
        lens.iter().min().unwrap_or(&0),
        lens.iter().max().unwrap_or(&0),
        ds.crop_count() as f64 / ds.len().max(1) as f64
    );
    println!("labelled    {} tracks, {} identities", truth.len(), identities.len());

    if let Some(path) = &a.pca {
        let assign = match &a.pred {
            Some(p) => Some(read_assignment(p)?),
            None => None,
        };
        let means: Vec<Vec<f64>> = ds.tracks().iter().map(Track::mean).collect();
        let xy = pca2d(&means).map_err(tag("pca"))?;
        let mut csv = String::from("x,y,track_id,cluster_id\n");
        for (t, (x, y)) in ds.tracks().iter().zip(xy) {
            let c = assign
                .as_ref()
                .and_then(|a| a.get(t.track_id))
                .map(|c| c.to_string())
                .unwrap_or_default();
            csv += &format!("{x},{y},{},{c}\n", t.track_id);
        }
        write_file(path, csv)?;
        println!("wrote PCA projection to {}", path.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_lists() {
        assert_eq!(
            parse_methods("loss, cosine,euclidean,hac").unwrap(),
            vec![
                Method::Ours(SimilarityKind::Loss),
                Method::Ours(SimilarityKind::Cosine),
                Method::Ours(SimilarityKind::Euclidean),
                Method::Hac
            ]
        );
        assert_eq!(parse_methods("tsne").unwrap_err().exit_code(), EXIT_USAGE);
        assert_eq!(parse_methods(",").unwrap_err().exit_code(), EXIT_USAGE);
    }

    #[test]
    fn parse_errors_are_usage_errors() {
        assert_eq!(main_with(["trackcluster", "frobnicate"]), EXIT_USAGE);
        assert_eq!(main_with(["trackcluster", "eval", "--pred", "x"]), EXIT_USAGE);
        assert_eq!(main_with(["trackcluster", "--help"]), EXIT_OK);
    }

    #[test]
    fn stage_tags() {
        let e = tag("train")(Error::AllFiltered);
        assert_eq!(e.exit_code(), EXIT_RUNTIME);
        assert_eq!(e.to_string(), "error [train]: every track was filtered as low quality");
        assert_eq!(tag("eval")(Error::MissingTruth(3)).exit_code(), EXIT_USAGE);
    }
}
