//! Command-line entry points, run manifests, report files and the
//! stage-one cache.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{make_split, Dataset, DatasetSource, Split};
use crate::error::{Error, ErrorKind, Result};
use crate::gcn::GcnHyperParams;
use crate::graph::Propagation;
use crate::knn::Metric;
use crate::par;
use crate::pipeline::{
    prepare, robust_stage, run_shared_stages, BaselineResult, FeatureSpace, GraphSource,
    PipelineConfig, PipelineReport, SplitSummary, StageOne,
};

pub const CACHE_ENV: &str = "SPADE_CACHE_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "spade-gnn",
    version,
    about = "Spectral node-robustness scoring and multi-level GCN classification"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score every node and write scores.csv.
    Score(CommonArgs),
    /// Baseline plus robust pipeline for a list of fractions.
    Run(RunArgs),
    /// Many fractions over cached stage-one artifacts.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Dataset: a generic JSON file, `cora:<dir>`, or `synthetic:<seed>`.
    #[arg(long)]
    pub dataset: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train nodes sampled per class.
    #[arg(long, default_value_t = 20)]
    pub per_class_train: usize,
    #[arg(long, default_value_t = 10)]
    pub knn_k: usize,
    /// Eigensubspace dimension (default: number of classes).
    #[arg(long)]
    pub spade_k: Option<usize>,
    #[arg(long, default_value = "raw_features")]
    pub robust_subgraph_space: FeatureSpace,
    #[arg(long, default_value = "raw_features")]
    pub centroid_space: FeatureSpace,
    /// Input graph: `given_graph` or `knn_features`.
    #[arg(long, default_value = "given_graph")]
    pub g_input: GraphSource,
    #[arg(long, default_value = "euclidean")]
    pub metric: Metric,
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    #[arg(long, default_value_t = 5e-4)]
    pub weight_decay: f64,
    /// Keep raw feature rows instead of L1-normalizing them.
    #[arg(long)]
    pub no_normalize: bool,
    /// Use the unnormalized self-plus-neighbor-sum propagation.
    #[arg(long)]
    pub raw_sum: bool,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Single robust fraction (shorthand for `--fractions orig,<f>`).
    #[arg(long, conflicts_with = "fractions")]
    pub fraction: Option<f64>,
    /// Comma-separated list of `orig` and fractions in (0, 1].
    #[arg(long, value_delimiter = ',')]
    pub fractions: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated fractions in (0, 1].
    #[arg(long, value_delimiter = ',', conflicts_with = "range")]
    pub fractions: Vec<String>,
    /// `start:stop:step`, inclusive of `stop`.
    #[arg(long)]
    pub range: Option<String>,
}

/// One row of the fraction table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "fraction")]
pub enum FractionSpec {
    Orig,
    Robust(f64),
}

impl FractionSpec {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("orig") {
            return Ok(FractionSpec::Orig);
        }
        let f: f64 = s
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad fraction {s:?}")))?;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "fraction {f} outside (0, 1]"
            )));
        }
        Ok(FractionSpec::Robust(f))
    }

    pub fn label(&self) -> String {
        match self {
            FractionSpec::Orig => "Orig".into(),
            FractionSpec::Robust(f) => percent_label(*f),
        }
    }
}

fn percent_label(f: f64) -> String {
    let pct = f * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{:.0}%", pct)
    } else {
        format!("{:.2}%", pct)
    }
}

fn file_stem(f: f64) -> String {
    percent_label(f).trim_end_matches('%').replace('.', "_")
}

pub fn parse_range(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::InvalidArgument(format!("range {spec:?} is not start:stop:step"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let (start, stop, step) = (nums[0], nums[1], nums[2]);
    if step.is_nan() || step <= 0.0 || start.is_nan() || stop.is_nan() || start > stop {
        return Err(bad());
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    // round to 12 decimals so 0.2 + 3 * 0.2 prints as 0.8
    Ok((0..count)
        .map(|t| ((start + t as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

/// What produced a set of output files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    pub dataset_fingerprint: String,
    pub seed: u64,
    pub tool_version: String,
    pub timestamps: Timestamps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: String,
    pub per_class_train: usize,
    pub pipeline: PipelineConfig,
    pub fractions: Vec<FractionSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timestamps {
    pub started_unix: u64,
    pub finished_unix: u64,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl CommonArgs {
    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            knn_k: self.knn_k,
            spade_k: self.spade_k,
            metric: self.metric,
            subgraph_space: self.robust_subgraph_space,
            centroid_space: self.centroid_space,
            g_input_source: self.g_input,
            normalize_features: !self.no_normalize,
            gcn: GcnHyperParams {
                hidden: self.hidden,
                lr: self.lr,
                weight_decay: self.weight_decay,
                dropout: self.dropout,
                epochs: self.epochs,
                seed: self.seed,
                propagation: if self.raw_sum {
                    Propagation::RawSum
                } else {
                    Propagation::Symmetric
                },
            },
            seed: self.seed,
            ..PipelineConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub source: String,
    pub n: usize,
    pub d: usize,
    pub classes: usize,
    pub edges: usize,
    pub fingerprint: String,
}

impl DatasetSummary {
    fn of(spec: &str, ds: &Dataset) -> Self {
        Self {
            source: spec.to_string(),
            n: ds.n(),
            d: ds.d(),
            classes: ds.num_classes(),
            edges: ds.graph.edge_count(),
            fingerprint: ds.fingerprint(),
        }
    }
}

/// One line of the printed table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub fraction: FractionSpec,
    /// Baseline accuracy for `Orig`, combined accuracy otherwise.
    pub accuracy: f64,
    pub robust_only: Option<f64>,
    pub baseline_on_robust: Option<f64>,
    pub rest: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub manifest: RunManifest,
    pub dataset: DatasetSummary,
    pub split: SplitSummary,
    pub baseline_accuracy: f64,
    pub eigenvalues: Vec<f64>,
    pub rows: Vec<TableRow>,
    pub reports: Vec<PipelineReport>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |a| format!("{a:.4}"))
}

/// Aligned plain-text table.
pub fn format_table(rows: &[TableRow]) -> String {
    let header = [
        "Robust Node Selection Percentage",
        "Accuracy",
        "Robust-only",
        "Baseline on robust",
        "Rest (centroid)",
    ];
    let body: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.label.clone(),
                format!("{:.4}", r.accuracy),
                fmt_opt(r.robust_only),
                fmt_opt(r.baseline_on_robust),
                fmt_opt(r.rest),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join(" | ")
            .trim_end()
            .to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    out.push_str(
        &widths
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .join("-+-"),
    );
    out.push('\n');
    for row in &body {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

struct Loaded {
    ds: Dataset,
    split: Split,
    cfg: PipelineConfig,
}

fn load_inputs(args: &CommonArgs) -> Result<Loaded> {
    let ds = DatasetSource::parse(&args.dataset).load()?;
    let split = make_split(&ds, args.per_class_train, args.seed)?;
    let cfg = args.pipeline_config();
    cfg.validate()?;
    Ok(Loaded { ds, split, cfg })
}

fn manifest(
    command: &str,
    args: &CommonArgs,
    loaded: &Loaded,
    fractions: Vec<FractionSpec>,
    started: u64,
) -> RunManifest {
    RunManifest {
        command: command.into(),
        config: RunConfig {
            dataset: args.dataset.clone(),
            per_class_train: args.per_class_train,
            pipeline: loaded.cfg.clone(),
            fractions,
        },
        dataset_fingerprint: loaded.ds.fingerprint(),
        seed: args.seed,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        timestamps: Timestamps {
            started_unix: started,
            finished_unix: unix_now(),
        },
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub manifest: RunManifest,
    pub dataset: DatasetSummary,
    pub eigenvalues: Vec<f64>,
    pub g_output_edges: usize,
    pub isolated_nodes: usize,
}

/// `score`: writes `scores.csv` and `manifest.json` under `out`.
pub fn cmd_score(args: &CommonArgs) -> Result<ScoreSummary> {
    let started = unix_now();
    let loaded = load_inputs(args)?;
    let shared = run_shared_stages(&loaded.ds, &loaded.split, &loaded.cfg)?;
    let mut csv = Vec::new();
    shared
        .stage_one
        .scores
        .write_csv(&mut csv)
        .map_err(|e| Error::io(&args.out, e))?;
    write_file(&args.out.join("scores.csv"), &csv)?;
    let summary = ScoreSummary {
        manifest: manifest("score", args, &loaded, Vec::new(), started),
        dataset: DatasetSummary::of(&args.dataset, &loaded.ds),
        eigenvalues: shared.stage_one.eigen.eigenvalues.clone(),
        g_output_edges: shared.stage_one.g_output_edges,
        isolated_nodes: shared
            .stage_one
            .scores
            .isolated
            .iter()
            .filter(|&&b| b)
            .count(),
    };
    write_file(&args.out.join("manifest.json"), &to_json(&summary)?)?;
    Ok(summary)
}

fn fractions_for_run(args: &RunArgs) -> Result<Vec<FractionSpec>> {
    if let Some(f) = args.fraction {
        return Ok(vec![
            FractionSpec::Orig,
            FractionSpec::parse(&f.to_string())?,
        ]);
    }
    if args.fractions.is_empty() {
        return Ok(vec![FractionSpec::Orig, FractionSpec::Robust(0.4)]);
    }
    args.fractions
        .iter()
        .map(|s| FractionSpec::parse(s))
        .collect()
}

struct Finished<'a> {
    baseline: &'a BaselineResult,
    stage_one: &'a StageOne,
    reports: Vec<PipelineReport>,
    started: u64,
}

fn assemble(
    command: &str,
    args: &CommonArgs,
    loaded: &Loaded,
    fractions: Vec<FractionSpec>,
    done: Finished<'_>,
) -> Result<RunReport> {
    let Finished {
        baseline,
        stage_one,
        reports,
        started,
    } = done;
    let mut by_fraction = reports.iter();
    let rows = fractions
        .iter()
        .map(|f| match f {
            FractionSpec::Orig => TableRow {
                label: f.label(),
                fraction: *f,
                accuracy: baseline.accuracy,
                robust_only: None,
                baseline_on_robust: None,
                rest: None,
            },
            FractionSpec::Robust(_) => {
                let r = by_fraction.next().expect("one report per robust fraction");
                TableRow {
                    label: f.label(),
                    fraction: *f,
                    accuracy: r.accuracy.combined,
                    robust_only: r.accuracy.robust_subset,
                    baseline_on_robust: r.accuracy.baseline_on_robust,
                    rest: r.accuracy.rest,
                }
            }
        })
        .collect();
    for r in &reports {
        let mut csv = Vec::new();
        r.write_predictions_csv(&mut csv)
            .map_err(|e| Error::io(&args.out, e))?;
        let name = format!("predictions_{}.csv", file_stem(r.config.robust_fraction));
        write_file(&args.out.join(name), &csv)?;
    }
    let mut scores = Vec::new();
    stage_one
        .scores
        .write_csv(&mut scores)
        .map_err(|e| Error::io(&args.out, e))?;
    write_file(&args.out.join("scores.csv"), &scores)?;
    Ok(RunReport {
        manifest: manifest(command, args, loaded, fractions, started),
        dataset: DatasetSummary::of(&args.dataset, &loaded.ds),
        split: SplitSummary::of(&loaded.split),
        baseline_accuracy: baseline.accuracy,
        eigenvalues: stage_one.eigen.eigenvalues.clone(),
        rows,
        reports,
    })
}

fn robust_reports(
    loaded: &Loaded,
    fractions: &[FractionSpec],
    prepared: &crate::pipeline::Prepared,
    baseline: &BaselineResult,
    stage_one: &StageOne,
) -> Result<Vec<PipelineReport>> {
    let robust: Vec<f64> = fractions
        .iter()
        .filter_map(|f| match f {
            FractionSpec::Robust(x) => Some(*x),
            FractionSpec::Orig => None,
        })
        .collect();
    par::map_slice(&robust, |&fraction| {
        let cfg = PipelineConfig {
            robust_fraction: fraction,
            ..loaded.cfg.clone()
        };
        robust_stage(
            &loaded.ds,
            &loaded.split,
            &cfg,
            prepared,
            baseline,
            stage_one,
        )
    })
    .into_iter()
    .collect()
}

/// `run`: baseline and one pipeline per fraction; writes `report.json`,
/// `scores.csv` and one predictions CSV per fraction.
pub fn cmd_run(args: &RunArgs) -> Result<RunReport> {
    let started = unix_now();
    let fractions = fractions_for_run(args)?;
    let loaded = load_inputs(&args.common)?;
    let shared = run_shared_stages(&loaded.ds, &loaded.split, &loaded.cfg)?;
    let mut reports = robust_reports(
        &loaded,
        &fractions,
        &shared.prepared,
        &shared.baseline,
        &shared.stage_one,
    )?;
    for r in &mut reports {
        r.timing.baseline_s = shared.timing.baseline_s;
        r.timing.robustness_s = shared.timing.robustness_s;
    }
    let report = assemble(
        "run",
        &args.common,
        &loaded,
        fractions,
        Finished {
            baseline: &shared.baseline,
            stage_one: &shared.stage_one,
            reports,
            started,
        },
    )?;
    write_file(&args.common.out.join("report.json"), &to_json(&report)?)?;
    Ok(report)
}

#[derive(Debug, Serialize, Deserialize)]
struct CachedStageOne {
    key: String,
    baseline: BaselineResult,
    stage_one: StageOne,
}

/// Cache key over everything that determines stage-one outputs.
pub fn stage_one_key(ds: &Dataset, split: &Split, cfg: &PipelineConfig) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        dataset: String,
        gcn: &'a GcnHyperParams,
        seed: u64,
        knn_k: usize,
        spade_k: usize,
        metric: Metric,
        normalize: bool,
        g_input: GraphSource,
        aggregation: crate::spade::Aggregation,
        pencil: crate::spectral::PencilOptions,
        per_class_train: usize,
        split_seed: u64,
    }
    let key = Key {
        dataset: ds.fingerprint(),
        gcn: &cfg.gcn,
        seed: cfg.seed,
        knn_k: cfg.knn_k,
        spade_k: cfg.spade_k_for(ds),
        metric: cfg.metric,
        normalize: cfg.normalize_features,
        g_input: cfg.g_input_source,
        aggregation: cfg.aggregation,
        pencil: cfg.pencil,
        per_class_train: split.per_class_train,
        split_seed: split.seed,
    };
    let bytes = serde_json::to_vec(&key).expect("key serializes");
    hex::encode(Sha256::digest(&bytes))
}

pub fn cache_dir(out: &Path) -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| out.join(".cache"))
}

/// Loads stage-one artifacts from `dir`, computing and storing them on a miss.
pub fn cached_stage_one(
    dir: &Path,
    ds: &Dataset,
    split: &Split,
    cfg: &PipelineConfig,
) -> Result<(BaselineResult, StageOne, bool)> {
    let key = stage_one_key(ds, split, cfg);
    let path = dir.join(format!("stage1-{key}.json"));
    if let Ok(text) = fs::read_to_string(&path) {
        if let Ok(hit) = serde_json::from_str::<CachedStageOne>(&text) {
            if hit.key == key {
                return Ok((hit.baseline, hit.stage_one, true));
            }
        }
    }
    let shared = run_shared_stages(ds, split, cfg)?;
    let entry = CachedStageOne {
        key,
        baseline: shared.baseline,
        stage_one: shared.stage_one,
    };
    let tmp = path.with_extension("json.tmp");
    write_file(&tmp, &serde_json::to_vec(&entry)?)?;
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    Ok((entry.baseline, entry.stage_one, false))
}

fn fractions_for_sweep(args: &SweepArgs) -> Result<Vec<f64>> {
    let list = match &args.range {
        Some(r) => parse_range(r)?,
        None => args
            .fractions
            .iter()
            .map(|s| match FractionSpec::parse(s)? {
                FractionSpec::Robust(f) => Ok(f),
                FractionSpec::Orig => Err(Error::InvalidArgument(
                    "sweep always includes the baseline; list fractions only".into(),
                )),
            })
            .collect::<Result<Vec<_>>>()?,
    };
    if list.is_empty() {
        return Err(Error::InvalidArgument(
            "sweep needs --fractions or --range".into(),
        ));
    }
    for &f in &list {
        FractionSpec::parse(&f.to_string())?;
    }
    Ok(list)
}

/// `sweep`: baseline row plus one row per fraction, stage one cached on disk.
pub fn cmd_sweep(args: &SweepArgs) -> Result<RunReport> {
    let started = unix_now();
    let list = fractions_for_sweep(args)?;
    let loaded = load_inputs(&args.common)?;
    let (baseline, stage_one, _hit) = cached_stage_one(
        &cache_dir(&args.common.out),
        &loaded.ds,
        &loaded.split,
        &loaded.cfg,
    )?;
    let prepared = prepare(&loaded.ds, &loaded.cfg)?;
    let fractions: Vec<FractionSpec> = std::iter::once(FractionSpec::Orig)
        .chain(list.into_iter().map(FractionSpec::Robust))
        .collect();
    let reports = robust_reports(&loaded, &fractions, &prepared, &baseline, &stage_one)?;
    let report = assemble(
        "sweep",
        &args.common,
        &loaded,
        fractions,
        Finished {
            baseline: &baseline,
            stage_one: &stage_one,
            reports,
            started,
        },
    )?;
    write_file(&args.common.out.join("sweep.json"), &to_json(&report)?)?;
    Ok(report)
}

pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numeric => 3,
    }
}

/// Parses `argv`, runs the command, prints results; returns the exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Score(args) => cmd_score(args).map(|s| {
            println!(
                "scored {} nodes (k = {}, eigenvalues {:?}); wrote {}",
                s.dataset.n,
                s.eigenvalues.len(),
                s.eigenvalues,
                args.out.join("scores.csv").display()
            );
        }),
        Command::Run(args) => cmd_run(args).map(|r| {
            print!("{}", format_table(&r.rows));
            println!("report: {}", args.common.out.join("report.json").display());
        }),
        Command::Sweep(args) => cmd_sweep(args).map(|r| {
            print!("{}", format_table(&r.rows));
            println!("report: {}", args.common.out.join("sweep.json").display());
        }),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(e.kind())
        }
    }
}
