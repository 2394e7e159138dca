//! Experiment driver: JSON run configs, per-seed execution, sweeps, and
//! output artifacts (metrics.csv, summary.json, checkpoints).

use std::fs;
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{
    generate_sbm, load_bundle, load_content_cites, planetoid_split, random_split, DataError,
    Graph, GraphContext, SbmParams,
};
use crate::loss::{KernelKind, LossConfig, Matching};
use crate::model::{AuxKind, CheckpointError, ModelKind, ModelSpec, StudentModel};
use crate::scalar::Scalar;
use crate::train::{student_seed, train_students, TrainConfig, TrainError, TrainReport};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(format!("unknown precision {other:?}, expected f32 or f64")),
        }
    }
}

/// Where the graph comes from. `cora` reads the classic citation files from
/// `data/cora/` (override the base directory with `ALIGNAHEAD_DATA_DIR`)
/// and applies the standard 20-per-class/500/1000 split. `bundle` reads a
/// directory previously written by the bundle writer, splits included.
/// `sbm` samples a stochastic block model and splits it by count.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetConfig {
    Cora,
    Bundle {
        path: PathBuf,
    },
    Sbm {
        block_sizes: Vec<usize>,
        p_in: f64,
        p_out: f64,
        num_features: usize,
        noise: f64,
        seed: u64,
        n_train: usize,
        n_val: usize,
        n_test: usize,
        split_seed: u64,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// One student, supervised loss only.
    #[serde(rename = "baseline")]
    Baseline,
    /// Full objective but with one-to-one layer matching.
    #[serde(rename = "oc")]
    Oc,
    /// Structure distillation only: no per-layer classifiers, no feature
    /// or deep-supervision terms.
    #[serde(rename = "alignahead")]
    Alignahead,
    /// The full objective.
    #[serde(rename = "alignahead++")]
    AlignaheadPlusPlus,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub kind: ModelKind,
    pub depth: usize,
    pub hidden: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
}

fn default_heads() -> usize {
    1
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub epochs: Option<usize>,
    pub eval_every: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillSection {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
    pub kernel: Option<KernelKind>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub method: Method,
    /// Number of students; forced to 1 by `baseline`.
    #[serde(default = "default_students")]
    pub students: usize,
    /// Shared architecture for every student.
    pub model: ModelEntry,
    /// Per-student architectures (same depth required); overrides `model`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub models: Option<Vec<ModelEntry>>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub distill: DistillSection,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_precision")]
    pub precision: Precision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

fn default_students() -> usize {
    2
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_precision() -> Precision {
    Precision::F64
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    /// 2 for anything wrong with the config or environment, 3 for
    /// divergence during training.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Train(_) => 3,
            _ => 2,
        }
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig, RunError> {
    serde_json::from_str(text).map_err(|e| RunError::Config(e.to_string()))
}

pub fn load_config(path: &Path) -> Result<RunConfig, RunError> {
    let text = fs::read_to_string(path)
        .map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

fn method_matching(method: Method) -> Matching {
    match method {
        Method::Oc => Matching::Identity,
        _ => Matching::LookAhead,
    }
}

fn method_aux(method: Method) -> AuxKind {
    match method {
        Method::Oc | Method::AlignaheadPlusPlus => AuxKind::Gnn,
        Method::Baseline | Method::Alignahead => AuxKind::None,
    }
}

/// Students actually trained: `baseline` always runs solo.
pub fn effective_students(cfg: &RunConfig) -> usize {
    if cfg.method == Method::Baseline {
        1
    } else {
        cfg.students
    }
}

/// The loss configuration implied by the method plus any overrides.
/// `baseline` zeroes every distillation term; `alignahead` keeps only the
/// structure term.
pub fn resolve_loss(cfg: &RunConfig) -> LossConfig {
    let d = LossConfig::default();
    let mut alpha = cfg.distill.alpha.unwrap_or(d.alpha);
    let mut beta = cfg.distill.beta.unwrap_or(d.beta);
    let lambda = cfg.distill.lambda.unwrap_or(d.lambda);
    let kernel = cfg.distill.kernel.unwrap_or(d.kernel);
    match cfg.method {
        Method::Baseline => {
            alpha = 0.0;
            beta = 0.0;
        }
        Method::Alignahead => beta = 0.0,
        Method::Oc | Method::AlignaheadPlusPlus => {}
    }
    LossConfig { alpha, beta, lambda, kernel, matching: method_matching(cfg.method) }
}

/// Architectures for every student, aux classifiers set by the method.
pub fn resolve_specs(cfg: &RunConfig) -> Result<Vec<ModelSpec>, RunError> {
    let m = effective_students(cfg);
    let aux = method_aux(cfg.method);
    let entries: Vec<ModelEntry> = match &cfg.models {
        Some(list) => {
            if list.len() != m {
                return Err(RunError::Config(format!(
                    "models lists {} architectures but {} students run",
                    list.len(),
                    m
                )));
            }
            list.clone()
        }
        None => vec![cfg.model.clone(); m],
    };
    let depth = entries[0].depth;
    for e in &entries {
        if e.depth != depth {
            return Err(RunError::Config("students must share depth".to_string()));
        }
        if e.depth < 1 || e.hidden < 1 || e.heads < 1 {
            return Err(RunError::Config(
                "depth, hidden and heads must all be at least 1".to_string(),
            ));
        }
    }
    Ok(entries
        .into_iter()
        .map(|e| ModelSpec { kind: e.kind, depth: e.depth, hidden: e.hidden, heads: e.heads, aux })
        .collect())
}

/// Task-dependent optimizer defaults: multi-label graphs train with a
/// higher rate and no decay, single-label graphs with the citation
/// settings.
pub fn resolve_train(cfg: &RunConfig, multi_label: bool) -> TrainConfig {
    let (default_lr, default_wd) = if multi_label { (5e-3, 0.0) } else { (1e-3, 1e-4) };
    TrainConfig {
        epochs: cfg.train.epochs.unwrap_or(300),
        lr: cfg.train.lr.unwrap_or(default_lr),
        weight_decay: cfg.train.weight_decay.unwrap_or(default_wd),
        eval_every: cfg.train.eval_every.unwrap_or(1),
        loss: resolve_loss(cfg),
    }
}

fn validate(cfg: &RunConfig) -> Result<(), RunError> {
    if cfg.seeds.is_empty() {
        return Err(RunError::Config("seeds must not be empty".to_string()));
    }
    if cfg.method != Method::Baseline && cfg.students < 2 {
        return Err(RunError::Config(
            "distillation methods need at least 2 students".to_string(),
        ));
    }
    if let Some(epochs) = cfg.train.epochs {
        if epochs < 1 {
            return Err(RunError::Config("epochs must be at least 1".to_string()));
        }
    }
    if let Some(e) = cfg.train.eval_every {
        if e < 1 {
            return Err(RunError::Config("eval_every must be at least 1".to_string()));
        }
    }
    for (name, v) in
        [("alpha", cfg.distill.alpha), ("beta", cfg.distill.beta), ("lambda", cfg.distill.lambda)]
    {
        if let Some(v) = v {
            if !(0.0..=1.0).contains(&v) && name != "alpha" {
                return Err(RunError::Config(format!("{name} must lie in [0, 1]")));
            }
            if !v.is_finite() || v < 0.0 {
                return Err(RunError::Config(format!("{name} must be finite and non-negative")));
            }
        }
    }
    if let DatasetConfig::Sbm { block_sizes, p_in, p_out, .. } = &cfg.dataset {
        if block_sizes.is_empty() || block_sizes.contains(&0) {
            return Err(RunError::Config("block_sizes must be non-empty and positive".to_string()));
        }
        for (name, p) in [("p_in", *p_in), ("p_out", *p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(RunError::Config(format!("{name} must lie in [0, 1]")));
            }
        }
    }
    resolve_specs(cfg).map(|_| ())
}

fn data_dir() -> PathBuf {
    std::env::var_os("ALIGNAHEAD_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Loads (or generates) the configured graph, with splits applied.
pub fn load_dataset(ds: &DatasetConfig) -> Result<Graph, RunError> {
    match ds {
        DatasetConfig::Cora => {
            let dir = data_dir().join("cora");
            let content = dir.join("cora.content");
            let cites = dir.join("cora.cites");
            if !content.is_file() || !cites.is_file() {
                return Err(RunError::Config(format!(
                    "dataset missing: expected {} and {}; run scripts/fetch_cora.sh or set \
                     ALIGNAHEAD_DATA_DIR to a directory containing cora/ (see data/README.md)",
                    content.display(),
                    cites.display()
                )));
            }
            let (mut graph, _report) = load_content_cites(&content, &cites)?;
            planetoid_split(&mut graph, 20, 500, 1000, 0)?;
            Ok(graph)
        }
        DatasetConfig::Bundle { path } => Ok(load_bundle(path)?),
        DatasetConfig::Sbm {
            block_sizes,
            p_in,
            p_out,
            num_features,
            noise,
            seed,
            n_train,
            n_val,
            n_test,
            split_seed,
        } => {
            let mut graph = generate_sbm(&SbmParams {
                block_sizes: block_sizes.clone(),
                p_in: *p_in,
                p_out: *p_out,
                num_features: *num_features,
                noise: *noise,
                seed: *seed,
            });
            random_split(&mut graph, *n_train, *n_val, *n_test, *split_seed)?;
            Ok(graph)
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StudentOutcome {
    pub student: usize,
    pub best_epoch: usize,
    pub val_metric: f64,
    pub test_metric: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    /// Best test-at-best-validation metric over the students.
    pub headline: f64,
    pub students: Vec<StudentOutcome>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    /// Fully resolved configuration; running it again reproduces the run.
    pub config: RunConfig,
    pub metric: String,
    pub per_seed: Vec<SeedOutcome>,
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() < 2 {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (mean, std)
}

fn run_seed<T: Scalar>(
    graph: &Graph,
    specs: &[ModelSpec],
    train_cfg: &TrainConfig,
    seed: u64,
    seed_dir: &Path,
) -> Result<TrainReport, RunError> {
    let ctx = GraphContext::<T>::new(graph);
    let mut models: Vec<StudentModel<T>> = specs
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            let mut rng = ChaCha8Rng::seed_from_u64(student_seed(seed, k));
            StudentModel::init(spec, ctx.num_features, ctx.num_classes, &mut rng)
        })
        .collect();
    let report = train_students(&ctx, &mut models, train_cfg)?;

    fs::create_dir_all(seed_dir)?;
    fs::write(seed_dir.join("metrics.csv"), report.log.to_csv())?;
    for (k, model) in models.iter().enumerate() {
        model.save_checkpoint(&seed_dir.join(format!("checkpoint.student{k}.bin")))?;
    }
    Ok(report)
}

/// Echo of the config with every default materialized, so the summary
/// alone reproduces the run.
fn resolved_echo(cfg: &RunConfig, train_cfg: &TrainConfig) -> RunConfig {
    let mut echo = cfg.clone();
    echo.students = effective_students(cfg);
    echo.train = TrainSection {
        lr: Some(train_cfg.lr),
        weight_decay: Some(train_cfg.weight_decay),
        epochs: Some(train_cfg.epochs),
        eval_every: Some(train_cfg.eval_every),
    };
    echo.distill = DistillSection {
        alpha: Some(train_cfg.loss.alpha),
        beta: Some(train_cfg.loss.beta),
        lambda: Some(train_cfg.loss.lambda),
        kernel: Some(train_cfg.loss.kernel),
    };
    echo
}

/// Executes one config: one training run per seed, artifacts under `out`.
/// Layout: `out/seed_<s>/metrics.csv`, `out/seed_<s>/checkpoint.student<k>.bin`,
/// and `out/summary.json`.
pub fn execute_run(cfg: &RunConfig, out: &Path) -> Result<RunSummary, RunError> {
    validate(cfg)?;
    let specs = resolve_specs(cfg)?;
    let graph = load_dataset(&cfg.dataset)?;
    let train_cfg = resolve_train(cfg, graph.labels.is_multi());

    let mut per_seed = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let seed_dir = out.join(format!("seed_{seed}"));
        let report = match cfg.precision {
            Precision::F32 => run_seed::<f32>(&graph, &specs, &train_cfg, seed, &seed_dir)?,
            Precision::F64 => run_seed::<f64>(&graph, &specs, &train_cfg, seed, &seed_dir)?,
        };
        let students = report
            .best
            .iter()
            .enumerate()
            .map(|(k, b)| StudentOutcome {
                student: k,
                best_epoch: b.epoch,
                val_metric: b.val_metric,
                test_metric: b.test_metric,
            })
            .collect();
        per_seed.push(SeedOutcome { seed, headline: report.headline, students });
    }

    let headlines: Vec<f64> = per_seed.iter().map(|s| s.headline).collect();
    let (mean, std) = mean_std(&headlines);
    let mut echo = resolved_echo(cfg, &train_cfg);
    echo.out = Some(out.to_path_buf());
    let summary = RunSummary {
        config: echo,
        metric: if graph.labels.is_multi() { "micro_f1" } else { "accuracy" }.to_string(),
        per_seed,
        mean,
        std,
    };
    let text = serde_json::to_string_pretty(&summary)
        .map_err(|e| RunError::Config(format!("summary serialization: {e}")))?;
    fs::create_dir_all(out)?;
    fs::write(out.join("summary.json"), text + "\n")?;
    Ok(summary)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Depth,
    Beta,
    Lambda,
    Students,
}

impl std::str::FromStr for SweepAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "depth" => Ok(SweepAxis::Depth),
            "beta" => Ok(SweepAxis::Beta),
            "lambda" => Ok(SweepAxis::Lambda),
            "students" => Ok(SweepAxis::Students),
            other => Err(format!(
                "unknown axis {other:?}, expected depth, beta, lambda or students"
            )),
        }
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Depth => "depth",
            SweepAxis::Beta => "beta",
            SweepAxis::Lambda => "lambda",
            SweepAxis::Students => "students",
        }
    }
}

fn as_count(axis: SweepAxis, v: f64) -> Result<usize, RunError> {
    if v.fract() != 0.0 || v < 1.0 || v > usize::MAX as f64 {
        return Err(RunError::Config(format!(
            "{} sweep needs positive integers, got {v}",
            axis.name()
        )));
    }
    Ok(v as usize)
}

fn apply_axis(cfg: &mut RunConfig, axis: SweepAxis, v: f64) -> Result<(), RunError> {
    match axis {
        SweepAxis::Depth => {
            let depth = as_count(axis, v)?;
            cfg.model.depth = depth;
            if let Some(models) = &mut cfg.models {
                for m in models {
                    m.depth = depth;
                }
            }
        }
        SweepAxis::Beta => cfg.distill.beta = Some(v),
        SweepAxis::Lambda => cfg.distill.lambda = Some(v),
        SweepAxis::Students => {
            let m = as_count(axis, v)?;
            if cfg.method == Method::Baseline {
                return Err(RunError::Config(
                    "cannot sweep students with method=baseline".to_string(),
                ));
            }
            if cfg.models.is_some() {
                return Err(RunError::Config(
                    "cannot sweep students with per-student model list".to_string(),
                ));
            }
            cfg.students = m;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepSummary {
    pub axis: String,
    pub rows: Vec<SweepRow>,
}

/// One run batch per axis value, each in `out/<axis>=<value>/`, plus a
/// consolidated `out/sweep.csv` with one `value,mean,std` row per value.
pub fn execute_sweep(
    base: &RunConfig,
    axis: SweepAxis,
    values: &[f64],
    out: &Path,
) -> Result<SweepSummary, RunError> {
    if values.is_empty() {
        return Err(RunError::Config("sweep needs at least one value".to_string()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let mut cfg = base.clone();
        apply_axis(&mut cfg, axis, v)?;
        let sub = out.join(format!("{}={}", axis.name(), v));
        let summary = execute_run(&cfg, &sub)?;
        rows.push(SweepRow { value: v, mean: summary.mean, std: summary.std });
    }
    let mut csv = String::from("value,mean,std\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{}\n", r.value, r.mean, r.std));
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("sweep.csv"), csv)?;
    Ok(SweepSummary { axis: axis.name().to_string(), rows })
}
