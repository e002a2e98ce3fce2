//! The `muse-ooc` command-line tool.
//!
//! Every command writes its artifacts under `--out` together with
//! `run_manifest.json` (resolved configuration, seed, timestamp and SHA-256
//! hashes of inputs and outputs). Exit codes: 0 success, 1 usage or
//! validation error, 2 runtime failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::aitr::{self, AitrConfig, AitrParams, Pooling, TrainingSet};
use crate::data::{generate_synthetic, load_dataset, save_dataset, split_dataset, Dataset, Label, Preset};
use crate::error::{Error, Result};
use crate::eval::{self, report, CellScore, EvalReport, Task};
use crate::features::{featurize_dataset, FeatureMatrix, FeatureSpec, MuseComponent};
use crate::optim::history_csv;
use crate::tabular::{fit_mlp_with_validation, BinaryClassifier, FitConfig, ModelKind, SavedModel, TabularModel};

#[derive(Debug, Parser)]
#[command(name = "muse-ooc", version, about = "Similarity features and transformers for out-of-context claim detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a calibrated synthetic dataset.
    Synth(SynthArgs),
    /// Re-rank evidence and export the similarity features as CSV.
    Features(FeaturesArgs),
    /// Fit a model.
    Train(TrainArgs),
    /// Score a trained model on a dataset.
    Eval(EvalArgs),
    /// Out-of-distribution cross-validation on an external dataset.
    Oodcv(OodcvArgs),
    /// Train the MLP on subsets of the similarity components.
    AblateMuse(AblateMuseArgs),
    /// Compare transformer pooling and similarity-token variants.
    AblateAitr(AblateAitrArgs),
    /// Accuracy as a function of the training-set fraction.
    Curve(CurveArgs),
    /// Per-class distribution summaries of the similarity components.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PresetArg {
    Newsclippings,
    Verite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModelArg {
    Dt,
    Rf,
    Mlp,
    Aitr,
}

impl ModelArg {
    fn tabular(self) -> Option<ModelKind> {
        match self {
            ModelArg::Dt => Some(ModelKind::Dt),
            ModelArg::Rf => Some(ModelKind::Rf),
            ModelArg::Mlp => Some(ModelKind::Mlp),
            ModelArg::Aitr => None,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PoolingArg {
    Attention,
    Max,
    Weighted,
    None,
}

impl From<PoolingArg> for Pooling {
    fn from(p: PoolingArg) -> Self {
        match p {
            PoolingArg::Attention => Pooling::Attention,
            PoolingArg::Max => Pooling::Max,
            PoolingArg::Weighted => Pooling::Weighted,
            PoolingArg::None => Pooling::None,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TaskArg {
    TrueVsOoc,
    TrueVsMiscaptioned,
    All,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::TrueVsOoc => Task::TrueVsOoc,
            TaskArg::TrueVsMiscaptioned => Task::TrueVsMiscaptioned,
            TaskArg::All => Task::All,
        }
    }
}

#[derive(Debug, Args)]
struct Common {
    /// Output directory (created if needed).
    #[arg(long)]
    out: PathBuf,
    /// JSON file with optional `fit`, `aitr` and `synth` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    preset: PresetArg,
    /// Samples per class.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    /// Train/val/test fractions, e.g. `0.8,0.1,0.1`. Use `none` to write a
    /// single unsplit dataset.
    #[arg(long)]
    split: Option<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct FeaturesArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    common: Common,
}

/// Hyperparameter flags shared by the training commands. Unset flags fall
/// back to the config file, then to the defaults.
#[derive(Debug, Args, Default)]
struct HyperArgs {
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    n_trees: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Transformer feed-forward width.
    #[arg(long)]
    ff_width: Option<usize>,
    /// Heads per layer, e.g. `1,2,4,8`.
    #[arg(long)]
    heads: Option<String>,
    #[arg(long, value_enum)]
    pooling: Option<PoolingArg>,
    #[arg(long)]
    no_muse: bool,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    positional: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    model: ModelArg,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: Option<PathBuf>,
    /// Grid-search the default transformer grid instead of one config.
    #[arg(long)]
    grid: bool,
    #[command(flatten)]
    hyper: HyperArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Directory written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Tasks to report; defaults to every task whose classes all occur in
    /// the test set.
    #[arg(long, value_enum, value_delimiter = ',')]
    task: Vec<TaskArg>,
    /// Defaults to the model directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OodcvArgs {
    #[arg(long, value_enum)]
    model: ModelArg,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    external: PathBuf,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, value_enum, default_value = "true-vs-ooc")]
    task: TaskArg,
    /// Learning rates to grid over (MLP and transformer).
    #[arg(long, value_delimiter = ',')]
    lrs: Vec<f64>,
    #[command(flatten)]
    hyper: HyperArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct AblateMuseArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[command(flatten)]
    hyper: HyperArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct AblateAitrArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    /// Grid-search each variant over the default grid.
    #[arg(long)]
    grid: bool,
    #[command(flatten)]
    hyper: HyperArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct CurveArgs {
    #[arg(long, value_enum)]
    model: ModelArg,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,0.5,0.25,0.1,0.05,0.01")]
    fractions: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    #[command(flatten)]
    hyper: HyperArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    fit: Option<Value>,
    aitr: Option<Value>,
    synth: Option<SynthFile>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SynthFile {
    n: Option<usize>,
    dim: Option<usize>,
    split: Option<String>,
}

fn read_file_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

fn section<T: for<'de> Deserialize<'de> + Default>(v: &Option<Value>) -> Result<T> {
    match v {
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::InvalidConfig(e.to_string())),
        None => Ok(T::default()),
    }
}

fn parse_heads(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|h| h.trim().parse().map_err(|_| Error::InvalidConfig(format!("bad head count `{h}`"))))
        .collect()
}

fn fit_config(file: &FileConfig, h: &HyperArgs, seed: Option<u64>) -> Result<FitConfig> {
    let mut c: FitConfig = section(&file.fit)?;
    if let Some(v) = h.lr {
        c.learning_rate = v;
    }
    if let Some(v) = h.epochs {
        c.epochs = v;
    }
    if let Some(v) = h.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = h.patience {
        c.patience = v;
    }
    if let Some(v) = h.n_trees {
        c.n_trees = v;
    }
    if let Some(v) = h.max_depth {
        c.max_depth = Some(v);
    }
    if let Some(v) = h.hidden {
        c.mlp_hidden_width = v;
    }
    if let Some(s) = seed {
        c.seed = s;
    }
    Ok(c)
}

fn aitr_config(file: &FileConfig, h: &HyperArgs, seed: Option<u64>, dim: usize) -> Result<AitrConfig> {
    let mut c: AitrConfig = section(&file.aitr)?;
    c.dim = dim;
    if let Some(v) = h.lr {
        c.lr = v;
    }
    if let Some(v) = h.epochs {
        c.max_epochs = v;
    }
    if let Some(v) = h.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = h.patience {
        c.patience = v;
    }
    if let Some(v) = h.ff_width {
        c.ff_width = v;
    }
    if let Some(s) = &h.heads {
        c.heads = parse_heads(s)?;
        c.n_layers = c.heads.len();
    }
    if let Some(p) = h.pooling {
        c.pooling = p.into();
    }
    if h.no_muse {
        c.use_muse = false;
    }
    if let Some(v) = h.dropout {
        c.dropout = v;
    }
    if h.positional {
        c.positional = true;
    }
    if let Some(s) = seed {
        c.seed = s;
    }
    c.validate()?;
    Ok(c)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// SHA-256 of a file, or of every file below a directory (sorted by
/// relative path, each contributing its path and contents). Manifests are
/// skipped so that hashing a model directory is stable across reruns.
pub fn content_hash(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, path, &mut files)?;
        files.sort();
        for rel in files {
            hasher.update(rel.as_bytes());
            hasher.update([0]);
            let p = path.join(&rel);
            hasher.update(fs::read(&p).map_err(|e| Error::io(&p, e))?);
        }
    } else {
        hasher.update(fs::read(path).map_err(|e| Error::io(path, e))?);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else if p.file_name().is_some_and(|n| n != RUN_MANIFEST && n != EVAL_MANIFEST) {
            let rel = p.strip_prefix(root).expect("below root").to_string_lossy().replace('\\', "/");
            out.push(rel);
        }
    }
    Ok(())
}

pub const RUN_MANIFEST: &str = "run_manifest.json";
pub const EVAL_MANIFEST: &str = "eval_manifest.json";

struct Run {
    command: &'static str,
    out: PathBuf,
    seed: u64,
    config: Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
}

impl Run {
    fn new(command: &'static str, out: &Path, seed: u64) -> Result<Self> {
        create_dir(out)?;
        Ok(Self {
            command,
            out: out.to_path_buf(),
            seed,
            config: Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    /// Path of an artifact this run writes; it is hashed into the manifest.
    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    fn input(&mut self, p: &Path) -> Result<Dataset> {
        self.inputs.push(p.to_path_buf());
        load_dataset(p, None)
    }

    fn finish(self, argv: &[String]) -> Result<()> {
        let mut outputs = BTreeMap::new();
        for rel in &self.outputs {
            outputs.insert(rel.clone(), content_hash(&self.out.join(rel))?);
        }
        let mut inputs = BTreeMap::new();
        for p in &self.inputs {
            inputs.insert(p.display().to_string(), content_hash(p)?);
        }
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let manifest = json!({
            "tool": "muse-ooc",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "argv": argv,
            "seed": self.seed,
            "config": self.config,
            "timestamp_unix": timestamp,
            "inputs": inputs,
            "outputs": outputs,
        });
        // eval may share the model directory, so it keeps its own manifest
        let name = if self.command == "eval" { EVAL_MANIFEST } else { RUN_MANIFEST };
        let path = self.out.join(name);
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))
    }
}

fn parse_split(s: &str) -> Result<Option<[f64; 3]>> {
    if s == "none" {
        return Ok(None);
    }
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| Error::InvalidConfig(format!("bad split fraction `{p}`"))))
        .collect::<Result<_>>()?;
    match parts.as_slice() {
        [a, b, c] => Ok(Some([*a, *b, *c])),
        _ => Err(Error::InvalidConfig(format!("split needs three fractions, got `{s}`"))),
    }
}

fn cmd_synth(a: &SynthArgs, argv: &[String]) -> Result<()> {
    let file = read_file_config(a.common.config.as_deref())?;
    let sf = file.synth.unwrap_or_default();
    let preset = match a.preset {
        PresetArg::Newsclippings => Preset::NewsClippings,
        PresetArg::Verite => Preset::Verite,
    };
    let n = a.n.or(sf.n).unwrap_or(2000);
    let dim = a.dim.or(sf.dim).unwrap_or(64);
    let seed = a.common.seed.unwrap_or(0);
    let default_split = match preset {
        Preset::NewsClippings => "0.8,0.1,0.1",
        Preset::Verite => "none",
    };
    let split = parse_split(a.split.as_deref().or(sf.split.as_deref()).unwrap_or(default_split))?;
    let config = preset.config(n, dim, seed);
    let mut run = Run::new("synth", &a.common.out, seed)?;
    run.config = json!({ "preset": preset.name(), "synthetic": config, "split": split });
    let dataset = generate_synthetic(&config)?;
    match split {
        Some(fr) => {
            let (tr, va, te) = split_dataset(&dataset, fr, seed)?;
            save_dataset(&tr, run.path("train"))?;
            save_dataset(&va, run.path("val"))?;
            save_dataset(&te, run.path("test"))?;
        }
        None => save_dataset(&dataset, run.path("data"))?,
    }
    run.finish(argv)
}

fn cmd_features(a: &FeaturesArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new("features", &a.common.out, a.common.seed.unwrap_or(0))?;
    let ds = run.input(&a.data)?;
    featurize_dataset(&ds)?.write_csv(run.path("features.csv"))?;
    run.config = json!({ "data": a.data });
    run.finish(argv)
}

fn binary(labels: &[Label]) -> Vec<u8> {
    aitr::binary_labels(labels)
}

/// A trained model as stored in a `train` output directory.
enum StoredModel {
    Tabular(SavedModel),
    Aitr(AitrParams),
}

const TABULAR_FILE: &str = "model.json";
const AITR_FILE: &str = "model.ckpt";

impl StoredModel {
    fn load(dir: &Path) -> Result<Self> {
        let ckpt = dir.join(AITR_FILE);
        if ckpt.exists() {
            return Ok(StoredModel::Aitr(aitr::load_checkpoint(ckpt)?));
        }
        Ok(StoredModel::Tabular(SavedModel::load(dir.join(TABULAR_FILE))?))
    }

    fn predict(&self, ds: &Dataset) -> Result<Vec<u8>> {
        match self {
            StoredModel::Tabular(m) => {
                let f = featurize_dataset(ds)?;
                m.model.predict_batch(&m.features.design_matrix(&f))
            }
            StoredModel::Aitr(p) => {
                let inputs = aitr::prepare_inputs(ds)?;
                Ok(aitr::predict_proba(p, &inputs)?.into_iter().map(|q| (q >= 0.5) as u8).collect())
            }
        }
    }
}

fn fit_tabular(
    kind: ModelKind,
    train: &FeatureMatrix,
    val: Option<&FeatureMatrix>,
    spec: &FeatureSpec,
    config: &FitConfig,
) -> Result<(TabularModel, Option<String>)> {
    let x = spec.design_matrix(train);
    let y = binary(&train.labels);
    match (kind, val) {
        (ModelKind::Mlp, Some(v)) => {
            let (xv, yv) = (spec.design_matrix(v), binary(&v.labels));
            let (p, hist) = fit_mlp_with_validation(&x, &y, Some((&xv, &yv)), config)?;
            Ok((TabularModel::Mlp(p), Some(history_csv(&hist))))
        }
        _ => Ok((TabularModel::fit(kind, &x, &y, config)?, None)),
    }
}

fn accuracy_on(pred: &[u8], labels: &[Label], task: Task) -> Result<f64> {
    Ok(eval::evaluate(pred, labels, task)?.overall_accuracy)
}

fn cmd_train(a: &TrainArgs, argv: &[String]) -> Result<()> {
    let file = read_file_config(a.common.config.as_deref())?;
    let mut run = Run::new("train", &a.common.out, a.common.seed.unwrap_or(0))?;
    let train = run.input(&a.train)?;
    let val = match &a.val {
        Some(p) => Some(run.input(p)?),
        None => None,
    };
    match a.model.tabular() {
        Some(kind) => {
            let config = fit_config(&file, &a.hyper, a.common.seed)?;
            run.seed = config.seed;
            let spec = FeatureSpec::default();
            let ftr = featurize_dataset(&train)?;
            let fva = val.as_ref().map(featurize_dataset).transpose()?;
            let (model, hist) = fit_tabular(kind, &ftr, fva.as_ref(), &spec, &config)?;
            if let Ok(imp) = model.feature_importance() {
                report::write_text(
                    run.path("importance.csv"),
                    &report::importance_csv(&spec.column_names(), &[(format!("{kind:?}").to_lowercase(), imp)]),
                )?;
            }
            if let Some(h) = hist {
                report::write_text(run.path("history.csv"), &h)?;
            }
            SavedModel { features: spec, model }.save(run.path(TABULAR_FILE))?;
            run.config = json!({ "model": a.model, "fit": config });
        }
        None => {
            let val = val.ok_or_else(|| Error::InvalidConfig("transformer training needs --val".into()))?;
            let config = aitr_config(&file, &a.hyper, a.common.seed, train.dim())?;
            run.seed = config.seed;
            let (tr, va) = (TrainingSet::from_dataset(&train)?, TrainingSet::from_dataset(&val)?);
            let outcome = if a.grid {
                let g = aitr::grid_search(&tr, &va, &aitr::default_grid(&config))?;
                report::write_json(run.path("grid.json"), "aitr-grid", &g.cells)?;
                g.best_outcome
            } else {
                aitr::train(&tr, &va, &config)?
            };
            report::write_text(run.path("history.csv"), &history_csv(&outcome.history))?;
            aitr::save_checkpoint(&outcome.params, run.path(AITR_FILE))?;
            run.config = json!({ "model": a.model, "aitr": outcome.params.config, "grid": a.grid });
        }
    }
    run.finish(argv)
}

fn tasks_for(requested: &[TaskArg]) -> Vec<Task> {
    if requested.is_empty() {
        Task::ALL.to_vec()
    } else {
        requested.iter().map(|&t| t.into()).collect()
    }
}

fn reports_for(pred: &[u8], labels: &[Label], tasks: &[Task], explicit: bool) -> Result<Vec<EvalReport>> {
    let mut out = Vec::new();
    for &t in tasks {
        if !explicit && !t.classes().iter().all(|c| labels.contains(c)) {
            continue;
        }
        match eval::evaluate(pred, labels, t) {
            Ok(r) => out.push(r),
            Err(Error::EmptyAfterFilter(_)) if !explicit => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn cmd_eval(a: &EvalArgs, argv: &[String]) -> Result<()> {
    let out = a.out.clone().unwrap_or_else(|| a.model.clone());
    let model = StoredModel::load(&a.model)?;
    let mut run = Run::new("eval", &out, 0)?;
    run.inputs.push(a.model.clone());
    let test = run.input(&a.test)?;
    let pred = model.predict(&test)?;
    let reports = reports_for(&pred, &test.labels(), &tasks_for(&a.task), !a.task.is_empty())?;
    report::write_json(run.path("report.json"), "eval", &reports)?;
    report::write_text(run.path("report.csv"), &report::eval_csv(&reports))?;
    for r in &reports {
        println!("{}: accuracy {:.4} (n={})", r.task, r.overall_accuracy, r.n);
    }
    run.config = json!({ "model": a.model, "test": a.test });
    run.finish(argv)
}

fn cmd_oodcv(a: &OodcvArgs, argv: &[String]) -> Result<()> {
    let file = read_file_config(a.common.config.as_deref())?;
    let seed = a.common.seed.unwrap_or(0);
    let mut run = Run::new("oodcv", &a.common.out, seed)?;
    let train = run.input(&a.train)?;
    let external = run.input(&a.external)?;
    let task: Task = a.task.into();
    let labels = external.labels();
    let report = match a.model.tabular() {
        Some(kind) => {
            let base = fit_config(&file, &a.hyper, a.common.seed)?;
            let lrs = if a.lrs.is_empty() { vec![base.learning_rate] } else { a.lrs.clone() };
            let grid: Vec<(String, FitConfig)> = lrs
                .iter()
                .map(|&lr| (format!("lr={lr:e}"), FitConfig { learning_rate: lr, ..base.clone() }))
                .collect();
            let ftr = featurize_dataset(&train)?;
            let fext = featurize_dataset(&external)?;
            let spec = FeatureSpec::default();
            run.config = json!({ "model": a.model, "fit": base, "lrs": lrs, "k": a.k, "task": task });
            eval::ood_cv(&labels, &grid, a.k, seed, |config, val_idx, test_idx| {
                let (fv, ft) = (fext.select(val_idx), fext.select(test_idx));
                let (model, _) = fit_tabular(kind, &ftr, Some(&fv), &spec, config)?;
                Ok(CellScore {
                    val: accuracy_on(&model.predict_batch(&spec.design_matrix(&fv))?, &fv.labels, task)?,
                    test: accuracy_on(&model.predict_batch(&spec.design_matrix(&ft))?, &ft.labels, task)?,
                })
            })?
        }
        None => {
            let base = aitr_config(&file, &a.hyper, a.common.seed, train.dim())?;
            let lrs = if a.lrs.is_empty() { vec![base.lr] } else { a.lrs.clone() };
            let grid: Vec<(String, AitrConfig)> =
                lrs.iter().map(|&lr| AitrConfig { lr, ..base.clone() }).map(|c| (c.label(), c)).collect();
            let tr = TrainingSet::from_dataset(&train)?;
            let inputs = aitr::prepare_inputs(&external)?;
            run.config = json!({ "model": a.model, "aitr": base, "lrs": lrs, "k": a.k, "task": task });
            let subset = |idx: &[usize]| {
                let keep: Vec<usize> = idx.iter().copied().filter(|&i| task.classes().contains(&labels[i])).collect();
                TrainingSet {
                    inputs: keep.iter().map(|&i| inputs[i].clone()).collect(),
                    labels: keep.iter().map(|&i| (labels[i] != Label::Truthful) as u8).collect(),
                }
            };
            eval::ood_cv(&labels, &grid, a.k, seed, |config, val_idx, test_idx| {
                let (va, te) = (subset(val_idx), subset(test_idx));
                let outcome = aitr::train(&tr, &va, config)?;
                Ok(CellScore {
                    val: outcome.best_val_accuracy,
                    test: aitr::accuracy(&outcome.params, &te)?,
                })
            })?
        }
    };
    report::write_json(run.path("report.json"), "oodcv", &report)?;
    report::write_text(run.path("oodcv.csv"), &report::oodcv_csv(&report))?;
    println!(
        "{}: {:.4} ({:.4}) over {} folds",
        report.config_labels[report.chosen], report.mean_test, report.std_test, report.k
    );
    run.finish(argv)
}

fn cmd_ablate_muse(a: &AblateMuseArgs, argv: &[String]) -> Result<()> {
    let file = read_file_config(a.common.config.as_deref())?;
    let config = fit_config(&file, &a.hyper, a.common.seed)?;
    let mut run = Run::new("ablate-muse", &a.common.out, config.seed)?;
    let [tr, va, te] = [&a.train, &a.val, &a.test].map(|p| run.input(p));
    let (tr, va, te) = (featurize_dataset(&tr?)?, featurize_dataset(&va?)?, featurize_dataset(&te?)?);
    let rows = eval::muse_ablation(&eval::standard_subsets(), &tr, &va, &te, &Task::ALL, &config)?;
    report::write_json(run.path("report.json"), "muse-ablation", &rows)?;
    report::write_text(run.path("ablation.csv"), &report::ablation_csv(&rows))?;
    run.config = json!({ "fit": config });
    run.finish(argv)
}

/// The pooling/similarity-token variants of the transformer ablation table.
pub const AITR_VARIANTS: [(Pooling, bool); 6] = [
    (Pooling::None, false),
    (Pooling::None, true),
    (Pooling::Attention, false),
    (Pooling::Max, true),
    (Pooling::Weighted, true),
    (Pooling::Attention, true),
];

fn cmd_ablate_aitr(a: &AblateAitrArgs, argv: &[String]) -> Result<()> {
    let file = read_file_config(a.common.config.as_deref())?;
    let mut run = Run::new("ablate-aitr", &a.common.out, a.seeds.first().copied().unwrap_or(0))?;
    let train = run.input(&a.train)?;
    let val = run.input(&a.val)?;
    let base = aitr_config(&file, &a.hyper, None, train.dim())?;
    let (tr, va) = (TrainingSet::from_dataset(&train)?, TrainingSet::from_dataset(&val)?);
    let use_grid = a.grid;
    let rows = eval::aitr_ablation(&tr, &va, &base, &AITR_VARIANTS, &a.seeds, |c| {
        if use_grid {
            aitr::default_grid(c)
        } else {
            vec![c.clone()]
        }
    })?;
    report::write_json(run.path("report.json"), "aitr-ablation", &rows)?;
    report::write_text(run.path("ablation.csv"), &report::aitr_ablation_csv(&rows))?;
    run.config = json!({ "aitr": base, "seeds": a.seeds, "grid": a.grid });
    run.finish(argv)
}

fn cmd_curve(a: &CurveArgs, argv: &[String]) -> Result<()> {
    let file = read_file_config(a.common.config.as_deref())?;
    let kind = a
        .model
        .tabular()
        .ok_or_else(|| Error::InvalidConfig("curve supports dt, rf and mlp".into()))?;
    let config = fit_config(&file, &a.hyper, a.common.seed)?;
    let mut run = Run::new("curve", &a.common.out, config.seed)?;
    let (train, test) = (run.input(&a.train)?, run.input(&a.test)?);
    let (ftr, fte) = (featurize_dataset(&train)?, featurize_dataset(&test)?);
    let spec = FeatureSpec::default();
    let xte = spec.design_matrix(&fte);
    let points = eval::limited_data_curve(&ftr.labels, &a.fractions, &a.seeds, |idx, seed| {
        let sub = ftr.select(idx);
        let cfg = FitConfig { seed, ..config.clone() };
        let model = TabularModel::fit(kind, &spec.design_matrix(&sub), &binary(&sub.labels), &cfg)?;
        accuracy_on(&model.predict_batch(&xte)?, &fte.labels, Task::TrueVsOoc)
    })?;
    report::write_json(run.path("report.json"), "limited-data", &points)?;
    report::write_text(run.path("curve.csv"), &report::curve_csv(&points))?;
    run.config = json!({ "model": a.model, "fit": config, "fractions": a.fractions, "seeds": a.seeds });
    run.finish(argv)
}

fn cmd_analyze(a: &AnalyzeArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new("analyze", &a.common.out, a.common.seed.unwrap_or(0))?;
    let ds = run.input(&a.data)?;
    let r = eval::distribution_report(&featurize_dataset(&ds)?);
    report::write_json(run.path("distribution.json"), "distribution", &r)?;
    report::write_text(run.path("distribution.csv"), &report::distribution_csv(&r))?;
    report::write_text(run.path("histograms.dat"), &report::histogram_dat(&r))?;
    for (class, per) in &r.classes {
        let meds: Vec<String> = MuseComponent::ALL
            .iter()
            .map(|c| per.get(c).map(|s| format!("{c}={:.3}", s.median)).unwrap_or_default())
            .collect();
        println!("{class}: {}", meds.join(" "));
    }
    run.config = json!({ "data": a.data, "split_tag": ds.split_tag, "backbone": ds.backbone_tag });
    run.finish(argv)
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("MUSE_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("MUSE_THREADS must be a positive integer, got `{v}`")))?;
        // a pool may already exist when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    Ok(())
}

fn dispatch(cli: &Cli, argv: &[String]) -> Result<()> {
    configure_threads()?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, argv),
        Command::Features(a) => cmd_features(a, argv),
        Command::Train(a) => cmd_train(a, argv),
        Command::Eval(a) => cmd_eval(a, argv),
        Command::Oodcv(a) => cmd_oodcv(a, argv),
        Command::AblateMuse(a) => cmd_ablate_muse(a, argv),
        Command::AblateAitr(a) => cmd_ablate_aitr(a, argv),
        Command::Curve(a) => cmd_curve(a, argv),
        Command::Analyze(a) => cmd_analyze(a, argv),
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}
