//! Load, normalize, oversample, train and predict for each (group, seed)
//! cell, then evaluate against ground truth as a separate step.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use arft_core::data::{concat_projects, format_float, global_normalize, load_csv, random_oversample, Dataset};
use arft_core::eval::EvalReport;
use arft_core::model::{positive_probabilities, save_checkpoint, ModelConfig};
use arft_core::train::{fit, predict_logits, LossConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Group, Variant};
use crate::report::{write_metrics_csv, Aggregate};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

/// Tags a core error with the pipeline stage it came from.
pub fn stage<T>(name: &str, r: arft_core::Result<T>) -> anyhow::Result<T> {
    r.with_context(|| format!("stage '{name}' failed"))
}

/// Normalized source (labeled, before oversampling) and target (unlabeled).
#[derive(Clone, Debug)]
pub struct PreparedGroup {
    pub label: String,
    pub source: Dataset,
    pub target: Dataset,
}

/// Reads a target project without labels. If the file happens to carry
/// the label column, that column is dropped unread.
pub fn load_unlabeled(path: &Path, label_column: &str) -> anyhow::Result<Dataset> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let has_label = reader.headers()?.iter().any(|h| h.trim() == label_column);
    if has_label {
        log::warn!("ignoring column '{label_column}' of target {}", path.display());
        Ok(load_csv(path, Some(label_column))?.without_labels())
    } else {
        Ok(load_csv(path, None)?)
    }
}

pub fn prepare_group(group: &Group, cfg: &ExperimentConfig) -> anyhow::Result<PreparedGroup> {
    group.validate()?;
    let sources = group
        .sources
        .iter()
        .map(|p| stage("load", load_csv(p, Some(&cfg.label_column))).with_context(|| format!("source {}", p.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let target = load_unlabeled(&group.target, &cfg.label_column)
        .context("stage 'load' failed")
        .with_context(|| format!("target {}", group.target.display()))?;
    let source = stage("concat", concat_projects(&sources))?;
    let (source, target, _) = stage("normalize", global_normalize(&source, &target, cfg.normalize_eps))?;
    Ok(PreparedGroup { label: group.label(), source, target })
}

/// Model and loss settings a cell trains with: the variant applied and `p`
/// taken from the data.
pub fn effective_configs(cfg: &ExperimentConfig, p: usize) -> (ModelConfig, LossConfig) {
    let (mut model, loss) = cfg.variant.resolve(&cfg.model, &cfg.loss);
    model.p = p;
    (model, loss)
}

/// Output of one seed: ARB-prone probabilities and hard predictions for
/// every target row.
#[derive(Clone, Debug)]
pub struct SeedOutput {
    pub seed: u64,
    pub probabilities: Vec<f64>,
    pub predictions: Vec<u8>,
}

/// Oversamples, trains and predicts for one seed. Never sees target labels.
pub fn train_predict(prep: &PreparedGroup, cfg: &ExperimentConfig, seed: u64, out_dir: Option<&Path>) -> anyhow::Result<SeedOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source = stage("oversample", random_oversample(&prep.source, &mut rng))?;
    let (model, loss) = effective_configs(cfg, prep.source.n_metrics());
    let train = arft_core::train::TrainConfig { seed, ..cfg.train.clone() };
    let (params, log) = stage("fit", fit(&source, &prep.target, &model, &loss, &train))?;
    let logits = stage("predict", predict_logits(&params, &model, &prep.target, 256))?;
    let probabilities = positive_probabilities(&logits);
    let predictions = probabilities.iter().map(|&p| u8::from(p > cfg.threshold)).collect();
    let out = SeedOutput { seed, probabilities, predictions };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        write_predictions(&dir.join(PREDICTIONS_FILE), &out)?;
        stage("write", log.write_csv(dir.join("training_log.csv")))?;
        if cfg.save_checkpoints {
            stage("write", save_checkpoint(dir.join("checkpoint.json"), &model, &params))?;
        }
    }
    Ok(out)
}

pub fn write_predictions(path: &Path, out: &SeedOutput) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["row", "probability", "prediction"])?;
    for (i, (p, y)) in out.probabilities.iter().zip(&out.predictions).enumerate() {
        w.write_record([i.to_string(), format_float(*p), y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `row,...,<column>` file into a label vector ordered by `row`.
fn read_indexed_labels(path: &Path, column: &str) -> anyhow::Result<Vec<u8>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header = reader.headers()?.clone();
    let col = header
        .iter()
        .position(|h| h.trim() == column)
        .with_context(|| format!("{} has no '{column}' column", path.display()))?;
    let row_col = header.iter().position(|h| h.trim() == "row");
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        if let Some(rc) = row_col {
            let r: usize = rec[rc].trim().parse().with_context(|| format!("{}: bad row index at line {}", path.display(), i + 2))?;
            if r != i {
                bail!("{}: rows must be listed in order, found row {r} at position {i}", path.display());
            }
        }
        let v = rec[col].trim();
        match v {
            "0" | "1" => out.push(v.parse()?),
            _ => bail!("{}: label '{v}' at line {} is not 0 or 1", path.display(), i + 2),
        }
    }
    Ok(out)
}

pub fn read_predictions(path: &Path) -> anyhow::Result<Vec<u8>> {
    read_indexed_labels(path, "prediction")
}

pub fn read_truth(path: &Path) -> anyhow::Result<Vec<u8>> {
    read_indexed_labels(path, "label")
}

/// Joins a predictions file with a truth file by row index.
pub fn evaluate_files(predictions: &Path, truth: &Path, experiment: &str, fingerprint: &str, seed: u64) -> anyhow::Result<EvalReport> {
    let pred = read_predictions(predictions)?;
    let truth_labels = read_truth(truth)?;
    stage("evaluate", EvalReport::new(experiment, fingerprint, seed, &pred, &truth_labels))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub experiment: String,
    pub variant: Variant,
    pub fingerprint: String,
    /// Resolved config with a single group; feeding it back reproduces the
    /// run.
    pub config: ExperimentConfig,
    pub effective_model: ModelConfig,
    pub effective_loss: LossConfig,
    pub seeds: Vec<u64>,
    /// Per-seed prediction files, relative to the run directory.
    pub predictions: Vec<PathBuf>,
    pub reports: Vec<EvalReport>,
    pub aggregate: Option<Aggregate>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> anyhow::Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Evaluates every seed's predictions against `truth`, then rewrites
    /// the manifest and metrics file.
    pub fn evaluate(&mut self, dir: &Path, truth: &Path) -> anyhow::Result<()> {
        self.reports = self
            .seeds
            .iter()
            .zip(&self.predictions)
            .map(|(&seed, rel)| evaluate_files(&dir.join(rel), truth, &self.experiment, &self.fingerprint, seed))
            .collect::<anyhow::Result<_>>()?;
        self.aggregate = Aggregate::of(&self.reports);
        write_metrics_csv(&dir.join(METRICS_FILE), &self.reports)?;
        self.write(dir)
    }
}

/// One single-group experiment and where its outputs go.
#[derive(Clone, Debug)]
pub struct RunPlan {
    pub config: ExperimentConfig,
    pub out_dir: PathBuf,
}

fn seed_dir(seed: u64) -> PathBuf {
    PathBuf::from(format!("seed_{seed}"))
}

fn pool(workers: usize) -> anyhow::Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers).build()?)
}

/// Runs every (plan, seed) cell on a pool of `workers` threads, then
/// writes each plan's manifest. Plans whose group has a truth file are
/// evaluated after all of their predictions are on disk.
pub fn execute(plans: &[RunPlan], workers: usize) -> anyhow::Result<Vec<RunManifest>> {
    for plan in plans {
        plan.config.validate()?;
        if plan.config.groups.len() != 1 {
            bail!("a run plan must hold exactly one group");
        }
    }
    let prepared = plans
        .iter()
        .map(|plan| prepare_group(&plan.config.groups[0], &plan.config))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let cells: Vec<(usize, u64)> =
        plans.iter().enumerate().flat_map(|(i, plan)| plan.config.seeds.iter().map(move |&s| (i, s))).collect();
    let outputs: Vec<anyhow::Result<()>> = pool(workers)?.install(|| {
        cells
            .par_iter()
            .map(|&(i, seed)| {
                let plan = &plans[i];
                let dir = plan.out_dir.join(seed_dir(seed));
                log::info!("{} [{}] seed {seed}", prepared[i].label, plan.config.variant);
                train_predict(&prepared[i], &plan.config, seed, Some(&dir))
                    .map(|_| ())
                    .with_context(|| format!("{} [{}] seed {seed}", prepared[i].label, plan.config.variant))
            })
            .collect()
    });
    outputs.into_iter().collect::<anyhow::Result<Vec<()>>>()?;

    plans
        .iter()
        .zip(&prepared)
        .map(|(plan, prep)| {
            let cfg = &plan.config;
            let mut snapshot = cfg.clone();
            snapshot.model.p = prep.source.n_metrics();
            let (effective_model, effective_loss) = effective_configs(cfg, prep.source.n_metrics());
            let mut manifest = RunManifest {
                tool_version: TOOL_VERSION.into(),
                experiment: prep.label.clone(),
                variant: cfg.variant,
                fingerprint: snapshot.fingerprint(),
                config: snapshot,
                effective_model,
                effective_loss,
                seeds: cfg.seeds.clone(),
                predictions: cfg.seeds.iter().map(|&s| seed_dir(s).join(PREDICTIONS_FILE)).collect(),
                reports: Vec::new(),
                aggregate: None,
            };
            match &cfg.groups[0].truth {
                Some(truth) => manifest.evaluate(&plan.out_dir, truth)?,
                None => manifest.write(&plan.out_dir)?,
            }
            Ok(manifest)
        })
        .collect()
}

/// One plan per configured group, each in its own subdirectory when there
/// is more than one.
pub fn plans_for(cfg: &ExperimentConfig, out_dir: &Path) -> Vec<RunPlan> {
    let single = cfg.groups.len() == 1;
    cfg.groups
        .iter()
        .map(|g| RunPlan {
            config: cfg.for_group(g),
            out_dir: if single { out_dir.to_path_buf() } else { out_dir.join(g.dir_name()) },
        })
        .collect()
}

pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> anyhow::Result<Vec<RunManifest>> {
    cfg.validate()?;
    execute(&plans_for(cfg, out_dir), cfg.workers)
}
