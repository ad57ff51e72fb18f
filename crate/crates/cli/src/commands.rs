use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, ensure, Context};
use arft_core::data::{correlation_report, load_csv, random_oversample, synth_generate, CorrelationReport, SynthConfig};
use arft_core::eval::{linear_focal_classifier, score_features, EvalReport, ScoreMethod};
use arft_core::train::TrainConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Variant};
use crate::pipeline::{execute, plans_for, prepare_group, read_truth, stage, RunManifest, RunPlan};
use crate::report::{f3, format_table, mean, pivot_table};

fn require_truth(cfg: &ExperimentConfig, what: &str) -> anyhow::Result<()> {
    for g in &cfg.groups {
        ensure!(g.truth.is_some(), "{what} needs ground truth for every group; {} has none", g.label());
    }
    Ok(())
}

fn bal_of(m: &RunManifest) -> f64 {
    m.aggregate.as_ref().map(|a| a.bal_mean).unwrap_or(f64::NAN)
}

// ----- ablation ---------------------------------------------------------------

pub const IMPV_FORMULA: &str = "Impv. = (b - a) / a * 100%, a = baseline Bal, b = variant Bal";

/// Relative improvement of `b` over `a`, in percent.
pub fn improvement_pct(a: f64, b: f64) -> f64 {
    (b - a) / a * 100.0
}

#[derive(Clone, Debug)]
pub struct AblationResult {
    pub groups: Vec<String>,
    /// Indexed `[variant][group]`, variants in [`Variant::ALL`] order.
    pub manifests: Vec<Vec<RunManifest>>,
}

impl AblationResult {
    pub fn bal(&self, v: usize, g: usize) -> f64 {
        bal_of(&self.manifests[v][g])
    }

    pub fn table(&self) -> String {
        let labels: Vec<String> = Variant::ALL.iter().map(|v| v.name().to_owned()).collect();
        let mut out = String::from("Bal\n");
        out.push_str(&pivot_table("Variant", &labels, &self.groups, |v, g| self.bal(v, g)));
        out.push_str(&format!("\n{IMPV_FORMULA}\n"));
        let mut header = vec!["Variant".to_owned()];
        header.extend(self.groups.iter().cloned());
        header.push("Avg.".into());
        let rows: Vec<Vec<String>> = (0..Variant::ALL.len())
            .map(|v| {
                let mut r = vec![labels[v].clone()];
                r.extend((0..self.groups.len()).map(|g| format!("{:+.3}%", improvement_pct(self.bal(0, g), self.bal(v, g)))));
                let avg = |v: usize| mean(&(0..self.groups.len()).map(|g| self.bal(v, g)).collect::<Vec<_>>());
                r.push(format!("{:+.3}%", improvement_pct(avg(0), avg(v))));
                r
            })
            .collect();
        out.push_str(&format_table(&header, &rows));
        out
    }

    pub fn write_csv(&self, path: &Path) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["group", "variant", "pd", "pf", "bal", "impv_pct"])?;
        for (v, per_group) in self.manifests.iter().enumerate() {
            for (g, m) in per_group.iter().enumerate() {
                let a = m.aggregate.as_ref().context("missing aggregate")?;
                w.write_record([
                    self.groups[g].clone(),
                    Variant::ALL[v].name().to_owned(),
                    f3(a.pd_mean),
                    f3(a.pf_mean),
                    f3(a.bal_mean),
                    format!("{:.3}", improvement_pct(self.bal(0, g), self.bal(v, g))),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the four variants with the same seeds on every group.
pub fn ablate(cfg: &ExperimentConfig, out_dir: &Path) -> anyhow::Result<AblationResult> {
    cfg.validate()?;
    require_truth(cfg, "ablate")?;
    let mut plans = Vec::new();
    for v in Variant::ALL {
        let vcfg = ExperimentConfig { variant: v, ..cfg.clone() };
        vcfg.validate()?;
        plans.extend(plans_for(&vcfg, &out_dir.join(v.name().replace('+', "_"))));
    }
    let all = execute(&plans, cfg.workers)?;
    let n = cfg.groups.len();
    let manifests: Vec<Vec<RunManifest>> = all.chunks(n).map(<[RunManifest]>::to_vec).collect();
    let result = AblationResult { groups: cfg.groups.iter().map(|g| g.label()).collect(), manifests };
    result.write_csv(&out_dir.join("ablation.csv"))?;
    std::fs::write(out_dir.join("ablation.txt"), result.table())?;
    Ok(result)
}

// ----- sweeps -------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Heads,
    Gamma,
}

impl SweepAxis {
    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepAxis::Heads => vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0],
            SweepAxis::Gamma => vec![1.0, 2.0, 3.0, 4.0, 5.0],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Heads => "heads",
            SweepAxis::Gamma => "gamma",
        }
    }

    /// `cfg` with this axis set to `value`.
    pub fn apply(self, cfg: &ExperimentConfig, value: f64) -> anyhow::Result<ExperimentConfig> {
        let mut out = cfg.clone();
        match self {
            SweepAxis::Heads => {
                ensure!(value >= 1.0 && value.fract() == 0.0, "head count {value} is not a positive integer");
                out.model.n_heads = value as usize;
            }
            SweepAxis::Gamma => out.loss.focal.gamma = value,
        }
        Ok(out)
    }

    fn format(self, value: f64) -> String {
        match self {
            SweepAxis::Heads => format!("{}", value as usize),
            SweepAxis::Gamma => format!("{value}"),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        match s {
            "heads" => Ok(SweepAxis::Heads),
            "gamma" => Ok(SweepAxis::Gamma),
            _ => bail!("unknown sweep axis '{s}' (expected heads or gamma)"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepCell {
    pub value: f64,
    pub group: String,
    pub manifest: RunManifest,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub groups: Vec<String>,
    /// Value-major: all groups of the first value, then the next value.
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn table(&self) -> String {
        let labels: Vec<String> = self.values.iter().map(|&v| format!("{}={}", self.axis, self.axis.format(v))).collect();
        let n = self.groups.len();
        format!("Bal\n{}", pivot_table(self.axis.name(), &labels, &self.groups, |i, g| bal_of(&self.cells[i * n + g].manifest)))
    }

    pub fn write_csv(&self, path: &Path) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["axis", "value", "group", "pd", "pf", "bal"])?;
        for c in &self.cells {
            let a = c.manifest.aggregate.as_ref().context("missing aggregate")?;
            w.write_record([
                self.axis.name().to_owned(),
                self.axis.format(c.value),
                c.group.clone(),
                f3(a.pd_mean),
                f3(a.pf_mean),
                f3(a.bal_mean),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Checks every grid cell's configuration. Runs before any training.
pub fn sweep_configs(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> anyhow::Result<Vec<ExperimentConfig>> {
    ensure!(!values.is_empty(), "sweep has no values");
    if axis == SweepAxis::Heads {
        ensure!(cfg.variant.uses_attention(), "a heads sweep needs a variant with attention, not {}", cfg.variant);
    }
    values
        .iter()
        .map(|&v| {
            let c = axis.apply(cfg, v)?;
            c.validate().with_context(|| format!("{axis}={}", axis.format(v)))?;
            Ok(c)
        })
        .collect()
}

pub fn sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64], out_dir: &Path) -> anyhow::Result<SweepResult> {
    cfg.validate()?;
    require_truth(cfg, "sweep")?;
    let configs = sweep_configs(cfg, axis, values)?;
    let plans: Vec<RunPlan> = configs
        .iter()
        .zip(values)
        .flat_map(|(c, &v)| plans_for(c, &out_dir.join(format!("{axis}_{}", axis.format(v)))))
        .collect();
    let manifests = execute(&plans, cfg.workers)?;
    let n = cfg.groups.len();
    let cells = manifests
        .into_iter()
        .enumerate()
        .map(|(i, manifest)| SweepCell { value: values[i / n], group: manifest.experiment.clone(), manifest })
        .collect();
    let result = SweepResult { axis, values: values.to_vec(), groups: cfg.groups.iter().map(|g| g.label()).collect(), cells };
    result.write_csv(&out_dir.join(format!("sweep_{axis}.csv")))?;
    std::fs::write(out_dir.join(format!("sweep_{axis}.txt")), result.table())?;
    Ok(result)
}

// ----- feature-selection baselines -------------------------------------------

#[derive(Clone, Debug)]
pub struct BaselineResult {
    pub groups: Vec<String>,
    /// Indexed `[method][group]`, one report per seed.
    pub reports: Vec<Vec<Vec<EvalReport>>>,
    /// Indexed `[method][group]`: names of the kept metrics, best first.
    pub selected: Vec<Vec<Vec<String>>>,
}

impl BaselineResult {
    pub fn mean_bal(&self, m: usize, g: usize) -> f64 {
        mean(&self.reports[m][g].iter().map(|r| r.bal).collect::<Vec<_>>())
    }

    pub fn table(&self) -> String {
        let labels: Vec<String> = ScoreMethod::ALL.iter().map(|m| m.name().to_owned()).collect();
        format!("Bal\n{}", pivot_table("Method", &labels, &self.groups, |m, g| self.mean_bal(m, g)))
    }
}

/// Scores metrics on the normalized source, keeps the top `select_k`,
/// trains the linear focal-loss classifier on the oversampled source and
/// evaluates on the target.
pub fn feature_selection_baselines(cfg: &ExperimentConfig, out_dir: &Path) -> anyhow::Result<BaselineResult> {
    cfg.validate()?;
    require_truth(cfg, "baselines")?;
    std::fs::create_dir_all(out_dir)?;
    let fingerprint = cfg.fingerprint();
    let mut reports = vec![Vec::new(); ScoreMethod::ALL.len()];
    let mut selected = vec![Vec::new(); ScoreMethod::ALL.len()];
    for group in &cfg.groups {
        let prep = prepare_group(group, cfg)?;
        let truth = read_truth(group.truth.as_ref().expect("checked"))?;
        let p = prep.source.n_metrics();
        let k = cfg.select_k.unwrap_or(p.div_ceil(2)).min(p);
        // scoring uses every row as a ReliefF probe, so it does not depend on the seed
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        let scores = ScoreMethod::ALL
            .iter()
            .map(|&method| stage("score", score_features(method, &prep.source, &mut unused).and_then(|s| s.select(k))))
            .collect::<anyhow::Result<Vec<_>>>()?;
        let cells: Vec<(usize, u64)> = (0..scores.len()).flat_map(|m| cfg.seeds.iter().map(move |&s| (m, s))).collect();
        let results: Vec<anyhow::Result<EvalReport>> = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build()?.install(|| {
            cells
                .par_iter()
                .map(|&(m, seed)| {
                    let selected = &scores[m].selected;
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let source = stage("oversample", random_oversample(&prep.source, &mut rng))?;
                    let train = stage("select", source.select_columns(selected))?;
                    let test = stage("select", prep.target.select_columns(selected))?;
                    let tc = TrainConfig { seed, ..cfg.train.clone() };
                    let pred = stage("fit", linear_focal_classifier(&train, &test, &tc, &cfg.loss.focal, cfg.threshold))?;
                    let id = format!("{} {}", prep.label, scores[m].method.name());
                    stage("evaluate", EvalReport::new(id, &fingerprint, seed, &pred, &truth))
                })
                .collect()
        });
        let results = results.into_iter().collect::<anyhow::Result<Vec<_>>>()?;
        for (m, chunk) in results.chunks(cfg.seeds.len()).enumerate() {
            reports[m].push(chunk.to_vec());
            selected[m].push(scores[m].selected.iter().map(|&j| prep.source.metric_names()[j].clone()).collect());
        }
    }
    let result = BaselineResult { groups: cfg.groups.iter().map(|g| g.label()).collect(), reports, selected };
    let mut w = csv::Writer::from_path(out_dir.join("baselines.csv"))?;
    w.write_record(["method", "group", "seed", "pd", "pf", "bal", "selected"])?;
    for (m, per_group) in result.reports.iter().enumerate() {
        for (g, seeds) in per_group.iter().enumerate() {
            for r in seeds {
                w.write_record([
                    ScoreMethod::ALL[m].name().to_owned(),
                    result.groups[g].clone(),
                    r.seed.to_string(),
                    f3(r.pd),
                    f3(r.pf),
                    f3(r.bal),
                    result.selected[m][g].join(" "),
                ])?;
            }
        }
    }
    w.flush()?;
    std::fs::write(out_dir.join("baselines.txt"), result.table())?;
    Ok(result)
}

// ----- data tools -------------------------------------------------------------

pub fn analyze(data: &Path, label_column: Option<&str>, rho_abs_min: f64, alpha: f64, out_dir: &Path) -> anyhow::Result<CorrelationReport> {
    let d = stage("load", load_csv(data, label_column))?;
    let report = stage("correlate", correlation_report(&d, rho_abs_min, alpha))?;
    std::fs::create_dir_all(out_dir)?;
    let stem = d.project_id().to_owned();
    stage("write", report.write_csv(out_dir.join(format!("{stem}_correlations.csv"))))?;
    let mut table = Vec::new();
    report.write_table(&mut table)?;
    std::fs::write(out_dir.join(format!("{stem}_correlations.txt")), table)?;
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct SynthFiles {
    pub source: PathBuf,
    pub target: PathBuf,
    pub truth: PathBuf,
}

/// Writes `source.csv` (labeled), `target.csv` (no labels) and
/// `truth.csv` (`row,label` for the target).
pub fn gen_synth(cfg: &SynthConfig, label_column: &str, out_dir: &Path) -> anyhow::Result<SynthFiles> {
    let (source, target) = stage("generate", synth_generate(cfg))?;
    std::fs::create_dir_all(out_dir)?;
    let files = SynthFiles { source: out_dir.join("source.csv"), target: out_dir.join("target.csv"), truth: out_dir.join("truth.csv") };
    stage("write", source.write_csv(&files.source, Some(label_column)))?;
    stage("write", target.without_labels().write_csv(&files.target, None))?;
    let mut w = csv::Writer::from_path(&files.truth)?;
    w.write_record(["row", "label"])?;
    for (i, l) in target.labels().expect("generated with labels").iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])?;
    }
    w.flush()?;
    std::fs::write(out_dir.join("synth_config.json"), serde_json::to_string_pretty(cfg)? + "\n")?;
    Ok(files)
}
