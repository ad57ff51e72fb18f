//! Experiment configuration: one JSON document with full defaulting, plus
//! command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, ensure, Context};
use arft_core::data::DEFAULT_NORMALIZE_EPS;
use arft_core::losses::FocalConfig;
use arft_core::model::{Architecture, ModelConfig, DEFAULT_THRESHOLD};
use arft_core::train::{LossConfig, TrainConfig};
use serde::{Deserialize, Serialize};

/// Model/loss combinations compared in the ablation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Attention, focal loss and MMD alignment.
    #[default]
    #[serde(rename = "arft")]
    Arft,
    /// Attention removed, plain cross-entropy.
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "baseline+attent")]
    BaselineAttent,
    #[serde(rename = "baseline+focal")]
    BaselineFocal,
}

impl Variant {
    /// Ablation order.
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::BaselineFocal, Variant::BaselineAttent, Variant::Arft];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Arft => "arft",
            Variant::Baseline => "baseline",
            Variant::BaselineAttent => "baseline+attent",
            Variant::BaselineFocal => "baseline+focal",
        }
    }

    pub fn uses_attention(self) -> bool {
        matches!(self, Variant::Arft | Variant::BaselineAttent)
    }

    pub fn uses_focal(self) -> bool {
        matches!(self, Variant::Arft | Variant::BaselineFocal)
    }

    /// Model and loss settings this variant actually trains with. Variants
    /// without focal loss use cross-entropy (gamma 0, alpha 1).
    pub fn resolve(self, model: &ModelConfig, loss: &LossConfig) -> (ModelConfig, LossConfig) {
        let mut model = model.clone();
        let mut loss = loss.clone();
        model.architecture = if self.uses_attention() { Architecture::Transformer } else { Architecture::FeedForward };
        if !self.uses_focal() {
            loss.focal = FocalConfig::cross_entropy();
        }
        (model, loss)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .with_context(|| format!("unknown variant '{s}' (expected arft, baseline, baseline+attent or baseline+focal)"))
    }
}

/// One transfer setting: labeled source projects and an unlabeled target.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Group {
    /// Display name such as `LH=>M`; derived from project ids when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub sources: Vec<PathBuf>,
    pub target: PathBuf,
    /// Ground-truth labels for the target, used only by the evaluation step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
}

impl Group {
    pub fn validate(&self) -> anyhow::Result<()> {
        ensure!(!self.sources.is_empty(), "a group needs at least one source project");
        ensure!(
            !self.sources.contains(&self.target),
            "target {} is also listed as a source",
            self.target.display()
        );
        Ok(())
    }

    /// `name`, or source file stems joined with `+`, then `=>` and the
    /// target stem.
    pub fn label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        let stem = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let sources: Vec<String> = self.sources.iter().map(|p| stem(p)).collect();
        format!("{}=>{}", sources.join("+"), stem(&self.target))
    }

    /// Label made safe for use as a directory name.
    pub fn dir_name(&self) -> String {
        self.label().replace("=>", "_to_").chars().map(|c| if c.is_alphanumeric() || "-_+.".contains(c) { c } else { '_' }).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub groups: Vec<Group>,
    pub variant: Variant,
    /// `p` is taken from the data at run time.
    pub model: ModelConfig,
    pub loss: LossConfig,
    /// `seed` is replaced by each entry of `seeds`.
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub label_column: String,
    pub threshold: f64,
    pub normalize_eps: f64,
    /// Metrics kept by the feature-selection baselines; half of them when
    /// absent.
    pub select_k: Option<usize>,
    /// Concurrent grid cells; 0 uses one per core.
    pub workers: usize,
    pub save_checkpoints: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            groups: Vec::new(),
            variant: Variant::Arft,
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            seeds: vec![0, 1, 2, 3, 4],
            label_column: "label".into(),
            threshold: DEFAULT_THRESHOLD,
            normalize_eps: DEFAULT_NORMALIZE_EPS,
            select_k: None,
            workers: 0,
            save_checkpoints: false,
        }
    }
}

impl ExperimentConfig {
    /// Reads a config document. A run manifest is accepted too, in which
    /// case its recorded config is used.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let value = match value.get("config") {
            Some(inner) if value.get("tool_version").is_some() => inner.clone(),
            _ => value,
        };
        serde_json::from_value(value).with_context(|| format!("invalid config in {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        ensure!(!self.seeds.is_empty(), "seed list is empty");
        ensure!(!self.groups.is_empty(), "no source/target group configured");
        for g in &self.groups {
            g.validate()?;
        }
        ensure!((0.0..1.0).contains(&self.threshold), "threshold must lie in [0, 1)");
        ensure!(self.normalize_eps > 0.0, "normalize_eps must be positive");
        self.train.validate()?;
        self.loss.validate()?;
        // p comes from the data; everything else can be checked now
        let (model, loss) = self.variant.resolve(&self.model, &self.loss);
        model.validate()?;
        loss.validate()?;
        if self.select_k == Some(0) {
            bail!("select_k must be positive");
        }
        Ok(())
    }

    /// Same experiment restricted to one group.
    pub fn for_group(&self, group: &Group) -> Self {
        Self { groups: vec![group.clone()], ..self.clone() }
    }

    /// Stable hash of everything that affects results (paths and worker
    /// count excluded).
    pub fn fingerprint(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("groups");
            obj.remove("workers");
            obj.remove("save_checkpoints");
        }
        format!("{:016x}", fnv1a(v.to_string().as_bytes()))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct Overrides {
    /// Source project CSV (repeatable); replaces the configured groups.
    #[arg(long = "source")]
    pub sources: Vec<PathBuf>,
    /// Target project CSV, read without labels.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Ground-truth labels for the target.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr0: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_source: Option<usize>,
    #[arg(long)]
    pub batch_target: Option<usize>,
    #[arg(long)]
    pub d_token: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub lambda_max: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub label_column: Option<String>,
    #[arg(long)]
    pub select_k: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub save_checkpoints: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> anyhow::Result<()> {
        if !self.sources.is_empty() || self.target.is_some() {
            let target = self.target.clone().context("--source needs --target")?;
            ensure!(!self.sources.is_empty(), "--target needs at least one --source");
            cfg.groups = vec![Group { name: None, sources: self.sources.clone(), target, truth: self.truth.clone() }];
        } else if let Some(truth) = &self.truth {
            ensure!(cfg.groups.len() == 1, "--truth without --target needs exactly one configured group");
            cfg.groups[0].truth = Some(truth.clone());
        }
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value.clone() {
                    $field = v;
                }
            };
        }
        set!(cfg.variant, self.variant);
        set!(cfg.seeds, self.seeds);
        set!(cfg.train.epochs, self.epochs);
        set!(cfg.train.lr0, self.lr0);
        set!(cfg.train.lr_decay_per_epoch, self.lr_decay);
        set!(cfg.train.momentum, self.momentum);
        set!(cfg.train.weight_decay, self.weight_decay);
        set!(cfg.train.batch_source, self.batch_source);
        set!(cfg.train.batch_target, self.batch_target);
        set!(cfg.model.d_token, self.d_token);
        set!(cfg.model.n_heads, self.heads);
        set!(cfg.model.n_layers, self.layers);
        set!(cfg.model.dropout_rate, self.dropout);
        set!(cfg.loss.focal.gamma, self.gamma);
        set!(cfg.loss.focal.alpha, self.alpha);
        set!(cfg.loss.schedule.lambda_max, self.lambda_max);
        set!(cfg.threshold, self.threshold);
        set!(cfg.label_column, self.label_column);
        set!(cfg.workers, self.workers);
        if self.select_k.is_some() {
            cfg.select_k = self.select_k;
        }
        if self.save_checkpoints {
            cfg.save_checkpoints = true;
        }
        Ok(())
    }
}

/// Config file (if any) with overrides applied.
pub fn resolve_config(path: Option<&Path>, overrides: &Overrides) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    overrides.apply(&mut cfg)?;
    Ok(cfg)
}
