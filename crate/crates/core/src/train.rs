//! Mini-batch SGD with momentum and L2 weight decay over paired source and
//! target batches.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{NodeId, Tape, Tensor};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{composite_loss, CompositeLoss, FocalConfig, LossSchedule, MmdConfig};
use crate::model::{forward_on_tape, init_params, predict, representation, ModelConfig, ModelParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_source: usize,
    pub batch_target: usize,
    pub lr0: f64,
    /// Multiplicative learning-rate decay applied once per epoch.
    pub lr_decay_per_epoch: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub dropout_enabled: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_source: 64,
            batch_target: 64,
            lr0: 1e-3,
            lr_decay_per_epoch: 0.98,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            dropout_enabled: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) {
            return Err(Error::config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.lr_decay_per_epoch > 0.0 && self.lr_decay_per_epoch <= 1.0) {
            return Err(Error::config(format!("lr_decay_per_epoch must lie in (0, 1], got {}", self.lr_decay_per_epoch)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config(format!("weight_decay must be nonnegative, got {}", self.weight_decay)));
        }
        if self.epochs == 0 || self.batch_source == 0 || self.batch_target == 0 {
            return Err(Error::config("epochs and batch sizes must be positive"));
        }
        Ok(())
    }
}

/// Loss settings for the composite objective.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub focal: FocalConfig,
    pub mmd: MmdConfig,
    pub schedule: LossSchedule,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        self.focal.validate()?;
        self.mmd.validate()?;
        self.schedule.validate()
    }
}

/// `lr0 * decay^epoch`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * cfg.lr_decay_per_epoch.powi(epoch as i32)
}

/// One momentum step over parallel lists of parameters, velocity buffers
/// and gradients:
/// `v <- momentum * v + (g + weight_decay * theta)`, `theta <- theta - lr * v`.
pub fn sgd_step(
    params: Vec<&mut Tensor>,
    velocity: Vec<&mut Tensor>,
    grads: &[&Tensor],
    lr: f64,
    cfg: &TrainConfig,
    step: usize,
) -> Result<()> {
    if params.len() != velocity.len() || params.len() != grads.len() {
        return Err(Error::contract(format!(
            "{} parameters, {} velocity buffers, {} gradients",
            params.len(),
            velocity.len(),
            grads.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.all_finite()) {
        return Err(Error::NonFinite { step, what: format!("gradient of parameter #{i}") });
    }
    for ((theta, v), g) in params.into_iter().zip(velocity).zip(grads) {
        if theta.shape() != g.shape() || theta.shape() != v.shape() {
            return Err(Error::shape(format!("gradient {:?} for parameter {:?}", g.shape(), theta.shape())));
        }
        for ((t, vel), gi) in theta.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vel = cfg.momentum * *vel + (gi + cfg.weight_decay * *t);
            *t -= lr * *vel;
        }
    }
    Ok(())
}

/// Parameters, momentum buffers and counters of a training run.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: ModelParams,
    pub velocity: ModelParams,
    pub epoch: usize,
    pub step: usize,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(model_cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_params(model_cfg, &mut rng)?;
        let velocity = params.map(|_, t| Tensor::zeros(t.shape().to_vec()));
        Ok(Self { params, velocity, epoch: 0, step: 0, rng })
    }

    pub fn apply(&mut self, grads: &ModelParams, lr: f64, cfg: &TrainConfig) -> Result<()> {
        let g = grads.values();
        sgd_step(self.params.values_mut(), self.velocity.values_mut(), &g, lr, cfg, self.step)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub lambda: f64,
    pub focal: f64,
    pub mmd: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    /// Mean focal loss per epoch.
    pub fn epoch_focal_means(&self) -> Vec<f64> {
        let mut sums: Vec<(f64, usize)> = Vec::new();
        for r in &self.rows {
            if sums.len() <= r.epoch {
                sums.resize(r.epoch + 1, (0.0, 0));
            }
            sums[r.epoch].0 += r.focal;
            sums[r.epoch].1 += 1;
        }
        sums.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Records one training objective on `tape`. The first `n_source` rows of
/// `x` are labeled source rows, the rest are target rows; both go through
/// a single forward pass.
#[allow(clippy::too_many_arguments)]
pub fn training_objective<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: &Tensor,
    n_source: usize,
    labels: &[u8],
    params: &ModelParams<NodeId>,
    model_cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    progress: f64,
    training: bool,
    rng: &mut R,
) -> Result<CompositeLoss> {
    let n = x.shape()[0];
    if labels.len() != n_source || n_source == 0 || n_source >= n {
        return Err(Error::contract(format!("{n} rows, {n_source} source rows, {} labels", labels.len())));
    }
    let out = forward_on_tape(tape, x, params, model_cfg, training, rng)?;
    let src_logits = tape.slice(out.logits, 0, 0, n_source)?;
    let probs = tape.softmax(src_logits, 1)?;
    let index: Vec<usize> = labels.iter().map(|&l| usize::from(l)).collect();
    let p_true = tape.pick(probs, &index)?;
    let repr = representation(tape, &out, loss_cfg.mmd.repr)?;
    let src_repr = tape.slice(repr, 0, 0, n_source)?;
    let tgt_repr = tape.slice(repr, 0, n_source, n - n_source)?;
    composite_loss(tape, p_true, src_repr, tgt_repr, progress, &loss_cfg.focal, &loss_cfg.mmd, &loss_cfg.schedule)
}

/// Trains from scratch on a normalized, oversampled labeled source and a
/// normalized unlabeled target.
///
/// Every step draws `batch_source` source rows in epoch-shuffled order and
/// `batch_target` target rows uniformly with replacement, runs both through
/// the same parameters and minimizes the composite loss with progress
/// measured in optimizer steps. The run is a pure function of its inputs.
pub fn fit(
    source: &Dataset,
    target: &Dataset,
    model_cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
) -> Result<(ModelParams, TrainingLog)> {
    model_cfg.validate()?;
    loss_cfg.validate()?;
    train_cfg.validate()?;
    source.check_same_schema(target)?;
    if target.labels().is_some() {
        return Err(Error::contract("target dataset must be passed without labels"));
    }
    let labels = source.require_labels()?;
    if source.n_metrics() != model_cfg.p {
        return Err(Error::config(format!(
            "model configured for {} metrics, data has {}",
            model_cfg.p,
            source.n_metrics()
        )));
    }
    if source.n_rows() == 0 || target.n_rows() == 0 {
        return Err(Error::contract("source and target must be nonempty"));
    }
    if let Some((neg, pos)) = source.class_counts() {
        if neg != pos {
            log::warn!("source classes are unbalanced ({neg} / {pos})");
        }
    }

    let mut state = TrainState::new(model_cfg, train_cfg.seed)?;
    let bs = train_cfg.batch_source.min(source.n_rows());
    let steps_per_epoch = source.n_rows().div_ceil(bs);
    let total_steps = (train_cfg.epochs * steps_per_epoch) as f64;
    let p = model_cfg.p;
    let mut log = TrainingLog::default();
    let mut order: Vec<usize> = (0..source.n_rows()).collect();

    for epoch in 0..train_cfg.epochs {
        state.epoch = epoch;
        let lr = lr_schedule(epoch, train_cfg);
        order.shuffle(&mut state.rng);
        for chunk in order.chunks(bs) {
            let target_rows: Vec<usize> =
                (0..train_cfg.batch_target).map(|_| state.rng.random_range(0..target.n_rows())).collect();
            let (ns, nt) = (chunk.len(), target_rows.len());
            let mut x = Vec::with_capacity((ns + nt) * p);
            for &r in chunk {
                x.extend_from_slice(source.row(r));
            }
            for &r in &target_rows {
                x.extend_from_slice(target.row(r));
            }
            let x = Tensor::new(vec![ns + nt, p], x)?;
            let batch_labels: Vec<u8> = chunk.iter().map(|&r| labels[r]).collect();

            let mut tape = Tape::new();
            let bound = state.params.bind(&mut tape);
            let progress = state.step as f64 / total_steps;
            let loss = training_objective(
                &mut tape,
                &x,
                ns,
                &batch_labels,
                &bound,
                model_cfg,
                loss_cfg,
                progress,
                train_cfg.dropout_enabled,
                &mut state.rng,
            )?;
            let total = tape.value(loss.total).item()?;
            if !total.is_finite() {
                return Err(Error::NonFinite {
                    step: state.step,
                    what: format!("loss (focal {}, mmd {}, lambda {})", loss.focal, loss.mmd, loss.lambda),
                });
            }
            let grads = tape.backward(loss.total)?;
            let grads = bound.map(|_, id| grads.wrt(*id).clone());
            state.apply(&grads, lr, train_cfg)?;
            log.rows.push(LogRow {
                step: state.step,
                epoch,
                lr,
                lambda: loss.lambda,
                focal: loss.focal,
                mmd: loss.mmd,
                total,
            });
            state.step += 1;
        }
    }
    Ok((state.params, log))
}

/// Inference-mode logits for every row, computed in batches.
pub fn predict_logits(params: &ModelParams, model_cfg: &ModelConfig, data: &Dataset, batch: usize) -> Result<Tensor> {
    let p = data.n_metrics();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::with_capacity(data.n_rows() * 2);
    let rows: Vec<usize> = (0..data.n_rows()).collect();
    for chunk in rows.chunks(batch.max(1)) {
        let mut x = Vec::with_capacity(chunk.len() * p);
        for &r in chunk {
            x.extend_from_slice(data.row(r));
        }
        let x = Tensor::new(vec![chunk.len(), p], x)?;
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let fwd = forward_on_tape(&mut tape, &x, &bound, model_cfg, false, &mut rng)?;
        out.extend_from_slice(tape.value(fwd.logits).data());
    }
    Tensor::new(vec![data.n_rows(), 2], out)
}

/// Hard labels for every row of `data`.
pub fn predict_dataset(params: &ModelParams, model_cfg: &ModelConfig, data: &Dataset, threshold: f64) -> Result<Vec<u8>> {
    Ok(predict(&predict_logits(params, model_cfg, data, 256)?, threshold))
}
