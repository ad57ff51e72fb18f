use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Tensor};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{focal_loss_from_logits, FocalConfig};
use crate::model::{kaiming_bound, predict, N_CLASSES};
use crate::train::{lr_schedule, sgd_step, LogRow, TrainConfig, TrainingLog};

/// Single affine map from metrics to two class logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    /// `[p, 2]`
    pub weight: Tensor,
    /// `[2]`
    pub bias: Tensor,
}

impl LinearClassifier {
    pub fn init<R: Rng + ?Sized>(p: usize, rng: &mut R) -> Result<Self> {
        let bound = kaiming_bound(p.max(1));
        let w = (0..p * N_CLASSES).map(|_| rng.random_range(-bound..bound)).collect();
        Ok(Self { weight: Tensor::new(vec![p, N_CLASSES], w)?, bias: Tensor::zeros(vec![N_CLASSES]) })
    }

    pub fn logits(&self, data: &Dataset) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(data.to_tensor());
        let w = tape.constant(self.weight.clone());
        let b = tape.constant(self.bias.clone());
        let z = tape.matmul(x, w)?;
        let z = tape.add(z, b)?;
        Ok(tape.value(z).clone())
    }

    pub fn predict(&self, data: &Dataset, threshold: f64) -> Result<Vec<u8>> {
        Ok(predict(&self.logits(data)?, threshold))
    }
}

/// Trains the linear classifier with focal loss under the same SGD regime
/// as the transformer (no alignment term). Only `batch_source` sets the
/// batch size.
pub fn fit_linear(train: &Dataset, train_cfg: &TrainConfig, focal: &FocalConfig) -> Result<(LinearClassifier, TrainingLog)> {
    train_cfg.validate()?;
    focal.validate()?;
    let labels = train.require_labels()?;
    if train.n_rows() == 0 {
        return Err(Error::contract("training set is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let p = train.n_metrics();
    let mut model = LinearClassifier::init(p, &mut rng)?;
    let mut velocity = [Tensor::zeros(vec![p, N_CLASSES]), Tensor::zeros(vec![N_CLASSES])];
    let bs = train_cfg.batch_source.min(train.n_rows());
    let mut order: Vec<usize> = (0..train.n_rows()).collect();
    let mut log = TrainingLog::default();
    let mut step = 0;
    for epoch in 0..train_cfg.epochs {
        let lr = lr_schedule(epoch, train_cfg);
        order.shuffle(&mut rng);
        for chunk in order.chunks(bs) {
            let batch = train.select_rows(chunk);
            let batch_labels: Vec<u8> = chunk.iter().map(|&r| labels[r]).collect();
            let mut tape = Tape::new();
            let x = tape.constant(batch.to_tensor());
            let w = tape.param(model.weight.clone());
            let b = tape.param(model.bias.clone());
            let z = tape.matmul(x, w)?;
            let z = tape.add(z, b)?;
            let loss = focal_loss_from_logits(&mut tape, z, &batch_labels, focal)?;
            let value = tape.value(loss).item()?;
            let grads = tape.backward(loss)?;
            let [vw, vb] = &mut velocity;
            sgd_step(vec![&mut model.weight, &mut model.bias], vec![vw, vb], &[grads.wrt(w), grads.wrt(b)], lr, train_cfg, step)?;
            log.rows.push(LogRow { step, epoch, lr, lambda: 0.0, focal: value, mmd: 0.0, total: value });
            step += 1;
        }
    }
    Ok((model, log))
}

/// Fits on `train` and returns hard predictions for `test`.
pub fn linear_focal_classifier(train: &Dataset, test: &Dataset, train_cfg: &TrainConfig, focal: &FocalConfig, threshold: f64) -> Result<Vec<u8>> {
    if train.n_metrics() != test.n_metrics() {
        return Err(Error::schema(format!("train has {} metrics, test has {}", train.n_metrics(), test.n_metrics())));
    }
    let (model, _) = fit_linear(train, train_cfg, focal)?;
    model.predict(test, threshold)
}
