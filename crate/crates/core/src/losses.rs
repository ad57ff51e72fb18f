//! Focal loss, RBF-kernel MMD with a median-heuristic bandwidth, the
//! alignment weight ramp and the composite training objective.

use serde::{Deserialize, Serialize};

use crate::autograd::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::model::ReprChoice;

/// Floor applied to `p_t` before taking its logarithm.
pub const PROB_FLOOR: f64 = 1e-12;
/// Bandwidth used when every pooled point coincides.
pub const SIGMA_FALLBACK: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FocalConfig {
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self { gamma: 2.0, alpha: 1.0 }
    }
}

impl FocalConfig {
    /// Plain cross-entropy.
    pub fn cross_entropy() -> Self {
        Self { gamma: 0.0, alpha: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.alpha > 0.0) {
            return Err(Error::config(format!(
                "focal loss needs gamma >= 0 and alpha > 0, got gamma={} alpha={}",
                self.gamma, self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum SigmaPolicy {
    /// Median pairwise distance of the pooled batch, recomputed per call.
    Median,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MmdConfig {
    pub sigma: SigmaPolicy,
    pub repr: ReprChoice,
}

impl Default for MmdConfig {
    fn default() -> Self {
        Self { sigma: SigmaPolicy::Median, repr: ReprChoice::Cls }
    }
}

impl MmdConfig {
    pub fn validate(&self) -> Result<()> {
        if let SigmaPolicy::Fixed(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::config(format!("fixed sigma must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

/// Alignment weight ramp `lambda_max * (2 / (1 + exp(-steepness * t)) - 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossSchedule {
    pub lambda_max: f64,
    pub steepness: f64,
}

impl Default for LossSchedule {
    fn default() -> Self {
        Self { lambda_max: 1.0, steepness: 10.0 }
    }
}

impl LossSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_max >= 0.0 && self.steepness >= 0.0) {
            return Err(Error::config("lambda_max and steepness must be nonnegative"));
        }
        Ok(())
    }
}

/// Weight of the MMD term at training progress `progress` in `[0, 1]`.
/// Out-of-range progress is clamped.
pub fn lambda_schedule(progress: f64, sched: &LossSchedule) -> f64 {
    let t = if (0.0..=1.0).contains(&progress) {
        progress
    } else {
        log::warn!("lambda schedule progress {progress} outside [0, 1]; clamping");
        progress.clamp(0.0, 1.0)
    };
    sched.lambda_max * (2.0 / (1.0 + (-sched.steepness * t).exp()) - 1.0)
}

/// Mean focal loss `-alpha (1 - p_t)^gamma log(p_t)` over a vector of
/// true-class probabilities.
pub fn focal_loss(tape: &mut Tape, p_true: NodeId, cfg: &FocalConfig) -> Result<NodeId> {
    if tape.value(p_true).is_empty() {
        return Err(Error::contract("focal loss of an empty batch"));
    }
    let p = tape.clamp_min(p_true, PROB_FLOOR);
    let log_p = tape.log(p);
    let per_sample = if cfg.gamma == 0.0 {
        log_p
    } else {
        let q = tape.neg(p);
        let q = tape.add_scalar(q, 1.0);
        let q = tape.clamp_min(q, 0.0);
        let modulating = tape.powf(q, cfg.gamma);
        tape.mul(modulating, log_p)?
    };
    let mean = tape.mean(per_sample)?;
    Ok(tape.mul_scalar(mean, -cfg.alpha))
}

/// Focal loss on `[N, 2]` logits against integer labels.
pub fn focal_loss_from_logits(tape: &mut Tape, logits: NodeId, labels: &[u8], cfg: &FocalConfig) -> Result<NodeId> {
    let probs = tape.softmax(logits, 1)?;
    let index: Vec<usize> = labels.iter().map(|&l| usize::from(l)).collect();
    let p_true = tape.pick(probs, &index)?;
    focal_loss(tape, p_true, cfg)
}

/// Focal loss value for plain probabilities.
pub fn focal_loss_value(p_true: &[f64], cfg: &FocalConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::new(vec![p_true.len()], p_true.to_vec())?);
    let loss = focal_loss(&mut tape, p, cfg)?;
    tape.value(loss).item()
}

fn rows_of(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [n, d] => Ok((*n, *d)),
        s => Err(Error::shape(format!("expected a [n, d] point set, got {s:?}"))),
    }
}

/// Median of all pairwise Euclidean distances over the pooled point sets
/// (self-pairs excluded; even counts average the two middle values).
pub fn median_sigma(xs: &Tensor, xt: &Tensor) -> Result<f64> {
    let (ns, d) = rows_of(xs)?;
    let (nt, d2) = rows_of(xt)?;
    if d != d2 {
        return Err(Error::shape(format!("point dimensions {d} and {d2} differ")));
    }
    let points: Vec<&[f64]> = (0..ns).map(|i| xs.row(i)).chain((0..nt).map(|i| xt.row(i))).collect();
    if points.len() < 2 {
        return Err(Error::contract("median_sigma needs at least two points"));
    }
    let mut dists = Vec::with_capacity(points.len() * (points.len() - 1) / 2);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            dists.push(points[i].iter().zip(points[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt());
        }
    }
    let m = dists.len();
    let upper = *dists.select_nth_unstable_by(m / 2, f64::total_cmp).1;
    let median = if m % 2 == 1 {
        upper
    } else {
        let lower = dists[..m / 2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lower + upper) / 2.0
    };
    Ok(if median > 0.0 { median } else { SIGMA_FALLBACK })
}

/// Biased (V-statistic) squared MMD between two `[n, d]` point sets with
/// the RBF kernel `exp(-|x - y|^2 / (2 sigma^2))`.
///
/// The cross term averages both orientations, so swapping the arguments
/// gives a bit-identical result.
pub fn mmd_rbf(tape: &mut Tape, xs: NodeId, xt: NodeId, sigma: f64) -> Result<NodeId> {
    if !(sigma > 0.0) {
        return Err(Error::config(format!("kernel bandwidth must be positive, got {sigma}")));
    }
    let scale = -1.0 / (2.0 * sigma * sigma);
    let mut kernel_mean = |a: NodeId, b: NodeId| -> Result<NodeId> {
        let d = tape.sq_dist(a, b)?;
        let k = tape.mul_scalar(d, scale);
        let k = tape.exp(k);
        tape.mean(k)
    };
    let kss = kernel_mean(xs, xs)?;
    let ktt = kernel_mean(xt, xt)?;
    let kst = kernel_mean(xs, xt)?;
    let kts = kernel_mean(xt, xs)?;
    let within = tape.add(kss, ktt)?;
    let cross = tape.add(kst, kts)?;
    tape.sub(within, cross)
}

/// `mmd_rbf` on plain tensors.
pub fn mmd_rbf_value(xs: &Tensor, xt: &Tensor, sigma: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.constant(xs.clone());
    let b = tape.constant(xt.clone());
    let m = mmd_rbf(&mut tape, a, b, sigma)?;
    tape.value(m).item()
}

/// Resolves the kernel bandwidth for a batch.
pub fn resolve_sigma(policy: SigmaPolicy, xs: &Tensor, xt: &Tensor) -> Result<f64> {
    match policy {
        SigmaPolicy::Median => median_sigma(xs, xt),
        SigmaPolicy::Fixed(s) => Ok(s),
    }
}

/// Loss handles and logged components of one training step.
#[derive(Clone, Debug)]
pub struct CompositeLoss {
    pub total: NodeId,
    pub focal: f64,
    pub mmd: f64,
    pub lambda: f64,
    pub sigma: f64,
}

/// `focal(p_t) + lambda(progress) * mmd(source_repr, target_repr)`.
///
/// The bandwidth is computed from the current representations and is not
/// differentiated through.
#[allow(clippy::too_many_arguments)]
pub fn composite_loss(
    tape: &mut Tape,
    source_p_true: NodeId,
    source_repr: NodeId,
    target_repr: NodeId,
    progress: f64,
    focal_cfg: &FocalConfig,
    mmd_cfg: &MmdConfig,
    sched: &LossSchedule,
) -> Result<CompositeLoss> {
    let focal = focal_loss(tape, source_p_true, focal_cfg)?;
    let sigma = resolve_sigma(mmd_cfg.sigma, tape.value(source_repr), tape.value(target_repr))?;
    let mmd = mmd_rbf(tape, source_repr, target_repr, sigma)?;
    let lambda = lambda_schedule(progress, sched);
    let weighted = tape.mul_scalar(mmd, lambda);
    let total = tape.add(focal, weighted)?;
    Ok(CompositeLoss {
        total,
        focal: tape.value(focal).item()?,
        mmd: tape.value(mmd).item()?,
        lambda,
        sigma,
    })
}
