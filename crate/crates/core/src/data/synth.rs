//! Synthetic source/target projects with correlated metrics, rare
//! positives and a controllable covariate shift.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, ARB_FREE, ARB_PRONE};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_source: usize,
    pub n_target: usize,
    pub p: usize,
    /// Probability of the ARB-prone class, in (0, 0.5).
    pub positive_rate: f64,
    /// Scale of the affine map applied to the target; 0 means no shift.
    pub shift_strength: f64,
    pub seed: u64,
    /// Mahalanobis distance between the class means.
    pub class_separation: f64,
    /// How far the ARB-prone correlation structure departs from the
    /// ARB-free one, in [0, 1].
    pub interaction_strength: f64,
    /// Rank of the latent factor model behind the metric correlations.
    pub latent_factors: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_source: 2000,
            n_target: 800,
            p: 20,
            positive_rate: 0.05,
            shift_strength: 0.5,
            seed: 0,
            class_separation: 2.0,
            interaction_strength: 0.8,
            latent_factors: 3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.positive_rate > 0.0 && self.positive_rate < 0.5) {
            return Err(Error::config(format!("positive_rate must lie in (0, 0.5), got {}", self.positive_rate)));
        }
        if self.p < 2 {
            return Err(Error::config(format!("p must be at least 2, got {}", self.p)));
        }
        if self.shift_strength < 0.0 || !self.shift_strength.is_finite() {
            return Err(Error::config(format!("shift_strength must be finite and nonnegative, got {}", self.shift_strength)));
        }
        if !(0.0..=1.0).contains(&self.interaction_strength) {
            return Err(Error::config(format!("interaction_strength must lie in [0, 1], got {}", self.interaction_strength)));
        }
        if self.class_separation < 0.0 || self.latent_factors == 0 {
            return Err(Error::config("class_separation must be nonnegative and latent_factors positive"));
        }
        if self.n_source == 0 || self.n_target == 0 {
            return Err(Error::config("n_source and n_target must be positive"));
        }
        Ok(())
    }
}

type Matrix = Vec<Vec<f64>>;

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Correlation matrix of a factor model `A A^T + 0.3 I`.
fn correlation_from_loadings(loadings: &Matrix) -> Matrix {
    let p = loadings.len();
    let mut s = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in 0..p {
            s[i][j] = loadings[i].iter().zip(&loadings[j]).map(|(a, b)| a * b).sum::<f64>() + if i == j { 0.3 } else { 0.0 };
        }
    }
    let d: Vec<f64> = (0..p).map(|i| s[i][i].sqrt()).collect();
    for i in 0..p {
        for j in 0..p {
            s[i][j] /= d[i] * d[j];
        }
    }
    s
}

fn cholesky(a: &Matrix) -> Matrix {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                l[i][j] = (a[i][i] - s).max(1e-12).sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    l
}

fn mat_vec(m: &Matrix, v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

struct ClassModel {
    mean: Vec<f64>,
    chol: Matrix,
}

impl ClassModel {
    fn draw<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.mean.len()).map(|_| normal(rng)).collect();
        mat_vec(&self.chol, &z).iter().zip(&self.mean).map(|(a, m)| a + m).collect()
    }
}

/// Draws a labeled source project and a labeled target project (the
/// target labels are ground truth for evaluation only).
///
/// Both classes are Gaussian. The ARB-prone class has its mean offset by
/// `class_separation` (Mahalanobis, under the ARB-free covariance) and its
/// own correlation structure. The target is the source distribution pushed
/// through `x -> D (I + G) x + b` whose magnitude scales with
/// `shift_strength`; class priors are preserved.
pub fn synth_generate(cfg: &SynthConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let p = cfg.p;
    let r = cfg.latent_factors;

    let base: Matrix = (0..p).map(|_| (0..r).map(|_| normal(&mut rng)).collect()).collect();
    let other: Matrix = (0..p).map(|_| (0..r).map(|_| normal(&mut rng)).collect()).collect();
    let beta = cfg.interaction_strength;
    let mixed: Matrix = base
        .iter()
        .zip(&other)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (1.0 - beta) * x + beta * y).collect())
        .collect();
    let chol0 = cholesky(&correlation_from_loadings(&base));
    let chol1 = cholesky(&correlation_from_loadings(&mixed));

    let direction: Vec<f64> = (0..p).map(|_| normal(&mut rng)).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    let offset: Vec<f64> = mat_vec(&chol0, &direction).iter().map(|v| v * cfg.class_separation / norm).collect();

    let classes = [
        ClassModel { mean: vec![0.0; p], chol: chol0 },
        ClassModel { mean: offset, chol: chol1 },
    ];

    let s = cfg.shift_strength;
    let scale: Vec<f64> = (0..p).map(|_| (0.3 * s * normal(&mut rng)).exp()).collect();
    let mix: Matrix = (0..p)
        .map(|i| {
            (0..p)
                .map(|j| f64::from(u8::from(i == j)) + 0.25 * s * normal(&mut rng) / (p as f64).sqrt())
                .collect()
        })
        .collect();
    let shift: Vec<f64> = (0..p).map(|_| s * normal(&mut rng)).collect();

    let draw_project = |n: usize, rng: &mut ChaCha8Rng, transform: bool| {
        let mut features = Vec::with_capacity(n * p);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let label = if rng.random::<f64>() < cfg.positive_rate { ARB_PRONE } else { ARB_FREE };
            let x = classes[usize::from(label)].draw(rng);
            if transform {
                let y = mat_vec(&mix, &x);
                features.extend(y.iter().zip(&scale).zip(&shift).map(|((v, d), b)| d * v + b));
            } else {
                features.extend(x);
            }
            labels.push(label);
        }
        (features, labels)
    };

    let names: Vec<String> = (0..p).map(|j| format!("metric_{:02}", j + 1)).collect();
    let (fs, ls) = draw_project(cfg.n_source, &mut rng, false);
    let (ft, lt) = draw_project(cfg.n_target, &mut rng, true);
    let source = Dataset::new("synth_source", names.clone(), fs, Some(ls))?;
    let target = Dataset::new("synth_target", names, ft, Some(lt))?;
    Ok((source, target))
}
