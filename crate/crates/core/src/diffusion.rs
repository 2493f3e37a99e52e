//! History-scaled diffusion: noise schedule, per-feature noise scale,
//! forward process (stepwise and closed form) and the reverse ancestral
//! sampler.
//!
//! The forward chain perturbs the future trajectory with Gaussian noise
//! whose diagonal covariance is derived from the encoded history
//! (`sigma2 = softplus(mean_t z)`), instead of the isotropic unit variance
//! of a plain DDPM. With `sigma2` forced to all-ones every operation here
//! reduces exactly to the standard DDPM algebra.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::softplus;
use crate::rng::standard_normal;
use crate::tensor::Tensor;

/// Per-feature noise scale derived from the encoded history.
///
/// `mu` is the time-mean of each feature of the encoding, `sigma2 =
/// softplus(mu)` its positive variance, `sigma` the elementwise square
/// root. The encoder feature width equals the future horizon, so each
/// entry scales exactly one predicted frame.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseScale {
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl NoiseScale {
    /// Scale from an encoding laid out time x feature.
    pub fn from_encoding(z: &Tensor) -> Result<Self> {
        if !z.all_finite() {
            return Err(Error::NonFinite("noise scale input"));
        }
        let (rows, cols) = z.shape();
        let mut mu = vec![0.0; cols];
        for r in 0..rows {
            for c in 0..cols {
                mu[c] += z.get(r, c);
            }
        }
        for m in &mut mu {
            *m /= rows as f64;
        }
        Ok(Self::from_mu(mu))
    }

    pub fn from_mu(mu: Vec<f64>) -> Self {
        let sigma2: Vec<f64> = mu.iter().map(|&m| softplus(m)).collect();
        let sigma = sigma2.iter().map(|&v| v.sqrt()).collect();
        Self { mu, sigma2, sigma }
    }

    /// Unit variance in every dimension (plain DDPM, and the
    /// no-noise-scaling ablation).
    pub fn isotropic(dim: usize) -> Self {
        Self {
            mu: vec![0.0; dim],
            sigma2: vec![1.0; dim],
            sigma: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.sigma2.len()
    }
}

/// Beta/alpha tables for a K-step linear schedule.
#[derive(Clone, Debug)]
pub struct DiffusionSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    /// Linear interpolation between `beta_start` and `beta_end` over `k`
    /// steps.
    pub fn linear(k: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidConfig(format!(
                "schedule needs at least 2 steps, got {k}"
            )));
        }
        if !(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < beta_start < beta_end < 1, got {beta_start} and {beta_end}"
            )));
        }
        let mut beta = Vec::with_capacity(k);
        let mut alpha = Vec::with_capacity(k);
        let mut alpha_bar = Vec::with_capacity(k);
        let mut prod = 1.0;
        for i in 0..k {
            let b = beta_start + (beta_end - beta_start) * i as f64 / (k - 1) as f64;
            beta.push(b);
            alpha.push(1.0 - b);
            prod *= 1.0 - b;
            alpha_bar.push(prod);
        }
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
        })
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    fn check_step(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.len() {
            return Err(Error::StepOutOfRange { k, max: self.len() });
        }
        Ok(())
    }

    /// `beta_k` for `k` in `1..=K`.
    pub fn beta(&self, k: usize) -> f64 {
        self.beta[k - 1]
    }

    /// `alpha_k = 1 - beta_k`.
    pub fn alpha(&self, k: usize) -> f64 {
        self.alpha[k - 1]
    }

    /// Cumulative product of alphas up to and including step `k`.
    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bar[k - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }
}

/// One draw of scaled noise `sigma (x) eps0`, `eps0 ~ N(0, I)`. Draws are
/// made per dimension in index order.
pub fn sample_scaled_noise(scale: &NoiseScale, rng: &mut impl Rng) -> Vec<f64> {
    scale
        .sigma
        .iter()
        .map(|&s| s * standard_normal(rng))
        .collect()
}

/// One stochastic forward step:
/// `x_k = sqrt(alpha_k) x_{k-1} + sqrt(beta_k) eps`, `eps ~ N(0, diag(sigma2))`.
pub fn forward_step(
    x_prev: &[f64],
    k: usize,
    schedule: &DiffusionSchedule,
    scale: &NoiseScale,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    schedule.check_step(k)?;
    let sa = schedule.alpha(k).sqrt();
    let sb = schedule.beta(k).sqrt();
    Ok(x_prev
        .iter()
        .zip(&scale.sigma)
        .map(|(&x, &s)| sa * x + sb * (s * standard_normal(rng)))
        .collect())
}

/// Deterministic core of the closed form given the scaled noise draw:
/// `x_k = sqrt(abar_k) x0 + sqrt(1 - abar_k) eps`.
pub fn forward_closed_form_with(
    x0: &[f64],
    k: usize,
    schedule: &DiffusionSchedule,
    eps: &[f64],
) -> Result<Vec<f64>> {
    schedule.check_step(k)?;
    let ab = schedule.alpha_bar(k);
    let sa = ab.sqrt();
    let sb = (1.0 - ab).sqrt();
    Ok(x0
        .iter()
        .zip(eps)
        .map(|(&x, &e)| sa * x + sb * e)
        .collect())
}

/// Jump straight from clean data to step `k`, drawing the scaled noise.
pub fn forward_closed_form(
    x0: &[f64],
    k: usize,
    schedule: &DiffusionSchedule,
    scale: &NoiseScale,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let eps = sample_scaled_noise(scale, rng);
    forward_closed_form_with(x0, k, schedule, &eps)
}

/// Posterior mean of the reverse step given the predicted noise:
/// `mu = (x_k - beta_k / sqrt(1 - abar_k) * eps_hat) / sqrt(alpha_k)`.
pub fn reverse_step_mean(
    x_k: &[f64],
    k: usize,
    eps_hat: &[f64],
    schedule: &DiffusionSchedule,
) -> Result<Vec<f64>> {
    schedule.check_step(k)?;
    let coef = schedule.beta(k) / (1.0 - schedule.alpha_bar(k)).sqrt();
    let inv_sa = 1.0 / schedule.alpha(k).sqrt();
    Ok(x_k
        .iter()
        .zip(eps_hat)
        .map(|(&x, &e)| (x - coef * e) * inv_sa)
        .collect())
}

/// One reverse step. For `k > 1` scaled noise `sqrt(beta_k) (sigma (x) z)`
/// is added; the final step `k = 1` returns the mean. The reverse variance
/// is fixed at `beta_k * diag(sigma2)` (only the noise predictor is
/// learned).
pub fn reverse_step(
    x_k: &[f64],
    k: usize,
    eps_hat: &[f64],
    schedule: &DiffusionSchedule,
    scale: &NoiseScale,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let mut mean = reverse_step_mean(x_k, k, eps_hat, schedule)?;
    if k > 1 {
        let sb = schedule.beta(k).sqrt();
        for (m, &s) in mean.iter_mut().zip(&scale.sigma) {
            *m += sb * (s * standard_normal(rng));
        }
    }
    Ok(mean)
}

/// Predicts the scaled noise present in `x_k` at diffusion step `k`. The
/// conditioning context is bound into the implementor.
pub trait NoisePredictor {
    fn predict_noise(&self, x_k: &[f64], k: usize) -> Result<Vec<f64>>;
}

/// Predictor that always returns zero (untrained-chain analysis).
pub struct ZeroPredictor;

impl NoisePredictor for ZeroPredictor {
    fn predict_noise(&self, x_k: &[f64], _k: usize) -> Result<Vec<f64>> {
        Ok(vec![0.0; x_k.len()])
    }
}

/// Full ancestral chain: draw `x_K ~ N(0, diag(sigma2))`, then iterate
/// [`reverse_step`] with the predictor's noise estimate down to `x_0`.
pub fn sample_trajectory(
    scale: &NoiseScale,
    schedule: &DiffusionSchedule,
    predictor: &dyn NoisePredictor,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    Ok(sample_trajectory_recorded(scale, schedule, predictor, rng, &[])?.0)
}

/// Snapshot of the chain at one recorded step.
pub struct ChainSnapshot {
    pub k: usize,
    pub x_k: Vec<f64>,
    /// Predicted noise at `k` (empty at `k = 0`, where nothing remains to
    /// predict).
    pub eps_hat: Vec<f64>,
}

/// As [`sample_trajectory`], also recording `(k, x_k, eps_hat)` for each
/// requested step index (`0` records the final sample).
pub fn sample_trajectory_recorded(
    scale: &NoiseScale,
    schedule: &DiffusionSchedule,
    predictor: &dyn NoisePredictor,
    rng: &mut impl Rng,
    record_steps: &[usize],
) -> Result<(Vec<f64>, Vec<ChainSnapshot>)> {
    let big_k = schedule.len();
    let mut x: Vec<f64> = scale
        .sigma
        .iter()
        .map(|&s| s * standard_normal(rng))
        .collect();
    let mut snapshots = Vec::new();
    for k in (1..=big_k).rev() {
        let eps_hat = predictor.predict_noise(&x, k)?;
        if record_steps.contains(&k) {
            snapshots.push(ChainSnapshot {
                k,
                x_k: x.clone(),
                eps_hat: eps_hat.clone(),
            });
        }
        x = reverse_step(&x, k, &eps_hat, schedule, scale, rng)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample { step: k });
        }
    }
    if record_steps.contains(&0) {
        snapshots.push(ChainSnapshot {
            k: 0,
            x_k: x.clone(),
            eps_hat: Vec::new(),
        });
    }
    Ok((x, snapshots))
}
