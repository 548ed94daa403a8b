//! Diagonal Gaussian distributions over subspace coordinates: variational
//! fitting against the VAE loss and sampling of full model instances.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::nnet::AdamState;
use crate::numkit::SeededRng;
use crate::subspace::ActiveSubspace;
use crate::toygen::{GradScope, ToySequence, ToyVae, LATENT_DIM};

/// `N(mean, diag(stddev²))` over ω.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceGaussian {
    mean: Vec<f64>,
    stddev: Vec<f64>,
}

impl SubspaceGaussian {
    pub fn new(mean: Vec<f64>, stddev: Vec<f64>) -> Result<Self> {
        if mean.len() != stddev.len() || mean.is_empty() {
            return Err(CoreError::Dimension(format!(
                "mean has {} entries, stddev has {}",
                mean.len(),
                stddev.len()
            )));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(CoreError::Domain("mean must be finite".into()));
        }
        if stddev.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(CoreError::Domain("stddev entries must be positive and finite".into()));
        }
        Ok(Self { mean, stddev })
    }

    /// Isotropic distribution centred at zero.
    pub fn isotropic(k: usize, stddev: f64) -> Result<Self> {
        Self::new(vec![0.0; k], vec![stddev; k])
    }

    /// Degenerate distribution with zero spread; every draw is `mean`.
    /// Only meant for identity checks.
    #[doc(hidden)]
    pub fn point_mass(mean: Vec<f64>) -> Self {
        let k = mean.len();
        Self {
            mean,
            stddev: vec![0.0; k],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn stddev(&self) -> &[f64] {
        &self.stddev
    }

    /// One draw `μ + σ ⊙ ε`.
    pub fn sample(&self, rng: &mut SeededRng) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.stddev)
            .map(|(m, s)| m + s * rng.normal())
            .collect()
    }

    /// `∂/∂μ ln p(ω)` and `∂/∂σ ln p(ω)`.
    pub fn score(&self, omega: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut d_mu = Vec::with_capacity(self.dim());
        let mut d_sigma = Vec::with_capacity(self.dim());
        for ((w, m), s) in omega.iter().zip(&self.mean).zip(&self.stddev) {
            let r = (w - m) / s;
            d_mu.push(r / s);
            d_sigma.push((r * r - 1.0) / s);
        }
        (d_mu, d_sigma)
    }

    /// `ln p(ω)`.
    pub fn log_density(&self, omega: &[f64]) -> f64 {
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        omega
            .iter()
            .zip(&self.mean)
            .zip(&self.stddev)
            .map(|((w, m), s)| {
                let r = (w - m) / s;
                -0.5 * r * r - s.ln() - half_ln_2pi
            })
            .sum()
    }
}

/// Closed-form `KL(p_f ‖ p_ref)` between diagonal Gaussians.
pub fn kl_diag_gauss(p_f: &SubspaceGaussian, p_ref: &SubspaceGaussian) -> Result<f64> {
    check_same_dim(p_f, p_ref)?;
    let mut kl = 0.0;
    for i in 0..p_f.dim() {
        let (mf, sf) = (p_f.mean[i], p_f.stddev[i]);
        let (mr, sr) = (p_ref.mean[i], p_ref.stddev[i]);
        let d = mf - mr;
        kl += (sr / sf).ln() + (sf * sf + d * d) / (2.0 * sr * sr) - 0.5;
    }
    Ok(kl)
}

/// Gradient of [`kl_diag_gauss`] with respect to `(μ_f, ln σ_f)`.
pub fn kl_diag_gauss_grad(p_f: &SubspaceGaussian, p_ref: &SubspaceGaussian) -> Result<(Vec<f64>, Vec<f64>)> {
    check_same_dim(p_f, p_ref)?;
    let mut d_mu = Vec::with_capacity(p_f.dim());
    let mut d_log_sigma = Vec::with_capacity(p_f.dim());
    for i in 0..p_f.dim() {
        let var_r = p_ref.stddev[i] * p_ref.stddev[i];
        d_mu.push((p_f.mean[i] - p_ref.mean[i]) / var_r);
        d_log_sigma.push(p_f.stddev[i] * p_f.stddev[i] / var_r - 1.0);
    }
    Ok((d_mu, d_log_sigma))
}

fn check_same_dim(a: &SubspaceGaussian, b: &SubspaceGaussian) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(CoreError::Dimension(format!(
            "distributions over {} and {} coordinates",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViConfig {
    pub prior_stddev: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub mc_samples: usize,
    /// Starting σ for every coordinate; the mean starts at zero.
    pub init_stddev: f64,
    pub seed: u64,
}

impl Default for ViConfig {
    fn default() -> Self {
        Self {
            prior_stddev: 5.0,
            learning_rate: 1e-3,
            iterations: 2000,
            batch_size: 32,
            mc_samples: 1,
            init_stddev: 0.3,
            seed: 0,
        }
    }
}

impl ViConfig {
    fn check(&self) -> Result<()> {
        let positive = [self.prior_stddev, self.learning_rate, self.init_stddev];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite())
            || self.iterations == 0
            || self.batch_size == 0
            || self.mc_samples == 0
        {
            return Err(CoreError::Config("VI settings must all be positive".into()));
        }
        Ok(())
    }
}

/// Negative ELBO estimate and its pathwise gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboEstimate {
    pub loss: f64,
    /// KL(q ‖ prior) before the dataset-size scaling.
    pub kl: f64,
    pub grad_mean: Vec<f64>,
    pub grad_log_stddev: Vec<f64>,
}

/// Mini-batch negative ELBO: mean VAE loss over `batch` at weights
/// `expand(μ + σ⊙ε)` plus `KL(q ‖ N(0, prior_stddev²I)) / dataset_size`.
///
/// Draws `mc_samples` coordinate vectors and one latent noise vector per
/// example from `rng`, so cloning `rng` reproduces the estimate exactly.
#[allow(clippy::too_many_arguments)]
pub fn elbo_loss(
    model: &ToyVae,
    subspace: &ActiveSubspace,
    q: &SubspaceGaussian,
    batch: &[ToySequence],
    prior_stddev: f64,
    dataset_size: usize,
    mc_samples: usize,
    rng: &mut SeededRng,
) -> Result<ElboEstimate> {
    if batch.is_empty() {
        return Err(CoreError::EmptyInput("ELBO batch".into()));
    }
    let k = q.dim();
    if subspace.dim() != k {
        return Err(CoreError::Dimension(format!(
            "posterior over {k} coordinates, subspace has {}",
            subspace.dim()
        )));
    }
    let mc = mc_samples.max(1);
    let prior = SubspaceGaussian::isotropic(k, prior_stddev)?;
    let kl = kl_diag_gauss(q, &prior)?;
    let (kl_mu, kl_ls) = kl_diag_gauss_grad(q, &prior)?;
    let kl_scale = 1.0 / dataset_size.max(1) as f64;

    let mut loss = 0.0;
    let mut grad_mean = vec![0.0; k];
    let mut grad_log_stddev = vec![0.0; k];
    let weight = 1.0 / (mc * batch.len()) as f64;
    for _ in 0..mc {
        let unit = rng.normal_vec(k);
        let omega: Vec<f64> = (0..k).map(|i| q.mean[i] + q.stddev[i] * unit[i]).collect();
        let full = model.params().with_stochastic(&subspace.expand(&omega)?)?;
        let noise: Vec<Vec<f64>> = batch.iter().map(|_| rng.normal_vec(LATENT_DIM)).collect();
        let per_example: Vec<Result<(f64, Vec<f64>)>> = batch
            .par_iter()
            .zip(noise.par_iter())
            .map(|(seq, eps)| model.loss_and_grad_with(&full, seq, eps, GradScope::DecoderOnly))
            .collect();
        let mut grad_s = vec![0.0; subspace.ambient_dim()];
        for (index, r) in per_example.into_iter().enumerate() {
            let (l, g) = r.map_err(|_| CoreError::Numeric { index })?;
            if !l.is_finite() {
                return Err(CoreError::Numeric { index });
            }
            loss += weight * l;
            for (acc, v) in grad_s.iter_mut().zip(model.params().gather(&g)) {
                *acc += v;
            }
        }
        let d_omega = subspace.pull_back(&grad_s)?;
        for i in 0..k {
            let d = weight * d_omega[i];
            grad_mean[i] += d;
            grad_log_stddev[i] += d * q.stddev[i] * unit[i];
        }
    }
    loss += kl * kl_scale;
    for i in 0..k {
        grad_mean[i] += kl_scale * kl_mu[i];
        grad_log_stddev[i] += kl_scale * kl_ls[i];
    }
    Ok(ElboEstimate {
        loss,
        kl,
        grad_mean,
        grad_log_stddev,
    })
}

/// Fitted posterior and the per-iteration loss estimates.
#[derive(Debug, Clone)]
pub struct PosteriorFit {
    pub posterior: SubspaceGaussian,
    pub losses: Vec<f64>,
}

/// Stochastic VI with Adam over `(μ, ln σ)`. Iteration `t` draws its batch
/// and noise from stream `t + 1` of `cfg.seed`.
pub fn fit_posterior(
    model: &ToyVae,
    subspace: &ActiveSubspace,
    dataset: &[ToySequence],
    cfg: &ViConfig,
) -> Result<PosteriorFit> {
    cfg.check()?;
    if dataset.is_empty() {
        return Err(CoreError::EmptyInput("VI dataset".into()));
    }
    let k = subspace.dim();
    let mut params = vec![0.0; 2 * k];
    params[k..].fill(cfg.init_stddev.ln());
    let mut adam = AdamState::new(2 * k, cfg.learning_rate);
    let base = SeededRng::new(cfg.seed, 0);
    let batch_size = cfg.batch_size.min(dataset.len());
    let mut losses = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let diverged = || CoreError::Training { stage: "vi", index: it };
        let q = unpack(&params, k).map_err(|_| diverged())?;
        let mut rng = base.derive(it as u64 + 1);
        let batch: Vec<ToySequence> = rng
            .sample_indices(dataset.len(), batch_size)
            .into_iter()
            .map(|i| dataset[i])
            .collect();
        let est = elbo_loss(
            model,
            subspace,
            &q,
            &batch,
            cfg.prior_stddev,
            dataset.len(),
            cfg.mc_samples,
            &mut rng,
        )
        .map_err(|_| diverged())?;
        losses.push(est.loss);
        let grad: Vec<f64> = est.grad_mean.into_iter().chain(est.grad_log_stddev).collect();
        adam.step(&mut params, &grad)?;
        if params.iter().any(|v| !v.is_finite()) {
            return Err(diverged());
        }
    }
    let posterior = unpack(&params, k).map_err(|_| CoreError::Training {
        stage: "vi",
        index: cfg.iterations,
    })?;
    Ok(PosteriorFit { posterior, losses })
}

fn unpack(params: &[f64], k: usize) -> Result<SubspaceGaussian> {
    SubspaceGaussian::new(
        params[..k].to_vec(),
        params[k..].iter().map(|v| v.exp()).collect(),
    )
}

/// Draws `m` coordinate vectors from `dist` and returns the matching full
/// parameter vectors `[expand(ω), θ₀^D]`.
pub fn sample_models(
    model: &ToyVae,
    subspace: &ActiveSubspace,
    dist: &SubspaceGaussian,
    m: usize,
    rng: &mut SeededRng,
) -> Result<Vec<Vec<f64>>> {
    if m == 0 {
        return Err(CoreError::Config("model count must be at least 1".into()));
    }
    (0..m)
        .map(|_| {
            let omega = dist.sample(rng);
            model.params().with_stochastic(&subspace.expand(&omega)?)
        })
        .collect()
}

/// On-disk form of a fitted posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorRecord {
    pub k: usize,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub prior_stddev: f64,
    pub seed: u64,
}

impl PosteriorRecord {
    pub fn new(posterior: &SubspaceGaussian, prior_stddev: f64, seed: u64) -> Self {
        Self {
            k: posterior.dim(),
            mu: posterior.mean.clone(),
            sigma: posterior.stddev.clone(),
            prior_stddev,
            seed,
        }
    }

    pub fn posterior(&self) -> Result<SubspaceGaussian> {
        if self.mu.len() != self.k {
            return Err(CoreError::Dimension(format!(
                "record declares k={} but stores {} means",
                self.k,
                self.mu.len()
            )));
        }
        SubspaceGaussian::new(self.mu.clone(), self.sigma.clone())
    }
}
