//! Active subspace of the stochastic parameter block: built from the
//! uncentered covariance of loss gradients at perturbed weights, used to
//! map low-dimensional coordinates back to full weights, and compared
//! across builds with a normalized Grassmann similarity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::numkit::{gram_topk_with_spectrum, orthonormalize_columns, Matrix, SeededRng};
use crate::toygen::{GradScope, ToySequence, ToyVae, LATENT_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubspaceBuildConfig {
    /// Number of gradient samples.
    pub n: usize,
    /// Subspace dimension.
    pub k: usize,
    /// Standard deviation of the weight perturbation around θ₀^S.
    pub sigma0: f64,
    pub seed: u64,
}

impl Default for SubspaceBuildConfig {
    fn default() -> Self {
        Self {
            n: 100,
            k: 20,
            sigma0: 0.05,
            seed: 0,
        }
    }
}

impl SubspaceBuildConfig {
    fn check(&self) -> Result<()> {
        if self.k == 0 || self.k > self.n {
            return Err(CoreError::Config(format!(
                "subspace dimension k={} must satisfy 1 <= k <= n={}",
                self.k, self.n
            )));
        }
        if !(self.sigma0 > 0.0) || !self.sigma0.is_finite() {
            return Err(CoreError::Config("sigma0 must be positive".into()));
        }
        Ok(())
    }
}

/// Orthonormal projection `P` (D_S × k) anchored at θ₀^S.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSubspace {
    pub projection: Matrix,
    /// Leading `k` eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Full spectrum of the gradient Gram matrix (empty for random subspaces).
    pub spectrum: Vec<f64>,
    pub anchor: Vec<f64>,
    pub config: Option<SubspaceBuildConfig>,
}

impl ActiveSubspace {
    pub fn dim(&self) -> usize {
        self.projection.cols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.projection.rows()
    }

    /// θ^S = θ₀^S + P·ω.
    pub fn expand(&self, omega: &[f64]) -> Result<Vec<f64>> {
        if omega.len() != self.dim() {
            return Err(CoreError::Dimension(format!(
                "subspace has {} coordinates, got {}",
                self.dim(),
                omega.len()
            )));
        }
        let mut theta = self.projection.matvec(omega)?;
        for (t, a) in theta.iter_mut().zip(&self.anchor) {
            *t += a;
        }
        Ok(theta)
    }

    /// Pulls a θ^S-gradient back to ω-space: `Pᵀ g`.
    pub fn pull_back(&self, grad_s: &[f64]) -> Result<Vec<f64>> {
        self.projection.tr_matvec(grad_s)
    }
}

/// Source of loss gradients over a stochastic block, so the build can run
/// against the toy VAE or any probe model.
pub trait GradientSource: Sync {
    fn stochastic_len(&self) -> usize;
    fn example_count(&self) -> usize;
    /// θ₀^S.
    fn anchor(&self) -> Vec<f64>;
    /// ∇_{θ^S} loss for one example at the given stochastic weights, with
    /// the deterministic block frozen. `rng` supplies any loss noise.
    fn gradient(&self, theta_s: &[f64], example: usize, rng: &mut SeededRng) -> Result<Vec<f64>>;
}

/// Gradient source for the toy VAE loss (one reparameterization draw per
/// gradient).
pub struct VaeGradients<'a> {
    pub model: &'a ToyVae,
    pub dataset: &'a [ToySequence],
}

impl GradientSource for VaeGradients<'_> {
    fn stochastic_len(&self) -> usize {
        self.model.params().stochastic_len()
    }

    fn example_count(&self) -> usize {
        self.dataset.len()
    }

    fn anchor(&self) -> Vec<f64> {
        self.model.params().stochastic_values()
    }

    fn gradient(&self, theta_s: &[f64], example: usize, rng: &mut SeededRng) -> Result<Vec<f64>> {
        let full = self.model.params().with_stochastic(theta_s)?;
        let eps = rng.normal_vec(LATENT_DIM);
        let (_, grad) =
            self.model
                .loss_and_grad_with(&full, &self.dataset[example], &eps, GradScope::DecoderOnly)?;
        Ok(self.model.params().gather(&grad))
    }
}

/// The `n` gradient samples, as columns of a `D_S × n` matrix. Sample `j`
/// uses stream `j + 1` of the build seed; inputs are drawn without
/// replacement from stream 0.
pub fn collect_gradients(source: &impl GradientSource, cfg: &SubspaceBuildConfig) -> Result<Matrix> {
    cfg.check()?;
    if source.example_count() < cfg.n {
        return Err(CoreError::Config(format!(
            "need at least {} examples, dataset has {}",
            cfg.n,
            source.example_count()
        )));
    }
    let base = SeededRng::new(cfg.seed, 0);
    let inputs = base.clone().sample_indices(source.example_count(), cfg.n);
    let anchor = source.anchor();
    let grads: Vec<Result<Vec<f64>>> = inputs
        .par_iter()
        .enumerate()
        .map(|(j, &example)| {
            let mut rng = base.derive(j as u64 + 1);
            let theta: Vec<f64> = anchor
                .iter()
                .map(|a| a + cfg.sigma0 * rng.normal())
                .collect();
            let g = source
                .gradient(&theta, example, &mut rng)
                .map_err(|_| CoreError::Build { sample: j })?;
            if g.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::Build { sample: j });
            }
            Ok(g)
        })
        .collect();
    let d = source.stochastic_len();
    let mut g = Matrix::zeros(d, cfg.n);
    for (j, col) in grads.into_iter().enumerate() {
        let col = col?;
        for (r, v) in col.iter().enumerate() {
            g[(r, j)] = *v;
        }
    }
    Ok(g)
}

/// Builds the active subspace from any gradient source.
pub fn build_from_source(source: &impl GradientSource, cfg: &SubspaceBuildConfig) -> Result<ActiveSubspace> {
    let g = collect_gradients(source, cfg)?;
    let (projection, eigenvalues, spectrum) = gram_topk_with_spectrum(&g, cfg.k)?;
    Ok(ActiveSubspace {
        projection,
        eigenvalues,
        spectrum,
        anchor: source.anchor(),
        config: Some(cfg.clone()),
    })
}

/// Active subspace of the toy VAE decoder.
pub fn build_active_subspace(
    model: &ToyVae,
    dataset: &[ToySequence],
    cfg: &SubspaceBuildConfig,
) -> Result<ActiveSubspace> {
    build_from_source(&VaeGradients { model, dataset }, cfg)
}

/// Column-orthonormalized Gaussian `D × k` projection, anchored at zero.
pub fn random_subspace(d: usize, k: usize, rng: &mut SeededRng) -> Result<ActiveSubspace> {
    if k == 0 || k > d {
        return Err(CoreError::Config(format!("random subspace needs 1 <= k={k} <= D={d}")));
    }
    let mut p = Matrix::from_fn(d, k, |_, _| rng.normal());
    orthonormalize_columns(&mut p, 1e-12);
    Ok(ActiveSubspace {
        projection: p,
        eigenvalues: vec![1.0; k],
        spectrum: Vec::new(),
        anchor: vec![0.0; d],
        config: None,
    })
}

/// Inner products between the unit-normalized leading columns of two
/// projections.
fn normalized_cross(p1: &Matrix, p2: &Matrix, i: usize, j: usize) -> Result<Matrix> {
    if p1.rows() != p2.rows() {
        return Err(CoreError::Dimension(format!(
            "projections live in {} and {} dimensions",
            p1.rows(),
            p2.rows()
        )));
    }
    if i == 0 || j == 0 || i > p1.cols() || j > p2.cols() {
        return Err(CoreError::Dimension(format!(
            "column counts ({i}, {j}) outside (1..={}, 1..={})",
            p1.cols(),
            p2.cols()
        )));
    }
    let u1 = normalized_leading(p1, i);
    let u2 = normalized_leading(p2, j);
    u1.tr_matmul(&u2)
}

fn normalized_leading(p: &Matrix, m: usize) -> Matrix {
    let mut u = p.leading_columns(m);
    for c in 0..m {
        let norm = u.col_norm(c);
        if norm > 0.0 {
            for r in 0..u.rows() {
                u[(r, c)] /= norm;
            }
        }
    }
    u
}

/// `‖U₁ᵀ U₂‖²_F / min(i, j)` for the first `i` columns of `p1` and the
/// first `j` columns of `p2`.
pub fn subspace_similarity(p1: &Matrix, p2: &Matrix, i: usize, j: usize) -> Result<f64> {
    let c = normalized_cross(p1, p2, i, j)?;
    let fro: f64 = c.as_slice().iter().map(|v| v * v).sum();
    Ok(fro / i.min(j) as f64)
}

/// `k × k` grid whose `(i-1, j-1)` entry is `subspace_similarity(p1, p2, i, j)`.
pub fn similarity_grid(p1: &Matrix, p2: &Matrix, k: usize) -> Result<Matrix> {
    let c = normalized_cross(p1, p2, k, k)?;
    // prefix[i][j] = Σ_{a<i, b<j} c[a][b]²
    let mut prefix = Matrix::zeros(k + 1, k + 1);
    for a in 0..k {
        for b in 0..k {
            prefix[(a + 1, b + 1)] =
                c[(a, b)] * c[(a, b)] + prefix[(a, b + 1)] + prefix[(a + 1, b)] - prefix[(a, b)];
        }
    }
    Ok(Matrix::from_fn(k, k, |i, j| {
        prefix[(i + 1, j + 1)] / (i + 1).min(j + 1) as f64
    }))
}
