//! Fine-tuning in the neighbourhood of the subspace posterior: a boxed
//! design space over `(μ_f, σ_f)`, a KL budget relative to the posterior,
//! and two black-box optimizers sharing the same evaluation budget.

mod acquisition;
mod bo;
mod gp;
mod reinforce;

pub use acquisition::{expected_improvement, maximize_in_unit_box, noisy_expected_improvement, NeiSamples};
pub use bo::bo_optimize;
pub use gp::{gp_fit, gp_fit_fixed, GpFitConfig, GpHyper, GpModel, Prediction};
pub use reinforce::reinforce_optimize;

pub use crate::posterior::kl_diag_gauss;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::posterior::SubspaceGaussian;

/// Half-width of the mean box in posterior standard deviations.
pub const MEAN_HALF_WIDTH: f64 = 3.0;
pub const SIGMA_LOWER_FACTOR: f64 = 0.75;
pub const SIGMA_UPPER_FACTOR: f64 = 1.25;

/// Box of candidate `(μ_f, σ_f)` around a reference posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpace {
    pub mean_lower: Vec<f64>,
    pub mean_upper: Vec<f64>,
    pub stddev_lower: Vec<f64>,
    pub stddev_upper: Vec<f64>,
    pub reference: SubspaceGaussian,
}

/// `μ ∈ μ_post ± 3σ_post`, `σ ∈ [0.75σ_post, 1.25σ_post]`.
pub fn make_design_space(post: &SubspaceGaussian) -> DesignSpace {
    let (m, s) = (post.mean(), post.stddev());
    DesignSpace {
        mean_lower: m.iter().zip(s).map(|(m, s)| m - MEAN_HALF_WIDTH * s).collect(),
        mean_upper: m.iter().zip(s).map(|(m, s)| m + MEAN_HALF_WIDTH * s).collect(),
        stddev_lower: s.iter().map(|s| SIGMA_LOWER_FACTOR * s).collect(),
        stddev_upper: s.iter().map(|s| SIGMA_UPPER_FACTOR * s).collect(),
        reference: post.clone(),
    }
}

impl DesignSpace {
    pub fn k(&self) -> usize {
        self.mean_lower.len()
    }

    /// Dimension of the unit box, `2k`.
    pub fn unit_dim(&self) -> usize {
        2 * self.k()
    }

    /// Maps `u ∈ [0,1]^{2k}` (means first) to a candidate.
    pub fn from_unit(&self, u: &[f64]) -> Result<SubspaceGaussian> {
        if u.len() != self.unit_dim() {
            return Err(CoreError::Dimension(format!(
                "unit point has {} coordinates, expected {}",
                u.len(),
                self.unit_dim()
            )));
        }
        let k = self.k();
        let lerp = |lo: f64, hi: f64, t: f64| lo + t.clamp(0.0, 1.0) * (hi - lo);
        let mean = (0..k)
            .map(|i| lerp(self.mean_lower[i], self.mean_upper[i], u[i]))
            .collect();
        let sd = (0..k)
            .map(|i| lerp(self.stddev_lower[i], self.stddev_upper[i], u[k + i]))
            .collect();
        SubspaceGaussian::new(mean, sd)
    }

    pub fn to_unit(&self, c: &SubspaceGaussian) -> Vec<f64> {
        let k = self.k();
        let mut u = Vec::with_capacity(2 * k);
        for i in 0..k {
            u.push((c.mean()[i] - self.mean_lower[i]) / (self.mean_upper[i] - self.mean_lower[i]));
        }
        for i in 0..k {
            u.push((c.stddev()[i] - self.stddev_lower[i]) / (self.stddev_upper[i] - self.stddev_lower[i]));
        }
        u
    }

    /// Projects raw `(μ, σ)` onto the box.
    pub fn clamp(&self, mean: &mut [f64], stddev: &mut [f64]) {
        for i in 0..self.k() {
            mean[i] = mean[i].clamp(self.mean_lower[i], self.mean_upper[i]);
            stddev[i] = stddev[i].clamp(self.stddev_lower[i], self.stddev_upper[i]);
        }
    }

    pub fn contains(&self, c: &SubspaceGaussian) -> bool {
        (0..self.k()).all(|i| {
            (self.mean_lower[i]..=self.mean_upper[i]).contains(&c.mean()[i])
                && (self.stddev_lower[i]..=self.stddev_upper[i]).contains(&c.stddev()[i])
        })
    }

    /// `KL(c ‖ reference)`.
    pub fn kl(&self, c: &SubspaceGaussian) -> Result<f64> {
        kl_diag_gauss(c, &self.reference)
    }
}

/// `fraction` times the largest KL over four uniform corners of the box:
/// every mean at `+3σ` or every mean at `−3σ`, each paired with every σ at
/// its lower or upper bound.
pub fn default_delta_kl(space: &DesignSpace, fraction: f64) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for mean in [&space.mean_lower, &space.mean_upper] {
        for sd in [&space.stddev_lower, &space.stddev_upper] {
            let corner = SubspaceGaussian::new(mean.clone(), sd.clone())?;
            worst = worst.max(space.kl(&corner)?);
        }
    }
    Ok(fraction * worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Acquisition {
    Ei,
    Nei,
}

impl std::str::FromStr for Acquisition {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ei" => Ok(Acquisition::Ei),
            "nei" => Ok(Acquisition::Nei),
            other => Err(CoreError::Config(format!("unknown acquisition `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub delta_kl: f64,
    pub budget: usize,
    pub init_candidates: usize,
    pub bo_iterations: usize,
    pub acquisition: Acquisition,
    /// Monte Carlo draws for NEI.
    pub nei_samples: usize,
    /// Sobol starts for the acquisition search.
    pub acquisition_starts: usize,
    /// Use the closed-form KL for feasibility instead of a slack surrogate.
    pub exact_constraint: bool,
    pub reinforce_iterations: usize,
    pub reinforce_lr: f64,
    pub reinforce_m: usize,
    /// Subtract a moving-average reward baseline in REINFORCE.
    pub reinforce_baseline: bool,
    pub baseline_decay: f64,
    pub penalty: f64,
    pub gp: GpFitConfig,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            delta_kl: 1.0,
            budget: 30,
            init_candidates: 5,
            bo_iterations: 25,
            acquisition: Acquisition::Ei,
            nei_samples: 32,
            acquisition_starts: 64,
            exact_constraint: false,
            reinforce_iterations: 30,
            reinforce_lr: 0.005,
            reinforce_m: 10,
            reinforce_baseline: false,
            baseline_decay: 0.8,
            penalty: -1e6,
            gp: GpFitConfig::default(),
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.delta_kl > 0.0) {
            return Err(CoreError::Config("delta_kl must be positive".into()));
        }
        if self.init_candidates + self.bo_iterations != self.budget {
            return Err(CoreError::Config(format!(
                "init candidates ({}) + BO iterations ({}) must equal the budget ({})",
                self.init_candidates, self.bo_iterations, self.budget
            )));
        }
        if self.init_candidates == 0 || self.acquisition_starts == 0 || self.nei_samples == 0 {
            return Err(CoreError::Config("BO counts must be positive".into()));
        }
        if self.reinforce_m == 0 || !(self.reinforce_lr > 0.0) {
            return Err(CoreError::Config("REINFORCE needs M >= 1 and a positive rate".into()));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(CoreError::Config("baseline decay must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One QoI evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub eval_index: usize,
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
    pub qoi: f64,
    pub kl: f64,
    pub feasible: bool,
    /// Best feasible QoI so far; `None` until the first feasible one.
    pub best_so_far: Option<f64>,
    /// Milliseconds since the run started.
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunTrace {
    pub method: String,
    pub records: Vec<EvalRecord>,
    /// Set when no initial candidate was feasible.
    pub infeasible_start: bool,
    #[serde(skip)]
    started: Option<std::time::Instant>,
}

impl RunTrace {
    pub fn new(method: &str) -> Self {
        Self {
            method: method.to_string(),
            records: Vec::new(),
            infeasible_start: false,
            started: Some(std::time::Instant::now()),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends an evaluation, maintaining the running best.
    pub fn push(&mut self, candidate: &SubspaceGaussian, qoi: f64, kl: f64, feasible: bool) {
        let previous = self.records.last().and_then(|r| r.best_so_far);
        let best_so_far = match (previous, feasible) {
            (Some(b), true) => Some(if qoi > b { qoi } else { b }),
            (None, true) => Some(qoi),
            (b, false) => b,
        };
        let wall_ms = self
            .started
            .map_or(0, |t| t.elapsed().as_millis() as u64);
        self.records.push(EvalRecord {
            eval_index: self.records.len(),
            mean: candidate.mean().to_vec(),
            stddev: candidate.stddev().to_vec(),
            qoi,
            kl,
            feasible,
            best_so_far,
            wall_ms,
        });
    }

    /// The feasible record with the highest QoI; the earliest wins ties.
    pub fn best(&self) -> Option<&EvalRecord> {
        let mut best: Option<&EvalRecord> = None;
        for r in self.records.iter().filter(|r| r.feasible) {
            if best.is_none_or(|b| r.qoi > b.qoi) {
                best = Some(r);
            }
        }
        best
    }

    /// `eval_index,qoi,kl,feasible,best_so_far,wall_ms` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eval_index,qoi,kl,feasible,best_so_far,wall_ms\n");
        for r in &self.records {
            let best = r.best_so_far.map(|b| b.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.eval_index, r.qoi, r.kl, r.feasible, best, r.wall_ms
            ));
        }
        out
    }
}
