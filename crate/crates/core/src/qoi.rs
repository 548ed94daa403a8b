//! Downstream-task harness: decode a fixed latent design set through the
//! pre-trained model or through a pool of sampled models, score the unique
//! valid designs and summarize them with a top-fraction statistic.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::numkit::SeededRng;
use crate::posterior::SubspaceGaussian;
use crate::subspace::ActiveSubspace;
use crate::toygen::{property, validate, Property, ToySequence, ToyVae, LATENT_DIM};

/// Fixed latent design points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSet {
    pub points: Vec<Vec<f64>>,
    pub seed: u64,
}

impl DesignSet {
    pub fn from_points(points: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        if points.is_empty() {
            return Err(CoreError::EmptyInput("design set".into()));
        }
        let d = points[0].len();
        if points.iter().any(|p| p.len() != d) {
            return Err(CoreError::Dimension("design points differ in length".into()));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(CoreError::Domain("design points must be finite".into()));
        }
        Ok(Self { points, seed })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `n` standard-normal points in `d_z` dimensions from stream 0 of `seed`.
pub fn generate_design_set(d_z: usize, n: usize, seed: u64) -> Result<DesignSet> {
    if n == 0 || d_z == 0 {
        return Err(CoreError::Config("design set needs n >= 1 and d_z >= 1".into()));
    }
    let mut rng = SeededRng::new(seed, 0);
    DesignSet::from_points((0..n).map(|_| rng.normal_vec(d_z)).collect(), seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Maximize,
    Minimize,
}

impl Direction {
    /// Minimize for toy-sas, maximize otherwise.
    pub fn default_for(p: Property) -> Self {
        match p {
            Property::ToySas => Direction::Minimize,
            _ => Direction::Maximize,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Maximize => "maximize",
            Direction::Minimize => "minimize",
        })
    }
}

impl FromStr for Direction {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maximize" | "max" => Ok(Direction::Maximize),
            "minimize" | "min" => Ok(Direction::Minimize),
            other => Err(CoreError::Config(format!("unknown direction `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QoIConfig {
    pub property: Property,
    pub direction: Direction,
    pub top_fraction: f64,
    /// Number of sampled models sharing the design set.
    pub models: usize,
}

impl QoIConfig {
    pub fn for_property(property: Property) -> Self {
        Self {
            property,
            direction: Direction::default_for(property),
            top_fraction: 0.10,
            models: 10,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return Err(CoreError::Config(format!(
                "top fraction {} outside (0, 1]",
                self.top_fraction
            )));
        }
        if self.models == 0 {
            return Err(CoreError::Config("model count must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mean of the best `ceil(frac·len)` values. For minimization the mean of
/// the smallest values is negated, so larger is always better.
pub fn top_fraction_stat(values: &[f64], frac: f64, direction: Direction) -> Result<f64> {
    if values.is_empty() {
        return Err(CoreError::EmptyInput("no values to summarize".into()));
    }
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(CoreError::Config(format!("top fraction {frac} outside (0, 1]")));
    }
    let m = ((frac * values.len() as f64).ceil() as usize).clamp(1, values.len());
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(match direction {
        Direction::Maximize => sorted[sorted.len() - m..].iter().sum::<f64>() / m as f64,
        Direction::Minimize => -sorted[..m].iter().sum::<f64>() / m as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRecord {
    pub canonical: String,
    pub property: f64,
    /// Index of the sampled model that produced it; `None` for the
    /// pre-trained model.
    pub source_model: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QoIReport {
    pub qoi: f64,
    pub unique_count: usize,
    pub valid_count: usize,
    pub invalid_count: usize,
    pub records: Vec<DesignRecord>,
    pub config: QoIConfig,
}

impl QoIReport {
    /// `canonical,property,source_model` rows, one per unique design.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("canonical,property,source_model\n");
        for r in &self.records {
            let src = r.source_model.map(|s| s.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", r.canonical, r.property, src));
        }
        out
    }
}

/// Scores decodes given in design-set order. Dedup keeps the first
/// occurrence.
fn assemble(decodes: Vec<(ToySequence, Option<usize>)>, cfg: &QoIConfig) -> Result<QoIReport> {
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    let mut valid = 0usize;
    let mut invalid = 0usize;
    for (seq, source) in decodes {
        if !validate(&seq) {
            invalid += 1;
            continue;
        }
        valid += 1;
        let canonical = seq.canonical();
        if seen.insert(canonical.clone()) {
            records.push(DesignRecord {
                canonical,
                property: property(&seq, cfg.property)?,
                source_model: source,
            });
        }
    }
    if records.is_empty() {
        return Err(CoreError::DegenerateEvaluation(format!(
            "none of the {invalid} decodes is valid"
        )));
    }
    let values: Vec<f64> = records.iter().map(|r| r.property).collect();
    Ok(QoIReport {
        qoi: top_fraction_stat(&values, cfg.top_fraction, cfg.direction)?,
        unique_count: records.len(),
        valid_count: valid,
        invalid_count: invalid,
        records,
        config: cfg.clone(),
    })
}

fn check_design(q: &DesignSet) -> Result<()> {
    if q.is_empty() {
        return Err(CoreError::EmptyInput("design set".into()));
    }
    if q.points[0].len() != LATENT_DIM {
        return Err(CoreError::Dimension(format!(
            "design points have {} coordinates, the latent space has {LATENT_DIM}",
            q.points[0].len()
        )));
    }
    Ok(())
}

/// QoI of the pre-trained model on the design set.
pub fn evaluate_ptm_qoi(model: &ToyVae, q: &DesignSet, cfg: &QoIConfig) -> Result<QoIReport> {
    cfg.check()?;
    check_design(q)?;
    let decodes = q
        .points
        .par_iter()
        .map(|z| model.decode(z).map(|s| (s, None)))
        .collect::<Result<Vec<_>>>()?;
    assemble(decodes, cfg)
}

/// Model index decoding each design point: `n / m` contiguous points per
/// model, then the remaining `n mod m` points dealt out round-robin.
pub fn partition_assignments(n: usize, m: usize) -> Vec<usize> {
    let block = n / m;
    (0..n)
        .map(|i| if i < block * m { i / block } else { (i - block * m) % m })
        .collect()
}

/// QoI of a pool of full parameter vectors sharing the design set.
pub fn evaluate_pool_qoi(
    model: &ToyVae,
    pool: &[Vec<f64>],
    q: &DesignSet,
    cfg: &QoIConfig,
) -> Result<QoIReport> {
    cfg.check()?;
    check_design(q)?;
    if pool.is_empty() {
        return Err(CoreError::EmptyInput("model pool".into()));
    }
    let owner = partition_assignments(q.len(), pool.len());
    let decodes = q
        .points
        .par_iter()
        .zip(owner.par_iter())
        .map(|(z, &m)| model.decode_with(&pool[m], z).map(|s| (s, Some(m))))
        .collect::<Result<Vec<_>>>()?;
    assemble(decodes, cfg)
}

/// QoI of `cfg.models` models drawn from `dist` in the given subspace.
pub fn evaluate_dist_qoi(
    model: &ToyVae,
    subspace: &ActiveSubspace,
    dist: &SubspaceGaussian,
    q: &DesignSet,
    cfg: &QoIConfig,
    rng: &mut SeededRng,
) -> Result<QoIReport> {
    cfg.check()?;
    let omegas: Vec<Vec<f64>> = (0..cfg.models).map(|_| dist.sample(rng)).collect();
    evaluate_omega_qoi(model, subspace, &omegas, q, cfg)
}

/// QoI of the models at explicit subspace coordinates.
pub fn evaluate_omega_qoi(
    model: &ToyVae,
    subspace: &ActiveSubspace,
    omegas: &[Vec<f64>],
    q: &DesignSet,
    cfg: &QoIConfig,
) -> Result<QoIReport> {
    let pool = omegas
        .iter()
        .map(|w| model.params().with_stochastic(&subspace.expand(w)?))
        .collect::<Result<Vec<_>>>()?;
    evaluate_pool_qoi(model, &pool, q, cfg)
}

/// A black-box QoI over pools of subspace coordinates, evaluated once per
/// budget unit.
pub trait QoiObjective {
    /// Pool size used when scoring a distribution.
    fn model_count(&self) -> usize;

    /// Noise stream for evaluation `eval_index`.
    fn rng_for(&self, eval_index: usize) -> SeededRng;

    fn evaluate_pool(&self, omegas: &[Vec<f64>], eval_index: usize) -> Result<f64>;

    /// Scores a candidate distribution by drawing `model_count` coordinate
    /// vectors from [`Self::rng_for`].
    fn evaluate_dist(&self, dist: &SubspaceGaussian, eval_index: usize) -> Result<f64> {
        let mut rng = self.rng_for(eval_index);
        let omegas: Vec<Vec<f64>> = (0..self.model_count()).map(|_| dist.sample(&mut rng)).collect();
        self.evaluate_pool(&omegas, eval_index)
    }
}

/// The toy design task as a [`QoiObjective`].
pub struct DesignObjective<'a> {
    pub model: &'a ToyVae,
    pub subspace: &'a ActiveSubspace,
    pub design: &'a DesignSet,
    pub config: QoIConfig,
    pub seed: u64,
    /// Reuse one noise stream for every evaluation.
    pub common_random_numbers: bool,
}

impl QoiObjective for DesignObjective<'_> {
    fn model_count(&self) -> usize {
        self.config.models
    }

    fn rng_for(&self, eval_index: usize) -> SeededRng {
        let stream = if self.common_random_numbers {
            0
        } else {
            eval_index as u64
        };
        SeededRng::new(self.seed, stream)
    }

    fn evaluate_pool(&self, omegas: &[Vec<f64>], _eval_index: usize) -> Result<f64> {
        Ok(evaluate_omega_qoi(self.model, self.subspace, omegas, self.design, &self.config)?.qoi)
    }
}
