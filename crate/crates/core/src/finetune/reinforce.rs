use super::{DesignSpace, FinetuneConfig, RunTrace};
use crate::error::Result;
use crate::nnet::AdamState;
use crate::numkit::SeededRng;
use crate::posterior::SubspaceGaussian;
use crate::qoi::QoiObjective;

/// Score-function ascent on `ψ = (μ_f, σ_f)`, starting at the reference
/// posterior. Each iteration draws `cfg.reinforce_m` coordinate vectors,
/// spends one QoI evaluation on the whole pool, and steps along
/// `φ · Σ_i ∇_ψ ln p(ω_i; ψ)` with Adam before clamping ψ into the box.
/// An infeasible ψ or a failed evaluation earns `cfg.penalty`.
pub fn reinforce_optimize(
    objective: &impl QoiObjective,
    space: &DesignSpace,
    cfg: &FinetuneConfig,
    rng: &mut SeededRng,
) -> Result<RunTrace> {
    cfg.check()?;
    let k = space.k();
    let mut psi: Vec<f64> = space
        .reference
        .mean()
        .iter()
        .chain(space.reference.stddev())
        .copied()
        .collect();
    let mut adam = AdamState::new(2 * k, cfg.reinforce_lr);
    let mut baseline: Option<f64> = None;
    let mut trace = RunTrace::new("reinforce");
    for it in 0..cfg.reinforce_iterations {
        let policy = SubspaceGaussian::new(psi[..k].to_vec(), psi[k..].to_vec())?;
        let mut draw_rng = rng.derive(it as u64);
        let omegas: Vec<Vec<f64>> = (0..cfg.reinforce_m).map(|_| policy.sample(&mut draw_rng)).collect();
        let kl = space.kl(&policy)?;
        let qoi = objective.evaluate_pool(&omegas, it).ok().filter(|v| v.is_finite());
        let feasible = qoi.is_some() && kl <= cfg.delta_kl;
        let reward = if feasible { qoi.unwrap_or(cfg.penalty) } else { cfg.penalty };
        trace.push(&policy, qoi.unwrap_or(cfg.penalty), kl, feasible);

        let advantage = if cfg.reinforce_baseline {
            let b = *baseline.get_or_insert(reward);
            baseline = Some(cfg.baseline_decay * b + (1.0 - cfg.baseline_decay) * reward);
            reward - b
        } else {
            reward
        };
        let mut grad = vec![0.0; 2 * k];
        for w in &omegas {
            let (d_mu, d_sigma) = policy.score(w);
            for i in 0..k {
                // Adam descends, so feed the negated ascent direction
                grad[i] -= advantage * d_mu[i];
                grad[k + i] -= advantage * d_sigma[i];
            }
        }
        adam.step(&mut psi, &grad)?;
        let (mean, sd) = psi.split_at_mut(k);
        space.clamp(mean, sd);
    }
    Ok(trace)
}
