use super::acquisition::{ei_with_partials, maximize_in_unit_box, noisy_expected_improvement, NeiSamples};
use super::gp::{gp_fit, GpModel};
use super::{Acquisition, DesignSpace, FinetuneConfig, RunTrace};
use crate::error::Result;
use crate::numkit::{sobol, std_normal_cdf, std_normal_pdf, SeededRng};
use crate::qoi::QoiObjective;

const ASCENT_ITERS: usize = 60;
/// NEI has no analytic gradient, so only the best few starts are refined.
const NEI_REFINED_STARTS: usize = 4;

struct Observation {
    u: Vec<f64>,
    qoi: Option<f64>,
    kl: f64,
    feasible: bool,
}

/// Constrained BO: Sobol initial candidates, then one acquisition-driven
/// candidate per iteration. The acquisition is EI (or NEI) times the
/// probability that the KL slack is nonnegative.
pub fn bo_optimize(
    objective: &impl QoiObjective,
    space: &DesignSpace,
    cfg: &FinetuneConfig,
    rng: &mut SeededRng,
) -> Result<RunTrace> {
    cfg.check()?;
    let dim = space.unit_dim();
    let mut trace = RunTrace::new("bo");
    let mut obs: Vec<Observation> = Vec::with_capacity(cfg.budget);

    let evaluate = |u: Vec<f64>, obs: &mut Vec<Observation>, trace: &mut RunTrace| -> Result<()> {
        let candidate = space.from_unit(&u)?;
        let kl = space.kl(&candidate)?;
        let index = obs.len();
        let qoi = objective.evaluate_dist(&candidate, index).ok().filter(|v| v.is_finite());
        let feasible = qoi.is_some() && kl <= cfg.delta_kl;
        trace.push(&candidate, qoi.unwrap_or(cfg.penalty), kl, feasible);
        obs.push(Observation { u, qoi, kl, feasible });
        Ok(())
    };

    let init = sobol(dim, cfg.init_candidates + cfg.bo_iterations, 1)?;
    for u in init.iter().take(cfg.init_candidates) {
        evaluate(u.clone(), &mut obs, &mut trace)?;
    }
    trace.infeasible_start = obs.iter().all(|o| !o.feasible);

    for it in 0..cfg.bo_iterations {
        let valid: Vec<&Observation> = obs.iter().filter(|o| o.qoi.is_some()).collect();
        if valid.len() < 2 {
            // not enough data for a surrogate yet
            evaluate(init[cfg.init_candidates + it].clone(), &mut obs, &mut trace)?;
            continue;
        }
        let mut fit_rng = rng.derive(1 + it as u64);
        let xs: Vec<Vec<f64>> = valid.iter().map(|o| o.u.clone()).collect();
        let ys: Vec<f64> = valid.iter().map(|o| o.qoi.unwrap_or(cfg.penalty)).collect();
        let gp = gp_fit(&xs, &ys, &cfg.gp, &mut fit_rng)?;
        let slack = if cfg.exact_constraint {
            None
        } else {
            let xs: Vec<Vec<f64>> = obs.iter().map(|o| o.u.clone()).collect();
            let ys: Vec<f64> = obs.iter().map(|o| cfg.delta_kl - o.kl).collect();
            Some(gp_fit(&xs, &ys, &cfg.gp, &mut fit_rng)?)
        };
        let best = valid
            .iter()
            .filter(|o| o.feasible)
            .filter_map(|o| o.qoi)
            .fold(None, |b: Option<f64>, v| Some(b.map_or(v, |b| b.max(v))));
        let feasible_inputs: Vec<Vec<f64>> = valid.iter().filter(|o| o.feasible).map(|o| o.u.clone()).collect();
        let baseline = if feasible_inputs.is_empty() { xs.clone() } else { feasible_inputs };
        let nei = (cfg.acquisition == Acquisition::Nei)
            .then(|| NeiSamples::new(cfg.nei_samples, baseline.len(), &mut fit_rng));

        let feasibility = |u: &[f64]| -> (f64, Vec<f64>) {
            match &slack {
                Some(sgp) => probability_of_feasibility(sgp, u),
                None => {
                    let ok = space
                        .from_unit(u)
                        .and_then(|c| space.kl(&c))
                        .is_ok_and(|kl| kl <= cfg.delta_kl);
                    (if ok { 1.0 } else { 0.0 }, vec![0.0; u.len()])
                }
            }
        };
        let improvement = |u: &[f64]| -> (f64, Vec<f64>) {
            let Some(best) = best else {
                // nothing feasible yet: search for feasibility alone
                return (1.0, vec![0.0; u.len()]);
            };
            match &nei {
                None => {
                    let p = gp.predict_with_grad(u);
                    let (v, dm, ds) = ei_with_partials(p.mean, p.stddev, best);
                    let g = (0..u.len()).map(|j| dm * p.d_mean[j] + ds * p.d_stddev[j]).collect();
                    (v, g)
                }
                Some(samples) => {
                    let v = noisy_expected_improvement(&gp, &baseline, u, samples);
                    (v, fd_gradient(&|p| noisy_expected_improvement(&gp, &baseline, p, samples), u, v))
                }
            }
        };
        let acquisition = |u: &[f64]| -> (f64, Vec<f64>) {
            let (a, da) = improvement(u);
            let (p, dp) = feasibility(u);
            let g = (0..u.len()).map(|j| da[j] * p + a * dp[j]).collect();
            (a * p, g)
        };

        let mut starts = sobol(dim, cfg.acquisition_starts, 1 + cfg.budget + it * cfg.acquisition_starts)?;
        if nei.is_some() {
            let mut scored: Vec<(f64, Vec<f64>)> = starts.into_iter().map(|s| (acquisition(&s).0, s)).collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0));
            starts = scored.into_iter().take(NEI_REFINED_STARTS).map(|(_, s)| s).collect();
        }
        let (u, _) = maximize_in_unit_box(&acquisition, &starts, ASCENT_ITERS);
        evaluate(u, &mut obs, &mut trace)?;
    }
    Ok(trace)
}

/// `Φ(m/s)` for the slack surrogate, with its gradient.
fn probability_of_feasibility(gp: &GpModel, u: &[f64]) -> (f64, Vec<f64>) {
    let p = gp.predict_with_grad(u);
    if p.stddev <= 1e-12 {
        return (if p.mean >= 0.0 { 1.0 } else { 0.0 }, vec![0.0; u.len()]);
    }
    let z = p.mean / p.stddev;
    let pdf = std_normal_pdf(z);
    let g = (0..u.len())
        .map(|j| pdf * (p.d_mean[j] * p.stddev - p.mean * p.d_stddev[j]) / (p.stddev * p.stddev))
        .collect();
    (std_normal_cdf(z), g)
}

fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, u: &[f64], fu: f64) -> Vec<f64> {
    let h = 1e-4;
    let mut x = u.to_vec();
    (0..u.len())
        .map(|j| {
            let orig = x[j];
            // one-sided step that stays inside the box
            let step = if orig + h <= 1.0 { h } else { -h };
            x[j] = orig + step;
            let v = f(&x);
            x[j] = orig;
            (v - fu) / step
        })
        .collect()
}
