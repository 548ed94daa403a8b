use asft_core::finetune::{bo_optimize, default_delta_kl, make_design_space, reinforce_optimize, RunTrace};
use asft_core::numkit::SeededRng;
use asft_core::qoi::{evaluate_ptm_qoi, generate_design_set, DesignObjective, DesignSet, QoIConfig};
use asft_core::toygen::{Property, LATENT_DIM};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    check_pairing, emit, ensure_dir, load_model, load_posterior, load_subspace, mix_seed, opt_cell, set, to_json,
};
use crate::config::{DeltaKl, FileConfig, FinetuneSection, Method};
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::FinetuneArgs;

/// The best feasible distribution of one trial, as consumed by `cross-eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestDistribution {
    pub method: Method,
    pub property: Property,
    pub q_seed: u64,
    pub trial: usize,
    pub qoi: f64,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Everything about one optimization trial, as consumed by `report`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub method: Method,
    pub property: Property,
    pub q_seed: u64,
    pub trial: usize,
    pub opt_seed: u64,
    pub delta_kl: f64,
    pub ptm_qoi: f64,
    /// Best feasible QoI among the initial candidates (BO) or the first
    /// policy (REINFORCE).
    pub initial_best: Option<f64>,
    pub best_qoi: Option<f64>,
    /// `best_qoi − ptm_qoi`.
    pub improvement: Option<f64>,
    pub trace: RunTrace,
}

impl TrialRecord {
    pub fn stem(&self) -> String {
        format!("{}_{}_q{}_t{}", self.method, self.property, self.q_seed, self.trial)
    }
}

fn resolve(cfg: &FileConfig, args: &FinetuneArgs) -> CliResult<FinetuneSection> {
    let mut s = cfg.finetune.clone();
    set(&mut s.method, args.method);
    set(&mut s.property, args.property);
    set(&mut s.optimizer.budget, args.budget);
    set(&mut s.optimizer.acquisition, args.acquisition);
    set(&mut s.delta_kl, args.delta_kl);
    set(&mut s.delta_fraction, args.delta_fraction);
    set(&mut s.q_seeds, args.q_seed.clone().map(|l| l.0));
    set(&mut s.trials, args.trials);
    set(&mut s.opt_seed, args.opt_seed);
    set(&mut s.design_points, args.design_points);
    set(&mut s.models, args.models);
    s.optimizer.exact_constraint |= args.exact_constraint;
    s.record_wall_time |= args.wall_time;
    s.apply_budget()?;
    if s.trials == 0 || s.q_seeds.is_empty() {
        return Err(CliError::usage("need at least one trial and one design seed"));
    }
    if !(s.delta_fraction > 0.0 && s.delta_fraction <= 1.0) {
        return Err(CliError::usage("delta fraction must lie in (0, 1]"));
    }
    Ok(s)
}

pub fn run(cfg: &FileConfig, args: &FinetuneArgs, argv: &[String]) -> CliResult<()> {
    let mut s = resolve(cfg, args)?;
    let model = load_model(&args.model)?;
    let subspace = load_subspace(&args.subspace)?;
    check_pairing(&model, &subspace)?;
    let post = load_posterior(&args.posterior, subspace.dim())?;
    let space = make_design_space(&post);
    s.optimizer.delta_kl = match s.delta_kl {
        DeltaKl::Auto => default_delta_kl(&space, s.delta_fraction)?,
        DeltaKl::Value(v) => v,
    };
    s.optimizer.check()?;
    let qoi_cfg = QoIConfig {
        top_fraction: s.top_fraction,
        models: s.models,
        ..QoIConfig::for_property(s.property)
    };

    let designs: Vec<(u64, DesignSet, f64)> = s
        .q_seeds
        .iter()
        .map(|&q| {
            let design = generate_design_set(LATENT_DIM, s.design_points, q)?;
            let ptm = evaluate_ptm_qoi(&model, &design, &qoi_cfg)?.qoi;
            Ok((q, design, ptm))
        })
        .collect::<CliResult<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..designs.len())
        .flat_map(|d| (0..s.trials).map(move |t| (d, t)))
        .collect();

    let trials: Vec<TrialRecord> = jobs
        .par_iter()
        .map(|&(d, trial)| {
            let (q_seed, design, ptm_qoi) = &designs[d];
            let objective = DesignObjective {
                model: &model,
                subspace: &subspace,
                design,
                config: qoi_cfg.clone(),
                seed: mix_seed(&[s.opt_seed, *q_seed, trial as u64, 0]),
                common_random_numbers: s.common_random_numbers,
            };
            let mut rng = SeededRng::new(mix_seed(&[s.opt_seed, *q_seed, trial as u64, 1]), 0);
            let mut trace = match s.method {
                Method::Bo => bo_optimize(&objective, &space, &s.optimizer, &mut rng)?,
                Method::Reinforce => reinforce_optimize(&objective, &space, &s.optimizer, &mut rng)?,
            };
            if !s.record_wall_time {
                trace.records.iter_mut().for_each(|r| r.wall_ms = 0);
            }
            let initial = match s.method {
                Method::Bo => s.optimizer.init_candidates,
                Method::Reinforce => 1,
            };
            let initial_best = trace.records[..initial.min(trace.len())]
                .iter()
                .filter(|r| r.feasible)
                .map(|r| r.qoi)
                .reduce(f64::max);
            let best_qoi = trace.best().map(|r| r.qoi);
            Ok(TrialRecord {
                method: s.method,
                property: s.property,
                q_seed: *q_seed,
                trial,
                opt_seed: s.opt_seed,
                delta_kl: s.optimizer.delta_kl,
                ptm_qoi: *ptm_qoi,
                initial_best,
                best_qoi,
                improvement: best_qoi.map(|b| b - ptm_qoi),
                trace,
            })
        })
        .collect::<CliResult<_>>()?;

    ensure_dir(&args.out)?;
    let mut manifest = RunManifest::new("finetune", argv, &s)?;
    manifest.seed("opt_seed", s.opt_seed);
    for &q in &s.q_seeds {
        manifest.seed(&format!("q_seed_{q}"), q);
    }
    manifest.input(&args.model)?;
    manifest.input(&args.subspace)?;
    manifest.input(&args.posterior)?;
    manifest.derived("delta_kl", s.optimizer.delta_kl);

    let mut summary = String::from("method,property,q_seed,trial,ptm_qoi,initial_best,best_qoi,improvement\n");
    for t in &trials {
        let stem = t.stem();
        emit(&mut manifest, &args.out.join(format!("trace_{stem}.csv")), t.trace.to_csv().as_bytes())?;
        emit(&mut manifest, &args.out.join(format!("trial_{stem}.json")), &to_json(t)?)?;
        if let Some(best) = t.trace.best() {
            let dist = BestDistribution {
                method: t.method,
                property: t.property,
                q_seed: t.q_seed,
                trial: t.trial,
                qoi: best.qoi,
                mu: best.mean.clone(),
                sigma: best.stddev.clone(),
            };
            emit(&mut manifest, &args.out.join(format!("best_{stem}.json")), &to_json(&dist)?)?;
        }
        summary.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            t.method,
            t.property,
            t.q_seed,
            t.trial,
            t.ptm_qoi,
            opt_cell(t.initial_best),
            opt_cell(t.best_qoi),
            opt_cell(t.improvement)
        ));
    }
    let tag = format!("{}_{}", s.method, s.property);
    emit(&mut manifest, &args.out.join(format!("improvements_{tag}.csv")), summary.as_bytes())?;
    manifest.write_named(&args.out, &format!("finetune_{tag}"))?;

    let mut imps: Vec<f64> = trials.iter().filter_map(|t| t.improvement).collect();
    imps.sort_by(f64::total_cmp);
    let median = if imps.is_empty() { f64::NAN } else { imps[imps.len() / 2] };
    println!(
        "{} trials of {} on {} (delta_kl {:.4}): {} with a feasible best, median improvement {median:.4}",
        trials.len(),
        s.method,
        s.property,
        s.optimizer.delta_kl,
        imps.len()
    );
    Ok(())
}
