use std::collections::btree_map::{BTreeMap, Entry};
use std::path::{Path, PathBuf};

use asft_core::error::CoreError;
use asft_core::numkit::SeededRng;
use asft_core::posterior::SubspaceGaussian;
use asft_core::qoi::{evaluate_dist_qoi, evaluate_ptm_qoi, generate_design_set, QoIConfig};
use asft_core::toygen::{Property, LATENT_DIM};

use super::finetune::BestDistribution;
use super::{check_pairing, emit, ensure_dir, load_model, load_posterior, load_subspace, mix_seed, opt_cell, read_json, set};
use crate::config::FileConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::CrossEvalArgs;

/// Files in `dir` named `<prefix>…<ext>`, sorted by name.
pub fn list_prefixed(dir: &Path, prefix: &str, ext: &str) -> CliResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name.starts_with(prefix) && name.ends_with(ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// A QoI that comes back empty when no decoded design is valid.
/// PTM and posterior QoI on one design set; `None` when degenerate.
type Baselines = (Option<f64>, Option<f64>);

fn tolerate(r: asft_core::error::Result<f64>) -> CliResult<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(CoreError::DegenerateEvaluation(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

pub fn run(cfg: &FileConfig, args: &CrossEvalArgs, argv: &[String]) -> CliResult<()> {
    let mut section = cfg.cross_eval.clone();
    set(&mut section.design_seeds, args.design_seeds.clone().map(|l| l.0));
    set(&mut section.eval_seed, args.eval_seed);
    section.control |= args.control;

    let model = load_model(&args.model)?;
    let subspace = load_subspace(&args.subspace)?;
    check_pairing(&model, &subspace)?;
    let post = load_posterior(&args.posterior, subspace.dim())?;
    let files = list_prefixed(&args.dists, "best_", ".json")?;
    if files.is_empty() {
        return Err(CliError::usage(format!(
            "no fine-tuned distributions (best_*.json) in {}",
            args.dists.display()
        )));
    }
    let mut dists: Vec<(String, Property, SubspaceGaussian)> = Vec::new();
    for f in &files {
        let b: BestDistribution = read_json(f)?;
        let name = f
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .trim_start_matches("best_")
            .to_string();
        let dist = SubspaceGaussian::new(b.mu, b.sigma)?;
        if dist.dim() != subspace.dim() {
            return Err(CliError::usage(format!("{}: dimension does not match the subspace", f.display())));
        }
        dists.push((name, b.property, dist));
    }
    if section.control {
        let mut props: Vec<Property> = dists.iter().map(|d| d.1).collect();
        props.sort_by_key(|p| p.name());
        props.dedup();
        for p in props {
            let origin = SubspaceGaussian::point_mass(vec![0.0; subspace.dim()]);
            dists.push((format!("control-origin_{p}"), p, origin));
        }
    }

    let points = cfg.finetune.design_points;
    let qoi_cfg = |p: Property| QoIConfig {
        top_fraction: cfg.finetune.top_fraction,
        models: cfg.finetune.models,
        ..QoIConfig::for_property(p)
    };
    // baselines shared by every distribution with the same property
    let mut baselines: BTreeMap<(&'static str, u64), Baselines> = BTreeMap::new();
    let mut csv = String::from("distribution,property,design_seed,baseline,qoi,baseline_qoi,improvement\n");
    for (name, property, dist) in &dists {
        let qc = qoi_cfg(*property);
        for &ds in &section.design_seeds {
            let design = generate_design_set(LATENT_DIM, points, ds)?;
            let noise = SeededRng::new(mix_seed(&[section.eval_seed, ds]), 0);
            let key = (property.name(), ds);
            if let Entry::Vacant(slot) = baselines.entry(key) {
                let ptm = tolerate(evaluate_ptm_qoi(&model, &design, &qc).map(|r| r.qoi))?;
                let posterior = tolerate(
                    evaluate_dist_qoi(&model, &subspace, &post, &design, &qc, &mut noise.clone()).map(|r| r.qoi),
                )?;
                slot.insert((ptm, posterior));
            }
            let (ptm, posterior) = baselines[&key];
            let value = tolerate(
                evaluate_dist_qoi(&model, &subspace, dist, &design, &qc, &mut noise.clone()).map(|r| r.qoi),
            )?;
            for (label, base) in [("ptm", ptm), ("posterior", posterior)] {
                let diff = value.zip(base).map(|(v, b)| v - b);
                csv.push_str(&format!(
                    "{name},{property},{ds},{label},{},{},{}\n",
                    opt_cell(value),
                    opt_cell(base),
                    opt_cell(diff)
                ));
            }
        }
    }

    ensure_dir(&args.out)?;
    let mut manifest = RunManifest::new("cross-eval", argv, &section)?;
    manifest.seed("eval_seed", section.eval_seed);
    for ds in &section.design_seeds {
        manifest.seed(&format!("design_seed_{ds}"), *ds);
    }
    manifest.input(&args.model)?;
    manifest.input(&args.subspace)?;
    manifest.input(&args.posterior)?;
    for f in &files {
        manifest.input(f)?;
    }
    emit(&mut manifest, &args.out.join("cross_eval.csv"), csv.as_bytes())?;
    manifest.write(&args.out)?;
    println!(
        "scored {} distributions on {} design sets",
        dists.len(),
        section.design_seeds.len()
    );
    Ok(())
}
