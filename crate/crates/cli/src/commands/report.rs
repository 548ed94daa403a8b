use std::collections::BTreeMap;

use super::cross_eval::list_prefixed;
use super::finetune::TrialRecord;
use super::{emit, ensure_dir, opt_cell, read_json};
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::ReportArgs;

pub const MODEL_NAME: &str = "toy-vae";
pub const QUANTILES: [f64; 7] = [0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0];

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_stddev(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Linear-interpolation quantile of sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn run(args: &ReportArgs, argv: &[String]) -> CliResult<()> {
    let files = list_prefixed(&args.runs, "trial_", ".json")?;
    if files.is_empty() {
        return Err(CliError::usage(format!("no trial_*.json files in {}", args.runs.display())));
    }
    let trials: Vec<TrialRecord> = files.iter().map(|f| read_json(f)).collect::<CliResult<_>>()?;

    ensure_dir(&args.out)?;
    let mut manifest = RunManifest::new("report", argv, &serde_json::json!({ "runs": args.runs }))?;
    for f in &files {
        manifest.input(f)?;
    }

    let mut groups: BTreeMap<(String, String), Vec<&TrialRecord>> = BTreeMap::new();
    let mut ptm: BTreeMap<String, BTreeMap<u64, f64>> = BTreeMap::new();
    for t in &trials {
        groups
            .entry((t.property.to_string(), t.method.to_string()))
            .or_default()
            .push(t);
        ptm.entry(t.property.to_string()).or_default().insert(t.q_seed, t.ptm_qoi);
    }

    let mut summary = String::from("model,method,property,mean,stddev\n");
    for (property, by_seed) in &ptm {
        let values: Vec<f64> = by_seed.values().copied().collect();
        let (m, s) = mean_stddev(&values);
        summary.push_str(&format!("{MODEL_NAME},ptm,{property},{m},{s}\n"));
    }
    let mut improvements = String::from("method,property,q_seed,trial,improvement\n");
    let mut quantiles = String::from("method,property,quantile,improvement\n");
    for ((property, method), group) in &groups {
        let best: Vec<f64> = group.iter().filter_map(|t| t.best_qoi).collect();
        if best.is_empty() {
            summary.push_str(&format!("{MODEL_NAME},{method},{property},,\n"));
        } else {
            let (m, s) = mean_stddev(&best);
            summary.push_str(&format!("{MODEL_NAME},{method},{property},{m},{s}\n"));
        }
        for t in group {
            improvements.push_str(&format!(
                "{method},{property},{},{},{}\n",
                t.q_seed,
                t.trial,
                opt_cell(t.improvement)
            ));
        }
        let mut imps: Vec<f64> = group.iter().filter_map(|t| t.improvement).collect();
        imps.sort_by(f64::total_cmp);
        if !imps.is_empty() {
            for q in QUANTILES {
                quantiles.push_str(&format!("{method},{property},{q},{}\n", quantile(&imps, q)));
            }
        }
        let ranked: String = imps
            .iter()
            .enumerate()
            .map(|(i, v)| format!("{} {v}\n", i + 1))
            .collect();
        emit(
            &mut manifest,
            &args.out.join(format!("plot_improvement_{method}_{property}.dat")),
            ranked.as_bytes(),
        )?;
        // mean running best over the trials that have one at each step
        let len = group.iter().map(|t| t.trace.len()).max().unwrap_or(0);
        let mut curve = String::new();
        for i in 0..len {
            let vals: Vec<f64> = group
                .iter()
                .filter_map(|t| t.trace.records.get(i).and_then(|r| r.best_so_far))
                .collect();
            if !vals.is_empty() {
                curve.push_str(&format!("{i} {}\n", mean_stddev(&vals).0));
            }
        }
        emit(
            &mut manifest,
            &args.out.join(format!("plot_best_so_far_{method}_{property}.dat")),
            curve.as_bytes(),
        )?;
    }
    emit(&mut manifest, &args.out.join("summary.csv"), summary.as_bytes())?;
    emit(&mut manifest, &args.out.join("improvements.csv"), improvements.as_bytes())?;
    emit(&mut manifest, &args.out.join("quantiles.csv"), quantiles.as_bytes())?;
    manifest.write(&args.out)?;
    print!("{summary}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statistics() {
        assert_eq!(mean_stddev(&[4.0]), (4.0, 0.0));
        let (m, s) = mean_stddev(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.25), 2.0);
        assert_eq!(quantile(&v, 0.1), 1.4);
        assert_eq!(quantile(&[7.0], 0.9), 7.0);
    }
}
