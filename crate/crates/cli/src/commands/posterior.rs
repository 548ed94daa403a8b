use asft_core::posterior::{fit_posterior, PosteriorRecord};

use super::{check_pairing, corpus_path, emit, ensure_dir, load_corpus, load_model, load_subspace, set, to_json};
use crate::config::FileConfig;
use crate::error::CliResult;
use crate::manifest::RunManifest;
use crate::PosteriorArgs;

pub fn run(cfg: &FileConfig, args: &PosteriorArgs, argv: &[String]) -> CliResult<()> {
    let mut vi = cfg.posterior.clone();
    set(&mut vi.seed, args.vi_seed);
    set(&mut vi.iterations, args.iterations);
    set(&mut vi.learning_rate, args.learning_rate);
    set(&mut vi.prior_stddev, args.prior_stddev);
    set(&mut vi.batch_size, args.batch_size);
    set(&mut vi.init_stddev, args.init_stddev);

    let model = load_model(&args.model)?;
    let subspace = load_subspace(&args.subspace)?;
    check_pairing(&model, &subspace)?;
    let corpus_file = corpus_path(&args.model, args.corpus.as_ref());
    let corpus = load_corpus(&corpus_file)?;
    let fit = fit_posterior(&model, &subspace, &corpus, &vi)?;

    ensure_dir(&args.out)?;
    let mut manifest = RunManifest::new("posterior", argv, &vi)?;
    manifest.seed("vi_seed", vi.seed);
    manifest.input(&args.model)?;
    manifest.input(&args.subspace)?;
    manifest.input(&corpus_file)?;
    let record = PosteriorRecord::new(&fit.posterior, vi.prior_stddev, vi.seed);
    emit(&mut manifest, &args.out.join("posterior.json"), &to_json(&record)?)?;
    let mut csv = String::from("iteration,loss\n");
    for (i, l) in fit.losses.iter().enumerate() {
        csv.push_str(&format!("{i},{l}\n"));
    }
    emit(&mut manifest, &args.out.join("vi_loss.csv"), csv.as_bytes())?;
    manifest.write(&args.out)?;
    let mean_sigma = record.sigma.iter().sum::<f64>() / record.k as f64;
    println!("posterior k={}: mean sigma {:.4}", record.k, mean_sigma);
    Ok(())
}
