use asft_core::subspace::build_active_subspace;

use super::{corpus_path, emit, ensure_dir, load_corpus, load_model, set, subspace_checkpoint};
use crate::config::FileConfig;
use crate::error::CliResult;
use crate::manifest::RunManifest;
use crate::SubspaceArgs;

pub fn run(cfg: &FileConfig, args: &SubspaceArgs, argv: &[String]) -> CliResult<()> {
    let mut build = cfg.subspace.clone();
    set(&mut build.k, args.dim);
    set(&mut build.n, args.samples);
    set(&mut build.sigma0, args.sigma0);
    set(&mut build.seed, args.subspace_seed);

    let model = load_model(&args.model)?;
    let corpus_file = corpus_path(&args.model, args.corpus.as_ref());
    let corpus = load_corpus(&corpus_file)?;
    let subspace = build_active_subspace(&model, &corpus, &build)?;

    ensure_dir(&args.out)?;
    let mut manifest = RunManifest::new("subspace", argv, &build)?;
    manifest.seed("subspace_seed", build.seed);
    manifest.input(&args.model)?;
    manifest.input(&corpus_file)?;
    let ckpt = subspace_checkpoint(&subspace)?;
    emit(&mut manifest, &args.out.join("subspace.asft"), &ckpt.to_bytes()?)?;
    let mut csv = String::from("index,eigenvalue\n");
    for (i, v) in subspace.eigenvalues.iter().enumerate() {
        csv.push_str(&format!("{},{v}\n", i + 1));
    }
    emit(&mut manifest, &args.out.join("spectrum.csv"), csv.as_bytes())?;
    let mut full = String::from("index,eigenvalue\n");
    for (i, v) in subspace.spectrum.iter().enumerate() {
        full.push_str(&format!("{},{v}\n", i + 1));
    }
    emit(&mut manifest, &args.out.join("spectrum_full.csv"), full.as_bytes())?;
    manifest.write(&args.out)?;
    println!(
        "subspace k={} from n={} gradients; leading eigenvalue {:.4}",
        subspace.dim(),
        build.n,
        subspace.eigenvalues[0]
    );
    Ok(())
}
