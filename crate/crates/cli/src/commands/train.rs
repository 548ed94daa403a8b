use asft_core::toygen::{build_corpus, export_dataset, train_vae};

use super::{emit, ensure_dir, model_checkpoint, set};
use crate::config::FileConfig;
use crate::error::CliResult;
use crate::manifest::RunManifest;
use crate::TrainArgs;

pub fn run(cfg: &FileConfig, args: &TrainArgs, argv: &[String]) -> CliResult<()> {
    let mut train = cfg.train.clone();
    set(&mut train.seed, args.train_seed);
    set(&mut train.epochs, args.epochs);
    set(&mut train.dataset_size, args.dataset_size);
    set(&mut train.learning_rate, args.learning_rate);

    let corpus = build_corpus(&train)?;
    let trained = train_vae(&corpus, &train)?;

    ensure_dir(&args.out)?;
    let mut manifest = RunManifest::new("train", argv, &train)?;
    manifest.seed("train_seed", train.seed);
    let ckpt = model_checkpoint(&trained.model, &train)?;
    emit(&mut manifest, &args.out.join("model.asft"), &ckpt.to_bytes()?)?;
    emit(&mut manifest, &args.out.join("corpus.txt"), export_dataset(&corpus).as_bytes())?;
    let mut csv = String::from("epoch,loss\n");
    csv.push_str(&format!("0,{}\n", trained.initial_loss));
    for (i, l) in trained.epoch_losses.iter().enumerate() {
        csv.push_str(&format!("{},{l}\n", i + 1));
    }
    emit(&mut manifest, &args.out.join("train_loss.csv"), csv.as_bytes())?;
    manifest.derived("final_loss", trained.epoch_losses.last());
    manifest.write(&args.out)?;
    println!(
        "trained {} parameters: loss {:.4} -> {:.4}",
        trained.model.values().len(),
        trained.initial_loss,
        trained.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}
