use asft_core::numkit::{Matrix, SeededRng};
use asft_core::subspace::{random_subspace, similarity_grid};

use super::{emit, ensure_dir, load_subspace, set};
use crate::config::FileConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::SimilarityArgs;

pub fn grid_csv(grid: &Matrix) -> String {
    let mut csv = String::from("i,j,sim\n");
    for i in 0..grid.rows() {
        for j in 0..grid.cols() {
            csv.push_str(&format!("{},{},{}\n", i + 1, j + 1, grid[(i, j)]));
        }
    }
    csv
}

pub fn run(cfg: &FileConfig, args: &SimilarityArgs, argv: &[String]) -> CliResult<()> {
    let mut section = cfg.similarity.clone();
    set(&mut section.random_pairs, args.random_pairs);
    set(&mut section.random_seed, args.random_seed);
    if args.k.is_some() {
        section.k = args.k;
    }

    let a = load_subspace(&args.a)?;
    let b = load_subspace(&args.b)?;
    if a.ambient_dim() != b.ambient_dim() {
        return Err(CliError::usage(format!(
            "subspaces live in {} and {} dimensions",
            a.ambient_dim(),
            b.ambient_dim()
        )));
    }
    let k = section.k.unwrap_or(a.dim().min(b.dim()));
    if k == 0 || k > a.dim() || k > b.dim() {
        return Err(CliError::usage(format!(
            "k={k} outside 1..={}",
            a.dim().min(b.dim())
        )));
    }

    ensure_dir(&args.out)?;
    let mut manifest = RunManifest::new("similarity", argv, &section)?;
    manifest.seed("random_seed", section.random_seed);
    manifest.input(&args.a)?;
    manifest.input(&args.b)?;
    let grid = similarity_grid(&a.projection, &b.projection, k)?;
    emit(&mut manifest, &args.out.join("as_grid.csv"), grid_csv(&grid).as_bytes())?;
    manifest.derived("as_similarity_at_k", grid[(k - 1, k - 1)]);

    if section.random_pairs > 0 {
        let d = a.ambient_dim();
        let mut mean_grid = Matrix::zeros(k, k);
        let mut pairs = String::from("pair,sim\n");
        let mut total = 0.0;
        for p in 0..section.random_pairs {
            let stream = 2 * p as u64;
            let r1 = random_subspace(d, k, &mut SeededRng::new(section.random_seed, stream))?;
            let r2 = random_subspace(d, k, &mut SeededRng::new(section.random_seed, stream + 1))?;
            let g = similarity_grid(&r1.projection, &r2.projection, k)?;
            for i in 0..k {
                for j in 0..k {
                    mean_grid[(i, j)] += g[(i, j)] / section.random_pairs as f64;
                }
            }
            let sim = g[(k - 1, k - 1)];
            total += sim;
            pairs.push_str(&format!("{p},{sim}\n"));
        }
        let mean = total / section.random_pairs as f64;
        emit(&mut manifest, &args.out.join("random_grid.csv"), grid_csv(&mean_grid).as_bytes())?;
        emit(&mut manifest, &args.out.join("random_pairs.csv"), pairs.as_bytes())?;
        manifest.derived("random_mean_similarity", mean);
        println!(
            "similarity at k={k}: active {:.4}, random mean {mean:.4} over {} pairs",
            grid[(k - 1, k - 1)],
            section.random_pairs
        );
    } else {
        println!("similarity at k={k}: active {:.4}", grid[(k - 1, k - 1)]);
    }
    manifest.write(&args.out)?;
    Ok(())
}
