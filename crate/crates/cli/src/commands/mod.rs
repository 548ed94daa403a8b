pub mod cross_eval;
pub mod finetune;
pub mod posterior;
pub mod report;
pub mod similarity;
pub mod subspace;
pub mod train;

use std::path::{Path, PathBuf};

use asft_core::numkit::Matrix;
use asft_core::posterior::{PosteriorRecord, SubspaceGaussian};
use asft_core::subspace::{ActiveSubspace, SubspaceBuildConfig};
use asft_core::toygen::{import_dataset, ToySequence, ToyVae};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

pub(crate) fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes an output file and records its digest in the manifest.
pub(crate) fn emit(manifest: &mut RunManifest, path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
    manifest.output(path)
}

pub(crate) fn to_json(value: &impl Serialize) -> CliResult<Vec<u8>> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::usage(e.to_string()))?;
    text.push('\n');
    Ok(text.into_bytes())
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

pub(crate) fn model_checkpoint(model: &ToyVae, train: &impl Serialize) -> CliResult<Checkpoint> {
    let mut c = Checkpoint::new();
    c.push("params", &[model.values().len()], model.values().to_vec())?;
    c.meta.insert("kind".into(), "toy-vae".into());
    c.meta.insert(
        "train".into(),
        serde_json::to_value(train).map_err(|e| CliError::usage(e.to_string()))?,
    );
    Ok(c)
}

pub fn load_model(path: &Path) -> CliResult<ToyVae> {
    let c = Checkpoint::load(path)?;
    let params = c.require("params", 1)?;
    Ok(ToyVae::from_params(params.data.clone())?)
}

pub(crate) fn subspace_checkpoint(s: &ActiveSubspace) -> CliResult<Checkpoint> {
    let mut c = Checkpoint::new();
    let (d, k) = s.projection.shape();
    c.push("projection", &[d, k], s.projection.as_slice().to_vec())?;
    c.push("eigenvalues", &[s.eigenvalues.len()], s.eigenvalues.clone())?;
    c.push("spectrum", &[s.spectrum.len()], s.spectrum.clone())?;
    c.push("anchor", &[s.anchor.len()], s.anchor.clone())?;
    c.meta.insert("kind".into(), "active-subspace".into());
    if let Some(cfg) = &s.config {
        c.meta.insert(
            "build".into(),
            serde_json::to_value(cfg).map_err(|e| CliError::usage(e.to_string()))?,
        );
    }
    Ok(c)
}

pub fn load_subspace(path: &Path) -> CliResult<ActiveSubspace> {
    let c = Checkpoint::load(path)?;
    let p = c.require("projection", 2)?;
    let projection = Matrix::from_vec(p.shape[0], p.shape[1], p.data.clone())?;
    let eigenvalues = c.require("eigenvalues", 1)?.data.clone();
    let spectrum = c.require("spectrum", 1)?.data.clone();
    let anchor = c.require("anchor", 1)?.data.clone();
    if anchor.len() != projection.rows() || eigenvalues.len() != projection.cols() {
        return Err(CliError::usage(format!("{}: inconsistent subspace arrays", path.display())));
    }
    let config: Option<SubspaceBuildConfig> = c
        .meta
        .get("build")
        .map(|v| serde_json::from_value(v.clone()))
        .transpose()
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    Ok(ActiveSubspace {
        projection,
        eigenvalues,
        spectrum,
        anchor,
        config,
    })
}

/// Loads a posterior and checks it matches the subspace dimension.
pub fn load_posterior(path: &Path, k: usize) -> CliResult<SubspaceGaussian> {
    let record: PosteriorRecord = read_json(path)?;
    let post = record.posterior()?;
    if post.dim() != k {
        return Err(CliError::usage(format!(
            "{}: posterior has dimension {}, the subspace has {k}",
            path.display(),
            post.dim()
        )));
    }
    Ok(post)
}

/// The model's anchor block must match the subspace it is combined with.
pub(crate) fn check_pairing(model: &ToyVae, subspace: &ActiveSubspace) -> CliResult<()> {
    if model.params().stochastic_values() != subspace.anchor {
        return Err(CliError::usage(
            "subspace anchor does not match the model's decoder weights".to_string(),
        ));
    }
    Ok(())
}

pub(crate) fn corpus_path(model: &Path, explicit: Option<&PathBuf>) -> PathBuf {
    explicit
        .cloned()
        .unwrap_or_else(|| model.parent().unwrap_or(Path::new(".")).join("corpus.txt"))
}

pub(crate) fn load_corpus(path: &Path) -> CliResult<Vec<ToySequence>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let data = import_dataset(&text)?;
    if data.is_empty() {
        return Err(CliError::usage(format!("{}: corpus is empty", path.display())));
    }
    Ok(data)
}

/// Combines seed components into one 64-bit seed (SplitMix64 finalizer).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x243f_6a88_85a3_08d3;
    for &p in parts {
        let mut z = (h ^ p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

pub(crate) fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Shortest round-trip decimal form, or empty for a missing value.
pub(crate) fn opt_cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}
