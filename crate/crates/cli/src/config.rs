//! Run configuration: one TOML file with a table per command. Command-line
//! flags are applied on top of the file, so a flag always wins.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use asft_core::finetune::FinetuneConfig;
use asft_core::posterior::ViConfig;
use asft_core::subspace::SubspaceBuildConfig;
use asft_core::toygen::{Property, TrainConfig};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub train: TrainConfig,
    pub subspace: SubspaceBuildConfig,
    pub posterior: ViConfig,
    pub finetune: FinetuneSection,
    pub cross_eval: CrossEvalSection,
    pub similarity: SimilaritySection,
}

impl FileConfig {
    /// Defaults when no file is given; a missing or unparsable file is a
    /// usage error.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Bo,
    Reinforce,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Bo => "bo",
            Method::Reinforce => "reinforce",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bo" => Ok(Method::Bo),
            "reinforce" => Ok(Method::Reinforce),
            other => Err(format!("unknown method `{other}` (expected bo or reinforce)")),
        }
    }
}

/// KL threshold: a fixed value, or `auto` for a fraction of the largest
/// corner KL of the design box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaKl {
    Auto,
    Value(f64),
}

impl FromStr for DeltaKl {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(DeltaKl::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(DeltaKl::Value(v)),
            _ => Err(format!("delta-kl must be `auto` or a positive number, got `{s}`")),
        }
    }
}

impl Serialize for DeltaKl {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            DeltaKl::Auto => s.serialize_str("auto"),
            DeltaKl::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for DeltaKl {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(v) => DeltaKl::from_str(&v.to_string()),
            Raw::Text(t) => DeltaKl::from_str(&t),
        }
        .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub method: Method,
    pub property: Property,
    pub delta_kl: DeltaKl,
    /// Fraction of the largest corner KL used by `delta_kl = "auto"`.
    pub delta_fraction: f64,
    pub q_seeds: Vec<u64>,
    pub trials: usize,
    pub opt_seed: u64,
    pub design_points: usize,
    pub models: usize,
    pub top_fraction: f64,
    pub common_random_numbers: bool,
    /// Keep elapsed milliseconds in traces. Off by default so that reruns
    /// are byte-identical.
    pub record_wall_time: bool,
    /// Optimizer settings. `budget` governs: BO spends it as the initial
    /// candidates plus iterations, REINFORCE as one evaluation per step.
    pub optimizer: FinetuneConfig,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        Self {
            method: Method::Bo,
            property: Property::ToyLogp,
            delta_kl: DeltaKl::Auto,
            delta_fraction: 0.7,
            q_seeds: vec![0],
            trials: 1,
            opt_seed: 0,
            design_points: 1000,
            models: 10,
            top_fraction: 0.1,
            common_random_numbers: false,
            record_wall_time: false,
            optimizer: FinetuneConfig::default(),
        }
    }
}

impl FinetuneSection {
    /// Re-derives the per-method iteration counts from the budget.
    pub fn apply_budget(&mut self) -> CliResult<()> {
        let o = &mut self.optimizer;
        if o.budget <= o.init_candidates {
            return Err(CliError::usage(format!(
                "budget {} must exceed the {} initial candidates",
                o.budget, o.init_candidates
            )));
        }
        o.bo_iterations = o.budget - o.init_candidates;
        o.reinforce_iterations = o.budget;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossEvalSection {
    pub design_seeds: Vec<u64>,
    pub eval_seed: u64,
    /// Also score the point mass at the subspace origin.
    pub control: bool,
}

impl Default for CrossEvalSection {
    fn default() -> Self {
        Self {
            design_seeds: (100..105).collect(),
            eval_seed: 0,
            control: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilaritySection {
    pub random_pairs: usize,
    pub random_seed: u64,
    /// Leading columns compared; defaults to the smaller subspace dimension.
    pub k: Option<usize>,
}

impl Default for SimilaritySection {
    fn default() -> Self {
        Self {
            random_pairs: 10,
            random_seed: 0,
            k: None,
        }
    }
}

/// A seed list given as one flag value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

impl FromStr for SeedList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        parse_seed_list(s).map(SeedList)
    }
}

/// Parses seed lists such as `3`, `0..9` (inclusive), `0..=9` or `1,4,7..8`.
pub fn parse_seed_list(s: &str) -> Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let b = b.strip_prefix('=').unwrap_or(b);
            let lo: u64 = a.trim().parse().map_err(|_| format!("bad seed range `{part}`"))?;
            let hi: u64 = b.trim().parse().map_err(|_| format!("bad seed range `{part}`"))?;
            if hi < lo {
                return Err(format!("empty seed range `{part}`"));
            }
            out.extend(lo..=hi);
        } else {
            out.push(part.parse().map_err(|_| format!("bad seed `{part}`"))?);
        }
    }
    if out.is_empty() {
        return Err("seed list is empty".into());
    }
    Ok(out)
}
