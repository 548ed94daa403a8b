use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::numkit::SeededRng;

/// Number of distinct tokens.
pub const VOCAB: usize = 10;
/// Fixed sequence length.
pub const SEQ_LEN: usize = 16;
pub const OPEN: u8 = 6;
pub const CLOSE: u8 = 7;
pub const BOND: u8 = 8;
pub const PAD: u8 = 9;

const NAMES: [&str; VOCAB] = ["a1", "a2", "a3", "a4", "a5", "a6", "[", "]", "=", "_"];

pub fn is_atom(t: u8) -> bool {
    t < 6
}

/// A fixed-length token sequence. Any ids below [`VOCAB`] are representable
/// so that decoder output can be held before validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ToySequence {
    tokens: [u8; SEQ_LEN],
}

impl ToySequence {
    pub fn from_tokens(tokens: &[u8]) -> Result<Self> {
        if tokens.len() > SEQ_LEN {
            return Err(CoreError::Domain(format!(
                "sequence of {} tokens exceeds length {SEQ_LEN}",
                tokens.len()
            )));
        }
        if let Some(bad) = tokens.iter().find(|&&t| usize::from(t) >= VOCAB) {
            return Err(CoreError::Domain(format!("token id {bad} out of range")));
        }
        let mut out = [PAD; SEQ_LEN];
        out[..tokens.len()].copy_from_slice(tokens);
        Ok(Self { tokens: out })
    }

    pub fn tokens(&self) -> &[u8; SEQ_LEN] {
        &self.tokens
    }

    /// Tokens up to the trailing PAD run.
    pub fn body(&self) -> &[u8] {
        let end = self
            .tokens
            .iter()
            .rposition(|&t| t != PAD)
            .map_or(0, |i| i + 1);
        &self.tokens[..end]
    }

    /// Space-separated token names with the PAD suffix stripped.
    pub fn canonical(&self) -> String {
        self.body()
            .iter()
            .map(|&t| NAMES[usize::from(t)])
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One-hot encoding, position-major (`SEQ_LEN × VOCAB`).
    pub fn one_hot(&self) -> Vec<f64> {
        let mut x = vec![0.0; SEQ_LEN * VOCAB];
        for (pos, &t) in self.tokens.iter().enumerate() {
            x[pos * VOCAB + usize::from(t)] = 1.0;
        }
        x
    }
}

impl fmt::Display for ToySequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

impl FromStr for ToySequence {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        let ids = s
            .split_whitespace()
            .map(|name| {
                NAMES
                    .iter()
                    .position(|n| *n == name)
                    .map(|i| i as u8)
                    .ok_or_else(|| CoreError::Domain(format!("unknown token `{name}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        ToySequence::from_tokens(&ids)
    }
}

/// Grammar check: balanced brackets of depth at most 2, every bond flanked
/// by atoms, PAD only as a suffix, and at least one atom.
pub fn validate(seq: &ToySequence) -> bool {
    let t = seq.tokens();
    let body = seq.body();
    if body.contains(&PAD) {
        return false;
    }
    if !body.iter().any(|&x| is_atom(x)) {
        return false;
    }
    let mut depth = 0i32;
    for (i, &x) in t.iter().enumerate() {
        match x {
            OPEN => {
                depth += 1;
                if depth > 2 {
                    return false;
                }
            }
            CLOSE => {
                depth -= 1;
                if depth < 0 {
                    return false;
                }
            }
            BOND => {
                let left = i > 0 && is_atom(t[i - 1]);
                let right = i + 1 < SEQ_LEN && is_atom(t[i + 1]);
                if !(left && right) {
                    return false;
                }
            }
            _ => {}
        }
    }
    depth == 0
}

fn max_depth(body: &[u8]) -> usize {
    let mut depth = 0usize;
    let mut best = 0usize;
    for &x in body {
        if x == OPEN {
            depth += 1;
            best = best.max(depth);
        } else if x == CLOSE {
            depth = depth.saturating_sub(1);
        }
    }
    best
}

/// The three deterministic property oracles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Property {
    #[serde(rename = "toy-logp")]
    ToyLogp,
    #[serde(rename = "toy-sas")]
    ToySas,
    #[serde(rename = "toy-act")]
    ToyAct,
}

impl Property {
    pub const ALL: [Property; 3] = [Property::ToyLogp, Property::ToySas, Property::ToyAct];

    pub fn name(self) -> &'static str {
        match self {
            Property::ToyLogp => "toy-logp",
            Property::ToySas => "toy-sas",
            Property::ToyAct => "toy-act",
        }
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Property {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Property::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| CoreError::Config(format!("unknown property `{s}`")))
    }
}

/// Per-token contribution to toy-logp, indexed by token id.
pub const LOGP_WEIGHTS: [f64; VOCAB] = [1.0, 0.5, 0.0, -0.5, -1.0, 0.25, -0.2, -0.2, 0.3, 0.0];

/// Evaluates a property oracle on a valid sequence.
pub fn property(seq: &ToySequence, which: Property) -> Result<f64> {
    if !validate(seq) {
        return Err(CoreError::Domain(format!("`{}` is not valid", seq.canonical())));
    }
    let body = seq.body();
    Ok(match which {
        Property::ToyLogp => body.iter().map(|&t| LOGP_WEIGHTS[usize::from(t)]).sum(),
        Property::ToySas => {
            let mut bigrams: Vec<(u8, u8)> = body.windows(2).map(|w| (w[0], w[1])).collect();
            bigrams.sort_unstable();
            bigrams.dedup();
            1.0 + 0.5 * bigrams.len() as f64 / SEQ_LEN as f64 + max_depth(body) as f64
        }
        Property::ToyAct => {
            let a1 = body.iter().filter(|&&t| t == 0).count() as f64;
            let a5 = body.iter().filter(|&&t| t == 4).count() as f64;
            1.0 / (1.0 + (-(2.0 * a1 - 2.0 * a5 - 4.0)).exp())
        }
    })
}

fn random_atom(rng: &mut SeededRng) -> u8 {
    rng.index(6) as u8
}

/// Draws `n` valid sequences from a stochastic grammar walk: at each step
/// an atom (p = 0.7), a bracketed group of one or two atoms (p = 0.15) or a
/// bond to a fresh atom (p = 0.15), until a target length drawn from 4..=16
/// is filled. Units that do not fit fall back to a single atom.
pub fn sample_dataset(rng: &mut SeededRng, n: usize) -> Vec<ToySequence> {
    (0..n).map(|_| sample_one(rng)).collect()
}

fn sample_one(rng: &mut SeededRng) -> ToySequence {
    let target = 4 + rng.index(SEQ_LEN - 3);
    let mut toks: Vec<u8> = Vec::with_capacity(SEQ_LEN);
    while toks.len() < target {
        let room = target - toks.len();
        let u = rng.uniform();
        if u < 0.7 {
            toks.push(random_atom(rng));
        } else if u < 0.85 {
            let inner = if room >= 4 && rng.uniform() < 0.5 { 2 } else { 1 };
            if room >= inner + 2 {
                toks.push(OPEN);
                for _ in 0..inner {
                    toks.push(random_atom(rng));
                }
                toks.push(CLOSE);
            } else {
                toks.push(random_atom(rng));
            }
        } else if room >= 2 && toks.last().is_some_and(|&t| is_atom(t)) {
            toks.push(BOND);
            toks.push(random_atom(rng));
        } else {
            toks.push(random_atom(rng));
        }
    }
    ToySequence::from_tokens(&toks).expect("grammar walk stays within the vocabulary")
}
