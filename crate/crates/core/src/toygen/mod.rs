//! Toy stand-in for a molecular VAE: a fixed-length token grammar with
//! deterministic validity and property oracles, and a small
//! position-factorized VAE trained on grammar samples.
//!
//! Property oracles (fixed constants):
//!
//! | property | definition |
//! |----------|------------|
//! | toy-logp | Σ w(t) over non-PAD tokens, w = a1 +1.0, a2 +0.5, a3 0, a4 −0.5, a5 −1.0, a6 +0.25, `[` −0.2, `]` −0.2, `=` +0.3 |
//! | toy-sas  | 1 + 0.5·(distinct adjacent bigrams)/16 + max bracket depth |
//! | toy-act  | logistic(2·#a1 − 2·#a5 − 4) |

mod grammar;
mod model;

use crate::error::Result;

pub use grammar::{
    is_atom, property, sample_dataset, validate, Property, ToySequence, BOND, CLOSE,
    LOGP_WEIGHTS, OPEN, PAD, SEQ_LEN, VOCAB,
};
pub use model::{
    build_corpus, mean_loss, train_vae, GradScope, LossTerms, ToyVae, TrainConfig, TrainedVae, VaeExample,
    HIDDEN, LATENT_DIM,
};

/// One canonical string per line.
pub fn export_dataset(data: &[ToySequence]) -> String {
    let mut out = String::new();
    for s in data {
        out.push_str(&s.canonical());
        out.push('\n');
    }
    out
}

/// Parses [`export_dataset`] output; blank lines are skipped.
pub fn import_dataset(text: &str) -> Result<Vec<ToySequence>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::parse)
        .collect()
}
