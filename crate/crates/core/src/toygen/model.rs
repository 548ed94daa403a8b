use rayon::prelude::*;

use super::grammar::{ToySequence, SEQ_LEN, VOCAB};
use crate::error::{CoreError, Result};
use crate::nnet::{Activation, AdamState, Mlp, Objective, ParamPartition};
use crate::numkit::SeededRng;

pub const LATENT_DIM: usize = 8;
pub const HIDDEN: usize = 64;
const INPUT: usize = SEQ_LEN * VOCAB;

/// Position-factorized sequence VAE. The decoder layers form the
/// stochastic block of the parameter partition.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyVae {
    encoder: Mlp,
    decoder: Mlp,
    params: ParamPartition,
}

/// Reconstruction and KL parts of the per-example loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub recon: f64,
    pub kl: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.recon + self.kl
    }
}

/// Which parameters receive gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradScope {
    All,
    DecoderOnly,
}

impl ToyVae {
    fn architecture() -> (Mlp, Mlp) {
        let encoder = Mlp::new(
            &[INPUT, HIDDEN, 2 * LATENT_DIM],
            &[Activation::Tanh, Activation::Identity],
            0,
            0,
        )
        .expect("static encoder layout");
        let decoder = Mlp::new(
            &[LATENT_DIM, HIDDEN, INPUT],
            &[Activation::Tanh, Activation::Identity],
            encoder.param_range().end,
            2,
        )
        .expect("static decoder layout");
        (encoder, decoder)
    }

    /// Builds a model from a full parameter vector.
    pub fn from_params(values: Vec<f64>) -> Result<Self> {
        let (encoder, decoder) = Self::architecture();
        let layout: Vec<_> = encoder
            .layers()
            .iter()
            .chain(decoder.layers())
            .cloned()
            .collect();
        let params = ParamPartition::new(values, layout, decoder.param_range().collect())?;
        Ok(Self {
            encoder,
            decoder,
            params,
        })
    }

    pub fn zeros() -> Self {
        Self::from_params(vec![0.0; Self::param_count()]).expect("static layout")
    }

    /// Gaussian initialization scaled by `1/sqrt(fan_in)`, zero biases.
    pub fn random(rng: &mut SeededRng) -> Self {
        let (encoder, decoder) = Self::architecture();
        let mut values = vec![0.0; Self::param_count()];
        for layer in encoder.layers().iter().chain(decoder.layers()) {
            let scale = 1.0 / (layer.inputs as f64).sqrt();
            let start = layer.offset;
            for v in &mut values[start..start + layer.inputs * layer.outputs] {
                *v = scale * rng.normal();
            }
        }
        Self::from_params(values).expect("static layout")
    }

    pub fn param_count() -> usize {
        let (_, decoder) = Self::architecture();
        decoder.param_range().end
    }

    pub fn params(&self) -> &ParamPartition {
        &self.params
    }

    pub fn values(&self) -> &[f64] {
        self.params.values()
    }

    pub fn decoder_range(&self) -> std::ops::Range<usize> {
        self.decoder.param_range()
    }

    /// Copy of this model with different full parameters (same layout).
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        let mut out = self.clone();
        out.params.set_values(values)?;
        Ok(out)
    }

    /// Posterior mean and standard deviation of the latent code.
    pub fn encode(&self, seq: &ToySequence) -> Result<(Vec<f64>, Vec<f64>)> {
        encode_with(&self.encoder, self.values(), seq)
    }

    /// Greedy decode with this model's weights.
    pub fn decode(&self, z: &[f64]) -> Result<ToySequence> {
        self.decode_with(self.values(), z)
    }

    /// Greedy decode with an alternative full parameter vector sharing this
    /// model's layout: per-position argmax, lowest id wins ties.
    pub fn decode_with(&self, values: &[f64], z: &[f64]) -> Result<ToySequence> {
        if z.len() != LATENT_DIM || z.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Dimension(format!(
                "latent point must be {LATENT_DIM} finite values"
            )));
        }
        let logits = self.decoder.forward(values, z)?;
        let mut tokens = [0u8; SEQ_LEN];
        for (pos, tok) in tokens.iter_mut().enumerate() {
            let row = &logits[pos * VOCAB..(pos + 1) * VOCAB];
            let mut best = 0usize;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            *tok = best as u8;
        }
        ToySequence::from_tokens(&tokens)
    }

    /// Loss with a fresh reparameterization draw from `rng`.
    pub fn vae_loss(&self, seq: &ToySequence, rng: &mut SeededRng) -> Result<f64> {
        let eps = rng.normal_vec(LATENT_DIM);
        Ok(self.loss_terms_with(self.values(), seq, &eps)?.total())
    }

    /// Loss parts at explicit parameters and latent noise.
    pub fn loss_terms_with(&self, values: &[f64], seq: &ToySequence, eps: &[f64]) -> Result<LossTerms> {
        let pass = self.forward_pass(values, seq, eps)?;
        Ok(pass.terms)
    }

    /// Loss and full-length gradient at explicit parameters and latent
    /// noise. With [`GradScope::DecoderOnly`] the encoder slots stay zero.
    pub fn loss_and_grad_with(
        &self,
        values: &[f64],
        seq: &ToySequence,
        eps: &[f64],
        scope: GradScope,
    ) -> Result<(f64, Vec<f64>)> {
        self.weighted_loss_and_grad(values, seq, eps, scope, 1.0)
    }

    /// Gradient of `recon + kl_weight · kl`; the returned loss is unweighted.
    fn weighted_loss_and_grad(
        &self,
        values: &[f64],
        seq: &ToySequence,
        eps: &[f64],
        scope: GradScope,
        kl_weight: f64,
    ) -> Result<(f64, Vec<f64>)> {
        let pass = self.forward_pass(values, seq, eps)?;
        let mut grad = vec![0.0; values.len()];
        // d recon / d logits = softmax − one-hot
        let mut d_logits = pass.probs;
        for (pos, &t) in seq.tokens().iter().enumerate() {
            d_logits[pos * VOCAB + usize::from(t)] -= 1.0;
        }
        let d_z = self
            .decoder
            .backward(values, &pass.dec_trace, &d_logits, &mut grad);
        if scope == GradScope::All {
            let mut d_head = vec![0.0; 2 * LATENT_DIM];
            for i in 0..LATENT_DIM {
                let mu = pass.mu[i];
                let sigma = pass.sigma[i];
                d_head[i] = d_z[i] + kl_weight * mu;
                d_head[LATENT_DIM + i] =
                    d_z[i] * eps[i] * sigma + kl_weight * (sigma * sigma - 1.0);
            }
            self.encoder
                .backward(values, &pass.enc_trace, &d_head, &mut grad);
        }
        Ok((pass.terms.total(), grad))
    }

    fn forward_pass(&self, values: &[f64], seq: &ToySequence, eps: &[f64]) -> Result<Pass> {
        if eps.len() != LATENT_DIM {
            return Err(CoreError::Dimension("latent noise length".into()));
        }
        let enc_trace = self.encoder.forward_trace(values, &seq.one_hot())?;
        let head = enc_trace.output();
        let mu = head[..LATENT_DIM].to_vec();
        let log_sigma = &head[LATENT_DIM..];
        let sigma: Vec<f64> = log_sigma.iter().map(|v| v.exp()).collect();
        let mut kl = 0.0;
        for i in 0..LATENT_DIM {
            kl += 0.5 * (mu[i] * mu[i] + sigma[i] * sigma[i] - 1.0 - 2.0 * log_sigma[i]);
        }
        let z: Vec<f64> = (0..LATENT_DIM).map(|i| mu[i] + sigma[i] * eps[i]).collect();
        if !kl.is_finite() || z.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NumericOverflow { layer: 1 });
        }
        let dec_trace = self.decoder.forward_trace(values, &z)?;
        let logits = dec_trace.output();
        let mut probs = vec![0.0; INPUT];
        let mut recon = 0.0;
        for (pos, &t) in seq.tokens().iter().enumerate() {
            let row = &logits[pos * VOCAB..(pos + 1) * VOCAB];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_norm = max + sum.ln();
            recon += log_norm - row[usize::from(t)];
            for (p, v) in probs[pos * VOCAB..(pos + 1) * VOCAB].iter_mut().zip(row) {
                *p = (v - log_norm).exp();
            }
        }
        if !recon.is_finite() {
            return Err(CoreError::NumericOverflow { layer: 3 });
        }
        Ok(Pass {
            terms: LossTerms { recon, kl },
            mu,
            sigma,
            probs,
            enc_trace,
            dec_trace,
        })
    }

    /// Fraction of token positions reproduced by `decode(encode-mean)`.
    pub fn reconstruction_accuracy(&self, data: &[ToySequence]) -> Result<f64> {
        let mut hits = 0usize;
        for s in data {
            let (mu, _) = self.encode(s)?;
            let back = self.decode(&mu)?;
            hits += s
                .tokens()
                .iter()
                .zip(back.tokens())
                .filter(|(a, b)| a == b)
                .count();
        }
        Ok(hits as f64 / (data.len() * SEQ_LEN) as f64)
    }
}

fn encode_with(encoder: &Mlp, values: &[f64], seq: &ToySequence) -> Result<(Vec<f64>, Vec<f64>)> {
    let head = encoder.forward(values, &seq.one_hot())?;
    let mu = head[..LATENT_DIM].to_vec();
    let sigma = head[LATENT_DIM..].iter().map(|v| v.exp()).collect();
    Ok((mu, sigma))
}

struct Pass {
    terms: LossTerms,
    mu: Vec<f64>,
    sigma: Vec<f64>,
    probs: Vec<f64>,
    enc_trace: crate::nnet::ForwardTrace,
    dec_trace: crate::nnet::ForwardTrace,
}

/// One training example with frozen latent noise, usable as an
/// [`Objective`] for gradient checks.
pub struct VaeExample<'a> {
    pub model: &'a ToyVae,
    pub seq: ToySequence,
    pub eps: Vec<f64>,
}

impl Objective for VaeExample<'_> {
    fn loss_and_full_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.model
            .loss_and_grad_with(params, &self.seq, &self.eps, GradScope::All)
    }
}

/// Pre-training settings.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dataset_size: usize,
    /// Distinct grammar-walk scaffolds the corpus is resampled from.
    pub scaffolds: usize,
    /// Epochs over which the KL weight ramps linearly from 0 to 1.
    pub kl_warmup_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            dataset_size: 4000,
            scaffolds: 128,
            kl_warmup_epochs: 10,
            seed: 2024,
        }
    }
}

/// Training corpus: `config.scaffolds` grammar-walk sequences (stream 7 of
/// the seed), resampled with replacement to `config.dataset_size` entries.
pub fn build_corpus(config: &TrainConfig) -> Result<Vec<ToySequence>> {
    if config.scaffolds == 0 || config.dataset_size == 0 {
        return Err(CoreError::Config("corpus sizes must be positive".into()));
    }
    let mut rng = SeededRng::new(config.seed, 7);
    let pool = super::grammar::sample_dataset(&mut rng, config.scaffolds);
    Ok((0..config.dataset_size)
        .map(|_| pool[rng.index(pool.len())])
        .collect())
}

/// Trained model plus its per-epoch mean losses.
#[derive(Debug, Clone)]
pub struct TrainedVae {
    pub model: ToyVae,
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
}

/// Trains the VAE with Adam on mini-batches, one reparameterization draw per
/// example. Stream 0 of `config.seed` initializes the weights, stream 1
/// shuffles, and example noise comes from per-step streams, so results are
/// bit-identical for a fixed seed regardless of thread count.
pub fn train_vae(dataset: &[ToySequence], config: &TrainConfig) -> Result<TrainedVae> {
    if dataset.is_empty() {
        return Err(CoreError::EmptyInput("training dataset".into()));
    }
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(CoreError::Config("epochs and batch size must be positive".into()));
    }
    let base = SeededRng::new(config.seed, 0);
    let mut model = ToyVae::random(&mut base.derive(0));
    let mut shuffle_rng = base.derive(1);
    let mut adam = AdamState::new(ToyVae::param_count(), config.learning_rate);
    let initial_loss = mean_loss(&model, dataset, &mut base.derive(2))?;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut step: u64 = 0;
    for epoch in 0..config.epochs {
        let kl_weight = if epoch < config.kl_warmup_epochs {
            epoch as f64 / config.kl_warmup_epochs as f64
        } else {
            1.0
        };
        shuffle_rng.shuffle(&mut order);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut noise = base.derive(1000 + step);
            step += 1;
            let eps: Vec<Vec<f64>> = batch.iter().map(|_| noise.normal_vec(LATENT_DIM)).collect();
            let values = model.values().to_vec();
            let results: Vec<Result<(f64, Vec<f64>)>> = batch
                .par_iter()
                .zip(eps.par_iter())
                .map(|(&i, e)| {
                    model.weighted_loss_and_grad(&values, &dataset[i], e, GradScope::All, kl_weight)
                })
                .collect();
            let mut grad = vec![0.0; values.len()];
            for r in results {
                let (loss, g) = r.map_err(|_| CoreError::Training {
                    stage: "epoch",
                    index: epoch,
                })?;
                total += loss;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            let mut updated = values;
            adam.step(&mut updated, &grad)?;
            if updated.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::Training {
                    stage: "epoch",
                    index: epoch,
                });
            }
            model = model.with_values(updated)?;
        }
        let mean = total / dataset.len() as f64;
        if !mean.is_finite() {
            return Err(CoreError::Training {
                stage: "epoch",
                index: epoch,
            });
        }
        epoch_losses.push(mean);
    }
    Ok(TrainedVae {
        model,
        initial_loss,
        epoch_losses,
    })
}

/// Mean single-sample loss over a dataset.
pub fn mean_loss(model: &ToyVae, data: &[ToySequence], rng: &mut SeededRng) -> Result<f64> {
    let mut total = 0.0;
    for s in data {
        total += model.vae_loss(s, rng)?;
    }
    Ok(total / data.len() as f64)
}
