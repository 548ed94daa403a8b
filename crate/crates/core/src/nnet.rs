//! Small fully-connected networks over a flat parameter vector, with exact
//! reverse-mode gradients and an Adam optimizer.
//!
//! Every layer stores its weights as an `outputs × inputs` row-major block
//! followed by `outputs` biases, at a fixed offset into the flat vector.

use std::ops::Range;

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// One affine layer placed in the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    /// Position of this layer in the model layout, used in error reports.
    pub index: usize,
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub offset: usize,
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }

    pub fn param_range(&self) -> Range<usize> {
        self.offset..self.offset + self.param_count()
    }

    fn weights<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset..self.offset + self.outputs * self.inputs]
    }

    fn biases<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        let start = self.offset + self.outputs * self.inputs;
        &params[start..start + self.outputs]
    }
}

/// A chain of affine layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<LayerSpec>,
}

/// Layer outputs recorded during a forward pass; `values[0]` is the input.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub values: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.values.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    /// Lays out layers with the given widths contiguously from `offset`.
    /// `activations[i]` applies to the output of layer `i`; `first_index`
    /// numbers the layers within the enclosing model.
    pub fn new(
        widths: &[usize],
        activations: &[Activation],
        offset: usize,
        first_index: usize,
    ) -> Result<Self> {
        if widths.len() < 2 || activations.len() != widths.len() - 1 {
            return Err(CoreError::Config(
                "an MLP needs n+1 widths and n activations".into(),
            ));
        }
        let mut layers = Vec::with_capacity(activations.len());
        let mut at = offset;
        for (i, act) in activations.iter().enumerate() {
            let spec = LayerSpec {
                index: first_index + i,
                inputs: widths[i],
                outputs: widths[i + 1],
                activation: *act,
                offset: at,
            };
            at += spec.param_count();
            layers.push(spec);
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn param_range(&self) -> Range<usize> {
        let start = self.layers[0].offset;
        let last = self.layers.last().expect("non-empty");
        start..last.offset + last.param_count()
    }

    pub fn forward(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        let mut x = self.check_input(input)?.to_vec();
        for layer in &self.layers {
            x = affine(layer, params, &x)?;
        }
        Ok(x)
    }

    pub fn forward_trace(&self, params: &[f64], input: &[f64]) -> Result<ForwardTrace> {
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(self.check_input(input)?.to_vec());
        for layer in &self.layers {
            let next = affine(layer, params, values.last().expect("seeded"))?;
            values.push(next);
        }
        Ok(ForwardTrace { values })
    }

    /// Back-propagates `d_output` (gradient w.r.t. the post-activation
    /// output) through the recorded trace. Parameter gradients are
    /// accumulated into `grad`, which is indexed like the flat parameter
    /// vector. Returns the gradient w.r.t. the network input.
    pub fn backward(
        &self,
        params: &[f64],
        trace: &ForwardTrace,
        d_output: &[f64],
        grad: &mut [f64],
    ) -> Vec<f64> {
        let mut delta = d_output.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let out = &trace.values[li + 1];
            let inp = &trace.values[li];
            for (d, y) in delta.iter_mut().zip(out) {
                *d *= layer.activation.derivative_from_output(*y);
            }
            let w = layer.weights(params);
            let bias_at = layer.offset + layer.outputs * layer.inputs;
            let mut d_in = vec![0.0; layer.inputs];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = o * layer.inputs;
                let g_row = &mut grad[layer.offset + row..layer.offset + row + layer.inputs];
                for (g, x) in g_row.iter_mut().zip(inp) {
                    *g += d * x;
                }
                for (di, wv) in d_in.iter_mut().zip(&w[row..row + layer.inputs]) {
                    *di += d * wv;
                }
                grad[bias_at + o] += d;
            }
            delta = d_in;
        }
        delta
    }

    fn check_input<'a>(&self, input: &'a [f64]) -> Result<&'a [f64]> {
        if input.len() != self.input_width() {
            return Err(CoreError::Dimension(format!(
                "network expects {} inputs, got {}",
                self.input_width(),
                input.len()
            )));
        }
        Ok(input)
    }
}

fn affine(layer: &LayerSpec, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let w = layer.weights(params);
    let b = layer.biases(params);
    let mut out = Vec::with_capacity(layer.outputs);
    for o in 0..layer.outputs {
        let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
        let pre: f64 = row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b[o];
        let y = layer.activation.apply(pre);
        if !y.is_finite() {
            return Err(CoreError::NumericOverflow { layer: layer.index });
        }
        out.push(y);
    }
    Ok(out)
}

/// Flat parameter vector with a fixed stochastic/deterministic split.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPartition {
    values: Vec<f64>,
    stochastic: Vec<usize>,
    layout: Vec<LayerSpec>,
}

impl ParamPartition {
    pub fn new(values: Vec<f64>, layout: Vec<LayerSpec>, stochastic: Vec<usize>) -> Result<Self> {
        let total: usize = layout.iter().map(LayerSpec::param_count).sum();
        if total != values.len() {
            return Err(CoreError::Dimension(format!(
                "layout covers {total} parameters but {} values were given",
                values.len()
            )));
        }
        if stochastic.is_empty() {
            return Err(CoreError::Config("stochastic block must be non-empty".into()));
        }
        let mut seen = vec![false; values.len()];
        for &i in &stochastic {
            if i >= values.len() || seen[i] {
                return Err(CoreError::Config(format!(
                    "stochastic index {i} is out of range or repeated"
                )));
            }
            seen[i] = true;
        }
        Ok(Self {
            values,
            stochastic,
            layout,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layout(&self) -> &[LayerSpec] {
        &self.layout
    }

    pub fn stochastic_indices(&self) -> &[usize] {
        &self.stochastic
    }

    pub fn stochastic_len(&self) -> usize {
        self.stochastic.len()
    }

    /// θ^S, in mask order.
    pub fn stochastic_values(&self) -> Vec<f64> {
        self.gather(&self.values)
    }

    /// Selects the stochastic coordinates of a full-length vector.
    pub fn gather(&self, full: &[f64]) -> Vec<f64> {
        self.stochastic.iter().map(|&i| full[i]).collect()
    }

    /// Full parameter vector with θ^S replaced and θ^D kept.
    pub fn with_stochastic(&self, theta_s: &[f64]) -> Result<Vec<f64>> {
        if theta_s.len() != self.stochastic.len() {
            return Err(CoreError::Dimension(format!(
                "stochastic block has {} entries, got {}",
                self.stochastic.len(),
                theta_s.len()
            )));
        }
        let mut full = self.values.clone();
        for (&i, v) in self.stochastic.iter().zip(theta_s) {
            full[i] = *v;
        }
        Ok(full)
    }

    pub fn set_values(&mut self, values: Vec<f64>) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(CoreError::Dimension("parameter length changed".into()));
        }
        self.values = values;
        Ok(())
    }
}

/// A differentiable scalar loss over a full parameter vector.
pub trait Objective {
    fn loss_and_full_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Loss and its exact gradient restricted to the stochastic block θ^S.
pub fn loss_and_grad(params: &ParamPartition, objective: &impl Objective) -> Result<(f64, Vec<f64>)> {
    let (loss, full) = objective.loss_and_full_grad(params.values())?;
    Ok((loss, params.gather(&full)))
}

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: vec![0.0; len],
            second: vec![0.0; len],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Descends along `grads`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(CoreError::Dimension(format!(
                "adam state has {} slots, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.first[i] = self.beta1 * self.first[i] + (1.0 - self.beta1) * g;
            self.second[i] = self.beta2 * self.second[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first[i] / c1;
            let v_hat = self.second[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
