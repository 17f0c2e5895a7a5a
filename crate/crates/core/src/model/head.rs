use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ModelError, Result};

/// Fully connected layer, weights stored row-major as `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        DenseLayer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        DenseLayer {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.bias.iter().enumerate().map(|(o, b)| {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            b + row.iter().zip(input).map(|(w, v)| w * v).sum::<f64>()
        }));
    }
}

/// Feed-forward head mapping an embedding vector to the scalar shift `η(e)`.
///
/// Hidden layers use ReLU followed by inverted dropout (training only); the
/// output layer is a single linear unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingHead {
    pub layers: Vec<DenseLayer>,
    pub dropout: f64,
}

/// Per-row dropout scale factors (`0` or `1/(1−rate)`) for all hidden units.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    width: usize,
    factors: Vec<f64>,
}

impl DropoutMasks {
    pub fn sample<R: Rng + ?Sized>(head: &EmbeddingHead, rows: usize, rng: &mut R) -> Self {
        let width = head.hidden_unit_count();
        let keep = 1.0 - head.dropout;
        let factors = (0..rows * width)
            .map(|_| {
                if head.dropout <= 0.0 {
                    1.0
                } else if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        DropoutMasks { width, factors }
    }

    /// All-ones masks, equivalent to inference mode.
    pub fn identity(head: &EmbeddingHead, rows: usize) -> Self {
        let width = head.hidden_unit_count();
        DropoutMasks {
            width,
            factors: vec![1.0; rows * width],
        }
    }

    pub fn rows(&self) -> usize {
        if self.width == 0 {
            0
        } else {
            self.factors.len() / self.width
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.factors[i * self.width..(i + 1) * self.width]
    }
}

/// Activations kept from a forward pass for backpropagation.
pub(crate) struct HeadTrace {
    /// Input to each layer (the embedding, then post-dropout hidden activations).
    inputs: Vec<Vec<f64>>,
    /// ReLU derivative times dropout factor for each hidden layer's units.
    gates: Vec<Vec<f64>>,
}

impl EmbeddingHead {
    pub const PAPER_HIDDEN: [usize; 2] = [256, 128];
    pub const PAPER_DROPOUT: f64 = 0.3;

    pub fn zeros(input_dim: usize, hidden: &[usize], dropout: f64) -> Self {
        let widths = Self::widths(input_dim, hidden);
        EmbeddingHead {
            layers: widths
                .windows(2)
                .map(|w| DenseLayer::zeros(w[0], w[1]))
                .collect(),
            dropout,
        }
    }

    pub fn glorot<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        let widths = Self::widths(input_dim, hidden);
        EmbeddingHead {
            layers: widths
                .windows(2)
                .map(|w| DenseLayer::glorot(w[0], w[1], rng))
                .collect(),
            dropout,
        }
    }

    fn widths(input_dim: usize, hidden: &[usize]) -> Vec<usize> {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input_dim);
        widths.extend_from_slice(hidden);
        widths.push(1);
        widths
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(ModelError::Invalid("embedding head has no layers".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Invalid(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout
            )));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.weights.len() != layer.inputs * layer.outputs
                || layer.bias.len() != layer.outputs
            {
                return Err(ModelError::Shape(format!("head layer {i} has inconsistent sizes")));
            }
            if i > 0 && self.layers[i - 1].outputs != layer.inputs {
                return Err(ModelError::Shape(format!(
                    "head layer {i} expects {} inputs, previous layer has {} outputs",
                    layer.inputs,
                    self.layers[i - 1].outputs
                )));
            }
        }
        if self.layers.last().map(|l| l.outputs) != Some(1) {
            return Err(ModelError::Shape("head output must be a single unit".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.outputs)
            .collect()
    }

    pub fn hidden_unit_count(&self) -> usize {
        self.hidden_widths().iter().sum()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    /// Output `η(e)`. `mask` holds dropout factors for one row; `None` is inference.
    pub fn forward(&self, e: &[f64], mask: Option<&[f64]>) -> f64 {
        let mut current = e.to_vec();
        let mut next = Vec::new();
        let mut offset = 0;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.apply(&current, &mut next);
            if i < last {
                for (j, v) in next.iter_mut().enumerate() {
                    let factor = mask.map_or(1.0, |m| m[offset + j]);
                    *v = v.max(0.0) * factor;
                }
                offset += layer.outputs;
            }
            std::mem::swap(&mut current, &mut next);
        }
        current[0]
    }

    pub(crate) fn forward_trace(&self, e: &[f64], mask: Option<&[f64]>) -> (f64, HeadTrace) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut gates = Vec::with_capacity(self.layers.len() - 1);
        let mut current = e.to_vec();
        let mut offset = 0;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.apply(&current, &mut out);
            if i < last {
                let mut gate = Vec::with_capacity(layer.outputs);
                for (j, v) in out.iter_mut().enumerate() {
                    let factor = mask.map_or(1.0, |m| m[offset + j]);
                    let g = if *v > 0.0 { factor } else { 0.0 };
                    *v *= g;
                    gate.push(g);
                }
                gates.push(gate);
                offset += layer.outputs;
            }
            inputs.push(std::mem::replace(&mut current, out));
        }
        (current[0], HeadTrace { inputs, gates })
    }

    /// Accumulates `d_out · ∂η/∂w` into `grad`, laid out as [`Self::flatten_into`].
    pub(crate) fn backward(&self, trace: &HeadTrace, d_out: f64, grad: &mut [f64]) {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for layer in &self.layers {
            offsets.push(acc);
            acc += layer.param_count();
        }
        let mut delta = vec![d_out];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.inputs[i];
            let base = offsets[i];
            let (wgrad, bgrad) = grad[base..base + layer.param_count()].split_at_mut(layer.weights.len());
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                bgrad[o] += d;
                let row = &mut wgrad[o * layer.inputs..(o + 1) * layer.inputs];
                for (w, v) in row.iter_mut().zip(input) {
                    *w += d * v;
                }
            }
            if i == 0 {
                break;
            }
            let gate = &trace.gates[i - 1];
            let mut prev = vec![0.0; layer.inputs];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            for (p, g) in prev.iter_mut().zip(gate) {
                *p *= g;
            }
            delta = prev;
        }
    }

    pub(crate) fn flatten_into(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
    }

    pub(crate) fn assign_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for layer in &mut self.layers {
            let nw = layer.weights.len();
            layer.weights.copy_from_slice(&flat[offset..offset + nw]);
            offset += nw;
            let nb = layer.bias.len();
            layer.bias.copy_from_slice(&flat[offset..offset + nb]);
            offset += nb;
        }
    }
}
