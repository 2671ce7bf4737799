//! Reference classifiers with hand-derived backpropagation.
//!
//! A [`Model`] is a chain of dense layers `h -> h W + b` with an activation
//! between layers and raw logits at the end. Two shapes are used throughout:
//! logistic regression (one layer) and a perceptron with one hidden layer.
//!
//! Parameters flatten in a fixed order: layers ascending, each layer's weight
//! matrix (`fan_in x fan_out`, row-major) followed by its bias.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output `a = f(z)`.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Network shape, independent of the data dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Logreg,
    Mlp { hidden: usize, activation: Activation },
}

impl Architecture {
    pub const DEFAULT_HIDDEN: usize = 128;

    pub fn mlp() -> Self {
        Architecture::Mlp {
            hidden: Self::DEFAULT_HIDDEN,
            activation: Activation::Relu,
        }
    }

    fn widths(&self, features: usize, classes: usize) -> Vec<usize> {
        match *self {
            Architecture::Logreg => vec![features, classes],
            Architecture::Mlp { hidden, .. } => vec![features, hidden, classes],
        }
    }

    fn activation(&self) -> Activation {
        match *self {
            Architecture::Logreg => Activation::Relu,
            Architecture::Mlp { activation, .. } => activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `fan_in x fan_out`
    pub weight: Tensor,
    /// `fan_out`
    pub bias: Tensor,
}

impl Dense {
    fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    layers: Vec<Dense>,
    hidden_activation: Activation,
    class_count: usize,
}

impl Model {
    pub fn new(layers: Vec<Dense>, hidden_activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::dim(None, "a model needs at least one layer"));
        }
        for (i, layer) in layers.iter().enumerate() {
            let (fan_in, fan_out) = layer.weight.dims2().map_err(|_| {
                Error::dim(Some(i), format!("weight shape {:?}", layer.weight.shape()))
            })?;
            if layer.bias.shape() != [fan_out] {
                return Err(Error::dim(
                    Some(i),
                    format!(
                        "bias shape {:?} does not match fan_out {fan_out}",
                        layer.bias.shape()
                    ),
                ));
            }
            if i > 0 && layers[i - 1].fan_out() != fan_in {
                return Err(Error::dim(
                    Some(i),
                    format!(
                        "fan_in {fan_in} does not match previous fan_out {}",
                        layers[i - 1].fan_out()
                    ),
                ));
            }
        }
        let class_count = layers.last().map(Dense::fan_out).unwrap_or(0);
        if class_count == 0 {
            return Err(Error::dim(Some(layers.len() - 1), "zero output classes"));
        }
        Ok(Self {
            layers,
            hidden_activation,
            class_count,
        })
    }

    /// All parameters zero.
    pub fn zeros(arch: &Architecture, features: usize, classes: usize) -> Result<Self> {
        let widths = arch.widths(features, classes);
        let layers = widths
            .windows(2)
            .map(|w| Dense {
                weight: Tensor::zeros(vec![w[0], w[1]]),
                bias: Tensor::zeros(vec![w[1]]),
            })
            .collect();
        Self::new(layers, arch.activation())
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(
        arch: &Architecture,
        features: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut model = Self::zeros(arch, features, classes)?;
        for layer in &mut model.layers {
            let (fan_in, fan_out) = (layer.fan_in(), layer.fan_out());
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in layer.weight.data_mut() {
                *w = rng.random_range(-limit..=limit);
            }
        }
        Ok(model)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn feature_count(&self) -> usize {
        self.layers[0].fan_in()
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.data());
            out.extend_from_slice(layer.bias.data());
        }
        out
    }

    /// A model of this shape holding `params` (in [`Model::flatten`] order).
    pub fn unflatten(&self, params: &[f64]) -> Result<Model> {
        if params.len() != self.param_count() {
            return Err(Error::dim(
                None,
                format!(
                    "{} parameters supplied for a model with {}",
                    params.len(),
                    self.param_count()
                ),
            ));
        }
        let mut model = self.clone();
        let mut offset = 0;
        for layer in &mut model.layers {
            for t in [&mut layer.weight, &mut layer.bias] {
                let n = t.len();
                t.data_mut().copy_from_slice(&params[offset..offset + n]);
                offset += n;
            }
        }
        Ok(model)
    }

    fn check_inputs(&self, inputs: &Tensor) -> Result<usize> {
        let (batch, features) = inputs
            .dims2()
            .map_err(|_| Error::dim(Some(0), format!("input shape {:?}", inputs.shape())))?;
        if features != self.feature_count() {
            return Err(Error::dim(
                Some(0),
                format!(
                    "input has {features} features, layer expects {}",
                    self.feature_count()
                ),
            ));
        }
        Ok(batch)
    }

    /// Raw logits, `batch x class_count`.
    pub fn forward(&self, inputs: &Tensor) -> Result<Tensor> {
        Ok(self.activations(inputs)?.pop().expect("at least one layer"))
    }

    /// Per-layer outputs: post-activation for hidden layers, logits last.
    fn activations(&self, inputs: &Tensor) -> Result<Vec<Tensor>> {
        self.check_inputs(inputs)?;
        let last = self.layers.len() - 1;
        let mut outs: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { inputs } else { &outs[i - 1] };
            let mut z = input.matmul(&layer.weight)?;
            z.add_row_vector(layer.bias.data())?;
            if i != last {
                let act = self.hidden_activation;
                z.map_inplace(|v| act.apply(v));
            }
            outs.push(z);
        }
        Ok(outs)
    }

    /// Predicted class per row.
    pub fn predict(&self, inputs: &Tensor) -> Result<Vec<usize>> {
        self.forward(inputs)?.argmax_rows()
    }

    /// Mean softmax cross-entropy over the rows of `inputs` and its gradient
    /// with respect to every parameter, flattened.
    pub fn loss_and_grad(&self, inputs: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
        let batch = self.check_inputs(inputs)?;
        if labels.len() != batch {
            return Err(Error::Input(format!(
                "{} labels for {batch} examples",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.class_count) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {} classes",
                self.class_count
            )));
        }
        let mut grad = vec![0.0; self.param_count()];
        if batch == 0 {
            return Ok((0.0, Tensor::from_parts_unchecked(vec![grad.len()], grad)));
        }

        let acts = self.activations(inputs)?;
        let classes = self.class_count;
        let logits = acts.last().expect("at least one layer");
        let scale = 1.0 / batch as f64;

        // dL/dlogits = (softmax - onehot) / batch
        let mut loss = 0.0;
        let mut delta = vec![0.0; batch * classes];
        for (r, (z, d)) in logits
            .data()
            .chunks_exact(classes)
            .zip(delta.chunks_exact_mut(classes))
            .enumerate()
        {
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            loss += lse - z[labels[r]];
            for (dj, zj) in d.iter_mut().zip(z) {
                *dj = (zj - lse).exp() * scale;
            }
            d[labels[r]] -= scale;
        }
        loss *= scale;

        let offsets = self.layer_offsets();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let (fan_in, fan_out) = (layer.fan_in(), layer.fan_out());
            let input = if l == 0 { inputs } else { &acts[l - 1] };
            let (w_off, b_off) = offsets[l];

            let dw = &mut grad[w_off..w_off + fan_in * fan_out];
            for r in 0..batch {
                let a = input.row(r);
                let d = &delta[r * fan_out..(r + 1) * fan_out];
                for (i, &ai) in a.iter().enumerate() {
                    if ai == 0.0 {
                        continue;
                    }
                    for (g, &dj) in dw[i * fan_out..(i + 1) * fan_out].iter_mut().zip(d) {
                        *g += ai * dj;
                    }
                }
            }
            let db = &mut grad[b_off..b_off + fan_out];
            for d in delta.chunks_exact(fan_out) {
                for (g, &dj) in db.iter_mut().zip(d) {
                    *g += dj;
                }
            }

            if l > 0 {
                let w = layer.weight.data();
                let prev = &acts[l - 1];
                let act = self.hidden_activation;
                let mut next = vec![0.0; batch * fan_in];
                for r in 0..batch {
                    let d = &delta[r * fan_out..(r + 1) * fan_out];
                    let a = prev.row(r);
                    for i in 0..fan_in {
                        let w_row = &w[i * fan_out..(i + 1) * fan_out];
                        let s: f64 = w_row.iter().zip(d).map(|(wij, dj)| wij * dj).sum();
                        next[r * fan_in + i] = s * act.derivative_from_output(a[i]);
                    }
                }
                delta = next;
            }
        }
        Ok((loss, Tensor::from_parts_unchecked(vec![grad.len()], grad)))
    }

    /// `(weight offset, bias offset)` of each layer in the flat layout.
    fn layer_offsets(&self) -> Vec<(usize, usize)> {
        let mut offset = 0;
        self.layers
            .iter()
            .map(|l| {
                let w = offset;
                let b = w + l.weight.len();
                offset = b + l.bias.len();
                (w, b)
            })
            .collect()
    }

    /// `p <- p - step_size * direction[p]` for every parameter.
    pub fn apply_update(&self, direction: &[f64], step_size: f64) -> Result<Model> {
        let mut model = self.clone();
        model.apply_update_in_place(direction, step_size)?;
        Ok(model)
    }

    pub fn apply_update_in_place(&mut self, direction: &[f64], step_size: f64) -> Result<()> {
        if direction.len() != self.param_count() {
            return Err(Error::dim(
                None,
                format!(
                    "update direction has {} entries, model has {} parameters",
                    direction.len(),
                    self.param_count()
                ),
            ));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            for t in [&mut layer.weight, &mut layer.bias] {
                let n = t.len();
                for (p, d) in t.data_mut().iter_mut().zip(&direction[offset..offset + n]) {
                    *p -= step_size * d;
                }
                offset += n;
            }
        }
        if self.layers.iter().any(|l| {
            l.weight.data().iter().chain(l.bias.data()).any(|v| !v.is_finite())
        }) {
            return Err(Error::NonFinite("apply_update"));
        }
        Ok(())
    }

    /// Fraction of rows classified correctly.
    pub fn accuracy(&self, inputs: &Tensor, labels: &[usize]) -> Result<f64> {
        if labels.is_empty() {
            return Ok(0.0);
        }
        let predicted = self.predict(inputs)?;
        let correct = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(correct as f64 / labels.len() as f64)
    }
}
