use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::activation::{softmax_in_place, Activation};
use super::{Matrix, MlpError};

/// Guard added to probabilities inside the log of the cross-entropy loss.
pub const LOG_EPSILON: f64 = 1e-12;

/// Fully-connected feed-forward classifier with a softmax output layer.
///
/// `weights[k]` maps layer `k` (width `layer_sizes[k]`) to layer `k + 1`, so it
/// has shape `(layer_sizes[k + 1], layer_sizes[k])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    hidden_activation: Activation,
}

/// Parameter-shaped gradients of the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            weights: model
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            w.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite)
            && self.biases.iter().flatten().all(|v| v.is_finite())
    }
}

/// Per-layer values produced by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `activations[0]` is the input; the last entry holds the class probabilities.
    pub activations: Vec<Vec<f64>>,
    /// Pre-activation values for layers `1..`.
    pub pre_activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace has at least the input layer")
    }
}

/// Creates a network with weights drawn from `U(-1/√fan_in, 1/√fan_in)` and zero biases.
pub fn init_network(
    layer_sizes: &[usize],
    hidden_activation: Activation,
    seed: u64,
) -> Result<MlpModel, MlpError> {
    validate_architecture(layer_sizes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
    let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
    for pair in layer_sizes.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let limit = 1.0 / (fan_in as f64).sqrt();
        let mut w = Matrix::zeros(fan_out, fan_in);
        for v in w.as_mut_slice() {
            *v = rng.random_range(-limit..=limit);
        }
        weights.push(w);
        biases.push(vec![0.0; fan_out]);
    }
    Ok(MlpModel {
        layer_sizes: layer_sizes.to_vec(),
        weights,
        biases,
        hidden_activation,
    })
}

fn validate_architecture(layer_sizes: &[usize]) -> Result<(), MlpError> {
    if layer_sizes.len() < 2 {
        return Err(MlpError::InvalidArchitecture(format!(
            "need at least an input and an output layer, got {} layer size(s)",
            layer_sizes.len()
        )));
    }
    if let Some(pos) = layer_sizes.iter().position(|&s| s == 0) {
        return Err(MlpError::InvalidArchitecture(format!(
            "layer {pos} has size 0"
        )));
    }
    Ok(())
}

impl MlpModel {
    /// Assembles a model from explicit parameters, checking every shape invariant.
    pub fn from_parameters(
        layer_sizes: Vec<usize>,
        weights: Vec<Matrix>,
        biases: Vec<Vec<f64>>,
        hidden_activation: Activation,
    ) -> Result<Self, MlpError> {
        validate_architecture(&layer_sizes)?;
        let layers = layer_sizes.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(MlpError::InvalidArchitecture(format!(
                "expected {layers} weight matrices and bias vectors, got {} and {}",
                weights.len(),
                biases.len()
            )));
        }
        for (k, pair) in layer_sizes.windows(2).enumerate() {
            let expected = (pair[1], pair[0]);
            if weights[k].shape() != expected {
                return Err(MlpError::Shape {
                    what: format!("weights[{k}]"),
                    expected: format!("{expected:?}"),
                    got: format!("{:?}", weights[k].shape()),
                });
            }
            if biases[k].len() != pair[1] {
                return Err(MlpError::Shape {
                    what: format!("biases[{k}]"),
                    expected: pair[1].to_string(),
                    got: biases[k].len().to_string(),
                });
            }
        }
        let model = Self {
            layer_sizes,
            weights,
            biases,
            hidden_activation,
        };
        if !model.is_finite() {
            return Err(MlpError::InvalidArchitecture("non-finite parameter".into()));
        }
        Ok(model)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights
            .iter()
            .map(|w| w.rows() * w.cols())
            .chain(self.biases.iter().map(Vec::len))
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite)
            && self.biases.iter().flatten().all(|v| v.is_finite())
    }

    fn check_input(&self, input: &[f64]) -> Result<(), MlpError> {
        if input.len() != self.input_size() {
            return Err(MlpError::Shape {
                what: "input".into(),
                expected: self.input_size().to_string(),
                got: input.len().to_string(),
            });
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(MlpError::NonFiniteInput);
        }
        Ok(())
    }

    /// Runs the network, returning every layer's activations.
    pub fn forward(&self, input: &[f64]) -> Result<ForwardTrace, MlpError> {
        self.check_input(input)?;
        Ok(self.forward_unchecked(input))
    }

    /// Class probabilities for one input.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>, MlpError> {
        let mut trace = self.forward(input)?;
        Ok(trace.activations.pop().unwrap())
    }

    pub(crate) fn forward_unchecked(&self, input: &[f64]) -> ForwardTrace {
        let layers = self.weights.len();
        let mut activations = Vec::with_capacity(layers + 1);
        let mut pre_activations = Vec::with_capacity(layers);
        activations.push(input.to_vec());
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = vec![0.0; w.rows()];
            w.mul_vec_into(&activations[k], &mut z);
            for (zi, bi) in z.iter_mut().zip(b) {
                *zi += bi;
            }
            let mut a = z.clone();
            if k + 1 == layers {
                softmax_in_place(&mut a);
            } else {
                a.iter_mut()
                    .for_each(|v| *v = self.hidden_activation.apply_scalar(*v));
            }
            pre_activations.push(z);
            activations.push(a);
        }
        ForwardTrace {
            activations,
            pre_activations,
        }
    }

    /// Cross-entropy loss `-Σ tᵢ ln(pᵢ + ε)` and its gradient for one sample.
    pub fn backprop_gradients(
        &self,
        input: &[f64],
        target: &[f64],
    ) -> Result<(Gradients, f64), MlpError> {
        self.check_input(input)?;
        self.check_target(target)?;
        let mut grads = Gradients::zeros_like(self);
        let loss = self.accumulate_gradients(input, target, &mut grads);
        Ok((grads, loss))
    }

    /// Mean loss and mean gradient over a batch of samples.
    pub fn batch_gradients(
        &self,
        inputs: &[&[f64]],
        targets: &[&[f64]],
    ) -> Result<(Gradients, f64), MlpError> {
        if inputs.len() != targets.len() {
            return Err(MlpError::Shape {
                what: "batch targets".into(),
                expected: inputs.len().to_string(),
                got: targets.len().to_string(),
            });
        }
        if inputs.is_empty() {
            return Err(MlpError::EmptyBatch);
        }
        let mut grads = Gradients::zeros_like(self);
        let mut loss = 0.0;
        for (x, t) in inputs.iter().zip(targets) {
            self.check_input(x)?;
            self.check_target(t)?;
            loss += self.accumulate_gradients(x, t, &mut grads);
        }
        let n = inputs.len() as f64;
        grads.scale(1.0 / n);
        Ok((grads, loss / n))
    }

    /// Cross-entropy of the model's prediction against `target`.
    pub fn loss(&self, input: &[f64], target: &[f64]) -> Result<f64, MlpError> {
        self.check_input(input)?;
        self.check_target(target)?;
        let trace = self.forward_unchecked(input);
        Ok(cross_entropy(trace.output(), target))
    }

    fn check_target(&self, target: &[f64]) -> Result<(), MlpError> {
        if target.len() != self.output_size() {
            return Err(MlpError::Shape {
                what: "target".into(),
                expected: self.output_size().to_string(),
                got: target.len().to_string(),
            });
        }
        Ok(())
    }

    /// Adds this sample's gradient into `grads` and returns its loss.
    pub(crate) fn accumulate_gradients(
        &self,
        input: &[f64],
        target: &[f64],
        grads: &mut Gradients,
    ) -> f64 {
        let trace = self.forward_unchecked(input);
        let probs = trace.output();
        let loss = cross_entropy(probs, target);

        // dL/dz for the softmax layer with the ε-guarded log:
        // dL/dz_j = p_j Σ_i t_i r_i − t_j r_j, where r_i = p_i / (p_i + ε).
        let ratios: Vec<f64> = probs.iter().map(|p| p / (p + LOG_EPSILON)).collect();
        let weighted: f64 = target.iter().zip(&ratios).map(|(t, r)| t * r).sum();
        let mut delta: Vec<f64> = probs
            .iter()
            .zip(target.iter().zip(&ratios))
            .map(|(p, (t, r))| p * weighted - t * r)
            .collect();

        for k in (0..self.weights.len()).rev() {
            grads.weights[k].add_outer(&delta, &trace.activations[k], 1.0);
            for (g, d) in grads.biases[k].iter_mut().zip(&delta) {
                *g += d;
            }
            if k == 0 {
                break;
            }
            let mut back = vec![0.0; self.weights[k].cols()];
            self.weights[k].mul_transpose_vec_into(&delta, &mut back);
            for ((b, z), a) in back
                .iter_mut()
                .zip(&trace.pre_activations[k - 1])
                .zip(&trace.activations[k])
            {
                *b *= self.hidden_activation.derivative(*z, *a);
            }
            delta = back;
        }
        loss
    }

    /// `θ ← θ − lr · g`.
    pub fn apply_gradients(&mut self, grads: &Gradients, learning_rate: f64) {
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            for (wv, gv) in w.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *wv -= learning_rate * gv;
            }
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            for (bv, gv) in b.iter_mut().zip(g) {
                *bv -= learning_rate * gv;
            }
        }
    }
}

pub(crate) fn cross_entropy(probs: &[f64], target: &[f64]) -> f64 {
    -probs
        .iter()
        .zip(target)
        .map(|(p, t)| t * (p + LOG_EPSILON).ln())
        .sum::<f64>()
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
