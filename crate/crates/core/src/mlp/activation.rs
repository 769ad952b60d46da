use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::MlpError;

/// Hidden-layer nonlinearity. The output layer is always softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    pub const ALL: [Activation; 3] = [Activation::Sigmoid, Activation::Tanh, Activation::Relu];

    #[inline]
    pub fn apply_scalar(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and the output `a = f(z)`.
    #[inline]
    pub(crate) fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

/// Any activation the engine can apply to a vector, including the fixed
/// softmax output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Hidden(Activation),
    Softmax,
}

impl From<Activation> for ActivationKind {
    fn from(a: Activation) -> Self {
        ActivationKind::Hidden(a)
    }
}

/// Applies `kind` element-wise (or across the vector for softmax).
pub fn apply_activation(kind: impl Into<ActivationKind>, x: &[f64]) -> Result<Vec<f64>, MlpError> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(MlpError::NonFiniteInput);
    }
    Ok(match kind.into() {
        ActivationKind::Hidden(a) => x.iter().map(|&v| a.apply_scalar(v)).collect(),
        ActivationKind::Softmax => {
            let mut out = x.to_vec();
            softmax_in_place(&mut out);
            out
        }
    })
}

/// Max-shifted softmax. Non-finite logits propagate as NaN.
pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}
