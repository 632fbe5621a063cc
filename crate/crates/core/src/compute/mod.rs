//! Differentiable numerical core.
//!
//! Every tensor in the model is a dense `f64` matrix. Vectors are stored as
//! `1 × d` rows or `p × 1` columns. The [`Tape`] records one forward pass
//! and replays it backwards to produce exact gradients for every parameter
//! leaf.

pub mod adam;
pub mod checkpoint;
pub mod init;
pub mod params;
pub mod tape;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use thiserror::Error;

pub use adam::{adam_step, AdamConfig};
pub use init::{xavier_init, xavier_uniform};
pub use params::{Gradients, Param, ParamId, ParamStore};
pub use tape::{PairMlp, Tape, Var};

pub type Matrix = Array2<f64>;

#[derive(Debug, Error)]
pub enum ComputeError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("non-finite gradient for parameter '{name}'")]
    NonFiniteGradient { name: String },
    #[error("backward called on a value that was not recorded on this tape")]
    NotRecorded,
    #[error("backward needs a 1x1 loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("index {index} out of range for {len} rows in {op}")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl ComputeError {
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            ComputeError::NonFinite { .. } | ComputeError::NonFiniteGradient { .. }
        )
    }
}

/// Element-wise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Relu,
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative given the input `x` and output `y = apply(x)`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

impl Default for Activation {
    fn default() -> Self {
        Activation::LeakyRelu(0.2)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::LeakyRelu(s) if *s == 0.2 => write!(f, "leaky_relu"),
            Activation::LeakyRelu(s) => write!(f, "leaky_relu:{s}"),
            Activation::Relu => write!(f, "relu"),
            Activation::Sigmoid => write!(f, "sigmoid"),
            Activation::Tanh => write!(f, "tanh"),
            Activation::Identity => write!(f, "identity"),
        }
    }
}

impl FromStr for Activation {
    type Err = ComputeError;

    /// Accepts `leaky_relu`, `leaky_relu:<slope>`, `relu`, `sigmoid`, `tanh`
    /// and `identity`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ComputeError::InvalidArgument(format!("unknown activation '{s}'"));
        match s {
            "leaky_relu" => Ok(Activation::LeakyRelu(0.2)),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            _ => {
                let slope = s.strip_prefix("leaky_relu:").ok_or_else(bad)?;
                let slope: f64 = slope.parse().map_err(|_| bad())?;
                if !slope.is_finite() {
                    return Err(bad());
                }
                Ok(Activation::LeakyRelu(slope))
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `−ln σ(x) = ln(1 + e^{−x})`, evaluated without overflow.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Inverted-dropout mask: each entry is `0` with probability `p` and
/// `1 / (1 − p)` otherwise.
pub fn dropout_mask<R: Rng + ?Sized>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Result<Matrix, ComputeError> {
    if !(0.0..1.0).contains(&p) {
        return Err(ComputeError::InvalidArgument(format!(
            "dropout probability {p} outside [0, 1)"
        )));
    }
    if p == 0.0 {
        return Ok(Matrix::ones((rows, cols)));
    }
    let keep = 1.0 / (1.0 - p);
    Ok(Matrix::from_shape_simple_fn((rows, cols), || {
        if rng.gen::<f64>() < p {
            0.0
        } else {
            keep
        }
    }))
}

#[allow(clippy::eq_op)]
pub(crate) fn check_finite(m: &Matrix, op: &'static str) -> Result<(), ComputeError> {
    let finite = match m.as_slice_memory_order() {
        // `v - v` is NaN exactly for NaN and ±inf; the sum stays NaN.
        Some(s) => {
            let mut acc = [0.0f64; 8];
            let chunks = s.chunks_exact(8);
            let tail = chunks.remainder().iter().fold(0.0, |a, &v| a + (v - v));
            for c in chunks {
                for (a, &v) in acc.iter_mut().zip(c) {
                    *a += v - v;
                }
            }
            (acc.iter().sum::<f64>() + tail).is_finite()
        }
        None => m.iter().all(|v| v.is_finite()),
    };
    if finite {
        Ok(())
    } else {
        Err(ComputeError::NonFinite { op })
    }
}
