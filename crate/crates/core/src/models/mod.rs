//! Probabilistic classifiers, their gradients, and the data they train on.
//!
//! Parameter layout is row-major and fixed, so sparse delta indices refer to
//! the same weight on every device:
//!
//! * softmax-linear: `[W (R x d_in), b (R)]`
//! * mlp-1-hidden: `[W1 (H x d_in), b1 (H), W2 (R x H), b2 (R)]`, tanh hidden
//!   activation.

mod classifier;
mod data;

pub use classifier::{
    central_difference, ensemble_predict, finite_diff_grad, local_loss, local_loss_grad,
    log_prior_grad, nll, nll_grad, predict_proba, LocalObjective,
};
pub use data::{
    generate_synthetic_dataset, load_csv_dataset, Dataset, LabeledExample, SyntheticTask,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vector::ParameterVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ModelKind {
    SoftmaxLinear,
    Mlp1Hidden { hidden: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub classes: usize,
}

impl ModelSpec {
    pub fn softmax_linear(input_dim: usize, classes: usize) -> Self {
        Self {
            kind: ModelKind::SoftmaxLinear,
            input_dim,
            classes,
        }
    }

    pub fn mlp(input_dim: usize, hidden: usize, classes: usize) -> Self {
        Self {
            kind: ModelKind::Mlp1Hidden { hidden },
            input_dim,
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::arg("model input dimension must be positive"));
        }
        if self.classes < 2 {
            return Err(Error::arg("a classifier needs at least two classes"));
        }
        if let ModelKind::Mlp1Hidden { hidden: 0 } = self.kind {
            return Err(Error::arg("mlp hidden width must be positive"));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let (d, r) = (self.input_dim, self.classes);
        match self.kind {
            ModelKind::SoftmaxLinear => (d + 1) * r,
            ModelKind::Mlp1Hidden { hidden: h } => (d + 1) * h + (h + 1) * r,
        }
    }
}

/// Retained posterior samples of one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorEnsemble<S> {
    pub owner: usize,
    pub samples: Vec<ParameterVector<S>>,
}

impl<S: Scalar> PosteriorEnsemble<S> {
    pub fn new(owner: usize) -> Self {
        Self {
            owner,
            samples: Vec::new(),
        }
    }

    pub fn push(&mut self, sample: ParameterVector<S>) {
        self.samples.push(sample);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
