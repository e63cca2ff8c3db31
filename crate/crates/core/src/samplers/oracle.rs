use rand::seq::index;

use crate::error::{Error, Result};
use crate::models::{local_loss_grad, Dataset, LocalObjective, ModelSpec};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::vector::ParameterVector;

/// Source of the stochastic local gradient `∇f_k(θ, batch)`.
pub trait GradientOracle<S: Scalar> {
    fn dim(&self) -> usize;

    fn devices(&self) -> usize;

    /// Gradient for `device` at `theta`; any mini-batch is drawn from `rng`.
    fn gradient(
        &self,
        device: usize,
        theta: &ParameterVector<S>,
        rng: &mut RngStream,
    ) -> Result<ParameterVector<S>>;
}

/// Classifier objective over per-device shards with fresh mini-batches drawn
/// uniformly without replacement.
#[derive(Debug, Clone)]
pub struct ClassifierOracle<S> {
    pub spec: ModelSpec,
    pub shards: Vec<Dataset<S>>,
    pub batch_size: usize,
    pub objectives: Vec<LocalObjective<S>>,
}

impl<S: Scalar> ClassifierOracle<S> {
    /// `prior_share` defaults to `1/K`; `unbiased` rescales the likelihood by
    /// `E_k / M`.
    pub fn new(
        spec: ModelSpec,
        shards: Vec<Dataset<S>>,
        batch_size: usize,
        prior_share: Option<f64>,
        unbiased: bool,
    ) -> Result<Self> {
        spec.validate()?;
        let k = shards.len();
        if k == 0 {
            return Err(Error::arg("no device shards"));
        }
        for (i, s) in shards.iter().enumerate() {
            if s.len() < batch_size || batch_size == 0 {
                return Err(Error::arg(format!(
                    "device {i} holds {} examples, fewer than mini-batch size {batch_size}",
                    s.len()
                )));
            }
            if !s.is_empty() {
                Error::check_dim(spec.input_dim, s.feature_dim)?;
            }
        }
        let objectives = shards
            .iter()
            .map(|s| {
                let base = if unbiased {
                    LocalObjective::unbiased(k, s.len(), batch_size)
                } else {
                    LocalObjective::literal(k)
                };
                match prior_share {
                    Some(share) => base.with_prior_share(S::of(share)),
                    None => base,
                }
            })
            .collect();
        Ok(Self {
            spec,
            shards,
            batch_size,
            objectives,
        })
    }
}

impl<S: Scalar> GradientOracle<S> for ClassifierOracle<S> {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn devices(&self) -> usize {
        self.shards.len()
    }

    fn gradient(
        &self,
        device: usize,
        theta: &ParameterVector<S>,
        rng: &mut RngStream,
    ) -> Result<ParameterVector<S>> {
        let shard = &self.shards[device];
        let picked = index::sample(rng, shard.len(), self.batch_size);
        let batch = picked.iter().map(|i| &shard.examples[i]);
        local_loss_grad(&self.spec, theta, batch, &self.objectives[device])
    }
}

/// Always-zero gradient; isolates the consensus and noise machinery.
#[derive(Debug, Clone, Copy)]
pub struct ZeroGradient {
    pub dim: usize,
    pub devices: usize,
}

impl<S: Scalar> GradientOracle<S> for ZeroGradient {
    fn dim(&self) -> usize {
        self.dim
    }

    fn devices(&self) -> usize {
        self.devices
    }

    fn gradient(&self, _: usize, _: &ParameterVector<S>, _: &mut RngStream) -> Result<ParameterVector<S>> {
        Ok(ParameterVector::zeros(self.dim))
    }
}

/// `f_k(θ) = ½ c ‖θ - m_k‖²`, deterministic.
#[derive(Debug, Clone)]
pub struct QuadraticOracle<S> {
    pub centers: Vec<ParameterVector<S>>,
    pub curvature: S,
}

impl<S: Scalar> GradientOracle<S> for QuadraticOracle<S> {
    fn dim(&self) -> usize {
        self.centers.first().map_or(0, |c| c.dim())
    }

    fn devices(&self) -> usize {
        self.centers.len()
    }

    fn gradient(&self, device: usize, theta: &ParameterVector<S>, _: &mut RngStream) -> Result<ParameterVector<S>> {
        let mut g = theta.sub(&self.centers[device])?;
        g.iter_mut().for_each(|v| *v *= self.curvature);
        Ok(g)
    }
}
