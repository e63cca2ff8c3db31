use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vector::ParameterVector;

use super::{LabeledExample, ModelKind, ModelSpec, PosteriorEnsemble};

/// Weights of the two terms of a device's local objective
/// `f_k(θ) = -w · log p(batch | θ) - s · log p(θ)` with a standard normal
/// prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalObjective<S> {
    /// `s`: share of the log-prior each device carries.
    pub prior_share: S,
    /// `w`: multiplier on the mini-batch log-likelihood.
    pub likelihood_weight: S,
}

impl<S: Scalar> LocalObjective<S> {
    /// Unscaled mini-batch likelihood and a `1/K` prior share.
    pub fn literal(devices: usize) -> Self {
        Self {
            prior_share: S::one() / S::of_usize(devices.max(1)),
            likelihood_weight: S::one(),
        }
    }

    /// Mini-batch likelihood rescaled by `local_size / batch` so it is an
    /// unbiased estimate of the full local likelihood.
    pub fn unbiased(devices: usize, local_size: usize, batch: usize) -> Self {
        Self {
            likelihood_weight: S::of_usize(local_size) / S::of_usize(batch.max(1)),
            ..Self::literal(devices)
        }
    }

    pub fn with_prior_share(mut self, share: S) -> Self {
        self.prior_share = share;
        self
    }
}

/// Gradient of `log N(θ; 0, I)`.
pub fn log_prior_grad<S: Scalar>(theta: &ParameterVector<S>) -> ParameterVector<S> {
    ParameterVector::from_vec(theta.iter().map(|&v| -v).collect())
}

struct Forward<S> {
    hidden: Vec<S>,
    probs: Vec<S>,
}

fn softmax_in_place<S: Scalar>(z: &mut [S]) {
    let max = z.iter().copied().fold(S::neg_infinity(), S::max);
    let mut total = S::zero();
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
}

/// `out[r] = bias[r] + sum_c w[r * cols + c] * x[c]`.
fn affine<S: Scalar>(w: &[S], bias: &[S], x: &[S], out: &mut Vec<S>) {
    let cols = x.len();
    out.clear();
    out.extend(bias.iter().enumerate().map(|(r, &b)| {
        let row = &w[r * cols..(r + 1) * cols];
        row.iter().zip(x).fold(b, |acc, (&a, &xi)| acc + a * xi)
    }));
}

fn check_inputs<S: Scalar>(spec: &ModelSpec, theta: &[S], x: &[S]) -> Result<()> {
    Error::check_dim(spec.param_count(), theta.len())?;
    Error::check_dim(spec.input_dim, x.len())
}

fn forward<S: Scalar>(spec: &ModelSpec, theta: &[S], x: &[S]) -> Forward<S> {
    let (d, r) = (spec.input_dim, spec.classes);
    let mut hidden = Vec::new();
    let mut probs = Vec::with_capacity(r);
    match spec.kind {
        ModelKind::SoftmaxLinear => {
            let (w, b) = theta.split_at(r * d);
            affine(w, b, x, &mut probs);
        }
        ModelKind::Mlp1Hidden { hidden: h } => {
            let (w1, rest) = theta.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(r * h);
            affine(w1, b1, x, &mut hidden);
            for v in hidden.iter_mut() {
                *v = v.tanh();
            }
            affine(w2, b2, &hidden, &mut probs);
        }
    }
    softmax_in_place(&mut probs);
    Forward { hidden, probs }
}

/// Class probabilities of a single parameter vector.
pub fn predict_proba<S: Scalar>(
    spec: &ModelSpec,
    theta: &ParameterVector<S>,
    x: &[S],
) -> Result<Vec<S>> {
    check_inputs(spec, theta, x)?;
    Ok(forward(spec, theta, x).probs)
}

/// Bayesian model average: mean of per-sample class probabilities.
///
/// Each class total is summed over the per-sample probabilities sorted in
/// ascending order, which makes the result independent of sample order.
pub fn ensemble_predict<S: Scalar>(
    spec: &ModelSpec,
    ensemble: &PosteriorEnsemble<S>,
    x: &[S],
) -> Result<Vec<S>> {
    if ensemble.is_empty() {
        return Err(Error::arg("ensemble has no samples"));
    }
    let per_sample = ensemble
        .samples
        .iter()
        .map(|theta| predict_proba(spec, theta, x))
        .collect::<Result<Vec<_>>>()?;
    let n = S::of_usize(per_sample.len());
    let mut column = Vec::with_capacity(per_sample.len());
    Ok((0..spec.classes)
        .map(|c| {
            column.clear();
            column.extend(per_sample.iter().map(|p| p[c]));
            column.sort_by(|a, b| a.partial_cmp(b).expect("probabilities are finite"));
            column.iter().copied().sum::<S>() / n
        })
        .collect())
}

fn check_label<S>(spec: &ModelSpec, ex: &LabeledExample<S>) -> Result<()> {
    if ex.label >= spec.classes {
        return Err(Error::Data(format!(
            "label {} out of range for {} classes",
            ex.label, spec.classes
        )));
    }
    Ok(())
}

/// Negative log-likelihood summed over `batch`.
pub fn nll<'a, S, I>(spec: &ModelSpec, theta: &ParameterVector<S>, batch: I) -> Result<S>
where
    S: Scalar,
    I: IntoIterator<Item = &'a LabeledExample<S>>,
{
    let mut total = S::zero();
    let mut seen = 0usize;
    for ex in batch {
        check_inputs(spec, theta, &ex.x)?;
        check_label(spec, ex)?;
        let fwd = forward(spec, theta, &ex.x);
        total -= fwd.probs[ex.label].ln();
        seen += 1;
    }
    if seen == 0 {
        return Err(Error::arg("empty mini-batch"));
    }
    Ok(total)
}

/// Gradient of the negative log-likelihood summed over `batch`.
pub fn nll_grad<'a, S, I>(
    spec: &ModelSpec,
    theta: &ParameterVector<S>,
    batch: I,
) -> Result<ParameterVector<S>>
where
    S: Scalar,
    I: IntoIterator<Item = &'a LabeledExample<S>>,
{
    let (d, r) = (spec.input_dim, spec.classes);
    let mut grad = ParameterVector::zeros(spec.param_count());
    let mut seen = 0usize;
    let mut dz = vec![S::zero(); r];
    for ex in batch {
        check_inputs(spec, theta, &ex.x)?;
        check_label(spec, ex)?;
        let fwd = forward(spec, theta, &ex.x);
        dz.copy_from_slice(&fwd.probs);
        dz[ex.label] -= S::one();
        match spec.kind {
            ModelKind::SoftmaxLinear => {
                let (gw, gb) = grad.split_at_mut(r * d);
                accumulate_outer(gw, gb, &dz, &ex.x);
            }
            ModelKind::Mlp1Hidden { hidden: h } => {
                let w2 = &theta[h * d + h..h * d + h + r * h];
                let (g1, g2) = grad.split_at_mut(h * d + h);
                let (gw2, gb2) = g2.split_at_mut(r * h);
                accumulate_outer(gw2, gb2, &dz, &fwd.hidden);
                // back through W2 and tanh
                let da: Vec<S> = (0..h)
                    .map(|j| {
                        let back = (0..r).fold(S::zero(), |acc, c| acc + w2[c * h + j] * dz[c]);
                        let a = fwd.hidden[j];
                        back * (S::one() - a * a)
                    })
                    .collect();
                let (gw1, gb1) = g1.split_at_mut(h * d);
                accumulate_outer(gw1, gb1, &da, &ex.x);
            }
        }
        seen += 1;
    }
    if seen == 0 {
        return Err(Error::arg("empty mini-batch"));
    }
    Ok(grad)
}

fn accumulate_outer<S: Scalar>(gw: &mut [S], gb: &mut [S], delta: &[S], input: &[S]) {
    let cols = input.len();
    for (row, &dv) in delta.iter().enumerate() {
        for (g, &xi) in gw[row * cols..(row + 1) * cols].iter_mut().zip(input) {
            *g += dv * xi;
        }
        gb[row] += dv;
    }
}

/// Local objective value `w · NLL(batch) + s · ½‖θ‖²`.
pub fn local_loss<'a, S, I>(
    spec: &ModelSpec,
    theta: &ParameterVector<S>,
    batch: I,
    objective: &LocalObjective<S>,
) -> Result<S>
where
    S: Scalar,
    I: IntoIterator<Item = &'a LabeledExample<S>>,
{
    let half = S::of(0.5);
    Ok(objective.likelihood_weight * nll(spec, theta, batch)?
        + objective.prior_share * half * theta.norm_sq())
}

/// Gradient of [`local_loss`]: `-w ∇log p(batch|θ) - s ∇log p(θ)`.
pub fn local_loss_grad<'a, S, I>(
    spec: &ModelSpec,
    theta: &ParameterVector<S>,
    batch: I,
    objective: &LocalObjective<S>,
) -> Result<ParameterVector<S>>
where
    S: Scalar,
    I: IntoIterator<Item = &'a LabeledExample<S>>,
{
    let mut grad = nll_grad(spec, theta, batch)?;
    let w = objective.likelihood_weight;
    if w != S::one() {
        for g in grad.iter_mut() {
            *g *= w;
        }
    }
    grad.axpy(-objective.prior_share, &log_prior_grad(theta))?;
    Ok(grad)
}

/// Central-difference gradient of an arbitrary scalar function.
pub fn central_difference<S, F>(f: F, theta: &ParameterVector<S>, h: S) -> Result<ParameterVector<S>>
where
    S: Scalar,
    F: Fn(&ParameterVector<S>) -> Result<S>,
{
    if !(h > S::zero()) {
        return Err(Error::arg(format!("finite-difference step must be positive, got {h}")));
    }
    let two_h = h + h;
    let mut probe = theta.clone();
    let mut out = ParameterVector::zeros(theta.dim());
    for i in 0..theta.dim() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe)?;
        probe[i] = orig - h;
        let down = f(&probe)?;
        probe[i] = orig;
        out[i] = (up - down) / two_h;
    }
    Ok(out)
}

/// Central-difference approximation of [`local_loss_grad`].
pub fn finite_diff_grad<S: Scalar>(
    spec: &ModelSpec,
    theta: &ParameterVector<S>,
    batch: &[LabeledExample<S>],
    objective: &LocalObjective<S>,
    h: S,
) -> Result<ParameterVector<S>> {
    central_difference(|t| local_loss(spec, t, batch, objective), theta, h)
}
