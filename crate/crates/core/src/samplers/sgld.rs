use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::vector::{gaussian_noise, ParameterVector};

/// `√(2η)`, the per-coordinate std of Langevin noise.
pub fn langevin_scale<S: Scalar>(eta: S) -> S {
    (S::of(2.0) * eta).sqrt()
}

/// `θ - η g`, rejecting non-finite gradients.
pub fn gradient_step<S: Scalar>(
    theta: &ParameterVector<S>,
    grad: &ParameterVector<S>,
    eta: S,
) -> Result<ParameterVector<S>> {
    Error::check_dim(theta.dim(), grad.dim())?;
    if let Some(i) = grad.first_non_finite() {
        return Err(Error::Numerical(format!("gradient coordinate {i} is {}", grad[i])));
    }
    Ok(ParameterVector::from_vec(
        theta.iter().zip(grad.iter()).map(|(&t, &g)| t - eta * g).collect(),
    ))
}

/// One Langevin step `θ - η g + noise_scale · ξ`, `ξ ~ N(0, I)`.
///
/// With `noise_scale = 0` this is plain gradient descent.
pub fn sgld_step<S: Scalar>(
    theta: &ParameterVector<S>,
    grad: &ParameterVector<S>,
    eta: S,
    noise_scale: S,
    rng: &mut RngStream,
) -> Result<ParameterVector<S>> {
    if !(eta > S::zero()) {
        return Err(Error::arg(format!("eta must be positive, got {eta}")));
    }
    let mut next = gradient_step(theta, grad, eta)?;
    add_noise(&mut next, noise_scale, rng)?;
    Ok(next)
}

pub(crate) fn add_noise<S: Scalar>(
    theta: &mut ParameterVector<S>,
    noise_scale: S,
    rng: &mut RngStream,
) -> Result<()> {
    if noise_scale == S::zero() {
        return Ok(());
    }
    let xi = gaussian_noise(theta.dim(), noise_scale, rng)?;
    theta.add_assign_vec(&xi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Purpose;

    #[test]
    fn noiseless_step_is_gradient_descent() {
        let mut rng = RngStream::for_device(0, 0, Purpose::Noise);
        let t = ParameterVector::<f64>::from_f64(&[1.0]);
        let g = ParameterVector::from_f64(&[2.0]);
        let next = sgld_step(&t, &g, 0.1, 0.0, &mut rng).unwrap();
        assert!((next[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_is_numerical_error() {
        let mut rng = RngStream::for_device(0, 0, Purpose::Noise);
        let t = ParameterVector::from_f64(&[1.0, 1.0]);
        let g = ParameterVector::from_f64(&[0.0, f64::NAN]);
        assert!(matches!(
            sgld_step(&t, &g, 0.1, 0.0, &mut rng),
            Err(Error::Numerical(_))
        ));
        assert!(sgld_step(&t, &t, 0.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn noise_scale_matches_langevin() {
        assert!((langevin_scale(1e-4f64) - 0.014_142_135_623_730_95).abs() < 1e-17);
    }
}
