use crate::error::{Error, Result};
use crate::tensor::{lit, Float, Tensor};

/// Negative slope used by every LeakyReLU in the networks.
pub const LEAKY_SLOPE: f64 = 0.2;

/// `max(0, x) + slope·min(0, x)`.
pub fn leaky_relu<T: Float>(x: &Tensor<T>, slope: f64) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&slope) {
        return Err(Error::Invalid(format!(
            "leaky_relu slope must lie in [0, 1), got {slope}"
        )));
    }
    let s = lit::<T>(slope);
    Ok(x.map(|v| if v > T::zero() { v } else { v * s }))
}

/// Derivative is 1 for x > 0 and `slope` otherwise (including x == 0).
pub fn leaky_relu_backward<T: Float>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    slope: f64,
) -> Result<Tensor<T>> {
    let s = lit::<T>(slope);
    grad_out.zip_map(x, |g, v| if v > T::zero() { g } else { g * s })
}

pub fn relu<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Float>(grad_out: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.zip_map(x, |g, v| if v > T::zero() { g } else { T::zero() })
}

/// Limits values to `[-bound, bound]`.
pub fn clamp_symmetric<T: Float>(x: &Tensor<T>, bound: f64) -> Result<Tensor<T>> {
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(Error::Invalid(format!(
            "clamp bound must be positive, got {bound}"
        )));
    }
    let b = lit::<T>(bound);
    Ok(x.map(|v| v.max(-b).min(b)))
}

/// Gradient passes only where `x` lies strictly inside the bound.
pub fn clamp_symmetric_backward<T: Float>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    bound: f64,
) -> Result<Tensor<T>> {
    let b = lit::<T>(bound);
    grad_out.zip_map(x, |g, v| if v > -b && v < b { g } else { T::zero() })
}

pub fn sigmoid<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| {
        if v >= T::zero() {
            T::one() / (T::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        }
    })
}

/// Uses the saved forward output `y = sigmoid(x)`.
pub fn sigmoid_backward<T: Float>(grad_out: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.zip_map(y, |g, s| g * s * (T::one() - s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(Shape::new(1, 1, 1, v.len()), v.to_vec()).unwrap()
    }

    #[test]
    fn leaky_relu_values() {
        let y = leaky_relu(&t(&[-1.0, 2.0, 0.0]), LEAKY_SLOPE).unwrap();
        assert!((y.data()[0] + 0.2).abs() < 1e-15);
        assert_eq!(y.data()[1], 2.0);
        assert_eq!(y.data()[2], 0.0);
        assert!(leaky_relu(&t(&[1.0]), 1.0).is_err());
        assert!(leaky_relu(&t(&[1.0]), -0.1).is_err());
    }

    #[test]
    fn clamp_limits_values_and_gradient() {
        let x = t(&[-20.0, -3.0, 0.5, 15.0, 40.0]);
        assert_eq!(
            clamp_symmetric(&x, 15.0).unwrap().data(),
            &[-15.0, -3.0, 0.5, 15.0, 15.0]
        );
        let g = clamp_symmetric_backward(&t(&[1.0; 5]), &x, 15.0).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0, 1.0, 0.0, 0.0]);
        assert!(clamp_symmetric(&x, 0.0).is_err());
    }

    #[test]
    fn leaky_relu_subgradient_at_zero_is_slope() {
        let g = leaky_relu_backward(&t(&[1.0, 1.0, 1.0]), &t(&[-1.0, 0.0, 3.0]), 0.2).unwrap();
        assert_eq!(g.data(), &[0.2, 0.2, 1.0]);
    }

    #[test]
    fn sigmoid_is_symmetric_and_stable() {
        let y = sigmoid(&t(&[0.0, 800.0, -800.0]));
        assert_eq!(y.data()[0], 0.5);
        assert_eq!(y.data()[1], 1.0);
        assert_eq!(y.data()[2], 0.0);
        assert!(y.is_finite());
    }
}
