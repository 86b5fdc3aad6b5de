use crate::error::{Error, Result};
use crate::ops::pad::{pad, pad_backward, Pad2d, PaddingMode};
use crate::tensor::{lit, Float, Shape, Tensor};

/// Mean over each `(h, w)` plane: `(n, c, h, w)` → `(n, c, 1, 1)`.
pub fn global_avg_pool<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let inv = lit::<T>(1.0 / s.plane() as f64);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, 1, 1));
    for n in 0..s.n {
        for c in 0..s.c {
            out.data_mut()[n * s.c + c] = x.plane(n, c).iter().copied().sum::<T>() * inv;
        }
    }
    out
}

pub fn global_avg_pool_backward<T: Float>(
    grad_out: &Tensor<T>,
    input_shape: Shape,
) -> Result<Tensor<T>> {
    let s = input_shape;
    grad_out.expect_shape(Shape::new(s.n, s.c, 1, 1), "global_avg_pool_backward")?;
    let inv = lit::<T>(1.0 / s.plane() as f64);
    Ok(Tensor::from_fn(s, |n, c, _, _| {
        grad_out.data()[n * s.c + c] * inv
    }))
}

/// 3×3 max pooling at stride 1 over a 1-pixel border in `padding` mode.
///
/// Returns the pooled tensor and, per output element, the flat index of the
/// winning sample in the padded input (first maximum in row-major window order).
pub fn maxpool3x3_s1<T: Float>(
    x: &Tensor<T>,
    padding: PaddingMode,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = x.shape();
    let xp = pad(x, padding, Pad2d::uniform(1))?;
    let pw = s.w + 2;
    let pp = (s.h + 2) * pw;
    let mut out = Tensor::zeros(s);
    let mut argmax = Vec::with_capacity(s.numel());
    let mut idx = 0;
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * pp;
            let plane = &xp.data()[base..base + pp];
            for y in 0..s.h {
                for xx in 0..s.w {
                    let mut best = y * pw + xx;
                    for i in 0..3 {
                        for j in 0..3 {
                            let k = (y + i) * pw + xx + j;
                            if plane[k] > plane[best] {
                                best = k;
                            }
                        }
                    }
                    out.data_mut()[idx] = plane[best];
                    argmax.push(base + best);
                    idx += 1;
                }
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool3x3_s1_backward<T: Float>(
    grad_out: &Tensor<T>,
    argmax: &[usize],
    input_shape: Shape,
    padding: PaddingMode,
) -> Result<Tensor<T>> {
    grad_out.expect_shape(input_shape, "maxpool3x3_s1_backward")?;
    if argmax.len() != grad_out.len() {
        return Err(Error::shape(
            "maxpool3x3_s1_backward",
            "argmax length mismatch",
        ));
    }
    let padded = Pad2d::uniform(1).padded(input_shape);
    let mut gp = Tensor::zeros(padded);
    for (&k, &g) in argmax.iter().zip(grad_out.data()) {
        gp.data_mut()[k] += g;
    }
    pad_backward(&gp, input_shape, padding, Pad2d::uniform(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn global_average_of_two_by_two() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = global_avg_pool(&x);
        assert_eq!(y.shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(y.data()[0], 2.5);
    }

    #[test]
    fn maxpool_keeps_resolution_and_routes_gradient() {
        let x = Tensor::from_vec(
            Shape::new(1, 1, 3, 3),
            vec![1.0, 2.0, 3.0, 4.0, 9.0, 5.0, 6.0, 7.0, 8.0],
        )
        .unwrap();
        let (y, am) = maxpool3x3_s1(&x, PaddingMode::Symmetric).unwrap();
        assert_eq!(y.data(), &[9.0; 9]);
        let g = Tensor::full(x.shape(), 1.0);
        let gx = maxpool3x3_s1_backward(&g, &am, x.shape(), PaddingMode::Symmetric).unwrap();
        assert_eq!(gx.data()[4], 9.0);
        assert_eq!(gx.sum(), 9.0);
    }
}
