use crate::error::{Error, Result};
use crate::tensor::{gemm, Float, MatRef, Shape, Tensor};

/// Fully connected layer on `(n, f)` features (any `(n, c, h, w)` input is
/// flattened to `f = c·h·w`). `weight` is `(o, f, 1, 1)`, `bias` `(1, o, 1, 1)`;
/// the result is `(n, o, 1, 1)`.
pub fn linear<T: Float>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, f, o) = linear_dims(x, weight, bias)?;
    let mut out = Tensor::zeros(Shape::new(n, o, 1, 1));
    gemm(
        MatRef::row_major(x.data(), n, f),
        MatRef::transposed(weight.data(), f, o),
        T::zero(),
        out.data_mut(),
    );
    for row in out.data_mut().chunks_exact_mut(o) {
        for (v, &b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    Ok(out)
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn linear_backward<T: Float>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    weight: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let s = weight.shape();
    let (o, f) = (s.n, s.c);
    let n = x.shape().n;
    grad_out.expect_shape(Shape::new(n, o, 1, 1), "linear_backward")?;
    let mut gx = Tensor::zeros(x.shape());
    gemm(
        MatRef::row_major(grad_out.data(), n, o),
        MatRef::row_major(weight.data(), o, f),
        T::zero(),
        gx.data_mut(),
    );
    let mut gw = Tensor::zeros(s);
    gemm(
        MatRef::transposed(grad_out.data(), o, n),
        MatRef::row_major(x.data(), n, f),
        T::zero(),
        gw.data_mut(),
    );
    let mut gb = Tensor::zeros(Shape::new(1, o, 1, 1));
    for row in grad_out.data().chunks_exact(o) {
        for (acc, &g) in gb.data_mut().iter_mut().zip(row) {
            *acc += g;
        }
    }
    Ok((gx, gw, gb))
}

fn linear_dims<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(usize, usize, usize)> {
    let xs = x.shape();
    let ws = w.shape();
    let f = xs.c * xs.plane();
    if ws.h != 1 || ws.w != 1 || ws.c != f {
        return Err(Error::shape(
            "linear",
            format!("weight {ws} does not accept {f} input features"),
        ));
    }
    b.expect_shape(Shape::new(1, ws.n, 1, 1), "linear bias")?;
    Ok((xs.n, f, ws.n))
}

/// Concatenates along the channel axis; all inputs share `(n, h, w)`.
pub fn concat_channels<T: Float>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::shape("concat_channels", "no inputs"))?
        .shape();
    let mut c = 0;
    for t in xs {
        let s = t.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::shape(
                "concat_channels",
                format!("{s} does not share (n, h, w) with {first}"),
            ));
        }
        c += s.c;
    }
    let out_shape = Shape::new(first.n, c, first.h, first.w);
    let mut data = Vec::with_capacity(out_shape.numel());
    for n in 0..first.n {
        for t in xs {
            data.extend_from_slice(t.sample(n));
        }
    }
    Tensor::from_vec(out_shape, data)
}

/// Splits a channel-concatenated gradient back into per-input pieces.
pub fn concat_channels_backward<T: Float>(
    grad_out: &Tensor<T>,
    channels: &[usize],
) -> Result<Vec<Tensor<T>>> {
    let s = grad_out.shape();
    if channels.iter().sum::<usize>() != s.c {
        return Err(Error::shape(
            "concat_channels_backward",
            "channel split does not cover input",
        ));
    }
    let p = s.plane();
    let mut parts: Vec<Vec<T>> = channels
        .iter()
        .map(|&c| Vec::with_capacity(s.n * c * p))
        .collect();
    for n in 0..s.n {
        let mut offset = 0;
        let sample = grad_out.sample(n);
        for (part, &c) in parts.iter_mut().zip(channels) {
            part.extend_from_slice(&sample[offset * p..(offset + c) * p]);
            offset += c;
        }
    }
    parts
        .into_iter()
        .zip(channels)
        .map(|(d, &c)| Tensor::from_vec(Shape::new(s.n, c, s.h, s.w), d))
        .collect()
}
