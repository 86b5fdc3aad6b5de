//! 2D cross-correlation with stride, dilation and explicit border modes.
//!
//! The kernel is never flipped. Padding is materialised with [`pad`] and the
//! correlation itself runs as an im2col matrix product per sample, so the
//! reduction order is fixed and results are bitwise reproducible.

use crate::error::{Error, Result};
use crate::ops::pad::{pad, pad_backward, Pad2d, PaddingMode};
use crate::tensor::{gemm, Float, MatRef, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    /// Atrous rate: spacing between kernel taps.
    pub dilation: usize,
    pub padding: PaddingMode,
    pub pad: Pad2d,
}

impl ConvSpec {
    /// Square-kernel convolution with resolution-preserving padding at stride 1.
    ///
    /// Odd kernels get `dilation·(k−1)/2` on every side. Even kernels get
    /// `⌊d(k−1)/2⌋` on top/left and `⌈d(k−1)/2⌉` on bottom/right.
    pub fn same(
        in_channels: usize,
        out_channels: usize,
        k: usize,
        dilation: usize,
        padding: PaddingMode,
    ) -> Self {
        let (lo, hi) = same_padding(k, dilation);
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (k, k),
            stride: 1,
            dilation,
            padding,
            pad: Pad2d {
                top: lo,
                bottom: hi,
                left: lo,
                right: hi,
            },
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_pad(mut self, padding: PaddingMode, pad: Pad2d) -> Self {
        self.padding = padding;
        self.pad = pad;
        self
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(
            self.out_channels,
            self.in_channels,
            self.kernel.0,
            self.kernel.1,
        )
    }

    pub fn bias_shape(&self) -> Shape {
        Shape::new(1, self.out_channels, 1, 1)
    }

    fn validate(&self) -> Result<()> {
        if self.in_channels == 0
            || self.out_channels == 0
            || self.kernel.0 == 0
            || self.kernel.1 == 0
            || self.stride == 0
            || self.dilation == 0
        {
            return Err(Error::Invalid(format!(
                "convolution extents must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Output `(h, w)` for an unpadded input of `(h, w)`.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let ph = h + self.pad.top + self.pad.bottom;
        let pw = w + self.pad.left + self.pad.right;
        let eh = self.dilation * (self.kernel.0 - 1) + 1;
        let ew = self.dilation * (self.kernel.1 - 1) + 1;
        if ph < eh || pw < ew {
            return Err(Error::shape(
                "conv2d",
                format!("padded input {ph}x{pw} is smaller than the dilated kernel {eh}x{ew}"),
            ));
        }
        Ok(((ph - eh) / self.stride + 1, (pw - ew) / self.stride + 1))
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1) && self.stride == 1 && self.pad.is_zero()
    }
}

/// `(before, after)` pad for a stride-1 convolution that keeps the resolution.
pub fn same_padding(k: usize, dilation: usize) -> (usize, usize) {
    let total = dilation * (k - 1);
    (total / 2, total - total / 2)
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

struct Geometry {
    c: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    dilation: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfolds one padded sample (`c × ph × pw`) into a `(c·kh·kw) × (oh·ow)` matrix.
fn im2col<T: Float>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let p = g.cols();
    for c in 0..g.c {
        let plane = &x[c * g.ph * g.pw..(c + 1) * g.ph * g.pw];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = oy * g.stride + i * g.dilation;
                    let src = &plane[iy * g.pw..(iy + 1) * g.pw];
                    let out = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    let x0 = j * g.dilation;
                    if g.stride == 1 {
                        out.copy_from_slice(&src[x0..x0 + g.ow]);
                    } else {
                        for (ox, o) in out.iter_mut().enumerate() {
                            *o = src[x0 + ox * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back onto the padded sample.
fn col2im<T: Float>(cols: &[T], g: &Geometry, x: &mut [T]) {
    let p = g.cols();
    for c in 0..g.c {
        let plane = &mut x[c * g.ph * g.pw..(c + 1) * g.ph * g.pw];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = oy * g.stride + i * g.dilation;
                    let dst = &mut plane[iy * g.pw..(iy + 1) * g.pw];
                    let x0 = j * g.dilation;
                    for (ox, &v) in src[oy * g.ow..(oy + 1) * g.ow].iter().enumerate() {
                        dst[x0 + ox * g.stride] += v;
                    }
                }
            }
        }
    }
}

fn check_operands<T: Float>(
    input: Shape,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Geometry> {
    if input.c != spec.in_channels {
        return Err(Error::shape(
            "conv2d",
            format!(
                "input has {} channels, convolution expects {}",
                input.c, spec.in_channels
            ),
        ));
    }
    weight.expect_shape(spec.weight_shape(), "conv2d weight")?;
    if let Some(b) = bias {
        b.expect_shape(spec.bias_shape(), "conv2d bias")?;
    }
    let (oh, ow) = spec.output_size(input.h, input.w)?;
    let padded = spec.pad.padded(input);
    Ok(Geometry {
        c: input.c,
        ph: padded.h,
        pw: padded.w,
        oh,
        ow,
        kh: spec.kernel.0,
        kw: spec.kernel.1,
        stride: spec.stride,
        dilation: spec.dilation,
    })
}

pub fn conv2d<T: Float>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let s = input.shape();
    let g = check_operands(s, weight, bias, spec)?;
    let padded;
    let xp = if spec.pad.is_zero() {
        input
    } else {
        padded = pad(input, spec.padding, spec.pad)?;
        &padded
    };
    let (k, p, co) = (g.rows(), g.cols(), spec.out_channels);
    let mut out = Tensor::zeros(Shape::new(s.n, co, g.oh, g.ow));
    let mut cols = if spec.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * p]
    };
    let wmat = MatRef::row_major(weight.data(), co, k);
    for n in 0..s.n {
        let sample = xp.sample(n);
        let rhs = if spec.is_pointwise() {
            MatRef::row_major(sample, k, p)
        } else {
            im2col(sample, &g, &mut cols);
            MatRef::row_major(&cols[..], k, p)
        };
        let dst = &mut out.data_mut()[n * co * p..(n + 1) * co * p];
        gemm(wmat, rhs, T::zero(), dst);
        if let Some(b) = bias {
            for (o, chunk) in dst.chunks_exact_mut(p).enumerate() {
                let bo = b.data()[o];
                chunk.iter_mut().for_each(|v| *v += bo);
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Float>(
    grad_out: &Tensor<T>,
    saved_input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<ConvGrads<T>> {
    conv2d_backward_with(grad_out, saved_input, weight, spec, true, true)
}

/// As [`conv2d_backward`], skipping the input and/or weight gradient when the
/// caller does not need it. The bias gradient is always produced.
pub fn conv2d_backward_with<T: Float>(
    grad_out: &Tensor<T>,
    saved_input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
    need_input: bool,
    need_weight: bool,
) -> Result<ConvGrads<T>> {
    let s = saved_input.shape();
    let g = check_operands(s, weight, None, spec)?;
    let (k, p, co) = (g.rows(), g.cols(), spec.out_channels);
    grad_out.expect_shape(Shape::new(s.n, co, g.oh, g.ow), "conv2d_backward")?;

    let mut grad_bias = Tensor::zeros(spec.bias_shape());
    for n in 0..s.n {
        for o in 0..co {
            let plane = grad_out.plane(n, o);
            grad_bias.data_mut()[o] += plane.iter().copied().sum::<T>();
        }
    }

    let mut grad_weight = Tensor::zeros(spec.weight_shape());
    if need_weight {
        let padded;
        let xp = if spec.pad.is_zero() {
            saved_input
        } else {
            padded = pad(saved_input, spec.padding, spec.pad)?;
            &padded
        };
        let mut cols = if spec.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); k * p]
        };
        for n in 0..s.n {
            let sample = xp.sample(n);
            let cols_t = if spec.is_pointwise() {
                MatRef::transposed(sample, p, k)
            } else {
                im2col(sample, &g, &mut cols);
                MatRef::transposed(&cols[..], p, k)
            };
            let go = MatRef::row_major(grad_out.sample(n), co, p);
            gemm(go, cols_t, T::one(), grad_weight.data_mut());
        }
    }

    let grad_input = if need_input {
        let padded_shape = spec.pad.padded(s);
        let mut grad_padded = Tensor::zeros(padded_shape);
        let wt = MatRef::transposed(weight.data(), k, co);
        let sample_len = g.c * g.ph * g.pw;
        let mut cols = vec![T::zero(); k * p];
        for n in 0..s.n {
            let go = MatRef::row_major(grad_out.sample(n), co, p);
            let dst = &mut grad_padded.data_mut()[n * sample_len..(n + 1) * sample_len];
            if spec.is_pointwise() {
                gemm(wt, go, T::zero(), dst);
            } else {
                gemm(wt, go, T::zero(), &mut cols);
                col2im(&cols, &g, dst);
            }
        }
        Some(pad_backward(&grad_padded, s, spec.padding, spec.pad)?)
    } else {
        None
    };

    Ok(ConvGrads {
        input: grad_input,
        weight: grad_weight,
        bias: grad_bias,
    })
}

/// Fixed-kernel 3×3 correlation applied to every channel independently, on
/// an already padded input (valid region only).
///
/// Positive and negative taps are summed separately, so a zero-sum kernel
/// whose positive and negative weights appear in the same order returns
/// exactly zero on a constant input.
pub fn depthwise3x3<T: Float>(padded: &Tensor<T>, kernel: &[[f64; 3]; 3]) -> Result<Tensor<T>> {
    let s = padded.shape();
    if s.h < 3 || s.w < 3 {
        return Err(Error::shape(
            "depthwise3x3",
            format!("input {s} is smaller than 3x3"),
        ));
    }
    let (oh, ow) = (s.h - 2, s.w - 2);
    let k: Vec<T> = kernel
        .iter()
        .flatten()
        .map(|&v| T::from_f64_lossy(v))
        .collect();
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    let mut idx = 0;
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = padded.plane(n, c);
            for y in 0..oh {
                for x in 0..ow {
                    let (mut pos, mut neg) = (T::zero(), T::zero());
                    for i in 0..3 {
                        let row = &plane[(y + i) * s.w + x..(y + i) * s.w + x + 3];
                        for j in 0..3 {
                            let w = k[i * 3 + j];
                            if w > T::zero() {
                                pos += w * row[j];
                            } else if w < T::zero() {
                                neg -= w * row[j];
                            }
                        }
                    }
                    out.data_mut()[idx] = pos - neg;
                    idx += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`depthwise3x3`] with respect to its (padded) input.
pub fn depthwise3x3_backward<T: Float>(
    grad_out: &Tensor<T>,
    padded_shape: Shape,
    kernel: &[[f64; 3]; 3],
) -> Result<Tensor<T>> {
    let s = padded_shape;
    grad_out.expect_shape(
        Shape::new(s.n, s.c, s.h - 2, s.w - 2),
        "depthwise3x3_backward",
    )?;
    let k: Vec<T> = kernel
        .iter()
        .flatten()
        .map(|&v| T::from_f64_lossy(v))
        .collect();
    let (oh, ow) = (s.h - 2, s.w - 2);
    let mut grad = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let g = grad_out.plane(n, c);
            let base = grad.index(n, c, 0, 0);
            let dst = &mut grad.data_mut()[base..base + s.plane()];
            for y in 0..oh {
                for x in 0..ow {
                    let gv = g[y * ow + x];
                    for i in 0..3 {
                        for j in 0..3 {
                            dst[(y + i) * s.w + x + j] += k[i * 3 + j] * gv;
                        }
                    }
                }
            }
        }
    }
    Ok(grad)
}
