use crate::error::{Error, Result};
use crate::tensor::{Float, Shape, Tensor};

/// Border extension rule for padded convolutions and pooling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PaddingMode {
    /// Extend with zeros.
    Zero,
    /// Mirror about the edge sample, without repeating it: `[1,2,3]` → `2 | 1 2 3 | 2`.
    Reflect,
    /// Mirror including the edge sample: `[1,2,3]` → `1 | 1 2 3 | 3`.
    Symmetric,
}

impl PaddingMode {
    pub fn name(self) -> &'static str {
        match self {
            PaddingMode::Zero => "zero",
            PaddingMode::Reflect => "reflect",
            PaddingMode::Symmetric => "symmetric",
        }
    }

    /// Largest pad amount allowed on an axis of length `len`.
    pub fn limit(self, len: usize) -> usize {
        match self {
            PaddingMode::Zero => usize::MAX,
            PaddingMode::Reflect => len.saturating_sub(1),
            PaddingMode::Symmetric => len,
        }
    }

    /// Maps a padded coordinate onto the source axis, or `None` for a zero sample.
    #[inline]
    fn source(self, i: isize, len: usize) -> Option<usize> {
        let n = len as isize;
        if (0..n).contains(&i) {
            return Some(i as usize);
        }
        match self {
            PaddingMode::Zero => None,
            PaddingMode::Reflect => Some(if i < 0 { -i } else { 2 * (n - 1) - i } as usize),
            PaddingMode::Symmetric => Some(if i < 0 { -i - 1 } else { 2 * n - 1 - i } as usize),
        }
    }
}

/// Per-side pad amounts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Pad2d {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Pad2d {
    pub const fn uniform(p: usize) -> Self {
        Pad2d {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }

    pub const fn is_zero(&self) -> bool {
        self.top == 0 && self.bottom == 0 && self.left == 0 && self.right == 0
    }

    pub fn padded(&self, shape: Shape) -> Shape {
        Shape::new(
            shape.n,
            shape.c,
            shape.h + self.top + self.bottom,
            shape.w + self.left + self.right,
        )
    }
}

fn axis_map(len: usize, before: usize, after: usize, mode: PaddingMode) -> Vec<Option<usize>> {
    (0..len + before + after)
        .map(|i| mode.source(i as isize - before as isize, len))
        .collect()
}

fn check(shape: Shape, mode: PaddingMode, amount: Pad2d) -> Result<()> {
    let sides = [
        ("top", amount.top, shape.h),
        ("bottom", amount.bottom, shape.h),
        ("left", amount.left, shape.w),
        ("right", amount.right, shape.w),
    ];
    for (axis, p, len) in sides {
        let limit = mode.limit(len);
        if p > limit {
            return Err(Error::Padding {
                mode,
                axis,
                amount: p,
                limit,
            });
        }
    }
    Ok(())
}

pub fn pad<T: Float>(input: &Tensor<T>, mode: PaddingMode, amount: Pad2d) -> Result<Tensor<T>> {
    let s = input.shape();
    check(s, mode, amount)?;
    if amount.is_zero() {
        return Ok(input.clone());
    }
    let out_shape = amount.padded(s);
    let rows = axis_map(s.h, amount.top, amount.bottom, mode);
    let cols = axis_map(s.w, amount.left, amount.right, mode);
    let mut out = Vec::with_capacity(out_shape.numel());
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = input.plane(n, c);
            for r in &rows {
                match r {
                    None => out.extend(std::iter::repeat_n(T::zero(), out_shape.w)),
                    Some(y) => {
                        let row = &plane[y * s.w..(y + 1) * s.w];
                        out.extend(cols.iter().map(|x| x.map_or(T::zero(), |x| row[x])));
                    }
                }
            }
        }
    }
    Tensor::from_vec(out_shape, out)
}

/// Adjoint of [`pad`]: mirrored pad positions fold their gradient back onto
/// the source sample; zero-pad positions are dropped.
pub fn pad_backward<T: Float>(
    grad_out: &Tensor<T>,
    input_shape: Shape,
    mode: PaddingMode,
    amount: Pad2d,
) -> Result<Tensor<T>> {
    grad_out.expect_shape(amount.padded(input_shape), "pad_backward")?;
    if amount.is_zero() {
        return Ok(grad_out.clone());
    }
    let s = input_shape;
    let rows = axis_map(s.h, amount.top, amount.bottom, mode);
    let cols = axis_map(s.w, amount.left, amount.right, mode);
    let mut grad = Tensor::zeros(s);
    let pw = grad_out.shape().w;
    for n in 0..s.n {
        for c in 0..s.c {
            let g = grad_out.plane(n, c);
            let base = grad.index(n, c, 0, 0);
            let dst = &mut grad.data_mut()[base..base + s.plane()];
            for (py, r) in rows.iter().enumerate() {
                let Some(y) = r else { continue };
                let grow = &g[py * pw..(py + 1) * pw];
                for (px, col) in cols.iter().enumerate() {
                    if let Some(x) = col {
                        dst[y * s.w + x] += grow[px];
                    }
                }
            }
        }
    }
    Ok(grad)
}
