use rand::Rng;

use crate::tensor::{Shape, Tensor};

/// A smooth synthetic background: a colour gradient with a few soft-edged
/// discs and boxes, values in `[0, 0.8]` so added rain stays visible.
pub fn procedural_scene<R: Rng + ?Sized>(h: usize, w: usize, rng: &mut R) -> Tensor<f32> {
    let base: [[f32; 3]; 2] = [
        [
            rng.random_range(0.1..0.5),
            rng.random_range(0.1..0.5),
            rng.random_range(0.1..0.5),
        ],
        [
            rng.random_range(0.2..0.7),
            rng.random_range(0.2..0.7),
            rng.random_range(0.2..0.7),
        ],
    ];
    let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let shapes: Vec<(bool, f32, f32, f32, [f32; 3])> = (0..rng.random_range(2..6))
        .map(|_| {
            (
                rng.random_bool(0.5),
                rng.random_range(0.0..w as f32),
                rng.random_range(0.0..h as f32),
                rng.random_range(0.1..0.35) * h.min(w) as f32,
                [
                    rng.random_range(0.0..0.8),
                    rng.random_range(0.0..0.8),
                    rng.random_range(0.0..0.8),
                ],
            )
        })
        .collect();
    let span = (h.max(w) as f32).max(1.0);
    Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        let (fx, fy) = (x as f32 + 0.5, y as f32 + 0.5);
        let t = (((fx * dx + fy * dy) / span) * 0.5 + 0.5).clamp(0.0, 1.0);
        let mut v = base[0][c] * (1.0 - t) + base[1][c] * t;
        for &(disc, cx, cy, r, col) in &shapes {
            let d = if disc {
                ((fx - cx).powi(2) + (fy - cy).powi(2)).sqrt() - r
            } else {
                (fx - cx).abs().max((fy - cy).abs()) - r
            };
            let a = (0.5 - d).clamp(0.0, 1.0);
            v = v * (1.0 - a) + col[c] * a;
        }
        v.clamp(0.0, 0.8)
    })
}
