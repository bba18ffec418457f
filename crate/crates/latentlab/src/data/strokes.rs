//! Synthetic stroke images: a small, self-contained image dataset that
//! lives on a low-dimensional manifold (archetype + pose + thickness), for
//! exercising the image pipeline end to end when no external image data is
//! available. Ten polyline archetypes serve as class labels.

use crate::rng::Rng;
use crate::tensor::Tensor;

const SIZE: usize = 28;

type Poly = &'static [(f64, f64)];

const ARCHETYPES: [Poly; 10] = [
    &[(0.0, -0.75), (0.0, 0.75)],                      // vertical bar
    &[(-0.75, 0.0), (0.75, 0.0)],                      // horizontal bar
    &[(-0.6, -0.6), (0.6, 0.6)],                       // rising diagonal
    &[(-0.6, 0.6), (0.6, -0.6)],                       // falling diagonal
    &[(-0.6, 0.6), (0.0, -0.6), (0.6, 0.6)],           // V
    &[(-0.6, -0.6), (0.0, 0.6), (0.6, -0.6)],          // caret
    &[(-0.5, 0.7), (-0.5, -0.6), (0.6, -0.6)],         // L
    &[(-0.6, 0.6), (0.6, 0.6), (0.6, -0.6)],           // top-right corner
    &[(-0.6, 0.6), (0.6, 0.6), (-0.6, -0.6), (0.6, -0.6)], // zigzag
    &[(0.5, 0.6), (-0.5, 0.6), (-0.5, -0.6), (0.5, -0.6)], // open box
];

fn segment_distance(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let (dx, dy) = (bx - ax, by - ay);
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq == 0.0 {
        0.0
    } else {
        (((px - ax) * dx + (py - ay) * dy) / len_sq).clamp(0.0, 1.0)
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((px - cx) * (px - cx) + (py - cy) * (py - cy)).sqrt()
}

/// Generate `count` 28x28 stroke images with class labels (the archetype
/// index, assigned round-robin so every class is equally represented).
/// Each sample jitters its archetype by rotation, scale, translation,
/// stroke width, and brightness. Deterministic in the generator state.
pub fn stroke_images(count: usize, rng: &mut Rng) -> (Tensor, Vec<u8>) {
    let mut data = Vec::with_capacity(count * SIZE * SIZE);
    let mut labels = Vec::with_capacity(count);
    for idx in 0..count {
        let class = idx % ARCHETYPES.len();
        labels.push(class as u8);
        let rot = rng.uniform01() * 0.7 - 0.35;
        let scale = 0.75 + rng.uniform01() * 0.35;
        let tx = rng.uniform01() * 0.3 - 0.15;
        let ty = rng.uniform01() * 0.3 - 0.15;
        let sigma = 0.05 + rng.uniform01() * 0.04;
        let brightness = 0.8 + rng.uniform01() * 0.2;
        let (sin, cos) = rot.sin_cos();
        let pts: Vec<(f64, f64)> = ARCHETYPES[class]
            .iter()
            .map(|&(x, y)| {
                let (x, y) = (x * scale, y * scale);
                (x * cos - y * sin + tx, x * sin + y * cos + ty)
            })
            .collect();
        for row in 0..SIZE {
            for col in 0..SIZE {
                let py = 1.0 - 2.0 * (row as f64 + 0.5) / SIZE as f64;
                let px = 2.0 * (col as f64 + 0.5) / SIZE as f64 - 1.0;
                let mut d = f64::INFINITY;
                for seg in pts.windows(2) {
                    d = d.min(segment_distance(px, py, seg[0].0, seg[0].1, seg[1].0, seg[1].1));
                }
                let v = brightness * (-d * d / (2.0 * sigma * sigma)).exp();
                data.push(if v < 1e-4 { 0.0 } else { v.min(1.0) });
            }
        }
    }
    let x = Tensor::from_vec(&[count, 1, SIZE, SIZE], data).expect("consistent image buffer");
    (x, labels)
}
