//! Procedural clean images that loosely mimic fluorescence cell textures:
//! soft elliptical blobs (nuclei) and thin curved ridges (filaments) on a
//! dim background.

use rand::Rng;

use crate::image::Image;
use crate::seed;

/// A `height x width` phantom in `[0, 1]`, fully determined by `seed`.
pub fn cells(height: usize, width: usize, seed: u64) -> Image {
    let mut rng = seed::rng_at(seed, &[0xce11]);
    let (h, w) = (height as f64, width as f64);
    let scale = h.min(w);
    let mut data = vec![0.05; height * width];

    let n_blobs = rng.random_range(4..9);
    for _ in 0..n_blobs {
        let (cy, cx) = (rng.random_range(0.0..h), rng.random_range(0.0..w));
        let sy = scale * rng.random_range(0.04..0.12);
        let sx = sy * rng.random_range(0.6..1.6);
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let amp = rng.random_range(0.3..0.7);
        let (st, ct) = theta.sin_cos();
        for r in 0..height {
            for c in 0..width {
                let (dy, dx) = (r as f64 - cy, c as f64 - cx);
                let u = ct * dx + st * dy;
                let v = -st * dx + ct * dy;
                let q = (u / sx).powi(2) + (v / sy).powi(2);
                if q < 16.0 {
                    // flat-topped profile with a soft edge
                    data[r * width + c] += amp / (1.0 + q.powi(3));
                }
            }
        }
    }

    let n_ridges = rng.random_range(3..7);
    for _ in 0..n_ridges {
        let (mut y, mut x) = (rng.random_range(0.0..h), rng.random_range(0.0..w));
        let mut heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let amp = rng.random_range(0.15..0.35);
        let width_px = rng.random_range(0.8..1.8);
        let steps = (scale * rng.random_range(0.5..1.2)) as usize;
        for _ in 0..steps {
            heading += rng.random_range(-0.15..0.15);
            y += heading.sin();
            x += heading.cos();
            let (r0, c0) = (y.round() as isize, x.round() as isize);
            for dr in -3..=3 {
                for dc in -3..=3 {
                    let (r, c) = (r0 + dr, c0 + dc);
                    if r < 0 || c < 0 || r >= height as isize || c >= width as isize {
                        continue;
                    }
                    let d2 = (r as f64 - y).powi(2) + (c as f64 - x).powi(2);
                    let i = r as usize * width + c as usize;
                    data[i] = data[i].max(0.05 + amp * (-d2 / (2.0 * width_px * width_px)).exp());
                }
            }
        }
    }

    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    Image::new(height, width, data).expect("finite phantom")
}
