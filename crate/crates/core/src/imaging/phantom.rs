//! Synthetic chest-radiograph stand-ins with exactly known lung masks.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{BinaryMask, FloatImage, Raster};
use crate::error::{usage_err, Result};

pub const PHANTOM_MIN_SIZE: usize = 32;

const NOISE_SIGMA: f64 = 0.05;

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
}

impl Ellipse {
    fn contains(&self, u: f64, v: f64) -> bool {
        let dx = (u - self.cx) / self.ax;
        let dy = (v - self.cy) / self.ay;
        dx * dx + dy * dy < 1.0
    }
}

/// Generates a `size`×`size` phantom: two dark elliptical "lungs" on a
/// brighter background, crossed by low-frequency horizontal rib stripes and
/// Gaussian noise (σ = 0.05). The mask is the exact union of the ellipses,
/// evaluated at pixel centres.
///
/// The left lung centre lies in `[0.24, 0.34]` of the width and the right in
/// `[0.66, 0.76]`, with horizontal semi-axes at most `0.16`, so the two never
/// overlap. Lung area is between roughly 12% and 33% of the image.
pub fn synth_phantom<R: Rng + ?Sized>(rng: &mut R, size: usize) -> Result<(FloatImage, BinaryMask)> {
    if size < PHANTOM_MIN_SIZE {
        return Err(usage_err!(
            "phantom size must be at least {PHANTOM_MIN_SIZE}, got {size}"
        ));
    }
    let mut lung = |cx_lo: f64, cx_hi: f64| Ellipse {
        cx: rng.random_range(cx_lo..=cx_hi),
        cy: rng.random_range(0.42..=0.58),
        ax: rng.random_range(0.09..=0.16),
        ay: rng.random_range(0.22..=0.32),
    };
    let lungs = [lung(0.24, 0.34), lung(0.66, 0.76)];

    let background = rng.random_range(0.62..=0.80);
    let lung_level = rng.random_range(0.18..=0.34);
    let rib_amp = rng.random_range(0.03..=0.07);
    let rib_period = rng.random_range(size as f64 / 8.0..=size as f64 / 5.0);
    let rib_phase = rng.random_range(0.0..2.0 * PI);
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");

    let s = size as f64;
    let mask = Raster::from_fn(size, size, |x, y| {
        let (u, v) = ((x as f64 + 0.5) / s, (y as f64 + 0.5) / s);
        lungs.iter().any(|e| e.contains(u, v))
    });
    let mut pixels = Vec::with_capacity(size * size);
    for y in 0..size {
        // Brighter towards the abdomen, like a real radiograph.
        let ramp = 0.08 * (y as f64 / s);
        let ribs = rib_amp * (2.0 * PI * y as f64 / rib_period + rib_phase).sin();
        for x in 0..size {
            let base = if mask.get(x, y) { lung_level } else { background + ramp };
            let v = base + ribs + noise.sample(rng);
            pixels.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    Ok((Raster::new(size, size, pixels)?, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn seeded_phantom_is_reproducible() {
        let a = synth_phantom(&mut ChaCha8Rng::seed_from_u64(3), 64).unwrap();
        let b = synth_phantom(&mut ChaCha8Rng::seed_from_u64(3), 64).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn values_in_unit_interval() {
        let (img, _) = synth_phantom(&mut ChaCha8Rng::seed_from_u64(4), 48).unwrap();
        assert!(img.pixels().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn lungs_darker_than_background() {
        let (img, mask) = synth_phantom(&mut ChaCha8Rng::seed_from_u64(8), 64).unwrap();
        let mean = |want: bool| {
            let v: Vec<f32> = img
                .pixels()
                .iter()
                .zip(mask.pixels())
                .filter(|(_, &m)| m == want)
                .map(|(&p, _)| p)
                .collect();
            v.iter().sum::<f32>() / v.len() as f32
        };
        assert!(mean(true) + 0.2 < mean(false));
    }

    #[test]
    fn too_small_is_usage_error() {
        assert!(synth_phantom(&mut ChaCha8Rng::seed_from_u64(0), 16).is_err());
        assert!(synth_phantom(&mut ChaCha8Rng::seed_from_u64(0), 32).is_ok());
    }
}
