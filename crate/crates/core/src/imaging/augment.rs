use rand::Rng;

use super::{BinaryMask, FloatImage, Raster};
use crate::error::{usage_err, Result};

/// Ranges for the random zoom / shift / mirror augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// Scale is drawn from `[1 - zoom_range, 1 + zoom_range]`.
    pub zoom_range: f64,
    /// Translation as a fraction of each dimension, drawn from `±shift_range`.
    pub shift_range: f64,
    /// Probability of a left-right mirror.
    pub hflip_prob: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            zoom_range: 0.05,
            shift_range: 0.05,
            hflip_prob: 0.5,
        }
    }
}

impl AugmentParams {
    /// Parameters under which augmentation is the identity.
    pub fn none() -> Self {
        AugmentParams {
            zoom_range: 0.0,
            shift_range: 0.0,
            hflip_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.zoom_range) {
            return Err(usage_err!("zoom_range must be in [0, 1), got {}", self.zoom_range));
        }
        if !(0.0..=1.0).contains(&self.shift_range) {
            return Err(usage_err!("shift_range must be in [0, 1], got {}", self.shift_range));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(usage_err!("hflip_prob must be in [0, 1], got {}", self.hflip_prob));
        }
        Ok(())
    }
}

/// One drawn transform: scale about the image centre, translate by
/// `(dx, dy)` pixels, then optionally mirror left-right.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineSample {
    pub scale: f64,
    pub dx: f64,
    pub dy: f64,
    pub flip: bool,
}

impl AffineSample {
    pub const IDENTITY: AffineSample = AffineSample {
        scale: 1.0,
        dx: 0.0,
        dy: 0.0,
        flip: false,
    };

    /// Always consumes exactly four uniform draws from `rng`.
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, params: &AugmentParams, width: usize, height: usize) -> Self {
        let mut sym = || 2.0 * rng.random::<f64>() - 1.0;
        let scale = 1.0 + params.zoom_range * sym();
        let dx = params.shift_range * width as f64 * sym();
        let dy = params.shift_range * height as f64 * sym();
        let flip = rng.random::<f64>() < params.hflip_prob;
        AffineSample {
            scale,
            dx,
            dy,
            flip,
        }
    }

    /// Source position (in pixel-edge coordinates) of the centre of output pixel `(x, y)`.
    fn source(&self, x: usize, y: usize, width: usize, height: usize) -> (f64, f64) {
        let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
        let mut ux = x as f64 + 0.5;
        let uy = y as f64 + 0.5;
        if self.flip {
            ux = width as f64 - ux;
        }
        (
            cx + (ux - self.dx - cx) / self.scale,
            cy + (uy - self.dy - cy) / self.scale,
        )
    }

    /// Warps an image with bilinear sampling; samples outside the source are 0.
    pub fn apply_image(&self, img: &FloatImage) -> FloatImage {
        let (w, h) = img.dims();
        let at = |x: isize, y: isize| -> f32 {
            if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
                0.0
            } else {
                img.get(x as usize, y as usize)
            }
        };
        Raster::from_fn(w, h, |x, y| {
            let (sx, sy) = self.source(x, y, w, h);
            let (px, py) = (sx - 0.5, sy - 0.5);
            let (x0, y0) = (px.floor(), py.floor());
            let (fx, fy) = ((px - x0) as f32, (py - y0) as f32);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
            let bottom = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
            top * (1.0 - fy) + bottom * fy
        })
    }

    /// Warps a mask with nearest sampling; samples outside the source are background.
    pub fn apply_mask(&self, mask: &BinaryMask) -> BinaryMask {
        let (w, h) = mask.dims();
        Raster::from_fn(w, h, |x, y| {
            let (sx, sy) = self.source(x, y, w, h);
            let (ix, iy) = (sx.floor(), sy.floor());
            ix >= 0.0
                && iy >= 0.0
                && (ix as usize) < w
                && (iy as usize) < h
                && mask.get(ix as usize, iy as usize)
        })
    }
}

/// Draws one random transform and applies it identically to an image and its mask.
pub fn augment<R: Rng + ?Sized>(
    img: &FloatImage,
    mask: &BinaryMask,
    rng: &mut R,
    params: &AugmentParams,
) -> Result<(FloatImage, BinaryMask)> {
    img.same_dims(mask, "augment image/mask dimension mismatch")?;
    let t = AffineSample::draw(rng, params, img.width(), img.height());
    Ok((t.apply_image(img), t.apply_mask(mask)))
}
