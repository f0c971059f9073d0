//! 2-D rasters and the preprocessing applied to radiographs and lung masks.

mod augment;
pub mod io;
mod morphology;
mod phantom;
mod resize;

use crate::error::{shape_err, Result};

pub use augment::{augment, AffineSample, AugmentParams};
pub use morphology::dilate;
pub use phantom::{synth_phantom, PHANTOM_MIN_SIZE};
pub use resize::{resize, resize_mask, ResizeMode};

/// Row-major 2-D raster.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Raster<P> {
    width: usize,
    height: usize,
    pixels: Vec<P>,
}

/// 8-bit grayscale image as read from disk.
pub type GrayImage = Raster<u8>;
/// Grayscale image with intensities in `[0, 1]`.
pub type FloatImage = Raster<f32>;
/// Lung mask; `true` marks lung.
pub type BinaryMask = Raster<bool>;

impl<P: Copy> Raster<P> {
    pub fn new(width: usize, height: usize, pixels: Vec<P>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(shape_err!("raster dimensions must be positive, got {width}x{height}"));
        }
        if pixels.len() != width * height {
            return Err(shape_err!(
                "{width}x{height} raster needs {} pixels, got {}",
                width * height,
                pixels.len()
            ));
        }
        Ok(Raster {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: P) -> Self {
        Raster {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> P) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Raster {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[P] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [P] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<P> {
        self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> P {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: P) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn map<Q: Copy>(&self, f: impl Fn(P) -> Q) -> Raster<Q> {
        Raster {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&p| f(p)).collect(),
        }
    }

    /// Left-right mirror image.
    pub fn mirror_horizontal(&self) -> Self {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for row in self.pixels.chunks_exact(self.width) {
            pixels.extend(row.iter().rev());
        }
        Raster {
            width: self.width,
            height: self.height,
            pixels,
        }
    }

    pub(crate) fn same_dims<Q>(&self, other: &Raster<Q>, what: &str) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(shape_err!(
                "{what}: {}x{} vs {}x{}",
                self.width,
                self.height,
                other.width,
                other.height
            ));
        }
        Ok(())
    }
}

impl BinaryMask {
    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.pixels.len() as f64
    }

    /// `true` when every foreground pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims()
            && self.pixels.iter().zip(&other.pixels).all(|(&a, &b)| !a || b)
    }

    /// Any nonzero pixel is foreground.
    pub fn from_gray(img: &GrayImage) -> Self {
        img.map(|p| p != 0)
    }

    /// Foreground as 255, background as 0.
    pub fn to_gray(&self) -> GrayImage {
        self.map(|b| if b { 255 } else { 0 })
    }
}

impl FloatImage {
    /// Rounds to the nearest 8-bit level after clamping to `[0, 1]`.
    pub fn to_gray(&self) -> GrayImage {
        self.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
    }
}

/// Maps 8-bit intensities to `[0, 1]` as `p / 255`.
pub fn normalize(img: &GrayImage) -> FloatImage {
    img.map(|p| p as f32 / 255.0)
}

/// Pixelwise OR of the left and right lung masks.
pub fn union_masks(left: &BinaryMask, right: &BinaryMask) -> Result<BinaryMask> {
    left.same_dims(right, "union_masks dimension mismatch")?;
    Ok(Raster {
        width: left.width,
        height: left.height,
        pixels: left
            .pixels
            .iter()
            .zip(&right.pixels)
            .map(|(&a, &b)| a || b)
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_exact_levels() {
        let img = GrayImage::new(3, 1, vec![0, 255, 128]).unwrap();
        let n = normalize(&img);
        assert_eq!(n.pixels(), &[0.0, 1.0, 128.0 / 255.0]);
        assert!((n.get(2, 0) - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn union_properties() {
        let a = BinaryMask::from_fn(6, 4, |x, _| x < 2);
        let b = BinaryMask::from_fn(6, 4, |x, _| x > 3);
        let u = union_masks(&a, &b).unwrap();
        assert_eq!(u.count(), a.count() + b.count());
        assert_eq!(u, union_masks(&b, &a).unwrap());
        assert_eq!(union_masks(&a, &BinaryMask::filled(6, 4, false)).unwrap(), a);
        assert!(union_masks(&a, &BinaryMask::filled(5, 4, false)).is_err());
    }

    #[test]
    fn mirror_is_involution() {
        let img = GrayImage::from_fn(5, 3, |x, y| (x * 10 + y) as u8);
        assert_eq!(img.mirror_horizontal().get(0, 1), img.get(4, 1));
        assert_eq!(img.mirror_horizontal().mirror_horizontal(), img);
    }

    #[test]
    fn raster_rejects_bad_dims() {
        assert!(GrayImage::new(0, 3, vec![]).is_err());
        assert!(GrayImage::new(2, 2, vec![0; 3]).is_err());
    }
}
