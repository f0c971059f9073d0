//! Resampling with the half-pixel-centre convention: output pixel `x` maps to
//! source coordinate `(x + 0.5) * in / out - 0.5`, clamped to the image edge.

use std::str::FromStr;

use super::{BinaryMask, FloatImage, Raster};
use crate::error::{usage_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResizeMode {
    Bilinear,
    Nearest,
}

impl FromStr for ResizeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bilinear" => Ok(ResizeMode::Bilinear),
            "nearest" => Ok(ResizeMode::Nearest),
            other => Err(usage_err!("unknown resize mode {other:?}")),
        }
    }
}

fn check_target(out_w: usize, out_h: usize) -> Result<()> {
    if out_w == 0 || out_h == 0 {
        return Err(usage_err!("resize target must be at least 1x1, got {out_w}x{out_h}"));
    }
    Ok(())
}

/// Source indices for nearest sampling along one axis.
///
/// The source centre of output pixel `x` lies at `(2x + 1) * len_in / (2 * len_out)`
/// in pixel-edge units. When that lands exactly on a pixel boundary both
/// neighbours are equally near and both are returned.
fn nearest_taps(len_in: usize, len_out: usize) -> Vec<(usize, usize)> {
    (0..len_out)
        .map(|x| {
            let num = (2 * x + 1) * len_in;
            let den = 2 * len_out;
            let idx = num / den;
            if num % den == 0 && idx > 0 {
                (idx - 1, idx.min(len_in - 1))
            } else {
                let i = idx.min(len_in - 1);
                (i, i)
            }
        })
        .collect()
}

fn resize_nearest_by<P: Copy>(
    img: &Raster<P>,
    out_w: usize,
    out_h: usize,
    tie: impl Fn(P, P) -> P,
) -> Raster<P> {
    let xs = nearest_taps(img.width(), out_w);
    let ys = nearest_taps(img.height(), out_h);
    Raster::from_fn(out_w, out_h, |x, y| {
        let (x0, x1) = xs[x];
        let (y0, y1) = ys[y];
        let top = tie(img.get(x0, y0), img.get(x1, y0));
        let bottom = tie(img.get(x0, y1), img.get(x1, y1));
        tie(top, bottom)
    })
}

fn bilinear_taps(len_in: usize, len_out: usize) -> Vec<(usize, usize, f32)> {
    let scale = len_in as f64 / len_out as f64;
    (0..len_out)
        .map(|x| {
            let s = ((x as f64 + 0.5) * scale - 0.5).clamp(0.0, (len_in - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(len_in - 1);
            (i0, i1, (s - i0 as f64) as f32)
        })
        .collect()
}

/// Resizes a grayscale image.
pub fn resize(img: &FloatImage, out_w: usize, out_h: usize, mode: ResizeMode) -> Result<FloatImage> {
    check_target(out_w, out_h)?;
    match mode {
        ResizeMode::Nearest => Ok(resize_nearest_by(img, out_w, out_h, f32::max)),
        ResizeMode::Bilinear => {
            let xs = bilinear_taps(img.width(), out_w);
            let ys = bilinear_taps(img.height(), out_h);
            Ok(Raster::from_fn(out_w, out_h, |x, y| {
                let (x0, x1, fx) = xs[x];
                let (y0, y1, fy) = ys[y];
                let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
                let bottom = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
                top * (1.0 - fy) + bottom * fy
            }))
        }
    }
}

/// Nearest-neighbour resize of a mask. A source position exactly between two
/// pixels takes the foreground if either neighbour is foreground, which keeps
/// the operation mirror-symmetric.
pub fn resize_mask(mask: &BinaryMask, out_w: usize, out_h: usize) -> Result<BinaryMask> {
    check_target(out_w, out_h)?;
    Ok(resize_nearest_by(mask, out_w, out_h, |a, b| a || b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let img = FloatImage::from_fn(7, 5, |x, y| (x * 3 + y * 11) as f32 / 50.0);
        assert_eq!(resize(&img, 7, 5, ResizeMode::Bilinear).unwrap(), img);
        assert_eq!(resize(&img, 7, 5, ResizeMode::Nearest).unwrap(), img);
        let m = BinaryMask::from_fn(7, 5, |x, y| (x + y) % 3 == 0);
        assert_eq!(resize_mask(&m, 7, 5).unwrap(), m);
    }

    #[test]
    fn constant_stays_constant() {
        let img = FloatImage::filled(9, 6, 0.37);
        for (w, h) in [(3, 2), (20, 17), (1, 1)] {
            for mode in [ResizeMode::Bilinear, ResizeMode::Nearest] {
                let r = resize(&img, w, h, mode).unwrap();
                assert!(r.pixels().iter().all(|&v| (v - 0.37).abs() < 1e-6));
            }
        }
    }

    #[test]
    fn zero_target_is_usage_error() {
        let img = FloatImage::filled(4, 4, 0.0);
        assert!(matches!(resize(&img, 0, 4, ResizeMode::Bilinear), Err(Error::Usage(_))));
        assert!(resize_mask(&BinaryMask::filled(4, 4, false), 4, 0).is_err());
    }

    #[test]
    fn bilinear_upsample_midpoints() {
        // 2 → 4: sources at -0.25 (clamped), 0.25, 0.75, 1.25 (clamped).
        let img = FloatImage::new(2, 1, vec![0.0, 1.0]).unwrap();
        let r = resize(&img, 4, 1, ResizeMode::Bilinear).unwrap();
        assert_eq!(r.pixels(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn nearest_downsample_ties_take_foreground() {
        let m = BinaryMask::new(4, 1, vec![true, false, false, false]).unwrap();
        let r = resize_mask(&m, 2, 1).unwrap();
        assert_eq!(r.pixels(), &[true, false]);
        let r = resize_mask(&m.mirror_horizontal(), 2, 1).unwrap();
        assert_eq!(r.pixels(), &[false, true]);
    }

    #[test]
    fn parse_mode() {
        assert_eq!("nearest".parse::<ResizeMode>().unwrap(), ResizeMode::Nearest);
        assert!("cubic".parse::<ResizeMode>().is_err());
    }
}
