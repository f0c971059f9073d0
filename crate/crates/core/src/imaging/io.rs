//! Reading and writing 8-bit grayscale PNG and binary PGM (P5) files.
//!
//! The output format is chosen from the file extension: `.pgm` writes PGM,
//! anything else writes PNG. Reading sniffs the content.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageError, ImageReader};

use super::{BinaryMask, GrayImage, Raster};
use crate::error::{Error, Result};

fn map_image_err(path: &Path, e: ImageError) -> Error {
    match e {
        ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

/// Reads any supported image as 8-bit luminance.
pub fn read_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| map_image_err(path, e))?.into_luma8();
    let (w, h) = img.dimensions();
    Raster::new(w as usize, h as usize, img.into_raw())
}

/// Reads a mask file; any nonzero pixel is foreground.
pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    Ok(BinaryMask::from_gray(&read_gray(path)?))
}

fn is_pgm(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

fn write_raw(path: &Path, bytes: &[u8], w: usize, h: usize, color: ExtendedColorType) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let out = BufWriter::new(file);
    let (w, h) = (w as u32, h as u32);
    let res = if is_pgm(path) && color == ExtendedColorType::L8 {
        PnmEncoder::new(out)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(bytes, w, h, color)
    } else {
        PngEncoder::new(out).write_image(bytes, w, h, color)
    };
    res.map_err(|e| map_image_err(path, e))
}

pub fn write_gray(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    write_raw(path.as_ref(), img.pixels(), img.width(), img.height(), ExtendedColorType::L8)
}

/// Writes a mask as 0 / 255.
pub fn write_mask(path: impl AsRef<Path>, mask: &BinaryMask) -> Result<()> {
    write_gray(path, &mask.to_gray())
}

/// Foreground pixels with at least one 4-connected background neighbour
/// (pixels outside the raster count as background).
pub fn mask_boundary(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = mask.dims();
    Raster::from_fn(w, h, |x, y| {
        mask.get(x, y)
            && (x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !mask.get(x - 1, y)
                || !mask.get(x + 1, y)
                || !mask.get(x, y - 1)
                || !mask.get(x, y + 1))
    })
}

/// Writes the radiograph as an RGB PNG with the mask outline drawn in red.
pub fn write_overlay(path: impl AsRef<Path>, img: &GrayImage, mask: &BinaryMask) -> Result<()> {
    img.same_dims(mask, "overlay image/mask dimension mismatch")?;
    let edge = mask_boundary(mask);
    let mut rgb = Vec::with_capacity(img.pixels().len() * 3);
    for (&p, &e) in img.pixels().iter().zip(edge.pixels()) {
        if e {
            rgb.extend_from_slice(&[255, 0, 0]);
        } else {
            rgb.extend_from_slice(&[p, p, p]);
        }
    }
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    PngEncoder::new(BufWriter::new(file))
        .write_image(&rgb, img.width() as u32, img.height() as u32, ExtendedColorType::Rgb8)
        .map_err(|e| map_image_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_and_pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::from_fn(13, 7, |x, y| (x * 19 + y * 7) as u8);
        for name in ["a.png", "a.pgm"] {
            let p = dir.path().join(name);
            write_gray(&p, &img).unwrap();
            assert_eq!(read_gray(&p).unwrap(), img);
        }
        let pgm = std::fs::read(dir.path().join("a.pgm")).unwrap();
        assert!(pgm.starts_with(b"P5"));
    }

    #[test]
    fn mask_nonzero_is_foreground() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        write_gray(&p, &GrayImage::new(3, 1, vec![0, 1, 255]).unwrap()).unwrap();
        assert_eq!(read_mask(&p).unwrap().pixels(), &[false, true, true]);
    }

    #[test]
    fn missing_file_is_io_error_and_garbage_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_gray(dir.path().join("nope.png")), Err(Error::Io { .. })));
        let p = dir.path().join("junk.png");
        std::fs::write(&p, b"\x89PNG\r\n\x1a\nnot really").unwrap();
        assert!(matches!(read_gray(&p), Err(Error::Format(_))));
    }

    #[test]
    fn boundary_of_block() {
        let m = BinaryMask::from_fn(5, 5, |x, y| (1..4).contains(&x) && (1..4).contains(&y));
        let b = mask_boundary(&m);
        assert_eq!(b.count(), 8);
        assert!(!b.get(2, 2));
    }

    #[test]
    fn overlay_is_rgb() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::filled(6, 6, 40);
        let m = BinaryMask::from_fn(6, 6, |x, _| x < 3);
        let p = dir.path().join("o.png");
        write_overlay(&p, &img, &m).unwrap();
        let back = image::open(&p).unwrap().into_rgb8();
        assert_eq!(back.get_pixel(0, 0).0, [255, 0, 0]);
        assert_eq!(back.get_pixel(5, 0).0, [40, 40, 40]);
    }
}
