use super::BinaryMask;

/// Binary dilation with a 3×3 square structuring element, repeated
/// `iterations` times. Pixels outside the raster count as background.
pub fn dilate(mask: &BinaryMask, iterations: usize) -> BinaryMask {
    let (w, h) = mask.dims();
    let mut cur = mask.clone();
    let mut rows = vec![false; w * h];
    for _ in 0..iterations {
        // The square element is separable: a horizontal 3-wide max followed
        // by a vertical one.
        let src = cur.pixels();
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            for x in 0..w {
                rows[y * w + x] =
                    row[x] || (x > 0 && row[x - 1]) || (x + 1 < w && row[x + 1]);
            }
        }
        let dst = cur.pixels_mut();
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = rows[y * w + x]
                    || (y > 0 && rows[(y - 1) * w + x])
                    || (y + 1 < h && rows[(y + 1) * w + x]);
            }
        }
    }
    cur
}
