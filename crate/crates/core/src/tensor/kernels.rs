//! Forward and backward kernels for the differentiable operations.
//!
//! Convolutions are lowered to im2col + GEMM. The column buffer is built for a
//! band of output rows at a time so its size stays bounded on large inputs.

use super::{Scalar, Tensor};
use crate::error::{shape_err, Result};

/// Upper bound on column-buffer elements per band.
const COL_BUDGET: usize = 1 << 22;

/// Output-geometry of a convolution, validated once and shared by both passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeometry {
    pub fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let &[batch, cin, h, width] = x else {
            return Err(shape_err!("conv2d input must be NCHW, got {x:?}"));
        };
        let &[cout, wcin, kh, kw] = w else {
            return Err(shape_err!("conv2d weight must be [Cout,Cin,kh,kw], got {w:?}"));
        };
        if stride == 0 {
            return Err(shape_err!("conv2d stride must be positive"));
        }
        if cin != wcin {
            return Err(shape_err!(
                "conv2d channel mismatch: input has {cin}, weight expects {wcin}"
            ));
        }
        if h + 2 * pad < kh || width + 2 * pad < kw {
            return Err(shape_err!(
                "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * pad,
                width + 2 * pad
            ));
        }
        Ok(ConvGeometry {
            batch,
            cin,
            h,
            w: width,
            cout,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (width + 2 * pad - kw) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn band_rows(&self) -> usize {
        (COL_BUDGET / (self.patch_len() * self.wo).max(1)).clamp(1, self.ho)
    }
}

/// Fills `col` (`[K, rows*wo]`, row-major) with the receptive fields of output
/// rows `oy0..oy1` of one sample.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeometry, oy0: usize, oy1: usize, col: &mut [T]) {
    let rows = oy1 - oy0;
    let ncol = rows * g.wo;
    let mut r = 0;
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let dst = &mut col[r * ncol..(r + 1) * ncol];
                for (i, oy) in (oy0..oy1).enumerate() {
                    let out_row = &mut dst[i * g.wo..(i + 1) * g.wo];
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *o = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                r += 1;
            }
        }
    }
}

/// Scatter-adds a column buffer back into the input gradient of one sample.
fn col2im<T: Scalar>(col: &[T], g: &ConvGeometry, oy0: usize, oy1: usize, dx: &mut [T]) {
    let rows = oy1 - oy0;
    let ncol = rows * g.wo;
    let mut r = 0;
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let src = &col[r * ncol..(r + 1) * ncol];
                for (i, oy) in (oy0..oy1).enumerate() {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in src[i * g.wo..(i + 1) * g.wo].iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] = dst[ix as usize] + v;
                        }
                    }
                }
                r += 1;
            }
        }
    }
}

/// 2-D cross-correlation with zero padding: `[N,Cin,H,W] * [Cout,Cin,kh,kw] + b`.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(x.shape(), w.shape(), stride, pad)?;
    if b.shape() != [g.cout] {
        return Err(shape_err!(
            "conv2d bias must be [{}], got {:?}",
            g.cout,
            b.shape()
        ));
    }
    let k = g.patch_len();
    let p = g.out_plane();
    let in_len = g.cin * g.h * g.w;
    let mut out = Tensor::zeros(&[g.batch, g.cout, g.ho, g.wo]);
    let band = g.band_rows();
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * band * g.wo]
    };
    let xd = x.data();
    let wd = w.data();
    for n in 0..g.batch {
        let xn = &xd[n * in_len..(n + 1) * in_len];
        let on = &mut out.data_mut()[n * g.cout * p..(n + 1) * g.cout * p];
        if g.is_pointwise() {
            // SAFETY: wd is [cout, k], xn is [k, p], on is [cout, p].
            unsafe {
                T::gemm(
                    g.cout, k, p, T::one(), wd.as_ptr(), k as isize, 1, xn.as_ptr(),
                    p as isize, 1, T::zero(), on.as_mut_ptr(), p as isize, 1,
                );
            }
        } else {
            let mut oy0 = 0;
            while oy0 < g.ho {
                let oy1 = (oy0 + band).min(g.ho);
                let ncol = (oy1 - oy0) * g.wo;
                im2col(xn, &g, oy0, oy1, &mut col[..k * ncol]);
                // SAFETY: col is [k, ncol]; the destination is the column
                // window [oy0*wo, oy1*wo) of the [cout, p] output plane.
                unsafe {
                    T::gemm(
                        g.cout, k, ncol, T::one(), wd.as_ptr(), k as isize, 1, col.as_ptr(),
                        ncol as isize, 1, T::zero(), on.as_mut_ptr().add(oy0 * g.wo),
                        p as isize, 1,
                    );
                }
                oy0 = oy1;
            }
        }
        for (co, plane) in on.chunks_exact_mut(p).enumerate() {
            let bias = b.data()[co];
            plane.iter_mut().for_each(|v| *v = *v + bias);
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d_forward`]. `dx` is only computed when `need_dx` is set.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
    dout: &Tensor<T>,
    need_dx: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>)> {
    let g = ConvGeometry::new(x.shape(), w.shape(), stride, pad)?;
    if dout.shape() != [g.batch, g.cout, g.ho, g.wo] {
        return Err(shape_err!("conv2d upstream gradient has shape {:?}", dout.shape()));
    }
    let k = g.patch_len();
    let p = g.out_plane();
    let in_len = g.cin * g.h * g.w;
    let band = g.band_rows();
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[g.cout]);
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let (mut col, mut dcol) = if g.is_pointwise() {
        (Vec::new(), Vec::new())
    } else {
        let len = k * band * g.wo;
        (vec![T::zero(); len], vec![T::zero(); if need_dx { len } else { 0 }])
    };
    let xd = x.data();
    let wd = w.data();
    for n in 0..g.batch {
        let xn = &xd[n * in_len..(n + 1) * in_len];
        let gn = &dout.data()[n * g.cout * p..(n + 1) * g.cout * p];
        for (co, plane) in gn.chunks_exact(p).enumerate() {
            let s: T = plane.iter().copied().sum();
            db.data_mut()[co] = db.data()[co] + s;
        }
        if g.is_pointwise() {
            // SAFETY: gn is [cout, p], xn^T is [p, k], dw is [cout, k].
            unsafe {
                T::gemm(
                    g.cout, p, k, T::one(), gn.as_ptr(), p as isize, 1, xn.as_ptr(), 1,
                    p as isize, T::one(), dw.data_mut().as_mut_ptr(), k as isize, 1,
                );
            }
            if let Some(dx) = dx.as_mut() {
                let dxn = &mut dx.data_mut()[n * in_len..(n + 1) * in_len];
                // SAFETY: w^T is [k, cout], gn is [cout, p], dxn is [k, p].
                unsafe {
                    T::gemm(
                        k, g.cout, p, T::one(), wd.as_ptr(), 1, k as isize, gn.as_ptr(),
                        p as isize, 1, T::zero(), dxn.as_mut_ptr(), p as isize, 1,
                    );
                }
            }
            continue;
        }
        let mut oy0 = 0;
        while oy0 < g.ho {
            let oy1 = (oy0 + band).min(g.ho);
            let ncol = (oy1 - oy0) * g.wo;
            im2col(xn, &g, oy0, oy1, &mut col[..k * ncol]);
            let gband = gn[oy0 * g.wo..].as_ptr();
            // SAFETY: gband is the [cout, ncol] window with row stride p;
            // col^T is [ncol, k]; dw is [cout, k].
            unsafe {
                T::gemm(
                    g.cout, ncol, k, T::one(), gband, p as isize, 1, col.as_ptr(), 1,
                    ncol as isize, T::one(), dw.data_mut().as_mut_ptr(), k as isize, 1,
                );
            }
            if let Some(dx) = dx.as_mut() {
                // SAFETY: w^T is [k, cout]; gband is [cout, ncol]; dcol is [k, ncol].
                unsafe {
                    T::gemm(
                        k, g.cout, ncol, T::one(), wd.as_ptr(), 1, k as isize, gband,
                        p as isize, 1, T::zero(), dcol.as_mut_ptr(), ncol as isize, 1,
                    );
                }
                let dxn = &mut dx.data_mut()[n * in_len..(n + 1) * in_len];
                col2im(&dcol[..k * ncol], &g, oy0, oy1, dxn);
            }
            oy0 = oy1;
        }
    }
    Ok((dx, dw, db))
}

/// 2×2 max pooling with stride 2. Returns the pooled tensor and, for every
/// output element, the flat input index that produced it.
pub fn max_pool2_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err!("max_pool2 needs even spatial dims, got {h}x{w}"));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    let xd = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                // Row-major window order; strict comparison keeps the first maximum.
                for idx in [top + 1, top + w, top + w + 1] {
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, ho, wo], out)?, argmax))
}

pub fn max_pool2_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    dout: &Tensor<T>,
) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(dout.data()) {
        d[idx] = d[idx] + g;
    }
    dx
}

/// Nearest-neighbour ×2 upsampling: each pixel becomes a 2×2 block.
pub fn upsample2_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4()?;
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in x.data().chunks_exact(h * w) {
        for row in plane.chunks_exact(w) {
            let start = out.len();
            for &v in row {
                out.push(v);
                out.push(v);
            }
            out.extend_from_within(start..start + wo);
        }
    }
    Tensor::new(vec![n, c, ho, wo], out)
}

pub fn upsample2_backward<T: Scalar>(dout: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, ho, wo] = dout.dims4()?;
    let (h, w) = (ho / 2, wo / 2);
    let mut dx = Tensor::zeros(&[n, c, h, w]);
    let g = dout.data();
    let d = dx.data_mut();
    for plane in 0..n * c {
        for y in 0..h {
            for x in 0..w {
                let top = plane * ho * wo + 2 * y * wo + 2 * x;
                d[plane * h * w + y * w + x] = g[top] + g[top + 1] + g[top + wo] + g[top + wo + 1];
            }
        }
    }
    Ok(dx)
}

/// Channel concatenation `[a, b]` along axis 1.
pub fn concat_forward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [na, ca, ha, wa] = a.dims4()?;
    let [nb, cb, hb, wb] = b.dims4()?;
    if (na, ha, wa) != (nb, hb, wb) {
        return Err(shape_err!(
            "concat_channels needs matching N,H,W: {:?} vs {:?}",
            a.shape(),
            b.shape()
        ));
    }
    let plane = ha * wa;
    let mut out = Vec::with_capacity(na * (ca + cb) * plane);
    for n in 0..na {
        out.extend_from_slice(&a.data()[n * ca * plane..(n + 1) * ca * plane]);
        out.extend_from_slice(&b.data()[n * cb * plane..(n + 1) * cb * plane]);
    }
    Tensor::new(vec![na, ca + cb, ha, wa], out)
}

/// Splits the gradient of a concatenation at channel `ca`.
pub fn concat_backward<T: Scalar>(dout: &Tensor<T>, ca: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let [n, c, h, w] = dout.dims4()?;
    let cb = c - ca;
    let plane = h * w;
    let mut da = Vec::with_capacity(n * ca * plane);
    let mut db = Vec::with_capacity(n * cb * plane);
    for sample in dout.data().chunks_exact(c * plane) {
        da.extend_from_slice(&sample[..ca * plane]);
        db.extend_from_slice(&sample[ca * plane..]);
    }
    Ok((
        Tensor::new(vec![n, ca, h, w], da)?,
        Tensor::new(vec![n, cb, h, w], db)?,
    ))
}

pub fn relu<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// ReLU gradient evaluated at the forward input.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, dout: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(dout.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor {
        shape: x.shape().to_vec(),
        data,
    }
}

/// Sigmoid gradient evaluated from the forward output `s`.
pub fn sigmoid_backward<T: Scalar>(s: &Tensor<T>, dout: &Tensor<T>) -> Tensor<T> {
    let data = s
        .data()
        .iter()
        .zip(dout.data())
        .map(|(&s, &g)| g * s * (T::one() - s))
        .collect();
    Tensor {
        shape: s.shape().to_vec(),
        data,
    }
}

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before the log.
pub const BCE_EPS: f64 = 1e-7;

fn clamp_prob<T: Scalar>(p: T) -> T {
    let eps = T::from_f64(BCE_EPS);
    p.max(eps).min(T::one() - eps)
}

/// Mean binary cross-entropy of `pred` against `target`.
pub fn bce_forward<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    if pred.shape() != target.shape() {
        return Err(shape_err!(
            "bce_loss shape mismatch: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        ));
    }
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = clamp_prob(p).as_f64();
            let t = t.as_f64();
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(T::from_f64(total / pred.len() as f64))
}

/// Gradient of [`bce_forward`] with respect to `pred`, scaled by `upstream`.
///
/// The derivative is taken at the clamped probability, so saturated
/// predictions still receive a corrective signal.
pub fn bce_backward<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, upstream: T) -> Tensor<T> {
    let scale = upstream / T::from_f64(pred.len() as f64);
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = clamp_prob(p);
            scale * (p - t) / (p * (T::one() - p))
        })
        .collect();
    Tensor {
        shape: pred.shape().to_vec(),
        data,
    }
}
