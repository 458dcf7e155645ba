//! Raw forward/backward kernels over `[B, C, H, W]` buffers. Shape
//! validation happens in the tape; these functions assume consistent sizes.

use super::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn out_len(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

pub(crate) fn conv_out_dim(size: usize, k: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - k) / stride + 1
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let p = g.out_len();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *o = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.out_len();
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Real>(x: &[T], weight: &[T], bias: &[T], g: &ConvGeom) -> Vec<T> {
    let kk = g.patch_len();
    let p = g.out_len();
    let in_per = g.cin * g.h * g.w;
    let out_per = g.cout * p;
    let mut out = vec![T::zero(); g.batch * out_per];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); kk * p]
    };
    for b in 0..g.batch {
        let xb = &x[b * in_per..(b + 1) * in_per];
        let ob = &mut out[b * out_per..(b + 1) * out_per];
        for (co, row) in ob.chunks_mut(p).enumerate() {
            row.fill(bias[co]);
        }
        let src: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut cols);
            &cols
        };
        T::gemm(
            g.cout,
            kk,
            p,
            weight,
            (kk as isize, 1),
            src,
            (p as isize, 1),
            ob,
            true,
        );
    }
    out
}

/// Gradients of a convolution; each output slot is filled only when present.
pub(crate) fn conv2d_backward<T: Real>(
    x: &[T],
    weight: &[T],
    dout: &[T],
    g: &ConvGeom,
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let kk = g.patch_len();
    let p = g.out_len();
    let in_per = g.cin * g.h * g.w;
    let out_per = g.cout * p;
    let pointwise = g.is_pointwise();
    let mut cols = if pointwise {
        Vec::new()
    } else {
        vec![T::zero(); kk * p]
    };
    for b in 0..g.batch {
        let db_out = &dout[b * out_per..(b + 1) * out_per];
        if let Some(db) = db.as_deref_mut() {
            for (co, row) in db_out.chunks(p).enumerate() {
                db[co] += row.iter().copied().sum::<T>();
            }
        }
        if let Some(dw) = dw.as_deref_mut() {
            let xb = &x[b * in_per..(b + 1) * in_per];
            let src: &[T] = if pointwise {
                xb
            } else {
                im2col(xb, g, &mut cols);
                &cols
            };
            T::gemm(
                g.cout,
                p,
                kk,
                db_out,
                (p as isize, 1),
                src,
                (1, p as isize),
                dw,
                true,
            );
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxb = &mut dx[b * in_per..(b + 1) * in_per];
            if pointwise {
                T::gemm(
                    kk,
                    g.cout,
                    p,
                    weight,
                    (1, kk as isize),
                    db_out,
                    (p as isize, 1),
                    dxb,
                    true,
                );
            } else {
                T::gemm(
                    kk,
                    g.cout,
                    p,
                    weight,
                    (1, kk as isize),
                    db_out,
                    (p as isize, 1),
                    &mut cols,
                    false,
                );
                col2im(&cols, g, dxb);
            }
        }
    }
}

/// Max pooling; returns the output and, per output cell, the flat input
/// index that won (first maximum in row-major window order).
pub(crate) fn maxpool_forward<T: Real>(
    x: &[T],
    [b, c, h, w]: [usize; 4],
    k: usize,
    stride: usize,
) -> (Vec<T>, Vec<usize>, usize, usize) {
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut arg = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                let mut best_v = x[best];
                for ky in 0..k {
                    for kx in 0..k {
                        let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                        if x[idx] > best_v {
                            best_v = x[idx];
                            best = idx;
                        }
                    }
                }
                out.push(best_v);
                arg.push(best);
            }
        }
    }
    (out, arg, oh, ow)
}

/// Source sample positions for one axis of a bilinear upsample.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Tap {
    pub i0: usize,
    pub i1: usize,
    pub t: f64,
}

/// Half-pixel-centre sampling with border clamping:
/// `src = (i + 0.5) / factor - 0.5`, clamped to `[0, n - 1]`.
pub(crate) fn upsample_taps(n: usize, factor: usize) -> Vec<Tap> {
    (0..n * factor)
        .map(|i| {
            let src = (i as f64 + 0.5) / factor as f64 - 0.5;
            let src = src.clamp(0.0, (n - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            Tap {
                i0,
                i1,
                t: src - i0 as f64,
            }
        })
        .collect()
}

pub(crate) fn upsample_forward<T: Real>(x: &[T], [b, c, h, w]: [usize; 4], factor: usize) -> Vec<T> {
    let ty = upsample_taps(h, factor);
    let tx = upsample_taps(w, factor);
    let (oh, ow) = (h * factor, w * factor);
    let mut out = vec![T::zero(); b * c * oh * ow];
    for plane in 0..b * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for (oy, ry) in ty.iter().enumerate() {
            let wy1 = T::from_f64(ry.t);
            let wy0 = T::one() - wy1;
            let r0 = &src[ry.i0 * w..(ry.i0 + 1) * w];
            let r1 = &src[ry.i1 * w..(ry.i1 + 1) * w];
            for (ox, rx) in tx.iter().enumerate() {
                let wx1 = T::from_f64(rx.t);
                let wx0 = T::one() - wx1;
                let top = wx0 * r0[rx.i0] + wx1 * r0[rx.i1];
                let bot = wx0 * r1[rx.i0] + wx1 * r1[rx.i1];
                dst[oy * ow + ox] = wy0 * top + wy1 * bot;
            }
        }
    }
    out
}

pub(crate) fn upsample_backward<T: Real>(
    dout: &[T],
    [b, c, h, w]: [usize; 4],
    factor: usize,
    dx: &mut [T],
) {
    let ty = upsample_taps(h, factor);
    let tx = upsample_taps(w, factor);
    let (oh, ow) = (h * factor, w * factor);
    for plane in 0..b * c {
        let src = &dout[plane * oh * ow..(plane + 1) * oh * ow];
        let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
        for (oy, ry) in ty.iter().enumerate() {
            let wy1 = T::from_f64(ry.t);
            let wy0 = T::one() - wy1;
            for (ox, rx) in tx.iter().enumerate() {
                let wx1 = T::from_f64(rx.t);
                let wx0 = T::one() - wx1;
                let g = src[oy * ow + ox];
                dst[ry.i0 * w + rx.i0] += wy0 * wx0 * g;
                dst[ry.i0 * w + rx.i1] += wy0 * wx1 * g;
                dst[ry.i1 * w + rx.i0] += wy1 * wx0 * g;
                dst[ry.i1 * w + rx.i1] += wy1 * wx1 * g;
            }
        }
    }
}
