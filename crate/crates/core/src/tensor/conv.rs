//! Correlation kernels shared by `conv2d` and `conv_transpose2d`.
//!
//! Both ops relate a "small" feature map (the conv2d output / the transposed
//! conv input) to a "big" one through the index map
//! `big = small * stride + tap - pad`. Weights are laid out
//! `[small_ch][big_ch][k][k]` for both ops, which is the usual `O×I×K×K` for
//! conv2d and `I×O×K×K` for the transposed op. With that layout:
//!
//! * conv2d forward and conv_transpose2d input-gradient are [`gather`],
//! * conv2d input-gradient and conv_transpose2d forward are [`scatter`],
//! * both weight gradients are [`weight_grad`].

use std::ops::Range;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Geometry {
    pub batch: usize,
    pub small_ch: usize,
    pub big_ch: usize,
    pub small_h: usize,
    pub small_w: usize,
    pub big_h: usize,
    pub big_w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Geometry {
    fn small_plane(&self) -> usize {
        self.small_h * self.small_w
    }

    fn big_plane(&self) -> usize {
        self.big_h * self.big_w
    }
}

/// Small-side indices `o` with `0 <= o * stride + tap - pad < big`.
fn valid(small: usize, big: usize, tap: usize, stride: usize, pad: usize) -> Range<usize> {
    let lo = if tap >= pad {
        0
    } else {
        (pad - tap).div_ceil(stride)
    };
    if big + pad <= tap {
        return 0..0;
    }
    let hi = ((big + pad - tap - 1) / stride + 1).min(small);
    lo..hi.max(lo)
}

/// Rows `(bc, kh, kw)` of the big map sampled on the small grid, zero where
/// the tap falls into padding. `col` is `big_ch·k·k × small_plane`.
fn im2col(g: &Geometry, big: &[f64], col: &mut [f64]) {
    let (sp, bp) = (g.small_plane(), g.big_plane());
    col.fill(0.0);
    for bc in 0..g.big_ch {
        let src = &big[bc * bp..][..bp];
        for kh in 0..g.k {
            let rows = valid(g.small_h, g.big_h, kh, g.stride, g.pad);
            for kw in 0..g.k {
                let cols = valid(g.small_w, g.big_w, kw, g.stride, g.pad);
                if cols.is_empty() {
                    continue;
                }
                let dst = &mut col[((bc * g.k + kh) * g.k + kw) * sp..][..sp];
                for oh in rows.clone() {
                    let bh = oh * g.stride + kh - g.pad;
                    let src_row = &src[bh * g.big_w..][..g.big_w];
                    let first = cols.start * g.stride + kw - g.pad;
                    let dst_row = &mut dst[oh * g.small_w..][cols.clone()];
                    for (d, v) in dst_row.iter_mut().zip(src_row[first..].iter().step_by(g.stride)) {
                        *d = *v;
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `col` back onto the big map.
fn col2im(g: &Geometry, col: &[f64], big: &mut [f64]) {
    let (sp, bp) = (g.small_plane(), g.big_plane());
    for bc in 0..g.big_ch {
        let dst = &mut big[bc * bp..][..bp];
        for kh in 0..g.k {
            let rows = valid(g.small_h, g.big_h, kh, g.stride, g.pad);
            for kw in 0..g.k {
                let cols = valid(g.small_w, g.big_w, kw, g.stride, g.pad);
                if cols.is_empty() {
                    continue;
                }
                let src = &col[((bc * g.k + kh) * g.k + kw) * sp..][..sp];
                for oh in rows.clone() {
                    let bh = oh * g.stride + kh - g.pad;
                    let first = cols.start * g.stride + kw - g.pad;
                    let dst_row = &mut dst[bh * g.big_w..][..g.big_w];
                    let src_row = &src[oh * g.small_w..][cols.clone()];
                    for (d, v) in dst_row[first..].iter_mut().step_by(g.stride).zip(src_row) {
                        *d += *v;
                    }
                }
            }
        }
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn taps(g: &Geometry) -> usize {
    g.big_ch * g.k * g.k
}

/// `small[n][sc] += sum_{bc,kh,kw} w[sc][bc][kh][kw] * big[n][bc][shifted]`
pub(crate) fn gather(g: &Geometry, big: &[f64], w: &[f64], small: &mut [f64]) {
    let (sp, bp, kk) = (g.small_plane(), g.big_plane(), taps(g));
    let mut col = vec![0.0; kk * sp];
    for n in 0..g.batch {
        im2col(g, &big[n * g.big_ch * bp..][..g.big_ch * bp], &mut col);
        for sc in 0..g.small_ch {
            let out = &mut small[(n * g.small_ch + sc) * sp..][..sp];
            for (r, &wv) in w[sc * kk..][..kk].iter().enumerate() {
                if wv != 0.0 {
                    axpy(out, wv, &col[r * sp..][..sp]);
                }
            }
        }
    }
}

/// `big[n][bc][shifted] += w[sc][bc][kh][kw] * small[n][sc]`
pub(crate) fn scatter(g: &Geometry, small: &[f64], w: &[f64], big: &mut [f64]) {
    let (sp, bp, kk) = (g.small_plane(), g.big_plane(), taps(g));
    let mut col = vec![0.0; kk * sp];
    for n in 0..g.batch {
        col.fill(0.0);
        for sc in 0..g.small_ch {
            let src = &small[(n * g.small_ch + sc) * sp..][..sp];
            for (r, &wv) in w[sc * kk..][..kk].iter().enumerate() {
                if wv != 0.0 {
                    axpy(&mut col[r * sp..][..sp], wv, src);
                }
            }
        }
        col2im(g, &col, &mut big[n * g.big_ch * bp..][..g.big_ch * bp]);
    }
}

/// `gw[sc][bc][kh][kw] += sum_{n,oh,ow} small[n][sc][oh][ow] * big[n][bc][shifted]`
pub(crate) fn weight_grad(g: &Geometry, small: &[f64], big: &[f64], gw: &mut [f64]) {
    let (sp, bp, kk) = (g.small_plane(), g.big_plane(), taps(g));
    let mut col = vec![0.0; kk * sp];
    for n in 0..g.batch {
        im2col(g, &big[n * g.big_ch * bp..][..g.big_ch * bp], &mut col);
        for sc in 0..g.small_ch {
            let s = &small[(n * g.small_ch + sc) * sp..][..sp];
            for (r, gv) in gw[sc * kk..][..kk].iter_mut().enumerate() {
                *gv += dot(s, &col[r * sp..][..sp]);
            }
        }
    }
}
