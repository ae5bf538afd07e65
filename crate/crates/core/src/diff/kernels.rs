//! Forward and backward kernels for the operator catalog.
//!
//! Convolutions all use kernel size 3 and padding 1. The index map shared by
//! strided convs and transposed convs is `dst = stride * t + k - 1`.

use super::array::Array;
use super::dft::{dft_real_row, DftPlan};

pub(crate) const KERNEL: usize = 3;
pub(crate) const NORM_EPS: f64 = 1e-5;
pub(crate) const SQRT_GRAD_FLOOR: f64 = 1e-12;
pub(crate) const SHIFT_MASK: f64 = -1e9;

/// Output length of a stride-`s` convolution over `n` samples.
pub(crate) fn conv_out_len(n: usize, stride: usize) -> usize {
    if stride == 1 {
        n
    } else {
        n.div_ceil(stride)
    }
}

/// Valid `t` range for which `stride * t + k - 1` lands inside `0..n_src`,
/// clipped to `0..n_t`.
#[inline]
fn valid_range(n_t: usize, n_src: usize, stride: usize, k: usize) -> (usize, usize) {
    if n_src < k {
        return (0, 0);
    }
    let lo = usize::from(k == 0);
    let hi = ((n_src - k) / stride + 1).min(n_t);
    (lo, hi.max(lo))
}

/// `out[t] += w * src[stride*t + k - 1]`
#[inline]
fn gather_axpy(out: &mut [f64], w: f64, src: &[f64], stride: usize, k: usize) {
    let (lo, hi) = valid_range(out.len(), src.len(), stride, k);
    if lo >= hi {
        return;
    }
    if stride == 1 {
        let s = &src[lo + k - 1..hi + k - 1];
        for (o, v) in out[lo..hi].iter_mut().zip(s) {
            *o += w * v;
        }
    } else {
        let start = stride * lo + k - 1;
        for (o, v) in out[lo..hi]
            .iter_mut()
            .zip(src[start..].iter().step_by(stride))
        {
            *o += w * v;
        }
    }
}

/// `dst[stride*t + k - 1] += w * src[t]`
#[inline]
fn scatter_axpy(dst: &mut [f64], w: f64, src: &[f64], stride: usize, k: usize) {
    let (lo, hi) = valid_range(src.len(), dst.len(), stride, k);
    if lo >= hi {
        return;
    }
    if stride == 1 {
        let d = &mut dst[lo + k - 1..hi + k - 1];
        for (o, v) in d.iter_mut().zip(&src[lo..hi]) {
            *o += w * v;
        }
    } else {
        let start = stride * lo + k - 1;
        for (o, v) in dst[start..].iter_mut().step_by(stride).zip(&src[lo..hi]) {
            *o += w * v;
        }
    }
}

/// `sum_t a[t] * src[stride*t + k - 1]`
#[inline]
fn gather_dot(a: &[f64], src: &[f64], stride: usize, k: usize) -> f64 {
    let (lo, hi) = valid_range(a.len(), src.len(), stride, k);
    if lo >= hi {
        return 0.0;
    }
    if stride == 1 {
        a[lo..hi]
            .iter()
            .zip(&src[lo + k - 1..hi + k - 1])
            .map(|(x, y)| x * y)
            .sum()
    } else {
        let start = stride * lo + k - 1;
        a[lo..hi]
            .iter()
            .zip(src[start..].iter().step_by(stride))
            .map(|(x, y)| x * y)
            .sum()
    }
}

fn fill_bias(out: &mut Array, b: Option<&Array>) {
    if let Some(b) = b {
        for (o, &bv) in b.data().iter().enumerate() {
            out.row_mut(o).iter_mut().for_each(|v| *v = bv);
        }
    }
}

fn row_sums(g: &Array) -> Array {
    Array::from_vec((0..g.rows()).map(|r| g.row(r).iter().sum()).collect())
}

// ---------------------------------------------------------------- linear

pub(crate) fn linear_fwd(w: &Array, b: Option<&Array>, x: &Array) -> Array {
    let (o_n, i_n, t_n) = (w.rows(), w.cols(), x.cols());
    let mut out = Array::zeros(&[o_n, t_n]);
    fill_bias(&mut out, b);
    for o in 0..o_n {
        let wr = w.row(o);
        let orow = out.row_mut(o);
        for (i, &wv) in wr.iter().enumerate().take(i_n) {
            for (ov, xv) in orow.iter_mut().zip(x.row(i)) {
                *ov += wv * xv;
            }
        }
    }
    out
}

pub(crate) fn linear_bwd(
    w: &Array,
    x: &Array,
    g: &Array,
    need_w: bool,
    need_x: bool,
) -> (Option<Array>, Array, Option<Array>) {
    let (o_n, i_n) = (w.rows(), w.cols());
    let gw = need_w.then(|| {
        let mut gw = Array::zeros(&[o_n, i_n]);
        for o in 0..o_n {
            let gr = g.row(o);
            for i in 0..i_n {
                gw.data_mut()[o * i_n + i] = gr.iter().zip(x.row(i)).map(|(a, b)| a * b).sum();
            }
        }
        gw
    });
    let gb = row_sums(g);
    let gx = need_x.then(|| {
        let mut gx = Array::zeros(x.shape());
        for o in 0..o_n {
            let gr = g.row(o);
            for i in 0..i_n {
                let wv = w.at(o, i);
                for (d, gv) in gx.row_mut(i).iter_mut().zip(gr) {
                    *d += wv * gv;
                }
            }
        }
        gx
    });
    (gw, gb, gx)
}

// ---------------------------------------------------------------- dense conv

/// `w: (O, I, 3)`, `x: (I, n)` -> `(O, conv_out_len(n, stride))`.
pub(crate) fn conv_fwd(w: &Array, b: &Array, x: &Array, stride: usize) -> Array {
    let (o_n, i_n) = (w.shape()[0], w.shape()[1]);
    let n_out = conv_out_len(x.cols(), stride);
    let mut out = Array::zeros(&[o_n, n_out]);
    fill_bias(&mut out, Some(b));
    let wd = w.data();
    for o in 0..o_n {
        let orow = out.row_mut(o);
        for i in 0..i_n {
            let xr = x.row(i);
            for k in 0..KERNEL {
                gather_axpy(orow, wd[(o * i_n + i) * KERNEL + k], xr, stride, k);
            }
        }
    }
    out
}

pub(crate) fn conv_bwd(
    w: &Array,
    x: &Array,
    g: &Array,
    stride: usize,
    need_w: bool,
    need_x: bool,
) -> (Option<Array>, Array, Option<Array>) {
    let (o_n, i_n) = (w.shape()[0], w.shape()[1]);
    let wd = w.data();
    let gw = need_w.then(|| {
        let mut gw = Array::zeros(w.shape());
        for o in 0..o_n {
            for i in 0..i_n {
                for k in 0..KERNEL {
                    gw.data_mut()[(o * i_n + i) * KERNEL + k] =
                        gather_dot(g.row(o), x.row(i), stride, k);
                }
            }
        }
        gw
    });
    let gx = need_x.then(|| {
        let mut gx = Array::zeros(x.shape());
        for o in 0..o_n {
            let gr = g.row(o);
            for i in 0..i_n {
                let dst = gx.row_mut(i);
                for k in 0..KERNEL {
                    scatter_axpy(dst, wd[(o * i_n + i) * KERNEL + k], gr, stride, k);
                }
            }
        }
        gx
    });
    (gw, row_sums(g), gx)
}

// ---------------------------------------------------------------- transposed conv

/// Stride-2 transposed conv: `w: (O, I, 3)`, `x: (I, n)` -> `(O, out_len)`.
pub(crate) fn conv_t_fwd(w: &Array, b: &Array, x: &Array, out_len: usize) -> Array {
    let (o_n, i_n) = (w.shape()[0], w.shape()[1]);
    let mut out = Array::zeros(&[o_n, out_len]);
    fill_bias(&mut out, Some(b));
    let wd = w.data();
    for o in 0..o_n {
        let orow = out.row_mut(o);
        for i in 0..i_n {
            let xr = x.row(i);
            for k in 0..KERNEL {
                scatter_axpy(orow, wd[(o * i_n + i) * KERNEL + k], xr, 2, k);
            }
        }
    }
    out
}

pub(crate) fn conv_t_bwd(
    w: &Array,
    x: &Array,
    g: &Array,
    need_w: bool,
    need_x: bool,
) -> (Option<Array>, Array, Option<Array>) {
    let (o_n, i_n) = (w.shape()[0], w.shape()[1]);
    let wd = w.data();
    let gw = need_w.then(|| {
        let mut gw = Array::zeros(w.shape());
        for o in 0..o_n {
            for i in 0..i_n {
                for k in 0..KERNEL {
                    gw.data_mut()[(o * i_n + i) * KERNEL + k] =
                        gather_dot(x.row(i), g.row(o), 2, k);
                }
            }
        }
        gw
    });
    let gx = need_x.then(|| {
        let mut gx = Array::zeros(x.shape());
        for o in 0..o_n {
            let gr = g.row(o);
            for i in 0..i_n {
                let dst = gx.row_mut(i);
                for k in 0..KERNEL {
                    gather_axpy(dst, wd[(o * i_n + i) * KERNEL + k], gr, 2, k);
                }
            }
        }
        gx
    });
    (gw, row_sums(g), gx)
}

// ---------------------------------------------------------------- depthwise conv

/// `w: (D, 3)`, `b: (D)`, `x: (D, n)`.
pub(crate) fn dw_conv_fwd(w: &Array, b: &Array, x: &Array, stride: usize) -> Array {
    let d_n = x.rows();
    let mut out = Array::zeros(&[d_n, conv_out_len(x.cols(), stride)]);
    fill_bias(&mut out, Some(b));
    for d in 0..d_n {
        let wr = w.row(d);
        let orow = out.row_mut(d);
        for (k, &wv) in wr.iter().enumerate() {
            gather_axpy(orow, wv, x.row(d), stride, k);
        }
    }
    out
}

pub(crate) fn dw_conv_bwd(w: &Array, x: &Array, g: &Array, stride: usize) -> (Array, Array, Array) {
    let d_n = x.rows();
    let mut gw = Array::zeros(w.shape());
    let mut gx = Array::zeros(x.shape());
    for d in 0..d_n {
        for k in 0..KERNEL {
            gw.data_mut()[d * KERNEL + k] = gather_dot(g.row(d), x.row(d), stride, k);
            scatter_axpy(gx.row_mut(d), w.at(d, k), g.row(d), stride, k);
        }
    }
    (gw, row_sums(g), gx)
}

// ---------------------------------------------------------------- pooling

pub(crate) fn max_pool_fwd(x: &Array) -> Array {
    let n_out = x.cols().div_ceil(2);
    let mut out = Array::zeros(&[x.rows(), n_out]);
    for r in 0..x.rows() {
        let xr = x.row(r);
        for (t, o) in out.row_mut(r).iter_mut().enumerate() {
            let a = xr[2 * t];
            *o = match xr.get(2 * t + 1) {
                Some(&b) if b > a => b,
                _ => a,
            };
        }
    }
    out
}

pub(crate) fn max_pool_bwd(x: &Array, g: &Array) -> Array {
    let mut gx = Array::zeros(x.shape());
    for r in 0..x.rows() {
        let xr = x.row(r).to_vec();
        let gr = g.row(r).to_vec();
        let dst = gx.row_mut(r);
        for (t, gv) in gr.iter().enumerate() {
            let a = xr[2 * t];
            let pick = match xr.get(2 * t + 1) {
                Some(&b) if b > a => 2 * t + 1,
                _ => 2 * t,
            };
            dst[pick] += gv;
        }
    }
    gx
}

pub(crate) fn gap_fwd(x: &Array) -> Array {
    let n = x.cols() as f64;
    Array::matrix(
        x.rows(),
        1,
        (0..x.rows())
            .map(|r| x.row(r).iter().sum::<f64>() / n)
            .collect(),
    )
}

pub(crate) fn gap_bwd(x: &Array, g: &Array) -> Array {
    let n = x.cols();
    let mut gx = Array::zeros(x.shape());
    for r in 0..x.rows() {
        let v = g.data()[r] / n as f64;
        gx.row_mut(r).iter_mut().for_each(|d| *d = v);
    }
    gx
}

// ---------------------------------------------------------------- normalization

/// Normalizes each column over channels.
pub(crate) fn layer_norm_fwd(x: &Array, gamma: &Array, beta: &Array) -> Array {
    let (d_n, t_n) = (x.rows(), x.cols());
    let mut out = Array::zeros(x.shape());
    for t in 0..t_n {
        let mean = (0..d_n).map(|d| x.at(d, t)).sum::<f64>() / d_n as f64;
        let var = (0..d_n).map(|d| (x.at(d, t) - mean).powi(2)).sum::<f64>() / d_n as f64;
        let rstd = 1.0 / (var + NORM_EPS).sqrt();
        for d in 0..d_n {
            out.data_mut()[d * t_n + t] =
                (x.at(d, t) - mean) * rstd * gamma.data()[d] + beta.data()[d];
        }
    }
    out
}

pub(crate) fn layer_norm_bwd(x: &Array, gamma: &Array, g: &Array) -> (Array, Array, Array) {
    let (d_n, t_n) = (x.rows(), x.cols());
    let mut gx = Array::zeros(x.shape());
    let mut gg = Array::zeros(gamma.shape());
    let mut gb = Array::zeros(gamma.shape());
    let mut xhat = vec![0.0; d_n];
    let mut dxhat = vec![0.0; d_n];
    for t in 0..t_n {
        let mean = (0..d_n).map(|d| x.at(d, t)).sum::<f64>() / d_n as f64;
        let var = (0..d_n).map(|d| (x.at(d, t) - mean).powi(2)).sum::<f64>() / d_n as f64;
        let rstd = 1.0 / (var + NORM_EPS).sqrt();
        for d in 0..d_n {
            xhat[d] = (x.at(d, t) - mean) * rstd;
            let gv = g.at(d, t);
            gg.data_mut()[d] += gv * xhat[d];
            gb.data_mut()[d] += gv;
            dxhat[d] = gv * gamma.data()[d];
        }
        let m1 = dxhat.iter().sum::<f64>() / d_n as f64;
        let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d_n as f64;
        for d in 0..d_n {
            gx.data_mut()[d * t_n + t] = rstd * (dxhat[d] - m1 - xhat[d] * m2);
        }
    }
    (gx, gg, gb)
}

/// Group norm: statistics over `(channels in group) x time`, per-channel affine.
pub(crate) fn group_norm_fwd(x: &Array, gamma: &Array, beta: &Array, groups: usize) -> Array {
    let (d_n, t_n) = (x.rows(), x.cols());
    let per = d_n / groups;
    let mut out = Array::zeros(x.shape());
    for gi in 0..groups {
        let span = &x.data()[gi * per * t_n..(gi + 1) * per * t_n];
        let n = span.len() as f64;
        let mean = span.iter().sum::<f64>() / n;
        let var = span.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let rstd = 1.0 / (var + NORM_EPS).sqrt();
        for d in gi * per..(gi + 1) * per {
            let (gm, bt) = (gamma.data()[d], beta.data()[d]);
            let src = x.row(d).to_vec();
            for (o, v) in out.row_mut(d).iter_mut().zip(src) {
                *o = (v - mean) * rstd * gm + bt;
            }
        }
    }
    out
}

pub(crate) fn group_norm_bwd(
    x: &Array,
    gamma: &Array,
    g: &Array,
    groups: usize,
) -> (Array, Array, Array) {
    let (d_n, t_n) = (x.rows(), x.cols());
    let per = d_n / groups;
    let mut gx = Array::zeros(x.shape());
    let mut gg = Array::zeros(gamma.shape());
    let mut gb = Array::zeros(gamma.shape());
    for gi in 0..groups {
        let lo = gi * per * t_n;
        let hi = (gi + 1) * per * t_n;
        let span = &x.data()[lo..hi];
        let n = span.len() as f64;
        let mean = span.iter().sum::<f64>() / n;
        let var = span.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let rstd = 1.0 / (var + NORM_EPS).sqrt();
        let mut xhat = Vec::with_capacity(hi - lo);
        let mut dxhat = Vec::with_capacity(hi - lo);
        for idx in lo..hi {
            let d = idx / t_n;
            let xh = (x.data()[idx] - mean) * rstd;
            let gv = g.data()[idx];
            gg.data_mut()[d] += gv * xh;
            gb.data_mut()[d] += gv;
            xhat.push(xh);
            dxhat.push(gv * gamma.data()[d]);
        }
        let m1 = dxhat.iter().sum::<f64>() / n;
        let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n;
        for (j, idx) in (lo..hi).enumerate() {
            gx.data_mut()[idx] = rstd * (dxhat[j] - m1 - xhat[j] * m2);
        }
    }
    (gx, gg, gb)
}

// ---------------------------------------------------------------- softmax

pub(crate) fn softmax_fwd(x: &Array, axis: usize) -> Array {
    let (r_n, c_n) = (x.rows(), x.cols());
    let mut out = x.clone();
    let (outer, inner, stride_o, stride_i) = if axis == 0 {
        (c_n, r_n, 1, c_n)
    } else {
        (r_n, c_n, c_n, 1)
    };
    let data = out.data_mut();
    for a in 0..outer {
        let base = a * stride_o;
        let max = (0..inner)
            .map(|b| data[base + b * stride_i])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for b in 0..inner {
            let e = (data[base + b * stride_i] - max).exp();
            data[base + b * stride_i] = e;
            sum += e;
        }
        for b in 0..inner {
            data[base + b * stride_i] /= sum;
        }
    }
    out
}

pub(crate) fn softmax_bwd(y: &Array, g: &Array, axis: usize) -> Array {
    let (r_n, c_n) = (y.rows(), y.cols());
    let (outer, inner, stride_o, stride_i) = if axis == 0 {
        (c_n, r_n, 1, c_n)
    } else {
        (r_n, c_n, c_n, 1)
    };
    let mut gx = Array::zeros(y.shape());
    for a in 0..outer {
        let base = a * stride_o;
        let dot: f64 = (0..inner)
            .map(|b| y.data()[base + b * stride_i] * g.data()[base + b * stride_i])
            .sum();
        for b in 0..inner {
            let i = base + b * stride_i;
            gx.data_mut()[i] = y.data()[i] * (g.data()[i] - dot);
        }
    }
    gx
}

// ---------------------------------------------------------------- spectral

/// Real or imaginary part of the row-wise DFT of a real array.
pub(crate) fn dft_part_fwd(x: &Array, imag: bool) -> Array {
    let n = x.cols();
    let plan = DftPlan::new(n);
    let mut out = Array::zeros(x.shape());
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for r in 0..x.rows() {
        dft_real_row(&plan, x.row(r), &mut re, &mut im);
        out.row_mut(r).copy_from_slice(if imag { &im } else { &re });
    }
    out
}

/// Real part of the row-wise inverse DFT of `re + j im`.
pub(crate) fn idft_real_fwd(re: &Array, im: &Array) -> Array {
    let n = re.cols();
    let plan = DftPlan::new(n);
    let mut out = Array::zeros(re.shape());
    let mut bi = vec![0.0; n];
    for r in 0..re.rows() {
        let dst = out.row_mut(r);
        dst.copy_from_slice(re.row(r));
        bi.copy_from_slice(im.row(r));
        plan.run(dst, &mut bi, true);
    }
    out
}

/// Gradients of `idft_real` with respect to `(re, im)`: `(1/T) * (Re, Im) DFT(g)`.
pub(crate) fn idft_real_bwd(g: &Array) -> (Array, Array) {
    let n = g.cols();
    let scale = 1.0 / n as f64;
    let mut gre = dft_part_fwd(g, false);
    let mut gim = dft_part_fwd(g, true);
    gre.data_mut().iter_mut().for_each(|v| *v *= scale);
    gim.data_mut().iter_mut().for_each(|v| *v *= scale);
    (gre, gim)
}

// ---------------------------------------------------------------- structural

pub(crate) fn shift_stack_fwd(s: &Array, bins: usize, backward_dir: bool) -> Array {
    let t_n = s.cols();
    let src = s.data();
    let mut out = Array::full(&[bins + 1, t_n], SHIFT_MASK);
    for b in 0..=bins {
        let row = out.row_mut(b);
        for (t, o) in row.iter_mut().enumerate() {
            let idx = if backward_dir {
                t.checked_sub(b)
            } else {
                Some(t + b).filter(|&i| i < t_n)
            };
            if let Some(i) = idx {
                *o = src[i];
            }
        }
    }
    out
}

pub(crate) fn shift_stack_bwd(s: &Array, g: &Array, bins: usize, backward_dir: bool) -> Array {
    let t_n = s.cols();
    let mut gs = Array::zeros(s.shape());
    for b in 0..=bins {
        for t in 0..t_n {
            let idx = if backward_dir {
                t.checked_sub(b)
            } else {
                Some(t + b).filter(|&i| i < t_n)
            };
            if let Some(i) = idx {
                gs.data_mut()[i] += g.at(b, t);
            }
        }
    }
    gs
}

pub(crate) fn scale_channels_fwd(x: &Array, w: &Array) -> Array {
    let mut out = x.clone();
    for (d, &wv) in w.data().iter().enumerate() {
        out.row_mut(d).iter_mut().for_each(|v| *v *= wv);
    }
    out
}

pub(crate) fn scale_channels_bwd(x: &Array, w: &Array, g: &Array) -> (Array, Array) {
    let mut gx = g.clone();
    let mut gw = Array::zeros(w.shape());
    for (d, &wv) in w.data().iter().enumerate() {
        gx.row_mut(d).iter_mut().for_each(|v| *v *= wv);
        gw.data_mut()[d] = g.row(d).iter().zip(x.row(d)).map(|(a, b)| a * b).sum();
    }
    (gx, gw)
}
