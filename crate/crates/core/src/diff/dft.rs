//! Discrete Fourier transform along the time (last) axis.
//!
//! Power-of-two lengths use an iterative radix-2 FFT; every other length uses
//! the direct `O(T^2)` sum. No zero padding is ever applied, so the transform
//! always has circular semantics over exactly `T` samples.

use std::f64::consts::PI;

use super::array::{Array, ComplexArray};

/// Precomputed twiddles for one transform length.
pub struct DftPlan {
    n: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
    bitrev: Vec<usize>,
}

impl DftPlan {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "transform length must be positive");
        let cos = (0..n)
            .map(|k| (2.0 * PI * k as f64 / n as f64).cos())
            .collect();
        let sin = (0..n)
            .map(|k| (2.0 * PI * k as f64 / n as f64).sin())
            .collect();
        let bitrev = if n.is_power_of_two() {
            let bits = n.trailing_zeros();
            (0..n)
                .map(|i| {
                    if bits == 0 {
                        0
                    } else {
                        i.reverse_bits() >> (usize::BITS - bits)
                    }
                })
                .collect()
        } else {
            Vec::new()
        };
        DftPlan {
            n,
            cos,
            sin,
            bitrev,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place transform of one sequence. The forward transform uses the
    /// kernel `e^{-j 2 pi u t / T}`; the inverse uses `e^{+j ...}` and scales by `1/T`.
    pub fn run(&self, re: &mut [f64], im: &mut [f64], inverse: bool) {
        debug_assert_eq!(re.len(), self.n);
        debug_assert_eq!(im.len(), self.n);
        if self.n.is_power_of_two() {
            self.radix2(re, im, inverse);
        } else {
            self.direct(re, im, inverse);
        }
        if inverse {
            let scale = 1.0 / self.n as f64;
            re.iter_mut().for_each(|v| *v *= scale);
            im.iter_mut().for_each(|v| *v *= scale);
        }
    }

    fn radix2(&self, re: &mut [f64], im: &mut [f64], inverse: bool) {
        let n = self.n;
        for i in 0..n {
            let j = self.bitrev[i];
            if j > i {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let sign = if inverse { 1.0 } else { -1.0 };
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let step = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let wr = self.cos[k * step];
                    let wi = sign * self.sin[k * step];
                    let (a, b) = (start + k, start + k + half);
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            len <<= 1;
        }
    }

    fn direct(&self, re: &mut [f64], im: &mut [f64], inverse: bool) {
        let n = self.n;
        let sign = if inverse { 1.0 } else { -1.0 };
        let mut out_re = vec![0.0; n];
        let mut out_im = vec![0.0; n];
        for u in 0..n {
            let (mut sr, mut si) = (0.0, 0.0);
            for t in 0..n {
                let k = (u * t) % n;
                let (c, s) = (self.cos[k], sign * self.sin[k]);
                sr += re[t] * c - im[t] * s;
                si += re[t] * s + im[t] * c;
            }
            out_re[u] = sr;
            out_im[u] = si;
        }
        re.copy_from_slice(&out_re);
        im.copy_from_slice(&out_im);
    }
}

/// Forward DFT of a real array, row by row along the last axis.
pub fn dft(x: &Array) -> ComplexArray {
    let n = x.cols();
    let plan = DftPlan::new(n.max(1));
    let mut re = x.clone();
    let mut im = Array::zeros(x.shape());
    for r in 0..x.rows() {
        plan.run(re.row_mut(r), im.row_mut(r), false);
    }
    ComplexArray::new(re, im)
}

/// Inverse DFT, row by row along the last axis.
pub fn idft(x: &ComplexArray) -> ComplexArray {
    let n = x.re.cols();
    let plan = DftPlan::new(n.max(1));
    let mut re = x.re.clone();
    let mut im = x.im.clone();
    for r in 0..re.rows() {
        plan.run(re.row_mut(r), im.row_mut(r), true);
    }
    ComplexArray::new(re, im)
}

/// Forward transform of a real row into caller-provided buffers.
pub(crate) fn dft_real_row(plan: &DftPlan, x: &[f64], re: &mut [f64], im: &mut [f64]) {
    re.copy_from_slice(x);
    im.iter_mut().for_each(|v| *v = 0.0);
    plan.run(re, im, false);
}
