//! 2D complex FFT on row-major `[H, W]` planes built from 1D rustfft plans.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub struct Fft2 {
    h: usize,
    w: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({}x{})", self.h, self.w)
    }
}

impl Fft2 {
    pub fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            h,
            w,
            row_fwd: planner.plan_fft_forward(w),
            row_inv: planner.plan_fft_inverse(w),
            col_fwd: planner.plan_fft_forward(h),
            col_inv: planner.plan_fft_inverse(h),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    /// Unnormalized forward transform in place.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.apply(data, &self.row_fwd, &self.col_fwd);
    }

    /// Inverse transform in place, scaled by `1 / (H W)` so that
    /// `inverse(forward(x)) == x`.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.apply(data, &self.row_inv, &self.col_inv);
        let s = 1.0 / (self.h * self.w) as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }

    fn apply(&self, data: &mut [Complex64], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        let (h, w) = (self.h, self.w);
        assert_eq!(data.len(), h * w);
        rows.process(data);
        let mut t = vec![Complex64::new(0.0, 0.0); h * w];
        transpose(data, &mut t, h, w);
        cols.process(&mut t);
        transpose(&t, data, w, h);
    }

    pub fn forward_real(&self, data: &[f64]) -> Vec<Complex64> {
        let mut c: Vec<Complex64> = data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward(&mut c);
        c
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], h: usize, w: usize) {
    for j in 0..h {
        for i in 0..w {
            dst[i * h + j] = src[j * w + i];
        }
    }
}

/// Signed integer wavenumber of FFT bin `k` out of `n`.
pub fn wavenumber(k: usize, n: usize) -> i64 {
    if k <= n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_single_mode() {
        let (h, w) = (6, 8);
        let f = Fft2::new(h, w);
        let x: Vec<f64> = (0..h * w)
            .map(|k| {
                let (j, i) = (k / w, k % w);
                (2.0 * std::f64::consts::PI * (i as f64) / w as f64).cos() + 0.1 * j as f64
            })
            .collect();
        let mut c = f.forward_real(&x);
        // cos along x lands in bins (0, 1) and (0, w - 1) with weight HW/2
        assert!((c[1].re - (h * w) as f64 / 2.0).abs() < 1e-9);
        f.inverse(&mut c);
        for (a, b) in c.iter().zip(&x) {
            assert!((a.re - b).abs() < 1e-12 && a.im.abs() < 1e-12);
        }
    }
}
