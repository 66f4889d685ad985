//! Two-dimensional complex FFT over row-major buffers.
//!
//! Spectra are kept in transposed layout (`[k1][k0]`) so each direction costs
//! two passes of contiguous row transforms and a single transpose.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub(crate) struct Fft2 {
    n0: usize,
    n1: usize,
    fwd0: Arc<dyn Fft<f64>>,
    fwd1: Arc<dyn Fft<f64>>,
    inv0: Arc<dyn Fft<f64>>,
    inv1: Arc<dyn Fft<f64>>,
    scratch_len: usize,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("n0", &self.n0).field("n1", &self.n1).finish()
    }
}

impl Fft2 {
    pub fn new(n0: usize, n1: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd0 = planner.plan_fft_forward(n0);
        let fwd1 = planner.plan_fft_forward(n1);
        let inv0 = planner.plan_fft_inverse(n0);
        let inv1 = planner.plan_fft_inverse(n1);
        let scratch_len = [&fwd0, &fwd1, &inv0, &inv1]
            .iter()
            .map(|p| p.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        Self {
            n0,
            n1,
            fwd0,
            fwd1,
            inv0,
            inv1,
            scratch_len,
        }
    }

    pub fn len(&self) -> usize {
        self.n0 * self.n1
    }

    pub fn make_buffers(&self) -> Buffers {
        Buffers {
            tmp: vec![Complex64::default(); self.len()],
            scratch: vec![Complex64::default(); self.scratch_len],
        }
    }

    /// Spatial `[n0][n1]` in `data` to spectrum `[k1][k0]`, left in `data`.
    /// Unnormalised.
    pub fn forward(&self, data: &mut [Complex64], buf: &mut Buffers) {
        self.fwd1.process_with_scratch(data, &mut buf.scratch);
        transpose(data, &mut buf.tmp, self.n0, self.n1);
        self.fwd0.process_with_scratch(&mut buf.tmp, &mut buf.scratch);
        data.copy_from_slice(&buf.tmp);
    }

    /// Spectrum `[k1][k0]` in `data` to spatial `[n0][n1]`, left in `data`.
    /// Unnormalised.
    pub fn inverse(&self, data: &mut [Complex64], buf: &mut Buffers) {
        self.inv0.process_with_scratch(data, &mut buf.scratch);
        transpose(data, &mut buf.tmp, self.n1, self.n0);
        self.inv1.process_with_scratch(&mut buf.tmp, &mut buf.scratch);
        data.copy_from_slice(&buf.tmp);
    }

    /// Like [`Fft2::inverse`] but only the spatial rows in `rows` are formed,
    /// packed into `out` as `rows.len() x n1`. `data` is clobbered.
    pub fn inverse_rows(&self, data: &mut [Complex64], rows: &[usize], out: &mut [Complex64], buf: &mut Buffers) {
        self.inv0.process_with_scratch(data, &mut buf.scratch);
        for (r, &a) in rows.iter().enumerate() {
            let dst = &mut out[r * self.n1..(r + 1) * self.n1];
            for (k1, v) in dst.iter_mut().enumerate() {
                *v = data[k1 * self.n0 + a];
            }
        }
        self.inv1.process_with_scratch(out, &mut buf.scratch);
    }

    /// Like [`Fft2::forward`] for an input that is zero outside `rows`; those
    /// rows arrive packed in `input` (clobbered) and the spectrum lands in `out`.
    pub fn forward_rows(&self, input: &mut [Complex64], rows: &[usize], out: &mut [Complex64], buf: &mut Buffers) {
        self.fwd1.process_with_scratch(input, &mut buf.scratch);
        out.fill(Complex64::default());
        for (r, &a) in rows.iter().enumerate() {
            let src = &input[r * self.n1..(r + 1) * self.n1];
            for (k1, v) in src.iter().enumerate() {
                out[k1 * self.n0 + a] = *v;
            }
        }
        self.fwd0.process_with_scratch(out, &mut buf.scratch);
    }
}

pub(crate) struct Buffers {
    tmp: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

/// `src` is `rows x cols` row-major; `dst` becomes `cols x rows`.
fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    const B: usize = 16;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Signed discrete frequency index for bin `m` of an `n`-point transform.
pub(crate) fn signed_index(m: usize, n: usize) -> f64 {
    if m < n / 2 {
        m as f64
    } else {
        m as f64 - n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_direct_dft() {
        let (n0, n1) = (6, 4);
        let x: Vec<Complex64> = (0..n0 * n1)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let plan = Fft2::new(n0, n1);
        let mut buf = plan.make_buffers();
        let mut spec = x.clone();
        plan.forward(&mut spec, &mut buf);
        for k0 in 0..n0 {
            for k1 in 0..n1 {
                let mut acc = Complex64::default();
                for i in 0..n0 {
                    for j in 0..n1 {
                        let ph = -2.0 * std::f64::consts::PI
                            * (k0 as f64 * i as f64 / n0 as f64 + k1 as f64 * j as f64 / n1 as f64);
                        acc += x[i * n1 + j] * Complex64::from_polar(1.0, ph);
                    }
                }
                assert!((acc - spec[k1 * n0 + k0]).norm() < 1e-12);
            }
        }
        plan.inverse(&mut spec, &mut buf);
        for (a, b) in spec.iter().zip(&x) {
            assert!((a / (n0 * n1) as f64 - b).norm() < 1e-14);
        }
    }

    #[test]
    fn signed_indices() {
        let idx: Vec<f64> = (0..6).map(|m| signed_index(m, 6)).collect();
        assert_eq!(idx, vec![0.0, 1.0, 2.0, -3.0, -2.0, -1.0]);
    }
}
