//! Spectral forward operator for the constant-speed wave equation and its
//! exact discrete adjoint.
//!
//! The initial pressure is zero-padded into a periodic domain where
//! `p(t) = F⁻¹[cos(c|k|t) F[f]]` solves `p_tt = c² Δp`, `p(0) = f`,
//! `p_t(0) = 0` exactly. Detector traces are bilinear samples of `p(t_j)`.
//! Two real time samples share one complex transform in both directions.

use std::sync::OnceLock;

use ndarray::{s, Array2, ArrayView2, Zip};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{shape_err, Error, Result};
use crate::fft2::{signed_index, Fft2};
use crate::geometry::{detector_positions, DetectorRing, Grid, TimeAxis};
use crate::variational;

/// Initial pressure and reconstructions, shape `(nx, ny)`.
pub type Image = Array2<f64>;

/// Detector traces, shape `(n_total, n_t)`. Rows of inactive elements are zero.
pub type TimeSeries = Array2<f64>;

/// Largest multiplier table (entries) kept in memory; above this the cosines
/// are evaluated on the fly.
const MULTIPLIER_TABLE_LIMIT: usize = 1 << 24;

/// Time-sample pairs per reduction chunk in the adjoint. Fixed so the
/// summation order does not depend on the thread count.
const ADJOINT_CHUNK_PAIRS: usize = 16;

const POWER_SEED: u64 = 0x5_EED0_FA11;
const POWER_TOL: f64 = 1e-6;
const POWER_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy)]
struct Stencil {
    idx: [usize; 4],
    /// Same nodes indexed into the packed detector rows.
    packed: [usize; 4],
    w: [f64; 4],
}

/// The forward map `A`: initial pressure to detector time series.
#[derive(Debug)]
pub struct ForwardOperator {
    grid: Grid,
    ring: DetectorRing,
    time: TimeAxis,
    fft: Fft2,
    padded: (usize, usize),
    offset: (usize, usize),
    omega: Vec<f64>,
    /// Padded rows touched by any active stencil, ascending.
    rows: Vec<usize>,
    table: Option<Vec<f64>>,
    stencils: Vec<Option<Stencil>>,
    norm_sq: OnceLock<f64>,
}

impl ForwardOperator {
    pub fn new(grid: Grid, ring: DetectorRing, time: TimeAxis) -> Result<Self> {
        let reach = grid.c * time.total_time();
        if reach > grid.max_propagation_distance() * (1.0 + 1e-12) {
            return Err(Error::Geometry(format!(
                "c*T = {reach:.4e} m exceeds the wraparound-free distance {:.4e} m of the padded domain; \
                 raise pad_factor or shorten the time axis",
                grid.max_propagation_distance()
            )));
        }
        let positions = detector_positions(&ring, &grid)?;
        let (n0, n1) = grid.padded_shape();
        let offset = ((n0 - grid.nx) / 2, (n1 - grid.ny) / 2);

        let two_pi = 2.0 * std::f64::consts::PI;
        let kx: Vec<f64> = (0..n0)
            .map(|m| two_pi * signed_index(m, n0) / (n0 as f64 * grid.dx))
            .collect();
        let ky: Vec<f64> = (0..n1)
            .map(|m| two_pi * signed_index(m, n1) / (n1 as f64 * grid.dx))
            .collect();
        let mut omega = vec![0.0; n0 * n1];
        for k1 in 0..n1 {
            for k0 in 0..n0 {
                omega[k1 * n0 + k0] = grid.c * (kx[k0] * kx[k0] + ky[k1] * ky[k1]).sqrt();
            }
        }

        let table = (time.n_t * n0 * n1 <= MULTIPLIER_TABLE_LIMIT).then(|| {
            let mut t = vec![0.0; time.n_t * n0 * n1];
            t.par_chunks_mut(n0 * n1).enumerate().for_each(|(j, row)| {
                let tj = time.time(j);
                for (m, &w) in row.iter_mut().zip(&omega) {
                    *m = (w * tj).cos();
                }
            });
            t
        });

        let mut stencils: Vec<Option<Stencil>> = positions
            .iter()
            .zip(&ring.active)
            .map(|(&(x, y), &on)| on.then(|| bilinear(x, y, grid.dx, n0, n1)))
            .collect();
        let mut rows: Vec<usize> = stencils.iter().flatten().flat_map(|st| st.idx.map(|i| i / n1)).collect();
        rows.sort_unstable();
        rows.dedup();
        for st in stencils.iter_mut().flatten() {
            st.packed = st.idx.map(|i| rows.binary_search(&(i / n1)).unwrap() * n1 + i % n1);
        }

        Ok(Self {
            grid,
            ring,
            time,
            fft: Fft2::new(n0, n1),
            padded: (n0, n1),
            offset,
            omega,
            rows,
            table,
            stencils,
            norm_sq: OnceLock::new(),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn ring(&self) -> &DetectorRing {
        &self.ring
    }

    pub fn time_axis(&self) -> &TimeAxis {
        &self.time
    }

    pub fn image_shape(&self) -> (usize, usize) {
        self.grid.shape()
    }

    pub fn data_shape(&self) -> (usize, usize) {
        (self.ring.n_total, self.time.n_t)
    }

    /// Same operator restricted to a different active mask on the same ring.
    pub fn with_ring(&self, ring: DetectorRing) -> Result<Self> {
        if !ring.same_mounting(&self.ring) {
            return Err(Error::Geometry("replacement ring has a different mounting".into()));
        }
        Self::new(self.grid, ring, self.time)
    }

    /// Interpolation weights of detector `s` as `(padded linear index, weight)`,
    /// or `None` for inactive elements.
    pub fn stencil(&self, s: usize) -> Option<[(usize, f64); 4]> {
        self.stencils[s].map(|st| std::array::from_fn(|q| (st.idx[q], st.w[q])))
    }

    fn multiplier(&self, j: usize, s: usize) -> f64 {
        match &self.table {
            Some(t) => t[j * self.omega.len() + s],
            None => (self.omega[s] * self.time.time(j)).cos(),
        }
    }

    /// Multiplier values for time index `j` (or zeros past the end), borrowed
    /// from the table when there is one and computed into `tmp` otherwise.
    fn multipliers<'a>(&'a self, j: usize, tmp: &'a mut [f64]) -> &'a [f64] {
        let n = self.omega.len();
        if j >= self.time.n_t {
            tmp.fill(0.0);
            return tmp;
        }
        match &self.table {
            Some(t) => &t[j * n..(j + 1) * n],
            None => {
                let tj = self.time.time(j);
                for (m, &w) in tmp.iter_mut().zip(&self.omega) {
                    *m = (w * tj).cos();
                }
                tmp
            }
        }
    }

    fn check_image(&self, f: &ArrayView2<f64>) -> Result<()> {
        if f.dim() != self.image_shape() {
            return Err(shape_err("image", self.image_shape(), f.dim()));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("image contains non-finite values".into()));
        }
        Ok(())
    }

    fn check_data(&self, g: &ArrayView2<f64>) -> Result<()> {
        if g.dim() != self.data_shape() {
            return Err(shape_err("time series", self.data_shape(), g.dim()));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("time series contains non-finite values".into()));
        }
        Ok(())
    }

    fn pad_spectrum(&self, f: &ArrayView2<f64>) -> Vec<Complex64> {
        let (n0, n1) = self.padded;
        let mut buf = vec![Complex64::default(); n0 * n1];
        for ((i, j), &v) in f.indexed_iter() {
            buf[(i + self.offset.0) * n1 + j + self.offset.1] = Complex64::new(v, 0.0);
        }
        let mut scratch = self.fft.make_buffers();
        self.fft.forward(&mut buf, &mut scratch);
        buf
    }

    /// Field on the padded domain at time sample `j`.
    pub fn propagate(&self, f: &Image, j: usize) -> Result<Image> {
        self.check_image(&f.view())?;
        if j >= self.time.n_t {
            return Err(Error::Parameter(format!(
                "time index {j} out of range 0..{}",
                self.time.n_t
            )));
        }
        let (n0, n1) = self.padded;
        let mut buf = self.pad_spectrum(&f.view());
        let scale = 1.0 / (n0 * n1) as f64;
        for (s, v) in buf.iter_mut().enumerate() {
            *v *= self.multiplier(j, s) * scale;
        }
        let mut scratch = self.fft.make_buffers();
        self.fft.inverse(&mut buf, &mut scratch);
        Ok(Array2::from_shape_fn((n0, n1), |(i, k)| buf[i * n1 + k].re))
    }

    /// Embeds `f` into the padded domain without propagation.
    pub fn pad(&self, f: &Image) -> Image {
        let mut out = Array2::zeros(self.padded);
        out.slice_mut(s![
            self.offset.0..self.offset.0 + self.grid.nx,
            self.offset.1..self.offset.1 + self.grid.ny
        ])
        .assign(f);
        out
    }

    /// `g = A f`.
    pub fn forward(&self, f: &Image) -> Result<TimeSeries> {
        self.check_image(&f.view())?;
        let (n_det, n_t) = self.data_shape();
        let mut out = Array2::zeros((n_det, n_t));
        if self.stencils.iter().all(Option::is_none) {
            return Ok(out);
        }
        let spec = self.pad_spectrum(&f.view());
        let n = spec.len();
        let packed_len = self.rows.len() * self.padded.1;
        let scale = 1.0 / n as f64;
        let pairs: Vec<usize> = (0..n_t).step_by(2).collect();
        let columns: Vec<(Vec<f64>, Vec<f64>)> = pairs
            .par_iter()
            .map_init(
                || {
                    let z = Complex64::default();
                    (vec![z; n], vec![z; packed_len], vec![0.0; n], vec![0.0; n], self.fft.make_buffers())
                },
                |(buf, packed, t0, t1, scratch), &j| {
                    let m0 = self.multipliers(j, t0);
                    let m1 = self.multipliers(j + 1, t1);
                    for s in 0..n {
                        buf[s] = spec[s] * Complex64::new(m0[s] * scale, m1[s] * scale);
                    }
                    self.fft.inverse_rows(buf, &self.rows, packed, scratch);
                    let mut a = vec![0.0; n_det];
                    let mut b = vec![0.0; n_det];
                    for (d, st) in self.stencils.iter().enumerate() {
                        if let Some(st) = st {
                            let mut v = Complex64::default();
                            for q in 0..4 {
                                v += packed[st.packed[q]] * st.w[q];
                            }
                            a[d] = v.re;
                            b[d] = v.im;
                        }
                    }
                    (a, b)
                },
            )
            .collect();
        for (&j, (a, b)) in pairs.iter().zip(columns) {
            out.column_mut(j).assign(&ndarray::ArrayView1::from(&a));
            if j + 1 < n_t {
                out.column_mut(j + 1).assign(&ndarray::ArrayView1::from(&b));
            }
        }
        Ok(out)
    }

    /// `f = A* g`, the exact transpose of [`ForwardOperator::forward`].
    /// Rows of inactive detectors are ignored.
    pub fn adjoint(&self, g: &TimeSeries) -> Result<Image> {
        self.check_data(&g.view())?;
        let (n0, n1) = self.padded;
        let n = n0 * n1;
        if self.stencils.iter().all(Option::is_none) {
            return Ok(Array2::zeros(self.image_shape()));
        }
        let n_t = self.time.n_t;
        let pairs: Vec<usize> = (0..n_t).step_by(2).collect();
        let partials: Vec<Vec<Complex64>> = pairs
            .par_chunks(ADJOINT_CHUNK_PAIRS)
            .map_init(
                || {
                    let z = Complex64::default();
                    (vec![z; n], vec![z; self.rows.len() * n1], vec![0.0; n], vec![0.0; n], self.fft.make_buffers())
                },
                |(buf, packed, t0, t1, scratch), chunk| {
                let mut acc = vec![Complex64::default(); n];
                for &j in chunk {
                    packed.fill(Complex64::default());
                    for (d, st) in self.stencils.iter().enumerate() {
                        if let Some(st) = st {
                            let a = g[[d, j]];
                            let b = if j + 1 < n_t { g[[d, j + 1]] } else { 0.0 };
                            let v = Complex64::new(a, b);
                            for q in 0..4 {
                                packed[st.packed[q]] += v * st.w[q];
                            }
                        }
                    }
                    self.fft.forward_rows(packed, &self.rows, buf, scratch);
                    let m0 = self.multipliers(j, t0);
                    let m1 = self.multipliers(j + 1, t1);
                    // the multipliers are even in k, so the real part of the
                    // final inverse transform separates the two samples
                    for s in 0..n {
                        acc[s] += buf[s] * Complex64::new(m0[s], -m1[s]);
                    }
                }
                acc
            })
            .collect();
        let mut total = vec![Complex64::default(); n];
        for p in &partials {
            for (t, v) in total.iter_mut().zip(p) {
                *t += v;
            }
        }
        let mut scratch = self.fft.make_buffers();
        self.fft.inverse(&mut total, &mut scratch);
        let scale = 1.0 / n as f64;
        Ok(Array2::from_shape_fn(self.image_shape(), |(i, j)| {
            total[(i + self.offset.0) * n1 + j + self.offset.1].re * scale
        }))
    }

    /// Cached `‖A‖²` from power iteration.
    pub fn norm_squared(&self) -> f64 {
        *self.norm_sq.get_or_init(|| {
            let est = operator_norm(self, false);
            est.value * est.value
        })
    }
}

fn bilinear(x: f64, y: f64, dx: f64, n0: usize, n1: usize) -> Stencil {
    let u = x / dx + (n0 as f64 - 1.0) / 2.0;
    let v = y / dx + (n1 as f64 - 1.0) / 2.0;
    let (i0, j0) = (u.floor(), v.floor());
    let (fx, fy) = (u - i0, v - j0);
    let (i0, j0) = (i0 as usize, j0 as usize);
    let at = |i: usize, j: usize| i * n1 + j;
    Stencil {
        idx: [at(i0, j0), at(i0 + 1, j0), at(i0, j0 + 1), at(i0 + 1, j0 + 1)],
        packed: [0; 4],
        w: [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ],
    }
}

/// Initializer used to seed the network input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InverseMode {
    /// `A* g / ‖A‖²`.
    #[default]
    NormalizedAdjoint,
    /// Re-emits time-gained boundary data through the propagator and rescales
    /// to the least-squares optimal amplitude.
    TimeReversal,
}

/// Fast approximate inverse `z ≈ A⁻¹ g`.
pub fn approximate_inverse(g: &TimeSeries, op: &ForwardOperator, mode: InverseMode) -> Result<Image> {
    match mode {
        InverseMode::NormalizedAdjoint => {
            let back = op.adjoint(g)?;
            if back.iter().all(|&v| v == 0.0) {
                return Ok(back);
            }
            Ok(back / op.norm_squared())
        }
        InverseMode::TimeReversal => {
            let time = *op.time_axis();
            let mut gained = g.clone();
            for (j, mut col) in gained.columns_mut().into_iter().enumerate() {
                col *= time.time(j) / time.total_time();
            }
            let back = op.adjoint(&gained)?;
            let proj = op.forward(&back)?;
            let denom = proj.iter().map(|v| v * v).sum::<f64>();
            if denom == 0.0 {
                return Ok(Array2::zeros(op.image_shape()));
            }
            let num = Zip::from(&proj).and(g).fold(0.0, |acc, a, b| acc + a * b);
            Ok(back * (num / denom))
        }
    }
}

/// Generates data on a finer grid for reconstruction on a coarser one.
pub fn simulate_data(
    f_fine: &Image,
    fine_op: &ForwardOperator,
    coarse_op: &ForwardOperator,
) -> Result<TimeSeries> {
    let fg = fine_op.grid();
    let cg = coarse_op.grid();
    let ratio = fg.nx / cg.nx;
    if ratio < 2 || fg.nx != ratio * cg.nx || fg.ny != ratio * cg.ny {
        return Err(Error::Geometry(format!(
            "fine grid {}x{} is not an integer multiple (>= 2) of {}x{}",
            fg.nx, fg.ny, cg.nx, cg.ny
        )));
    }
    let (ef, ec) = (fg.extent(), cg.extent());
    if (ef.0 - ec.0).abs() > 1e-12 * ec.0 || (ef.1 - ec.1).abs() > 1e-12 * ec.1 || fg.c != cg.c {
        return Err(Error::Geometry("fine and coarse grids cover different media".into()));
    }
    if fine_op.ring() != coarse_op.ring() {
        return Err(Error::Geometry("fine and coarse operators use different rings".into()));
    }
    if fine_op.time_axis() != coarse_op.time_axis() {
        return Err(Error::Geometry("fine and coarse operators use different time axes".into()));
    }
    fine_op.forward(f_fine)
}

/// Power-iteration result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimate {
    /// Estimated operator norm (square root of the top Gram eigenvalue).
    pub value: f64,
    pub iterations: usize,
    /// `false` when the iteration cap was hit first.
    pub converged: bool,
}

/// Power iteration on a symmetric positive semi-definite Gram map acting on
/// images of shape `shape`.
pub fn power_norm<F>(shape: (usize, usize), mut gram: F) -> NormEstimate
where
    F: FnMut(&Image) -> Image,
{
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    let mut v: Image = Array2::from_shape_simple_fn(shape, || StandardNormal.sample(&mut rng));
    let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v /= nrm;
    let mut lambda = 0.0;
    for it in 1..=POWER_MAX_ITER {
        let w = gram(&v);
        let next = Zip::from(&v).and(&w).fold(0.0, |acc, a, b| acc + a * b);
        let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if wn == 0.0 {
            return NormEstimate {
                value: 0.0,
                iterations: it,
                converged: true,
            };
        }
        v = w / wn;
        let change = (next - lambda).abs() / next.abs();
        lambda = next;
        if change <= POWER_TOL {
            return NormEstimate {
                value: lambda.max(0.0).sqrt(),
                iterations: it,
                converged: true,
            };
        }
    }
    NormEstimate {
        value: lambda.max(0.0).sqrt(),
        iterations: POWER_MAX_ITER,
        converged: false,
    }
}

/// `‖A‖`, or `‖K‖` for the stacked operator `K = [A; ∇]` when `composite`.
pub fn operator_norm(op: &ForwardOperator, composite: bool) -> NormEstimate {
    power_norm(op.image_shape(), |v| {
        let ata = op
            .adjoint(&op.forward(v).expect("power iterate matches operator shape"))
            .expect("forward output matches adjoint input");
        if composite {
            ata + variational::neg_div(&variational::grad(v))
        } else {
            ata
        }
    })
}
