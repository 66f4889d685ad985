#![allow(dead_code)]

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use pat_recon::dipnet::{unet_init, Head, NetworkParams, UNetConfig};
use pat_recon::{make_ring, ForwardOperator, Grid, Image, TimeAxis, TimeSeries};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_image(shape: (usize, usize), seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
}

pub fn random_series(shape: (usize, usize), seed: u64) -> TimeSeries {
    random_image(shape, seed)
}

pub fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// 8×8 grid, 4 detectors on a full circle.
pub fn tiny_operator() -> ForwardOperator {
    let grid = Grid::square(8, 1e-4, 1500.0).unwrap();
    let ring = make_ring(3.0e-4, 4, 360.0, 0.0).unwrap();
    let time = TimeAxis::for_ring(&grid, ring.radius).unwrap();
    ForwardOperator::new(grid, ring, time).unwrap()
}

pub fn tiny_net(head: Head) -> UNetConfig {
    UNetConfig {
        channels: vec![2, 4],
        head,
        norm_eps: 1e-5,
        init_seed: 11,
    }
}

/// Smooth non-negative network input.
pub fn smooth_input(n: usize) -> Image {
    Array2::from_shape_fn((n, n), |(i, j)| {
        let (x, y) = (i as f64 / n as f64, j as f64 / n as f64);
        0.5 + 0.3 * (6.0 * x).sin() * (4.0 * y + 0.3).cos() + 0.1 * x
    })
}

/// Per-entry relative error, with entries below `floor · max|analytic|`
/// compared against that floor instead of their own size.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> (f64, usize) {
    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs())) * floor;
    let mut worst = (0.0, 0);
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let denom = a.abs().max(n.abs()).max(scale);
        let e = if denom == 0.0 { 0.0 } else { (a - n).abs() / denom };
        if e > worst.0 {
            worst = (e, i);
        }
    }
    worst
}

/// Central differences of `f` over every coordinate of `x`.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut buf = x.to_vec();
    (0..x.len())
        .map(|i| {
            buf[i] = x[i] + h;
            let fp = f(&buf);
            buf[i] = x[i] - h;
            let fm = f(&buf);
            buf[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Freshly initialised parameters moved off the zero biases/shifts, so that
/// no activation sits exactly on a ReLU kink.
pub fn generic_params(cfg: &UNetConfig, shape: (usize, usize), seed: u64) -> NetworkParams {
    let mut p = unet_init(cfg, shape).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in &mut p.values {
        *v += rng.random_range(-0.05..0.05);
    }
    p
}

/// Bitwise equality of two run records (NaN entries compare equal to NaN).
pub fn same_record(a: &pat_recon::pdhg::RunRecord, b: &pat_recon::pdhg::RunRecord) -> bool {
    let bits = |v: &Vec<f64>| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    bits(&a.objective) == bits(&b.objective)
        && bits(&a.rel_change) == bits(&b.rel_change)
        && bits(&a.psnr) == bits(&b.psnr)
        && bits(&a.ssim) == bits(&b.ssim)
        && bits(&a.ergodic_objective) == bits(&b.ergodic_objective)
        && (a.iterations_run, a.converged, a.selected) == (b.iterations_run, b.converged, b.selected)
}

fn signed(m: usize, n: usize) -> f64 {
    if m <= n / 2 {
        m as f64
    } else {
        m as f64 - n as f64
    }
}

/// `p(x_s, t_j)` by explicit double sums over the padded domain, then
/// bilinear weights located from the detector coordinates.
pub fn dft_oracle(f: &Image, grid: &Grid, angles: &[f64], active: &[bool], radius: f64, time: &TimeAxis) -> Array2<f64> {
    let (n0, n1) = grid.padded_shape();
    let (o0, o1) = ((n0 - grid.nx) / 2, (n1 - grid.ny) / 2);
    let mut spec = vec![Complex64::new(0.0, 0.0); n0 * n1];
    for k0 in 0..n0 {
        for k1 in 0..n1 {
            let mut acc = Complex64::new(0.0, 0.0);
            for ((i, j), &v) in f.indexed_iter() {
                let (a, b) = ((i + o0) as f64, (j + o1) as f64);
                let ph = -2.0 * PI * (k0 as f64 * a / n0 as f64 + k1 as f64 * b / n1 as f64);
                acc += v * Complex64::from_polar(1.0, ph);
            }
            spec[k0 * n1 + k1] = acc;
        }
    }
    let node = |a: usize, b: usize, t: f64| -> f64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for k0 in 0..n0 {
            for k1 in 0..n1 {
                let kx = 2.0 * PI * signed(k0, n0) / (n0 as f64 * grid.dx);
                let ky = 2.0 * PI * signed(k1, n1) / (n1 as f64 * grid.dx);
                let w = grid.c * (kx * kx + ky * ky).sqrt();
                let ph = 2.0 * PI * (k0 as f64 * a as f64 / n0 as f64 + k1 as f64 * b as f64 / n1 as f64);
                acc += spec[k0 * n1 + k1] * (w * t).cos() * Complex64::from_polar(1.0, ph);
            }
        }
        acc.re / (n0 * n1) as f64
    };
    let mut out = Array2::zeros((angles.len(), time.n_t));
    for (s, &th) in angles.iter().enumerate() {
        if !active[s] {
            continue;
        }
        // padded node a sits at x = (a - (n0 - 1) / 2) dx
        let u = radius * th.cos() / grid.dx + (n0 as f64 - 1.0) / 2.0;
        let v = radius * th.sin() / grid.dx + (n1 as f64 - 1.0) / 2.0;
        let (a, b) = (u.floor() as usize, v.floor() as usize);
        let (fu, fv) = (u - a as f64, v - b as f64);
        for j in 0..time.n_t {
            let t = time.time(j);
            out[[s, j]] = (1.0 - fu) * (1.0 - fv) * node(a, b, t)
                + fu * (1.0 - fv) * node(a + 1, b, t)
                + (1.0 - fu) * fv * node(a, b + 1, t)
                + fu * fv * node(a + 1, b + 1, t);
        }
    }
    out
}
