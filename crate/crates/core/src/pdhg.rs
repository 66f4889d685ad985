//! Chambolle–Pock primal-dual solver for
//!
//! ```text
//! min_f ½‖A f − g‖² + α TV(f) + G(f)
//! ```
//!
//! with `G` either the non-negativity indicator or a quadratic penalty on the
//! mean intensity. The stacked operator is `K = [A; ∇]`; the data and TV
//! terms each get their own dual variable.

use ndarray::{Array2, Zip};

use crate::error::{shape_err, Error, Result};
use crate::iqa::Reference;
use crate::variational::{
    grad, neg_div, project_dual_ball_inplace, prox_l2_dual_inplace, prox_primal_inplace, tv,
    PrimalVariant, VectorField,
};
use crate::waveop::{operator_norm, ForwardOperator, Image, TimeSeries};

/// Safety factor applied to the power-iteration estimate of `‖K‖`.
pub const NORM_SAFETY: f64 = 1.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdhgConfig {
    /// TV weight α.
    pub alpha: f64,
    pub max_iter: usize,
    /// Stop once `‖f_k − f_{k−1}‖ / ‖f_k‖ ≤ tol`.
    pub tol: f64,
    /// τ/σ balance: `τ = step_ratio / L`, `σ = 1 / (step_ratio L)`.
    pub step_ratio: f64,
    pub variant: PrimalVariant,
    /// Score against the reference every this many iterations (0 disables).
    pub record_metrics_every: usize,
}

impl Default for PdhgConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            max_iter: 1000,
            tol: 1e-4,
            step_ratio: 1.0,
            variant: PrimalVariant::NonNegative,
            record_metrics_every: 1,
        }
    }
}

impl PdhgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Parameter(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Parameter(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Parameter("max_iter must be at least 1".into()));
        }
        if !(self.step_ratio > 0.0 && self.step_ratio.is_finite()) {
            return Err(Error::Parameter(format!(
                "step_ratio must be > 0, got {}",
                self.step_ratio
            )));
        }
        self.variant.validate()
    }
}

/// Per-iteration history of an iterative reconstruction.
///
/// Entry `k` describes iterate `k + 1`. `psnr`/`ssim` are empty without a
/// reference and hold NaN at iterations that were not scored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunRecord {
    pub objective: Vec<f64>,
    pub rel_change: Vec<f64>,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    /// Objective of the running average of the iterates (primal-dual only).
    pub ergodic_objective: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
    /// History index of the returned iterate.
    pub selected: Option<usize>,
}

impl RunRecord {
    pub fn has_metrics(&self) -> bool {
        !self.psnr.is_empty()
    }
}

fn sq_norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

fn data_misfit(af: &TimeSeries, g: &TimeSeries) -> f64 {
    0.5 * Zip::from(af).and(g).fold(0.0, |acc, a, b| acc + (a - b) * (a - b))
}

/// `½‖A f − g‖² + α TV(f)`.
pub fn objective(f: &Image, g: &TimeSeries, op: &ForwardOperator, alpha: f64) -> Result<f64> {
    let af = op.forward(f)?;
    if g.dim() != af.dim() {
        return Err(shape_err("data", af.dim(), g.dim()));
    }
    Ok(data_misfit(&af, g) + alpha * tv(f))
}

/// Step sizes `(τ, σ)` and the inflated norm `L` used by [`solve`].
pub fn step_sizes(op: &ForwardOperator, step_ratio: f64) -> (f64, f64, f64) {
    let l = operator_norm(op, true).value * NORM_SAFETY;
    (step_ratio / l, 1.0 / (step_ratio * l), l)
}

/// Runs the primal-dual iteration from `f = 0` with zero duals.
///
/// Hitting `max_iter` is reported through `converged = false`, not as an error.
pub fn solve(
    g: &TimeSeries,
    op: &ForwardOperator,
    config: &PdhgConfig,
    reference: Option<&Reference>,
) -> Result<(Image, RunRecord)> {
    config.validate()?;
    if g.dim() != op.data_shape() {
        return Err(shape_err("data", op.data_shape(), g.dim()));
    }
    if let Some(r) = reference {
        if r.image.dim() != op.image_shape() {
            return Err(shape_err("reference", op.image_shape(), r.image.dim()));
        }
    }
    let (tau, sigma, _) = step_sizes(op, config.step_ratio);
    let shape = op.image_shape();
    let alpha = config.alpha;
    let variant = config.variant;

    let mut f: Image = Array2::zeros(shape);
    let mut af: TimeSeries = Array2::zeros(g.dim());
    let mut af_prev: TimeSeries = Array2::zeros(g.dim());
    let mut f_bar: Image = Array2::zeros(shape);
    let mut y_data: TimeSeries = Array2::zeros(g.dim());
    let mut y_tv = VectorField::zeros(shape);
    let mut f_sum: Image = Array2::zeros(shape);
    let mut af_sum: TimeSeries = Array2::zeros(g.dim());

    let mut rec = RunRecord::default();
    for k in 1..=config.max_iter {
        // A f̄ = 2 A f_k − A f_{k−1} by linearity
        Zip::from(&mut y_data)
            .and(&af)
            .and(&af_prev)
            .for_each(|y, &a, &b| *y += sigma * (2.0 * a - b));
        prox_l2_dual_inplace(&mut y_data, sigma, g);
        y_tv.scaled_add(sigma, &grad(&f_bar));
        project_dual_ball_inplace(&mut y_tv, alpha);

        let kt_y = op.adjoint(&y_data)? + neg_div(&y_tv);
        let mut f_new = &f - &(kt_y * tau);
        prox_primal_inplace(&mut f_new, tau, variant);
        let af_new = op.forward(&f_new)?;

        let diff = sq_norm(&(&f_new - &f)).sqrt();
        let nrm = sq_norm(&f_new).sqrt();
        let rel = if nrm > 0.0 {
            diff / nrm
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };

        Zip::from(&mut f_bar)
            .and(&f_new)
            .and(&f)
            .for_each(|b, &n, &o| *b = 2.0 * n - o);
        f = f_new;
        af_prev = std::mem::replace(&mut af, af_new);

        f_sum += &f;
        af_sum += &af;
        let inv_k = 1.0 / k as f64;
        let f_avg = &f_sum * inv_k;
        let af_avg = &af_sum * inv_k;
        rec.ergodic_objective
            .push(data_misfit(&af_avg, g) + alpha * tv(&f_avg) + variant.penalty(&f_avg));
        rec.objective
            .push(data_misfit(&af, g) + alpha * tv(&f) + variant.penalty(&f));
        rec.rel_change.push(rel);
        if let Some(r) = reference {
            let every = config.record_metrics_every;
            let stop = rel <= config.tol || k == config.max_iter;
            if every > 0 && (k % every == 0 || stop) {
                let (p, s) = r.psnr_ssim(&f)?;
                rec.psnr.push(p);
                rec.ssim.push(s);
            } else {
                rec.psnr.push(f64::NAN);
                rec.ssim.push(f64::NAN);
            }
        }
        rec.iterations_run = k;
        if !rec.objective[k - 1].is_finite() {
            return Err(Error::Numerical(format!("objective diverged at iteration {k}")));
        }
        if rel <= config.tol {
            rec.converged = true;
            break;
        }
    }
    rec.selected = Some(rec.iterations_run - 1);
    Ok((f, rec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_ring, Grid, TimeAxis};

    fn op16() -> ForwardOperator {
        let grid = Grid::square(16, 1e-4, 1500.0).unwrap();
        let ring = make_ring(0.4 * 16.0 * 1e-4, 16, 270.0, 270.0).unwrap();
        let time = TimeAxis::for_ring(&grid, ring.radius).unwrap();
        ForwardOperator::new(grid, ring, time).unwrap()
    }

    fn blob(n: usize) -> Image {
        let c = (n as f64 - 1.0) / 2.0;
        Array2::from_shape_fn((n, n), |(i, j)| {
            let r = (i as f64 - c - 1.0).hypot(j as f64 - c + 0.5);
            if r < n as f64 / 5.0 {
                1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn objective_trivial_cases() {
        let op = op16();
        let zero_f = Array2::zeros((16, 16));
        let zero_g = Array2::zeros(op.data_shape());
        assert_eq!(objective(&zero_f, &zero_g, &op, 0.3).unwrap(), 0.0);
        let blind = op.with_ring(op.ring().deactivated()).unwrap();
        let g = Array2::from_elem(op.data_shape(), 0.5);
        let f = Array2::from_elem((16, 16), 2.0);
        let expected = 0.5 * sq_norm(&g);
        assert!((objective(&f, &g, &blind, 1.0).unwrap() - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn objective_double_entry() {
        let op = op16();
        let f = blob(16) * 0.7 + 0.1;
        let g = op.forward(&blob(16)).unwrap();
        let af = op.forward(&f).unwrap();
        let misfit: f64 = af.iter().zip(g.iter()).map(|(a, b)| 0.5 * (a - b).powi(2)).sum();
        // TV from an explicit per-pixel loop
        let mut t = 0.0;
        for i in 0..16 {
            for j in 0..16 {
                let dx = if i + 1 < 16 { f[[i + 1, j]] - f[[i, j]] } else { 0.0 };
                let dy = if j + 1 < 16 { f[[i, j + 1]] - f[[i, j]] } else { 0.0 };
                t += (dx * dx + dy * dy).sqrt();
            }
        }
        let expected = misfit + 0.25 * t;
        let got = objective(&f, &g, &op, 0.25).unwrap();
        assert!((got - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn config_validation() {
        let mut c = PdhgConfig::default();
        assert!(c.validate().is_ok());
        c.alpha = -1.0;
        assert!(c.validate().is_err());
        c = PdhgConfig { tol: 0.0, ..Default::default() };
        assert!(c.validate().is_err());
        c = PdhgConfig { max_iter: 0, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn step_condition_holds() {
        let op = op16();
        let (tau, sigma, l) = step_sizes(&op, 2.0);
        assert!(tau * sigma * l * l <= 1.0);
        let raw = operator_norm(&op, true).value;
        assert!((l / raw - NORM_SAFETY).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let op = op16();
        let g = Array2::zeros((3, 3));
        assert!(solve(&g, &op, &PdhgConfig::default(), None).is_err());
    }

    #[test]
    fn small_problem_decreases_objective() {
        let op = op16();
        let truth = blob(16);
        let g = op.forward(&truth).unwrap();
        let cfg = PdhgConfig {
            alpha: 1e-3,
            max_iter: 300,
            ..Default::default()
        };
        let (f, rec) = solve(&g, &op, &cfg, None).unwrap();
        assert_eq!(rec.objective.len(), rec.iterations_run);
        assert!(f.iter().all(|&v| v >= 0.0));
        let zero = objective(&Array2::zeros((16, 16)), &g, &op, cfg.alpha).unwrap();
        assert!(*rec.objective.last().unwrap() < zero);
    }

    #[test]
    fn mean_penalty_variant_runs() {
        let op = op16();
        let truth = blob(16) - 0.2;
        let g = op.forward(&truth).unwrap();
        let cfg = PdhgConfig {
            alpha: 1e-3,
            max_iter: 200,
            variant: PrimalVariant::MeanPenalty {
                mu: 10.0,
                m0: truth.mean().unwrap(),
            },
            ..Default::default()
        };
        let (f, rec) = solve(&g, &op, &cfg, None).unwrap();
        assert!(f.iter().any(|&v| v < 0.0));
        assert!(rec.objective.last().unwrap() < &rec.objective[0]);
    }
}
