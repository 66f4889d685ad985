//! Discrete gradient, isotropic total variation and the proximal maps used by
//! the primal-dual solver.
//!
//! Forward differences with a Neumann boundary: the difference across the
//! last row (column) is zero.

use ndarray::{s, Array2, Zip};

use crate::error::{Error, Result};
use crate::waveop::{Image, TimeSeries};

/// Per-pixel forward-difference gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
}

impl VectorField {
    pub fn zeros(shape: (usize, usize)) -> Self {
        Self {
            x: Array2::zeros(shape),
            y: Array2::zeros(shape),
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.x.dim()
    }

    pub fn dot(&self, other: &VectorField) -> f64 {
        let dx = Zip::from(&self.x).and(&other.x).fold(0.0, |a, p, q| a + p * q);
        let dy = Zip::from(&self.y).and(&other.y).fold(0.0, |a, p, q| a + p * q);
        dx + dy
    }

    /// `self + step * other`.
    pub fn scaled_add(&mut self, step: f64, other: &VectorField) {
        self.x.scaled_add(step, &other.x);
        self.y.scaled_add(step, &other.y);
    }
}

pub fn grad(f: &Image) -> VectorField {
    let (nx, ny) = f.dim();
    let mut v = VectorField::zeros((nx, ny));
    if nx > 1 {
        let d = &f.slice(s![1.., ..]) - &f.slice(s![..nx - 1, ..]);
        v.x.slice_mut(s![..nx - 1, ..]).assign(&d);
    }
    if ny > 1 {
        let d = &f.slice(s![.., 1..]) - &f.slice(s![.., ..ny - 1]);
        v.y.slice_mut(s![.., ..ny - 1]).assign(&d);
    }
    v
}

/// `gradᵀ v`, i.e. minus the discrete divergence.
pub fn neg_div(v: &VectorField) -> Image {
    let (nx, ny) = v.dim();
    let mut out = Array2::zeros((nx, ny));
    if nx > 1 {
        let vx = v.x.slice(s![..nx - 1, ..]);
        out.slice_mut(s![..nx - 1, ..]).zip_mut_with(&vx, |o, &a| *o -= a);
        out.slice_mut(s![1.., ..]).zip_mut_with(&vx, |o, &a| *o += a);
    }
    if ny > 1 {
        let vy = v.y.slice(s![.., ..ny - 1]);
        out.slice_mut(s![.., ..ny - 1]).zip_mut_with(&vy, |o, &a| *o -= a);
        out.slice_mut(s![.., 1..]).zip_mut_with(&vy, |o, &a| *o += a);
    }
    out
}

/// Isotropic total variation.
pub fn tv(f: &Image) -> f64 {
    let g = grad(f);
    Zip::from(&g.x).and(&g.y).fold(0.0, |acc, a, b| acc + a.hypot(*b))
}

/// `Σ √(|∇f|² + ε²) − N ε`, zero on constant images.
pub fn tv_smoothed(f: &Image, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    let g = grad(f);
    Ok(Zip::from(&g.x)
        .and(&g.y)
        .fold(0.0, |acc, a, b| acc + ((a * a + b * b + eps * eps).sqrt() - eps)))
}

/// Gradient of [`tv_smoothed`] with respect to `f`.
pub fn tv_smoothed_grad(f: &Image, eps: f64) -> Result<Image> {
    check_eps(eps)?;
    let mut g = grad(f);
    Zip::from(&mut g.x).and(&mut g.y).for_each(|a, b| {
        let r = (*a * *a + *b * *b + eps * eps).sqrt();
        *a /= r;
        *b /= r;
    });
    Ok(neg_div(&g))
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("smoothing must be positive, got {eps}")))
    }
}

/// Resolvent of the conjugate of `½‖· − g‖²`: `(y − σ g) / (1 + σ)`.
pub fn prox_l2_dual(y: &TimeSeries, sigma: f64, g: &TimeSeries) -> TimeSeries {
    let mut out = y.clone();
    prox_l2_dual_inplace(&mut out, sigma, g);
    out
}

pub(crate) fn prox_l2_dual_inplace(y: &mut TimeSeries, sigma: f64, g: &TimeSeries) {
    let inv = 1.0 / (1.0 + sigma);
    Zip::from(y).and(g).for_each(|a, &b| *a = (*a - sigma * b) * inv);
}

/// Pointwise projection onto the ℓ₂ ball of radius `alpha`.
pub fn project_dual_ball(v: &VectorField, alpha: f64) -> VectorField {
    let mut out = v.clone();
    project_dual_ball_inplace(&mut out, alpha);
    out
}

pub(crate) fn project_dual_ball_inplace(v: &mut VectorField, alpha: f64) {
    Zip::from(&mut v.x).and(&mut v.y).for_each(|a, b| {
        let n = a.hypot(*b);
        if n > alpha {
            let scale = if n > 0.0 { alpha / n } else { 0.0 };
            *a *= scale;
            *b *= scale;
        }
    });
}

/// Primal constraint or penalty handled by the primal proximal step.
#[derive(Debug, Clone, Copy, PartialEq)]
#[derive(Default)]
pub enum PrimalVariant {
    /// `f ≥ 0`.
    #[default]
    NonNegative,
    /// No sign constraint, plus `mu (mean(f) − m0)²`.
    MeanPenalty { mu: f64, m0: f64 },
}


impl PrimalVariant {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PrimalVariant::NonNegative => Ok(()),
            PrimalVariant::MeanPenalty { mu, m0 } => {
                if mu >= 0.0 && mu.is_finite() && m0.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Parameter(format!(
                        "mean penalty needs finite mu >= 0 and finite m0, got mu={mu}, m0={m0}"
                    )))
                }
            }
        }
    }

    /// Value of the variant's penalty term (0 for the constraint when met).
    pub fn penalty(&self, f: &Image) -> f64 {
        match *self {
            PrimalVariant::NonNegative => 0.0,
            PrimalVariant::MeanPenalty { mu, m0 } => {
                let d = f.mean().unwrap_or(0.0) - m0;
                mu * d * d
            }
        }
    }
}

/// Proximal map of `tau` times the primal term selected by `variant`.
pub fn prox_primal(f: &Image, tau: f64, variant: PrimalVariant) -> Result<Image> {
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("prox step must be positive, got {tau}")));
    }
    variant.validate()?;
    let mut out = f.clone();
    prox_primal_inplace(&mut out, tau, variant);
    Ok(out)
}

pub(crate) fn prox_primal_inplace(f: &mut Image, tau: f64, variant: PrimalVariant) {
    match variant {
        PrimalVariant::NonNegative => f.mapv_inplace(|v| v.max(0.0)),
        PrimalVariant::MeanPenalty { mu, m0 } => {
            // only the constant component moves: minimise
            // N c² / (2τ) + μ (m + c − m0)² over the shift c
            let n = f.len() as f64;
            let m = f.mean().unwrap_or(0.0);
            let shift = -2.0 * mu * tau * (m - m0) / (n + 2.0 * mu * tau);
            f.mapv_inplace(|v| v + shift);
        }
    }
}
