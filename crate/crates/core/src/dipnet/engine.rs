use ndarray::Zip;

use super::optim::{adam_step, cosine_lr, AdamState};
use super::unet::{unet_forward, unet_init, Evaluated, NetworkParams, UNetConfig};
use crate::error::{shape_err, Error, Result};
use crate::iqa::Reference;
use crate::pdhg::RunRecord;
use crate::variational::{tv_smoothed, tv_smoothed_grad};
use crate::waveop::{ForwardOperator, Image, TimeSeries};

/// Which recorded iterate [`dip_reconstruct`] returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    /// Highest PSNR over the whole run.
    EarlyStopPsnr,
    /// Highest PSNR after discarding the first `burn_in` iterates.
    ConvergedPsnr { burn_in: usize },
    /// The last iterate.
    FixedCutoff,
}

impl SelectionMode {
    pub fn needs_reference(&self) -> bool {
        !matches!(self, SelectionMode::FixedCutoff)
    }

    pub fn name(&self) -> &'static str {
        match self {
            SelectionMode::EarlyStopPsnr => "early_stop_psnr",
            SelectionMode::ConvergedPsnr { .. } => "converged_psnr",
            SelectionMode::FixedCutoff => "fixed_cutoff",
        }
    }
}

/// Quadratic pull of the mean intensity towards `m0` (default: mean of `z`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanPenalty {
    pub mu: f64,
    pub m0: Option<f64>,
}

impl Default for MeanPenalty {
    fn default() -> Self {
        Self { mu: 1.0, m0: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DipConfig {
    /// TV weight λ.
    pub lambda: f64,
    pub lr0: f64,
    pub max_iter: usize,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    /// Smoothing of the TV term; `None` uses `1e-6 ×` the dynamic range of `z`.
    pub tv_eps: Option<f64>,
    pub mean_penalty: Option<MeanPenalty>,
    pub selection: SelectionMode,
}

impl Default for DipConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            lr0: 5e-4,
            max_iter: 400,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            tv_eps: None,
            mean_penalty: None,
            selection: SelectionMode::EarlyStopPsnr,
        }
    }
}

impl DipConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Parameter(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Parameter(format!("lr0 must be > 0, got {}", self.lr0)));
        }
        if self.max_iter == 0 {
            return Err(Error::Parameter("max_iter must be at least 1".into()));
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) || !(self.adam_eps > 0.0) {
            return Err(Error::Parameter("adam betas must lie in [0, 1) and eps > 0".into()));
        }
        if let Some(e) = self.tv_eps {
            if !(e > 0.0) {
                return Err(Error::Parameter(format!("tv_eps must be > 0, got {e}")));
            }
        }
        if let Some(mp) = self.mean_penalty {
            if !(mp.mu >= 0.0 && mp.mu.is_finite()) || mp.m0.is_some_and(|m| !m.is_finite()) {
                return Err(Error::Parameter("mean penalty needs finite mu >= 0 and m0".into()));
            }
        }
        if let SelectionMode::ConvergedPsnr { burn_in } = self.selection {
            if burn_in >= self.max_iter {
                return Err(Error::Parameter(format!(
                    "burn_in {burn_in} must be below max_iter {}",
                    self.max_iter
                )));
            }
        }
        Ok(())
    }
}

/// Loss weights with the `z`-dependent defaults filled in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub lambda: f64,
    pub tv_eps: f64,
    /// `(mu, m0)`.
    pub mean: Option<(f64, f64)>,
}

impl LossTerms {
    pub fn resolve(config: &DipConfig, z: &Image) -> Self {
        let tv_eps = config.tv_eps.unwrap_or_else(|| {
            let (lo, hi) = z
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let range = hi - lo;
            1e-6 * if range > 0.0 { range } else { 1.0 }
        });
        let mean = config
            .mean_penalty
            .map(|mp| (mp.mu, mp.m0.unwrap_or_else(|| z.mean().unwrap_or(0.0))));
        Self {
            lambda: config.lambda,
            tv_eps,
            mean,
        }
    }

    /// `‖A φ − g‖² + λ TV_ε(φ) + μ (mean φ − m0)²`.
    pub fn value(&self, phi: &Image, g: &TimeSeries, op: &ForwardOperator) -> Result<f64> {
        let r = self.residual(phi, g, op)?;
        self.value_from_residual(phi, &r)
    }

    /// Gradient of [`LossTerms::value`] with respect to `φ`.
    pub fn image_gradient(&self, phi: &Image, g: &TimeSeries, op: &ForwardOperator) -> Result<Image> {
        let r = self.residual(phi, g, op)?;
        self.gradient_from_residual(phi, &r, op)
    }

    /// Loss and image gradient sharing one forward application.
    pub fn value_and_gradient(&self, phi: &Image, g: &TimeSeries, op: &ForwardOperator) -> Result<(f64, Image)> {
        let r = self.residual(phi, g, op)?;
        Ok((self.value_from_residual(phi, &r)?, self.gradient_from_residual(phi, &r, op)?))
    }

    fn residual(&self, phi: &Image, g: &TimeSeries, op: &ForwardOperator) -> Result<TimeSeries> {
        let mut r = op.forward(phi)?;
        if r.dim() != g.dim() {
            return Err(shape_err("data", r.dim(), g.dim()));
        }
        r -= g;
        Ok(r)
    }

    fn value_from_residual(&self, phi: &Image, r: &TimeSeries) -> Result<f64> {
        let mut total: f64 = r.iter().map(|v| v * v).sum();
        if self.lambda > 0.0 {
            total += self.lambda * tv_smoothed(phi, self.tv_eps)?;
        }
        if let Some((mu, m0)) = self.mean {
            let d = phi.mean().unwrap_or(0.0) - m0;
            total += mu * d * d;
        }
        Ok(total)
    }

    fn gradient_from_residual(&self, phi: &Image, r: &TimeSeries, op: &ForwardOperator) -> Result<Image> {
        let mut u = op.adjoint(r)? * 2.0;
        if self.lambda > 0.0 {
            u.scaled_add(self.lambda, &tv_smoothed_grad(phi, self.tv_eps)?);
        }
        if let Some((mu, m0)) = self.mean {
            let n = phi.len() as f64;
            u += 2.0 * mu * (phi.mean().unwrap_or(0.0) - m0) / n;
        }
        Ok(u)
    }
}

/// DIP loss of the network output for input `z`.
pub fn dip_loss(
    params: &NetworkParams,
    unet: &UNetConfig,
    z: &Image,
    g: &TimeSeries,
    op: &ForwardOperator,
    config: &DipConfig,
) -> Result<f64> {
    let phi = unet_forward(params, unet, z)?;
    LossTerms::resolve(config, z).value(&phi, g, op)
}

/// Parameter gradient of [`dip_loss`]: the image gradient pulled back
/// through the network.
pub fn dip_loss_grad(
    params: &NetworkParams,
    unet: &UNetConfig,
    z: &Image,
    g: &TimeSeries,
    op: &ForwardOperator,
    config: &DipConfig,
) -> Result<NetworkParams> {
    let ev = Evaluated::new(params, unet, z)?;
    let u = LossTerms::resolve(config, z).image_gradient(&ev.output, g, op)?;
    ev.vjp(params, unet, &u)
}

fn argmax_from(values: &[f64], start: usize) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate().skip(start) {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// History index chosen by `mode`. Ties go to the earliest iterate.
pub fn select_iterate(history: &RunRecord, mode: SelectionMode) -> Result<usize> {
    let n = history.objective.len();
    if n == 0 {
        return Err(Error::Parameter("empty history".into()));
    }
    let need = || Error::Parameter(format!("selection '{}' needs recorded PSNR", mode.name()));
    match mode {
        SelectionMode::FixedCutoff => Ok(n - 1),
        SelectionMode::EarlyStopPsnr => {
            if history.psnr.len() != n {
                return Err(need());
            }
            argmax_from(&history.psnr, 0).ok_or_else(need)
        }
        SelectionMode::ConvergedPsnr { burn_in } => {
            if history.psnr.len() != n {
                return Err(need());
            }
            if burn_in >= n {
                return Err(Error::Parameter(format!(
                    "burn_in {burn_in} discards all {n} iterates"
                )));
            }
            argmax_from(&history.psnr, burn_in).ok_or_else(need)
        }
    }
}

/// An iterate picked from a run by one selection mode.
#[derive(Debug, Clone)]
pub struct Pick {
    pub mode: SelectionMode,
    pub index: usize,
    pub image: Image,
}

/// Everything a finished DIP run produces.
#[derive(Debug, Clone)]
pub struct DipOutcome {
    /// Iterate chosen by `DipConfig::selection`.
    pub image: Image,
    pub record: RunRecord,
    pub params: NetworkParams,
    /// Output of the final iterate, whatever the selection.
    pub last: Image,
    /// One entry per requested selection mode, in request order.
    pub picks: Vec<Pick>,
}

fn check_mode(mode: SelectionMode, config: &DipConfig, has_ref: bool) -> Result<()> {
    if mode.needs_reference() && !has_ref {
        return Err(Error::Parameter(format!(
            "selection '{}' needs a ground truth",
            mode.name()
        )));
    }
    if let SelectionMode::ConvergedPsnr { burn_in } = mode {
        if burn_in >= config.max_iter {
            return Err(Error::Parameter(format!(
                "burn_in {burn_in} must be below max_iter {}",
                config.max_iter
            )));
        }
    }
    Ok(())
}

/// Fits a freshly initialised network to `g` with input `z`.
///
/// History entry `t` describes the network after `t` Adam steps, so entry 0
/// is the untrained network and `max_iter` entries are recorded in total.
pub fn dip_reconstruct(
    g: &TimeSeries,
    z: &Image,
    op: &ForwardOperator,
    config: &DipConfig,
    unet: &UNetConfig,
    reference: Option<&Reference>,
) -> Result<DipOutcome> {
    dip_reconstruct_multi(g, z, op, config, unet, reference, &[config.selection])
}

/// Like [`dip_reconstruct`], additionally returning the iterate picked by
/// each of `modes` from the same run.
pub fn dip_reconstruct_multi(
    g: &TimeSeries,
    z: &Image,
    op: &ForwardOperator,
    config: &DipConfig,
    unet: &UNetConfig,
    reference: Option<&Reference>,
    modes: &[SelectionMode],
) -> Result<DipOutcome> {
    config.validate()?;
    if z.dim() != op.image_shape() {
        return Err(shape_err("network input", op.image_shape(), z.dim()));
    }
    if g.dim() != op.data_shape() {
        return Err(shape_err("data", op.data_shape(), g.dim()));
    }
    let mut all_modes = vec![config.selection];
    all_modes.extend_from_slice(modes);
    for &m in &all_modes {
        check_mode(m, config, reference.is_some())?;
    }
    let terms = LossTerms::resolve(config, z);
    let mut params = unet_init(unet, z.dim())?;
    let mut adam = AdamState::new(params.len(), config.adam_betas, config.adam_eps);
    let mut rec = RunRecord::default();
    let total = config.max_iter;
    // best (psnr, image) per mode, tracked on the fly so no history of images is kept
    let mut best: Vec<Option<(f64, Image)>> = vec![None; all_modes.len()];
    let mut prev: Option<Image> = None;

    for t in 0..total {
        let ev = Evaluated::new(&params, unet, z)?;
        let phi = &ev.output;
        let last_step = t + 1 == total;
        let (loss, u) = if last_step {
            (terms.value(phi, g, op)?, None)
        } else {
            let (l, u) = terms.value_and_gradient(phi, g, op)?;
            (l, Some(u))
        };
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("DIP loss is {loss} at iteration {t}")));
        }
        rec.objective.push(loss);
        rec.rel_change.push(match &prev {
            None => f64::NAN,
            Some(p) => {
                let d: f64 = Zip::from(phi).and(p).fold(0.0, |s, a, b| s + (a - b) * (a - b));
                let n: f64 = phi.iter().map(|v| v * v).sum();
                if n > 0.0 {
                    (d / n).sqrt()
                } else if d == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        });
        if let Some(r) = reference {
            let (p, s) = r.psnr_ssim(phi)?;
            rec.psnr.push(p);
            rec.ssim.push(s);
            for (slot, mode) in best.iter_mut().zip(&all_modes) {
                let eligible = match *mode {
                    SelectionMode::EarlyStopPsnr => true,
                    SelectionMode::ConvergedPsnr { burn_in } => t >= burn_in,
                    SelectionMode::FixedCutoff => false,
                };
                if eligible && !p.is_nan() && slot.as_ref().is_none_or(|(b, _)| p > *b) {
                    *slot = Some((p, phi.clone()));
                }
            }
        }
        rec.iterations_run = t + 1;
        if let Some(u) = u {
            let grads = ev.vjp(&params, unet, &u)?;
            let lr = cosine_lr(t, total, config.lr0)?;
            adam_step(&mut params.values, &grads.values, &mut adam, lr)?;
            if !params.is_finite() {
                return Err(Error::Numerical(format!("non-finite parameters after step {t}")));
            }
        }
        prev = Some(ev.output);
    }
    rec.converged = true;
    let last = prev.expect("at least one iterate");
    let mut picks = Vec::with_capacity(all_modes.len());
    for (mode, slot) in all_modes.iter().zip(best) {
        let index = select_iterate(&rec, *mode)?;
        let image = match mode {
            SelectionMode::FixedCutoff => last.clone(),
            _ => slot.expect("psnr recorded").1,
        };
        picks.push(Pick { mode: *mode, index, image });
    }
    let first = picks.remove(0);
    rec.selected = Some(first.index);
    Ok(DipOutcome {
        image: first.image,
        record: rec,
        params,
        last,
        picks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist(psnr: &[f64]) -> RunRecord {
        RunRecord {
            objective: vec![0.0; psnr.len()],
            psnr: psnr.to_vec(),
            iterations_run: psnr.len(),
            ..Default::default()
        }
    }

    #[test]
    fn selection_examples() {
        let h = hist(&[10.0, 12.0, 11.0]);
        assert_eq!(select_iterate(&h, SelectionMode::EarlyStopPsnr).unwrap(), 1);
        assert_eq!(select_iterate(&h, SelectionMode::ConvergedPsnr { burn_in: 1 }).unwrap(), 1);
        assert_eq!(select_iterate(&h, SelectionMode::ConvergedPsnr { burn_in: 2 }).unwrap(), 2);
        assert_eq!(select_iterate(&h, SelectionMode::FixedCutoff).unwrap(), 2);
    }

    #[test]
    fn selection_errors() {
        let mut h = hist(&[1.0, 2.0]);
        assert!(select_iterate(&h, SelectionMode::ConvergedPsnr { burn_in: 2 }).is_err());
        h.psnr.clear();
        assert!(select_iterate(&h, SelectionMode::EarlyStopPsnr).is_err());
        assert_eq!(select_iterate(&h, SelectionMode::FixedCutoff).unwrap(), 1);
        assert!(select_iterate(&RunRecord::default(), SelectionMode::FixedCutoff).is_err());
    }

    #[test]
    fn ties_pick_earliest_and_skip_nan() {
        let h = hist(&[f64::NAN, 3.0, 3.0, 1.0]);
        assert_eq!(select_iterate(&h, SelectionMode::EarlyStopPsnr).unwrap(), 1);
    }

    #[test]
    fn config_validation() {
        assert!(DipConfig::default().validate().is_ok());
        let c = DipConfig {
            selection: SelectionMode::ConvergedPsnr { burn_in: 40 },
            max_iter: 40,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = DipConfig { lr0: 0.0, ..Default::default() };
        assert!(c.validate().is_err());
        let c = DipConfig { lambda: -1.0, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
