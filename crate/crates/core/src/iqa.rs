//! Full-reference image quality metrics restricted to a region of interest.
//!
//! Pixels outside the ROI are zeroed in both images and the pair is cropped to
//! the ROI bounding box before SSIM and HaarPSI are evaluated. The dynamic
//! range `R` used by PSNR and SSIM is the ground-truth intensity range inside
//! the ROI.

use ndarray::{s, Array2, Zip};

use crate::error::{Error, Result};
use crate::waveop::Image;

/// SSIM window side (uniform weights).
pub const SSIM_WINDOW: usize = 7;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Smallest image side HaarPSI accepts.
pub const HAARPSI_MIN_SIDE: usize = 32;

/// Finite stand-in for an infinite PSNR in tabular output.
pub const PSNR_INFINITE_SENTINEL: f64 = f64::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoiMask {
    pub mask: Array2<bool>,
}

impl RoiMask {
    pub fn full(shape: (usize, usize)) -> Self {
        Self {
            mask: Array2::from_elem(shape, true),
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.mask.dim()
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Inclusive-exclusive bounding box `(i0, i1, j0, j1)`.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for ((i, j), &m) in self.mask.indexed_iter() {
            if m {
                bb = Some(match bb {
                    None => (i, i + 1, j, j + 1),
                    Some((a, b, c, d)) => (a.min(i), b.max(i + 1), c.min(j), d.max(j + 1)),
                });
            }
        }
        bb
    }
}

/// ROI of pixels brighter than `threshold_frac * max(gt)`.
pub fn roi_from_gt(gt: &Image, threshold_frac: f64) -> Result<RoiMask> {
    if !(0.0..1.0).contains(&threshold_frac) {
        return Err(Error::Parameter(format!(
            "ROI threshold must lie in [0, 1), got {threshold_frac}"
        )));
    }
    let max = gt.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let thr = threshold_frac * max;
    let mask = gt.mapv(|v| v > thr);
    let roi = RoiMask { mask };
    if roi.count() == 0 {
        return Err(Error::Metric("ROI mask is empty".into()));
    }
    Ok(roi)
}

/// Quality of one reconstruction against the ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    /// dB; [`PSNR_INFINITE_SENTINEL`] when `psnr_infinite`.
    pub psnr: f64,
    pub psnr_infinite: bool,
    pub ssim: f64,
    pub cc: f64,
    pub haarpsi: f64,
    /// Not computed by this crate; kept so tables have a stable schema.
    pub lpips: Option<f64>,
}

fn check_pair(rec: &Image, gt: &Image, roi: &RoiMask) -> Result<()> {
    if rec.dim() != gt.dim() || roi.dim() != gt.dim() {
        return Err(Error::Shape(format!(
            "metric inputs disagree: rec {:?}, gt {:?}, roi {:?}",
            rec.dim(),
            gt.dim(),
            roi.dim()
        )));
    }
    if roi.count() == 0 {
        return Err(Error::Metric("ROI mask is empty".into()));
    }
    Ok(())
}

/// Ground-truth `(min, range)` over the ROI.
pub fn roi_range(gt: &Image, roi: &RoiMask) -> Result<(f64, f64)> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    Zip::from(gt).and(&roi.mask).for_each(|&v, &m| {
        if m {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    });
    let r = hi - lo;
    if !(r > 0.0) {
        return Err(Error::Metric("ground truth is constant on the ROI".into()));
    }
    Ok((lo, r))
}

/// PSNR in dB over ROI pixels; `+∞` for an exact match.
pub fn psnr(rec: &Image, gt: &Image, roi: &RoiMask) -> Result<f64> {
    check_pair(rec, gt, roi)?;
    let (_, r) = roi_range(gt, roi)?;
    let (mut se, mut n) = (0.0, 0usize);
    Zip::from(rec).and(gt).and(&roi.mask).for_each(|&a, &b, &m| {
        if m {
            se += (a - b) * (a - b);
            n += 1;
        }
    });
    let mse = se / n as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (r * r / mse).log10())
}

fn zero_and_crop(img: &Image, roi: &RoiMask, bb: (usize, usize, usize, usize)) -> Image {
    let mut z = img.clone();
    Zip::from(&mut z).and(&roi.mask).for_each(|v, &m| {
        if !m {
            *v = 0.0;
        }
    });
    z.slice(s![bb.0..bb.1, bb.2..bb.3]).to_owned()
}

/// Mean SSIM with a uniform 7×7 window over window centres inside the ROI.
pub fn ssim(rec: &Image, gt: &Image, roi: &RoiMask) -> Result<f64> {
    check_pair(rec, gt, roi)?;
    let (_, r) = roi_range(gt, roi)?;
    let bb = roi.bounding_box().expect("non-empty ROI");
    let (h, w) = (bb.1 - bb.0, bb.3 - bb.2);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Metric(format!(
            "ROI bounding box {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let x = zero_and_crop(rec, roi, bb);
    let y = zero_and_crop(gt, roi, bb);
    let m = roi.mask.slice(s![bb.0..bb.1, bb.2..bb.3]);

    let c1 = (SSIM_K1 * r).powi(2);
    let c2 = (SSIM_K2 * r).powi(2);
    let half = SSIM_WINDOW / 2;
    let np = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let cov_norm = np / (np - 1.0);

    let (mut total, mut count) = (0.0, 0usize);
    for i in half..h - half {
        for j in half..w - half {
            if !m[[i, j]] {
                continue;
            }
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for a in i - half..=i + half {
                for b in j - half..=j + half {
                    let (p, q) = (x[[a, b]], y[[a, b]]);
                    sx += p;
                    sy += q;
                    sxx += p * p;
                    syy += q * q;
                    sxy += p * q;
                }
            }
            let (ux, uy) = (sx / np, sy / np);
            let vx = cov_norm * (sxx / np - ux * ux);
            let vy = cov_norm * (syy / np - uy * uy);
            let vxy = cov_norm * (sxy / np - ux * uy);
            total += ((2.0 * ux * uy + c1) * (2.0 * vxy + c2))
                / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Metric("no SSIM window centre lies inside the ROI".into()));
    }
    Ok(total / count as f64)
}

/// Pearson correlation over ROI pixels where the ground truth is nonzero.
pub fn pearson_cc(rec: &Image, gt: &Image, roi: &RoiMask) -> Result<f64> {
    check_pair(rec, gt, roi)?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    Zip::from(rec).and(gt).and(&roi.mask).for_each(|&a, &b, &m| {
        if m && b != 0.0 {
            xs.push(a);
            ys.push(b);
        }
    });
    if xs.len() < 2 {
        return Err(Error::Metric("correlation needs at least two samples".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in xs.iter().zip(&ys) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Metric("correlation undefined for a constant sample".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// HaarPSI constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HaarPsiParams {
    pub c: f64,
    pub alpha: f64,
}

impl Default for HaarPsiParams {
    fn default() -> Self {
        Self { c: 30.0, alpha: 4.2 }
    }
}

/// HaarPSI after mapping both images to `[0, 255]` by the ground-truth range.
pub fn haarpsi(rec: &Image, gt: &Image) -> Result<f64> {
    let lo = gt.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = gt.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::Metric("ground truth is constant".into()));
    }
    haarpsi_scaled(rec, gt, lo, hi - lo, HaarPsiParams::default())
}

/// HaarPSI with an explicit intensity window `[lo, lo + range]` mapped to
/// `[0, 255]`.
pub fn haarpsi_scaled(
    rec: &Image,
    gt: &Image,
    lo: f64,
    range: f64,
    params: HaarPsiParams,
) -> Result<f64> {
    if rec.dim() != gt.dim() {
        return Err(Error::Shape(format!(
            "HaarPSI inputs disagree: {:?} vs {:?}",
            rec.dim(),
            gt.dim()
        )));
    }
    let (h, w) = gt.dim();
    if h < HAARPSI_MIN_SIDE || w < HAARPSI_MIN_SIDE {
        return Err(Error::Metric(format!(
            "HaarPSI needs at least {HAARPSI_MIN_SIDE}x{HAARPSI_MIN_SIDE} pixels, got {h}x{w}"
        )));
    }
    let scale = 255.0 / range;
    let a = subsample(&rec.mapv(|v| (v - lo) * scale));
    let b = subsample(&gt.mapv(|v| (v - lo) * scale));
    let ca = haar_decompose(&a);
    let cb = haar_decompose(&b);
    let sigmoid = |v: f64| 1.0 / (1.0 + (-params.alpha * v).exp());

    let (mut num, mut den) = (0.0, 0.0);
    for orient in 0..2 {
        let wa = &ca[orient * 3 + 2];
        let wb = &cb[orient * 3 + 2];
        for ((i, j), _) in wa.indexed_iter() {
            let weight = wa[[i, j]].abs().max(wb[[i, j]].abs());
            let mut local = 0.0;
            for scale in 0..2 {
                let p = ca[orient * 3 + scale][[i, j]].abs();
                let q = cb[orient * 3 + scale][[i, j]].abs();
                local += (2.0 * p * q + params.c) / (p * p + q * q + params.c);
            }
            num += sigmoid(local / 2.0) * weight;
            den += weight;
        }
    }
    if den == 0.0 {
        return Err(Error::Metric("HaarPSI weights vanish (flat images)".into()));
    }
    let v = num / den;
    let logit = (v / (1.0 - v)).ln() / params.alpha;
    Ok(logit * logit)
}

/// Zero-padded 'same' convolution, output aligned like `scipy.signal.convolve2d`.
fn convolve_same(img: &Image, kernel: &Array2<f64>) -> Image {
    let (h, w) = img.dim();
    let (kh, kw) = kernel.dim();
    let (oh, ow) = ((kh - 1) / 2, (kw - 1) / 2);
    Array2::from_shape_fn((h, w), |(i, j)| {
        let mut acc = 0.0;
        for m in 0..kh {
            let ii = i as isize + oh as isize - m as isize;
            if ii < 0 || ii >= h as isize {
                continue;
            }
            for n in 0..kw {
                let jj = j as isize + ow as isize - n as isize;
                if jj < 0 || jj >= w as isize {
                    continue;
                }
                acc += img[[ii as usize, jj as usize]] * kernel[[m, n]];
            }
        }
        acc
    })
}

fn subsample(img: &Image) -> Image {
    let smoothed = convolve_same(img, &Array2::from_elem((2, 2), 0.25));
    smoothed.slice(s![..;2, ..;2]).to_owned()
}

/// Three-scale Haar responses: indices 0..3 one orientation, 3..6 the other.
fn haar_decompose(img: &Image) -> Vec<Image> {
    let mut out = vec![Array2::zeros((0, 0)); 6];
    for scale in 1..=3 {
        let k = 1usize << scale;
        let v = 0.5f64.powi(scale as i32);
        let filt = Array2::from_shape_fn((k, k), |(m, _)| if m < k / 2 { -v } else { v });
        out[scale - 1] = convolve_same(img, &filt);
        out[scale + 2] = convolve_same(img, &filt.t().to_owned());
    }
    out
}

/// Ground truth plus the ROI used to score iterates during a solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub image: Image,
    pub roi: RoiMask,
}

impl Reference {
    pub fn new(image: Image, roi: RoiMask) -> Result<Self> {
        if image.dim() != roi.dim() {
            return Err(Error::Shape(format!(
                "reference {:?} and ROI {:?} differ",
                image.dim(),
                roi.dim()
            )));
        }
        roi_range(&image, &roi)?;
        Ok(Self { image, roi })
    }

    /// Scores against the whole image.
    pub fn full(image: Image) -> Result<Self> {
        let roi = RoiMask::full(image.dim());
        Self::new(image, roi)
    }

    /// `(psnr, ssim)` of `rec`; PSNR may be `+∞`.
    pub fn psnr_ssim(&self, rec: &Image) -> Result<(f64, f64)> {
        Ok((psnr(rec, &self.image, &self.roi)?, ssim(rec, &self.image, &self.roi)?))
    }

    pub fn evaluate(&self, rec: &Image) -> Result<MetricsReport> {
        evaluate(rec, &self.image, &self.roi)
    }
}

/// All metrics of a reconstruction against the ground truth on `roi`.
///
/// SSIM and HaarPSI see the ROI-zeroed pair cropped to the ROI bounding box;
/// the HaarPSI crop is widened to its minimum side where the image allows.
pub fn evaluate(rec: &Image, gt: &Image, roi: &RoiMask) -> Result<MetricsReport> {
    check_pair(rec, gt, roi)?;
    let p = psnr(rec, gt, roi)?;
    let (lo, r) = roi_range(gt, roi)?;
    let bb = roi.bounding_box().expect("non-empty ROI");
    let (h, w) = gt.dim();
    let widen = |a: usize, b: usize, n: usize| -> (usize, usize) {
        if b - a >= HAARPSI_MIN_SIDE || n < HAARPSI_MIN_SIDE {
            return (a, b);
        }
        let extra = HAARPSI_MIN_SIDE - (b - a);
        let a2 = a.saturating_sub(extra / 2);
        let b2 = (a2 + HAARPSI_MIN_SIDE).min(n);
        (b2 - HAARPSI_MIN_SIDE, b2)
    };
    let (i0, i1) = widen(bb.0, bb.1, h);
    let (j0, j1) = widen(bb.2, bb.3, w);
    let hbb = (i0, i1, j0, j1);
    let hx = zero_and_crop(rec, roi, hbb);
    let hy = zero_and_crop(gt, roi, hbb);
    Ok(MetricsReport {
        psnr: if p.is_infinite() { PSNR_INFINITE_SENTINEL } else { p },
        psnr_infinite: p.is_infinite(),
        ssim: ssim(rec, gt, roi)?,
        cc: pearson_cc(rec, gt, roi)?,
        haarpsi: haarpsi_scaled(&hx, &hy, lo, r, HaarPsiParams::default())?,
        lpips: None,
    })
}
