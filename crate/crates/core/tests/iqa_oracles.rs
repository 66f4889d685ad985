mod common;

use common::random_image;
use ndarray::Array2;
use pat_recon::harness::{make_phantom, PhantomKind};
use pat_recon::iqa::{evaluate, haarpsi, pearson_cc, psnr, roi_from_gt, ssim, RoiMask};
use pat_recon::{Grid, Image};
use proptest::prelude::*;

/// Zero-padded box sums through a summed-area table.
struct Boxes {
    sat: Array2<f64>,
    h: isize,
    w: isize,
}

impl Boxes {
    fn new(img: &Image) -> Self {
        let (h, w) = img.dim();
        let mut sat = Array2::zeros((h + 1, w + 1));
        for i in 0..h {
            for j in 0..w {
                sat[[i + 1, j + 1]] = img[[i, j]] + sat[[i, j + 1]] + sat[[i + 1, j]] - sat[[i, j]];
            }
        }
        Self { sat, h: h as isize, w: w as isize }
    }

    /// Sum over rows `r0..=r1`, columns `c0..=c1`, clipped to the image.
    fn sum(&self, r0: isize, r1: isize, c0: isize, c1: isize) -> f64 {
        let (r0, r1) = (r0.max(0), r1.min(self.h - 1));
        let (c0, c1) = (c0.max(0), c1.min(self.w - 1));
        if r0 > r1 || c0 > c1 {
            return 0.0;
        }
        let at = |r: isize, c: isize| self.sat[[r as usize, c as usize]];
        at(r1 + 1, c1 + 1) - at(r0, c1 + 1) - at(r1 + 1, c0) + at(r0, c0)
    }
}

/// Reference HaarPSI for grayscale inputs already on the `[0, 255]` scale:
/// 2×2 mean then decimation, three Haar scales per orientation, similarity
/// of the two finest scales, weights from the coarsest.
fn haarpsi_oracle(a: &Image, b: &Image) -> f64 {
    let (c, alpha) = (30.0, 4.2);
    let down = |img: &Image| {
        let bx = Boxes::new(img);
        let (h, w) = img.dim();
        Array2::from_shape_fn((h.div_ceil(2), w.div_ceil(2)), |(p, q)| {
            let (r, s) = (2 * p as isize, 2 * q as isize);
            bx.sum(r - 1, r, s - 1, s) / 4.0
        })
    };
    let (a, b) = (down(a), down(b));
    let (ba, bb) = (Boxes::new(&a), Boxes::new(&b));
    // response of orientation 0: upper half-block minus lower half-block
    let resp = |bx: &Boxes, orient: usize, scale: u32, i: isize, j: isize| {
        let half = 1isize << (scale - 1);
        let v = 0.5f64.powi(scale as i32);
        if orient == 0 {
            v * (bx.sum(i - half, i - 1, j - half, j + half - 1) - bx.sum(i, i + half - 1, j - half, j + half - 1))
        } else {
            v * (bx.sum(i - half, i + half - 1, j - half, j - 1) - bx.sum(i - half, i + half - 1, j, j + half - 1))
        }
    };
    let (h, w) = a.dim();
    let (mut num, mut den) = (0.0, 0.0);
    for orient in 0..2 {
        for i in 0..h as isize {
            for j in 0..w as isize {
                let weight = resp(&ba, orient, 3, i, j).abs().max(resp(&bb, orient, 3, i, j).abs());
                let mut s = 0.0;
                for scale in 1..=2 {
                    let p = resp(&ba, orient, scale, i, j).abs();
                    let q = resp(&bb, orient, scale, i, j).abs();
                    s += (2.0 * p * q + c) / (p * p + q * q + c);
                }
                num += weight / (1.0 + (-alpha * s / 2.0).exp());
                den += weight;
            }
        }
    }
    let v = num / den;
    ((v / (1.0 - v)).ln() / alpha).powi(2)
}

fn phantom64() -> Image {
    make_phantom(&Grid::square(64, 1e-4, 1500.0).unwrap(), PhantomKind::SheppLike, 9)
}

fn to_255(img: &Image, gt: &Image) -> Image {
    let lo = gt.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = gt.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    img.mapv(|v| (v - lo) * 255.0 / (hi - lo))
}

#[test]
fn haarpsi_matches_formula_oracle() {
    let gt = phantom64();
    let noisy = &gt + &(random_image(gt.dim(), 4) * 0.05);
    let shifted = Array2::from_shape_fn(gt.dim(), |(i, j)| gt[[(i + 1) % 64, j]]);
    for rec in [&noisy, &shifted, &gt] {
        let got = haarpsi(rec, &gt).unwrap();
        let want = haarpsi_oracle(&to_255(rec, &gt), &to_255(&gt, &gt));
        assert!((got - want).abs() <= 1e-10, "{got} vs {want}");
    }
    let s = haarpsi(&shifted, &gt).unwrap();
    assert!(s > 0.0 && s < 1.0);
}

#[test]
fn identity_case_for_every_metric() {
    let gt = phantom64();
    let roi = roi_from_gt(&gt, 0.05).unwrap();
    assert_eq!(psnr(&gt, &gt, &roi).unwrap(), f64::INFINITY);
    let report = evaluate(&gt, &gt, &roi).unwrap();
    assert!(report.psnr_infinite);
    assert_eq!(report.psnr, pat_recon::iqa::PSNR_INFINITE_SENTINEL);
    assert_eq!(ssim(&gt, &gt, &roi).unwrap(), 1.0);
    assert!((pearson_cc(&gt, &gt, &roi).unwrap() - 1.0).abs() <= 1e-15);
    assert!((haarpsi(&gt, &gt).unwrap() - 1.0).abs() <= 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cc_is_invariant_under_positive_affine_maps(a in 0.01f64..100.0, b in -50.0f64..50.0, seed in 0u64..10_000) {
        let gt = random_image((16, 16), seed);
        let rec = random_image((16, 16), seed + 1);
        let roi = RoiMask::full((16, 16));
        let base = pearson_cc(&rec, &gt, &roi).unwrap();
        let moved = pearson_cc(&(&rec * a + b), &gt, &roi).unwrap();
        prop_assert!((base - moved).abs() <= 1e-12);
        let flipped = pearson_cc(&(&rec * -a + b), &gt, &roi).unwrap();
        prop_assert!((base + flipped).abs() <= 1e-12);
    }

    #[test]
    fn ssim_and_psnr_only_see_range_ratios(k in 0.1f64..20.0, seed in 0u64..10_000) {
        let gt = random_image((16, 16), seed);
        let rec = random_image((16, 16), seed + 3);
        let roi = RoiMask::full((16, 16));
        let s0 = ssim(&rec, &gt, &roi).unwrap();
        let s1 = ssim(&(&rec * k), &(&gt * k), &roi).unwrap();
        prop_assert!((s0 - s1).abs() <= 1e-12);
        let p0 = psnr(&rec, &gt, &roi).unwrap();
        let p1 = psnr(&(&rec * k), &(&gt * k), &roi).unwrap();
        prop_assert!((p0 - p1).abs() <= 1e-10);
        prop_assert!(s0 <= 1.0 && s0 >= -1.0);
    }
}
