//! PSNR, SSIM, correlation and HaarPSI on a few distorted copies of a phantom.
//!
//! `cargo run --release --example image_metrics`

use pat_recon::harness::{make_phantom, PhantomKind};
use pat_recon::iqa::{evaluate, roi_from_gt, RoiMask};
use pat_recon::{Grid, Result};

fn main() -> Result<()> {
    let grid = Grid::square(64, 1e-4, 1500.0)?;
    let gt = make_phantom(&grid, PhantomKind::SheppLike, 4);
    let full = RoiMask::full(gt.dim());
    let object = roi_from_gt(&gt, 0.05)?;

    let shifted = &gt + 0.1;
    let scaled = &gt * 0.5;
    let mut blurred = gt.clone();
    for i in 1..63 {
        for j in 1..63 {
            blurred[[i, j]] = (gt[[i - 1, j]] + gt[[i + 1, j]] + gt[[i, j - 1]] + gt[[i, j + 1]] + gt[[i, j]]) / 5.0;
        }
    }
    for (name, img) in [("identical", &gt), ("offset +0.1", &shifted), ("halved", &scaled), ("blurred", &blurred)] {
        let m = evaluate(img, &gt, &full)?;
        let o = evaluate(img, &gt, &object)?;
        let psnr = if m.psnr_infinite { "inf".to_string() } else { format!("{:.2}", m.psnr) };
        println!(
            "{name:<12} psnr {psnr:>6} dB  ssim {:.4}  cc {:.4}  haarpsi {:.4}  | object-only ssim {:.4}",
            m.ssim, m.cc, m.haarpsi, o.ssim
        );
    }
    Ok(())
}
