//! Tuning the TV weight by PSNR against the ground truth.
//!
//! `cargo run --release --example grid_search -- [out_dir]`

use std::path::PathBuf;

use pat_recon::harness::{grid_search, ExperimentConfig, SearchParam};
use pat_recon::Result;

fn main() -> Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/grid_search".into()));
    let mut cfg = ExperimentConfig::default();
    cfg.recon_n = 64;
    cfg.noise_level = 0.1;
    cfg.tv_max_iter = 200;
    cfg.output_dir = out.clone();
    let rows = grid_search(&cfg, SearchParam::Alpha, &[1e-5, 1e-4, 1e-3, 1e-2, 1e-1])?;
    for r in &rows {
        println!(
            "alpha {:>7.0e}: psnr {:6.2} dB, ssim {:.3}{}",
            r.value,
            r.row.report.psnr,
            r.row.report.ssim,
            if r.best { "  <- best" } else { "" }
        );
    }
    println!("table in {}", out.join("grid_search.csv").display());
    Ok(())
}
