//! Noise level × detector coverage sweep with TV reconstructions.
//!
//! `cargo run --release --example limited_view_sweep -- [out_dir]`

use std::path::PathBuf;

use pat_recon::harness::{sweep, ExperimentConfig, Method};
use pat_recon::Result;

fn main() -> Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/sweep".into()));
    let mut cfg = ExperimentConfig::default();
    cfg.recon_n = 64;
    cfg.ring_elements = 256;
    cfg.method = Method::Tv;
    cfg.tv_max_iter = 200;
    cfg.output_dir = out.clone();
    let runs = sweep(&cfg, &[0.0, 0.1, 0.2], &[256, 170, 112])?;
    for s in &runs {
        let tv = s.row("tv", "converged").or_else(|| s.row("tv", "max_iter")).expect("tv row");
        let init = s.row("initial", "none").expect("initial row");
        println!(
            "noise {:.2}, coverage {:>10.6} deg: initial {:6.2} dB, tv {:6.2} dB",
            s.noise_measured, s.coverage_deg, init.report.psnr, tv.report.psnr
        );
    }
    println!("table in {}", out.join("sweep.csv").display());
    Ok(())
}
