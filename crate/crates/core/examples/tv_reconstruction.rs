//! TV-regularised reconstruction with the primal-dual solver.
//!
//! `cargo run --release --example tv_reconstruction`

use pat_recon::harness::{simulate, ExperimentConfig, Setup};
use pat_recon::iqa::Reference;
use pat_recon::pdhg::{solve, PdhgConfig};
use pat_recon::{approximate_inverse, InverseMode, Result};

fn main() -> Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.recon_n = 64;
    cfg.noise_level = 0.1;
    let setup = Setup::new(&cfg)?;
    let sim = simulate(&setup, &cfg)?;
    let reference = Reference::full(sim.ground_truth.clone())?;

    let z = approximate_inverse(&sim.noisy, &setup.op, InverseMode::NormalizedAdjoint)?;
    let (p0, s0) = reference.psnr_ssim(&z)?;
    println!("initial guess: psnr {p0:.2} dB, ssim {s0:.3}");

    for alpha in [1e-4, 1e-3, 1e-2] {
        let config = PdhgConfig { alpha, max_iter: 300, record_metrics_every: 25, ..Default::default() };
        let (f, rec) = solve(&sim.noisy, &setup.op, &config, Some(&reference))?;
        let (p, s) = reference.psnr_ssim(&f)?;
        println!(
            "alpha {alpha:e}: psnr {p:.2} dB, ssim {s:.3}, {} iterations{}",
            rec.iterations_run,
            if rec.converged { " (converged)" } else { "" }
        );
    }
    Ok(())
}
