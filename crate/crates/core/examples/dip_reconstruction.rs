//! Deep image prior reconstruction with the three iterate selection rules.
//!
//! `cargo run --release --example dip_reconstruction -- [iterations]`

use pat_recon::dipnet::{dip_reconstruct_multi, DipConfig, SelectionMode, UNetConfig};
use pat_recon::harness::{simulate, ExperimentConfig, Setup};
use pat_recon::iqa::Reference;
use pat_recon::{approximate_inverse, InverseMode, Result};

fn main() -> Result<()> {
    let iters = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(150);
    let mut cfg = ExperimentConfig::default();
    cfg.recon_n = 64;
    cfg.noise_level = 0.2;
    let setup = Setup::new(&cfg)?;
    let sim = simulate(&setup, &cfg)?;
    let reference = Reference::full(sim.ground_truth.clone())?;
    let z = approximate_inverse(&sim.noisy, &setup.op, InverseMode::NormalizedAdjoint)?;
    println!("initial guess: psnr {:.2} dB", reference.psnr_ssim(&z)?.0);

    let unet = UNetConfig { channels: vec![8, 16, 32, 64], init_seed: 1, ..Default::default() };
    for lambda in [0.0, 0.02] {
        let dip = DipConfig { lambda, lr0: 2e-3, max_iter: iters, ..Default::default() };
        let modes = [SelectionMode::ConvergedPsnr { burn_in: iters / 2 }, SelectionMode::FixedCutoff];
        let out = dip_reconstruct_multi(&sim.noisy, &z, &setup.op, &dip, &unet, Some(&reference), &modes)?;
        let best = out.record.selected.expect("selection");
        println!("lambda {lambda}: early stop at {best}, psnr {:.2} dB", out.record.psnr[best]);
        for p in &out.picks {
            println!("  {:<16} iterate {:>4}, psnr {:.2} dB", p.mode.name(), p.index, out.record.psnr[p.index]);
        }
    }
    Ok(())
}
