//! Phantom, fine-grid data simulation and calibrated noise.
//!
//! `cargo run --release --example simulate_data -- [out_dir]`

use std::path::PathBuf;

use pat_recon::harness::{simulate, write_pgm, write_raw, ExperimentConfig, PhantomKind, Setup};
use pat_recon::Result;

fn main() -> Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/simulate".into()));
    std::fs::create_dir_all(&out)?;
    let mut cfg = ExperimentConfig::default();
    cfg.recon_n = 64;
    cfg.phantom = PhantomKind::AnnulusWithInclusions;
    for eta in [0.0, 0.1, 0.2] {
        cfg.noise_level = eta;
        let setup = Setup::new(&cfg)?;
        let sim = simulate(&setup, &cfg)?;
        println!(
            "eta {eta}: data {:?}, measured noise {:.15}, coverage {} deg",
            sim.noisy.dim(),
            sim.noise_measured,
            setup.ring.coverage_deg()
        );
        write_raw(&out.join(format!("data_eta{eta}.raw")), &sim.noisy)?;
        if eta == 0.0 {
            write_raw(&out.join("ground_truth.raw"), &sim.ground_truth)?;
            write_pgm(&out.join("ground_truth.pgm"), &sim.ground_truth)?;
            write_pgm(&out.join("data_clean.pgm"), &sim.clean)?;
        }
    }
    println!("files in {}", out.display());
    Ok(())
}
