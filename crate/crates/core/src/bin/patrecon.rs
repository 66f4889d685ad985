use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pat_recon::dipnet::{dip_reconstruct, SelectionMode};
use pat_recon::harness::{
    block_average, fmt_f64, grid_search, history_csv, read_raw_image, run_experiment, simulate,
    sweep, write_pgm, write_raw, ExperimentConfig, Method, SearchParam, Setup,
};
use pat_recon::iqa::{evaluate, roi_from_gt, RoiMask};
use pat_recon::{approximate_inverse, pdhg, Error, Result};

#[derive(Parser)]
#[command(name = "patrecon", version, about = "Limited-view photoacoustic reconstruction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// key = value config file
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set noise.level=0.2`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed_phantom: Option<u64>,
    #[arg(long)]
    seed_noise: Option<u64>,
    #[arg(long)]
    seed_network: Option<u64>,
    /// Output directory (`output.dir`)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the ground-truth phantom.
    Phantom(Common),
    /// Write phantom, clean and noisy detector data.
    Simulate(Common),
    /// TV reconstruction, from `--data` or a fresh simulation.
    ReconTv(Recon),
    /// DIP reconstruction, from `--data` or a fresh simulation.
    ReconDip(Recon),
    /// Print metrics of an image against a reference.
    Evaluate(Evaluate),
    /// Run the experiment for every noise level and detector count.
    Sweep(Sweep),
    /// Tune alpha (TV) or lambda (DIP) by PSNR.
    GridSearch(GridSearch),
}

#[derive(Args)]
struct Recon {
    #[command(flatten)]
    common: Common,
    /// Measured data as a raw field file
    #[arg(long)]
    data: Option<PathBuf>,
    /// Reference image for metrics and PSNR-based selection
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Args)]
struct Evaluate {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// Score only pixels above this fraction of the reference maximum
    #[arg(long)]
    roi_threshold: Option<f64>,
}

#[derive(Args)]
struct Sweep {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2")]
    noise: Vec<f64>,
    /// Active detector counts; defaults to the configured count
    #[arg(long, value_delimiter = ',')]
    active: Vec<usize>,
}

#[derive(Args)]
struct GridSearch {
    #[command(flatten)]
    common: Common,
    /// alpha or lambda
    #[arg(long)]
    param: String,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply_overrides(&c.set)?;
    if let Some(s) = c.seed_phantom {
        cfg.seed_phantom = s;
    }
    if let Some(s) = c.seed_noise {
        cfg.seed_noise = s;
    }
    if let Some(s) = c.seed_network {
        cfg.seed_network = s;
    }
    if let Some(o) = &c.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn save(dir: &Path, name: &str, img: &ndarray::Array2<f64>) -> Result<()> {
    write_raw(&dir.join(format!("{name}.raw")), img)?;
    write_pgm(&dir.join(format!("{name}.pgm")), img)
}

fn phantom(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let setup = Setup::new(&cfg)?;
    let fine = setup.phantom_fine(&cfg);
    let gt = block_average(&fine, cfg.fine_factor)?;
    fs::create_dir_all(&cfg.output_dir)?;
    save(&cfg.output_dir, "ground_truth", &gt)?;
    write_raw(&cfg.output_dir.join("phantom_fine.raw"), &fine)?;
    println!("wrote {}", cfg.output_dir.display());
    Ok(())
}

fn simulate_cmd(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let setup = Setup::new(&cfg)?;
    let sim = simulate(&setup, &cfg)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    save(dir, "ground_truth", &sim.ground_truth)?;
    write_raw(&dir.join("clean.raw"), &sim.clean)?;
    write_raw(&dir.join("data.raw"), &sim.noisy)?;
    fs::write(dir.join("config.echo"), cfg.echo())?;
    println!(
        "wrote {} (noise {}, coverage {} deg)",
        dir.display(),
        fmt_f64(sim.noise_measured),
        fmt_f64(setup.ring.coverage_deg())
    );
    Ok(())
}

fn print_rows(summary: &pat_recon::harness::ExperimentSummary) {
    for r in &summary.rows {
        println!(
            "{:<8} {:<11} psnr {:>8.3} dB  ssim {:.4}  iterations {}",
            r.method, r.selection, r.report.psnr, r.report.ssim, r.iterations
        );
    }
}

fn recon(args: &Recon, method: Method) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    cfg.method = method;
    let Some(data_path) = &args.data else {
        let summary = run_experiment(&cfg)?;
        print_rows(&summary);
        return Ok(());
    };
    let setup = Setup::new(&cfg)?;
    let g = read_raw_image(data_path)?;
    let reference = match &args.reference {
        Some(p) => {
            let gt = read_raw_image(p)?;
            let roi = match cfg.roi_threshold {
                Some(t) => roi_from_gt(&gt, t)?,
                None => RoiMask::full(gt.dim()),
            };
            Some(pat_recon::iqa::Reference::new(gt, roi)?)
        }
        None => None,
    };
    let z = approximate_inverse(&g, &setup.op, cfg.inverse_mode)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    save(dir, "initial", &z)?;
    let (name, image, record) = if method == Method::Tv {
        let pc = cfg.pdhg_config(z.mean().unwrap_or(0.0));
        let (f, rec) = pdhg::solve(&g, &setup.op, &pc, reference.as_ref())?;
        ("tv", f, rec)
    } else {
        let mut dc = cfg.dip_config();
        if reference.is_none() {
            dc.selection = SelectionMode::FixedCutoff;
        }
        let out = dip_reconstruct(&g, &z, &setup.op, &dc, &cfg.unet_config(), reference.as_ref())?;
        ("dip", out.image, out.record)
    };
    save(dir, name, &image)?;
    fs::write(dir.join(format!("history_{name}.csv")), history_csv(&record))?;
    fs::write(dir.join("config.echo"), cfg.echo())?;
    if let Some(r) = &reference {
        let m = r.evaluate(&image)?;
        println!("{name}: psnr {:.3} dB  ssim {:.4}", m.psnr, m.ssim);
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn evaluate_cmd(args: &Evaluate) -> Result<()> {
    let rec = read_raw_image(&args.image)?;
    let gt = read_raw_image(&args.reference)?;
    let roi = match args.roi_threshold {
        Some(t) => roi_from_gt(&gt, t)?,
        None => RoiMask::full(gt.dim()),
    };
    let m = evaluate(&rec, &gt, &roi)?;
    let psnr = if m.psnr_infinite { "inf".to_string() } else { fmt_f64(m.psnr) };
    println!("psnr_db,ssim,cc,haarpsi");
    println!("{},{},{},{}", psnr, fmt_f64(m.ssim), fmt_f64(m.cc), fmt_f64(m.haarpsi));
    Ok(())
}

fn sweep_cmd(args: &Sweep) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let active = if args.active.is_empty() { vec![cfg.n_active] } else { args.active.clone() };
    let runs = sweep(&cfg, &args.noise, &active)?;
    println!("{} runs, summary in {}", runs.len(), cfg.output_dir.join("sweep.csv").display());
    Ok(())
}

fn grid_search_cmd(args: &GridSearch) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let param = SearchParam::parse(&args.param)?;
    let rows = grid_search(&cfg, param, &args.values)?;
    for r in &rows {
        println!(
            "{} = {}: psnr {:.3} dB{}",
            param.name(),
            fmt_f64(r.value),
            r.row.report.psnr,
            if r.best { "  <- best" } else { "" }
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Phantom(c) => phantom(c),
        Command::Simulate(c) => simulate_cmd(c),
        Command::ReconTv(a) => recon(a, Method::Tv),
        Command::ReconDip(a) => recon(a, Method::Dip),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::GridSearch(a) => grid_search_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(Error::exit_code(&e) as u8)
        }
    }
}
