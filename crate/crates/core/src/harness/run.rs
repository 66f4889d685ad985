use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::config::{ExperimentConfig, Method};
use super::noise::{add_relative_noise, measured_noise_level};
use super::phantom::{block_average, default_ring_radius, make_phantom_within, SUPPORT_FRACTION};
use super::rawio::{write_pgm, write_raw};
use crate::dipnet::{dip_reconstruct_multi, SelectionMode};
use crate::error::{Error, Result};
use crate::geometry::{make_ring, subsample_arc, DetectorRing, Grid, TimeAxis};
use crate::iqa::{roi_from_gt, MetricsReport, Reference, RoiMask};
use crate::pdhg::{self, RunRecord};
use crate::waveop::{approximate_inverse, simulate_data, ForwardOperator, Image, TimeSeries};

/// Grids, geometry and operators derived from a config.
#[derive(Debug)]
pub struct Setup {
    pub grid: Grid,
    pub fine_grid: Grid,
    pub ring: DetectorRing,
    pub time: TimeAxis,
    pub op: ForwardOperator,
    pub fine_op: ForwardOperator,
}

impl Setup {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let grid = Grid::new(
            config.recon_n,
            config.recon_n,
            config.pixel_size,
            config.sound_speed,
            config.pad_factor,
        )?;
        let fine_grid = grid.refined(config.fine_factor)?;
        let radius = config.ring_radius.unwrap_or_else(|| default_ring_radius(&grid));
        let full = make_ring(radius, config.ring_elements, config.ring_arc_deg, config.ring_center_deg)?;
        let ring = subsample_arc(&full, config.n_active)?;
        let time = match (config.time_samples, config.time_step) {
            (None, None) => TimeAxis::for_ring(&grid, radius)?,
            (n, dt) => {
                let auto = TimeAxis::for_ring(&grid, radius)?;
                TimeAxis::new(n.unwrap_or(auto.n_t), dt.unwrap_or(auto.dt))?
            }
        };
        let op = ForwardOperator::new(grid, ring.clone(), time)?;
        let fine_op = ForwardOperator::new(fine_grid, ring.clone(), time)?;
        Ok(Self { grid, fine_grid, ring, time, op, fine_op })
    }

    /// Phantom on the simulation grid.
    pub fn phantom_fine(&self, config: &ExperimentConfig) -> Image {
        make_phantom_within(
            &self.fine_grid,
            config.phantom,
            config.seed_phantom,
            SUPPORT_FRACTION * self.ring.radius,
        )
    }
}

/// Ground truth and data of one experiment.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub phantom_fine: Image,
    /// Phantom averaged onto the reconstruction grid.
    pub ground_truth: Image,
    pub clean: TimeSeries,
    pub noisy: TimeSeries,
    pub noise_measured: f64,
}

pub fn simulate(setup: &Setup, config: &ExperimentConfig) -> Result<Simulation> {
    let phantom_fine = setup.phantom_fine(config);
    let ground_truth = block_average(&phantom_fine, config.fine_factor)?;
    let clean = simulate_data(&phantom_fine, &setup.fine_op, &setup.op)?;
    let active: Vec<bool> = setup.ring.active.clone();
    let noisy = add_relative_noise(&clean, config.noise_level, config.seed_noise, &active)?;
    let noise_measured = if config.noise_level == 0.0 {
        0.0
    } else {
        measured_noise_level(&noisy, &clean)
    };
    Ok(Simulation { phantom_fine, ground_truth, clean, noisy, noise_measured })
}

/// One line of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub selection: String,
    pub report: MetricsReport,
    pub iterations: usize,
    pub seconds: Option<f64>,
}

/// What [`run_experiment`] wrote and measured.
#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub dir: PathBuf,
    pub rows: Vec<MetricsRow>,
    pub noise_measured: f64,
    pub coverage_deg: f64,
    pub tv_record: Option<RunRecord>,
    pub dip_record: Option<RunRecord>,
}

impl ExperimentSummary {
    pub fn row(&self, method: &str, selection: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.method == method && r.selection == selection)
    }
}

/// Formats a float for CSV: shortest round-trip form, `nan`, `inf`, `-inf`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

fn psnr_text(m: &MetricsReport) -> String {
    if m.psnr_infinite {
        "inf".into()
    } else {
        fmt_f64(m.psnr)
    }
}

pub const METRICS_HEADER: &str =
    "method,selection,psnr_db,ssim,cc,haarpsi,iterations,seconds,noise_measured,coverage_deg";

fn metrics_csv(rows: &[MetricsRow], noise: f64, coverage: f64) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.method,
            r.selection,
            psnr_text(&r.report),
            fmt_f64(r.report.ssim),
            fmt_f64(r.report.cc),
            fmt_f64(r.report.haarpsi),
            r.iterations,
            r.seconds.map_or(String::new(), fmt_f64),
            fmt_f64(noise),
            fmt_f64(coverage),
        );
    }
    s
}

/// Per-iteration history table of a solver run.
pub fn history_csv(rec: &RunRecord) -> String {
    let ergodic = !rec.ergodic_objective.is_empty();
    let mut s = String::from("iteration,objective,psnr,ssim,rel_change");
    if ergodic {
        s.push_str(",ergodic_objective");
    }
    s.push('\n');
    let get = |v: &Vec<f64>, i: usize| v.get(i).copied().map_or(String::new(), fmt_f64);
    for i in 0..rec.objective.len() {
        let _ = write!(
            s,
            "{},{},{},{},{}",
            i,
            fmt_f64(rec.objective[i]),
            get(&rec.psnr, i),
            get(&rec.ssim, i),
            get(&rec.rel_change, i)
        );
        if ergodic {
            let _ = write!(s, ",{}", get(&rec.ergodic_objective, i));
        }
        s.push('\n');
    }
    s
}

fn save_image(dir: &Path, name: &str, img: &Image) -> Result<()> {
    write_raw(&dir.join(format!("{name}.raw")), img)?;
    write_pgm(&dir.join(format!("{name}.pgm")), img)
}

fn staging_dir(out: &Path) -> PathBuf {
    let name = out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    out.with_file_name(format!(".{name}.partial"))
}

/// Runs `body` against a scratch directory that replaces `out` only on
/// success; on failure nothing is left behind.
fn staged<T>(out: &Path, body: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let stage = staging_dir(out);
    if stage.exists() {
        fs::remove_dir_all(&stage)?;
    }
    fs::create_dir(&stage)?;
    match body(&stage) {
        Ok(v) => {
            if out.exists() {
                fs::remove_dir_all(out)?;
            }
            fs::rename(&stage, out)?;
            Ok(v)
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&stage);
            Err(e)
        }
    }
}

fn roi_for(config: &ExperimentConfig, gt: &Image) -> Result<RoiMask> {
    match config.roi_threshold {
        None => Ok(RoiMask::full(gt.dim())),
        Some(t) => roi_from_gt(gt, t),
    }
}

/// Phantom → data → noise → initial guess → reconstructions → metrics, with
/// every artifact written under `config.output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    let setup = Setup::new(config)?;
    let out = config.output_dir.clone();
    staged(&out, |dir| run_in(config, &setup, dir, &out))
}

fn run_in(config: &ExperimentConfig, setup: &Setup, dir: &Path, out: &Path) -> Result<ExperimentSummary> {
    let sim = simulate(setup, config)?;
    let gt = &sim.ground_truth;
    let roi = roi_for(config, gt)?;
    let reference = Reference::new(gt.clone(), roi)?;
    let timer = |t: Instant| config.record_timing.then(|| t.elapsed().as_secs_f64());

    save_image(dir, "ground_truth", gt)?;
    write_raw(&dir.join("data.raw"), &sim.noisy)?;

    let t0 = Instant::now();
    let z = approximate_inverse(&sim.noisy, &setup.op, config.inverse_mode)?;
    let z_secs = timer(t0);
    save_image(dir, "initial", &z)?;
    let mut rows = vec![MetricsRow {
        method: "initial".into(),
        selection: "none".into(),
        report: reference.evaluate(&z)?,
        iterations: 0,
        seconds: z_secs,
    }];

    let mut dip_record = None;
    if config.method.runs_dip() {
        let t0 = Instant::now();
        let dc = config.dip_config();
        let modes = [
            SelectionMode::ConvergedPsnr { burn_in: config.dip_burn_in },
            SelectionMode::FixedCutoff,
        ];
        let outcome = dip_reconstruct_multi(
            &sim.noisy,
            &z,
            &setup.op,
            &dc,
            &config.unet_config(),
            Some(&reference),
            &modes,
        )?;
        let secs = timer(t0);
        let mut picks = vec![(
            "early_stop",
            outcome.record.selected.expect("selected"),
            outcome.image.clone(),
        )];
        for p in &outcome.picks {
            let label = match p.mode {
                SelectionMode::ConvergedPsnr { .. } => "converged",
                SelectionMode::FixedCutoff => "cutoff",
                SelectionMode::EarlyStopPsnr => "early_stop",
            };
            picks.push((label, p.index, p.image.clone()));
        }
        for (label, index, img) in picks {
            save_image(dir, &format!("dip_{label}"), &img)?;
            rows.push(MetricsRow {
                method: "dip".into(),
                selection: label.into(),
                report: reference.evaluate(&img)?,
                iterations: index,
                seconds: secs,
            });
        }
        fs::write(dir.join("history_dip.csv"), history_csv(&outcome.record))?;
        dip_record = Some(outcome.record);
    }

    let mut tv_record = None;
    if config.method.runs_tv() {
        let t0 = Instant::now();
        let pc = config.pdhg_config(z.mean().unwrap_or(0.0));
        let (f, rec) = pdhg::solve(&sim.noisy, &setup.op, &pc, Some(&reference))?;
        let secs = timer(t0);
        save_image(dir, "tv", &f)?;
        rows.push(MetricsRow {
            method: "tv".into(),
            selection: if rec.converged { "converged" } else { "max_iter" }.into(),
            report: reference.evaluate(&f)?,
            iterations: rec.iterations_run,
            seconds: secs,
        });
        fs::write(dir.join("history_tv.csv"), history_csv(&rec))?;
        tv_record = Some(rec);
    }

    let coverage = setup.ring.coverage_deg();
    fs::write(dir.join("metrics.csv"), metrics_csv(&rows, sim.noise_measured, coverage))?;
    fs::write(dir.join("config.echo"), config.echo())?;
    Ok(ExperimentSummary {
        dir: out.to_path_buf(),
        rows,
        noise_measured: sim.noise_measured,
        coverage_deg: coverage,
        tv_record,
        dip_record,
    })
}

/// Runs every (noise level, active count) pair in its own subdirectory and
/// collects all metrics rows in `sweep.csv`.
pub fn sweep(config: &ExperimentConfig, noise_levels: &[f64], n_actives: &[usize]) -> Result<Vec<ExperimentSummary>> {
    if noise_levels.is_empty() || n_actives.is_empty() {
        return Err(Error::Config("sweep needs at least one noise level and one detector count".into()));
    }
    let root = config.output_dir.clone();
    fs::create_dir_all(&root)?;
    let mut summaries = Vec::new();
    let mut table = format!("noise_level,n_active,{METRICS_HEADER}\n");
    for &eta in noise_levels {
        for &n in n_actives {
            let mut c = config.clone();
            c.noise_level = eta;
            c.n_active = n;
            c.output_dir = root.join(format!("eta{eta}_n{n}"));
            let s = run_experiment(&c)?;
            let body = metrics_csv(&s.rows, s.noise_measured, s.coverage_deg);
            for line in body.lines().skip(1) {
                let _ = writeln!(table, "{},{},{}", fmt_f64(eta), n, line);
            }
            summaries.push(s);
        }
    }
    fs::write(root.join("sweep.csv"), table)?;
    Ok(summaries)
}

/// Regularisation weight tuned by [`grid_search`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchParam {
    /// TV weight of the primal-dual solver.
    Alpha,
    /// TV weight inside the DIP loss.
    Lambda,
}

impl SearchParam {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SearchParam::Alpha),
            "lambda" => Ok(SearchParam::Lambda),
            _ => Err(Error::Config(format!("grid search parameter must be alpha or lambda, got '{s}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SearchParam::Alpha => "alpha",
            SearchParam::Lambda => "lambda",
        }
    }
}

/// One row of `grid_search.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchRow {
    pub value: f64,
    pub row: MetricsRow,
    pub best: bool,
}

pub const SEARCH_HEADER: &str = "param,value,method,selection,psnr_db,ssim,cc,haarpsi,best";

/// Runs the experiment once per value and flags the highest-PSNR row.
pub fn grid_search(config: &ExperimentConfig, param: SearchParam, values: &[f64]) -> Result<Vec<SearchRow>> {
    if values.is_empty() {
        return Err(Error::Config("grid search needs at least one value".into()));
    }
    let root = config.output_dir.clone();
    fs::create_dir_all(&root)?;
    let (method, key) = match param {
        SearchParam::Alpha => (Method::Tv, "tv"),
        SearchParam::Lambda => (Method::Dip, "dip"),
    };
    let mut rows = Vec::with_capacity(values.len());
    for (k, &v) in values.iter().enumerate() {
        let mut c = config.clone();
        c.method = method;
        match param {
            SearchParam::Alpha => c.tv_alpha = v,
            SearchParam::Lambda => c.dip_lambda = v,
        }
        c.output_dir = root.join(format!("{}_{k}", param.name()));
        let s = run_experiment(&c)?;
        let row = s
            .rows
            .iter()
            .find(|r| r.method == key && (key == "tv" || r.selection == "early_stop"))
            .cloned()
            .expect("method row present");
        rows.push(SearchRow { value: v, row, best: false });
    }
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.row.report.psnr > rows[best].row.report.psnr {
            best = i;
        }
    }
    rows[best].best = true;
    let mut table = format!("{SEARCH_HEADER}\n");
    for r in &rows {
        let m = &r.row.report;
        let _ = writeln!(
            table,
            "{},{},{},{},{},{},{},{},{}",
            param.name(),
            fmt_f64(r.value),
            r.row.method,
            r.row.selection,
            psnr_text(m),
            fmt_f64(m.ssim),
            fmt_f64(m.cc),
            fmt_f64(m.haarpsi),
            u8::from(r.best)
        );
    }
    fs::write(root.join("grid_search.csv"), table)?;
    Ok(rows)
}
