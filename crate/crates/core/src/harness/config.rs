use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::phantom::PhantomKind;
use crate::dipnet::{DipConfig, Head, MeanPenalty, SelectionMode, UNetConfig};
use crate::error::{Error, Result};
use crate::pdhg::PdhgConfig;
use crate::variational::PrimalVariant;
use crate::waveop::InverseMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    Tv,
    Dip,
    #[default]
    Both,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Tv => "tv",
            Method::Dip => "dip",
            Method::Both => "both",
        }
    }

    pub fn runs_tv(&self) -> bool {
        matches!(self, Method::Tv | Method::Both)
    }

    pub fn runs_dip(&self) -> bool {
        matches!(self, Method::Dip | Method::Both)
    }
}

fn inverse_name(m: InverseMode) -> &'static str {
    match m {
        InverseMode::NormalizedAdjoint => "normalized_adjoint",
        InverseMode::TimeReversal => "time_reversal",
    }
}

/// Everything needed to reproduce one experiment.
///
/// Optional fields print as `auto` and resolve from the geometry or data.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Reconstruction grid side.
    pub recon_n: usize,
    /// Simulation grid side = `recon_n · fine_factor`.
    pub fine_factor: usize,
    /// Reconstruction pixel pitch in meters.
    pub pixel_size: f64,
    pub sound_speed: f64,
    pub pad_factor: usize,
    pub ring_radius: Option<f64>,
    pub ring_elements: usize,
    pub ring_arc_deg: f64,
    pub ring_center_deg: f64,
    pub n_active: usize,
    pub time_samples: Option<usize>,
    pub time_step: Option<f64>,
    pub noise_level: f64,
    pub seed_phantom: u64,
    pub seed_noise: u64,
    pub seed_network: u64,
    pub phantom: PhantomKind,
    pub method: Method,
    pub inverse_mode: InverseMode,
    /// `None` scores the whole image; otherwise pixels above this fraction of
    /// the ground-truth maximum.
    pub roi_threshold: Option<f64>,
    pub tv_alpha: f64,
    pub tv_max_iter: usize,
    pub tv_tol: f64,
    pub tv_step_ratio: f64,
    pub tv_mean_penalty: bool,
    pub tv_mu: f64,
    pub tv_m0: Option<f64>,
    pub tv_record_every: usize,
    pub dip_lambda: f64,
    pub dip_lr0: f64,
    pub dip_max_iter: usize,
    pub dip_burn_in: usize,
    pub dip_tv_eps: Option<f64>,
    pub dip_mean_penalty: bool,
    pub dip_mu: f64,
    pub dip_m0: Option<f64>,
    pub dip_channels: Vec<usize>,
    pub dip_head: Head,
    pub dip_norm_eps: f64,
    pub dip_adam_beta1: f64,
    pub dip_adam_beta2: f64,
    pub dip_adam_eps: f64,
    pub output_dir: PathBuf,
    /// Wall-clock seconds in `metrics.csv`; off by default so reruns are
    /// byte-identical.
    pub record_timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let dip = DipConfig::default();
        let unet = UNetConfig::default();
        Self {
            recon_n: 128,
            fine_factor: 2,
            pixel_size: 1e-4,
            sound_speed: 1500.0,
            pad_factor: 2,
            ring_radius: None,
            ring_elements: 128,
            ring_arc_deg: 270.0,
            ring_center_deg: 270.0,
            n_active: 128,
            time_samples: None,
            time_step: None,
            noise_level: 0.1,
            seed_phantom: 1,
            seed_noise: 2,
            seed_network: 3,
            phantom: PhantomKind::Disks,
            method: Method::Both,
            inverse_mode: InverseMode::NormalizedAdjoint,
            roi_threshold: None,
            tv_alpha: 1e-3,
            tv_max_iter: 1000,
            tv_tol: 1e-4,
            tv_step_ratio: 1.0,
            tv_mean_penalty: false,
            tv_mu: 1.0,
            tv_m0: None,
            tv_record_every: 1,
            dip_lambda: 0.0,
            dip_lr0: dip.lr0,
            dip_max_iter: dip.max_iter,
            dip_burn_in: 40,
            dip_tv_eps: None,
            dip_mean_penalty: false,
            dip_mu: 1.0,
            dip_m0: None,
            dip_channels: unet.channels,
            dip_head: unet.head,
            dip_norm_eps: unet.norm_eps,
            dip_adam_beta1: dip.adam_betas.0,
            dip_adam_beta2: dip.adam_betas.1,
            dip_adam_eps: dip.adam_eps,
            output_dir: PathBuf::from("out"),
            record_timing: false,
        }
    }
}

fn bad(key: &str, value: &str, what: &str) -> Error {
    Error::Config(format!("{key}: cannot parse '{value}' as {what}"))
}

fn p_usize(key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| bad(key, v, "a non-negative integer"))
}

fn p_u64(key: &str, v: &str) -> Result<u64> {
    v.parse().map_err(|_| bad(key, v, "a non-negative integer"))
}

fn p_f64(key: &str, v: &str) -> Result<f64> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(bad(key, v, "a finite number")),
    }
}

fn p_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(bad(key, v, "a boolean")),
    }
}

fn is_auto(v: &str) -> bool {
    v.eq_ignore_ascii_case("auto") || v.eq_ignore_ascii_case("none")
}

fn show_opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".to_string(), |x| x.to_string())
}

impl ExperimentConfig {
    /// Every recognised key, in echo order.
    pub const KEYS: &'static [&'static str] = &[
        "grid.n",
        "grid.fine_factor",
        "grid.dx",
        "grid.c",
        "grid.pad",
        "ring.radius",
        "ring.elements",
        "ring.arc_deg",
        "ring.center_deg",
        "ring.active",
        "time.samples",
        "time.dt",
        "noise.level",
        "seed.phantom",
        "seed.noise",
        "seed.network",
        "phantom.kind",
        "method",
        "inverse.mode",
        "roi.threshold",
        "tv.alpha",
        "tv.max_iter",
        "tv.tol",
        "tv.step_ratio",
        "tv.mean_penalty",
        "tv.mu",
        "tv.m0",
        "tv.record_every",
        "dip.lambda",
        "dip.lr0",
        "dip.max_iter",
        "dip.burn_in",
        "dip.tv_eps",
        "dip.mean_penalty",
        "dip.mu",
        "dip.m0",
        "dip.channels",
        "dip.head",
        "dip.norm_eps",
        "dip.adam_beta1",
        "dip.adam_beta2",
        "dip.adam_eps",
        "output.dir",
        "output.record_timing",
    ];

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let k = key.trim();
        macro_rules! opt {
            ($parse:expr) => {
                if is_auto(v) {
                    None
                } else {
                    Some($parse(k, v)?)
                }
            };
        }
        match k {
            "grid.n" => self.recon_n = p_usize(k, v)?,
            "grid.fine_factor" => self.fine_factor = p_usize(k, v)?,
            "grid.dx" => self.pixel_size = p_f64(k, v)?,
            "grid.c" => self.sound_speed = p_f64(k, v)?,
            "grid.pad" => self.pad_factor = p_usize(k, v)?,
            "ring.radius" => self.ring_radius = opt!(p_f64),
            "ring.elements" => self.ring_elements = p_usize(k, v)?,
            "ring.arc_deg" => self.ring_arc_deg = p_f64(k, v)?,
            "ring.center_deg" => self.ring_center_deg = p_f64(k, v)?,
            "ring.active" => self.n_active = p_usize(k, v)?,
            "time.samples" => self.time_samples = opt!(p_usize),
            "time.dt" => self.time_step = opt!(p_f64),
            "noise.level" => self.noise_level = p_f64(k, v)?,
            "seed.phantom" => self.seed_phantom = p_u64(k, v)?,
            "seed.noise" => self.seed_noise = p_u64(k, v)?,
            "seed.network" => self.seed_network = p_u64(k, v)?,
            "phantom.kind" => self.phantom = PhantomKind::parse(v)?,
            "method" => {
                self.method = match v {
                    "tv" => Method::Tv,
                    "dip" => Method::Dip,
                    "both" => Method::Both,
                    _ => return Err(bad(k, v, "tv, dip or both")),
                }
            }
            "inverse.mode" => {
                self.inverse_mode = match v {
                    "normalized_adjoint" | "adjoint" => InverseMode::NormalizedAdjoint,
                    "time_reversal" => InverseMode::TimeReversal,
                    _ => return Err(bad(k, v, "normalized_adjoint or time_reversal")),
                }
            }
            "roi.threshold" => {
                self.roi_threshold = if is_auto(v) || v == "full" { None } else { Some(p_f64(k, v)?) }
            }
            "tv.alpha" => self.tv_alpha = p_f64(k, v)?,
            "tv.max_iter" => self.tv_max_iter = p_usize(k, v)?,
            "tv.tol" => self.tv_tol = p_f64(k, v)?,
            "tv.step_ratio" => self.tv_step_ratio = p_f64(k, v)?,
            "tv.mean_penalty" => self.tv_mean_penalty = p_bool(k, v)?,
            "tv.mu" => self.tv_mu = p_f64(k, v)?,
            "tv.m0" => self.tv_m0 = opt!(p_f64),
            "tv.record_every" => self.tv_record_every = p_usize(k, v)?,
            "dip.lambda" => self.dip_lambda = p_f64(k, v)?,
            "dip.lr0" => self.dip_lr0 = p_f64(k, v)?,
            "dip.max_iter" => self.dip_max_iter = p_usize(k, v)?,
            "dip.burn_in" => self.dip_burn_in = p_usize(k, v)?,
            "dip.tv_eps" => self.dip_tv_eps = opt!(p_f64),
            "dip.mean_penalty" => self.dip_mean_penalty = p_bool(k, v)?,
            "dip.mu" => self.dip_mu = p_f64(k, v)?,
            "dip.m0" => self.dip_m0 = opt!(p_f64),
            "dip.channels" => {
                self.dip_channels = v
                    .split(',')
                    .map(|s| p_usize(k, s.trim()))
                    .collect::<Result<_>>()?
            }
            "dip.head" => self.dip_head = Head::parse(v)?,
            "dip.norm_eps" => self.dip_norm_eps = p_f64(k, v)?,
            "dip.adam_beta1" => self.dip_adam_beta1 = p_f64(k, v)?,
            "dip.adam_beta2" => self.dip_adam_beta2 = p_f64(k, v)?,
            "dip.adam_eps" => self.dip_adam_eps = p_f64(k, v)?,
            "output.dir" => self.output_dir = PathBuf::from(v),
            "output.record_timing" => self.record_timing = p_bool(k, v)?,
            _ => return Err(Error::Config(format!("unknown key '{k}'"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    /// Defaults overlaid with `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies `key=value` overrides on top of the current values.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{o}' is not key=value")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    fn value_of(&self, key: &str) -> String {
        match key {
            "grid.n" => self.recon_n.to_string(),
            "grid.fine_factor" => self.fine_factor.to_string(),
            "grid.dx" => self.pixel_size.to_string(),
            "grid.c" => self.sound_speed.to_string(),
            "grid.pad" => self.pad_factor.to_string(),
            "ring.radius" => show_opt(&self.ring_radius),
            "ring.elements" => self.ring_elements.to_string(),
            "ring.arc_deg" => self.ring_arc_deg.to_string(),
            "ring.center_deg" => self.ring_center_deg.to_string(),
            "ring.active" => self.n_active.to_string(),
            "time.samples" => show_opt(&self.time_samples),
            "time.dt" => show_opt(&self.time_step),
            "noise.level" => self.noise_level.to_string(),
            "seed.phantom" => self.seed_phantom.to_string(),
            "seed.noise" => self.seed_noise.to_string(),
            "seed.network" => self.seed_network.to_string(),
            "phantom.kind" => self.phantom.name().to_string(),
            "method" => self.method.name().to_string(),
            "inverse.mode" => inverse_name(self.inverse_mode).to_string(),
            "roi.threshold" => self.roi_threshold.map_or("full".to_string(), |t| t.to_string()),
            "tv.alpha" => self.tv_alpha.to_string(),
            "tv.max_iter" => self.tv_max_iter.to_string(),
            "tv.tol" => self.tv_tol.to_string(),
            "tv.step_ratio" => self.tv_step_ratio.to_string(),
            "tv.mean_penalty" => self.tv_mean_penalty.to_string(),
            "tv.mu" => self.tv_mu.to_string(),
            "tv.m0" => show_opt(&self.tv_m0),
            "tv.record_every" => self.tv_record_every.to_string(),
            "dip.lambda" => self.dip_lambda.to_string(),
            "dip.lr0" => self.dip_lr0.to_string(),
            "dip.max_iter" => self.dip_max_iter.to_string(),
            "dip.burn_in" => self.dip_burn_in.to_string(),
            "dip.tv_eps" => show_opt(&self.dip_tv_eps),
            "dip.mean_penalty" => self.dip_mean_penalty.to_string(),
            "dip.mu" => self.dip_mu.to_string(),
            "dip.m0" => show_opt(&self.dip_m0),
            "dip.channels" => self
                .dip_channels
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(","),
            "dip.head" => self.dip_head.name().to_string(),
            "dip.norm_eps" => self.dip_norm_eps.to_string(),
            "dip.adam_beta1" => self.dip_adam_beta1.to_string(),
            "dip.adam_beta2" => self.dip_adam_beta2.to_string(),
            "dip.adam_eps" => self.dip_adam_eps.to_string(),
            "output.dir" => self.output_dir.display().to_string(),
            "output.record_timing" => self.record_timing.to_string(),
            _ => unreachable!("key table and value_of disagree on {key}"),
        }
    }

    /// Every key with its value, one `key = value` line each. Parsing the
    /// echo yields an identical config.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        for k in Self::KEYS {
            let _ = writeln!(s, "{k} = {}", self.value_of(k));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.noise_level) {
            return cfg(format!("noise.level must be in [0, 1), got {}", self.noise_level));
        }
        if self.fine_factor < 2 {
            return cfg(format!("grid.fine_factor must be >= 2, got {}", self.fine_factor));
        }
        if self.n_active == 0 || self.n_active > self.ring_elements {
            return cfg(format!(
                "ring.active must be in 1..={}, got {}",
                self.ring_elements, self.n_active
            ));
        }
        if self.dip_burn_in >= self.dip_max_iter && self.method.runs_dip() {
            return cfg(format!(
                "dip.burn_in {} must be below dip.max_iter {}",
                self.dip_burn_in, self.dip_max_iter
            ));
        }
        if let Some(t) = self.roi_threshold {
            if !(0.0..1.0).contains(&t) {
                return cfg(format!("roi.threshold must be in [0, 1), got {t}"));
            }
        }
        self.pdhg_config(0.0).validate().map_err(as_config)?;
        self.dip_config().validate().map_err(as_config)?;
        self.unet_config().validate().map_err(as_config)?;
        Ok(())
    }

    /// Solver settings; `mean_z` fills an automatic `tv.m0`.
    pub fn pdhg_config(&self, mean_z: f64) -> PdhgConfig {
        PdhgConfig {
            alpha: self.tv_alpha,
            max_iter: self.tv_max_iter,
            tol: self.tv_tol,
            step_ratio: self.tv_step_ratio,
            variant: if self.tv_mean_penalty {
                PrimalVariant::MeanPenalty {
                    mu: self.tv_mu,
                    m0: self.tv_m0.unwrap_or(mean_z),
                }
            } else {
                PrimalVariant::NonNegative
            },
            record_metrics_every: self.tv_record_every,
        }
    }

    pub fn dip_config(&self) -> DipConfig {
        DipConfig {
            lambda: self.dip_lambda,
            lr0: self.dip_lr0,
            max_iter: self.dip_max_iter,
            adam_betas: (self.dip_adam_beta1, self.dip_adam_beta2),
            adam_eps: self.dip_adam_eps,
            tv_eps: self.dip_tv_eps,
            mean_penalty: self.dip_mean_penalty.then_some(MeanPenalty {
                mu: self.dip_mu,
                m0: self.dip_m0,
            }),
            selection: SelectionMode::EarlyStopPsnr,
        }
    }

    pub fn unet_config(&self) -> UNetConfig {
        UNetConfig {
            channels: self.dip_channels.clone(),
            head: self.dip_head,
            norm_eps: self.dip_norm_eps,
            init_seed: self.seed_network,
        }
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Parameter(m) => Error::Config(m),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_is_closed() {
        let mut c = ExperimentConfig::default();
        c.apply_text("grid.n = 64\nnoise.level = 0.2 # comment\ndip.channels = 8,16\ntv.m0 = 0.25\n")
            .unwrap();
        let again = ExperimentConfig::parse(&c.echo()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.echo(), c.echo());
        assert_eq!(ExperimentConfig::default().echo().lines().count(), ExperimentConfig::KEYS.len());
    }

    #[test]
    fn overrides_win() {
        let mut c = ExperimentConfig::parse("seed.noise = 5").unwrap();
        c.apply_overrides(&["seed.noise=9"]).unwrap();
        assert_eq!(c.seed_noise, 9);
    }

    #[test]
    fn errors_are_config_errors() {
        for text in [
            "bogus = 1",
            "grid.n = -3",
            "noise.level = 1.0",
            "method = magic",
            "no equals sign",
            "grid.fine_factor = 1",
            "dip.channels = 8,4",
            "ring.active = 500",
        ] {
            let e = ExperimentConfig::parse(text).unwrap_err();
            assert!(matches!(e, Error::Config(_)), "{text}: {e:?}");
            assert_eq!(e.exit_code(), 2);
        }
    }
}
