//! Configuration, presets, reports and the `qsdc` command line.
//!
//! Configuration is flat `key = value` text. A run starts from a preset (the
//! worked example unless `--preset` says otherwise), then applies a config
//! file, then `--set key=value` overrides. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::adversary::{AdversaryKind, AdversaryModel, EveMeasurement, EveNoClick};
use crate::photonics::{
    encode_phase, interference_trace, transmit_and_detect, OpticalSetupParams, Readout, SlotRecord,
    SlotTag, ValueRange,
};
use crate::protocol::{
    run_session, synthesize_pair, two_phase_transfer, Outcome, SessionConfig, SessionTranscript,
};
use crate::reconstruct::{ReconstructionOptions, DEFAULT_MATCH_THRESHOLD};
use crate::rng::{derive_seed, substream, StreamRole};
use crate::security::{
    click_probability, compensated_transmissivity, secure_pulse_rate_window, threshold_s,
    CompensationMethod, ProtocolParams, ThresholdReport,
};
use crate::signal::{signal_rms, signal_rmse, uniform_grid, BandlimitedSignal, Tone};
use crate::special::{lambert_tsallis_wq, q_exponential, WqQuery};
use crate::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "QSDC_OUT_DIR";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// μ_s=0.6, μ_r=0.4, t_c=0.6, 1/T_p=3.31·f_max, prefactor 1.
    WorkedExample,
    /// Wide secure window (μ_s=0.1, μ_r=0.03, t_c=0.62) at 1.4× the signal threshold.
    SecureWindow,
    /// μ_s=0.6, t_c=0.6 between the signal and beam-splitter thresholds.
    BeamSplitter,
    /// 1.5 MHz tone, 5 MHz pulses, μ=0.6, t_c=0.6, no decoy.
    Experiment,
}

/// Every configurable quantity.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub mu_s: f64,
    pub mu_r: f64,
    pub t_c: f64,
    pub f_max: f64,
    /// Hz. `None` picks the middle of the secure window.
    pub pulse_rate: Option<f64>,
    pub rate_prefactor: f64,
    pub f_sub: Option<f64>,
    pub setup: OpticalSetupParams,
    pub n_slots: u64,
    pub seed: u64,
    pub seeds: u64,
    pub reconstruction: ReconstructionOptions,
    pub match_threshold: f64,
    pub adversary: AdversaryKind,
    pub compensate: bool,
    pub eve_seed: u64,
    pub eve_measurement: EveMeasurement,
    pub eve_noclick: EveNoClick,
    pub two_phase: bool,
    pub signal_tones: Option<Vec<Tone>>,
    pub decoy_tones: Option<Vec<Tone>>,
    pub trace_points: usize,
    pub output_format: OutputFormat,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::preset(Preset::WorkedExample)
    }
}

fn secure_window_params() -> ProtocolParams {
    ProtocolParams::new(0.1, 0.03, 0.62, 1.0e3, 1.0).expect("preset parameters are valid")
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let base = RunConfig {
            mu_s: 0.6,
            mu_r: 0.4,
            t_c: 0.6,
            f_max: 1.0,
            pulse_rate: Some(3.31),
            rate_prefactor: 1.0,
            f_sub: None,
            setup: OpticalSetupParams::default(),
            n_slots: 10_000,
            seed: 1,
            seeds: 1,
            reconstruction: ReconstructionOptions::default(),
            match_threshold: DEFAULT_MATCH_THRESHOLD,
            adversary: AdversaryKind::None,
            compensate: false,
            eve_seed: 7,
            eve_measurement: EveMeasurement::Ideal,
            eve_noclick: EveNoClick::RandomPhase,
            two_phase: false,
            signal_tones: None,
            decoy_tones: None,
            trace_points: 181,
            output_format: OutputFormat::Json,
            output: None,
        };
        match preset {
            Preset::WorkedExample => base,
            Preset::SecureWindow => {
                let p = secure_window_params();
                let rate = 1.4 * threshold_s(&p);
                // A 401-function basis: 200 frequencies over the session.
                let n_slots = (200.0 * rate / p.f_max).ceil() as u64;
                RunConfig {
                    mu_s: p.mu_s,
                    mu_r: p.mu_r,
                    t_c: p.t_c,
                    f_max: p.f_max,
                    pulse_rate: Some(rate),
                    rate_prefactor: p.rate_prefactor,
                    n_slots,
                    ..base
                }
            }
            Preset::BeamSplitter => {
                let p = ProtocolParams::new(0.6, 0.4, 0.6, 1.0, 1.0)
                    .expect("preset parameters are valid");
                RunConfig {
                    pulse_rate: Some(1.35 * threshold_s(&p)),
                    rate_prefactor: p.rate_prefactor,
                    adversary: AdversaryKind::BeamSplitter,
                    ..base
                }
            }
            Preset::Experiment => RunConfig {
                f_max: 1.5e6,
                pulse_rate: Some(5.0e6),
                rate_prefactor: 4.0,
                mu_r: 0.3,
                n_slots: 100_000,
                signal_tones: Some(vec![Tone::new(1.5e6, 1.0, 0.0)]),
                ..base
            },
        }
    }

    /// Applies one `key = value` assignment.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let num = |v: &str| -> Result<f64> {
            v.parse::<f64>()
                .map_err(|_| Error::config(key, format!("expected a number, got `{v}`")))
        };
        let int = |v: &str| -> Result<u64> {
            v.parse::<u64>().map_err(|_| {
                Error::config(key, format!("expected a non-negative integer, got `{v}`"))
            })
        };
        let flag = |v: &str| -> Result<bool> {
            match v {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(Error::config(
                    key,
                    format!("expected true or false, got `{v}`"),
                )),
            }
        };
        let opt_num = |v: &str| -> Result<Option<f64>> {
            if v == "auto" || v == "none" {
                Ok(None)
            } else {
                num(v).map(Some)
            }
        };
        match key {
            "mu_s" => self.mu_s = num(v)?,
            "mu_r" => self.mu_r = num(v)?,
            "t_c" => self.t_c = num(v)?,
            "f_max" => self.f_max = num(v)?,
            "pulse_rate" => self.pulse_rate = opt_num(v)?,
            "t_p" => self.pulse_rate = Some(1.0 / num(v)?),
            "rate_prefactor" => self.rate_prefactor = num(v)?,
            "f_sub" => self.f_sub = opt_num(v)?,
            "alice_tap" => self.setup.alice_tap = num(v)?,
            "bob_tap" => self.setup.bob_tap = num(v)?,
            "ring_delay_tau" => self.setup.ring_delay_tau = opt_num(v)?,
            "lo_mean_photons" => self.setup.lo_mean_photons = num(v)?,
            "voa_attenuation" => self.setup.voa_attenuation = num(v)?,
            "readout_noise_sigma" => self.setup.readout_noise_sigma = num(v)?,
            "n_slots" => self.n_slots = int(v)?,
            "seed" => self.seed = int(v)?,
            "seeds" => self.seeds = int(v)?,
            "residual_tolerance" => self.reconstruction.residual_tolerance = num(v)?,
            "condition_cap" => self.reconstruction.condition_cap = num(v)?,
            "ridge" => self.reconstruction.ridge = num(v)?,
            "frequency_step" => self.reconstruction.frequency_step = opt_num(v)?,
            "max_basis" => self.reconstruction.max_basis = int(v)? as usize,
            "match_threshold" => self.match_threshold = num(v)?,
            "adversary" => {
                self.adversary = match v {
                    "none" => AdversaryKind::None,
                    "intercept-resend" => AdversaryKind::InterceptResend,
                    "beam-splitter" => AdversaryKind::BeamSplitter,
                    _ => {
                        return Err(Error::config(
                            key,
                            format!("expected none, intercept-resend or beam-splitter, got `{v}`"),
                        ))
                    }
                }
            }
            "compensate" => self.compensate = flag(v)?,
            "eve_seed" => self.eve_seed = int(v)?,
            "eve_measurement" => {
                self.eve_measurement = match v {
                    "ideal" => EveMeasurement::Ideal,
                    "click-limited" => EveMeasurement::ClickLimited,
                    _ => {
                        return Err(Error::config(
                            key,
                            format!("expected ideal or click-limited, got `{v}`"),
                        ))
                    }
                }
            }
            "eve_noclick" => {
                self.eve_noclick = match v {
                    "random-phase" => EveNoClick::RandomPhase,
                    "vacuum" => EveNoClick::Vacuum,
                    _ => {
                        return Err(Error::config(
                            key,
                            format!("expected random-phase or vacuum, got `{v}`"),
                        ))
                    }
                }
            }
            "two_phase" => self.two_phase = flag(v)?,
            "signal_tones" => self.signal_tones = parse_tones(key, v)?,
            "decoy_tones" => self.decoy_tones = parse_tones(key, v)?,
            "trace_points" => self.trace_points = int(v)? as usize,
            "output_format" => {
                self.output_format = match v {
                    "json" => OutputFormat::Json,
                    "csv" => OutputFormat::Csv,
                    _ => {
                        return Err(Error::config(
                            key,
                            format!("expected json or csv, got `{v}`"),
                        ))
                    }
                }
            }
            "output" => {
                self.output = if v.is_empty() || v == "none" {
                    None
                } else {
                    Some(PathBuf::from(v))
                }
            }
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(line, format!("line {}: expected `key = value`", lineno + 1))
            })?;
            self.apply(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Resolved configuration as ordered `(key, value)` pairs. Feeding the
    /// output of [`RunConfig::to_text`] back through [`RunConfig::apply_text`]
    /// reproduces the configuration exactly.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<f64>| v.map_or("auto".to_string(), |x| x.to_string());
        let kind = match self.adversary {
            AdversaryKind::None => "none",
            AdversaryKind::InterceptResend => "intercept-resend",
            AdversaryKind::BeamSplitter => "beam-splitter",
        };
        vec![
            ("mu_s", self.mu_s.to_string()),
            ("mu_r", self.mu_r.to_string()),
            ("t_c", self.t_c.to_string()),
            ("f_max", self.f_max.to_string()),
            ("pulse_rate", opt(self.pulse_rate)),
            ("rate_prefactor", self.rate_prefactor.to_string()),
            ("f_sub", opt(self.f_sub)),
            ("alice_tap", self.setup.alice_tap.to_string()),
            ("bob_tap", self.setup.bob_tap.to_string()),
            ("ring_delay_tau", opt(self.setup.ring_delay_tau)),
            ("lo_mean_photons", self.setup.lo_mean_photons.to_string()),
            ("voa_attenuation", self.setup.voa_attenuation.to_string()),
            (
                "readout_noise_sigma",
                self.setup.readout_noise_sigma.to_string(),
            ),
            ("n_slots", self.n_slots.to_string()),
            ("seed", self.seed.to_string()),
            ("seeds", self.seeds.to_string()),
            (
                "residual_tolerance",
                self.reconstruction.residual_tolerance.to_string(),
            ),
            (
                "condition_cap",
                self.reconstruction.condition_cap.to_string(),
            ),
            ("ridge", self.reconstruction.ridge.to_string()),
            ("frequency_step", opt(self.reconstruction.frequency_step)),
            ("max_basis", self.reconstruction.max_basis.to_string()),
            ("match_threshold", self.match_threshold.to_string()),
            ("adversary", kind.to_string()),
            ("compensate", self.compensate.to_string()),
            ("eve_seed", self.eve_seed.to_string()),
            (
                "eve_measurement",
                match self.eve_measurement {
                    EveMeasurement::Ideal => "ideal",
                    EveMeasurement::ClickLimited => "click-limited",
                }
                .to_string(),
            ),
            (
                "eve_noclick",
                match self.eve_noclick {
                    EveNoClick::RandomPhase => "random-phase",
                    EveNoClick::Vacuum => "vacuum",
                }
                .to_string(),
            ),
            ("two_phase", self.two_phase.to_string()),
            ("signal_tones", format_tones(&self.signal_tones)),
            ("decoy_tones", format_tones(&self.decoy_tones)),
            ("trace_points", self.trace_points.to_string()),
            (
                "output_format",
                match self.output_format {
                    OutputFormat::Json => "json",
                    OutputFormat::Csv => "csv",
                }
                .to_string(),
            ),
            (
                "output",
                self.output
                    .as_ref()
                    .map_or("none".to_string(), |p| p.display().to_string()),
            ),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    fn echo(&self) -> BTreeMap<String, String> {
        self.entries()
            .into_iter()
            .filter(|(k, _)| *k != "output")
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    /// Protocol parameters with the pulse rate resolved.
    pub fn protocol_params(&self) -> Result<ProtocolParams> {
        let p = ProtocolParams::new(self.mu_s, self.mu_r, self.t_c, self.f_max, 1.0)?
            .with_prefactor(self.rate_prefactor)?
            .with_f_sub(self.f_sub)?;
        let rate = match self.pulse_rate {
            Some(rate) => rate,
            None => {
                let w = secure_pulse_rate_window(&p);
                0.5 * (w.window_lo + w.window_hi)
            }
        };
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::config(
                "pulse_rate",
                format!("must be finite and > 0, got {rate}"),
            ));
        }
        p.with_pulse_rate(rate)
    }

    pub fn validate(&self) -> Result<()> {
        let params = self.protocol_params()?;
        self.setup.validate(params.t_p, params.mu_s)?;
        if self.n_slots == 0 {
            return Err(Error::config("n_slots", "must be >= 1"));
        }
        if self.seeds == 0 {
            return Err(Error::config("seeds", "must be >= 1"));
        }
        let r = &self.reconstruction;
        if !(r.residual_tolerance > 0.0) {
            return Err(Error::config("residual_tolerance", "must be > 0"));
        }
        if !(r.condition_cap > 1.0) {
            return Err(Error::config("condition_cap", "must be > 1"));
        }
        if !(r.ridge >= 0.0) {
            return Err(Error::config("ridge", "must be >= 0"));
        }
        if !(self.match_threshold > 0.0) {
            return Err(Error::config("match_threshold", "must be > 0"));
        }
        if self.compensate && self.adversary != AdversaryKind::InterceptResend {
            return Err(Error::config(
                "compensate",
                "only meaningful with adversary = intercept-resend",
            ));
        }
        for (key, tones) in [
            ("signal_tones", &self.signal_tones),
            ("decoy_tones", &self.decoy_tones),
        ] {
            if let Some(tones) = tones {
                BandlimitedSignal::new(self.f_max, tones.clone())
                    .map_err(|e| Error::config(key, e.to_string()))?;
            }
        }
        if self.trace_points < 2 {
            return Err(Error::config("trace_points", "must be >= 2"));
        }
        Ok(())
    }

    pub fn adversary_model(&self, session: u64) -> AdversaryModel {
        AdversaryModel {
            kind: self.adversary,
            compensate: self.compensate,
            eve_seed: self.eve_seed.wrapping_add(session),
            measurement: self.eve_measurement,
            noclick: self.eve_noclick,
        }
    }

    pub fn session_config(&self, session: u64) -> Result<SessionConfig> {
        let mut cfg = SessionConfig::new(
            self.protocol_params()?,
            self.n_slots,
            self.seed.wrapping_add(session),
        );
        cfg.setup = self.setup.clone();
        cfg.reconstruction = self.reconstruction.clone();
        cfg.match_threshold = self.match_threshold;
        Ok(cfg)
    }

    /// `(s, r)` for a session: configured tones where given, otherwise
    /// synthesized from the session seed.
    pub fn signals(&self, cfg: &SessionConfig) -> Result<(BandlimitedSignal, BandlimitedSignal)> {
        let synth = || synthesize_pair(cfg.seed, self.f_max, cfg.duration());
        let (s, r) = match (&self.signal_tones, &self.decoy_tones) {
            (Some(s), Some(r)) => (
                BandlimitedSignal::new(self.f_max, s.clone())?,
                BandlimitedSignal::new(self.f_max, r.clone())?,
            ),
            (Some(s), None) => (BandlimitedSignal::new(self.f_max, s.clone())?, synth()?.1),
            (None, Some(r)) => (synth()?.0, BandlimitedSignal::new(self.f_max, r.clone())?),
            (None, None) => synth()?,
        };
        Ok((s, r))
    }
}

/// Parses `f:a:phase;f:a:phase;…` (phase optional, default 0).
pub fn parse_tones(key: &str, v: &str) -> Result<Option<Vec<Tone>>> {
    if v.is_empty() || v == "none" {
        return Ok(None);
    }
    let mut tones = Vec::new();
    for part in v.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let fields: Vec<&str> = part.split(':').map(str::trim).collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(Error::config(
                key,
                format!("tone `{part}` is not `frequency:amplitude[:phase]`"),
            ));
        }
        let mut nums = [0.0; 3];
        for (slot, f) in nums.iter_mut().zip(&fields) {
            *slot = f.parse::<f64>().map_err(|_| {
                Error::config(key, format!("`{f}` in tone `{part}` is not a number"))
            })?;
        }
        tones.push(Tone::new(nums[0], nums[1], nums[2]));
    }
    Ok(Some(tones))
}

fn format_tones(tones: &Option<Vec<Tone>>) -> String {
    match tones {
        None => "none".to_string(),
        Some(t) => t
            .iter()
            .map(|t| format!("{}:{}:{}", t.frequency, t.amplitude, t.phase))
            .collect::<Vec<_>>()
            .join(";"),
    }
}

// Reports.

#[derive(Clone, Debug, Serialize)]
pub struct ThresholdPair {
    pub hz: ThresholdReport,
    pub f_max_units: ThresholdReport,
}

fn threshold_pair(p: &ProtocolParams) -> ThresholdPair {
    let hz = secure_pulse_rate_window(p);
    ThresholdPair {
        f_max_units: hz.in_fmax_units(),
        hz,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CompensationReport {
    pub closed_form: Option<f64>,
    pub numeric: Option<f64>,
    /// A compensating channel exists and is physical (`t'_c ≤ 1`).
    pub feasible: bool,
    pub note: String,
}

fn compensation_report(p: &ProtocolParams) -> CompensationReport {
    let closed = compensated_transmissivity(p, CompensationMethod::ClosedForm);
    let numeric = compensated_transmissivity(p, CompensationMethod::Numeric);
    let (feasible, note) = match (&closed, &numeric) {
        (_, Ok(t)) if *t <= 1.0 => (true, "compensating channel exists".to_string()),
        (_, Ok(t)) => (
            false,
            format!("compensation infeasible: t'_c = {t} exceeds 1"),
        ),
        (_, Err(e)) => (false, e.to_string()),
    };
    CompensationReport {
        closed_form: closed.ok(),
        numeric: numeric.ok(),
        feasible,
        note,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ThresholdsOutput {
    pub version: &'static str,
    pub command: &'static str,
    pub config: BTreeMap<String, String>,
    pub configured_prefactor: f64,
    pub configured: ThresholdPair,
    pub prefactor_1: ThresholdPair,
    pub prefactor_4: ThresholdPair,
    pub compensation: CompensationReport,
}

pub fn cmd_thresholds(cfg: &RunConfig) -> Result<ThresholdsOutput> {
    let p = cfg.protocol_params()?;
    Ok(ThresholdsOutput {
        version: VERSION,
        command: "thresholds",
        config: cfg.echo(),
        configured_prefactor: p.rate_prefactor,
        configured: threshold_pair(&p),
        prefactor_1: threshold_pair(&p.clone().with_prefactor(1.0)?),
        prefactor_4: threshold_pair(&p.clone().with_prefactor(4.0)?),
        compensation: compensation_report(&p),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SessionSummary {
    pub session: u64,
    pub seed: u64,
    pub outcome: Outcome,
    pub s_ok: bool,
    pub r_ok: bool,
    pub r_matched: bool,
    pub s_rmse_relative: Option<f64>,
    pub bob_signal_samples: usize,
    pub bob_decoy_samples: usize,
    pub basis_size: usize,
    pub eve_ok: Option<bool>,
    pub bob_channel: f64,
    pub compensation_infeasible: bool,
    /// Two-phase runs: sessions executed and the relative RMSE of `s1 + s2`.
    pub phases_run: usize,
    pub recovered_rmse_relative: Option<f64>,
}

fn summarize(session: u64, tr: &SessionTranscript, t_c: f64) -> SessionSummary {
    let eve = tr.eve_view.as_ref();
    SessionSummary {
        session,
        seed: 0,
        outcome: tr.verdict.outcome,
        s_ok: tr.s_reconstruction.ok,
        r_ok: tr.r_reconstruction.ok,
        r_matched: tr.verdict.r_matched,
        s_rmse_relative: tr.verdict.s_rmse_relative,
        bob_signal_samples: tr.bob_sample_count(SlotTag::Signal),
        bob_decoy_samples: tr.bob_sample_count(SlotTag::Decoy),
        basis_size: tr
            .s_reconstruction
            .basis_size
            .max(tr.r_reconstruction.basis_size),
        eve_ok: eve
            .and_then(|e| e.eve_reconstruction.as_ref())
            .map(|r| r.ok),
        bob_channel: eve.map_or(t_c, |e| e.effective_bob_channel),
        compensation_infeasible: eve.is_some_and(|e| e.compensation_infeasible),
        phases_run: 1,
        recovered_rmse_relative: None,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Spread {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

fn spread(values: &[f64]) -> Option<Spread> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(Spread {
        min: v[0],
        median: v[v.len() / 2],
        max: v[v.len() - 1],
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SimulateOutput {
    pub version: &'static str,
    pub command: &'static str,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub thresholds: ThresholdPair,
    pub verdict_counts: BTreeMap<&'static str, usize>,
    pub eve_successes: Option<usize>,
    pub s_rmse_relative: Option<Spread>,
    pub sessions: Vec<SessionSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
}

/// Runs one session (or one two-phase transfer) per seed offset.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<SimulateOutput> {
    cfg.validate()?;
    let params = cfg.protocol_params()?;
    let mut sessions = Vec::with_capacity(cfg.seeds as usize);
    for i in 0..cfg.seeds {
        let scfg = cfg.session_config(i)?;
        let (s, r) = cfg.signals(&scfg)?;
        let adversary = cfg.adversary_model(i);
        let mut summary = if cfg.two_phase {
            let r2 = match &cfg.decoy_tones {
                Some(_) => r.clone(),
                None => {
                    synthesize_pair(
                        derive_seed(scfg.seed, 2, StreamRole::DecoySynthesis),
                        cfg.f_max,
                        scfg.duration(),
                    )?
                    .1
                }
            };
            let out = two_phase_transfer(&scfg, &s, [&r, &r2], &adversary)?;
            let last = out.transcripts.last().expect("at least one session runs");
            let mut summary = summarize(i, last, params.t_c);
            summary.phases_run = out.transcripts.len();
            if let Some(rec) = &out.recovered {
                let grid = uniform_grid(scfg.duration(), 4096);
                let rms = signal_rms(&s, &grid)?;
                summary.recovered_rmse_relative = Some(signal_rmse(rec, &s, &grid)? / rms);
            }
            summary
        } else {
            summarize(i, &run_session(&scfg, &s, &r, &adversary)?, params.t_c)
        };
        summary.seed = scfg.seed;
        sessions.push(summary);
    }
    let mut verdict_counts: BTreeMap<&'static str, usize> = [
        Outcome::Accept,
        Outcome::AbortDecoyReconstructed,
        Outcome::AbortSignalUnrecoverable,
    ]
    .iter()
    .map(|o| (o.label(), 0))
    .collect();
    for s in &sessions {
        *verdict_counts.entry(s.outcome.label()).or_default() += 1;
    }
    let rmses: Vec<f64> = sessions.iter().filter_map(|s| s.s_rmse_relative).collect();
    let eve_successes = (cfg.adversary != AdversaryKind::None)
        .then(|| sessions.iter().filter(|s| s.eve_ok == Some(true)).count());
    Ok(SimulateOutput {
        version: VERSION,
        command: "simulate",
        config: cfg.echo(),
        seed: cfg.seed,
        thresholds: threshold_pair(&params),
        verdict_counts,
        eve_successes,
        s_rmse_relative: spread(&rmses),
        sessions,
        wall_clock_seconds: None,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceRow {
    /// `slot` for a transmitted pulse, `sweep` for the phase sweep.
    pub kind: &'static str,
    pub index: u64,
    pub time: Option<f64>,
    pub phase: f64,
    pub level: f64,
    pub clicked: Option<bool>,
    pub measured_value: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentOutput {
    pub version: &'static str,
    pub command: &'static str,
    pub config: BTreeMap<String, String>,
    pub n_slots: u64,
    pub duration_s: f64,
    pub detected: u64,
    pub detected_rate_hz: f64,
    pub expected_rate_hz: f64,
    /// Binomial standard deviation of the detected rate.
    pub rate_sigma_hz: f64,
    pub within_3_sigma: bool,
    pub signal_threshold_prefactor_4_hz: f64,
    pub signal_threshold_prefactor_1_hz: f64,
    pub reconstruction_claimed: bool,
    pub note: String,
    pub trace_path: Option<String>,
}

/// Single-stream detection of the configured tone, no decoy. Every slot
/// carries `s(t)` with mean `μ_s`.
pub fn cmd_experiment(cfg: &RunConfig) -> Result<(ExperimentOutput, Vec<TraceRow>)> {
    cfg.validate()?;
    let p = cfg.protocol_params()?;
    let tones = cfg.signal_tones.clone().ok_or_else(|| {
        Error::config("signal_tones", "the experiment needs an explicit tone list")
    })?;
    let s = BandlimitedSignal::new(cfg.f_max, tones)?;
    let peak = s.peak_bound();
    let range = ValueRange::symmetric(if peak > 0.0 { peak } else { 1.0 })?;
    let readout = Readout {
        range,
        noise_sigma: cfg.setup.readout_noise_sigma,
    };
    let weak_at_bob = p.mu_s * p.t_c;
    let mut rows = Vec::with_capacity(cfg.n_slots as usize + cfg.trace_points);
    let mut detected = 0u64;
    for i in 0..cfg.n_slots {
        let t = i as f64 * p.t_p;
        let value = s.eval(t);
        let slot = SlotRecord {
            index: i,
            emit_time: t,
            tag: SlotTag::Signal,
            sample_value: value,
            phase: encode_phase(value, &range),
            mu: p.mu_s,
            clicked: false,
            measured_value: None,
        };
        let mut rng = substream(cfg.seed, i, StreamRole::BobDetection);
        let out = transmit_and_detect(&slot, p.t_c, &readout, &mut rng);
        detected += out.clicked as u64;
        rows.push(TraceRow {
            kind: "slot",
            index: i,
            time: Some(t),
            phase: slot.phase,
            level: interference_trace(slot.phase, &cfg.setup, weak_at_bob),
            clicked: Some(out.clicked),
            measured_value: out.measured_value,
        });
    }
    for j in 0..cfg.trace_points {
        let phase = std::f64::consts::PI * j as f64 / (cfg.trace_points - 1) as f64;
        rows.push(TraceRow {
            kind: "sweep",
            index: j as u64,
            time: None,
            phase,
            level: interference_trace(phase, &cfg.setup, weak_at_bob),
            clicked: None,
            measured_value: None,
        });
    }

    let duration = cfg.n_slots as f64 * p.t_p;
    let q = click_probability(p.t_c, p.mu_s);
    let n = cfg.n_slots as f64;
    let detected_rate = detected as f64 / duration;
    let expected = p.pulse_rate() * q;
    let sigma = (n * q * (1.0 - q)).sqrt() / duration;
    let thr4 = threshold_s(&p.clone().with_prefactor(4.0)?);
    let thr1 = threshold_s(&p.clone().with_prefactor(1.0)?);
    let note =
        format!(
        "qualitative trace only: the pulse rate {:.4} MHz is below the signal threshold {:.2} MHz \
         (prefactor 4) and {} the {:.2} MHz value of prefactor 1, so no reconstruction is claimed",
        p.pulse_rate() / 1e6,
        thr4 / 1e6,
        if p.pulse_rate() > thr1 { "only marginally above" } else { "below" },
        thr1 / 1e6
    );
    Ok((
        ExperimentOutput {
            version: VERSION,
            command: "experiment",
            config: cfg.echo(),
            n_slots: cfg.n_slots,
            duration_s: duration,
            detected,
            detected_rate_hz: detected_rate,
            expected_rate_hz: expected,
            rate_sigma_hz: sigma,
            within_3_sigma: (detected_rate - expected).abs() <= 3.0 * sigma,
            signal_threshold_prefactor_4_hz: thr4,
            signal_threshold_prefactor_1_hz: thr1,
            reconstruction_claimed: false,
            note,
            trace_path: None,
        },
        rows,
    ))
}

#[derive(Clone, Debug, Serialize)]
pub struct WqOutput {
    pub q: f64,
    pub z: f64,
    pub w: f64,
    pub residual: f64,
}

pub fn cmd_wq(q: f64, z: f64) -> Result<WqOutput> {
    let w = lambert_tsallis_wq(WqQuery::new(q, z))?;
    let residual = (w * q_exponential(q, w)? - z).abs();
    Ok(WqOutput { q, z, w, residual })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    /// Channel transmissivity.
    TC,
    /// Pulse rate in Hz.
    PulseRate,
    /// Pulse rate as a multiple of the signal threshold.
    RateMultiple,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub adversary: &'static str,
    pub sessions: u64,
    pub accept: usize,
    pub abort_decoy: usize,
    pub abort_signal: usize,
    pub eve_success: usize,
}

/// Verdict rates for every attack across a parameter range.
pub fn cmd_attack_sweep(
    cfg: &RunConfig,
    param: SweepParam,
    from: f64,
    to: f64,
    steps: usize,
) -> Result<Vec<SweepRow>> {
    if steps == 0 {
        return Err(Error::config("steps", "must be >= 1"));
    }
    let scenarios: [(&'static str, AdversaryKind, bool); 4] = [
        ("none", AdversaryKind::None, false),
        ("intercept-resend", AdversaryKind::InterceptResend, false),
        (
            "intercept-resend-compensated",
            AdversaryKind::InterceptResend,
            true,
        ),
        ("beam-splitter", AdversaryKind::BeamSplitter, false),
    ];
    let mut rows = Vec::new();
    for step in 0..steps {
        let value = if steps == 1 {
            from
        } else {
            from + (to - from) * step as f64 / (steps - 1) as f64
        };
        let mut point = cfg.clone();
        match param {
            SweepParam::TC => point.t_c = value,
            SweepParam::PulseRate => point.pulse_rate = Some(value),
            SweepParam::RateMultiple => {
                let p = ProtocolParams::new(point.mu_s, point.mu_r, point.t_c, point.f_max, 1.0)?
                    .with_prefactor(point.rate_prefactor)?
                    .with_f_sub(point.f_sub)?;
                point.pulse_rate = Some(value * threshold_s(&p));
            }
        }
        for (label, kind, compensate) in scenarios {
            let run = RunConfig {
                adversary: kind,
                compensate,
                two_phase: false,
                ..point.clone()
            };
            let out = cmd_simulate(&run)?;
            rows.push(SweepRow {
                param: format!("{param:?}").to_lowercase(),
                value,
                adversary: label,
                sessions: run.seeds,
                accept: out.verdict_counts[Outcome::Accept.label()],
                abort_decoy: out.verdict_counts[Outcome::AbortDecoyReconstructed.label()],
                abort_signal: out.verdict_counts[Outcome::AbortSignalUnrecoverable.label()],
                eve_success: out.eve_successes.unwrap_or(0),
            });
        }
    }
    Ok(rows)
}

// Command line.

const CONFIG_HELP: &str = "\
Config keys (flat `key = value`, `#` comments; worked-example preset defaults):
  mu_s 0.6, mu_r 0.4, t_c 0.6, f_max 1, pulse_rate 3.31 (Hz, `auto` = window middle), t_p,
  rate_prefactor 1, f_sub auto, alice_tap 0.1, bob_tap 0.5, ring_delay_tau auto,
  lo_mean_photons 1e6, voa_attenuation 1, readout_noise_sigma 0, n_slots 10000, seed 1,
  seeds 1, residual_tolerance 1e-3, condition_cap 1e12, ridge 0, frequency_step auto (1/D),
  max_basis 4097, match_threshold 0.05, adversary none|intercept-resend|beam-splitter,
  compensate false, eve_seed 7, eve_measurement ideal|click-limited,
  eve_noclick random-phase|vacuum, two_phase false, signal_tones/decoy_tones
  `f:a:phase;...` (none = synthesized per seed), trace_points 181, output_format json|csv,
  output none.
Environment: QSDC_OUT_DIR sets the default output directory.
Exit codes: 0 run completed, 1 usage or configuration error, 2 numeric failure.";

#[derive(Debug, Parser)]
#[command(
    name = "qsdc",
    version,
    about = "Security thresholds and protocol simulation for analog signal transfer over weak coherent pulses",
    after_help = CONFIG_HELP
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct CommonArgs {
    /// Starting point before the config file and overrides [default: worked-example].
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set t_c=0.7`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output file; relative paths resolve against $QSDC_OUT_DIR when set.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    pub dump_config: bool,
    /// Include wall-clock time in the report (breaks byte reproducibility).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Threshold rates, the secure window and the compensating channel.
    Thresholds(CommonArgs),
    /// Seeded protocol sessions with verdict counts.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long, value_parser = ["none", "intercept-resend", "beam-splitter"])]
        adversary: Option<String>,
        #[arg(long)]
        compensate: bool,
        #[arg(long)]
        two_phase: bool,
    },
    /// Single-tone detection trace (CSV) and detected-sample rate.
    Experiment(CommonArgs),
    /// Evaluate the Lambert-Tsallis W_q function.
    Wq {
        #[arg(long, allow_hyphen_values = true)]
        q: f64,
        #[arg(long, allow_hyphen_values = true)]
        z: f64,
    },
    /// Verdict rates of every attack across t_c or the pulse rate.
    AttackSweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, allow_hyphen_values = true)]
        from: f64,
        #[arg(long, allow_hyphen_values = true)]
        to: f64,
        #[arg(long, default_value_t = 5)]
        steps: usize,
        #[arg(long)]
        seeds: Option<u64>,
    },
}

fn load_config(common: &CommonArgs, extra: &[(&str, String)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::preset(common.preset.unwrap_or(Preset::WorkedExample));
    if let Some(path) = &common.config {
        cfg.apply_text(&fs::read_to_string(path)?)?;
    }
    for assignment in &common.set {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(assignment, "expected KEY=VALUE"))?;
        cfg.apply(k.trim(), v)?;
    }
    for (k, v) in extra {
        cfg.apply(k, v)?;
    }
    if let Some(out) = &common.out {
        cfg.output = Some(out.clone());
    }
    if let Some(format) = common.format {
        cfg.output_format = format;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Where an artifact goes: the configured path (relative to the output
/// directory when one is set), `<dir>/<default_name>` when only the
/// directory is set, or `None` for stdout.
pub fn resolve_output(configured: Option<&Path>, default_name: &str) -> Option<PathBuf> {
    let dir = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from);
    match (configured, dir) {
        (Some(p), Some(d)) if p.is_relative() => Some(d.join(p)),
        (Some(p), _) => Some(p.to_path_buf()),
        (None, Some(d)) => Some(d.join(default_name)),
        (None, None) => None,
    }
}

fn emit(target: Option<&Path>, body: &str) -> Result<()> {
    match target {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, body)?;
        }
        None => std::io::stdout().write_all(body.as_bytes())?,
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Thresholds(common) => {
            let cfg = load_config(&common, &[])?;
            if common.dump_config {
                return emit(None, &cfg.to_text());
            }
            let out = cmd_thresholds(&cfg)?;
            let target = resolve_output(cfg.output.as_deref(), "thresholds.json");
            emit(target.as_deref(), &to_json(&out)?)
        }
        Command::Simulate {
            common,
            seeds,
            adversary,
            compensate,
            two_phase,
        } => {
            let mut extra = Vec::new();
            if let Some(n) = seeds {
                extra.push(("seeds", n.to_string()));
            }
            if let Some(a) = adversary {
                extra.push(("adversary", a));
            }
            if compensate {
                extra.push(("compensate", "true".to_string()));
            }
            if two_phase {
                extra.push(("two_phase", "true".to_string()));
            }
            let cfg = load_config(&common, &extra)?;
            if common.dump_config {
                return emit(None, &cfg.to_text());
            }
            let start = Instant::now();
            let mut out = cmd_simulate(&cfg)?;
            if common.timing {
                out.wall_clock_seconds = Some(start.elapsed().as_secs_f64());
            }
            let body = match cfg.output_format {
                OutputFormat::Json => to_json(&out)?,
                OutputFormat::Csv => to_csv(
                    &out.sessions
                        .iter()
                        .map(SessionCsvRow::from)
                        .collect::<Vec<_>>(),
                )?,
            };
            let name = match cfg.output_format {
                OutputFormat::Json => "simulate.json",
                OutputFormat::Csv => "simulate.csv",
            };
            emit(
                resolve_output(cfg.output.as_deref(), name).as_deref(),
                &body,
            )
        }
        Command::Experiment(common) => {
            let mut cfg = load_config(&common, &[])?;
            if common.preset.is_none() && common.config.is_none() && cfg.signal_tones.is_none() {
                // No tone configured: fall back to the experiment preset.
                let mut preset = RunConfig::preset(Preset::Experiment);
                for assignment in &common.set {
                    if let Some((k, v)) = assignment.split_once('=') {
                        preset.apply(k.trim(), v)?;
                    }
                }
                preset.output = cfg.output.clone();
                preset.validate()?;
                cfg = preset;
            }
            if common.dump_config {
                return emit(None, &cfg.to_text());
            }
            let (mut report, rows) = cmd_experiment(&cfg)?;
            let trace = resolve_output(cfg.output.as_deref(), "experiment_trace.csv")
                .unwrap_or_else(|| PathBuf::from("experiment_trace.csv"));
            emit(Some(&trace), &to_csv(&rows)?)?;
            report.trace_path = Some(trace.display().to_string());
            emit(None, &to_json(&report)?)
        }
        Command::Wq { q, z } => emit(None, &to_json(&cmd_wq(q, z)?)?),
        Command::AttackSweep {
            common,
            param,
            from,
            to,
            steps,
            seeds,
        } => {
            let mut extra = Vec::new();
            if let Some(n) = seeds {
                extra.push(("seeds", n.to_string()));
            }
            let cfg = load_config(&common, &extra)?;
            if common.dump_config {
                return emit(None, &cfg.to_text());
            }
            let rows = cmd_attack_sweep(&cfg, param, from, to, steps)?;
            let body = match cfg.output_format {
                OutputFormat::Json => to_json(&rows)?,
                OutputFormat::Csv => to_csv(&rows)?,
            };
            let name = match cfg.output_format {
                OutputFormat::Json => "attack_sweep.json",
                OutputFormat::Csv => "attack_sweep.csv",
            };
            emit(
                resolve_output(cfg.output.as_deref(), name).as_deref(),
                &body,
            )
        }
    }
}

/// Flat per-session row for CSV output.
#[derive(Clone, Debug, Serialize)]
pub struct SessionCsvRow {
    pub session: u64,
    pub seed: u64,
    pub outcome: &'static str,
    pub s_ok: bool,
    pub r_ok: bool,
    pub r_matched: bool,
    pub s_rmse_relative: Option<f64>,
    pub bob_signal_samples: usize,
    pub bob_decoy_samples: usize,
    pub basis_size: usize,
    pub eve_ok: Option<bool>,
    pub bob_channel: f64,
    pub phases_run: usize,
    pub recovered_rmse_relative: Option<f64>,
}

impl From<&SessionSummary> for SessionCsvRow {
    fn from(s: &SessionSummary) -> Self {
        SessionCsvRow {
            session: s.session,
            seed: s.seed,
            outcome: s.outcome.label(),
            s_ok: s.s_ok,
            r_ok: s.r_ok,
            r_matched: s.r_matched,
            s_rmse_relative: s.s_rmse_relative,
            bob_signal_samples: s.bob_signal_samples,
            bob_decoy_samples: s.bob_decoy_samples,
            basis_size: s.basis_size,
            eve_ok: s.eve_ok,
            bob_channel: s.bob_channel,
            phases_run: s.phases_run,
            recovered_rmse_relative: s.recovered_rmse_relative,
        }
    }
}

/// Parses arguments, runs, and maps the result onto the exit-code contract:
/// 0 completed, 1 usage or configuration error, 2 numeric failure.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
