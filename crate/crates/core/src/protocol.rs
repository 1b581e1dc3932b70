//! End-to-end sessions.
//!
//! 1. Alice and Bob agree on `f_max`, `μ_s`, `μ_r` and `T_p`.
//! 2. In every slot Alice picks `s(t)` or the decoy `r(t)` with probability ½
//!    and phase-encodes the current sample on a weak pulse of mean `μ_s` or
//!    `μ_r`.
//! 3. Bob reads out every pulse that reaches his detector.
//! 4. Alice discloses which slots carried the decoy, and the decoy itself.
//! 5. Bob reconstructs both streams. A reconstructed decoy, or an
//!    unrecoverable `s(t)`, aborts the session.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{
    eve_beamsplitter, eve_intercept_resend, eve_reconstruct, plan_intercept, reconstruct_or_fail,
    AdversaryKind, AdversaryModel, EveRecord,
};
use crate::photonics::{
    encode_phase, transmit_and_detect, OpticalSetupParams, Readout, SlotRecord, SlotTag, ValueRange,
};
use crate::reconstruct::{
    compare_decoy, ReconstructionOptions, ReconstructionResult, SampleSet, DEFAULT_MATCH_THRESHOLD,
};
use crate::rng::{derive_seed, substream, StreamRole};
use crate::security::ProtocolParams;
use crate::signal::{
    signal_rms, signal_rmse, split_signal, synthesize_on_grid, uniform_grid, BandlimitedSignal,
};
use crate::{Error, Result};

/// Tones per synthesized test signal.
pub const SCENARIO_TONES: usize = 5;
/// Lowest synthesized tone, in periods per session.
pub const MIN_PERIODS: f64 = 32.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub params: ProtocolParams,
    pub setup: OpticalSetupParams,
    pub n_slots: u64,
    pub seed: u64,
    pub reconstruction: ReconstructionOptions,
    pub match_threshold: f64,
    /// Phase-encoding range; `None` uses the larger peak bound of the two signals.
    pub value_range: Option<ValueRange>,
}

impl SessionConfig {
    pub fn new(params: ProtocolParams, n_slots: u64, seed: u64) -> Self {
        SessionConfig {
            params,
            setup: OpticalSetupParams::default(),
            n_slots,
            seed,
            reconstruction: ReconstructionOptions::default(),
            match_threshold: DEFAULT_MATCH_THRESHOLD,
            value_range: None,
        }
    }

    /// Enough slots for the reconstruction basis to reach `half_basis`
    /// frequencies, i.e. `f_max · n_slots · T_p ≥ half_basis`.
    pub fn with_basis(params: ProtocolParams, half_basis: usize, seed: u64) -> Self {
        let n = (half_basis as f64 / (params.f_max * params.t_p) * (1.0 - 1e-12)).ceil() as u64;
        SessionConfig::new(params, n.max(1), seed)
    }

    pub fn duration(&self) -> f64 {
        self.n_slots as f64 * self.params.t_p
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.n_slots == 0 {
            return Err(Error::param("n_slots", "must be >= 1"));
        }
        self.setup.validate(self.params.t_p, self.params.mu_s)?;
        if !(self.match_threshold > 0.0) {
            return Err(Error::param("match_threshold", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Accept,
    AbortDecoyReconstructed,
    AbortSignalUnrecoverable,
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Accept => "ACCEPT",
            Outcome::AbortDecoyReconstructed => "ABORT_DECOY_RECONSTRUCTED",
            Outcome::AbortSignalUnrecoverable => "ABORT_SIGNAL_UNRECOVERABLE",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecurityVerdict {
    pub outcome: Outcome,
    /// RMSE of Bob's `s(t)` against the truth. The simulator knows the truth;
    /// Bob does not.
    pub s_rmse: Option<f64>,
    /// `s_rmse` divided by the RMS of `s(t)`.
    pub s_rmse_relative: Option<f64>,
    pub r_matched: bool,
    pub notes: String,
}

/// The decoy check is the explicit eavesdropping alarm, so it comes first.
pub fn bob_verdict(s_rec: &ReconstructionResult, r_matched: bool) -> SecurityVerdict {
    let (outcome, notes) = if r_matched {
        (
            Outcome::AbortDecoyReconstructed,
            "decoy reconstructed and matched the disclosure".to_string(),
        )
    } else if !s_rec.ok {
        (
            Outcome::AbortSignalUnrecoverable,
            format!("signal not recovered: {}", s_rec.diagnostic),
        )
    } else {
        (
            Outcome::Accept,
            "signal recovered, decoy not recovered".to_string(),
        )
    };
    SecurityVerdict {
        outcome,
        s_rmse: None,
        s_rmse_relative: None,
        r_matched,
        notes,
    }
}

/// Alice's public announcement after the quantum phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disclosure {
    pub tags: Vec<SlotTag>,
    pub decoy: BandlimitedSignal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionTranscript {
    pub alice_slots: Vec<SlotRecord>,
    pub bob_slots: Vec<SlotRecord>,
    pub disclosure: Disclosure,
    pub s_reconstruction: ReconstructionResult,
    pub r_reconstruction: ReconstructionResult,
    pub verdict: SecurityVerdict,
    pub eve_view: Option<EveRecord>,
}

impl SessionTranscript {
    /// Bob's clicked slots carrying `tag`.
    pub fn bob_sample_count(&self, tag: SlotTag) -> usize {
        self.bob_slots
            .iter()
            .filter(|s| s.clicked && s.tag == tag)
            .count()
    }
}

/// Alice's choice for one slot.
pub fn alice_emit<R: Rng + ?Sized>(
    slot_index: u64,
    s: &BandlimitedSignal,
    r: &BandlimitedSignal,
    cfg: &SessionConfig,
    range: &ValueRange,
    rng: &mut R,
) -> SlotRecord {
    let t = slot_index as f64 * cfg.params.t_p;
    let (tag, value, mu) = if rng.random::<bool>() {
        (SlotTag::Signal, s.eval(t), cfg.params.mu_s)
    } else {
        (SlotTag::Decoy, r.eval(t), cfg.params.mu_r)
    };
    SlotRecord {
        index: slot_index,
        emit_time: t,
        tag,
        sample_value: value,
        phase: encode_phase(value, range),
        mu,
        clicked: false,
        measured_value: None,
    }
}

/// Random `s(t)` and `r(t)` with on-grid tones at least [`MIN_PERIODS`]
/// periods long over `duration`.
pub fn synthesize_pair(
    seed: u64,
    f_max: f64,
    duration: f64,
) -> Result<(BandlimitedSignal, BandlimitedSignal)> {
    let step = 2.0 / duration;
    let lowest = MIN_PERIODS / duration;
    let s = synthesize_on_grid(seed, f_max, step, lowest, SCENARIO_TONES, 1.0)?;
    let r = synthesize_on_grid(
        derive_seed(seed, 0, StreamRole::DecoySynthesis),
        f_max,
        step,
        lowest,
        SCENARIO_TONES,
        1.0,
    )?;
    Ok((s, r))
}

fn evaluation_grid(cfg: &SessionConfig, basis: usize) -> Vec<f64> {
    uniform_grid(cfg.duration(), 4096.max(4 * basis))
}

fn samples_for(slots: &[SlotRecord], tag: SlotTag, duration: f64) -> Result<SampleSet> {
    let points = slots
        .iter()
        .filter(|s| s.tag == tag && s.clicked)
        .filter_map(|s| s.measured_value.map(|v| (s.emit_time, v)))
        .collect();
    SampleSet::new(points, duration)
}

pub fn run_session(
    cfg: &SessionConfig,
    s: &BandlimitedSignal,
    r: &BandlimitedSignal,
    adversary: &AdversaryModel,
) -> Result<SessionTranscript> {
    cfg.validate()?;
    if s.f_max() != r.f_max() || s.f_max() != cfg.params.f_max {
        return Err(Error::param(
            "f_max",
            format!(
                "signal, decoy and parameters must share f_max (got {}, {}, {})",
                s.f_max(),
                r.f_max(),
                cfg.params.f_max
            ),
        ));
    }
    if !(s.is_band_limited() && r.is_band_limited()) {
        return Err(Error::param("signals", "every tone must lie in [0, f_max]"));
    }
    let range = match cfg.value_range {
        Some(range) => range,
        None => {
            let peak = s.peak_bound().max(r.peak_bound());
            ValueRange::symmetric(if peak > 0.0 { peak } else { 1.0 })?
        }
    };
    let readout = Readout {
        range,
        noise_sigma: cfg.setup.readout_noise_sigma,
    };
    let plan = plan_intercept(&cfg.params, adversary.compensate);
    let duration = cfg.duration();

    let n = cfg.n_slots as usize;
    let mut alice_slots = Vec::with_capacity(n);
    let mut bob_slots = Vec::with_capacity(n);
    let mut eve_slots = Vec::new();
    for i in 0..cfg.n_slots {
        let mut choice = substream(cfg.seed, i, StreamRole::AliceChoice);
        let mut bob_rng = substream(cfg.seed, i, StreamRole::BobDetection);
        let slot = alice_emit(i, s, r, cfg, &range, &mut choice);
        let bob_slot = match adversary.kind {
            AdversaryKind::None => {
                transmit_and_detect(&slot, cfg.params.t_c, &readout, &mut bob_rng)
            }
            AdversaryKind::InterceptResend => {
                let mut eve_rng = substream(adversary.eve_seed, i, StreamRole::EveResend);
                let (b, e) = eve_intercept_resend(
                    &slot,
                    &cfg.params,
                    &plan,
                    adversary,
                    &readout,
                    &mut eve_rng,
                    &mut bob_rng,
                );
                eve_slots.push(e);
                b
            }
            AdversaryKind::BeamSplitter => {
                let mut eve_rng = substream(adversary.eve_seed, i, StreamRole::EveDetection);
                let (b, e) =
                    eve_beamsplitter(&slot, &cfg.params, &readout, &mut eve_rng, &mut bob_rng);
                eve_slots.push(e);
                b
            }
        };
        alice_slots.push(slot);
        bob_slots.push(bob_slot);
    }

    let disclosure = Disclosure {
        tags: alice_slots.iter().map(|s| s.tag).collect(),
        decoy: r.clone(),
    };
    let f_max = cfg.params.f_max;
    let s_rec = reconstruct_or_fail(
        &samples_for(&bob_slots, SlotTag::Signal, duration)?,
        f_max,
        &cfg.reconstruction,
    )?;
    let r_rec = reconstruct_or_fail(
        &samples_for(&bob_slots, SlotTag::Decoy, duration)?,
        f_max,
        &cfg.reconstruction,
    )?;
    let grid = evaluation_grid(cfg, s_rec.basis_size.max(r_rec.basis_size));
    let r_matched = compare_decoy(&r_rec, r, &grid, cfg.match_threshold)?;

    let mut verdict = bob_verdict(&s_rec, r_matched);
    let rmse = signal_rmse(&s_rec.estimate, s, &grid)?;
    let rms = signal_rms(s, &grid)?;
    verdict.s_rmse = Some(rmse);
    verdict.s_rmse_relative = (rms > 0.0).then(|| rmse / rms);

    let eve_view = match adversary.kind {
        AdversaryKind::None => None,
        kind => {
            let mut record = EveRecord {
                kind,
                eve_slots,
                eve_reconstruction: None,
                effective_bob_channel: match kind {
                    AdversaryKind::InterceptResend => plan.bob_channel,
                    _ => cfg.params.t_c,
                },
                compensation_infeasible: plan.compensation_infeasible
                    && kind == AdversaryKind::InterceptResend,
            };
            record.eve_reconstruction = Some(eve_reconstruct(
                &record,
                f_max,
                &disclosure.tags,
                duration,
                &cfg.reconstruction,
            )?);
            Some(record)
        }
    };

    Ok(SessionTranscript {
        alice_slots,
        bob_slots,
        disclosure,
        s_reconstruction: s_rec,
        r_reconstruction: r_rec,
        verdict,
        eve_view,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPhaseResult {
    /// Outcome of the last session that ran.
    pub outcome: Outcome,
    /// `s1 + s2` as Bob reconstructed them, after two accepted sessions.
    pub recovered: Option<BandlimitedSignal>,
    pub transcripts: Vec<SessionTranscript>,
}

/// Sends `s` in two halves, the second only if the first session is accepted.
pub fn two_phase_transfer(
    cfg: &SessionConfig,
    s: &BandlimitedSignal,
    decoys: [&BandlimitedSignal; 2],
    adversary: &AdversaryModel,
) -> Result<TwoPhaseResult> {
    let (s1, s2) = split_signal(s, derive_seed(cfg.seed, 0, StreamRole::Split));
    let first = run_session(cfg, &s1, decoys[0], adversary)?;
    if first.verdict.outcome != Outcome::Accept {
        return Ok(TwoPhaseResult {
            outcome: first.verdict.outcome,
            recovered: None,
            transcripts: vec![first],
        });
    }
    let second_cfg = SessionConfig {
        seed: derive_seed(cfg.seed, 1, StreamRole::Session),
        ..cfg.clone()
    };
    let second_adversary = AdversaryModel {
        eve_seed: derive_seed(adversary.eve_seed, 1, StreamRole::Session),
        ..adversary.clone()
    };
    let second = run_session(&second_cfg, &s2, decoys[1], &second_adversary)?;
    let outcome = second.verdict.outcome;
    let recovered = (outcome == Outcome::Accept).then(|| {
        first
            .s_reconstruction
            .estimate
            .plus(&second.s_reconstruction.estimate)
            .merged()
    });
    Ok(TwoPhaseResult {
        outcome,
        recovered,
        transcripts: vec![first, second],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::security::threshold_s;

    /// A session `h` times above the signal threshold with a basis of
    /// `2k + 1` functions, on parameters whose secure window is wide.
    fn scenario(
        h: f64,
        k: usize,
        seed: u64,
    ) -> (SessionConfig, BandlimitedSignal, BandlimitedSignal) {
        let base = ProtocolParams::new(0.1, 0.03, 0.62, 1.0, 1.0).unwrap();
        let params = base
            .clone()
            .with_pulse_rate(h * threshold_s(&base))
            .unwrap();
        let cfg = SessionConfig::with_basis(params, k, seed);
        let (s, r) = synthesize_pair(seed, 1.0, cfg.duration()).unwrap();
        (cfg, s, r)
    }

    fn ok_result(ok: bool) -> ReconstructionResult {
        ReconstructionResult {
            estimate: BandlimitedSignal::zero(1.0).unwrap(),
            relative_residual: 0.0,
            ok,
            diagnostic: String::new(),
            basis_size: 1,
            sample_count: 1,
            condition_estimate: None,
        }
    }

    #[test]
    fn verdict_table() {
        assert_eq!(
            bob_verdict(&ok_result(true), true).outcome,
            Outcome::AbortDecoyReconstructed
        );
        assert_eq!(
            bob_verdict(&ok_result(false), true).outcome,
            Outcome::AbortDecoyReconstructed
        );
        assert_eq!(
            bob_verdict(&ok_result(false), false).outcome,
            Outcome::AbortSignalUnrecoverable
        );
        assert_eq!(
            bob_verdict(&ok_result(true), false).outcome,
            Outcome::Accept
        );
    }

    #[test]
    fn alice_choices() {
        let (cfg, s, r) = scenario(1.4, 40, 1);
        let range = ValueRange::symmetric(10.0).unwrap();
        let mut signal = 0usize;
        let n = 100_000u64;
        for i in 0..n {
            let mut rng = substream(7, i, StreamRole::AliceChoice);
            let slot = alice_emit(i, &s, &r, &cfg, &range, &mut rng);
            match slot.tag {
                SlotTag::Signal => {
                    signal += 1;
                    assert_eq!(slot.mu, cfg.params.mu_s);
                }
                SlotTag::Decoy => assert_eq!(slot.mu, cfg.params.mu_r),
            }
        }
        let sd = (n as f64 * 0.25).sqrt();
        assert!((signal as f64 - n as f64 / 2.0).abs() < 3.0 * sd);
    }

    #[test]
    fn honest_session_accepts() {
        for seed in 0..5 {
            let (cfg, s, r) = scenario(1.5, 40, seed);
            let tr = run_session(&cfg, &s, &r, &AdversaryModel::none()).unwrap();
            assert_eq!(
                tr.verdict.outcome,
                Outcome::Accept,
                "seed {seed}: {}",
                tr.verdict.notes
            );
            assert!(tr.verdict.s_rmse_relative.unwrap() < 1e-3);
            assert!(tr.eve_view.is_none());
        }
    }

    #[test]
    fn attacks_are_detected() {
        // Small bases blur the transition, so each attack gets a clear margin.
        for seed in 0..5 {
            let (cfg, s, r) = scenario(1.2, 60, seed);
            let plain = run_session(
                &cfg,
                &s,
                &r,
                &AdversaryModel::intercept_resend(false, seed + 100),
            )
            .unwrap();
            assert_eq!(
                plain.verdict.outcome,
                Outcome::AbortSignalUnrecoverable,
                "seed {seed}"
            );
            let (cfg, s, r) = scenario(1.5, 60, seed);
            let comp = run_session(
                &cfg,
                &s,
                &r,
                &AdversaryModel::intercept_resend(true, seed + 100),
            )
            .unwrap();
            assert_eq!(
                comp.verdict.outcome,
                Outcome::AbortDecoyReconstructed,
                "seed {seed}"
            );
            let eve = comp.eve_view.unwrap();
            assert!(!eve.compensation_infeasible);
            assert!(eve.effective_bob_channel > cfg.params.t_c && eve.effective_bob_channel <= 1.0);
        }
    }

    #[test]
    fn below_threshold_aborts() {
        let (cfg, s, r) = scenario(0.8, 40, 3);
        let tr = run_session(&cfg, &s, &r, &AdversaryModel::none()).unwrap();
        assert_eq!(tr.verdict.outcome, Outcome::AbortSignalUnrecoverable);
    }

    #[test]
    fn transcript_invariants_and_determinism() {
        let (cfg, s, r) = scenario(1.4, 40, 4);
        let a = run_session(&cfg, &s, &r, &AdversaryModel::beam_splitter(9)).unwrap();
        let b = run_session(&cfg, &s, &r, &AdversaryModel::beam_splitter(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.alice_slots.len(), cfg.n_slots as usize);
        assert_eq!(a.bob_slots.len(), cfg.n_slots as usize);
        for (slot, tag) in a.alice_slots.iter().zip(&a.disclosure.tags) {
            assert_eq!(slot.tag, *tag);
        }
        for slot in &a.bob_slots {
            assert_eq!(slot.clicked, slot.measured_value.is_some());
        }
        let eve = a.eve_view.unwrap();
        assert_eq!(eve.eve_slots.len(), cfg.n_slots as usize);
        assert!(eve.eve_reconstruction.is_some());
    }

    #[test]
    fn effective_signal_rate() {
        let base = ProtocolParams::new(0.6, 0.4, 0.6, 1e-3, 1.0).unwrap();
        let cfg = SessionConfig::new(base, 100_000, 11);
        let (s, r) = synthesize_pair(11, 1e-3, cfg.duration()).unwrap();
        let tr = run_session(&cfg, &s, &r, &AdversaryModel::none()).unwrap();
        let p = 0.5 * (1.0 - (-0.36f64).exp());
        let n = cfg.n_slots as f64;
        let count = tr.bob_sample_count(SlotTag::Signal) as f64;
        assert!((count - n * p).abs() < 3.0 * (n * p * (1.0 - p)).sqrt());
    }

    #[test]
    fn mismatched_bandwidth_is_rejected() {
        let (cfg, s, _) = scenario(1.4, 40, 5);
        let other = BandlimitedSignal::zero(2.0).unwrap();
        assert!(run_session(&cfg, &s, &other, &AdversaryModel::none()).is_err());
        let zero = SessionConfig {
            n_slots: 0,
            ..cfg.clone()
        };
        assert!(run_session(&zero, &s, &s, &AdversaryModel::none()).is_err());
    }

    #[test]
    fn two_phase_honest() {
        let (cfg, s, r1) = scenario(1.5, 40, 6);
        let (_, r2) = synthesize_pair(60, 1.0, cfg.duration()).unwrap();
        let out = two_phase_transfer(&cfg, &s, [&r1, &r2], &AdversaryModel::none()).unwrap();
        assert_eq!(out.outcome, Outcome::Accept);
        assert_eq!(out.transcripts.len(), 2);
        let grid = uniform_grid(cfg.duration(), 4096);
        let rec = out.recovered.unwrap();
        let rel = signal_rmse(&rec, &s, &grid).unwrap() / signal_rms(&s, &grid).unwrap();
        assert!(rel < 2e-3, "{rel}");
    }

    #[test]
    fn two_phase_stops_after_abort() {
        let (cfg, s, r1) = scenario(1.4, 40, 7);
        let (_, r2) = synthesize_pair(70, 1.0, cfg.duration()).unwrap();
        let eve = AdversaryModel::intercept_resend(false, 1);
        let out = two_phase_transfer(&cfg, &s, [&r1, &r2], &eve).unwrap();
        assert_eq!(out.transcripts.len(), 1);
        assert!(out.recovered.is_none());
        assert_ne!(out.outcome, Outcome::Accept);
        // Eve only ever saw the first half.
        let (s1, _) = split_signal(&s, derive_seed(cfg.seed, 0, StreamRole::Split));
        let view = out.transcripts[0].eve_view.as_ref().unwrap();
        for slot in view.eve_slots.iter().filter(|e| e.tag == SlotTag::Signal) {
            assert_eq!(slot.sample_value, s1.eval(slot.emit_time));
        }
    }
}
