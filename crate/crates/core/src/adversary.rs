//! The two analyzed attacks, as per-slot channel transformations.
//!
//! Intercept/resend: Eve sits at Alice's output, measures each pulse and
//! re-emits a fresh one whose mean photon number she must guess (`μ_s` or
//! `μ_r` with equal probability). Optionally she replaces the channel to Bob
//! by one of transmissivity `t'_c` so that Bob's click rate on signal slots is
//! unchanged.
//!
//! Beam splitter: Eve keeps the fraction `1 − t_c` of every pulse and sends the
//! rest to Bob over a lossless channel, so Bob's statistics are untouched.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::photonics::{decode_phase, transmit_and_detect, Readout, SlotRecord, SlotTag};
use crate::reconstruct::{
    reconstruct_signal, ReconstructionOptions, ReconstructionResult, SampleSet,
};
use crate::security::{compensated_transmissivity, CompensationMethod, ProtocolParams};
use crate::signal::BandlimitedSignal;
use crate::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdversaryKind {
    #[default]
    None,
    InterceptResend,
    BeamSplitter,
}

/// How well Eve reads the pulses she intercepts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EveMeasurement {
    /// Eve learns every phase. This is the attacker of the rate analysis,
    /// whose only handicap is not knowing which mean to resend.
    #[default]
    Ideal,
    /// Eve clicks with probability `1 − e^{−μ}` like any single-shot reader.
    ClickLimited,
}

/// What a click-limited Eve resends after a failed measurement.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EveNoClick {
    #[default]
    RandomPhase,
    Vacuum,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdversaryModel {
    pub kind: AdversaryKind,
    /// Intercept/resend only.
    pub compensate: bool,
    pub eve_seed: u64,
    pub measurement: EveMeasurement,
    pub noclick: EveNoClick,
}

impl AdversaryModel {
    pub fn none() -> Self {
        AdversaryModel::default()
    }

    pub fn intercept_resend(compensate: bool, eve_seed: u64) -> Self {
        AdversaryModel {
            kind: AdversaryKind::InterceptResend,
            compensate,
            eve_seed,
            ..Default::default()
        }
    }

    pub fn beam_splitter(eve_seed: u64) -> Self {
        AdversaryModel {
            kind: AdversaryKind::BeamSplitter,
            eve_seed,
            ..Default::default()
        }
    }
}

/// Channel Eve gives Bob under intercept/resend.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterceptPlan {
    pub bob_channel: f64,
    /// The compensating transmissivity, when one was requested and exists.
    pub t_prime: Option<f64>,
    /// Compensation was requested but `t'_c > 1` or no root exists; Bob's
    /// channel stays at `t_c`.
    pub compensation_infeasible: bool,
}

pub fn plan_intercept(params: &ProtocolParams, compensate: bool) -> InterceptPlan {
    if !compensate {
        return InterceptPlan {
            bob_channel: params.t_c,
            t_prime: None,
            compensation_infeasible: false,
        };
    }
    match compensated_transmissivity(params, CompensationMethod::ClosedForm) {
        Ok(t) if t <= 1.0 => InterceptPlan {
            bob_channel: t,
            t_prime: Some(t),
            compensation_infeasible: false,
        },
        Ok(t) => InterceptPlan {
            bob_channel: params.t_c,
            t_prime: Some(t),
            compensation_infeasible: true,
        },
        Err(_) => InterceptPlan {
            bob_channel: params.t_c,
            t_prime: None,
            compensation_infeasible: true,
        },
    }
}

/// Everything Eve collected during one session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EveRecord {
    pub kind: AdversaryKind,
    pub eve_slots: Vec<SlotRecord>,
    pub eve_reconstruction: Option<ReconstructionResult>,
    pub effective_bob_channel: f64,
    pub compensation_infeasible: bool,
}

/// One intercepted slot: Eve's record and the slot as Bob receives it.
pub fn eve_intercept_resend<R1: Rng + ?Sized, R2: Rng + ?Sized>(
    slot: &SlotRecord,
    params: &ProtocolParams,
    plan: &InterceptPlan,
    model: &AdversaryModel,
    readout: &Readout,
    eve_rng: &mut R1,
    bob_rng: &mut R2,
) -> (SlotRecord, SlotRecord) {
    let eve_slot = match model.measurement {
        EveMeasurement::Ideal => SlotRecord {
            clicked: true,
            measured_value: Some(decode_phase(slot.phase, &readout.range).value),
            ..slot.clone()
        },
        // Eve is at Alice's output: unit transmissivity.
        EveMeasurement::ClickLimited => transmit_and_detect(slot, 1.0, readout, eve_rng),
    };
    let resent_mu = if eve_rng.random::<bool>() {
        params.mu_s
    } else {
        params.mu_r
    };
    let (phase, mu) = if eve_slot.clicked {
        (slot.phase, resent_mu)
    } else {
        match model.noclick {
            EveNoClick::RandomPhase => {
                (eve_rng.random_range(0.0..=std::f64::consts::PI), resent_mu)
            }
            EveNoClick::Vacuum => (slot.phase, 0.0),
        }
    };
    let resent = SlotRecord {
        phase,
        mu,
        clicked: false,
        measured_value: None,
        ..slot.clone()
    };
    let bob_slot = transmit_and_detect(&resent, plan.bob_channel, readout, bob_rng);
    (bob_slot, eve_slot)
}

/// One tapped slot. Coherent light splits into independent Poisson arms, so
/// the two clicks are drawn independently.
pub fn eve_beamsplitter<R1: Rng + ?Sized, R2: Rng + ?Sized>(
    slot: &SlotRecord,
    params: &ProtocolParams,
    readout: &Readout,
    eve_rng: &mut R1,
    bob_rng: &mut R2,
) -> (SlotRecord, SlotRecord) {
    let bob_slot = transmit_and_detect(slot, params.t_c, readout, bob_rng);
    let eve_slot = transmit_and_detect(slot, 1.0 - params.t_c, readout, eve_rng);
    (bob_slot, eve_slot)
}

/// Eve's attempt at `s(t)` from her clicked slots tagged SIGNAL in the public
/// disclosure.
pub fn eve_reconstruct(
    record: &EveRecord,
    f_max: f64,
    disclosed_tags: &[SlotTag],
    duration: f64,
    options: &ReconstructionOptions,
) -> Result<ReconstructionResult> {
    let points: Vec<(f64, f64)> = record
        .eve_slots
        .iter()
        .zip(disclosed_tags)
        .filter(|(slot, tag)| **tag == SlotTag::Signal && slot.clicked)
        .filter_map(|(slot, _)| slot.measured_value.map(|v| (slot.emit_time, v)))
        .collect();
    let samples = SampleSet::new(points, duration)?;
    reconstruct_or_fail(&samples, f_max, options)
}

/// [`reconstruct_signal`], with an empty sample set reported as a failed fit.
pub fn reconstruct_or_fail(
    samples: &SampleSet,
    f_max: f64,
    options: &ReconstructionOptions,
) -> Result<ReconstructionResult> {
    if samples.is_empty() {
        return Ok(ReconstructionResult {
            estimate: BandlimitedSignal::zero(f_max)?,
            relative_residual: 0.0,
            ok: false,
            diagnostic: "no samples".to_string(),
            basis_size: 0,
            sample_count: 0,
            condition_estimate: None,
        });
    }
    reconstruct_signal(samples, f_max, options)
}
