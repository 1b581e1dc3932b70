//! The optical layer: pulse-pair slots, phase encoding, lossy channel and
//! probabilistic clicks, plus the single-detector interference level used for
//! trace rendering.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::security::click_probability;
use crate::{Error, Result};

/// The local oscillator must exceed the weak pulses by at least this factor.
pub const MIN_LO_RATIO: f64 = 100.0;

/// Static parameters of the interferometric setup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpticalSetupParams {
    /// Fraction reflected into Alice's ring.
    pub alice_tap: f64,
    /// Bob's beam-splitter ratio.
    pub bob_tap: f64,
    /// Ring delay, seconds. Must stay below the slot period when set.
    pub ring_delay_tau: Option<f64>,
    /// Mean photon number of the strong local-oscillator pulse.
    pub lo_mean_photons: f64,
    pub voa_attenuation: f64,
    /// Standard deviation of Gaussian phase noise at readout, radians.
    pub readout_noise_sigma: f64,
}

impl Default for OpticalSetupParams {
    fn default() -> Self {
        OpticalSetupParams {
            alice_tap: 0.10,
            bob_tap: 0.5,
            ring_delay_tau: None,
            lo_mean_photons: 1.0e6,
            voa_attenuation: 1.0,
            readout_noise_sigma: 0.0,
        }
    }
}

impl OpticalSetupParams {
    /// Checks the setup against the slot period and the largest weak mean.
    pub fn validate(&self, t_p: f64, max_weak_mu: f64) -> Result<()> {
        for (name, v) in [("alice_tap", self.alice_tap), ("bob_tap", self.bob_tap)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::param(name, format!("must lie in (0, 1), got {v}")));
            }
        }
        if let Some(tau) = self.ring_delay_tau {
            if !(tau > 0.0 && tau < t_p) {
                return Err(Error::param(
                    "ring_delay_tau",
                    format!("must lie in (0, T_p = {t_p}), got {tau}"),
                ));
            }
        }
        if !(self.voa_attenuation > 0.0 && self.voa_attenuation <= 1.0) {
            return Err(Error::param(
                "voa_attenuation",
                format!("must lie in (0, 1], got {}", self.voa_attenuation),
            ));
        }
        if !(self.lo_mean_photons >= MIN_LO_RATIO * max_weak_mu) {
            return Err(Error::param(
                "lo_mean_photons",
                format!(
                    "must be at least {MIN_LO_RATIO}x the weak mean {max_weak_mu}, got {}",
                    self.lo_mean_photons
                ),
            ));
        }
        if !(self.readout_noise_sigma >= 0.0 && self.readout_noise_sigma.is_finite()) {
            return Err(Error::param(
                "readout_noise_sigma",
                "must be finite and >= 0",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotTag {
    Signal,
    Decoy,
}

/// One pulse-pair slot as seen from emission to detection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub index: u64,
    pub emit_time: f64,
    pub tag: SlotTag,
    pub sample_value: f64,
    /// Alice's phase, in `[0, π]`.
    pub phase: f64,
    /// Mean photon number entering the channel.
    pub mu: f64,
    pub clicked: bool,
    /// Present iff `clicked`.
    pub measured_value: Option<f64>,
}

/// Interval of sample values mapped onto the phase range `[0, π]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    lo: f64,
    hi: f64,
}

impl ValueRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::param(
                "value_range",
                format!("need finite lo < hi, got [{lo}, {hi}]"),
            ));
        }
        Ok(ValueRange { lo, hi })
    }

    /// `[−bound, bound]`.
    pub fn symmetric(bound: f64) -> Result<Self> {
        ValueRange::new(-bound, bound)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

/// Affine map of `range` onto `[0, π]`; values outside are clamped first.
pub fn encode_phase(sample_value: f64, range: &ValueRange) -> f64 {
    let v = sample_value.clamp(range.lo, range.hi);
    let u = (v - range.lo) / (range.hi - range.lo);
    PI * u.clamp(0.0, 1.0)
}

/// Result of [`decode_phase`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decoded {
    pub value: f64,
    /// The phase lay outside `[0, π]` and was clamped.
    pub clamped: bool,
}

/// Inverse of [`encode_phase`].
pub fn decode_phase(phase: f64, range: &ValueRange) -> Decoded {
    let clamped = !(0.0..=PI).contains(&phase);
    let u = (phase / PI).clamp(0.0, 1.0);
    // Convex form keeps both endpoints exact.
    Decoded {
        value: range.lo * (1.0 - u) + range.hi * u,
        clamped,
    }
}

/// How Bob turns a click into a sample value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Readout {
    pub range: ValueRange,
    pub noise_sigma: f64,
}

/// Sends `slot` through a channel of transmissivity `t_eff` and draws the click.
///
/// Consumes one uniform per slot, plus one Gaussian per click when
/// `noise_sigma > 0`, so the stream position depends only on the outcomes.
pub fn transmit_and_detect<R: Rng + ?Sized>(
    slot: &SlotRecord,
    t_eff: f64,
    readout: &Readout,
    rng: &mut R,
) -> SlotRecord {
    let p = click_probability(t_eff.clamp(0.0, 1.0), slot.mu.max(0.0));
    let clicked = rng.random::<f64>() < p;
    let measured_value = if clicked {
        let phase = if readout.noise_sigma > 0.0 {
            let noise = Normal::new(0.0, readout.noise_sigma).expect("sigma validated positive");
            slot.phase + noise.sample(rng)
        } else {
            slot.phase
        };
        Some(decode_phase(phase, &readout.range).value)
    } else {
        None
    };
    SlotRecord {
        clicked,
        measured_value,
        ..slot.clone()
    }
}

/// Mean detector level for the two overlapping pulses at Bob's output:
/// `lo/2 + weak/2 + √(lo·weak)·cos φ`, in mean-photon units.
pub fn interference_trace(phase: f64, setup: &OpticalSetupParams, weak_mu: f64) -> f64 {
    let lo = setup.lo_mean_photons;
    0.5 * lo + 0.5 * weak_mu + (lo * weak_mu).sqrt() * phase.cos()
}
