//! Band-limited signals represented as finite sums of tones.
//!
//! A tone sum can be evaluated in closed form at arbitrary times, which is
//! what nonuniform reconstruction needs.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{substream, StreamRole};
use crate::{Error, Result};

/// One component `amplitude · cos(2π·frequency·t + phase)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    /// Hz, non-negative.
    pub frequency: f64,
    pub amplitude: f64,
    /// Radians.
    pub phase: f64,
}

impl Tone {
    pub fn new(frequency: f64, amplitude: f64, phase: f64) -> Self {
        Tone {
            frequency,
            amplitude,
            phase,
        }
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * (TAU * self.frequency * t + self.phase).cos()
    }

    /// Complex amplitude `a·e^{iθ}` as `(re, im)`.
    fn phasor(&self) -> (f64, f64) {
        let (s, c) = self.phase.sin_cos();
        (self.amplitude * c, self.amplitude * s)
    }
}

/// A signal with no spectral content above `f_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandlimitedSignal {
    f_max: f64,
    components: Vec<Tone>,
}

impl BandlimitedSignal {
    /// Validates every tone against the band limit.
    pub fn new(f_max: f64, components: Vec<Tone>) -> Result<Self> {
        if !(f_max.is_finite() && f_max > 0.0) {
            return Err(Error::param(
                "f_max",
                format!("must be finite and > 0, got {f_max}"),
            ));
        }
        for (k, tone) in components.iter().enumerate() {
            if !(tone.frequency >= 0.0 && tone.frequency <= f_max) {
                return Err(Error::param(
                    "components",
                    format!(
                        "tone {k} at {} Hz lies outside [0, {f_max}]",
                        tone.frequency
                    ),
                ));
            }
            if !(tone.amplitude.is_finite() && tone.phase.is_finite()) {
                return Err(Error::param(
                    "components",
                    format!("tone {k} is not finite"),
                ));
            }
        }
        Ok(BandlimitedSignal { f_max, components })
    }

    pub fn zero(f_max: f64) -> Result<Self> {
        Self::new(f_max, Vec::new())
    }

    pub fn f_max(&self) -> f64 {
        self.f_max
    }

    pub fn components(&self) -> &[Tone] {
        &self.components
    }

    pub fn is_band_limited(&self) -> bool {
        self.components
            .iter()
            .all(|t| t.frequency >= 0.0 && t.frequency <= self.f_max)
    }

    /// `Σ a_k cos(2π f_k t + θ_k)`.
    pub fn eval(&self, t: f64) -> f64 {
        self.components.iter().map(|tone| tone.eval(t)).sum()
    }

    /// Upper bound on `|s(t)|`.
    pub fn peak_bound(&self) -> f64 {
        self.components.iter().map(|t| t.amplitude.abs()).sum()
    }

    /// Time-averaged power over an infinitely long window.
    pub fn mean_power(&self) -> f64 {
        self.merged()
            .components
            .iter()
            .map(|t| {
                if t.frequency == 0.0 {
                    let dc = t.amplitude * t.phase.cos();
                    dc * dc
                } else {
                    0.5 * t.amplitude * t.amplitude
                }
            })
            .sum()
    }

    /// Combines tones sharing a frequency into one. Tones with vanishing
    /// amplitude are dropped.
    pub fn merged(&self) -> BandlimitedSignal {
        let mut acc: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
        for tone in &self.components {
            let (re, im) = tone.phasor();
            let e = acc.entry(tone.frequency.to_bits()).or_insert((0.0, 0.0));
            e.0 += re;
            e.1 += im;
        }
        let components = acc
            .into_iter()
            .filter(|(_, (re, im))| *re != 0.0 || *im != 0.0)
            .map(|(bits, (re, im))| Tone::new(f64::from_bits(bits), re.hypot(im), im.atan2(re)))
            .collect();
        BandlimitedSignal {
            f_max: self.f_max,
            components,
        }
    }

    /// Componentwise sum, merged per frequency. The band limit is the wider of the two.
    pub fn plus(&self, other: &BandlimitedSignal) -> BandlimitedSignal {
        let mut components = self.components.clone();
        components.extend_from_slice(&other.components);
        BandlimitedSignal {
            f_max: self.f_max.max(other.f_max),
            components,
        }
        .merged()
    }

    pub fn scaled(&self, factor: f64) -> BandlimitedSignal {
        BandlimitedSignal {
            f_max: self.f_max,
            components: self
                .components
                .iter()
                .map(|t| Tone::new(t.frequency, t.amplitude * factor, t.phase))
                .collect(),
        }
    }

    /// Componentwise difference `self − other`, merged per frequency.
    pub fn minus(&self, other: &BandlimitedSignal) -> BandlimitedSignal {
        self.plus(&other.scaled(-1.0))
    }
}

fn check_synthesis(f_max: f64, n_components: usize, amplitude_bound: f64) -> Result<()> {
    if n_components == 0 {
        return Err(Error::param("n_components", "must be at least 1"));
    }
    if !(f_max.is_finite() && f_max > 0.0) {
        return Err(Error::param("f_max", "must be finite and > 0"));
    }
    if !(amplitude_bound.is_finite() && amplitude_bound > 0.0) {
        return Err(Error::param("amplitude_bound", "must be finite and > 0"));
    }
    Ok(())
}

/// Draws `n_components` tones with frequencies in `(0, f_max]`, amplitudes in
/// `[−amplitude_bound, amplitude_bound]` and uniform phases. Deterministic in `seed`.
pub fn synthesize_signal(
    seed: u64,
    f_max: f64,
    n_components: usize,
    amplitude_bound: f64,
) -> Result<BandlimitedSignal> {
    check_synthesis(f_max, n_components, amplitude_bound)?;
    let mut rng = substream(seed, 0, StreamRole::SignalSynthesis);
    let components = (0..n_components)
        .map(|_| {
            // 1 − U with U ∈ [0, 1) lands in (0, 1].
            let frequency = f_max * (1.0 - rng.random::<f64>());
            let amplitude = amplitude_bound * (2.0 * rng.random::<f64>() - 1.0);
            let phase = TAU * rng.random::<f64>();
            Tone::new(frequency, amplitude, phase)
        })
        .collect();
    BandlimitedSignal::new(f_max, components)
}

/// Like [`synthesize_signal`] but with distinct frequencies restricted to
/// integer multiples of `grid_step` inside `[min_frequency, f_max]`.
///
/// Reconstruction tests use this so the truth lies exactly in the span of
/// the reconstruction basis.
pub fn synthesize_on_grid(
    seed: u64,
    f_max: f64,
    grid_step: f64,
    min_frequency: f64,
    n_components: usize,
    amplitude_bound: f64,
) -> Result<BandlimitedSignal> {
    check_synthesis(f_max, n_components, amplitude_bound)?;
    if !(grid_step.is_finite() && grid_step > 0.0) {
        return Err(Error::param("grid_step", "must be finite and > 0"));
    }
    let first = (min_frequency.max(0.0) / grid_step).ceil().max(1.0) as u64;
    // Tolerate f_max being a multiple of the grid up to rounding.
    let last = (f_max / grid_step * (1.0 + 1e-12)).floor() as u64;
    if last < first || ((last - first + 1) as usize) < n_components {
        return Err(Error::param(
            "n_components",
            format!(
                "only {} grid frequencies fit in [{min_frequency}, {f_max}] at step {grid_step}",
                (last + 1).saturating_sub(first)
            ),
        ));
    }
    let mut rng = substream(seed, 1, StreamRole::SignalSynthesis);
    let mut chosen: Vec<u64> = Vec::with_capacity(n_components);
    while chosen.len() < n_components {
        let k = rng.random_range(first..=last);
        if !chosen.contains(&k) {
            chosen.push(k);
        }
    }
    chosen.sort_unstable();
    let components = chosen
        .into_iter()
        .map(|k| {
            let frequency = (k as f64 * grid_step).min(f_max);
            let amplitude = amplitude_bound * (2.0 * rng.random::<f64>() - 1.0);
            let phase = TAU * rng.random::<f64>();
            Tone::new(frequency, amplitude, phase)
        })
        .collect();
    BandlimitedSignal::new(f_max, components)
}

/// Splits `sig` into `(s1, s2)` with `s1 + s2 = sig`.
///
/// `s1` places a random tone on every frequency of `sig` with amplitude
/// bounded by the RMS of `sig`; `s2` is the componentwise remainder. Both
/// halves stay on the frequency support of `sig`, so anything that can carry
/// `sig` can carry either half.
pub fn split_signal(sig: &BandlimitedSignal, seed: u64) -> (BandlimitedSignal, BandlimitedSignal) {
    let merged = sig.merged();
    let rms = merged.mean_power().sqrt();
    let bound = if rms > 0.0 { rms } else { 1.0 };
    let mut rng = substream(seed, 0, StreamRole::Split);
    let mut frequencies: Vec<f64> = merged.components.iter().map(|t| t.frequency).collect();
    if frequencies.is_empty() {
        frequencies.push(sig.f_max * (1.0 - rng.random::<f64>()));
    }
    let s1 = BandlimitedSignal {
        f_max: sig.f_max,
        components: frequencies
            .into_iter()
            .map(|f| {
                let amplitude = bound * (2.0 * rng.random::<f64>() - 1.0);
                Tone::new(f, amplitude, TAU * rng.random::<f64>())
            })
            .collect(),
    };
    let s2 = merged.minus(&s1);
    (s1, s2)
}

/// Root-mean-square difference of `a` and `b` over `grid`.
pub fn signal_rmse(a: &BandlimitedSignal, b: &BandlimitedSignal, grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::param("grid", "must contain at least one time"));
    }
    let sum: f64 = grid
        .iter()
        .map(|&t| {
            let d = a.eval(t) - b.eval(t);
            d * d
        })
        .sum();
    Ok((sum / grid.len() as f64).sqrt())
}

/// RMS of `a` itself over `grid`.
pub fn signal_rms(a: &BandlimitedSignal, grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::param("grid", "must contain at least one time"));
    }
    let sum: f64 = grid.iter().map(|&t| a.eval(t).powi(2)).sum();
    Ok((sum / grid.len() as f64).sqrt())
}

/// `n` midpoint times covering `[0, duration]`.
pub fn uniform_grid(duration: f64, n: usize) -> Vec<f64> {
    let dt = duration / n as f64;
    (0..n).map(|i| (i as f64 + 0.5) * dt).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(tones: &[(f64, f64, f64)], t: f64) -> f64 {
        let mut acc = 0.0;
        for &(f, a, th) in tones {
            let angle = 2.0 * std::f64::consts::PI * f * t + th;
            acc += a * angle.cos();
        }
        acc
    }

    #[test]
    fn synthesis_is_deterministic() {
        let a = synthesize_signal(7, 1.0, 5, 1.0).unwrap();
        let b = synthesize_signal(7, 1.0, 5, 1.0).unwrap();
        assert_eq!(a, b);
        assert!(a.is_band_limited());
        assert_eq!(a.components().len(), 5);
        for t in a.components() {
            assert!(t.frequency > 0.0 && t.frequency <= 1.0);
            assert!(t.amplitude.abs() <= 1.0);
        }
    }

    #[test]
    fn synthesis_rejects_zero_components() {
        assert!(matches!(
            synthesize_signal(7, 1.0, 0, 1.0),
            Err(Error::Parameter { .. })
        ));
        assert!(synthesize_signal(7, 0.0, 3, 1.0).is_err());
        assert!(synthesize_signal(7, 1.0, 3, -1.0).is_err());
    }

    #[test]
    fn constructor_enforces_band_limit() {
        assert!(BandlimitedSignal::new(1.0, vec![Tone::new(1.5, 1.0, 0.0)]).is_err());
        assert!(BandlimitedSignal::new(1.0, vec![Tone::new(0.5, f64::NAN, 0.0)]).is_err());
        assert!(BandlimitedSignal::new(1.0, vec![Tone::new(1.0, 1.0, 0.0)]).is_ok());
    }

    #[test]
    fn eval_basic_cases() {
        let empty = BandlimitedSignal::zero(1.0).unwrap();
        assert_eq!(empty.eval(0.3), 0.0);
        let tone = BandlimitedSignal::new(1.5e6, vec![Tone::new(1.5e6, 1.0, 0.0)]).unwrap();
        assert_eq!(tone.eval(0.0), 1.0);
    }

    #[test]
    fn eval_matches_direct_summation() {
        let sig = synthesize_signal(11, 3.0, 5, 2.0).unwrap();
        let raw: Vec<(f64, f64, f64)> = sig
            .components()
            .iter()
            .map(|t| (t.frequency, t.amplitude, t.phase))
            .collect();
        for i in 0..100 {
            let t = -2.0 + 0.047 * i as f64;
            assert!((sig.eval(t) - brute_force(&raw, t)).abs() < 1e-12);
        }
    }

    #[test]
    fn on_grid_synthesis_respects_grid() {
        let sig = synthesize_on_grid(3, 10.0, 0.5, 2.0, 6, 1.0).unwrap();
        for t in sig.components() {
            let k = t.frequency / 0.5;
            assert!((k - k.round()).abs() < 1e-12);
            assert!(t.frequency >= 2.0 && t.frequency <= 10.0);
        }
        assert!(synthesize_on_grid(3, 1.0, 0.5, 0.0, 3, 1.0).is_err());
    }

    #[test]
    fn split_reconstructs_exactly() {
        let sig = synthesize_signal(5, 2.0, 5, 1.0).unwrap();
        let (s1, s2) = split_signal(&sig, 99);
        assert!(s1.is_band_limited() && s2.is_band_limited());
        let grid: Vec<f64> = (0..1000).map(|i| -3.0 + 0.0071 * i as f64).collect();
        let worst = grid
            .iter()
            .map(|&t| (s1.eval(t) + s2.eval(t) - sig.eval(t)).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-12, "worst {worst}");
    }

    #[test]
    fn split_of_zero_signal() {
        let zero = BandlimitedSignal::zero(1.0).unwrap();
        let (s1, s2) = split_signal(&zero, 4);
        assert!(!s1.components().is_empty());
        for i in 0..50 {
            let t = 0.13 * i as f64;
            assert!((s1.eval(t) + s2.eval(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn rmse_properties() {
        let a = synthesize_signal(1, 1.0, 3, 1.0).unwrap();
        let b = synthesize_signal(2, 1.0, 3, 1.0).unwrap();
        let grid = uniform_grid(10.0, 500);
        assert_eq!(signal_rmse(&a, &a, &grid).unwrap(), 0.0);
        assert_eq!(
            signal_rmse(&a, &b, &grid).unwrap(),
            signal_rmse(&b, &a, &grid).unwrap()
        );
        assert!(signal_rmse(&a, &b, &[]).is_err());
    }

    #[test]
    fn rmse_of_unit_tone_is_one_over_root_two() {
        // Independent reference: trapezoidal quadrature of cos² over 50 periods.
        let n = 200_000;
        let periods = 50.0;
        let h = periods / n as f64;
        let mut integral = 0.0;
        for i in 0..=n {
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            integral += w * (TAU * i as f64 * h).cos().powi(2);
        }
        let reference = (integral * h / periods).sqrt();
        assert!((reference - 0.5f64.sqrt()).abs() < 1e-9);

        let tone = BandlimitedSignal::new(1.0, vec![Tone::new(1.0, 1.0, 0.0)]).unwrap();
        let zero = BandlimitedSignal::zero(1.0).unwrap();
        let grid = uniform_grid(periods, 20_000);
        let rmse = signal_rmse(&tone, &zero, &grid).unwrap();
        assert!((rmse - reference).abs() < 1e-6, "{rmse} vs {reference}");
    }

    #[test]
    fn mean_power_matches_grid_rms() {
        let sig = synthesize_on_grid(8, 4.0, 0.25, 0.25, 4, 1.0).unwrap();
        let grid = uniform_grid(4.0, 4096);
        let rms = signal_rms(&sig, &grid).unwrap();
        assert!((rms - sig.mean_power().sqrt()).abs() < 1e-9);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn eval_is_linear(seed_a in 0u64..1000, seed_b in 0u64..1000, t in -10.0f64..10.0) {
                let a = synthesize_signal(seed_a, 2.0, 4, 1.0).unwrap();
                let b = synthesize_signal(seed_b, 2.0, 3, 1.0).unwrap();
                let sum = a.plus(&b);
                prop_assert!((sum.eval(t) - a.eval(t) - b.eval(t)).abs() < 1e-12);
            }

            #[test]
            fn split_identity_holds(seed in 0u64..10_000, t in -10.0f64..10.0) {
                let sig = synthesize_signal(seed, 5.0, 6, 3.0).unwrap();
                let (s1, s2) = split_signal(&sig, seed ^ 0xABCD);
                prop_assert!((s1.eval(t) + s2.eval(t) - sig.eval(t)).abs() < 1e-12);
            }

            #[test]
            fn rmse_is_a_pseudometric(seed_a in 0u64..1000, seed_b in 0u64..1000) {
                let a = synthesize_signal(seed_a, 1.0, 3, 1.0).unwrap();
                let b = synthesize_signal(seed_b, 1.0, 3, 1.0).unwrap();
                let grid = uniform_grid(5.0, 64);
                let ab = signal_rmse(&a, &b, &grid).unwrap();
                prop_assert!(ab >= 0.0);
                prop_assert_eq!(ab, signal_rmse(&b, &a, &grid).unwrap());
                prop_assert_eq!(signal_rmse(&a, &a, &grid).unwrap(), 0.0);
            }
        }
    }
}
