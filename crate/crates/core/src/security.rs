//! Closed-form security quantities.
//!
//! Alice sends the secret on pulses of mean photon number `μ_s` and the decoy
//! on `μ_r < μ_s`, each with probability ½. Bob receives a sample of either
//! signal with probability `1 − e^{−t_c μ}`, so each stream is a thinned
//! version of the pulse train. Every threshold below has the form
//! `prefactor · f_base / p_click`, where `f_base = f_max` (or `f_sub/2` for
//! signals admitting sub-Nyquist sampling). With `prefactor = 4` the
//! condition `1/T_p > threshold` is exactly "the thinned stream beats the
//! Nyquist rate `2 f_base`"; `prefactor = 1` reproduces the commonly quoted
//! multiples of `f_max` (3.307, 4.687, 3.878 at `μ_s=0.6, μ_r=0.4, t_c=0.6`).

use serde::{Deserialize, Serialize};

use crate::special::{lambert_tsallis_wq, solve_monotone_root, WqQuery, DEFAULT_ROOT_TOLERANCE};
use crate::{Error, Result};

/// Default threshold prefactor.
pub const DEFAULT_RATE_PREFACTOR: f64 = 4.0;
/// Upper end of the bracket searched for the compensating transmissivity.
pub const COMPENSATION_BRACKET_MAX: f64 = 10.0;

/// Every symbol entering the threshold formulas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub mu_s: f64,
    pub mu_r: f64,
    /// End-to-end transmissivity, Bob's apparatus included.
    pub t_c: f64,
    /// Hz.
    pub f_max: f64,
    /// Pulse-pair period, seconds.
    pub t_p: f64,
    pub rate_prefactor: f64,
    /// Sub-Nyquist base rate replacing `2·f_max`, Hz.
    pub f_sub: Option<f64>,
}

impl ProtocolParams {
    pub fn new(mu_s: f64, mu_r: f64, t_c: f64, f_max: f64, t_p: f64) -> Result<Self> {
        let p = ProtocolParams {
            mu_s,
            mu_r,
            t_c,
            f_max,
            t_p,
            rate_prefactor: DEFAULT_RATE_PREFACTOR,
            f_sub: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_prefactor(mut self, prefactor: f64) -> Result<Self> {
        self.rate_prefactor = prefactor;
        self.validate()?;
        Ok(self)
    }

    pub fn with_f_sub(mut self, f_sub: Option<f64>) -> Result<Self> {
        self.f_sub = f_sub;
        self.validate()?;
        Ok(self)
    }

    /// Sets `T_p` from a pulse rate in Hz.
    pub fn with_pulse_rate(mut self, rate: f64) -> Result<Self> {
        self.t_p = 1.0 / rate;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let finite_pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::param(
                    name,
                    format!("must be finite and > 0, got {v}"),
                ))
            }
        };
        finite_pos("mu_r", self.mu_r)?;
        finite_pos("mu_s", self.mu_s)?;
        if !(self.mu_s > self.mu_r) {
            return Err(Error::param(
                "mu_s",
                format!(
                    "requires mu_s > mu_r, got mu_s={} mu_r={}",
                    self.mu_s, self.mu_r
                ),
            ));
        }
        if !(self.t_c > 0.0 && self.t_c <= 1.0) {
            return Err(Error::param(
                "t_c",
                format!("must lie in (0, 1], got {}", self.t_c),
            ));
        }
        finite_pos("t_p", self.t_p)?;
        finite_pos("f_max", self.f_max)?;
        finite_pos("rate_prefactor", self.rate_prefactor)?;
        if let Some(f_sub) = self.f_sub {
            if !(f_sub > 0.0 && f_sub <= 2.0 * self.f_max) {
                return Err(Error::param(
                    "f_sub",
                    format!(
                        "must lie in (0, 2·f_max = {}], got {f_sub}",
                        2.0 * self.f_max
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Half the base sampling rate: `f_max`, or `f_sub/2` under sub-Nyquist sampling.
    pub fn f_base(&self) -> f64 {
        match self.f_sub {
            Some(f_sub) => f_sub / 2.0,
            None => self.f_max,
        }
    }

    pub fn pulse_rate(&self) -> f64 {
        1.0 / self.t_p
    }

    fn numerator(&self) -> f64 {
        self.rate_prefactor * self.f_base()
    }
}

/// `1 − e^{−t·μ}`: probability that at least one photon of a coherent pulse
/// survives a channel of transmissivity `t`.
#[inline]
pub fn click_probability(t_eff: f64, mu: f64) -> f64 {
    -(-t_eff * mu).exp_m1()
}

/// Pulse rate above which Bob recovers `s(t)` on the honest channel.
pub fn threshold_s(p: &ProtocolParams) -> f64 {
    p.numerator() / click_probability(p.t_c, p.mu_s)
}

/// Pulse rate above which Bob recovers the decoy `r(t)` on the honest channel.
pub fn threshold_r(p: &ProtocolParams) -> f64 {
    p.numerator() / click_probability(p.t_c, p.mu_r)
}

/// Pulse rate above which Bob recovers either signal when an intercept/resend
/// attacker re-emits every pulse with `μ_s` or `μ_r` at random and the channel
/// has transmissivity `t_channel`.
pub fn threshold_eve_intercept(p: &ProtocolParams, t_channel: f64) -> f64 {
    let mixed =
        0.5 * click_probability(t_channel, p.mu_s) + 0.5 * click_probability(t_channel, p.mu_r);
    p.numerator() / mixed
}

/// `e^{−t'μ_s} + e^{−t'μ_r} − 2e^{−t_c μ_s}`: zero at the transmissivity that
/// makes the attacked click rate equal the honest signal click rate.
pub fn compensation_residual(t_prime: f64, p: &ProtocolParams) -> f64 {
    (-t_prime * p.mu_s).exp() + (-t_prime * p.mu_r).exp() - 2.0 * (-p.t_c * p.mu_s).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompensationMethod {
    /// Lambert-Tsallis closed form.
    ClosedForm,
    /// Bisection on [`compensation_residual`].
    Numeric,
}

/// Transmissivity `t'_c` an intercept/resend attacker must give Bob's channel
/// so that Bob's signal click rate is unchanged.
///
/// The closed form substitutes `w = e^{t'(μ_s−μ_r)}` into the residual
/// equation, which becomes `w·(1+w)^{1/p'}`-type and is solved by
///
/// ```text
/// t'_c = ln[ p · W_q(z) ] / (μ_s − μ_r),
/// p = μ_s/(μ_r − μ_s),  q = 1 − p,  z = (1/p)·(2e^{−t_c μ_s})^{1/p}.
/// ```
///
/// Here `q > 2` and `z < 0`. Values above 1 are mathematically valid roots
/// that no physical channel can provide; callers decide what to do with them.
pub fn compensated_transmissivity(p: &ProtocolParams, method: CompensationMethod) -> Result<f64> {
    p.validate()?;
    match method {
        CompensationMethod::Numeric => {
            let f = |t: f64| compensation_residual(t, p);
            if f(COMPENSATION_BRACKET_MAX) > 0.0 {
                return Err(Error::Infeasible(format!(
                    "no root of the compensation condition in [0, {COMPENSATION_BRACKET_MAX}]"
                )));
            }
            solve_monotone_root(f, 0.0, COMPENSATION_BRACKET_MAX, DEFAULT_ROOT_TOLERANCE).map_err(
                |e| match e {
                    Error::Bracket { .. } => Error::Infeasible(e.to_string()),
                    other => other,
                },
            )
        }
        CompensationMethod::ClosedForm => {
            let ratio = p.mu_s / (p.mu_r - p.mu_s);
            let inv = 1.0 / ratio;
            let q = 1.0 - ratio;
            let ln_c = std::f64::consts::LN_2 - p.t_c * p.mu_s;
            let z = inv * (inv * ln_c).exp();
            let w = lambert_tsallis_wq(WqQuery::new(q, z))
                .map_err(|e| Error::Infeasible(format!("W_q evaluation failed: {e}")))?;
            let t = (ratio * w).ln() / (p.mu_s - p.mu_r);
            if !t.is_finite() || !(0.0..=COMPENSATION_BRACKET_MAX).contains(&t) {
                return Err(Error::Infeasible(format!(
                    "closed form gives t'_c = {t}, outside [0, {COMPENSATION_BRACKET_MAX}]"
                )));
            }
            Ok(t)
        }
    }
}

/// Pulse rate above which a beam-splitter attacker tapping `1 − t_c` of each
/// pulse recovers `s(t)`. `None` when `t_c = 1`: the tap is empty.
pub fn threshold_eve_beamsplitter(p: &ProtocolParams) -> Option<f64> {
    let tap = 1.0 - p.t_c;
    if tap <= 0.0 {
        None
    } else {
        Some(p.numerator() / click_probability(tap, p.mu_s))
    }
}

/// All thresholds and the resulting secure pulse-rate window, in Hz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub rate_prefactor: f64,
    pub f_max: f64,
    pub f_p_s: f64,
    pub f_p_r: f64,
    pub f_p_e: f64,
    /// `None` when the beam-splitter attacker gets nothing (`t_c = 1`).
    pub f_eve_bs: Option<f64>,
    pub window_lo: f64,
    pub window_hi: f64,
    pub window_nonempty: bool,
    /// `t_c > 0.5`.
    pub bs_secure: bool,
    pub pulse_rate: f64,
    pub pulse_rate_in_window: bool,
}

impl ThresholdReport {
    /// Same report with every rate expressed in multiples of `f_max`.
    pub fn in_fmax_units(&self) -> ThresholdReport {
        let u = self.f_max;
        ThresholdReport {
            rate_prefactor: self.rate_prefactor,
            f_max: 1.0,
            f_p_s: self.f_p_s / u,
            f_p_r: self.f_p_r / u,
            f_p_e: self.f_p_e / u,
            f_eve_bs: self.f_eve_bs.map(|v| v / u),
            window_lo: self.window_lo / u,
            window_hi: self.window_hi / u,
            window_nonempty: self.window_nonempty,
            bs_secure: self.bs_secure,
            pulse_rate: self.pulse_rate / u,
            pulse_rate_in_window: self.pulse_rate_in_window,
        }
    }
}

/// Window of pulse rates for which Bob recovers `s(t)` while neither the
/// decoy nor either analyzed attacker gets a reconstructible stream.
pub fn secure_pulse_rate_window(p: &ProtocolParams) -> ThresholdReport {
    let f_p_s = threshold_s(p);
    let f_p_r = threshold_r(p);
    let f_p_e = threshold_eve_intercept(p, p.t_c);
    let f_eve_bs = threshold_eve_beamsplitter(p);
    let mut window_hi = f_p_r.min(f_p_e);
    if let Some(bs) = f_eve_bs {
        window_hi = window_hi.min(bs);
    }
    let window_lo = f_p_s;
    let window_nonempty = window_lo < window_hi;
    let rate = p.pulse_rate();
    ThresholdReport {
        rate_prefactor: p.rate_prefactor,
        f_max: p.f_max,
        f_p_s,
        f_p_r,
        f_p_e,
        f_eve_bs,
        window_lo,
        window_hi,
        window_nonempty,
        bs_secure: p.t_c > 0.5,
        pulse_rate: rate,
        pulse_rate_in_window: window_nonempty && rate > window_lo && rate < window_hi,
    }
}
