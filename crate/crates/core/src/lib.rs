//! Simulation and security analysis of direct secure transfer of band-limited
//! analog signals over weak coherent pulses.
//!
//! Alice phase-encodes samples of a secret signal `s(t)` and of a decoy `r(t)`
//! on weak pulses with different mean photon numbers. Bob detects each pulse
//! with probability `1 - exp(-t·μ)`, so each signal reaches him as a randomly
//! thinned sample stream. The pulse rate is chosen so that only `s(t)` is
//! sampled above its Nyquist rate. An eavesdropper changes those rates and is
//! revealed when `s(t)` becomes unrecoverable or `r(t)` becomes recoverable.
//!
//! Modules, bottom up:
//!
//! - [`signal`]: finite tone sums and their algebra.
//! - [`special`]: the q-exponential, the Lambert-Tsallis `W_q` function and
//!   a bracketed root finder.
//! - [`security`]: closed-form threshold rates, the channel compensation an
//!   intercept/resend attacker needs, and the secure pulse-rate window.
//! - [`photonics`]: slot records, phase encoding and probabilistic clicks.
//! - [`reconstruct`]: least-squares reconstruction from nonuniform samples.
//! - [`adversary`]: intercept/resend and beam-splitter attacks.
//! - [`protocol`]: full sessions, verdicts and the two-phase transfer.
//! - [`cli`]: configuration, presets, reports and subcommands.

// `!(x > 0.0)` rejects NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod cli;
pub mod error;
pub mod photonics;
pub mod protocol;
pub mod reconstruct;
pub mod rng;
pub mod security;
pub mod signal;
pub mod special;

pub use error::{Error, Result};
