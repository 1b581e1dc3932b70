//! Recovery of a band-limited signal from randomly timed samples.
//!
//! The estimate is the least-squares fit of the samples onto
//! `{1, cos 2πkΔf t, sin 2πkΔf t : 1 ≤ k ≤ ⌊f_max/Δf⌋}`. A fit is accepted when
//! the system is overdetermined, the triangular factor of its QR
//! decomposition is acceptably conditioned, and the relative residual is
//! small. Below the Nyquist rate the first two gates fail with overwhelming
//! probability; above it they pass and the residual of an in-basis signal is
//! at round-off level.

use std::f64::consts::TAU;

use faer::prelude::*;
use faer::Mat;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::signal::{signal_rms, signal_rmse, BandlimitedSignal, Tone};
use crate::{Error, Result};

pub const DEFAULT_RESIDUAL_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_CONDITION_CAP: f64 = 1e12;
pub const DEFAULT_MAX_BASIS: usize = 4097;
pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.05;

/// Time-ordered samples of one signal over `[0, duration]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    points: Vec<(f64, f64)>,
    duration: f64,
}

impl SampleSet {
    pub fn new(points: Vec<(f64, f64)>, duration: f64) -> Result<Self> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::param(
                "duration",
                format!("must be finite and > 0, got {duration}"),
            ));
        }
        for (i, &(t, v)) in points.iter().enumerate() {
            if !(t >= 0.0 && t <= duration) {
                return Err(Error::param(
                    "points",
                    format!("time {t} outside [0, {duration}]"),
                ));
            }
            if !v.is_finite() {
                return Err(Error::param(
                    "points",
                    format!("non-finite value at time {t}"),
                ));
            }
            if i > 0 && !(t > points[i - 1].0) {
                return Err(Error::param("points", "times must be strictly increasing"));
            }
        }
        Ok(SampleSet { points, duration })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Samples `sig` on the slot grid `i·period` (for `i·period ≤ duration`),
/// keeping each slot independently with probability `keep`.
pub fn bernoulli_thinned<R: Rng + ?Sized>(
    sig: &BandlimitedSignal,
    period: f64,
    keep: f64,
    duration: f64,
    rng: &mut R,
) -> Result<SampleSet> {
    if !(period > 0.0) || !(0.0..=1.0).contains(&keep) {
        return Err(Error::param(
            "period/keep",
            format!("need period > 0 and keep in [0, 1], got {period}, {keep}"),
        ));
    }
    let slots = (duration / period).floor() as u64;
    let points = (0..=slots)
        .filter_map(|i| {
            let t = i as f64 * period;
            (rng.random::<f64>() < keep && t <= duration).then(|| (t, sig.eval(t)))
        })
        .collect();
    SampleSet::new(points, duration)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionOptions {
    /// Basis frequency spacing; `None` means `1/duration`.
    pub frequency_step: Option<f64>,
    /// Tikhonov weight relative to the largest column norm squared.
    pub ridge: f64,
    pub residual_tolerance: f64,
    /// Largest accepted 1-norm condition estimate of the triangular factor.
    pub condition_cap: f64,
    pub max_basis: usize,
}

impl Default for ReconstructionOptions {
    fn default() -> Self {
        ReconstructionOptions {
            frequency_step: None,
            ridge: 0.0,
            residual_tolerance: DEFAULT_RESIDUAL_TOLERANCE,
            condition_cap: DEFAULT_CONDITION_CAP,
            max_basis: DEFAULT_MAX_BASIS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub estimate: BandlimitedSignal,
    pub relative_residual: f64,
    pub ok: bool,
    pub diagnostic: String,
    pub basis_size: usize,
    pub sample_count: usize,
    /// `None` when no factorization was attempted.
    pub condition_estimate: Option<f64>,
}

/// Samples per second.
pub fn average_rate(samples: &SampleSet) -> f64 {
    samples.len() as f64 / samples.duration
}

/// Strict `average_rate > f_base`.
pub fn nyquist_ok(samples: &SampleSet, f_base: f64) -> bool {
    average_rate(samples) > f_base
}

/// Number of basis functions for a given band and step.
pub fn basis_size(f_max: f64, step: f64) -> usize {
    // Tolerate round-off when f_max is an exact multiple of the step.
    let k = (f_max / step * (1.0 + 1e-12)).floor() as usize;
    2 * k + 1
}

pub fn reconstruct_signal(
    samples: &SampleSet,
    f_max: f64,
    options: &ReconstructionOptions,
) -> Result<ReconstructionResult> {
    if samples.is_empty() {
        return Err(Error::param("samples", "need at least one sample"));
    }
    if !(f_max > 0.0) {
        return Err(Error::param("f_max", "must be > 0"));
    }
    let step = options.frequency_step.unwrap_or(1.0 / samples.duration);
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::param(
            "frequency_step",
            format!("must be > 0, got {step}"),
        ));
    }
    if !(options.ridge >= 0.0) {
        return Err(Error::param("ridge", "must be >= 0"));
    }
    let m = basis_size(f_max, step);
    if m > options.max_basis {
        return Err(Error::param(
            "frequency_step",
            format!(
                "basis of {m} functions exceeds the cap {}",
                options.max_basis
            ),
        ));
    }
    let k_max = (m - 1) / 2;
    let n = samples.len();
    let b_norm = samples.points.iter().map(|p| p.1 * p.1).sum::<f64>().sqrt();

    let underdetermined = n < m && options.ridge == 0.0;
    if underdetermined {
        return Ok(ReconstructionResult {
            estimate: BandlimitedSignal::zero(f_max)?,
            relative_residual: if b_norm > 0.0 { 1.0 } else { 0.0 },
            ok: false,
            diagnostic: format!("underdetermined: {n} samples for {m} basis functions"),
            basis_size: m,
            sample_count: n,
            condition_estimate: None,
        });
    }

    let column = |t: f64, j: usize| -> f64 {
        if j == 0 {
            1.0
        } else {
            let k = j.div_ceil(2);
            let theta = TAU * k as f64 * step * t;
            if j % 2 == 1 {
                theta.cos()
            } else {
                theta.sin()
            }
        }
    };
    let ridge_rows = if options.ridge > 0.0 { m } else { 0 };
    let mut a = Mat::<f64>::zeros(n + ridge_rows, m);
    for (i, &(t, _)) in samples.points.iter().enumerate() {
        for j in 0..m {
            a[(i, j)] = column(t, j);
        }
    }
    if ridge_rows > 0 {
        let max_diag = (0..m)
            .map(|j| (0..n).map(|i| a[(i, j)] * a[(i, j)]).sum::<f64>())
            .fold(0.0, f64::max);
        let w = (options.ridge * max_diag).sqrt();
        for j in 0..m {
            a[(n + j, j)] = w;
        }
    }
    let mut b = Mat::<f64>::zeros(n + ridge_rows, 1);
    for (i, &(_, v)) in samples.points.iter().enumerate() {
        b[(i, 0)] = v;
    }

    let qr = a.qr();
    let r = qr.thin_R();
    let r_dense: Vec<f64> = (0..m)
        .flat_map(|j| (0..m).map(move |i| (i, j)))
        .map(|(i, j)| r[(i, j)])
        .collect();
    let cond = triangular_condition_1norm(&r_dense, m);
    let x = qr.solve_lstsq(&b);
    let coeffs: Vec<f64> = (0..m).map(|j| x[(j, 0)]).collect();

    let mut r_norm2 = 0.0;
    for &(t, v) in &samples.points {
        let fit: f64 = (0..m).map(|j| coeffs[j] * column(t, j)).sum();
        r_norm2 += (fit - v) * (fit - v);
    }
    let relative_residual = if b_norm > 0.0 {
        r_norm2.sqrt() / b_norm
    } else {
        r_norm2.sqrt()
    };

    let mut tones = Vec::with_capacity(k_max + 1);
    tones.push(Tone::new(0.0, coeffs[0], 0.0));
    for k in 1..=k_max {
        let (c, s) = (coeffs[2 * k - 1], coeffs[2 * k]);
        // c·cos θ + s·sin θ = A·cos(θ + φ).
        tones.push(Tone::new(k as f64 * step, c.hypot(s), (-s).atan2(c)));
    }
    let estimate = BandlimitedSignal::new(f_max, tones)?;

    let well_conditioned = cond.is_finite() && cond <= options.condition_cap;
    let small_residual = relative_residual <= options.residual_tolerance;
    let diagnostic = match (well_conditioned, small_residual) {
        (true, true) => "ok".to_string(),
        (false, _) => format!(
            "ill-conditioned basis: condition estimate {cond:.3e} exceeds {:.3e}",
            options.condition_cap
        ),
        (true, false) => format!(
            "relative residual {relative_residual:.3e} exceeds {:.3e}",
            options.residual_tolerance
        ),
    };
    Ok(ReconstructionResult {
        estimate,
        relative_residual,
        ok: well_conditioned && small_residual,
        diagnostic,
        basis_size: m,
        sample_count: n,
        condition_estimate: Some(cond),
    })
}

/// Solves `R y = x` in place; `r` is column-major upper triangular.
fn upper_solve(r: &[f64], n: usize, x: &mut [f64]) {
    for j in (0..n).rev() {
        x[j] /= r[j * n + j];
        let yj = x[j];
        let col = &r[j * n..j * n + j];
        for (xi, rij) in x[..j].iter_mut().zip(col) {
            *xi -= rij * yj;
        }
    }
}

/// Solves `Rᵀ z = x` in place.
fn upper_transpose_solve(r: &[f64], n: usize, x: &mut [f64]) {
    for j in 0..n {
        let col = &r[j * n..j * n + j];
        let dot: f64 = col.iter().zip(&x[..j]).map(|(a, b)| a * b).sum();
        x[j] = (x[j] - dot) / r[j * n + j];
    }
}

/// `‖R‖₁·‖R⁻¹‖₁`, with the inverse norm from Hager's estimator plus Higham's
/// alternating-sign test vector. A lower bound that is rarely off by more
/// than a small factor.
fn triangular_condition_1norm(r: &[f64], n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    if (0..n).any(|j| {
        let d = r[j * n + j];
        d == 0.0 || !d.is_finite()
    }) {
        return f64::INFINITY;
    }
    let norm_r = (0..n)
        .map(|j| r[j * n..j * n + j + 1].iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);

    let l1 = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>();
    let mut x = vec![1.0 / n as f64; n];
    let mut est = 0.0f64;
    let mut last_j = usize::MAX;
    for _ in 0..5 {
        let mut y = x.clone();
        upper_solve(r, n, &mut y);
        let y_norm = l1(&y);
        if !y_norm.is_finite() {
            return f64::INFINITY;
        }
        if y_norm <= est {
            break;
        }
        est = y_norm;
        let mut z: Vec<f64> = y
            .iter()
            .map(|v| if *v >= 0.0 { 1.0 } else { -1.0 })
            .collect();
        upper_transpose_solve(r, n, &mut z);
        let (j, zmax) = z
            .iter()
            .enumerate()
            .map(|(i, v)| (i, v.abs()))
            .fold((0, -1.0), |acc, c| if c.1 > acc.1 { c } else { acc });
        let ztx: f64 = z.iter().zip(&x).map(|(a, b)| a * b).sum();
        if zmax <= ztx || j == last_j {
            break;
        }
        last_j = j;
        x.iter_mut().for_each(|v| *v = 0.0);
        x[j] = 1.0;
    }
    let mut alt: Vec<f64> = (0..n)
        .map(|i| {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            sign * (1.0 + i as f64 / (n.max(2) - 1) as f64)
        })
        .collect();
    upper_solve(r, n, &mut alt);
    let alt_est = 2.0 * l1(&alt) / (3.0 * n as f64);
    norm_r * est.max(alt_est)
}

/// Bob's decoy check: the reconstruction succeeded and matches the disclosed
/// signal to within `match_threshold` of its RMS on `grid`.
pub fn compare_decoy(
    result: &ReconstructionResult,
    disclosed: &BandlimitedSignal,
    grid: &[f64],
    match_threshold: f64,
) -> Result<bool> {
    if !result.ok {
        return Ok(false);
    }
    let rmse = signal_rmse(&result.estimate, disclosed, grid)?;
    let rms = signal_rms(disclosed, grid)?;
    Ok(rmse <= match_threshold * rms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, StreamRole};
    use crate::signal::{synthesize_on_grid, uniform_grid};

    fn uniform_samples(sig: &BandlimitedSignal, n: usize, duration: f64) -> SampleSet {
        let pts = (0..n)
            .map(|i| {
                let t = duration * i as f64 / n as f64;
                (t, sig.eval(t))
            })
            .collect();
        SampleSet::new(pts, duration).unwrap()
    }

    #[test]
    fn sample_set_validation() {
        assert!(SampleSet::new(vec![], 0.0).is_err());
        assert!(SampleSet::new(vec![(0.5, 1.0), (0.5, 2.0)], 1.0).is_err());
        assert!(SampleSet::new(vec![(1.5, 1.0)], 1.0).is_err());
        assert!(SampleSet::new(vec![(0.0, 1.0), (1.0, 2.0)], 1.0).is_ok());
    }

    #[test]
    fn rate_examples() {
        let pts: Vec<_> = (0..10).map(|i| (0.2 * i as f64, 0.0)).collect();
        let s = SampleSet::new(pts.clone(), 2.0).unwrap();
        assert_eq!(average_rate(&s), 5.0);
        assert_eq!(average_rate(&SampleSet::new(vec![], 2.0).unwrap()), 0.0);
        assert_eq!(average_rate(&SampleSet::new(pts, 4.0).unwrap()), 2.5);
        assert!(nyquist_ok(&s, 4.0));
        assert!(!nyquist_ok(&s, 5.0));
        let scaled: Vec<_> = (0..10).map(|i| (0.4 * i as f64, 0.0)).collect();
        let s2 = SampleSet::new(scaled, 4.0).unwrap();
        assert_eq!(nyquist_ok(&s, 4.0), nyquist_ok(&s2, 2.0));
    }

    #[test]
    fn basis_size_counts() {
        assert_eq!(basis_size(1.0, 0.25), 9);
        assert_eq!(basis_size(0.3, 0.1), 7);
        assert_eq!(basis_size(0.05, 0.1), 1);
    }

    #[test]
    fn exact_on_grid_tone() {
        // 64 samples per period, 8 periods.
        let sig = BandlimitedSignal::new(2.0, vec![Tone::new(1.0, 0.7, 0.4)]).unwrap();
        let s = uniform_samples(&sig, 512, 8.0);
        let res = reconstruct_signal(&s, 2.0, &ReconstructionOptions::default()).unwrap();
        assert!(res.ok, "{}", res.diagnostic);
        assert!(res.relative_residual < 1e-10);
        let merged = res.estimate.merged();
        let tone = merged
            .components()
            .iter()
            .find(|t| (t.frequency - 1.0).abs() < 1e-12)
            .unwrap();
        assert!((tone.amplitude - 0.7).abs() < 1e-8);
        assert!((tone.phase - 0.4).abs() < 1e-8);
    }

    #[test]
    fn underdetermined_is_rejected() {
        let sig = BandlimitedSignal::new(4.0, vec![Tone::new(1.0, 1.0, 0.0)]).unwrap();
        let s = uniform_samples(&sig, 10, 4.0);
        let res = reconstruct_signal(&s, 4.0, &ReconstructionOptions::default()).unwrap();
        assert!(!res.ok);
        assert_eq!(res.relative_residual, 1.0);
        assert!(res.diagnostic.contains("underdetermined"));
    }

    #[test]
    fn basis_cap_and_empty_input() {
        let sig = BandlimitedSignal::new(4.0, vec![Tone::new(1.0, 1.0, 0.0)]).unwrap();
        let s = uniform_samples(&sig, 100, 1.0);
        let opts = ReconstructionOptions {
            max_basis: 5,
            ..Default::default()
        };
        assert!(matches!(
            reconstruct_signal(&s, 4.0, &opts),
            Err(Error::Parameter { .. })
        ));
        let empty = SampleSet::new(vec![], 1.0).unwrap();
        assert!(reconstruct_signal(&empty, 4.0, &ReconstructionOptions::default()).is_err());
    }

    #[test]
    fn condition_estimate_against_known_matrices() {
        // Identity and diag(1, 1e-6) have exact condition numbers 1 and 1e6.
        let id = vec![1.0, 0.0, 0.0, 1.0];
        assert!((triangular_condition_1norm(&id, 2) - 1.0).abs() < 1e-12);
        let d = vec![1.0, 0.0, 0.0, 1e-6];
        assert!((triangular_condition_1norm(&d, 2) - 1e6).abs() < 1e-3);
        // [[1, -1], [0, 1]]: inverse [[1, 1], [0, 1]], both 1-norms are 2.
        let u = vec![1.0, 0.0, -1.0, 1.0];
        assert!((triangular_condition_1norm(&u, 2) - 4.0).abs() < 1e-12);
        let singular = vec![1.0, 0.0, 1.0, 0.0];
        assert!(triangular_condition_1norm(&singular, 2).is_infinite());
    }

    #[test]
    fn triangular_solves_invert() {
        let r = vec![2.0, 0.0, 0.0, 1.0, 3.0, 0.0, -1.0, 0.5, 4.0];
        let mut x = vec![1.0, 2.0, 3.0];
        upper_solve(&r, 3, &mut x);
        // R·x reproduces the right-hand side.
        let rx: Vec<f64> = (0..3)
            .map(|i| (0..3).map(|j| r[j * 3 + i] * x[j]).sum())
            .collect();
        for (a, b) in rx.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-14);
        }
        let mut z = vec![1.0, 2.0, 3.0];
        upper_transpose_solve(&r, 3, &mut z);
        let rtz: Vec<f64> = (0..3)
            .map(|i| (0..3).map(|j| r[i * 3 + j] * z[j]).sum())
            .collect();
        for (a, b) in rtz.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    fn trial(seed: u64, oversampling: f64) -> (bool, f64) {
        // 5 on-grid tones, 64 periods of the lowest basis frequency.
        let duration = 64.0;
        let f_max = 1.0;
        let sig = synthesize_on_grid(seed, f_max, 2.0 / duration, 32.0 / duration, 5, 1.0).unwrap();
        let period = 0.05;
        let keep = oversampling * 2.0 * f_max * period;
        let mut rng = substream(seed, 0, StreamRole::Experiment);
        let s = bernoulli_thinned(&sig, period, keep, duration, &mut rng).unwrap();
        let res = reconstruct_signal(&s, f_max, &ReconstructionOptions::default()).unwrap();
        let grid = uniform_grid(duration, 4096);
        let err =
            signal_rmse(&res.estimate, &sig, &grid).unwrap() / signal_rms(&sig, &grid).unwrap();
        (res.ok, err)
    }

    #[test]
    fn random_sampling_above_and_below_nyquist() {
        let mut good = 0;
        let mut refused = 0;
        for seed in 0..20 {
            let (ok, err) = trial(seed, 3.0);
            if ok && err < 1e-6 {
                good += 1;
            }
            if !trial(seed, 0.5).0 {
                refused += 1;
            }
        }
        assert!(good >= 19, "{good}");
        assert_eq!(refused, 20);
    }

    #[test]
    fn reconstruction_is_deterministic() {
        let sig = synthesize_on_grid(3, 1.0, 0.125, 0.5, 4, 1.0).unwrap();
        let mut rng = substream(3, 0, StreamRole::Experiment);
        let s = bernoulli_thinned(&sig, 0.1, 0.5, 16.0, &mut rng).unwrap();
        let a = reconstruct_signal(&s, 1.0, &ReconstructionOptions::default()).unwrap();
        let b = reconstruct_signal(&s, 1.0, &ReconstructionOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn residual_gate_trips_on_out_of_band_content() {
        let sig = BandlimitedSignal::new(
            3.0,
            vec![Tone::new(0.5, 1.0, 0.0), Tone::new(2.75, 1.0, 0.3)],
        )
        .unwrap();
        let s = uniform_samples(&sig, 800, 8.0);
        let res = reconstruct_signal(&s, 1.0, &ReconstructionOptions::default()).unwrap();
        assert!(!res.ok);
        assert!(res.diagnostic.contains("residual"));
        assert!(res.relative_residual > 0.5);
    }

    #[test]
    fn ridge_keeps_the_fit_close() {
        let sig = synthesize_on_grid(5, 1.0, 0.25, 0.25, 3, 1.0).unwrap();
        let s = uniform_samples(&sig, 64, 8.0);
        let opts = ReconstructionOptions {
            ridge: 1e-12,
            ..Default::default()
        };
        let res = reconstruct_signal(&s, 1.0, &opts).unwrap();
        assert!(res.ok);
        assert!(res.relative_residual < 1e-6);
    }

    #[test]
    fn decoy_comparison() {
        let sig = synthesize_on_grid(9, 1.0, 0.25, 0.25, 3, 1.0).unwrap();
        let s = uniform_samples(&sig, 64, 8.0);
        let res = reconstruct_signal(&s, 1.0, &ReconstructionOptions::default()).unwrap();
        let grid = uniform_grid(8.0, 2048);
        assert!(compare_decoy(&res, &sig, &grid, 0.05).unwrap());
        // rmse of a doubled signal equals the signal RMS, far above 5%.
        assert!(!compare_decoy(&res, &sig.scaled(2.0), &grid, 0.05).unwrap());
        let failed = ReconstructionResult { ok: false, ..res };
        assert!(!compare_decoy(&failed, &sig, &grid, 0.05).unwrap());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn least_squares_consistency(seed in 0u64..1000) {
                let sig = synthesize_on_grid(seed, 1.0, 0.25, 0.25, 3, 1.0).unwrap();
                let mut rng = substream(seed, 0, StreamRole::Experiment);
                let s = bernoulli_thinned(&sig, 0.1, 0.4, 8.0, &mut rng).unwrap();
                let res = reconstruct_signal(&s, 1.0, &ReconstructionOptions::default()).unwrap();
                if res.condition_estimate.is_some() {
                    let norm: f64 = s.points().iter().map(|p| p.1 * p.1).sum::<f64>().sqrt();
                    let r: f64 = s.points().iter().map(|&(t, v)| (res.estimate.eval(t) - v).powi(2)).sum::<f64>().sqrt();
                    prop_assert!(r <= res.relative_residual * norm + 1e-9);
                }
            }
        }
    }
}
