//! Tsallis q-exponential, the Lambert-Tsallis `W_q` function, and bracketed
//! root finding.
//!
//! `exp_q(x) = [1 + (1−q)x]^{1/(1−q)}` (with `exp_1 = exp`) and `W_q(z)` is the
//! principal solution of `W·exp_q(W) = z`.
//!
//! Writing `g(W) = W·exp_q(W)`, one has
//! `g'(W) = exp_q(W)·(1 + (2−q)W) / (1 + (1−q)W)`, so:
//!
//! - `q < 2`: `g` has a minimum at `W = −1/(2−q)`; the principal branch is
//!   `W ≥ −1/(2−q)` and the domain is `z ≥ g(−1/(2−q))` (`−1/e` at `q = 1`).
//! - `q = 2`: `g(W) = W/(1−W)` is increasing on `W < 1`; the domain is `z > −1`.
//! - `q > 2`: `g` is increasing on its whole domain `W < 1/(q−1)` and maps it
//!   onto the real line, so every real `z` has exactly one solution.
//!
//! The compensated-transmissivity closed form needs `q > 2`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Absolute tolerance used by [`solve_monotone_root`] callers by default.
pub const DEFAULT_ROOT_TOLERANCE: f64 = 1e-12;
/// Iteration cap shared by both root finders.
pub const MAX_ROOT_ITERATIONS: usize = 200;

/// `[1 + (1−q)x]^{1/(1−q)}`, or `e^x` at `q = 1`.
///
/// Outside the support (`1 + (1−q)x ≤ 0`) this is a domain error rather than
/// the conventional cutoff to zero.
pub fn q_exponential(q: f64, x: f64) -> Result<f64> {
    if !(q.is_finite() && x.is_finite()) {
        return Err(Error::Domain(format!(
            "exp_q needs finite arguments, got q={q}, x={x}"
        )));
    }
    if q == 1.0 {
        return Ok(x.exp());
    }
    let d = (1.0 - q) * x;
    if !(d > -1.0) {
        return Err(Error::Domain(format!(
            "exp_q undefined: 1 + (1 - q)x = {} <= 0 (q={q}, x={x})",
            1.0 + d
        )));
    }
    // ln_1p keeps the q → 1 limit accurate.
    Ok((d.ln_1p() / (1.0 - q)).exp())
}

/// Argument of `W_q`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WqQuery {
    pub q: f64,
    pub z: f64,
}

impl WqQuery {
    pub fn new(q: f64, z: f64) -> Self {
        WqQuery { q, z }
    }
}

/// `g(W) = W·exp_q(W)` and its derivative; `+∞` past the upper pole.
fn wq_objective(q: f64, w: f64) -> (f64, f64) {
    if q == 1.0 {
        let e = w.exp();
        return (w * e, e * (1.0 + w));
    }
    let d = (1.0 - q) * w;
    if d <= -1.0 {
        // Only reachable from the pole side for q > 1.
        return (f64::INFINITY, f64::INFINITY);
    }
    let e = (d.ln_1p() / (1.0 - q)).exp();
    let g = w * e;
    let dg = e * (1.0 + (2.0 - q) * w) / (1.0 + d);
    (g, dg)
}

/// Lower end of the principal branch and the smallest attainable `z`, when
/// they exist (`q < 2`).
pub fn wq_branch_point(q: f64) -> Option<(f64, f64)> {
    if q < 2.0 {
        let w = -1.0 / (2.0 - q);
        Some((w, wq_objective(q, w).0))
    } else {
        None
    }
}

/// Principal branch of the Lambert-Tsallis function: the `W` with
/// `W·exp_q(W) = z`.
///
/// Supported for every `q ≥ 0`; see the module docs for the domain.
pub fn lambert_tsallis_wq(query: WqQuery) -> Result<f64> {
    let WqQuery { q, z } = query;
    if !(q.is_finite() && z.is_finite()) {
        return Err(Error::Domain(format!(
            "W_q needs finite q and z, got q={q}, z={z}"
        )));
    }
    if q < 0.0 {
        return Err(Error::Domain(format!(
            "W_q is only provided for q >= 0, got q={q}"
        )));
    }
    if z == 0.0 {
        return Ok(0.0);
    }

    let g = |w: f64| wq_objective(q, w).0;

    // Bracket [lo, hi] with g(lo) <= z <= g(hi); g is increasing on the branch.
    let (lo, hi) = if z > 0.0 {
        let hi = if q > 1.0 {
            // Approach the pole 1/(q−1) geometrically.
            let pole = 1.0 / (q - 1.0);
            let mut gap = 0.5 * pole;
            let mut hi = pole - gap;
            let mut steps = 0;
            while g(hi) < z {
                gap *= 0.5;
                let next = pole - gap;
                steps += 1;
                if next >= pole || steps > 2000 {
                    return Err(Error::NoConvergence { iterations: steps });
                }
                hi = next;
            }
            hi
        } else {
            let mut hi: f64 = 1.0;
            let mut steps = 0;
            while g(hi) < z {
                hi *= 2.0;
                steps += 1;
                if !hi.is_finite() || steps > 2000 {
                    return Err(Error::NoConvergence { iterations: steps });
                }
            }
            hi
        };
        (0.0, hi)
    } else {
        let lo = match wq_branch_point(q) {
            Some((w_branch, z_branch)) => {
                if z < z_branch {
                    return Err(Error::Domain(format!(
                        "z = {z} is below the branch point {z_branch} of W_{q}"
                    )));
                }
                if z == z_branch {
                    return Ok(w_branch);
                }
                w_branch
            }
            None => {
                if q == 2.0 && z <= -1.0 {
                    return Err(Error::Domain(format!("W_2 needs z > -1, got {z}")));
                }
                let mut lo: f64 = -1.0;
                let mut steps = 0;
                while g(lo) > z {
                    lo *= 2.0;
                    steps += 1;
                    if !lo.is_finite() || steps > 2000 {
                        return Err(Error::NoConvergence { iterations: steps });
                    }
                }
                lo
            }
        };
        (lo, 0.0)
    };

    let start = if q == 1.0 && z > 0.0 {
        z.ln_1p().clamp(lo, hi)
    } else {
        0.5 * (lo + hi)
    };
    safeguarded_newton(
        |w| {
            let (gw, dg) = wq_objective(q, w);
            (gw - z, dg)
        },
        lo,
        hi,
        start,
        0.0,
    )
}

/// Newton iteration kept inside a shrinking bracket, falling back to
/// bisection whenever a step would leave it or stalls. `f` must be
/// non-positive at `lo` and non-negative at `hi`.
///
/// Terminates when the step falls below `tol + 4ε|x|` or the bracket closes
/// to adjacent floats.
fn safeguarded_newton<F>(f: F, mut lo: f64, mut hi: f64, start: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> (f64, f64),
{
    let mut x = start;
    let mut dx_prev = hi - lo;
    let mut dx = dx_prev;
    for _ in 0..MAX_ROOT_ITERATIONS {
        let (fx, dfx) = f(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton_ok = dfx.is_finite()
            && dfx != 0.0
            && fx.is_finite()
            && (2.0 * fx).abs() <= (dx_prev * dfx).abs();
        let candidate = if newton_ok { x - fx / dfx } else { f64::NAN };
        dx_prev = dx;
        if newton_ok && candidate > lo && candidate < hi {
            dx = fx / dfx;
            x = candidate;
        } else {
            dx = 0.5 * (hi - lo);
            x = lo + dx;
        }
        if dx.abs() <= tol + 4.0 * f64::EPSILON * x.abs() || x <= lo || x >= hi {
            return Ok(x);
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_ROOT_ITERATIONS,
    })
}

fn check_bracket(lo: f64, hi: f64, tol: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::param(
            "bracket",
            format!("need finite lo < hi, got [{lo}, {hi}]"),
        ));
    }
    if !(tol > 0.0) {
        return Err(Error::param("tol", "must be > 0"));
    }
    Ok(())
}

/// Bisection root of `f` on `[lo, hi]`.
///
/// Returns a point within `tol` of a sign change of `f`. Endpoint roots are
/// returned as-is.
pub fn solve_monotone_root<F>(f: F, lo: f64, hi: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    check_bracket(lo, hi, tol)?;
    let (mut a, mut b) = (lo, hi);
    let mut fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.is_nan() || fb.is_nan() || fa.signum() == fb.signum() {
        return Err(Error::Bracket { lo, hi });
    }
    for _ in 0..MAX_ROOT_ITERATIONS {
        let mid = 0.5 * (a + b);
        if b - a <= tol || mid <= a || mid >= b {
            return Ok(mid);
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_ROOT_ITERATIONS,
    })
}

/// Bracketed root with Newton acceleration; `fdf` returns `(f(x), f'(x))`.
pub fn solve_monotone_root_newton<F>(fdf: F, lo: f64, hi: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> (f64, f64),
{
    check_bracket(lo, hi, tol)?;
    let (flo, _) = fdf(lo);
    let (fhi, _) = fdf(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.is_nan() || fhi.is_nan() || flo.signum() == fhi.signum() {
        return Err(Error::Bracket { lo, hi });
    }
    if flo < 0.0 {
        safeguarded_newton(fdf, lo, hi, 0.5 * (lo + hi), tol)
    } else {
        // Flip so the objective increases across the bracket.
        safeguarded_newton(
            |x| {
                let (v, d) = fdf(x);
                (-v, -d)
            },
            lo,
            hi,
            0.5 * (lo + hi),
            tol,
        )
    }
}
