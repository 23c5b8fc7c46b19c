//! Diophantine time approximation: realize an arbitrary positive flow time
//! `t` as `p·1 − q·√2` with nonnegative integers `p, q`, so that a flow at
//! time `t` becomes `p` unit-time words followed by `q` sign-flipped √2-time
//! words. Irrationality of √2 makes `{p − q√2}` dense, so any tolerance is
//! reachable.
//!
//! This module works in `f64` regardless of the crate's scalar parameter:
//! the quantities `q·√2` grow far beyond `f32` resolution long before the
//! tolerances of interest are met, while the outputs (integer pair plus
//! residual) are precision-independent.

use crate::error::{Error, Result};
use crate::vocab::{Basis, Run, Sign, Tau, Word};

/// How time expansions are searched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KronMode {
    /// Smallest `q ≥ 0` with `|p − q√2 − t| < ε`; `q = 0` covers times that
    /// are already within `ε` of an integer.
    #[default]
    Standard,
    /// Requires `p, q ≥ 1`, reproducing the strictly-positive-integer form.
    Strict,
    /// Also admits the mirrored combination `q√2 − p`, which can shorten
    /// expansions; never longer than `Standard`.
    Signed,
}

/// A realized time approximation `t ≈ p·1 − q·√2` (or `q·√2 − p·1` when
/// `mirrored` is set, which only the `Signed` mode produces).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KroneckerPair {
    pub p: u64,
    pub q: u64,
    /// Realized minus requested time, canonical evaluation
    /// `p − q·√2 − t` (or `q·√2 − p − t` when mirrored).
    pub residual: f64,
    pub mirrored: bool,
}

const Q_CAP: u64 = 1_000_000_000;
const SQRT2: f64 = std::f64::consts::SQRT_2;
// Fractional-part tracking drifts by at most a few ulps between refreshes;
// candidates inside this guard band are re-checked exactly.
const GUARD: f64 = 1e-11;
const REFRESH: u64 = 1024;

fn canonical_residual(p: u64, q: u64, t: f64, mirrored: bool) -> f64 {
    if mirrored {
        (q as f64) * SQRT2 - (p as f64) - t
    } else {
        (p as f64) - (q as f64) * SQRT2 - t
    }
}

/// Smallest-`q` Kronecker approximation of a positive time.
///
/// Deterministic: scans `q = 0, 1, 2, …` with `p = round(t + q√2)` clamped
/// to `≥ 0` and returns the first pair satisfying `|p − q√2 − t| < ε`.
pub fn kronecker_pq(t: f64, eps: f64) -> Result<KroneckerPair> {
    kronecker_pq_mode(t, eps, KronMode::Standard)
}

/// Kronecker approximation under the chosen search mode.
pub fn kronecker_pq_mode(t: f64, eps: f64, mode: KronMode) -> Result<KroneckerPair> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidInput(format!("time must be positive, got {t}")));
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {eps}")));
    }

    let q_start = match mode {
        KronMode::Strict => 1u64,
        _ => 0,
    };

    // Track y = t + q√2 as (integer part, fractional part) so the running
    // error stays at the scale of 1 ulp of 1 rather than 1 ulp of y. The
    // fractional part is periodically recomputed from exact fract()
    // decompositions to cancel accumulated drift.
    let decompose = |q: u64| -> (u64, f64) {
        let z = q as f64 * SQRT2;
        let f = t.fract() + z.fract();
        if f >= 1.0 {
            (t.trunc() as u64 + z.trunc() as u64 + 1, f - 1.0)
        } else {
            (t.trunc() as u64 + z.trunc() as u64, f)
        }
    };
    let (mut base, mut frac) = decompose(q_start);

    let lo = eps + GUARD; // candidates: frac < lo or frac > 1 − lo
    let hi = 1.0 - lo;
    const STEP: f64 = SQRT2 - 1.0; // exact: √2 ∈ [1, 2]

    let mut q = q_start;
    let mut outer = q_start;
    loop {
        // Refresh block: scan up to REFRESH values of q with the hot loop
        // free of bookkeeping.
        let block_end = (outer + REFRESH).min(Q_CAP + 1);
        while q < block_end {
            if frac < lo || frac > hi {
                let p = if frac >= 0.5 { base + 1 } else { base };
                let p = if mode == KronMode::Strict { p.max(1) } else { p };
                let residual = canonical_residual(p, q, t, false);
                if residual.abs() < eps {
                    return Ok(KroneckerPair { p, q, residual, mirrored: false });
                }
            }
            if mode == KronMode::Signed {
                // Mirrored candidate t ≈ q√2 − p.
                let z = q as f64 * SQRT2 - t;
                if z >= 0.0 {
                    let p = z.round().max(0.0) as u64;
                    let residual = canonical_residual(p, q, t, true);
                    if residual.abs() < eps {
                        return Ok(KroneckerPair { p, q, residual, mirrored: true });
                    }
                }
            }
            q += 1;
            frac += STEP;
            base += 1;
            if frac >= 1.0 {
                frac -= 1.0;
                base += 1;
            }
        }
        if q > Q_CAP {
            return Err(Error::ResourceExhausted(format!(
                "Kronecker search exceeded q = {Q_CAP} for t = {t}, eps = {eps}"
            )));
        }
        outer = q;
        let (b, f) = decompose(q);
        base = b;
        frac = f;
    }
}

/// Expands a signed flow time for one generator basis into vocabulary words:
/// for `c < 0` the generator sign is flipped and `|c|` expanded; the result
/// is `p` copies of the unit-time word followed by `q` sign-flipped
/// √2-time words (mirrored pairs swap the two roles). `c = 0` yields an
/// empty fragment.
pub fn expand_time(basis: Basis, coeff: f64, eps: f64, mode: KronMode) -> Result<Vec<Run>> {
    if coeff == 0.0 {
        return Ok(Vec::new());
    }
    let sign = Sign::of(coeff);
    let pair = kronecker_pq_mode(coeff.abs(), eps, mode)?;
    let (unit_sign, sqrt2_sign) = if pair.mirrored {
        (sign.flip(), sign)
    } else {
        (sign, sign.flip())
    };
    let mut runs = Vec::with_capacity(2);
    if pair.p > 0 {
        runs.push(Run {
            word: Word::new(basis, unit_sign, Tau::One),
            count: u32::try_from(pair.p)
                .map_err(|_| Error::ResourceExhausted(format!("p = {} too large", pair.p)))?,
        });
    }
    if pair.q > 0 {
        runs.push(Run {
            word: Word::new(basis, sqrt2_sign, Tau::Sqrt2),
            count: u32::try_from(pair.q)
                .map_err(|_| Error::ResourceExhausted(format!("q = {} too large", pair.q)))?,
        });
    }
    if pair.mirrored {
        runs.reverse(); // apply the √2 words first so the net time is q√2 − p
    }
    Ok(runs)
}
