//! Bayesian reference recursions.
//!
//! This module exists to *check* the detector, not to run it. Under a
//! geometric change-time model with per-round hazard `p`, the exact posterior
//! probability that the change has already happened admits a closed-form
//! one-step update for observed and unobserved rounds. Rewriting that
//! posterior as the scaled odds `r_p = Π / (p·(1−Π))` turns the update into
//! a likelihood-ratio recursion of Shiryaev–Roberts shape, and letting the
//! hazard `p` shrink to zero recovers, path by path, exactly the randomized
//! score the detector computes with a frozen prior weight. The oracle code
//! works in plain (not log) space on purpose: it is meant for short
//! desk-scale paths where raw arithmetic is exact enough, and it shares no
//! code with the detector's log-domain hot path.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TssrpError};

/// Posterior probability route: carries `Π_t = P(change ≤ t | data)` under
/// hazard `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorState {
    pi: f64,
    p: f64,
}

impl PosteriorState {
    pub fn new(pi: f64, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&pi) || !pi.is_finite() {
            return Err(TssrpError::config(format!(
                "posterior probability must lie in [0, 1], got {pi}"
            )));
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(TssrpError::config(format!(
                "hazard must lie in (0, 1), got {p}"
            )));
        }
        Ok(PosteriorState { pi, p })
    }

    /// Posterior matching a scaled-odds start of `r0`: `Π₀ = p·r0/(1+p·r0)`.
    pub fn from_odds(r0: f64, p: f64) -> Result<Self> {
        if !(r0 >= 0.0 && r0.is_finite()) {
            return Err(TssrpError::config(format!(
                "initial odds must be finite and nonnegative, got {r0}"
            )));
        }
        PosteriorState::new(p * r0 / (1.0 + p * r0), p)
    }

    pub fn pi(&self) -> f64 {
        self.pi
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Scaled odds `Π / (p·(1−Π))`; `+inf` once the posterior saturates.
    pub fn odds(&self) -> f64 {
        if self.pi >= 1.0 {
            f64::INFINITY
        } else {
            self.pi / (self.p * (1.0 - self.pi))
        }
    }

    /// One-round posterior update.
    ///
    /// Unobserved rounds only advance the hazard: `Π' = Π + (1−Π)·p`.
    /// Observed rounds additionally weigh the likelihood ratio `lr` of the
    /// new observation. `Π = 1` is absorbing under both branches.
    pub fn updated(&self, lr: f64, observed: bool) -> Result<Self> {
        if observed && !(lr >= 0.0 && lr.is_finite()) {
            return Err(TssrpError::input(format!(
                "likelihood ratio must be finite and nonnegative, got {lr}"
            )));
        }
        let prior_mass = self.pi + (1.0 - self.pi) * self.p;
        let pi = if !observed {
            prior_mass
        } else {
            let num = lr * prior_mass;
            let den = num + (1.0 - self.pi) * (1.0 - self.p);
            if den == 0.0 {
                // lr = 0 with the posterior already saturated.
                if self.pi >= 1.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                num / den
            }
        };
        Ok(PosteriorState {
            pi: pi.clamp(0.0, 1.0),
            p: self.p,
        })
    }
}

/// Scaled-odds route: carries `r_p` directly through the equivalent
/// likelihood-ratio recursion, observed `r' = lr·(r+1)/(1−p)`, unobserved
/// `r' = (r+1)/(1−p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OddsState {
    r: f64,
    p: f64,
}

impl OddsState {
    pub fn new(r0: f64, p: f64) -> Result<Self> {
        if !(r0 >= 0.0 && r0.is_finite()) {
            return Err(TssrpError::config(format!(
                "odds must be finite and nonnegative, got {r0}"
            )));
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(TssrpError::config(format!(
                "hazard must lie in (0, 1), got {p}"
            )));
        }
        Ok(OddsState { r: r0, p })
    }

    pub fn value(&self) -> f64 {
        self.r
    }

    pub fn updated(&self, lr: f64, observed: bool) -> Result<Self> {
        Ok(OddsState {
            r: finite_p_score(self.r, lr, observed, self.p)?,
            p: self.p,
        })
    }
}

/// One step of the scaled-odds recursion (the workhorse behind
/// [`OddsState`], usable on bare floats).
pub fn finite_p_score(r: f64, lr: f64, observed: bool, p: f64) -> Result<f64> {
    if !(r >= 0.0) || r.is_nan() {
        return Err(TssrpError::input(format!(
            "odds must be nonnegative, got {r}"
        )));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(TssrpError::config(format!(
            "hazard must lie in (0, 1), got {p}"
        )));
    }
    if observed && !(lr >= 0.0 && lr.is_finite()) {
        return Err(TssrpError::input(format!(
            "likelihood ratio must be finite and nonnegative, got {lr}"
        )));
    }
    let grown = (r + 1.0) / (1.0 - p);
    Ok(if observed { grown * lr } else { grown })
}

/// The hazard-free limit of the scaled-odds recursion: starting weight `r0`,
/// observed `r' = lr·(r+1)`, unobserved `r' = r+1`. This is exactly the
/// frozen-weight randomized score the detector forms as `R + L·weight`.
pub fn limit_score_path(r0: f64, steps: &[(f64, bool)]) -> f64 {
    let mut r = r0;
    for &(lr, observed) in steps {
        r += 1.0;
        if observed {
            r *= lr;
        }
    }
    r
}
