//! Per-stream observation models.
//!
//! A [`StreamModel`] holds the pre-change and post-change density of one data
//! stream and exposes the two operations the detectors need: the pointwise
//! log likelihood ratio `ln f_post(x) − ln f_pre(x)` and sampling from either
//! regime. Two families are supported — Gaussian and Student-t location
//! shifts. Both log likelihood ratios are evaluated in closed form; for the
//! Student-t family the normalizing constants cancel because the degrees of
//! freedom are required to match across regimes, which keeps the hot path
//! free of gamma-function evaluations.

use rand::Rng;
use rand_distr::{Distribution, Normal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TssrpError};

/// Which side of the change point to draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Pre,
    Post,
}

/// A single univariate density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Density {
    Gaussian { mean: f64, sd: f64 },
    /// Student-t with `df` degrees of freedom, shifted to `location`.
    StudentT { df: f64, location: f64 },
}

impl Density {
    fn validate(&self) -> Result<()> {
        match *self {
            Density::Gaussian { mean, sd } => {
                if !mean.is_finite() {
                    return Err(TssrpError::config(format!(
                        "gaussian mean must be finite, got {mean}"
                    )));
                }
                if !(sd.is_finite() && sd > 0.0) {
                    return Err(TssrpError::config(format!(
                        "gaussian sd must be positive and finite, got {sd}"
                    )));
                }
            }
            Density::StudentT { df, location } => {
                if !location.is_finite() {
                    return Err(TssrpError::config(format!(
                        "student_t location must be finite, got {location}"
                    )));
                }
                if !(df.is_finite() && df > 0.0) {
                    return Err(TssrpError::config(format!(
                        "student_t df must be positive and finite, got {df}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Draw one observation.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Density::Gaussian { mean, sd } => {
                // Parameters were validated at construction.
                Normal::new(mean, sd).expect("validated gaussian").sample(rng)
            }
            Density::StudentT { df, location } => {
                location + StudentT::new(df).expect("validated student_t").sample(rng)
            }
        }
    }
}

/// Pre/post density pair for one stream.
///
/// Invariants enforced at construction: both densities valid, same family,
/// the pair actually differs, and (Student-t only) equal degrees of freedom
/// across regimes — the family models a location shift, not a shape change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamModel {
    pre: Density,
    post: Density,
}

impl StreamModel {
    pub fn new(pre: Density, post: Density) -> Result<Self> {
        pre.validate()?;
        post.validate()?;
        match (pre, post) {
            (Density::Gaussian { .. }, Density::Gaussian { .. }) => {}
            (
                Density::StudentT { df: df0, .. },
                Density::StudentT { df: df1, .. },
            ) => {
                if df0 != df1 {
                    return Err(TssrpError::config(format!(
                        "student_t pre/post degrees of freedom must match \
                         (got {df0} and {df1}); only location shifts are supported"
                    )));
                }
            }
            _ => {
                return Err(TssrpError::config(
                    "pre and post densities must belong to the same family",
                ))
            }
        }
        if pre == post {
            return Err(TssrpError::config(
                "pre and post densities are identical; the change would be undetectable",
            ));
        }
        Ok(StreamModel { pre, post })
    }

    /// Gaussian mean shift with common standard deviation.
    pub fn gaussian_shift(pre_mean: f64, post_mean: f64, sd: f64) -> Result<Self> {
        StreamModel::new(
            Density::Gaussian { mean: pre_mean, sd },
            Density::Gaussian { mean: post_mean, sd },
        )
    }

    /// Student-t location shift with common degrees of freedom.
    pub fn student_t_shift(df: f64, pre_location: f64, post_location: f64) -> Result<Self> {
        StreamModel::new(
            Density::StudentT { df, location: pre_location },
            Density::StudentT { df, location: post_location },
        )
    }

    pub fn pre(&self) -> &Density {
        &self.pre
    }

    pub fn post(&self) -> &Density {
        &self.post
    }

    /// `ln f_post(x) − ln f_pre(x)`.
    ///
    /// Rejects non-finite observations; the result is always finite.
    pub fn log_likelihood_ratio(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(TssrpError::input(format!(
                "observation must be finite, got {x}"
            )));
        }
        Ok(match (self.pre, self.post) {
            (
                Density::Gaussian { mean: m0, sd: s0 },
                Density::Gaussian { mean: m1, sd: s1 },
            ) => {
                let z0 = (x - m0) / s0;
                let z1 = (x - m1) / s1;
                (s0 / s1).ln() + 0.5 * (z0 * z0 - z1 * z1)
            }
            (
                Density::StudentT { df, location: l0 },
                Density::StudentT { location: l1, .. },
            ) => {
                // Normalizing constants cancel (equal df), leaving only the
                // kernel ratio.
                let d0 = x - l0;
                let d1 = x - l1;
                -0.5 * (df + 1.0) * ((d1 * d1 / df).ln_1p() - (d0 * d0 / df).ln_1p())
            }
            _ => unreachable!("mixed families rejected at construction"),
        })
    }

    /// Draw one observation from the requested regime.
    pub fn sample<R: Rng + ?Sized>(&self, regime: Regime, rng: &mut R) -> f64 {
        match regime {
            Regime::Pre => self.pre.sample(rng),
            Regime::Post => self.post.sample(rng),
        }
    }
}
