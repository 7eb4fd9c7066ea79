//! Stream priors for the randomized score.
//!
//! Each stream carries a prior over the nonnegative "head-start" weight that
//! is drawn fresh on every round and folded into that stream's randomized
//! score. Heavier priors on a stream make the sampler revisit it more often
//! before any evidence accumulates, encoding prior belief about where a
//! change is likely to appear first.
//!
//! Four standard presets are provided ([`PriorPreset`]); arbitrary priors can
//! be expressed per stream as uniform intervals, point masses, or a tabulated
//! inverse CDF evaluated by linear interpolation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TssrpError};

/// Prior for a single stream's per-round weight draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StreamPrior {
    /// Uniform on `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
    /// Degenerate at `value`. A point mass at zero disables randomization for
    /// the stream: its score is then driven by accumulated evidence alone.
    PointMass { value: f64 },
    /// Tabulated inverse CDF: knots `(u, x)` with `u` spanning `[0, 1]`,
    /// linearly interpolated. Draws are `x(U)` for `U ~ Uniform[0, 1]`.
    InverseCdf { knots: Vec<(f64, f64)> },
}

impl StreamPrior {
    fn validate(&self) -> Result<()> {
        match self {
            StreamPrior::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(TssrpError::config(format!(
                        "uniform prior needs finite lo <= hi, got [{lo}, {hi}]"
                    )));
                }
                if *lo < 0.0 {
                    return Err(TssrpError::config(format!(
                        "prior weights must be nonnegative, got lo = {lo}"
                    )));
                }
            }
            StreamPrior::PointMass { value } => {
                if !(value.is_finite() && *value >= 0.0) {
                    return Err(TssrpError::config(format!(
                        "point-mass prior needs a finite nonnegative value, got {value}"
                    )));
                }
            }
            StreamPrior::InverseCdf { knots } => {
                if knots.len() < 2 {
                    return Err(TssrpError::config(
                        "inverse-CDF prior needs at least two knots",
                    ));
                }
                let first = knots.first().unwrap();
                let last = knots.last().unwrap();
                if first.0 != 0.0 || last.0 != 1.0 {
                    return Err(TssrpError::config(format!(
                        "inverse-CDF knots must span u in [0, 1], got [{}, {}]",
                        first.0, last.0
                    )));
                }
                for w in knots.windows(2) {
                    let ((u0, x0), (u1, x1)) = (w[0], w[1]);
                    if !(u0.is_finite() && x0.is_finite() && u1.is_finite() && x1.is_finite()) {
                        return Err(TssrpError::config("inverse-CDF knots must be finite"));
                    }
                    if u1 < u0 {
                        return Err(TssrpError::config(format!(
                            "inverse-CDF u-knots must be nondecreasing, got {u0} then {u1}"
                        )));
                    }
                    if x1 < x0 {
                        return Err(TssrpError::config(format!(
                            "inverse-CDF values must be nondecreasing, got {x0} then {x1}"
                        )));
                    }
                }
                if knots[0].1 < 0.0 {
                    return Err(TssrpError::config(format!(
                        "prior weights must be nonnegative, got {}",
                        knots[0].1
                    )));
                }
            }
        }
        Ok(())
    }

    /// One draw from the prior. Always finite and nonnegative.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            StreamPrior::Uniform { lo, hi } => {
                if lo == hi {
                    *lo
                } else {
                    rng.random_range(*lo..*hi)
                }
            }
            StreamPrior::PointMass { value } => *value,
            StreamPrior::InverseCdf { knots } => {
                let u: f64 = rng.random();
                // First knot with u-coordinate >= u; interpolate in its panel.
                let idx = knots.partition_point(|&(ku, _)| ku < u);
                if idx == 0 {
                    return knots[0].1;
                }
                let (u0, x0) = knots[idx - 1];
                let (u1, x1) = knots[idx];
                if u1 == u0 {
                    x1
                } else {
                    x0 + (x1 - x0) * (u - u0) / (u1 - u0)
                }
            }
        }
    }
}

/// The four standard prior configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorPreset {
    /// Uniform[0.5, 1] on the first ten streams, Uniform[0, 0.5] on the rest.
    /// Requires at least ten streams.
    G0,
    /// Uniform[0.5, 1] on the first five streams, Uniform[0, 0.5] on the
    /// rest. Requires at least five streams.
    G1,
    /// Uniform[0, 1] on every stream (the uninformative default).
    G2,
    /// Point mass at zero on every stream: no randomization at all.
    G3,
}

impl PriorPreset {
    pub fn name(self) -> &'static str {
        match self {
            PriorPreset::G0 => "g0",
            PriorPreset::G1 => "g1",
            PriorPreset::G2 => "g2",
            PriorPreset::G3 => "g3",
        }
    }
}

/// Priors for all `K` streams, indexed 0-based to match in-memory stream
/// order (external interfaces speak 1-based stream ids).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    per_stream: Vec<StreamPrior>,
}

impl PriorSpec {
    /// Build from explicit per-stream priors.
    pub fn from_streams(per_stream: Vec<StreamPrior>) -> Result<Self> {
        if per_stream.is_empty() {
            return Err(TssrpError::config("prior needs at least one stream"));
        }
        for (i, p) in per_stream.iter().enumerate() {
            p.validate().map_err(|e| {
                TssrpError::config(format!("stream {}: {e}", i + 1))
            })?;
        }
        Ok(PriorSpec { per_stream })
    }

    /// One of the standard presets, instantiated for `k` streams.
    pub fn preset(preset: PriorPreset, k: usize) -> Result<Self> {
        let favored = match preset {
            PriorPreset::G0 => 10,
            PriorPreset::G1 => 5,
            PriorPreset::G2 | PriorPreset::G3 => 0,
        };
        if k < favored {
            return Err(TssrpError::config(format!(
                "preset {} needs at least {favored} streams, got {k}",
                preset.name()
            )));
        }
        let per_stream = (0..k)
            .map(|i| match preset {
                PriorPreset::G0 | PriorPreset::G1 => {
                    if i < favored {
                        StreamPrior::Uniform { lo: 0.5, hi: 1.0 }
                    } else {
                        StreamPrior::Uniform { lo: 0.0, hi: 0.5 }
                    }
                }
                PriorPreset::G2 => StreamPrior::Uniform { lo: 0.0, hi: 1.0 },
                PriorPreset::G3 => StreamPrior::PointMass { value: 0.0 },
            })
            .collect();
        Ok(PriorSpec { per_stream })
    }

    /// Same prior on every stream.
    pub fn homogeneous(k: usize, prior: StreamPrior) -> Result<Self> {
        PriorSpec::from_streams(vec![prior; k])
    }

    pub fn len(&self) -> usize {
        self.per_stream.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_stream.is_empty()
    }

    pub fn stream(&self, index: usize) -> &StreamPrior {
        &self.per_stream[index]
    }

    /// One draw for stream `index` (0-based).
    pub fn draw<R: Rng + ?Sized>(&self, index: usize, rng: &mut R) -> f64 {
        self.per_stream[index].draw(rng)
    }

    /// True when every stream is a point mass at zero, i.e. the randomized
    /// score always equals the plain evidence statistic.
    pub fn is_degenerate_at_zero(&self) -> bool {
        self.per_stream
            .iter()
            .all(|p| matches!(p, StreamPrior::PointMass { value } if *value == 0.0))
    }

    /// Short stable label for report rows: the preset name when this prior
    /// matches one, otherwise a rendering of the homogeneous prior, else
    /// `"custom"`.
    pub fn describe(&self) -> String {
        for preset in [PriorPreset::G0, PriorPreset::G1, PriorPreset::G2, PriorPreset::G3] {
            if let Ok(candidate) = PriorSpec::preset(preset, self.len()) {
                if candidate.per_stream == self.per_stream {
                    return preset.name().to_string();
                }
            }
        }
        let first = &self.per_stream[0];
        if self.per_stream.iter().all(|p| p == first) {
            return match first {
                StreamPrior::Uniform { lo, hi } => format!("uniform[{lo},{hi}]"),
                StreamPrior::PointMass { value } => format!("point_mass({value})"),
                StreamPrior::InverseCdf { .. } => "table".to_string(),
            };
        }
        "custom".to_string()
    }
}
