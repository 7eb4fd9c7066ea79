//! The compensated-CUSUM sampling baseline.
//!
//! The baseline keeps a per-stream CUSUM-type statistic `W` in plain (not
//! log) space: an observed stream applies the usual reflected update
//! `W ← max(W + llr, 0)`, while an unobserved stream receives a fixed
//! compensation increment `W ← W + Δ`. The compensation forces every
//! neglected stream back into the observed set eventually — a deterministic
//! stand-in for the randomized exploration of the main detector. Layout
//! choice and stopping mirror the main detector: observe the top-`q`
//! statistics (ties uniform at random) and alarm when the top-`r` sum
//! reaches the threshold `a`, which lives on the same linear scale as `W`.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{
    select_layout_into, Monitor, SensorLayout, StepOutcome,
};
use crate::error::{Result, TssrpError};
use crate::models::StreamModel;
use crate::seeding::{rng_for, Purpose};

/// One round of the per-stream baseline recursion.
///
/// Observed: reflected CUSUM update (`log_lr` is the observation's log
/// likelihood ratio). Unobserved: add the compensation `delta`; `log_lr` is
/// ignored.
#[inline]
pub fn update_tras(w: f64, log_lr: f64, observed: bool, delta: f64) -> f64 {
    debug_assert!(w >= 0.0);
    if observed {
        (w + log_lr).max(0.0)
    } else {
        w + delta
    }
}

/// Configuration of the baseline detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrasConfig {
    pub k: usize,
    /// Observation budget per round.
    pub q: usize,
    /// Stopping depth: the alarm statistic sums the `r` largest `W`.
    pub r: usize,
    /// Compensation added to every unobserved stream per round. `0` turns
    /// the unobserved update into a no-op, degenerating to plain per-stream
    /// CUSUM when the budget covers all streams.
    pub delta: f64,
    /// Alarm threshold `a` on the linear `W`-sum scale. `+inf` never fires.
    pub threshold: f64,
    pub models: Vec<StreamModel>,
    pub seed: u64,
}

impl TrasConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.k == 0 {
            problems.push("K must be at least 1".to_string());
        }
        if self.q == 0 || self.q > self.k {
            problems.push(format!(
                "budget q={} must satisfy 1 <= q <= K={}",
                self.q, self.k
            ));
        }
        if self.r == 0 || self.r > self.k {
            problems.push(format!(
                "depth r={} must satisfy 1 <= r <= K={}",
                self.r, self.k
            ));
        }
        if self.models.len() != self.k {
            problems.push(format!(
                "expected {} stream models, got {}",
                self.k,
                self.models.len()
            ));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            problems.push(format!(
                "compensation delta must be finite and nonnegative, got {}",
                self.delta
            ));
        }
        if self.threshold.is_nan() || self.threshold < 0.0 {
            problems.push(format!(
                "threshold must be nonnegative, got {}",
                self.threshold
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(TssrpError::config(problems.join("; ")))
        }
    }
}

/// The baseline monitor. Round structure mirrors the main detector: update
/// `W` from the current layout, rank, install the next layout, test the
/// top-`r` sum.
#[derive(Debug, Clone)]
pub struct TrasDetector {
    k: usize,
    q: usize,
    r: usize,
    delta: f64,
    threshold: f64,
    models: Vec<StreamModel>,
    w: Vec<f64>,
    layout: SensorLayout,
    mask: Vec<bool>,
    t: u64,
    stopped: bool,
    tie_rng: ChaCha8Rng,
    idx_scratch: Vec<usize>,
    stat_scratch: Vec<f64>,
}

impl TrasDetector {
    /// Validate, derive RNG streams, pick the initial layout.
    ///
    /// The first layout follows the same convention as every later round:
    /// top-`q` statistics, ties uniform. All `W` start at zero, so this is a
    /// uniformly random `q`-subset.
    pub fn new(config: &TrasConfig) -> Result<Self> {
        config.validate()?;
        let mut init_rng = rng_for(config.seed, Purpose::InitLayout);
        let w0 = vec![0.0f64; config.k];
        let mut idx_scratch = Vec::with_capacity(config.k);
        let mut observed = Vec::with_capacity(config.q);
        select_layout_into(&w0, config.q, &mut init_rng, &mut idx_scratch, &mut observed)?;
        Ok(TrasDetector {
            k: config.k,
            q: config.q,
            r: config.r,
            delta: config.delta,
            threshold: config.threshold,
            models: config.models.clone(),
            w: w0,
            layout: SensorLayout::new(observed, config.k)?,
            mask: vec![false; config.k],
            t: 0,
            stopped: false,
            tie_rng: rng_for(config.seed, Purpose::TieBreak),
            idx_scratch,
            stat_scratch: Vec::with_capacity(config.k),
        })
    }

    /// Process one panel; same masking contract as the main detector (only
    /// layout entries are read).
    pub fn step(&mut self, x: &[f64]) -> Result<StepOutcome> {
        if self.stopped {
            return Err(TssrpError::state(format!(
                "baseline already alarmed at t={}; reset before reuse",
                self.t
            )));
        }
        if x.len() != self.k {
            return Err(TssrpError::input(format!(
                "expected a panel of {} values, got {}",
                self.k,
                x.len()
            )));
        }
        for &i in self.layout.observed() {
            if !x[i].is_finite() {
                return Err(TssrpError::input(format!(
                    "non-finite observation {} for stream {} at t={}",
                    x[i],
                    i + 1,
                    self.t + 1
                )));
            }
        }
        self.t += 1;

        for &i in self.layout.observed() {
            self.mask[i] = true;
        }
        for i in 0..self.k {
            let log_lr = if self.mask[i] {
                self.models[i].log_likelihood_ratio(x[i])?
            } else {
                0.0
            };
            self.w[i] = update_tras(self.w[i], log_lr, self.mask[i], self.delta);
        }
        for &i in self.layout.observed() {
            self.mask[i] = false;
        }

        let mut observed = std::mem::take(self.layout.observed_mut());
        select_layout_into(
            &self.w,
            self.q,
            &mut self.tie_rng,
            &mut self.idx_scratch,
            &mut observed,
        )?;
        *self.layout.observed_mut() = observed;

        let statistic = self.top_r_sum();
        let alarm = statistic >= self.threshold;
        if alarm {
            self.stopped = true;
        }
        Ok(StepOutcome { alarm, statistic })
    }

    fn top_r_sum(&mut self) -> f64 {
        self.stat_scratch.clear();
        self.stat_scratch.extend_from_slice(&self.w);
        if self.r < self.k {
            self.stat_scratch
                .select_nth_unstable_by(self.r - 1, |a, b| b.total_cmp(a));
            self.stat_scratch.truncate(self.r);
        }
        self.stat_scratch.iter().sum()
    }

    /// Per-stream statistics after the latest round.
    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Stopping depth: how many top statistics enter the global sum.
    pub fn r(&self) -> usize {
        self.r
    }
}

impl Monitor for TrasDetector {
    fn num_streams(&self) -> usize {
        self.k
    }

    fn layout(&self) -> &SensorLayout {
        &self.layout
    }

    fn step(&mut self, x: &[f64]) -> Result<StepOutcome> {
        TrasDetector::step(self, x)
    }

    fn rounds(&self) -> u64 {
        self.t
    }

    fn alarmed(&self) -> bool {
        self.stopped
    }
}
