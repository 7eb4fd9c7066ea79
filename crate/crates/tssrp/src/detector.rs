//! The sampling-controlled change-point detector.
//!
//! The detector watches `K` independent data streams but may observe only
//! `q` of them per round. Each stream carries two log-domain local
//! statistics: `log_R`, an evidence accumulator of Shiryaev–Roberts type
//! that grows by `+1` then multiplies by the likelihood ratio when the
//! stream is observed and grows by `+1` alone when it is not, and `log_L`,
//! the running product of likelihood ratios over the rounds the stream was
//! actually observed. Sensor allocation is decided by Thompson-style
//! randomization: every round each stream draws a fresh weight from its
//! prior, forms the randomized score `R + L·weight`, and the next round's
//! layout is the top-`q` scores with exact ties broken uniformly at random.
//! A global stopping statistic over the top-`r` streams is compared against
//! a threshold after every round.
//!
//! One round of [`TssrpDetector::step`] performs, in order: local-statistic
//! updates from the current layout, fresh weight draws and score formation,
//! score ordering, installation of the next layout, and the stopping test.
//! The same trait-level contract ([`Monitor`]) is implemented by the
//! moving-average baseline in [`crate::baselines`], so calibration and
//! experiment drivers treat both uniformly.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TssrpError};
use crate::math::{log_add_exp, log_sum_exp};
use crate::models::StreamModel;
use crate::priors::PriorSpec;
use crate::seeding::{rng_for, Purpose};

// ---------------------------------------------------------------------------
// Local state
// ---------------------------------------------------------------------------

/// Log-domain local statistics of a single stream.
///
/// `log_r` starts at `-inf` (the accumulator starts at zero) and `log_l`
/// at `0` (an empty product). Both stay finite after the first round and are
/// never NaN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalState {
    pub log_r: f64,
    pub log_l: f64,
}

impl LocalState {
    /// State before any data: accumulator zero, product empty.
    pub fn initial() -> Self {
        LocalState {
            log_r: f64::NEG_INFINITY,
            log_l: 0.0,
        }
    }

    /// One round of the local recursion.
    ///
    /// Observed: the accumulator gains one and is scaled by the likelihood
    /// ratio, the product is scaled by the likelihood ratio. Unobserved: the
    /// accumulator gains one, the product is untouched (`log_lr` is ignored).
    #[inline]
    pub fn updated(self, log_lr: f64, observed: bool) -> Self {
        let log_r_plus_one = log_add_exp(self.log_r, 0.0);
        if observed {
            LocalState {
                log_r: log_r_plus_one + log_lr,
                log_l: self.log_l + log_lr,
            }
        } else {
            LocalState {
                log_r: log_r_plus_one,
                ..self
            }
        }
    }

    /// Randomized score `ln(R + L·weight)` for a freshly drawn nonnegative
    /// `weight`. A zero weight collapses to the plain evidence term.
    #[inline]
    pub fn randomized_score(&self, weight: f64) -> f64 {
        debug_assert!(weight >= 0.0, "prior weights are nonnegative");
        log_add_exp(self.log_r, self.log_l + weight.ln())
    }
}

// ---------------------------------------------------------------------------
// Layout
// ---------------------------------------------------------------------------

/// The set of streams scheduled for observation, stored as sorted ascending
/// 0-based indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SensorLayout {
    observed: Vec<usize>,
}

impl SensorLayout {
    /// Build from arbitrary order; validates bounds and uniqueness.
    pub fn new(mut observed: Vec<usize>, k: usize) -> Result<Self> {
        observed.sort_unstable();
        if let Some(&last) = observed.last() {
            if last >= k {
                return Err(TssrpError::config(format!(
                    "layout index {last} out of range for {k} streams"
                )));
            }
        }
        if observed.windows(2).any(|w| w[0] == w[1]) {
            return Err(TssrpError::config("layout contains a duplicate stream"));
        }
        Ok(SensorLayout { observed })
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    pub fn contains(&self, stream: usize) -> bool {
        self.observed.binary_search(&stream).is_ok()
    }

    pub(crate) fn observed_mut(&mut self) -> &mut Vec<usize> {
        &mut self.observed
    }
}

/// Top-`q` selection with exact uniform tie-breaking.
///
/// Streams whose score strictly beats the `q`-th largest are always chosen;
/// the remaining slots are filled by a uniform draw over the streams exactly
/// tied at the boundary value. The RNG is consumed only when such a boundary
/// tie exists, so deterministic score vectors cost no entropy.
pub fn select_layout<R: Rng + ?Sized>(
    scores: &[f64],
    q: usize,
    rng: &mut R,
) -> Result<SensorLayout> {
    let mut layout = SensorLayout { observed: Vec::new() };
    let mut idx = Vec::new();
    select_layout_into(scores, q, rng, &mut idx, layout.observed_mut())?;
    Ok(layout)
}

/// Allocation-free core of [`select_layout`]; `idx` is scratch, `out`
/// receives the sorted selection.
pub(crate) fn select_layout_into<R: Rng + ?Sized>(
    scores: &[f64],
    q: usize,
    rng: &mut R,
    idx: &mut Vec<usize>,
    out: &mut Vec<usize>,
) -> Result<()> {
    let k = scores.len();
    if q == 0 || q > k {
        return Err(TssrpError::config(format!(
            "budget q={q} must satisfy 1 <= q <= K={k}"
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(TssrpError::input("scores must not contain NaN"));
    }
    out.clear();
    if q == k {
        out.extend(0..k);
        return Ok(());
    }

    idx.clear();
    idx.extend(0..k);
    // Partition so positions 0..q hold the q largest; position q-1 then
    // carries the boundary value.
    idx.select_nth_unstable_by(q - 1, |&a, &b| scores[b].total_cmp(&scores[a]));
    let boundary = scores[idx[q - 1]];

    let above = scores.iter().filter(|&&s| s > boundary).count();
    let tied = scores.iter().filter(|&&s| s == boundary).count();
    let wanted = q - above; // >= 1 by choice of the boundary

    out.extend((0..k).filter(|&i| scores[i] > boundary));
    if wanted == tied {
        out.extend((0..k).filter(|&i| scores[i] == boundary));
    } else {
        // Uniform `wanted`-subset of the tied group, enumerated in ascending
        // stream order so the draw is independent of the partition's internal
        // permutation.
        let chosen = rand::seq::index::sample(rng, tied, wanted);
        let mut pick = vec![false; tied];
        for c in chosen {
            pick[c] = true;
        }
        let mut nth = 0usize;
        for i in 0..k {
            if scores[i] == boundary {
                if pick[nth] {
                    out.push(i);
                }
                nth += 1;
            }
        }
    }
    out.sort_unstable();
    debug_assert_eq!(out.len(), q);
    Ok(())
}

// ---------------------------------------------------------------------------
// Stopping rules
// ---------------------------------------------------------------------------

/// Which global statistic the stopping test uses.
///
/// All four are compared against the log threshold `ln A`:
/// the "sum" variants aggregate top-`r` values through log-sum-exp (so the
/// comparison is `ln Σ … ≥ ln A`), the "log-sum" variants add the top-`r`
/// log values directly (`Σ ln … ≥ ln A`). "Randomized" variants rank and
/// aggregate the round's randomized scores instead of the plain evidence
/// accumulators, reusing the same frozen draws that decided the layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    TopRSum,
    TopRSumRandomized,
    TopRLogSum,
    TopRLogSumRandomized,
}

impl RuleKind {
    pub fn uses_randomized_scores(self) -> bool {
        matches!(self, RuleKind::TopRSumRandomized | RuleKind::TopRLogSumRandomized)
    }

    pub fn name(self) -> &'static str {
        match self {
            RuleKind::TopRSum => "top_r_sum",
            RuleKind::TopRSumRandomized => "top_r_sum_randomized",
            RuleKind::TopRLogSum => "top_r_log_sum",
            RuleKind::TopRLogSumRandomized => "top_r_log_sum_randomized",
        }
    }
}

/// A stopping rule: statistic kind, depth `r`, and threshold.
///
/// The threshold is stored in log form; `A = 0` is accepted as the
/// degenerate always-alarm rule (`ln A = -inf`) and `+inf` as never-alarm,
/// which the calibration machinery uses to observe uncensored statistic
/// paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingRule {
    pub kind: RuleKind,
    pub r: usize,
    log_threshold: f64,
}

impl StoppingRule {
    /// From a raw threshold `A >= 0`.
    pub fn new(kind: RuleKind, r: usize, threshold_a: f64) -> Result<Self> {
        if !(threshold_a >= 0.0) {
            return Err(TssrpError::config(format!(
                "threshold A must be nonnegative, got {threshold_a}"
            )));
        }
        Self::from_log_threshold(kind, r, threshold_a.ln())
    }

    /// From `ln A` directly (may be `-inf` or `+inf`, never NaN).
    pub fn from_log_threshold(kind: RuleKind, r: usize, log_threshold: f64) -> Result<Self> {
        if r == 0 {
            return Err(TssrpError::config("rule depth r must be at least 1"));
        }
        if log_threshold.is_nan() {
            return Err(TssrpError::config("log threshold must not be NaN"));
        }
        Ok(StoppingRule { kind, r, log_threshold })
    }

    pub fn log_threshold(&self) -> f64 {
        self.log_threshold
    }

    pub fn threshold_a(&self) -> f64 {
        self.log_threshold.exp()
    }

    /// Same rule with a different threshold.
    pub fn with_log_threshold(&self, log_threshold: f64) -> Result<Self> {
        Self::from_log_threshold(self.kind, self.r, log_threshold)
    }
}

/// Evaluate a rule's global statistic over the current local states and the
/// round's frozen randomized scores.
///
/// Returns the log-scale statistic the alarm test compares against
/// `ln A`. `scores` must have one entry per stream; it is only read by the
/// randomized rule kinds.
pub fn global_statistic(
    states: &[LocalState],
    scores: &[f64],
    rule: &StoppingRule,
) -> Result<f64> {
    let mut scratch = Vec::with_capacity(states.len());
    global_statistic_with(states, scores, rule, &mut scratch)
}

fn global_statistic_with(
    states: &[LocalState],
    scores: &[f64],
    rule: &StoppingRule,
    scratch: &mut Vec<f64>,
) -> Result<f64> {
    let k = states.len();
    if rule.r > k {
        return Err(TssrpError::config(format!(
            "rule depth r={} exceeds stream count K={k}",
            rule.r
        )));
    }
    if rule.kind.uses_randomized_scores() && scores.len() != k {
        return Err(TssrpError::input(format!(
            "expected {k} randomized scores, got {}",
            scores.len()
        )));
    }
    scratch.clear();
    match rule.kind {
        RuleKind::TopRSum | RuleKind::TopRLogSum => {
            scratch.extend(states.iter().map(|s| s.log_r))
        }
        RuleKind::TopRSumRandomized | RuleKind::TopRLogSumRandomized => {
            scratch.extend_from_slice(scores)
        }
    }
    if rule.r < k {
        scratch.select_nth_unstable_by(rule.r - 1, |a, b| b.total_cmp(a));
        scratch.truncate(rule.r);
    }
    Ok(match rule.kind {
        RuleKind::TopRSum | RuleKind::TopRSumRandomized => log_sum_exp(scratch),
        RuleKind::TopRLogSum | RuleKind::TopRLogSumRandomized => scratch.iter().sum(),
    })
}

// ---------------------------------------------------------------------------
// Detector
// ---------------------------------------------------------------------------

/// Full configuration of a detector instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Number of streams.
    pub k: usize,
    /// Observation budget per round.
    pub q: usize,
    /// Per-stream observation models (length `k`).
    pub models: Vec<StreamModel>,
    /// Per-stream priors for the randomized score (length `k`).
    pub prior: PriorSpec,
    pub rule: StoppingRule,
    /// Master seed; layout initialization, tie-breaking and prior draws each
    /// derive their own stream from it.
    pub seed: u64,
}

impl DetectorConfig {
    /// Check every structural invariant, reporting all violations at once.
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
        if self.models.len() != self.k {
            problems.push(format!(
                "expected {} stream models, got {}",
                self.k,
                self.models.len()
            ));
        }
        if self.prior.len() != self.k {
            problems.push(format!(
                "expected priors for {} streams, got {}",
                self.k,
                self.prior.len()
            ));
        }
        if self.rule.r == 0 || self.rule.r > self.k {
            problems.push(format!(
                "rule depth r={} must satisfy 1 <= r <= K={}",
                self.rule.r, self.k
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(TssrpError::config(problems.join("; ")))
        }
    }
}

/// Outcome of one detector round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// True when the stopping statistic reached the threshold this round.
    pub alarm: bool,
    /// The round's global statistic (log scale).
    pub statistic: f64,
}

/// The sampling-controlled detector. See the module docs for the round
/// structure.
#[derive(Debug, Clone)]
pub struct TssrpDetector {
    k: usize,
    q: usize,
    models: Vec<StreamModel>,
    prior: PriorSpec,
    rule: StoppingRule,
    states: Vec<LocalState>,
    /// Randomized scores frozen from the latest round.
    scores: Vec<f64>,
    /// Streams to observe on the next round.
    layout: SensorLayout,
    mask: Vec<bool>,
    t: u64,
    stopped: bool,
    tie_rng: ChaCha8Rng,
    prior_rng: ChaCha8Rng,
    idx_scratch: Vec<usize>,
    stat_scratch: Vec<f64>,
}

impl TssrpDetector {
    /// Validate the configuration, derive the RNG streams and pick the
    /// initial layout.
    ///
    /// Before any data arrives the evidence accumulators are zero and the
    /// likelihood products empty, so a stream's randomized score reduces to
    /// its freshly drawn prior weight. The first layout is therefore the
    /// top-`q` of one round of prior draws (ties uniform) — sensors start
    /// where the prior puts them. An uninformative prior degenerates to a
    /// uniformly random `q`-subset; the no-randomization prior ties every
    /// stream at zero and does the same.
    pub fn new(config: &DetectorConfig) -> Result<Self> {
        config.validate()?;
        let mut init_rng = rng_for(config.seed, Purpose::InitLayout);
        let blank = LocalState::initial();
        let init_scores: Vec<f64> = (0..config.k)
            .map(|i| blank.randomized_score(config.prior.draw(i, &mut init_rng)))
            .collect();
        let mut idx_scratch = Vec::with_capacity(config.k);
        let mut observed = Vec::with_capacity(config.q);
        select_layout_into(
            &init_scores,
            config.q,
            &mut init_rng,
            &mut idx_scratch,
            &mut observed,
        )?;
        let layout = SensorLayout::new(observed, config.k)?;
        Ok(TssrpDetector {
            k: config.k,
            q: config.q,
            models: config.models.clone(),
            prior: config.prior.clone(),
            rule: config.rule,
            states: vec![LocalState::initial(); config.k],
            scores: vec![f64::NEG_INFINITY; config.k],
            layout,
            mask: vec![false; config.k],
            t: 0,
            stopped: false,
            tie_rng: rng_for(config.seed, Purpose::TieBreak),
            prior_rng: rng_for(config.seed, Purpose::PriorDraw),
            idx_scratch,
            stat_scratch: Vec::with_capacity(config.k),
        })
    }

    /// Process one panel of observations.
    ///
    /// `x` must carry all `K` entries in stream order; only the entries named
    /// by the current layout are read (the rest may hold anything, including
    /// NaN). Errors leave the detector state untouched.
    pub fn step(&mut self, x: &[f64]) -> Result<StepOutcome> {
        if self.stopped {
            return Err(TssrpError::state(format!(
                "detector already alarmed at t={}; reset before reuse",
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

        // (1) Local updates driven by the current layout.
        for &i in self.layout.observed() {
            self.mask[i] = true;
        }
        for i in 0..self.k {
            let observed = self.mask[i];
            let log_lr = if observed {
                self.models[i].log_likelihood_ratio(x[i])?
            } else {
                0.0
            };
            self.states[i] = self.states[i].updated(log_lr, observed);
        }
        for &i in self.layout.observed() {
            self.mask[i] = false;
        }

        // (2) Fresh prior weights and randomized scores, in stream order.
        for i in 0..self.k {
            let w = self.prior.draw(i, &mut self.prior_rng);
            self.scores[i] = self.states[i].randomized_score(w);
        }

        // (3)–(4) Rank scores and install the next layout.
        let mut observed = std::mem::take(self.layout.observed_mut());
        select_layout_into(
            &self.scores,
            self.q,
            &mut self.tie_rng,
            &mut self.idx_scratch,
            &mut observed,
        )?;
        *self.layout.observed_mut() = observed;

        // (5) Stopping test on this round's statistics.
        let statistic =
            global_statistic_with(&self.states, &self.scores, &self.rule, &mut self.stat_scratch)?;
        let alarm = statistic >= self.rule.log_threshold;
        if alarm {
            self.stopped = true;
        }
        Ok(StepOutcome { alarm, statistic })
    }

    pub fn rule(&self) -> &StoppingRule {
        &self.rule
    }

    /// Local states after the latest round.
    pub fn states(&self) -> &[LocalState] {
        &self.states
    }

    /// Randomized scores frozen from the latest round (`-inf` before the
    /// first round).
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

// ---------------------------------------------------------------------------
// Monitor abstraction and run driver
// ---------------------------------------------------------------------------

/// Common surface of the sequential monitoring procedures, implemented by
/// [`TssrpDetector`] and [`crate::baselines::TrasDetector`].
pub trait Monitor {
    fn num_streams(&self) -> usize;
    /// Streams that the next call to `step` will read.
    fn layout(&self) -> &SensorLayout;
    fn step(&mut self, x: &[f64]) -> Result<StepOutcome>;
    /// Rounds processed so far.
    fn rounds(&self) -> u64;
    fn alarmed(&self) -> bool;
}

impl Monitor for TssrpDetector {
    fn num_streams(&self) -> usize {
        self.k
    }

    fn layout(&self) -> &SensorLayout {
        &self.layout
    }

    fn step(&mut self, x: &[f64]) -> Result<StepOutcome> {
        TssrpDetector::step(self, x)
    }

    fn rounds(&self) -> u64 {
        self.t
    }

    fn alarmed(&self) -> bool {
        self.stopped
    }
}

/// Supplies one full panel of `K` values per round. The monitor masks the
/// panel down to its layout; sources need not know what is observed.
pub trait DataSource {
    /// Fill `out` with the panel for round `t` (1-based). Returns `false`
    /// when the source has no more data.
    fn next_panel(&mut self, t: u64, out: &mut [f64]) -> Result<bool>;
}

/// Options for [`run`] / [`run_monitor`].
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    /// Hard cap on rounds; reaching it without an alarm censors the run.
    pub horizon: u64,
    /// Record each round's layout into the result.
    pub record_layouts: bool,
    /// Record each round's statistic into the result.
    pub record_statistics: bool,
}

impl RunOptions {
    pub fn to_horizon(horizon: u64) -> Self {
        RunOptions {
            horizon,
            record_layouts: false,
            record_statistics: false,
        }
    }

    pub fn with_layout_trace(mut self) -> Self {
        self.record_layouts = true;
        self
    }

    pub fn with_statistic_trace(mut self) -> Self {
        self.record_statistics = true;
        self
    }
}

/// Everything observed over one monitored run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// Round of the alarm, or the horizon when censored.
    pub stopping_time: u64,
    pub alarmed: bool,
    /// True when the horizon was reached without an alarm.
    pub censored: bool,
    /// Panels actually processed.
    pub rounds: u64,
    /// Statistic of the final processed round (`-inf` when no round ran).
    pub final_statistic: f64,
    /// Rounds each stream was observed (0-based stream order).
    pub observation_counts: Vec<u64>,
    /// Per-round layouts (0-based indices), present when tracing was on.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layout_trace: Option<Vec<Vec<usize>>>,
    /// Per-round statistics, present when tracing was on.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub statistic_trace: Option<Vec<f64>>,
}

/// Drive any [`Monitor`] against a [`DataSource`] until alarm, horizon, or
/// source exhaustion. Exhaustion is reported as
/// [`TssrpError::SourceExhausted`] carrying the partial result.
pub fn run_monitor<M: Monitor>(
    monitor: &mut M,
    source: &mut dyn DataSource,
    opts: &RunOptions,
) -> Result<RunResult> {
    let k = monitor.num_streams();
    let mut panel = vec![0.0f64; k];
    let mut counts = vec![0u64; k];
    let mut layout_trace = opts.record_layouts.then(Vec::new);
    let mut statistic_trace = opts.record_statistics.then(Vec::<f64>::new);
    let mut last_stat = f64::NEG_INFINITY;

    for t in 1..=opts.horizon {
        if !source.next_panel(t, &mut panel)? {
            let partial = RunResult {
                stopping_time: t - 1,
                alarmed: false,
                censored: false,
                rounds: t - 1,
                final_statistic: last_stat,
                observation_counts: counts,
                layout_trace,
                statistic_trace,
            };
            return Err(TssrpError::SourceExhausted {
                t,
                partial: Box::new(partial),
            });
        }
        for &i in monitor.layout().observed() {
            counts[i] += 1;
        }
        if let Some(trace) = &mut layout_trace {
            trace.push(monitor.layout().observed().to_vec());
        }
        let outcome = monitor.step(&panel)?;
        last_stat = outcome.statistic;
        if let Some(trace) = &mut statistic_trace {
            trace.push(outcome.statistic);
        }
        if outcome.alarm {
            return Ok(RunResult {
                stopping_time: t,
                alarmed: true,
                censored: false,
                rounds: t,
                final_statistic: last_stat,
                observation_counts: counts,
                layout_trace,
                statistic_trace,
            });
        }
    }
    Ok(RunResult {
        stopping_time: opts.horizon,
        alarmed: false,
        censored: true,
        rounds: opts.horizon,
        final_statistic: last_stat,
        observation_counts: counts,
        layout_trace,
        statistic_trace,
    })
}

/// Build a detector from `config` and drive it over `source`.
pub fn run(
    config: &DetectorConfig,
    source: &mut dyn DataSource,
    opts: &RunOptions,
) -> Result<RunResult> {
    let mut detector = TssrpDetector::new(config)?;
    run_monitor(&mut detector, source, opts)
}
