//! Monte-Carlo threshold calibration.
//!
//! Given a false-alarm budget `γ` (the required in-control average run
//! length), find the smallest alarm threshold whose estimated ARL meets it.
//! The search exploits a structural fact: a monitor's statistic path does
//! not depend on the threshold — the threshold only decides *where along
//! the path* the alarm fires, and the first passage past `c` happens at the
//! path's first running-maximum record with value `≥ c`. The engine
//! therefore simulates each replication once, lazily, storing only its
//! record sequence `(t, statistic)`; every candidate threshold is then
//! evaluated against the same frozen paths (common random numbers), which
//! makes the ARL estimate exactly nondecreasing in the threshold and the
//! bisection's comparisons free of resimulation noise.
//!
//! Bisection runs on the log threshold with the bracket `[1, 2·K·γ]` (raw
//! scale), expanding a boundary that fails by doubling, at most ten times.
//! A candidate is judged by a *capped* lower bound first — paths are only
//! extended far enough to prove the decision — so thresholds far above the
//! answer never force long simulations. The returned threshold is snapped
//! to the smallest observed record value whose estimated ARL meets the
//! target, i.e. the smallest threshold distinguishable from the data at
//! all. The search target is `γ·(1 + target_margin)`: picking the smallest
//! noisy estimate crossing a level selects for downward estimation error,
//! and the small margin (default 2.5%) recenters the *true* ARL of the
//! returned threshold on the budget.

use serde::{Deserialize, Serialize};

use crate::detector::{DataSource, DetectorConfig, Monitor, StoppingRule, TssrpDetector};
use crate::error::{Result, TssrpError};
use crate::math::mean_and_stderr;
use crate::models::{Regime, StreamModel};
use crate::seeding::{replication_seed, rng_for, Purpose};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

// ---------------------------------------------------------------------------
// Public surface
// ---------------------------------------------------------------------------

/// Scale on which a monitor's statistic is compared with its threshold.
///
/// The randomized detector's statistics live in log space (the raw
/// threshold is `A = exp(c)`); the baseline's statistic and threshold are
/// linear (`a = c`). Calibration bisects `ln(threshold)` in both cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatScale {
    Log,
    Linear,
}

impl StatScale {
    /// The statistic-scale comparison constant for log threshold `u`.
    pub fn constant(self, u: f64) -> f64 {
        match self {
            StatScale::Log => u,
            StatScale::Linear => u.exp(),
        }
    }

    /// The raw threshold corresponding to a statistic-scale constant.
    pub fn threshold_of_constant(self, c: f64) -> f64 {
        match self {
            StatScale::Log => c.exp(),
            StatScale::Linear => c,
        }
    }

    /// `ln(threshold)` for a statistic-scale constant.
    pub fn log_threshold_of_constant(self, c: f64) -> f64 {
        match self {
            StatScale::Log => c,
            StatScale::Linear => c.ln(),
        }
    }
}

/// In-control mean stopping time at a fixed threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArlEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// Replications that reached the horizon without crossing (each
    /// contributes the horizon to the mean, biasing it low).
    pub censored: usize,
    pub replications: usize,
}

/// Search parameters. `CalibrationSettings::new(gamma)` fills the defaults:
/// 1000 replications, horizon `100·γ`, relative tolerance 2%, margin 2.5%.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSettings {
    pub gamma: f64,
    pub replications: usize,
    pub horizon: u64,
    /// Early-acceptance band: an exactly evaluated candidate within this
    /// relative distance above the target ends the search.
    pub rel_tol: f64,
    pub master_seed: u64,
    /// Search for `γ·(1+margin)` to offset smallest-crossing selection bias.
    pub target_margin: f64,
}

impl CalibrationSettings {
    pub fn new(gamma: f64) -> Self {
        CalibrationSettings {
            gamma,
            replications: 1000,
            horizon: (100.0 * gamma).ceil() as u64,
            rel_tol: 0.02,
            master_seed: 0,
            target_margin: 0.025,
        }
    }

    pub fn with_seed(mut self, master_seed: u64) -> Self {
        self.master_seed = master_seed;
        self
    }

    pub fn with_replications(mut self, replications: usize) -> Self {
        self.replications = replications;
        self
    }

    pub fn with_horizon(mut self, horizon: u64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            return Err(TssrpError::config(format!(
                "gamma must be finite and at least 1, got {}",
                self.gamma
            )));
        }
        if self.replications == 0 {
            return Err(TssrpError::config("calibration needs at least 1 replication"));
        }
        if self.horizon < self.gamma as u64 {
            return Err(TssrpError::config(format!(
                "horizon {} is shorter than gamma {}; censoring would dominate",
                self.horizon, self.gamma
            )));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol <= 0.2) {
            return Err(TssrpError::config(format!(
                "rel_tol must lie in (0, 0.2], got {}",
                self.rel_tol
            )));
        }
        if !(self.target_margin >= 0.0 && self.target_margin <= 0.2) {
            return Err(TssrpError::config(format!(
                "target_margin must lie in [0, 0.2], got {}",
                self.target_margin
            )));
        }
        Ok(())
    }
}

/// One evaluated candidate during the search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BracketPoint {
    pub threshold: f64,
    pub log_threshold: f64,
    /// Estimated ARL, or a proven lower bound when `exact` is false.
    pub arl: f64,
    pub exact: bool,
    /// Rounds the estimate was capped at when not exact.
    pub cap: u64,
}

/// Result of a calibration search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    /// The calibrated threshold on its native scale (`A` for log-scale
    /// statistics, `a` for linear).
    pub threshold: f64,
    pub log_threshold: f64,
    /// In-control ARL estimate at `threshold` under the calibration paths.
    pub arl_estimate: f64,
    pub std_error: f64,
    pub censored: usize,
    pub gamma: f64,
    pub replications: usize,
    pub horizon: u64,
    /// Every candidate examined, in evaluation order.
    pub bracket_history: Vec<BracketPoint>,
}

// ---------------------------------------------------------------------------
// Resumable replication ensemble
// ---------------------------------------------------------------------------

/// One lazily simulated in-control path: the monitor, its data source, and
/// the running-maximum records of its statistic.
struct RepPath<M, S> {
    monitor: M,
    source: S,
    panel: Vec<f64>,
    t: u64,
    max_stat: f64,
    /// `(t, statistic)` at each new running maximum; strictly increasing in
    /// both coordinates.
    records: Vec<(u64, f64)>,
}

impl<M: Monitor, S: DataSource> RepPath<M, S> {
    fn new(monitor: M, source: S) -> Self {
        let k = monitor.num_streams();
        RepPath {
            monitor,
            source,
            panel: vec![0.0; k],
            t: 0,
            max_stat: f64::NEG_INFINITY,
            records: Vec::new(),
        }
    }

    /// Simulate until the statistic has crossed `c` or `cap` rounds exist.
    fn extend(&mut self, c: f64, cap: u64) -> Result<()> {
        // Stopping times start at t = 1, so even a threshold every path
        // crosses immediately (c = -inf) needs the first round simulated.
        while (self.max_stat < c || self.t == 0) && self.t < cap {
            if !self.source.next_panel(self.t + 1, &mut self.panel)? {
                return Err(TssrpError::data(format!(
                    "in-control source exhausted at t={} during calibration",
                    self.t + 1
                )));
            }
            let out = self.monitor.step(&self.panel)?;
            self.t += 1;
            if out.statistic > self.max_stat {
                self.max_stat = out.statistic;
                self.records.push((self.t, out.statistic));
            }
        }
        Ok(())
    }

    /// First passage past `c`, capped at `cap`. Returns `(time, crossed)`.
    /// Only valid once the path was extended past `c` or to `cap`.
    fn passage(&self, c: f64, cap: u64) -> (u64, bool) {
        debug_assert!(self.max_stat >= c || self.t >= cap);
        let idx = self.records.partition_point(|&(_, s)| s < c);
        match self.records.get(idx) {
            Some(&(t, _)) if t <= cap => (t, true),
            _ => (cap, false),
        }
    }

    /// Drop records below `floor`; safe once no future query can be ≤ floor.
    fn prune(&mut self, floor: f64) {
        self.records.retain(|&(_, s)| s >= floor);
    }
}

/// The shared ensemble: every candidate threshold is judged against these
/// same paths.
struct Ensemble<M, S> {
    reps: Vec<RepPath<M, S>>,
    horizon: u64,
}

impl<M, S> Ensemble<M, S>
where
    M: Monitor + Send,
    S: DataSource + Send,
{
    fn build<FM, FS>(
        make_monitor: &FM,
        make_source: &FS,
        replications: usize,
        horizon: u64,
        master_seed: u64,
    ) -> Result<Self>
    where
        FM: Fn(u64) -> Result<M>,
        FS: Fn(u64) -> Result<S>,
    {
        let mut reps = Vec::with_capacity(replications);
        for rep in 0..replications {
            let rep_seed = replication_seed(master_seed, rep as u64);
            reps.push(RepPath::new(make_monitor(rep_seed)?, make_source(rep_seed)?));
        }
        Ok(Ensemble { reps, horizon })
    }

    /// Extend every path far enough to answer queries at `c` capped at
    /// `cap`. Paths are independent, so this is the data-parallel section;
    /// results are identical for any worker count because each path owns
    /// its RNG streams and the reduction below iterates in rep order.
    fn extend_all(&mut self, c: f64, cap: u64) -> Result<()> {
        #[cfg(feature = "parallel")]
        {
            self.reps.par_iter_mut().try_for_each(|rep| rep.extend(c, cap))
        }
        #[cfg(not(feature = "parallel"))]
        {
            self.reps.iter_mut().try_for_each(|rep| rep.extend(c, cap))
        }
    }

    /// Exact ARL estimate at `c` (censored at the horizon). Extends paths
    /// as needed.
    fn arl_at(&mut self, c: f64) -> Result<ArlEstimate> {
        self.extend_all(c, self.horizon)?;
        let horizon = self.horizon;
        let times: Vec<f64> = self
            .reps
            .iter()
            .map(|rep| rep.passage(c, horizon).0 as f64)
            .collect();
        let censored = self
            .reps
            .iter()
            .filter(|rep| !rep.passage(c, horizon).1)
            .count();
        let (mean, std_error) = mean_and_stderr(&times);
        Ok(ArlEstimate {
            mean,
            std_error,
            censored,
            replications: self.reps.len(),
        })
    }

    /// Decide `ARL(c) >= target` while extending paths as little as
    /// possible: the capped mean `E[min(T, cap)]` is a lower bound that
    /// usually proves a "yes" at `cap ≈ 2·target`, and becomes exact when
    /// every path crossed or the cap reaches the horizon. The returned
    /// point's threshold fields are left to the caller, which knows the
    /// statistic scale.
    fn meets_target(&mut self, c: f64, target: f64) -> Result<(bool, BracketPoint)> {
        let mut cap = (2.0 * target).ceil() as u64;
        cap = cap.clamp(1, self.horizon);
        loop {
            self.extend_all(c, cap)?;
            let mut sum = 0.0f64;
            let mut uncrossed = 0usize;
            for rep in &self.reps {
                let (t, crossed) = rep.passage(c, cap);
                sum += t as f64;
                if !crossed {
                    uncrossed += 1;
                }
            }
            let mean = sum / self.reps.len() as f64;
            let exact = uncrossed == 0 || cap == self.horizon;
            if mean >= target || exact {
                let point = BracketPoint {
                    threshold: f64::NAN,
                    log_threshold: f64::NAN,
                    arl: mean,
                    exact,
                    cap,
                };
                return Ok((mean >= target, point));
            }
            cap = (cap * 2).clamp(1, self.horizon);
        }
    }

    fn prune_below(&mut self, floor: f64) {
        for rep in &mut self.reps {
            rep.prune(floor);
        }
    }

    /// Distinct record values in `(lo, hi]`, ascending, across all paths.
    fn record_values_between(&self, lo: f64, hi: f64) -> Vec<f64> {
        let mut values: Vec<f64> = self
            .reps
            .iter()
            .flat_map(|rep| rep.records.iter())
            .map(|&(_, s)| s)
            .filter(|&s| s > lo && s <= hi)
            .collect();
        values.sort_unstable_by(f64::total_cmp);
        values.dedup();
        values
    }
}

// ---------------------------------------------------------------------------
// Search
// ---------------------------------------------------------------------------

/// Calibrate an arbitrary monitor family.
///
/// `make_monitor(rep_seed)` must build the monitor with a never-firing
/// threshold (`+inf`); the search compares candidate constants externally.
/// `make_source(rep_seed)` supplies that replication's in-control panels.
pub fn calibrate_with<M, S, FM, FS>(
    k: usize,
    scale: StatScale,
    make_monitor: FM,
    make_source: FS,
    settings: &CalibrationSettings,
) -> Result<CalibrationReport>
where
    M: Monitor + Send,
    S: DataSource + Send,
    FM: Fn(u64) -> Result<M>,
    FS: Fn(u64) -> Result<S>,
{
    settings.validate()?;
    if k == 0 {
        return Err(TssrpError::config("K must be at least 1"));
    }
    let target = settings.gamma * (1.0 + settings.target_margin);
    let mut ensemble = Ensemble::build(
        &make_monitor,
        &make_source,
        settings.replications,
        settings.horizon,
        settings.master_seed,
    )?;
    let mut history: Vec<BracketPoint> = Vec::new();

    let probe = |ens: &mut Ensemble<M, S>, u: f64, history: &mut Vec<BracketPoint>| -> Result<bool> {
        let c = scale.constant(u);
        let (yes, mut point) = ens.meets_target(c, target)?;
        point.threshold = scale.threshold_of_constant(c);
        point.log_threshold = u;
        history.push(point);
        Ok(yes)
    };

    // Starting bracket [1, 2·K·γ] on the raw threshold scale.
    let mut u_lo = 0.0f64;
    let mut u_hi = (2.0 * k as f64 * settings.gamma).ln();

    // The lower boundary must fail the target; expand downward otherwise.
    let mut attempts = 0;
    let mut span = u_hi - u_lo;
    while probe(&mut ensemble, u_lo, &mut history)? {
        attempts += 1;
        if attempts > 10 {
            return Err(TssrpError::calibration(format!(
                "lower bracket never fell below the target ARL after 10 \
                 expansions (last log-threshold {u_lo})"
            )));
        }
        u_lo -= span;
        span *= 2.0;
    }
    // The upper boundary must meet the target; expand upward by doubling.
    attempts = 0;
    while !probe(&mut ensemble, u_hi, &mut history)? {
        attempts += 1;
        if attempts > 10 {
            return Err(TssrpError::calibration(format!(
                "upper bracket still misses the target ARL after 10 doublings \
                 (last log-threshold {u_hi}); the horizon may be too short"
            )));
        }
        u_hi *= 2.0;
    }

    // Bisect until the bracket contains a manageable set of candidate
    // record values, then pick the smallest that meets the target.
    for _ in 0..200 {
        let candidates =
            ensemble.record_values_between(scale.constant(u_lo), scale.constant(u_hi));
        if candidates.len() <= 64 {
            break;
        }
        let mid = 0.5 * (u_lo + u_hi);
        if probe(&mut ensemble, mid, &mut history)? {
            u_hi = mid;
            // Early acceptance: an exact estimate close enough to the target.
            let last = *history.last().unwrap();
            if last.exact && last.arl >= target && last.arl <= target * (1.0 + settings.rel_tol) {
                break;
            }
        } else {
            u_lo = mid;
            ensemble.prune_below(scale.constant(u_lo));
        }
    }

    let candidates = ensemble.record_values_between(scale.constant(u_lo), scale.constant(u_hi));
    let mut final_c = scale.constant(u_hi);
    if !candidates.is_empty() {
        // Binary search the smallest candidate meeting the target; the
        // shared paths make the decision monotone in the candidate value.
        let mut lo = 0usize; // below: known misses
        let mut hi = candidates.len() - 1;
        // `u_hi` met the target, so the last candidate ≤ c(u_hi) need not;
        // guard by checking it first.
        if !{
            let c = candidates[hi];
            let (yes, mut point) = ensemble.meets_target(c, target)?;
            point.threshold = scale.threshold_of_constant(c);
            point.log_threshold = scale.log_threshold_of_constant(c);
            history.push(point);
            yes
        } {
            // No record value in the bracket reaches the target: the ARL is
            // flat between the last candidate and c(u_hi); keep c(u_hi).
            hi = candidates.len();
        } else {
            while lo < hi {
                let mid = lo + (hi - lo) / 2;
                let c = candidates[mid];
                let (yes, mut point) = ensemble.meets_target(c, target)?;
                point.threshold = scale.threshold_of_constant(c);
                point.log_threshold = scale.log_threshold_of_constant(c);
                history.push(point);
                if yes {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
        }
        if hi < candidates.len() {
            final_c = candidates[hi];
        }
    }

    let final_est = ensemble.arl_at(final_c)?;
    let threshold = scale.threshold_of_constant(final_c);
    let log_threshold = scale.log_threshold_of_constant(final_c);
    history.push(BracketPoint {
        threshold,
        log_threshold,
        arl: final_est.mean,
        exact: true,
        cap: settings.horizon,
    });

    Ok(CalibrationReport {
        threshold,
        log_threshold,
        arl_estimate: final_est.mean,
        std_error: final_est.std_error,
        censored: final_est.censored,
        gamma: settings.gamma,
        replications: settings.replications,
        horizon: settings.horizon,
        bracket_history: history,
    })
}

/// Direct Monte-Carlo ARL estimate for an arbitrary monitor family at a
/// fixed statistic-scale constant. Uses the same per-replication seeding as
/// [`calibrate_with`], so the two agree path-for-path under one master seed.
pub fn estimate_arl_with<M, S, FM, FS>(
    make_monitor: FM,
    make_source: FS,
    stat_constant: f64,
    replications: usize,
    horizon: u64,
    master_seed: u64,
) -> Result<ArlEstimate>
where
    M: Monitor + Send,
    S: DataSource + Send,
    FM: Fn(u64) -> Result<M>,
    FS: Fn(u64) -> Result<S>,
{
    if replications == 0 {
        return Err(TssrpError::config("ARL estimation needs at least 1 replication"));
    }
    if horizon == 0 {
        return Err(TssrpError::config("horizon must be at least 1"));
    }
    let mut ensemble =
        Ensemble::build(&make_monitor, &make_source, replications, horizon, master_seed)?;
    ensemble.arl_at(stat_constant)
}

// ---------------------------------------------------------------------------
// Detector-shaped wrappers
// ---------------------------------------------------------------------------

/// Iid pre-change panels drawn from a model set — the in-control world for
/// independent-stream scenarios.
pub struct IidNullSource {
    models: Vec<StreamModel>,
    rng: rand_chacha::ChaCha8Rng,
}

impl IidNullSource {
    pub fn new(models: Vec<StreamModel>, seed: u64) -> Self {
        IidNullSource {
            models,
            rng: rng_for(seed, Purpose::Data),
        }
    }
}

impl DataSource for IidNullSource {
    fn next_panel(&mut self, _t: u64, out: &mut [f64]) -> Result<bool> {
        for (slot, model) in out.iter_mut().zip(&self.models) {
            *slot = model.sample(Regime::Pre, &mut self.rng);
        }
        Ok(true)
    }
}

fn never_firing(config: &DetectorConfig, rep_seed: u64) -> Result<TssrpDetector> {
    let mut cfg = config.clone();
    cfg.rule = StoppingRule::from_log_threshold(cfg.rule.kind, cfg.rule.r, f64::INFINITY)?;
    cfg.seed = rep_seed;
    TssrpDetector::new(&cfg)
}

/// In-control ARL of the randomized detector at threshold `A`, with iid
/// pre-change data from the configured models.
pub fn estimate_arl(
    config: &DetectorConfig,
    threshold_a: f64,
    replications: usize,
    horizon: u64,
    master_seed: u64,
) -> Result<ArlEstimate> {
    config.validate()?;
    if !(threshold_a >= 0.0) {
        return Err(TssrpError::config(format!(
            "threshold A must be nonnegative, got {threshold_a}"
        )));
    }
    let models = config.models.clone();
    estimate_arl_with(
        |rep_seed| never_firing(config, rep_seed),
        |rep_seed| Ok(IidNullSource::new(models.clone(), rep_seed)),
        threshold_a.ln(),
        replications,
        horizon,
        master_seed,
    )
}

/// Calibrate the randomized detector's threshold `A` for budget `gamma`,
/// with iid pre-change data from the configured models.
pub fn calibrate_threshold(
    config: &DetectorConfig,
    gamma: f64,
    replications: usize,
    horizon: u64,
    rel_tol: f64,
    master_seed: u64,
) -> Result<CalibrationReport> {
    config.validate()?;
    let mut settings = CalibrationSettings::new(gamma)
        .with_seed(master_seed)
        .with_replications(replications)
        .with_horizon(horizon);
    settings.rel_tol = rel_tol;
    let models = config.models.clone();
    calibrate_with(
        config.k,
        StatScale::Log,
        |rep_seed| never_firing(config, rep_seed),
        |rep_seed| Ok(IidNullSource::new(models.clone(), rep_seed)),
        &settings,
    )
}
