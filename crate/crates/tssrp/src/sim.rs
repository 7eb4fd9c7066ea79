//! Synthetic scenarios and replicated experiments.
//!
//! Two data-generating worlds are provided. The *panel* scenario draws
//! independent streams, with a chosen subset shifting distribution at the
//! change time; detector belief models and data-generating truth models are
//! specified separately, so belief mismatch (e.g. monitoring for a shift of
//! 1.5 when the true shift is 2) is a first-class experiment. The
//! *production-line* scenario drives the panel through a linear-Gaussian
//! DAG: root variables may shift, and descendants inherit attenuated shifts
//! through the edge weights, giving correlated streams with a known ground
//! truth.
//!
//! [`run_experiment`] and [`run_hot_forming_experiment`] replicate a
//! monitored run under either world and aggregate detection delay and
//! per-stream observation occupancy. Replications are driven by
//! [`replicate`], which runs data-parallel when the `parallel` feature is
//! enabled (the default); each replication derives every random stream from
//! its own replication seed, so results are identical — byte for byte — for
//! any worker count, including the always-available sequential driver.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::baselines::{TrasConfig, TrasDetector};
use crate::calibration::{
    calibrate_with, estimate_arl_with, ArlEstimate, CalibrationReport, CalibrationSettings,
    StatScale,
};
use crate::detector::{
    run_monitor, DataSource, DetectorConfig, Monitor, RuleKind, RunOptions, RunResult,
    StoppingRule, TssrpDetector,
};
use crate::error::{Result, TssrpError};
use crate::math::mean_and_stderr;
use crate::models::{Regime, StreamModel};
use crate::priors::PriorSpec;
use crate::seeding::{replication_seed, rng_for, Purpose};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

// ---------------------------------------------------------------------------
// Replication driver
// ---------------------------------------------------------------------------

/// Run `n` replications of `f`, passing each its index and derived seed.
///
/// Parallel when the `parallel` feature is on; the output order and every
/// value are identical to [`replicate_sequential`] regardless of worker
/// count, because replication `i`'s randomness depends only on
/// `replication_seed(master_seed, i)`.
pub fn replicate<T, F>(n: usize, master_seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T> + Sync,
{
    #[cfg(feature = "parallel")]
    {
        (0..n)
            .into_par_iter()
            .map(|rep| f(rep, replication_seed(master_seed, rep as u64)))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        replicate_sequential(n, master_seed, f)
    }
}

/// Single-threaded replication driver; always available, used by the bench
/// suite as the comparison baseline.
pub fn replicate_sequential<T, F>(n: usize, master_seed: u64, f: F) -> Result<Vec<T>>
where
    F: Fn(usize, u64) -> Result<T>,
{
    (0..n)
        .map(|rep| f(rep, replication_seed(master_seed, rep as u64)))
        .collect()
}

// ---------------------------------------------------------------------------
// Panel scenario
// ---------------------------------------------------------------------------

/// Independent-stream experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub k: usize,
    /// Observation budget per round.
    pub q: usize,
    /// Stopping depth.
    pub r: usize,
    /// False-alarm budget the thresholds are calibrated for.
    pub gamma: f64,
    /// Change time: data follows the post-change law from round `nu` on.
    /// `None` keeps every stream in control forever.
    pub nu: Option<u64>,
    /// Streams (0-based) that actually shift at `nu`.
    pub changed: Vec<usize>,
    /// What the detectors believe each stream does.
    pub detector_models: Vec<StreamModel>,
    /// What the data actually does.
    pub truth_models: Vec<StreamModel>,
    pub prior: PriorSpec,
    pub replications: usize,
    /// Per-replication round cap.
    pub horizon: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.k == 0 {
            problems.push("K must be at least 1".into());
        }
        if self.q == 0 || self.q > self.k {
            problems.push(format!("budget q={} must satisfy 1 <= q <= K={}", self.q, self.k));
        }
        if self.r == 0 || self.r > self.k {
            problems.push(format!("depth r={} must satisfy 1 <= r <= K={}", self.r, self.k));
        }
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            problems.push(format!("gamma must be finite and at least 1, got {}", self.gamma));
        }
        if self.nu == Some(0) {
            problems.push("change time nu is 1-based; 0 is not a round".into());
        }
        for &c in &self.changed {
            if c >= self.k {
                problems.push(format!("changed stream index {c} out of range for K={}", self.k));
            }
        }
        let mut sorted = self.changed.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            problems.push("changed stream listed twice".into());
        }
        if self.detector_models.len() != self.k {
            problems.push(format!(
                "expected {} detector models, got {}",
                self.k,
                self.detector_models.len()
            ));
        }
        if self.truth_models.len() != self.k {
            problems.push(format!(
                "expected {} truth models, got {}",
                self.k,
                self.truth_models.len()
            ));
        }
        if self.prior.len() != self.k {
            problems.push(format!(
                "expected priors for {} streams, got {}",
                self.k,
                self.prior.len()
            ));
        }
        if self.replications == 0 {
            problems.push("replications must be at least 1".into());
        }
        if self.horizon == 0 {
            problems.push("horizon must be at least 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(TssrpError::config(problems.join("; ")))
        }
    }

    /// The same world with the change switched off (for calibration).
    pub fn in_control(&self) -> Scenario {
        Scenario {
            nu: None,
            ..self.clone()
        }
    }
}

/// Fill `out` with the panel for round `t` of the scenario: every stream
/// draws from its truth model, post-change for changed streams once
/// `t >= nu`.
pub fn generate_panel<R: Rng + ?Sized>(
    scenario: &Scenario,
    t: u64,
    rng: &mut R,
    out: &mut [f64],
) -> Result<()> {
    if out.len() != scenario.k {
        return Err(TssrpError::input(format!(
            "panel buffer holds {}, scenario has K={}",
            out.len(),
            scenario.k
        )));
    }
    let after_change = scenario.nu.is_some_and(|nu| t >= nu);
    for (i, slot) in out.iter_mut().enumerate() {
        let regime = if after_change && scenario.changed.contains(&i) {
            Regime::Post
        } else {
            Regime::Pre
        };
        *slot = scenario.truth_models[i].sample(regime, rng);
    }
    Ok(())
}

/// Streaming [`DataSource`] over a panel scenario. Panels depend only on
/// the seed and the round index — never on what any detector chose to
/// observe.
pub struct PanelSource {
    truth: Vec<StreamModel>,
    changed_mask: Vec<bool>,
    nu: Option<u64>,
    rng: ChaCha8Rng,
}

impl PanelSource {
    pub fn new(scenario: &Scenario, seed: u64) -> Self {
        let mut changed_mask = vec![false; scenario.k];
        for &c in &scenario.changed {
            changed_mask[c] = true;
        }
        PanelSource {
            truth: scenario.truth_models.clone(),
            changed_mask,
            nu: scenario.nu,
            rng: rng_for(seed, Purpose::Data),
        }
    }
}

impl DataSource for PanelSource {
    fn next_panel(&mut self, t: u64, out: &mut [f64]) -> Result<bool> {
        let after_change = self.nu.is_some_and(|nu| t >= nu);
        for i in 0..out.len() {
            let regime = if after_change && self.changed_mask[i] {
                Regime::Post
            } else {
                Regime::Pre
            };
            out[i] = self.truth[i].sample(regime, &mut self.rng);
        }
        Ok(true)
    }
}

// ---------------------------------------------------------------------------
// Linear-Gaussian production-line scenario
// ---------------------------------------------------------------------------

/// One weighted edge of the DAG.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetEdge {
    pub parent: usize,
    pub child: usize,
    pub weight: f64,
}

/// A linear-Gaussian DAG: each node is the weighted sum of its parents plus
/// independent Gaussian noise. With `standardize` the noise variances are
/// solved so every marginal is exactly standard normal, which keeps
/// per-stream belief models honest about the in-control scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesNetSpec {
    pub names: Vec<String>,
    pub edges: Vec<NetEdge>,
    /// Structural noise standard deviations; ignored when `standardize`.
    pub noise_sd: Vec<f64>,
    pub standardize: bool,
}

impl BayesNetSpec {
    /// The five-variable hot-forming line shipped as the default: two root
    /// process variables feeding a diamond of downstream measurements. The
    /// weights are illustrative — chosen so root shifts dominate while
    /// descendants inherit only attenuated drift.
    pub fn default_hot_forming() -> Self {
        let names = ["x1", "x2", "x3", "x4", "x5"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        BayesNetSpec {
            names,
            edges: vec![
                NetEdge { parent: 0, child: 2, weight: 0.15 },
                NetEdge { parent: 1, child: 3, weight: 0.15 },
                NetEdge { parent: 2, child: 4, weight: 0.2 },
                NetEdge { parent: 3, child: 4, weight: 0.2 },
            ],
            noise_sd: vec![1.0; 5],
            standardize: true,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Kahn topological order; errors on cycles and malformed edges.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let k = self.len();
        if k == 0 {
            return Err(TssrpError::config("network needs at least one node"));
        }
        {
            let mut seen = self.names.clone();
            seen.sort();
            if seen.windows(2).any(|w| w[0] == w[1]) {
                return Err(TssrpError::config("node names must be unique"));
            }
        }
        let mut indegree = vec![0usize; k];
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); k];
        let mut pairs = std::collections::BTreeSet::new();
        for e in &self.edges {
            if e.parent >= k || e.child >= k {
                return Err(TssrpError::config(format!(
                    "edge {} -> {} out of range for {k} nodes",
                    e.parent, e.child
                )));
            }
            if e.parent == e.child {
                return Err(TssrpError::config(format!("self-loop on node {}", e.parent)));
            }
            if !pairs.insert((e.parent, e.child)) {
                return Err(TssrpError::config(format!(
                    "duplicate edge {} -> {}",
                    e.parent, e.child
                )));
            }
            if !(e.weight.is_finite()) {
                return Err(TssrpError::config(format!(
                    "edge {} -> {} weight must be finite",
                    e.parent, e.child
                )));
            }
            indegree[e.child] += 1;
            children[e.parent].push(e.child);
        }
        let mut queue: Vec<usize> = (0..k).filter(|&v| indegree[v] == 0).collect();
        let mut order = Vec::with_capacity(k);
        while let Some(v) = queue.pop() {
            order.push(v);
            for &c in &children[v] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    queue.push(c);
                }
            }
        }
        if order.len() != k {
            return Err(TssrpError::config("the network contains a cycle"));
        }
        Ok(order)
    }

    /// Nodes with no parents.
    pub fn roots(&self) -> Vec<usize> {
        let mut has_parent = vec![false; self.len()];
        for e in &self.edges {
            if e.child < has_parent.len() {
                has_parent[e.child] = true;
            }
        }
        (0..self.len()).filter(|&v| !has_parent[v]).collect()
    }

    fn parents_of(&self) -> Vec<Vec<(usize, f64)>> {
        let mut parents: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.len()];
        for e in &self.edges {
            parents[e.child].push((e.parent, e.weight));
        }
        parents
    }

    /// Per-node noise standard deviations actually used for generation:
    /// either the configured ones, or — under `standardize` — the values
    /// solving `Var(node) = 1` given the implied covariance of the parents.
    pub fn effective_noise_sd(&self) -> Result<Vec<f64>> {
        let k = self.len();
        let order = self.topological_order()?;
        if self.noise_sd.len() != k {
            return Err(TssrpError::config(format!(
                "expected {k} noise standard deviations, got {}",
                self.noise_sd.len()
            )));
        }
        if !self.standardize {
            for (i, &sd) in self.noise_sd.iter().enumerate() {
                if !(sd.is_finite() && sd > 0.0) {
                    return Err(TssrpError::config(format!(
                        "noise sd of node {i} must be positive, got {sd}"
                    )));
                }
            }
            return Ok(self.noise_sd.clone());
        }
        // Propagate the implied covariance in topological order and solve
        // each node's noise variance so its marginal is exactly 1.
        let parents = self.parents_of();
        let mut cov = vec![vec![0.0f64; k]; k];
        let mut sds = vec![0.0f64; k];
        for &v in &order {
            let ps = &parents[v];
            let mut structural = 0.0;
            for &(p, wp) in ps {
                for &(p2, wp2) in ps {
                    structural += wp * wp2 * cov[p][p2];
                }
            }
            let noise_var = 1.0 - structural;
            if noise_var <= 0.0 {
                return Err(TssrpError::config(format!(
                    "cannot standardize node {v}: parent contribution {structural:.4} \
                     already exceeds unit variance"
                )));
            }
            sds[v] = noise_var.sqrt();
            for u in 0..k {
                if u == v {
                    continue;
                }
                let mut c = 0.0;
                for &(p, wp) in ps {
                    c += wp * cov[p][u];
                }
                cov[v][u] = c;
                cov[u][v] = c;
            }
            cov[v][v] = 1.0;
        }
        Ok(sds)
    }

    pub fn validate(&self) -> Result<()> {
        self.effective_noise_sd().map(|_| ())
    }
}

/// One tick of the network: ancestral sampling in topological order, adding
/// `shift` to each root in `changed_roots`. An empty `changed_roots`
/// generates the in-control line.
pub fn generate_hot_forming<R: Rng + ?Sized>(
    spec: &BayesNetSpec,
    changed_roots: &[usize],
    shift: f64,
    rng: &mut R,
    out: &mut [f64],
) -> Result<()> {
    if out.len() != spec.len() {
        return Err(TssrpError::input(format!(
            "buffer holds {}, network has {} nodes",
            out.len(),
            spec.len()
        )));
    }
    let roots = spec.roots();
    for &c in changed_roots {
        if !roots.contains(&c) {
            return Err(TssrpError::config(format!(
                "changed node {c} is not a root; shifts may only be injected at roots"
            )));
        }
    }
    let order = spec.topological_order()?;
    let sds = spec.effective_noise_sd()?;
    let parents = spec.parents_of();
    for &v in &order {
        let mut value: f64 = sds[v] * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
        for &(p, w) in &parents[v] {
            value += w * out[p];
        }
        if changed_roots.contains(&v) {
            value += shift;
        }
        out[v] = value;
    }
    Ok(())
}

/// Production-line experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotFormingScenario {
    pub net: BayesNetSpec,
    pub q: usize,
    pub r: usize,
    pub gamma: f64,
    /// Change time (1-based); `None` stays in control.
    pub nu: Option<u64>,
    /// How many roots shift, drawn uniformly without replacement per
    /// replication — unless `fixed_changed_roots` pins them.
    pub change_count: usize,
    pub fixed_changed_roots: Option<Vec<usize>>,
    /// True shift added to each changed root.
    pub shift: f64,
    /// Per-stream shift the detectors monitor for.
    pub belief_shift: f64,
    pub prior: PriorSpec,
    pub replications: usize,
    pub horizon: u64,
}

impl HotFormingScenario {
    /// Defaults matching the shipped five-node line: budget 2 of 5,
    /// depth 2, false-alarm budget 100, immediate change on both roots with
    /// true shift 2 monitored as a shift of 1.5.
    pub fn default_line() -> Result<Self> {
        let net = BayesNetSpec::default_hot_forming();
        let k = net.len();
        Ok(HotFormingScenario {
            net,
            q: 2,
            r: 2,
            gamma: 100.0,
            nu: Some(1),
            change_count: 2,
            fixed_changed_roots: None,
            shift: 2.0,
            belief_shift: 1.5,
            prior: PriorSpec::preset(crate::priors::PriorPreset::G2, k)?,
            replications: 1000,
            horizon: 10_000,
        })
    }

    pub fn k(&self) -> usize {
        self.net.len()
    }

    /// The same line with the change switched off, for calibration and
    /// false-alarm validation against the correlated in-control process.
    pub fn in_control(&self) -> HotFormingScenario {
        HotFormingScenario {
            nu: None,
            ..self.clone()
        }
    }

    /// Gaussian belief models every detector monitors the line with.
    pub fn belief_models(&self) -> Result<Vec<StreamModel>> {
        (0..self.k())
            .map(|_| StreamModel::gaussian_shift(0.0, self.belief_shift, 1.0))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        let k = self.k();
        let mut problems = Vec::new();
        if self.q == 0 || self.q > k {
            problems.push(format!("budget q={} must satisfy 1 <= q <= K={k}", self.q));
        }
        if self.r == 0 || self.r > k {
            problems.push(format!("depth r={} must satisfy 1 <= r <= K={k}", self.r));
        }
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            problems.push(format!("gamma must be finite and at least 1, got {}", self.gamma));
        }
        if self.nu == Some(0) {
            problems.push("change time nu is 1-based; 0 is not a round".into());
        }
        let roots = self.net.roots();
        if let Some(fixed) = &self.fixed_changed_roots {
            for &c in fixed {
                if !roots.contains(&c) {
                    problems.push(format!("changed node {c} is not a root"));
                }
            }
        } else if self.change_count == 0 || self.change_count > roots.len() {
            problems.push(format!(
                "change_count {} must lie in 1..={} (the number of roots)",
                self.change_count,
                roots.len()
            ));
        }
        if !(self.shift.is_finite()) {
            problems.push(format!("shift must be finite, got {}", self.shift));
        }
        if !(self.belief_shift.is_finite() && self.belief_shift != 0.0) {
            problems.push(format!(
                "belief shift must be finite and nonzero, got {}",
                self.belief_shift
            ));
        }
        if self.prior.len() != k {
            problems.push(format!("expected priors for {k} streams, got {}", self.prior.len()));
        }
        if self.replications == 0 {
            problems.push("replications must be at least 1".into());
        }
        if self.horizon == 0 {
            problems.push("horizon must be at least 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(TssrpError::config(problems.join("; ")))
        }
    }

    /// The replication's changed roots: the pinned set, or `change_count`
    /// roots drawn uniformly from the replication's data stream.
    fn changed_roots_for_rep<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        if let Some(fixed) = &self.fixed_changed_roots {
            return fixed.clone();
        }
        let roots = self.net.roots();
        let mut picked =
            rand::seq::index::sample(rng, roots.len(), self.change_count).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| roots[i]).collect()
    }
}

/// Streaming [`DataSource`] over the production line. The replication's
/// changed roots are drawn from the data RNG before the first panel, so the
/// whole path is a pure function of the seed.
pub struct HotFormingSource {
    order: Vec<usize>,
    parents: Vec<Vec<(usize, f64)>>,
    noise_sd: Vec<f64>,
    changed_mask: Vec<bool>,
    shift: f64,
    nu: Option<u64>,
    rng: ChaCha8Rng,
}

impl HotFormingSource {
    pub fn new(scenario: &HotFormingScenario, seed: u64) -> Result<Self> {
        let mut rng = rng_for(seed, Purpose::Data);
        let changed = if scenario.nu.is_some() {
            scenario.changed_roots_for_rep(&mut rng)
        } else {
            Vec::new()
        };
        let mut changed_mask = vec![false; scenario.k()];
        for &c in &changed {
            changed_mask[c] = true;
        }
        Ok(HotFormingSource {
            order: scenario.net.topological_order()?,
            parents: scenario.net.parents_of(),
            noise_sd: scenario.net.effective_noise_sd()?,
            changed_mask,
            shift: scenario.shift,
            nu: scenario.nu,
            rng,
        })
    }

    /// The roots this replication shifts (empty when in control).
    pub fn changed_roots(&self) -> Vec<usize> {
        (0..self.changed_mask.len())
            .filter(|&i| self.changed_mask[i])
            .collect()
    }
}

impl DataSource for HotFormingSource {
    fn next_panel(&mut self, t: u64, out: &mut [f64]) -> Result<bool> {
        let shifted = self.nu.is_some_and(|nu| t >= nu);
        for &v in &self.order {
            let mut value: f64 =
                self.noise_sd[v] * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut self.rng);
            for &(p, w) in &self.parents[v] {
                value += w * out[p];
            }
            if shifted && self.changed_mask[v] {
                value += self.shift;
            }
            out[v] = value;
        }
        Ok(true)
    }
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

/// Which procedure an experiment runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Algorithm {
    /// The randomized detector with the given stopping-statistic kind.
    Tssrp { rule: RuleKind },
    /// The compensation baseline with the given increment.
    Tras { delta: f64 },
}

impl Algorithm {
    fn label(&self) -> String {
        match self {
            Algorithm::Tssrp { rule } => format!("tssrp:{}", rule.name()),
            Algorithm::Tras { delta } => format!("tras:delta={delta}"),
        }
    }
}

/// One replication's row in an experiment report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepRow {
    pub rep: usize,
    pub stopping_time: u64,
    pub alarmed: bool,
    pub censored: bool,
    /// `stopping_time - nu` when the run survived to the change.
    pub delay: Option<u64>,
}

/// Aggregated outcome of a replicated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    /// Procedure label, e.g. `tssrp:top_r_sum` or `tras:delta=0.05`.
    pub algorithm: String,
    /// Prior label for the randomized detector (e.g. `g0`), or the
    /// baseline's compensation setting (e.g. `delta=0.05`).
    pub prior_or_delta: String,
    /// Number of streams that actually shift (0 for in-control runs).
    pub n_changes: usize,
    pub k: usize,
    pub q: usize,
    pub r: usize,
    pub gamma: f64,
    /// Raw threshold on the procedure's native scale.
    pub threshold: f64,
    pub nu: Option<u64>,
    pub replications: usize,
    pub horizon: u64,
    pub alarms: usize,
    pub censored: usize,
    /// Alarms raised strictly before the change time.
    pub early_alarms: usize,
    pub mean_stopping_time: f64,
    pub stderr_stopping_time: f64,
    /// Detection delay `T - nu` over replications surviving to the change;
    /// absent for in-control experiments.
    pub mean_delay: Option<f64>,
    pub stderr_delay: Option<f64>,
    /// Pooled fraction of rounds each stream was observed (0-based order).
    pub occupancy: Vec<f64>,
    pub master_seed: u64,
    pub per_replication: Vec<RepRow>,
}

#[allow(clippy::too_many_arguments)]
fn aggregate(
    label: String,
    prior_or_delta: String,
    n_changes: usize,
    k: usize,
    q: usize,
    r: usize,
    gamma: f64,
    threshold: f64,
    nu: Option<u64>,
    horizon: u64,
    master_seed: u64,
    results: Vec<RunResult>,
) -> ExperimentReport {
    let replications = results.len();
    let mut rows = Vec::with_capacity(replications);
    let mut counts = vec![0u64; k];
    let mut rounds_total = 0u64;
    let mut stop_times = Vec::with_capacity(replications);
    let mut delays = Vec::new();
    let mut alarms = 0;
    let mut censored = 0;
    let mut early_alarms = 0;
    for (rep, res) in results.into_iter().enumerate() {
        if res.alarmed {
            alarms += 1;
        }
        if res.censored {
            censored += 1;
        }
        let delay = match nu {
            Some(nu) if res.stopping_time >= nu => {
                let d = res.stopping_time - nu;
                delays.push(d as f64);
                Some(d)
            }
            Some(_) => {
                early_alarms += 1;
                None
            }
            None => None,
        };
        stop_times.push(res.stopping_time as f64);
        for (i, &c) in res.observation_counts.iter().enumerate() {
            counts[i] += c;
        }
        rounds_total += res.rounds;
        rows.push(RepRow {
            rep,
            stopping_time: res.stopping_time,
            alarmed: res.alarmed,
            censored: res.censored,
            delay,
        });
    }
    let (mean_stop, se_stop) = mean_and_stderr(&stop_times);
    let (mean_delay, stderr_delay) = if delays.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_and_stderr(&delays);
        (Some(m), Some(s))
    };
    let occupancy = counts
        .iter()
        .map(|&c| {
            if rounds_total == 0 {
                0.0
            } else {
                c as f64 / rounds_total as f64
            }
        })
        .collect();
    ExperimentReport {
        algorithm: label,
        prior_or_delta,
        n_changes,
        k,
        q,
        r,
        gamma,
        threshold,
        nu,
        replications,
        horizon,
        alarms,
        censored,
        early_alarms,
        mean_stopping_time: mean_stop,
        stderr_stopping_time: se_stop,
        mean_delay,
        stderr_delay,
        occupancy,
        master_seed,
        per_replication: rows,
    }
}

/// Build the per-replication monitor for an algorithm. `threshold` is on
/// the native scale: `A` for the randomized detector, `a` for the baseline.
fn build_monitor(
    algorithm: &Algorithm,
    k: usize,
    q: usize,
    r: usize,
    models: &[StreamModel],
    prior: &PriorSpec,
    threshold: f64,
    rep_seed: u64,
) -> Result<MonitorKind> {
    match *algorithm {
        Algorithm::Tssrp { rule } => {
            let config = DetectorConfig {
                k,
                q,
                models: models.to_vec(),
                prior: prior.clone(),
                rule: StoppingRule::from_log_threshold(rule, r, threshold.ln())?,
                seed: rep_seed,
            };
            Ok(MonitorKind::Tssrp(TssrpDetector::new(&config)?))
        }
        Algorithm::Tras { delta } => {
            let config = TrasConfig {
                k,
                q,
                r,
                delta,
                threshold,
                models: models.to_vec(),
                seed: rep_seed,
            };
            Ok(MonitorKind::Tras(TrasDetector::new(&config)?))
        }
    }
}

/// Either monitor behind one type, for drivers that dispatch on a config.
pub enum MonitorKind {
    Tssrp(TssrpDetector),
    Tras(TrasDetector),
}

impl Monitor for MonitorKind {
    fn num_streams(&self) -> usize {
        match self {
            MonitorKind::Tssrp(m) => m.num_streams(),
            MonitorKind::Tras(m) => m.num_streams(),
        }
    }

    fn layout(&self) -> &crate::detector::SensorLayout {
        match self {
            MonitorKind::Tssrp(m) => m.layout(),
            MonitorKind::Tras(m) => m.layout(),
        }
    }

    fn step(&mut self, x: &[f64]) -> Result<crate::detector::StepOutcome> {
        match self {
            MonitorKind::Tssrp(m) => m.step(x),
            MonitorKind::Tras(m) => m.step(x),
        }
    }

    fn rounds(&self) -> u64 {
        match self {
            MonitorKind::Tssrp(m) => m.rounds(),
            MonitorKind::Tras(m) => m.rounds(),
        }
    }

    fn alarmed(&self) -> bool {
        match self {
            MonitorKind::Tssrp(m) => m.alarmed(),
            MonitorKind::Tras(m) => m.alarmed(),
        }
    }
}

impl Algorithm {
    /// The scale the procedure's statistic is compared with its threshold
    /// on: log space for the randomized detector, linear for the baseline.
    fn stat_scale(&self) -> StatScale {
        match self {
            Algorithm::Tssrp { .. } => StatScale::Log,
            Algorithm::Tras { .. } => StatScale::Linear,
        }
    }

    /// A raw threshold as the constant the statistic is compared against.
    fn stat_constant(&self, threshold: f64) -> f64 {
        match self.stat_scale() {
            StatScale::Log => threshold.ln(),
            StatScale::Linear => threshold,
        }
    }
}

/// Calibrate `algorithm`'s threshold against the panel scenario's own
/// in-control world (no stream ever changes; panels come from the truth
/// models' pre-change regime).
pub fn calibrate_for_scenario(
    scenario: &Scenario,
    algorithm: Algorithm,
    settings: &CalibrationSettings,
) -> Result<CalibrationReport> {
    scenario.validate()?;
    let null = scenario.in_control();
    calibrate_with(
        scenario.k,
        algorithm.stat_scale(),
        |rep_seed| {
            build_monitor(
                &algorithm,
                scenario.k,
                scenario.q,
                scenario.r,
                &scenario.detector_models,
                &scenario.prior,
                f64::INFINITY,
                rep_seed,
            )
        },
        |rep_seed| Ok(PanelSource::new(&null, rep_seed)),
        settings,
    )
}

/// Independent in-control ARL estimate for `algorithm` at a fixed threshold
/// under the panel scenario's null world. Use a master seed disjoint from
/// the calibration's for an honest validation.
pub fn validate_arl_for_scenario(
    scenario: &Scenario,
    algorithm: Algorithm,
    threshold: f64,
    replications: usize,
    horizon: u64,
    master_seed: u64,
) -> Result<ArlEstimate> {
    scenario.validate()?;
    let null = scenario.in_control();
    estimate_arl_with(
        |rep_seed| {
            build_monitor(
                &algorithm,
                scenario.k,
                scenario.q,
                scenario.r,
                &scenario.detector_models,
                &scenario.prior,
                f64::INFINITY,
                rep_seed,
            )
        },
        |rep_seed| Ok(PanelSource::new(&null, rep_seed)),
        algorithm.stat_constant(threshold),
        replications,
        horizon,
        master_seed,
    )
}

/// Calibrate `algorithm`'s threshold against the production line's
/// in-control process — the correlated network data itself, not an
/// independent surrogate, so the false-alarm budget refers to the world
/// the monitor actually watches.
pub fn calibrate_for_hot_forming(
    scenario: &HotFormingScenario,
    algorithm: Algorithm,
    settings: &CalibrationSettings,
) -> Result<CalibrationReport> {
    scenario.validate()?;
    let belief = scenario.belief_models()?;
    let null = scenario.in_control();
    calibrate_with(
        scenario.k(),
        algorithm.stat_scale(),
        |rep_seed| {
            build_monitor(
                &algorithm,
                scenario.k(),
                scenario.q,
                scenario.r,
                &belief,
                &scenario.prior,
                f64::INFINITY,
                rep_seed,
            )
        },
        |rep_seed| HotFormingSource::new(&null, rep_seed),
        settings,
    )
}

/// Independent in-control ARL estimate over the production line.
pub fn validate_arl_for_hot_forming(
    scenario: &HotFormingScenario,
    algorithm: Algorithm,
    threshold: f64,
    replications: usize,
    horizon: u64,
    master_seed: u64,
) -> Result<ArlEstimate> {
    scenario.validate()?;
    let belief = scenario.belief_models()?;
    let null = scenario.in_control();
    estimate_arl_with(
        |rep_seed| {
            build_monitor(
                &algorithm,
                scenario.k(),
                scenario.q,
                scenario.r,
                &belief,
                &scenario.prior,
                f64::INFINITY,
                rep_seed,
            )
        },
        |rep_seed| HotFormingSource::new(&null, rep_seed),
        algorithm.stat_constant(threshold),
        replications,
        horizon,
        master_seed,
    )
}

/// Replicate a monitored run of `algorithm` over the panel scenario at a
/// fixed, already calibrated threshold.
pub fn run_experiment(
    scenario: &Scenario,
    algorithm: Algorithm,
    threshold: f64,
    master_seed: u64,
) -> Result<ExperimentReport> {
    scenario.validate()?;
    let opts = RunOptions::to_horizon(scenario.horizon);
    let results = replicate(scenario.replications, master_seed, |_rep, rep_seed| {
        let mut monitor = build_monitor(
            &algorithm,
            scenario.k,
            scenario.q,
            scenario.r,
            &scenario.detector_models,
            &scenario.prior,
            threshold,
            rep_seed,
        )?;
        let mut source = PanelSource::new(scenario, rep_seed);
        run_monitor(&mut monitor, &mut source, &opts)
    })?;
    let prior_or_delta = match algorithm {
        Algorithm::Tras { delta } => format!("delta={delta}"),
        Algorithm::Tssrp { .. } => scenario.prior.describe(),
    };
    let n_changes = if scenario.nu.is_some() { scenario.changed.len() } else { 0 };
    Ok(aggregate(
        algorithm.label(),
        prior_or_delta,
        n_changes,
        scenario.k,
        scenario.q,
        scenario.r,
        scenario.gamma,
        threshold,
        scenario.nu,
        scenario.horizon,
        master_seed,
        results,
    ))
}

/// Replicate a monitored run over the production line.
pub fn run_hot_forming_experiment(
    scenario: &HotFormingScenario,
    algorithm: Algorithm,
    threshold: f64,
    master_seed: u64,
) -> Result<ExperimentReport> {
    scenario.validate()?;
    let belief = scenario.belief_models()?;
    let opts = RunOptions::to_horizon(scenario.horizon);
    let results = replicate(scenario.replications, master_seed, |_rep, rep_seed| {
        let mut monitor = build_monitor(
            &algorithm,
            scenario.k(),
            scenario.q,
            scenario.r,
            &belief,
            &scenario.prior,
            threshold,
            rep_seed,
        )?;
        let mut source = HotFormingSource::new(scenario, rep_seed)?;
        run_monitor(&mut monitor, &mut source, &opts)
    })?;
    let prior_or_delta = match algorithm {
        Algorithm::Tras { delta } => format!("delta={delta}"),
        Algorithm::Tssrp { .. } => scenario.prior.describe(),
    };
    let n_changes = if scenario.nu.is_some() {
        match &scenario.fixed_changed_roots {
            Some(fixed) => fixed.len(),
            None => scenario.change_count,
        }
    } else {
        0
    };
    Ok(aggregate(
        algorithm.label(),
        prior_or_delta,
        n_changes,
        scenario.k(),
        scenario.q,
        scenario.r,
        scenario.gamma,
        threshold,
        scenario.nu,
        scenario.horizon,
        master_seed,
        results,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::PriorPreset;

    fn gaussian(k: usize, shift: f64) -> Vec<StreamModel> {
        (0..k)
            .map(|_| StreamModel::gaussian_shift(0.0, shift, 1.0).unwrap())
            .collect()
    }

    fn panel_scenario(k: usize, q: usize, r: usize) -> Scenario {
        Scenario {
            k,
            q,
            r,
            gamma: 50.0,
            nu: Some(1),
            changed: vec![0],
            detector_models: gaussian(k, 1.5),
            truth_models: gaussian(k, 2.0),
            prior: PriorSpec::preset(PriorPreset::G2, k).unwrap(),
            replications: 40,
            horizon: 2000,
        }
    }

    #[test]
    fn panels_respect_the_change_time_and_changed_set() {
        let mut scenario = panel_scenario(2, 1, 1);
        scenario.nu = Some(3);
        scenario.changed = vec![1];
        let mut rng = rng_for(5, Purpose::Data);
        let mut sums = [[0.0f64; 2]; 2]; // [pre|post][stream]
        let n = 30_000;
        let mut out = [0.0f64; 2];
        for _ in 0..n {
            generate_panel(&scenario, 2, &mut rng, &mut out).unwrap();
            sums[0][0] += out[0];
            sums[0][1] += out[1];
            generate_panel(&scenario, 3, &mut rng, &mut out).unwrap();
            sums[1][0] += out[0];
            sums[1][1] += out[1];
        }
        let mean = |s: f64| s / n as f64;
        assert!(mean(sums[0][0]).abs() < 0.05, "stream 1 drifted pre-change");
        assert!(mean(sums[0][1]).abs() < 0.05, "stream 2 shifted before nu");
        assert!(mean(sums[1][0]).abs() < 0.05, "unchanged stream shifted");
        assert!(
            (mean(sums[1][1]) - 2.0).abs() < 0.05,
            "changed stream missing its shift"
        );
    }

    #[test]
    fn scenario_validation_reports_all_problems() {
        let mut scenario = panel_scenario(3, 1, 1);
        scenario.q = 7;
        scenario.changed = vec![9];
        scenario.nu = Some(0);
        let msg = scenario.validate().unwrap_err().to_string();
        assert!(msg.contains("q=7"), "{msg}");
        assert!(msg.contains("index 9"), "{msg}");
        assert!(msg.contains("1-based"), "{msg}");
    }

    #[test]
    fn default_line_standardizes_to_unit_marginals() {
        let net = BayesNetSpec::default_hot_forming();
        let sds = net.effective_noise_sd().unwrap();
        assert_eq!(sds.len(), 5);
        // Roots keep unit noise; children give up exactly the parent share.
        assert!((sds[0] - 1.0).abs() < 1e-12);
        assert!((sds[2] - (1.0f64 - 0.15 * 0.15).sqrt()).abs() < 1e-12);

        // Monte-Carlo check of the marginals and one pathwise correlation.
        let mut rng = rng_for(3, Purpose::Data);
        let n = 60_000;
        let mut sum = [0.0f64; 5];
        let mut sumsq = [0.0f64; 5];
        let mut cross_13 = 0.0f64;
        let mut out = [0.0f64; 5];
        for _ in 0..n {
            generate_hot_forming(&net, &[], 0.0, &mut rng, &mut out).unwrap();
            for i in 0..5 {
                sum[i] += out[i];
                sumsq[i] += out[i] * out[i];
            }
            cross_13 += out[0] * out[2];
        }
        for i in 0..5 {
            let mean = sum[i] / n as f64;
            let var = sumsq[i] / n as f64 - mean * mean;
            assert!(mean.abs() < 0.02, "node {i} mean {mean}");
            assert!((var - 1.0).abs() < 0.03, "node {i} variance {var}");
        }
        let corr = cross_13 / n as f64;
        assert!((corr - 0.15).abs() < 0.02, "x1-x3 correlation {corr}");
    }

    #[test]
    fn root_shifts_propagate_attenuated_to_descendants() {
        let net = BayesNetSpec::default_hot_forming();
        let mut rng = rng_for(4, Purpose::Data);
        let n = 60_000;
        let mut sum = [0.0f64; 5];
        let mut out = [0.0f64; 5];
        for _ in 0..n {
            generate_hot_forming(&net, &[0, 1], 2.0, &mut rng, &mut out).unwrap();
            for i in 0..5 {
                sum[i] += out[i];
            }
        }
        let mean = |i: usize| sum[i] / n as f64;
        assert!((mean(0) - 2.0).abs() < 0.03);
        assert!((mean(1) - 2.0).abs() < 0.03);
        assert!((mean(2) - 0.3).abs() < 0.03, "x3 inherits 0.15 * 2");
        assert!((mean(3) - 0.3).abs() < 0.03);
        assert!((mean(4) - 0.12).abs() < 0.03, "x5 inherits 0.2*(0.3 + 0.3)");
    }

    #[test]
    fn network_validation_catches_cycles_and_non_root_changes() {
        let mut net = BayesNetSpec::default_hot_forming();
        net.edges.push(NetEdge { parent: 4, child: 0, weight: 0.1 });
        assert!(net.validate().is_err(), "cycle undetected");

        let net = BayesNetSpec::default_hot_forming();
        let mut rng = rng_for(0, Purpose::Data);
        let mut out = [0.0f64; 5];
        let err = generate_hot_forming(&net, &[2], 1.0, &mut rng, &mut out).unwrap_err();
        assert!(err.to_string().contains("not a root"), "{err}");
    }

    #[test]
    fn standardization_rejects_overloaded_children() {
        let mut net = BayesNetSpec::default_hot_forming();
        net.edges[0].weight = 1.2; // parent variance alone exceeds 1
        assert!(net.validate().is_err());
    }

    #[test]
    fn experiment_report_is_internally_consistent() {
        let scenario = panel_scenario(3, 1, 1);
        let report =
            run_experiment(&scenario, Algorithm::Tssrp { rule: RuleKind::TopRSum }, 60.0, 7)
                .unwrap();
        assert_eq!(report.replications, 40);
        assert_eq!(report.per_replication.len(), 40);
        assert_eq!(report.alarms + report.censored, 40);
        // Pooled occupancies sum to the budget share exactly.
        let occ_sum: f64 = report.occupancy.iter().sum();
        assert!((occ_sum - 1.0).abs() < 1e-12, "q=1 of K=3: shares sum to 1");
        // nu = 1 means delay = stopping time - 1 for every row.
        for row in &report.per_replication {
            assert_eq!(row.delay, Some(row.stopping_time - 1));
        }
        assert!(report.mean_delay.unwrap() >= 0.0);
        assert_eq!(report.early_alarms, 0);
    }

    #[test]
    fn lower_thresholds_detect_no_later_pathwise() {
        // Shared seeds: each replication's trajectory is identical across
        // thresholds, so mean delay must be monotone in A — exactly.
        let mut scenario = panel_scenario(5, 5, 5);
        scenario.changed = vec![0, 1, 2, 3, 4];
        scenario.truth_models = gaussian(5, 1.5);
        scenario.replications = 60;
        let delays: Vec<f64> = [200.0, 50.0, 10.0]
            .iter()
            .map(|&a| {
                run_experiment(&scenario, Algorithm::Tssrp { rule: RuleKind::TopRSum }, a, 11)
                    .unwrap()
                    .mean_delay
                    .unwrap()
            })
            .collect();
        assert!(delays[0] >= delays[1] && delays[1] >= delays[2], "{delays:?}");
        assert!(delays[0] > delays[2], "thresholds too close to discriminate");
        assert!(delays.iter().all(|d| d.is_finite() && *d >= 0.0));
    }

    #[test]
    fn baseline_experiment_runs_and_alarms() {
        let scenario = panel_scenario(3, 1, 1);
        let report =
            run_experiment(&scenario, Algorithm::Tras { delta: 0.05 }, 8.0, 13).unwrap();
        assert!(report.alarms > 0);
        assert!(report.algorithm.contains("tras"));
        assert!(report.mean_delay.unwrap() > 0.0);
    }

    #[test]
    fn hot_forming_experiment_samples_roots_per_replication() {
        let mut scenario = HotFormingScenario::default_line().unwrap();
        scenario.change_count = 1;
        scenario.replications = 200;
        scenario.horizon = 500;
        // Count which root each replication shifted by inspecting sources.
        let mut chose_first = 0;
        let mut chose_second = 0;
        for rep in 0..200u64 {
            let rep_seed = replication_seed(31, rep);
            let source = HotFormingSource::new(&scenario, rep_seed).unwrap();
            match source.changed_roots().as_slice() {
                [0] => chose_first += 1,
                [1] => chose_second += 1,
                other => panic!("expected one root, got {other:?}"),
            }
        }
        assert!(chose_first > 60 && chose_second > 60, "lopsided root draw");

        let report = run_hot_forming_experiment(
            &scenario,
            Algorithm::Tssrp { rule: RuleKind::TopRSum },
            40.0,
            31,
        )
        .unwrap();
        assert_eq!(report.replications, 200);
        assert!(report.alarms > 0);
    }

    #[test]
    fn replicate_matches_sequential_driver_exactly() {
        let f = |rep: usize, seed: u64| -> Result<(usize, u64)> { Ok((rep, seed)) };
        let par = replicate(64, 5, f).unwrap();
        let seq = replicate_sequential(64, 5, f).unwrap();
        assert_eq!(par, seq);
        for (i, &(rep, _)) in par.iter().enumerate() {
            assert_eq!(rep, i, "results out of replication order");
        }
    }

    #[test]
    fn scenario_calibration_hits_the_budget_for_both_procedures() {
        // Calibrate against the scenario's own null world, then re-estimate
        // the ARL on fresh paths: the budget must be met (within Monte-Carlo
        // slack) and not wildly overshot.
        let mut scenario = panel_scenario(4, 2, 2);
        scenario.gamma = 20.0;
        for algorithm in [
            Algorithm::Tssrp { rule: RuleKind::TopRSum },
            Algorithm::Tras { delta: 0.1 },
        ] {
            let settings = CalibrationSettings::new(scenario.gamma)
                .with_seed(11)
                .with_replications(300)
                .with_horizon(2000);
            let report = calibrate_for_scenario(&scenario, algorithm, &settings).unwrap();
            let check = validate_arl_for_scenario(
                &scenario,
                algorithm,
                report.threshold,
                300,
                2000,
                99,
            )
            .unwrap();
            assert!(
                check.mean + 3.0 * check.std_error >= scenario.gamma,
                "{algorithm:?}: validated ARL {} (se {}) misses gamma {}",
                check.mean,
                check.std_error,
                scenario.gamma
            );
            assert!(
                check.mean < 3.0 * scenario.gamma,
                "{algorithm:?}: validated ARL {} overshoots gamma {} badly",
                check.mean,
                check.std_error
            );
        }
    }

    #[test]
    fn hot_forming_calibration_runs_against_the_correlated_null() {
        let mut scenario = HotFormingScenario::default_line().unwrap();
        scenario.gamma = 20.0;
        scenario.horizon = 2000;
        let settings = CalibrationSettings::new(scenario.gamma)
            .with_seed(13)
            .with_replications(200)
            .with_horizon(2000);
        let algorithm = Algorithm::Tssrp { rule: RuleKind::TopRSum };
        let report = calibrate_for_hot_forming(&scenario, algorithm, &settings).unwrap();
        assert!(report.threshold.is_finite() && report.threshold > 1.0);
        let check = validate_arl_for_hot_forming(
            &scenario,
            algorithm,
            report.threshold,
            200,
            2000,
            77,
        )
        .unwrap();
        assert!(
            check.mean + 3.0 * check.std_error >= scenario.gamma,
            "validated ARL {} (se {}) misses gamma {}",
            check.mean,
            check.std_error,
            scenario.gamma
        );
    }
}
