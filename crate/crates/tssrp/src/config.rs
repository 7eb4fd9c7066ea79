//! TOML run configuration: one file describes the monitored panel, the
//! procedure, and (optionally) the scenario to simulate and the calibration
//! target.
//!
//! Layout, by section:
//!
//! ```toml
//! [scenario]
//! streams = 100           # K
//! budget = 10             # q, observations per round
//! kind = "panel"          # or "hot_forming" (default "panel")
//! nu = 1                  # change time, 1-based; omit to stay in control
//! changed = [1, 2, 3]     # 1-based stream indices that shift (panel)
//! replications = 1000
//! seed = 42               # master seed (default 0)
//!
//! [models]
//! family = "gaussian_shift"
//! pre_mean = 0.0
//! post_mean = 1.5
//! sd = 1.0
//! # optional [models.truth] sub-table: the data-generating law, when it
//! # differs from the belief above (same shape, no nested truth)
//!
//! [prior]
//! preset = "g2"           # or uniform = [lo, hi], or point_mass = v
//!
//! [rule]
//! kind = "top_r_sum"      # or *_randomized, top_r_log_sum*, or "tras"
//! r = 10                  # default: the budget q
//! threshold = 3600.0      # raw-scale threshold, when already calibrated
//! # delta = 0.05          # required for (and exclusive to) kind = "tras"
//!
//! [calibration]
//! gamma = 1000.0          # in-control ARL target
//! replications = 1000
//! ```
//!
//! Stream and node indices are 1-based in files and reports; the library
//! uses 0-based indices internally. Validation collects *all* problems into
//! one error rather than stopping at the first, and unknown keys are
//! rejected with the parser's line/column diagnostics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::TrasConfig;
use crate::calibration::CalibrationSettings;
use crate::detector::{DetectorConfig, RuleKind, StoppingRule};
use crate::error::{Result, TssrpError};
use crate::models::StreamModel;
use crate::priors::{PriorPreset, PriorSpec, StreamPrior};
use crate::sim::{Algorithm, BayesNetSpec, HotFormingScenario, Scenario};

/// A parsed, validated configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub scenario: ScenarioSection,
    pub models: ModelsSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior: Option<PriorSection>,
    pub rule: RuleSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationSection>,
}

/// What world the detectors run in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Independent streams; a chosen subset shifts at the change time.
    #[default]
    Panel,
    /// The five-variable production line: root variables shift, descendants
    /// inherit attenuated drift through the network.
    HotForming,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    /// Number of monitored streams (K).
    pub streams: usize,
    /// Observations allowed per round (q).
    pub budget: usize,
    #[serde(default, skip_serializing_if = "is_default_kind")]
    pub kind: ScenarioKind,
    /// Change time, 1-based; omit to stay in control forever.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu: Option<u64>,
    /// 1-based indices of the streams that shift (panel scenarios).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub changed: Option<Vec<usize>>,
    /// How many production-line roots shift, drawn per replication.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub change_count: Option<usize>,
    /// 1-based root nodes to pin as shifted (overrides `change_count`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub changed_roots: Option<Vec<usize>>,
    /// True mean shift added to each changed root (production line).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shift: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replications: Option<usize>,
    /// Per-replication round cap; default 100x the calibration target.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u64>,
    /// False-alarm budget; may also live in `[calibration]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Master seed all randomness derives from (default 0).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn is_default_kind(kind: &ScenarioKind) -> bool {
    *kind == ScenarioKind::Panel
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    GaussianShift,
    StudentTShift,
}

/// Homogeneous stream model: every stream shares one pre/post pair.
/// Gaussian shifts use `pre_mean`/`post_mean`/`sd`; location-shifted
/// t distributions use `df`/`pre_location`/`post_location`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsSection {
    pub family: FamilyKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pre_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub post_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pre_location: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub post_location: Option<f64>,
    /// The data-generating law, when it differs from the belief above.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<Box<ModelsSection>>,
}

impl ModelsSection {
    fn check(&self, section: &str, problems: &mut Vec<String>) {
        match self.family {
            FamilyKind::GaussianShift => {
                for (name, v) in [
                    ("pre_mean", self.pre_mean),
                    ("post_mean", self.post_mean),
                    ("sd", self.sd),
                ] {
                    if v.is_none() {
                        problems.push(format!("[{section}] gaussian_shift requires {name}"));
                    }
                }
                for (name, v) in [
                    ("df", self.df),
                    ("pre_location", self.pre_location),
                    ("post_location", self.post_location),
                ] {
                    if v.is_some() {
                        problems.push(format!(
                            "[{section}] {name} does not apply to gaussian_shift"
                        ));
                    }
                }
            }
            FamilyKind::StudentTShift => {
                for (name, v) in [
                    ("df", self.df),
                    ("pre_location", self.pre_location),
                    ("post_location", self.post_location),
                ] {
                    if v.is_none() {
                        problems.push(format!("[{section}] student_t_shift requires {name}"));
                    }
                }
                for (name, v) in [
                    ("pre_mean", self.pre_mean),
                    ("post_mean", self.post_mean),
                    ("sd", self.sd),
                ] {
                    if v.is_some() {
                        problems.push(format!(
                            "[{section}] {name} does not apply to student_t_shift"
                        ));
                    }
                }
            }
        }
        if let Some(truth) = &self.truth {
            if truth.truth.is_some() {
                problems.push(format!("[{section}.truth] must not nest another truth"));
            }
            truth.check(&format!("{section}.truth"), problems);
        }
    }

    /// One model per stream; assumes `check` passed.
    fn to_models(&self, k: usize) -> Result<Vec<StreamModel>> {
        let one = match self.family {
            FamilyKind::GaussianShift => StreamModel::gaussian_shift(
                self.pre_mean
                    .ok_or_else(|| TssrpError::config("[models] gaussian_shift requires pre_mean"))?,
                self.post_mean
                    .ok_or_else(|| TssrpError::config("[models] gaussian_shift requires post_mean"))?,
                self.sd
                    .ok_or_else(|| TssrpError::config("[models] gaussian_shift requires sd"))?,
            )?,
            FamilyKind::StudentTShift => StreamModel::student_t_shift(
                self.df
                    .ok_or_else(|| TssrpError::config("[models] student_t_shift requires df"))?,
                self.pre_location.ok_or_else(|| {
                    TssrpError::config("[models] student_t_shift requires pre_location")
                })?,
                self.post_location.ok_or_else(|| {
                    TssrpError::config("[models] student_t_shift requires post_location")
                })?,
            )?,
        };
        Ok(vec![one; k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorPresetChoice {
    G0,
    G1,
    G2,
    G3,
}

impl From<PriorPresetChoice> for PriorPreset {
    fn from(choice: PriorPresetChoice) -> Self {
        match choice {
            PriorPresetChoice::G0 => PriorPreset::G0,
            PriorPresetChoice::G1 => PriorPreset::G1,
            PriorPresetChoice::G2 => PriorPreset::G2,
            PriorPresetChoice::G3 => PriorPreset::G3,
        }
    }
}

/// Exactly one of `preset`, `uniform`, or `point_mass`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<PriorPresetChoice>,
    /// Homogeneous uniform weight prior `[lo, hi]` on every stream.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uniform: Option<[f64; 2]>,
    /// Homogeneous point mass on every stream.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub point_mass: Option<f64>,
}

impl PriorSection {
    fn check(&self, k: usize, problems: &mut Vec<String>) {
        let given =
            self.preset.is_some() as u8 + self.uniform.is_some() as u8 + self.point_mass.is_some() as u8;
        if given != 1 {
            problems.push(format!(
                "[prior] exactly one of preset, uniform, point_mass must be set (found {given})"
            ));
            return;
        }
        match self.preset {
            Some(PriorPresetChoice::G0) if k < 10 => problems.push(format!(
                "[prior] preset g0 weights the first ten streams; streams = {k} is too few"
            )),
            Some(PriorPresetChoice::G1) if k < 5 => problems.push(format!(
                "[prior] preset g1 weights the first five streams; streams = {k} is too few"
            )),
            _ => {}
        }
        if let Some([lo, hi]) = self.uniform {
            if !(lo.is_finite() && hi.is_finite() && (0.0..hi).contains(&lo)) {
                problems.push(format!(
                    "[prior] uniform bounds must satisfy 0 <= lo < hi, got [{lo}, {hi}]"
                ));
            }
        }
        if let Some(v) = self.point_mass {
            if !(v.is_finite() && v >= 0.0) {
                problems.push(format!("[prior] point_mass must be a finite weight >= 0, got {v}"));
            }
        }
    }

    fn to_prior(&self, k: usize) -> Result<PriorSpec> {
        if let Some(preset) = self.preset {
            return PriorSpec::preset(preset.into(), k);
        }
        if let Some([lo, hi]) = self.uniform {
            return PriorSpec::homogeneous(k, StreamPrior::Uniform { lo, hi });
        }
        if let Some(value) = self.point_mass {
            return PriorSpec::homogeneous(k, StreamPrior::PointMass { value });
        }
        Err(TssrpError::config(
            "[prior] exactly one of preset, uniform, point_mass must be set",
        ))
    }
}

/// Which global statistic stops the run; `tras` selects the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleChoice {
    TopRSum,
    TopRSumRandomized,
    TopRLogSum,
    TopRLogSumRandomized,
    Tras,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSection {
    pub kind: RuleChoice,
    /// Stopping depth; defaults to the observation budget.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    /// Raw-scale stopping threshold, when already calibrated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Compensation increment; required for (and exclusive to) `tras`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    /// Target in-control ARL.
    pub gamma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replications: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u64>,
    /// Acceptable relative overshoot of the fitted ARL (default 0.02).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rel_tol: Option<f64>,
    /// Relative safety margin added to the search target (default 0.025).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    /// Seed for the calibration ensemble (default: the scenario seed).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ConfigFile {
    /// Parse and fully validate a configuration document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let parsed: ConfigFile = toml::from_str(text)
            .map_err(|e| TssrpError::config(format!("config parse failed: {e}")))?;
        parsed.validate()?;
        Ok(parsed)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            TssrpError::config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    /// Serialize back to TOML. `parse(emit(c))` reproduces `c` exactly.
    pub fn emit(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| TssrpError::config(format!("config serialization failed: {e}")))
    }

    /// Check every invariant and report all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let s = &self.scenario;
        let k = s.streams;
        if k == 0 {
            problems.push("[scenario] streams must be at least 1".into());
        }
        if s.budget == 0 || s.budget > k {
            problems.push(format!(
                "[scenario] budget = {} must satisfy 1 <= budget <= streams = {k}",
                s.budget
            ));
        }
        if let Some(r) = self.rule.r {
            if r == 0 || r > k {
                problems.push(format!(
                    "[rule] r = {r} must satisfy 1 <= r <= streams = {k}"
                ));
            }
        }
        if s.nu == Some(0) {
            problems.push("[scenario] nu is 1-based; 0 is not a round".into());
        }
        if let Some(reps) = s.replications {
            if reps == 0 {
                problems.push("[scenario] replications must be at least 1".into());
            }
        }
        if s.horizon == Some(0) {
            problems.push("[scenario] horizon must be at least 1".into());
        }
        if let Some(g) = s.gamma {
            if !(g.is_finite() && g >= 1.0) {
                problems.push(format!("[scenario] gamma must be finite and >= 1, got {g}"));
            }
        }
        match s.kind {
            ScenarioKind::Panel => {
                if let Some(changed) = &s.changed {
                    let mut seen = std::collections::BTreeSet::new();
                    for &c in changed {
                        if c == 0 {
                            problems.push(
                                "[scenario] changed streams are 1-based; 0 is not a stream".into(),
                            );
                        } else if c > k {
                            problems.push(format!(
                                "[scenario] changed stream {c} exceeds streams = {k}"
                            ));
                        } else if !seen.insert(c) {
                            problems.push(format!("[scenario] changed stream {c} listed twice"));
                        }
                    }
                }
                for (name, absent) in [
                    ("change_count", s.change_count.is_none()),
                    ("changed_roots", s.changed_roots.is_none()),
                    ("shift", s.shift.is_none()),
                ] {
                    if !absent {
                        problems.push(format!(
                            "[scenario] {name} only applies to kind = \"hot_forming\""
                        ));
                    }
                }
            }
            ScenarioKind::HotForming => {
                let net = BayesNetSpec::default_hot_forming();
                if k != net.len() {
                    problems.push(format!(
                        "[scenario] the production line has {} nodes; streams = {k} does not match",
                        net.len()
                    ));
                }
                if s.changed.is_some() {
                    problems.push(
                        "[scenario] changed only applies to kind = \"panel\"; use changed_roots"
                            .into(),
                    );
                }
                let roots = net.roots();
                if let Some(fixed) = &s.changed_roots {
                    for &c in fixed {
                        if c == 0 {
                            problems
                                .push("[scenario] changed_roots are 1-based; 0 is not a node".into());
                        } else if !roots.contains(&(c - 1)) {
                            problems.push(format!(
                                "[scenario] node {c} is not a root of the production line"
                            ));
                        }
                    }
                } else {
                    match s.change_count {
                        None => problems.push(
                            "[scenario] hot_forming needs change_count or changed_roots".into(),
                        ),
                        Some(n) if n == 0 || n > roots.len() => problems.push(format!(
                            "[scenario] change_count = {n} must lie in 1..={} (the number of roots)",
                            roots.len()
                        )),
                        Some(_) => {}
                    }
                }
                if s.nu.is_some() {
                    match s.shift {
                        None => problems
                            .push("[scenario] hot_forming with a change time needs shift".into()),
                        Some(v) if !v.is_finite() => {
                            problems.push(format!("[scenario] shift must be finite, got {v}"))
                        }
                        Some(_) => {}
                    }
                }
                if self.models.family != FamilyKind::GaussianShift
                    || self.models.pre_mean != Some(0.0)
                    || self.models.sd != Some(1.0)
                {
                    problems.push(
                        "[models] the production line is standard normal in control; \
                         hot_forming requires gaussian_shift with pre_mean = 0 and sd = 1"
                            .into(),
                    );
                }
            }
        }
        self.models.check("models", &mut problems);
        match (&self.prior, self.rule.kind) {
            (None, RuleChoice::Tras) => {}
            (Some(_), RuleChoice::Tras) => {
                problems.push("[prior] does not apply to the tras baseline".into())
            }
            (None, _) => problems.push("[prior] section is required for tssrp rules".into()),
            (Some(p), _) => p.check(k, &mut problems),
        }
        match (self.rule.kind, self.rule.delta) {
            (RuleChoice::Tras, None) => {
                problems.push("[rule] kind = \"tras\" requires delta".into())
            }
            (RuleChoice::Tras, Some(d)) if !(d.is_finite() && d >= 0.0) => {
                problems.push(format!("[rule] delta must be finite and >= 0, got {d}"))
            }
            (RuleChoice::Tras, Some(_)) => {}
            (_, Some(_)) => problems.push("[rule] delta only applies to kind = \"tras\"".into()),
            (_, None) => {}
        }
        if let Some(a) = self.rule.threshold {
            if !(a >= 0.0) {
                problems.push(format!("[rule] threshold must be >= 0, got {a}"));
            }
        }
        if let Some(cal) = &self.calibration {
            if !(cal.gamma.is_finite() && cal.gamma >= 1.0) {
                problems.push(format!(
                    "[calibration] gamma must be finite and >= 1, got {}",
                    cal.gamma
                ));
            }
            if cal.replications == Some(0) {
                problems.push("[calibration] replications must be at least 1".into());
            }
            if let (Some(sg), g) = (s.gamma, cal.gamma) {
                if sg != g {
                    problems.push(format!(
                        "[scenario] gamma = {sg} contradicts [calibration] gamma = {g}"
                    ));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(TssrpError::config(problems.join("; ")))
        }
    }

    pub fn k(&self) -> usize {
        self.scenario.streams
    }

    pub fn q(&self) -> usize {
        self.scenario.budget
    }

    /// Stopping depth; defaults to the observation budget.
    pub fn r(&self) -> usize {
        self.rule.r.unwrap_or(self.scenario.budget)
    }

    pub fn master_seed(&self) -> u64 {
        self.scenario.seed.unwrap_or(0)
    }

    /// The false-alarm budget, from whichever section declares it.
    pub fn gamma(&self) -> Option<f64> {
        self.scenario
            .gamma
            .or(self.calibration.as_ref().map(|c| c.gamma))
    }

    pub fn threshold(&self) -> Option<f64> {
        self.rule.threshold
    }

    pub fn replications(&self) -> usize {
        self.scenario.replications.unwrap_or(1000)
    }

    /// Simulation horizon: explicit, or 100x the false-alarm budget.
    pub fn horizon(&self) -> Result<u64> {
        if let Some(h) = self.scenario.horizon {
            return Ok(h);
        }
        match self.gamma() {
            Some(g) => Ok((100.0 * g).ceil() as u64),
            None => Err(TssrpError::config(
                "[scenario] needs horizon, or gamma to derive the default 100x horizon from",
            )),
        }
    }

    /// The procedure this file selects.
    pub fn algorithm(&self) -> Result<Algorithm> {
        match self.rule.kind {
            RuleChoice::Tras => {
                let delta = self.rule.delta.ok_or_else(|| {
                    TssrpError::config("[rule] kind = \"tras\" requires delta")
                })?;
                Ok(Algorithm::Tras { delta })
            }
            RuleChoice::TopRSum => Ok(Algorithm::Tssrp { rule: RuleKind::TopRSum }),
            RuleChoice::TopRSumRandomized => {
                Ok(Algorithm::Tssrp { rule: RuleKind::TopRSumRandomized })
            }
            RuleChoice::TopRLogSum => Ok(Algorithm::Tssrp { rule: RuleKind::TopRLogSum }),
            RuleChoice::TopRLogSumRandomized => {
                Ok(Algorithm::Tssrp { rule: RuleKind::TopRLogSumRandomized })
            }
        }
    }

    /// Per-stream models the detectors monitor with.
    pub fn belief_models(&self) -> Result<Vec<StreamModel>> {
        self.models.to_models(self.k())
    }

    /// Per-stream data-generating models (the belief, unless overridden).
    pub fn truth_models(&self) -> Result<Vec<StreamModel>> {
        match &self.models.truth {
            Some(truth) => truth.to_models(self.k()),
            None => self.belief_models(),
        }
    }

    pub fn prior_spec(&self) -> Result<PriorSpec> {
        match &self.prior {
            Some(p) => p.to_prior(self.k()),
            None => Err(TssrpError::config("[prior] section is required for tssrp rules")),
        }
    }

    /// Build the randomized detector's configuration at a raw threshold `A`.
    pub fn detector_config(&self, threshold_a: f64) -> Result<DetectorConfig> {
        let kind = match self.algorithm()? {
            Algorithm::Tssrp { rule } => rule,
            Algorithm::Tras { .. } => {
                return Err(TssrpError::config(
                    "[rule] kind = \"tras\" selects the baseline; use tras_config",
                ))
            }
        };
        Ok(DetectorConfig {
            k: self.k(),
            q: self.q(),
            models: self.belief_models()?,
            prior: self.prior_spec()?,
            rule: StoppingRule::new(kind, self.r(), threshold_a)?,
            seed: self.master_seed(),
        })
    }

    /// Build the baseline's configuration at a raw threshold `a`.
    pub fn tras_config(&self, threshold: f64) -> Result<TrasConfig> {
        let delta = match self.algorithm()? {
            Algorithm::Tras { delta } => delta,
            Algorithm::Tssrp { .. } => {
                return Err(TssrpError::config(
                    "[rule] selects the randomized detector; use detector_config",
                ))
            }
        };
        Ok(TrasConfig {
            k: self.k(),
            q: self.q(),
            r: self.r(),
            delta,
            threshold,
            models: self.belief_models()?,
            seed: self.master_seed(),
        })
    }

    /// The panel scenario this file describes.
    pub fn to_panel_scenario(&self) -> Result<Scenario> {
        if self.scenario.kind != ScenarioKind::Panel {
            return Err(TssrpError::config(
                "[scenario] kind = \"hot_forming\"; use to_hot_forming_scenario",
            ));
        }
        let gamma = self.gamma().ok_or_else(|| {
            TssrpError::config("[scenario] or [calibration] must declare gamma to simulate")
        })?;
        let changed = self
            .scenario
            .changed
            .clone()
            .unwrap_or_default()
            .iter()
            .map(|&c| c - 1)
            .collect();
        let prior = match self.rule.kind {
            // The baseline carries no prior; a placeholder keeps the
            // scenario self-contained and is never drawn from.
            RuleChoice::Tras => PriorSpec::homogeneous(self.k(), StreamPrior::PointMass { value: 0.0 })?,
            _ => self.prior_spec()?,
        };
        let scenario = Scenario {
            k: self.k(),
            q: self.q(),
            r: self.r(),
            gamma,
            nu: self.scenario.nu,
            changed,
            detector_models: self.belief_models()?,
            truth_models: self.truth_models()?,
            prior,
            replications: self.replications(),
            horizon: self.horizon()?,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    /// The production-line scenario this file describes.
    pub fn to_hot_forming_scenario(&self) -> Result<HotFormingScenario> {
        if self.scenario.kind != ScenarioKind::HotForming {
            return Err(TssrpError::config(
                "[scenario] kind = \"panel\"; use to_panel_scenario",
            ));
        }
        let gamma = self.gamma().ok_or_else(|| {
            TssrpError::config("[scenario] or [calibration] must declare gamma to simulate")
        })?;
        let net = BayesNetSpec::default_hot_forming();
        let belief_shift = match (self.models.post_mean, self.models.pre_mean) {
            (Some(post), Some(pre)) => post - pre,
            _ => {
                return Err(TssrpError::config(
                    "[models] hot_forming requires gaussian_shift with explicit means",
                ))
            }
        };
        let fixed = self
            .scenario
            .changed_roots
            .as_ref()
            .map(|v| v.iter().map(|&c| c - 1).collect::<Vec<_>>());
        let change_count = match (&fixed, self.scenario.change_count) {
            (Some(f), _) => f.len(),
            (None, Some(n)) => n,
            (None, None) => {
                return Err(TssrpError::config(
                    "[scenario] hot_forming needs change_count or changed_roots",
                ))
            }
        };
        let prior = match self.rule.kind {
            RuleChoice::Tras => PriorSpec::homogeneous(net.len(), StreamPrior::PointMass { value: 0.0 })?,
            _ => self.prior_spec()?,
        };
        let scenario = HotFormingScenario {
            net,
            q: self.q(),
            r: self.r(),
            gamma,
            nu: self.scenario.nu,
            change_count,
            fixed_changed_roots: fixed,
            shift: self.scenario.shift.unwrap_or(0.0),
            belief_shift,
            prior,
            replications: self.replications(),
            horizon: self.horizon()?,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    /// Calibration settings; requires a `[calibration]` section or a
    /// scenario-level gamma.
    pub fn calibration_settings(&self) -> Result<CalibrationSettings> {
        let gamma = self.gamma().ok_or_else(|| {
            TssrpError::config("[calibration] section (or scenario gamma) is required to calibrate")
        })?;
        let mut settings = CalibrationSettings::new(gamma);
        if let Some(cal) = &self.calibration {
            if let Some(reps) = cal.replications {
                settings = settings.with_replications(reps);
            }
            if let Some(h) = cal.horizon {
                settings = settings.with_horizon(h);
            }
            if let Some(tol) = cal.rel_tol {
                settings.rel_tol = tol;
            }
            if let Some(m) = cal.margin {
                settings.target_margin = m;
            }
            settings = settings.with_seed(cal.seed.unwrap_or(self.master_seed()));
        } else {
            settings = settings.with_seed(self.master_seed());
        }
        settings.validate()?;
        Ok(settings)
    }
}
