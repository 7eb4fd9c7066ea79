//! Result persistence: run manifests, JSON artifacts, delay tables, and
//! plot-ready CSV.
//!
//! Every artifact embeds the hash of the [`RunManifest`] that produced it.
//! The hash covers only the run's *identity* — config digest, master seed,
//! tool version, command line — and deliberately excludes timestamps and
//! output paths, so rerunning the same command on the same config yields
//! byte-identical artifacts.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::CalibrationReport;
use crate::detector::RunResult;
use crate::error::{Result, TssrpError};
use crate::sim::ExperimentReport;

/// Hex-encoded SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Provenance record written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    /// SHA-256 of the configuration file text.
    pub config_sha256: String,
    pub master_seed: u64,
    pub tool_version: String,
    /// The invocation, as the user typed it.
    pub command_line: String,
    /// Wall-clock provenance; not part of the identity hash.
    pub created_unix: u64,
    /// Artifacts this run wrote; not part of the identity hash.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(
        config_text: &str,
        master_seed: u64,
        tool_version: impl Into<String>,
        command_line: impl Into<String>,
    ) -> Self {
        let created_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        RunManifest {
            config_sha256: sha256_hex(config_text.as_bytes()),
            master_seed,
            tool_version: tool_version.into(),
            command_line: command_line.into(),
            created_unix,
            outputs: Vec::new(),
        }
    }

    /// Identity hash: equal exactly when config, seed, tool version, and
    /// command line are all equal. Timestamps and output lists do not
    /// participate, so a rerun reproduces the hash — and therefore must
    /// reproduce the artifacts byte for byte.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for field in [
            self.config_sha256.as_str(),
            &self.master_seed.to_string(),
            &self.tool_version,
            &self.command_line,
        ] {
            hasher.update(field.as_bytes());
            hasher.update([0u8]); // unambiguous field boundary
        }
        let mut out = String::with_capacity(64);
        for b in hasher.finalize() {
            let _ = write!(out, "{b:02x}");
        }
        out
    }
}

/// Calibration output with its provenance hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationArtifact {
    pub manifest_hash: String,
    pub calibration: CalibrationReport,
}

/// Experiment output with its provenance hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentArtifact {
    pub manifest_hash: String,
    pub experiment: ExperimentReport,
}

/// Serialize any artifact as pretty JSON with a trailing newline —
/// deterministic for equal inputs.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json_string(value)?)?;
    Ok(())
}

pub fn read_experiment_artifact(path: &Path) -> Result<ExperimentArtifact> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| TssrpError::data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| TssrpError::data(format!("{} is not an experiment artifact: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Delay tables
// ---------------------------------------------------------------------------

/// One aggregated cell: mean detection delay with its Monte-Carlo error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayCell {
    pub mean_delay: f64,
    pub stderr: f64,
    pub replications: usize,
}

/// One procedure's row across the change counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayRow {
    pub algorithm: String,
    pub prior_or_delta: String,
    /// One entry per table column; `None` where no experiment was supplied.
    pub cells: Vec<Option<DelayCell>>,
}

/// Mean-delay matrix keyed by procedure (rows) and number of changed
/// streams (columns), all at one false-alarm budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayTable {
    pub gamma: f64,
    pub change_counts: Vec<usize>,
    pub rows: Vec<DelayRow>,
}

/// Aggregate experiment reports into a delay table. Inputs must share one
/// gamma; duplicate (procedure, change-count) cells are refused.
pub fn aggregate_reports(reports: &[ExperimentReport]) -> Result<DelayTable> {
    if reports.is_empty() {
        return Err(TssrpError::data("no experiment reports to aggregate"));
    }
    let gamma = reports[0].gamma;
    for r in reports {
        if r.gamma != gamma {
            return Err(TssrpError::data(format!(
                "mixed false-alarm budgets: found gamma = {gamma} and gamma = {}; \
                 aggregate runs calibrated to one budget at a time",
                r.gamma
            )));
        }
    }
    let change_counts: Vec<usize> = reports
        .iter()
        .map(|r| r.n_changes)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in reports {
        let key = (r.algorithm.clone(), r.prior_or_delta.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let mut rows: Vec<DelayRow> = keys
        .into_iter()
        .map(|(algorithm, prior_or_delta)| DelayRow {
            algorithm,
            prior_or_delta,
            cells: vec![None; change_counts.len()],
        })
        .collect();
    for r in reports {
        let mean_delay = r.mean_delay.ok_or_else(|| {
            TssrpError::data(format!(
                "experiment {}({}) with {} changes has no delay (in-control run?)",
                r.algorithm, r.prior_or_delta, r.n_changes
            ))
        })?;
        let stderr = r.stderr_delay.unwrap_or(0.0);
        let row = rows
            .iter_mut()
            .find(|row| row.algorithm == r.algorithm && row.prior_or_delta == r.prior_or_delta)
            .expect("row was created above");
        let col = change_counts
            .iter()
            .position(|&c| c == r.n_changes)
            .expect("column was created above");
        if row.cells[col].is_some() {
            return Err(TssrpError::data(format!(
                "two reports cover {}({}) with {} changes; aggregate refuses to pick one",
                r.algorithm, r.prior_or_delta, r.n_changes
            )));
        }
        row.cells[col] = Some(DelayCell {
            mean_delay,
            stderr,
            replications: r.replications,
        });
    }
    Ok(DelayTable { gamma, change_counts, rows })
}

impl DelayTable {
    /// Aligned text rendering: one procedure per row, `mean(stderr)` cells.
    pub fn render_text(&self) -> String {
        let label = |row: &DelayRow| format!("{}({})", row.algorithm, row.prior_or_delta);
        let width = self
            .rows
            .iter()
            .map(|r| label(r).len())
            .max()
            .unwrap_or(0)
            .max("procedure".len());
        let mut out = String::new();
        let _ = write!(out, "{:width$}", "procedure");
        for c in &self.change_counts {
            let _ = write!(out, "  {c:>12}");
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{:width$}", label(row));
            for cell in &row.cells {
                match cell {
                    Some(c) => {
                        let _ = write!(out, "  {:>12}", format!("{:.2}({:.2})", c.mean_delay, c.stderr));
                    }
                    None => {
                        let _ = write!(out, "  {:>12}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    /// Plot-ready long-format CSV: one line per populated cell, ordered by
    /// (algorithm, prior_or_delta, n_changes).
    pub fn to_csv(&self, manifest_hash: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(hash) = manifest_hash {
            let _ = writeln!(out, "# manifest: {hash}");
        }
        let _ = writeln!(out, "algorithm,prior_or_delta,n_changes,mean_delay,stderr");
        for row in &self.rows {
            for (col, cell) in row.cells.iter().enumerate() {
                if let Some(c) = cell {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{}",
                        row.algorithm,
                        row.prior_or_delta,
                        self.change_counts[col],
                        c.mean_delay,
                        c.stderr
                    );
                }
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Per-run CSV writers
// ---------------------------------------------------------------------------

/// One line per replication of an experiment.
pub fn replications_csv(report: &ExperimentReport, manifest_hash: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(hash) = manifest_hash {
        let _ = writeln!(out, "# manifest: {hash}");
    }
    let _ = writeln!(out, "rep,stopping_time,alarmed,censored,delay");
    for row in &report.per_replication {
        let delay = row.delay.map(|d| d.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{delay}",
            row.rep, row.stopping_time, row.alarmed, row.censored
        );
    }
    out
}

/// Long-format layout trace: one line per (round, observed stream), with
/// 1-based stream indices. Requires the run to have recorded its trace.
pub fn layout_trace_csv(result: &RunResult, manifest_hash: Option<&str>) -> Result<String> {
    let trace = result.layout_trace.as_ref().ok_or_else(|| {
        TssrpError::input("the run did not record a layout trace; enable it in the run options")
    })?;
    let mut out = String::new();
    if let Some(hash) = manifest_hash {
        let _ = writeln!(out, "# manifest: {hash}");
    }
    let _ = writeln!(out, "t,stream");
    for (i, layout) in trace.iter().enumerate() {
        for &stream in layout {
            let _ = writeln!(out, "{},{}", i + 1, stream + 1);
        }
    }
    Ok(out)
}

/// Per-round global statistic trace.
pub fn statistic_trace_csv(result: &RunResult, manifest_hash: Option<&str>) -> Result<String> {
    let trace = result.statistic_trace.as_ref().ok_or_else(|| {
        TssrpError::input("the run did not record a statistic trace; enable it in the run options")
    })?;
    let mut out = String::new();
    if let Some(hash) = manifest_hash {
        let _ = writeln!(out, "# manifest: {hash}");
    }
    let _ = writeln!(out, "t,statistic");
    for (i, stat) in trace.iter().enumerate() {
        let _ = writeln!(out, "{},{stat}", i + 1);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::RepRow;

    fn fake_report(
        algorithm: &str,
        prior_or_delta: &str,
        n_changes: usize,
        gamma: f64,
        mean_delay: f64,
    ) -> ExperimentReport {
        ExperimentReport {
            algorithm: algorithm.into(),
            prior_or_delta: prior_or_delta.into(),
            n_changes,
            k: 100,
            q: 10,
            r: 10,
            gamma,
            threshold: 3000.0,
            nu: Some(1),
            replications: 4,
            horizon: 100_000,
            alarms: 4,
            censored: 0,
            early_alarms: 0,
            mean_stopping_time: mean_delay + 1.0,
            stderr_stopping_time: 0.1,
            mean_delay: Some(mean_delay),
            stderr_delay: Some(0.1),
            occupancy: vec![0.1; 100],
            master_seed: 0,
            per_replication: vec![
                RepRow { rep: 0, stopping_time: 9, alarmed: true, censored: false, delay: Some(8) },
                RepRow { rep: 1, stopping_time: 7, alarmed: true, censored: false, delay: Some(6) },
            ],
        }
    }

    #[test]
    fn sha256_matches_the_published_test_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_hash_ignores_timestamps_and_outputs() {
        let mut a = RunManifest::new("config text", 7, "0.1.0", "tssrp simulate -c x.toml");
        let mut b = a.clone();
        b.created_unix = a.created_unix + 3600;
        b.outputs.push("experiment.json".into());
        assert_eq!(a.hash(), b.hash(), "identity must not depend on provenance");

        a.command_line = "tssrp simulate -c y.toml".into();
        assert_ne!(a.hash(), b.hash(), "command line is part of the identity");
    }

    #[test]
    fn aggregate_builds_the_matrix_shape() {
        let reports = vec![
            fake_report("tssrp:top_r_sum", "g0", 3, 1000.0, 7.67),
            fake_report("tssrp:top_r_sum", "g0", 10, 1000.0, 5.81),
            fake_report("tras:delta=0.05", "delta=0.05", 3, 1000.0, 22.84),
            fake_report("tras:delta=0.05", "delta=0.05", 10, 1000.0, 13.52),
        ];
        let table = aggregate_reports(&reports).unwrap();
        assert_eq!(table.change_counts, vec![3, 10]);
        assert_eq!(table.rows.len(), 2);
        assert_eq!(table.rows[0].cells[1].unwrap().mean_delay, 5.81);
        let text = table.render_text();
        assert!(text.contains("5.81(0.10)"), "{text}");
        assert!(text.contains("tras:delta=0.05"), "{text}");
    }

    #[test]
    fn aggregate_refuses_mixed_budgets_and_duplicates() {
        let mixed = vec![
            fake_report("tssrp:top_r_sum", "g0", 3, 1000.0, 7.67),
            fake_report("tssrp:top_r_sum", "g0", 10, 100.0, 5.81),
        ];
        let err = aggregate_reports(&mixed).unwrap_err().to_string();
        assert!(err.contains("1000") && err.contains("100"), "{err}");

        let duplicated = vec![
            fake_report("tssrp:top_r_sum", "g0", 3, 1000.0, 7.67),
            fake_report("tssrp:top_r_sum", "g0", 3, 1000.0, 7.70),
        ];
        let err = aggregate_reports(&duplicated).unwrap_err().to_string();
        assert!(err.contains("two reports"), "{err}");
    }

    #[test]
    fn csv_output_is_deterministic_and_complete() {
        let table = aggregate_reports(&[
            fake_report("tssrp:top_r_sum", "g3", 10, 1000.0, 8.04),
            fake_report("tssrp:top_r_sum", "g3", 3, 1000.0, 11.79),
        ])
        .unwrap();
        let csv = table.to_csv(Some("deadbeef"));
        let expected = "# manifest: deadbeef\n\
                        algorithm,prior_or_delta,n_changes,mean_delay,stderr\n\
                        tssrp:top_r_sum,g3,3,11.79,0.1\n\
                        tssrp:top_r_sum,g3,10,8.04,0.1\n";
        assert_eq!(csv, expected);
    }

    #[test]
    fn replication_rows_serialize_one_line_each() {
        let report = fake_report("tssrp:top_r_sum", "g2", 5, 500.0, 9.0);
        let csv = replications_csv(&report, None);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "rep,stopping_time,alarmed,censored,delay");
        assert_eq!(lines[1], "0,9,true,false,8");
    }

    #[test]
    fn trace_writers_require_recorded_traces() {
        let result = RunResult {
            stopping_time: 2,
            alarmed: true,
            censored: false,
            rounds: 2,
            final_statistic: 5.0,
            observation_counts: vec![2, 0],
            layout_trace: Some(vec![vec![0], vec![1]]),
            statistic_trace: Some(vec![1.0, 5.0]),
        };
        let layout = layout_trace_csv(&result, None).unwrap();
        assert_eq!(layout, "t,stream\n1,1\n2,2\n");
        let stats = statistic_trace_csv(&result, None).unwrap();
        assert_eq!(stats, "t,statistic\n1,1\n2,5\n");

        let bare = RunResult { layout_trace: None, statistic_trace: None, ..result };
        assert!(layout_trace_csv(&bare, None).is_err());
        assert!(statistic_trace_csv(&bare, None).is_err());
    }

    #[test]
    fn artifacts_round_trip_through_json() {
        let artifact = ExperimentArtifact {
            manifest_hash: "abc123".into(),
            experiment: fake_report("tssrp:top_r_sum", "g0", 1, 1000.0, 12.15),
        };
        let text = to_json_string(&artifact).unwrap();
        assert!(text.ends_with('\n'));
        let back: ExperimentArtifact = serde_json::from_str(&text).unwrap();
        assert_eq!(artifact, back);
    }
}
