//! Live monitoring over a pull-based record protocol.
//!
//! The tool drives sampling, not the data supplier: before each round it
//! publishes a [`LayoutRequest`] naming the streams it wants (1-based), the
//! supplier answers with a [`LiveRecord`] carrying at least those values,
//! and the detector advances one round. Extra values in a record are
//! ignored without ever reaching the detector — pre-recorded files that
//! carry every stream replay fine, and the observation constraint stays
//! honest either way.
//!
//! [`LiveMonitor`] is the in-process engine (drive it directly to build an
//! adaptive supplier); [`monitor_stream`] wraps it around newline-delimited
//! JSON input, writing each layout request to a side channel and the final
//! alarm report, if any, to the output.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::baselines::{TrasConfig, TrasDetector};
use crate::detector::{DetectorConfig, Monitor, TssrpDetector};
use crate::error::{Result, TssrpError};
use crate::sim::MonitorKind;

/// The streams the detector wants for round `t`, 1-based and sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutRequest {
    pub t: u64,
    pub observe: Vec<usize>,
}

/// One supplier record: the round index and values keyed by 1-based stream
/// index (JSON object keys, hence strings).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveRecord {
    pub t: u64,
    pub values: BTreeMap<String, f64>,
}

/// Evidence carried by one of the alarm's top streams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamEvidence {
    /// 1-based stream index.
    pub stream: usize,
    /// The stream's local statistic on its native scale (the evidence
    /// statistic for the randomized detector, the compensation statistic
    /// for the baseline).
    pub evidence: f64,
    /// Log-scale evidence, which stays finite when the raw value
    /// overflows; absent for the linear-scale baseline.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_evidence: Option<f64>,
}

/// Published when the global statistic crosses the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmReport {
    pub alarm_time: u64,
    /// Global statistic at the alarm, on the rule's comparison scale.
    pub statistic: f64,
    /// The threshold on that same scale.
    pub threshold: f64,
    /// The rule's top streams by local evidence, strongest first.
    pub top_streams: Vec<StreamEvidence>,
}

/// In-process protocol engine: alternate [`request`](Self::request) and
/// [`ingest`](Self::ingest).
pub struct LiveMonitor {
    monitor: MonitorKind,
    expected_t: u64,
    finished: Option<AlarmReport>,
}

impl LiveMonitor {
    pub fn new_detector(config: &DetectorConfig) -> Result<Self> {
        Ok(LiveMonitor {
            monitor: MonitorKind::Tssrp(TssrpDetector::new(config)?),
            expected_t: 1,
            finished: None,
        })
    }

    pub fn new_baseline(config: &TrasConfig) -> Result<Self> {
        Ok(LiveMonitor {
            monitor: MonitorKind::Tras(TrasDetector::new(config)?),
            expected_t: 1,
            finished: None,
        })
    }

    pub fn num_streams(&self) -> usize {
        self.monitor.num_streams()
    }

    pub fn rounds(&self) -> u64 {
        self.monitor.rounds()
    }

    pub fn alarmed(&self) -> bool {
        self.finished.is_some()
    }

    /// The layout wanted for the next round.
    pub fn request(&self) -> LayoutRequest {
        LayoutRequest {
            t: self.expected_t,
            observe: self.monitor.layout().observed().iter().map(|&k| k + 1).collect(),
        }
    }

    /// Consume the record for the requested round. Returns the alarm
    /// report when this round crosses the threshold.
    pub fn ingest(&mut self, record: &LiveRecord) -> Result<Option<AlarmReport>> {
        if self.finished.is_some() {
            return Err(TssrpError::state(
                "the run already alarmed; no further records are accepted",
            ));
        }
        if record.t != self.expected_t {
            return Err(TssrpError::protocol(format!(
                "out-of-order time index: expected t={}, got t={}",
                self.expected_t, record.t
            )));
        }
        let k = self.monitor.num_streams();
        // Only requested values are ever read; everything else stays
        // poisoned so the observation constraint is structurally enforced.
        let mut panel = vec![f64::NAN; k];
        for &stream in self.monitor.layout().observed() {
            let key = (stream + 1).to_string();
            let value = *record.values.get(&key).ok_or_else(|| {
                TssrpError::data(format!(
                    "record t={} is missing requested stream {}",
                    record.t,
                    stream + 1
                ))
            })?;
            if !value.is_finite() {
                return Err(TssrpError::data(format!(
                    "value for stream {} at t={} is not finite",
                    stream + 1,
                    record.t
                )));
            }
            panel[stream] = value;
        }
        let outcome = self.monitor.step(&panel)?;
        if outcome.alarm {
            let report = self.build_alarm_report(record.t, outcome.statistic);
            self.finished = Some(report.clone());
            return Ok(Some(report));
        }
        self.expected_t += 1;
        Ok(None)
    }

    fn build_alarm_report(&self, t: u64, statistic: f64) -> AlarmReport {
        let (threshold, mut evidence): (f64, Vec<StreamEvidence>) = match &self.monitor {
            MonitorKind::Tssrp(d) => (
                d.rule().log_threshold(),
                d.states()
                    .iter()
                    .enumerate()
                    .map(|(i, s)| StreamEvidence {
                        stream: i + 1,
                        evidence: s.log_r.exp(),
                        log_evidence: Some(s.log_r),
                    })
                    .collect(),
            ),
            MonitorKind::Tras(d) => (
                d.threshold(),
                d.w()
                    .iter()
                    .enumerate()
                    .map(|(i, &w)| StreamEvidence {
                        stream: i + 1,
                        evidence: w,
                        log_evidence: None,
                    })
                    .collect(),
            ),
        };
        let r = match &self.monitor {
            MonitorKind::Tssrp(d) => d.rule().r,
            MonitorKind::Tras(d) => d.r(),
        };
        // Strongest evidence first; stream order breaks exact ties so the
        // report is deterministic.
        evidence.sort_by(|a, b| {
            b.evidence
                .total_cmp(&a.evidence)
                .then_with(|| a.stream.cmp(&b.stream))
        });
        evidence.truncate(r);
        AlarmReport {
            alarm_time: t,
            statistic,
            threshold,
            top_streams: evidence,
        }
    }
}

/// Drive a [`LiveMonitor`] from newline-delimited JSON records.
///
/// Layout requests are written to `layout_channel`, one JSON line per
/// round, the first before any record is read. On alarm the report is
/// written to `output` as a JSON line and reading stops. Exhausting the
/// input without an alarm returns `None`.
pub fn monitor_stream<R: BufRead, W: Write, L: Write>(
    monitor: &mut LiveMonitor,
    input: R,
    output: &mut W,
    layout_channel: &mut L,
) -> Result<Option<AlarmReport>> {
    let publish = |chan: &mut L, req: &LayoutRequest| -> Result<()> {
        let line = serde_json::to_string(req)?;
        writeln!(chan, "{line}")?;
        Ok(())
    };
    publish(layout_channel, &monitor.request())?;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: LiveRecord = serde_json::from_str(&line)
            .map_err(|e| TssrpError::data(format!("malformed record: {e}: {line}")))?;
        if let Some(report) = monitor.ingest(&record)? {
            let line = serde_json::to_string(&report)?;
            writeln!(output, "{line}")?;
            return Ok(Some(report));
        }
        publish(layout_channel, &monitor.request())?;
    }
    Ok(None)
}
