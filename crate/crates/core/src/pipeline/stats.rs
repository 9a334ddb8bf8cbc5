use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{DatasetRecord, PipelineError};
use crate::validate::FailureReason;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub stddev: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let stddev = if n > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, stddev })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffortSummary {
    pub base_translation: MeanStd,
    pub arm_rotation: MeanStd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub attempted: usize,
    pub valid: usize,
    pub elapsed_seconds: f64,
    /// Valid trajectories per second.
    pub throughput: f64,
    pub effort: Option<EffortSummary>,
    /// Count per failure reason; every reason is present.
    pub failures: BTreeMap<FailureReason, usize>,
}

/// One failed problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub problem_index: usize,
    pub grasp_index: usize,
    pub start_index: usize,
    pub goal: Vec<f64>,
    pub reason: FailureReason,
    pub detail: String,
}

/// Aggregates a finished batch. `attempted` is the number of records plus
/// failures.
pub fn report_stats(records: &[DatasetRecord], failures: &[FailureReason], elapsed_seconds: f64) -> BatchStats {
    let mut counts: BTreeMap<FailureReason, usize> = FailureReason::ALL.iter().map(|&r| (r, 0)).collect();
    for f in failures {
        *counts.entry(*f).or_default() += 1;
    }
    let base: Vec<f64> = records.iter().map(|r| r.effort.base_translation).collect();
    let arm: Vec<f64> = records.iter().map(|r| r.effort.arm_rotation).collect();
    let effort = MeanStd::of(&base).zip(MeanStd::of(&arm)).map(|(b, a)| EffortSummary { base_translation: b, arm_rotation: a });
    let valid = records.len();
    BatchStats {
        attempted: valid + failures.len(),
        valid,
        elapsed_seconds,
        throughput: if elapsed_seconds > 0.0 { valid as f64 / elapsed_seconds } else { 0.0 },
        effort,
        failures: counts,
    }
}

/// Long-format table `section,key,statistic,value` with the summary, effort
/// and failure counts, followed by one effort row pair per record.
pub fn write_stats_csv<W: Write>(stats: &BatchStats, records: &[DatasetRecord], w: W) -> Result<(), PipelineError> {
    let mut out = csv::Writer::from_writer(w);
    let mut row = |section: &str, key: &str, stat: &str, value: f64| -> Result<(), PipelineError> {
        out.write_record([section, key, stat, &value.to_string()]).map_err(PipelineError::from)
    };
    row("batch", "attempted", "count", stats.attempted as f64)?;
    row("batch", "valid", "count", stats.valid as f64)?;
    row("batch", "elapsed_seconds", "value", stats.elapsed_seconds)?;
    row("batch", "throughput", "value", stats.throughput)?;
    if let Some(e) = &stats.effort {
        for (key, m) in [("base_translation", e.base_translation), ("arm_rotation", e.arm_rotation)] {
            row("effort", key, "mean", m.mean)?;
            row("effort", key, "stddev", m.stddev)?;
        }
    }
    for (reason, n) in &stats.failures {
        row("failure", reason.as_str(), "count", *n as f64)?;
    }
    for r in records {
        let key = r.problem_index.to_string();
        row("record", &key, "base_translation", r.effort.base_translation)?;
        row("record", &key, "arm_rotation", r.effort.arm_rotation)?;
    }
    out.flush().map_err(|e| PipelineError::Format { path: "stats csv".into(), message: e.to_string() })
}
