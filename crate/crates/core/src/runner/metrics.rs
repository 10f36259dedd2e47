//! Per-step metric records, the line-delimited metrics file and the run
//! summary.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of the metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetricsRecord {
    pub step: u64,
    pub realized_fraction: f64,
    /// Resident entries after this step's buffer update.
    pub buffer_size: usize,
    /// Eligible entries when the batch was planned.
    pub n_eligible: usize,
    /// Groups rolled out this step, refills included.
    pub n_groups: usize,
    pub n_zero_variance: usize,
    pub n_full_pass: usize,
    pub n_resampled: usize,
    pub short_batch: bool,
    pub mean_abs_adv: f64,
    pub rollouts_spent_cumulative: u64,
    pub skill: f64,
    pub mean_true_pass_rate: f64,
}

impl StepMetricsRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("record fields are serializable")
    }
}

/// Writes records as JSON lines, flushing what was written if a later write fails.
pub struct MetricsWriter<W: Write> {
    out: std::io::BufWriter<W>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { out: std::io::BufWriter::new(inner) }
    }

    pub fn write(&mut self, record: &StepMetricsRecord) -> Result<()> {
        let res = writeln!(self.out, "{}", record.to_line());
        if res.is_err() {
            let _ = self.out.flush();
        }
        Ok(res?)
    }

    pub fn finish(mut self) -> Result<()> {
        Ok(self.out.flush()?)
    }
}

pub fn read_metrics<R: BufRead>(input: R) -> Result<Vec<StepMetricsRecord>> {
    input
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(n, line)| {
            serde_json::from_str(&line?).map_err(|e| Error::Validation(format!("metrics line {}: {e}", n + 1)))
        })
        .collect()
}

/// Aggregates over a run, as written to the summary file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: u64,
    pub final_skill: f64,
    pub total_rollouts: u64,
    pub mean_zero_variance: f64,
    pub mean_abs_adv: f64,
    pub mean_realized_fraction: f64,
    pub window_start: u64,
    pub window_end: u64,
    pub window_mean_zero_variance: f64,
    pub window_mean_abs_adv: f64,
    pub skill_threshold: f64,
    /// Cumulative rollouts at the first step whose skill reached the threshold.
    pub rollouts_to_threshold: Option<u64>,
}

fn mean_of(records: &[&StepMetricsRecord], f: impl Fn(&StepMetricsRecord) -> f64) -> f64 {
    if records.is_empty() {
        return f64::NAN;
    }
    records.iter().map(|r| f(r)).sum::<f64>() / records.len() as f64
}

pub fn rollouts_to_threshold(records: &[StepMetricsRecord], threshold: f64) -> Option<u64> {
    records.iter().find(|r| r.skill >= threshold).map(|r| r.rollouts_spent_cumulative)
}

impl RunSummary {
    pub fn from_records(records: &[StepMetricsRecord], window: (u64, u64), skill_threshold: f64) -> Self {
        let all: Vec<&StepMetricsRecord> = records.iter().collect();
        let win: Vec<&StepMetricsRecord> = records.iter().filter(|r| (window.0..=window.1).contains(&r.step)).collect();
        let last = records.last();
        Self {
            steps: records.len() as u64,
            final_skill: last.map_or(f64::NAN, |r| r.skill),
            total_rollouts: last.map_or(0, |r| r.rollouts_spent_cumulative),
            mean_zero_variance: mean_of(&all, |r| r.n_zero_variance as f64),
            mean_abs_adv: mean_of(&all, |r| r.mean_abs_adv),
            mean_realized_fraction: mean_of(&all, |r| r.realized_fraction),
            window_start: window.0,
            window_end: window.1,
            window_mean_zero_variance: mean_of(&win, |r| r.n_zero_variance as f64),
            window_mean_abs_adv: mean_of(&win, |r| r.mean_abs_adv),
            skill_threshold,
            rollouts_to_threshold: rollouts_to_threshold(records, skill_threshold),
        }
    }

    /// `key=value` lines.
    pub fn to_text(&self) -> String {
        let reach = self.rollouts_to_threshold.map_or_else(|| "none".to_string(), |v| v.to_string());
        [
            ("steps", self.steps.to_string()),
            ("final_skill", self.final_skill.to_string()),
            ("total_rollouts", self.total_rollouts.to_string()),
            ("mean_zero_variance", self.mean_zero_variance.to_string()),
            ("mean_abs_adv", self.mean_abs_adv.to_string()),
            ("mean_realized_fraction", self.mean_realized_fraction.to_string()),
            ("window_start", self.window_start.to_string()),
            ("window_end", self.window_end.to_string()),
            ("window_mean_zero_variance", self.window_mean_zero_variance.to_string()),
            ("window_mean_abs_adv", self.window_mean_abs_adv.to_string()),
            ("skill_threshold", self.skill_threshold.to_string()),
            ("rollouts_to_threshold", reach),
        ]
        .iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect()
    }
}
