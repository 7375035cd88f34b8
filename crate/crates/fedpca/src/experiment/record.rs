//! Run outputs: per-round records (JSON lines) and run/sweep/diagnostic
//! summaries (CSV). Every format carries a schema_version field.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// One selected client's outcome within a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRound {
    pub id: u64,
    pub behavior: String,
    pub q: f64,
    pub weight: f64,
    pub reported_size: u64,
}

/// Log record for one aggregation round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub schema_version: u32,
    pub round: u64,
    pub rule: String,
    pub selected: Vec<ClientRound>,
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    pub wall_ms: u64,
}

/// Mean weight and contribution per behavior class over a whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorSummary {
    pub behavior: String,
    /// Clients of this behavior in the population.
    pub clients: usize,
    /// Selected (round, client) samples the means are taken over.
    pub samples: usize,
    pub mean_weight: f64,
    pub mean_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub seed: u64,
    pub rounds: u64,
    pub rule: String,
    pub final_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_auc: Option<f64>,
    pub behaviors: Vec<BehaviorSummary>,
}

impl RunSummary {
    /// Mean weight over every selected client with the given behavior.
    pub fn mean_weight(&self, behavior: &str) -> Option<f64> {
        self.behaviors
            .iter()
            .find(|b| b.behavior == behavior)
            .filter(|b| b.samples > 0)
            .map(|b| b.mean_weight)
    }

    /// Sample-weighted mean weight over all non-honest behaviors.
    pub fn strategic_mean_weight(&self) -> Option<f64> {
        let mut weight = 0.0;
        let mut samples = 0usize;
        for b in self.behaviors.iter().filter(|b| b.behavior != "honest") {
            weight += b.mean_weight * b.samples as f64;
            samples += b.samples;
        }
        (samples > 0).then(|| weight / samples as f64)
    }
}

/// One sweep point: mean and spread over the per-seed runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub schema_version: u32,
    pub axis: String,
    pub value: f64,
    pub seeds: usize,
    pub mean_strategic_weight: Option<f64>,
    pub std_strategic_weight: Option<f64>,
    pub mean_final_accuracy: f64,
    pub std_final_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: String,
    pub rows: Vec<SweepRow>,
}

/// Spearman and KS verdicts for one sampled parameter pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub schema_version: u32,
    pub param_a: usize,
    pub param_b: usize,
    pub spearman_statistic: f64,
    pub spearman_p: f64,
    pub ks_statistic: f64,
    pub ks_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub schema_version: u32,
    /// Client whose signal history was sampled.
    pub client: u64,
    /// Rounds of history behind each sample.
    pub history_len: usize,
    pub rows: Vec<DiagnosticRow>,
    /// Pairs skipped because one column was constant (ranks undefined).
    pub skipped_constant: usize,
    pub median_spearman_p: f64,
    pub median_ks_p: f64,
}

fn ser_err(e: impl std::fmt::Display) -> Error {
    Error::Serialize(e.to_string())
}

/// One JSON object per line.
pub fn write_records_jsonl(records: &[RoundRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for r in records {
        let line = serde_json::to_string(r).map_err(ser_err)?;
        writeln!(f, "{line}")?;
    }
    Ok(())
}

/// One CSV row per behavior class.
pub fn write_summary_csv(summary: &RunSummary, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(ser_err)?;
    w.write_record([
        "schema_version",
        "seed",
        "rounds",
        "rule",
        "final_accuracy",
        "final_auc",
        "behavior",
        "clients",
        "samples",
        "mean_weight",
        "mean_q",
    ])
    .map_err(ser_err)?;
    for b in &summary.behaviors {
        w.write_record([
            summary.schema_version.to_string(),
            summary.seed.to_string(),
            summary.rounds.to_string(),
            summary.rule.clone(),
            format!("{:.6}", summary.final_accuracy),
            summary
                .final_auc
                .map(|a| format!("{a:.6}"))
                .unwrap_or_default(),
            b.behavior.clone(),
            b.clients.to_string(),
            b.samples.to_string(),
            format!("{:.8}", b.mean_weight),
            format!("{:.8}", b.mean_q),
        ])
        .map_err(ser_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv(table: &SweepTable, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(ser_err)?;
    w.write_record([
        "schema_version",
        "axis",
        "value",
        "seeds",
        "mean_strategic_weight",
        "std_strategic_weight",
        "mean_final_accuracy",
        "std_final_accuracy",
    ])
    .map_err(ser_err)?;
    for r in &table.rows {
        w.write_record([
            r.schema_version.to_string(),
            r.axis.clone(),
            format!("{}", r.value),
            r.seeds.to_string(),
            r.mean_strategic_weight
                .map(|v| format!("{v:.8}"))
                .unwrap_or_default(),
            r.std_strategic_weight
                .map(|v| format!("{v:.8}"))
                .unwrap_or_default(),
            format!("{:.6}", r.mean_final_accuracy),
            format!("{:.6}", r.std_final_accuracy),
        ])
        .map_err(ser_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_diagnostics_csv(report: &DiagnosticsReport, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(ser_err)?;
    w.write_record([
        "schema_version",
        "client",
        "history_len",
        "param_a",
        "param_b",
        "spearman_statistic",
        "spearman_p",
        "ks_statistic",
        "ks_p",
    ])
    .map_err(ser_err)?;
    for r in &report.rows {
        w.write_record([
            r.schema_version.to_string(),
            report.client.to_string(),
            report.history_len.to_string(),
            r.param_a.to_string(),
            r.param_b.to_string(),
            format!("{:.6}", r.spearman_statistic),
            format!("{:.6}", r.spearman_p),
            format!("{:.6}", r.ks_statistic),
            format!("{:.6}", r.ks_p),
        ])
        .map_err(ser_err)?;
    }
    w.flush()?;
    Ok(())
}
