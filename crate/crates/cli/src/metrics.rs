//! Metrics log (one JSON object per step) and its CSV rendering.

use std::time::{SystemTime, UNIX_EPOCH};

use cgrpo_core::joint::StepRecord;
use serde::Serialize;

use crate::error::CliError;

/// Key of the wall-clock field, the only nondeterministic part of a line.
pub const TIMESTAMP_KEY: &str = "ts";

#[derive(Serialize)]
struct Line<'a> {
    ts: u128,
    #[serde(flatten)]
    record: &'a StepRecord,
}

fn now_millis() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

pub fn record_line(record: &StepRecord) -> String {
    serde_json::to_string(&Line {
        ts: now_millis(),
        record,
    })
    .unwrap_or_default()
}

/// Removes the timestamp from every line of a metrics log.
pub fn strip_timestamps(log: &str) -> Result<String, CliError> {
    let mut out = String::with_capacity(log.len());
    for (i, line) in log.lines().enumerate() {
        let mut v: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| CliError::Data(format!("metrics line {}: {e}", i + 1)))?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove(TIMESTAMP_KEY);
        }
        out.push_str(&v.to_string());
        out.push('\n');
    }
    Ok(out)
}

#[derive(Serialize)]
struct CsvRow<'a> {
    step: usize,
    stage: &'a str,
    n_close: usize,
    n_open: usize,
    alpha: Option<f64>,
    mean_reward: f64,
    mean_total_loss: f64,
    mean_kl: f64,
    clip_fraction: f64,
    grad_norm: f64,
    eval_close_accuracy: Option<f64>,
    eval_open_score: Option<f64>,
    eval_format_rate: Option<f64>,
}

pub fn to_csv(history: &[StepRecord]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in history {
        let e = r.eval.as_ref();
        w.serialize(CsvRow {
            step: r.step,
            stage: r.stage.as_str(),
            n_close: r.n_close,
            n_open: r.n_open,
            alpha: r.alpha,
            mean_reward: r.stats.mean_reward,
            mean_total_loss: r.stats.mean_total_loss,
            mean_kl: r.stats.mean_kl,
            clip_fraction: r.stats.clip_fraction,
            grad_norm: r.stats.grad_norm,
            eval_close_accuracy: e.and_then(|e| e.close_accuracy),
            eval_open_score: e.and_then(|e| e.open_score),
            eval_format_rate: e.and_then(|e| e.format_rate),
        })
        .map_err(|e| CliError::Data(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Data(e.to_string()))
}
