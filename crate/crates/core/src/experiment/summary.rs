//! Per-run summaries and cross-seed aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::evaluation::EvalRecord;

/// Trace-level disagreement digest stored with each run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DisagreementSummary {
    pub mean: f64,
    /// Mean over the warmup steps.
    pub warmup_mean: f64,
    /// Mean over the final quarter of training.
    pub final_quarter_mean: f64,
}

/// End-of-run metrics; `last5_*` aggregate the final five evaluation
/// checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub level: String,
    pub seed: u64,
    pub total_steps: u64,
    pub eval_count: usize,
    pub last5_avg: f64,
    /// Population std of the last five checkpoint means.
    pub last5_std: f64,
    pub best_eval_return: f64,
    pub collision_rate_last5: f64,
    pub lambda_activity_fraction: Option<f64>,
    pub lambda_activity_post_warmup: Option<f64>,
    pub disagreement: Option<DisagreementSummary>,
    pub config_hash: String,
    pub group_hash: String,
}

pub(crate) fn last5_stats(evals: &[EvalRecord]) -> Result<(f64, f64, f64, f64)> {
    if evals.len() < 5 {
        return Err(Error::Config(format!(
            "insufficient checkpoints: need >= 5 evaluations for a summary, have {}",
            evals.len()
        )));
    }
    let tail = &evals[evals.len() - 5..];
    let mean = tail.iter().map(|e| e.mean_return).sum::<f64>() / 5.0;
    let var = tail
        .iter()
        .map(|e| (e.mean_return - mean).powi(2))
        .sum::<f64>()
        / 5.0;
    let coll = tail.iter().map(|e| e.collision_rate).sum::<f64>() / 5.0;
    let best = evals
        .iter()
        .map(|e| e.mean_return)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((mean, var.sqrt(), coll, best))
}

/// Cross-seed aggregate of last-5 averages: mean, population coefficient
/// of variation (percent), and the worst seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub per_seed: Vec<f64>,
    pub mean: f64,
    /// `100 * population_std / mean`; `None` when the mean is zero.
    pub cv_percent: Option<f64>,
    pub min: f64,
}

pub fn aggregate_seeds(last5_avgs: &[f64]) -> Result<SeedAggregate> {
    if last5_avgs.len() < 2 {
        return Err(Error::Contract(
            "cross-seed aggregation needs at least two runs".into(),
        ));
    }
    let n = last5_avgs.len() as f64;
    let mean = last5_avgs.iter().sum::<f64>() / n;
    let var = last5_avgs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let cv_percent = if mean == 0.0 {
        eprintln!("warning: zero mean return, coefficient of variation undefined");
        None
    } else {
        Some(100.0 * std / mean)
    };
    let min = last5_avgs.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(SeedAggregate {
        per_seed: last5_avgs.to_vec(),
        mean,
        cv_percent,
        min,
    })
}
