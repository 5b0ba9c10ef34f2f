//! Post-run diagnostics: coefficient activity recomputed from the raw
//! trace, a disagreement digest, and the observability-blindness split.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::config::RunConfig;
use crate::experiment::summary::DisagreementSummary;
use crate::experiment::traces::read_train_csv;
use crate::guidance::lambda_activity;
use crate::uncertainty::BlindnessReport;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaDiag {
    pub method: String,
    pub lambda_min: f64,
    /// True when the trace never moves (fixed schedules).
    pub constant: bool,
    pub activity_fraction: f64,
    pub activity_post_warmup: Option<f64>,
    pub trace_steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub run: String,
    pub lambda: Option<LambdaDiag>,
    pub disagreement: Option<DisagreementSummary>,
    pub blindness: Option<BlindnessReport>,
}

/// Reads a completed run directory and recomputes the diagnostics from the
/// raw traces (independently of `summary.json`). Writes `diagnose.json`
/// next to them and returns the report.
pub fn diagnose_run(run_dir: &Path) -> Result<DiagnoseReport> {
    let cfg_path = run_dir.join("config.toml");
    if !cfg_path.exists() {
        return Err(Error::MissingArtifact(format!(
            "{} (is this a run directory?)",
            cfg_path.display()
        )));
    }
    let cfg = RunConfig::from_toml_file(&cfg_path)?;
    let rows = read_train_csv(&run_dir.join("train.csv"))?;
    if rows.is_empty() {
        return Err(Error::MissingArtifact("train.csv holds no steps".into()));
    }

    let lambda_trace: Vec<f64> = rows.iter().filter_map(|r| r.lambda).collect();
    let lambda = if lambda_trace.is_empty() {
        None
    } else {
        let w = cfg.guidance.warmup_steps as usize;
        let constant = lambda_trace
            .windows(2)
            .all(|p| (p[0] - p[1]).abs() < f64::EPSILON);
        Some(LambdaDiag {
            method: cfg.method.name().to_string(),
            lambda_min: cfg.guidance.lambda_min,
            constant,
            activity_fraction: lambda_activity(&lambda_trace, cfg.guidance.lambda_min)?,
            activity_post_warmup: if lambda_trace.len() > w {
                Some(lambda_activity(&lambda_trace[w..], cfg.guidance.lambda_min)?)
            } else {
                None
            },
            trace_steps: lambda_trace.len(),
        })
    };

    let u_trace: Vec<f64> = rows.iter().filter_map(|r| r.disagreement).collect();
    let disagreement = if u_trace.is_empty() {
        None
    } else {
        let w = (cfg.guidance.warmup_steps as usize).min(u_trace.len());
        let q = (u_trace.len() * 3) / 4;
        Some(DisagreementSummary {
            mean: u_trace.iter().sum::<f64>() / u_trace.len() as f64,
            warmup_mean: if w > 0 {
                u_trace[..w].iter().sum::<f64>() / w as f64
            } else {
                0.0
            },
            final_quarter_mean: u_trace[q..].iter().sum::<f64>()
                / (u_trace.len() - q).max(1) as f64,
        })
    };

    let blindness_path = run_dir.join("blindness.json");
    let blindness = if blindness_path.exists() {
        let text = fs::read_to_string(&blindness_path)?;
        Some(serde_json::from_str::<BlindnessReport>(&text)?)
    } else {
        None
    };

    let report = DiagnoseReport {
        run: run_dir.display().to_string(),
        lambda,
        disagreement,
        blindness,
    };
    fs::write(
        run_dir.join("diagnose.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(report)
}
