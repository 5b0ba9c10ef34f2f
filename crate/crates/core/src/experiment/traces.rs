//! Append-only CSV traces. Frozen schemas:
//!
//! - `train.csv`: step, actor_tag, reward, lambda, disagreement,
//!   critic_loss, control_loss, distill_loss
//! - `eval.csv`: step, mean_return, return_std, collision_rate
//!
//! Floats print in shortest round-trip form with a '.' decimal separator;
//! absent values are empty fields; every row is newline-terminated.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const TRAIN_HEADER: &str =
    "step,actor_tag,reward,lambda,disagreement,critic_loss,control_loss,distill_loss";
pub const EVAL_HEADER: &str = "step,mean_return,return_std,collision_rate";

/// One training-step trace row.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    pub step: u64,
    pub actor_tag: char,
    pub reward: f64,
    pub lambda: Option<f64>,
    pub disagreement: Option<f64>,
    pub critic_loss: Option<f64>,
    pub control_loss: Option<f64>,
    pub distill_loss: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn parse_opt(s: &str, what: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse::<f64>()
            .map(Some)
            .map_err(|e| Error::Serde(format!("{what}: {e}")))
    }
}

pub struct TrainCsvWriter {
    out: BufWriter<File>,
}

impl TrainCsvWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{TRAIN_HEADER}")?;
        Ok(Self { out })
    }

    pub fn write(&mut self, row: &StepRow) -> Result<()> {
        writeln!(
            self.out,
            "{},{},{},{},{},{},{},{}",
            row.step,
            row.actor_tag,
            row.reward,
            opt(row.lambda),
            opt(row.disagreement),
            opt(row.critic_loss),
            opt(row.control_loss),
            opt(row.distill_loss),
        )?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalCsvRow {
    pub step: u64,
    pub mean_return: f64,
    pub return_std: f64,
    pub collision_rate: f64,
}

pub struct EvalCsvWriter {
    out: BufWriter<File>,
}

impl EvalCsvWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{EVAL_HEADER}")?;
        Ok(Self { out })
    }

    pub fn write(&mut self, row: &EvalCsvRow) -> Result<()> {
        writeln!(
            self.out,
            "{},{},{},{}",
            row.step, row.mean_return, row.return_std, row.collision_rate
        )?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_train_csv(path: &Path) -> Result<Vec<StepRow>> {
    let file = File::open(path).map_err(|e| {
        Error::MissingArtifact(format!("train trace {}: {e}", path.display()))
    })?;
    let mut lines = BufReader::new(file).lines();
    match lines.next() {
        Some(Ok(h)) if h == TRAIN_HEADER => {}
        other => {
            return Err(Error::Serde(format!(
                "train.csv header mismatch: {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 8 {
            return Err(Error::Serde(format!("train.csv line {}: bad arity", ln + 2)));
        }
        rows.push(StepRow {
            step: parts[0]
                .parse()
                .map_err(|e| Error::Serde(format!("step: {e}")))?,
            actor_tag: parts[1].chars().next().unwrap_or('?'),
            reward: parts[2]
                .parse()
                .map_err(|e| Error::Serde(format!("reward: {e}")))?,
            lambda: parse_opt(parts[3], "lambda")?,
            disagreement: parse_opt(parts[4], "disagreement")?,
            critic_loss: parse_opt(parts[5], "critic_loss")?,
            control_loss: parse_opt(parts[6], "control_loss")?,
            distill_loss: parse_opt(parts[7], "distill_loss")?,
        });
    }
    Ok(rows)
}

pub fn read_eval_csv(path: &Path) -> Result<Vec<EvalCsvRow>> {
    let file = File::open(path).map_err(|e| {
        Error::MissingArtifact(format!("eval trace {}: {e}", path.display()))
    })?;
    let mut lines = BufReader::new(file).lines();
    match lines.next() {
        Some(Ok(h)) if h == EVAL_HEADER => {}
        other => return Err(Error::Serde(format!("eval.csv header mismatch: {other:?}"))),
    }
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::Serde("eval.csv: bad arity".into()));
        }
        rows.push(EvalCsvRow {
            step: parts[0].parse().map_err(|e| Error::Serde(format!("{e}")))?,
            mean_return: parts[1].parse().map_err(|e| Error::Serde(format!("{e}")))?,
            return_std: parts[2].parse().map_err(|e| Error::Serde(format!("{e}")))?,
            collision_rate: parts[3].parse().map_err(|e| Error::Serde(format!("{e}")))?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_rows_roundtrip_including_empty_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.csv");
        let rows = vec![
            StepRow {
                step: 0,
                actor_tag: 'g',
                reward: 0.5,
                lambda: Some(0.5),
                disagreement: Some(1.25e-3),
                critic_loss: None,
                control_loss: None,
                distill_loss: None,
            },
            StepRow {
                step: 1,
                actor_tag: 'c',
                reward: -4.3,
                lambda: None,
                disagreement: None,
                critic_loss: Some(0.125),
                control_loss: Some(-2.0),
                distill_loss: Some(0.015),
            },
        ];
        let mut w = TrainCsvWriter::create(&path).unwrap();
        for r in &rows {
            w.write(r).unwrap();
        }
        w.flush().unwrap();
        let back = read_train_csv(&path).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn eval_rows_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eval.csv");
        let rows = vec![EvalCsvRow {
            step: 1500,
            mean_return: 101.25,
            return_std: 3.5,
            collision_rate: 0.2,
        }];
        let mut w = EvalCsvWriter::create(&path).unwrap();
        w.write(&rows[0]).unwrap();
        w.flush().unwrap();
        assert_eq!(read_eval_csv(&path).unwrap(), rows);
    }

    #[test]
    fn missing_trace_is_a_missing_artifact() {
        let err = read_train_csv(Path::new("/nonexistent/train.csv")).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact(_)));
    }
}
