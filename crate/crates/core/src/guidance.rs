//! Distillation-coefficient policies: fixed, uncertainty-adaptive,
//! threshold-gated, and linear decay, with the shared warmup hold.
//!
//! All schedules produce values in `[lambda_min, lambda_max]`. The adaptive
//! schedule is a clipped linear map of the disagreement signal onto that
//! interval, calibrated once from warmup percentiles; the threshold
//! schedule gates on the warmup median; linear decay ignores uncertainty
//! entirely.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::replay::WarmupBuffer;
use crate::uncertainty::{percentile_sorted, Calibration};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ScheduleKind {
    /// Constant coefficient at every step, warmup included.
    Fixed { value: f64 },
    /// Clipped linear map of disagreement onto `[lambda_min, lambda_max]`.
    /// With a single ensemble member disagreement is undefined, so the
    /// schedule degrades to the midpoint after warmup.
    Adaptive {
        lambda_min: f64,
        lambda_max: f64,
        single_member: bool,
    },
    /// Binary gate: `lambda_max` iff disagreement strictly exceeds the
    /// warmup-median threshold.
    Threshold { lambda_min: f64, lambda_max: f64 },
    /// Deterministic decay from `lambda_max` at t=0 to `lambda_min` at
    /// t=total_steps, clamped afterwards. Needs no ensemble.
    LinearDecay {
        lambda_min: f64,
        lambda_max: f64,
        total_steps: u64,
    },
}

/// A coefficient policy plus its calibration state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GuidanceSchedule {
    pub kind: ScheduleKind,
    pub warmup_steps: u64,
    pub calibration: Option<Calibration>,
    pub tau: Option<f64>,
}

impl GuidanceSchedule {
    pub fn new(kind: ScheduleKind, warmup_steps: u64) -> Result<Self> {
        match &kind {
            ScheduleKind::Fixed { value } => {
                if !(value.is_finite() && *value >= 0.0) {
                    return Err(Error::Config("fixed lambda must be >= 0".into()));
                }
            }
            ScheduleKind::Adaptive {
                lambda_min,
                lambda_max,
                ..
            }
            | ScheduleKind::Threshold {
                lambda_min,
                lambda_max,
            } => {
                validate_bounds(*lambda_min, *lambda_max)?;
            }
            ScheduleKind::LinearDecay {
                lambda_min,
                lambda_max,
                total_steps,
            } => {
                validate_bounds(*lambda_min, *lambda_max)?;
                if *total_steps == 0 {
                    return Err(Error::Config("linear decay needs total_steps > 0".into()));
                }
            }
        }
        Ok(Self {
            kind,
            warmup_steps,
            calibration: None,
            tau: None,
        })
    }

    /// Freezes the adaptive calibration; allowed exactly once.
    pub fn freeze_calibration(&mut self, cal: Calibration) -> Result<()> {
        if self.calibration.is_some() {
            return Err(Error::Contract("calibration already frozen".into()));
        }
        self.calibration = Some(cal);
        Ok(())
    }

    pub fn set_threshold(&mut self, tau: f64) -> Result<()> {
        if self.tau.is_some() {
            return Err(Error::Contract("threshold already set".into()));
        }
        self.tau = Some(tau);
        Ok(())
    }

    /// Whether this schedule consumes a disagreement signal after warmup.
    pub fn needs_uncertainty(&self) -> bool {
        matches!(
            self.kind,
            ScheduleKind::Adaptive {
                single_member: false,
                ..
            } | ScheduleKind::Threshold { .. }
        )
    }

    pub fn lambda_min(&self) -> f64 {
        match self.kind {
            ScheduleKind::Fixed { value } => value,
            ScheduleKind::Adaptive { lambda_min, .. }
            | ScheduleKind::Threshold { lambda_min, .. }
            | ScheduleKind::LinearDecay { lambda_min, .. } => lambda_min,
        }
    }

    /// The coefficient at step `t` given the step's disagreement value
    /// (where applicable). Uncertainty-driven kinds hold `lambda_max`
    /// throughout warmup.
    pub fn lambda_at(&self, t: u64, u: Option<f64>) -> Result<f64> {
        match self.kind {
            ScheduleKind::Fixed { value } => Ok(value),
            ScheduleKind::LinearDecay {
                lambda_min,
                lambda_max,
                total_steps,
            } => {
                if t >= total_steps {
                    return Ok(lambda_min);
                }
                let frac = t as f64 / total_steps as f64;
                Ok(lambda_max * (1.0 - frac) + lambda_min * frac)
            }
            ScheduleKind::Adaptive {
                lambda_min,
                lambda_max,
                single_member,
            } => {
                if t < self.warmup_steps {
                    return Ok(lambda_max);
                }
                if single_member {
                    return Ok(0.5 * (lambda_min + lambda_max));
                }
                let cal = self.calibration.ok_or_else(|| {
                    Error::Contract("adaptive schedule queried after warmup without calibration".into())
                })?;
                let u = u.ok_or_else(|| {
                    Error::Contract("adaptive schedule requires a disagreement value".into())
                })?;
                let z = ((u - cal.u_lo) / (cal.u_hi - cal.u_lo)).clamp(0.0, 1.0);
                Ok(lambda_min + (lambda_max - lambda_min) * z)
            }
            ScheduleKind::Threshold {
                lambda_min,
                lambda_max,
            } => {
                if t < self.warmup_steps {
                    return Ok(lambda_max);
                }
                let tau = self.tau.ok_or_else(|| {
                    Error::Contract("threshold schedule queried after warmup without tau".into())
                })?;
                let u = u.ok_or_else(|| {
                    Error::Contract("threshold schedule requires a disagreement value".into())
                })?;
                // Strict inequality: u == tau stays at lambda_min.
                Ok(if u > tau { lambda_max } else { lambda_min })
            }
        }
    }
}

fn validate_bounds(lambda_min: f64, lambda_max: f64) -> Result<()> {
    if !(lambda_min.is_finite() && lambda_max.is_finite()) || lambda_min < 0.0 {
        return Err(Error::Config("lambda bounds must be finite and >= 0".into()));
    }
    if lambda_min > lambda_max {
        return Err(Error::Config("lambda_min must not exceed lambda_max".into()));
    }
    Ok(())
}

/// Median disagreement from warmup (linear interpolation), the threshold
/// gate's tau.
pub fn threshold_from_warmup(warmup: &WarmupBuffer) -> Result<f64> {
    if warmup.is_empty() {
        return Err(Error::Contract("threshold from an empty warmup buffer".into()));
    }
    let mut sorted = warmup.values().to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    percentile_sorted(&sorted, 50.0)
}

/// Fraction of steps whose coefficient strictly exceeds
/// `lambda_min + 0.01`: how often guidance was actually active.
pub fn lambda_activity(trace: &[f64], lambda_min: f64) -> Result<f64> {
    if trace.is_empty() {
        return Err(Error::Contract("lambda activity of an empty trace".into()));
    }
    let active = trace.iter().filter(|&&l| l > lambda_min + 0.01).count();
    Ok(active as f64 / trace.len() as f64)
}
