//! Tanh-squashed Gaussian policy distribution.
//!
//! Policy heads emit `2 * action_dim` values: means then raw log-stds. The
//! raw log-std is clamped to `[LOG_STD_MIN, LOG_STD_MAX]`; actions are
//! `tanh(mean + exp(log_std) * noise)` with the exact Jacobian correction
//! in the log-density.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_74; // 0.5 * ln(2*pi)

/// Mean and clamped log-std of one squashed Gaussian.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SquashedGaussianParams {
    pub mean: Array1<f64>,
    pub log_std: Array1<f64>,
}

impl SquashedGaussianParams {
    /// Clamps the raw log-std into the supported range.
    pub fn new(mean: Array1<f64>, log_std_raw: Array1<f64>) -> Result<Self> {
        if mean.len() != log_std_raw.len() {
            return Err(Error::DimMismatch("mean/log_std lengths differ".into()));
        }
        let log_std = log_std_raw.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        Ok(Self { mean, log_std })
    }

    /// Splits a `2d` policy-head output into (means, clamped log-stds).
    pub fn from_head(head: &[f64]) -> Result<Self> {
        if head.len() % 2 != 0 {
            return Err(Error::DimMismatch("policy head length must be even".into()));
        }
        let d = head.len() / 2;
        Self::new(
            Array1::from_iter(head[..d].iter().copied()),
            Array1::from_iter(head[d..].iter().copied()),
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `ln(1 - tanh(u)^2)` evaluated stably as `2 (ln 2 - u - softplus(-2u))`.
pub fn ln_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Keeps tanh output strictly inside (-1, 1) even when it rounds to ±1.
fn squash(u: f64) -> f64 {
    let a = u.tanh();
    if a >= 1.0 {
        1.0 - f64::EPSILON
    } else if a <= -1.0 {
        -1.0 + f64::EPSILON
    } else {
        a
    }
}

/// Deterministic reparameterized sample: `a = tanh(mean + std * noise)` and
/// its exact log-density under the squashed Gaussian.
pub fn squashed_sample(
    params: &SquashedGaussianParams,
    noise: &Array1<f64>,
) -> Result<(Array1<f64>, f64)> {
    if noise.len() != params.dim() {
        return Err(Error::DimMismatch(format!(
            "noise dim {} != action dim {}",
            noise.len(),
            params.dim()
        )));
    }
    let mut action = Array1::zeros(params.dim());
    let mut log_prob = 0.0;
    for d in 0..params.dim() {
        let eps = noise[d];
        let u = params.mean[d] + params.log_std[d].exp() * eps;
        action[d] = squash(u);
        log_prob += -HALF_LN_TWO_PI - params.log_std[d] - 0.5 * eps * eps
            - ln_one_minus_tanh_sq(u);
    }
    Ok((action, log_prob))
}

/// Log-density of an arbitrary action already in (-1, 1).
pub fn squashed_log_prob(params: &SquashedGaussianParams, action: &Array1<f64>) -> Result<f64> {
    if action.len() != params.dim() {
        return Err(Error::DimMismatch("action dim".into()));
    }
    let mut log_prob = 0.0;
    for d in 0..params.dim() {
        let a = action[d];
        if !(-1.0..=1.0).contains(&a) {
            return Err(Error::InvalidArg(format!("action {a} outside [-1, 1]")));
        }
        let u = a.atanh();
        let sigma = params.log_std[d].exp();
        let z = (u - params.mean[d]) / sigma;
        log_prob += -HALF_LN_TWO_PI - params.log_std[d] - 0.5 * z * z - ln_one_minus_tanh_sq(u);
    }
    Ok(log_prob)
}

/// Batched squash of a policy-head matrix `(batch, 2d)` with noise
/// `(batch, d)`. Keeps every intermediate needed by actor-loss gradients.
#[derive(Debug, Clone)]
pub struct SquashBatch {
    pub mean: Array2<f64>,
    pub log_std_raw: Array2<f64>,
    pub log_std: Array2<f64>,
    pub sigma: Array2<f64>,
    pub noise: Array2<f64>,
    pub action: Array2<f64>,
    pub log_prob: Array1<f64>,
    /// 1.0 where the raw log-std is strictly inside the clamp range
    /// (gradient passes), 0.0 where clamped.
    pub clamp_pass: Array2<f64>,
}

pub fn squash_batch(head: &Array2<f64>, noise: &Array2<f64>) -> Result<SquashBatch> {
    if head.ncols() % 2 != 0 {
        return Err(Error::DimMismatch("policy head width must be even".into()));
    }
    let d = head.ncols() / 2;
    let b = head.nrows();
    if noise.dim() != (b, d) {
        return Err(Error::DimMismatch(format!(
            "noise shape {:?}, expected ({b}, {d})",
            noise.dim()
        )));
    }
    let mut mean = Array2::zeros((b, d));
    let mut log_std_raw = Array2::zeros((b, d));
    let mut log_std = Array2::zeros((b, d));
    let mut sigma = Array2::zeros((b, d));
    let mut action = Array2::zeros((b, d));
    let mut clamp_pass = Array2::zeros((b, d));
    let mut log_prob = Array1::zeros(b);
    for i in 0..b {
        let mut lp = 0.0;
        for j in 0..d {
            let mu = head[[i, j]];
            let raw = head[[i, d + j]];
            let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
            let sg = ls.exp();
            let eps = noise[[i, j]];
            let u = mu + sg * eps;
            mean[[i, j]] = mu;
            log_std_raw[[i, j]] = raw;
            log_std[[i, j]] = ls;
            sigma[[i, j]] = sg;
            action[[i, j]] = squash(u);
            clamp_pass[[i, j]] = if raw > LOG_STD_MIN && raw < LOG_STD_MAX {
                1.0
            } else {
                0.0
            };
            lp += -HALF_LN_TWO_PI - ls - 0.5 * eps * eps - ln_one_minus_tanh_sq(u);
        }
        log_prob[i] = lp;
    }
    Ok(SquashBatch {
        mean,
        log_std_raw,
        log_std,
        sigma,
        noise: noise.clone(),
        action,
        log_prob,
        clamp_pass,
    })
}
