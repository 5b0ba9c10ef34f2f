//! Dual-actor guided SAC layer: privileged guiding actor, history-based
//! control actor, the distillation network bridging them, alternating
//! environment interaction, and the coefficient-weighted control objective.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::highway::{Action, FullState, ACTION_DIM, STATE_DIM};
use crate::numerics::{squash_batch, AdamState, Activation, Mlp, SquashedGaussianParams};
use crate::pomdp::ObservationHistory;
use crate::sac::{actor_head_gradient, QFunction};

/// Privileged teacher policy over the full 25-dim state.
#[derive(Debug, Clone)]
pub struct GuidingActor {
    pub net: Mlp,
    pub adam: AdamState,
}

impl GuidingActor {
    pub fn new(hidden: &[usize], lr: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut sizes = vec![STATE_DIM];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * ACTION_DIM);
        let net = Mlp::init(&sizes, Activation::Relu, rng)?;
        let adam = AdamState::new(&net, lr);
        Ok(Self { net, adam })
    }
}

/// Deployable student policy over a flattened K-step observation history.
#[derive(Debug, Clone)]
pub struct ControlActor {
    pub net: Mlp,
    pub adam: AdamState,
}

impl ControlActor {
    pub fn new(k: usize, hidden: &[usize], lr: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut sizes = vec![k * STATE_DIM];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * ACTION_DIM);
        let net = Mlp::init(&sizes, Activation::Relu, rng)?;
        let adam = AdamState::new(&net, lr);
        Ok(Self { net, adam })
    }
}

/// Maps observation histories to the teacher's (deterministic) actions;
/// output squashed to (-1, 1) by tanh.
#[derive(Debug, Clone)]
pub struct DistillationNet {
    pub net: Mlp,
    pub adam: AdamState,
}

impl DistillationNet {
    pub fn new(k: usize, hidden: &[usize], lr: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut sizes = vec![k * STATE_DIM];
        sizes.extend_from_slice(hidden);
        sizes.push(ACTION_DIM);
        let net = Mlp::init(&sizes, Activation::Relu, rng)?;
        let adam = AdamState::new(&net, lr);
        Ok(Self { net, adam })
    }

    /// `tanh`-squashed predictions for a batch of flattened histories.
    pub fn predict(&self, histories: &Array2<f64>) -> Result<Array2<f64>> {
        let (raw, _) = self.net.forward_batch(histories)?;
        Ok(raw.mapv(f64::tanh))
    }
}

/// Which actor produced an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActorTag {
    Guiding,
    Control,
}

impl ActorTag {
    pub fn as_char(self) -> char {
        match self {
            ActorTag::Guiding => 'g',
            ActorTag::Control => 'c',
        }
    }
}

fn action_from(vec: &Array1<f64>) -> Action {
    Action {
        accel: vec[0],
        steer: vec[1],
    }
}

/// Stochastic action from a policy head at `input`.
pub fn sample_action(net: &Mlp, input: &[f64], noise: &Array1<f64>) -> Result<Action> {
    let (head, _) = net.forward(input)?;
    let params = SquashedGaussianParams::from_head(&head)?;
    let (a, _) = crate::numerics::squashed_sample(&params, noise)?;
    Ok(action_from(&a))
}

/// Deterministic action: tanh of the policy mean.
pub fn mean_action(net: &Mlp, input: &[f64]) -> Result<Action> {
    let (head, _) = net.forward(input)?;
    let params = SquashedGaussianParams::from_head(&head)?;
    Ok(action_from(&params.mean.mapv(f64::tanh)))
}

/// Action selection. Training alternates strictly: even steps act with the
/// guiding actor on privileged state, odd steps with the control actor on
/// history. Evaluation always takes the control actor's mean action and
/// never touches privileged input.
pub fn select_action(
    t: u64,
    guiding: Option<&Mlp>,
    control: &Mlp,
    state: &FullState,
    history: &ObservationHistory,
    noise: &Array1<f64>,
    deterministic: bool,
) -> Result<(Action, ActorTag)> {
    if deterministic {
        return Ok((mean_action(control, &history.flat())?, ActorTag::Control));
    }
    match guiding {
        Some(g) if t % 2 == 0 => Ok((sample_action(g, state.flat(), noise)?, ActorTag::Guiding)),
        _ => Ok((
            sample_action(control, &history.flat(), noise)?,
            ActorTag::Control,
        )),
    }
}

/// Supervised distillation step: regress `D(h)` onto the guiding actor's
/// tanh-squashed mean actions at the stored full states. The guiding actor
/// is read-only. Returns the pre-step loss, a per-sample mean of squared
/// action-vector distances.
pub fn distillation_update(
    distill: &mut DistillationNet,
    guiding: &Mlp,
    histories: &Array2<f64>,
    states: &Array2<f64>,
) -> Result<f64> {
    let b = histories.nrows();
    if b == 0 || states.nrows() != b {
        return Err(Error::DimMismatch("distillation batch sizes".into()));
    }
    let (g_heads, _) = guiding.forward_batch(states)?;
    let d = g_heads.ncols() / 2;
    let mut targets = Array2::zeros((b, d));
    for i in 0..b {
        for j in 0..d {
            targets[[i, j]] = g_heads[[i, j]].tanh();
        }
    }
    let (raw, tape) = distill.net.forward_batch(histories)?;
    let out = raw.mapv(f64::tanh);
    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros((b, d));
    for i in 0..b {
        for j in 0..d {
            let diff = out[[i, j]] - targets[[i, j]];
            loss += diff * diff;
            grad[[i, j]] = 2.0 * diff * (1.0 - out[[i, j]] * out[[i, j]]) * inv_b;
        }
    }
    loss *= inv_b;
    let (grads, _) = distill.net.backward_batch(&tape, &grad)?;
    distill.adam.step(&mut distill.net, &grads)?;
    Ok(loss)
}

/// Pure distillation loss for the same batch (finite-difference oracle).
pub fn distillation_loss(
    distill: &Mlp,
    guiding: &Mlp,
    histories: &Array2<f64>,
    states: &Array2<f64>,
) -> Result<f64> {
    let (g_heads, _) = guiding.forward_batch(states)?;
    let d = g_heads.ncols() / 2;
    let (raw, _) = distill.forward_batch(histories)?;
    let b = histories.nrows();
    let mut loss = 0.0;
    for i in 0..b {
        for j in 0..d {
            let diff = raw[[i, j]].tanh() - g_heads[[i, j]].tanh();
            loss += diff * diff;
        }
    }
    Ok(loss / b as f64)
}

/// One step on the control objective: entropy-regularized Q maximization
/// (critic evaluated at the stored full state, CTDE) plus `lambda` times
/// the squared distance between the policy's tanh mean and the frozen
/// distillation output. Returns `(total loss, unweighted distillation
/// term)`.
#[allow(clippy::too_many_arguments)]
pub fn control_actor_update(
    control: &mut ControlActor,
    q: &dyn QFunction,
    histories: &Array2<f64>,
    states: &Array2<f64>,
    distill: &DistillationNet,
    alpha: f64,
    lambda: f64,
    noise: &Array2<f64>,
) -> Result<(f64, f64)> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidArg(format!(
            "distillation coefficient {lambda} must be >= 0"
        )));
    }
    let (heads, tape) = control.net.forward_batch(histories)?;
    let mut ev = actor_head_gradient(&heads, noise, q, states, alpha)?;

    let d_out = distill.predict(histories)?;
    let b = heads.nrows();
    let d = d_out.ncols();
    let inv_b = 1.0 / b as f64;
    let mut term = 0.0;
    for i in 0..b {
        for j in 0..d {
            let mu = heads[[i, j]].tanh();
            let diff = mu - d_out[[i, j]];
            term += diff * diff;
        }
    }
    term *= inv_b;

    // Skipped entirely at lambda = 0 so the update is bit-identical to the
    // plain SAC actor update.
    if lambda > 0.0 {
        for i in 0..b {
            for j in 0..d {
                let mu = heads[[i, j]].tanh();
                let diff = mu - d_out[[i, j]];
                ev.head_grad[[i, j]] += lambda * 2.0 * diff * (1.0 - mu * mu) * inv_b;
            }
        }
    }
    let loss = ev.loss + lambda * term;
    let (grads, _) = control.net.backward_batch(&tape, &ev.head_grad)?;
    control.adam.step(&mut control.net, &grads)?;
    Ok((loss, term))
}

/// Pure control objective (finite-difference oracle for the update above).
#[allow(clippy::too_many_arguments)]
pub fn control_actor_loss(
    control: &Mlp,
    q: &dyn QFunction,
    histories: &Array2<f64>,
    states: &Array2<f64>,
    distill: &DistillationNet,
    alpha: f64,
    lambda: f64,
    noise: &Array2<f64>,
) -> Result<f64> {
    let (heads, _) = control.forward_batch(histories)?;
    let sb = squash_batch(&heads, noise)?;
    let min_q = q.min_q(states, &sb.action)?;
    let d_out = distill.predict(histories)?;
    let b = heads.nrows();
    let d = d_out.ncols();
    let mut rl = 0.0;
    let mut term = 0.0;
    for i in 0..b {
        rl += alpha * sb.log_prob[i] - min_q[i];
        for j in 0..d {
            let diff = heads[[i, j]].tanh() - d_out[[i, j]];
            term += diff * diff;
        }
    }
    Ok((rl + lambda * term) / b as f64)
}
