//! Shared soft actor-critic machinery: twin Q critics with Polyak targets,
//! TD target computation, entropy-regularized actor updates through the
//! reparameterization trick, and optional temperature auto-tuning.
//!
//! Actor losses are split into a pure loss evaluation and an explicit
//! head-gradient computation so every gradient path can be checked against
//! central finite differences.

use ndarray::{concatenate, Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{polyak_update, squash_batch, AdamState, Activation, Mlp};
use crate::replay::ReplayBuffer;

/// Twin Q networks over `(state, action)` with frozen-copy targets.
/// Targets only ever change through [`Critic::polyak`].
#[derive(Debug, Clone)]
pub struct Critic {
    pub q1: Mlp,
    pub q2: Mlp,
    pub target_q1: Mlp,
    pub target_q2: Mlp,
    pub adam_q1: AdamState,
    pub adam_q2: AdamState,
}

impl Critic {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        lr: f64,
        rng_q1: &mut ChaCha8Rng,
        rng_q2: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let q1 = Mlp::init(&sizes, Activation::Relu, rng_q1)?;
        let q2 = Mlp::init(&sizes, Activation::Relu, rng_q2)?;
        let adam_q1 = AdamState::new(&q1, lr);
        let adam_q2 = AdamState::new(&q2, lr);
        Ok(Self {
            target_q1: q1.clone(),
            target_q2: q2.clone(),
            q1,
            q2,
            adam_q1,
            adam_q2,
        })
    }

    pub fn polyak(&mut self, rho: f64) -> Result<()> {
        polyak_update(&mut self.target_q1, &self.q1, rho)?;
        polyak_update(&mut self.target_q2, &self.q2, rho)
    }
}

/// Anything that can score `(state, action)` batches and differentiate the
/// score w.r.t. actions. The twin critic implements it with the per-sample
/// minimum of its online nets; tests substitute hard-wired oracles.
pub trait QFunction {
    fn min_q_and_action_grad(
        &self,
        states: &Array2<f64>,
        actions: &Array2<f64>,
    ) -> Result<(Array1<f64>, Array2<f64>)>;

    fn min_q(&self, states: &Array2<f64>, actions: &Array2<f64>) -> Result<Array1<f64>> {
        Ok(self.min_q_and_action_grad(states, actions)?.0)
    }
}

impl QFunction for Critic {
    fn min_q_and_action_grad(
        &self,
        states: &Array2<f64>,
        actions: &Array2<f64>,
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        let action_dim = actions.ncols();
        let input = concatenate(Axis(1), &[states.view(), actions.view()])
            .map_err(|e| Error::DimMismatch(e.to_string()))?;
        let (v1, tape1) = self.q1.forward_batch(&input)?;
        let (v2, tape2) = self.q2.forward_batch(&input)?;
        let b = input.nrows();
        let mut minq = Array1::zeros(b);
        let mut sel1 = Array2::zeros((b, 1));
        let mut sel2 = Array2::zeros((b, 1));
        for i in 0..b {
            if v1[[i, 0]] <= v2[[i, 0]] {
                minq[i] = v1[[i, 0]];
                sel1[[i, 0]] = 1.0;
            } else {
                minq[i] = v2[[i, 0]];
                sel2[[i, 0]] = 1.0;
            }
        }
        let (_, in_grad1) = self.q1.backward_batch(&tape1, &sel1)?;
        let (_, in_grad2) = self.q2.backward_batch(&tape2, &sel2)?;
        let state_dim = states.ncols();
        let mut action_grad = Array2::zeros((b, action_dim));
        for i in 0..b {
            for j in 0..action_dim {
                action_grad[[i, j]] = in_grad1[[i, state_dim + j]] + in_grad2[[i, state_dim + j]];
            }
        }
        Ok((minq, action_grad))
    }
}

/// `y = r + gamma * (1 - done) * (min_target_q(s', a') - alpha * log pi(a'|.))`.
/// Kept separate so the arithmetic is testable in isolation.
pub fn td_combine(reward: f64, gamma: f64, done: f64, min_q: f64, alpha: f64, log_prob: f64) -> f64 {
    reward + gamma * (1.0 - done) * (min_q - alpha * log_prob)
}

/// TD targets from the target critics, with next actions sampled from
/// `next_actor` at `next_actor_inputs` (the guiding actor's full state for
/// guided methods, the single actor's history for vanilla SAC). No
/// gradient flows anywhere.
#[allow(clippy::too_many_arguments)]
pub fn td_target(
    critic: &Critic,
    next_actor: &Mlp,
    next_actor_inputs: &Array2<f64>,
    next_states: &Array2<f64>,
    rewards: &Array1<f64>,
    dones: &Array1<f64>,
    alpha: f64,
    gamma: f64,
    noise: &Array2<f64>,
) -> Result<Array1<f64>> {
    let b = rewards.len();
    if b == 0 {
        return Err(Error::Contract("td_target on empty batch".into()));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidArg(format!("gamma {gamma} outside [0, 1)")));
    }
    let (heads, _) = next_actor.forward_batch(next_actor_inputs)?;
    let sb = squash_batch(&heads, noise)?;
    let input = concatenate(Axis(1), &[next_states.view(), sb.action.view()])
        .map_err(|e| Error::DimMismatch(e.to_string()))?;
    let (t1, _) = critic.target_q1.forward_batch(&input)?;
    let (t2, _) = critic.target_q2.forward_batch(&input)?;
    let mut y = Array1::zeros(b);
    for i in 0..b {
        let min_q = t1[[i, 0]].min(t2[[i, 0]]);
        y[i] = td_combine(rewards[i], gamma, dones[i], min_q, alpha, sb.log_prob[i]);
        if !y[i].is_finite() {
            return Err(Error::NonFinite(format!("td target at batch index {i}")));
        }
    }
    Ok(y)
}

/// One Adam step on each online Q net toward `targets` (mean squared
/// error); returns the pre-step losses `(l_q1, l_q2)`.
pub fn critic_update(
    critic: &mut Critic,
    states: &Array2<f64>,
    actions: &Array2<f64>,
    targets: &Array1<f64>,
) -> Result<(f64, f64)> {
    let b = targets.len();
    if b == 0 || states.nrows() != b || actions.nrows() != b {
        return Err(Error::DimMismatch("critic_update batch sizes".into()));
    }
    let input = concatenate(Axis(1), &[states.view(), actions.view()])
        .map_err(|e| Error::DimMismatch(e.to_string()))?;
    let mut losses = [0.0; 2];
    for (idx, (net, adam)) in [
        (&mut critic.q1, &mut critic.adam_q1),
        (&mut critic.q2, &mut critic.adam_q2),
    ]
    .into_iter()
    .enumerate()
    {
        let (q, tape) = net.forward_batch(&input)?;
        let mut grad = Array2::zeros((b, 1));
        let mut loss = 0.0;
        for i in 0..b {
            let d = q[[i, 0]] - targets[i];
            loss += d * d;
            grad[[i, 0]] = 2.0 * d / b as f64;
        }
        loss /= b as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("critic loss (q{})", idx + 1)));
        }
        let (grads, _) = net.backward_batch(&tape, &grad)?;
        adam.step(net, &grads)?;
        losses[idx] = loss;
    }
    Ok((losses[0], losses[1]))
}

/// Loss and head-space gradient of the entropy-regularized actor
/// objective `mean(alpha * log pi - min Q)` under reparameterized actions.
#[derive(Debug)]
pub struct ActorEval {
    pub loss: f64,
    pub head_grad: Array2<f64>,
    pub log_probs: Array1<f64>,
    pub actions: Array2<f64>,
}

pub fn actor_head_gradient(
    heads: &Array2<f64>,
    noise: &Array2<f64>,
    q: &dyn QFunction,
    critic_states: &Array2<f64>,
    alpha: f64,
) -> Result<ActorEval> {
    let sb = squash_batch(heads, noise)?;
    let b = heads.nrows();
    let d = noise.ncols();
    let (min_q, q_action_grad) = q.min_q_and_action_grad(critic_states, &sb.action)?;
    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    for i in 0..b {
        loss += alpha * sb.log_prob[i] - min_q[i];
    }
    loss *= inv_b;
    if !loss.is_finite() {
        return Err(Error::NonFinite("actor loss".into()));
    }

    let mut head_grad = Array2::zeros((b, 2 * d));
    for i in 0..b {
        for j in 0..d {
            let a = sb.action[[i, j]];
            let sigma_eps = sb.sigma[[i, j]] * sb.noise[[i, j]];
            let da_dmu = 1.0 - a * a;
            // d(-minQ)/d(action), already averaged over the batch.
            let q_contrib = -inv_b * q_action_grad[[i, j]];
            let d_mean = alpha * inv_b * 2.0 * a + q_contrib * da_dmu;
            let d_log_std = alpha * inv_b * (2.0 * a * sigma_eps - 1.0)
                + q_contrib * da_dmu * sigma_eps;
            head_grad[[i, j]] = d_mean;
            head_grad[[i, d + j]] = d_log_std * sb.clamp_pass[[i, j]];
        }
    }
    Ok(ActorEval {
        loss,
        head_grad,
        log_probs: sb.log_prob,
        actions: sb.action,
    })
}

/// Pure evaluation of the actor objective (no gradients); the finite
/// difference oracle for [`actor_head_gradient`]-based updates.
pub fn sac_actor_loss(
    actor: &Mlp,
    inputs: &Array2<f64>,
    q: &dyn QFunction,
    critic_states: &Array2<f64>,
    alpha: f64,
    noise: &Array2<f64>,
) -> Result<f64> {
    let (heads, _) = actor.forward_batch(inputs)?;
    let sb = squash_batch(&heads, noise)?;
    let min_q = q.min_q(critic_states, &sb.action)?;
    let b = heads.nrows() as f64;
    let mut loss = 0.0;
    for i in 0..heads.nrows() {
        loss += alpha * sb.log_prob[i] - min_q[i];
    }
    Ok(loss / b)
}

/// One Adam step maximizing `E[min Q(s, a~) - alpha log pi(a~)]`; the Q
/// function is read-only here. Returns the pre-step loss and log-probs.
#[allow(clippy::too_many_arguments)]
pub fn sac_actor_update(
    actor: &mut Mlp,
    adam: &mut AdamState,
    inputs: &Array2<f64>,
    q: &dyn QFunction,
    critic_states: &Array2<f64>,
    alpha: f64,
    noise: &Array2<f64>,
) -> Result<(f64, Array1<f64>)> {
    let (heads, tape) = actor.forward_batch(inputs)?;
    let ev = actor_head_gradient(&heads, noise, q, critic_states, alpha)?;
    let (grads, _) = actor.backward_batch(&tape, &ev.head_grad)?;
    adam.step(actor, &grads)?;
    Ok((ev.loss, ev.log_probs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    Fixed,
    Auto,
}

/// Entropy temperature; `auto` runs scalar Adam on log-alpha toward a
/// target policy entropy.
#[derive(Debug, Clone)]
pub struct EntropyTemperature {
    log_alpha: f64,
    pub mode: AlphaMode,
    pub target_entropy: f64,
    lr: f64,
    m: f64,
    v: f64,
    steps: u64,
}

impl EntropyTemperature {
    pub fn fixed(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidArg(format!("alpha {alpha} must be > 0")));
        }
        Ok(Self {
            log_alpha: alpha.ln(),
            mode: AlphaMode::Fixed,
            target_entropy: 0.0,
            lr: 0.0,
            m: 0.0,
            v: 0.0,
            steps: 0,
        })
    }

    pub fn auto(initial_alpha: f64, target_entropy: f64, lr: f64) -> Result<Self> {
        if !(initial_alpha.is_finite() && initial_alpha > 0.0) {
            return Err(Error::InvalidArg("initial alpha must be > 0".into()));
        }
        Ok(Self {
            log_alpha: initial_alpha.ln(),
            mode: AlphaMode::Auto,
            target_entropy,
            lr,
            m: 0.0,
            v: 0.0,
            steps: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// Gradient step on log-alpha; a no-op in fixed mode.
    pub fn update(&mut self, log_probs: &Array1<f64>) -> f64 {
        if self.mode == AlphaMode::Fixed || log_probs.is_empty() {
            return self.alpha();
        }
        let mean_lp = log_probs.mean().expect("non-empty");
        let grad = -(mean_lp + self.target_entropy);
        self.steps += 1;
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        self.m = b1 * self.m + (1.0 - b1) * grad;
        self.v = b2 * self.v + (1.0 - b2) * grad * grad;
        let mh = self.m / (1.0 - b1.powi(self.steps as i32));
        let vh = self.v / (1.0 - b2.powi(self.steps as i32));
        self.log_alpha -= self.lr * mh / (vh.sqrt() + eps);
        self.alpha()
    }
}

/// Column-major batch views of sampled transitions, shaped for the update
/// functions above.
#[derive(Debug)]
pub struct Minibatch {
    pub states: Array2<f64>,
    pub histories: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub dones: Array1<f64>,
    pub next_states: Array2<f64>,
    pub next_histories: Array2<f64>,
}

impl Minibatch {
    pub fn assemble(buffer: &ReplayBuffer, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Contract("empty minibatch".into()));
        }
        let first = buffer.get(indices[0]);
        let state_dim = first.full_state.flat().len();
        let hist_dim = first.history.flat_len();
        let b = indices.len();
        let mut states = Array2::zeros((b, state_dim));
        let mut histories = Array2::zeros((b, hist_dim));
        let mut actions = Array2::zeros((b, 2));
        let mut rewards = Array1::zeros(b);
        let mut dones = Array1::zeros(b);
        let mut next_states = Array2::zeros((b, state_dim));
        let mut next_histories = Array2::zeros((b, hist_dim));
        for (row, &ix) in indices.iter().enumerate() {
            let t = buffer.get(ix);
            states
                .row_mut(row)
                .as_slice_mut()
                .expect("standard layout")
                .copy_from_slice(t.full_state.flat());
            t.history
                .write_flat(histories.row_mut(row).as_slice_mut().expect("layout"));
            actions[[row, 0]] = t.action.accel;
            actions[[row, 1]] = t.action.steer;
            rewards[row] = t.reward;
            dones[row] = if t.done { 1.0 } else { 0.0 };
            next_states
                .row_mut(row)
                .as_slice_mut()
                .expect("layout")
                .copy_from_slice(t.next_full_state.flat());
            t.next_history
                .write_flat(next_histories.row_mut(row).as_slice_mut().expect("layout"));
        }
        Ok(Self {
            states,
            histories,
            actions,
            rewards,
            dones,
            next_states,
            next_histories,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use ndarray::Array2;
    use rand::Rng;

    fn standard_normal(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
        Array2::from_shape_fn(shape, |_| rng.sample(rand_distr::StandardNormal))
    }

    fn small_critic(state_dim: usize, seed: u64) -> Critic {
        let mut r1 = derive_rng(seed, "q1", &[]);
        let mut r2 = derive_rng(seed, "q2", &[]);
        Critic::new(state_dim, 2, &[16, 16], 3e-4, &mut r1, &mut r2).unwrap()
    }

    #[test]
    fn td_combine_hand_case() {
        let y = td_combine(1.0, 0.99, 0.0, 10.0, 0.2, -1.0);
        assert!((y - 11.098).abs() < 1e-12, "y = {y}");
    }

    #[test]
    fn td_target_terminal_cut_and_zero_gamma() {
        let critic = small_critic(4, 1);
        let mut rng = derive_rng(2, "actor", &[]);
        let actor = Mlp::init(&[4, 8, 4], Activation::Relu, &mut rng).unwrap();
        let b = 6;
        let inputs = standard_normal(&mut rng, (b, 4));
        let states = inputs.clone();
        let rewards = Array1::from_iter((0..b).map(|i| i as f64 - 2.0));
        let noise = standard_normal(&mut rng, (b, 2));

        let all_done = Array1::ones(b);
        let y = td_target(
            &critic, &actor, &inputs, &states, &rewards, &all_done, 0.2, 0.99, &noise,
        )
        .unwrap();
        for i in 0..b {
            assert_eq!(y[i], rewards[i]);
        }

        let none_done = Array1::zeros(b);
        let y = td_target(
            &critic, &actor, &inputs, &states, &rewards, &none_done, 0.2, 0.0, &noise,
        )
        .unwrap();
        for i in 0..b {
            assert_eq!(y[i], rewards[i]);
        }
    }

    #[test]
    fn td_target_never_exceeds_single_net_expressions() {
        // Min-clipping: computing y with the pairwise min never exceeds the
        // value computed from either target net alone.
        let critic = small_critic(4, 3);
        let mut rng = derive_rng(4, "mix", &[]);
        let actor = Mlp::init(&[4, 8, 4], Activation::Relu, &mut rng).unwrap();
        let b = 32;
        let inputs = standard_normal(&mut rng, (b, 4));
        let rewards = standard_normal(&mut rng, (b, 1)).column(0).to_owned();
        let dones = Array1::zeros(b);
        let noise = standard_normal(&mut rng, (b, 2));
        let y = td_target(
            &critic, &actor, &inputs, &inputs, &rewards, &dones, 0.2, 0.99, &noise,
        )
        .unwrap();

        for single in [true, false] {
            let mut c = critic.clone();
            if single {
                c.target_q2 = c.target_q1.clone();
            } else {
                c.target_q1 = c.target_q2.clone();
            }
            let y_single = td_target(
                &c, &actor, &inputs, &inputs, &rewards, &dones, 0.2, 0.99, &noise,
            )
            .unwrap();
            for i in 0..b {
                assert!(y[i] <= y_single[i] + 1e-12);
            }
        }
    }

    #[test]
    fn critic_update_loss_matches_naive_recomputation() {
        let mut critic = small_critic(3, 5);
        let mut rng = derive_rng(6, "data", &[]);
        let b = 16;
        let states = standard_normal(&mut rng, (b, 3));
        let actions = standard_normal(&mut rng, (b, 2)).mapv(f64::tanh);
        let targets = standard_normal(&mut rng, (b, 1)).column(0).to_owned();

        let input = concatenate(Axis(1), &[states.view(), actions.view()]).unwrap();
        let (q1, _) = critic.q1.forward_batch(&input).unwrap();
        let naive: f64 = (0..b)
            .map(|i| (q1[[i, 0]] - targets[i]).powi(2))
            .sum::<f64>()
            / b as f64;

        let (l1, _l2) = critic_update(&mut critic, &states, &actions, &targets).unwrap();
        assert!((l1 - naive).abs() < 1e-10, "{l1} vs {naive}");
    }

    #[test]
    fn critic_update_regresses_a_fixed_transition() {
        let mut critic = small_critic(3, 7);
        let states = Array2::from_shape_vec((1, 3), vec![0.2, -0.4, 1.0]).unwrap();
        let actions = Array2::from_shape_vec((1, 2), vec![0.3, -0.1]).unwrap();
        let targets = Array1::from(vec![2.5]);
        let mut last = f64::INFINITY;
        for _ in 0..500 {
            let (l1, l2) = critic_update(&mut critic, &states, &actions, &targets).unwrap();
            last = l1.max(l2);
        }
        assert!(last.sqrt() < 0.01, "|Q - y| = {}", last.sqrt());
    }

    #[test]
    fn critic_update_with_matching_targets_is_stationary() {
        let mut critic = small_critic(3, 8);
        critic.q2 = critic.q1.clone();
        let states = Array2::from_shape_vec((2, 3), vec![0.1, 0.2, 0.3, -0.5, 0.0, 0.4]).unwrap();
        let actions = Array2::from_shape_vec((2, 2), vec![0.2, -0.2, 0.5, 0.1]).unwrap();
        let input = concatenate(Axis(1), &[states.view(), actions.view()]).unwrap();
        let (q, _) = critic.q1.forward_batch(&input).unwrap();
        let targets = q.column(0).to_owned();
        let before: Vec<f64> = (0..critic.q1.param_count()).map(|i| critic.q1.param(i)).collect();
        let (l1, l2) = critic_update(&mut critic, &states, &actions, &targets).unwrap();
        assert_eq!(l1, 0.0);
        assert_eq!(l2, 0.0);
        for (i, b) in before.iter().enumerate() {
            assert!((critic.q1.param(i) - b).abs() < 1e-12);
            assert!((critic.q2.param(i) - b).abs() < 1e-12);
        }
    }

    /// Hard-wired oracle: Q(s, a) = -||a||^2.
    struct QuadraticPenalty;

    impl QFunction for QuadraticPenalty {
        fn min_q_and_action_grad(
            &self,
            _states: &Array2<f64>,
            actions: &Array2<f64>,
        ) -> Result<(Array1<f64>, Array2<f64>)> {
            let q = actions.rows().into_iter().map(|r| -r.dot(&r)).collect();
            Ok((q, actions.mapv(|a| -2.0 * a)))
        }
    }

    /// Constant Q: no preference signal at all.
    struct FlatQ;

    impl QFunction for FlatQ {
        fn min_q_and_action_grad(
            &self,
            _states: &Array2<f64>,
            actions: &Array2<f64>,
        ) -> Result<(Array1<f64>, Array2<f64>)> {
            Ok((Array1::ones(actions.nrows()), Array2::zeros(actions.dim())))
        }
    }

    #[test]
    fn flat_objective_gives_zero_gradient() {
        let mut rng = derive_rng(9, "flat", &[]);
        let actor = Mlp::init(&[3, 8, 4], Activation::Relu, &mut rng).unwrap();
        let inputs = standard_normal(&mut rng, (4, 3));
        let noise = standard_normal(&mut rng, (4, 2));
        let (heads, _) = actor.forward_batch(&inputs).unwrap();
        let ev = actor_head_gradient(&heads, &noise, &FlatQ, &inputs, 0.0).unwrap();
        assert!(ev.head_grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn actor_mean_converges_to_quadratic_optimum() {
        let mut rng = derive_rng(10, "quad", &[]);
        let mut actor = Mlp::init(&[3, 32, 4], Activation::Relu, &mut rng).unwrap();
        let mut adam = AdamState::new(&actor, 3e-3);
        let inputs = standard_normal(&mut rng, (16, 3));
        for _ in 0..2000 {
            let noise = standard_normal(&mut rng, (16, 2));
            sac_actor_update(
                &mut actor, &mut adam, &inputs, &QuadraticPenalty, &inputs, 0.05, &noise,
            )
            .unwrap();
        }
        let (heads, _) = actor.forward_batch(&inputs).unwrap();
        for i in 0..heads.nrows() {
            let m = (heads[[i, 0]].tanh().powi(2) + heads[[i, 1]].tanh().powi(2)).sqrt();
            assert!(m < 0.05, "|mean action| = {m}");
        }
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let mut rng = derive_rng(11, "fd", &[]);
        let actor = Mlp::init(&[3, 12, 4], Activation::Relu, &mut rng).unwrap();
        let critic = small_critic(3, 12);
        let inputs = standard_normal(&mut rng, (6, 3));
        let noise = standard_normal(&mut rng, (6, 2));
        let alpha = 0.2;

        let (heads, tape) = actor.forward_batch(&inputs).unwrap();
        let ev = actor_head_gradient(&heads, &noise, &critic, &inputs, alpha).unwrap();
        let (grads, _) = actor.backward_batch(&tape, &ev.head_grad).unwrap();
        let mut flat = Vec::new();
        for l in 0..grads.weights.len() {
            flat.extend(grads.weights[l].iter().copied());
            flat.extend(grads.biases[l].iter().copied());
        }

        let mut probe = actor.clone();
        let h = 1e-5;
        let mut ok = 0;
        let total = probe.param_count();
        for i in 0..total {
            let orig = probe.param(i);
            probe.set_param(i, orig + h);
            let up = sac_actor_loss(&probe, &inputs, &critic, &inputs, alpha, &noise).unwrap();
            probe.set_param(i, orig - h);
            let down = sac_actor_loss(&probe, &inputs, &critic, &inputs, alpha, &noise).unwrap();
            probe.set_param(i, orig);
            let fd = (up - down) / (2.0 * h);
            let denom = fd.abs().max(flat[i].abs()).max(1e-7);
            if (fd - flat[i]).abs() / denom < 1e-3 {
                ok += 1;
            }
        }
        assert!(
            ok as f64 >= 0.99 * total as f64,
            "{ok}/{total} gradients matched"
        );
    }

    #[test]
    fn temperature_fixed_mode_is_inert() {
        let mut temp = EntropyTemperature::fixed(0.2).unwrap();
        let before = temp.alpha();
        temp.update(&Array1::from(vec![-5.0, -1.0]));
        assert_eq!(temp.alpha(), before);
    }

    #[test]
    fn temperature_stationary_at_target() {
        let mut temp = EntropyTemperature::auto(0.2, 2.0, 3e-4).unwrap();
        let before = temp.alpha();
        // mean log-prob == -target_entropy: zero gradient.
        temp.update(&Array1::from(vec![-2.0, -2.0]));
        assert!((temp.alpha() - before).abs() < 1e-15);
    }

    #[test]
    fn temperature_rises_when_entropy_is_low() {
        let mut temp = EntropyTemperature::auto(0.2, 2.0, 1e-2).unwrap();
        let before = temp.alpha();
        // Entropy proxy -log_probs = 1 < target 2: alpha must increase.
        temp.update(&Array1::from(vec![-1.0, -1.0]));
        assert!(temp.alpha() > before);
    }
}
