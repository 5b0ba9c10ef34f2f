//! Forward-dynamics ensemble and its disagreement-based epistemic
//! uncertainty signal, warmup percentile calibration, and the
//! observability-blindness diagnostic.
//!
//! Members predict the next 25-dim feature vector from `(flattened
//! observation history, action)` on raw, unnormalized features. In
//! `partial_obs` mode the target is the next observation (so dimensions
//! occluded at t+1 are literally zero); in `full_state` mode the target is
//! the true next state, which only privileged training-time access can
//! provide.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::highway::{Action, ACTION_DIM, FEATURES_PER_ROW, STATE_DIM, STATE_ROWS};
use crate::numerics::{AdamState, Activation, Mlp};
use crate::replay::{ReplayBuffer, Transition, WarmupBuffer};

/// What the ensemble regresses onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Next partial observation (newest slot of the stored next history).
    PartialObs,
    /// True next full state, via privileged access.
    FullState,
}

impl std::fmt::Display for TargetMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TargetMode::PartialObs => "partial_obs",
            TargetMode::FullState => "full_state",
        })
    }
}

/// N independently initialized dynamics models sharing one architecture.
/// Diversity comes from initialization seeds only — no bootstrap
/// resampling — so identical seeds are a legitimate degenerate fixture.
#[derive(Debug, Clone)]
pub struct Ensemble {
    members: Vec<Mlp>,
    adams: Vec<AdamState>,
    pub target_mode: TargetMode,
    input_dim: usize,
}

impl Ensemble {
    pub fn new(
        k: usize,
        hidden: &[usize],
        lr: f64,
        target_mode: TargetMode,
        member_rngs: &mut [ChaCha8Rng],
    ) -> Result<Self> {
        if member_rngs.is_empty() {
            return Err(Error::InvalidArg("ensemble needs at least one member".into()));
        }
        let input_dim = k * STATE_DIM + ACTION_DIM;
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(STATE_DIM);
        let mut members = Vec::with_capacity(member_rngs.len());
        let mut adams = Vec::with_capacity(member_rngs.len());
        for rng in member_rngs.iter_mut() {
            let net = Mlp::init(&sizes, Activation::Relu, rng)?;
            adams.push(AdamState::new(&net, lr));
            members.push(net);
        }
        Ok(Self {
            members,
            adams,
            target_mode,
            input_dim,
        })
    }

    pub fn n(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[Mlp] {
        &self.members
    }

    fn input_row(&self, history_flat: &[f64], action: Action) -> Result<Array2<f64>> {
        if history_flat.len() + ACTION_DIM != self.input_dim {
            return Err(Error::DimMismatch(format!(
                "ensemble expects history of {} values, got {}",
                self.input_dim - ACTION_DIM,
                history_flat.len()
            )));
        }
        let mut row = Vec::with_capacity(self.input_dim);
        row.extend_from_slice(history_flat);
        row.push(action.accel);
        row.push(action.steer);
        Array2::from_shape_vec((1, self.input_dim), row)
            .map_err(|e| Error::DimMismatch(e.to_string()))
    }

    /// Per-member raw predictions of the next 25 features.
    pub fn predict(&self, history_flat: &[f64], action: Action) -> Result<Vec<Array1<f64>>> {
        let input = self.input_row(history_flat, action)?;
        self.members
            .iter()
            .map(|m| {
                let (out, _) = m.forward_batch(&input)?;
                Ok(out.row(0).to_owned())
            })
            .collect()
    }

    /// The regression target of one stored transition under the current
    /// target mode.
    pub fn target_of(&self, t: &Transition) -> [f64; STATE_DIM] {
        match self.target_mode {
            TargetMode::PartialObs => *t
                .next_history
                .newest()
                .expect("next history has at least one observation")
                .flat(),
            TargetMode::FullState => *t.next_full_state.flat(),
        }
    }

    /// One MSE Adam step per member, each on its own independently drawn
    /// minibatch (uniform with replacement). Returns per-member losses.
    pub fn update(
        &mut self,
        buffer: &ReplayBuffer,
        batch_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        if buffer.is_empty() {
            return Err(Error::Contract("ensemble update on empty buffer".into()));
        }
        // All batches drawn up front in member order: the update is
        // deterministic regardless of any future parallelism.
        let batches: Vec<Vec<usize>> = (0..self.members.len())
            .map(|_| buffer.sample_indices(batch_size, rng))
            .collect::<Result<_>>()?;
        let mut losses = Vec::with_capacity(self.members.len());
        for (m, indices) in batches.iter().enumerate() {
            let b = indices.len();
            let mut input = Array2::zeros((b, self.input_dim));
            let mut target = Array2::zeros((b, STATE_DIM));
            for (row, &ix) in indices.iter().enumerate() {
                let tr = buffer.get(ix);
                let hist_len = self.input_dim - ACTION_DIM;
                tr.history.write_flat(
                    &mut input.row_mut(row).as_slice_mut().expect("layout")[..hist_len],
                );
                input[[row, hist_len]] = tr.action.accel;
                input[[row, hist_len + 1]] = tr.action.steer;
                target
                    .row_mut(row)
                    .as_slice_mut()
                    .expect("layout")
                    .copy_from_slice(&self.target_of(tr));
            }
            let (pred, tape) = self.members[m].forward_batch(&input)?;
            let scale = 1.0 / (b * STATE_DIM) as f64;
            let mut grad = Array2::zeros((b, STATE_DIM));
            let mut loss = 0.0;
            for i in 0..b {
                for j in 0..STATE_DIM {
                    let d = pred[[i, j]] - target[[i, j]];
                    loss += d * d;
                    grad[[i, j]] = 2.0 * d * scale;
                }
            }
            loss *= scale;
            let (grads, _) = self.members[m].backward_batch(&tape, &grad)?;
            self.adams[m].step(&mut self.members[m], &grads)?;
            losses.push(loss);
        }
        Ok(losses)
    }

    /// Pure per-member MSE on an explicit batch (finite-difference oracle).
    pub fn member_loss(&self, member: usize, input: &Array2<f64>, target: &Array2<f64>) -> Result<f64> {
        let (pred, _) = self.members[member].forward_batch(input)?;
        let mut loss = 0.0;
        for i in 0..pred.nrows() {
            for j in 0..pred.ncols() {
                let d = pred[[i, j]] - target[[i, j]];
                loss += d * d;
            }
        }
        Ok(loss / (pred.nrows() * pred.ncols()) as f64)
    }

    pub fn member_mut(&mut self, member: usize) -> &mut Mlp {
        &mut self.members[member]
    }
}

/// Mean pairwise squared distance between member predictions:
/// `u = 2 / (N (N-1)) * sum_{i<j} ||p_i - p_j||^2`. Undefined for N < 2.
pub fn disagreement(preds: &[Array1<f64>]) -> Result<f64> {
    let n = preds.len();
    if n < 2 {
        return Err(Error::Contract(
            "disagreement needs at least two ensemble members".into(),
        ));
    }
    let len = preds[0].len();
    if preds.iter().any(|p| p.len() != len) {
        return Err(Error::DimMismatch("prediction lengths differ".into()));
    }
    let mut acc = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let mut sq = 0.0;
            for d in 0..len {
                let diff = preds[i][d] - preds[j][d];
                sq += diff * diff;
            }
            acc += sq;
        }
    }
    Ok(2.0 * acc / (n * (n - 1)) as f64)
}

/// Frozen uncertainty reference bounds from warmup.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Calibration {
    pub u_lo: f64,
    pub u_hi: f64,
    /// True when the warmup spread was degenerate and `u_hi` was widened.
    pub degenerate: bool,
}

/// Linear-interpolation percentile of already sorted values,
/// `q` in [0, 100]: rank `q/100 * (n-1)` interpolated between neighbors.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::InvalidArg("percentile of empty slice".into()));
    }
    let rank = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

const DEGENERATE_WIDENING: f64 = 1e-8;

/// 10th/90th percentile calibration over the warmup disagreement values.
/// Requires at least 10 values; a zero-spread warmup widens the interval
/// by a hair so the downstream linear mapping stays well-defined.
pub fn calibrate(warmup: &WarmupBuffer) -> Result<Calibration> {
    if warmup.len() < 10 {
        return Err(Error::Contract(format!(
            "calibration needs >= 10 warmup values, have {}",
            warmup.len()
        )));
    }
    let mut sorted = warmup.values().to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let u_lo = percentile_sorted(&sorted, 10.0)?;
    let u_hi = percentile_sorted(&sorted, 90.0)?;
    if u_hi > u_lo {
        Ok(Calibration {
            u_lo,
            u_hi,
            degenerate: false,
        })
    } else {
        Ok(Calibration {
            u_lo,
            u_hi: u_lo + DEGENERATE_WIDENING,
            degenerate: true,
        })
    }
}

/// Error/disagreement/target statistics over one partition of target
/// dimensions.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PartitionStats {
    pub mse: f64,
    pub disagreement: f64,
    pub target_std: f64,
    pub mean_abs_prediction: f64,
    pub mean_abs_target: f64,
    pub n_dims: u64,
}

#[derive(Debug, Default)]
struct PartitionAcc {
    sq_err: f64,
    err_count: u64,
    dis: f64,
    dis_count: u64,
    t_sum: f64,
    t_sumsq: f64,
    t_count: u64,
    abs_pred: f64,
    abs_target: f64,
}

impl PartitionAcc {
    fn finish(&self) -> Option<PartitionStats> {
        if self.t_count == 0 {
            return None;
        }
        let mean = self.t_sum / self.t_count as f64;
        let var = (self.t_sumsq / self.t_count as f64 - mean * mean).max(0.0);
        Some(PartitionStats {
            mse: self.sq_err / self.err_count as f64,
            disagreement: self.dis / self.dis_count as f64,
            target_std: var.sqrt(),
            mean_abs_prediction: self.abs_pred / self.err_count as f64,
            mean_abs_target: self.abs_target / self.t_count as f64,
            n_dims: self.t_count,
        })
    }
}

/// The observability-blindness diagnostic: per-dimension prediction error,
/// disagreement and target statistics split into visible vs occluded
/// dimensions.
///
/// The split follows the question each mode answers. In `partial_obs` mode
/// dimensions are partitioned by the occlusion applied to the *target*
/// observation (rows the mask zeroed at t+1): their targets are
/// structurally zero. In `full_state` mode they are partitioned by what is
/// hidden in the *input* (neighbor rows all-zero in the newest history
/// slot): targets are real kinematics either way, and the question becomes
/// whether missing current input shows up as error and disagreement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlindnessReport {
    pub mode: String,
    pub level: String,
    pub n_samples: usize,
    pub partition_basis: String,
    pub visible: PartitionStats,
    pub occluded: Option<PartitionStats>,
    pub no_occlusion_observed: bool,
    pub mean_disagreement: f64,
}

pub fn blindness_report(
    ens: &Ensemble,
    buffer: &ReplayBuffer,
    sample_size: usize,
    level_label: &str,
) -> Result<BlindnessReport> {
    if buffer.len() < sample_size || sample_size == 0 {
        return Err(Error::Contract(format!(
            "blindness report needs {sample_size} transitions, buffer has {}",
            buffer.len()
        )));
    }
    let start = buffer.len() - sample_size;
    let n = ens.n();
    let mut visible = PartitionAcc::default();
    let mut occluded = PartitionAcc::default();
    let mut u_sum = 0.0;
    for ix in start..buffer.len() {
        let tr = buffer.get(ix);
        let target = ens.target_of(tr);
        let preds = ens.predict(&tr.history.flat(), tr.action)?;
        if n >= 2 {
            u_sum += disagreement(&preds)?;
        }
        let occluded_rows = occluded_rows_for(ens.target_mode, tr);
        for dim in 0..STATE_DIM {
            let row = dim / FEATURES_PER_ROW;
            let acc = if row > 0 && occluded_rows[row - 1] {
                &mut occluded
            } else {
                &mut visible
            };
            for p in &preds {
                let d = p[dim] - target[dim];
                acc.sq_err += d * d;
                acc.abs_pred += p[dim].abs();
                acc.err_count += 1;
            }
            if n >= 2 {
                let mut pair = 0.0;
                for i in 0..n {
                    for j in (i + 1)..n {
                        let diff = preds[i][dim] - preds[j][dim];
                        pair += diff * diff;
                    }
                }
                acc.dis += 2.0 * pair / (n * (n - 1)) as f64;
                acc.dis_count += 1;
            }
            acc.t_sum += target[dim];
            acc.t_sumsq += target[dim] * target[dim];
            acc.abs_target += target[dim].abs();
            acc.t_count += 1;
        }
    }
    let occluded_stats = occluded.finish();
    Ok(BlindnessReport {
        mode: ens.target_mode.to_string(),
        level: level_label.to_string(),
        n_samples: sample_size,
        partition_basis: match ens.target_mode {
            TargetMode::PartialObs => "target_occlusion".to_string(),
            TargetMode::FullState => "input_occlusion".to_string(),
        },
        visible: visible.finish().ok_or_else(|| {
            Error::Contract("blindness report found no visible dimensions".into())
        })?,
        no_occlusion_observed: occluded_stats.is_none(),
        occluded: occluded_stats,
        mean_disagreement: if n >= 2 { u_sum / sample_size as f64 } else { 0.0 },
    })
}

fn occluded_rows_for(mode: TargetMode, tr: &Transition) -> [bool; STATE_ROWS - 1] {
    match mode {
        TargetMode::PartialObs => tr.occlusion_mask,
        TargetMode::FullState => {
            // Input-side: neighbor rows with no information in the newest
            // observation of the input history.
            let mut hidden = [false; STATE_ROWS - 1];
            if let Some(obs) = tr.history.newest() {
                for (nrow, h) in hidden.iter_mut().enumerate() {
                    *h = obs.row(nrow + 1).iter().all(|&v| v == 0.0);
                }
            }
            hidden
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::highway::FullState;
    use crate::pomdp::{observe, ObservationHistory, PomdpLevel};
    use crate::rng::derive_rng;

    fn rngs(n: usize, seed: u64) -> Vec<ChaCha8Rng> {
        (0..n).map(|i| derive_rng(seed, "member", &[i as u64])).collect()
    }

    fn ensemble(k: usize, n: usize, mode: TargetMode, seed: u64) -> Ensemble {
        let mut r = rngs(n, seed);
        Ensemble::new(k, &[64, 64], 1e-3, mode, &mut r).unwrap()
    }

    #[test]
    fn single_member_predicts_one_vector() {
        let ens = ensemble(1, 1, TargetMode::PartialObs, 0);
        let h = vec![0.1; STATE_DIM];
        let preds = ens
            .predict(&h, Action { accel: 0.2, steer: -0.1 })
            .unwrap();
        assert_eq!(preds.len(), 1);
        assert_eq!(preds[0].len(), STATE_DIM);
    }

    #[test]
    fn identical_seeds_give_identical_predictions() {
        let mut r = vec![
            derive_rng(7, "same", &[]),
            derive_rng(7, "same", &[]),
            derive_rng(7, "same", &[]),
        ];
        let ens = Ensemble::new(1, &[64, 64], 1e-3, TargetMode::PartialObs, &mut r).unwrap();
        let h = vec![0.3; STATE_DIM];
        let preds = ens
            .predict(&h, Action { accel: 0.1, steer: 0.4 })
            .unwrap();
        for p in &preds[1..] {
            assert_eq!(p, &preds[0]);
        }
        assert_eq!(disagreement(&preds).unwrap(), 0.0);
    }

    #[test]
    fn predictions_match_naive_forward_oracle() {
        let ens = ensemble(1, 3, TargetMode::PartialObs, 3);
        let h = vec![0.25; STATE_DIM];
        let a = Action { accel: -0.3, steer: 0.7 };
        let preds = ens.predict(&h, a).unwrap();
        let mut input = h.clone();
        input.push(a.accel);
        input.push(a.steer);
        for (m, p) in preds.iter().enumerate() {
            // Naive per-neuron forward, no ndarray dot.
            let net = &ens.members()[m];
            let mut act: Vec<f64> = input.clone();
            for l in 0..net.weights().len() {
                let w = &net.weights()[l];
                let bias = &net.biases()[l];
                let mut z = vec![0.0; w.ncols()];
                for j in 0..w.ncols() {
                    let mut s = bias[j];
                    for i in 0..w.nrows() {
                        s += act[i] * w[[i, j]];
                    }
                    z[j] = if l + 1 < net.weights().len() { s.max(0.0) } else { s };
                }
                act = z;
            }
            for d in 0..STATE_DIM {
                let rel = (p[d] - act[d]).abs() / act[d].abs().max(1e-30);
                assert!(rel < 1e-12, "member {m} dim {d}");
            }
        }
    }

    #[test]
    fn disagreement_hand_cases() {
        let p = vec![Array1::from(vec![0.0, 0.0]), Array1::from(vec![1.0, 1.0])];
        assert!((disagreement(&p).unwrap() - 2.0).abs() < 1e-15);

        let p = vec![
            Array1::from(vec![0.0]),
            Array1::from(vec![1.0]),
            Array1::from(vec![2.0]),
        ];
        assert!((disagreement(&p).unwrap() - 2.0).abs() < 1e-15);

        let p = vec![Array1::from(vec![0.5]); 4];
        assert_eq!(disagreement(&p).unwrap(), 0.0);

        assert!(disagreement(&p[..1]).is_err());
    }

    #[test]
    fn disagreement_matches_ordered_pair_oracle_and_scales_quadratically() {
        let mut rng = derive_rng(5, "dis", &[]);
        for n in 2..=7 {
            let preds: Vec<Array1<f64>> = (0..n)
                .map(|_| {
                    Array1::from_shape_fn(6, |_| {
                        rand::Rng::gen_range(&mut rng, -2.0..2.0)
                    })
                })
                .collect();
            let u = disagreement(&preds).unwrap();
            // Oracle: loop over ordered pairs i != j, divide by N(N-1).
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        let d: f64 = preds[i]
                            .iter()
                            .zip(preds[j].iter())
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        acc += d;
                    }
                }
            }
            let oracle = acc / (n * (n - 1)) as f64;
            assert!((u - oracle).abs() <= 1e-12 * oracle.max(1.0), "N = {n}");

            let scaled: Vec<Array1<f64>> = preds.iter().map(|p| p * 3.0).collect();
            let u9 = disagreement(&scaled).unwrap();
            assert!((u9 - 9.0 * u).abs() < 1e-9 * u9.max(1.0), "quadratic scaling");
        }
    }

    #[test]
    fn disagreement_is_permutation_invariant() {
        let preds: Vec<Array1<f64>> = (0..5)
            .map(|i| Array1::from(vec![i as f64, -(i as f64) * 0.5]))
            .collect();
        let u = disagreement(&preds).unwrap();
        let mut rev = preds.clone();
        rev.reverse();
        assert_eq!(disagreement(&rev).unwrap(), u);
    }

    fn constant_transition(k: usize) -> Transition {
        let mut f = [0.0; STATE_DIM];
        f[0] = 1.0;
        f[2] = 6.0;
        f[3] = 20.0;
        f[5] = 1.0;
        f[6] = 12.0;
        let state = FullState::from_features(f);
        let mut hist = ObservationHistory::new(k).unwrap();
        let (obs, _) = observe(&state, &PomdpLevel::none(), &mut derive_rng(0, "o", &[]));
        hist.push(obs);
        Transition {
            full_state: state,
            history: hist.clone(),
            action: Action { accel: 0.1, steer: 0.0 },
            reward: 0.5,
            next_full_state: state,
            next_history: {
                let mut h = hist.clone();
                h.push(obs);
                h
            },
            done: false,
            occlusion_mask: [false; 4],
        }
    }

    #[test]
    fn static_fixture_regression_converges() {
        let k = 1;
        let mut ens = ensemble(k, 2, TargetMode::PartialObs, 9);
        let mut buffer = ReplayBuffer::new(16).unwrap();
        buffer.push(constant_transition(k));
        let mut rng = derive_rng(10, "upd", &[]);
        let mut last = vec![f64::INFINITY];
        for _ in 0..2000 {
            last = ens.update(&buffer, 8, &mut rng).unwrap();
        }
        assert!(last.iter().all(|&l| l < 1e-4), "losses {last:?}");
    }

    #[test]
    fn identical_seed_members_stay_identical_under_shared_batches() {
        let mut r = vec![derive_rng(4, "twin", &[]), derive_rng(4, "twin", &[])];
        let mut ens = Ensemble::new(1, &[64, 64], 1e-3, TargetMode::PartialObs, &mut r).unwrap();
        let mut buffer = ReplayBuffer::new(4).unwrap();
        buffer.push(constant_transition(1));
        // Single-element buffer: every drawn batch is identical across members.
        let mut rng = derive_rng(11, "upd", &[]);
        for _ in 0..50 {
            ens.update(&buffer, 4, &mut rng).unwrap();
        }
        let a = &ens.members()[0];
        let b = &ens.members()[1];
        for i in 0..a.param_count() {
            assert_eq!(a.param(i), b.param(i));
        }
    }

    #[test]
    fn partial_obs_targets_preserve_occlusion_zero_structure() {
        let k = 2;
        let state = {
            let mut f = [0.0; STATE_DIM];
            f[0] = 1.0;
            for r in 1..STATE_ROWS {
                f[r * FEATURES_PER_ROW] = 1.0;
                f[r * FEATURES_PER_ROW + 1] = 5.0 * r as f64;
            }
            FullState::from_features(f)
        };
        let level = PomdpLevel::severe();
        let mut rng = derive_rng(12, "zs", &[]);
        let ens = ensemble(k, 2, TargetMode::PartialObs, 13);
        let mut checked = 0;
        for _ in 0..200 {
            let (o1, _) = observe(&state, &level, &mut rng);
            let (o2, m2) = observe(&state, &level, &mut rng);
            let mut h = ObservationHistory::new(k).unwrap();
            h.push(o1);
            let mut h2 = h.clone();
            h2.push(o2);
            let tr = Transition {
                full_state: state,
                history: h,
                action: Action { accel: 0.0, steer: 0.0 },
                reward: 0.0,
                next_full_state: state,
                next_history: h2,
                done: false,
                occlusion_mask: m2,
            };
            let target = ens.target_of(&tr);
            for (n, &hit) in m2.iter().enumerate() {
                if hit {
                    checked += 1;
                    let base = (n + 1) * FEATURES_PER_ROW;
                    assert!(target[base..base + FEATURES_PER_ROW]
                        .iter()
                        .all(|&v| v == 0.0));
                }
            }
        }
        assert!(checked > 50, "severe occlusion should trigger often");
    }

    #[test]
    fn calibration_percentiles_match_interpolation_oracle() {
        let mut w = WarmupBuffer::new(16);
        for v in 0..10 {
            w.push(v as f64);
        }
        let cal = calibrate(&w).unwrap();
        assert!((cal.u_lo - 0.9).abs() < 1e-12);
        assert!((cal.u_hi - 8.1).abs() < 1e-12);
        assert!(!cal.degenerate);
    }

    #[test]
    fn calibration_degenerate_spread_is_widened() {
        let mut w = WarmupBuffer::new(16);
        for _ in 0..12 {
            w.push(3.5);
        }
        let cal = calibrate(&w).unwrap();
        assert_eq!(cal.u_lo, 3.5);
        assert!(cal.u_hi > cal.u_lo);
        assert!(cal.degenerate);
    }

    #[test]
    fn calibration_requires_ten_values_and_caps_outliers() {
        let mut w = WarmupBuffer::new(16);
        for _ in 0..9 {
            w.push(1.0);
        }
        assert!(calibrate(&w).is_err());

        let mut w = WarmupBuffer::new(16);
        for _ in 0..10 {
            w.push(5.0);
        }
        w.push(15.0);
        let cal = calibrate(&w).unwrap();
        assert!(cal.u_hi < 15.0, "P90 {}", cal.u_hi);
    }

    #[test]
    fn shrinking_epistemic_signal_on_stationary_data() {
        let k = 1;
        let mut ens = ensemble(k, 3, TargetMode::PartialObs, 21);
        let mut buffer = ReplayBuffer::new(64).unwrap();
        // A small stationary pool of distinct transitions.
        let mut rng = derive_rng(22, "pool", &[]);
        for i in 0..32 {
            let mut tr = constant_transition(k);
            tr.action = Action {
                accel: ((i % 5) as f64 / 2.0 - 1.0).clamp(-1.0, 1.0),
                steer: ((i % 7) as f64 / 3.0 - 1.0).clamp(-1.0, 1.0),
            };
            buffer.push(tr);
        }
        let probe: Vec<(Vec<f64>, Action)> = (0..8)
            .map(|i| {
                (
                    buffer.get(i * 3).history.flat(),
                    buffer.get(i * 3).action,
                )
            })
            .collect();
        let mean_u = |e: &Ensemble| {
            probe
                .iter()
                .map(|(h, a)| disagreement(&e.predict(h, *a).unwrap()).unwrap())
                .sum::<f64>()
                / probe.len() as f64
        };
        for _ in 0..1000 {
            ens.update(&buffer, 16, &mut rng).unwrap();
        }
        let u_early = mean_u(&ens);
        for _ in 0..19_000 {
            ens.update(&buffer, 16, &mut rng).unwrap();
        }
        let u_late = mean_u(&ens);
        assert!(
            u_late < u_early,
            "disagreement should shrink: early {u_early}, late {u_late}"
        );
    }

    #[test]
    fn blindness_report_modes_and_structure() {
        let k = 2;
        let state = {
            let mut f = [0.0; STATE_DIM];
            f[0] = 1.0;
            f[2] = 6.0;
            f[3] = 20.0;
            for r in 1..STATE_ROWS {
                f[r * FEATURES_PER_ROW] = 1.0;
                f[r * FEATURES_PER_ROW + 1] = -8.0 + 6.0 * r as f64;
                f[r * FEATURES_PER_ROW + 3] = 2.0 - r as f64;
            }
            FullState::from_features(f)
        };
        let level = PomdpLevel::severe();
        let mut rng = derive_rng(30, "br", &[]);
        let mut buffer = ReplayBuffer::new(512).unwrap();
        let mut prev_obs = None;
        for _ in 0..256 {
            let (o1, _) = match prev_obs.take() {
                Some(o) => (o, [false; 4]),
                None => observe(&state, &level, &mut rng),
            };
            let (o2, m2) = observe(&state, &level, &mut rng);
            prev_obs = Some(o2);
            let mut h = ObservationHistory::new(k).unwrap();
            h.push(o1);
            let mut h2 = h.clone();
            h2.push(o2);
            buffer.push(Transition {
                full_state: state,
                history: h,
                action: Action { accel: 0.0, steer: 0.0 },
                reward: 0.0,
                next_full_state: state,
                next_history: h2,
                done: false,
                occlusion_mask: m2,
            });
        }
        let ens = ensemble(k, 3, TargetMode::PartialObs, 31);
        let report = blindness_report(&ens, &buffer, 200, "severe").unwrap();
        assert_eq!(report.mode, "partial_obs");
        assert_eq!(report.partition_basis, "target_occlusion");
        assert!(!report.no_occlusion_observed);
        let occ = report.occluded.expect("severe level occludes");
        assert_eq!(occ.target_std, 0.0, "occluded targets are structurally zero");
        assert_eq!(occ.mean_abs_target, 0.0);
        assert!(report.visible.target_std > 0.0);

        let ens_full = ensemble(k, 3, TargetMode::FullState, 32);
        let report = blindness_report(&ens_full, &buffer, 200, "severe").unwrap();
        assert_eq!(report.partition_basis, "input_occlusion");
        let occ = report.occluded.expect("severe level hides input rows");
        assert!(
            occ.target_std > 0.0,
            "full-state targets keep true kinematics under occlusion"
        );
    }

    #[test]
    fn blindness_report_flags_absence_of_occlusion() {
        let k = 1;
        let ens = ensemble(k, 2, TargetMode::PartialObs, 33);
        let mut buffer = ReplayBuffer::new(64).unwrap();
        for _ in 0..32 {
            buffer.push(constant_transition(k));
        }
        let report = blindness_report(&ens, &buffer, 16, "none").unwrap();
        assert!(report.no_occlusion_observed);
        assert!(report.occluded.is_none());
    }
}
