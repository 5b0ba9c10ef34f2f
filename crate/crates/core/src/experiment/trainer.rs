//! The training loop: alternating-actor data collection, per-step
//! uncertainty logging, warmup-deferred RL updates, every-step ensemble
//! training, calibration freezing, periodic evaluation, and artifact
//! persistence.
//!
//! Update order within a step: act, store, compute disagreement and the
//! coefficient, then (post-warmup) critic, guiding actor, control actor,
//! distillation net, then the ensemble, then Polyak averaging. RL updates
//! are deferred during the first W steps while data collection and
//! uncertainty logging proceed, so the replay buffer is seeded identically
//! across guided methods at equal seed.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiment::config::{Method, RunConfig};
use crate::experiment::evaluation::{evaluate, EvalRecord, PolicyCheckpoint};
use crate::experiment::summary::{last5_stats, DisagreementSummary, RunSummary};
use crate::experiment::traces::{EvalCsvRow, EvalCsvWriter, StepRow, TrainCsvWriter};
use crate::guidance::{threshold_from_warmup, GuidanceSchedule, ScheduleKind};
use crate::guided::{
    control_actor_update, distillation_update, select_action, ControlActor, DistillationNet,
    GuidingActor,
};
use crate::highway::{FullState, HighwayEnv, ACTION_DIM, STATE_DIM};
use crate::numerics::Mlp;
use crate::pomdp::{observe, ObservationHistory, PomdpLevel};
use crate::replay::{ReplayBuffer, Transition, WarmupBuffer};
use crate::rng::{derive_rng, RngHub};
use crate::sac::{
    critic_update, sac_actor_update, td_target, AlphaMode, Critic, EntropyTemperature, Minibatch,
};
use crate::uncertainty::{blindness_report, calibrate, disagreement, Ensemble};

/// A live training run. [`train_run`] drives it end to end; tests can also
/// step it manually and inspect internals.
pub struct Trainer {
    cfg: RunConfig,
    level: PomdpLevel,
    env: HighwayEnv,
    rng: RngHub,
    buffer: ReplayBuffer,
    warmup: WarmupBuffer,
    schedule: Option<GuidanceSchedule>,
    critic: Critic,
    guiding: Option<GuidingActor>,
    control: ControlActor,
    distill: Option<DistillationNet>,
    ensemble: Option<Ensemble>,
    temperature: EntropyTemperature,
    state: FullState,
    hist: ObservationHistory,
    t: u64,
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let level = cfg.level()?;
        let mut rng = RngHub::new(cfg.seed);
        let mut env = HighwayEnv::new(cfg.env.clone())?;

        let lr = cfg.sac.learning_rate;
        let mut q1_rng = derive_rng(cfg.seed, "init_critic_q1", &[]);
        let mut q2_rng = derive_rng(cfg.seed, "init_critic_q2", &[]);
        let critic = Critic::new(STATE_DIM, ACTION_DIM, &cfg.sac.hidden, lr, &mut q1_rng, &mut q2_rng)?;
        let mut control_rng = derive_rng(cfg.seed, "init_control", &[]);
        let control = ControlActor::new(cfg.history_k, &cfg.sac.hidden, lr, &mut control_rng)?;

        let (guiding, distill) = if cfg.method.is_guided() {
            let mut g_rng = derive_rng(cfg.seed, "init_guiding", &[]);
            let mut d_rng = derive_rng(cfg.seed, "init_distill", &[]);
            (
                Some(GuidingActor::new(&cfg.sac.hidden, lr, &mut g_rng)?),
                Some(DistillationNet::new(cfg.history_k, &cfg.sac.hidden, lr, &mut d_rng)?),
            )
        } else {
            (None, None)
        };

        let ensemble = if cfg.method.has_ensemble() {
            let mut member_rngs: Vec<_> = (0..cfg.ensemble.n_members)
                .map(|i| derive_rng(cfg.seed, "init_ensemble", &[i as u64]))
                .collect();
            Some(Ensemble::new(
                cfg.history_k,
                &cfg.ensemble.hidden,
                cfg.ensemble.learning_rate,
                cfg.ensemble.target_mode,
                &mut member_rngs,
            )?)
        } else {
            None
        };

        let schedule = match cfg.method {
            Method::VanillaSac => None,
            Method::GsacFixed => Some(GuidanceSchedule::new(
                ScheduleKind::Fixed {
                    value: cfg.guidance.fixed_lambda,
                },
                cfg.guidance.warmup_steps,
            )?),
            Method::BaGsac => Some(GuidanceSchedule::new(
                ScheduleKind::Adaptive {
                    lambda_min: cfg.guidance.lambda_min,
                    lambda_max: cfg.guidance.lambda_max,
                    single_member: cfg.ensemble.n_members < 2,
                },
                cfg.guidance.warmup_steps,
            )?),
            Method::LinearDecay => Some(GuidanceSchedule::new(
                ScheduleKind::LinearDecay {
                    lambda_min: cfg.guidance.lambda_min,
                    lambda_max: cfg.guidance.lambda_max,
                    total_steps: cfg.decay_steps(),
                },
                cfg.guidance.warmup_steps,
            )?),
            Method::GsacThreshold => Some(GuidanceSchedule::new(
                ScheduleKind::Threshold {
                    lambda_min: cfg.guidance.lambda_min,
                    lambda_max: cfg.guidance.lambda_max,
                },
                cfg.guidance.warmup_steps,
            )?),
        };

        let temperature = match cfg.sac.alpha_mode {
            AlphaMode::Fixed => EntropyTemperature::fixed(cfg.sac.alpha)?,
            AlphaMode::Auto => {
                EntropyTemperature::auto(cfg.sac.alpha, cfg.sac.target_entropy, lr)?
            }
        };

        let buffer = ReplayBuffer::new(cfg.sac.buffer_capacity)?;
        let warmup = WarmupBuffer::new(cfg.guidance.warmup_steps as usize);

        let seed = rng.env.gen::<u64>();
        let state = env.reset(seed)?;
        let mut hist = ObservationHistory::new(cfg.history_k)?;
        let (obs, _) = observe(&state, &level, &mut rng.obs);
        hist.push(obs);

        Ok(Self {
            cfg,
            level,
            env,
            rng,
            buffer,
            warmup,
            schedule,
            critic,
            guiding,
            control,
            distill,
            ensemble,
            temperature,
            state,
            hist,
            t: 0,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn ensemble(&self) -> Option<&Ensemble> {
        self.ensemble.as_ref()
    }

    pub fn schedule(&self) -> Option<&GuidanceSchedule> {
        self.schedule.as_ref()
    }

    pub fn warmup(&self) -> &WarmupBuffer {
        &self.warmup
    }

    pub fn control_net(&self) -> &Mlp {
        &self.control.net
    }

    pub fn step_index(&self) -> u64 {
        self.t
    }

    pub fn level(&self) -> &PomdpLevel {
        &self.level
    }

    fn normal_vec(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> Array1<f64> {
        Array1::from_shape_fn(n, |_| rng.sample(rand_distr::StandardNormal))
    }

    fn normal_mat(rng: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.sample(rand_distr::StandardNormal))
    }

    fn reset_episode(&mut self) -> Result<()> {
        let seed = self.rng.env.gen::<u64>();
        self.state = self.env.reset(seed)?;
        self.hist = ObservationHistory::new(self.cfg.history_k)?;
        let (obs, _) = observe(&self.state, &self.level, &mut self.rng.obs);
        self.hist.push(obs);
        Ok(())
    }

    fn freeze_schedule(&mut self) -> Result<()> {
        if let Some(s) = self.schedule.as_mut() {
            match s.kind {
                ScheduleKind::Adaptive {
                    single_member: false,
                    ..
                } => {
                    let cal = calibrate(&self.warmup)?;
                    if cal.degenerate {
                        eprintln!(
                            "warning: degenerate warmup disagreement spread; widened calibration interval"
                        );
                    }
                    s.freeze_calibration(cal)?;
                }
                ScheduleKind::Threshold { .. } => {
                    let tau = threshold_from_warmup(&self.warmup)?;
                    s.set_threshold(tau)?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// One environment step plus the updates it triggers.
    pub fn step(&mut self) -> Result<StepRow> {
        let t = self.t;
        let w = self.cfg.guidance.warmup_steps;

        let noise = Self::normal_vec(&mut self.rng.agent, ACTION_DIM);
        let guiding_net = self.guiding.as_ref().map(|g| &g.net);
        let (action, tag) = select_action(
            t,
            guiding_net,
            &self.control.net,
            &self.state,
            &self.hist,
            &noise,
            false,
        )?;

        let sr = self.env.step(action)?;
        let (next_obs, occl) = observe(&sr.next_state, &self.level, &mut self.rng.obs);
        let mut next_hist = self.hist.clone();
        next_hist.push(next_obs);

        self.buffer.push(Transition {
            full_state: self.state,
            history: self.hist.clone(),
            action,
            reward: sr.reward,
            next_full_state: sr.next_state,
            next_history: next_hist.clone(),
            done: sr.terminated,
            occlusion_mask: occl,
        });

        // Disagreement at the executed action, before this step's ensemble
        // gradient update.
        let u = match &self.ensemble {
            Some(ens) if ens.n() >= 2 => {
                Some(disagreement(&ens.predict(&self.hist.flat(), action)?)?)
            }
            _ => None,
        };
        if t < w {
            if let Some(u) = u {
                self.warmup.push(u);
            }
        }
        if t == w {
            self.freeze_schedule()?;
        }
        let lambda = match &self.schedule {
            Some(s) => Some(s.lambda_at(t, u)?),
            None => None,
        };

        let mut critic_loss = None;
        let mut control_loss = None;
        let mut distill_loss = None;
        if t >= w && !self.buffer.is_empty() {
            for _ in 0..self.cfg.sac.updates_per_step {
                let (c, a, d) = self.rl_update(lambda)?;
                critic_loss = Some(c);
                control_loss = Some(a);
                distill_loss = d;
            }
        }

        if let Some(ens) = self.ensemble.as_mut() {
            ens.update(&self.buffer, self.cfg.ensemble.batch_size, &mut self.rng.ensemble)?;
        }

        self.state = sr.next_state;
        self.hist = next_hist;
        if sr.terminated || sr.truncated {
            self.reset_episode()?;
        }
        self.t += 1;

        Ok(StepRow {
            step: t,
            actor_tag: tag.as_char(),
            reward: sr.reward,
            lambda,
            disagreement: u,
            critic_loss,
            control_loss,
            distill_loss,
        })
    }

    /// Critic, actor(s) and distillation updates on one fresh minibatch.
    /// Returns `(critic loss, policy loss, distillation loss)`.
    fn rl_update(&mut self, lambda: Option<f64>) -> Result<(f64, f64, Option<f64>)> {
        let batch = self
            .buffer
            .sample_indices(self.cfg.sac.batch_size, &mut self.rng.update)?;
        let mb = Minibatch::assemble(&self.buffer, &batch)?;
        let b = batch.len();
        let alpha = self.temperature.alpha();
        let gamma = self.cfg.sac.gamma;
        let rho = self.cfg.sac.polyak_rho;

        let td_noise = Self::normal_mat(&mut self.rng.update, b, ACTION_DIM);
        match self.cfg.method {
            Method::VanillaSac => {
                let y = td_target(
                    &self.critic,
                    &self.control.net,
                    &mb.next_histories,
                    &mb.next_states,
                    &mb.rewards,
                    &mb.dones,
                    alpha,
                    gamma,
                    &td_noise,
                )?;
                let (l1, l2) = critic_update(&mut self.critic, &mb.states, &mb.actions, &y)?;
                let actor_noise = Self::normal_mat(&mut self.rng.update, b, ACTION_DIM);
                let (al, logp) = sac_actor_update(
                    &mut self.control.net,
                    &mut self.control.adam,
                    &mb.histories,
                    &self.critic,
                    &mb.states,
                    alpha,
                    &actor_noise,
                )?;
                self.temperature.update(&logp);
                self.critic.polyak(rho)?;
                Ok((0.5 * (l1 + l2), al, None))
            }
            _ => {
                let guiding = self
                    .guiding
                    .as_mut()
                    .expect("guided methods construct a guiding actor");
                let distill = self
                    .distill
                    .as_mut()
                    .expect("guided methods construct a distillation net");
                let lambda = lambda.expect("guided methods have a schedule");

                let y = td_target(
                    &self.critic,
                    &guiding.net,
                    &mb.next_states,
                    &mb.next_states,
                    &mb.rewards,
                    &mb.dones,
                    alpha,
                    gamma,
                    &td_noise,
                )?;
                let (l1, l2) = critic_update(&mut self.critic, &mb.states, &mb.actions, &y)?;

                let g_noise = Self::normal_mat(&mut self.rng.update, b, ACTION_DIM);
                let (_, g_logp) = sac_actor_update(
                    &mut guiding.net,
                    &mut guiding.adam,
                    &mb.states,
                    &self.critic,
                    &mb.states,
                    alpha,
                    &g_noise,
                )?;

                let c_noise = Self::normal_mat(&mut self.rng.update, b, ACTION_DIM);
                let (c_loss, _term) = control_actor_update(
                    &mut self.control,
                    &self.critic,
                    &mb.histories,
                    &mb.states,
                    distill,
                    alpha,
                    lambda,
                    &c_noise,
                )?;

                let d_loss = distillation_update(distill, &guiding.net, &mb.histories, &mb.states)?;

                self.temperature.update(&g_logp);
                self.critic.polyak(rho)?;
                Ok((0.5 * (l1 + l2), c_loss, Some(d_loss)))
            }
        }
    }
}

/// File outputs of one completed run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub run_dir: PathBuf,
    pub train_csv: PathBuf,
    pub eval_csv: PathBuf,
    pub summary_json: PathBuf,
    pub policy_json: PathBuf,
    pub blindness_json: Option<PathBuf>,
}

#[derive(Serialize)]
struct AbortSnapshot<'a> {
    step: u64,
    component: &'a str,
    detail: String,
    last_losses: LastLosses,
}

#[derive(Serialize, Default, Clone)]
struct LastLosses {
    critic: Option<f64>,
    control: Option<f64>,
    distill: Option<f64>,
}

const BLINDNESS_SAMPLE: usize = 2000;

/// Runs a full training run and writes `config.toml`, `train.csv`,
/// `eval.csv`, `summary.json`, `policy.json` and (for ensemble methods)
/// `blindness.json` into `run_dir`.
pub fn train_run(cfg: &RunConfig, run_dir: &Path) -> Result<(RunSummary, RunArtifacts)> {
    cfg.validate()?;
    fs::create_dir_all(run_dir)?;
    fs::write(run_dir.join("config.toml"), cfg.to_toml()?)?;

    let train_path = run_dir.join("train.csv");
    let eval_path = run_dir.join("eval.csv");
    let mut train_csv = TrainCsvWriter::create(&train_path)?;
    let mut eval_csv = EvalCsvWriter::create(&eval_path)?;

    let mut trainer = Trainer::new(cfg.clone())?;
    let mut evals: Vec<EvalRecord> = Vec::new();
    let mut lambda_trace: Vec<f64> = Vec::new();
    let mut u_trace: Vec<f64> = Vec::new();
    let mut last_losses = LastLosses::default();
    let mut eval_index = 0u64;

    for t in 0..cfg.total_steps {
        let row = match trainer.step() {
            Ok(row) => row,
            Err(Error::NonFinite(detail)) => {
                let snapshot = AbortSnapshot {
                    step: t,
                    component: "train_step",
                    detail: detail.clone(),
                    last_losses: last_losses.clone(),
                };
                let _ = fs::write(
                    run_dir.join("abort.json"),
                    serde_json::to_string_pretty(&snapshot)?,
                );
                return Err(Error::Numerical {
                    step: t,
                    component: "train_step".into(),
                    detail,
                });
            }
            Err(e) => return Err(e),
        };
        if let Some(l) = row.lambda {
            lambda_trace.push(l);
        }
        if let Some(u) = row.disagreement {
            u_trace.push(u);
        }
        last_losses = LastLosses {
            critic: row.critic_loss.or(last_losses.critic),
            control: row.control_loss.or(last_losses.control),
            distill: row.distill_loss.or(last_losses.distill),
        };
        train_csv.write(&row)?;

        if (t + 1) % cfg.eval_every == 0 {
            let rec = evaluate(
                trainer.control_net(),
                cfg.history_k,
                &cfg.env,
                trainer.level(),
                cfg.eval_episodes,
                cfg.seed,
                eval_index,
                t + 1,
            )?;
            eval_csv.write(&EvalCsvRow {
                step: rec.step,
                mean_return: rec.mean_return,
                return_std: rec.return_std,
                collision_rate: rec.collision_rate,
            })?;
            evals.push(rec);
            eval_index += 1;
        }
    }
    train_csv.flush()?;
    eval_csv.flush()?;

    let summary = build_summary(cfg, &evals, &lambda_trace, &u_trace)?;
    let summary_json = run_dir.join("summary.json");
    fs::write(&summary_json, serde_json::to_string_pretty(&summary)?)?;

    let checkpoint = PolicyCheckpoint {
        method: cfg.method.name().to_string(),
        history_k: cfg.history_k,
        level: *trainer.level(),
        env: cfg.env.clone(),
        control: trainer.control_net().clone(),
    };
    let policy_json = run_dir.join("policy.json");
    fs::write(&policy_json, serde_json::to_string(&checkpoint)?)?;

    let mut blindness_json = None;
    if let Some(ens) = trainer.ensemble() {
        let sample = BLINDNESS_SAMPLE.min(trainer.buffer().len());
        if sample > 0 {
            let report = blindness_report(ens, trainer.buffer(), sample, &cfg.level_label())?;
            let path = run_dir.join("blindness.json");
            fs::write(&path, serde_json::to_string_pretty(&report)?)?;
            blindness_json = Some(path);
        }
    }

    Ok((
        summary,
        RunArtifacts {
            run_dir: run_dir.to_path_buf(),
            train_csv: train_path,
            eval_csv: eval_path,
            summary_json,
            policy_json,
            blindness_json,
        },
    ))
}

fn build_summary(
    cfg: &RunConfig,
    evals: &[EvalRecord],
    lambda_trace: &[f64],
    u_trace: &[f64],
) -> Result<RunSummary> {
    let (last5_avg, last5_std, collision_rate_last5, best) = last5_stats(evals)?;
    let w = cfg.guidance.warmup_steps as usize;
    let (lambda_activity_fraction, lambda_activity_post_warmup) = if lambda_trace.is_empty() {
        (None, None)
    } else {
        // Activity is always measured against the configured lambda_min
        // floor, also for fixed schedules (so fixed 0.1 reports 1.0 and
        // fixed 0.01 reports 0.0 under the default floor).
        let base = cfg.guidance.lambda_min;
        let full = crate::guidance::lambda_activity(lambda_trace, base)?;
        let post = if lambda_trace.len() > w {
            Some(crate::guidance::lambda_activity(&lambda_trace[w..], base)?)
        } else {
            None
        };
        (Some(full), post)
    };
    let disagreement = if u_trace.is_empty() {
        None
    } else {
        let mean = u_trace.iter().sum::<f64>() / u_trace.len() as f64;
        let warmup_end = w.min(u_trace.len());
        let warmup_mean = if warmup_end > 0 {
            u_trace[..warmup_end].iter().sum::<f64>() / warmup_end as f64
        } else {
            0.0
        };
        let q = (u_trace.len() * 3) / 4;
        let final_quarter_mean =
            u_trace[q..].iter().sum::<f64>() / (u_trace.len() - q).max(1) as f64;
        Some(DisagreementSummary {
            mean,
            warmup_mean,
            final_quarter_mean,
        })
    };
    Ok(RunSummary {
        method: cfg.method.name().to_string(),
        level: cfg.level_label(),
        seed: cfg.seed,
        total_steps: cfg.total_steps,
        eval_count: evals.len(),
        last5_avg,
        last5_std,
        best_eval_return: best,
        collision_rate_last5,
        lambda_activity_fraction,
        lambda_activity_post_warmup,
        disagreement,
        config_hash: cfg.config_hash(),
        group_hash: cfg.group_hash(),
    })
}
