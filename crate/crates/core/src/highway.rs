//! Kinematic multi-lane highway environment.
//!
//! The ego vehicle integrates point kinematics under continuous
//! acceleration/steering commands; traffic vehicles hold constant speed in
//! fixed lanes. The full state exposed to privileged components is a 5x5
//! feature matrix: the ego row plus its four nearest neighbors, columns
//! `(presence, x, y, vx, vy)` with neighbor features relative to ego.
//! Episodes are a pure function of `(seed, config, action sequence)`.

use std::cell::Cell;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEATURES_PER_ROW: usize = 5;
pub const STATE_ROWS: usize = 5;
pub const STATE_DIM: usize = FEATURES_PER_ROW * STATE_ROWS;
pub const ACTION_DIM: usize = 2;

/// Environment parameters. Defaults give 20 s episodes with return
/// magnitudes comparable to a dense-traffic highway task.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub lanes: usize,
    pub lane_width: f64,
    pub traffic_count: usize,
    pub dt: f64,
    pub horizon: u32,
    /// Physical acceleration at |accel command| = 1, m/s^2.
    pub a_max: f64,
    /// Heading rate at |steer command| = 1, rad/s.
    pub psi_max: f64,
    pub v_max: f64,
    /// Ego initial speed, m/s.
    pub v0: f64,
    pub traffic_speed_min: f64,
    pub traffic_speed_max: f64,
    pub spawn_x_min: f64,
    pub spawn_x_max: f64,
    pub vehicle_length: f64,
    pub vehicle_width: f64,
    pub w_speed: f64,
    pub w_lane: f64,
    pub w_coll: f64,
    /// Lane-keeping reward length scale, m.
    pub sigma_lane: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            lanes: 4,
            lane_width: 4.0,
            traffic_count: 16,
            dt: 0.1,
            horizon: 200,
            a_max: 5.0,
            psi_max: 0.3,
            v_max: 30.0,
            v0: 20.0,
            traffic_speed_min: 15.0,
            traffic_speed_max: 25.0,
            spawn_x_min: -50.0,
            spawn_x_max: 350.0,
            vehicle_length: 5.0,
            vehicle_width: 2.0,
            w_speed: 0.7,
            w_lane: 0.3,
            w_coll: 5.0,
            sigma_lane: 1.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lanes < 2 {
            return Err(Error::Config("env requires lanes >= 2".into()));
        }
        if self.traffic_count < 4 {
            return Err(Error::Config("env requires traffic_count >= 4".into()));
        }
        for (name, v) in [
            ("lane_width", self.lane_width),
            ("dt", self.dt),
            ("a_max", self.a_max),
            ("psi_max", self.psi_max),
            ("v_max", self.v_max),
            ("vehicle_length", self.vehicle_length),
            ("vehicle_width", self.vehicle_width),
            ("sigma_lane", self.sigma_lane),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("env {name} must be positive")));
            }
        }
        if self.horizon == 0 {
            return Err(Error::Config("env horizon must be positive".into()));
        }
        if self.spawn_x_max <= self.spawn_x_min {
            return Err(Error::Config("env spawn range is empty".into()));
        }
        if self.traffic_speed_max < self.traffic_speed_min {
            return Err(Error::Config("env traffic speed range is empty".into()));
        }
        Ok(())
    }

    pub fn road_width(&self) -> f64 {
        self.lanes as f64 * self.lane_width
    }

    pub fn lane_center(&self, lane: usize) -> f64 {
        (lane as f64 + 0.5) * self.lane_width
    }

    fn nearest_lane_center(&self, y: f64) -> f64 {
        let lane = (y / self.lane_width - 0.5).round();
        let lane = lane.clamp(0.0, (self.lanes - 1) as f64);
        (lane + 0.5) * self.lane_width
    }

    /// Per-step reward bounds `[-w_coll, w_speed + w_lane]`.
    pub fn reward_bounds(&self) -> (f64, f64) {
        (-self.w_coll, self.w_speed + self.w_lane)
    }
}

/// One vehicle's kinematic state.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
    pub alive: bool,
}

impl VehicleState {
    /// Oriented rectangle corners, counter-clockwise.
    fn corners(&self) -> [(f64, f64); 4] {
        let (c, s) = (self.heading.cos(), self.heading.sin());
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        let rot = |dx: f64, dy: f64| (self.x + dx * c - dy * s, self.y + dx * s + dy * c);
        [rot(hl, hw), rot(-hl, hw), rot(-hl, -hw), rot(hl, -hw)]
    }
}

/// Separating-axis test for two oriented rectangles.
pub fn rectangles_intersect(a: &VehicleState, b: &VehicleState) -> bool {
    let ca = a.corners();
    let cb = b.corners();
    let axes = [
        (a.heading.cos(), a.heading.sin()),
        (-a.heading.sin(), a.heading.cos()),
        (b.heading.cos(), b.heading.sin()),
        (-b.heading.sin(), b.heading.cos()),
    ];
    for (ax, ay) in axes {
        let proj = |cs: &[(f64, f64); 4]| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &(x, y) in cs {
                let p = x * ax + y * ay;
                lo = lo.min(p);
                hi = hi.max(p);
            }
            (lo, hi)
        };
        let (alo, ahi) = proj(&ca);
        let (blo, bhi) = proj(&cb);
        if ahi < blo || bhi < alo {
            return false;
        }
    }
    true
}

thread_local! {
    static PRIVILEGE_GUARD: Cell<bool> = const { Cell::new(false) };
    static PRIVILEGED_READS: Cell<u64> = const { Cell::new(0) };
}

/// Counts full-state feature reads while a deployment guard is active.
/// Evaluation rollouts arm the guard so tests can assert the deployed
/// policy never touches privileged state.
pub struct PrivilegeGuard {
    was_armed: bool,
}

impl PrivilegeGuard {
    pub fn arm() -> Self {
        let was_armed = PRIVILEGE_GUARD.with(|g| g.replace(true));
        Self { was_armed }
    }

    pub fn reads() -> u64 {
        PRIVILEGED_READS.with(|c| c.get())
    }

    pub fn reset_reads() {
        PRIVILEGED_READS.with(|c| c.set(0));
    }
}

impl Drop for PrivilegeGuard {
    fn drop(&mut self) {
        PRIVILEGE_GUARD.with(|g| g.set(self.was_armed));
    }
}

/// Privileged 5x5 kinematics matrix, flattened row-major to 25 values.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct FullState {
    features: [f64; STATE_DIM],
}

impl FullState {
    pub fn from_features(features: [f64; STATE_DIM]) -> Self {
        Self { features }
    }

    /// Flattened features. Counted against the privilege guard: only
    /// training-time components may call this during evaluation.
    pub fn flat(&self) -> &[f64; STATE_DIM] {
        PRIVILEGE_GUARD.with(|g| {
            if g.get() {
                PRIVILEGED_READS.with(|c| c.set(c.get() + 1));
            }
        });
        &self.features
    }

    /// Sensor-side access, exempt from the privilege count: the observation
    /// function is the boundary where privileged state legitimately turns
    /// into sensor data.
    pub(crate) fn sensor_view(&self) -> &[f64; STATE_DIM] {
        &self.features
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.features[r * FEATURES_PER_ROW..(r + 1) * FEATURES_PER_ROW]
    }
}

/// Continuous 2-D command; both components are clamped to [-1, 1] before
/// the dynamics apply.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Action {
    pub accel: f64,
    pub steer: f64,
}

impl Action {
    pub fn clamped(self) -> Self {
        Self {
            accel: self.accel.clamp(-1.0, 1.0),
            steer: self.steer.clamp(-1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub next_state: FullState,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub collision: bool,
}

/// The simulator. One instance per training or evaluation run.
#[derive(Debug, Clone)]
pub struct HighwayEnv {
    config: EnvConfig,
    ego: VehicleState,
    ego_speed: f64,
    traffic: Vec<VehicleState>,
    traffic_speeds: Vec<f64>,
    step_count: u32,
    active: bool,
}

impl HighwayEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            ego: VehicleState {
                x: 0.0,
                y: 0.0,
                vx: 0.0,
                vy: 0.0,
                heading: 0.0,
                length: 0.0,
                width: 0.0,
                alive: true,
            },
            ego_speed: 0.0,
            traffic: Vec::new(),
            traffic_speeds: Vec::new(),
            step_count: 0,
            active: false,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    /// Test/rendering access to raw vehicle states.
    pub fn vehicles(&self) -> (&VehicleState, &[VehicleState]) {
        (&self.ego, &self.traffic)
    }

    pub fn ego_speed(&self) -> f64 {
        self.ego_speed
    }

    /// Deterministic scenario construction: ego in a random lane at `v0`,
    /// traffic placed without overlap at per-vehicle constant speeds.
    pub fn reset(&mut self, seed: u64) -> Result<FullState> {
        let cfg = self.config.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ego_lane = rng.gen_range(0..cfg.lanes);
        self.ego = VehicleState {
            x: 0.0,
            y: cfg.lane_center(ego_lane),
            vx: cfg.v0,
            vy: 0.0,
            heading: 0.0,
            length: cfg.vehicle_length,
            width: cfg.vehicle_width,
            alive: true,
        };
        self.ego_speed = cfg.v0;
        self.traffic.clear();
        self.traffic_speeds.clear();

        // Placement margin keeps spawns clearly separated; the ego gets a
        // protected corridor in its own lane so episodes never start doomed.
        let margin_x = 2.0;
        let margin_y = 0.5;
        let ego_protect = 3.0 * cfg.vehicle_length;
        for i in 0..cfg.traffic_count {
            let mut placed = false;
            for _attempt in 0..100 {
                let lane = rng.gen_range(0..cfg.lanes);
                let x = rng.gen_range(cfg.spawn_x_min..cfg.spawn_x_max);
                let speed = rng.gen_range(cfg.traffic_speed_min..=cfg.traffic_speed_max);
                let candidate = VehicleState {
                    x,
                    y: cfg.lane_center(lane),
                    vx: speed,
                    vy: 0.0,
                    heading: 0.0,
                    length: cfg.vehicle_length + margin_x,
                    width: cfg.vehicle_width + margin_y,
                    alive: true,
                };
                if lane == ego_lane && (x - self.ego.x).abs() < ego_protect {
                    continue;
                }
                if rectangles_intersect(&candidate, &self.ego)
                    || self.traffic.iter().any(|t| {
                        let mut inflated = *t;
                        inflated.length += margin_x;
                        inflated.width += margin_y;
                        rectangles_intersect(&candidate, &inflated)
                    })
                {
                    continue;
                }
                self.traffic.push(VehicleState {
                    length: cfg.vehicle_length,
                    width: cfg.vehicle_width,
                    ..candidate
                });
                self.traffic_speeds.push(speed);
                placed = true;
                break;
            }
            if !placed {
                return Err(Error::Config(format!(
                    "could not place traffic vehicle {i} without overlap; \
                     reduce traffic_count or widen the spawn range"
                )));
            }
        }
        self.step_count = 0;
        self.active = true;
        Ok(self.full_state())
    }

    /// Test fixture: explicit vehicle layout, bypassing placement.
    pub fn with_vehicles(
        config: EnvConfig,
        ego: VehicleState,
        ego_speed: f64,
        traffic: Vec<VehicleState>,
    ) -> Self {
        let traffic_speeds = traffic.iter().map(|t| t.vx).collect();
        Self {
            config,
            ego,
            ego_speed,
            traffic,
            traffic_speeds,
            step_count: 0,
            active: true,
        }
    }

    /// Advances one step. Errors if the episode already ended.
    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        if !self.active {
            return Err(Error::Contract(
                "env_step called after episode termination".into(),
            ));
        }
        let cfg = self.config.clone();
        let a = action.clamped();

        self.ego_speed = (self.ego_speed + a.accel * cfg.a_max * cfg.dt).clamp(0.0, cfg.v_max);
        self.ego.heading += a.steer * cfg.psi_max * cfg.dt;
        self.ego.vx = self.ego_speed * self.ego.heading.cos();
        self.ego.vy = self.ego_speed * self.ego.heading.sin();
        self.ego.x += self.ego.vx * cfg.dt;
        self.ego.y += self.ego.vy * cfg.dt;

        for (t, speed) in self.traffic.iter_mut().zip(&self.traffic_speeds) {
            t.x += speed * cfg.dt;
        }
        self.step_count += 1;

        let hit_vehicle = self
            .traffic
            .iter()
            .any(|t| rectangles_intersect(&self.ego, t));
        let off_road = self
            .ego
            .corners()
            .iter()
            .any(|&(_, y)| y < 0.0 || y > cfg.road_width());
        let collision = hit_vehicle || off_road;

        let speed_term = (self.ego_speed / cfg.v_max).clamp(0.0, 1.0);
        let lane_center = cfg.nearest_lane_center(self.ego.y);
        let dy = self.ego.y - lane_center;
        let lane_term = (-dy * dy / (cfg.sigma_lane * cfg.sigma_lane)).exp();
        let mut reward = cfg.w_speed * speed_term + cfg.w_lane * lane_term;
        if collision {
            reward -= cfg.w_coll;
        }

        let terminated = collision;
        let truncated = !terminated && self.step_count >= cfg.horizon;
        if terminated {
            self.ego.alive = false;
        }
        if terminated || truncated {
            self.active = false;
        }
        Ok(StepResult {
            next_state: self.full_state(),
            reward,
            terminated,
            truncated,
            collision,
        })
    }

    pub fn full_state(&self) -> FullState {
        nearest_neighbors(&self.ego, &self.traffic)
    }
}

/// Builds the 5x5 feature matrix: ego row absolute (x reported as 0 to keep
/// features bounded), then the four nearest living vehicles by Euclidean
/// distance, relative to ego. Ties break on the lower vehicle index.
pub fn nearest_neighbors(ego: &VehicleState, traffic: &[VehicleState]) -> FullState {
    let mut order: Vec<(f64, usize)> = traffic
        .iter()
        .enumerate()
        .filter(|(_, t)| t.alive)
        .map(|(i, t)| {
            let d = ((t.x - ego.x).powi(2) + (t.y - ego.y).powi(2)).sqrt();
            (d, i)
        })
        .collect();
    order.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("finite distances")
            .then(a.1.cmp(&b.1))
    });

    let mut features = [0.0; STATE_DIM];
    features[0] = 1.0;
    features[1] = 0.0;
    features[2] = ego.y;
    features[3] = ego.vx;
    features[4] = ego.vy;
    for (row, &(_, i)) in order.iter().take(STATE_ROWS - 1).enumerate() {
        let t = &traffic[i];
        let base = (row + 1) * FEATURES_PER_ROW;
        features[base] = 1.0;
        features[base + 1] = t.x - ego.x;
        features[base + 2] = t.y - ego.y;
        features[base + 3] = t.vx - ego.vx;
        features[base + 4] = t.vy - ego.vy;
    }
    FullState::from_features(features)
}
