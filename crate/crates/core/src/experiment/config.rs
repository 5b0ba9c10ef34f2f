//! Run configuration: TOML sections with strict key checking, defaults
//! matching the main experimental setup, and method-compatibility rules.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::highway::EnvConfig;
use crate::pomdp::PomdpLevel;
use crate::sac::AlphaMode;
use crate::uncertainty::TargetMode;

/// The five training methods under study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Single actor on the (K=1) observation, no guidance machinery.
    VanillaSac,
    /// Dual actor with a constant distillation coefficient.
    GsacFixed,
    /// Dual actor with the disagreement-adaptive coefficient.
    BaGsac,
    /// Dual actor with a deterministic linear coefficient decay.
    LinearDecay,
    /// Dual actor with the binary uncertainty gate.
    GsacThreshold,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::VanillaSac => "vanilla_sac",
            Method::GsacFixed => "gsac_fixed",
            Method::BaGsac => "ba_gsac",
            Method::LinearDecay => "linear_decay",
            Method::GsacThreshold => "gsac_threshold",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "vanilla_sac" => Ok(Method::VanillaSac),
            "gsac_fixed" => Ok(Method::GsacFixed),
            "ba_gsac" => Ok(Method::BaGsac),
            "linear_decay" => Ok(Method::LinearDecay),
            "gsac_threshold" => Ok(Method::GsacThreshold),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (expected vanilla_sac|gsac_fixed|ba_gsac|linear_decay|gsac_threshold)"
            ))),
        }
    }

    /// Guided methods instantiate the teacher/distillation stack.
    pub fn is_guided(&self) -> bool {
        !matches!(self, Method::VanillaSac)
    }

    pub fn has_ensemble(&self) -> bool {
        matches!(self, Method::BaGsac | Method::GsacThreshold)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PomdpSettings {
    /// Preset name: none|mild|moderate|severe, or "custom" with explicit
    /// noise_sigma/occlusion_rate.
    pub level: String,
    pub noise_sigma: Option<f64>,
    pub occlusion_rate: Option<f64>,
}

impl Default for PomdpSettings {
    fn default() -> Self {
        Self {
            level: "moderate".into(),
            noise_sigma: None,
            occlusion_rate: None,
        }
    }
}

impl PomdpSettings {
    pub fn resolve_level(&self) -> Result<PomdpLevel> {
        if self.level == "custom" {
            let sigma = self.noise_sigma.ok_or_else(|| {
                Error::Config("custom pomdp level needs noise_sigma".into())
            })?;
            let rate = self.occlusion_rate.ok_or_else(|| {
                Error::Config("custom pomdp level needs occlusion_rate".into())
            })?;
            PomdpLevel::custom(sigma, rate)
        } else {
            if self.noise_sigma.is_some() || self.occlusion_rate.is_some() {
                return Err(Error::Config(
                    "noise_sigma/occlusion_rate are only valid with level = \"custom\"".into(),
                ));
            }
            PomdpLevel::by_name(&self.level)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SacSettings {
    pub gamma: f64,
    pub alpha: f64,
    pub alpha_mode: AlphaMode,
    pub target_entropy: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub polyak_rho: f64,
    pub buffer_capacity: usize,
    pub hidden: Vec<usize>,
    pub updates_per_step: u32,
}

impl Default for SacSettings {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            alpha: 0.2,
            alpha_mode: AlphaMode::Fixed,
            target_entropy: -2.0,
            learning_rate: 3e-4,
            batch_size: 128,
            polyak_rho: 0.995,
            buffer_capacity: 50_000,
            hidden: vec![128, 128],
            updates_per_step: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceSettings {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub warmup_steps: u64,
    /// Coefficient used by `gsac_fixed`.
    pub fixed_lambda: f64,
}

impl Default for GuidanceSettings {
    fn default() -> Self {
        Self {
            lambda_min: 0.01,
            lambda_max: 0.5,
            warmup_steps: 800,
            fixed_lambda: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSettings {
    pub n_members: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub target_mode: TargetMode,
    pub batch_size: usize,
}

impl Default for EnsembleSettings {
    fn default() -> Self {
        Self {
            n_members: 5,
            hidden: vec![64, 64],
            learning_rate: 3e-4,
            target_mode: TargetMode::PartialObs,
            batch_size: 128,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSettings {
    /// Linear-decay horizon; defaults to the run's total steps.
    pub decay_total_steps: Option<u64>,
}

/// Fully resolved, validated run configuration.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub seed: u64,
    pub total_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: u32,
    /// Observation history length; vanilla SAC forces 1.
    pub history_k: usize,
    pub env: EnvConfig,
    pub pomdp: PomdpSettings,
    pub sac: SacSettings,
    pub guidance: GuidanceSettings,
    pub ensemble: EnsembleSettings,
    pub schedule: ScheduleSettings,
}

impl RunConfig {
    pub fn defaults(method: Method) -> Self {
        let history_k = if method == Method::VanillaSac { 1 } else { 3 };
        Self {
            method,
            seed: 42,
            total_steps: 50_000,
            eval_every: 1500,
            eval_episodes: 5,
            history_k,
            env: EnvConfig::default(),
            pomdp: PomdpSettings::default(),
            sac: SacSettings::default(),
            guidance: GuidanceSettings::default(),
            ensemble: EnsembleSettings::default(),
            schedule: ScheduleSettings::default(),
        }
    }

    pub fn level(&self) -> Result<PomdpLevel> {
        self.pomdp.resolve_level()
    }

    pub fn level_label(&self) -> String {
        if self.pomdp.level == "custom" {
            format!(
                "custom({},{})",
                self.pomdp.noise_sigma.unwrap_or(0.0),
                self.pomdp.occlusion_rate.unwrap_or(0.0)
            )
        } else {
            self.pomdp.level.clone()
        }
    }

    pub fn decay_steps(&self) -> u64 {
        self.schedule.decay_total_steps.unwrap_or(self.total_steps)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.level()?;
        if self.total_steps == 0 && self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be >= 1".into()));
        }
        if self.history_k == 0 {
            return Err(Error::Config("history_k must be >= 1".into()));
        }
        if self.method == Method::VanillaSac && self.history_k != 1 {
            return Err(Error::Config(
                "vanilla_sac uses no history stacking: history_k must be 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.sac.gamma) {
            return Err(Error::Config("gamma must lie in [0, 1)".into()));
        }
        if self.sac.alpha <= 0.0 {
            return Err(Error::Config("alpha must be positive".into()));
        }
        if self.sac.batch_size == 0 || self.sac.buffer_capacity == 0 {
            return Err(Error::Config("batch_size and buffer_capacity must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.sac.polyak_rho) {
            return Err(Error::Config("polyak_rho must lie in [0, 1]".into()));
        }
        if self.sac.updates_per_step == 0 {
            return Err(Error::Config("updates_per_step must be >= 1".into()));
        }
        if self.guidance.lambda_min < 0.0 || self.guidance.lambda_min > self.guidance.lambda_max {
            return Err(Error::Config(
                "guidance requires 0 <= lambda_min <= lambda_max".into(),
            ));
        }
        if self.guidance.fixed_lambda < 0.0 {
            return Err(Error::Config("fixed_lambda must be >= 0".into()));
        }
        match self.method {
            Method::BaGsac => {
                if self.ensemble.n_members == 0 {
                    return Err(Error::Config("ba_gsac needs n_members >= 1".into()));
                }
                if self.ensemble.n_members >= 2 && self.guidance.warmup_steps < 10 {
                    return Err(Error::Config(
                        "adaptive calibration needs warmup_steps >= 10".into(),
                    ));
                }
            }
            Method::GsacThreshold => {
                if self.ensemble.n_members < 2 {
                    return Err(Error::Config(
                        "gsac_threshold needs n_members >= 2 for disagreement".into(),
                    ));
                }
                if self.guidance.warmup_steps < 10 {
                    return Err(Error::Config(
                        "threshold calibration needs warmup_steps >= 10".into(),
                    ));
                }
            }
            _ => {}
        }
        if self.method == Method::LinearDecay && self.decay_steps() == 0 {
            return Err(Error::Config("linear decay needs a positive horizon".into()));
        }
        Ok(())
    }

    /// Stable hash of the full configuration.
    pub fn config_hash(&self) -> String {
        hash_of(self)
    }

    /// Hash with the seed zeroed: the grouping key for cross-seed
    /// aggregation in sweeps.
    pub fn group_hash(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        hash_of(&c)
    }

    /// A short human-readable run label for directory names.
    pub fn run_label(&self) -> String {
        let mut label = self.method.name().to_string();
        if self.method == Method::GsacFixed {
            label.push_str(&format!("_{}", compact_float(self.guidance.fixed_lambda)));
        }
        label.push('_');
        label.push_str(&self.level_label().replace(['(', ')', ','], "_"));
        label.push_str(&format!("_s{}", self.seed));
        label
    }

    pub fn to_toml(&self) -> Result<String> {
        let file = RawConfigFile::from_resolved(self);
        toml::to_string_pretty(&file).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfigFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        raw.resolve()
    }

    pub fn from_toml_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }
}

fn compact_float(v: f64) -> String {
    format!("{v}").replace('.', "p")
}

fn hash_of<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    let mut h = Sha256::new();
    h.update(json.as_bytes());
    let digest = h.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// The on-disk TOML layout. Sections: method, env, pomdp, sac, guidance,
/// ensemble, schedule; unknown keys anywhere are rejected.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawConfigFile {
    method: RawMethodSection,
    #[serde(default)]
    env: Option<EnvConfig>,
    #[serde(default)]
    pomdp: Option<RawPomdpSection>,
    #[serde(default)]
    sac: Option<SacSettings>,
    #[serde(default)]
    guidance: Option<GuidanceSettings>,
    #[serde(default)]
    ensemble: Option<EnsembleSettings>,
    #[serde(default)]
    schedule: Option<ScheduleSettings>,
}

/// The `[pomdp]` file section also carries the history length.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawPomdpSection {
    level: String,
    noise_sigma: Option<f64>,
    occlusion_rate: Option<f64>,
    history_k: Option<usize>,
}

impl Default for RawPomdpSection {
    fn default() -> Self {
        Self {
            level: "moderate".into(),
            noise_sigma: None,
            occlusion_rate: None,
            history_k: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct RawMethodSection {
    name: String,
    seed: Option<u64>,
    total_steps: Option<u64>,
    eval_every: Option<u64>,
    eval_episodes: Option<u32>,
}

impl RawConfigFile {
    fn resolve(self) -> Result<RunConfig> {
        if self.method.name.is_empty() {
            return Err(Error::Config("missing [method] name".into()));
        }
        let method = Method::from_name(&self.method.name)?;
        let mut cfg = RunConfig::defaults(method);
        if let Some(seed) = self.method.seed {
            cfg.seed = seed;
        }
        if let Some(v) = self.method.total_steps {
            cfg.total_steps = v;
        }
        if let Some(v) = self.method.eval_every {
            cfg.eval_every = v;
        }
        if let Some(v) = self.method.eval_episodes {
            cfg.eval_episodes = v;
        }
        if let Some(env) = self.env {
            cfg.env = env;
        }
        if let Some(pomdp) = self.pomdp {
            cfg.history_k = match pomdp.history_k {
                Some(k) => k,
                None => cfg.history_k,
            };
            cfg.pomdp = pomdp;
        }
        if let Some(sac) = self.sac {
            cfg.sac = sac;
        }
        if let Some(g) = self.guidance {
            cfg.guidance = g;
        }
        if let Some(e) = self.ensemble {
            cfg.ensemble = e;
        }
        if let Some(s) = self.schedule {
            cfg.schedule = s;
        }
        // Normalized so hashing and equality are layout-independent.
        cfg.pomdp.history_k = Some(cfg.history_k);
        cfg.validate()?;
        Ok(cfg)
    }

    fn from_resolved(cfg: &RunConfig) -> Self {
        let mut pomdp = cfg.pomdp.clone();
        pomdp.history_k = Some(cfg.history_k);
        Self {
            method: RawMethodSection {
                name: cfg.method.name().to_string(),
                seed: Some(cfg.seed),
                total_steps: Some(cfg.total_steps),
                eval_every: Some(cfg.eval_every),
                eval_episodes: Some(cfg.eval_episodes),
            },
            env: Some(cfg.env.clone()),
            pomdp: Some(pomdp),
            sac: Some(cfg.sac.clone()),
            guidance: Some(cfg.guidance.clone()),
            ensemble: Some(cfg.ensemble.clone()),
            schedule: Some(cfg.schedule.clone()),
        }
    }
}
