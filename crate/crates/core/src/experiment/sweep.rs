//! Campaign sweeps: a cartesian matrix (or named ablation preset) of
//! method x level x seed cells, run independently (optionally in parallel
//! worker threads), resumable by config hash, aggregated across seeds.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::config::{EnsembleSettings, GuidanceSettings, Method, RunConfig, SacSettings, ScheduleSettings};
use crate::experiment::summary::{aggregate_seeds, RunSummary, SeedAggregate};
use crate::experiment::trainer::train_run;
use crate::highway::EnvConfig;

/// The `[matrix]` section of a sweep file.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct MatrixSection {
    /// Named grid: main_grid | ensemble_size | history | warmup |
    /// guidance_mode. Explicit lists below override the preset's own.
    pub preset: Option<String>,
    /// Method specs; `gsac_fixed:<lambda>` selects the fixed coefficient.
    pub methods: Vec<String>,
    pub levels: Vec<String>,
    pub seeds: Vec<u64>,
}

/// Baseline overrides applied to every cell before the cell's own axis
/// values. Sections replace their defaults wholesale, like a run config.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SweepBase {
    pub total_steps: Option<u64>,
    pub eval_every: Option<u64>,
    pub eval_episodes: Option<u32>,
    pub history_k: Option<usize>,
    pub env: Option<EnvConfig>,
    pub sac: Option<SacSettings>,
    pub guidance: Option<GuidanceSettings>,
    pub ensemble: Option<EnsembleSettings>,
    pub schedule: Option<ScheduleSettings>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SweepMatrix {
    pub matrix: MatrixSection,
    #[serde(default)]
    pub base: SweepBase,
}

impl SweepMatrix {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read matrix {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("matrix parse: {e}")))
    }

    /// Expands to `(label, config)` cells.
    pub fn expand(&self) -> Result<Vec<(String, RunConfig)>> {
        let mut methods = self.matrix.methods.clone();
        let mut levels = self.matrix.levels.clone();
        let mut seeds = self.matrix.seeds.clone();
        // Axis values beyond (method, level, seed): (key, value) applied per cell.
        let mut extra_axis: Vec<(char, u64)> = vec![(' ', 0)];

        if let Some(preset) = &self.matrix.preset {
            match preset.as_str() {
                "main_grid" => {
                    if methods.is_empty() {
                        methods = vec![
                            "vanilla_sac".into(),
                            "gsac_fixed:0.1".into(),
                            "gsac_fixed:0.01".into(),
                            "ba_gsac".into(),
                            "linear_decay".into(),
                        ];
                    }
                    if levels.is_empty() {
                        levels = vec!["mild".into(), "moderate".into(), "severe".into()];
                    }
                    if seeds.is_empty() {
                        seeds = vec![42, 123, 7];
                    }
                }
                "ensemble_size" => {
                    if methods.is_empty() {
                        methods = vec!["ba_gsac".into()];
                    }
                    if levels.is_empty() {
                        levels = vec!["moderate".into()];
                    }
                    if seeds.is_empty() {
                        seeds = vec![42];
                    }
                    extra_axis = [1u64, 3, 5, 7].iter().map(|&n| ('n', n)).collect();
                }
                "history" => {
                    if methods.is_empty() {
                        methods = vec!["ba_gsac".into()];
                    }
                    if levels.is_empty() {
                        levels = vec!["moderate".into()];
                    }
                    if seeds.is_empty() {
                        seeds = vec![42];
                    }
                    extra_axis = [1u64, 2, 3, 5].iter().map(|&k| ('k', k)).collect();
                }
                "warmup" => {
                    if methods.is_empty() {
                        methods = vec!["ba_gsac".into()];
                    }
                    if levels.is_empty() {
                        levels = vec!["severe".into()];
                    }
                    if seeds.is_empty() {
                        seeds = vec![42];
                    }
                    extra_axis = [800u64, 2000, 3000, 5000].iter().map(|&w| ('w', w)).collect();
                }
                "guidance_mode" => {
                    if methods.is_empty() {
                        methods = vec![
                            "vanilla_sac".into(),
                            "gsac_fixed:0.1".into(),
                            "gsac_threshold".into(),
                            "ba_gsac".into(),
                        ];
                    }
                    if levels.is_empty() {
                        levels = vec!["moderate".into()];
                    }
                    if seeds.is_empty() {
                        seeds = vec![42];
                    }
                }
                other => {
                    return Err(Error::Config(format!(
                        "unknown sweep preset '{other}' (main_grid|ensemble_size|history|warmup|guidance_mode)"
                    )))
                }
            }
        }
        if seeds.is_empty() {
            seeds = vec![42, 123, 7];
        }
        if methods.is_empty() || levels.is_empty() {
            return Err(Error::Config("sweep matrix needs methods and levels".into()));
        }

        let mut cells = Vec::new();
        for method_spec in &methods {
            for level in &levels {
                for &seed in &seeds {
                    for &(axis, value) in &extra_axis {
                        let cfg = self.build_cell(method_spec, level, seed, axis, value)?;
                        let mut label = cfg.run_label();
                        if axis != ' ' {
                            label.push_str(&format!("_{axis}{value}"));
                        }
                        cells.push((label, cfg));
                    }
                }
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for (label, _) in &cells {
            if !seen.insert(label.clone()) {
                return Err(Error::Config(format!("duplicate sweep cell '{label}'")));
            }
        }
        Ok(cells)
    }

    fn build_cell(
        &self,
        method_spec: &str,
        level: &str,
        seed: u64,
        axis: char,
        value: u64,
    ) -> Result<RunConfig> {
        let (method_name, fixed_lambda) = match method_spec.split_once(':') {
            Some((name, lam)) => {
                let lam: f64 = lam.parse().map_err(|e| {
                    Error::Config(format!("bad lambda in method spec '{method_spec}': {e}"))
                })?;
                (name, Some(lam))
            }
            None => (method_spec, None),
        };
        let method = Method::from_name(method_name)?;
        if fixed_lambda.is_some() && method != Method::GsacFixed {
            return Err(Error::Config(format!(
                "method spec '{method_spec}': only gsac_fixed takes a lambda suffix"
            )));
        }
        let mut cfg = RunConfig::defaults(method);
        let base = &self.base;
        if let Some(v) = base.total_steps {
            cfg.total_steps = v;
        }
        if let Some(v) = base.eval_every {
            cfg.eval_every = v;
        }
        if let Some(v) = base.eval_episodes {
            cfg.eval_episodes = v;
        }
        if let Some(env) = &base.env {
            cfg.env = env.clone();
        }
        if let Some(sac) = &base.sac {
            cfg.sac = sac.clone();
        }
        if let Some(g) = &base.guidance {
            cfg.guidance = g.clone();
        }
        if let Some(e) = &base.ensemble {
            cfg.ensemble = e.clone();
        }
        if let Some(s) = &base.schedule {
            cfg.schedule = s.clone();
        }
        if let Some(k) = base.history_k {
            if method != Method::VanillaSac {
                cfg.history_k = k;
            }
        }
        cfg.seed = seed;
        cfg.pomdp.level = level.to_string();
        if let Some(lam) = fixed_lambda {
            cfg.guidance.fixed_lambda = lam;
        }
        match axis {
            'n' => cfg.ensemble.n_members = value as usize,
            'k' => cfg.history_k = value as usize,
            'w' => cfg.guidance.warmup_steps = value,
            _ => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One row of the campaign index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignCell {
    pub label: String,
    pub method: String,
    pub level: String,
    pub seed: u64,
    pub group_hash: String,
    pub last5_avg: f64,
    pub skipped_resume: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignGroup {
    pub group_hash: String,
    pub method: String,
    pub level: String,
    pub labels: Vec<String>,
    pub aggregate: Option<SeedAggregate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub cells: Vec<CampaignCell>,
    pub groups: Vec<CampaignGroup>,
}

/// Runs every cell (resuming completed ones), then aggregates per
/// seed-stripped config group and writes `campaign.json`.
pub fn run_sweep(matrix: &SweepMatrix, out_dir: &Path, jobs: usize) -> Result<CampaignSummary> {
    let cells = matrix.expand()?;
    if cells.is_empty() {
        return Err(Error::Config("sweep matrix expands to zero cells".into()));
    }
    fs::create_dir_all(out_dir.join("runs"))?;

    let queue: Mutex<VecDeque<(String, RunConfig)>> = Mutex::new(cells.clone().into());
    let results: Mutex<Vec<(String, RunSummary, bool)>> = Mutex::new(Vec::new());
    let failures: Mutex<Vec<(String, String)>> = Mutex::new(Vec::new());
    let workers = jobs.max(1).min(cells.len());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let job = queue.lock().expect("queue lock").pop_front();
                let Some((label, cfg)) = job else { break };
                let run_dir = out_dir.join("runs").join(&label);
                match run_cell(&cfg, &run_dir) {
                    Ok((summary, skipped)) => {
                        results.lock().expect("results lock").push((label, summary, skipped));
                    }
                    Err(e) => {
                        failures
                            .lock()
                            .expect("failures lock")
                            .push((label, e.to_string()));
                    }
                }
            });
        }
    });

    let failures = failures.into_inner().expect("lock");
    if !failures.is_empty() {
        let mut msg = String::from("sweep runs failed:");
        for (label, err) in &failures {
            msg.push_str(&format!("\n  {label}: {err}"));
        }
        return Err(Error::Config(msg));
    }

    let mut results = results.into_inner().expect("lock");
    results.sort_by(|a, b| a.0.cmp(&b.0));
    let summary = summarize_campaign(&results);
    fs::write(
        out_dir.join("campaign.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}

fn run_cell(cfg: &RunConfig, run_dir: &Path) -> Result<(RunSummary, bool)> {
    let summary_path = run_dir.join("summary.json");
    if summary_path.exists() {
        let text = fs::read_to_string(&summary_path)?;
        if let Ok(existing) = serde_json::from_str::<RunSummary>(&text) {
            if existing.config_hash == cfg.config_hash() {
                return Ok((existing, true));
            }
        }
    }
    let (summary, _) = train_run(cfg, run_dir)?;
    Ok((summary, false))
}

fn summarize_campaign(results: &[(String, RunSummary, bool)]) -> CampaignSummary {
    let mut cells = Vec::new();
    let mut by_group: BTreeMap<String, Vec<&(String, RunSummary, bool)>> = BTreeMap::new();
    for entry in results {
        let (label, summary, skipped) = entry;
        cells.push(CampaignCell {
            label: label.clone(),
            method: summary.method.clone(),
            level: summary.level.clone(),
            seed: summary.seed,
            group_hash: summary.group_hash.clone(),
            last5_avg: summary.last5_avg,
            skipped_resume: *skipped,
        });
        by_group.entry(summary.group_hash.clone()).or_default().push(entry);
    }
    let mut groups = Vec::new();
    for (group_hash, members) in by_group {
        let values: Vec<f64> = members.iter().map(|(_, s, _)| s.last5_avg).collect();
        let aggregate = if values.len() >= 2 {
            aggregate_seeds(&values).ok()
        } else {
            None
        };
        groups.push(CampaignGroup {
            group_hash,
            method: members[0].1.method.clone(),
            level: members[0].1.level.clone(),
            labels: members.iter().map(|(l, _, _)| l.clone()).collect(),
            aggregate,
        });
    }
    CampaignSummary { cells, groups }
}

/// Standalone aggregation over an existing campaign directory.
pub fn aggregate_campaign(out_dir: &Path) -> Result<CampaignSummary> {
    let runs_dir = out_dir.join("runs");
    let entries = fs::read_dir(&runs_dir).map_err(|e| {
        Error::MissingArtifact(format!("campaign runs dir {}: {e}", runs_dir.display()))
    })?;
    let mut results: Vec<(String, RunSummary, bool)> = Vec::new();
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for dir in dirs {
        let summary_path = dir.join("summary.json");
        if !summary_path.exists() {
            continue;
        }
        let text = fs::read_to_string(&summary_path)?;
        let summary: RunSummary = serde_json::from_str(&text)?;
        let label = dir
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_default();
        results.push((label, summary, true));
    }
    if results.is_empty() {
        return Err(Error::MissingArtifact(format!(
            "no completed runs under {}",
            runs_dir.display()
        )));
    }
    let summary = summarize_campaign(&results);
    fs::write(
        out_dir.join("aggregate.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}
