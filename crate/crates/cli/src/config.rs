//! Experiment files.
//!
//! A config is a TOML document with top-level keys and one level of section
//! tables. Keys absent from the file come from the named preset, or from the
//! library defaults when no preset is given. The resolved config written into
//! each run directory is complete, so it parses back to the same value.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sppo::envs::{EnvId, EnvSpec, RewardMode};
use sppo::train::{BcConfig, Stage, StageConfig};
use thiserror::Error;
use toml::{Table, Value};

use crate::presets;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("unknown preset `{0}` (known: {known})", known = presets::NAMES.join(", "))]
    UnknownPreset(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub id: EnvId,
    pub horizon: usize,
    pub success_threshold: f64,
}

impl EnvConfig {
    pub fn new(id: EnvId) -> Self {
        EnvConfig {
            id,
            horizon: id.default_horizon(),
            success_threshold: id.default_success_threshold(),
        }
    }

    pub fn spec(&self, mode: RewardMode) -> EnvSpec {
        EnvSpec {
            id: self.id,
            horizon: self.horizon,
            reward_mode: mode,
            success_threshold: self.success_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Initial states sampled for the critic calibration scatter.
    pub calibration_contexts: usize,
    /// Rollouts per calibration context.
    pub calibration_k: usize,
    /// Trajectories whose per-step critic values are dumped.
    pub traces: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            calibration_contexts: 64,
            calibration_k: 16,
            traces: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Greedy evaluation episodes per measurement.
    pub eval_episodes: usize,
    pub stages: Vec<Stage>,
    /// Policy checkpoint feeding the first stage when earlier stages are
    /// skipped. Its provenance is read from the file name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_checkpoint: Option<PathBuf>,
    pub env: EnvConfig,
    pub expert: StageConfig,
    pub sft: BcConfig,
    pub rl: StageConfig,
    pub diagnostics: DiagnosticsConfig,
}

impl ExperimentConfig {
    pub fn has_stage(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.stages.is_empty() {
            return invalid("stages must not be empty".into());
        }
        if self.stages.contains(&Stage::Init) {
            return invalid("`init` is not a runnable stage".into());
        }
        let rank = |s: &Stage| stage_rank(*s);
        if self.stages.windows(2).any(|w| rank(&w[0]) >= rank(&w[1])) {
            return invalid("stages must be listed once each in the order expert, sft, rl".into());
        }
        if self.stages[0] != Stage::Expert && self.init_checkpoint.is_none() {
            return invalid(format!(
                "stage chain starts at {:?} but no init_checkpoint is given",
                self.stages[0]
            ));
        }
        if self.eval_episodes == 0 {
            return invalid("eval_episodes must be positive".into());
        }
        self.env.spec(RewardMode::SparseOutcome).validate().map_err(|e| ConfigError::Invalid(format!("env: {e}")))?;
        for (name, stage) in [("expert", &self.expert), ("rl", &self.rl)] {
            stage.validate().map_err(|e| ConfigError::Invalid(format!("{name}: {e}")))?;
        }
        self.sft.validate().map_err(|e| ConfigError::Invalid(format!("sft: {e}")))?;
        if self.rl.gamma != 1.0 {
            return invalid("rl.gamma must be 1 under outcome rewards".into());
        }
        if self.diagnostics.calibration_contexts < 2 || self.diagnostics.calibration_k == 0 {
            return invalid("diagnostics needs calibration_contexts >= 2 and calibration_k >= 1".into());
        }
        if self.rl.eval_episodes != self.eval_episodes {
            return invalid("rl.eval_episodes must match eval_episodes".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn stage_rank(s: Stage) -> u8 {
    match s {
        Stage::Init => 0,
        Stage::Expert => 1,
        Stage::Sft => 2,
        Stage::Rl => 3,
    }
}

/// Mirror of the file layout with every key optional. Deserializing the
/// user's text into it first reports unknown keys and bad values with the
/// line they appear on.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(dead_code)]
struct Shape {
    preset: Option<String>,
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
    eval_episodes: Option<usize>,
    stages: Option<Vec<Stage>>,
    init_checkpoint: Option<PathBuf>,
    env: Option<EnvShape>,
    expert: Option<StageConfig>,
    sft: Option<BcConfig>,
    rl: Option<StageConfig>,
    diagnostics: Option<DiagnosticsConfig>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(dead_code)]
struct EnvShape {
    id: Option<EnvId>,
    horizon: Option<usize>,
    success_threshold: Option<f64>,
}

fn to_table<T: Serialize>(v: &T) -> Table {
    Table::try_from(v).expect("defaults serialize to a table")
}

/// Every key except `seed` and `[env]`, at library defaults.
pub fn defaults_table() -> Table {
    let mut t = Table::new();
    t.insert("eval_episodes".into(), Value::Integer(32));
    t.insert(
        "stages".into(),
        Value::Array(vec!["expert".into(), "sft".into(), "rl".into()]),
    );
    t.insert("expert".into(), Value::Table(to_table(&StageConfig::expert())));
    t.insert("sft".into(), Value::Table(to_table(&BcConfig::default())));
    t.insert("rl".into(), Value::Table(to_table(&StageConfig::default())));
    t.insert("diagnostics".into(), Value::Table(to_table(&DiagnosticsConfig::default())));
    t
}

/// Overlays `over` onto `base`: section tables merge key by key, everything
/// else is replaced.
pub fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => {
                for (ik, iv) in o {
                    b.insert(ik, iv);
                }
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn check_depth(t: &Table) -> Result<()> {
    for (k, v) in t {
        if let Value::Table(inner) = v {
            let nested = inner.iter().find(|(ik, iv)| matches!(iv, Value::Table(_)) && ik.as_str() != "filter");
            if let Some((ik, _)) = nested {
                return Err(ConfigError::Parse(format!(
                    "`{k}.{ik}`: tables nest at most one level deep"
                )));
            }
        }
    }
    Ok(())
}

/// Fills horizon and success threshold from the task defaults when the
/// merged table names an env without them.
fn complete_env(t: &mut Table) -> Result<()> {
    let Some(Value::Table(env)) = t.get_mut("env") else {
        return Err(ConfigError::Invalid("missing [env] table (or a preset)".into()));
    };
    let id: EnvId = env
        .get("id")
        .cloned()
        .ok_or_else(|| ConfigError::Invalid("missing field `env.id`".into()))?
        .try_into()
        .map_err(|e| ConfigError::Parse(format!("env.id: {e}")))?;
    env.entry("horizon").or_insert(Value::Integer(id.default_horizon() as i64));
    env.entry("success_threshold").or_insert(Value::Float(id.default_success_threshold()));
    Ok(())
}

/// Builds the full config from a table of user keys, layering it over the
/// named preset or the defaults.
pub fn resolve_table(user: Table) -> Result<ExperimentConfig> {
    check_depth(&user)?;
    let mut base = match user.get("preset") {
        Some(Value::String(name)) => presets::table(name)?,
        Some(other) => return Err(ConfigError::Parse(format!("preset: expected a string, found {other}"))),
        None => defaults_table(),
    };
    if !user.contains_key("seed") {
        return Err(ConfigError::Parse("missing field `seed`".into()));
    }
    merge(&mut base, user);
    complete_env(&mut base)?;
    // fine-tuning curves are measured with the top-level evaluation budget
    if let (Some(n), Some(Value::Table(rl))) = (base.get("eval_episodes").cloned(), base.get_mut("rl")) {
        rl.insert("eval_episodes".into(), n);
    }
    let cfg: ExperimentConfig = base.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    toml::from_str::<Shape>(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let user: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    resolve_table(user)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text).map_err(|e| match e {
        ConfigError::Parse(m) => ConfigError::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use sppo::train::{Algorithm, DemoFilter};

    #[test]
    fn minimal_file_takes_defaults() {
        let cfg = parse_config("seed = 7\n[env]\nid = \"mountain_car\"\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.env, EnvConfig::new(EnvId::MountainCar));
        assert_eq!(cfg.stages, vec![Stage::Expert, Stage::Sft, Stage::Rl]);
        assert_eq!(cfg.expert, StageConfig::expert());
        assert_eq!(cfg.sft, BcConfig::default());
        assert_eq!(cfg.rl, StageConfig::default());
        assert_eq!(cfg.eval_episodes, 32);
        assert_eq!(cfg.diagnostics.calibration_contexts, 64);
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = parse_config("preset = \"paper-lander\"\nseed = 3\n[rl]\nalgorithm = \"grpo\"\n").unwrap();
        let again = parse_config(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(again.rl.algorithm, Algorithm::Grpo);
    }

    #[test]
    fn misspelled_algorithm_names_the_field() {
        let err = parse_config("seed = 1\n[env]\nid = \"pendulum\"\n[rl]\nalgorithm = \"spo\"\n").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, ConfigError::Parse(_)));
        assert!(msg.contains("algorithm"), "{msg}");
        assert!(msg.contains("line 5"), "{msg}");
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let msg = parse_config("seed = 1\n[env]\nid = \"pendulum\"\n[rl]\nbatch = 3\n").unwrap_err().to_string();
        assert!(msg.contains("batch"), "{msg}");
        assert!(msg.contains("line 5"), "{msg}");
    }

    #[test]
    fn missing_seed_rejected() {
        let msg = parse_config("[env]\nid = \"pendulum\"\n").unwrap_err().to_string();
        assert!(msg.contains("seed"), "{msg}");
    }

    #[test]
    fn paper_cartpole_preset() {
        let cfg = parse_config("preset = \"paper-cartpole\"\nseed = 1\n").unwrap();
        assert_eq!(cfg.rl.batch_size, 64);
        assert_eq!(cfg.rl.clip_eps, 0.2);
        assert_eq!(cfg.env.horizon, 200);
        assert_eq!(cfg.env.id, EnvId::PrecisionCartpole);
    }

    #[test]
    fn stage_order_enforced() {
        let err = parse_config("seed = 1\nstages = [\"rl\", \"sft\"]\n[env]\nid = \"pendulum\"\n").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)));
        let err = parse_config("seed = 1\nstages = [\"sft\", \"rl\"]\n[env]\nid = \"pendulum\"\n").unwrap_err();
        assert!(err.to_string().contains("init_checkpoint"));
    }

    #[test]
    fn nonunit_rl_gamma_rejected() {
        let err = parse_config("seed = 1\n[env]\nid = \"pendulum\"\n[rl]\ngamma = 0.99\n").unwrap_err();
        assert!(err.to_string().contains("gamma"));
    }

    #[test]
    fn deep_nesting_rejected() {
        let err = parse_config("seed = 1\n[env]\nid = \"pendulum\"\n[rl.extra]\nx = 1\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)), "{err}");
        // the demo filter's inline table is a value, not a section
        let cfg = parse_config("seed = 1\n[env]\nid = \"pendulum\"\n[sft]\nfilter = { min_dense_return = 2.0 }\n").unwrap();
        assert_eq!(cfg.sft.filter, DemoFilter::MinDenseReturn(2.0));
    }

    #[test]
    fn eval_episodes_propagates_to_rl() {
        let cfg = parse_config("seed = 1\neval_episodes = 8\n[env]\nid = \"pendulum\"\n").unwrap();
        assert_eq!(cfg.rl.eval_episodes, 8);
    }

    #[test]
    fn user_env_overrides_preset_keys_only() {
        let cfg = parse_config("preset = \"paper-pendulum\"\nseed = 1\n[env]\nhorizon = 50\n").unwrap();
        assert_eq!(cfg.env.id, EnvId::Pendulum);
        assert_eq!(cfg.env.horizon, 50);
    }
}
