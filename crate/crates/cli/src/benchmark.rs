//! Tasks × algorithms × seeds.
//!
//! ```toml
//! seeds = [1, 2, 3]
//! envs = ["paper-cartpole", "paper-mountain-car"]
//! algorithms = ["sppo", "ppo_gae"]
//! output_dir = "bench"
//!
//! [rl]            # optional overrides applied to every cell
//! total_updates = 10
//! ```
//!
//! For each task and seed the expert and cloned policy are trained once
//! under `<out>/<task>/shared/seed-<s>`; every algorithm then fine-tunes
//! from that checkpoint in `<out>/<task>/<algorithm>/seed-<s>`. Cells run
//! one after another. A failing cell is logged and recorded in
//! `failures.txt` while the remaining cells still run.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use sppo::diagnostics::load_run;
use sppo::train::Algorithm;
use toml::{Table, Value};

use crate::config::{resolve_table, ConfigError, ExperimentConfig};
use crate::pipeline::{run_experiment, write_efficiency, DONE};
use crate::{io_err, presets, report, under_root, CliError, Result};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Matrix {
    pub seeds: Vec<u64>,
    /// Preset names.
    pub envs: Vec<String>,
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub eval_episodes: Option<usize>,
    #[serde(default)]
    pub expert: Option<Table>,
    #[serde(default)]
    pub sft: Option<Table>,
    #[serde(default)]
    pub rl: Option<Table>,
    #[serde(default)]
    pub diagnostics: Option<Table>,
}

pub fn parse_matrix(text: &str) -> std::result::Result<Matrix, ConfigError> {
    let m: Matrix = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    if m.seeds.is_empty() || m.envs.is_empty() || m.algorithms.is_empty() {
        return Err(ConfigError::Invalid("seeds, envs and algorithms must be non-empty".into()));
    }
    let distinct = |n: usize, m: usize| n == m;
    if !distinct(m.seeds.iter().collect::<BTreeSet<_>>().len(), m.seeds.len())
        || !distinct(m.envs.iter().collect::<BTreeSet<_>>().len(), m.envs.len())
        || !distinct(m.algorithms.iter().collect::<BTreeSet<_>>().len(), m.algorithms.len())
    {
        return Err(ConfigError::Invalid("seeds, envs and algorithms must not repeat".into()));
    }
    for e in &m.envs {
        presets::env_name(e)?;
    }
    Ok(m)
}

pub fn load_matrix(path: &Path) -> std::result::Result<Matrix, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_matrix(&text).map_err(|e| match e {
        ConfigError::Parse(m) => ConfigError::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// One fine-tuning run of the matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub env: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub dir: PathBuf,
    pub config: ExperimentConfig,
}

/// Expert and cloning stages shared by the cells of one task and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedRun {
    pub env: String,
    pub seed: u64,
    pub dir: PathBuf,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub root: PathBuf,
    pub shared: Vec<SharedRun>,
    pub cells: Vec<Cell>,
}

impl Matrix {
    fn base_table(&self, preset: &str, seed: u64) -> Table {
        let mut t = Table::new();
        t.insert("preset".into(), Value::String(preset.into()));
        t.insert("seed".into(), Value::Integer(seed as i64));
        if let Some(n) = self.eval_episodes {
            t.insert("eval_episodes".into(), Value::Integer(n as i64));
        }
        for (k, v) in [
            ("expert", &self.expert),
            ("sft", &self.sft),
            ("rl", &self.rl),
            ("diagnostics", &self.diagnostics),
        ] {
            if let Some(v) = v {
                t.insert(k.into(), Value::Table(v.clone()));
            }
        }
        t
    }

    /// Resolves every config up front so that a bad override fails before
    /// any training starts.
    pub fn plan(&self, out: Option<&Path>) -> std::result::Result<Plan, ConfigError> {
        let root = match (out, &self.output_dir) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(p)) => under_root(p),
            (None, None) => under_root(Path::new("benchmark")),
        };
        let stages = |names: &[&str]| Value::Array(names.iter().map(|&s| Value::String(s.into())).collect());
        let mut shared = Vec::new();
        let mut cells = Vec::new();
        for preset in &self.envs {
            let env = presets::env_name(preset)?.to_string();
            for &seed in &self.seeds {
                let dir = root.join(&env).join("shared").join(format!("seed-{seed}"));
                let mut t = self.base_table(preset, seed);
                t.insert("stages".into(), stages(&["expert", "sft"]));
                shared.push(SharedRun {
                    env: env.clone(),
                    seed,
                    config: resolve_table(t)?,
                    dir: dir.clone(),
                });
                let sft_ckpt = dir.join("checkpoints").join("sft.ckpt");
                for &algorithm in &self.algorithms {
                    let mut t = self.base_table(preset, seed);
                    t.insert("stages".into(), stages(&["rl"]));
                    t.insert(
                        "init_checkpoint".into(),
                        Value::String(sft_ckpt.to_string_lossy().into_owned()),
                    );
                    let rl = t
                        .entry("rl")
                        .or_insert_with(|| Value::Table(Table::new()))
                        .as_table_mut()
                        .expect("rl is a table");
                    rl.insert("algorithm".into(), Value::String(algorithm.name().into()));
                    cells.push(Cell {
                        env: env.clone(),
                        algorithm,
                        seed,
                        dir: root.join(&env).join(algorithm.name()).join(format!("seed-{seed}")),
                        config: resolve_table(t)?,
                    });
                }
            }
        }
        Ok(Plan { root, shared, cells })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSummary {
    pub root: PathBuf,
    pub completed: usize,
    pub skipped: usize,
    /// (cell directory, error message)
    pub failures: Vec<(PathBuf, String)>,
}

pub fn run_benchmark(matrix: &Matrix, out: Option<&Path>, resume: bool) -> Result<BenchmarkSummary> {
    let plan = matrix.plan(out)?;
    fs::create_dir_all(&plan.root).map_err(io_err(&plan.root))?;
    let mut failures = Vec::new();
    let mut completed = 0;
    let mut skipped = 0;
    let mut broken_shared = BTreeSet::new();
    for s in &plan.shared {
        // shared stages are reused whenever they already finished
        let reuse = resume || s.dir.join(DONE).exists();
        if let Err(e) = run_experiment(&s.config, &s.dir, reuse) {
            log::error!("{}: {e}", s.dir.display());
            broken_shared.insert((s.env.clone(), s.seed));
            failures.push((s.dir.clone(), e.to_string()));
        }
    }
    for c in &plan.cells {
        if broken_shared.contains(&(c.env.clone(), c.seed)) {
            failures.push((c.dir.clone(), "shared expert/cloning stage failed".into()));
            continue;
        }
        log::info!("cell {} / {} / seed {}", c.env, c.algorithm, c.seed);
        match run_experiment(&c.config, &c.dir, resume) {
            Ok(r) if r.skipped => skipped += 1,
            Ok(_) => completed += 1,
            Err(e) => {
                log::error!("{}: {e}", c.dir.display());
                failures.push((c.dir.clone(), e.to_string()));
            }
        }
    }

    let envs: BTreeSet<&str> = plan.cells.iter().map(|c| c.env.as_str()).collect();
    for env in envs {
        let runs: Vec<_> = plan
            .cells
            .iter()
            .filter(|c| c.env == env && c.dir.join(DONE).exists())
            .filter_map(|c| {
                load_run(
                    &format!("{}/seed-{}", c.algorithm, c.seed),
                    &c.dir.join("curve.csv"),
                    Some(&c.dir.join("timing.csv")),
                )
                .ok()
            })
            .collect();
        if !runs.is_empty() {
            write_efficiency(&plan.root.join(env), &runs, None)?;
        }
    }

    let failures_path = plan.root.join("failures.txt");
    if failures.is_empty() {
        if failures_path.exists() {
            fs::remove_file(&failures_path).map_err(io_err(&failures_path))?;
        }
    } else {
        let text: String = failures.iter().map(|(d, e)| format!("{}: {e}\n", d.display())).collect();
        fs::write(&failures_path, text).map_err(io_err(&failures_path))?;
    }
    match report::write_report(&plan.root) {
        Ok(_) | Err(CliError::EmptyTree(_)) => {}
        Err(e) => return Err(e),
    }
    let total = plan.shared.len() + plan.cells.len();
    if !failures.is_empty() {
        return Err(CliError::CellsFailed {
            failed: failures.len(),
            total,
        });
    }
    Ok(BenchmarkSummary {
        root: plan.root,
        completed,
        skipped,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn figure_matrix_has_twenty_four_cells() {
        let m = parse_matrix(
            "seeds = [1, 2, 3]\nenvs = [\"paper-cartpole\", \"paper-mountain-car\", \"paper-pendulum\", \"paper-lander\"]\nalgorithms = [\"sppo\", \"ppo_gae\"]\n",
        )
        .unwrap();
        let plan = m.plan(Some(Path::new("/tmp/x"))).unwrap();
        assert_eq!(plan.cells.len(), 4 * 2 * 3);
        assert_eq!(plan.shared.len(), 4 * 3);
        let dirs: BTreeSet<_> = plan.cells.iter().map(|c| c.dir.clone()).collect();
        assert_eq!(dirs.len(), 24);
    }

    #[test]
    fn overrides_reach_every_cell() {
        let m = parse_matrix(
            "seeds = [5]\nenvs = [\"paper-lander\"]\nalgorithms = [\"grpo\", \"sppo\"]\n[rl]\ntotal_updates = 3\n",
        )
        .unwrap();
        let plan = m.plan(Some(Path::new("out"))).unwrap();
        for c in &plan.cells {
            assert_eq!(c.config.rl.total_updates, 3);
            assert_eq!(c.config.rl.algorithm, c.algorithm);
            assert_eq!(c.config.rl.batch_size, 16);
            assert!(c.config.init_checkpoint.as_ref().unwrap().ends_with("shared/seed-5/checkpoints/sft.ckpt"));
        }
        assert_eq!(plan.cells[0].dir, Path::new("out/lunar_lander_lite/grpo/seed-5"));
    }

    #[test]
    fn bad_override_is_a_config_error() {
        let m = parse_matrix("seeds = [1]\nenvs = [\"paper-lander\"]\nalgorithms = [\"sppo\"]\n[rl]\nbogus = 1\n").unwrap();
        assert!(m.plan(None).is_err());
    }

    #[test]
    fn rejects_repeats_and_unknown_presets() {
        assert!(parse_matrix("seeds = [1, 1]\nenvs = [\"paper-lander\"]\nalgorithms = [\"sppo\"]\n").is_err());
        assert!(parse_matrix("seeds = [1]\nenvs = [\"hopper\"]\nalgorithms = [\"sppo\"]\n").is_err());
        assert!(parse_matrix("seeds = [1]\nenvs = [\"paper-lander\"]\nalgorithms = [\"dpo\"]\n").is_err());
    }
}
