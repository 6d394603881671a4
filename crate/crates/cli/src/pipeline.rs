//! One experiment run: expert synthesis, behavior cloning and sparse-reward
//! fine-tuning into a run directory.
//!
//! ```text
//! <run>/config.toml              resolved config, parses back unchanged
//! <run>/seed
//! <run>/input_hash               git blob sha256 of every input file
//! <run>/expert_curve.csv
//! <run>/expert_report.txt
//! <run>/sft_report.txt
//! <run>/curve.csv, timing.csv    fine-tuning curve; wall clock kept apart
//! <run>/checkpoints/{expert,sft,rl,critic}.ckpt
//! <run>/diagnostics/             value traces, calibration, plot.gp
//! <run>/DONE
//! ```
//!
//! Each stage draws from its own seed stream, so a resumed run that reloads
//! finished stages from their checkpoints ends with the same bytes as an
//! uninterrupted one.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use sppo::diagnostics::{
    calibration_report, efficiency_curves, trace_values, write_calibration_summary, write_gnuplot_script,
    write_histograms_csv, write_scatter_csv, write_traces_csv, RunCurve,
};
use sppo::envs::{env_reset, RewardMode};
use sppo::rng::{self, tag};
use sppo::tensor::{load_checkpoint, save_checkpoint, Head, MlpParams};
use sppo::train::{
    behavior_cloning, collect_demos, collect_rollouts, evaluate, expert_synthesis, rl_finetune, run_episode,
    write_curve_csv, write_expert_curve_csv, write_timing_csv, ActionMode, CurveRow, DemoSampling, Policy, Stage,
    StageConfig, TrainError,
};

use crate::config::{ConfigError, ExperimentConfig};
use crate::{io_err, under_root, Result};

pub const DONE: &str = "DONE";
pub const CONFIG_FILE: &str = "config.toml";

/// Git's object id construction with sha256: `blob <len>\0<content>`.
pub fn git_blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex::encode(h.finalize())
}

/// Stage that produced a checkpoint, from its file stem.
pub fn provenance_from_path(path: &Path) -> Result<Stage> {
    match path.file_stem().and_then(|s| s.to_str()) {
        Some("init") => Ok(Stage::Init),
        Some("expert") => Ok(Stage::Expert),
        Some("sft") => Ok(Stage::Sft),
        Some("rl") => Ok(Stage::Rl),
        _ => Err(ConfigError::Invalid(format!(
            "cannot tell the stage of {}: name it init, expert, sft or rl (.ckpt)",
            path.display()
        ))
        .into()),
    }
}

pub fn load_policy(path: &Path) -> Result<Policy> {
    let provenance = provenance_from_path(path)?;
    Ok(Policy {
        net: load_checkpoint(path)?,
        provenance,
    })
}

/// `--out` wins, then the config's `output_dir`, then a name derived from
/// the task, algorithm and seed. The last two live under the output root.
pub fn run_dir(cfg: &ExperimentConfig, out: Option<&Path>) -> PathBuf {
    if let Some(p) = out {
        return p.to_path_buf();
    }
    match &cfg.output_dir {
        Some(p) => under_root(p),
        None => under_root(&PathBuf::from("runs").join(format!(
            "{}-{}-seed-{}",
            cfg.env.id.name(),
            cfg.rl.algorithm,
            cfg.seed
        ))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    /// Already finished before this call.
    pub skipped: bool,
    /// Stages reloaded from checkpoints rather than trained.
    pub reused: Vec<Stage>,
    pub final_success: Option<f64>,
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    f(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

fn stage_rng(seed: u64, t: u64) -> rng::Rng {
    rng::stream(seed, &[t])
}

/// Sparse success of sampled (not greedy) rollouts from fixed initial
/// states: how often the stochastic policy solves the task.
pub fn sampled_success(policy: &MlpParams, cfg: &ExperimentConfig, episodes: usize, seed: u64) -> Result<f64> {
    let spec = cfg.env.spec(RewardMode::SparseOutcome);
    let mut hits = 0;
    for i in 0..episodes as u64 {
        let init = env_reset(&spec, &mut rng::stream(seed, &[i]));
        let mut r = rng::stream(seed, &[i, 1]);
        hits += usize::from(run_episode(policy, &spec, init, ActionMode::Sample(&mut r), i)?.outcome.success);
    }
    Ok(hits as f64 / episodes as f64)
}

fn input_manifest(resolved: &str, cfg: &ExperimentConfig) -> Result<String> {
    let mut out = format!("{}  {CONFIG_FILE}\n", git_blob_hash(resolved.as_bytes()));
    if let Some(p) = &cfg.init_checkpoint {
        let bytes = fs::read(p).map_err(io_err(p))?;
        out.push_str(&format!("{}  {}\n", git_blob_hash(&bytes), p.display()));
    }
    Ok(out)
}

/// Creates or reopens the run directory. A directory holding a different
/// config, or any run at all without `resume`, is refused.
fn prepare(cfg: &ExperimentConfig, dir: &Path, resume: bool) -> Result<bool> {
    let resolved = cfg.to_toml();
    let cfg_path = dir.join(CONFIG_FILE);
    if cfg_path.exists() {
        if !resume {
            return Err(ConfigError::Invalid(format!(
                "{} already holds a run; pass --resume to continue it",
                dir.display()
            ))
            .into());
        }
        let existing = fs::read_to_string(&cfg_path).map_err(io_err(&cfg_path))?;
        if existing != resolved {
            return Err(ConfigError::Invalid(format!(
                "{} was started with a different config; refusing to resume",
                dir.display()
            ))
            .into());
        }
        if dir.join(DONE).exists() {
            return Ok(true);
        }
    }
    for d in [dir.to_path_buf(), dir.join("checkpoints"), dir.join("diagnostics")] {
        fs::create_dir_all(&d).map_err(io_err(&d))?;
    }
    let manifest = input_manifest(&resolved, cfg)?;
    write_with(&cfg_path, |w| w.write_all(resolved.as_bytes()))?;
    write_with(&dir.join("seed"), |w| writeln!(w, "{}", cfg.seed))?;
    write_with(&dir.join("input_hash"), |w| w.write_all(manifest.as_bytes()))?;
    Ok(false)
}

fn require(policy: &Option<Policy>, stage: Stage) -> Result<&Policy> {
    policy
        .as_ref()
        .ok_or_else(|| ConfigError::Invalid(format!("stage {stage:?} has no input policy")).into())
}

pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path, resume: bool) -> Result<RunSummary> {
    cfg.validate()?;
    if prepare(cfg, dir, resume)? {
        log::info!("{}: already complete, skipping", dir.display());
        return Ok(RunSummary {
            dir: dir.to_path_buf(),
            skipped: true,
            reused: Vec::new(),
            final_success: final_from_dir(dir),
        });
    }
    let ckpt = |name: &str| dir.join("checkpoints").join(format!("{name}.ckpt"));
    let dense = cfg.env.spec(RewardMode::Dense);
    let sparse = cfg.env.spec(RewardMode::SparseOutcome);
    let mut reused = Vec::new();
    let mut policy: Option<Policy> = match (&cfg.init_checkpoint, cfg.stages[0]) {
        (Some(p), first) if first != Stage::Expert => Some(load_policy(p)?),
        _ => None,
    };

    if cfg.has_stage(Stage::Expert) {
        let path = ckpt("expert");
        if resume && path.exists() {
            reused.push(Stage::Expert);
            policy = Some(load_policy(&path)?);
        } else {
            log::info!("expert synthesis on {} ({} updates)", cfg.env.id.name(), cfg.expert.total_updates);
            let report = expert_synthesis(&dense, &cfg.expert, &mut stage_rng(cfg.seed, tag::EXPERT))?;
            write_with(&dir.join("expert_curve.csv"), |w| write_expert_curve_csv(&report.curve, w))?;
            write_with(&dir.join("expert_report.txt"), |w| {
                writeln!(w, "greedy_success = {}", report.success_rate)?;
                writeln!(w, "selected_update = {}", report.selected_update)
            })?;
            log::info!(
                "expert: greedy success {:.3} at update {}",
                report.success_rate,
                report.selected_update
            );
            save_checkpoint(&report.policy.net, &path)?;
            policy = Some(report.policy);
        }
    }

    if cfg.has_stage(Stage::Sft) {
        let path = ckpt("sft");
        if resume && path.exists() {
            reused.push(Stage::Sft);
            policy = Some(load_policy(&path)?);
        } else {
            let teacher = require(&policy, Stage::Sft)?;
            let greedy = cfg.sft.sampling == DemoSampling::Greedy;
            let demos = collect_demos(
                &teacher.net,
                &dense,
                cfg.sft.demos,
                greedy,
                &mut stage_rng(cfg.seed, tag::DEMOS),
            )?;
            let report = behavior_cloning(&sparse, &demos, &cfg.sft, &mut stage_rng(cfg.seed, tag::SFT))?;
            let eval_seed = rng::stream(cfg.seed, &[tag::EVAL, 1]);
            let greedy_rate = evaluate(&report.policy.net, &sparse, cfg.eval_episodes, rand_seed(eval_seed))?.success_rate;
            let sampled = sampled_success(
                &report.policy.net,
                cfg,
                cfg.eval_episodes,
                rand_seed(rng::stream(cfg.seed, &[tag::EVAL, 2])),
            )?;
            if sampled == 0.0 || sampled == 1.0 {
                log::warn!(
                    "cloned policy solves {sampled} of sampled rollouts; fine-tuning gets no contrast between outcomes"
                );
            }
            write_with(&dir.join("sft_report.txt"), |w| {
                writeln!(w, "kept_episodes = {}", report.kept_episodes)?;
                writeln!(w, "offered_episodes = {}", report.offered_episodes)?;
                writeln!(w, "train_samples = {}", report.train_samples)?;
                writeln!(w, "holdout_samples = {}", report.holdout_samples)?;
                writeln!(w, "holdout_accuracy = {}", report.holdout_accuracy)?;
                writeln!(w, "epochs = {}", report.epochs)?;
                writeln!(w, "greedy_success = {greedy_rate}")?;
                writeln!(w, "sampled_success = {sampled}")
            })?;
            log::info!(
                "sft: kept {}/{} demos, held-out accuracy {:.3}, greedy {greedy_rate:.3}, sampled {sampled:.3}",
                report.kept_episodes,
                report.offered_episodes,
                report.holdout_accuracy
            );
            save_checkpoint(&report.policy.net, &path)?;
            policy = Some(report.policy);
        }
    }

    let mut final_success = None;
    if cfg.has_stage(Stage::Rl) {
        let path = ckpt("rl");
        let critic_path = ckpt("critic");
        let (rl_policy, critic) = if resume && path.exists() && dir.join("curve.csv").exists() {
            reused.push(Stage::Rl);
            let critic = if cfg.rl.algorithm.has_critic() {
                Some(load_checkpoint(&critic_path)?)
            } else {
                None
            };
            (load_policy(&path)?, critic)
        } else {
            let init = require(&policy, Stage::Rl)?;
            let report = match rl_finetune(init, &sparse, &cfg.rl, &mut stage_rng(cfg.seed, tag::RL)) {
                Ok(r) => r,
                Err(TrainError::Diverged {
                    update,
                    reason,
                    last_good,
                }) => {
                    save_checkpoint(&last_good.net, &ckpt("rl_last_good"))?;
                    return Err(TrainError::Diverged {
                        update,
                        reason,
                        last_good,
                    }
                    .into());
                }
                Err(e) => return Err(e.into()),
            };
            if report.degenerate_groups > 0 {
                log::info!("{} groups had identical outcomes", report.degenerate_groups);
            }
            write_with(&dir.join("curve.csv"), |w| write_curve_csv(&report.curve, w))?;
            write_with(&dir.join("timing.csv"), |w| write_timing_csv(&report.curve, w))?;
            save_checkpoint(&report.policy.net, &path)?;
            if let Some(c) = &report.critic {
                save_checkpoint(c, &critic_path)?;
            }
            (report.policy, report.critic)
        };
        final_success = final_from_dir(dir);
        diagnostics(cfg, dir, &rl_policy.net, critic.as_ref())?;
    }

    write_with(&dir.join(DONE), |_| Ok(()))?;
    Ok(RunSummary {
        dir: dir.to_path_buf(),
        skipped: false,
        reused,
        final_success,
    })
}

fn rand_seed(mut r: rng::Rng) -> u64 {
    use rand::Rng as _;
    r.random()
}

/// Last evaluated success rate in the run's curve.
pub fn final_from_dir(dir: &Path) -> Option<f64> {
    let f = File::open(dir.join("curve.csv")).ok()?;
    let rows: Vec<CurveRow> = sppo::train::read_curve_csv(f).ok()?;
    rows.iter().rev().find_map(|r| r.eval_success_rate)
}

fn diagnostics(cfg: &ExperimentConfig, dir: &Path, policy: &MlpParams, critic: Option<&MlpParams>) -> Result<()> {
    let out = dir.join("diagnostics");
    let sparse = cfg.env.spec(RewardMode::SparseOutcome);
    let mut calibration = None;
    if let Some(critic) = critic {
        if cfg.diagnostics.traces > 0 {
            let trace_cfg = StageConfig {
                batch_size: cfg.diagnostics.traces,
                ..cfg.rl.clone()
            };
            let batch = collect_rollouts(policy, &sparse, &trace_cfg, &mut rng::stream(cfg.seed, &[tag::EVAL, 3]))?;
            let traces = trace_values(critic, &batch.trajectories)?;
            write_with(&out.join("value_traces.csv"), |w| write_traces_csv(&traces, w))?;
        }
        if critic.head() == Head::Sigmoid {
            let report = calibration_report(
                critic,
                &sparse,
                policy,
                cfg.diagnostics.calibration_contexts,
                cfg.diagnostics.calibration_k,
                &mut stage_rng(cfg.seed, tag::CALIBRATION),
            )?;
            write_with(&out.join("calibration_scatter.csv"), |w| write_scatter_csv(&report, w))?;
            write_with(&out.join("calibration_histograms.csv"), |w| write_histograms_csv(&report, w))?;
            write_with(&out.join("calibration.txt"), |w| write_calibration_summary(&report, w))?;
            log::info!("critic calibration: pearson {:?}, spearman {:?}", report.pearson, report.spearman);
            calibration = Some("calibration_scatter.csv");
        }
    }
    let run = sppo::diagnostics::load_run(
        cfg.rl.algorithm.name(),
        &dir.join("curve.csv"),
        Some(&dir.join("timing.csv")),
    )?;
    write_efficiency(&out, &[run], calibration)
}

/// Efficiency tables for the given runs plus a gnuplot script over them.
pub fn write_efficiency(out: &Path, runs: &[RunCurve], calibration: Option<&str>) -> Result<()> {
    let table = efficiency_curves(runs)?;
    write_with(&out.join("efficiency_by_update.csv"), |w| table.write_by_update_csv(w))?;
    write_with(&out.join("efficiency_by_time.csv"), |w| table.write_by_time_csv(w))?;
    write_with(&out.join("thresholds.csv"), |w| table.write_thresholds_csv(w))?;
    write_with(&out.join("plot.gp"), |w| write_gnuplot_script(&table.labels, calibration, w))
}
