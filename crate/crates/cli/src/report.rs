//! Summary of a results tree: final and best greedy success per run,
//! mean and range across seeds per (task, algorithm), and the first update
//! reaching the success threshold.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sppo::diagnostics::{efficiency_curves, load_run, Threshold, SUCCESS_THRESHOLD};
use sppo::train::Stage;
use walkdir::WalkDir;

use crate::config::parse_config;
use crate::pipeline::{CONFIG_FILE, DONE};
use crate::{io_err, CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub env: String,
    pub algorithm: String,
    pub seed: u64,
    pub dir: PathBuf,
    pub final_success: Option<f64>,
    pub best_success: Option<f64>,
    pub threshold: Threshold,
    /// Curve present and the run finished.
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub env: String,
    pub algorithm: String,
    /// Complete runs contributing to the statistics.
    pub runs: usize,
    pub incomplete: usize,
    pub mean_final: Option<f64>,
    pub min_final: Option<f64>,
    pub max_final: Option<f64>,
    pub mean_best: Option<f64>,
    /// Runs that reached the threshold.
    pub reached: usize,
}

fn read_cell(dir: &Path, config_text: &str) -> Option<CellResult> {
    let cfg = match parse_config(config_text) {
        Ok(c) => c,
        Err(e) => {
            log::warn!("{}: unreadable config, skipped: {e}", dir.display());
            return None;
        }
    };
    if !cfg.has_stage(Stage::Rl) {
        return None;
    }
    let curve = dir.join("curve.csv");
    let timing = dir.join("timing.csv");
    let run = curve
        .exists()
        .then(|| load_run("run", &curve, timing.exists().then_some(timing.as_path())))
        .and_then(|r| r.map_err(|e| log::warn!("{e}")).ok());
    let mut cell = CellResult {
        env: cfg.env.id.name().to_string(),
        algorithm: cfg.rl.algorithm.name().to_string(),
        seed: cfg.seed,
        dir: dir.to_path_buf(),
        final_success: None,
        best_success: None,
        threshold: Threshold::NotReached,
        complete: false,
    };
    if let Some(run) = run {
        let evals: Vec<f64> = run.rows.iter().filter_map(|r| r.eval_success_rate).collect();
        cell.final_success = evals.last().copied();
        cell.best_success = evals.iter().copied().reduce(f64::max);
        if let Ok(t) = efficiency_curves(std::slice::from_ref(&run)) {
            cell.threshold = t.thresholds[0];
        }
        cell.complete = dir.join(DONE).exists() && cell.final_success.is_some();
    }
    Some(cell)
}

/// Every fine-tuning run below `root`, sorted by task, algorithm, seed.
pub fn collect_cells(root: &Path) -> Result<Vec<CellResult>> {
    if !root.is_dir() {
        return Err(CliError::EmptyTree(root.display().to_string()));
    }
    let mut cells = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| CliError::Io {
            path: root.display().to_string(),
            source: e.into(),
        })?;
        if entry.file_type().is_file() && entry.file_name() == CONFIG_FILE {
            let path = entry.path();
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            if let Some(c) = read_cell(path.parent().expect("file has a parent"), &text) {
                cells.push(c);
            }
        }
    }
    if cells.is_empty() {
        return Err(CliError::EmptyTree(root.display().to_string()));
    }
    cells.sort_by(|a, b| (&a.env, &a.algorithm, a.seed, &a.dir).cmp(&(&b.env, &b.algorithm, b.seed, &b.dir)));
    Ok(cells)
}

pub fn summarize(cells: &[CellResult]) -> Vec<GroupSummary> {
    let mut groups: BTreeMap<(&str, &str), Vec<&CellResult>> = BTreeMap::new();
    for c in cells {
        groups.entry((&c.env, &c.algorithm)).or_default().push(c);
    }
    groups
        .into_iter()
        .map(|((env, algorithm), members)| {
            let done: Vec<&&CellResult> = members.iter().filter(|c| c.complete).collect();
            let finals: Vec<f64> = done.iter().filter_map(|c| c.final_success).collect();
            let bests: Vec<f64> = done.iter().filter_map(|c| c.best_success).collect();
            let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
            GroupSummary {
                env: env.to_string(),
                algorithm: algorithm.to_string(),
                runs: done.len(),
                incomplete: members.len() - done.len(),
                mean_final: mean(&finals),
                min_final: finals.iter().copied().reduce(f64::min),
                max_final: finals.iter().copied().reduce(f64::max),
                mean_best: mean(&bests),
                reached: done.iter().filter(|c| c.threshold != Threshold::NotReached).count(),
            }
        })
        .collect()
}

fn fmt3(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

pub fn render(cells: &[CellResult], groups: &[GroupSummary]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "runs");
    let _ = writeln!(
        s,
        "{:<20} {:<8} {:>6} {:>7} {:>7}  {:<24} status",
        "env", "alg", "seed", "final", "best", format!("first >= {SUCCESS_THRESHOLD}")
    );
    for c in cells {
        let _ = writeln!(
            s,
            "{:<20} {:<8} {:>6} {:>7} {:>7}  {:<24} {}",
            c.env,
            c.algorithm,
            c.seed,
            fmt3(c.final_success),
            fmt3(c.best_success),
            c.threshold.to_string(),
            if c.complete { "ok" } else { "incomplete" }
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "across seeds (complete runs)");
    let _ = writeln!(
        s,
        "{:<20} {:<8} {:>4} {:>7} {:>15} {:>9} {:>8}",
        "env", "alg", "n", "final", "range", "best", "reached"
    );
    for g in groups {
        let range = match (g.min_final, g.max_final) {
            (Some(a), Some(b)) => format!("[{a:.3}, {b:.3}]"),
            _ => "-".into(),
        };
        let _ = writeln!(
            s,
            "{:<20} {:<8} {:>4} {:>7} {:>15} {:>9} {:>5}/{}",
            g.env,
            g.algorithm,
            g.runs,
            fmt3(g.mean_final),
            range,
            fmt3(g.mean_best),
            g.reached,
            g.runs
        );
    }
    s
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_csvs(root: &Path, cells: &[CellResult], groups: &[GroupSummary]) -> Result<()> {
    let path = root.join("report_runs.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e.into(),
    })?;
    let rows = std::iter::once(
        [
            "env",
            "algorithm",
            "seed",
            "final_success",
            "best_success",
            "threshold_update",
            "threshold_wall_clock_s",
            "complete",
            "dir",
        ]
        .map(String::from),
    )
    .chain(cells.iter().map(|c| {
        let (tu, tt) = match c.threshold {
            Threshold::Reached {
                update, wall_clock_s, ..
            } => (update.to_string(), wall_clock_s.to_string()),
            Threshold::NotReached => ("not reached".into(), String::new()),
        };
        [
            c.env.clone(),
            c.algorithm.clone(),
            c.seed.to_string(),
            opt(c.final_success),
            opt(c.best_success),
            tu,
            tt,
            c.complete.to_string(),
            c.dir.display().to_string(),
        ]
    }));
    for r in rows {
        w.write_record(&r).map_err(|e| CliError::Io {
            path: path.display().to_string(),
            source: e.into(),
        })?;
    }
    w.flush().map_err(io_err(&path))?;

    let path = root.join("report_groups.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e.into(),
    })?;
    let rows = std::iter::once(
        [
            "env",
            "algorithm",
            "runs",
            "incomplete",
            "mean_final",
            "min_final",
            "max_final",
            "mean_best",
            "reached",
        ]
        .map(String::from),
    )
    .chain(groups.iter().map(|g| {
        [
            g.env.clone(),
            g.algorithm.clone(),
            g.runs.to_string(),
            g.incomplete.to_string(),
            opt(g.mean_final),
            opt(g.min_final),
            opt(g.max_final),
            opt(g.mean_best),
            g.reached.to_string(),
        ]
    }));
    for r in rows {
        w.write_record(&r).map_err(|e| CliError::Io {
            path: path.display().to_string(),
            source: e.into(),
        })?;
    }
    w.flush().map_err(io_err(&path))
}

/// Writes `report.txt`, `report_runs.csv` and `report_groups.csv` into
/// `root` and returns the text.
pub fn write_report(root: &Path) -> Result<String> {
    let cells = collect_cells(root)?;
    let groups = summarize(&cells);
    let text = render(&cells, &groups);
    let path = root.join("report.txt");
    fs::write(&path, &text).map_err(io_err(&path))?;
    write_csvs(root, &cells, &groups)?;
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(seed: u64, fin: f64) -> CellResult {
        CellResult {
            env: "mountain_car".into(),
            algorithm: "sppo".into(),
            seed,
            dir: PathBuf::from(format!("x/seed-{seed}")),
            final_success: Some(fin),
            best_success: Some(fin),
            threshold: Threshold::NotReached,
            complete: true,
        }
    }

    #[test]
    fn mean_and_range_across_seeds() {
        let g = summarize(&[cell(1, 0.9), cell(2, 0.8), cell(3, 1.0)]);
        assert_eq!(g.len(), 1);
        assert!((g[0].mean_final.unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(g[0].min_final, Some(0.8));
        assert_eq!(g[0].max_final, Some(1.0));
        assert_eq!(g[0].runs, 3);
        let text = render(&[], &g);
        assert!(text.contains("0.900"));
        assert!(text.contains("[0.800, 1.000]"));
    }

    #[test]
    fn incomplete_cells_are_excluded_from_statistics() {
        let mut bad = cell(4, 0.0);
        bad.complete = false;
        bad.final_success = None;
        let g = summarize(&[cell(1, 0.5), bad.clone()]);
        assert_eq!(g[0].runs, 1);
        assert_eq!(g[0].incomplete, 1);
        assert_eq!(g[0].mean_final, Some(0.5));
        assert!(render(&[bad], &g).contains("incomplete"));
    }

    #[test]
    fn missing_tree_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(collect_cells(dir.path()), Err(CliError::EmptyTree(_))));
        assert!(matches!(collect_cells(&dir.path().join("nope")), Err(CliError::EmptyTree(_))));
    }
}
