use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use super::{DiagnosticsError, Result};
use crate::train::{read_curve_csv, CurveRow, TIMING_HEADER};

/// Eval success at which a run counts as converged.
pub const SUCCESS_THRESHOLD: f64 = 0.8;

/// One run's learning curve with wall-clock merged in.
#[derive(Debug, Clone, PartialEq)]
pub struct RunCurve {
    pub label: String,
    pub rows: Vec<CurveRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Reached {
        update: usize,
        episodes_seen: usize,
        wall_clock_s: f64,
    },
    NotReached,
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Reached { update, wall_clock_s, .. } => write!(f, "update {update} ({wall_clock_s:.1} s)"),
            Threshold::NotReached => f.write_str("not reached"),
        }
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| DiagnosticsError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn schema(path: &Path, detail: impl Into<String>) -> DiagnosticsError {
    DiagnosticsError::Schema {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

fn read_timing(path: &Path) -> Result<BTreeMap<usize, f64>> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let header = r.headers().map_err(|e| schema(path, e.to_string()))?.clone();
    if header.len() != TIMING_HEADER.len() {
        return Err(schema(path, format!("expected columns {TIMING_HEADER:?}, found {} columns", header.len())));
    }
    for (h, expected) in header.iter().zip(TIMING_HEADER) {
        if h != expected {
            return Err(schema(path, format!("column {h}: expected {expected}")));
        }
    }
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| schema(path, e.to_string()))?;
        let update = rec[0]
            .parse()
            .map_err(|_| schema(path, format!("column update: not a count: {:?}", &rec[0])))?;
        let t = rec[1]
            .parse()
            .map_err(|_| schema(path, format!("column wall_clock_s: not a number: {:?}", &rec[1])))?;
        out.insert(update, t);
    }
    Ok(out)
}

/// Reads a curve CSV and, if given, the matching timing CSV.
pub fn load_run(label: &str, curve: &Path, timing: Option<&Path>) -> Result<RunCurve> {
    let mut rows = read_curve_csv(open(curve)?).map_err(|e| schema(curve, e.to_string()))?;
    if let Some(tp) = timing {
        let times = read_timing(tp)?;
        for r in &mut rows {
            r.wall_clock_s = *times
                .get(&r.update)
                .ok_or_else(|| schema(tp, format!("no wall_clock_s for update {}", r.update)))?;
        }
    }
    Ok(RunCurve {
        label: label.to_string(),
        rows,
    })
}

/// Eval success of several runs aligned on the update index and on
/// wall-clock time, plus the first update reaching [`SUCCESS_THRESHOLD`].
#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyTable {
    pub labels: Vec<String>,
    /// (update, per-run eval success) sorted by update.
    pub by_update: Vec<(usize, Vec<Option<f64>>)>,
    /// (run index, wall-clock seconds, eval success) in run order.
    pub by_time: Vec<(usize, f64, f64)>,
    pub thresholds: Vec<Threshold>,
}

pub fn efficiency_curves(runs: &[RunCurve]) -> Result<EfficiencyTable> {
    if runs.is_empty() {
        return Err(DiagnosticsError::InvalidArgument("no runs to compare".into()));
    }
    let mut grid: BTreeMap<usize, Vec<Option<f64>>> = BTreeMap::new();
    let mut by_time = Vec::new();
    let mut thresholds = Vec::with_capacity(runs.len());
    for (i, run) in runs.iter().enumerate() {
        let mut hit = Threshold::NotReached;
        for r in &run.rows {
            let Some(rate) = r.eval_success_rate else { continue };
            grid.entry(r.update).or_insert_with(|| vec![None; runs.len()])[i] = Some(rate);
            by_time.push((i, r.wall_clock_s, rate));
            if rate >= SUCCESS_THRESHOLD && hit == Threshold::NotReached {
                hit = Threshold::Reached {
                    update: r.update,
                    episodes_seen: r.episodes_seen,
                    wall_clock_s: r.wall_clock_s,
                };
            }
        }
        thresholds.push(hit);
    }
    Ok(EfficiencyTable {
        labels: runs.iter().map(|r| r.label.clone()).collect(),
        by_update: grid.into_iter().collect(),
        by_time,
        thresholds,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EfficiencyTable {
    /// Wide format: update, then one eval-success column per run.
    pub fn write_by_update_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["update".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for (update, rates) in &self.by_update {
            let mut rec = vec![update.to_string()];
            rec.extend(rates.iter().map(|r| opt(*r)));
            w.write_record(&rec)?;
        }
        w.flush()
    }

    /// Long format: run, wall_clock_s, eval_success_rate.
    pub fn write_by_time_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["run", "wall_clock_s", "eval_success_rate"])?;
        for (i, t, rate) in &self.by_time {
            w.write_record([self.labels[*i].clone(), t.to_string(), rate.to_string()])?;
        }
        w.flush()
    }

    pub fn write_thresholds_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["run", "threshold", "update", "episodes_seen", "wall_clock_s"])?;
        for (label, t) in self.labels.iter().zip(&self.thresholds) {
            let th = SUCCESS_THRESHOLD.to_string();
            match t {
                Threshold::Reached {
                    update,
                    episodes_seen,
                    wall_clock_s,
                } => w.write_record([
                    label.clone(),
                    th,
                    update.to_string(),
                    episodes_seen.to_string(),
                    wall_clock_s.to_string(),
                ])?,
                Threshold::NotReached => w.write_record([label.as_str(), &th, "not reached", "", ""])?,
            }
        }
        w.flush()
    }
}

/// Gnuplot script plotting the by-update and by-time tables written next to
/// it, and the calibration scatter when present.
pub fn write_gnuplot_script<W: Write>(labels: &[String], calibration: Option<&str>, mut out: W) -> std::io::Result<()> {
    writeln!(out, "set datafile separator ','")?;
    writeln!(out, "set key outside right")?;
    writeln!(out, "set yrange [0:1]")?;
    writeln!(out, "set terminal pngcairo size 900,540")?;
    writeln!(out, "set output 'efficiency_by_update.png'")?;
    writeln!(out, "set xlabel 'update'; set ylabel 'eval success'")?;
    let series: Vec<String> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| format!("'efficiency_by_update.csv' every ::1 using 1:{} with lines title '{l}'", i + 2))
        .collect();
    writeln!(out, "plot {}", series.join(", \\\n     "))?;
    writeln!(out, "set output 'efficiency_by_time.png'")?;
    writeln!(out, "set xlabel 'wall clock (s)'")?;
    let series: Vec<String> = labels
        .iter()
        .map(|l| {
            format!("'efficiency_by_time.csv' every ::1 using 2:(stringcolumn(1) eq '{l}' ? $3 : 1/0) with lines title '{l}'")
        })
        .collect();
    writeln!(out, "plot {}", series.join(", \\\n     "))?;
    if let Some(scatter) = calibration {
        writeln!(out, "set output 'calibration.png'")?;
        writeln!(out, "set xrange [0:1]")?;
        writeln!(out, "set xlabel 'critic V(s_p)'; set ylabel 'avg@k'")?;
        writeln!(out, "plot '{scatter}' every ::1 using 2:3 with points pt 7 notitle, x with lines dt 2 notitle")?;
    }
    Ok(())
}
