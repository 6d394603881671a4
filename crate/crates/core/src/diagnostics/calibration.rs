use std::io::Write;

use rand::Rng as _;

use super::stats::{pearson, spearman};
use super::{DiagnosticsError, Result};
use crate::envs::{env_reset, observe, EnvSpec};
use crate::rng::{self, Rng};
use crate::tensor::{Head, MlpParams};
use crate::train::{run_episode, ActionMode};

pub const HISTOGRAM_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationRecord {
    pub context_id: usize,
    /// Critic value at the initial observation.
    pub predicted: f64,
    /// avg@k: successes / k.
    pub pass_rate: f64,
    pub successes: usize,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub records: Vec<CalibrationRecord>,
    /// `None` when either variable has zero variance.
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub k: usize,
}

impl CalibrationReport {
    pub fn predicted(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.predicted).collect()
    }

    pub fn pass_rates(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.pass_rate).collect()
    }
}

/// Compares the sequence-level critic's prediction at each of `contexts`
/// fresh initial states with the policy's empirical pass rate over `k`
/// sampled rollouts from that state.
pub fn calibration_report(
    critic: &MlpParams,
    spec: &EnvSpec,
    policy: &MlpParams,
    contexts: usize,
    k: usize,
    rng: &mut Rng,
) -> Result<CalibrationReport> {
    if k == 0 || contexts < 2 {
        return Err(DiagnosticsError::InvalidArgument(format!(
            "calibration needs k >= 1 and at least 2 contexts (got k={k}, contexts={contexts})"
        )));
    }
    if critic.head() != Head::Sigmoid || critic.output_dim() != 1 {
        return Err(DiagnosticsError::InvalidArgument(
            "calibration expects a scalar sigmoid critic".into(),
        ));
    }
    let base: u64 = rng.random();
    let mut records = Vec::with_capacity(contexts);
    for c in 0..contexts {
        let init = env_reset(spec, &mut rng::stream(base, &[c as u64]));
        let predicted = critic.scalar(&observe(spec, &init))?;
        let mut successes = 0;
        for j in 0..k as u64 {
            let mut r = rng::stream(base, &[c as u64, j + 1]);
            let ep = run_episode(policy, spec, init.clone(), ActionMode::Sample(&mut r), c as u64)?;
            successes += usize::from(ep.outcome.success);
        }
        records.push(CalibrationRecord {
            context_id: c,
            predicted,
            pass_rate: successes as f64 / k as f64,
            successes,
            k,
        });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = records.iter().map(|r| (r.predicted, r.pass_rate)).unzip();
    Ok(CalibrationReport {
        pearson: pearson(&xs, &ys),
        spearman: spearman(&xs, &ys),
        records,
        k,
    })
}

/// Counts over 10 uniform bins on [0, 1]; 1.0 lands in the last bin and
/// out-of-range values are clamped to the edge bins.
pub fn histogram(values: &[f64]) -> [usize; HISTOGRAM_BINS] {
    let mut bins = [0; HISTOGRAM_BINS];
    for &v in values {
        let i = ((v * HISTOGRAM_BINS as f64).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1);
        bins[i] += 1;
    }
    bins
}

pub fn write_scatter_csv<W: Write>(report: &CalibrationReport, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["context_id", "predicted", "pass_rate", "successes", "k"])?;
    for r in &report.records {
        w.write_record([
            r.context_id.to_string(),
            r.predicted.to_string(),
            r.pass_rate.to_string(),
            r.successes.to_string(),
            r.k.to_string(),
        ])?;
    }
    w.flush()
}

/// Marginal histograms of predicted values and pass rates side by side.
pub fn write_histograms_csv<W: Write>(report: &CalibrationReport, out: W) -> std::io::Result<()> {
    let pred = histogram(&report.predicted());
    let emp = histogram(&report.pass_rates());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin_low", "bin_high", "predicted_count", "pass_rate_count"])?;
    for i in 0..HISTOGRAM_BINS {
        w.write_record([
            (i as f64 / HISTOGRAM_BINS as f64).to_string(),
            ((i + 1) as f64 / HISTOGRAM_BINS as f64).to_string(),
            pred[i].to_string(),
            emp[i].to_string(),
        ])?;
    }
    w.flush()
}

/// key = value lines; an undefined correlation is written as `undefined`.
pub fn write_calibration_summary<W: Write>(report: &CalibrationReport, mut out: W) -> std::io::Result<()> {
    let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| x.to_string());
    writeln!(out, "pearson = {}", fmt(report.pearson))?;
    writeln!(out, "spearman = {}", fmt(report.spearman))?;
    writeln!(out, "n = {}", report.records.len())?;
    writeln!(out, "k = {}", report.k)
}
