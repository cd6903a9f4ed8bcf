use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arena::Outcome;

/// Win rates of one evaluation: computed per seed, then mean and sample
/// standard deviation across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: String,
    pub controller: String,
    /// Sweep coordinate such as `rho=0.5` or `f=0.2`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub setting: Option<String>,
    pub episodes: usize,
    pub seeds: usize,
    pub win_rates: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub outcomes: Vec<Vec<Outcome>>,
    /// Insertion runs only: episodes where no ally could be added.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub no_insert: Option<usize>,
}

impl EvalReport {
    pub fn from_outcomes(scenario: &str, controller: &str, outcomes: Vec<Vec<Outcome>>) -> Self {
        let win_rates: Vec<f64> = outcomes
            .iter()
            .map(|o| if o.is_empty() { 0.0 } else { o.iter().filter(|&&x| x == Outcome::Win).count() as f64 / o.len() as f64 })
            .collect();
        let (mean, std) = mean_std(&win_rates);
        EvalReport {
            scenario: scenario.to_string(),
            controller: controller.to_string(),
            setting: None,
            episodes: outcomes.first().map(Vec::len).unwrap_or(0),
            seeds: outcomes.len(),
            win_rates,
            mean,
            std,
            outcomes,
            no_insert: None,
        }
    }

    pub fn rollouts(&self) -> usize {
        self.outcomes.iter().map(Vec::len).sum()
    }

    pub fn wins(&self) -> usize {
        self.outcomes.iter().flatten().filter(|&&o| o == Outcome::Win).count()
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Appends reports as JSON lines and returns an aligned summary table.
pub fn write_reports(path: &Path, reports: &[EvalReport]) -> Result<String, std::io::Error> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    for r in reports {
        let line = serde_json::to_string(r).map_err(std::io::Error::other)?;
        writeln!(f, "{line}")?;
    }
    Ok(summary_table(reports))
}

pub fn summary_table(reports: &[EvalReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<16} {:<16} {:<10} {:>8} {:>7}  rollouts", "scenario", "controller", "setting", "win%", "±std");
    for r in reports {
        let _ = writeln!(
            s,
            "{:<16} {:<16} {:<10} {:>8.2} {:>7.2}  {}",
            r.scenario,
            r.controller,
            r.setting.as_deref().unwrap_or("-"),
            100.0 * r.mean,
            100.0 * r.std,
            r.rollouts()
        );
    }
    s
}

/// Tab-separated column file: one header line, then one row per point.
pub fn write_series(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), std::io::Error> {
    let mut out = header.join("\t");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join("\t"));
        out.push('\n');
    }
    std::fs::write(path, out)
}
