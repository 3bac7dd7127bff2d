//! The output bundle: `summary.json` plus CSV side files.
//!
//! `summary.json` is the single machine-readable record of a run; the
//! CSVs and `report.md` are projections of it. `cmd_report` re-renders
//! the report from the summary alone, so everything the report shows
//! must live here in full precision.

use std::borrow::Cow;
use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::CliError;

/// Top-level contents of `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    /// Which subcommand produced the bundle (`fit` or `simulate`).
    pub command: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSummary>,
}

/// Results of fitting the model space to one dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub data: String,
    pub covariates: Vec<String>,
    /// Observed label pair per covariate in coding order (first label
    /// is the group coded -0.5).
    pub levels: Vec<(String, String)>,
    pub n_ratees: usize,
    pub n_ratings: usize,
    pub mean_covariates: bool,
    pub prior: String,
    pub sigma_beta: f64,
    pub chains: usize,
    pub warmup: usize,
    pub draws_per_chain: usize,
    /// One row per fitted model, sorted by posterior probability.
    pub models: Vec<ModelRow>,
    /// Model weights for every requested method, in model-table order.
    pub weights: Vec<WeightRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inclusion: Vec<InclusionRow>,
    pub irr: Vec<IrrRow>,
    pub marginal_means: Vec<MarginalMeanRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sensitivity_models: Vec<SensitivityModelRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sensitivity_inclusion: Vec<SensitivityInclusionRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelRow {
    pub rank: usize,
    /// Covariates in the mean ("none" or names joined with '+').
    pub mean: String,
    pub structural: String,
    pub residual: String,
    pub log_marglik: f64,
    pub mcse: f64,
    pub prior_prob: f64,
    pub posterior_prob: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightRow {
    pub method: String,
    /// Model structure as "mean | structural | residual".
    pub model: String,
    pub weight: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InclusionRow {
    pub component: String,
    pub covariate: String,
    pub bf_inclusion: f64,
    pub prior_odds: f64,
    pub posterior_odds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IrrRow {
    /// "group" for a covariate cell, "difference" for a between-group
    /// contrast.
    pub kind: String,
    pub label: String,
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarginalMeanRow {
    pub label: String,
    pub mean: f64,
    pub mean_lower: f64,
    pub mean_upper: f64,
    pub sd_structural: f64,
    pub sd_structural_lower: f64,
    pub sd_structural_upper: f64,
    pub sd_residual: f64,
    pub sd_residual_lower: f64,
    pub sd_residual_upper: f64,
    pub irr: f64,
    pub irr_lower: f64,
    pub irr_upper: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityModelRow {
    pub prior: String,
    pub mean: String,
    pub structural: String,
    pub residual: String,
    pub posterior_prob: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityInclusionRow {
    pub prior: String,
    pub component: String,
    pub covariate: String,
    pub bf_inclusion: f64,
}

/// Results of a simulation sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub scenarios: Vec<String>,
    pub ratees_per_group: Vec<usize>,
    pub ratings_per_ratee: Vec<usize>,
    pub replications: usize,
    pub methods: Vec<String>,
    pub chains: usize,
    pub warmup: usize,
    pub draws_per_chain: usize,
    pub conditions: Vec<ConditionRow>,
    /// Long-format metrics: one row per condition x method x metric.
    pub metrics: Vec<MetricRow>,
    /// RMSE pooled across scenarios and ratings counts, per method and
    /// group size.
    pub rmse: Vec<RmsePooledRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub calibration: Vec<CalibrationSummaryRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionRow {
    pub scenario: String,
    pub ratees_per_group: usize,
    pub ratings_per_ratee: usize,
    pub attempted: usize,
    pub completed: usize,
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRow {
    pub scenario: String,
    pub ratees_per_group: usize,
    pub ratings_per_ratee: usize,
    pub method: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RmsePooledRow {
    pub quantity: String,
    pub method: String,
    pub ratees_per_group: usize,
    pub rmse: f64,
    pub se: f64,
    pub bias2_over_mse: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationSummaryRow {
    pub component: String,
    /// Whether the generating scenario had a difference in this
    /// component.
    pub difference: bool,
    pub count: usize,
    pub favoring: f64,
    pub misleading_strong: f64,
}

impl Summary {
    pub fn load(dir: &Path) -> Result<Summary, CliError> {
        let path = dir.join("summary.json");
        let text = std::fs::read_to_string(&path).map_err(|_| {
            CliError::Config(format!("no bundle found: {} is missing", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("could not parse {}: {e}", path.display())))
    }

    /// Write `summary.json`, the CSV side files, and `report.md`.
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Config(format!("could not serialize summary: {e}")))?;
        std::fs::write(dir.join("summary.json"), json + "\n")?;
        if let Some(fit) = &self.fit {
            fit.write_csvs(dir)?;
        }
        if let Some(sim) = &self.simulation {
            sim.write_csvs(dir)?;
        }
        std::fs::write(dir.join("report.md"), crate::report::render(self))?;
        Ok(())
    }
}

impl FitSummary {
    fn write_csvs(&self, dir: &Path) -> Result<(), CliError> {
        let mut f = create(dir, "models.csv")?;
        writeln!(
            f,
            "rank,mean,structural,residual,log_marglik,mcse,prior_prob,posterior_prob,converged"
        )?;
        for m in &self.models {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{}",
                m.rank,
                field(&m.mean),
                field(&m.structural),
                field(&m.residual),
                m.log_marglik,
                m.mcse,
                m.prior_prob,
                m.posterior_prob,
                m.converged
            )?;
        }
        f.flush()?;

        let mut f = create(dir, "weights.csv")?;
        writeln!(f, "method,model,weight,flagged")?;
        for w in &self.weights {
            writeln!(
                f,
                "{},{},{},{}",
                field(&w.method),
                field(&w.model),
                w.weight,
                w.flagged
            )?;
        }
        f.flush()?;

        let mut f = create(dir, "inclusion.csv")?;
        writeln!(f, "component,covariate,bf_inclusion,prior_odds,posterior_odds")?;
        for r in &self.inclusion {
            writeln!(
                f,
                "{},{},{},{},{}",
                field(&r.component),
                field(&r.covariate),
                r.bf_inclusion,
                r.prior_odds,
                r.posterior_odds
            )?;
        }
        f.flush()?;

        let mut f = create(dir, "irr.csv")?;
        writeln!(f, "kind,label,point,lower,upper")?;
        for r in &self.irr {
            writeln!(
                f,
                "{},{},{},{},{}",
                field(&r.kind),
                field(&r.label),
                r.point,
                r.lower,
                r.upper
            )?;
        }
        f.flush()?;

        let mut f = create(dir, "marginal_means.csv")?;
        writeln!(
            f,
            "label,mean,mean_lower,mean_upper,sd_structural,sd_structural_lower,\
             sd_structural_upper,sd_residual,sd_residual_lower,sd_residual_upper,\
             irr,irr_lower,irr_upper"
        )?;
        for r in &self.marginal_means {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                field(&r.label),
                r.mean,
                r.mean_lower,
                r.mean_upper,
                r.sd_structural,
                r.sd_structural_lower,
                r.sd_structural_upper,
                r.sd_residual,
                r.sd_residual_lower,
                r.sd_residual_upper,
                r.irr,
                r.irr_lower,
                r.irr_upper
            )?;
        }
        f.flush()?;
        Ok(())
    }

    /// Weight methods present, in first-seen order.
    pub fn weight_methods(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for w in &self.weights {
            if seen.insert(w.method.clone()) {
                out.push(w.method.clone());
            }
        }
        out
    }
}

impl SimulationSummary {
    fn write_csvs(&self, dir: &Path) -> Result<(), CliError> {
        let mut f = create(dir, "metrics.csv")?;
        writeln!(f, "scenario,ratees_per_group,ratings_per_ratee,method,metric,value")?;
        for r in &self.metrics {
            writeln!(
                f,
                "{},{},{},{},{},{}",
                field(&r.scenario),
                r.ratees_per_group,
                r.ratings_per_ratee,
                field(&r.method),
                field(&r.metric),
                r.value
            )?;
        }
        f.flush()?;
        Ok(())
    }
}

fn create(dir: &Path, name: &str) -> Result<std::io::BufWriter<std::fs::File>, CliError> {
    Ok(std::io::BufWriter::new(std::fs::File::create(
        dir.join(name),
    )?))
}

/// Quote a CSV field only when it needs it.
fn field(s: &str) -> Cow<'_, str> {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        Cow::Owned(format!("\"{}\"", s.replace('"', "\"\"")))
    } else {
        Cow::Borrowed(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_fields_are_quoted_only_when_needed() {
        assert_eq!(field("plain"), "plain");
        assert_eq!(field("a | b"), "a | b");
        assert_eq!(field("a,b"), "\"a,b\"");
        assert_eq!(field("say \"hi\""), "\"say \"\"hi\"\"\"");
    }

    #[test]
    fn summary_round_trips_through_json() {
        let s = Summary {
            command: "fit".into(),
            seed: 9,
            warnings: vec!["one model did not converge".into()],
            fit: None,
            simulation: None,
        };
        let text = serde_json::to_string(&s).unwrap();
        let back: Summary = serde_json::from_str(&text).unwrap();
        assert_eq!(back.command, "fit");
        assert_eq!(back.seed, 9);
        assert_eq!(back.warnings.len(), 1);
    }
}
