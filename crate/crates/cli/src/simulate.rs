//! The `simulate` subcommand: run a study plan and write the metrics
//! bundle.

use std::path::PathBuf;

use hetirr::study::{
    bf_calibration, rmse_table, run_study, Quantity, StudyPlan, StudyResults, QUANTITIES,
};

use crate::bundle::{
    CalibrationSummaryRow, ConditionRow, MetricRow, RmsePooledRow, SimulationSummary, Summary,
};
use crate::CliError;

#[derive(Debug, Clone)]
pub struct SimulateConfig {
    pub plan: StudyPlan,
    pub out: PathBuf,
}

fn quantity_tag(q: Quantity) -> &'static str {
    match q {
        Quantity::Mean => "mean",
        Quantity::StructuralSd => "structural_sd",
        Quantity::ResidualSd => "residual_sd",
        Quantity::Irr => "irr",
    }
}

fn component_tag(c: hetirr::model::Component) -> &'static str {
    match c {
        hetirr::model::Component::Mean => "mean",
        hetirr::model::Component::Structural => "structural",
        hetirr::model::Component::Residual => "residual",
    }
}

pub fn run(cfg: &SimulateConfig) -> Result<Vec<String>, CliError> {
    let results = run_study(&cfg.plan)?;
    let summary = summarize(&results)?;
    let warnings = summary.warnings.clone();
    summary.write(&cfg.out)?;
    Ok(warnings)
}

fn summarize(results: &StudyResults) -> Result<Summary, CliError> {
    let plan = &results.plan;
    let metrics = results.metrics()?;

    let mut warnings = Vec::new();
    let mut conditions = Vec::new();
    let mut metric_rows = Vec::new();
    for c in &metrics.conditions {
        conditions.push(ConditionRow {
            scenario: c.condition.scenario.clone(),
            ratees_per_group: c.condition.ratees_per_group,
            ratings_per_ratee: c.condition.ratings_per_ratee,
            attempted: c.attempted,
            completed: c.completed,
            flagged: c.failure_flagged,
        });
        if c.failure_flagged {
            warnings.push(format!(
                "scenario {} (I={}, J={}): {} of {} replications failed",
                c.condition.scenario,
                c.condition.ratees_per_group,
                c.condition.ratings_per_ratee,
                c.attempted - c.completed,
                c.attempted
            ));
        }
        for m in &c.methods {
            let mut push = |metric: &str, value: f64| {
                metric_rows.push(MetricRow {
                    scenario: c.condition.scenario.clone(),
                    ratees_per_group: c.condition.ratees_per_group,
                    ratings_per_ratee: c.condition.ratings_per_ratee,
                    method: m.method.tag().to_string(),
                    metric: metric.to_string(),
                    value,
                });
            };
            push("selection_accuracy", m.selection.accuracy);
            push("selection_accuracy_se", m.selection.accuracy_se);
            push("more_complex_rate", m.selection.more_complex);
            push("other_incorrect_rate", m.selection.other);
            for e in &m.errors {
                let q = quantity_tag(e.quantity);
                push(&format!("rmse_{q}"), e.rmse);
                push(&format!("rmse_se_{q}"), e.rmse_se);
                push(&format!("bias2_over_mse_{q}"), e.bias2_over_mse);
            }
        }
    }
    if !results.failures.is_empty() && warnings.is_empty() {
        warnings.push(format!(
            "{} replications failed; see the failure list",
            results.failures.len()
        ));
    }

    let mut rmse_rows = Vec::new();
    for &quantity in &QUANTITIES {
        for row in rmse_table(&results.records, quantity)? {
            rmse_rows.push(RmsePooledRow {
                quantity: quantity_tag(quantity).to_string(),
                method: row.method.tag().to_string(),
                ratees_per_group: row.ratees_per_group,
                rmse: row.rmse,
                se: row.se,
                bias2_over_mse: row.bias2_over_mse,
            });
        }
    }

    // Calibration requires inclusion BFs, which only the Bayesian
    // methods record; plans without them just omit the section.
    let calibration = if results.records.iter().any(|r| r.inclusion_bf.is_some()) {
        bf_calibration(&results.records)?
            .into_iter()
            .map(|r| CalibrationSummaryRow {
                component: component_tag(r.component).to_string(),
                difference: r.difference,
                count: r.count,
                favoring: r.favoring,
                misleading_strong: r.misleading_strong,
            })
            .collect()
    } else {
        Vec::new()
    };

    let failures: Vec<String> = results
        .failures
        .iter()
        .map(|f| {
            format!(
                "scenario {} (I={}, J={}), replication {}: {}",
                f.condition.scenario,
                f.condition.ratees_per_group,
                f.condition.ratings_per_ratee,
                f.replication,
                f.message
            )
        })
        .collect();

    Ok(Summary {
        command: "simulate".into(),
        seed: plan.seed,
        warnings,
        fit: None,
        simulation: Some(SimulationSummary {
            scenarios: plan.scenarios.clone(),
            ratees_per_group: plan.ratees_per_group.clone(),
            ratings_per_ratee: plan.ratings_per_ratee.clone(),
            replications: plan.replications,
            methods: plan.methods.iter().map(|m| m.tag().to_string()).collect(),
            chains: plan.sampler.chains,
            warmup: plan.sampler.warmup,
            draws_per_chain: plan.sampler.draws_per_chain,
            conditions,
            metrics: metric_rows,
            rmse: rmse_rows,
            calibration,
            failures,
        }),
    })
}

/// The full design grid behind `--full`: every scenario at every
/// published group size and ratings count.
pub fn full_grid() -> (Vec<String>, Vec<usize>, Vec<usize>) {
    let scenarios = hetirr::data::scenario_table()
        .into_iter()
        .map(|s| s.label)
        .collect();
    (scenarios, vec![25, 50, 100, 200], vec![3, 5])
}
