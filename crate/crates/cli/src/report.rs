//! Renders a bundle summary into `report.md`.
//!
//! The renderer is a pure function of the summary, so regenerating the
//! report from an existing bundle is idempotent. Probabilities, weights,
//! and IRR values are displayed with two decimals (the machine outputs
//! keep full precision); error metrics get three.

use hetirr::evidence_label;

use crate::bundle::{FitSummary, MetricRow, SimulationSummary, Summary};

pub fn render(summary: &Summary) -> String {
    let mut out = String::new();
    match summary.command.as_str() {
        "simulate" => {
            if let Some(sim) = &summary.simulation {
                render_simulation(&mut out, summary, sim);
            }
        }
        _ => {
            if let Some(fit) = &summary.fit {
                render_fit(&mut out, summary, fit);
            }
        }
    }
    out
}

fn render_fit(out: &mut String, summary: &Summary, fit: &FitSummary) {
    push_line(out, "# Inter-rater reliability analysis");
    push_line(out, "");
    let covs = if fit.covariates.is_empty() {
        "none".to_string()
    } else {
        fit.covariates
            .iter()
            .zip(&fit.levels)
            .map(|(name, (lo, hi))| format!("{name} ({lo} vs {hi})"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    push_line(
        out,
        &format!(
            "Dataset `{}`: {} ratees, {} ratings. Covariates: {}.",
            fit.data, fit.n_ratees, fit.n_ratings, covs
        ),
    );
    push_line(
        out,
        &format!(
            "Coefficient prior scale {} ({}); {} chains x {} draws after {} warmup; seed {}.",
            fit.sigma_beta,
            fit.prior,
            fit.chains,
            fit.draws_per_chain,
            fit.warmup,
            summary.seed
        ),
    );
    if !fit.mean_covariates {
        push_line(
            out,
            "The mean was held constant across groups; only variance structures were compared.",
        );
    }
    render_warnings(out, &summary.warnings);

    push_line(out, "");
    push_line(out, "## Model comparison");
    push_line(out, "");
    let shown = fit.models.len().min(10);
    if fit.models.len() > shown {
        push_line(
            out,
            &format!(
                "Top {} of {} models by posterior probability (full table in `models.csv`).",
                shown,
                fit.models.len()
            ),
        );
        push_line(out, "");
    }
    push_line(
        out,
        "| # | mean | structural SD | residual SD | log marg. lik. | prior prob. | posterior prob. |",
    );
    push_line(out, "|--:|---|---|---|--:|--:|--:|");
    for m in fit.models.iter().take(shown) {
        push_line(
            out,
            &format!(
                "| {} | {} | {} | {} | {:.2} | {:.2} | {:.2} |",
                m.rank, m.mean, m.structural, m.residual, m.log_marglik, m.prior_prob,
                m.posterior_prob
            ),
        );
    }

    if !fit.inclusion.is_empty() {
        push_line(out, "");
        push_line(out, "## Evidence for group differences");
        push_line(out, "");
        push_line(out, "| component | covariate | inclusion BF | reading |");
        push_line(out, "|---|---|--:|---|");
        for r in &fit.inclusion {
            push_line(
                out,
                &format!(
                    "| {} | {} | {:.2} | {} |",
                    r.component,
                    r.covariate,
                    r.bf_inclusion,
                    evidence_label(r.bf_inclusion)
                ),
            );
        }
    }

    let methods = fit.weight_methods();
    if !methods.is_empty() {
        push_line(out, "");
        push_line(out, "## Model weights");
        push_line(out, "");
        let mut header = String::from("| model |");
        let mut rule = String::from("|---|");
        for m in &methods {
            header.push_str(&format!(" {m} |"));
            rule.push_str("--:|");
        }
        push_line(out, &header);
        push_line(out, &rule);
        let models: Vec<&str> = {
            let mut seen = Vec::new();
            for w in &fit.weights {
                if !seen.contains(&w.model.as_str()) {
                    seen.push(&w.model);
                }
            }
            seen
        };
        for model in models {
            let mut row = format!("| {} |", model.replace(" | ", " \\| "));
            for m in &methods {
                let w = fit
                    .weights
                    .iter()
                    .find(|w| w.model == model && &w.method == m);
                match w {
                    Some(w) => row.push_str(&format!(" {:.2} |", w.weight)),
                    None => row.push_str(" - |"),
                }
            }
            push_line(out, &row);
        }
        let flagged: Vec<&str> = {
            let mut f = Vec::new();
            for w in &fit.weights {
                if w.flagged && !f.contains(&w.method.as_str()) {
                    f.push(&w.method);
                }
            }
            f
        };
        if !flagged.is_empty() {
            push_line(out, "");
            push_line(
                out,
                &format!(
                    "The {} weights hit their optimizer's iteration cap; treat them with care.",
                    flagged.join(", ")
                ),
            );
        }
    }

    push_line(out, "");
    push_line(out, "## Reliability");
    push_line(out, "");
    push_line(out, "Model-averaged posterior means with central 95% intervals.");
    push_line(out, "");
    push_line(out, "| | IRR | 95% interval |");
    push_line(out, "|---|--:|---|");
    for r in &fit.irr {
        push_line(
            out,
            &format!(
                "| {} | {:.2} | [{:.2}, {:.2}] |",
                r.label, r.point, r.lower, r.upper
            ),
        );
    }

    push_line(out, "");
    push_line(out, "## Marginal means");
    push_line(out, "");
    push_line(out, "| cell | mean | structural SD | residual SD | IRR |");
    push_line(out, "|---|---|---|---|---|");
    for r in &fit.marginal_means {
        push_line(
            out,
            &format!(
                "| {} | {} | {} | {} | {} |",
                r.label,
                interval(r.mean, r.mean_lower, r.mean_upper),
                interval(r.sd_structural, r.sd_structural_lower, r.sd_structural_upper),
                interval(r.sd_residual, r.sd_residual_lower, r.sd_residual_upper),
                interval(r.irr, r.irr_lower, r.irr_upper)
            ),
        );
    }

    if !fit.sensitivity_models.is_empty() {
        push_line(out, "");
        push_line(out, "## Prior sensitivity");
        push_line(out, "");
        let priors: Vec<&str> = {
            let mut seen = Vec::new();
            for r in &fit.sensitivity_models {
                if !seen.contains(&r.prior.as_str()) {
                    seen.push(&r.prior);
                }
            }
            seen
        };
        push_line(out, "Posterior model probabilities by prior scale:");
        push_line(out, "");
        let mut header = String::from("| model |");
        let mut rule = String::from("|---|");
        for p in &priors {
            header.push_str(&format!(" {p} |"));
            rule.push_str("--:|");
        }
        push_line(out, &header);
        push_line(out, &rule);
        let models: Vec<(String, String, String)> = {
            let mut seen = Vec::new();
            for r in &fit.sensitivity_models {
                let key = (r.mean.clone(), r.structural.clone(), r.residual.clone());
                if !seen.contains(&key) {
                    seen.push(key);
                }
            }
            seen
        };
        for (mean, structural, residual) in &models {
            let mut row = format!("| {mean} \\| {structural} \\| {residual} |");
            for p in &priors {
                let v = fit.sensitivity_models.iter().find(|r| {
                    &r.prior == p
                        && &r.mean == mean
                        && &r.structural == structural
                        && &r.residual == residual
                });
                match v {
                    Some(r) => row.push_str(&format!(" {:.2} |", r.posterior_prob)),
                    None => row.push_str(" - |"),
                }
            }
            push_line(out, &row);
        }
        if !fit.sensitivity_inclusion.is_empty() {
            push_line(out, "");
            push_line(out, "Inclusion Bayes factors by prior scale:");
            push_line(out, "");
            let mut header = String::from("| component | covariate |");
            let mut rule = String::from("|---|---|");
            for p in &priors {
                header.push_str(&format!(" {p} |"));
                rule.push_str("--:|");
            }
            push_line(out, &header);
            push_line(out, &rule);
            let keys: Vec<(String, String)> = {
                let mut seen = Vec::new();
                for r in &fit.sensitivity_inclusion {
                    let key = (r.component.clone(), r.covariate.clone());
                    if !seen.contains(&key) {
                        seen.push(key);
                    }
                }
                seen
            };
            for (component, covariate) in &keys {
                let mut row = format!("| {component} | {covariate} |");
                for p in &priors {
                    let v = fit.sensitivity_inclusion.iter().find(|r| {
                        &r.prior == p && &r.component == component && &r.covariate == covariate
                    });
                    match v {
                        Some(r) => row.push_str(&format!(" {:.2} |", r.bf_inclusion)),
                        None => row.push_str(" - |"),
                    }
                }
                push_line(out, &row);
            }
        }
    }
    push_line(out, "");
}

fn render_simulation(out: &mut String, summary: &Summary, sim: &SimulationSummary) {
    push_line(out, "# Simulation study");
    push_line(out, "");
    push_line(
        out,
        &format!(
            "Scenarios {}; ratees per group {}; ratings per ratee {}; {} replications; methods {}; seed {}.",
            sim.scenarios.join(", "),
            join_usize(&sim.ratees_per_group),
            join_usize(&sim.ratings_per_ratee),
            sim.replications,
            sim.methods.join(", "),
            summary.seed
        ),
    );
    push_line(
        out,
        &format!(
            "Sampler: {} chains x {} draws after {} warmup.",
            sim.chains, sim.draws_per_chain, sim.warmup
        ),
    );
    render_warnings(out, &summary.warnings);

    // One selection table per (scenario, J) block, Table-2 shape:
    // methods down, group sizes across.
    push_line(out, "");
    push_line(out, "## Model selection accuracy");
    for scenario in &sim.scenarios {
        for &j in &sim.ratings_per_ratee {
            push_line(out, "");
            push_line(out, &format!("Scenario {scenario}, {j} ratings per ratee:"));
            push_line(out, "");
            selection_table(out, sim, |r| {
                &r.scenario == scenario && r.ratings_per_ratee == j
            });
        }
    }
    if sim.scenarios.len() * sim.ratings_per_ratee.len() > 1 {
        push_line(out, "");
        push_line(out, "Pooled across scenarios and ratings counts:");
        push_line(out, "");
        selection_table(out, sim, |_| true);
    }

    push_line(out, "");
    push_line(out, "## Estimation error");
    for quantity in ["mean", "structural_sd", "residual_sd", "irr"] {
        let rows: Vec<_> = sim.rmse.iter().filter(|r| r.quantity == quantity).collect();
        if rows.is_empty() {
            continue;
        }
        push_line(out, "");
        push_line(
            out,
            &format!(
                "RMSE of the {} estimates, pooled across scenarios (SE in parentheses):",
                quantity_name(quantity)
            ),
        );
        push_line(out, "");
        let mut header = String::from("| method |");
        let mut rule = String::from("|---|");
        for &n in &sim.ratees_per_group {
            header.push_str(&format!(" I = {n} |"));
            rule.push_str("--:|");
        }
        push_line(out, &header);
        push_line(out, &rule);
        for method in &sim.methods {
            let mut row = format!("| {method} |");
            for &n in &sim.ratees_per_group {
                let cell = rows
                    .iter()
                    .find(|r| &r.method == method && r.ratees_per_group == n);
                match cell {
                    Some(r) => row.push_str(&format!(" {:.3} ({:.3}) |", r.rmse, r.se)),
                    None => row.push_str(" - |"),
                }
            }
            push_line(out, &row);
        }
    }

    if !sim.calibration.is_empty() {
        push_line(out, "");
        push_line(out, "## Inclusion Bayes factor calibration");
        push_line(out, "");
        push_line(
            out,
            "Proportion of inclusion BFs favoring the generating mechanism, and the rate of \
             misleading strong evidence (BF beyond 10 on the wrong side).",
        );
        push_line(out, "");
        push_line(out, "| component | truth | n | favoring | misleading strong |");
        push_line(out, "|---|---|--:|--:|--:|");
        for r in &sim.calibration {
            push_line(
                out,
                &format!(
                    "| {} | {} | {} | {:.3} | {:.3} |",
                    r.component,
                    if r.difference { "difference" } else { "no difference" },
                    r.count,
                    r.favoring,
                    r.misleading_strong
                ),
            );
        }
    }

    if !sim.failures.is_empty() {
        push_line(out, "");
        push_line(out, "## Failed replications");
        push_line(out, "");
        for f in &sim.failures {
            push_line(out, &format!("- {f}"));
        }
    }
    push_line(out, "");
}

fn selection_table(out: &mut String, sim: &SimulationSummary, keep: impl Fn(&MetricRow) -> bool) {
    let mut header = String::from("| method |");
    let mut rule = String::from("|---|");
    for &n in &sim.ratees_per_group {
        header.push_str(&format!(" I = {n} |"));
        rule.push_str("--:|");
    }
    push_line(out, &header);
    push_line(out, &rule);
    for method in &sim.methods {
        let mut row = format!("| {method} |");
        for &n in &sim.ratees_per_group {
            let acc: Vec<f64> = pick(sim, &keep, method, n, "selection_accuracy");
            let se: Vec<f64> = pick(sim, &keep, method, n, "selection_accuracy_se");
            if acc.is_empty() {
                row.push_str(" - |");
            } else {
                let mean = acc.iter().sum::<f64>() / acc.len() as f64;
                let pooled_se =
                    se.iter().map(|s| s * s).sum::<f64>().sqrt() / se.len().max(1) as f64;
                row.push_str(&format!(" {mean:.3} ({pooled_se:.3}) |"));
            }
        }
        push_line(out, &row);
    }
}

fn pick(
    sim: &SimulationSummary,
    keep: impl Fn(&MetricRow) -> bool,
    method: &str,
    ratees: usize,
    metric: &str,
) -> Vec<f64> {
    sim.metrics
        .iter()
        .filter(|r| {
            keep(r) && r.method == method && r.ratees_per_group == ratees && r.metric == metric
        })
        .map(|r| r.value)
        .collect()
}

fn render_warnings(out: &mut String, warnings: &[String]) {
    if warnings.is_empty() {
        return;
    }
    push_line(out, "");
    push_line(out, "## Warnings");
    push_line(out, "");
    for w in warnings {
        push_line(out, &format!("- **{w}**"));
    }
}

fn interval(point: f64, lower: f64, upper: f64) -> String {
    format!("{point:.2} [{lower:.2}, {upper:.2}]")
}

fn quantity_name(tag: &str) -> &'static str {
    match tag {
        "mean" => "mean",
        "structural_sd" => "structural SD",
        "residual_sd" => "residual SD",
        _ => "IRR",
    }
}

fn join_usize(values: &[usize]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

fn push_line(out: &mut String, line: &str) {
    out.push_str(line);
    out.push('\n');
}
