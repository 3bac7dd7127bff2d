//! The `fit` subcommand: enumerate the model space on a dataset, fit
//! every model, and write the report bundle.

use std::path::PathBuf;

use rayon::prelude::*;

use hetirr::averaging::{
    average_posterior, ic_weights, loo, pointwise_matrix, pseudo_bma_weights, stacking_weights,
    waic, WeightMethod, WeightVector,
};
use hetirr::data::{load_csv, RatingsTable};
use hetirr::evidence::{
    bridge_logml, inclusion_bf, posterior_model_probs, InclusionResult, ModelEvidence,
};
use hetirr::likelihood::ml_fit;
use hetirr::model::{
    enumerate_models, Component, CovariateProfile, CovariateSchema, ModelSpec, PriorConfig,
};
use hetirr::sampler::{sample_posterior, PosteriorDraws, SamplerConfig};
use hetirr::{rng, Error};

use crate::bundle::{
    FitSummary, InclusionRow, IrrRow, MarginalMeanRow, ModelRow, SensitivityInclusionRow,
    SensitivityModelRow, Summary, WeightRow,
};
use crate::config::PriorChoice;
use crate::CliError;

/// Which model-weight tables to emit. `loo` and `pseudo-bma` share the
/// same arithmetic (LOO elpd differences); both names are accepted so
/// either convention works in scripts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    Bma,
    Aic,
    Bic,
    Waic,
    Loo,
    PseudoBma,
    Stacking,
}

impl WeightKind {
    pub fn parse(tag: &str) -> Result<WeightKind, CliError> {
        match tag {
            "bma" => Ok(WeightKind::Bma),
            "aic" => Ok(WeightKind::Aic),
            "bic" => Ok(WeightKind::Bic),
            "waic" => Ok(WeightKind::Waic),
            "loo" => Ok(WeightKind::Loo),
            "pseudo-bma" => Ok(WeightKind::PseudoBma),
            "stacking" => Ok(WeightKind::Stacking),
            other => Err(CliError::Config(format!(
                "unknown weight method `{other}` (expected bma, aic, bic, waic, loo, pseudo-bma, or stacking)"
            ))),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            WeightKind::Bma => "bma",
            WeightKind::Aic => "aic",
            WeightKind::Bic => "bic",
            WeightKind::Waic => "waic",
            WeightKind::Loo => "loo",
            WeightKind::PseudoBma => "pseudo-bma",
            WeightKind::Stacking => "stacking",
        }
    }

    fn needs_ml(&self) -> bool {
        matches!(self, WeightKind::Aic | WeightKind::Bic)
    }

    fn needs_pointwise(&self) -> bool {
        matches!(
            self,
            WeightKind::Waic | WeightKind::Loo | WeightKind::PseudoBma | WeightKind::Stacking
        )
    }

    fn needs_loo(&self) -> bool {
        matches!(
            self,
            WeightKind::Loo | WeightKind::PseudoBma | WeightKind::Stacking
        )
    }
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub data: PathBuf,
    pub covariates: Vec<String>,
    pub mean_covariates: bool,
    pub priors: Vec<PriorChoice>,
    pub sampler: SamplerConfig,
    pub methods: Vec<WeightKind>,
    pub mixture_draws: usize,
    pub seed: u64,
    pub out: PathBuf,
}

struct FittedSpace {
    draws: Vec<PosteriorDraws>,
    evidences: Vec<ModelEvidence>,
}

/// Sample and bridge every model under one prior. Models are fit in
/// parallel; `prior_index` keeps the RNG streams of sensitivity refits
/// disjoint from the primary fit.
fn fit_space(
    table: &RatingsTable,
    specs: &[ModelSpec],
    sigma_beta: f64,
    sampler: &SamplerConfig,
    seed: u64,
    prior_index: u64,
) -> Result<FittedSpace, Error> {
    let prior = PriorConfig::with_sigma_beta(sigma_beta);
    let fitted: Vec<(PosteriorDraws, f64, f64)> = specs
        .par_iter()
        .enumerate()
        .map(|(idx, spec)| {
            let cfg = SamplerConfig {
                seed: rng::derive(seed, &[prior_index, idx as u64]),
                ..sampler.clone()
            };
            let draws = sample_posterior(table, spec, &prior, &cfg)?;
            let bridge = bridge_logml(&draws, table, spec, &prior)?;
            Ok((draws, bridge.log_marglik, bridge.mcse))
        })
        .collect::<Result<_, Error>>()?;
    let prior_prob = 1.0 / specs.len() as f64;
    let mut draws = Vec::with_capacity(specs.len());
    let mut evidences = Vec::with_capacity(specs.len());
    for (spec, (d, logml, mcse)) in specs.iter().zip(fitted) {
        evidences.push(ModelEvidence::new(spec.clone(), logml, mcse, prior_prob));
        draws.push(d);
    }
    posterior_model_probs(&mut evidences)?;
    Ok(FittedSpace { draws, evidences })
}

fn inclusion_results(
    evidences: &[ModelEvidence],
    arity: usize,
    mean_covariates: bool,
) -> Result<Vec<InclusionResult>, Error> {
    let mut components = vec![Component::Mean, Component::Structural, Component::Residual];
    if !mean_covariates {
        // Constant-mean spaces have no models with a mean difference,
        // so the mean inclusion odds are undefined.
        components.remove(0);
    }
    let mut out = Vec::new();
    for component in components {
        for k in 0..arity {
            out.push(inclusion_bf(evidences, component, k)?);
        }
    }
    Ok(out)
}

fn component_tag(component: Component) -> &'static str {
    match component {
        Component::Mean => "mean",
        Component::Structural => "structural",
        Component::Residual => "residual",
    }
}

fn profile_label(profile: &CovariateProfile<f64>, table: &RatingsTable) -> String {
    let schema = table.schema();
    if schema.arity() == 0 {
        return "overall".to_string();
    }
    profile
        .values()
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let (lo, hi) = table.levels(k);
            format!("{}={}", schema.names()[k], if v > 0.0 { hi } else { lo })
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn describe_parts(spec: &ModelSpec, schema: &CovariateSchema) -> (String, String, String) {
    let text = spec.describe(schema);
    let mut parts = text.split(" | ").map(str::to_string);
    let mean = parts.next().unwrap_or_default();
    let structural = parts.next().unwrap_or_default();
    let residual = parts.next().unwrap_or_default();
    (mean, structural, residual)
}

pub fn run(cfg: &FitConfig) -> Result<Vec<String>, CliError> {
    let schema = CovariateSchema::new(cfg.covariates.clone())?;
    let table = load_csv(&cfg.data, &schema)?;
    let arity = schema.arity();

    let mut specs = enumerate_models(&schema);
    if !cfg.mean_covariates {
        specs.retain(|s| (0..arity).all(|k| !s.includes(Component::Mean, k)));
    }

    let mut warnings = Vec::new();
    let primary = &cfg.priors[0];
    let space = fit_space(&table, &specs, primary.sigma_beta, &cfg.sampler, cfg.seed, 0)?;

    let not_converged = space.draws.iter().filter(|d| !d.converged).count();
    if not_converged > 0 {
        warnings.push(format!(
            "{not_converged} of {} posterior fits did not pass convergence checks; \
             their evidence and the averaged results may be unreliable",
            specs.len()
        ));
    }

    // Model table order: posterior probability descending, stable on ties.
    let mut order: Vec<usize> = (0..specs.len()).collect();
    order.sort_by(|&a, &b| {
        space.evidences[b]
            .posterior_prob
            .partial_cmp(&space.evidences[a].posterior_prob)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let models: Vec<ModelRow> = order
        .iter()
        .enumerate()
        .map(|(rank, &idx)| {
            let (mean, structural, residual) = describe_parts(&specs[idx], &schema);
            let e = &space.evidences[idx];
            ModelRow {
                rank: rank + 1,
                mean,
                structural,
                residual,
                log_marglik: e.log_marglik,
                mcse: e.log_marglik_mcse,
                prior_prob: e.prior_prob,
                posterior_prob: e.posterior_prob,
                converged: space.draws[idx].converged,
            }
        })
        .collect();

    let weights = weight_tables(cfg, &table, &specs, &space, &order, &mut warnings)?;

    let inclusion = inclusion_results(&space.evidences, arity, cfg.mean_covariates)?;
    let inclusion_rows: Vec<InclusionRow> = inclusion
        .iter()
        .map(|r| InclusionRow {
            component: component_tag(r.component).to_string(),
            covariate: schema.names()[r.covariate].clone(),
            bf_inclusion: r.bf_inclusion,
            prior_odds: r.prior_incl_odds,
            posterior_odds: r.posterior_incl_odds,
        })
        .collect();

    let bma = WeightVector {
        method: WeightMethod::Bma,
        weights: space.evidences.iter().map(|e| e.posterior_prob).collect(),
        flagged: false,
    };
    bma.validate()?;
    let averaged = average_posterior(
        &space.draws,
        &bma,
        inclusion,
        cfg.mixture_draws,
        rng::derive(cfg.seed, &[0x317A]),
    )?;

    let mut irr_rows: Vec<IrrRow> = averaged
        .irr
        .per_profile
        .iter()
        .map(|(profile, s)| IrrRow {
            kind: "group".into(),
            label: profile_label(profile, &table),
            point: s.point,
            lower: s.lower,
            upper: s.upper,
        })
        .collect();
    for (k, s) in averaged.irr.delta.iter().enumerate() {
        let (lo, hi) = table.levels(k);
        irr_rows.push(IrrRow {
            kind: "difference".into(),
            label: format!("{}: {lo} - {hi}", schema.names()[k]),
            point: s.point,
            lower: s.lower,
            upper: s.upper,
        });
    }

    let marginal_rows: Vec<MarginalMeanRow> = averaged
        .marginal_means
        .iter()
        .map(|r| MarginalMeanRow {
            label: profile_label(&r.profile, &table),
            mean: r.mean.point,
            mean_lower: r.mean.lower,
            mean_upper: r.mean.upper,
            sd_structural: r.sd_structural.point,
            sd_structural_lower: r.sd_structural.lower,
            sd_structural_upper: r.sd_structural.upper,
            sd_residual: r.sd_residual.point,
            sd_residual_lower: r.sd_residual.lower,
            sd_residual_upper: r.sd_residual.upper,
            irr: r.irr.point,
            irr_lower: r.irr.lower,
            irr_upper: r.irr.upper,
        })
        .collect();

    let mut sensitivity_models = Vec::new();
    let mut sensitivity_inclusion = Vec::new();
    if cfg.priors.len() > 1 {
        for (p, choice) in cfg.priors.iter().enumerate() {
            let refit;
            let evidences = if p == 0 {
                &space.evidences
            } else {
                refit = fit_space(
                    &table,
                    &specs,
                    choice.sigma_beta,
                    &cfg.sampler,
                    cfg.seed,
                    p as u64,
                )?;
                &refit.evidences
            };
            for &idx in &order {
                let (mean, structural, residual) = describe_parts(&specs[idx], &schema);
                sensitivity_models.push(SensitivityModelRow {
                    prior: choice.label.clone(),
                    mean,
                    structural,
                    residual,
                    posterior_prob: evidences[idx].posterior_prob,
                });
            }
            for r in inclusion_results(evidences, arity, cfg.mean_covariates)? {
                sensitivity_inclusion.push(SensitivityInclusionRow {
                    prior: choice.label.clone(),
                    component: component_tag(r.component).to_string(),
                    covariate: schema.names()[r.covariate].clone(),
                    bf_inclusion: r.bf_inclusion,
                });
            }
        }
    }

    let summary = Summary {
        command: "fit".into(),
        seed: cfg.seed,
        warnings: warnings.clone(),
        fit: Some(FitSummary {
            data: cfg.data.display().to_string(),
            covariates: cfg.covariates.clone(),
            levels: (0..arity)
                .map(|k| {
                    let (lo, hi) = table.levels(k);
                    (lo.to_string(), hi.to_string())
                })
                .collect(),
            n_ratees: table.n_ratees(),
            n_ratings: table.n_ratings(),
            mean_covariates: cfg.mean_covariates,
            prior: primary.label.clone(),
            sigma_beta: primary.sigma_beta,
            chains: cfg.sampler.chains,
            warmup: cfg.sampler.warmup,
            draws_per_chain: cfg.sampler.draws_per_chain,
            models,
            weights,
            inclusion: inclusion_rows,
            irr: irr_rows,
            marginal_means: marginal_rows,
            sensitivity_models,
            sensitivity_inclusion,
        }),
        simulation: None,
    };
    summary.write(&cfg.out)?;
    Ok(warnings)
}

/// One weight vector per requested method, flattened to rows in model
/// table order.
fn weight_tables(
    cfg: &FitConfig,
    table: &RatingsTable,
    specs: &[ModelSpec],
    space: &FittedSpace,
    order: &[usize],
    warnings: &mut Vec<String>,
) -> Result<Vec<WeightRow>, CliError> {
    let schema = table.schema();
    let need_ml = cfg.methods.iter().any(WeightKind::needs_ml);
    let need_pointwise = cfg.methods.iter().any(WeightKind::needs_pointwise);

    let ml = if need_ml {
        let fits: Vec<_> = specs
            .par_iter()
            .map(|spec| ml_fit(table, spec))
            .collect::<Result<_, Error>>()?;
        Some(fits)
    } else {
        None
    };
    if let Some(fits) = &ml {
        let bad = fits.iter().filter(|f| !f.converged).count();
        if bad > 0 {
            warnings.push(format!(
                "{bad} of {} maximum-likelihood fits did not converge; \
                 AIC/BIC weights may be unreliable",
                fits.len()
            ));
        }
    }

    let pointwise = if need_pointwise {
        let matrices: Vec<Vec<Vec<f64>>> = space
            .draws
            .par_iter()
            .map(|d| pointwise_matrix(d, table))
            .collect::<Result<_, Error>>()?;
        Some(matrices)
    } else {
        None
    };
    let loo_fits = if cfg.methods.iter().any(WeightKind::needs_loo) {
        let fits: Vec<_> = pointwise
            .as_ref()
            .unwrap()
            .par_iter()
            .map(|m| loo(m))
            .collect::<Result<_, Error>>()?;
        let degenerate = fits.iter().filter(|l| l.flagged_points > 0).count();
        if degenerate > 0 {
            warnings.push(format!(
                "importance weights were degenerate for {degenerate} of {} models; \
                 those points fall back to their WAIC contribution",
                fits.len()
            ));
        }
        Some(fits)
    } else {
        None
    };

    let mut rows = Vec::new();
    for kind in &cfg.methods {
        let vector = match kind {
            WeightKind::Bma => WeightVector {
                method: WeightMethod::Bma,
                weights: space.evidences.iter().map(|e| e.posterior_prob).collect(),
                flagged: false,
            },
            WeightKind::Aic => {
                let values: Vec<f64> = ml.as_ref().unwrap().iter().map(|f| f.aic).collect();
                ic_weights(&values, WeightMethod::Aic)?
            }
            WeightKind::Bic => {
                let values: Vec<f64> = ml.as_ref().unwrap().iter().map(|f| f.bic).collect();
                ic_weights(&values, WeightMethod::Bic)?
            }
            WeightKind::Waic => {
                let elpd: Vec<f64> = pointwise
                    .as_ref()
                    .unwrap()
                    .iter()
                    .map(|m| waic(m))
                    .collect::<Result<_, Error>>()?;
                let deviance: Vec<f64> = elpd.iter().map(|e| -2.0 * e).collect();
                ic_weights(&deviance, WeightMethod::Waic)?
            }
            WeightKind::Loo | WeightKind::PseudoBma => {
                let elpd: Vec<f64> = loo_fits.as_ref().unwrap().iter().map(|l| l.elpd).collect();
                pseudo_bma_weights(&elpd)?
            }
            WeightKind::Stacking => {
                let per_point: Vec<Vec<f64>> = loo_fits
                    .as_ref()
                    .unwrap()
                    .iter()
                    .map(|l| l.pointwise.clone())
                    .collect();
                let w = stacking_weights(&per_point)?;
                if w.flagged {
                    warnings.push(
                        "the stacking optimizer hit its iteration cap; weights are the last iterate"
                            .into(),
                    );
                }
                w
            }
        };
        vector.validate()?;
        for &idx in order {
            rows.push(WeightRow {
                method: kind.tag().to_string(),
                model: specs[idx].describe(schema),
                weight: vector.weights[idx],
                flagged: vector.flagged,
            });
        }
    }
    Ok(rows)
}
