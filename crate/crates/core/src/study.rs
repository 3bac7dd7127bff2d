//! Factorial simulation studies comparing selection and averaging
//! methods: data generation, per-replication method runs, selection
//! scoring, error aggregation, and Bayes-factor calibration.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::averaging::{
    bma_mix, ic_weights, pointwise_matrix, predictive_criteria, pseudo_bma_weights,
    select_minimum, stacking_weights, stepwise, PredictiveCriteria, StepwiseConfig, WeightMethod,
    WeightVector,
};
use crate::data::{scenario, simulate_dataset, ScenarioConfig};
use crate::error::{Error, Result};
use crate::evidence::{bridge_logml, inclusion_bf, posterior_model_probs, ModelEvidence};
use crate::likelihood::{ml_fit, FrequentistFit};
use crate::model::{
    enumerate_models, irr, irr_profile, linked_mean, linked_sd, Component, CovariateProfile,
    ModelSpec, ParameterVector, PriorConfig,
};
use crate::rng;
use crate::sampler::{sample_posterior, PosteriorDraws, SamplerConfig};

/// Selection or averaging method compared in a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Select the model with the highest posterior probability.
    Bf,
    /// Average posteriors with posterior model probabilities.
    Bma,
    Aic,
    Bic,
    /// Combine ML point estimates with AIC weights.
    AicAveraging,
    /// Combine ML point estimates with BIC weights.
    BicAveraging,
    Forward,
    Backward,
    Waic,
    Loo,
    /// Average posteriors with weights from LOO predictive densities.
    PseudoBma,
    /// Average posteriors with stacking weights.
    Stacking,
}

impl Method {
    pub const ALL: [Method; 12] = [
        Method::Bf,
        Method::Bma,
        Method::Aic,
        Method::Bic,
        Method::AicAveraging,
        Method::BicAveraging,
        Method::Forward,
        Method::Backward,
        Method::Waic,
        Method::Loo,
        Method::PseudoBma,
        Method::Stacking,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            Method::Bf => "bf",
            Method::Bma => "bma",
            Method::Aic => "aic",
            Method::Bic => "bic",
            Method::AicAveraging => "aic-averaging",
            Method::BicAveraging => "bic-averaging",
            Method::Forward => "forward",
            Method::Backward => "backward",
            Method::Waic => "waic",
            Method::Loo => "loo",
            Method::PseudoBma => "pseudo-bma",
            Method::Stacking => "stacking",
        }
    }

    pub fn parse(tag: &str) -> Result<Method> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.tag() == tag)
            .ok_or_else(|| {
                Error::Validation(format!(
                    "unknown method \"{tag}\"; expected one of {}",
                    Method::ALL.map(|m| m.tag()).join(", ")
                ))
            })
    }

    /// Needs posterior samples for every model.
    fn uses_posterior(&self) -> bool {
        matches!(
            self,
            Method::Bf
                | Method::Bma
                | Method::Waic
                | Method::Loo
                | Method::PseudoBma
                | Method::Stacking
        )
    }

    /// Needs marginal likelihoods (and hence yields inclusion BFs).
    fn uses_evidence(&self) -> bool {
        matches!(self, Method::Bf | Method::Bma)
    }

    /// Needs pointwise predictive log-likelihood matrices.
    fn uses_pointwise(&self) -> bool {
        matches!(
            self,
            Method::Waic | Method::Loo | Method::PseudoBma | Method::Stacking
        )
    }

    /// Needs ML fits of the whole model space.
    fn uses_ml_grid(&self) -> bool {
        matches!(
            self,
            Method::Aic | Method::Bic | Method::AicAveraging | Method::BicAveraging
        )
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// One cell of the factorial design.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct ConditionKey {
    pub scenario: String,
    pub ratees_per_group: usize,
    pub ratings_per_ratee: usize,
}

/// A factorial method-comparison plan: scenarios crossed with group
/// sizes and ratings per ratee, replicated under a master seed.
#[derive(Debug, Clone)]
pub struct StudyPlan {
    /// Scenario labels from the design table.
    pub scenarios: Vec<String>,
    /// Ratees per group; the design grid uses 25, 50, 100, and 200.
    pub ratees_per_group: Vec<usize>,
    /// Ratings per ratee; the design grid uses 3 and 5.
    pub ratings_per_ratee: Vec<usize>,
    pub replications: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub sampler: SamplerConfig,
    /// Draws taken from a weighted posterior mixture.
    pub mixture_draws: usize,
}

impl StudyPlan {
    pub fn new(
        scenarios: &[&str],
        ratees_per_group: &[usize],
        ratings_per_ratee: &[usize],
        replications: usize,
        methods: &[Method],
        seed: u64,
    ) -> Self {
        Self {
            scenarios: scenarios.iter().map(|s| s.to_string()).collect(),
            ratees_per_group: ratees_per_group.to_vec(),
            ratings_per_ratee: ratings_per_ratee.to_vec(),
            replications,
            methods: methods.to_vec(),
            seed,
            sampler: SamplerConfig {
                warmup: 1000,
                draws_per_chain: 1000,
                ..SamplerConfig::default()
            },
            mixture_draws: 4000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty()
            || self.ratees_per_group.is_empty()
            || self.ratings_per_ratee.is_empty()
            || self.methods.is_empty()
        {
            return Err(Error::Validation(
                "scenarios, group sizes, ratings, and methods must all be nonempty".into(),
            ));
        }
        if self.replications == 0 {
            return Err(Error::Validation("need at least one replication".into()));
        }
        for label in &self.scenarios {
            if scenario(label).is_none() {
                return Err(Error::Validation(format!(
                    "unknown scenario \"{label}\""
                )));
            }
        }
        for i in &self.ratees_per_group {
            if ![25, 50, 100, 200].contains(i) {
                return Err(Error::Validation(format!(
                    "{i} ratees per group is outside the design grid (25, 50, 100, 200)"
                )));
            }
        }
        for j in &self.ratings_per_ratee {
            if ![3, 5].contains(j) {
                return Err(Error::Validation(format!(
                    "{j} ratings per ratee is outside the design grid (3, 5)"
                )));
            }
        }
        if self.mixture_draws == 0 {
            return Err(Error::Validation("mixture draws must be positive".into()));
        }
        self.sampler.validate()
    }

    /// Conditions in scenario-major, then group-size, then ratings order.
    pub fn conditions(&self) -> Vec<ConditionKey> {
        let mut out = Vec::new();
        for s in &self.scenarios {
            for &i in &self.ratees_per_group {
                for &j in &self.ratings_per_ratee {
                    out.push(ConditionKey {
                        scenario: s.clone(),
                        ratees_per_group: i,
                        ratings_per_ratee: j,
                    });
                }
            }
        }
        out
    }
}

/// Group-specific model quantities; index 0 is the group coded -0.5.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupEstimates {
    pub mean: [f64; 2],
    pub sd_structural: [f64; 2],
    pub sd_residual: [f64; 2],
    pub irr: [f64; 2],
}

impl GroupEstimates {
    /// Evaluate one parameter vector at both group profiles.
    pub fn from_params(params: &ParameterVector<f64>) -> Result<Self> {
        let mut out = Self {
            mean: [0.0; 2],
            sd_structural: [0.0; 2],
            sd_residual: [0.0; 2],
            irr: [0.0; 2],
        };
        for (g, profile) in group_profiles().iter().enumerate() {
            out.mean[g] = linked_mean(params.alpha_mu, &params.beta_mu, profile);
            out.sd_structural[g] = linked_sd(params.alpha_gamma, &params.beta_gamma, profile)?;
            out.sd_residual[g] = linked_sd(params.alpha_epsilon, &params.beta_epsilon, profile)?;
            out.irr[g] = irr_profile(params, profile)?;
        }
        Ok(out)
    }

    /// Posterior means of the group quantities over a set of draws.
    pub fn posterior_mean(params: &[ParameterVector<f64>]) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::Validation("no draws to average".into()));
        }
        let mut acc = Self {
            mean: [0.0; 2],
            sd_structural: [0.0; 2],
            sd_residual: [0.0; 2],
            irr: [0.0; 2],
        };
        for p in params {
            let one = Self::from_params(p)?;
            for g in 0..2 {
                acc.mean[g] += one.mean[g];
                acc.sd_structural[g] += one.sd_structural[g];
                acc.sd_residual[g] += one.sd_residual[g];
                acc.irr[g] += one.irr[g];
            }
        }
        let n = params.len() as f64;
        for g in 0..2 {
            acc.mean[g] /= n;
            acc.sd_structural[g] /= n;
            acc.sd_residual[g] /= n;
            acc.irr[g] /= n;
        }
        Ok(acc)
    }

    fn get(&self, quantity: Quantity, g: usize) -> f64 {
        match quantity {
            Quantity::Mean => self.mean[g],
            Quantity::StructuralSd => self.sd_structural[g],
            Quantity::ResidualSd => self.sd_residual[g],
            Quantity::Irr => self.irr[g],
        }
    }
}

fn group_profiles() -> [CovariateProfile<f64>; 2] {
    [
        CovariateProfile::from_signs(&[false]),
        CovariateProfile::from_signs(&[true]),
    ]
}

/// The generating model and quantities behind one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionTruth {
    pub spec: ModelSpec,
    pub estimates: GroupEstimates,
}

pub fn condition_truth(config: &ScenarioConfig) -> Result<ConditionTruth> {
    let [mean_diff, structural_diff, residual_diff] = config.true_effects();
    let spec = ModelSpec::null(1)
        .with(Component::Mean, 0, mean_diff)
        .with(Component::Structural, 0, structural_diff)
        .with(Component::Residual, 0, residual_diff);
    let mut estimates = GroupEstimates {
        mean: config.mu,
        sd_structural: config.sigma_gamma,
        sd_residual: config.sigma_epsilon,
        irr: [0.0; 2],
    };
    for g in 0..2 {
        estimates.irr[g] = irr(config.sigma_gamma[g], config.sigma_epsilon[g])?;
    }
    Ok(ConditionTruth { spec, estimates })
}

/// One method's outcome on one simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodRecord {
    pub method: Method,
    pub selected: ModelSpec,
    pub estimates: GroupEstimates,
}

/// Everything recorded for one (condition, replication) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationRecord {
    pub condition: ConditionKey,
    pub replication: usize,
    pub methods: Vec<MethodRecord>,
    /// Inclusion Bayes factors in component order (mean, structural,
    /// residual); present when a marginal-likelihood method ran.
    pub inclusion_bf: Option<[f64; 3]>,
}

/// A replication that failed, with the condition it belonged to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureRecord {
    pub condition: ConditionKey,
    pub replication: usize,
    pub message: String,
}

/// Raw study output: per-replication records plus logged failures.
#[derive(Debug, Clone)]
pub struct StudyResults {
    pub plan: StudyPlan,
    pub records: Vec<ReplicationRecord>,
    pub failures: Vec<FailureRecord>,
}

/// Run the full factorial sweep. Replications are independent work
/// units; each derives its RNG stream from (master seed, condition,
/// replication), so results are reproducible bit for bit regardless of
/// scheduling. Failed replications are logged, never fatal.
pub fn run_study(plan: &StudyPlan) -> Result<StudyResults> {
    plan.validate()?;
    let conditions = plan.conditions();
    let jobs: Vec<(usize, usize)> = (0..conditions.len())
        .flat_map(|c| (0..plan.replications).map(move |r| (c, r)))
        .collect();
    let outcomes: Vec<(usize, usize, Result<ReplicationOutcome>)> = jobs
        .into_par_iter()
        .map(|(c, r)| {
            let key = &conditions[c];
            let config = scenario(&key.scenario)
                .expect("validated scenario")
                .with_design(
                    key.ratees_per_group,
                    key.ratings_per_ratee,
                    rng::derive(plan.seed, &[c as u64, r as u64]),
                );
            (c, r, run_replication(plan, &config))
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (c, r, outcome) in outcomes {
        match outcome {
            Ok(out) => records.push(ReplicationRecord {
                condition: conditions[c].clone(),
                replication: r,
                methods: out.methods,
                inclusion_bf: out.inclusion_bf,
            }),
            Err(e) => failures.push(FailureRecord {
                condition: conditions[c].clone(),
                replication: r,
                message: e.to_string(),
            }),
        }
    }
    Ok(StudyResults {
        plan: plan.clone(),
        records,
        failures,
    })
}

struct ReplicationOutcome {
    methods: Vec<MethodRecord>,
    inclusion_bf: Option<[f64; 3]>,
}

fn run_replication(plan: &StudyPlan, config: &ScenarioConfig) -> Result<ReplicationOutcome> {
    let data = simulate_dataset(config)?;
    let models = enumerate_models(data.schema());
    let prior = PriorConfig::default();
    let seed = config.seed;

    let needs_posterior = plan.methods.iter().any(Method::uses_posterior);
    let needs_evidence = plan.methods.iter().any(Method::uses_evidence);
    let needs_pointwise = plan.methods.iter().any(Method::uses_pointwise);
    let needs_ml_grid = plan.methods.iter().any(Method::uses_ml_grid);

    let draws: Vec<PosteriorDraws> = if needs_posterior {
        models
            .iter()
            .enumerate()
            .map(|(idx, spec)| {
                let cfg = SamplerConfig {
                    seed: rng::derive(seed, &[1, idx as u64]),
                    ..plan.sampler
                };
                sample_posterior(&data, spec, &prior, &cfg)
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let evidence: Option<Vec<ModelEvidence>> = if needs_evidence {
        let mut ev = Vec::with_capacity(models.len());
        for (spec, d) in models.iter().zip(&draws) {
            let bridge = bridge_logml(d, &data, spec, &prior)?;
            ev.push(ModelEvidence::new(
                spec.clone(),
                bridge.log_marglik,
                bridge.mcse,
                1.0 / models.len() as f64,
            ));
        }
        posterior_model_probs(&mut ev)?;
        Some(ev)
    } else {
        None
    };

    let criteria: Option<Vec<PredictiveCriteria>> = if needs_pointwise {
        Some(
            draws
                .iter()
                .map(|d| predictive_criteria(&pointwise_matrix(d, &data)?))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };

    let ml_fits: Option<Vec<FrequentistFit>> = if needs_ml_grid {
        Some(
            models
                .iter()
                .map(|spec| ml_fit(&data, spec))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };

    let posterior_estimates = |idx: usize| -> Result<GroupEstimates> {
        let d = &draws[idx];
        let params: Vec<ParameterVector<f64>> = (0..d.n_draws()).map(|r| d.params_at(r)).collect();
        GroupEstimates::posterior_mean(&params)
    };
    let mixture_estimates = |weights: &WeightVector, salt: u64| -> Result<(usize, GroupEstimates)> {
        let selected = select_minimum(
            &weights.weights.iter().map(|w| -w).collect::<Vec<_>>(),
            &models,
        );
        let mixed = bma_mix(
            &draws,
            weights,
            plan.mixture_draws,
            rng::derive(seed, &[2, salt]),
        )?;
        Ok((selected, GroupEstimates::posterior_mean(&mixed.params)?))
    };
    let plugin_average =
        |fits: &[FrequentistFit], weights: &WeightVector| -> Result<GroupEstimates> {
            let mut acc = GroupEstimates {
                mean: [0.0; 2],
                sd_structural: [0.0; 2],
                sd_residual: [0.0; 2],
                irr: [0.0; 2],
            };
            for (fit, w) in fits.iter().zip(&weights.weights) {
                let one = GroupEstimates::from_params(&fit.estimates)?;
                for g in 0..2 {
                    acc.mean[g] += w * one.mean[g];
                    acc.sd_structural[g] += w * one.sd_structural[g];
                    acc.sd_residual[g] += w * one.sd_residual[g];
                    acc.irr[g] += w * one.irr[g];
                }
            }
            Ok(acc)
        };

    let mut method_records = Vec::with_capacity(plan.methods.len());
    for &method in &plan.methods {
        let (selected_idx, selected_spec, estimates) = match method {
            Method::Bf => {
                let ev = evidence.as_ref().expect("evidence computed");
                let probs: Vec<f64> = ev.iter().map(|e| -e.posterior_prob).collect();
                let idx = select_minimum(&probs, &models);
                (Some(idx), models[idx].clone(), posterior_estimates(idx)?)
            }
            Method::Bma => {
                let ev = evidence.as_ref().expect("evidence computed");
                let weights = WeightVector {
                    method: WeightMethod::Bma,
                    weights: ev.iter().map(|e| e.posterior_prob).collect(),
                    flagged: false,
                };
                let (idx, est) = mixture_estimates(&weights, 0)?;
                (Some(idx), models[idx].clone(), est)
            }
            Method::Aic | Method::Bic => {
                let fits = ml_fits.as_ref().expect("ML grid computed");
                let values: Vec<f64> = fits
                    .iter()
                    .map(|f| if method == Method::Aic { f.aic } else { f.bic })
                    .collect();
                let idx = select_minimum(&values, &models);
                (
                    Some(idx),
                    models[idx].clone(),
                    GroupEstimates::from_params(&fits[idx].estimates)?,
                )
            }
            Method::AicAveraging | Method::BicAveraging => {
                let fits = ml_fits.as_ref().expect("ML grid computed");
                let (values, tag): (Vec<f64>, _) = if method == Method::AicAveraging {
                    (fits.iter().map(|f| f.aic).collect(), WeightMethod::Aic)
                } else {
                    (fits.iter().map(|f| f.bic).collect(), WeightMethod::Bic)
                };
                let weights = ic_weights(&values, tag)?;
                let idx = select_minimum(&values, &models);
                (
                    Some(idx),
                    models[idx].clone(),
                    plugin_average(fits, &weights)?,
                )
            }
            Method::Forward | Method::Backward => {
                let cfg = if method == Method::Forward {
                    StepwiseConfig::forward(0.05)
                } else {
                    StepwiseConfig::backward(0.05)
                };
                let outcome = stepwise(&data, &cfg)?;
                let fit = ml_fit(&data, &outcome.spec)?;
                (
                    None,
                    outcome.spec,
                    GroupEstimates::from_params(&fit.estimates)?,
                )
            }
            Method::Waic | Method::Loo => {
                let crit = criteria.as_ref().expect("predictive criteria computed");
                let values: Vec<f64> = crit
                    .iter()
                    .map(|c| {
                        if method == Method::Waic {
                            -c.waic
                        } else {
                            -c.loo
                        }
                    })
                    .collect();
                let idx = select_minimum(&values, &models);
                (Some(idx), models[idx].clone(), posterior_estimates(idx)?)
            }
            Method::PseudoBma => {
                let crit = criteria.as_ref().expect("predictive criteria computed");
                let elpds: Vec<f64> = crit.iter().map(|c| c.loo).collect();
                let weights = pseudo_bma_weights(&elpds)?;
                let (idx, est) = mixture_estimates(&weights, 1)?;
                (Some(idx), models[idx].clone(), est)
            }
            Method::Stacking => {
                let crit = criteria.as_ref().expect("predictive criteria computed");
                let pointwise: Vec<Vec<f64>> =
                    crit.iter().map(|c| c.loo_pointwise.clone()).collect();
                let weights = stacking_weights(&pointwise)?;
                let (idx, est) = mixture_estimates(&weights, 2)?;
                (Some(idx), models[idx].clone(), est)
            }
        };
        let _ = selected_idx;
        method_records.push(MethodRecord {
            method,
            selected: selected_spec,
            estimates,
        });
    }

    let inclusion_bf = match &evidence {
        Some(ev) => {
            let mut bfs = [0.0; 3];
            for (slot, comp) in [Component::Mean, Component::Structural, Component::Residual]
                .iter()
                .enumerate()
            {
                bfs[slot] = inclusion_bf(ev, *comp, 0)?.bf_inclusion;
            }
            Some(bfs)
        }
        None => None,
    };

    Ok(ReplicationOutcome {
        methods: method_records,
        inclusion_bf,
    })
}

/// How a selected model relates to the generating one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionScore {
    /// Masks match exactly.
    Correct,
    /// Contains every true difference plus at least one spurious one.
    MoreComplex,
    /// Misses at least one true difference.
    Other,
}

pub fn score_selection(selected: &ModelSpec, truth: &ModelSpec) -> SelectionScore {
    assert_eq!(selected.arity(), truth.arity());
    let mut equal = true;
    let mut superset = true;
    for comp in [Component::Mean, Component::Structural, Component::Residual] {
        for k in 0..truth.arity() {
            let s = selected.includes(comp, k);
            let t = truth.includes(comp, k);
            if s != t {
                equal = false;
            }
            if t && !s {
                superset = false;
            }
        }
    }
    if equal {
        SelectionScore::Correct
    } else if superset {
        SelectionScore::MoreComplex
    } else {
        SelectionScore::Other
    }
}

/// Correct / more-complex / other selection proportions with the SE of
/// the accuracy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionRates {
    pub accuracy: f64,
    pub accuracy_se: f64,
    pub more_complex: f64,
    pub other: f64,
}

/// Model quantity scored in the error tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Mean,
    StructuralSd,
    ResidualSd,
    Irr,
}

pub const QUANTITIES: [Quantity; 4] = [
    Quantity::Mean,
    Quantity::StructuralSd,
    Quantity::ResidualSd,
    Quantity::Irr,
];

/// RMSE of one quantity with a delta-method SE and the bias share of the
/// error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorSummary {
    pub quantity: Quantity,
    pub rmse: f64,
    pub rmse_se: f64,
    pub bias2_over_mse: f64,
}

fn error_stats(quantity: Quantity, errors: &[f64]) -> ErrorSummary {
    let n = errors.len() as f64;
    let mse = errors.iter().map(|e| e * e).sum::<f64>() / n;
    let rmse = mse.sqrt();
    let rmse_se = if errors.len() > 1 && rmse > 0.0 {
        let var_sq = errors
            .iter()
            .map(|e| (e * e - mse) * (e * e - mse))
            .sum::<f64>()
            / (n - 1.0);
        (var_sq / n).sqrt() / (2.0 * rmse)
    } else {
        0.0
    };
    let bias = errors.iter().sum::<f64>() / n;
    let bias2_over_mse = if mse > 0.0 {
        (bias * bias / mse).min(1.0)
    } else {
        0.0
    };
    ErrorSummary {
        quantity,
        rmse,
        rmse_se,
        bias2_over_mse,
    }
}

/// One method's aggregated performance in one condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodMetrics {
    pub method: Method,
    pub selection: SelectionRates,
    pub errors: Vec<ErrorSummary>,
}

/// Aggregates for one design cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionMetrics {
    pub condition: ConditionKey,
    pub attempted: usize,
    pub completed: usize,
    /// More than 5% of replications failed.
    pub failure_flagged: bool,
    pub methods: Vec<MethodMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationMetrics {
    pub conditions: Vec<ConditionMetrics>,
}

impl StudyResults {
    /// Aggregate the raw records condition by condition. Records are
    /// keyed and sorted internally, so the aggregation does not depend
    /// on their order.
    pub fn metrics(&self) -> Result<SimulationMetrics> {
        let mut conditions = Vec::new();
        for key in self.plan.conditions() {
            let mut records: Vec<&ReplicationRecord> = self
                .records
                .iter()
                .filter(|r| r.condition == key)
                .collect();
            records.sort_by_key(|r| r.replication);
            let failed = self
                .failures
                .iter()
                .filter(|f| f.condition == key)
                .count();
            let attempted = records.len() + failed;
            let truth = condition_truth(&scenario(&key.scenario).ok_or_else(|| {
                Error::Validation(format!("unknown scenario \"{}\"", key.scenario))
            })?)?;
            let mut methods = Vec::with_capacity(self.plan.methods.len());
            for &method in &self.plan.methods {
                let outcomes: Vec<&MethodRecord> = records
                    .iter()
                    .filter_map(|r| r.methods.iter().find(|m| m.method == method))
                    .collect();
                if outcomes.is_empty() {
                    continue;
                }
                let n = outcomes.len() as f64;
                let mut correct = 0usize;
                let mut more_complex = 0usize;
                let mut other = 0usize;
                for rec in &outcomes {
                    match score_selection(&rec.selected, &truth.spec) {
                        SelectionScore::Correct => correct += 1,
                        SelectionScore::MoreComplex => more_complex += 1,
                        SelectionScore::Other => other += 1,
                    }
                }
                let accuracy = correct as f64 / n;
                let selection = SelectionRates {
                    accuracy,
                    accuracy_se: (accuracy * (1.0 - accuracy) / n).sqrt(),
                    more_complex: more_complex as f64 / n,
                    other: other as f64 / n,
                };
                let errors = QUANTITIES
                    .iter()
                    .map(|&q| {
                        let errs: Vec<f64> = outcomes
                            .iter()
                            .flat_map(|rec| {
                                (0..2).map(|g| {
                                    rec.estimates.get(q, g) - truth.estimates.get(q, g)
                                })
                            })
                            .collect();
                        error_stats(q, &errs)
                    })
                    .collect();
                methods.push(MethodMetrics {
                    method,
                    selection,
                    errors,
                });
            }
            conditions.push(ConditionMetrics {
                condition: key,
                attempted,
                completed: records.len(),
                failure_flagged: attempted > 0
                    && failed as f64 / attempted as f64 > 0.05,
                methods,
            });
        }
        Ok(SimulationMetrics { conditions })
    }
}

/// One row of the Bayes-factor calibration table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationRow {
    pub component: Component,
    /// Whether the generating scenario had a difference in this
    /// component.
    pub difference: bool,
    pub count: usize,
    /// Proportion of inclusion BFs strictly on the correct side of 1.
    pub favoring: f64,
    /// BF > 10 under no difference, or BF < 1/10 under a difference.
    pub misleading_strong: f64,
}

/// Calibration of inclusion Bayes factors against the generating truth,
/// pooled over the given records. Classes with no observations are
/// omitted.
pub fn bf_calibration(records: &[ReplicationRecord]) -> Result<Vec<CalibrationRow>> {
    if !records.iter().any(|r| r.inclusion_bf.is_some()) {
        return Err(Error::Validation(
            "no inclusion Bayes factors recorded; run with a marginal-likelihood method".into(),
        ));
    }
    let components = [Component::Mean, Component::Structural, Component::Residual];
    let mut rows = Vec::new();
    for (slot, &component) in components.iter().enumerate() {
        for difference in [true, false] {
            let mut bfs = Vec::new();
            for rec in records {
                let Some(inclusion) = rec.inclusion_bf else {
                    continue;
                };
                let truth = scenario(&rec.condition.scenario)
                    .ok_or_else(|| {
                        Error::Validation(format!(
                            "unknown scenario \"{}\"",
                            rec.condition.scenario
                        ))
                    })?
                    .true_effects();
                if truth[slot] == difference {
                    bfs.push(inclusion[slot]);
                }
            }
            if bfs.is_empty() {
                continue;
            }
            let n = bfs.len() as f64;
            let favoring = bfs
                .iter()
                .filter(|&&bf| if difference { bf > 1.0 } else { bf < 1.0 })
                .count() as f64
                / n;
            let misleading_strong = bfs
                .iter()
                .filter(|&&bf| if difference { bf < 0.1 } else { bf > 10.0 })
                .count() as f64
                / n;
            rows.push(CalibrationRow {
                component,
                difference,
                count: bfs.len(),
                favoring,
                misleading_strong,
            });
        }
    }
    Ok(rows)
}

/// One row of an error table pooled across scenarios and ratings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RmseRow {
    pub method: Method,
    pub ratees_per_group: usize,
    pub rmse: f64,
    pub se: f64,
    pub bias2_over_mse: f64,
}

/// RMSE of one quantity per (method, group size), pooled over scenarios,
/// ratings, and groups — the shape of the published error tables.
pub fn rmse_table(records: &[ReplicationRecord], quantity: Quantity) -> Result<Vec<RmseRow>> {
    let mut methods: Vec<Method> = Vec::new();
    let mut sizes: Vec<usize> = Vec::new();
    for rec in records {
        if !sizes.contains(&rec.condition.ratees_per_group) {
            sizes.push(rec.condition.ratees_per_group);
        }
        for m in &rec.methods {
            if !methods.contains(&m.method) {
                methods.push(m.method);
            }
        }
    }
    sizes.sort_unstable();
    let mut rows = Vec::new();
    for method in methods {
        for &size in &sizes {
            let mut errors = Vec::new();
            for rec in records {
                if rec.condition.ratees_per_group != size {
                    continue;
                }
                let Some(m) = rec.methods.iter().find(|m| m.method == method) else {
                    continue;
                };
                let truth = condition_truth(&scenario(&rec.condition.scenario).ok_or_else(
                    || {
                        Error::Validation(format!(
                            "unknown scenario \"{}\"",
                            rec.condition.scenario
                        ))
                    },
                )?)?;
                for g in 0..2 {
                    errors.push(m.estimates.get(quantity, g) - truth.estimates.get(quantity, g));
                }
            }
            if errors.is_empty() {
                continue;
            }
            let stats = error_stats(quantity, &errors);
            rows.push(RmseRow {
                method,
                ratees_per_group: size,
                rmse: stats.rmse,
                se: stats.rmse_se,
                bias2_over_mse: stats.bias2_over_mse,
            });
        }
    }
    Ok(rows)
}
