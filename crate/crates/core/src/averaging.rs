//! Model selection and model averaging: information-criterion weights,
//! WAIC and importance-sampling LOO, pseudo-BMA and stacking weights,
//! posterior mixing across models, stepwise selection, and reliability
//! summaries with intervals.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::{resample_table, RatingsTable};
use crate::error::{Error, Result};
use crate::evidence::InclusionResult;
use crate::likelihood::{
    draw_conditional_effects, ml_fit, pointwise_loglik, reml_fit, FrequentistFit,
};
use crate::model::{
    irr_profile, linked_mean, linked_sd, Component, CovariateProfile, ModelSpec, ParameterVector,
};
use crate::rng;
use crate::sampler::PosteriorDraws;

/// How a weight vector was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMethod {
    Bma,
    Aic,
    Bic,
    Waic,
    PseudoBma,
    Stacking,
}

/// Per-model weights on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub method: WeightMethod,
    pub weights: Vec<f64>,
    /// The optimizer hit its iteration cap (stacking only); the weights
    /// are the last iterate.
    pub flagged: bool,
}

impl WeightVector {
    fn normalized(method: WeightMethod, raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Validation("no models to weight".into()));
        }
        if raw.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Degenerate(
                "weight computation produced a negative or non-finite value".into(),
            ));
        }
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Degenerate("all model weights vanished".into()));
        }
        Ok(Self {
            method,
            weights: raw.into_iter().map(|w| w / total).collect(),
            flagged: false,
        })
    }

    /// Check the simplex invariant: nonnegative entries summing to one.
    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Validation("weights must be nonnegative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::Validation(format!(
                "weights sum to {total}, not 1"
            )));
        }
        Ok(())
    }
}

/// Akaike-style weights from information-criterion values on the deviance
/// scale: `w_m` proportional to `exp(-(value_m - min value) / 2)`. Accepts
/// AIC, BIC, or WAIC (as `-2 elpd`) values.
pub fn ic_weights(values: &[f64], method: WeightMethod) -> Result<WeightVector> {
    if !matches!(
        method,
        WeightMethod::Aic | WeightMethod::Bic | WeightMethod::Waic
    ) {
        return Err(Error::Validation(
            "information-criterion weights require an IC method tag".into(),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(
            "information criteria must be finite".into(),
        ));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    WeightVector::normalized(
        method,
        values.iter().map(|v| (-0.5 * (v - min)).exp()).collect(),
    )
}

/// Pseudo-BMA weights from expected log predictive densities:
/// `w_m` proportional to `exp(elpd_m - max elpd)`.
pub fn pseudo_bma_weights(elpd: &[f64]) -> Result<WeightVector> {
    if elpd.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(
            "predictive densities must be finite".into(),
        ));
    }
    let max = elpd.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    WeightVector::normalized(
        WeightMethod::PseudoBma,
        elpd.iter().map(|v| (v - max).exp()).collect(),
    )
}

fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn check_pointwise(pointwise: &[Vec<f64>], min_draws: usize) -> Result<usize> {
    if pointwise.len() < min_draws {
        return Err(Error::Validation(format!(
            "need at least {min_draws} posterior draws, got {}",
            pointwise.len()
        )));
    }
    let n = pointwise[0].len();
    if n == 0 || pointwise.iter().any(|row| row.len() != n) {
        return Err(Error::Validation(
            "pointwise log-likelihood rows must be nonempty and equal-length".into(),
        ));
    }
    Ok(n)
}

/// Per-rating WAIC contributions: log pointwise predictive density minus
/// the posterior-variance penalty.
pub fn waic_pointwise(pointwise: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = check_pointwise(pointwise, 2)?;
    let s = pointwise.len() as f64;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let col = pointwise.iter().map(|row| row[i]);
        let lpd = logsumexp(col.clone()) - s.ln();
        let mean = col.clone().sum::<f64>() / s;
        let var = col.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (s - 1.0);
        out.push(lpd - var);
    }
    Ok(out)
}

/// WAIC on the expected-log-predictive-density scale (sum over ratings).
pub fn waic(pointwise: &[Vec<f64>]) -> Result<f64> {
    Ok(waic_pointwise(pointwise)?.iter().sum())
}

/// Importance-sampling leave-one-rating-out estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct LooEstimate {
    /// Summed expected log predictive density.
    pub elpd: f64,
    /// Per-rating contributions (the stacking inputs).
    pub pointwise: Vec<f64>,
    /// Ratings whose importance weights were degenerate and fell back to
    /// the WAIC-style estimate.
    pub flagged_points: usize,
}

/// Leave-one-rating-out cross-validation by truncated importance
/// sampling: per rating, weights `1 / p(y_i | draw)` are capped at
/// `S^(3/4)` times their mean before the weighted predictive density is
/// formed. A rating whose untruncated weights put essentially all mass on
/// one draw is flagged and scored by its WAIC contribution instead.
pub fn loo(pointwise: &[Vec<f64>]) -> Result<LooEstimate> {
    let n = check_pointwise(pointwise, 100)?;
    let s = pointwise.len() as f64;
    let fallback = waic_pointwise(pointwise)?;
    let mut out = Vec::with_capacity(n);
    let mut flagged = 0usize;
    for i in 0..n {
        let ll: Vec<f64> = pointwise.iter().map(|row| row[i]).collect();
        let lw: Vec<f64> = ll.iter().map(|l| -l).collect();
        let lse = logsumexp(lw.iter().copied());
        let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // All mass on one draw: the largest normalized weight is near 1.
        if max - lse > 0.95f64.ln() {
            flagged += 1;
            out.push(fallback[i]);
            continue;
        }
        let cap = lse - s.ln() + 0.75 * s.ln();
        let lw_trunc: Vec<f64> = lw.iter().map(|w| w.min(cap)).collect();
        let num = logsumexp(lw_trunc.iter().zip(&ll).map(|(w, l)| w + l));
        let den = logsumexp(lw_trunc.iter().copied());
        out.push(num - den);
    }
    Ok(LooEstimate {
        elpd: out.iter().sum(),
        pointwise: out,
        flagged_points: flagged,
    })
}

/// WAIC and LOO for one model, with the pointwise pieces retained for
/// stacking.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveCriteria {
    pub waic: f64,
    pub loo: f64,
    pub waic_pointwise: Vec<f64>,
    pub loo_pointwise: Vec<f64>,
    pub loo_flagged_points: usize,
}

pub fn predictive_criteria(pointwise: &[Vec<f64>]) -> Result<PredictiveCriteria> {
    let waic_pw = waic_pointwise(pointwise)?;
    let loo_est = loo(pointwise)?;
    Ok(PredictiveCriteria {
        waic: waic_pw.iter().sum(),
        loo: loo_est.elpd,
        waic_pointwise: waic_pw,
        loo_pointwise: loo_est.pointwise,
        loo_flagged_points: loo_est.flagged_points,
    })
}

/// Pointwise log-likelihood matrix of a posterior sample: one row per
/// retained draw, one column per rating, conditional on ratee effects
/// drawn from their exact conditionals (fresh effects per row, seeded
/// from the sample's seed).
pub fn pointwise_matrix(draws: &PosteriorDraws, data: &RatingsTable) -> Result<Vec<Vec<f64>>> {
    let base = rng::derive(draws.seed, &[0x9e1177]);
    (0..draws.n_draws())
        .into_par_iter()
        .map(|row| {
            let mut rng = rng::stream(base, row as u64);
            let params = draws.params_at(row);
            let effects = draw_conditional_effects(data, &draws.spec, &params, &mut rng)?;
            pointwise_loglik(data, &draws.spec, &params, &effects)
        })
        .collect()
}

/// Log score of a weighted mixture of per-point predictive densities.
pub fn stacking_objective(log_pred: &[Vec<f64>], weights: &[f64]) -> Result<f64> {
    if log_pred.len() != weights.len() || log_pred.is_empty() {
        return Err(Error::Validation(
            "one weight per model is required".into(),
        ));
    }
    let n = log_pred[0].len();
    let mut total = 0.0;
    for i in 0..n {
        total += logsumexp(
            log_pred
                .iter()
                .zip(weights)
                .map(|(lp, w)| lp[i] + w.ln())
                .collect::<Vec<_>>()
                .into_iter(),
        );
    }
    Ok(total)
}

/// Stacking weights: maximize the summed log score of the mixture of
/// per-point leave-one-out predictive densities over the simplex.
///
/// Uses multiplicative (exponentiated-gradient) updates
/// `w <- w * grad / n`, which stay on the simplex and increase the
/// objective monotonically; iteration stops when the objective moves by
/// less than 1e-8, with a 100_000-step cap (cap hit => `flagged`).
/// Symmetric initialization returns uniform weights for identical models.
pub fn stacking_weights(log_pred: &[Vec<f64>]) -> Result<WeightVector> {
    let m = log_pred.len();
    if m < 2 {
        return Err(Error::Validation(
            "stacking needs at least two models".into(),
        ));
    }
    let n = log_pred[0].len();
    if n == 0 || log_pred.iter().any(|lp| lp.len() != n) {
        return Err(Error::Validation(
            "per-model predictive densities must be nonempty and equal-length".into(),
        ));
    }
    if log_pred.iter().flatten().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::Validation(
            "predictive log densities must not be NaN or +inf".into(),
        ));
    }
    // Shift per point so the best model sits at density 1; the shifts are
    // constants in w and drop out of the maximization.
    let mut ratios = vec![vec![0.0f64; n]; m];
    for i in 0..n {
        let best = log_pred
            .iter()
            .map(|lp| lp[i])
            .fold(f64::NEG_INFINITY, f64::max);
        if best == f64::NEG_INFINITY {
            return Err(Error::Degenerate(
                "a rating has zero predictive density under every model".into(),
            ));
        }
        for (j, lp) in log_pred.iter().enumerate() {
            ratios[j][i] = (lp[i] - best).exp();
        }
    }
    let shifted_objective = |w: &[f64]| -> f64 {
        (0..n)
            .map(|i| {
                ratios
                    .iter()
                    .zip(w)
                    .map(|(r, wm)| wm * r[i])
                    .sum::<f64>()
                    .ln()
            })
            .sum()
    };
    let mut w = vec![1.0 / m as f64; m];
    let mut obj = shifted_objective(&w);
    let mut flagged = true;
    for _ in 0..100_000 {
        let mut grad = vec![0.0f64; m];
        for i in 0..n {
            let denom: f64 = ratios.iter().zip(&w).map(|(r, wm)| wm * r[i]).sum();
            for (g, r) in grad.iter_mut().zip(&ratios) {
                *g += r[i] / denom;
            }
        }
        for (wm, g) in w.iter_mut().zip(&grad) {
            *wm *= g / n as f64;
        }
        let total: f64 = w.iter().sum();
        for wm in &mut w {
            *wm /= total;
        }
        let new_obj = shifted_objective(&w);
        let done = (new_obj - obj).abs() < 1e-8;
        obj = new_obj;
        if done {
            flagged = false;
            break;
        }
    }
    let mut out = WeightVector::normalized(WeightMethod::Stacking, w)?;
    out.flagged = flagged;
    Ok(out)
}

/// Index of the best model under a smaller-is-better criterion. Exact
/// ties go to the model with fewer free parameters, then to the earlier
/// position.
pub fn select_minimum(values: &[f64], specs: &[ModelSpec]) -> usize {
    assert_eq!(values.len(), specs.len());
    assert!(!values.is_empty());
    let mut best = 0usize;
    for i in 1..values.len() {
        let better = values[i] < values[best]
            || (values[i] == values[best]
                && specs[i].free_parameters() < specs[best].free_parameters());
        if better {
            best = i;
        }
    }
    best
}

/// Posterior draws pooled across models, each tagged with the model it
/// came from.
#[derive(Debug, Clone)]
pub struct MixedDraws {
    pub params: Vec<ParameterVector<f64>>,
    pub model_index: Vec<usize>,
}

impl MixedDraws {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

/// Sample `total` draws from the weighted mixture of per-model
/// posteriors: the source model is drawn per draw proportional to the
/// weights, then a parameter vector is resampled uniformly from that
/// model's retained draws. Masked coefficients stay exact zeros because
/// the stored draws carry them as such.
pub fn bma_mix(
    fits: &[PosteriorDraws],
    weights: &WeightVector,
    total: usize,
    seed: u64,
) -> Result<MixedDraws> {
    weights.validate()?;
    if fits.len() != weights.weights.len() || fits.is_empty() {
        return Err(Error::Validation(
            "one posterior sample per weight is required".into(),
        ));
    }
    if total == 0 {
        return Err(Error::Validation("cannot mix zero draws".into()));
    }
    let arity = fits[0].arity();
    if fits.iter().any(|f| f.arity() != arity || f.n_draws() == 0) {
        return Err(Error::Validation(
            "posterior samples must be nonempty and share the covariate schema".into(),
        ));
    }
    let mut rng = rng::stream(seed, 0);
    let mut params = Vec::with_capacity(total);
    let mut model_index = Vec::with_capacity(total);
    for _ in 0..total {
        let u = rng::unit_open(&mut rng);
        let mut cum = 0.0;
        let mut model = fits.len() - 1;
        for (j, w) in weights.weights.iter().enumerate() {
            cum += w;
            if u < cum {
                model = j;
                break;
            }
        }
        let n = fits[model].n_draws();
        let row = ((rng::unit_open(&mut rng) * n as f64) as usize).min(n - 1);
        params.push(fits[model].params_at(row));
        model_index.push(model);
    }
    Ok(MixedDraws {
        params,
        model_index,
    })
}

/// Weighted combination of per-model point estimates of one quantity.
pub fn frequentist_average(estimates: &[f64], weights: &WeightVector) -> Result<f64> {
    weights.validate()?;
    if estimates.len() != weights.weights.len() {
        return Err(Error::Validation(
            "one estimate per weight is required".into(),
        ));
    }
    Ok(estimates
        .iter()
        .zip(&weights.weights)
        .map(|(e, w)| e * w)
        .sum())
}

/// A point estimate with a 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalSummary {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean and central 95% interval of a set of draws.
fn summarize_draws(mut values: Vec<f64>) -> Result<IntervalSummary> {
    if values.is_empty() {
        return Err(Error::Validation("no draws to summarize".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate(
            "summary input contains non-finite values".into(),
        ));
    }
    let point = values.iter().sum::<f64>() / values.len() as f64;
    values.sort_by(f64::total_cmp);
    Ok(IntervalSummary {
        point,
        lower: quantile(&values, 0.025),
        upper: quantile(&values, 0.975),
    })
}

/// Reliability summaries: one row per covariate profile plus one
/// reliability difference per covariate (group coded -0.5 minus group
/// coded +0.5, averaged over the settings of the other covariates).
#[derive(Debug, Clone)]
pub struct IrrReport {
    pub per_profile: Vec<(CovariateProfile<f64>, IntervalSummary)>,
    pub delta: Vec<IntervalSummary>,
}

fn delta_irr(params: &ParameterVector<f64>, k: usize) -> Result<f64> {
    let arity = params.arity();
    let mut total = 0.0;
    let mut count = 0usize;
    for profile in CovariateProfile::<f64>::all(arity) {
        if profile.values()[k] > 0.0 {
            continue;
        }
        total += irr_profile(params, &profile)? - irr_profile(params, &profile.flipped(k))?;
        count += 1;
    }
    Ok(total / count as f64)
}

/// Posterior reliability summaries from (possibly mixed) parameter draws:
/// medians and central 95% intervals.
pub fn irr_summaries_bayes(
    params: &[ParameterVector<f64>],
    profiles: &[CovariateProfile<f64>],
) -> Result<IrrReport> {
    if params.is_empty() {
        return Err(Error::Validation("no posterior draws".into()));
    }
    let arity = params[0].arity();
    let mut per_profile = Vec::with_capacity(profiles.len());
    for profile in profiles {
        let values = params
            .iter()
            .map(|p| irr_profile(p, profile))
            .collect::<Result<Vec<_>>>()?;
        per_profile.push((profile.clone(), summarize_draws(values)?));
    }
    let mut delta = Vec::with_capacity(arity);
    for k in 0..arity {
        let values = params
            .iter()
            .map(|p| delta_irr(p, k))
            .collect::<Result<Vec<_>>>()?;
        delta.push(summarize_draws(values)?);
    }
    Ok(IrrReport { per_profile, delta })
}

/// Frequentist reliability summaries: plug-in point estimates with
/// parametric-bootstrap percentile intervals (resample the fitted model,
/// refit, recompute). Intervals are widened to contain the plug-in point.
/// Non-converged refits are skipped; more than half failing is an error.
pub fn irr_summaries_bootstrap(
    data: &RatingsTable,
    fit: &FrequentistFit,
    profiles: &[CovariateProfile<f64>],
    resamples: usize,
    seed: u64,
) -> Result<IrrReport> {
    if resamples < 2 {
        return Err(Error::Validation(
            "need at least two bootstrap resamples".into(),
        ));
    }
    let restricted = fit.restricted_log_likelihood.is_some();
    let refits: Vec<ParameterVector<f64>> = (0..resamples)
        .into_par_iter()
        .filter_map(|r| {
            let table = resample_table(data, &fit.estimates, rng::derive(seed, &[r as u64])).ok()?;
            let refit = if restricted {
                reml_fit(&table, &fit.spec)
            } else {
                ml_fit(&table, &fit.spec)
            };
            match refit {
                Ok(f) if f.converged => Some(f.estimates),
                _ => None,
            }
        })
        .collect();
    if refits.len() < resamples.div_ceil(2) {
        return Err(Error::Degenerate(format!(
            "only {} of {} bootstrap refits converged",
            refits.len(),
            resamples
        )));
    }
    let interval_around = |point: f64, values: Vec<f64>| -> Result<IntervalSummary> {
        let s = summarize_draws(values)?;
        Ok(IntervalSummary {
            point,
            lower: s.lower.min(point),
            upper: s.upper.max(point),
        })
    };
    let mut per_profile = Vec::with_capacity(profiles.len());
    for profile in profiles {
        let point = irr_profile(&fit.estimates, profile)?;
        let values = refits
            .iter()
            .map(|p| irr_profile(p, profile))
            .collect::<Result<Vec<_>>>()?;
        per_profile.push((profile.clone(), interval_around(point, values)?));
    }
    let mut delta = Vec::with_capacity(fit.spec.arity());
    for k in 0..fit.spec.arity() {
        let point = delta_irr(&fit.estimates, k)?;
        let values = refits
            .iter()
            .map(|p| delta_irr(p, k))
            .collect::<Result<Vec<_>>>()?;
        delta.push(interval_around(point, values)?);
    }
    Ok(IrrReport { per_profile, delta })
}

/// One profile's model-averaged marginal summaries.
#[derive(Debug, Clone)]
pub struct MarginalMeansRow {
    pub profile: CovariateProfile<f64>,
    pub mean: IntervalSummary,
    pub sd_structural: IntervalSummary,
    pub sd_residual: IntervalSummary,
    pub irr: IntervalSummary,
}

/// Per-profile marginal mean, SDs, and reliability with 95% intervals,
/// evaluated draw by draw. Rows follow the order of `profiles`.
pub fn marginal_means(
    params: &[ParameterVector<f64>],
    profiles: &[CovariateProfile<f64>],
) -> Result<Vec<MarginalMeansRow>> {
    if params.is_empty() {
        return Err(Error::Validation("no posterior draws".into()));
    }
    profiles
        .iter()
        .map(|profile| {
            let mut mean = Vec::with_capacity(params.len());
            let mut sd_g = Vec::with_capacity(params.len());
            let mut sd_e = Vec::with_capacity(params.len());
            let mut irr = Vec::with_capacity(params.len());
            for p in params {
                mean.push(linked_mean(p.alpha_mu, &p.beta_mu, profile));
                sd_g.push(linked_sd(p.alpha_gamma, &p.beta_gamma, profile)?);
                sd_e.push(linked_sd(p.alpha_epsilon, &p.beta_epsilon, profile)?);
                irr.push(irr_profile(p, profile)?);
            }
            Ok(MarginalMeansRow {
                profile: profile.clone(),
                mean: summarize_draws(mean)?,
                sd_structural: summarize_draws(sd_g)?,
                sd_residual: summarize_draws(sd_e)?,
                irr: summarize_draws(irr)?,
            })
        })
        .collect()
}

/// Everything the model-averaged analysis produces.
#[derive(Debug, Clone)]
pub struct AveragedResult {
    pub weights: WeightVector,
    pub mixed: MixedDraws,
    pub irr: IrrReport,
    pub marginal_means: Vec<MarginalMeansRow>,
    pub inclusion: Vec<InclusionResult>,
}

/// Mix the per-model posteriors under `weights` and summarize reliability
/// and marginal means over the full profile grid.
pub fn average_posterior(
    fits: &[PosteriorDraws],
    weights: &WeightVector,
    inclusion: Vec<InclusionResult>,
    total: usize,
    seed: u64,
) -> Result<AveragedResult> {
    let mixed = bma_mix(fits, weights, total, seed)?;
    let profiles = CovariateProfile::<f64>::all(fits[0].arity());
    let irr = irr_summaries_bayes(&mixed.params, &profiles)?;
    let mm = marginal_means(&mixed.params, &profiles)?;
    Ok(AveragedResult {
        weights: weights.clone(),
        mixed,
        irr,
        marginal_means: mm,
        inclusion,
    })
}

/// Direction of the stepwise search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepDirection {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy)]
pub struct StepwiseConfig {
    pub direction: StepDirection,
    /// Likelihood-ratio significance threshold: a term is adopted when
    /// `p <= alpha` and dropped when `p > alpha`.
    pub alpha: f64,
    /// Halve variance-test p-values for the 50:50 boundary chi-square
    /// mixture. Off by default, matching common stepwise tooling; the
    /// plain chi-square(1) reference is conservative for additions.
    pub boundary_mixture: bool,
}

impl StepwiseConfig {
    pub fn forward(alpha: f64) -> Self {
        Self {
            direction: StepDirection::Forward,
            alpha,
            boundary_mixture: false,
        }
    }

    pub fn backward(alpha: f64) -> Self {
        Self {
            direction: StepDirection::Backward,
            alpha,
            boundary_mixture: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepwiseOutcome {
    pub spec: ModelSpec,
    /// Candidate fits discarded because their optimizer did not converge.
    pub skipped_candidates: usize,
}

fn lrt_pvalue(lrt: f64, boundary_mixture: bool) -> f64 {
    let chi = ChiSquared::new(1.0).expect("one degree of freedom");
    let p = chi.sf(lrt.max(0.0));
    if boundary_mixture {
        0.5 * p
    } else {
        p
    }
}

/// Stepwise model selection by likelihood-ratio tests against
/// chi-square(1).
///
/// Forward: starting from the no-difference model, each mean difference
/// is tested in covariate order with REML-based LRTs and kept when
/// significant; then structural/residual variance differences are added
/// greedily (smallest p first) with ML-based LRTs until none passes.
/// Backward runs the mirror image from the full model: greedy removal of
/// the least significant variance difference, then of mean differences.
pub fn stepwise(data: &RatingsTable, config: &StepwiseConfig) -> Result<StepwiseOutcome> {
    if !(config.alpha > 0.0) || !(config.alpha <= 1.0) {
        return Err(Error::Validation(
            "alpha must lie in (0, 1]".into(),
        ));
    }
    let mut skipped = 0usize;
    let spec = match config.direction {
        StepDirection::Forward => stepwise_forward(data, config, &mut skipped)?,
        StepDirection::Backward => stepwise_backward(data, config, &mut skipped)?,
    };
    Ok(StepwiseOutcome {
        spec,
        skipped_candidates: skipped,
    })
}

fn variance_terms(arity: usize) -> Vec<(Component, usize)> {
    let mut terms = Vec::with_capacity(2 * arity);
    for comp in [Component::Structural, Component::Residual] {
        for k in 0..arity {
            terms.push((comp, k));
        }
    }
    terms
}

fn stepwise_forward(
    data: &RatingsTable,
    config: &StepwiseConfig,
    skipped: &mut usize,
) -> Result<ModelSpec> {
    let arity = data.schema().arity();
    let mut spec = ModelSpec::null(arity);

    // Stage 1: mean differences, REML.
    let mut base = reml_fit(data, &spec)?;
    for k in 0..arity {
        let cand_spec = spec.with(Component::Mean, k, true);
        match reml_fit(data, &cand_spec) {
            Ok(cand) if cand.converged => {
                let lrt = 2.0
                    * (cand.restricted_log_likelihood.expect("REML fit")
                        - base.restricted_log_likelihood.expect("REML fit"));
                if lrt_pvalue(lrt, false) <= config.alpha {
                    spec = cand_spec;
                    base = cand;
                }
            }
            _ => *skipped += 1,
        }
    }

    // Stage 2: variance differences, ML, greedy.
    let mut base = ml_fit(data, &spec)?;
    loop {
        let mut best: Option<(f64, ModelSpec, FrequentistFit)> = None;
        for (comp, k) in variance_terms(arity) {
            if spec.includes(comp, k) {
                continue;
            }
            let cand_spec = spec.with(comp, k, true);
            match ml_fit(data, &cand_spec) {
                Ok(cand) if cand.converged => {
                    let lrt = 2.0 * (cand.log_likelihood - base.log_likelihood);
                    let p = lrt_pvalue(lrt, config.boundary_mixture);
                    if best.as_ref().map_or(true, |b| p < b.0) {
                        best = Some((p, cand_spec, cand));
                    }
                }
                _ => *skipped += 1,
            }
        }
        match best {
            Some((p, cand_spec, cand)) if p <= config.alpha => {
                spec = cand_spec;
                base = cand;
            }
            _ => break,
        }
    }
    Ok(spec)
}

fn stepwise_backward(
    data: &RatingsTable,
    config: &StepwiseConfig,
    skipped: &mut usize,
) -> Result<ModelSpec> {
    let arity = data.schema().arity();
    let mut spec = ModelSpec::full(arity);

    // Stage 1: drop variance differences, ML, least significant first.
    let mut base = ml_fit(data, &spec)?;
    loop {
        let mut weakest: Option<(f64, ModelSpec, FrequentistFit)> = None;
        for (comp, k) in variance_terms(arity) {
            if !spec.includes(comp, k) {
                continue;
            }
            let cand_spec = spec.with(comp, k, false);
            match ml_fit(data, &cand_spec) {
                Ok(cand) if cand.converged => {
                    let lrt = 2.0 * (base.log_likelihood - cand.log_likelihood);
                    let p = lrt_pvalue(lrt, config.boundary_mixture);
                    if weakest.as_ref().map_or(true, |b| p > b.0) {
                        weakest = Some((p, cand_spec, cand));
                    }
                }
                _ => *skipped += 1,
            }
        }
        match weakest {
            Some((p, cand_spec, cand)) if p > config.alpha => {
                spec = cand_spec;
                base = cand;
            }
            _ => break,
        }
    }

    // Stage 2: drop mean differences, REML.
    let mut base = reml_fit(data, &spec)?;
    loop {
        let mut weakest: Option<(f64, ModelSpec, FrequentistFit)> = None;
        for k in 0..arity {
            if !spec.includes(Component::Mean, k) {
                continue;
            }
            let cand_spec = spec.with(Component::Mean, k, false);
            match reml_fit(data, &cand_spec) {
                Ok(cand) if cand.converged => {
                    let lrt = 2.0
                        * (base.restricted_log_likelihood.expect("REML fit")
                            - cand.restricted_log_likelihood.expect("REML fit"));
                    let p = lrt_pvalue(lrt, false);
                    if weakest.as_ref().map_or(true, |b| p > b.0) {
                        weakest = Some((p, cand_spec, cand));
                    }
                }
                _ => *skipped += 1,
            }
        }
        match weakest {
            Some((p, cand_spec, cand)) if p > config.alpha => {
                spec = cand_spec;
                base = cand;
            }
            _ => break,
        }
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{scenario, simulate_dataset};
    use crate::model::{irr, CovariateSchema, PriorConfig};
    use crate::sampler::{sample_posterior, Diagnostics, SamplerConfig};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn ic_weight_arithmetic() {
        let w = ic_weights(&[0.0, 2.0], WeightMethod::Aic).unwrap();
        w.validate().unwrap();
        assert_abs_diff_eq!(w.weights[0], 0.7311, epsilon = 1e-4);
        assert_abs_diff_eq!(w.weights[1], 0.2689, epsilon = 1e-4);

        let uniform = ic_weights(&[5.0, 5.0, 5.0], WeightMethod::Bic).unwrap();
        for w in &uniform.weights {
            assert_abs_diff_eq!(*w, 1.0 / 3.0, epsilon = 1e-12);
        }

        let shifted = ic_weights(&[100.0, 102.0], WeightMethod::Aic).unwrap();
        assert_abs_diff_eq!(shifted.weights[0], w.weights[0], epsilon = 1e-12);

        assert!(ic_weights(&[f64::NAN, 0.0], WeightMethod::Aic).is_err());
        assert!(ic_weights(&[0.0, 1.0], WeightMethod::Stacking).is_err());
    }

    #[test]
    fn pseudo_bma_arithmetic() {
        let w = pseudo_bma_weights(&[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(w.weights[0], 0.5, epsilon = 1e-12);

        let w = pseudo_bma_weights(&[3f64.ln(), 0.0]).unwrap();
        assert_abs_diff_eq!(w.weights[0], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(w.weights[1], 0.25, epsilon = 1e-12);

        let shifted = pseudo_bma_weights(&[3f64.ln() - 40.0, -40.0]).unwrap();
        assert_abs_diff_eq!(shifted.weights[0], 0.75, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn criterion_weights_live_on_the_simplex(
            values in proptest::collection::vec(-50.0f64..50.0, 1..8),
            shift in -30.0f64..30.0,
        ) {
            let w = ic_weights(&values, WeightMethod::Aic).unwrap();
            w.validate().unwrap();
            let shifted_vals: Vec<f64> = values.iter().map(|v| v + shift).collect();
            let ws = ic_weights(&shifted_vals, WeightMethod::Aic).unwrap();
            for (a, b) in w.weights.iter().zip(&ws.weights) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            let p = pseudo_bma_weights(&values).unwrap();
            p.validate().unwrap();
        }
    }

    #[test]
    fn waic_constant_matrix_has_zero_penalty() {
        let c = -1.37;
        let pointwise = vec![vec![c; 6]; 40];
        assert_abs_diff_eq!(waic(&pointwise).unwrap(), 6.0 * c, epsilon = 1e-12);
        assert!(waic(&pointwise[..1]).is_err());
    }

    #[test]
    fn waic_is_additive_over_columns() {
        let mut rng = rng::stream(3, 0);
        let base: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..4).map(|_| -1.0 + 0.3 * rng::standard_normal(&mut rng)).collect())
            .collect();
        let contributions = waic_pointwise(&base).unwrap();
        let duplicated: Vec<Vec<f64>> = base
            .iter()
            .map(|row| {
                let mut r = row.clone();
                r.push(row[2]);
                r
            })
            .collect();
        assert_abs_diff_eq!(
            waic(&duplicated).unwrap(),
            waic(&base).unwrap() + contributions[2],
            epsilon = 1e-10
        );
    }

    /// Conjugate normal-location toy: data iid N(mu, v) with known v and
    /// prior mu ~ N(0, 1). Every predictive quantity is closed-form.
    struct ConjugateToy {
        y: Vec<f64>,
        v: f64,
        post_mean: f64,
        post_var: f64,
    }

    impl ConjugateToy {
        fn new(n: usize, seed: u64) -> Self {
            let mut rng = rng::stream(seed, 0);
            let v: f64 = 0.64;
            let y: Vec<f64> = (0..n)
                .map(|_| 0.3 + v.sqrt() * rng::standard_normal(&mut rng))
                .collect();
            let precision = 1.0 + n as f64 / v;
            let post_var = 1.0 / precision;
            let post_mean = post_var * y.iter().sum::<f64>() / v;
            Self {
                y,
                v,
                post_mean,
                post_var,
            }
        }

        fn draw_matrix(&self, s: usize, seed: u64) -> Vec<Vec<f64>> {
            let mut rng = rng::stream(seed, 1);
            (0..s)
                .map(|_| {
                    let mu = self.post_mean + self.post_var.sqrt() * rng::standard_normal(&mut rng);
                    self.y
                        .iter()
                        .map(|y| {
                            -0.5 * (2.0 * std::f64::consts::PI * self.v).ln()
                                - 0.5 * (y - mu) * (y - mu) / self.v
                        })
                        .collect()
                })
                .collect()
        }

        fn lpd(&self, y: f64, mean: f64, var: f64) -> f64 {
            let total = self.v + var;
            -0.5 * (2.0 * std::f64::consts::PI * total).ln() - 0.5 * (y - mean) * (y - mean) / total
        }

        fn analytic_waic(&self) -> f64 {
            self.y
                .iter()
                .map(|y| {
                    let a = y - self.post_mean;
                    let t2 = self.post_var;
                    self.lpd(*y, self.post_mean, t2) - (a * a * t2 + t2 * t2 / 2.0) / (self.v * self.v)
                })
                .sum()
        }

        fn analytic_exact_loo(&self) -> f64 {
            let n = self.y.len() as f64;
            let sum: f64 = self.y.iter().sum();
            self.y
                .iter()
                .map(|y| {
                    let var_i = 1.0 / (1.0 + (n - 1.0) / self.v);
                    let mean_i = var_i * (sum - y) / self.v;
                    self.lpd(*y, mean_i, var_i)
                })
                .sum()
        }
    }

    /// Monte Carlo SE via independent blocks of draws.
    fn block_se(pointwise: &[Vec<f64>], blocks: usize, f: impl Fn(&[Vec<f64>]) -> f64) -> f64 {
        let size = pointwise.len() / blocks;
        let values: Vec<f64> = (0..blocks)
            .map(|b| f(&pointwise[b * size..(b + 1) * size]))
            .collect();
        let mean = values.iter().sum::<f64>() / blocks as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (blocks as f64 - 1.0);
        (var / blocks as f64).sqrt()
    }

    #[test]
    fn waic_matches_analytic_elpd() {
        let toy = ConjugateToy::new(20, 11);
        let pointwise = toy.draw_matrix(50_000, 12);
        let est = waic(&pointwise).unwrap();
        let se = block_se(&pointwise, 10, |rows| waic(rows).unwrap());
        assert_abs_diff_eq!(est, toy.analytic_waic(), epsilon = 3.0 * se + 0.02);
    }

    #[test]
    fn loo_matches_exact_conjugate_loo() {
        let toy = ConjugateToy::new(20, 21);
        let pointwise = toy.draw_matrix(50_000, 22);
        let est = loo(&pointwise).unwrap();
        assert_eq!(est.flagged_points, 0);
        let se = block_se(&pointwise, 10, |rows| loo(rows).unwrap().elpd);
        assert_abs_diff_eq!(est.elpd, toy.analytic_exact_loo(), epsilon = 3.0 * se + 0.02);
    }

    #[test]
    fn loo_equals_waic_for_draw_independent_model() {
        let row: Vec<f64> = (0..5).map(|i| -0.8 - 0.1 * i as f64).collect();
        let pointwise = vec![row.clone(); 150];
        let est = loo(&pointwise).unwrap();
        let joint: f64 = row.iter().sum();
        assert_abs_diff_eq!(est.elpd, joint, epsilon = 1e-10);
        assert_abs_diff_eq!(est.elpd, waic(&pointwise).unwrap(), epsilon = 1e-10);
        assert_eq!(est.flagged_points, 0);
        assert!(loo(&pointwise[..99]).is_err());
    }

    #[test]
    fn loo_flags_degenerate_weights_and_falls_back() {
        // One rating is catastrophically unlikely under one draw, so that
        // draw holds essentially all the inverse-density weight.
        let mut pointwise = vec![vec![-1.0, -1.1]; 120];
        pointwise[7][0] = -600.0;
        let est = loo(&pointwise).unwrap();
        assert_eq!(est.flagged_points, 1);
        let fallback = waic_pointwise(&pointwise).unwrap();
        assert_abs_diff_eq!(est.pointwise[0], fallback[0], epsilon = 1e-12);
    }

    #[test]
    fn loo_no_worse_than_waic_penalty_on_model_fits() {
        let configs = [("2", 20, 3, 41u64), ("1", 15, 5, 42u64)];
        for (label, i, j, seed) in configs {
            let data = simulate_dataset(&scenario(label).unwrap().with_design(i, j, seed)).unwrap();
            let spec = ModelSpec::null(1).with(Component::Residual, 0, true);
            let cfg = SamplerConfig {
                chains: 4,
                warmup: 500,
                draws_per_chain: 600,
                seed,
                ..SamplerConfig::default()
            };
            let draws = sample_posterior(&data, &spec, &PriorConfig::default(), &cfg).unwrap();
            let pointwise = pointwise_matrix(&draws, &data).unwrap();
            assert_eq!(pointwise.len(), draws.n_draws());
            assert_eq!(pointwise[0].len(), data.n_ratings());
            let crit = predictive_criteria(&pointwise).unwrap();
            let diffs: Vec<f64> = crit
                .loo_pointwise
                .iter()
                .zip(&crit.waic_pointwise)
                .map(|(l, w)| l - w)
                .collect();
            let n = diffs.len() as f64;
            let mean = diffs.iter().sum::<f64>() / n;
            let sd = (diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0))
                .sqrt();
            let se = sd * n.sqrt();
            assert!(
                crit.loo <= crit.waic + 3.0 * se + 1e-6,
                "scenario {label}: loo {} vs waic {} (se {se})",
                crit.loo,
                crit.waic
            );
        }
    }

    #[test]
    fn stacking_uniform_for_identical_models() {
        let lp: Vec<f64> = (0..30).map(|i| -1.0 - 0.01 * i as f64).collect();
        let w = stacking_weights(&[lp.clone(), lp.clone(), lp]).unwrap();
        w.validate().unwrap();
        assert!(!w.flagged);
        for weight in &w.weights {
            assert_abs_diff_eq!(*weight, 1.0 / 3.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn stacking_finds_a_dominant_model() {
        let good = vec![-0.5; 40];
        let bad = vec![-5.5; 40];
        let w = stacking_weights(&[bad, good]).unwrap();
        assert!(w.weights[1] >= 0.99, "dominant weight {}", w.weights[1]);
    }

    #[test]
    fn stacking_beats_every_vertex() {
        // Three models, each best on a different stretch of points, so
        // the optimum is interior.
        let mut rng = rng::stream(17, 0);
        let n = 60;
        let mut log_pred = vec![Vec::new(); 3];
        for i in 0..n {
            for (m, lp) in log_pred.iter_mut().enumerate() {
                let center = (m * n / 3 + n / 6) as f64;
                let dist = (i as f64 - center).abs() / n as f64;
                lp.push(-1.0 - 3.0 * dist + 0.05 * rng::standard_normal(&mut rng));
            }
        }
        let w = stacking_weights(&log_pred).unwrap();
        w.validate().unwrap();
        let opt = stacking_objective(&log_pred, &w.weights).unwrap();
        for m in 0..3 {
            let mut vertex = vec![0.0; 3];
            vertex[m] = 1.0;
            let v = stacking_objective(&log_pred, &vertex).unwrap();
            assert!(
                opt >= v - 1e-8,
                "vertex {m} scores {v}, optimum only {opt}"
            );
        }
    }

    fn synthetic_posterior(
        spec: &ModelSpec,
        rows: Vec<ParameterVector<f64>>,
        seed: u64,
    ) -> PosteriorDraws {
        let n = rows.len();
        PosteriorDraws {
            spec: spec.clone(),
            draws: rows.iter().map(ParameterVector::to_row).collect(),
            log_posterior: vec![0.0; n],
            diagnostics: Diagnostics {
                names: vec![],
                rhat: vec![],
                ess: vec![],
                acceptance: vec![],
                degenerate: vec![],
            },
            converged: true,
            chains: 1,
            draws_per_chain: n,
            seed,
        }
    }

    fn plain_params(sd_gamma: f64, sd_epsilon: f64) -> ParameterVector<f64> {
        ParameterVector::intercepts(0.0, sd_gamma, sd_epsilon, 0)
    }

    #[test]
    fn mix_with_unit_weight_uses_only_that_model() {
        let spec = ModelSpec::null(0);
        let a = synthetic_posterior(&spec, vec![plain_params(0.5, 0.5); 50], 1);
        let b = synthetic_posterior(&spec, vec![plain_params(2.0, 0.5); 50], 2);
        let weights = WeightVector {
            method: WeightMethod::Bma,
            weights: vec![1.0, 0.0],
            flagged: false,
        };
        let mixed = bma_mix(&[a, b], &weights, 500, 9).unwrap();
        assert_eq!(mixed.len(), 500);
        assert!(mixed.model_index.iter().all(|&m| m == 0));
        assert!(mixed.params.iter().all(|p| p.alpha_gamma == 0.5));
    }

    #[test]
    fn mix_label_frequencies_match_weights() {
        let spec = ModelSpec::null(0);
        let a = synthetic_posterior(&spec, vec![plain_params(0.5, 0.5); 10], 1);
        let b = synthetic_posterior(&spec, vec![plain_params(2.0, 0.5); 10], 2);
        let weights = WeightVector {
            method: WeightMethod::Bma,
            weights: vec![0.5, 0.5],
            flagged: false,
        };
        let total = 100_000usize;
        let mixed = bma_mix(&[a, b], &weights, total, 4).unwrap();
        let count0 = mixed.model_index.iter().filter(|&&m| m == 0).count() as f64;
        let se = (total as f64 * 0.25).sqrt();
        assert!(
            (count0 - total as f64 * 0.5).abs() <= 3.0 * se,
            "count {count0}"
        );
    }

    #[test]
    fn mix_preserves_weighted_means() {
        let spec = ModelSpec::null(0);
        // Two models with different reliability levels, two draws each.
        let a = synthetic_posterior(
            &spec,
            vec![plain_params(0.5, 0.5), plain_params(0.6, 0.5)],
            1,
        );
        let b = synthetic_posterior(
            &spec,
            vec![plain_params(1.5, 0.5), plain_params(1.6, 0.5)],
            2,
        );
        let profile = CovariateProfile::<f64>::from_signs(&[]);
        let model_mean = |fit: &PosteriorDraws| -> f64 {
            (0..fit.n_draws())
                .map(|r| irr_profile(&fit.params_at(r), &profile).unwrap())
                .sum::<f64>()
                / fit.n_draws() as f64
        };
        let expected = 0.3 * model_mean(&a) + 0.7 * model_mean(&b);
        let weights = WeightVector {
            method: WeightMethod::Bma,
            weights: vec![0.3, 0.7],
            flagged: false,
        };
        let total = 200_000usize;
        let mixed = bma_mix(&[a, b], &weights, total, 77).unwrap();
        let values: Vec<f64> = mixed
            .params
            .iter()
            .map(|p| irr_profile(p, &profile).unwrap())
            .collect();
        let mean = values.iter().sum::<f64>() / total as f64;
        let sd = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (total as f64 - 1.0))
            .sqrt();
        let se = sd / (total as f64).sqrt();
        assert_abs_diff_eq!(mean, expected, epsilon = 3.0 * se + 1e-4);
    }

    #[test]
    fn frequentist_average_combines_estimates() {
        let single = WeightVector {
            method: WeightMethod::Aic,
            weights: vec![1.0],
            flagged: false,
        };
        assert_abs_diff_eq!(frequentist_average(&[0.42], &single).unwrap(), 0.42);
        let half = WeightVector {
            method: WeightMethod::Aic,
            weights: vec![0.5, 0.5],
            flagged: false,
        };
        assert_abs_diff_eq!(
            frequentist_average(&[0.3, 0.5], &half).unwrap(),
            0.4,
            epsilon = 1e-12
        );
        assert!(frequentist_average(&[0.3], &half).is_err());
    }

    #[test]
    fn bic_concentrates_harder_than_aic_on_the_simple_model() {
        // Near-null two-group data: the parsimony-heavier criterion puts
        // more weight on the no-difference model.
        let data = simulate_dataset(&scenario("1").unwrap().with_design(36, 3, 5)).unwrap();
        let schema = CovariateSchema::new(vec!["group"]).unwrap();
        let models = crate::model::enumerate_models(&schema);
        let fits: Vec<FrequentistFit> = models.iter().map(|m| ml_fit(&data, m).unwrap()).collect();
        let aic = ic_weights(
            &fits.iter().map(|f| f.aic).collect::<Vec<_>>(),
            WeightMethod::Aic,
        )
        .unwrap();
        let bic = ic_weights(
            &fits.iter().map(|f| f.bic).collect::<Vec<_>>(),
            WeightMethod::Bic,
        )
        .unwrap();
        assert!(
            bic.weights[0] > aic.weights[0],
            "BIC {} vs AIC {}",
            bic.weights[0],
            aic.weights[0]
        );
    }

    #[test]
    fn selection_prefers_parsimony_on_ties() {
        let schema = CovariateSchema::new(vec!["g"]).unwrap();
        let models = crate::model::enumerate_models(&schema);
        // Model 0 is the null model with the fewest parameters.
        let values = vec![10.0; models.len()];
        assert_eq!(select_minimum(&values, &models), 0);
        let mut values = vec![10.0; models.len()];
        values[3] = 4.0;
        values[5] = 4.0;
        // Equal values: 3 and 5 both have two variance terms? Model 4
        // (index 3) has structural+residual, model 6 (index 5) has
        // mean+structural; both carry 5 free parameters, so the earlier
        // index wins.
        assert_eq!(
            models[3].free_parameters(),
            models[5].free_parameters()
        );
        assert_eq!(select_minimum(&values, &models), 3);
        let mut values = vec![10.0; models.len()];
        values[1] = 4.0;
        values[7] = 4.0;
        // Index 1 (one variance term) beats index 7 (full model).
        assert_eq!(select_minimum(&values, &models), 1);
    }

    #[test]
    fn degenerate_truth_draws_reproduce_scenario_reliabilities() {
        // Scenario 2 truth: equal structural SD 0.67, residual SDs 0.67
        // and 0.82, so the groups sit at reliability 0.50 and 0.40.
        let s = scenario("2").unwrap();
        let mut params = ParameterVector::intercepts(
            0.0,
            (s.sigma_gamma[0] * s.sigma_gamma[1]).sqrt(),
            (s.sigma_epsilon[0] * s.sigma_epsilon[1]).sqrt(),
            1,
        );
        params.beta_epsilon[0] = (s.sigma_epsilon[1] / s.sigma_epsilon[0]).ln();
        let draws = vec![params; 40];
        let profiles = CovariateProfile::<f64>::all(1);
        let report = irr_summaries_bayes(&draws, &profiles).unwrap();
        let (g1, g2) = (&report.per_profile[0].1, &report.per_profile[1].1);
        assert!(report.per_profile[0].0.values()[0] < 0.0);
        assert_abs_diff_eq!(g1.point, 0.50, epsilon = 0.005);
        assert_abs_diff_eq!(g2.point, 0.40, epsilon = 0.005);
        assert_abs_diff_eq!(report.delta[0].point, 0.10, epsilon = 0.005);
        // Identical draws collapse every interval onto its point.
        assert_abs_diff_eq!(g1.lower, g1.point, epsilon = 1e-14);
        assert_abs_diff_eq!(g1.upper, g1.point, epsilon = 1e-14);
        assert_abs_diff_eq!(report.delta[0].lower, report.delta[0].point, epsilon = 1e-14);
    }

    #[test]
    fn no_variance_difference_means_exactly_zero_delta() {
        // Varying draws, but every beta is zero: the reliability gap is
        // identically zero with a degenerate interval.
        let mut rng = rng::stream(6, 0);
        let draws: Vec<ParameterVector<f64>> = (0..200)
            .map(|_| {
                ParameterVector::intercepts(
                    0.1 * rng::standard_normal(&mut rng),
                    0.6 + 0.05 * rng::unit_open(&mut rng),
                    0.7 + 0.05 * rng::unit_open(&mut rng),
                    1,
                )
            })
            .collect();
        let report = irr_summaries_bayes(&draws, &CovariateProfile::<f64>::all(1)).unwrap();
        assert_eq!(report.delta[0].point, 0.0);
        assert_eq!(report.delta[0].lower, 0.0);
        assert_eq!(report.delta[0].upper, 0.0);
        let (g1, g2) = (&report.per_profile[0].1, &report.per_profile[1].1);
        assert_abs_diff_eq!(g1.point, g2.point, epsilon = 1e-12);
        assert!(g1.lower < g1.point && g1.point < g1.upper);
    }

    #[test]
    fn bootstrap_intervals_bracket_the_plugin_point() {
        let data = simulate_dataset(&scenario("2").unwrap().with_design(30, 3, 8)).unwrap();
        let spec = ModelSpec::null(1);
        let fit = ml_fit(&data, &spec).unwrap();
        let report =
            irr_summaries_bootstrap(&data, &fit, &CovariateProfile::<f64>::all(1), 60, 19).unwrap();
        for (_, s) in &report.per_profile {
            assert!(s.lower <= s.point && s.point <= s.upper);
            assert!(s.lower < s.upper, "interval should have width");
        }
        // The no-difference model forces a degenerate delta interval.
        assert_eq!(report.delta[0].point, 0.0);
        assert_eq!(report.delta[0].lower, 0.0);
        assert_eq!(report.delta[0].upper, 0.0);
    }

    #[test]
    fn bootstrap_interval_coverage_is_calibrated() {
        // Scenario 1 has no group differences; fit the no-difference
        // model and check that bootstrap intervals catch the true
        // reliability at close to their nominal rate.
        let s = scenario("1").unwrap();
        let truth = irr(s.sigma_gamma[0], s.sigma_epsilon[0]).unwrap();
        let reps = 200;
        let hits: usize = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let config = s.clone().with_design(50, 3, 1000 + rep as u64);
                let data = simulate_dataset(&config).unwrap();
                let fit = ml_fit(&data, &ModelSpec::null(1)).unwrap();
                let report = irr_summaries_bootstrap(
                    &data,
                    &fit,
                    &CovariateProfile::<f64>::all(1),
                    200,
                    rep as u64,
                )
                .unwrap();
                let s = &report.per_profile[0].1;
                usize::from(s.lower <= truth && truth <= s.upper)
            })
            .sum();
        let coverage = hits as f64 / reps as f64;
        assert!(coverage >= 0.85, "coverage {coverage}");
    }

    #[test]
    fn marginal_means_rows_follow_profiles() {
        let mut rng = rng::stream(14, 0);
        let draws: Vec<ParameterVector<f64>> = (0..150)
            .map(|_| {
                ParameterVector::intercepts(
                    0.3 + 0.05 * rng::standard_normal(&mut rng),
                    0.6 + 0.02 * rng::unit_open(&mut rng),
                    0.8 + 0.02 * rng::unit_open(&mut rng),
                    2,
                )
            })
            .collect();
        let profiles = CovariateProfile::<f64>::all(2);
        let rows = marginal_means(&draws, &profiles).unwrap();
        assert_eq!(rows.len(), 4);
        for row in &rows {
            assert!(row.sd_structural.point > 0.0);
            assert!(row.sd_residual.point > 0.0);
            assert!(row.irr.point > 0.0 && row.irr.point < 1.0);
            assert!(row.mean.lower <= row.mean.point && row.mean.point <= row.mean.upper);
            // All betas are zero, so every profile shares the first row.
            assert_abs_diff_eq!(row.mean.point, rows[0].mean.point, epsilon = 1e-12);
            assert_abs_diff_eq!(row.irr.point, rows[0].irr.point, epsilon = 1e-12);
        }
    }

    #[test]
    fn averaged_result_assembles_all_pieces() {
        let spec = ModelSpec::null(1);
        let spec_res = ModelSpec::null(1).with(Component::Residual, 0, true);
        let mut with_effect = ParameterVector::intercepts(0.0, 0.6, 0.7, 1);
        with_effect.beta_epsilon[0] = 0.2;
        let a = synthetic_posterior(
            &spec,
            vec![ParameterVector::intercepts(0.0, 0.6, 0.7, 1); 40],
            1,
        );
        let b = synthetic_posterior(&spec_res, vec![with_effect; 40], 2);
        let weights = WeightVector {
            method: WeightMethod::Bma,
            weights: vec![0.6, 0.4],
            flagged: false,
        };
        let out = average_posterior(&[a, b], &weights, vec![], 5_000, 3).unwrap();
        assert_eq!(out.mixed.len(), 5_000);
        assert_eq!(out.irr.per_profile.len(), 2);
        assert_eq!(out.marginal_means.len(), 2);
        let share0 =
            out.mixed.model_index.iter().filter(|&&m| m == 0).count() as f64 / 5_000.0;
        let se = (0.6 * 0.4 / 5_000.0f64).sqrt();
        assert!((share0 - 0.6).abs() <= 3.0 * se, "share {share0}");
    }

    #[test]
    fn stepwise_alpha_extremes() {
        let data = simulate_dataset(&scenario("1").unwrap().with_design(25, 3, 31)).unwrap();
        let full = stepwise(&data, &StepwiseConfig::forward(1.0)).unwrap();
        assert_eq!(full.spec, ModelSpec::full(1));
        let backward_full = stepwise(&data, &StepwiseConfig::backward(1.0)).unwrap();
        assert_eq!(backward_full.spec, ModelSpec::full(1));
        let null = stepwise(&data, &StepwiseConfig::forward(1e-12)).unwrap();
        assert_eq!(null.spec, ModelSpec::null(1));
        assert!(stepwise(&data, &StepwiseConfig::forward(0.0)).is_err());
    }

    #[test]
    fn backward_stepwise_mostly_finds_the_null_truth() {
        // Scenario 1 generates no differences; at alpha = 0.05 the search
        // should land on the no-difference model most of the time.
        let hits: usize = (0..100u64)
            .into_par_iter()
            .map(|seed| {
                let config = scenario("1").unwrap().with_design(100, 3, 2000 + seed);
                let data = simulate_dataset(&config).unwrap();
                let out = stepwise(&data, &StepwiseConfig::backward(0.05)).unwrap();
                usize::from(out.spec == ModelSpec::null(1))
            })
            .sum();
        assert!(hits >= 60, "null model recovered {hits}/100 times");
    }

    #[test]
    fn forward_and_backward_agree_on_clear_truths() {
        for (label, expected_desc) in [("1", "null"), ("8.1", "full")] {
            let agreements: usize = (0..100u64)
                .into_par_iter()
                .map(|seed| {
                    let config = scenario(label).unwrap().with_design(250, 3, 3000 + seed);
                    let data = simulate_dataset(&config).unwrap();
                    let fwd = stepwise(&data, &StepwiseConfig::forward(0.05)).unwrap();
                    let bwd = stepwise(&data, &StepwiseConfig::backward(0.05)).unwrap();
                    usize::from(fwd.spec == bwd.spec)
                })
                .sum();
            assert!(
                agreements >= 80,
                "{expected_desc} truth: directions agree {agreements}/100"
            );
        }
    }
}
