//! Marginal Gaussian likelihood and frequentist fitting.
//!
//! The ratee effects are integrated out analytically: the `J_i` ratings of
//! ratee `i` are jointly normal with mean `mu_i` and compound-symmetric
//! covariance `sd_eps_i^2 I + sd_gamma_i^2 11'`, whose determinant and
//! inverse have closed forms. Everything here therefore works on per-ratee
//! sufficient statistics `(J, sum y, sum y^2)` and never materializes a
//! covariance matrix.
//!
//! [`ml_fit`] and [`reml_fit`] profile the mean parameters out by
//! generalized least squares and run Nelder-Mead over the remaining
//! log-scale variance coordinates, so the search space has dimension
//! `2 + #free variance coefficients`.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;

use crate::data::RatingsTable;
use crate::error::{Error, Result};
use crate::model::{
    linked_mean, linked_sd, Component, CovariateProfile, ModelSpec, ParameterVector,
};
use crate::rng;

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_7;
/// Lower clamp on fitted standard deviations.
pub const SD_FLOOR: f64 = 1e-6;

fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -HALF_LN_TWO_PI - sd.ln() - 0.5 * z * z
}

/// Per-ratee sufficient statistics grouped by covariate profile.
///
/// Building this once and reusing it is what makes repeated likelihood
/// evaluations (optimizer and sampler inner loops) cheap.
#[derive(Debug, Clone)]
pub struct SuffStats {
    profiles: Vec<CovariateProfile<f64>>,
    /// Per profile, per ratee: (J, sum of ratings, sum of squared ratings).
    stats: Vec<Vec<(f64, f64, f64)>>,
    n_ratings: usize,
    n_ratees: usize,
}

impl SuffStats {
    pub fn from_table(data: &RatingsTable) -> Self {
        let part = data.partition();
        let mut stats = vec![Vec::new(); part.profiles.len()];
        for i in 0..data.n_ratees() {
            let rs = data.ratings(i);
            let sum: f64 = rs.iter().sum();
            let sumsq: f64 = rs.iter().map(|y| y * y).sum();
            stats[part.ratee_profile[i]].push((rs.len() as f64, sum, sumsq));
        }
        Self {
            profiles: part.profiles,
            stats,
            n_ratings: data.n_ratings(),
            n_ratees: data.n_ratees(),
        }
    }

    pub fn n_ratings(&self) -> usize {
        self.n_ratings
    }

    pub fn n_ratees(&self) -> usize {
        self.n_ratees
    }

    pub fn profiles(&self) -> &[CovariateProfile<f64>] {
        &self.profiles
    }

    /// Marginal log-likelihood at `params` (masked coefficients must
    /// already be zero; see [`marginal_loglik`] for the validated entry
    /// point).
    pub fn loglik(&self, params: &ParameterVector<f64>) -> Result<f64> {
        let mut ll = 0.0;
        for (profile, ratees) in self.profiles.iter().zip(&self.stats) {
            let mu = linked_mean(params.alpha_mu, &params.beta_mu, profile);
            let sd_g = linked_sd(params.alpha_gamma, &params.beta_gamma, profile)?;
            let sd_e = linked_sd(params.alpha_epsilon, &params.beta_epsilon, profile)?;
            let vg = sd_g * sd_g;
            let ve = sd_e * sd_e;
            for &(j, sum, sumsq) in ratees {
                let s = sum - j * mu;
                let q = sumsq - 2.0 * mu * sum + j * mu * mu;
                let denom = ve + j * vg;
                let logdet = (j - 1.0) * ve.ln() + denom.ln();
                let quad = q / ve - vg * s * s / (ve * denom);
                ll += -j * HALF_LN_TWO_PI - 0.5 * (logdet + quad);
            }
        }
        Ok(ll)
    }
}

/// Exact log-density of all ratings under `params`, with the ratee effects
/// integrated out.
pub fn marginal_loglik(
    data: &RatingsTable,
    spec: &ModelSpec,
    params: &ParameterVector<f64>,
) -> Result<f64> {
    check_arity(data, spec)?;
    params.validate(spec)?;
    SuffStats::from_table(data).loglik(params)
}

fn check_arity(data: &RatingsTable, spec: &ModelSpec) -> Result<()> {
    if spec.arity() != data.schema().arity() {
        return Err(Error::Validation(
            "model arity does not match the data schema".into(),
        ));
    }
    Ok(())
}

/// Ratee effects drawn from their exact conditional distribution.
#[derive(Debug, Clone)]
pub struct ConditionalEffects {
    /// One draw of `gamma_i` per ratee, in table order.
    pub gamma: Vec<f64>,
}

/// Draw each ratee effect from its normal conditional given data and
/// parameters: precision `1/sd_gamma^2 + J/sd_eps^2`, mean
/// `sum(y - mu)/sd_eps^2 / precision`.
pub fn draw_conditional_effects<R: RngCore>(
    data: &RatingsTable,
    spec: &ModelSpec,
    params: &ParameterVector<f64>,
    rng: &mut R,
) -> Result<ConditionalEffects> {
    check_arity(data, spec)?;
    params.validate(spec)?;
    let mut gamma = Vec::with_capacity(data.n_ratees());
    for i in 0..data.n_ratees() {
        let (mean, var) = conditional_moments(data, params, i)?;
        gamma.push(rng::normal(rng, mean, var.sqrt()));
    }
    Ok(ConditionalEffects { gamma })
}

fn conditional_moments(
    data: &RatingsTable,
    params: &ParameterVector<f64>,
    i: usize,
) -> Result<(f64, f64)> {
    let profile = data.profile(i);
    let mu = linked_mean(params.alpha_mu, &params.beta_mu, profile);
    let sd_g = linked_sd(params.alpha_gamma, &params.beta_gamma, profile)?;
    let sd_e = linked_sd(params.alpha_epsilon, &params.beta_epsilon, profile)?;
    let rs = data.ratings(i);
    let tau = 1.0 / (sd_g * sd_g) + rs.len() as f64 / (sd_e * sd_e);
    let mean = rs.iter().map(|y| y - mu).sum::<f64>() / (sd_e * sd_e) / tau;
    Ok((mean, 1.0 / tau))
}

/// Per-rating conditional log-densities given drawn ratee effects: entry
/// `(i, j)` is the normal log-density of `y_ij` at mean `mu_i + gamma_i`,
/// SD `sd_eps_i`. Entries come out flat in table order (ratee-major).
pub fn pointwise_loglik(
    data: &RatingsTable,
    spec: &ModelSpec,
    params: &ParameterVector<f64>,
    effects: &ConditionalEffects,
) -> Result<Vec<f64>> {
    check_arity(data, spec)?;
    params.validate(spec)?;
    if effects.gamma.len() != data.n_ratees() {
        return Err(Error::Validation(
            "one effect draw per ratee is required".into(),
        ));
    }
    let mut out = Vec::with_capacity(data.n_ratings());
    for i in 0..data.n_ratees() {
        let profile = data.profile(i);
        let mu = linked_mean(params.alpha_mu, &params.beta_mu, profile) + effects.gamma[i];
        let sd_e = linked_sd(params.alpha_epsilon, &params.beta_epsilon, profile)?;
        for &y in data.ratings(i) {
            out.push(normal_logpdf(y, mu, sd_e));
        }
    }
    Ok(out)
}

/// A maximum-likelihood or REML fit of one model.
#[derive(Debug, Clone)]
pub struct FrequentistFit {
    pub spec: ModelSpec,
    pub estimates: ParameterVector<f64>,
    /// Marginal log-likelihood at the estimates.
    pub log_likelihood: f64,
    /// REML objective at the estimates (profiled log-likelihood minus
    /// half the log-determinant of the GLS information), when the fit was
    /// restricted.
    pub restricted_log_likelihood: Option<f64>,
    /// Free parameter count: three intercepts plus free coefficients.
    pub k: usize,
    pub aic: f64,
    pub bic: f64,
    pub converged: bool,
    /// Some fitted standard deviation ended at the lower clamp,
    /// indicating a degenerate (no-variance) direction.
    pub boundary: bool,
}

#[derive(Clone, Copy, PartialEq)]
enum Criterion {
    Ml,
    Reml,
}

/// Maximum-likelihood fit of `spec` to `data`.
///
/// Information criteria use `aic = 2k - 2 log L` and
/// `bic = k ln(N) - 2 log L` with `N` the total number of ratings and
/// `k = 3 + #free coefficients` (the integrated ratee effects are not
/// counted).
pub fn ml_fit(data: &RatingsTable, spec: &ModelSpec) -> Result<FrequentistFit> {
    fit(data, spec, Criterion::Ml)
}

/// REML fit: variance parameters maximize the restricted likelihood and
/// the mean parameters are recovered by generalized least squares at the
/// optimum. On balanced one-way data this reproduces the ANOVA
/// method-of-moments variance components.
pub fn reml_fit(data: &RatingsTable, spec: &ModelSpec) -> Result<FrequentistFit> {
    fit(data, spec, Criterion::Reml)
}

/// Index bookkeeping between the optimizer's unconstrained coordinate
/// vector and the variance half of a [`ParameterVector`]. Coordinates are
/// `(ln alpha_gamma, free beta_gamma..., ln alpha_epsilon, free
/// beta_epsilon...)`.
struct VarianceMap {
    gamma_free: Vec<usize>,
    epsilon_free: Vec<usize>,
    arity: usize,
}

impl VarianceMap {
    fn new(spec: &ModelSpec) -> Self {
        let free = |mask: &[bool]| {
            mask.iter()
                .enumerate()
                .filter(|(_, &on)| on)
                .map(|(k, _)| k)
                .collect::<Vec<_>>()
        };
        Self {
            gamma_free: free(&spec.structural_mask),
            epsilon_free: free(&spec.residual_mask),
            arity: spec.arity(),
        }
    }

    fn dim(&self) -> usize {
        2 + self.gamma_free.len() + self.epsilon_free.len()
    }

    /// Expand coordinates into (alpha_gamma, beta_gamma, alpha_epsilon,
    /// beta_epsilon) on the natural scale.
    fn unpack(&self, z: &[f64]) -> (f64, Vec<f64>, f64, Vec<f64>) {
        let ng = self.gamma_free.len();
        let alpha_gamma = z[0].exp();
        let mut beta_gamma = vec![0.0; self.arity];
        for (slot, &k) in self.gamma_free.iter().enumerate() {
            beta_gamma[k] = z[1 + slot];
        }
        let alpha_epsilon = z[1 + ng].exp();
        let mut beta_epsilon = vec![0.0; self.arity];
        for (slot, &k) in self.epsilon_free.iter().enumerate() {
            beta_epsilon[k] = z[2 + ng + slot];
        }
        (alpha_gamma, beta_gamma, alpha_epsilon, beta_epsilon)
    }
}

/// Profile-level data layout used by the profiled objective.
struct Prepared {
    profiles: Vec<CovariateProfile<f64>>,
    stats: Vec<Vec<(f64, f64, f64)>>,
    /// Per profile, the mean design row (intercept then free covariates).
    design: Vec<Vec<f64>>,
    n_ratings: f64,
}

impl Prepared {
    fn new(data: &RatingsTable, spec: &ModelSpec) -> Self {
        let ss = SuffStats::from_table(data);
        let design = ss
            .profiles
            .iter()
            .map(|p| {
                let mut row = vec![1.0];
                for (k, &v) in p.values().iter().enumerate() {
                    if spec.includes(Component::Mean, k) {
                        row.push(v);
                    }
                }
                row
            })
            .collect();
        Self {
            design,
            n_ratings: ss.n_ratings as f64,
            profiles: ss.profiles,
            stats: ss.stats,
        }
    }

    fn mean_dim(&self) -> usize {
        self.design[0].len()
    }

    /// Profiled objective pieces at the given variance parameters: GLS
    /// mean solution, profiled log-likelihood, and the log-determinant of
    /// the GLS information matrix.
    fn profiled(
        &self,
        alpha_gamma: f64,
        beta_gamma: &[f64],
        alpha_epsilon: f64,
        beta_epsilon: &[f64],
    ) -> Option<(DVector<f64>, f64, f64)> {
        let d = self.mean_dim();
        let mut info = DMatrix::zeros(d, d);
        let mut rhs = DVector::zeros(d);
        let mut per_profile = Vec::with_capacity(self.profiles.len());
        for (p, profile) in self.profiles.iter().enumerate() {
            let sd_g = (alpha_gamma * dot(beta_gamma, profile).exp()).max(SD_FLOOR);
            let sd_e = (alpha_epsilon * dot(beta_epsilon, profile).exp()).max(SD_FLOOR);
            let (vg, ve) = (sd_g * sd_g, sd_e * sd_e);
            if !vg.is_finite() || !ve.is_finite() {
                return None;
            }
            let x = DVector::from_row_slice(&self.design[p]);
            for &(j, sum, _) in &self.stats[p] {
                // 1' Sigma^-1 1 for one ratee collapses to J/(ve + J vg).
                let w = j / (ve + j * vg);
                info.syger(w, &x, &x, 1.0);
                rhs.axpy(w * sum / j, &x, 1.0);
            }
            per_profile.push((vg, ve));
        }
        let chol = info.clone().cholesky()?;
        let theta = chol.solve(&rhs);
        let logdet_info = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();

        let mut ll = 0.0;
        for (p, &(vg, ve)) in per_profile.iter().enumerate() {
            let mu = DVector::from_row_slice(&self.design[p]).dot(&theta);
            for &(j, sum, sumsq) in &self.stats[p] {
                let s = sum - j * mu;
                let q = sumsq - 2.0 * mu * sum + j * mu * mu;
                let denom = ve + j * vg;
                let logdet = (j - 1.0) * ve.ln() + denom.ln();
                let quad = q / ve - vg * s * s / (ve * denom);
                ll += -j * HALF_LN_TWO_PI - 0.5 * (logdet + quad);
            }
        }
        if !ll.is_finite() {
            return None;
        }
        Some((theta, ll, logdet_info))
    }
}

fn dot(beta: &[f64], profile: &CovariateProfile<f64>) -> f64 {
    beta.iter()
        .zip(profile.values())
        .map(|(b, x)| b * x)
        .sum()
}

/// Pooled one-way moment starting values: within mean square and the
/// variance of ratee means less its sampling contribution.
pub(crate) fn moment_start(data: &RatingsTable) -> (f64, f64) {
    let i_n = data.n_ratees() as f64;
    let mut within_ss = 0.0;
    let mut within_df = 0.0;
    let mut means = Vec::with_capacity(data.n_ratees());
    let mut mean_j = 0.0;
    for i in 0..data.n_ratees() {
        let rs = data.ratings(i);
        let m = rs.iter().sum::<f64>() / rs.len() as f64;
        within_ss += rs.iter().map(|y| (y - m) * (y - m)).sum::<f64>();
        within_df += (rs.len() - 1) as f64;
        mean_j += rs.len() as f64;
        means.push(m);
    }
    mean_j /= i_n;
    let grand = means.iter().sum::<f64>() / i_n;
    let var_means = means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>()
        / (i_n - 1.0).max(1.0);
    let ve = if within_df > 0.0 {
        within_ss / within_df
    } else {
        var_means / 2.0
    };
    let scale = (ve + var_means).max(1e-8);
    let vg = (var_means - ve / mean_j).max(0.01 * scale);
    (vg.max(SD_FLOOR * SD_FLOOR), ve.max(SD_FLOOR * SD_FLOOR))
}

fn fit(data: &RatingsTable, spec: &ModelSpec, criterion: Criterion) -> Result<FrequentistFit> {
    check_arity(data, spec)?;
    if data.n_ratees() < 2 {
        return Err(Error::Validation(
            "fitting requires at least two ratees".into(),
        ));
    }
    let prepared = Prepared::new(data, spec);
    let map = VarianceMap::new(spec);
    let reml_term = |logdet_info: f64| match criterion {
        Criterion::Ml => 0.0,
        Criterion::Reml => -0.5 * logdet_info,
    };
    let objective = |z: &[f64]| -> f64 {
        let (ag, bg, ae, be) = map.unpack(z);
        match prepared.profiled(ag, &bg, ae, &be) {
            Some((_, ll, logdet_info)) => -(ll + reml_term(logdet_info)),
            None => f64::INFINITY,
        }
    };

    let (vg0, ve0) = moment_start(data);
    let mut start = vec![0.0; map.dim()];
    start[0] = 0.5 * vg0.ln();
    start[1 + map.gamma_free.len()] = 0.5 * ve0.ln();

    // Deterministic jitter for the restart starting points.
    let mut jitter_rng = rng::stream(0x9d5f_7a11, 0);
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for restart in 0..4 {
        let z0: Vec<f64> = if restart == 0 {
            start.clone()
        } else {
            start
                .iter()
                .map(|&z| z + 0.3 * rng::standard_normal(&mut jitter_rng))
                .collect()
        };
        let run = nelder_mead(&objective, &z0, 0.4, 1e-8, 4000);
        if best.as_ref().map_or(true, |b| run.1 < b.1) {
            best = Some(run);
        }
    }
    let (z, neg_obj, converged) = best.unwrap();

    let (ag, bg, ae, be) = map.unpack(&z);
    let (theta, ll, logdet_info) = prepared
        .profiled(ag, &bg, ae, &be)
        .ok_or_else(|| Error::Degenerate("mean design is singular at the optimum".into()))?;
    debug_assert!((neg_obj + ll + reml_term(logdet_info)).abs() < 1e-6);

    let mut estimates = ParameterVector {
        alpha_mu: theta[0],
        beta_mu: vec![0.0; spec.arity()],
        alpha_gamma: ag.max(SD_FLOOR),
        beta_gamma: bg,
        alpha_epsilon: ae.max(SD_FLOOR),
        beta_epsilon: be,
    };
    let mut slot = 1;
    for (k, &on) in spec.mean_mask.iter().enumerate() {
        if on {
            estimates.beta_mu[k] = theta[slot];
            slot += 1;
        }
    }

    // Boundary when any fitted per-profile SD sits at the clamp.
    let boundary = prepared.profiles.iter().any(|p| {
        let sd_g = estimates.alpha_gamma * dot(&estimates.beta_gamma, p).exp();
        let sd_e = estimates.alpha_epsilon * dot(&estimates.beta_epsilon, p).exp();
        sd_g <= SD_FLOOR * 1.01 || sd_e <= SD_FLOOR * 1.01
    });

    let log_likelihood = ll;
    let k = spec.free_parameters();
    let n = prepared.n_ratings;
    Ok(FrequentistFit {
        spec: spec.clone(),
        estimates,
        log_likelihood,
        restricted_log_likelihood: match criterion {
            Criterion::Ml => None,
            Criterion::Reml => Some(ll - 0.5 * logdet_info),
        },
        k,
        aic: 2.0 * k as f64 - 2.0 * log_likelihood,
        bic: k as f64 * n.ln() - 2.0 * log_likelihood,
        converged,
        boundary,
    })
}

/// Classic Nelder-Mead minimization; returns (argmin, min, converged).
/// Convergence means the simplex diameter dropped below `tol`.
fn nelder_mead(
    f: &dyn Fn(&[f64]) -> f64,
    start: &[f64],
    step: f64,
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, f64, bool) {
    let d = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    simplex.push((start.to_vec(), f(start)));
    for i in 0..d {
        let mut v = start.to_vec();
        v[i] += step;
        let fv = f(&v);
        simplex.push((v, fv));
    }

    let mut converged = false;
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let diameter = simplex[1..]
            .iter()
            .flat_map(|(v, _)| {
                v.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
            })
            .fold(0.0f64, f64::max);
        if diameter < tol {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..d)
            .map(|i| simplex[..d].iter().map(|(v, _)| v[i]).sum::<f64>() / d as f64)
            .collect();
        let worst = simplex[d].clone();
        let at = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };

        let reflect = at(1.0);
        let f_reflect = f(&reflect);
        if f_reflect < simplex[0].1 {
            let expand = at(2.0);
            let f_expand = f(&expand);
            simplex[d] = if f_expand < f_reflect {
                (expand, f_expand)
            } else {
                (reflect, f_reflect)
            };
        } else if f_reflect < simplex[d - 1].1 {
            simplex[d] = (reflect, f_reflect);
        } else {
            let (contract, f_contract) = if f_reflect < worst.1 {
                let v = at(0.5);
                let fv = f(&v);
                (v, fv)
            } else {
                let v = at(-0.5);
                let fv = f(&v);
                (v, fv)
            };
            if f_contract < worst.1.min(f_reflect) {
                simplex[d] = (contract, f_contract);
            } else {
                // Shrink toward the best vertex.
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let v: Vec<f64> = entry
                        .0
                        .iter()
                        .zip(&best)
                        .map(|(x, b)| b + 0.5 * (x - b))
                        .collect();
                    entry.1 = f(&v);
                    entry.0 = v;
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (argmin, min) = simplex.swap_remove(0);
    (argmin, min, converged)
}
