//! Model space, parameterization, link functions, priors, and reliability
//! formulas shared by every other module.
//!
//! A rating `y_ij` of ratee `i` is modelled as `mu_i + gamma_i + eps_ij`
//! where the mean follows a linear regression on effect-coded binary
//! covariates and the two standard deviations follow log-linear
//! regressions on the same covariates:
//!
//! ```text
//! mu_i      = alpha_mu  + beta_mu' x_i
//! sd_gamma_i = alpha_gamma   * exp(beta_gamma' x_i)
//! sd_eps_i   = alpha_epsilon * exp(beta_epsilon' x_i)
//! ```
//!
//! Each covariate is effect-coded as -0.5 / +0.5, so an `alpha` is the
//! unweighted grand mean (or geometric-mean SD) and a `beta` is the
//! between-group difference (or log SD ratio). A [`ModelSpec`] switches
//! individual coefficients off; switching all combinations over K
//! covariates yields the 8^K candidate models.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{half_ln_two_pi, Scalar};

/// The three regressions a covariate can enter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Component {
    /// Mean rating (`mu`).
    Mean,
    /// Structural (between-ratee) standard deviation (`sd_gamma`).
    Structural,
    /// Residual (within-ratee) standard deviation (`sd_epsilon`).
    Residual,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Mean, Component::Structural, Component::Residual];

    pub fn label(self) -> &'static str {
        match self {
            Component::Mean => "mean",
            Component::Structural => "structural",
            Component::Residual => "residual",
        }
    }
}

/// Named set of binary covariates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSchema {
    names: Vec<String>,
}

impl CovariateSchema {
    /// A schema with the given covariate labels. Labels must be unique and
    /// nonempty.
    pub fn new<S: Into<String>>(names: Vec<S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::Schema("covariate names must be nonempty".into()));
            }
            if names[..i].contains(name) {
                return Err(Error::Schema(format!("duplicate covariate name `{name}`")));
            }
        }
        Ok(Self { names })
    }

    /// Schema with no covariates (the plain one-way model).
    pub fn empty() -> Self {
        Self { names: Vec::new() }
    }

    /// Number of covariates K.
    pub fn arity(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// One ratee's effect-coded covariate values, each -0.5 or +0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateProfile<F> {
    values: Vec<F>,
}

impl<F: Scalar> CovariateProfile<F> {
    pub fn new(values: Vec<F>) -> Result<Self> {
        let half = F::c(0.5);
        if values.iter().any(|v| *v != half && *v != -half) {
            return Err(Error::Validation(
                "covariate profile entries must be -0.5 or +0.5".into(),
            ));
        }
        Ok(Self { values })
    }

    /// Profile from level indicators: `false` codes -0.5, `true` codes +0.5.
    pub fn from_signs(signs: &[bool]) -> Self {
        let half = F::c(0.5);
        Self {
            values: signs.iter().map(|&s| if s { half } else { -half }).collect(),
        }
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// All 2^K profiles, covariate 0 varying fastest, -0.5 before +0.5.
    pub fn all(arity: usize) -> Vec<Self> {
        (0..1usize << arity)
            .map(|bits| Self::from_signs(&(0..arity).map(|k| bits >> k & 1 == 1).collect::<Vec<_>>()))
            .collect()
    }

    /// The profile with covariate `k` flipped to the other level.
    pub fn flipped(&self, k: usize) -> Self {
        let mut values = self.values.clone();
        values[k] = -values[k];
        Self { values }
    }
}

/// Which coefficients are free in each of the three regressions.
///
/// A `false` entry pins the corresponding `beta` to zero in every fit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub mean_mask: Vec<bool>,
    pub structural_mask: Vec<bool>,
    pub residual_mask: Vec<bool>,
}

impl ModelSpec {
    /// The fully restricted model (no covariate enters anywhere).
    pub fn null(arity: usize) -> Self {
        Self {
            mean_mask: vec![false; arity],
            structural_mask: vec![false; arity],
            residual_mask: vec![false; arity],
        }
    }

    /// The unrestricted model (every covariate enters everywhere).
    pub fn full(arity: usize) -> Self {
        Self {
            mean_mask: vec![true; arity],
            structural_mask: vec![true; arity],
            residual_mask: vec![true; arity],
        }
    }

    pub fn arity(&self) -> usize {
        self.mean_mask.len()
    }

    pub fn mask(&self, component: Component) -> &[bool] {
        match component {
            Component::Mean => &self.mean_mask,
            Component::Structural => &self.structural_mask,
            Component::Residual => &self.residual_mask,
        }
    }

    pub fn mask_mut(&mut self, component: Component) -> &mut Vec<bool> {
        match component {
            Component::Mean => &mut self.mean_mask,
            Component::Structural => &mut self.structural_mask,
            Component::Residual => &mut self.residual_mask,
        }
    }

    /// Whether covariate `k` enters `component`.
    pub fn includes(&self, component: Component, k: usize) -> bool {
        self.mask(component)[k]
    }

    /// Copy with one entry toggled to `on`.
    pub fn with(&self, component: Component, k: usize, on: bool) -> Self {
        let mut out = self.clone();
        out.mask_mut(component)[k] = on;
        out
    }

    /// Number of free regression coefficients across all three components.
    pub fn free_betas(&self) -> usize {
        [&self.mean_mask, &self.structural_mask, &self.residual_mask]
            .iter()
            .map(|m| m.iter().filter(|&&b| b).count())
            .sum()
    }

    /// Number of free parameters (three intercepts plus free betas).
    pub fn free_parameters(&self) -> usize {
        3 + self.free_betas()
    }

    /// True when every effect present in `other` is also present here.
    pub fn contains(&self, other: &ModelSpec) -> bool {
        Component::ALL.iter().all(|&c| {
            self.mask(c)
                .iter()
                .zip(other.mask(c))
                .all(|(&a, &b)| a || !b)
        })
    }

    /// Human-readable description per component, e.g. `g1+g2 | none | g1`.
    pub fn describe(&self, schema: &CovariateSchema) -> String {
        let part = |mask: &[bool]| {
            let names: Vec<&str> = mask
                .iter()
                .zip(schema.names())
                .filter(|(&on, _)| on)
                .map(|(_, n)| n.as_str())
                .collect();
            if names.is_empty() {
                "none".to_string()
            } else {
                names.join("+")
            }
        };
        format!(
            "{} | {} | {}",
            part(&self.mean_mask),
            part(&self.structural_mask),
            part(&self.residual_mask)
        )
    }
}

/// All 8^K candidate models in a fixed deterministic order: the mean mask
/// varies slowest, the structural mask next, and the residual mask fastest;
/// within a mask, covariate `k` maps to bit `k` of a counter. For K = 1
/// this puts the fully restricted model first (M1) and the unrestricted
/// model last (M8).
pub fn enumerate_models(schema: &CovariateSchema) -> Vec<ModelSpec> {
    let arity = schema.arity();
    let mask_of = |bits: usize| (0..arity).map(|k| bits >> k & 1 == 1).collect::<Vec<bool>>();
    let n_masks = 1usize << arity;
    let mut out = Vec::with_capacity(n_masks * n_masks * n_masks);
    for mean in 0..n_masks {
        for structural in 0..n_masks {
            for residual in 0..n_masks {
                out.push(ModelSpec {
                    mean_mask: mask_of(mean),
                    structural_mask: mask_of(structural),
                    residual_mask: mask_of(residual),
                });
            }
        }
    }
    out
}

/// Names of the natural-scale coordinates in draw-matrix column order
/// (matches [`ParameterVector::to_row`]).
pub fn coordinate_names(schema: &CovariateSchema) -> Vec<String> {
    let mut names = vec!["alpha_mu".to_string()];
    names.extend(schema.names().iter().map(|n| format!("beta_mu[{n}]")));
    names.push("alpha_gamma".to_string());
    names.extend(schema.names().iter().map(|n| format!("beta_gamma[{n}]")));
    names.push("alpha_epsilon".to_string());
    names.extend(schema.names().iter().map(|n| format!("beta_epsilon[{n}]")));
    names
}

/// Model parameters on the natural scale.
///
/// Entries for masked-out coefficients are exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector<F> {
    pub alpha_mu: F,
    pub beta_mu: Vec<F>,
    pub alpha_gamma: F,
    pub beta_gamma: Vec<F>,
    pub alpha_epsilon: F,
    pub beta_epsilon: Vec<F>,
}

impl<F: Scalar> ParameterVector<F> {
    /// Intercept-only parameters (all betas zero).
    pub fn intercepts(alpha_mu: F, alpha_gamma: F, alpha_epsilon: F, arity: usize) -> Self {
        Self {
            alpha_mu,
            beta_mu: vec![F::zero(); arity],
            alpha_gamma,
            beta_gamma: vec![F::zero(); arity],
            alpha_epsilon,
            beta_epsilon: vec![F::zero(); arity],
        }
    }

    pub fn arity(&self) -> usize {
        self.beta_mu.len()
    }

    pub fn beta(&self, component: Component) -> &[F] {
        match component {
            Component::Mean => &self.beta_mu,
            Component::Structural => &self.beta_gamma,
            Component::Residual => &self.beta_epsilon,
        }
    }

    /// Flatten into draw-matrix column order: `alpha_mu`, `beta_mu`,
    /// `alpha_gamma`, `beta_gamma`, `alpha_epsilon`, `beta_epsilon`.
    pub fn to_row(&self) -> Vec<F> {
        let mut row = Vec::with_capacity(3 + 3 * self.arity());
        row.push(self.alpha_mu);
        row.extend_from_slice(&self.beta_mu);
        row.push(self.alpha_gamma);
        row.extend_from_slice(&self.beta_gamma);
        row.push(self.alpha_epsilon);
        row.extend_from_slice(&self.beta_epsilon);
        row
    }

    /// Inverse of [`ParameterVector::to_row`].
    pub fn from_row(row: &[F], arity: usize) -> Self {
        assert_eq!(row.len(), 3 + 3 * arity, "coordinate row has wrong length");
        Self {
            alpha_mu: row[0],
            beta_mu: row[1..1 + arity].to_vec(),
            alpha_gamma: row[1 + arity],
            beta_gamma: row[2 + arity..2 + 2 * arity].to_vec(),
            alpha_epsilon: row[2 + 2 * arity],
            beta_epsilon: row[3 + 2 * arity..].to_vec(),
        }
    }

    /// Check positivity of the SD intercepts and that masked coefficients
    /// are exactly zero.
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if !(self.alpha_gamma > F::zero()) || !(self.alpha_epsilon > F::zero()) {
            return Err(Error::Domain(
                "standard deviation intercepts must be strictly positive".into(),
            ));
        }
        if self.arity() != spec.arity()
            || self.beta_gamma.len() != spec.arity()
            || self.beta_epsilon.len() != spec.arity()
        {
            return Err(Error::Validation(
                "parameter vector arity does not match model".into(),
            ));
        }
        for &component in &Component::ALL {
            for (k, (&free, &b)) in spec
                .mask(component)
                .iter()
                .zip(self.beta(component))
                .enumerate()
            {
                if !free && b != F::zero() {
                    return Err(Error::Validation(format!(
                        "coefficient {k} of the {} regression is masked out but nonzero",
                        component.label()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Prior scales for one analysis.
///
/// Free regression coefficients get Normal(0, sigma_beta^2) priors; the
/// grand-mean intercept a normal prior and the SD intercepts half-normal
/// priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig<F> {
    pub sigma_beta: F,
    pub mu_alpha_mu: F,
    pub sd_alpha_mu: F,
    pub sd_alpha_gamma: F,
    pub sd_alpha_epsilon: F,
}

impl<F: Scalar> Default for PriorConfig<F> {
    fn default() -> Self {
        Self {
            sigma_beta: F::c(0.5),
            mu_alpha_mu: F::zero(),
            sd_alpha_mu: F::one(),
            sd_alpha_gamma: F::one(),
            sd_alpha_epsilon: F::one(),
        }
    }
}

impl<F: Scalar> PriorConfig<F> {
    /// Preset testing for small group differences (sigma_beta = 0.25).
    pub fn small() -> Self {
        Self {
            sigma_beta: F::c(0.25),
            ..Self::default()
        }
    }

    /// Default preset for medium-sized differences (sigma_beta = 0.5).
    pub fn medium() -> Self {
        Self::default()
    }

    /// Preset testing for large group differences (sigma_beta = 1.0).
    pub fn large() -> Self {
        Self {
            sigma_beta: F::one(),
            ..Self::default()
        }
    }

    pub fn with_sigma_beta(sigma_beta: F) -> Self {
        Self {
            sigma_beta,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sds = [
            self.sigma_beta,
            self.sd_alpha_mu,
            self.sd_alpha_gamma,
            self.sd_alpha_epsilon,
        ];
        if sds.iter().any(|s| !(*s > F::zero())) {
            return Err(Error::Domain("prior scales must be strictly positive".into()));
        }
        Ok(())
    }
}

/// Linear predictor `beta' profile`.
fn dot<F: Scalar>(beta: &[F], profile: &CovariateProfile<F>) -> F {
    beta.iter()
        .zip(profile.values())
        .fold(F::zero(), |acc, (&b, &x)| acc + b * x)
}

/// Log-link standard deviation `alpha * exp(beta' profile)`.
///
/// `alpha` must be strictly positive; the exponent is rejected when it
/// leaves the representable range.
pub fn linked_sd<F: Scalar>(alpha: F, beta: &[F], profile: &CovariateProfile<F>) -> Result<F> {
    if !(alpha > F::zero()) {
        return Err(Error::Domain("sd intercept must be strictly positive".into()));
    }
    let eta = dot(beta, profile);
    let sd = alpha * eta.exp();
    if !sd.is_finite() || sd <= F::zero() {
        return Err(Error::Range(
            "linear predictor of the sd regression exceeds the exponent range".into(),
        ));
    }
    Ok(sd)
}

/// Identity-link mean `alpha + beta' profile`.
pub fn linked_mean<F: Scalar>(alpha: F, beta: &[F], profile: &CovariateProfile<F>) -> F {
    alpha + dot(beta, profile)
}

/// Inter-rater reliability `sd_gamma^2 / (sd_gamma^2 + sd_eps^2)`.
pub fn irr<F: Scalar>(sd_gamma: F, sd_epsilon: F) -> Result<F> {
    if !(sd_gamma > F::zero()) || !(sd_epsilon > F::zero()) {
        return Err(Error::Domain(
            "reliability requires strictly positive standard deviations".into(),
        ));
    }
    let vg = sd_gamma * sd_gamma;
    let ve = sd_epsilon * sd_epsilon;
    Ok(vg / (vg + ve))
}

/// Reliability at one covariate profile under `params`.
pub fn irr_profile<F: Scalar>(params: &ParameterVector<F>, profile: &CovariateProfile<F>) -> Result<F> {
    let sd_gamma = linked_sd(params.alpha_gamma, &params.beta_gamma, profile)?;
    let sd_epsilon = linked_sd(params.alpha_epsilon, &params.beta_epsilon, profile)?;
    irr(sd_gamma, sd_epsilon)
}

fn normal_logpdf<F: Scalar>(x: F, mean: F, sd: F) -> F {
    let z = (x - mean) / sd;
    -half_ln_two_pi::<F>() - sd.ln() - z * z / F::c(2.0)
}

fn half_normal_logpdf<F: Scalar>(x: F, sd: F) -> F {
    if x <= F::zero() {
        return F::neg_infinity();
    }
    F::c(2.0).ln() + normal_logpdf(x, F::zero(), sd)
}

/// Joint log prior density of `params` under `prior`, on the natural scale.
///
/// Masked-out coefficients are point masses at zero and contribute nothing.
pub fn log_prior<F: Scalar>(
    params: &ParameterVector<F>,
    prior: &PriorConfig<F>,
    spec: &ModelSpec,
) -> F {
    let mut lp = normal_logpdf(params.alpha_mu, prior.mu_alpha_mu, prior.sd_alpha_mu);
    lp = lp + half_normal_logpdf(params.alpha_gamma, prior.sd_alpha_gamma);
    lp = lp + half_normal_logpdf(params.alpha_epsilon, prior.sd_alpha_epsilon);
    for &component in &Component::ALL {
        for (&free, &b) in spec.mask(component).iter().zip(params.beta(component)) {
            if free {
                lp = lp + normal_logpdf(b, F::zero(), prior.sigma_beta);
            }
        }
    }
    lp
}
