//! Marginal likelihoods, Bayes factors, posterior model probabilities,
//! inclusion Bayes factors, and verbal evidence labels.
//!
//! Marginal likelihoods come from iterative optimal bridge sampling on the
//! sampler's unconstrained scale: half of the posterior draws fit a
//! moment-matched multivariate-normal proposal, the other half plus an
//! equal number of fresh proposal draws drive the fixed-point iteration
//! for the normalizing constant. The Monte Carlo standard error uses the
//! standard asymptotic formula with an autocorrelation correction from
//! the effective sample size of the posterior-side bridge terms.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::RatingsTable;
use crate::error::{Error, Result};
use crate::model::{Component, ModelSpec, PriorConfig};
use crate::rng;
use crate::sampler::{bulk_ess, ChainDraws, FreeMap, LogDensity, PosteriorDraws, PosteriorTarget};

/// One model's marginal likelihood and probability mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEvidence {
    pub spec: ModelSpec,
    pub log_marglik: f64,
    pub log_marglik_mcse: f64,
    pub prior_prob: f64,
    pub posterior_prob: f64,
}

impl ModelEvidence {
    pub fn new(spec: ModelSpec, log_marglik: f64, log_marglik_mcse: f64, prior_prob: f64) -> Self {
        Self {
            spec,
            log_marglik,
            log_marglik_mcse,
            prior_prob,
            posterior_prob: 0.0,
        }
    }
}

/// Inclusion Bayes factor for one effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclusionResult {
    pub component: Component,
    pub covariate: usize,
    pub bf_inclusion: f64,
    pub prior_incl_odds: f64,
    pub posterior_incl_odds: f64,
}

/// Output of one bridge-sampling run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BridgeResult {
    pub log_marglik: f64,
    pub mcse: f64,
    pub iterations: usize,
}

/// Moment-matched multivariate-normal proposal on the unconstrained scale.
struct MvnProposal {
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    logdet: f64,
    dim: usize,
}

impl MvnProposal {
    fn fit(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        if n < 2 * d + 2 || d == 0 {
            return Err(Error::Degenerate(
                "too few draws to fit the bridge proposal".into(),
            ));
        }
        let mut mean = DVector::zeros(d);
        for row in rows {
            for i in 0..d {
                mean[i] += row[i];
            }
        }
        mean /= n as f64;
        let mut cov: DMatrix<f64> = DMatrix::zeros(d, d);
        for row in rows {
            for i in 0..d {
                for j in i..d {
                    cov[(i, j)] += (row[i] - mean[i]) * (row[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = cov[(i, j)] / (n - 1) as f64;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        for i in 0..d {
            cov[(i, i)] += 1e-10;
        }
        let chol = Cholesky::new(cov)
            .ok_or_else(|| Error::Degenerate("bridge proposal covariance is singular".into()))?;
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self {
            mean,
            chol,
            logdet,
            dim: d,
        })
    }

    fn logpdf(&self, z: &[f64]) -> f64 {
        let diff = DVector::from_row_slice(z) - &self.mean;
        let solved = self.chol.solve(&diff);
        -0.5 * (self.dim as f64 * (2.0 * std::f64::consts::PI).ln() + self.logdet)
            - 0.5 * diff.dot(&solved)
    }

    fn draw<R: RngCore>(&self, rng: &mut R) -> Vec<f64> {
        let eta = DVector::from_iterator(
            self.dim,
            (0..self.dim).map(|_| rng::standard_normal(rng)),
        );
        (self.chol.l() * eta + &self.mean).iter().copied().collect()
    }
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Iterative optimal-bridge fixed point on supplied log ratios.
///
/// `l1` holds `log target - log proposal` at draws from the target, `l2`
/// the same quantity at draws from the proposal. When the proposal equals
/// the target up to a constant, the iteration lands on that constant in a
/// single step. The recursion runs shifted by the median of `l1` and stops
/// at a relative change of 1e-10 (cap 1000 iterations).
pub fn bridge_from_log_ratios(l1: &[f64], l2: &[f64]) -> Result<BridgeResult> {
    let (logml, iterations) = bridge_fixed_point(l1, l2)?;
    let mcse = bridge_mcse(l1, l2, logml, l1.len() as f64);
    Ok(BridgeResult {
        log_marglik: logml,
        mcse,
        iterations,
    })
}

fn bridge_fixed_point(l1: &[f64], l2: &[f64]) -> Result<(f64, usize)> {
    if l1.is_empty() || l2.is_empty() {
        return Err(Error::Degenerate("bridge received empty draw sets".into()));
    }
    let n1 = l1.len() as f64;
    let n2 = l2.len() as f64;
    let s1 = n1 / (n1 + n2);
    let s2 = n2 / (n1 + n2);
    let lstar = median(l1);
    let e1: Vec<f64> = l1.iter().map(|l| (l - lstar).exp()).collect();
    let e2: Vec<f64> = l2.iter().map(|l| (l - lstar).exp()).collect();

    // Importance-sampling start from the proposal draws.
    let mut r = (e2.iter().sum::<f64>() / n2).max(f64::MIN_POSITIVE);
    for iter in 0..1000 {
        let num = e2.iter().map(|&e| e / (s1 * e + s2 * r)).sum::<f64>() / n2;
        let den = e1.iter().map(|&e| 1.0 / (s1 * e + s2 * r)).sum::<f64>() / n1;
        let r_new = num / den;
        if !r_new.is_finite() || r_new <= 0.0 {
            return Err(Error::Degenerate(
                "bridge iteration produced a non-finite estimate".into(),
            ));
        }
        let rel = (r_new - r).abs() / r_new;
        r = r_new;
        if rel < 1e-10 {
            return Ok((lstar + r.ln(), iter + 1));
        }
    }
    Err(Error::BridgeNonConvergence {
        last: lstar + r.ln(),
    })
}

/// Asymptotic relative-error formula; `ess1` is the effective sample size
/// of the target-side draws (equal to `l1.len()` for independent draws).
fn bridge_mcse(l1: &[f64], l2: &[f64], logml: f64, ess1: f64) -> f64 {
    let n1 = l1.len() as f64;
    let n2 = l2.len() as f64;
    let s1 = n1 / (n1 + n2);
    let s2 = n2 / (n1 + n2);
    let lstar = median(l1);
    let r = (logml - lstar).exp();
    // f1 at proposal draws, f2 at target draws; constants cancel in the
    // variance-over-squared-mean ratios.
    let f1: Vec<f64> = l2
        .iter()
        .map(|l| {
            let e = (l - lstar).exp();
            e / (s1 * e + s2 * r)
        })
        .collect();
    let f2: Vec<f64> = l1
        .iter()
        .map(|l| {
            let e = (l - lstar).exp();
            1.0 / (s1 * e + s2 * r)
        })
        .collect();
    let ratio = |xs: &[f64], n: f64| {
        let m = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        var / (m * m)
    };
    let re2 = ratio(&f1, n2) / n2 + ratio(&f2, n1) / ess1.max(1.0);
    re2.sqrt()
}

/// Bridge-sample the normalizing constant of `target` from raw chains.
///
/// The first half of every chain fits the proposal; the second halves are
/// the evaluation draws, matched by an equal number of fresh proposal
/// draws seeded from `seed`.
pub fn bridge_logml_chains<T: LogDensity>(
    target: &T,
    chains: &[ChainDraws],
    seed: u64,
) -> Result<BridgeResult> {
    let mut fit_rows: Vec<&[f64]> = Vec::new();
    let mut eval_rows: Vec<&[f64]> = Vec::new();
    let mut eval_lp: Vec<f64> = Vec::new();
    let mut eval_chain_lens: Vec<usize> = Vec::new();
    for chain in chains {
        let half = chain.draws.len() / 2;
        for row in &chain.draws[..half] {
            fit_rows.push(row);
        }
        for (row, lp) in chain.draws[half..].iter().zip(&chain.log_density[half..]) {
            eval_rows.push(row);
            eval_lp.push(*lp);
        }
        eval_chain_lens.push(chain.draws.len() - half);
    }
    let proposal = MvnProposal::fit(&fit_rows)?;

    let l1: Vec<f64> = eval_rows
        .iter()
        .zip(&eval_lp)
        .map(|(row, lp)| lp - proposal.logpdf(row))
        .collect();
    let mut rng = rng::stream(seed, 0);
    let l2: Vec<f64> = (0..eval_rows.len())
        .map(|_| {
            let z = proposal.draw(&mut rng);
            target.log_density(&z) - proposal.logpdf(&z)
        })
        .collect();

    let (logml, iterations) = bridge_fixed_point(&l1, &l2)?;

    // Correct the error estimate for autocorrelation of the posterior-side
    // terms using their effective sample size across chains.
    let lstar = median(&l1);
    let r = (logml - lstar).exp();
    let s1 = 0.5;
    let s2 = 0.5;
    let mut f2_chains: Vec<Vec<f64>> = Vec::new();
    let mut offset = 0;
    for len in &eval_chain_lens {
        f2_chains.push(
            l1[offset..offset + len]
                .iter()
                .map(|l| 1.0 / (s1 * (l - lstar).exp() + s2 * r))
                .collect(),
        );
        offset += len;
    }
    let ess1 = match bulk_ess(&f2_chains) {
        Ok(e) if e > 0.0 => e,
        _ => l1.len() as f64,
    };
    let mcse = bridge_mcse(&l1, &l2, logml, ess1);
    Ok(BridgeResult {
        log_marglik: logml,
        mcse,
        iterations,
    })
}

/// Marginal likelihood of the model behind a posterior sample.
pub fn bridge_logml(
    draws: &PosteriorDraws,
    data: &RatingsTable,
    spec: &ModelSpec,
    prior: &PriorConfig<f64>,
) -> Result<BridgeResult> {
    if draws.spec != *spec {
        return Err(Error::Validation(
            "posterior draws belong to a different model".into(),
        ));
    }
    let target = PosteriorTarget::new(data, spec, prior);
    let map = FreeMap::new(spec);
    let per_chain = draws.draws_per_chain;
    let mut chains = Vec::with_capacity(draws.chains);
    for c in 0..draws.chains {
        let lo = c * per_chain;
        let mut z_rows = Vec::with_capacity(per_chain);
        let mut lp = Vec::with_capacity(per_chain);
        for row in lo..lo + per_chain {
            let z = map.pack(&draws.params_at(row));
            lp.push(draws.log_posterior[row] + map.log_jacobian(&z));
            z_rows.push(z);
        }
        chains.push(ChainDraws {
            draws: z_rows,
            log_density: lp,
            acceptance: 0.0,
        });
    }
    let seed = rng::derive(draws.seed, &[0xB71D6E]);
    bridge_logml_chains(&target, &chains, seed)
}

/// Bayes factor of model 1 against model 0 from their log marginal
/// likelihoods. Inputs must be finite.
pub fn bayes_factor(logml_1: f64, logml_0: f64) -> f64 {
    (logml_1 - logml_0).exp()
}

/// Fill the posterior model probabilities in place via Bayes' rule with
/// max-shifted exponentials.
pub fn posterior_model_probs(evidences: &mut [ModelEvidence]) -> Result<()> {
    if evidences.is_empty() {
        return Err(Error::Validation("empty model set".into()));
    }
    let prior_sum: f64 = evidences.iter().map(|e| e.prior_prob).sum();
    if evidences.iter().any(|e| !(e.prior_prob > 0.0)) || (prior_sum - 1.0).abs() > 1e-8 {
        return Err(Error::Validation(
            "prior model probabilities must be positive and sum to 1".into(),
        ));
    }
    let max = evidences
        .iter()
        .map(|e| e.log_marglik)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Degenerate(
            "every model has vanishing marginal likelihood".into(),
        ));
    }
    let mut total = 0.0;
    for e in evidences.iter_mut() {
        e.posterior_prob = e.prior_prob * (e.log_marglik - max).exp();
        total += e.posterior_prob;
    }
    for e in evidences.iter_mut() {
        e.posterior_prob /= total;
    }
    Ok(())
}

/// Inclusion Bayes factor for one effect: posterior odds of the models
/// containing it against those not containing it, divided by the prior
/// odds. Requires posterior probabilities to be populated.
pub fn inclusion_bf(
    evidences: &[ModelEvidence],
    component: Component,
    covariate: usize,
) -> Result<InclusionResult> {
    let mut prior = [0.0f64; 2];
    let mut posterior = [0.0f64; 2];
    for e in evidences {
        if covariate >= e.spec.arity() {
            return Err(Error::Partition(
                "covariate index out of range for the model set".into(),
            ));
        }
        let side = usize::from(e.spec.includes(component, covariate));
        prior[side] += e.prior_prob;
        posterior[side] += e.posterior_prob;
    }
    if prior[0] == 0.0 || prior[1] == 0.0 {
        return Err(Error::Partition(format!(
            "the model set does not split on the {} effect of covariate {covariate}",
            component.label()
        )));
    }
    let prior_incl_odds = prior[1] / prior[0];
    let posterior_incl_odds = posterior[1] / posterior[0];
    Ok(InclusionResult {
        component,
        covariate,
        bf_inclusion: posterior_incl_odds / prior_incl_odds,
        prior_incl_odds,
        posterior_incl_odds,
    })
}

/// Strength bands for verbal evidence labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strength {
    Weak,
    Moderate,
    Strong,
    VeryStrong,
}

impl Strength {
    fn from_ratio(bf: f64) -> Self {
        if bf > 100.0 {
            Strength::VeryStrong
        } else if bf > 10.0 {
            Strength::Strong
        } else if bf > 3.0 {
            Strength::Moderate
        } else {
            Strength::Weak
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Strength::Weak => "weak",
            Strength::Moderate => "moderate",
            Strength::Strong => "strong",
            Strength::VeryStrong => "very strong",
        }
    }
}

/// Verbal label for an inclusion Bayes factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvidenceLabel {
    NoEvidence,
    ForPresence(Strength),
    ForAbsence(Strength),
}

/// Classify a Bayes factor (presence over absence) into a verbal label.
pub fn evidence_label(bf: f64) -> EvidenceLabel {
    assert!(bf > 0.0, "Bayes factors are positive");
    if bf == 1.0 {
        EvidenceLabel::NoEvidence
    } else if bf > 1.0 {
        EvidenceLabel::ForPresence(Strength::from_ratio(bf))
    } else {
        EvidenceLabel::ForAbsence(Strength::from_ratio(1.0 / bf))
    }
}

impl std::fmt::Display for EvidenceLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EvidenceLabel::NoEvidence => write!(f, "no evidence either way"),
            EvidenceLabel::ForPresence(s) => {
                write!(f, "{} evidence for the presence of a difference", s.label())
            }
            EvidenceLabel::ForAbsence(s) => {
                write!(f, "{} evidence for the absence of a difference", s.label())
            }
        }
    }
}
