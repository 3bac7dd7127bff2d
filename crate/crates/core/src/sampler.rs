//! Adaptive random-walk Metropolis sampling of a single model's posterior,
//! plus split-R-hat / effective-sample-size convergence diagnostics.
//!
//! The chain walks unconstrained coordinates: the SD intercepts enter as
//! `ln alpha_gamma`, `ln alpha_epsilon` (with the log-transform Jacobian
//! added to the target) and masked coefficients are simply absent, so the
//! walk has dimension `3 + #free coefficients`. During warmup the proposal
//! covariance is refreshed from the chain history every 200 iterations and
//! a Robbins-Monro recursion steers the step scale toward the target
//! acceptance rate; both freeze when warmup ends, keeping the retained
//! draws a valid Metropolis sample.
//!
//! Sampling an arbitrary density (for tests and for reuse by the marginal
//! likelihood code) goes through the [`LogDensity`] trait and
//! [`sample_target`]; [`sample_posterior`] wires the rating model into it.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::RatingsTable;
use crate::error::{Error, Result};
use crate::likelihood::{self, SuffStats};
use crate::model::{
    coordinate_names, log_prior, CovariateSchema, ModelSpec, ParameterVector, PriorConfig,
};
use crate::rng;

/// An unnormalized log target density on unconstrained coordinates.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    /// Unnormalized log density; return `f64::NEG_INFINITY` outside the
    /// support.
    fn log_density(&self, z: &[f64]) -> f64;
}

/// Sampler settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub draws_per_chain: usize,
    pub seed: u64,
    pub target_acceptance: f64,
    pub max_rhat: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup: 2000,
            draws_per_chain: 2000,
            seed: 0,
            target_acceptance: 0.30,
            max_rhat: 1.01,
        }
    }
}

impl SamplerConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains < 2 {
            return Err(Error::Validation("need at least two chains".into()));
        }
        if self.warmup < 100 || self.draws_per_chain < 100 {
            return Err(Error::Validation(
                "warmup and draws per chain must be at least 100".into(),
            ));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::Validation(
                "target acceptance must lie strictly inside (0, 1)".into(),
            ));
        }
        if !(self.max_rhat >= 1.0) {
            return Err(Error::Validation("max R-hat must be at least 1".into()));
        }
        Ok(())
    }
}

/// Raw output of one chain on unconstrained coordinates.
#[derive(Debug, Clone)]
pub struct ChainDraws {
    pub draws: Vec<Vec<f64>>,
    pub log_density: Vec<f64>,
    pub acceptance: f64,
}

/// Per-coordinate convergence summaries plus per-chain acceptance rates.
#[derive(Debug, Clone)]
pub struct Diagnostics {
    /// Free-coordinate names (masked coefficients carry no diagnostics).
    pub names: Vec<String>,
    pub rhat: Vec<f64>,
    pub ess: Vec<f64>,
    pub acceptance: Vec<f64>,
    /// A coordinate degenerated to (nearly) constant draws.
    pub degenerate: Vec<bool>,
}

/// Posterior sample of one model.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub spec: ModelSpec,
    /// Natural-scale rows in [`ParameterVector::to_row`] order,
    /// chain-major; masked coefficient columns are exactly zero.
    pub draws: Vec<Vec<f64>>,
    /// Unnormalized natural-scale log posterior (log prior + log
    /// likelihood) per draw.
    pub log_posterior: Vec<f64>,
    pub diagnostics: Diagnostics,
    /// Every R-hat at or below the configured threshold and no
    /// degenerate coordinate.
    pub converged: bool,
    pub chains: usize,
    pub draws_per_chain: usize,
    pub seed: u64,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    pub fn arity(&self) -> usize {
        self.spec.arity()
    }

    /// Parameter vector of one retained draw.
    pub fn params_at(&self, row: usize) -> ParameterVector<f64> {
        ParameterVector::from_row(&self.draws[row], self.arity())
    }
}

/// Maps between the free unconstrained coordinates of a model and full
/// natural-scale parameter vectors. Coordinate order: `alpha_mu`, free
/// mean coefficients, `ln alpha_gamma`, free structural coefficients,
/// `ln alpha_epsilon`, free residual coefficients.
pub(crate) struct FreeMap {
    mean_free: Vec<usize>,
    gamma_free: Vec<usize>,
    epsilon_free: Vec<usize>,
    arity: usize,
}

impl FreeMap {
    pub fn new(spec: &ModelSpec) -> Self {
        let free = |mask: &[bool]| {
            mask.iter()
                .enumerate()
                .filter(|(_, &on)| on)
                .map(|(k, _)| k)
                .collect::<Vec<usize>>()
        };
        Self {
            mean_free: free(&spec.mean_mask),
            gamma_free: free(&spec.structural_mask),
            epsilon_free: free(&spec.residual_mask),
            arity: spec.arity(),
        }
    }

    pub fn dim(&self) -> usize {
        3 + self.mean_free.len() + self.gamma_free.len() + self.epsilon_free.len()
    }

    fn ln_alpha_gamma_idx(&self) -> usize {
        1 + self.mean_free.len()
    }

    fn ln_alpha_epsilon_idx(&self) -> usize {
        2 + self.mean_free.len() + self.gamma_free.len()
    }

    pub fn to_params(&self, z: &[f64]) -> ParameterVector<f64> {
        let mut p = ParameterVector::intercepts(
            z[0],
            z[self.ln_alpha_gamma_idx()].exp(),
            z[self.ln_alpha_epsilon_idx()].exp(),
            self.arity,
        );
        for (slot, &k) in self.mean_free.iter().enumerate() {
            p.beta_mu[k] = z[1 + slot];
        }
        let base = self.ln_alpha_gamma_idx() + 1;
        for (slot, &k) in self.gamma_free.iter().enumerate() {
            p.beta_gamma[k] = z[base + slot];
        }
        let base = self.ln_alpha_epsilon_idx() + 1;
        for (slot, &k) in self.epsilon_free.iter().enumerate() {
            p.beta_epsilon[k] = z[base + slot];
        }
        p
    }

    pub fn pack(&self, p: &ParameterVector<f64>) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.dim());
        z.push(p.alpha_mu);
        z.extend(self.mean_free.iter().map(|&k| p.beta_mu[k]));
        z.push(p.alpha_gamma.ln());
        z.extend(self.gamma_free.iter().map(|&k| p.beta_gamma[k]));
        z.push(p.alpha_epsilon.ln());
        z.extend(self.epsilon_free.iter().map(|&k| p.beta_epsilon[k]));
        z
    }

    /// Log Jacobian of the natural -> unconstrained change of variables.
    pub fn log_jacobian(&self, z: &[f64]) -> f64 {
        z[self.ln_alpha_gamma_idx()] + z[self.ln_alpha_epsilon_idx()]
    }

    /// Names of the free coordinates on the natural scale.
    pub fn names(&self, schema: &CovariateSchema) -> Vec<String> {
        let cov = |k: &usize| schema.names()[*k].clone();
        let mut out = vec!["alpha_mu".to_string()];
        out.extend(self.mean_free.iter().map(|k| format!("beta_mu[{}]", cov(k))));
        out.push("alpha_gamma".to_string());
        out.extend(
            self.gamma_free
                .iter()
                .map(|k| format!("beta_gamma[{}]", cov(k))),
        );
        out.push("alpha_epsilon".to_string());
        out.extend(
            self.epsilon_free
                .iter()
                .map(|k| format!("beta_epsilon[{}]", cov(k))),
        );
        out
    }
}

/// The rating model's posterior as a [`LogDensity`] on free coordinates.
pub(crate) struct PosteriorTarget<'a> {
    stats: SuffStats,
    prior: &'a PriorConfig<f64>,
    spec: &'a ModelSpec,
    pub(crate) map: FreeMap,
}

impl<'a> PosteriorTarget<'a> {
    pub fn new(data: &RatingsTable, spec: &'a ModelSpec, prior: &'a PriorConfig<f64>) -> Self {
        Self {
            stats: SuffStats::from_table(data),
            prior,
            spec,
            map: FreeMap::new(spec),
        }
    }
}

impl LogDensity for PosteriorTarget<'_> {
    fn dim(&self) -> usize {
        self.map.dim()
    }

    fn log_density(&self, z: &[f64]) -> f64 {
        let params = self.map.to_params(z);
        if !params.alpha_gamma.is_finite() || !params.alpha_epsilon.is_finite() {
            return f64::NEG_INFINITY;
        }
        let lp = log_prior(&params, self.prior, self.spec);
        let ll = match self.stats.loglik(&params) {
            Ok(v) => v,
            Err(_) => return f64::NEG_INFINITY,
        };
        let v = lp + ll + self.map.log_jacobian(z);
        if v.is_finite() {
            v
        } else {
            f64::NEG_INFINITY
        }
    }
}

const COV_REFRESH_INTERVAL: usize = 200;

/// Run `inits.len()` independent adaptive Metropolis chains on `target`.
/// Chain `c` draws from RNG substream `c` of `seed`; results come back in
/// chain order regardless of scheduling.
pub fn sample_target<T: LogDensity>(
    target: &T,
    inits: &[Vec<f64>],
    warmup: usize,
    draws_per_chain: usize,
    target_acceptance: f64,
    seed: u64,
) -> Result<Vec<ChainDraws>> {
    for init in inits {
        if init.len() != target.dim() {
            return Err(Error::Init("initial point has wrong dimension".into()));
        }
        if !target.log_density(init).is_finite() {
            return Err(Error::Init(
                "target density is not finite at an initial point".into(),
            ));
        }
    }
    inits
        .par_iter()
        .enumerate()
        .map(|(c, init)| {
            let rng = rng::stream(seed, c as u64);
            Ok(run_chain(
                target,
                init,
                warmup,
                draws_per_chain,
                target_acceptance,
                rng,
            ))
        })
        .collect()
}

fn run_chain<T: LogDensity>(
    target: &T,
    init: &[f64],
    warmup: usize,
    draws: usize,
    target_acceptance: f64,
    mut rng: ChaCha8Rng,
) -> ChainDraws {
    let d = target.dim();
    let mut z = init.to_vec();
    let mut lp = target.log_density(&z);

    let mut chol = Cholesky::new(DMatrix::identity(d, d)).unwrap();
    let mut log_scale = (0.1 / (d as f64).sqrt()).ln();
    let mut history: Vec<Vec<f64>> = Vec::with_capacity(warmup);
    let mut eta = DVector::zeros(d);
    let mut proposal = vec![0.0; d];

    let mut out = ChainDraws {
        draws: Vec::with_capacity(draws),
        log_density: Vec::with_capacity(draws),
        acceptance: 0.0,
    };
    let mut accepted_post = 0usize;

    for iter in 0..warmup + draws {
        let adapting = iter < warmup;
        for e in eta.iter_mut() {
            *e = rng::standard_normal(&mut rng);
        }
        let step = chol.l_dirty() * &eta;
        let scale = log_scale.exp();
        for i in 0..d {
            proposal[i] = z[i] + scale * step[i];
        }
        let lp_new = target.log_density(&proposal);
        let log_ratio = lp_new - lp;
        let accept_prob = if log_ratio >= 0.0 { 1.0 } else { log_ratio.exp() };
        let u = rng::unit_open(&mut rng);
        if u < accept_prob {
            z.copy_from_slice(&proposal);
            lp = lp_new;
            if !adapting {
                accepted_post += 1;
            }
        }

        if adapting {
            // Robbins-Monro step-scale recursion toward the target rate.
            let gain = ((iter + 1) as f64).powf(-0.6);
            log_scale += gain * (accept_prob - target_acceptance);
            history.push(z.clone());
            if history.len() % COV_REFRESH_INTERVAL == 0 {
                if let Some(c) = empirical_cholesky(&history) {
                    chol = c;
                    // The covariance now carries the shape; reset the
                    // scalar to the standard optimal scaling.
                    log_scale = (2.38 / (d as f64).sqrt()).ln();
                }
            }
        } else {
            out.draws.push(z.clone());
            out.log_density.push(lp);
        }
    }
    out.acceptance = accepted_post as f64 / draws.max(1) as f64;
    out
}

fn empirical_cholesky(history: &[Vec<f64>]) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    let n = history.len();
    let d = history[0].len();
    if n < 2 * d {
        return None;
    }
    let mut mean = vec![0.0; d];
    for row in history {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = DMatrix::zeros(d, d);
    for row in history {
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
    // Regularize so a stuck coordinate cannot collapse the proposal.
    for i in 0..d {
        cov[(i, i)] += 1e-8;
    }
    Cholesky::new(cov)
}

/// Sample the posterior of `spec` on `data`.
///
/// Initialization takes the SD intercepts from pooled one-way moment
/// estimates (clamped to at least 0.05), the grand mean for `alpha_mu`,
/// zeros for coefficients, and adds uniform (-0.1, 0.1) jitter per chain.
pub fn sample_posterior(
    data: &RatingsTable,
    spec: &ModelSpec,
    prior: &PriorConfig<f64>,
    cfg: &SamplerConfig,
) -> Result<PosteriorDraws> {
    cfg.validate()?;
    prior.validate()?;
    if spec.arity() != data.schema().arity() {
        return Err(Error::Validation(
            "model arity does not match the data schema".into(),
        ));
    }
    if data.n_ratees() < 2 {
        return Err(Error::Validation(
            "sampling requires at least two ratees".into(),
        ));
    }

    let target = PosteriorTarget::new(data, spec, prior);
    let map = &target.map;

    let (vg0, ve0) = likelihood::moment_start(data);
    let grand = data.all_ratings().sum::<f64>() / data.n_ratings() as f64;
    let mut base = ParameterVector::intercepts(
        grand,
        vg0.sqrt().max(0.05),
        ve0.sqrt().max(0.05),
        spec.arity(),
    );
    // Masked-parameter validation never sees `base`, but keep it honest.
    base.beta_mu.iter_mut().for_each(|b| *b = 0.0);
    let z0 = map.pack(&base);

    let inits: Vec<Vec<f64>> = (0..cfg.chains)
        .map(|c| {
            let mut jitter = rng::stream(cfg.seed, 1_000_000 + c as u64);
            z0.iter()
                .map(|&v| v + 0.2 * (rng::unit_open(&mut jitter) - 0.5))
                .collect()
        })
        .collect();

    let chains = sample_target(
        &target,
        &inits,
        cfg.warmup,
        cfg.draws_per_chain,
        cfg.target_acceptance,
        cfg.seed,
    )?;

    let mut draws = Vec::with_capacity(cfg.chains * cfg.draws_per_chain);
    let mut log_posterior = Vec::with_capacity(cfg.chains * cfg.draws_per_chain);
    for chain in &chains {
        for (z, lp) in chain.draws.iter().zip(&chain.log_density) {
            let params = map.to_params(z);
            log_posterior.push(lp - map.log_jacobian(z));
            draws.push(params.to_row());
        }
    }

    let diagnostics = free_coordinate_diagnostics(
        &chains,
        map,
        &map.names(data.schema()),
    )?;
    let converged = diagnostics
        .rhat
        .iter()
        .all(|r| r.is_finite() && *r <= cfg.max_rhat)
        && !diagnostics.degenerate.iter().any(|&d| d);

    Ok(PosteriorDraws {
        spec: spec.clone(),
        draws,
        log_posterior,
        diagnostics,
        converged,
        chains: cfg.chains,
        draws_per_chain: cfg.draws_per_chain,
        seed: cfg.seed,
    })
}

fn free_coordinate_diagnostics(
    chains: &[ChainDraws],
    map: &FreeMap,
    names: &[String],
) -> Result<Diagnostics> {
    let dim = map.dim();
    let mut rhat = Vec::with_capacity(dim);
    let mut ess = Vec::with_capacity(dim);
    let mut degenerate = Vec::with_capacity(dim);
    for coord in 0..dim {
        // Diagnostics run on the natural scale of each coordinate.
        let series: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| {
                c.draws
                    .iter()
                    .map(|z| natural_coord(map, z, coord))
                    .collect()
            })
            .collect();
        let r = split_rhat(&series)?;
        let e = bulk_ess(&series)?;
        degenerate.push(e == 0.0);
        rhat.push(r);
        ess.push(e);
    }
    Ok(Diagnostics {
        names: names.to_vec(),
        rhat,
        ess,
        acceptance: chains.iter().map(|c| c.acceptance).collect(),
        degenerate,
    })
}

fn natural_coord(map: &FreeMap, z: &[f64], coord: usize) -> f64 {
    if coord == map.ln_alpha_gamma_idx() || coord == map.ln_alpha_epsilon_idx() {
        z[coord].exp()
    } else {
        z[coord]
    }
}

/// Recompute per-coordinate diagnostics from a stored posterior sample.
pub fn diagnostics(draws: &PosteriorDraws, schema: &CovariateSchema) -> Result<Diagnostics> {
    if draws.chains < 2 {
        return Err(Error::Diagnostic("need at least two chains".into()));
    }
    let map = FreeMap::new(&draws.spec);
    let names = map.names(schema);
    let full_names = coordinate_names(schema);
    let mut rhat = Vec::new();
    let mut ess = Vec::new();
    let mut degenerate = Vec::new();
    for name in &names {
        let col = full_names.iter().position(|n| n == name).unwrap();
        let series: Vec<Vec<f64>> = (0..draws.chains)
            .map(|c| {
                let lo = c * draws.draws_per_chain;
                draws.draws[lo..lo + draws.draws_per_chain]
                    .iter()
                    .map(|row| row[col])
                    .collect()
            })
            .collect();
        rhat.push(split_rhat(&series)?);
        let e = bulk_ess(&series)?;
        degenerate.push(e == 0.0);
        ess.push(e);
    }
    Ok(Diagnostics {
        names,
        rhat,
        ess,
        acceptance: draws.diagnostics.acceptance.clone(),
        degenerate,
    })
}

fn split_halves(chains: &[Vec<f64>]) -> Result<Vec<&[f64]>> {
    if chains.len() < 2 {
        return Err(Error::Diagnostic("need at least two chains".into()));
    }
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    let half = n / 2;
    if half < 4 {
        return Err(Error::Diagnostic(
            "need at least four draws per half-chain".into(),
        ));
    }
    let mut halves = Vec::with_capacity(2 * chains.len());
    for c in chains {
        halves.push(&c[..half]);
        halves.push(&c[half..2 * half]);
    }
    Ok(halves)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64], m: f64) -> f64 {
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Split R-hat over chains of equal length (each chain is halved first).
/// Returns NaN when every half-chain is constant.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    let halves = split_halves(chains)?;
    let n = halves[0].len() as f64;
    let m = halves.len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let vars: Vec<f64> = halves.iter().zip(&means).map(|(h, &mu)| sample_var(h, mu)).collect();
    let w = mean(&vars);
    let grand = mean(&means);
    let b = n * sample_var(&means, grand) * (m - 1.0) / (m - 1.0);
    if w == 0.0 {
        return Ok(if b == 0.0 { f64::NAN } else { f64::INFINITY });
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    Ok((var_plus / w).sqrt())
}

/// Rank-normalized bulk effective sample size over chains of equal
/// length (split-chain, Geyer initial monotone sequence). Returns 0 when
/// the draws are degenerate (constant).
pub fn bulk_ess(chains: &[Vec<f64>]) -> Result<f64> {
    let halves = split_halves(chains)?;
    let n = halves[0].len();
    let m = halves.len();
    let total = n * m;

    // Rank-normalize the pooled draws (average ranks on ties), then map
    // through the normal quantile function.
    let mut indexed: Vec<(f64, usize)> = halves
        .iter()
        .flat_map(|h| h.iter().copied())
        .zip(0..)
        .collect();
    indexed.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut zscores = vec![0.0; total];
    let mut i = 0;
    while i < total {
        let mut j = i;
        while j + 1 < total && indexed[j + 1].0 == indexed[i].0 {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        let z = rng::norm_quantile((avg_rank - 0.375) / (total as f64 + 0.25));
        for entry in &indexed[i..=j] {
            zscores[entry.1] = z;
        }
        i = j + 1;
    }
    let z_halves: Vec<&[f64]> = zscores.chunks(n).collect();

    let means: Vec<f64> = z_halves.iter().map(|h| mean(h)).collect();
    let vars: Vec<f64> = z_halves
        .iter()
        .zip(&means)
        .map(|(h, &mu)| sample_var(h, mu))
        .collect();
    let w = mean(&vars);
    let b = n as f64 * sample_var(&means, mean(&means));
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b / n as f64;
    if var_plus <= 0.0 || !var_plus.is_finite() {
        return Ok(0.0);
    }

    let acov = |h: &[f64], mu: f64, t: usize| -> f64 {
        let mut s = 0.0;
        for i in 0..h.len() - t {
            s += (h[i] - mu) * (h[i + t] - mu);
        }
        s / h.len() as f64
    };
    let mean_acov_at = |t: usize| -> f64 {
        z_halves
            .iter()
            .zip(&means)
            .map(|(h, &mu)| acov(h, mu, t))
            .sum::<f64>()
            / m as f64
    };

    let rho = |t: usize| 1.0 - (w - mean_acov_at(t)) / var_plus;
    let mut tau = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let pair = rho(t) + rho(t + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        prev_pair = pair;
        tau += pair;
        t += 2;
    }
    let tau = (2.0 * tau - 1.0).max(1.0 / (total as f64).log10().max(1.0));
    let cap = total as f64 * (total as f64).log10();
    Ok((total as f64 / tau).min(cap))
}
