//! Acceptance checks for the whole crate: golden numbers from the
//! published design table, oracle equivalences for the likelihood and
//! the marginal-likelihood estimator, and scaled-down reruns of the
//! simulation study with statistical tolerances.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see one
//! line per check.

use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};

use hetirr::averaging::{
    bma_mix, ic_weights, pseudo_bma_weights, stacking_objective, stacking_weights, WeightMethod,
    WeightVector,
};
use hetirr::data::{
    default_levels, scenario, scenario_table, simulate_dataset, RatingsTable,
};
use hetirr::evidence::{
    bayes_factor, bridge_logml_chains, inclusion_bf, posterior_model_probs, ModelEvidence,
};
use hetirr::likelihood::{marginal_loglik, ml_fit, reml_fit};
use hetirr::model::{
    enumerate_models, irr, Component, CovariateProfile, CovariateSchema, ModelSpec,
    ParameterVector, PriorConfig,
};
use hetirr::rng;
use hetirr::sampler::{sample_posterior, sample_target, LogDensity, SamplerConfig};
use hetirr::study::{
    bf_calibration, rmse_table, run_study, Method, Quantity, StudyPlan, StudyResults,
};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn pass(check: &str, started: Instant) {
    println!(
        "acceptance {check}: pass ({:.1} s)",
        started.elapsed().as_secs_f64()
    );
}

#[test]
fn a01_published_design_table_reproduces() {
    let started = Instant::now();
    // (label, IRR_1, IRR_2) as printed in the design table.
    let golden = [
        ("1", 0.45, 0.45),
        ("2", 0.50, 0.40),
        ("3", 0.40, 0.50),
        ("4.1", 0.45, 0.45),
        ("4.2", 0.55, 0.35),
        ("5", 0.45, 0.45),
        ("6", 0.50, 0.40),
        ("7", 0.40, 0.50),
        ("8.1", 0.45, 0.45),
        ("8.2", 0.55, 0.35),
    ];
    let table = scenario_table();
    assert_eq!(table.len(), golden.len());
    for (row, (label, irr1, irr2)) in table.iter().zip(golden) {
        assert_eq!(row.label, label);
        let i1: f64 = irr(row.sigma_gamma[0], row.sigma_epsilon[0]).unwrap();
        let i2: f64 = irr(row.sigma_gamma[1], row.sigma_epsilon[1]).unwrap();
        assert!((i1 - irr1).abs() <= 0.005, "scenario {label}: IRR_1 {i1}");
        assert!((i2 - irr2).abs() <= 0.005, "scenario {label}: IRR_2 {i2}");
        let mean_var = 0.5
            * ((row.sigma_gamma[0].powi(2) + row.sigma_epsilon[0].powi(2))
                + (row.sigma_gamma[1].powi(2) + row.sigma_epsilon[1].powi(2)));
        assert!(
            (mean_var - 1.0).abs() <= 0.015,
            "scenario {label}: mean variance {mean_var}"
        );
        let mean_irr = 0.5 * (i1 + i2);
        assert!(
            (mean_irr - 0.45).abs() <= 0.015,
            "scenario {label}: mean IRR {mean_irr}"
        );
    }
    pass("01 - published design table reproduces", started);
}

/// Joint log-density of one ratee's ratings under the dense
/// compound-symmetry covariance, written against nalgebra rather than
/// the closed form used by the crate.
fn dense_ratee_loglik(y: &[f64], mu: f64, sd_gamma: f64, sd_eps: f64) -> f64 {
    let j = y.len();
    let cov = DMatrix::from_fn(j, j, |r, c| {
        sd_gamma * sd_gamma + if r == c { sd_eps * sd_eps } else { 0.0 }
    });
    let chol = Cholesky::new(cov).expect("covariance is positive definite");
    let centered = DVector::from_iterator(j, y.iter().map(|v| v - mu));
    let solved = chol.solve(&centered);
    let logdet: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    -0.5 * (j as f64 * LN_2PI + logdet + centered.dot(&solved))
}

fn dot(beta: &[f64], x: &[f64]) -> f64 {
    beta.iter().zip(x).map(|(b, v)| b * v).sum()
}

#[test]
fn a02_likelihood_matches_dense_covariance_oracle() {
    let started = Instant::now();
    let mut r = rng::stream(0xACC2, 0);
    for trial in 0..200u64 {
        let arity = (rng::unit_open(&mut r) * 3.0) as usize; // 0, 1, or 2
        let schema = CovariateSchema::new(
            (0..arity).map(|k| format!("c{k}")).collect::<Vec<_>>(),
        )
        .unwrap();
        let n_ratees = 2 + (rng::unit_open(&mut r) * 5.0) as usize; // 2..=6
        let mut labels = Vec::new();
        let mut profiles = Vec::new();
        let mut ratings = Vec::new();
        for i in 0..n_ratees {
            let signs: Vec<bool> = (0..arity).map(|_| rng::unit_open(&mut r) < 0.5).collect();
            let j = 1 + (rng::unit_open(&mut r) * 5.0) as usize; // 1..=5
            labels.push(format!("r{i}"));
            profiles.push(CovariateProfile::from_signs(&signs));
            ratings.push(
                (0..j)
                    .map(|_| 1.5 * rng::standard_normal(&mut r))
                    .collect::<Vec<f64>>(),
            );
        }
        let table = RatingsTable::from_parts(
            schema,
            labels,
            profiles,
            ratings,
            default_levels(arity),
        )
        .unwrap();

        // Random model spec with coefficients only where included.
        let mut spec = ModelSpec::null(arity);
        let mut params = ParameterVector::intercepts(
            2.0 * rng::unit_open(&mut r) - 1.0,
            0.4 + rng::unit_open(&mut r),
            0.4 + rng::unit_open(&mut r),
            arity,
        );
        for component in [Component::Mean, Component::Structural, Component::Residual] {
            for k in 0..arity {
                if rng::unit_open(&mut r) < 0.5 {
                    spec = spec.with(component, k, true);
                    let value = 1.2 * rng::unit_open(&mut r) - 0.6;
                    match component {
                        Component::Mean => params.beta_mu[k] = value,
                        Component::Structural => params.beta_gamma[k] = value,
                        Component::Residual => params.beta_epsilon[k] = value,
                    }
                }
            }
        }

        let fast = marginal_loglik(&table, &spec, &params).unwrap();
        let mut oracle = 0.0;
        for i in 0..table.n_ratees() {
            let x = table.profile(i).values();
            let mu = params.alpha_mu + dot(&params.beta_mu, x);
            let sg = params.alpha_gamma * dot(&params.beta_gamma, x).exp();
            let se = params.alpha_epsilon * dot(&params.beta_epsilon, x).exp();
            oracle += dense_ratee_loglik(table.ratings(i), mu, sg, se);
        }
        assert!(
            (fast - oracle).abs() <= 1e-8,
            "trial {trial}: closed form {fast} vs dense {oracle}"
        );
    }
    pass("02 - likelihood matches the dense-covariance oracle", started);
}

/// Variance model with the mean pinned at zero: two free standard
/// deviations with half-normal priors, sampled on the log scale.
struct TwoSdTarget {
    table: RatingsTable,
}

fn half_normal_logpdf(x: f64) -> f64 {
    2.0f64.ln() - 0.5 * LN_2PI - 0.5 * x * x
}

impl LogDensity for TwoSdTarget {
    fn dim(&self) -> usize {
        2
    }
    fn log_density(&self, z: &[f64]) -> f64 {
        let (sg, se) = (z[0].exp(), z[1].exp());
        let params = ParameterVector::intercepts(0.0, sg, se, 0);
        match marginal_loglik(&self.table, &ModelSpec::null(0), &params) {
            // Half-normal priors plus the log-scale Jacobian.
            Ok(ll) => ll + half_normal_logpdf(sg) + half_normal_logpdf(se) + z[0] + z[1],
            Err(_) => f64::NEG_INFINITY,
        }
    }
}

/// Fixed-variance model with only the overall mean free, under a
/// standard normal prior; its marginal likelihood has a closed form.
struct MeanOnlyTarget {
    table: RatingsTable,
    sd_gamma: f64,
    sd_eps: f64,
}

impl LogDensity for MeanOnlyTarget {
    fn dim(&self) -> usize {
        1
    }
    fn log_density(&self, z: &[f64]) -> f64 {
        let params = ParameterVector::intercepts(z[0], self.sd_gamma, self.sd_eps, 0);
        match marginal_loglik(&self.table, &ModelSpec::null(0), &params) {
            Ok(ll) => ll - 0.5 * LN_2PI - 0.5 * z[0] * z[0],
            Err(_) => f64::NEG_INFINITY,
        }
    }
}

/// Simpson's rule over a square box on the log-SD plane.
fn simpson_2d(target: &TwoSdTarget, center: [f64; 2], half_width: f64, n: usize) -> f64 {
    let n = if n % 2 == 0 { n + 1 } else { n };
    let h = 2.0 * half_width / (n - 1) as f64;
    let weight = |i: usize| -> f64 {
        if i == 0 || i == n - 1 {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        }
    };
    let mut values = Vec::with_capacity(n * n);
    let mut max = f64::NEG_INFINITY;
    for i in 0..n {
        let z0 = center[0] - half_width + i as f64 * h;
        for j in 0..n {
            let z1 = center[1] - half_width + j as f64 * h;
            let lp = target.log_density(&[z0, z1]);
            values.push((i, j, lp));
            max = max.max(lp);
        }
    }
    let sum: f64 = values
        .iter()
        .map(|&(i, j, lp)| weight(i) * weight(j) * (lp - max).exp())
        .sum();
    max + (sum * h * h / 9.0).ln()
}

fn toy_table(n_ratees: usize, seed: u64) -> RatingsTable {
    let mut r = rng::stream(seed, 0);
    let mut labels = Vec::new();
    let mut profiles = Vec::new();
    let mut ratings = Vec::new();
    for i in 0..n_ratees {
        let effect = 0.7 * rng::standard_normal(&mut r);
        labels.push(format!("r{i}"));
        profiles.push(CovariateProfile::from_signs(&[]));
        ratings.push(
            (0..3)
                .map(|_| effect + 0.9 * rng::standard_normal(&mut r))
                .collect::<Vec<f64>>(),
        );
    }
    RatingsTable::from_parts(CovariateSchema::empty(), labels, profiles, ratings, vec![])
        .unwrap()
}

#[test]
fn a03_bridge_matches_quadrature_and_conjugate_closed_form() {
    let started = Instant::now();

    // Twenty two-free-parameter fits against adaptive refinement of a
    // Simpson grid.
    for t in 0..20u64 {
        let target = TwoSdTarget {
            table: toy_table(4 + (t % 5) as usize, 0xB0A + t),
        };
        let inits = vec![
            vec![-0.5, -0.5],
            vec![0.0, -0.3],
            vec![-0.3, 0.0],
            vec![-0.6, -0.1],
        ];
        let chains = sample_target(&target, &inits, 1000, 1500, 0.3, 7000 + t).unwrap();
        let bridge = bridge_logml_chains(&target, &chains, 8000 + t).unwrap();

        let coarse = simpson_2d(&target, [-0.3, -0.3], 6.0, 241);
        let fine = simpson_2d(&target, [-0.3, -0.3], 6.0, 481);
        assert!(
            (coarse - fine).abs() <= 1e-6,
            "fit {t}: quadrature has not converged ({coarse} vs {fine})"
        );
        assert!(
            (bridge.log_marglik - fine).abs() <= 0.05,
            "fit {t}: bridge {} vs quadrature {fine}",
            bridge.log_marglik
        );
    }

    // Mean-only toy with fixed variances: the marginal likelihood is a
    // zero-mean multivariate normal with a rank-one prior term.
    let table = toy_table(5, 0xC0FE);
    let (sd_gamma, sd_eps) = (0.6, 0.9);
    let n = table.n_ratings();
    let mut cov = DMatrix::from_element(n, n, 1.0); // prior variance of the mean
    let mut offset = 0;
    for i in 0..table.n_ratees() {
        let j = table.ratings(i).len();
        for a in 0..j {
            for b in 0..j {
                cov[(offset + a, offset + b)] += sd_gamma * sd_gamma;
            }
            cov[(offset + a, offset + a)] += sd_eps * sd_eps;
        }
        offset += j;
    }
    let y = DVector::from_iterator(
        n,
        (0..table.n_ratees()).flat_map(|i| table.ratings(i).to_vec()),
    );
    let chol = Cholesky::new(cov).unwrap();
    let solved = chol.solve(&y);
    let logdet: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let closed_form = -0.5 * (n as f64 * LN_2PI + logdet + y.dot(&solved));

    let target = MeanOnlyTarget {
        table,
        sd_gamma,
        sd_eps,
    };
    let inits = vec![vec![0.0], vec![0.3], vec![-0.3], vec![0.1]];
    let chains = sample_target(&target, &inits, 1000, 2000, 0.3, 0xD11).unwrap();
    let bridge = bridge_logml_chains(&target, &chains, 0xD12).unwrap();
    assert!(
        (bridge.log_marglik - closed_form).abs() <= 0.01,
        "bridge {} vs closed form {closed_form}",
        bridge.log_marglik
    );

    pass(
        "03 - bridge matches quadrature and the conjugate closed form",
        started,
    );
}

#[test]
fn a04_reml_equals_anova_moments_on_balanced_null_data() {
    let started = Instant::now();
    for s in 0..50u64 {
        let config = scenario("1").unwrap().with_design(30, 3, 0xE40 + s);
        let data = simulate_dataset(&config).unwrap();
        let fit = reml_fit(&data, &ModelSpec::null(1)).unwrap();
        assert!(fit.converged, "dataset {s}: REML did not converge");

        // One-way ANOVA method of moments on the balanced table.
        let i = data.n_ratees();
        let j = data.ratings(0).len();
        let grand: f64 = data.all_ratings().sum::<f64>() / data.n_ratings() as f64;
        let mut ssb = 0.0;
        let mut ssw = 0.0;
        for idx in 0..i {
            let y = data.ratings(idx);
            let mean: f64 = y.iter().sum::<f64>() / j as f64;
            ssb += (mean - grand).powi(2);
            ssw += y.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        }
        let msb = j as f64 * ssb / (i - 1) as f64;
        let msw = ssw / (i * (j - 1)) as f64;
        let var_eps = msw;
        let var_gamma = (msb - msw) / j as f64;
        assert!(var_gamma > 0.0, "dataset {s}: moment estimate at boundary");

        let fitted_eps = fit.estimates.alpha_epsilon.powi(2);
        let fitted_gamma = fit.estimates.alpha_gamma.powi(2);
        assert!(
            (fitted_eps - var_eps).abs() <= 1e-5,
            "dataset {s}: residual variance {fitted_eps} vs {var_eps}"
        );
        assert!(
            (fitted_gamma - var_gamma).abs() <= 1e-5,
            "dataset {s}: structural variance {fitted_gamma} vs {var_gamma}"
        );
    }
    pass("04 - REML equals ANOVA moments on balanced data", started);
}

/// The shared scaled-down study: a null scenario, a two-sided variance
/// scenario, and a mean-difference scenario across three group sizes.
/// Checks 05-07 all read from this single run.
fn shared_study() -> &'static StudyResults {
    static STUDY: OnceLock<StudyResults> = OnceLock::new();
    STUDY.get_or_init(|| {
        let plan = StudyPlan::new(
            &["1", "4.2", "5"],
            &[25, 50, 200],
            &[3],
            200,
            &[Method::Bf, Method::Bma],
            20260822,
        );
        run_study(&plan).expect("study runs")
    })
}

fn bf_accuracy(results: &StudyResults, scenario: &str, ratees: usize) -> f64 {
    let metrics = results.metrics().expect("metrics aggregate");
    let condition = metrics
        .conditions
        .iter()
        .find(|c| c.condition.scenario == scenario && c.condition.ratees_per_group == ratees)
        .expect("condition present");
    condition
        .methods
        .iter()
        .find(|m| m.method == Method::Bf)
        .expect("BF ran")
        .selection
        .accuracy
}

#[test]
fn a05_bf_selection_accuracy_grows_with_group_size() {
    let started = Instant::now();
    let results = shared_study();
    let at_50 = bf_accuracy(results, "4.2", 50);
    let at_200 = bf_accuracy(results, "4.2", 200);
    assert!(
        at_200 > at_50,
        "accuracy should increase with group size: {at_50} at 50 vs {at_200} at 200"
    );
    assert!(at_200 > 0.45, "accuracy at 200 ratees per group: {at_200}");
    pass("05 - BF selection accuracy grows with group size", started);
}

#[test]
fn a06_averaging_no_worse_than_selection_for_residual_sd() {
    let started = Instant::now();
    let results = shared_study();
    let rows = rmse_table(&results.records, Quantity::ResidualSd).unwrap();
    let rmse = |method: Method| {
        rows.iter()
            .find(|r| r.method == method && r.ratees_per_group == 25)
            .expect("pooled row present")
            .rmse
    };
    let selection = rmse(Method::Bf);
    let averaged = rmse(Method::Bma);
    assert!(
        averaged <= selection + 0.003,
        "residual-SD RMSE at 25 ratees per group: averaging {averaged} vs selection {selection}"
    );
    pass(
        "06 - model averaging no worse than selection for residual SD",
        started,
    );
}

#[test]
fn a07_inclusion_bf_calibration_is_safe() {
    let started = Instant::now();
    let results = shared_study();

    let rows = bf_calibration(&results.records).unwrap();
    assert_eq!(rows.len(), 6, "every (component, truth) class present");
    for row in &rows {
        assert!(
            row.misleading_strong < 0.02,
            "{:?} (difference = {}): misleading strong evidence rate {}",
            row.component,
            row.difference,
            row.misleading_strong
        );
    }

    let at_200: Vec<_> = results
        .records
        .iter()
        .filter(|r| r.condition.ratees_per_group == 200)
        .cloned()
        .collect();
    let rows = bf_calibration(&at_200).unwrap();
    let mean_diff = rows
        .iter()
        .find(|r| r.component == Component::Mean && r.difference)
        .expect("mean-difference class present");
    assert!(
        mean_diff.favoring >= 0.95,
        "mean-difference favoring rate at 200 ratees per group: {}",
        mean_diff.favoring
    );
    pass("07 - inclusion BF calibration is safe", started);
}

#[test]
fn a08_inclusion_bf_identities() {
    let started = Instant::now();
    let mut r = rng::stream(0xACC8, 0);
    let schema = CovariateSchema::new(vec!["g"]).unwrap();
    let specs = enumerate_models(&schema);

    for trial in 0..200 {
        let mut evidences: Vec<ModelEvidence> = specs
            .iter()
            .map(|s| {
                ModelEvidence::new(
                    s.clone(),
                    -40.0 * rng::unit_open(&mut r) - 5.0,
                    0.0,
                    1.0 / specs.len() as f64,
                )
            })
            .collect();
        posterior_model_probs(&mut evidences).unwrap();
        for component in [Component::Mean, Component::Structural, Component::Residual] {
            let result = inclusion_bf(&evidences, component, 0).unwrap();
            let odds_ratio = result.posterior_incl_odds / result.prior_incl_odds;
            assert!(
                (result.bf_inclusion - odds_ratio).abs() <= 1e-12 * odds_ratio.max(1.0),
                "trial {trial}: {} vs {odds_ratio}",
                result.bf_inclusion
            );
        }

        // With one model on each side of the partition the inclusion BF
        // reduces to the plain pairwise Bayes factor.
        let l0 = -35.0 * rng::unit_open(&mut r) - 5.0;
        let l1 = -35.0 * rng::unit_open(&mut r) - 5.0;
        let mut pair = vec![
            ModelEvidence::new(ModelSpec::null(1), l0, 0.0, 0.5),
            ModelEvidence::new(
                ModelSpec::null(1).with(Component::Residual, 0, true),
                l1,
                0.0,
                0.5,
            ),
        ];
        posterior_model_probs(&mut pair).unwrap();
        let result = inclusion_bf(&pair, Component::Residual, 0).unwrap();
        let pairwise = bayes_factor(l1, l0);
        assert!(
            (result.bf_inclusion - pairwise).abs() <= 1e-12 * pairwise.max(1.0),
            "trial {trial}: inclusion {} vs pairwise {pairwise}",
            result.bf_inclusion
        );
    }
    pass("08 - inclusion BF identities hold", started);
}

#[test]
fn a09_module_property_battery() {
    let started = Instant::now();
    let mut r = rng::stream(0xACC9, 0);

    // Information-criterion and pseudo-BMA weights stay on the simplex.
    for _ in 0..50 {
        let values: Vec<f64> = (0..6).map(|_| 200.0 * rng::unit_open(&mut r)).collect();
        for method in [WeightMethod::Aic, WeightMethod::Bic, WeightMethod::Waic] {
            ic_weights(&values, method).unwrap().validate().unwrap();
        }
        let elpd: Vec<f64> = values.iter().map(|v| -v).collect();
        pseudo_bma_weights(&elpd).unwrap().validate().unwrap();
    }

    // Stacking: simplex plus no vertex beats the optimum.
    for _ in 0..10 {
        let log_pred: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                (0..40)
                    .map(|_| -0.5 - 2.0 * rng::unit_open(&mut r))
                    .collect()
            })
            .collect();
        let weights = stacking_weights(&log_pred).unwrap();
        weights.validate().unwrap();
        let optimum = stacking_objective(&log_pred, &weights.weights).unwrap();
        for m in 0..log_pred.len() {
            let mut vertex = vec![0.0; log_pred.len()];
            vertex[m] = 1.0;
            let value = stacking_objective(&log_pred, &vertex).unwrap();
            assert!(
                optimum >= value - 1e-9,
                "vertex {m} beats the stacking optimum"
            );
        }
    }

    // Likelihood equivariance: permuting ratees and shifting every
    // rating act the way the model says they must.
    let config = scenario("2").unwrap().with_design(12, 3, 0xE09);
    let data = simulate_dataset(&config).unwrap();
    let spec = ModelSpec::null(1).with(Component::Residual, 0, true);
    let mut params = ParameterVector::intercepts(0.2, 0.7, 0.8, 1);
    params.beta_epsilon[0] = 0.3;
    let base = marginal_loglik(&data, &spec, &params).unwrap();
    let n = data.n_ratees();
    let order: Vec<usize> = (0..n).rev().collect();
    let permuted = RatingsTable::from_parts(
        data.schema().clone(),
        order.iter().map(|&i| format!("p{i}")).collect(),
        order.iter().map(|&i| data.profile(i).clone()).collect(),
        order.iter().map(|&i| data.ratings(i).to_vec()).collect(),
        vec![(data.levels(0).0.to_string(), data.levels(0).1.to_string())],
    )
    .unwrap();
    let shuffled = marginal_loglik(&permuted, &spec, &params).unwrap();
    assert!((base - shuffled).abs() <= 1e-12, "{base} vs {shuffled}");

    let shift = 1.3;
    let shifted = RatingsTable::from_parts(
        data.schema().clone(),
        (0..n).map(|i| format!("s{i}")).collect(),
        (0..n).map(|i| data.profile(i).clone()).collect(),
        (0..n)
            .map(|i| data.ratings(i).iter().map(|v| v + shift).collect())
            .collect(),
        vec![(data.levels(0).0.to_string(), data.levels(0).1.to_string())],
    )
    .unwrap();
    let fit = ml_fit(&data, &spec).unwrap();
    let fit_shifted = ml_fit(&shifted, &spec).unwrap();
    assert!(
        (fit_shifted.estimates.alpha_mu - fit.estimates.alpha_mu - shift).abs() <= 1e-4,
        "mean not equivariant under shift"
    );
    assert!(
        (fit_shifted.estimates.alpha_epsilon - fit.estimates.alpha_epsilon).abs() <= 1e-5,
        "residual SD changed under shift"
    );

    // Posterior mixtures land on each model with its assigned weight.
    let prior = PriorConfig::default();
    let sampler = SamplerConfig {
        chains: 4,
        warmup: 300,
        draws_per_chain: 300,
        seed: 0xF00,
        ..SamplerConfig::default()
    };
    let null_spec = ModelSpec::null(1);
    let fits = vec![
        sample_posterior(&data, &null_spec, &prior, &sampler).unwrap(),
        sample_posterior(&data, &spec, &prior, &sampler).unwrap(),
    ];
    let weights = WeightVector {
        method: WeightMethod::Bma,
        weights: vec![0.25, 0.75],
        flagged: false,
    };
    let total = 4000;
    let mixed = bma_mix(&fits, &weights, total, 0xF01).unwrap();
    let from_second = mixed.model_index.iter().filter(|&&m| m == 1).count() as f64;
    let expected = 0.75 * total as f64;
    let sigma = (total as f64 * 0.75 * 0.25).sqrt();
    assert!(
        (from_second - expected).abs() <= 3.0 * sigma,
        "mixture frequency {from_second} vs expected {expected}"
    );

    // Identical seeds give identical studies.
    let mut plan = StudyPlan::new(&["2"], &[25], &[3], 2, &[Method::Bf], 0xF02);
    plan.sampler.warmup = 300;
    plan.sampler.draws_per_chain = 300;
    let first = run_study(&plan).unwrap();
    let second = run_study(&plan).unwrap();
    assert!(first.records == second.records, "study runs diverged");

    pass("09 - module property battery holds", started);
}
