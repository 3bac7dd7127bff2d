//! Rating-data ingestion, validation, and synthetic data generation.
//!
//! The on-disk format is long-format CSV with a header: one row per
//! rating, columns `ratee` (any string or integer key), `rating`
//! (decimal), and one column per binary covariate carrying exactly two
//! distinct string labels. The lexicographically smaller label is
//! effect-coded -0.5, the larger +0.5.
//!
//! Synthetic data comes either from [`simulate_dataset`] (the two-group
//! designs of the simulation study, see [`scenario_table`]) or from
//! [`simulate_from_params`] (arbitrary covariate arity from an explicit
//! parameter vector). Both draw one RNG substream per ratee so parallel
//! replication stays reproducible.

use std::collections::BTreeSet;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{CovariateProfile, CovariateSchema, ParameterVector};
use crate::rng;

/// A validated long-format rating table.
///
/// Ratings are grouped by ratee; every ratee has at least one finite
/// rating and exactly one covariate profile.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsTable {
    schema: CovariateSchema,
    ratee_labels: Vec<String>,
    profiles: Vec<CovariateProfile<f64>>,
    ratings: Vec<Vec<f64>>,
    /// Per covariate, the labels mapped to (-0.5, +0.5).
    levels: Vec<(String, String)>,
}

/// Observed covariate profiles and the ratee-to-profile assignment.
///
/// Profiles appear in canonical order (covariate 0 varying fastest, -0.5
/// before +0.5) restricted to those actually observed, so the partition is
/// invariant under reordering of ratees.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfilePartition {
    pub profiles: Vec<CovariateProfile<f64>>,
    /// For each ratee, index into `profiles`.
    pub ratee_profile: Vec<usize>,
    /// Number of ratees per profile.
    pub counts: Vec<usize>,
}

impl RatingsTable {
    /// Assemble a table from parts, enforcing the invariants.
    ///
    /// `levels[k]` gives the two labels of covariate `k` in coding order
    /// `(label at -0.5, label at +0.5)`; pass the defaults from
    /// [`default_levels`] when no labels exist.
    pub fn from_parts(
        schema: CovariateSchema,
        ratee_labels: Vec<String>,
        profiles: Vec<CovariateProfile<f64>>,
        ratings: Vec<Vec<f64>>,
        levels: Vec<(String, String)>,
    ) -> Result<Self> {
        if ratee_labels.len() != profiles.len() || ratee_labels.len() != ratings.len() {
            return Err(Error::Validation(
                "ratee labels, profiles, and rating groups must have equal length".into(),
            ));
        }
        if ratee_labels.is_empty() {
            return Err(Error::Validation("table contains no ratees".into()));
        }
        for (i, label) in ratee_labels.iter().enumerate() {
            if label.is_empty() {
                return Err(Error::Validation("ratee keys must be nonempty".into()));
            }
            if ratee_labels[..i].contains(label) {
                return Err(Error::Validation(format!("duplicate ratee key `{label}`")));
            }
        }
        for (label, profile) in ratee_labels.iter().zip(&profiles) {
            if profile.len() != schema.arity() {
                return Err(Error::Validation(format!(
                    "ratee `{label}` has a profile of arity {} but the schema has {} covariates",
                    profile.len(),
                    schema.arity()
                )));
            }
        }
        for (label, rs) in ratee_labels.iter().zip(&ratings) {
            if rs.is_empty() {
                return Err(Error::Validation(format!("ratee `{label}` has no ratings")));
            }
            if rs.iter().any(|r| !r.is_finite()) {
                return Err(Error::Validation(format!(
                    "ratee `{label}` has a non-finite rating"
                )));
            }
        }
        if levels.len() != schema.arity() {
            return Err(Error::Validation(
                "need one label pair per covariate".into(),
            ));
        }
        for ((lo, hi), name) in levels.iter().zip(schema.names()) {
            if lo >= hi {
                return Err(Error::Validation(format!(
                    "labels of covariate `{name}` must be distinct and in coding order"
                )));
            }
        }
        Ok(Self {
            schema,
            ratee_labels,
            profiles,
            ratings,
            levels,
        })
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    /// Number of ratees I.
    pub fn n_ratees(&self) -> usize {
        self.ratee_labels.len()
    }

    /// Total number of ratings N.
    pub fn n_ratings(&self) -> usize {
        self.ratings.iter().map(Vec::len).sum()
    }

    pub fn ratee_label(&self, i: usize) -> &str {
        &self.ratee_labels[i]
    }

    pub fn ratings(&self, i: usize) -> &[f64] {
        &self.ratings[i]
    }

    pub fn profile(&self, i: usize) -> &CovariateProfile<f64> {
        &self.profiles[i]
    }

    /// Label pair of covariate `k` in coding order (-0.5 label first).
    pub fn levels(&self, k: usize) -> (&str, &str) {
        (&self.levels[k].0, &self.levels[k].1)
    }

    /// Group the ratees by their observed covariate profile.
    pub fn partition(&self) -> ProfilePartition {
        let mut keys: Vec<usize> = self
            .profiles
            .iter()
            .map(|p| {
                p.values()
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| usize::from(v > 0.0) << k)
                    .sum()
            })
            .collect();
        let distinct: BTreeSet<usize> = keys.iter().copied().collect();
        let distinct: Vec<usize> = distinct.into_iter().collect();
        for key in &mut keys {
            *key = distinct.binary_search(key).unwrap();
        }
        let mut counts = vec![0usize; distinct.len()];
        let mut profiles = vec![None; distinct.len()];
        for (i, &k) in keys.iter().enumerate() {
            counts[k] += 1;
            profiles[k].get_or_insert_with(|| self.profiles[i].clone());
        }
        ProfilePartition {
            profiles: profiles.into_iter().map(Option::unwrap).collect(),
            ratee_profile: keys,
            counts,
        }
    }

    /// All ratings in ratee order.
    pub fn all_ratings(&self) -> impl Iterator<Item = f64> + '_ {
        self.ratings.iter().flatten().copied()
    }

    /// Write the table as long-format CSV (inverse of [`load_csv`]).
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut header = vec!["ratee".to_string(), "rating".to_string()];
        header.extend(self.schema.names().iter().cloned());
        writeln!(file, "{}", header.join(","))?;
        for i in 0..self.n_ratees() {
            let labels: Vec<&str> = self.profiles[i]
                .values()
                .iter()
                .zip(&self.levels)
                .map(|(&v, (lo, hi))| if v > 0.0 { hi.as_str() } else { lo.as_str() })
                .collect();
            for r in &self.ratings[i] {
                write!(file, "{},{r}", self.ratee_labels[i])?;
                for l in &labels {
                    write!(file, ",{l}")?;
                }
                writeln!(file)?;
            }
        }
        file.flush()?;
        Ok(())
    }
}

/// Placeholder label pairs (`a` -> -0.5, `b` -> +0.5) for synthetic tables.
pub fn default_levels(arity: usize) -> Vec<(String, String)> {
    vec![("a".to_string(), "b".to_string()); arity]
}

/// Read a long-format CSV file against a covariate schema.
///
/// Each covariate column must show exactly two distinct labels across the
/// file; the lexicographically smaller one is coded -0.5. Covariate values
/// must be constant within a ratee.
pub fn load_csv(path: impl AsRef<Path>, schema: &CovariateSchema) -> Result<RatingsTable> {
    let mut reader = csv::ReaderBuilder::new().from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let position_of = |name: &str| headers.iter().position(|h| h == name);
    let ratee_col = position_of("ratee")
        .ok_or_else(|| Error::Schema("missing required column `ratee`".into()))?;
    let rating_col = position_of("rating")
        .ok_or_else(|| Error::Schema("missing required column `rating`".into()))?;
    let cov_cols: Vec<usize> = schema
        .names()
        .iter()
        .map(|name| {
            position_of(name)
                .ok_or_else(|| Error::Schema(format!("missing covariate column `{name}`")))
        })
        .collect::<Result<_>>()?;

    let mut ratee_labels: Vec<String> = Vec::new();
    let mut ratee_covs: Vec<Vec<String>> = Vec::new();
    let mut ratings: Vec<Vec<f64>> = Vec::new();

    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let ratee = record
            .get(ratee_col)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::Parse {
                line,
                message: "empty ratee key".into(),
            })?
            .to_string();
        let raw_rating = record.get(rating_col).unwrap_or("");
        let rating: f64 = raw_rating.trim().parse().map_err(|_| Error::Parse {
            line,
            message: format!("rating `{raw_rating}` is not a number"),
        })?;
        if !rating.is_finite() {
            return Err(Error::Parse {
                line,
                message: format!("rating `{raw_rating}` is not finite"),
            });
        }
        let covs: Vec<String> = cov_cols
            .iter()
            .zip(schema.names())
            .map(|(&c, name)| {
                record
                    .get(c)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .ok_or_else(|| Error::Parse {
                        line,
                        message: format!("empty value for covariate `{name}`"),
                    })
            })
            .collect::<Result<_>>()?;

        match ratee_labels.iter().position(|l| *l == ratee) {
            Some(i) => {
                if ratee_covs[i] != covs {
                    return Err(Error::Validation(format!(
                        "ratee `{ratee}` has inconsistent covariate values \
                         ({:?} vs {:?})",
                        ratee_covs[i], covs
                    )));
                }
                ratings[i].push(rating);
            }
            None => {
                ratee_labels.push(ratee);
                ratee_covs.push(covs);
                ratings.push(vec![rating]);
            }
        }
    }
    if ratee_labels.is_empty() {
        return Err(Error::Validation("file contains no data rows".into()));
    }

    // Establish the two labels of every covariate and their coding.
    let mut levels: Vec<(String, String)> = Vec::with_capacity(schema.arity());
    for (k, name) in schema.names().iter().enumerate() {
        let observed: BTreeSet<&str> = ratee_covs.iter().map(|c| c[k].as_str()).collect();
        let observed: Vec<&str> = observed.into_iter().collect();
        if observed.len() != 2 {
            return Err(Error::Validation(format!(
                "covariate `{name}` must have exactly two levels, found {}: {:?}",
                observed.len(),
                observed
            )));
        }
        levels.push((observed[0].to_string(), observed[1].to_string()));
    }
    let profiles: Vec<CovariateProfile<f64>> = ratee_covs
        .iter()
        .map(|covs| {
            CovariateProfile::from_signs(
                &covs
                    .iter()
                    .zip(&levels)
                    .map(|(v, (_, hi))| v == hi)
                    .collect::<Vec<_>>(),
            )
        })
        .collect();

    RatingsTable::from_parts(schema.clone(), ratee_labels, profiles, ratings, levels)
}

/// One two-group data-generating design of the simulation study.
///
/// Group 1 is coded -0.5 and group 2 is coded +0.5 on the single `group`
/// covariate. `ratees_per_group`, `ratings_per_ratee`, and `seed` are left
/// zero by [`scenario_table`]; fill them with [`ScenarioConfig::with_design`]
/// before simulating.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScenarioConfig {
    pub label: String,
    pub mu: [f64; 2],
    pub sigma_gamma: [f64; 2],
    pub sigma_epsilon: [f64; 2],
    pub ratees_per_group: usize,
    pub ratings_per_ratee: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn with_design(mut self, ratees_per_group: usize, ratings_per_ratee: usize, seed: u64) -> Self {
        self.ratees_per_group = ratees_per_group;
        self.ratings_per_ratee = ratings_per_ratee;
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratees_per_group < 1 || self.ratings_per_ratee < 1 {
            return Err(Error::Validation(
                "need at least one ratee per group and one rating per ratee".into(),
            ));
        }
        if self.mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::Domain("group means must be finite".into()));
        }
        if self.sigma_gamma.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::Domain("structural SDs must be nonnegative".into()));
        }
        if self.sigma_epsilon.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Domain("residual SDs must be strictly positive".into()));
        }
        Ok(())
    }

    /// Which model effects are truly present: per-component flags for the
    /// `group` covariate (mean, structural, residual).
    pub fn true_effects(&self) -> [bool; 3] {
        [
            self.mu[0] != self.mu[1],
            self.sigma_gamma[0] != self.sigma_gamma[1],
            self.sigma_epsilon[0] != self.sigma_epsilon[1],
        ]
    }
}

/// The ten data-generating designs of the simulation study, keyed
/// "1".."8.2". Sample sizes and seeds are left unset.
pub fn scenario_table() -> Vec<ScenarioConfig> {
    let row = |label: &str, mu1: f64, mu2: f64, sg1: f64, sg2: f64, se1: f64, se2: f64| {
        ScenarioConfig {
            label: label.to_string(),
            mu: [mu1, mu2],
            sigma_gamma: [sg1, sg2],
            sigma_epsilon: [se1, se2],
            ratees_per_group: 0,
            ratings_per_ratee: 0,
            seed: 0,
        }
    };
    vec![
        row("1", 0.00, 0.00, 0.67, 0.67, 0.74, 0.74),
        row("2", 0.00, 0.00, 0.67, 0.67, 0.67, 0.82),
        row("3", 0.00, 0.00, 0.60, 0.74, 0.74, 0.74),
        row("4.1", 0.00, 0.00, 0.60, 0.73, 0.66, 0.81),
        row("4.2", 0.00, 0.00, 0.73, 0.60, 0.66, 0.81),
        row("5", -0.20, 0.20, 0.67, 0.67, 0.74, 0.74),
        row("6", -0.20, 0.20, 0.67, 0.67, 0.67, 0.82),
        row("7", -0.20, 0.20, 0.60, 0.74, 0.74, 0.74),
        row("8.1", -0.20, 0.20, 0.60, 0.73, 0.66, 0.81),
        row("8.2", -0.20, 0.20, 0.73, 0.60, 0.66, 0.81),
    ]
}

/// Look up a scenario by its label.
pub fn scenario(label: &str) -> Option<ScenarioConfig> {
    scenario_table().into_iter().find(|s| s.label == label)
}

/// Draw a two-group dataset from a scenario design.
///
/// Ratee `i` of group `g` uses RNG substream `g * I + i` of the seed, so
/// tables are bit-identical across runs and thread counts.
pub fn simulate_dataset(config: &ScenarioConfig) -> Result<RatingsTable> {
    config.validate()?;
    let schema = CovariateSchema::new(vec!["group"])?;
    let i_per_group = config.ratees_per_group;
    let mut labels = Vec::with_capacity(2 * i_per_group);
    let mut profiles = Vec::with_capacity(2 * i_per_group);
    let mut ratings = Vec::with_capacity(2 * i_per_group);
    for g in 0..2 {
        for i in 0..i_per_group {
            let idx = g * i_per_group + i;
            let mut rng = rng::stream(config.seed, idx as u64);
            let gamma = rng::normal(&mut rng, 0.0, config.sigma_gamma[g]);
            let ratee: Vec<f64> = (0..config.ratings_per_ratee)
                .map(|_| config.mu[g] + gamma + rng::normal(&mut rng, 0.0, config.sigma_epsilon[g]))
                .collect();
            labels.push((idx + 1).to_string());
            profiles.push(CovariateProfile::from_signs(&[g == 1]));
            ratings.push(ratee);
        }
    }
    RatingsTable::from_parts(
        schema,
        labels,
        profiles,
        ratings,
        vec![("g1".to_string(), "g2".to_string())],
    )
}

/// Draw a dataset over the full covariate grid from an explicit parameter
/// vector: `ratees_per_cell` ratees in each of the 2^K profile cells.
///
/// Covariate `k` carries labels `a`/`b` (coded -0.5/+0.5). One RNG
/// substream per ratee, numbered cell-by-cell.
pub fn simulate_from_params(
    schema: &CovariateSchema,
    params: &ParameterVector<f64>,
    ratees_per_cell: usize,
    ratings_per_ratee: usize,
    seed: u64,
) -> Result<RatingsTable> {
    if ratees_per_cell < 1 || ratings_per_ratee < 1 {
        return Err(Error::Validation(
            "need at least one ratee per cell and one rating per ratee".into(),
        ));
    }
    if params.arity() != schema.arity() {
        return Err(Error::Validation(
            "parameter vector arity does not match the schema".into(),
        ));
    }
    let cells = CovariateProfile::<f64>::all(schema.arity());
    let mut labels = Vec::new();
    let mut profiles = Vec::new();
    let mut ratings = Vec::new();
    for (c, cell) in cells.iter().enumerate() {
        let mu = crate::model::linked_mean(params.alpha_mu, &params.beta_mu, cell);
        let sd_gamma = crate::model::linked_sd(params.alpha_gamma, &params.beta_gamma, cell)?;
        let sd_epsilon = crate::model::linked_sd(params.alpha_epsilon, &params.beta_epsilon, cell)?;
        for i in 0..ratees_per_cell {
            let idx = c * ratees_per_cell + i;
            let mut rng = rng::stream(seed, idx as u64);
            let gamma = rng::normal(&mut rng, 0.0, sd_gamma);
            let ratee: Vec<f64> = (0..ratings_per_ratee)
                .map(|_| mu + gamma + rng::normal(&mut rng, 0.0, sd_epsilon))
                .collect();
            labels.push((idx + 1).to_string());
            profiles.push(cell.clone());
            ratings.push(ratee);
        }
    }
    RatingsTable::from_parts(
        schema.clone(),
        labels,
        profiles,
        ratings,
        default_levels(schema.arity()),
    )
}

/// Redraw every rating in `data` from `params`, keeping the design fixed:
/// same ratees, covariate profiles, and per-ratee rating counts. This is
/// the parametric-bootstrap companion to a fitted model. Ratee `i` uses
/// RNG substream `i` of `seed`.
pub fn resample_table(
    data: &RatingsTable,
    params: &ParameterVector<f64>,
    seed: u64,
) -> Result<RatingsTable> {
    if params.arity() != data.schema().arity() {
        return Err(Error::Validation(
            "parameter vector arity does not match the table".into(),
        ));
    }
    let mut ratings = Vec::with_capacity(data.n_ratees());
    for i in 0..data.n_ratees() {
        let profile = data.profile(i);
        let mu = crate::model::linked_mean(params.alpha_mu, &params.beta_mu, profile);
        let sd_gamma = crate::model::linked_sd(params.alpha_gamma, &params.beta_gamma, profile)?;
        let sd_epsilon =
            crate::model::linked_sd(params.alpha_epsilon, &params.beta_epsilon, profile)?;
        let mut rng = rng::stream(seed, i as u64);
        let gamma = rng::normal(&mut rng, 0.0, sd_gamma);
        ratings.push(
            (0..data.ratings(i).len())
                .map(|_| mu + gamma + rng::normal(&mut rng, 0.0, sd_epsilon))
                .collect(),
        );
    }
    RatingsTable::from_parts(
        data.schema().clone(),
        (0..data.n_ratees())
            .map(|i| data.ratee_label(i).to_string())
            .collect(),
        (0..data.n_ratees()).map(|i| data.profile(i).clone()).collect(),
        ratings,
        (0..data.schema().arity())
            .map(|k| {
                let (lo, hi) = data.levels(k);
                (lo.to_string(), hi.to_string())
            })
            .collect(),
    )
}
