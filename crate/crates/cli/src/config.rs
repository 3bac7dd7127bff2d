//! Flag/file configuration merging.
//!
//! Every flag has a flat key of the same name in the optional JSON
//! config file; flags override the file, and defaults fill the rest.

use std::path::PathBuf;

use serde::Deserialize;

use crate::CliError;

/// Flat JSON mirror of the command-line flags.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub covariates: Option<String>,
    #[serde(rename = "mean-covariates")]
    pub mean_covariates: Option<String>,
    pub prior: Option<String>,
    pub chains: Option<usize>,
    pub warmup: Option<usize>,
    pub draws: Option<usize>,
    pub methods: Option<String>,
    pub scenarios: Option<String>,
    #[serde(rename = "I")]
    pub ratees: Option<String>,
    #[serde(rename = "J")]
    pub ratings: Option<String>,
    pub replications: Option<usize>,
    pub full: Option<bool>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: Option<&PathBuf>) -> Result<FileConfig, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("could not read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("could not parse {}: {e}", path.display())))
    }
}

/// Split a comma-separated flag value into trimmed, nonempty items.
pub fn split_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

pub fn parse_on_off(value: &str) -> Result<bool, CliError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "on" | "true" | "yes" => Ok(true),
        "off" | "false" | "no" => Ok(false),
        other => Err(CliError::Config(format!(
            "expected on or off, got `{other}`"
        ))),
    }
}

/// A prior preset name or an explicit coefficient scale.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorChoice {
    pub label: String,
    pub sigma_beta: f64,
}

pub fn parse_priors(value: &str) -> Result<Vec<PriorChoice>, CliError> {
    let items = split_list(value);
    if items.is_empty() {
        return Err(CliError::Config("empty prior list".into()));
    }
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        let sigma_beta = match item.as_str() {
            "small" => 0.25,
            "medium" => 0.5,
            "large" => 1.0,
            other => {
                let v: f64 = other.parse().map_err(|_| {
                    CliError::Config(format!(
                        "prior must be small, medium, large, or a positive number, got `{other}`"
                    ))
                })?;
                if !v.is_finite() || v <= 0.0 {
                    return Err(CliError::Config(format!(
                        "prior scale must be positive and finite, got {v}"
                    )));
                }
                v
            }
        };
        let choice = PriorChoice {
            label: item,
            sigma_beta,
        };
        if !out.contains(&choice) {
            out.push(choice);
        }
    }
    Ok(out)
}

pub fn parse_usize_list(value: &str, what: &str) -> Result<Vec<usize>, CliError> {
    split_list(value)
        .iter()
        .map(|s| {
            s.parse()
                .map_err(|_| CliError::Config(format!("invalid {what}: `{s}`")))
        })
        .collect()
}
