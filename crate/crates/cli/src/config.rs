//! Experiment configuration: a flat record merged from an optional JSON
//! file and command-line overrides, embedded verbatim in every report.

use std::path::{Path, PathBuf};

use pomdp_lab::basecamp::{theoretical_params, HyperParams, ParamsMode};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params_mode: Option<ParamsMode>,
    #[serde(default, rename = "L", skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    #[serde(default, rename = "N0", skip_serializing_if = "Option::is_none")]
    pub n0: Option<u64>,
    #[serde(default, rename = "N1", skip_serializing_if = "Option::is_none")]
    pub n1: Option<u64>,
    #[serde(default, rename = "K", skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episodes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_star: Option<f64>,
    /// Margin used by theoretical mode; measured from the model if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Step at which contraction or spanner diagnostics are taken.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    /// Window lengths for contraction profiles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub windows: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Reads either a bare config or a report that embeds one under
    /// `"config"`.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("config {}: {e}", path.display())))?;
        let inner = match value.get("config") {
            Some(c) if value.get("format_version").is_some() => c.clone(),
            _ => value,
        };
        serde_json::from_value(inner).map_err(|e| CliError::config(format!("config {}: {e}", path.display())))
    }

    /// Fields set in `other` win.
    pub fn merge(mut self, other: ExperimentConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => {$(if other.$f.is_some() { self.$f = other.$f; })*};
        }
        take!(model, seed, params_mode, window, n0, n1, iterations, alpha, beta, episodes, c_star, gamma, step, windows, policy);
        self
    }

    pub fn model_path(&self) -> Result<&Path, CliError> {
        let p = self
            .model
            .as_deref()
            .ok_or_else(|| CliError::config("no model given (use --model)"))?;
        if !p.exists() {
            return Err(CliError::config(format!("model file {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// SHA-256 of the config's canonical JSON.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Learning hyperparameters: practical defaults plus overrides, or the
    /// literal theoretical formulas.
    pub fn hyper_params(&self, gamma: impl FnOnce() -> Result<f64, CliError>, dims: (usize, usize, usize, usize)) -> Result<HyperParams, CliError> {
        let alpha = self.alpha.unwrap_or(0.1);
        let beta = self.beta.unwrap_or(0.1);
        let mut params = match self.params_mode.unwrap_or(ParamsMode::Practical) {
            ParamsMode::Practical => HyperParams::practical(
                self.window.unwrap_or(1),
                self.n0.unwrap_or(10_000),
                self.n1.unwrap_or(100),
                self.iterations.unwrap_or(4),
                alpha,
                beta,
            ),
            ParamsMode::Theoretical => {
                let g = match self.gamma {
                    Some(g) => g,
                    None => gamma()?,
                };
                if !(g > 0.0) {
                    return Err(CliError::config("theoretical mode needs a positive margin"));
                }
                let (s, a, o, h) = dims;
                let mut p = theoretical_params(alpha, beta, g, s, a, o, h, self.c_star.unwrap_or(1.0));
                if let Some(l) = self.window {
                    p.window = l;
                }
                if let Some(n) = self.n0 {
                    p.n0 = n as f64;
                }
                if let Some(n) = self.n1 {
                    p.n1 = n as f64;
                }
                if let Some(k) = self.iterations {
                    p.iterations = k;
                }
                p
            }
        };
        params.eval_episodes = self.episodes;
        params.validate().map_err(CliError::from)?;
        Ok(params)
    }
}
