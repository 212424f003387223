use std::path::{Path, PathBuf};

use anyhow::Context;
use cascade_core::engine::Mode;
use cascade_core::Policy;
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

/// Everything a run depends on. Loaded from a TOML file and then overlaid
/// with command-line flags; the resolved form is what goes into a manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bundle: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instances: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictions: Option<Vec<PathBuf>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profiles: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_bundle: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub models: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<Policy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policies: Option<Vec<Policy>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bands: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_cap: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heuristic_invert: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heuristic_max_length: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_instance_cost: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<usize>,
    /// BERT size names, cheapest first.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variants: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sharpness: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub churn: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seq_len: Option<u32>,
}

macro_rules! overlay {
    ($base:expr, $top:expr; $($field:ident),* $(,)?) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field; } )*
    };
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(Failure::Config)?;
        toml::from_str(&text).map_err(|e| {
            Failure::Config(anyhow::anyhow!(
                "{}: {}",
                path.display(),
                e.to_string().trim_end()
            ))
        })
    }

    /// Fields set in `top` replace those in `self`.
    pub fn overlay(mut self, top: RunConfig) -> Self {
        overlay!(self, top; bundle, instances, predictions, profiles, test_bundle, models, policy, policies,
            mode, thresholds, bands, seed, grid_points, grid_cap, budget, heuristic_invert,
            heuristic_max_length, per_instance_cost);
        match (&mut self.synth, top.synth) {
            (Some(base), Some(top)) => {
                overlay!(base, top; n, labels, variants, targets, sharpness, churn, seq_len);
            }
            (None, Some(top)) => self.synth = Some(top),
            _ => {}
        }
        self
    }

    pub fn policy(&self) -> Policy {
        self.policy.unwrap_or(Policy::MaxProb)
    }

    pub fn mode(&self) -> Mode {
        self.mode.unwrap_or_default()
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn grid_points(&self) -> usize {
        self.grid_points.unwrap_or(21)
    }

    pub fn grid_cap(&self) -> usize {
        self.grid_cap
            .unwrap_or(cascade_core::sweep::DEFAULT_GRID_CAP)
    }
}
