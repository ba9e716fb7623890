//! Pipeline configuration shared by the CLI, the config file and the HTTP API.
//!
//! The JSON schema uses flat keys; every key has a matching CLI flag with
//! underscores turned into dashes (`grid_spacing` is `--grid-spacing`).

use std::path::{Path, PathBuf};

use cofkit_core::cooc::DEFAULT_EPSILON;
use cofkit_core::filter::{default_sigma_s, FilterParams, IterationMode, DEFAULT_MASK_THRESHOLD, DEFAULT_SCRIBBLE_ITERATIONS, DEFAULT_WINDOW};
use cofkit_core::quantize::{DEFAULT_GRID_SPACING, DEFAULT_K, DEFAULT_SEED, MAX_CLUSTERS};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_WINDOW: usize = 50;
pub const MAX_ITERATIONS: usize = 100;
pub const MAX_SCRIBBLE_ITERATIONS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid configuration: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Palette size.
    pub k: usize,
    /// Pixel stride of the k-means sample grid.
    pub grid_spacing: usize,
    /// Window radius; 7 gives a 15x15 window.
    pub window: usize,
    /// Spatial Gaussian variance, used for both collection and filtering.
    pub sigma_s2: f64,
    /// Cluster affinity bandwidth in Lab units. `None` derives it from the
    /// palette; `0` keeps hard assignments.
    pub sigma_r: Option<f64>,
    pub epsilon: f64,
    pub iterations: usize,
    pub mode: IterationMode,
    pub seed: u64,
    /// Gray PNG; statistics are collected where it is at least half bright.
    pub region_mask: Option<PathBuf>,
    /// Reuse a dumped matrix and its palette instead of learning one.
    pub matrix_in: Option<PathBuf>,
    pub matrix_out: Option<PathBuf>,
    /// Pixels whose propagated foreground level reaches this join the mask.
    pub mask_threshold: f64,
    /// Solver iteration cap for scribble propagation.
    pub scribble_iterations: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let s = default_sigma_s();
        Self {
            k: DEFAULT_K,
            grid_spacing: DEFAULT_GRID_SPACING,
            window: DEFAULT_WINDOW,
            sigma_s2: s * s,
            sigma_r: None,
            epsilon: DEFAULT_EPSILON,
            iterations: 1,
            mode: IterationMode::Iterative,
            seed: DEFAULT_SEED,
            region_mask: None,
            matrix_in: None,
            matrix_out: None,
            mask_threshold: DEFAULT_MASK_THRESHOLD,
            scribble_iterations: DEFAULT_SCRIBBLE_ITERATIONS,
        }
    }
}

/// Keys that name local files and are therefore not accepted over HTTP.
pub const PATH_KEYS: [&str; 3] = ["region_mask", "matrix_in", "matrix_out"];

impl PipelineConfig {
    pub fn from_json(s: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies a partial JSON object on top of this config.
    pub fn merged(&self, patch: &serde_json::Value) -> Result<Self, ConfigError> {
        let patch = patch
            .as_object()
            .ok_or_else(|| ConfigError("expected a JSON object".into()))?;
        let mut base = serde_json::to_value(self).expect("config serializes");
        let fields = base.as_object_mut().expect("config is an object");
        for (key, value) in patch {
            if !fields.contains_key(key) {
                return Err(ConfigError(format!("unknown key `{key}`")));
            }
            fields.insert(key.clone(), value.clone());
        }
        let cfg: Self = serde_json::from_value(base).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError(msg));
        if !(1..=MAX_CLUSTERS).contains(&self.k) {
            return fail(format!("k = {} outside 1..={MAX_CLUSTERS}", self.k));
        }
        if self.grid_spacing == 0 {
            return fail("grid_spacing must be at least 1".into());
        }
        if self.window > MAX_WINDOW {
            return fail(format!("window = {} exceeds {MAX_WINDOW}", self.window));
        }
        if !(self.sigma_s2.is_finite() && self.sigma_s2 > 0.0) {
            return fail(format!("sigma_s2 = {} must be positive", self.sigma_s2));
        }
        if let Some(r) = self.sigma_r {
            if !(r.is_finite() && r >= 0.0) {
                return fail(format!("sigma_r = {r} must be finite and >= 0"));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return fail(format!("epsilon = {} must be positive", self.epsilon));
        }
        if self.iterations > MAX_ITERATIONS {
            return fail(format!("iterations = {} exceeds {MAX_ITERATIONS}", self.iterations));
        }
        if !(0.0..=1.0).contains(&self.mask_threshold) {
            return fail(format!("mask_threshold = {} outside [0, 1]", self.mask_threshold));
        }
        if !(1..=MAX_SCRIBBLE_ITERATIONS).contains(&self.scribble_iterations) {
            return fail(format!(
                "scribble_iterations = {} outside 1..={MAX_SCRIBBLE_ITERATIONS}",
                self.scribble_iterations
            ));
        }
        Ok(())
    }

    pub fn sigma_s(&self) -> f64 {
        self.sigma_s2.sqrt()
    }

    pub fn filter_params(&self) -> FilterParams {
        FilterParams {
            iterations: self.iterations,
            mode: self.mode,
            ..FilterParams::with_window(self.window, self.sigma_s())
        }
    }
}

/// Flag form of [`PipelineConfig`]; set flags override the config file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct ConfigFlags {
    /// JSON config file; flags given on the command line take precedence
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub grid_spacing: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub sigma_s2: Option<f64>,
    #[arg(long)]
    pub sigma_r: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<IterationMode>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "PNG")]
    pub region_mask: Option<PathBuf>,
    #[arg(long, value_name = "JSON")]
    pub matrix_in: Option<PathBuf>,
    #[arg(long, value_name = "JSON")]
    pub matrix_out: Option<PathBuf>,
    #[arg(long)]
    pub mask_threshold: Option<f64>,
    #[arg(long)]
    pub scribble_iterations: Option<usize>,
}

fn parse_mode(s: &str) -> Result<IterationMode, String> {
    s.parse().map_err(|e: cofkit_core::CofError| e.to_string())
}

impl ConfigFlags {
    pub fn resolve(&self) -> Result<PipelineConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::from_file(path)?,
            None => PipelineConfig::default(),
        };
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field {
                    cfg.$field = v.clone().into();
                })*
            };
        }
        take!(
            k,
            grid_spacing,
            window,
            sigma_s2,
            sigma_r,
            epsilon,
            iterations,
            mode,
            seed,
            region_mask,
            matrix_in,
            matrix_out,
            mask_threshold,
            scribble_iterations
        );
        cfg.validate()?;
        Ok(cfg)
    }
}
