//! Pipeline configuration: a TOML document whose keys can be overridden
//! individually, with range checks performed before any file is touched.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::disparity::{EstimatorParams, DEFAULT_BETA};
use crate::error::{Error, Result};
use crate::geometry::CameraRig;
use crate::refocus::RefocusParams;
use crate::segmentation::EStepParams;
use crate::support_mesh::{FilterParams, MatchParams};

/// Environment variable overriding `workers`.
pub const WORKERS_ENV: &str = "LF_WORKERS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Directory holding `calib.txt` and one directory per frame.
    pub dataset: PathBuf,
    /// Artifacts go to `<output>/<frame>/`.
    pub output: PathBuf,
    /// Probability at or above which a pixel starts out dynamic.
    pub seg_threshold: f64,
    /// Label re-estimation rounds, each followed by a new disparity search.
    pub em_iters: usize,
    pub skip_estep: bool,
    pub emit_intermediates: bool,
    /// Also refocus the color planes when the inputs are color.
    pub color: bool,
    /// Ignore the support mesh and search the full range under a flat prior.
    pub uniform_prior: bool,
    pub beta: f64,
    /// Likelihood sharpness of the label update; `beta` when absent.
    pub estep_beta: Option<f64>,
    pub d_max: f64,
    /// Candidate step; `1 / alpha_max` of the rig when absent.
    pub step: Option<f64>,
    pub grid_step: usize,
    pub ratio: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub neighborhood_radius: f64,
    pub duplicate_radius: f64,
    pub consistency_window: f64,
    pub max_deviation: f64,
    pub median_window: usize,
    pub min_static_views: usize,
    pub miss_percentile: f64,
    /// Worker threads; all available cores when absent.
    pub workers: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let est = EstimatorParams::default();
        let filter = FilterParams::default();
        let matching = MatchParams::default();
        Self {
            dataset: PathBuf::from("dataset"),
            output: PathBuf::from("out"),
            seg_threshold: 0.5,
            em_iters: 1,
            skip_estep: false,
            emit_intermediates: false,
            color: false,
            uniform_prior: false,
            beta: DEFAULT_BETA,
            estep_beta: None,
            d_max: est.d_max,
            step: None,
            grid_step: matching.grid_step,
            ratio: matching.ratio as f64,
            sigma: est.sigma,
            gamma: est.gamma,
            neighborhood_radius: est.neighborhood_radius,
            duplicate_radius: filter.duplicate_radius,
            consistency_window: filter.consistency_window,
            max_deviation: filter.max_deviation,
            median_window: est.median_window,
            min_static_views: est.min_static_views,
            miss_percentile: est.miss_percentile,
            workers: None,
        }
    }
}

/// Parses a single override value as a TOML value, falling back to a plain
/// string (so paths need no quoting).
fn override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl PipelineConfig {
    /// Parses a config document and applies `key = value` overrides on top.
    /// Keys may use `-` or `_`. Relative paths stay relative to the caller.
    pub fn from_sources(document: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(document).map_err(|e| Error::Schema {
            document: "pipeline config".into(),
            message: e.message().to_string(),
        })?;
        for (key, raw) in overrides {
            table.insert(key.replace('-', "_"), override_value(raw));
        }
        let config: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Schema {
                document: "pipeline config".into(),
                message: e.message().to_string(),
            })?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path`, resolving relative dataset and output paths against its directory.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_sources(&text, &[])?;
        let base = path.parent().unwrap_or(Path::new(""));
        let from_file = |p: &Path| {
            if p.is_relative() {
                base.join(p)
            } else {
                p.to_path_buf()
            }
        };
        config.dataset = from_file(&config.dataset);
        config.output = from_file(&config.output);
        if overrides.is_empty() {
            return Ok(config);
        }
        let mut merged = toml::Table::try_from(&config).expect("config serializes");
        for (key, raw) in overrides {
            merged.insert(key.replace('-', "_"), override_value(raw));
        }
        Self::from_sources(&toml::to_string(&merged).expect("table serializes"), &[])
    }

    /// Applies the worker override from the environment, if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(raw) = std::env::var(WORKERS_ENV) {
            let n: usize = raw.trim().parse().map_err(|_| {
                Error::Config(format!(
                    "{WORKERS_ENV} must be a positive integer, got {raw:?}"
                ))
            })?;
            self.workers = Some(n);
            self.validate()?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(Error::Config(msg)) };
        check(
            self.seg_threshold > 0.0 && self.seg_threshold < 1.0,
            format!(
                "seg_threshold must lie in (0, 1), got {}",
                self.seg_threshold
            ),
        )?;
        check(
            self.em_iters <= 16,
            format!("em_iters must be at most 16, got {}", self.em_iters),
        )?;
        check(
            self.beta > 0.0 && self.beta.is_finite(),
            format!("beta must be positive, got {}", self.beta),
        )?;
        check(
            self.d_max > 0.0 && self.d_max <= 4096.0,
            format!("d_max must lie in (0, 4096], got {}", self.d_max),
        )?;
        if let Some(step) = self.step {
            check(
                step > 0.0 && step <= self.d_max,
                format!("step must lie in (0, d_max], got {step}"),
            )?;
        }
        check(self.grid_step >= 1, "grid_step must be at least 1".into())?;
        check(
            self.ratio > 0.0 && self.ratio <= 1.0,
            format!("ratio must lie in (0, 1], got {}", self.ratio),
        )?;
        check(
            self.sigma > 0.0,
            format!("sigma must be positive, got {}", self.sigma),
        )?;
        check(
            (0.0..=1.0).contains(&self.gamma),
            format!("gamma must lie in [0, 1], got {}", self.gamma),
        )?;
        check(
            self.neighborhood_radius >= 0.0,
            "neighborhood_radius must be non-negative".into(),
        )?;
        check(
            self.duplicate_radius >= 0.0,
            "duplicate_radius must be non-negative".into(),
        )?;
        check(
            self.consistency_window >= 0.0,
            "consistency_window must be non-negative".into(),
        )?;
        check(
            self.max_deviation >= 0.0,
            "max_deviation must be non-negative".into(),
        )?;
        check(
            self.median_window >= 3 && self.median_window % 2 == 1,
            format!(
                "median_window must be odd and at least 3, got {}",
                self.median_window
            ),
        )?;
        check(
            self.min_static_views >= 1,
            "min_static_views must be at least 1".into(),
        )?;
        check(
            self.miss_percentile > 0.0 && self.miss_percentile <= 1.0,
            format!(
                "miss_percentile must lie in (0, 1], got {}",
                self.miss_percentile
            ),
        )?;
        check(self.workers != Some(0), "workers must be at least 1".into())?;
        Ok(())
    }

    /// Algorithm parameters for a rig.
    pub fn params(&self, rig: &CameraRig<f64>) -> PipelineParams {
        let estimator = EstimatorParams {
            beta: self.beta,
            d_max: self.d_max,
            step: self.step.unwrap_or_else(|| rig.candidate_step()),
            min_static_views: self.min_static_views,
            miss_percentile: self.miss_percentile,
            median_window: self.median_window,
            sigma: self.sigma,
            gamma: self.gamma,
            neighborhood_radius: self.neighborhood_radius,
        };
        PipelineParams {
            tau: self.seg_threshold as f32,
            em_iters: if self.skip_estep { 0 } else { self.em_iters },
            uniform_prior: self.uniform_prior,
            matching: MatchParams {
                grid_step: self.grid_step,
                d_max: self.d_max,
                ratio: self.ratio as f32,
            },
            filter: FilterParams {
                duplicate_radius: self.duplicate_radius,
                consistency_window: self.consistency_window,
                max_deviation: self.max_deviation,
            },
            estimator,
            estep: EStepParams {
                beta: self.estep_beta.unwrap_or(self.beta),
                tau: self.seg_threshold as f32,
                ..Default::default()
            },
            refocus: RefocusParams { color: self.color },
        }
    }
}

/// Everything the per-frame computation needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineParams {
    pub tau: f32,
    pub em_iters: usize,
    pub uniform_prior: bool,
    pub matching: MatchParams,
    pub filter: FilterParams,
    pub estimator: EstimatorParams,
    pub estep: EStepParams,
    pub refocus: RefocusParams,
}

impl PipelineParams {
    /// Defaults for a rig.
    pub fn for_rig(rig: &CameraRig<f64>) -> Self {
        PipelineConfig::default().params(rig)
    }
}
