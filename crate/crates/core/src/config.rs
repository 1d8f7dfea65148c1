//! Pipeline configuration.
//!
//! The on-disk form is flat `key = value` text. Blank lines and `#` comments
//! are ignored, unknown keys are rejected, and a key may appear only once.
//! [`Config::to_text`] writes every key in a fixed order, so a written config
//! re-parses to the same values.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Config {
    // preprocessing
    pub voxel_size: f64,
    // clustering and matching
    pub cluster_target_size: usize,
    pub top_k: usize,
    pub affinity_eps: f64,
    pub merge_threshold_ratio: f64,
    pub power_iterations: usize,
    pub sinkhorn_sweeps: usize,
    // map fitting
    pub n_rotations: usize,
    pub top_m: usize,
    pub seed_cap: usize,
    pub max_controls: usize,
    pub tps_regularization: f64,
    // assembly
    pub beam_width: usize,
    pub assembly_lambda_feat: f64,
    pub assembly_lambda_distort: f64,
    pub assembly_lambda_nav: f64,
    pub distortion_pairs: usize,
    pub nav_delta: f64,
    pub per_cluster_samples: usize,
    // refinement
    pub refine_lambda_shape: f64,
    pub refine_lambda_anchor: f64,
    pub refine_lambda_nav: f64,
    pub refine_lambda_feat: f64,
    pub kde_bandwidth: f64,
    pub feat_search_radius: f64,
    pub sparse_count: usize,
    pub refine_steps: usize,
    pub refine_lr: f64,
    pub idw_k: usize,
    // planning
    pub grid_resolution: f64,
    pub grid_inflation: f64,
    pub snap_radius: f64,
    // evaluation
    pub collision_threshold: f64,
    pub resample_count: usize,
    // runtime
    pub seed: u64,
    pub workers: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            voxel_size: 0.02,
            cluster_target_size: 4,
            top_k: 1,
            affinity_eps: 1e-3,
            merge_threshold_ratio: 0.3,
            power_iterations: 200,
            sinkhorn_sweeps: 10,
            n_rotations: 4,
            top_m: 5,
            seed_cap: 128,
            max_controls: 200,
            tps_regularization: 1e-3,
            beam_width: 5,
            assembly_lambda_feat: 1.0,
            assembly_lambda_distort: 1.0,
            assembly_lambda_nav: 1.0,
            distortion_pairs: 64,
            nav_delta: 0.25,
            per_cluster_samples: 100,
            refine_lambda_shape: 1.0,
            refine_lambda_anchor: 0.1,
            refine_lambda_nav: 1.0,
            refine_lambda_feat: 1.0,
            kde_bandwidth: 0.2,
            feat_search_radius: 1.0,
            sparse_count: 50,
            refine_steps: 200,
            refine_lr: 0.02,
            idw_k: 8,
            grid_resolution: 0.1,
            grid_inflation: 0.2,
            snap_radius: 1.0,
            collision_threshold: 0.1,
            resample_count: 256,
            seed: 0,
            workers: 1,
        }
    }
}

/// Splits flat `key = value` text into `(line, key, value)` triples.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
            line,
            reason: format!("expected `key = value`, got `{content}`"),
        })?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() || value.is_empty() {
            return Err(Error::Config {
                line,
                reason: "empty key or value".into(),
            });
        }
        if out.iter().any(|(_, k, _)| k == key) {
            return Err(Error::Config {
                line,
                reason: format!("duplicate key `{key}`"),
            });
        }
        out.push((line, key.to_string(), value.to_string()));
    }
    Ok(out)
}

pub(crate) fn parse_value<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config {
        line,
        reason: format!("cannot parse `{value}` for `{key}`"),
    })
}

macro_rules! config_fields {
    ($m:ident) => {
        $m!(
            voxel_size,
            cluster_target_size,
            top_k,
            affinity_eps,
            merge_threshold_ratio,
            power_iterations,
            sinkhorn_sweeps,
            n_rotations,
            top_m,
            seed_cap,
            max_controls,
            tps_regularization,
            beam_width,
            assembly_lambda_feat,
            assembly_lambda_distort,
            assembly_lambda_nav,
            distortion_pairs,
            nav_delta,
            per_cluster_samples,
            refine_lambda_shape,
            refine_lambda_anchor,
            refine_lambda_nav,
            refine_lambda_feat,
            kde_bandwidth,
            feat_search_radius,
            sparse_count,
            refine_steps,
            refine_lr,
            idw_k,
            grid_resolution,
            grid_inflation,
            snap_radius,
            collision_threshold,
            resample_count,
            seed,
            workers
        )
    };
}

impl Config {
    /// Parses config text on top of the defaults and validates the result.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (line, key, value) in parse_pairs(text)? {
            cfg.set(line, &key, &value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::parse(&text)
    }

    /// Sets one key; `line` is used for error messages (0 for overrides).
    pub fn set(&mut self, line: usize, key: &str, value: &str) -> Result<()> {
        macro_rules! assign {
            ($($field:ident),*) => {
                match key {
                    $(stringify!($field) => {
                        self.$field = parse_value(line, key, value)?;
                    })*
                    _ => {
                        return Err(Error::Config {
                            line,
                            reason: format!("unknown key `{key}`"),
                        })
                    }
                }
            };
        }
        config_fields!(assign);
        Ok(())
    }

    /// Applies `key=value` overrides (command-line form).
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o.split_once('=').ok_or_else(|| Error::Config {
                line: 0,
                reason: format!("override `{o}` is not key=value"),
            })?;
            self.set(0, k.trim(), v.trim())?;
        }
        self.validate()
    }

    /// Key/value listing in declaration order with round-trippable values.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        macro_rules! list {
            ($($field:ident),*) => {
                $(out.push((stringify!($field), format!("{:?}", self.$field)));)*
            };
        }
        config_fields!(list);
        out
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("voxel_size", self.voxel_size),
            ("affinity_eps", self.affinity_eps),
            ("nav_delta", self.nav_delta),
            ("kde_bandwidth", self.kde_bandwidth),
            ("feat_search_radius", self.feat_search_radius),
            ("refine_lr", self.refine_lr),
            ("grid_resolution", self.grid_resolution),
            ("snap_radius", self.snap_radius),
            ("collision_threshold", self.collision_threshold),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        let non_negative = [
            ("merge_threshold_ratio", self.merge_threshold_ratio),
            ("tps_regularization", self.tps_regularization),
            ("assembly_lambda_feat", self.assembly_lambda_feat),
            ("assembly_lambda_distort", self.assembly_lambda_distort),
            ("assembly_lambda_nav", self.assembly_lambda_nav),
            ("refine_lambda_shape", self.refine_lambda_shape),
            ("refine_lambda_anchor", self.refine_lambda_anchor),
            ("refine_lambda_nav", self.refine_lambda_nav),
            ("refine_lambda_feat", self.refine_lambda_feat),
            ("grid_inflation", self.grid_inflation),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        let counts = [
            ("cluster_target_size", self.cluster_target_size),
            ("top_k", self.top_k),
            ("power_iterations", self.power_iterations),
            ("n_rotations", self.n_rotations),
            ("top_m", self.top_m),
            ("seed_cap", self.seed_cap),
            ("max_controls", self.max_controls),
            ("beam_width", self.beam_width),
            ("distortion_pairs", self.distortion_pairs),
            ("per_cluster_samples", self.per_cluster_samples),
            ("sparse_count", self.sparse_count),
            ("refine_steps", self.refine_steps),
            ("idw_k", self.idw_k),
            ("workers", self.workers),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidParameter(format!("{name} must be >= 1")));
            }
        }
        if self.resample_count < 2 {
            return Err(Error::InvalidParameter("resample_count must be >= 2".into()));
        }
        Ok(())
    }
}
