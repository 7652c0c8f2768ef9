//! Pipeline configuration: a flat `key = value` text format with a closed
//! key set, documented defaults, CLI overrides and a stable hash.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Result, Sp4dError};
use crate::flow::FlowConfig;
use crate::ground::{GroundConfig, GroundMethod};
use crate::instance::InstanceParams;
use crate::reg::FlowNorm;
use crate::superpoint::MatchThresholds;

/// Every tunable of the pipeline. Unknown keys are rejected when parsing;
/// the effective configuration is echoed into the run manifest.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Global seed (echoed; per-stage seeds derive from their own keys).
    pub seed: u64,
    /// Optional default io paths; CLI flags take precedence.
    pub io_in: String,
    pub io_out: String,
    pub io_flow: String,
    pub io_labels: String,

    pub ground: GroundConfig,

    /// Per-frame clustering.
    pub dbscan_eps_m: f64,
    pub dbscan_min_pts: usize,

    /// Flow estimation toggles; when `flow_estimate` is false a flow
    /// directory must be supplied.
    pub flow_estimate: bool,
    pub flow: FlowConfig,

    pub matching: MatchThresholds,

    pub sim_lambda: f64,
    pub sim_sigma_m: f64,
    pub sim_normalize: bool,
    pub instance_eps: f64,
    pub instance_min_pts: usize,

    pub motion_tau_dyn_m: f64,

    pub reg_lambda_edge: f64,
    pub reg_flow_norm: FlowNorm,
    pub reg_k3d: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            io_in: String::new(),
            io_out: String::new(),
            io_flow: String::new(),
            io_labels: String::new(),
            ground: GroundConfig::default(),
            dbscan_eps_m: 0.7,
            dbscan_min_pts: 5,
            flow_estimate: true,
            flow: FlowConfig::default(),
            matching: MatchThresholds::default(),
            sim_lambda: 0.5,
            sim_sigma_m: 2.0,
            sim_normalize: true,
            instance_eps: 0.35,
            instance_min_pts: 1,
            motion_tau_dyn_m: 0.05,
            reg_lambda_edge: 150.0,
            reg_flow_norm: FlowNorm::L1,
            reg_k3d: 8,
        }
    }
}

impl PipelineConfig {
    /// Parse a config file and apply it over the defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = PipelineConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Sp4dError::Config(format!(
                    "{}:{}: expected 'key = value', got '{line}'",
                    path.display(),
                    lineno + 1
                ))
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| {
                Sp4dError::Config(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
        }
        Ok(cfg)
    }

    /// Set one key from its text form. Used for file entries and for CLI
    /// `--set key=value` overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn f64_of(key: &str, v: &str) -> Result<f64> {
            v.parse()
                .map_err(|e| Sp4dError::Config(format!("{key}: {e}")))
        }
        fn usize_of(key: &str, v: &str) -> Result<usize> {
            v.parse()
                .map_err(|e| Sp4dError::Config(format!("{key}: {e}")))
        }
        fn u64_of(key: &str, v: &str) -> Result<u64> {
            v.parse()
                .map_err(|e| Sp4dError::Config(format!("{key}: {e}")))
        }
        fn bool_of(key: &str, v: &str) -> Result<bool> {
            match v {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(Sp4dError::Config(format!(
                    "{key}: expected true/false, got '{v}'"
                ))),
            }
        }
        match key {
            "seed" => self.seed = u64_of(key, value)?,
            "io.in" => self.io_in = value.to_string(),
            "io.out" => self.io_out = value.to_string(),
            "io.flow" => self.io_flow = value.to_string(),
            "io.labels" => self.io_labels = value.to_string(),
            "ground.method" => {
                self.ground.method = match value {
                    "ransac" => GroundMethod::Ransac,
                    "height" => GroundMethod::Height,
                    _ => {
                        return Err(Sp4dError::Config(format!(
                            "ground.method: expected ransac|height, got '{value}'"
                        )))
                    }
                }
            }
            "ground.threshold_m" => self.ground.threshold_m = f64_of(key, value)?,
            "ground.iterations" => self.ground.iterations = usize_of(key, value)?,
            "ground.seed" => self.ground.seed = u64_of(key, value)?,
            "ground.z_max_m" => self.ground.z_max_m = f64_of(key, value)?,
            "dbscan.eps_m" => self.dbscan_eps_m = f64_of(key, value)?,
            "dbscan.min_pts" => self.dbscan_min_pts = usize_of(key, value)?,
            "flow.estimate" => self.flow_estimate = bool_of(key, value)?,
            "flow.iterations" => self.flow.iterations = usize_of(key, value)?,
            "flow.step_size" => self.flow.step_size = f64_of(key, value)?,
            "flow.rigidity_weight" => self.flow.rigidity_weight = f64_of(key, value)?,
            "flow.rigidity_k" => self.flow.rigidity_k = usize_of(key, value)?,
            "flow.truncation_radius_m" => self.flow.truncation_radius = f64_of(key, value)?,
            "match.r_match_m" => self.matching.r_match = f64_of(key, value)?,
            "match.n_min" => self.matching.n_min = usize_of(key, value)?,
            "match.theta_split" => self.matching.theta_split = f64_of(key, value)?,
            "sim.lambda" => self.sim_lambda = f64_of(key, value)?,
            "sim.sigma_m" => self.sim_sigma_m = f64_of(key, value)?,
            "sim.normalize" => self.sim_normalize = bool_of(key, value)?,
            "instance.eps" => self.instance_eps = f64_of(key, value)?,
            "instance.min_pts" => self.instance_min_pts = usize_of(key, value)?,
            "motion.tau_dyn_m" => self.motion_tau_dyn_m = f64_of(key, value)?,
            "reg.lambda_edge" => self.reg_lambda_edge = f64_of(key, value)?,
            "reg.flow_norm" => {
                self.reg_flow_norm = match value {
                    "l1" => FlowNorm::L1,
                    "l2" => FlowNorm::L2,
                    _ => {
                        return Err(Sp4dError::Config(format!(
                            "reg.flow_norm: expected l1|l2, got '{value}'"
                        )))
                    }
                }
            }
            "reg.k3d" => self.reg_k3d = usize_of(key, value)?,
            _ => return Err(Sp4dError::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Canonical text form of every effective key, sorted.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("seed", self.seed.to_string());
        put("io.in", self.io_in.clone());
        put("io.out", self.io_out.clone());
        put("io.flow", self.io_flow.clone());
        put("io.labels", self.io_labels.clone());
        put(
            "ground.method",
            match self.ground.method {
                GroundMethod::Ransac => "ransac".into(),
                GroundMethod::Height => "height".into(),
            },
        );
        put("ground.threshold_m", self.ground.threshold_m.to_string());
        put("ground.iterations", self.ground.iterations.to_string());
        put("ground.seed", self.ground.seed.to_string());
        put("ground.z_max_m", self.ground.z_max_m.to_string());
        put("dbscan.eps_m", self.dbscan_eps_m.to_string());
        put("dbscan.min_pts", self.dbscan_min_pts.to_string());
        put("flow.estimate", self.flow_estimate.to_string());
        put("flow.iterations", self.flow.iterations.to_string());
        put("flow.step_size", self.flow.step_size.to_string());
        put("flow.rigidity_weight", self.flow.rigidity_weight.to_string());
        put("flow.rigidity_k", self.flow.rigidity_k.to_string());
        put(
            "flow.truncation_radius_m",
            self.flow.truncation_radius.to_string(),
        );
        put("match.r_match_m", self.matching.r_match.to_string());
        put("match.n_min", self.matching.n_min.to_string());
        put("match.theta_split", self.matching.theta_split.to_string());
        put("sim.lambda", self.sim_lambda.to_string());
        put("sim.sigma_m", self.sim_sigma_m.to_string());
        put("sim.normalize", self.sim_normalize.to_string());
        put("instance.eps", self.instance_eps.to_string());
        put("instance.min_pts", self.instance_min_pts.to_string());
        put("motion.tau_dyn_m", self.motion_tau_dyn_m.to_string());
        put("reg.lambda_edge", self.reg_lambda_edge.to_string());
        put(
            "reg.flow_norm",
            match self.reg_flow_norm {
                FlowNorm::L1 => "l1".into(),
                FlowNorm::L2 => "l2".into(),
            },
        );
        put("reg.k3d", self.reg_k3d.to_string());
        m
    }

    /// Stable FNV-1a hash over the canonical key=value listing.
    pub fn hash(&self) -> String {
        let mut h: u64 = 0xcbf29ce484222325;
        for (k, v) in self.to_map() {
            for b in k.bytes().chain("=".bytes()).chain(v.bytes()).chain("\n".bytes()) {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        format!("{h:016x}")
    }

    pub fn instance_params(&self) -> InstanceParams {
        InstanceParams {
            eps: self.instance_eps,
            min_pts: self.instance_min_pts,
            normalize: self.sim_normalize,
        }
    }
}

/// Worker-count resolution for the `SP4D_THREADS` environment variable:
/// 0 or unset means automatic.
pub fn threads_from_env() -> usize {
    std::env::var("SP4D_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_map() {
        let cfg = PipelineConfig::default();
        let m = cfg.to_map();
        assert_eq!(m["dbscan.eps_m"], "0.7");
        assert_eq!(m["match.n_min"], "3");
        assert_eq!(m["sim.lambda"], "0.5");
        assert_eq!(m["reg.flow_norm"], "l1");
        assert_eq!(m.len(), 30);
    }

    #[test]
    fn parse_file_with_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sp4d.conf");
        std::fs::write(
            &path,
            "# comment\ndbscan.eps_m = 0.5\nground.method = height\nsim.normalize = false\n",
        )
        .unwrap();
        let cfg = PipelineConfig::from_file(&path).unwrap();
        assert_eq!(cfg.dbscan_eps_m, 0.5);
        assert_eq!(cfg.ground.method, GroundMethod::Height);
        assert!(!cfg.sim_normalize);
    }

    #[test]
    fn unknown_key_rejected() {
        let mut cfg = PipelineConfig::default();
        let err = cfg.set("dbscan.epsilon", "0.5").unwrap_err();
        assert!(err.to_string().contains("unknown config key"));
    }

    #[test]
    fn bad_value_rejected() {
        let mut cfg = PipelineConfig::default();
        assert!(cfg.set("dbscan.eps_m", "wide").is_err());
        assert!(cfg.set("sim.normalize", "yes").is_err());
        assert!(cfg.set("ground.method", "magic").is_err());
    }

    #[test]
    fn hash_stable_and_sensitive() {
        let a = PipelineConfig::default();
        let b = PipelineConfig::default();
        assert_eq!(a.hash(), b.hash());
        let mut c = PipelineConfig::default();
        c.set("dbscan.eps_m", "0.8").unwrap();
        assert_ne!(a.hash(), c.hash());
    }
}
