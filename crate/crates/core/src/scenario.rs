//! Scenario files: everything a closed-loop run needs, in one JSON
//! document. The chain geometry lives in its own file referenced by
//! relative path, so several scenarios can share one arm description.
//!
//! Every knob that the command line can override is part of this schema;
//! overrides are applied to the raw JSON tree before validation so they
//! are subject to the same checks as hand-written files.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cbf::ObstacleShape;
use crate::kinematics::{KinematicChain, KinematicsError, POSE_DIM};
use crate::observer::ObserverError;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Observer(#[from] ObserverError),
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error("override path '{0}' does not resolve")]
    OverridePath(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseConfig {
    pub position: [f64; 3],
    pub quaternion: [f64; 4],
}

impl PoseConfig {
    /// Pose as a 7-vector with the quaternion normalised.
    pub fn to_vector(&self) -> Result<DVector<f64>, ScenarioError> {
        let q = self.quaternion;
        let norm = (q.iter().map(|v| v * v).sum::<f64>()).sqrt();
        if !norm.is_finite() || norm < 1e-6 {
            return Err(ScenarioError::Validation(format!(
                "quaternion {q:?} is not normalisable"
            )));
        }
        let mut v = DVector::zeros(POSE_DIM);
        for d in 0..3 {
            v[d] = self.position[d];
        }
        for d in 0..4 {
            v[3 + d] = q[d] / norm;
        }
        Ok(v)
    }
}

/// How the observer state is seeded at the first step: the string
/// `"truth"` (start from the true position and velocity, higher blocks
/// zero) or an explicit stacked state of 3 m values.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ObserverInit {
    Named(String),
    Values(Vec<f64>),
}

impl Default for ObserverInit {
    fn default() -> Self {
        ObserverInit::Named("truth".into())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObserverConfig {
    pub m: usize,
    pub alphas: Vec<f64>,
    pub eta: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub init: ObserverInit,
}

/// Source of the estimate-error inflation `r_d`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RdMode {
    Fixed { fixed: f64 },
    Named(String),
}

impl Default for RdMode {
    fn default() -> Self {
        RdMode::Named("certificate".into())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObstacleConfig {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(flatten)]
    pub shape: ObstacleShape,
    pub start: [f64; 3],
    pub velocity: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SafetyConfig {
    pub d_min: f64,
    #[serde(default)]
    pub r_d_mode: RdMode,
    pub obstacles: Vec<ObstacleConfig>,
}

/// Scalar weights broadcast to a diagonal, or the full diagonal.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl WeightSpec {
    pub fn to_vector(&self, len: usize) -> Result<DVector<f64>, ScenarioError> {
        match self {
            WeightSpec::Scalar(v) => Ok(DVector::from_element(len, *v)),
            WeightSpec::Vector(vals) => {
                if vals.len() != len {
                    return Err(ScenarioError::Validation(format!(
                        "weight vector has {} entries, expected {len}",
                        vals.len()
                    )));
                }
                Ok(DVector::from_row_slice(vals))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, Default, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ModeConfig {
    #[default]
    Fasm,
    Baseline,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub horizon: usize,
    pub q: WeightSpec,
    pub r: WeightSpec,
    pub p_gamma: f64,
    pub p_j: f64,
    #[serde(default = "default_gamma_init")]
    pub gamma_init: f64,
    pub u_max: f64,
    #[serde(default)]
    pub mode: ModeConfig,
}

fn default_gamma_init() -> f64 {
    0.001
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Waypoint {
    pub pose: PoseConfig,
    /// Seconds this waypoint is held as the reference.
    pub hold: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceConfig {
    pub waypoints: Vec<Waypoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub notes: Option<String>,
    /// Chain description path, relative to the scenario file.
    pub chain: String,
    pub t_s: f64,
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    pub initial_theta: Vec<f64>,
    /// Optional cross-check: forward kinematics of `initial_theta` must
    /// reproduce this pose.
    #[serde(default)]
    pub initial_pose: Option<PoseConfig>,
    pub observer: ObserverConfig,
    pub safety: SafetyConfig,
    pub controller: ControllerConfig,
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub measurement_noise_std: f64,
    /// When false (default) the per-step solve time column is logged as 0
    /// so trajectory files are byte-stable; wall-clock timing still appears
    /// in the run metrics.
    #[serde(default)]
    pub log_timing: bool,
}

/// A validated scenario with its chain loaded.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub chain: KinematicChain,
    pub initial_theta: DVector<f64>,
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    scenario_from_value(&value, base)
}

pub fn scenario_from_value(
    value: &serde_json::Value,
    base_dir: &Path,
) -> Result<Scenario, ScenarioError> {
    let config: ScenarioConfig = serde_json::from_value(value.clone())?;
    let chain = KinematicChain::load(&base_dir.join(&config.chain))?;
    validate(&config, &chain)?;
    let initial_theta = DVector::from_row_slice(&config.initial_theta);
    Ok(Scenario { config, chain, initial_theta })
}

fn validate(config: &ScenarioConfig, chain: &KinematicChain) -> Result<(), ScenarioError> {
    let n = chain.n();
    let bad = |msg: String| Err(ScenarioError::Validation(msg));
    if !(config.t_s > 0.0 && config.t_s.is_finite()) {
        return bad(format!("t_s must be positive, got {}", config.t_s));
    }
    if !(config.duration > 0.0 && config.duration.is_finite()) {
        return bad(format!("duration must be positive, got {}", config.duration));
    }
    if config.initial_theta.len() != n {
        return bad(format!(
            "initial_theta has {} entries, chain has {n} joints",
            config.initial_theta.len()
        ));
    }
    let theta = DVector::from_row_slice(&config.initial_theta);
    for (j, (&th, &(lo, hi))) in theta.iter().zip(chain.joint_limits().iter()).enumerate() {
        if th < lo || th > hi {
            return bad(format!("initial_theta[{j}] = {th} outside joint range [{lo}, {hi}]"));
        }
    }

    // Observer parameters must construct, and the certificate mode needs a
    // contracting error recursion.
    let gpio = crate::observer::GpioConfig::new(
        config.observer.m,
        config.observer.alphas.clone(),
        config.t_s,
        config.observer.eta,
        config.observer.delta,
    )?;
    match &config.observer.init {
        ObserverInit::Named(name) if name == "truth" => {}
        ObserverInit::Named(other) => {
            return bad(format!("unknown observer.init '{other}', expected \"truth\""));
        }
        ObserverInit::Values(vals) => {
            if vals.len() != 3 * gpio.m {
                return bad(format!(
                    "observer.init has {} values, expected {}",
                    vals.len(),
                    3 * gpio.m
                ));
            }
        }
    }
    match &config.safety.r_d_mode {
        RdMode::Named(name) if name == "certificate" => {
            let phi = crate::observer::build_phi(&config.observer.alphas, config.t_s);
            crate::observer::lyapunov_certificate(&phi, config.observer.eta)?;
        }
        RdMode::Named(other) => {
            return bad(format!("unknown r_d_mode '{other}', expected \"certificate\""));
        }
        RdMode::Fixed { fixed } => {
            if *fixed < 0.0 {
                return bad(format!("fixed r_d must be non-negative, got {fixed}"));
            }
        }
    }
    if config.safety.d_min < 0.0 {
        return bad(format!("d_min must be non-negative, got {}", config.safety.d_min));
    }
    for (i, obs) in config.safety.obstacles.iter().enumerate() {
        match &obs.shape {
            ObstacleShape::Sphere { radius } if *radius < 0.0 => {
                return bad(format!("obstacle {i} has negative radius"));
            }
            ObstacleShape::Box { dims } if dims.iter().any(|d| *d < 0.0) => {
                return bad(format!("obstacle {i} has negative box dimensions"));
            }
            _ => {}
        }
    }

    let cc = &config.controller;
    cc.q.to_vector(POSE_DIM)?;
    cc.r.to_vector(n)?;
    if cc.u_max <= 0.0 {
        return bad(format!("u_max must be positive, got {}", cc.u_max));
    }
    if !(cc.gamma_init > 0.0 && cc.gamma_init <= 1.0) {
        return bad(format!("gamma_init must lie in (0, 1], got {}", cc.gamma_init));
    }
    if cc.p_gamma <= 0.0 || cc.p_j <= 0.0 {
        return bad("decay-rate penalties must be positive".into());
    }
    if config.reference.waypoints.is_empty() {
        return bad("reference needs at least one waypoint".into());
    }
    for (i, w) in config.reference.waypoints.iter().enumerate() {
        if !(w.hold > 0.0) {
            return bad(format!("waypoint {i} hold must be positive"));
        }
        w.pose.to_vector()?;
    }
    if config.measurement_noise_std < 0.0 {
        return bad("measurement_noise_std must be non-negative".into());
    }

    // Cross-check the stated initial pose against forward kinematics.
    if let Some(pose) = &config.initial_pose {
        let stated = pose.to_vector()?;
        let fk = chain.ee_pose(&theta)?;
        let mut qdiff = 0.0f64;
        let mut qdiff_flip = 0.0f64;
        for d in 3..POSE_DIM {
            qdiff = qdiff.max((fk[d] - stated[d]).abs());
            qdiff_flip = qdiff_flip.max((fk[d] + stated[d]).abs());
        }
        let pdiff = (0..3).map(|d| (fk[d] - stated[d]).abs()).fold(0.0f64, f64::max);
        if pdiff > 1e-6 || qdiff.min(qdiff_flip) > 1e-6 {
            return bad(format!(
                "initial_pose does not match forward kinematics of initial_theta \
                 (position off by {pdiff:.2e}, quaternion off by {:.2e})",
                qdiff.min(qdiff_flip)
            ));
        }
    }
    Ok(())
}

/// Applies one `path.to.key=value` assignment to a raw JSON tree. Numeric
/// path segments index arrays. The value is parsed as JSON when possible
/// and falls back to a plain string.
pub fn apply_override(root: &mut serde_json::Value, assignment: &str) -> Result<(), ScenarioError> {
    let Some((path, raw)) = assignment.split_once('=') else {
        return Err(ScenarioError::OverridePath(format!(
            "'{assignment}' is not of the form key=value"
        )));
    };
    let val: serde_json::Value =
        serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let segs: Vec<&str> = path.split('.').collect();
    let (last, parents) = segs.split_last().expect("split always yields one segment");
    let mut cur = root;
    let mut walked = String::new();
    for seg in parents {
        if !walked.is_empty() {
            walked.push('.');
        }
        walked.push_str(seg);
        cur = match cur {
            serde_json::Value::Object(map) => map
                .get_mut(*seg)
                .ok_or_else(|| ScenarioError::OverridePath(walked.clone()))?,
            serde_json::Value::Array(arr) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| ScenarioError::OverridePath(walked.clone()))?;
                arr.get_mut(idx)
                    .ok_or_else(|| ScenarioError::OverridePath(walked.clone()))?
            }
            _ => return Err(ScenarioError::OverridePath(walked.clone())),
        };
    }
    match cur {
        serde_json::Value::Object(map) => {
            map.insert(last.to_string(), val);
            Ok(())
        }
        serde_json::Value::Array(arr) => {
            let idx: usize = last
                .parse()
                .map_err(|_| ScenarioError::OverridePath(path.to_string()))?;
            if idx >= arr.len() {
                return Err(ScenarioError::OverridePath(path.to_string()));
            }
            arr[idx] = val;
            Ok(())
        }
        _ => Err(ScenarioError::OverridePath(path.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn chain_json() -> &'static str {
        r#"{
            "dh": [[1.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]],
            "joint_limits": [[-3.0, 3.0], [-3.0, 3.0]]
        }"#
    }

    fn scenario_json() -> String {
        r#"{
            "name": "unit",
            "chain": "chain.json",
            "t_s": 0.04,
            "duration": 1.0,
            "seed": 7,
            "initial_theta": [0.2, 0.3],
            "observer": { "m": 3, "alphas": [5.0, 10.0, 2.0], "eta": 0.9999 },
            "safety": {
                "d_min": 0.001,
                "obstacles": [
                    { "shape": "box", "dims": [0.1, 0.1, 0.1],
                      "start": [5.0, 5.0, 5.0], "velocity": [0.0, 0.1, 0.0] }
                ]
            },
            "controller": {
                "horizon": 1, "q": 2000.0, "r": 50.0,
                "p_gamma": 150.0, "p_j": 150.0, "u_max": 0.6
            },
            "reference": {
                "waypoints": [
                    { "pose": { "position": [1.5, 0.5, 0.0],
                                "quaternion": [1.0, 0.0, 0.0, 0.0] },
                      "hold": 1.0 }
                ]
            }
        }"#
        .to_string()
    }

    fn write_pair(dir: &Path, scenario: &str) -> std::path::PathBuf {
        std::fs::write(dir.join("chain.json"), chain_json()).unwrap();
        let p = dir.join("scenario.json");
        std::fs::write(&p, scenario).unwrap();
        p
    }

    #[test]
    fn loads_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_pair(dir.path(), &scenario_json());
        let s = load_scenario(&path).unwrap();
        assert_eq!(s.chain.n(), 2);
        assert_eq!(s.config.seed, 7);
        assert_eq!(s.config.controller.mode, ModeConfig::Fasm);
        assert!(matches!(s.config.observer.init, ObserverInit::Named(ref n) if n == "truth"));
        assert!(matches!(s.config.safety.r_d_mode, RdMode::Named(ref n) if n == "certificate"));
        assert_abs_diff_eq!(s.config.controller.gamma_init, 0.001, epsilon = 1e-15);
        assert!(!s.config.log_timing);
    }

    #[test]
    fn weight_spec_broadcasts_and_checks_length() {
        let w = WeightSpec::Scalar(3.0);
        assert_eq!(w.to_vector(4).unwrap(), DVector::from_element(4, 3.0));
        let w = WeightSpec::Vector(vec![1.0, 2.0]);
        assert!(w.to_vector(3).is_err());
        assert_eq!(w.to_vector(2).unwrap()[1], 2.0);
    }

    #[test]
    fn rd_mode_parses_both_forms() {
        let fixed: RdMode = serde_json::from_str(r#"{"fixed": 0.02}"#).unwrap();
        assert!(matches!(fixed, RdMode::Fixed { fixed } if fixed == 0.02));
        let named: RdMode = serde_json::from_str(r#""certificate""#).unwrap();
        assert!(matches!(named, RdMode::Named(ref n) if n == "certificate"));
    }

    #[test]
    fn observer_init_parses_both_forms() {
        let t: ObserverInit = serde_json::from_str(r#""truth""#).unwrap();
        assert!(matches!(t, ObserverInit::Named(ref n) if n == "truth"));
        let v: ObserverInit = serde_json::from_str("[1.0, 2.0, 3.0]").unwrap();
        assert!(matches!(v, ObserverInit::Values(ref vals) if vals.len() == 3));
    }

    #[test]
    fn initial_theta_length_is_validated() {
        let dir = tempfile::tempdir().unwrap();
        let bad = scenario_json().replace("[0.2, 0.3]", "[0.2, 0.3, 0.4]");
        let path = write_pair(dir.path(), &bad);
        assert!(matches!(load_scenario(&path), Err(ScenarioError::Validation(_))));
    }

    #[test]
    fn initial_pose_cross_check() {
        let dir = tempfile::tempdir().unwrap();
        // Wrong pose: FK of (0.2, 0.3) is nowhere near the origin.
        let bad = scenario_json().replace(
            "\"initial_theta\": [0.2, 0.3],",
            "\"initial_theta\": [0.2, 0.3],
             \"initial_pose\": { \"position\": [0.0, 0.0, 0.0],
                                  \"quaternion\": [1.0, 0.0, 0.0, 0.0] },",
        );
        let path = write_pair(dir.path(), &bad);
        let err = load_scenario(&path);
        assert!(matches!(err, Err(ScenarioError::Validation(ref m)) if m.contains("initial_pose")));
    }

    #[test]
    fn waypoint_quaternion_is_normalised() {
        let pose = PoseConfig { position: [0.0; 3], quaternion: [2.0, 0.0, 0.0, 0.0] };
        let v = pose.to_vector().unwrap();
        assert_abs_diff_eq!(v[3], 1.0, epsilon = 1e-15);
        let zero = PoseConfig { position: [0.0; 3], quaternion: [0.0; 4] };
        assert!(zero.to_vector().is_err());
    }

    #[test]
    fn overrides_reach_nested_fields_and_arrays() {
        let mut v: serde_json::Value = serde_json::from_str(&scenario_json()).unwrap();
        apply_override(&mut v, "controller.horizon=7").unwrap();
        assert_eq!(v["controller"]["horizon"], 7);
        apply_override(&mut v, "safety.obstacles.0.velocity=[0.0,0.145,0.0]").unwrap();
        assert_eq!(v["safety"]["obstacles"][0]["velocity"][1], 0.145);
        apply_override(&mut v, "controller.mode=baseline").unwrap();
        assert_eq!(v["controller"]["mode"], "baseline");
        // New keys may be created in objects.
        apply_override(&mut v, "notes=swept").unwrap();
        assert_eq!(v["notes"], "swept");
        // Bad paths are reported.
        assert!(apply_override(&mut v, "safety.obstacles.9.start=[0,0,0]").is_err());
        assert!(apply_override(&mut v, "controller.horizon.deep=1").is_err());
        assert!(apply_override(&mut v, "no_equals_sign").is_err());
    }

    #[test]
    fn overridden_tree_revalidates() {
        let dir = tempfile::tempdir().unwrap();
        write_pair(dir.path(), &scenario_json());
        let mut v: serde_json::Value = serde_json::from_str(&scenario_json()).unwrap();
        apply_override(&mut v, "t_s=-1.0").unwrap();
        assert!(matches!(
            scenario_from_value(&v, dir.path()),
            Err(ScenarioError::Validation(_))
        ));
    }

    #[test]
    fn initial_theta_outside_limits_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let bad = scenario_json().replace("[0.2, 0.3]", "[0.2, 5.0]");
        let path = write_pair(dir.path(), &bad);
        assert!(matches!(load_scenario(&path), Err(ScenarioError::Validation(_))));
    }
}
