//! Safety margins around moving obstacles and the flexible control-barrier
//! safety criterion (CBFSC).
//!
//! Two nested margins appear throughout:
//!
//! * true clearance `h = ||x - o|| - d_min - R_o`, measured against the real
//!   obstacle position `o`;
//! * surplus distance `H = ||x - o_hat|| - r_safe` with
//!   `r_safe = d_min + R_o + r_d`, measured against the estimated position
//!   and inflated by the observer's error envelope `r_d`, so `H >= 0`
//!   certifies `h >= 0` whenever the estimate is within `r_d` of the truth.
//!
//! The CBFSC couples consecutive surplus distances through a decay rate
//! `gamma` in `(0, 1]`: `H_{k+1} - (1 - gamma) H_k >= 0`. Small `gamma`
//! forbids the surplus to shrink (conservative, early avoidance); `gamma = 1`
//! only asks the next step to stay outside the inflated radius.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CbfError {
    #[error("gamma must lie in (0, 1], got {0}")]
    BadGamma(f64),
    #[error("safety margins must be non-negative (d_min={d_min}, R_o={r_o}, r_d={r_d})")]
    NegativeMargin { d_min: f64, r_o: f64, r_d: f64 },
}

/// Obstacle geometry as configured; collision checks use the bounding
/// sphere, which is exact for spheres and conservative for boxes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum ObstacleShape {
    Sphere { radius: f64 },
    Box { dims: [f64; 3] },
}

/// Radius of the smallest sphere containing the shape, centred at the
/// shape's centre. For a box this is half the space diagonal.
pub fn bounding_radius(shape: &ObstacleShape) -> f64 {
    match shape {
        ObstacleShape::Sphere { radius } => *radius,
        ObstacleShape::Box { dims } => {
            0.5 * dims.iter().map(|d| d * d).sum::<f64>().sqrt()
        }
    }
}

/// Margins protecting one tracked point from one obstacle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SafetySpec {
    /// Minimum admissible gap between the point and the obstacle surface.
    pub d_min: f64,
    /// Bounding radius of the obstacle.
    pub obstacle_radius: f64,
    /// Inflation absorbing the obstacle-estimate error.
    pub r_d: f64,
}

impl SafetySpec {
    pub fn new(d_min: f64, obstacle_radius: f64, r_d: f64) -> Result<Self, CbfError> {
        if d_min < 0.0 || obstacle_radius < 0.0 || r_d < 0.0 {
            return Err(CbfError::NegativeMargin { d_min, r_o: obstacle_radius, r_d });
        }
        Ok(Self { d_min, obstacle_radius, r_d })
    }

    /// `r_safe = d_min + R_o + r_d`.
    pub fn safe_radius(&self) -> f64 {
        self.d_min + self.obstacle_radius + self.r_d
    }
}

/// True clearance `h` against the real obstacle centre.
pub fn clearance(x: &Vector3<f64>, o: &Vector3<f64>, spec: &SafetySpec) -> f64 {
    (x - o).norm() - spec.d_min - spec.obstacle_radius
}

/// Surplus distance `H` against an (estimated) obstacle centre and the
/// inflated radius.
pub fn surplus_distance(x: &Vector3<f64>, o: &Vector3<f64>, r_safe: f64) -> f64 {
    (x - o).norm() - r_safe
}

/// CBFSC residual `H(x_next, o_next) - (1 - gamma) * H(x, o)`; the criterion
/// holds when the residual is non-negative.
pub fn cbfsc_residual(
    x: &Vector3<f64>,
    x_next: &Vector3<f64>,
    o: &Vector3<f64>,
    o_next: &Vector3<f64>,
    gamma: f64,
    r_safe: f64,
) -> Result<f64, CbfError> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(CbfError::BadGamma(gamma));
    }
    Ok(surplus_distance(x_next, o_next, r_safe) - (1.0 - gamma) * surplus_distance(x, o, r_safe))
}

/// True-clearance check `h >= 0` (boundary counts as safe).
pub fn is_safe(x: &Vector3<f64>, o: &Vector3<f64>, spec: &SafetySpec) -> bool {
    clearance(x, o, spec) >= 0.0
}

/// Per-step, per-barrier evaluation kept in trajectory logs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BarrierEval {
    pub point_id: String,
    /// True clearance against the real obstacle.
    pub h: f64,
    /// Surplus distance against the estimate.
    pub big_h: f64,
    /// Decay rate attached to this barrier by the solver.
    pub gamma: f64,
}
