//! Serial-chain kinematics on standard DH parameters.
//!
//! The chain supplies three things to the rest of the library:
//!
//! * world positions of tracked points (end effector and per-link critical
//!   points) for a joint vector `theta`;
//! * geometric Jacobians of those points, frozen at `theta` and reused across
//!   a prediction horizon (`x_{k+1} = x_k + t_s * J(theta_k) * u_k`);
//! * the end-effector pose as a 7-vector `(p, q)` with quaternion-rate rows
//!   in its Jacobian, so orientation is predicted with the same linear model.
//!
//! The linear prediction model deliberately does not re-normalise the
//! quaternion; closed-loop code re-normalises after applying a real step.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Length of a task-space pose vector: position followed by `(w, x, y, z)`.
pub const POSE_DIM: usize = 7;

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("chain must have at least one joint")]
    EmptyChain,
    #[error("unknown critical point id `{0}`")]
    UnknownPoint(String),
    #[error("critical point `{id}` references link {link}, chain has {n} links")]
    PointLinkOutOfRange { id: String, link: usize, n: usize },
    #[error("joint_limits must list one [lo, hi] pair per joint with lo < hi")]
    BadJointLimits,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite value in chain definition")]
    NonFinite,
    #[error("cannot read chain file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse chain file: {0}")]
    Parse(#[from] serde_json::Error),
}

/// One standard-DH row. The joint transform is
/// `Rz(theta + theta_offset) * Tz(d) * Tx(a) * Rx(alpha)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DhRow {
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    pub theta_offset: f64,
}

/// A point rigidly attached to a link, expressed in that link's distal frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub id: String,
    /// Link index in `0..n`; the point moves with joints `0..=link`.
    pub link: usize,
    #[serde(default)]
    pub offset: [f64; 3],
}

/// Fixed transform from the last joint frame to the tool frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToolTransform {
    #[serde(default)]
    pub position: [f64; 3],
    /// `(w, x, y, z)`, normalised on load.
    pub quaternion: [f64; 4],
}

/// On-disk chain description. Lengths are metres unless `length_unit` says
/// `"cm"`, in which case `a`, `d`, point offsets and the tool position are
/// converted on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub notes: Option<String>,
    #[serde(default)]
    pub length_unit: Option<String>,
    /// Rows `[a, alpha, d, theta_offset]`, one per joint.
    pub dh: Vec<[f64; 4]>,
    #[serde(default)]
    pub tool: Option<ToolTransform>,
    /// Defaults to the origin of each link's distal joint frame.
    #[serde(default)]
    pub critical_points: Option<Vec<CriticalPoint>>,
    /// Physical joint bounds `[lo, hi]`; defaults to `[-2*pi, 2*pi]`.
    #[serde(default)]
    pub joint_limits: Option<Vec<[f64; 2]>>,
}

/// A DH-parameterised serial chain with tracked critical points.
#[derive(Debug, Clone)]
pub struct KinematicChain {
    rows: Vec<DhRow>,
    tool: Matrix4<f64>,
    critical_points: Vec<CriticalPoint>,
    joint_limits: Vec<(f64, f64)>,
}

impl KinematicChain {
    pub fn new(rows: Vec<DhRow>) -> Result<Self, KinematicsError> {
        let n = rows.len();
        if n == 0 {
            return Err(KinematicsError::EmptyChain);
        }
        let critical_points = (0..n)
            .map(|link| CriticalPoint {
                id: format!("link{link}"),
                link,
                offset: [0.0; 3],
            })
            .collect();
        Ok(Self {
            rows,
            tool: Matrix4::identity(),
            critical_points,
            joint_limits: vec![(-2.0 * std::f64::consts::PI, 2.0 * std::f64::consts::PI); n],
        })
    }

    pub fn from_config(cfg: &ChainConfig) -> Result<Self, KinematicsError> {
        let scale = match cfg.length_unit.as_deref() {
            Some("cm") => 0.01,
            _ => 1.0,
        };
        let rows: Vec<DhRow> = cfg
            .dh
            .iter()
            .map(|r| DhRow {
                a: r[0] * scale,
                alpha: r[1],
                d: r[2] * scale,
                theta_offset: r[3],
            })
            .collect();
        if rows
            .iter()
            .any(|r| ![r.a, r.alpha, r.d, r.theta_offset].iter().all(|v| v.is_finite()))
        {
            return Err(KinematicsError::NonFinite);
        }
        let mut chain = Self::new(rows)?;
        let n = chain.n();
        if let Some(tool) = &cfg.tool {
            let q = tool.quaternion;
            let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
            if !norm.is_finite() || norm < 1e-12 {
                return Err(KinematicsError::NonFinite);
            }
            let q = [q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm];
            let mut t = Matrix4::identity();
            t.fixed_view_mut::<3, 3>(0, 0)
                .copy_from(&rotation_from_quaternion(&q));
            t[(0, 3)] = tool.position[0] * scale;
            t[(1, 3)] = tool.position[1] * scale;
            t[(2, 3)] = tool.position[2] * scale;
            chain.tool = t;
        }
        if let Some(points) = &cfg.critical_points {
            for p in points {
                if p.link >= n {
                    return Err(KinematicsError::PointLinkOutOfRange {
                        id: p.id.clone(),
                        link: p.link,
                        n,
                    });
                }
            }
            chain.critical_points = points
                .iter()
                .map(|p| CriticalPoint {
                    id: p.id.clone(),
                    link: p.link,
                    offset: [p.offset[0] * scale, p.offset[1] * scale, p.offset[2] * scale],
                })
                .collect();
        }
        if let Some(limits) = &cfg.joint_limits {
            if limits.len() != n || limits.iter().any(|l| !(l[0] < l[1])) {
                return Err(KinematicsError::BadJointLimits);
            }
            chain.joint_limits = limits.iter().map(|l| (l[0], l[1])).collect();
        }
        Ok(chain)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, KinematicsError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ChainConfig = serde_json::from_str(&text)?;
        Self::from_config(&cfg)
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn critical_points(&self) -> &[CriticalPoint] {
        &self.critical_points
    }

    pub fn joint_limits(&self) -> &[(f64, f64)] {
        &self.joint_limits
    }

    fn check_theta(&self, theta: &DVector<f64>) -> Result<(), KinematicsError> {
        if theta.len() != self.n() {
            return Err(KinematicsError::Dimension {
                expected: self.n(),
                got: theta.len(),
            });
        }
        Ok(())
    }

    /// Cumulative transforms `T_0 = I, T_1, ..., T_n` (base to each joint
    /// frame). Joint `i` rotates about the z axis of `T_i`.
    fn frames(&self, theta: &DVector<f64>) -> Vec<Matrix4<f64>> {
        let mut frames = Vec::with_capacity(self.n() + 1);
        let mut t = Matrix4::identity();
        frames.push(t);
        for (row, &th) in self.rows.iter().zip(theta.iter()) {
            t *= dh_transform(row, th);
            frames.push(t);
        }
        frames
    }

    fn point_by_id(&self, point_id: &str) -> Result<&CriticalPoint, KinematicsError> {
        self.critical_points
            .iter()
            .find(|p| p.id == point_id)
            .ok_or_else(|| KinematicsError::UnknownPoint(point_id.to_string()))
    }

    /// World position of a critical point.
    pub fn forward_point(
        &self,
        theta: &DVector<f64>,
        point_id: &str,
    ) -> Result<Vector3<f64>, KinematicsError> {
        self.check_theta(theta)?;
        let point = self.point_by_id(point_id)?.clone();
        let frames = self.frames(theta);
        Ok(point_position(&frames, &point))
    }

    /// World positions of every critical point, in declaration order.
    pub fn critical_positions(&self, theta: &DVector<f64>) -> Result<Vec<Vector3<f64>>, KinematicsError> {
        self.check_theta(theta)?;
        let frames = self.frames(theta);
        Ok(self
            .critical_points
            .iter()
            .map(|p| point_position(&frames, p))
            .collect())
    }

    /// 3 x n translational Jacobian of a critical point at `theta`.
    pub fn point_jacobian(
        &self,
        theta: &DVector<f64>,
        point_id: &str,
    ) -> Result<DMatrix<f64>, KinematicsError> {
        self.check_theta(theta)?;
        let point = self.point_by_id(point_id)?.clone();
        let frames = self.frames(theta);
        Ok(self.point_jacobian_frames(&frames, &point))
    }

    fn point_jacobian_frames(&self, frames: &[Matrix4<f64>], point: &CriticalPoint) -> DMatrix<f64> {
        let n = self.n();
        let p = point_position(frames, point);
        let mut jac = DMatrix::zeros(3, n);
        for i in 0..=point.link {
            let axis = frames[i].fixed_view::<3, 1>(0, 2).into_owned();
            let origin = frames[i].fixed_view::<3, 1>(0, 3).into_owned();
            let col = axis.cross(&(p - origin));
            jac.set_column(i, &col);
        }
        jac
    }

    /// All critical-point Jacobians, sharing one forward pass.
    pub fn critical_jacobians(&self, theta: &DVector<f64>) -> Result<Vec<DMatrix<f64>>, KinematicsError> {
        self.check_theta(theta)?;
        let frames = self.frames(theta);
        Ok(self
            .critical_points
            .iter()
            .map(|p| self.point_jacobian_frames(&frames, p))
            .collect())
    }

    /// End-effector pose `(p, q)` with the quaternion canonicalised to
    /// `w >= 0`. The quaternion comes from the rotation matrix of the tool
    /// frame and has unit norm.
    pub fn ee_pose(&self, theta: &DVector<f64>) -> Result<DVector<f64>, KinematicsError> {
        self.check_theta(theta)?;
        let frames = self.frames(theta);
        let t = frames[self.n()] * self.tool;
        let q = quaternion_from_rotation(&t.fixed_view::<3, 3>(0, 0).into_owned());
        let mut pose = DVector::zeros(POSE_DIM);
        pose[0] = t[(0, 3)];
        pose[1] = t[(1, 3)];
        pose[2] = t[(2, 3)];
        pose[3] = q[0];
        pose[4] = q[1];
        pose[5] = q[2];
        pose[6] = q[3];
        Ok(pose)
    }

    /// 7 x n end-effector Jacobian at `theta`: translational rows on top,
    /// quaternion-rate rows `qdot = 1/2 * Omega(q) * J_omega` below, with `q`
    /// the canonical quaternion returned by [`Self::ee_pose`].
    pub fn ee_jacobian(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>, KinematicsError> {
        self.check_theta(theta)?;
        let n = self.n();
        let frames = self.frames(theta);
        let t = frames[n] * self.tool;
        let p = t.fixed_view::<3, 1>(0, 3).into_owned();
        let q = quaternion_from_rotation(&t.fixed_view::<3, 3>(0, 0).into_owned());
        let mut jac = DMatrix::zeros(POSE_DIM, n);
        let rate = quaternion_rate_matrix(&q);
        for i in 0..n {
            let axis = frames[i].fixed_view::<3, 1>(0, 2).into_owned();
            let origin = frames[i].fixed_view::<3, 1>(0, 3).into_owned();
            let lin = axis.cross(&(p - origin));
            for r in 0..3 {
                jac[(r, i)] = lin[r];
            }
            // Column i of the angular Jacobian is the joint axis itself.
            let qdot = rate * axis;
            for r in 0..4 {
                jac[(3 + r, i)] = qdot[r];
            }
        }
        Ok(jac)
    }
}

/// `theta_{k+1} = theta_k + t_s * u_k`.
pub fn integrate_joints(
    theta: &DVector<f64>,
    u: &DVector<f64>,
    t_s: f64,
) -> Result<DVector<f64>, KinematicsError> {
    if theta.len() != u.len() {
        return Err(KinematicsError::Dimension {
            expected: theta.len(),
            got: u.len(),
        });
    }
    Ok(theta + u * t_s)
}

/// One step of the frozen-Jacobian prediction model,
/// `x_{k+1} = x_k + t_s * J * u_k`, for position or pose vectors alike.
pub fn predict_point(
    x: &DVector<f64>,
    jacobian: &DMatrix<f64>,
    u: &DVector<f64>,
    t_s: f64,
) -> Result<DVector<f64>, KinematicsError> {
    if jacobian.nrows() != x.len() {
        return Err(KinematicsError::Dimension {
            expected: x.len(),
            got: jacobian.nrows(),
        });
    }
    if jacobian.ncols() != u.len() {
        return Err(KinematicsError::Dimension {
            expected: jacobian.ncols(),
            got: u.len(),
        });
    }
    Ok(x + jacobian * u * t_s)
}

/// Maps a world-frame angular velocity to the quaternion rate:
/// `qdot = 1/2 * (0, omega) x q`, as a 4 x 3 matrix acting on `omega`.
pub fn quaternion_rate_matrix(q: &[f64; 4]) -> nalgebra::Matrix4x3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    0.5 * nalgebra::Matrix4x3::new(
        -x, -y, -z, //
        w, z, -y, //
        -z, w, x, //
        y, -x, w,
    )
}

fn dh_transform(row: &DhRow, theta: f64) -> Matrix4<f64> {
    let th = theta + row.theta_offset;
    let (st, ct) = th.sin_cos();
    let (sa, ca) = row.alpha.sin_cos();
    Matrix4::new(
        ct, -st * ca, st * sa, row.a * ct, //
        st, ct * ca, -ct * sa, row.a * st, //
        0.0, sa, ca, row.d, //
        0.0, 0.0, 0.0, 1.0,
    )
}

fn point_position(frames: &[Matrix4<f64>], point: &CriticalPoint) -> Vector3<f64> {
    let t = &frames[point.link + 1];
    let off = Vector3::new(point.offset[0], point.offset[1], point.offset[2]);
    t.fixed_view::<3, 3>(0, 0) * off + t.fixed_view::<3, 1>(0, 3)
}

fn rotation_from_quaternion(q: &[f64; 4]) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Shepperd's method, canonicalised to `w >= 0` (ties broken towards a
/// non-negative first non-zero component).
fn quaternion_from_rotation(r: &Matrix3<f64>) -> [f64; 4] {
    let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
    let mut q = if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        [
            0.25 * s,
            (r[(2, 1)] - r[(1, 2)]) / s,
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(1, 0)] - r[(0, 1)]) / s,
        ]
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
        [
            (r[(2, 1)] - r[(1, 2)]) / s,
            0.25 * s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
        ]
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
        [
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            0.25 * s,
            (r[(1, 2)] + r[(2, 1)]) / s,
        ]
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
        [
            (r[(1, 0)] - r[(0, 1)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
            (r[(1, 2)] + r[(2, 1)]) / s,
            0.25 * s,
        ]
    };
    let norm = (q.iter().map(|v| v * v).sum::<f64>()).sqrt();
    for v in q.iter_mut() {
        *v /= norm;
    }
    let flip = if q[0].abs() > 1e-12 {
        q[0] < 0.0
    } else {
        q.iter().copied().find(|v| v.abs() > 1e-12).unwrap_or(1.0) < 0.0
    };
    if flip {
        for v in q.iter_mut() {
            *v = -*v;
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn one_link() -> KinematicChain {
        KinematicChain::new(vec![DhRow {
            a: 1.0,
            alpha: 0.0,
            d: 0.0,
            theta_offset: 0.0,
        }])
        .unwrap()
    }

    #[test]
    fn forward_point_one_link_at_zero() {
        let chain = one_link();
        let p = chain
            .forward_point(&DVector::from_vec(vec![0.0]), "link0")
            .unwrap();
        assert_abs_diff_eq!(p, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn forward_point_one_link_quarter_turn() {
        let chain = one_link();
        let p = chain
            .forward_point(&DVector::from_vec(vec![std::f64::consts::FRAC_PI_2]), "link0")
            .unwrap();
        assert_abs_diff_eq!(p, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn forward_point_rejects_unknown_id() {
        let chain = one_link();
        let err = chain
            .forward_point(&DVector::from_vec(vec![0.0]), "nope")
            .unwrap_err();
        assert!(matches!(err, KinematicsError::UnknownPoint(_)));
    }

    #[test]
    fn point_jacobian_one_link() {
        let chain = one_link();
        let j = chain
            .point_jacobian(&DVector::from_vec(vec![0.0]), "link0")
            .unwrap();
        assert_abs_diff_eq!(j[(0, 0)], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(j[(1, 0)], 1.0, epsilon = 1e-15);
        let j = chain
            .point_jacobian(&DVector::from_vec(vec![std::f64::consts::FRAC_PI_2]), "link0")
            .unwrap();
        assert_abs_diff_eq!(j[(0, 0)], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(j[(1, 0)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn ee_pose_one_link_identity_orientation() {
        let chain = one_link();
        let pose = chain.ee_pose(&DVector::from_vec(vec![0.0])).unwrap();
        let expect = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        for (got, want) in pose.iter().zip(expect) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
        }
    }

    #[test]
    fn ee_pose_half_turn_up_to_sign() {
        // At theta = pi the rotation is 180 degrees about z: q = (0, 0, 0, 1)
        // up to sign; canonicalisation picks the non-negative z component.
        let chain = one_link();
        let pose = chain.ee_pose(&DVector::from_vec(vec![std::f64::consts::PI])).unwrap();
        assert_abs_diff_eq!(pose[3], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pose[6].abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ee_pose_quaternion_unit_norm() {
        let chain = ur5_like();
        let theta = DVector::from_vec(vec![0.3, -1.1, 0.7, 0.2, -0.9, 1.4]);
        let pose = chain.ee_pose(&theta).unwrap();
        let norm = (pose[3] * pose[3] + pose[4] * pose[4] + pose[5] * pose[5] + pose[6] * pose[6]).sqrt();
        assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ee_jacobian_one_link_quaternion_rate_column() {
        // Rotation about z at identity orientation: qdot = (0, 0, 0, 1/2).
        let chain = one_link();
        let j = chain.ee_jacobian(&DVector::from_vec(vec![0.0])).unwrap();
        let expect = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.5];
        for (r, want) in expect.iter().enumerate() {
            assert_abs_diff_eq!(j[(r, 0)], *want, epsilon = 1e-15);
        }
    }

    #[test]
    fn quaternion_rate_map_is_linear_in_omega() {
        let q = [0.5, -0.5, 0.5, 0.5];
        let m = quaternion_rate_matrix(&q);
        let zero = m * Vector3::zeros();
        assert_abs_diff_eq!(zero.norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn integrate_joints_examples() {
        let theta = DVector::from_vec(vec![0.1, -0.2]);
        let zero = integrate_joints(&theta, &DVector::zeros(2), 0.04).unwrap();
        assert_abs_diff_eq!(zero, theta, epsilon = 1e-16);

        let theta = DVector::from_vec(vec![0.0]);
        let stepped = integrate_joints(&theta, &DVector::from_vec(vec![0.6]), 0.04).unwrap();
        assert_abs_diff_eq!(stepped[0], 0.024, epsilon = 1e-15);

        let back = integrate_joints(&stepped, &DVector::from_vec(vec![-0.6]), 0.04).unwrap();
        assert_abs_diff_eq!(back[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn predict_point_zero_input_is_identity() {
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let j = DMatrix::from_element(3, 2, 0.7);
        let out = predict_point(&x, &j, &DVector::zeros(2), 0.04).unwrap();
        assert_abs_diff_eq!(out, x, epsilon = 1e-16);
    }

    #[test]
    fn predict_point_matches_manual_step() {
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let j = DMatrix::from_row_slice(2, 1, &[2.0, -1.0]);
        let u = DVector::from_vec(vec![0.5]);
        let out = predict_point(&x, &j, &u, 0.1).unwrap();
        assert_abs_diff_eq!(out[0], 1.1, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], -0.05, epsilon = 1e-15);
    }

    #[test]
    fn predict_point_checks_dimensions() {
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let j = DMatrix::zeros(2, 2);
        assert!(predict_point(&x, &j, &DVector::zeros(2), 0.1).is_err());
    }

    fn ur5_like() -> KinematicChain {
        let pi2 = std::f64::consts::FRAC_PI_2;
        KinematicChain::new(vec![
            DhRow { a: 0.0, alpha: pi2, d: 0.089159, theta_offset: 0.0 },
            DhRow { a: -0.425, alpha: 0.0, d: 0.0, theta_offset: 0.0 },
            DhRow { a: -0.39225, alpha: 0.0, d: 0.0, theta_offset: 0.0 },
            DhRow { a: 0.0, alpha: pi2, d: 0.10915, theta_offset: 0.0 },
            DhRow { a: 0.0, alpha: -pi2, d: 0.09465, theta_offset: 0.0 },
            DhRow { a: 0.0, alpha: 0.0, d: 0.0823, theta_offset: 0.0 },
        ])
        .unwrap()
    }

    #[test]
    fn default_critical_points_are_frame_origins() {
        let chain = ur5_like();
        let theta = DVector::zeros(6);
        let p0 = chain.forward_point(&theta, "link0").unwrap();
        assert_abs_diff_eq!(p0, Vector3::new(0.0, 0.0, 0.089159), epsilon = 1e-12);
        let p5 = chain.forward_point(&theta, "link5").unwrap();
        let pose = chain.ee_pose(&theta).unwrap();
        assert_abs_diff_eq!(p5, Vector3::new(pose[0], pose[1], pose[2]), epsilon = 1e-12);
    }

    #[test]
    fn config_rejects_bad_point_link() {
        let cfg = ChainConfig {
            name: None,
            notes: None,
            length_unit: None,
            dh: vec![[1.0, 0.0, 0.0, 0.0]],
            tool: None,
            critical_points: Some(vec![CriticalPoint {
                id: "tip".into(),
                link: 3,
                offset: [0.0; 3],
            }]),
            joint_limits: None,
        };
        assert!(matches!(
            KinematicChain::from_config(&cfg),
            Err(KinematicsError::PointLinkOutOfRange { .. })
        ));
    }

    #[test]
    fn config_converts_centimetres() {
        let cfg = ChainConfig {
            name: None,
            notes: None,
            length_unit: Some("cm".into()),
            dh: vec![[100.0, 0.0, 0.0, 0.0]],
            tool: None,
            critical_points: None,
            joint_limits: None,
        };
        let chain = KinematicChain::from_config(&cfg).unwrap();
        let p = chain.forward_point(&DVector::zeros(1), "link0").unwrap();
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn config_rejects_bad_joint_limits() {
        let cfg = ChainConfig {
            name: None,
            notes: None,
            length_unit: None,
            dh: vec![[1.0, 0.0, 0.0, 0.0]],
            tool: None,
            critical_points: None,
            joint_limits: Some(vec![[1.0, -1.0]]),
        };
        assert!(matches!(
            KinematicChain::from_config(&cfg),
            Err(KinematicsError::BadJointLimits)
        ));
    }
}
