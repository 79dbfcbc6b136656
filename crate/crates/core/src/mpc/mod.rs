//! Receding-horizon controller that trades tracking performance against
//! obstacle clearance through per-point decay rates.
//!
//! Each control step freezes the kinematics at the current configuration
//! and poses one nonlinear program over the horizon inputs
//! `u_0, ..., u_N` plus one decay rate per protected point (the end
//! effector and every critical point along the chain):
//!
//! * quadratic cost: predicted pose error against the reference, input
//!   effort, and a penalty on the decay rates that keeps them small unless
//!   tracking pressure justifies loosening the barrier;
//! * flexible barrier rows `H_{i+1} >= (1 - gamma) H_i` for every
//!   (point, obstacle) pair and horizon stage, written against predicted
//!   obstacle positions;
//! * hard actuator boxes `|u| <= u_max` and joint-range containment of the
//!   integrated configuration across the horizon.
//!
//! The baseline mode drops the decay variables and instead requires plain
//! containment `H_i >= 0` at every predicted stage, which is exactly the
//! flexible criterion pinned at `gamma = 1`.

pub mod qp;
pub mod sqp;

use nalgebra::{DMatrix, DVector, Vector3};
use thiserror::Error;

use crate::cbf::SafetySpec;
use crate::kinematics::{KinematicChain, KinematicsError, POSE_DIM};
use sqp::{solve_sqp, NonlinearProgram, SqpSettings, SqpStatus};

/// Smallest admissible decay rate; keeps `gamma` strictly positive so the
/// criterion never degenerates to "hold the surplus forever exactly".
pub const GAMMA_MIN: f64 = 1e-4;

/// Norm floor used only inside constraint derivatives to keep direction
/// vectors defined when a predicted point sits on an obstacle centre.
const NORM_EPS: f64 = 1e-9;

/// Barrier rows within this distance of zero count as active.
const ACTIVE_TOL: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum MpcError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("bad controller config: {0}")]
    BadConfig(String),
    #[error("obstacle {id} supplies {got} predicted positions, need {need}")]
    PredictionLength { id: String, need: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerMode {
    /// Flexible barrier rows with optimised decay rates.
    Fasm,
    /// Plain containment `H_i >= 0` at every predicted stage.
    Baseline,
}

#[derive(Debug, Clone)]
pub struct MpcConfig {
    /// Horizon `N`: inputs `u_0..u_N` and predicted states through `N + 1`.
    pub horizon: usize,
    pub t_s: f64,
    /// Symmetric actuator bound, rad/s.
    pub u_max: f64,
    pub gamma_min: f64,
    /// Decay-rate value used to seed the solver when no warm start exists.
    pub gamma_init: f64,
    pub mode: ControllerMode,
}

/// Diagonal cost weights.
#[derive(Debug, Clone)]
pub struct Weights {
    /// Pose-error weights, length 7.
    pub q: DVector<f64>,
    /// Input weights, length n.
    pub r: DVector<f64>,
    /// Penalty on the end-effector decay rate.
    pub p_gamma: f64,
    /// Penalty on each critical-point decay rate.
    pub p_j: f64,
}

/// One obstacle as the controller sees it: safety margins plus predicted
/// centre positions for stages `0..=N+1`.
#[derive(Debug, Clone)]
pub struct ObstacleTrack {
    pub id: String,
    pub spec: SafetySpec,
    pub predictions: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone)]
struct Barrier {
    id: String,
    /// Frozen translational Jacobian of the protected point, 3 x n.
    jac: DMatrix<f64>,
    /// Point position at the current configuration.
    p0: Vector3<f64>,
    /// Predicted obstacle centres for stages 0..=N+1.
    preds: Vec<Vector3<f64>>,
    r_safe: f64,
    /// Column of this point's decay variable; `None` in baseline mode.
    gamma_col: Option<usize>,
}

/// One control-step program, ready for the SQP driver.
#[derive(Debug, Clone)]
pub struct MpcProblem {
    n: usize,
    horizon: usize,
    t_s: f64,
    mode: ControllerMode,
    nv: usize,
    hess: DMatrix<f64>,
    q_lin: DVector<f64>,
    c0: f64,
    barriers: Vec<Barrier>,
    n_cbfsc: usize,
    lin_g: DMatrix<f64>,
    lin_h: DVector<f64>,
    gamma_min: f64,
    gamma_init: f64,
    /// Point ids in decay-variable order (end effector first).
    gamma_ids: Vec<String>,
    /// Conditions already violated on entry (start inside the inflated
    /// radius, configuration outside joint limits). Informational; the
    /// program stays solvable and steers back.
    pub pre_violated: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MpcStatus {
    Optimal,
    MaxIterations,
    Infeasible { worst: String },
}

impl MpcStatus {
    pub fn is_optimal(&self) -> bool {
        matches!(self, MpcStatus::Optimal)
    }
}

/// Barrier row sitting on its boundary at the solution.
#[derive(Debug, Clone)]
pub struct ActiveConstraint {
    pub barrier_id: String,
    pub stage: usize,
    /// Constraint value `(1 - gamma) H_i - H_{i+1}` at the solution.
    pub value: f64,
    pub multiplier: f64,
}

#[derive(Debug, Clone)]
pub struct MpcSolution {
    pub status: MpcStatus,
    /// Planned inputs `u_0..u_N`.
    pub u: Vec<DVector<f64>>,
    pub gamma_e: f64,
    /// Per-critical-point decay rates in chain order.
    pub gamma_points: Vec<(String, f64)>,
    pub cost: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub active: Vec<ActiveConstraint>,
    /// Raw decision vector, reusable as a warm start.
    pub z: DVector<f64>,
}

impl MpcSolution {
    pub fn first_input(&self) -> &DVector<f64> {
        &self.u[0]
    }

    pub fn max_gamma(&self) -> f64 {
        self.gamma_points
            .iter()
            .map(|(_, g)| *g)
            .fold(self.gamma_e, f64::max)
    }
}

/// Shifts a previous solution one step forward: drop `u_0`, repeat the last
/// input block, keep the decay rates.
pub fn shift_warm_start(z: &DVector<f64>, n: usize, horizon: usize) -> DVector<f64> {
    let blocks = horizon + 1;
    let mut out = z.clone();
    for a in 0..blocks - 1 {
        for j in 0..n {
            out[a * n + j] = z[(a + 1) * n + j];
        }
    }
    for j in 0..n {
        out[(blocks - 1) * n + j] = z[(blocks - 1) * n + j];
    }
    out
}

pub fn build_problem(
    chain: &KinematicChain,
    theta: &DVector<f64>,
    x_ref: &DVector<f64>,
    obstacles: &[ObstacleTrack],
    weights: &Weights,
    cfg: &MpcConfig,
) -> Result<MpcProblem, MpcError> {
    let n = chain.n();
    let big_n = cfg.horizon;
    let blocks = big_n + 1;
    if theta.len() != n {
        return Err(MpcError::Dimension { expected: n, got: theta.len() });
    }
    if x_ref.len() != POSE_DIM {
        return Err(MpcError::Dimension { expected: POSE_DIM, got: x_ref.len() });
    }
    if weights.q.len() != POSE_DIM {
        return Err(MpcError::Dimension { expected: POSE_DIM, got: weights.q.len() });
    }
    if weights.r.len() != n {
        return Err(MpcError::Dimension { expected: n, got: weights.r.len() });
    }
    if cfg.t_s <= 0.0 || !cfg.t_s.is_finite() {
        return Err(MpcError::BadConfig(format!("t_s must be positive, got {}", cfg.t_s)));
    }
    if cfg.u_max <= 0.0 {
        // A zero bound would pose the actuator box as a degenerate pair of
        // opposing rows, which has no strictly feasible interior.
        return Err(MpcError::BadConfig(format!("u_max must be positive, got {}", cfg.u_max)));
    }
    if !(cfg.gamma_min > 0.0 && cfg.gamma_min <= 1.0) {
        return Err(MpcError::BadConfig(format!(
            "gamma_min must lie in (0, 1], got {}",
            cfg.gamma_min
        )));
    }
    if weights.r.iter().any(|v| *v <= 0.0) || weights.q.iter().any(|v| *v < 0.0) {
        return Err(MpcError::BadConfig(
            "input weights must be positive and pose weights non-negative".into(),
        ));
    }
    if weights.p_gamma <= 0.0 || weights.p_j <= 0.0 {
        return Err(MpcError::BadConfig("decay-rate penalties must be positive".into()));
    }

    let fasm = cfg.mode == ControllerMode::Fasm;
    let n_points = 1 + chain.critical_points().len();
    let n_gamma = if fasm { n_points } else { 0 };
    let nv = blocks * n + n_gamma;

    // Frozen kinematics at the current configuration.
    let pose0 = chain.ee_pose(theta)?;
    let j_e = chain.ee_jacobian(theta)?;
    let crit_pos = chain.critical_positions(theta)?;
    let crit_jac = chain.critical_jacobians(theta)?;

    // Pose error with the reference quaternion sign-aligned to the current
    // one, so the subtraction measures the short way around.
    let mut x_ref = x_ref.clone();
    let qdot: f64 = (3..7).map(|d| pose0[d] * x_ref[d]).sum();
    if qdot < 0.0 {
        for d in 3..7 {
            x_ref[d] = -x_ref[d];
        }
    }
    let e0 = &pose0 - &x_ref;

    // Quadratic cost. With S_i the input prefix sums, the predicted pose
    // error at stage i is e0 + t_s J_e S_i, so the Hessian block for
    // (u_a, u_b) collects 2 t_s^2 J'QJ once per stage i > max(a, b).
    let mut wj = j_e.clone();
    for d in 0..POSE_DIM {
        let row = wj.row(d) * weights.q[d];
        wj.set_row(d, &row);
    }
    let jtqj = j_e.transpose() * &wj;
    let qe0 = DVector::from_fn(POSE_DIM, |d, _| weights.q[d] * e0[d]);
    let jtqe0 = j_e.transpose() * &qe0;

    let mut hess = DMatrix::zeros(nv, nv);
    let mut q_lin = DVector::zeros(nv);
    for a in 0..blocks {
        for b in 0..blocks {
            let stages = (blocks - a.max(b)) as f64;
            let coeff = 2.0 * cfg.t_s * cfg.t_s * stages;
            let mut view = hess.view_mut((a * n, b * n), (n, n));
            view += &jtqj * coeff;
        }
        for j in 0..n {
            hess[(a * n + j, a * n + j)] += 2.0 * weights.r[j];
        }
        let coeff = 2.0 * cfg.t_s * (blocks - a) as f64;
        q_lin.rows_mut(a * n, n).copy_from(&(&jtqe0 * coeff));
    }
    let mut gamma_ids = Vec::new();
    if fasm {
        hess[(blocks * n, blocks * n)] = 2.0 * blocks as f64 * weights.p_gamma;
        gamma_ids.push("ee".to_string());
        for (c, point) in chain.critical_points().iter().enumerate() {
            hess[(blocks * n + 1 + c, blocks * n + 1 + c)] = 2.0 * blocks as f64 * weights.p_j;
            gamma_ids.push(point.id.clone());
        }
    }
    let c0 = blocks as f64 * (0..POSE_DIM).map(|d| weights.q[d] * e0[d] * e0[d]).sum::<f64>();

    // Barriers: end effector first, then every critical point, per obstacle.
    let mut barriers = Vec::new();
    let mut pre_violated = Vec::new();
    let ee_p0 = Vector3::new(pose0[0], pose0[1], pose0[2]);
    let ee_jac = j_e.rows(0, 3).into_owned();
    for obs in obstacles {
        if obs.predictions.len() < blocks + 1 {
            return Err(MpcError::PredictionLength {
                id: obs.id.clone(),
                need: blocks + 1,
                got: obs.predictions.len(),
            });
        }
        // The baseline containment mode evaluates every stage against the
        // obstacle as measured now; only the flexible mode couples the
        // horizon to the observer's motion predictions.
        let preds: Vec<Vector3<f64>> = if fasm {
            obs.predictions[..blocks + 1].to_vec()
        } else {
            vec![obs.predictions[0]; blocks + 1]
        };
        let r_safe = obs.spec.safe_radius();
        let make = |point_id: &str, p0: Vector3<f64>, jac: DMatrix<f64>, gcol: Option<usize>| {
            Barrier {
                id: format!("{point_id}:{}", obs.id),
                jac,
                p0,
                preds: preds.clone(),
                r_safe,
                gamma_col: gcol,
            }
        };
        barriers.push(make(
            "ee",
            ee_p0,
            ee_jac.clone(),
            fasm.then_some(blocks * n),
        ));
        for (c, point) in chain.critical_points().iter().enumerate() {
            barriers.push(make(
                &point.id,
                crit_pos[c],
                crit_jac[c].clone(),
                fasm.then_some(blocks * n + 1 + c),
            ));
        }
    }
    for b in &barriers {
        let h0 = (b.p0 - b.preds[0]).norm() - b.r_safe;
        if h0 < 0.0 {
            pre_violated.push(format!("{} starts inside the inflated radius (H = {h0:.6})", b.id));
        }
    }

    // Linear rows: actuator boxes, decay-rate boxes, joint-range rows.
    // Joint bounds are widened to the current configuration if it already
    // sits outside, so the program stays feasible while steering back.
    let limits = chain.joint_limits();
    let mut lo = vec![0.0f64; n];
    let mut hi = vec![0.0f64; n];
    for j in 0..n {
        lo[j] = limits[j].0.min(theta[j]);
        hi[j] = limits[j].1.max(theta[j]);
        if theta[j] < limits[j].0 || theta[j] > limits[j].1 {
            pre_violated.push(format!(
                "joint {j} at {} outside [{}, {}]",
                theta[j], limits[j].0, limits[j].1
            ));
        }
    }
    let n_ubox = 2 * n * blocks;
    let n_gbox = 2 * n_gamma;
    let n_theta = 2 * n * blocks;
    let n_lin = n_ubox + n_gbox + n_theta;
    let mut lin_g = DMatrix::zeros(n_lin, nv);
    let mut lin_h = DVector::zeros(n_lin);
    let mut row = 0;
    for a in 0..blocks {
        for j in 0..n {
            lin_g[(row, a * n + j)] = 1.0;
            lin_h[row] = cfg.u_max;
            row += 1;
            lin_g[(row, a * n + j)] = -1.0;
            lin_h[row] = cfg.u_max;
            row += 1;
        }
    }
    for g in 0..n_gamma {
        lin_g[(row, blocks * n + g)] = 1.0;
        lin_h[row] = 1.0;
        row += 1;
        lin_g[(row, blocks * n + g)] = -1.0;
        lin_h[row] = -cfg.gamma_min;
        row += 1;
    }
    for i in 1..=blocks {
        for j in 0..n {
            // theta_j + t_s sum_{a<i} u_{a,j} within [lo, hi].
            for a in 0..i {
                lin_g[(row, a * n + j)] = cfg.t_s;
                lin_g[(row + 1, a * n + j)] = -cfg.t_s;
            }
            lin_h[row] = hi[j] - theta[j];
            lin_h[row + 1] = theta[j] - lo[j];
            row += 2;
        }
    }
    debug_assert_eq!(row, n_lin);

    let n_cbfsc = barriers.len() * blocks;
    Ok(MpcProblem {
        n,
        horizon: big_n,
        t_s: cfg.t_s,
        mode: cfg.mode,
        nv,
        hess,
        q_lin,
        c0,
        barriers,
        n_cbfsc,
        lin_g,
        lin_h,
        gamma_min: cfg.gamma_min,
        gamma_init: cfg.gamma_init.clamp(cfg.gamma_min, 1.0),
        gamma_ids,
        pre_violated,
    })
}

impl MpcProblem {
    pub fn num_vars(&self) -> usize {
        self.nv
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn mode(&self) -> ControllerMode {
        self.mode
    }

    /// Input prefix sums S_0..S_{N+1} for the current decision vector.
    fn prefix_sums(&self, z: &DVector<f64>) -> Vec<DVector<f64>> {
        let blocks = self.horizon + 1;
        let mut sums = Vec::with_capacity(blocks + 1);
        sums.push(DVector::zeros(self.n));
        for a in 0..blocks {
            let next = sums.last().unwrap() + z.rows(a * self.n, self.n);
            sums.push(next);
        }
        sums
    }

    /// Surplus distances H_0..H_{N+1} for one barrier.
    fn surpluses(&self, b: &Barrier, sums: &[DVector<f64>]) -> Vec<f64> {
        sums.iter()
            .enumerate()
            .map(|(i, s)| {
                let p = b.p0 + Vector3::from_iterator((&b.jac * s).iter().cloned()) * self.t_s;
                (p - b.preds[i]).norm() - b.r_safe
            })
            .collect()
    }

    fn gamma_of(&self, b: &Barrier, z: &DVector<f64>) -> f64 {
        match b.gamma_col {
            Some(col) => z[col],
            None => 1.0,
        }
    }

    /// Maps a constraint row to a human-readable name.
    pub fn row_name(&self, row: usize) -> String {
        let blocks = self.horizon + 1;
        if row < self.n_cbfsc {
            let b = &self.barriers[row / blocks];
            let stage = row % blocks;
            match self.mode {
                ControllerMode::Fasm => format!("{} stage {stage}", b.id),
                ControllerMode::Baseline => format!("{} stage {}", b.id, stage + 1),
            }
        } else {
            format!("bound row {}", row - self.n_cbfsc)
        }
    }

    fn default_start(&self) -> DVector<f64> {
        let mut z = DVector::zeros(self.nv);
        let blocks = self.horizon + 1;
        for g in 0..self.gamma_ids.len() {
            z[blocks * self.n + g] = self.gamma_init;
        }
        z
    }

    /// Clamp a warm start into the variable boxes so the first
    /// linearisation is taken from a sensible point.
    fn sanitize_start(&self, z: &DVector<f64>) -> DVector<f64> {
        let blocks = self.horizon + 1;
        let mut out = z.clone();
        // Recover u bounds from the first actuator row's right-hand side.
        let u_max = self.lin_h[0];
        for a in 0..blocks {
            for j in 0..self.n {
                out[a * self.n + j] = out[a * self.n + j].clamp(-u_max, u_max);
            }
        }
        for g in 0..self.gamma_ids.len() {
            let col = blocks * self.n + g;
            out[col] = out[col].clamp(self.gamma_min, 1.0);
        }
        out
    }
}

impl NonlinearProgram for MpcProblem {
    fn dim(&self) -> usize {
        self.nv
    }

    fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * (z.transpose() * &self.hess * z)[(0, 0)] + self.q_lin.dot(z) + self.c0
    }

    fn objective_gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.hess * z + &self.q_lin
    }

    fn hessian_model(&self) -> DMatrix<f64> {
        self.hess.clone()
    }

    fn constraints(&self, z: &DVector<f64>) -> DVector<f64> {
        let blocks = self.horizon + 1;
        let sums = self.prefix_sums(z);
        let mut g = DVector::zeros(self.n_cbfsc + self.lin_h.len());
        let mut row = 0;
        for b in &self.barriers {
            let h = self.surpluses(b, &sums);
            match self.mode {
                ControllerMode::Fasm => {
                    let gamma = self.gamma_of(b, z);
                    for i in 0..blocks {
                        g[row] = (1.0 - gamma) * h[i] - h[i + 1];
                        row += 1;
                    }
                }
                ControllerMode::Baseline => {
                    for i in 1..=blocks {
                        g[row] = -h[i];
                        row += 1;
                    }
                }
            }
        }
        let lin = &self.lin_g * z - &self.lin_h;
        g.rows_mut(self.n_cbfsc, self.lin_h.len()).copy_from(&lin);
        g
    }

    fn constraint_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let blocks = self.horizon + 1;
        let sums = self.prefix_sums(z);
        let mut jac = DMatrix::zeros(self.n_cbfsc + self.lin_h.len(), self.nv);
        let mut row = 0;
        for b in &self.barriers {
            // Unit directions from the predicted obstacle centre to the
            // predicted point, floored in norm; dH_i/du_a = [a < i] t_s d_i'J.
            let mut h = Vec::with_capacity(blocks + 2);
            let mut ddir: Vec<nalgebra::RowDVector<f64>> = Vec::with_capacity(blocks + 2);
            for (i, s) in sums.iter().enumerate() {
                let p = b.p0 + Vector3::from_iterator((&b.jac * s).iter().cloned()) * self.t_s;
                let diff = p - b.preds[i];
                let nrm = diff.norm();
                h.push(nrm - b.r_safe);
                let dir = diff / nrm.max(NORM_EPS);
                ddir.push(nalgebra::RowDVector::from_iterator(
                    self.n,
                    (dir.transpose() * &b.jac).iter().cloned(),
                ) * self.t_s);
            }
            match self.mode {
                ControllerMode::Fasm => {
                    let gamma = self.gamma_of(b, z);
                    for i in 0..blocks {
                        for a in 0..blocks {
                            let mut seg = nalgebra::RowDVector::zeros(self.n);
                            if a < i {
                                seg += &ddir[i] * (1.0 - gamma);
                            }
                            if a < i + 1 {
                                seg -= &ddir[i + 1];
                            }
                            jac.view_mut((row, a * self.n), (1, self.n)).copy_from(&seg);
                        }
                        if let Some(col) = b.gamma_col {
                            jac[(row, col)] = -h[i];
                        }
                        row += 1;
                    }
                }
                ControllerMode::Baseline => {
                    for i in 1..=blocks {
                        for a in 0..i {
                            let seg = -&ddir[i];
                            jac.view_mut((row, a * self.n), (1, self.n)).copy_from(&seg);
                        }
                        row += 1;
                    }
                }
            }
        }
        jac.view_mut((self.n_cbfsc, 0), (self.lin_h.len(), self.nv))
            .copy_from(&self.lin_g);
        jac
    }

    fn soft_rows(&self) -> Vec<bool> {
        let mut soft = vec![false; self.n_cbfsc + self.lin_h.len()];
        for s in soft.iter_mut().take(self.n_cbfsc) {
            *s = true;
        }
        soft
    }
}

pub fn solve(problem: &MpcProblem, warm: Option<&DVector<f64>>) -> MpcSolution {
    solve_with(problem, warm, &SqpSettings::default())
}

pub fn solve_with(
    problem: &MpcProblem,
    warm: Option<&DVector<f64>>,
    settings: &SqpSettings,
) -> MpcSolution {
    let z0 = match warm {
        Some(z) if z.len() == problem.nv => problem.sanitize_start(z),
        _ => problem.default_start(),
    };
    let res = solve_sqp(problem, &z0, settings);

    let blocks = problem.horizon + 1;
    let u = (0..blocks)
        .map(|a| res.z.rows(a * problem.n, problem.n).into_owned())
        .collect();
    let (gamma_e, gamma_points) = match problem.mode {
        ControllerMode::Fasm => {
            let ge = res.z[blocks * problem.n];
            let pts = problem
                .gamma_ids
                .iter()
                .enumerate()
                .skip(1)
                .map(|(g, id)| (id.clone(), res.z[blocks * problem.n + g]))
                .collect();
            (ge, pts)
        }
        ControllerMode::Baseline => {
            let pts = problem
                .barriers
                .iter()
                .filter(|b| !b.id.starts_with("ee:"))
                .map(|b| (b.id.clone(), 1.0))
                .collect();
            (1.0, pts)
        }
    };

    let g = problem.constraints(&res.z);
    let mut active = Vec::new();
    for row in 0..problem.n_cbfsc {
        if g[row] >= -ACTIVE_TOL {
            let b = &problem.barriers[row / blocks];
            let stage = match problem.mode {
                ControllerMode::Fasm => row % blocks,
                ControllerMode::Baseline => row % blocks + 1,
            };
            active.push(ActiveConstraint {
                barrier_id: b.id.clone(),
                stage,
                value: g[row],
                multiplier: res.multipliers[row],
            });
        }
    }

    let status = match res.status {
        SqpStatus::Optimal => MpcStatus::Optimal,
        SqpStatus::MaxIterations => MpcStatus::MaxIterations,
        SqpStatus::Infeasible { worst_row } => MpcStatus::Infeasible {
            worst: problem.row_name(worst_row),
        },
    };

    MpcSolution {
        status,
        u,
        gamma_e,
        gamma_points,
        cost: res.cost,
        kkt_residual: res.kkt_residual,
        iterations: res.iterations,
        active,
        z: res.z,
    }
}
