//! Closed-loop execution of a scenario: obstacle truth, observer updates,
//! controller solves, joint integration, logging, and run metrics.
//!
//! Ordering per control step `k`:
//! 1. the obstacle truth advances to `t = k t_s` and is measured (with
//!    optional noise);
//! 2. the controller consumes the observer state from step `k` (seeded at
//!    `k = 0`) to predict obstacle centres over the horizon;
//! 3. the program is built at the current configuration and solved, warm
//!    started from the shifted previous solution;
//! 4. the first input block is applied when the solve is optimal,
//!    otherwise the arm holds still for this step (logged);
//! 5. the observer ingests the measurement, producing the state for
//!    step `k + 1`.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use nalgebra::{DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use thiserror::Error;

use crate::cbf::{bounding_radius, clearance, CbfError, SafetySpec};
use crate::kinematics::{integrate_joints, KinematicsError, POSE_DIM};
use crate::mpc::{
    build_problem, shift_warm_start, solve, ActiveConstraint, ControllerMode, MpcConfig,
    MpcError, MpcStatus, ObstacleTrack, Weights, GAMMA_MIN,
};
use crate::observer::{
    build_phi, build_system, gpio_step, lyapunov_certificate, predict_obstacle, GpioConfig,
    GpioState, ObserverError,
};
use crate::scenario::{ModeConfig, ObserverInit, RdMode, ReferenceConfig, Scenario, ScenarioError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Observer(#[from] ObserverError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error(transparent)]
    Cbf(#[from] CbfError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("harness error: {0}")]
    Other(String),
}

/// One control step as logged.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub k: usize,
    pub t: f64,
    pub theta: DVector<f64>,
    /// Applied input (zero when the solver did not return optimal).
    pub u: DVector<f64>,
    pub ee_pose: DVector<f64>,
    pub obs_true: Vec<Vector3<f64>>,
    pub obs_hat: Vec<Vector3<f64>>,
    pub vel_hat: Vec<Vector3<f64>>,
    /// True end-effector clearance, min across obstacles.
    pub h_e: f64,
    /// True critical-point clearance, min across points and obstacles.
    pub h_min_crit: f64,
    pub gamma_e: f64,
    pub gamma_j_min: f64,
    pub gamma_max: f64,
    pub cost: f64,
    pub status: String,
    /// Wall-clock solve time; masked to 0 in trajectory files unless
    /// timing logging is enabled.
    pub solve_ms: f64,
    pub active: Vec<ActiveConstraint>,
}

#[derive(Debug, Clone)]
pub struct TrajectoryLog {
    pub scenario_name: String,
    pub mode: String,
    pub n: usize,
    pub timing_enabled: bool,
    pub steps: Vec<StepRecord>,
    /// State after the last integration, evaluated at `t = steps * t_s`.
    pub final_t: f64,
    pub final_theta: DVector<f64>,
    pub final_ee_pose: DVector<f64>,
    pub final_h_e: f64,
    pub final_h_min_crit: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunMetrics {
    pub scenario: String,
    pub mode: String,
    pub steps: usize,
    /// Min over the run (including the terminal state) of the true
    /// clearance across the end effector and every critical point.
    pub min_clearance: f64,
    pub collision: bool,
    /// Max end-effector height reached.
    pub highest_altitude: f64,
    /// First time a barrier row is active at an optimal solution.
    pub trigger_moment: Option<f64>,
    pub max_gamma: f64,
    pub final_position_error: f64,
    pub final_quaternion_error: f64,
    pub joint_limits_ok: bool,
    pub input_bounds_ok: bool,
    pub status_counts: BTreeMap<String, usize>,
    pub all_optimal: bool,
    pub mean_solve_ms: f64,
    pub max_solve_ms: f64,
}

/// Waypoint schedule: `(end_time, pose)` entries; the last pose holds
/// forever.
pub fn reference_schedule(
    reference: &ReferenceConfig,
) -> Result<Vec<(f64, DVector<f64>)>, ScenarioError> {
    let mut out = Vec::with_capacity(reference.waypoints.len());
    let mut t_end = 0.0;
    for w in &reference.waypoints {
        t_end += w.hold;
        out.push((t_end, w.pose.to_vector()?));
    }
    Ok(out)
}

pub fn pose_at(schedule: &[(f64, DVector<f64>)], t: f64) -> &DVector<f64> {
    for (end, pose) in schedule {
        if t < *end {
            return pose;
        }
    }
    &schedule.last().expect("schedule is non-empty").1
}

fn status_name(status: &MpcStatus) -> String {
    match status {
        MpcStatus::Optimal => "optimal".into(),
        MpcStatus::MaxIterations => "max_iter".into(),
        MpcStatus::Infeasible { .. } => "infeasible".into(),
    }
}

pub fn run_scenario(scenario: &Scenario) -> Result<TrajectoryLog, HarnessError> {
    let cfg = &scenario.config;
    let chain = &scenario.chain;
    let n = chain.n();
    let t_s = cfg.t_s;
    let steps = ((cfg.duration / t_s).round() as usize).max(1);

    let gpio = GpioConfig::new(
        cfg.observer.m,
        cfg.observer.alphas.clone(),
        t_s,
        cfg.observer.eta,
        cfg.observer.delta,
    )?;
    let model = build_system(cfg.observer.m, t_s)?;
    let r_d = match &cfg.safety.r_d_mode {
        RdMode::Named(_) => {
            let phi = build_phi(&cfg.observer.alphas, t_s);
            lyapunov_certificate(&phi, cfg.observer.eta)?.phi0() * cfg.observer.delta
        }
        RdMode::Fixed { fixed } => *fixed,
    };

    let n_obs = cfg.safety.obstacles.len();
    let mut specs = Vec::with_capacity(n_obs);
    let mut obs_ids = Vec::with_capacity(n_obs);
    let mut starts = Vec::with_capacity(n_obs);
    let mut vels = Vec::with_capacity(n_obs);
    let mut states: Vec<GpioState> = Vec::with_capacity(n_obs);
    for (j, obs) in cfg.safety.obstacles.iter().enumerate() {
        specs.push(SafetySpec::new(cfg.safety.d_min, bounding_radius(&obs.shape), r_d)?);
        obs_ids.push(obs.id.clone().unwrap_or_else(|| format!("obs{j}")));
        let start = Vector3::from(obs.start);
        let vel = Vector3::from(obs.velocity);
        let mut state = GpioState::zeros(cfg.observer.m);
        match &cfg.observer.init {
            ObserverInit::Named(_) => {
                state.xi[0] = start;
                if cfg.observer.m > 1 {
                    state.xi[1] = vel;
                }
            }
            ObserverInit::Values(vals) => {
                for b in 0..cfg.observer.m {
                    state.xi[b] = Vector3::new(vals[3 * b], vals[3 * b + 1], vals[3 * b + 2]);
                }
            }
        }
        starts.push(start);
        vels.push(vel);
        states.push(state);
    }

    let weights = Weights {
        q: cfg.controller.q.to_vector(POSE_DIM)?,
        r: cfg.controller.r.to_vector(n)?,
        p_gamma: cfg.controller.p_gamma,
        p_j: cfg.controller.p_j,
    };
    let mode = match cfg.controller.mode {
        ModeConfig::Fasm => ControllerMode::Fasm,
        ModeConfig::Baseline => ControllerMode::Baseline,
    };
    let mpc_cfg = MpcConfig {
        horizon: cfg.controller.horizon,
        t_s,
        u_max: cfg.controller.u_max,
        gamma_min: GAMMA_MIN,
        gamma_init: cfg.controller.gamma_init,
        mode,
    };
    let schedule = reference_schedule(&cfg.reference)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = if cfg.measurement_noise_std > 0.0 {
        Some(
            Normal::new(0.0, cfg.measurement_noise_std)
                .map_err(|e| HarnessError::Other(format!("bad noise spec: {e}")))?,
        )
    } else {
        None
    };

    let clearances = |theta: &DVector<f64>,
                      o_true: &[Vector3<f64>]|
     -> Result<(f64, f64, DVector<f64>), HarnessError> {
        let ee_pose = chain.ee_pose(theta)?;
        let ee_pos = Vector3::new(ee_pose[0], ee_pose[1], ee_pose[2]);
        let crit = chain.critical_positions(theta)?;
        let mut h_e = f64::INFINITY;
        let mut h_crit = f64::INFINITY;
        for (j, o) in o_true.iter().enumerate() {
            h_e = h_e.min(clearance(&ee_pos, o, &specs[j]));
            for c in &crit {
                h_crit = h_crit.min(clearance(c, o, &specs[j]));
            }
        }
        Ok((h_e, h_crit, ee_pose))
    };

    let mut theta = scenario.initial_theta.clone();
    let mut warm: Option<DVector<f64>> = None;
    let mut records = Vec::with_capacity(steps);

    for k in 0..steps {
        let t = k as f64 * t_s;
        let o_true: Vec<Vector3<f64>> = (0..n_obs).map(|j| starts[j] + vels[j] * t).collect();
        let meas: Vec<Vector3<f64>> = o_true
            .iter()
            .map(|o| match &noise {
                Some(dist) => {
                    Vector3::new(
                        o[0] + dist.sample(&mut rng),
                        o[1] + dist.sample(&mut rng),
                        o[2] + dist.sample(&mut rng),
                    )
                }
                None => *o,
            })
            .collect();

        let mut tracks = Vec::with_capacity(n_obs);
        for j in 0..n_obs {
            let mut preds = Vec::with_capacity(mpc_cfg.horizon + 2);
            for i in 0..=mpc_cfg.horizon + 1 {
                preds.push(predict_obstacle(&states[j], i, &model)?.position());
            }
            tracks.push(ObstacleTrack {
                id: obs_ids[j].clone(),
                spec: specs[j].clone(),
                predictions: preds,
            });
        }

        let x_ref = pose_at(&schedule, t);
        let problem = build_problem(chain, &theta, x_ref, &tracks, &weights, &mpc_cfg)?;
        let t0 = Instant::now();
        let sol = solve(&problem, warm.as_ref());
        let solve_ms = t0.elapsed().as_secs_f64() * 1e3;

        let optimal = sol.status.is_optimal();
        let applied = if optimal {
            sol.first_input().clone()
        } else {
            log::warn!(
                "step {k}: solver returned {:?}; holding position this step",
                sol.status
            );
            DVector::zeros(n)
        };

        let (h_e, h_min_crit, ee_pose) = clearances(&theta, &o_true)?;
        let gamma_j_min = sol
            .gamma_points
            .iter()
            .map(|(_, g)| *g)
            .fold(f64::INFINITY, f64::min);
        let gamma_j_min = if gamma_j_min.is_finite() { gamma_j_min } else { 1.0 };
        records.push(StepRecord {
            k,
            t,
            theta: theta.clone(),
            u: applied.clone(),
            ee_pose,
            obs_true: o_true,
            obs_hat: states.iter().map(|s| s.position()).collect(),
            vel_hat: states.iter().map(|s| s.velocity()).collect(),
            h_e,
            h_min_crit,
            gamma_e: sol.gamma_e,
            gamma_j_min,
            gamma_max: sol.max_gamma(),
            cost: sol.cost,
            status: status_name(&sol.status),
            solve_ms,
            active: sol.active.clone(),
        });

        theta = integrate_joints(&theta, &applied, t_s)?;
        warm = Some(shift_warm_start(&sol.z, n, mpc_cfg.horizon));
        for j in 0..n_obs {
            states[j] = gpio_step(&states[j], &meas[j], &gpio)?;
        }
    }

    let final_t = steps as f64 * t_s;
    let o_final: Vec<Vector3<f64>> = (0..n_obs).map(|j| starts[j] + vels[j] * final_t).collect();
    let (final_h_e, final_h_min_crit, final_ee_pose) = clearances(&theta, &o_final)?;

    Ok(TrajectoryLog {
        scenario_name: cfg.name.clone().unwrap_or_else(|| "scenario".into()),
        mode: match cfg.controller.mode {
            ModeConfig::Fasm => "fasm".into(),
            ModeConfig::Baseline => "baseline".into(),
        },
        n,
        timing_enabled: cfg.log_timing,
        steps: records,
        final_t,
        final_theta: theta,
        final_ee_pose,
        final_h_e,
        final_h_min_crit,
    })
}

/// Fixed trajectory-file schema. Only the first obstacle appears in the
/// per-obstacle columns; clearances still cover all of them.
pub fn csv_header(n: usize) -> String {
    let mut cols = vec!["k".to_string(), "t".to_string()];
    for j in 1..=n {
        cols.push(format!("theta_{j}"));
    }
    for j in 1..=n {
        cols.push(format!("u_{j}"));
    }
    for c in [
        "ee_x", "ee_y", "ee_z", "ee_qw", "ee_qx", "ee_qy", "ee_qz", "obs_x", "obs_y", "obs_z",
        "obs_hat_x", "obs_hat_y", "obs_hat_z", "vhat_x", "vhat_y", "vhat_z", "h_e", "h_min_crit",
        "gamma_e", "gamma_j_min", "cost", "status", "solve_ms",
    ] {
        cols.push(c.to_string());
    }
    cols.join(",")
}

pub fn write_csv<W: Write>(log: &TrajectoryLog, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{}", csv_header(log.n))?;
    for r in &log.steps {
        let mut fields: Vec<String> = Vec::with_capacity(2 * log.n + 25);
        fields.push(r.k.to_string());
        fields.push(r.t.to_string());
        for v in r.theta.iter() {
            fields.push(v.to_string());
        }
        for v in r.u.iter() {
            fields.push(v.to_string());
        }
        for v in r.ee_pose.iter() {
            fields.push(v.to_string());
        }
        let first3 = |vs: &Vec<Vector3<f64>>, fields: &mut Vec<String>| {
            if let Some(v) = vs.first() {
                for d in 0..3 {
                    fields.push(v[d].to_string());
                }
            } else {
                for _ in 0..3 {
                    fields.push("0".to_string());
                }
            }
        };
        first3(&r.obs_true, &mut fields);
        first3(&r.obs_hat, &mut fields);
        first3(&r.vel_hat, &mut fields);
        fields.push(r.h_e.to_string());
        fields.push(r.h_min_crit.to_string());
        fields.push(r.gamma_e.to_string());
        fields.push(r.gamma_j_min.to_string());
        fields.push(r.cost.to_string());
        fields.push(r.status.clone());
        fields.push(if log.timing_enabled {
            r.solve_ms.to_string()
        } else {
            "0".to_string()
        });
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

pub fn csv_string(log: &TrajectoryLog) -> String {
    let mut buf = Vec::new();
    write_csv(log, &mut buf).expect("in-memory writes cannot fail");
    String::from_utf8(buf).expect("trajectory text is ascii")
}

pub fn compute_metrics(log: &TrajectoryLog, scenario: &Scenario) -> RunMetrics {
    let cfg = &scenario.config;
    let mut min_clearance = log.final_h_e.min(log.final_h_min_crit);
    let mut highest = log.final_ee_pose[2];
    let mut trigger = None;
    let mut max_gamma: f64 = 0.0;
    let mut status_counts = BTreeMap::new();
    let mut joint_ok = true;
    let mut input_ok = true;
    let mut solve_sum = 0.0;
    let mut solve_max: f64 = 0.0;
    let limits = scenario.chain.joint_limits();

    for r in &log.steps {
        min_clearance = min_clearance.min(r.h_e).min(r.h_min_crit);
        highest = highest.max(r.ee_pose[2]);
        if trigger.is_none() && r.status == "optimal" && !r.active.is_empty() {
            trigger = Some(r.t);
        }
        max_gamma = max_gamma.max(r.gamma_max);
        *status_counts.entry(r.status.clone()).or_insert(0usize) += 1;
        for (j, v) in r.theta.iter().enumerate() {
            if *v < limits[j].0 - 1e-9 || *v > limits[j].1 + 1e-9 {
                joint_ok = false;
            }
        }
        if r.u.iter().any(|v| v.abs() > cfg.controller.u_max + 1e-9) {
            input_ok = false;
        }
        solve_sum += r.solve_ms;
        solve_max = solve_max.max(r.solve_ms);
    }
    for (j, v) in log.final_theta.iter().enumerate() {
        if *v < limits[j].0 - 1e-9 || *v > limits[j].1 + 1e-9 {
            joint_ok = false;
        }
    }

    let last_ref = scenario
        .config
        .reference
        .waypoints
        .last()
        .map(|w| w.pose.to_vector().expect("validated at load"))
        .expect("validated: at least one waypoint");
    let pos_err = (0..3)
        .map(|d| (log.final_ee_pose[d] - last_ref[d]).powi(2))
        .sum::<f64>()
        .sqrt();
    let mut qd = 0.0;
    let mut qd_flip = 0.0;
    for d in 3..POSE_DIM {
        qd += (log.final_ee_pose[d] - last_ref[d]).powi(2);
        qd_flip += (log.final_ee_pose[d] + last_ref[d]).powi(2);
    }
    let quat_err = qd.sqrt().min(qd_flip.sqrt());

    let all_optimal = status_counts.keys().all(|k| k == "optimal");
    RunMetrics {
        scenario: log.scenario_name.clone(),
        mode: log.mode.clone(),
        steps: log.steps.len(),
        min_clearance,
        collision: min_clearance < 0.0,
        highest_altitude: highest,
        trigger_moment: trigger,
        max_gamma,
        final_position_error: pos_err,
        final_quaternion_error: quat_err,
        joint_limits_ok: joint_ok,
        input_bounds_ok: input_ok,
        status_counts,
        all_optimal,
        mean_solve_ms: if log.steps.is_empty() { 0.0 } else { solve_sum / log.steps.len() as f64 },
        max_solve_ms: solve_max,
    }
}

/// Max absolute joint-angle deviation between two runs of equal length;
/// infinite when the lengths differ.
pub fn max_state_deviation(a: &TrajectoryLog, b: &TrajectoryLog) -> f64 {
    if a.steps.len() != b.steps.len() || a.n != b.n {
        return f64::INFINITY;
    }
    let mut dev = 0.0f64;
    for (ra, rb) in a.steps.iter().zip(b.steps.iter()) {
        dev = dev.max((&ra.theta - &rb.theta).amax());
    }
    dev.max((&a.final_theta - &b.final_theta).amax())
}
