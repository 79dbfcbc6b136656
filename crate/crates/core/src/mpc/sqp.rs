//! Sequential quadratic programming for inequality-constrained problems
//! with a constant positive-definite quadratic model.
//!
//! The driver is tailored to the controller's structure: the objective is
//! exactly quadratic (its Hessian is the model Hessian), and the only
//! nonlinearity lives in the distance constraints, which are smooth and
//! mildly curved. Each iteration linearises `g(z) <= 0`, solves a convex QP
//! for the step, and globalises with an l1 merit line search. When the
//! linearised constraints are inconsistent the step is recomputed in an
//! elastic relaxation: designated soft rows receive slack variables whose
//! sum is penalised, with the penalty escalated until either the slacks
//! vanish or the problem is declared infeasible.

use nalgebra::{DMatrix, DVector};

use super::qp::{solve_qp, QpStatus};

/// Inequality-constrained program `min f(z) s.t. g(z) <= 0`.
pub trait NonlinearProgram {
    fn dim(&self) -> usize;
    fn objective(&self, z: &DVector<f64>) -> f64;
    fn objective_gradient(&self, z: &DVector<f64>) -> DVector<f64>;
    /// Constant symmetric positive-definite model Hessian.
    fn hessian_model(&self) -> DMatrix<f64>;
    fn constraints(&self, z: &DVector<f64>) -> DVector<f64>;
    fn constraint_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64>;
    /// Rows that may be relaxed when the linearisation is inconsistent.
    /// Hard rows (actuator and joint boxes) are never relaxed.
    fn soft_rows(&self) -> Vec<bool>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum SqpStatus {
    Optimal,
    MaxIterations,
    /// The constraints could not be satisfied even with maximal elastic
    /// penalty; `worst_row` is the most violated constraint at exit.
    Infeasible { worst_row: usize },
}

#[derive(Debug, Clone)]
pub struct SqpResult {
    pub status: SqpStatus,
    pub z: DVector<f64>,
    pub multipliers: DVector<f64>,
    pub cost: f64,
    /// Max-norm of the Lagrangian gradient at exit.
    pub kkt_residual: f64,
    /// Max constraint violation at exit (0 when feasible).
    pub feasibility: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct SqpSettings {
    pub max_iter: usize,
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub initial_elastic_penalty: f64,
    pub max_elastic_penalty: f64,
}

impl Default for SqpSettings {
    fn default() -> Self {
        Self {
            max_iter: 200,
            feas_tol: 1e-6,
            opt_tol: 1e-6,
            initial_elastic_penalty: 1e4,
            max_elastic_penalty: 1e8,
        }
    }
}

fn max_violation(g: &DVector<f64>) -> f64 {
    g.iter().cloned().fold(0.0f64, f64::max)
}

fn violation_l1(g: &DVector<f64>) -> f64 {
    g.iter().map(|v| v.max(0.0)).sum()
}

fn amax_or_zero(v: &DVector<f64>) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.amax()
    }
}

/// Assembles the slack-augmented rows shared by the elastic and restoration
/// subproblems: original rows with `-t_j` on each soft row, then `t >= 0`.
fn relaxed_rows(
    g: &DVector<f64>,
    jac: &DMatrix<f64>,
    soft_idx: &[usize],
) -> (DMatrix<f64>, DVector<f64>) {
    let n = jac.ncols();
    let m = g.len();
    let ns = soft_idx.len();
    let mut ge = DMatrix::zeros(m + ns, n + ns);
    let mut hev = DVector::zeros(m + ns);
    let mut slack_col = vec![usize::MAX; m];
    for (j, &i) in soft_idx.iter().enumerate() {
        slack_col[i] = n + j;
    }
    for i in 0..m {
        ge.view_mut((i, 0), (1, n)).copy_from(&jac.row(i));
        if slack_col[i] != usize::MAX {
            ge[(i, slack_col[i])] = -1.0;
        }
        hev[i] = -g[i];
    }
    for j in 0..ns {
        ge[(m + j, n + j)] = -1.0;
        hev[m + j] = 0.0;
    }
    (ge, hev)
}

/// Step computation: plain QP first, elastic retries on failure.
/// Returns the step, multipliers for the original rows, and the residual
/// slack sum of the elastic relaxation (0 when the plain QP succeeded).
fn compute_step(
    hess: &DMatrix<f64>,
    grad: &DVector<f64>,
    g: &DVector<f64>,
    jac: &DMatrix<f64>,
    soft: &[bool],
    settings: &SqpSettings,
) -> Option<(DVector<f64>, DVector<f64>, f64)> {
    let n = grad.len();
    let m = g.len();
    let plain = solve_qp(hess, grad, jac, &(-g), None);
    if plain.status == QpStatus::Converged {
        return Some((plain.z, plain.lambda, 0.0));
    }

    let soft_idx: Vec<usize> = (0..m).filter(|&i| soft[i]).collect();
    let ns = soft_idx.len();
    if ns == 0 {
        return None;
    }

    // Variables [d; t], t >= 0 one per soft row. The penalty stops at a
    // moderate ceiling: beyond it the objective drowns in the penalty and
    // the step direction loses all accuracy; genuinely stuck violations are
    // the restoration subproblem's job.
    let (ge, hev) = relaxed_rows(g, jac, &soft_idx);
    let ne = n + ns;
    let mut nu = settings.initial_elastic_penalty;
    let mut last_good: Option<(DVector<f64>, DVector<f64>, f64)> = None;
    loop {
        let mut he = DMatrix::zeros(ne, ne);
        he.view_mut((0, 0), (n, n)).copy_from(hess);
        for j in 0..ns {
            he[(n + j, n + j)] = 1e-12 * nu;
        }
        let mut qe = DVector::zeros(ne);
        qe.rows_mut(0, n).copy_from(grad);
        for j in 0..ns {
            qe[n + j] = nu;
        }
        let elastic = solve_qp(&he, &qe, &ge, &hev, None);
        if elastic.status == QpStatus::Converged {
            let slack_sum: f64 = (0..ns).map(|j| elastic.z[n + j].max(0.0)).sum();
            let d = DVector::from_fn(n, |i, _| elastic.z[i]);
            let lam = DVector::from_fn(m, |i, _| elastic.lambda[i]);
            if slack_sum <= settings.feas_tol * (ns as f64).max(1.0) {
                return Some((d, lam, slack_sum));
            }
            last_good = Some((d, lam, slack_sum));
        }
        if nu >= settings.max_elastic_penalty {
            return last_good;
        }
        nu *= 100.0;
    }
}

/// Pure feasibility restoration: minimises `0.5 ||d||^2 + sum(t)` over the
/// linearised rows. Every coefficient is O(1), so the subproblem stays well
/// conditioned where the elastic penalty saturates. Returns the step and the
/// minimal slack sum, an estimate of the smallest l1 violation reachable
/// from the current point.
fn restoration_step(
    g: &DVector<f64>,
    jac: &DMatrix<f64>,
    soft: &[bool],
) -> Option<(DVector<f64>, f64)> {
    let n = jac.ncols();
    let m = g.len();
    let soft_idx: Vec<usize> = (0..m).filter(|&i| soft[i]).collect();
    let ns = soft_idx.len();
    if ns == 0 {
        return None;
    }
    let (ge, hev) = relaxed_rows(g, jac, &soft_idx);
    let ne = n + ns;
    let mut he = DMatrix::zeros(ne, ne);
    for i in 0..n {
        he[(i, i)] = 1.0;
    }
    for j in 0..ns {
        he[(n + j, n + j)] = 1e-8;
    }
    let mut qe = DVector::zeros(ne);
    for j in 0..ns {
        qe[n + j] = 1.0;
    }
    let res = solve_qp(&he, &qe, &ge, &hev, None);
    if res.status != QpStatus::Converged {
        return None;
    }
    let d = DVector::from_fn(n, |i, _| res.z[i]);
    let slack_sum: f64 = (0..ns).map(|j| res.z[n + j].max(0.0)).sum();
    Some((d, slack_sum))
}

pub fn solve_sqp<P: NonlinearProgram>(
    problem: &P,
    z0: &DVector<f64>,
    settings: &SqpSettings,
) -> SqpResult {
    let n = problem.dim();
    assert_eq!(z0.len(), n);
    let hess = problem.hessian_model();
    let soft = problem.soft_rows();

    let mut z = z0.clone();
    let mut g = problem.constraints(&z);
    let m = g.len();
    let mut lambda = DVector::zeros(m);
    let mut mu = 1.0f64;
    let mut stalls = 0usize;

    // Best feasible iterate seen, seeded with the start if it qualifies.
    let mut best: Option<(f64, DVector<f64>, DVector<f64>)> = None;
    let consider_best = |f: f64, z: &DVector<f64>, lam: &DVector<f64>,
                             best: &mut Option<(f64, DVector<f64>, DVector<f64>)>| {
        if best.as_ref().map_or(true, |(bf, _, _)| f < *bf) {
            *best = Some((f, z.clone(), lam.clone()));
        }
    };
    if max_violation(&g) <= settings.feas_tol {
        consider_best(problem.objective(&z), &z, &lambda, &mut best);
    }

    let mut iterations = 0usize;
    let mut infeasible_exit: Option<usize> = None;

    for iter in 0..settings.max_iter {
        iterations = iter + 1;
        let grad = problem.objective_gradient(&z);
        let jac = problem.constraint_jacobian(&z);
        let feas = max_violation(&g);

        // KKT test with the multipliers from the previous step.
        let stat = amax_or_zero(&(&grad + jac.transpose() * &lambda));
        let comp = (0..m).map(|i| (lambda[i] * g[i]).abs()).fold(0.0f64, f64::max);
        let stat_tol = settings.opt_tol * (1.0 + grad.amax());
        let comp_tol = settings.opt_tol * (1.0 + amax_or_zero(&lambda));
        if feas <= settings.feas_tol && stat <= stat_tol && comp <= comp_tol {
            let cost = problem.objective(&z);
            consider_best(cost, &z, &lambda, &mut best);
            let (bf, bz, bl) = best.unwrap();
            return SqpResult {
                status: SqpStatus::Optimal,
                cost: bf,
                z: bz,
                multipliers: bl,
                kkt_residual: stat,
                feasibility: feas,
                iterations,
            };
        }

        let Some((d, lam_new, slack_sum)) = compute_step(&hess, &grad, &g, &jac, &soft, settings)
        else {
            break;
        };

        // Re-test optimality with the fresh multipliers: at a solution the
        // QP returns a null step together with exact multipliers, and this
        // avoids stalling in the line search on vanishing steps.
        if feas <= settings.feas_tol && d.amax() <= 1e-9 {
            let stat_new = amax_or_zero(&(&grad + jac.transpose() * &lam_new));
            let comp_new = (0..m)
                .map(|i| (lam_new[i] * g[i]).abs())
                .fold(0.0f64, f64::max);
            if stat_new <= settings.opt_tol * (1.0 + grad.amax())
                && comp_new <= settings.opt_tol * (1.0 + amax_or_zero(&lam_new))
            {
                let cost = problem.objective(&z);
                consider_best(cost, &z, &lam_new, &mut best);
                let (bf, bz, bl) = best.unwrap();
                return SqpResult {
                    status: SqpStatus::Optimal,
                    cost: bf,
                    z: bz,
                    multipliers: bl,
                    kkt_residual: stat_new,
                    feasibility: feas,
                    iterations: iter + 1,
                };
            }
        }

        let ns = soft.iter().filter(|&&s| s).count();
        if slack_sum > settings.feas_tol * 10.0 * (ns as f64).max(1.0) {
            // The elastic relaxation still violates the linearised rows.
            // A pure feasibility subproblem decides between "restorable"
            // and "locally incompatible"; its coefficients stay O(1) where
            // the elastic penalty saturates.
            let worst = (0..m)
                .max_by(|&a, &b| g[a].partial_cmp(&g[b]).unwrap())
                .unwrap_or(0);
            match restoration_step(&g, &jac, &soft) {
                Some((dr, min_viol))
                    if dr.amax() > 1e-7 && min_viol < slack_sum - settings.feas_tol =>
                {
                    // Violation can still be reduced: ignore the objective
                    // this iteration and walk toward feasibility.
                    let v0 = violation_l1(&g);
                    let mut alpha = 1.0f64;
                    let mut accepted = false;
                    for _ in 0..30 {
                        let zt = &z + alpha * &dr;
                        let gt = problem.constraints(&zt);
                        if violation_l1(&gt) < v0 - 0.1 * alpha * (v0 - min_viol).max(0.0) {
                            z = zt;
                            g = gt;
                            accepted = true;
                            break;
                        }
                        alpha *= 0.5;
                    }
                    if !accepted {
                        stalls += 1;
                        if stalls >= 5 {
                            infeasible_exit = Some(worst);
                            break;
                        }
                    }
                    continue;
                }
                _ => {
                    // No direction reduces the violation.
                    infeasible_exit = Some(worst);
                    break;
                }
            }
        }

        lambda = lam_new;
        mu = mu.max(2.0 * amax_or_zero(&lambda) + 1.0);

        let f0 = problem.objective(&z);
        let phi0 = f0 + mu * violation_l1(&g);
        let descent = grad.dot(&d) - mu * violation_l1(&g);

        if d.amax() <= 1e-12 {
            // Step has collapsed; the KKT test on the next loop decides.
            g = problem.constraints(&z);
            continue;
        }

        let mut alpha = 1.0f64;
        let mut accepted = false;
        for _ in 0..30 {
            let zt = &z + alpha * &d;
            let gt = problem.constraints(&zt);
            let phit = problem.objective(&zt) + mu * violation_l1(&gt);
            if phit <= phi0 + 1e-4 * alpha * descent.min(0.0) + 1e-12 * (1.0 + phi0.abs()) {
                z = zt;
                g = gt;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // Take the smallest step anyway; repeated failures abort.
            z += alpha * &d;
            g = problem.constraints(&z);
            stalls += 1;
            if stalls >= 5 {
                break;
            }
        }

        if max_violation(&g) <= settings.feas_tol {
            consider_best(problem.objective(&z), &z, &lambda, &mut best);
        }
    }

    let cost = problem.objective(&z);
    let feas = max_violation(&g);
    let grad = problem.objective_gradient(&z);
    let jac = problem.constraint_jacobian(&z);
    let stat = amax_or_zero(&(&grad + jac.transpose() * &lambda));

    if let Some(worst) = infeasible_exit {
        return SqpResult {
            status: SqpStatus::Infeasible { worst_row: worst },
            z,
            multipliers: lambda,
            cost,
            kkt_residual: stat,
            feasibility: feas,
            iterations,
        };
    }

    // Prefer the best feasible iterate over wherever the loop stopped.
    if let Some((bf, bz, bl)) = best {
        SqpResult {
            status: SqpStatus::MaxIterations,
            z: bz,
            multipliers: bl,
            cost: bf,
            kkt_residual: stat,
            feasibility: 0.0,
            iterations,
        }
    } else {
        SqpResult {
            status: SqpStatus::MaxIterations,
            z,
            multipliers: lambda,
            cost,
            kkt_residual: stat,
            feasibility: feas,
            iterations,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Test fixture built from closures.
    struct Fixture {
        n: usize,
        b: DMatrix<f64>,
        q: DVector<f64>,
        cons: Box<dyn Fn(&DVector<f64>) -> DVector<f64>>,
        jac: Box<dyn Fn(&DVector<f64>) -> DMatrix<f64>>,
        soft: Vec<bool>,
    }

    impl NonlinearProgram for Fixture {
        fn dim(&self) -> usize {
            self.n
        }
        fn objective(&self, z: &DVector<f64>) -> f64 {
            0.5 * (z.transpose() * &self.b * z)[(0, 0)] + self.q.dot(z)
        }
        fn objective_gradient(&self, z: &DVector<f64>) -> DVector<f64> {
            &self.b * z + &self.q
        }
        fn hessian_model(&self) -> DMatrix<f64> {
            self.b.clone()
        }
        fn constraints(&self, z: &DVector<f64>) -> DVector<f64> {
            (self.cons)(z)
        }
        fn constraint_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
            (self.jac)(z)
        }
        fn soft_rows(&self) -> Vec<bool> {
            self.soft.clone()
        }
    }

    #[test]
    fn linear_constraint_reaches_known_optimum() {
        // min (z1-1)^2 + (z2-2)^2 s.t. z1 + z2 <= 1; optimum (0, 1).
        let p = Fixture {
            n: 2,
            b: DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]),
            q: DVector::from_row_slice(&[-2.0, -4.0]),
            cons: Box::new(|z| DVector::from_row_slice(&[z[0] + z[1] - 1.0])),
            jac: Box::new(|_| DMatrix::from_row_slice(1, 2, &[1.0, 1.0])),
            soft: vec![false],
        };
        let res = solve_sqp(&p, &DVector::zeros(2), &SqpSettings::default());
        assert_eq!(res.status, SqpStatus::Optimal);
        assert_abs_diff_eq!(res.z[0], 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(res.z[1], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(res.multipliers[0], 2.0, epsilon = 1e-4);
    }

    #[test]
    fn sphere_exterior_projection() {
        // min ||z - (0.3, 0, 0)||^2 s.t. ||z|| >= 1; optimum (1, 0, 0).
        let p = Fixture {
            n: 3,
            b: DMatrix::identity(3, 3) * 2.0,
            q: DVector::from_row_slice(&[-0.6, 0.0, 0.0]),
            cons: Box::new(|z| DVector::from_row_slice(&[1.0 - z.norm()])),
            jac: Box::new(|z| {
                let nrm = z.norm().max(1e-9);
                DMatrix::from_row_slice(3, 1, &[-z[0] / nrm, -z[1] / nrm, -z[2] / nrm])
                    .transpose()
            }),
            soft: vec![true],
        };
        let res = solve_sqp(
            &p,
            &DVector::from_row_slice(&[0.5, 0.0, 0.0]),
            &SqpSettings::default(),
        );
        assert_eq!(res.status, SqpStatus::Optimal);
        assert_abs_diff_eq!(res.z[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(res.z[1], 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(res.z[2], 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(res.cost, 0.49 - 0.09, epsilon = 1e-6);
        // Objective here omits the constant 0.09 of the squared distance.
    }

    #[test]
    fn contradictory_soft_rows_are_reported_infeasible() {
        // z <= -1 and z >= 1 simultaneously.
        let p = Fixture {
            n: 1,
            b: DMatrix::from_row_slice(1, 1, &[2.0]),
            q: DVector::from_row_slice(&[0.0]),
            cons: Box::new(|z| DVector::from_row_slice(&[z[0] + 1.0, 1.0 - z[0]])),
            jac: Box::new(|_| DMatrix::from_row_slice(2, 1, &[1.0, -1.0])),
            soft: vec![true, true],
        };
        let res = solve_sqp(&p, &DVector::zeros(1), &SqpSettings::default());
        assert!(matches!(res.status, SqpStatus::Infeasible { .. }));
        assert!(res.feasibility >= 0.5);
    }

    #[test]
    fn hard_box_is_respected() {
        // min (z-5)^2 s.t. z <= 1; optimum z = 1 with multiplier 8.
        let p = Fixture {
            n: 1,
            b: DMatrix::from_row_slice(1, 1, &[2.0]),
            q: DVector::from_row_slice(&[-10.0]),
            cons: Box::new(|z| DVector::from_row_slice(&[z[0] - 1.0])),
            jac: Box::new(|_| DMatrix::from_row_slice(1, 1, &[1.0])),
            soft: vec![false],
        };
        let res = solve_sqp(&p, &DVector::zeros(1), &SqpSettings::default());
        assert_eq!(res.status, SqpStatus::Optimal);
        assert_abs_diff_eq!(res.z[0], 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(res.multipliers[0], 8.0, epsilon = 1e-4);
    }

    #[test]
    fn resolving_from_the_solution_does_not_increase_cost() {
        let p = Fixture {
            n: 3,
            b: DMatrix::identity(3, 3) * 2.0,
            q: DVector::from_row_slice(&[-0.6, 0.0, 0.0]),
            cons: Box::new(|z| DVector::from_row_slice(&[1.0 - z.norm()])),
            jac: Box::new(|z| {
                let nrm = z.norm().max(1e-9);
                DMatrix::from_row_slice(1, 3, &[-z[0] / nrm, -z[1] / nrm, -z[2] / nrm])
            }),
            soft: vec![true],
        };
        let first = solve_sqp(
            &p,
            &DVector::from_row_slice(&[0.5, 0.0, 0.0]),
            &SqpSettings::default(),
        );
        assert_eq!(first.status, SqpStatus::Optimal);
        let second = solve_sqp(&p, &first.z, &SqpSettings::default());
        assert!(second.cost <= first.cost + 1e-9);
        assert!(second.iterations <= 3);
    }

    #[test]
    fn tight_feasible_region_converges_to_corner() {
        // min z1 + z2 s.t. z1 >= 0, z2 >= 0 (hard), z1 + z2 >= 1 (soft).
        let p = Fixture {
            n: 2,
            b: DMatrix::identity(2, 2) * 1e-6,
            q: DVector::from_row_slice(&[1.0, 1.0]),
            cons: Box::new(|z| {
                DVector::from_row_slice(&[-z[0], -z[1], 1.0 - z[0] - z[1]])
            }),
            jac: Box::new(|_| {
                DMatrix::from_row_slice(3, 2, &[-1.0, 0.0, 0.0, -1.0, -1.0, -1.0])
            }),
            soft: vec![false, false, true],
        };
        let res = solve_sqp(&p, &DVector::zeros(2), &SqpSettings::default());
        assert_eq!(res.status, SqpStatus::Optimal);
        assert_abs_diff_eq!(res.z[0] + res.z[1], 1.0, epsilon = 1e-5);
    }
}
