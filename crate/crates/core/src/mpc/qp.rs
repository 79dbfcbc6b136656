//! Dense convex quadratic programming by a primal-dual interior-point
//! method with Mehrotra predictor-corrector steps.
//!
//! Solves `min 0.5 z' B z + q' z  s.t.  G z <= h` with `B` symmetric
//! positive semidefinite. Each iteration reduces the Newton system to the
//! normal equations `(B + G' S^{-1} L G) dz = rhs` and factors them with a
//! Cholesky decomposition, adding diagonal jitter if the factorization
//! fails. Problems here are small (tens of variables, a few hundred rows),
//! so dense linear algebra is the right tool.

use nalgebra::{Cholesky, DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Converged,
    /// Iteration limit or numerical breakdown; the iterate with the lowest
    /// merit seen so far is returned.
    NotConverged,
}

#[derive(Debug, Clone)]
pub struct QpResult {
    pub status: QpStatus,
    pub z: DVector<f64>,
    /// Multipliers for the inequality rows, non-negative.
    pub lambda: DVector<f64>,
    pub iterations: usize,
    /// Residual norms at exit: stationarity, primal feasibility,
    /// and mean complementarity.
    pub stationarity: f64,
    pub primal_infeasibility: f64,
    pub complementarity: f64,
}

const MAX_ITER: usize = 100;
const TOL: f64 = 1e-9;

/// Largest step `alpha` in `(0, 1]` keeping `v + alpha dv >= 0`.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut alpha = 1.0f64;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            alpha = alpha.min(-v[i] / dv[i]);
        }
    }
    alpha
}

fn cholesky_with_jitter(m: &DMatrix<f64>) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    let n = m.nrows();
    let scale = 1.0 + m.diagonal().amax();
    if !scale.is_finite() {
        return None;
    }
    let mut jitter = 0.0;
    loop {
        let mut trial = m.clone();
        if jitter > 0.0 {
            for i in 0..n {
                trial[(i, i)] += jitter;
            }
        }
        if let Some(chol) = trial.cholesky() {
            return Some(chol);
        }
        jitter = if jitter == 0.0 { 1e-12 * scale } else { jitter * 10.0 };
        if jitter > 1e-4 * scale {
            return None;
        }
    }
}

/// Active-set polish: re-solves the problem with the apparent active rows
/// held as equalities, removing the `O(mu)` smear an interior point leaves
/// on active bounds. The face guessed from the interior point is corrected
/// iteratively: rows whose equality multiplier comes out negative are
/// dropped, rows the face minimiser violates are added back, one exchange
/// per round. Degenerate faces (tight but linearly dependent rows) are the
/// common source of both. Returns the polished point when the iteration
/// settles on a consistent face within the round budget.
fn polish(
    b: &DMatrix<f64>,
    q: &DVector<f64>,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    s: &DVector<f64>,
    lambda: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let m = h.len();
    let n = q.len();
    let hsc = 1.0 + h.amax();
    let mut act: Vec<usize> = (0..m).filter(|&i| lambda[i] > s[i]).collect();
    let bchol = cholesky_with_jitter(b)?;
    let binv_mq = bchol.solve(&(-q));
    for _round in 0..50 {
        let (zf, lam) = if act.is_empty() {
            (binv_mq.clone(), DVector::zeros(m))
        } else {
            let na = act.len();
            let a = DMatrix::from_fn(na, n, |r, c| g[(act[r], c)]);
            let binv_at = bchol.solve(&a.transpose());
            let schur = &a * &binv_at;
            let rhs = &a * &binv_mq - DVector::from_fn(na, |r, _| h[act[r]]);
            let schol = cholesky_with_jitter(&schur)?;
            let nu = schol.solve(&rhs);
            // The jitter needed to factor a degenerate face leaves an error
            // in the raw solve large enough to misdirect the caller;
            // refining against the true residuals removes it (the
            // multiplier family may be non-unique there, but any exact
            // member serves).
            let mut zf = &binv_mq - &binv_at * &nu;
            let mut nuf = nu;
            let h_act = DVector::from_fn(na, |r, _| h[act[r]]);
            for _ in 0..2 {
                let r1 = b * &zf + q + a.transpose() * &nuf;
                let r2 = &a * &zf - &h_act;
                let dnu = schol.solve(&(&r2 - &a * bchol.solve(&r1)));
                let dz = -bchol.solve(&(&r1 + a.transpose() * &dnu));
                zf += dz;
                nuf += dnu;
            }
            let mut worst = (usize::MAX, -1e-9);
            for r in 0..na {
                if nuf[r] < worst.1 {
                    worst = (r, nuf[r]);
                }
            }
            if worst.0 != usize::MAX {
                act.remove(worst.0);
                continue;
            }
            let mut lam = DVector::zeros(m);
            for (r, &i) in act.iter().enumerate() {
                lam[i] = nuf[r].max(0.0);
            }
            (zf, lam)
        };
        let slack = h - g * &zf;
        let mut add = (usize::MAX, -1e-9 * hsc);
        for i in 0..m {
            if slack[i] < add.1 && !act.contains(&i) {
                add = (i, slack[i]);
            }
        }
        if add.0 != usize::MAX {
            act.push(add.0);
            act.sort_unstable();
            continue;
        }
        return Some((zf, lam));
    }
    // Round budget exhausted: an add/drop cycle on a degenerate vertex.
    None
}

/// Solves the QP. `warm` seeds the primal iterate only; slacks and
/// multipliers are re-initialised, which keeps the method robust to warm
/// starts that sit on the boundary.
pub fn solve_qp(
    b: &DMatrix<f64>,
    q: &DVector<f64>,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    warm: Option<&DVector<f64>>,
) -> QpResult {
    let n = q.len();
    let m = h.len();
    assert_eq!(b.nrows(), n);
    assert_eq!(b.ncols(), n);
    assert_eq!(g.nrows(), m);
    if m > 0 {
        assert_eq!(g.ncols(), n);
    }

    if m == 0 {
        // Unconstrained: a single Cholesky solve.
        let z = match cholesky_with_jitter(b) {
            Some(chol) => chol.solve(&(-q)),
            None => DVector::zeros(n),
        };
        let stationarity = (b * &z + q).amax();
        return QpResult {
            status: if stationarity <= TOL * (1.0 + q.amax()) {
                QpStatus::Converged
            } else {
                QpStatus::NotConverged
            },
            z,
            lambda: DVector::zeros(0),
            iterations: 0,
            stationarity,
            primal_infeasibility: 0.0,
            complementarity: 0.0,
        };
    }

    // Starting point. Solving the equality-relaxed KKT system
    //   [B G'; G -I] [x; y] = [-q; h]
    // and shifting (s, lambda) into the positive orthant matches the initial
    // iterate to the problem scale, which matters when the linear cost is
    // many orders of magnitude larger than the Hessian (elastic penalties).
    let mut z = warm.cloned().unwrap_or_else(|| DVector::zeros(n));
    let mut s;
    let mut lambda;
    let relaxed = {
        let mmat = b + g.transpose() * g;
        cholesky_with_jitter(&mmat).map(|chol| chol.solve(&(-q + g.transpose() * h)))
    };
    match (warm, relaxed) {
        (None, Some(x0)) => {
            z = x0;
            let shat = h - g * &z;
            let zhat = -&shat;
            let dp = -shat.min();
            s = if dp < 0.0 {
                shat
            } else {
                shat.add_scalar(1.0 + dp)
            };
            let dd = -zhat.min();
            lambda = if dd < 0.0 {
                zhat
            } else {
                zhat.add_scalar(1.0 + dd)
            };
            for i in 0..m {
                s[i] = s[i].max(1e-8);
                lambda[i] = lambda[i].max(1e-8);
            }
        }
        _ => {
            let slack0 = h - g * &z;
            s = DVector::from_fn(m, |i, _| slack0[i].max(1.0));
            lambda = DVector::from_element(m, 1.0);
        }
    }

    let q_scale = 1.0 + q.amax();
    let h_scale = 1.0 + h.amax();

    let mut best: Option<(f64, DVector<f64>, DVector<f64>)> = None;
    let mut last_report = (f64::INFINITY, f64::INFINITY, f64::INFINITY);

    for iter in 0..MAX_ITER {
        let r_d = b * &z + q + g.transpose() * &lambda;
        let r_p = g * &z + &s - h;
        let mu = s.dot(&lambda) / m as f64;

        let stat = r_d.amax();
        let pinf = r_p.amax();
        if !(stat.is_finite() && pinf.is_finite() && mu.is_finite()) {
            // Diverging iterates (typically an infeasible problem).
            break;
        }
        if lambda.amax() > 1e16 {
            // Unbounded dual face (degenerate opposing rows); stop before
            // the arithmetic degrades and fall back to the best iterate.
            break;
        }
        last_report = (stat, pinf, mu);

        let merit = stat / q_scale + pinf / h_scale + mu / q_scale;
        if best.as_ref().map_or(true, |(bm, _, _)| merit < *bm) {
            best = Some((merit, z.clone(), lambda.clone()));
        }

        if stat <= TOL * q_scale && pinf <= TOL * h_scale && mu <= TOL * q_scale {
            let mut out = QpResult {
                status: QpStatus::Converged,
                z,
                lambda,
                iterations: iter,
                stationarity: stat,
                primal_infeasibility: pinf,
                complementarity: mu,
            };
            if let Some((zp, lp)) = polish(b, q, g, h, &s, &out.lambda) {
                let stat_p = (b * &zp + q + g.transpose() * &lp).amax();
                let pinf_p = (g * &zp - h).iter().cloned().fold(0.0f64, f64::max);
                if stat_p <= stat.max(TOL * q_scale) && pinf_p <= pinf.max(TOL * h_scale) {
                    out.complementarity = (0..m)
                        .map(|i| lp[i] * (h[i] - (g.row(i) * &zp)[0]).abs())
                        .sum::<f64>()
                        / m as f64;
                    out.stationarity = stat_p;
                    out.primal_infeasibility = pinf_p;
                    out.z = zp;
                    out.lambda = lp;
                }
            }
            return out;
        }

        // Normal equations M = B + G' diag(lambda/s) G. The ratio is capped
        // so the matrix stays finite for nearly-degenerate active sets.
        let d = DVector::from_fn(m, |i, _| (lambda[i] / s[i]).min(1e14));
        let mut gd = g.clone();
        for i in 0..m {
            let row = gd.row(i) * d[i];
            gd.set_row(i, &row);
        }
        let mmat = b + g.transpose() * &gd;
        let Some(chol) = cholesky_with_jitter(&mmat) else {
            break;
        };

        let solve_step = |r_c: &DVector<f64>| -> (DVector<f64>, DVector<f64>, DVector<f64>) {
            // r_c is the complementarity target: L ds + S dl = -r_c.
            let s_inv_rc = DVector::from_fn(m, |i, _| r_c[i] / s[i]);
            let rhs = -&r_d + g.transpose() * &s_inv_rc
                - g.transpose() * &DVector::from_fn(m, |i, _| d[i] * r_p[i]);
            let dz = chol.solve(&rhs);
            let ds = -&r_p - g * &dz;
            let dl = DVector::from_fn(m, |i, _| -(r_c[i] + lambda[i] * ds[i]) / s[i]);
            (dz, ds, dl)
        };

        // Predictor (affine scaling) step.
        let r_c_aff = DVector::from_fn(m, |i, _| lambda[i] * s[i]);
        let (_dz_aff, ds_aff, dl_aff) = solve_step(&r_c_aff);
        let a_aff = max_step(&s, &ds_aff).min(max_step(&lambda, &dl_aff));
        let mu_aff = (0..m)
            .map(|i| (s[i] + a_aff * ds_aff[i]) * (lambda[i] + a_aff * dl_aff[i]))
            .sum::<f64>()
            / m as f64;
        let sigma = (mu_aff / mu).max(0.0).min(1.0).powi(3);

        // Corrector step with centring. When the second-order term is so
        // large that it collapses the step (far-from-path iterates with
        // extreme penalties), fall back to plain centring.
        let r_c = DVector::from_fn(m, |i, _| {
            lambda[i] * s[i] + ds_aff[i] * dl_aff[i] - sigma * mu
        });
        let (mut dz, mut ds, mut dl) = solve_step(&r_c);
        let step_c = max_step(&s, &ds).min(max_step(&lambda, &dl));
        if step_c < 0.1 * a_aff {
            let r_cent = DVector::from_fn(m, |i, _| lambda[i] * s[i] - sigma * mu);
            let (dz2, ds2, dl2) = solve_step(&r_cent);
            dz = dz2;
            ds = ds2;
            dl = dl2;
        }

        // A common step for both blocks: the dual residual couples z and
        // lambda through the Hessian, so unequal steps would break its
        // linear contraction.
        let tau = 0.995f64.max(1.0 - 10.0 * mu).min(0.9999);
        let alpha = (tau * max_step(&s, &ds).min(max_step(&lambda, &dl))).min(1.0);

        if alpha < 1e-14 {
            break;
        }

        z += alpha * &dz;
        s += alpha * &ds;
        lambda += alpha * &dl;
        for i in 0..m {
            s[i] = s[i].max(1e-300);
            lambda[i] = lambda[i].max(1e-300);
        }
    }

    let (_, zb, lb) = best.expect("at least one iterate recorded");

    // Stalled exits are usually degenerate faces: tight but linearly
    // dependent rows leave the dual underdetermined and the path-following
    // steps collapse while the primal is already accurate. The active-set
    // polish resolves exactly that, so try it before giving up.
    let sb = DVector::from_fn(m, |i, _| (h[i] - (g.row(i) * &zb)[0]).max(0.0));
    if let Some((zp, lp)) = polish(b, q, g, h, &sb, &lb) {
        let stat_p = (b * &zp + q + g.transpose() * &lp).amax();
        let pinf_p = (g * &zp - h).iter().cloned().fold(0.0f64, f64::max);
        let comp_p = (0..m)
            .map(|i| lp[i] * (h[i] - (g.row(i) * &zp)[0]).abs())
            .sum::<f64>()
            / m as f64;
        if stat_p <= TOL * q_scale && pinf_p <= TOL * h_scale && comp_p <= TOL * q_scale {
            return QpResult {
                status: QpStatus::Converged,
                z: zp,
                lambda: lp,
                iterations: MAX_ITER,
                stationarity: stat_p,
                primal_infeasibility: pinf_p,
                complementarity: comp_p,
            };
        }
    }

    QpResult {
        status: QpStatus::NotConverged,
        z: zb,
        lambda: lb,
        iterations: MAX_ITER,
        stationarity: last_report.0,
        primal_infeasibility: last_report.1,
        complementarity: last_report.2,
    }
}
