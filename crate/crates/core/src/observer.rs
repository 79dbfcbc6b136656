//! Generalized proportional-integral observer (GPIO) for obstacle motion.
//!
//! Each spatial axis runs an identical scalar observer of order `m`: state
//! block 1 estimates the obstacle position, block 2 its velocity, higher
//! blocks absorb slowly varying disturbance terms. The estimation-error
//! dynamics are linear, `E_{k+1} = Phi * E_k`, and a discrete Lyapunov
//! equation turns the spectral radius of `Phi` into an explicit decay
//! envelope `||E_k|| <= eta^k * sqrt(c2/c1) * delta` used by the safety
//! layer to inflate obstacle radii.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ObserverError {
    #[error("observer order m must be at least 2, got {0}")]
    OrderTooSmall(usize),
    #[error("expected {expected} gains, got {got}")]
    GainCount { expected: usize, got: usize },
    #[error("sample time must be positive")]
    BadSampleTime,
    #[error("decay rate eta must lie in (0, 1), got {0}")]
    BadEta(f64),
    #[error("error magnitude delta must be non-negative, got {0}")]
    BadDelta(f64),
    #[error("spectral radius {rho} is not below eta = {eta}; no certificate exists")]
    Unstable { rho: f64, eta: f64 },
    #[error("state has {got} blocks, observer order is {expected}")]
    StateSize { expected: usize, got: usize },
}

/// Gains and timing for one GPIO instance (shared by all three axes).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpioConfig {
    pub m: usize,
    pub alphas: Vec<f64>,
    pub t_s: f64,
    /// Decay rate of the error envelope; must dominate the spectral radius.
    pub eta: f64,
    /// Bound on the initial estimation-error norm.
    pub delta: f64,
}

impl GpioConfig {
    pub fn new(m: usize, alphas: Vec<f64>, t_s: f64, eta: f64, delta: f64) -> Result<Self, ObserverError> {
        if m < 2 {
            return Err(ObserverError::OrderTooSmall(m));
        }
        if alphas.len() != m {
            return Err(ObserverError::GainCount { expected: m, got: alphas.len() });
        }
        if !(t_s > 0.0) {
            return Err(ObserverError::BadSampleTime);
        }
        if !(eta > 0.0 && eta < 1.0) {
            return Err(ObserverError::BadEta(eta));
        }
        if !(delta >= 0.0) {
            return Err(ObserverError::BadDelta(delta));
        }
        Ok(Self { m, alphas, t_s, eta, delta })
    }
}

/// Observer state: `m` blocks of three axes, plus the simulation time it
/// refers to.
#[derive(Debug, Clone, PartialEq)]
pub struct GpioState {
    pub xi: Vec<Vector3<f64>>,
    pub t: f64,
}

impl GpioState {
    pub fn zeros(m: usize) -> Self {
        Self { xi: vec![Vector3::zeros(); m], t: 0.0 }
    }

    /// Estimated obstacle position (first block).
    pub fn position(&self) -> Vector3<f64> {
        self.xi[0]
    }

    /// Estimated obstacle velocity (second block).
    pub fn velocity(&self) -> Vector3<f64> {
        self.xi[1]
    }
}

/// Chain-of-integrators model the observer assumes for the obstacle:
/// `D_{k+1} = A D_k`, `o_k = C D_k` with `A` upper bidiagonal and `C`
/// selecting the first block.
#[derive(Debug, Clone)]
pub struct ObstacleModel {
    pub m: usize,
    pub t_s: f64,
    pub a: DMatrix<f64>,
}

/// Builds the per-axis obstacle model matrices for order `m`.
pub fn build_system(m: usize, t_s: f64) -> Result<ObstacleModel, ObserverError> {
    if m < 2 {
        return Err(ObserverError::OrderTooSmall(m));
    }
    if !(t_s > 0.0) {
        return Err(ObserverError::BadSampleTime);
    }
    let mut a = DMatrix::identity(m, m);
    for i in 0..m - 1 {
        a[(i, i + 1)] = t_s;
    }
    Ok(ObstacleModel { m, t_s, a })
}

/// Per-axis estimation-error transition matrix: identity diagonal except
/// `1 - t_s*alpha_1` in the corner, `t_s` on the superdiagonal and
/// `-t_s*alpha_i` down the first column.
pub fn build_phi(alphas: &[f64], t_s: f64) -> DMatrix<f64> {
    let m = alphas.len();
    let mut phi = DMatrix::identity(m, m);
    phi[(0, 0)] = 1.0 - t_s * alphas[0];
    for i in 1..m {
        phi[(i, 0)] = -t_s * alphas[i];
    }
    for i in 0..m.saturating_sub(1) {
        phi[(i, i + 1)] = t_s;
    }
    phi
}

/// Largest eigenvalue modulus of a small square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|e| e.norm()).fold(0.0, f64::max)
}

/// Decay certificate: `W` solves the strict scaled Lyapunov equation
/// `(Phi/eta)' W (Phi/eta) - W = -I`, so that
/// `||E_k||^2_W <= eta^{2k} ||E_0||^2_W` and the Euclidean envelope follows
/// from the extreme eigenvalues `c1 <= c2` of `W`.
#[derive(Debug, Clone)]
pub struct ErrorCertificate {
    pub phi: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub c1: f64,
    pub c2: f64,
    pub eta: f64,
}

impl ErrorCertificate {
    /// Amplification factor of the error envelope at step 0.
    pub fn phi0(&self) -> f64 {
        (self.c2 / self.c1).sqrt()
    }

    /// `eta^k * sqrt(c2/c1)`.
    pub fn decay_factor(&self, k: usize) -> f64 {
        self.eta.powi(k as i32) * self.phi0()
    }
}

/// Solves the scaled Lyapunov equation by vectorisation. Fails if the
/// spectral radius of `phi` is not strictly below `eta`.
pub fn lyapunov_certificate(phi: &DMatrix<f64>, eta: f64) -> Result<ErrorCertificate, ObserverError> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(ObserverError::BadEta(eta));
    }
    let rho = spectral_radius(phi);
    if rho >= eta {
        return Err(ObserverError::Unstable { rho, eta });
    }
    let m = phi.nrows();
    let scaled = phi / eta;
    let st = scaled.transpose();
    // vec(M' W M) = (M' kron M') vec(W); solve (I - M' kron M') vec(W) = vec(I).
    let system = DMatrix::identity(m * m, m * m) - st.kronecker(&st);
    let rhs = DVector::from_fn(m * m, |i, _| if i % (m + 1) == 0 { 1.0 } else { 0.0 });
    let vec_w = system
        .lu()
        .solve(&rhs)
        .expect("Lyapunov system is nonsingular when rho(phi) < eta");
    let mut w = DMatrix::from_fn(m, m, |r, c| vec_w[c * m + r]);
    // Symmetrise away round-off; the exact solution is symmetric.
    w = (&w + w.transpose()) * 0.5;
    let eigs = w.symmetric_eigenvalues();
    let c1 = eigs.iter().copied().fold(f64::INFINITY, f64::min);
    let c2 = eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(ErrorCertificate { phi: phi.clone(), w, c1, c2, eta })
}

/// One GPIO update from the measured obstacle position at `state.t`.
pub fn gpio_step(state: &GpioState, o_meas: &Vector3<f64>, config: &GpioConfig) -> Result<GpioState, ObserverError> {
    let m = config.m;
    if state.xi.len() != m {
        return Err(ObserverError::StateSize { expected: m, got: state.xi.len() });
    }
    let innovation = o_meas - state.xi[0];
    let mut next = state.xi.clone();
    for i in 0..m - 1 {
        next[i] = state.xi[i] + (state.xi[i + 1] + config.alphas[i] * innovation) * config.t_s;
    }
    next[m - 1] = state.xi[m - 1] + config.alphas[m - 1] * innovation * config.t_s;
    Ok(GpioState { xi: next, t: state.t + config.t_s })
}

/// `i`-step prediction under the obstacle model: `D_{i|k} = A^i D_k`.
pub fn predict_obstacle(state: &GpioState, i: usize, model: &ObstacleModel) -> Result<GpioState, ObserverError> {
    let m = model.m;
    if state.xi.len() != m {
        return Err(ObserverError::StateSize { expected: m, got: state.xi.len() });
    }
    // Stack the three axes as columns and propagate them together.
    let mut d = DMatrix::zeros(m, 3);
    for (r, block) in state.xi.iter().enumerate() {
        for c in 0..3 {
            d[(r, c)] = block[c];
        }
    }
    for _ in 0..i {
        d = &model.a * d;
    }
    let xi = (0..m)
        .map(|r| Vector3::new(d[(r, 0)], d[(r, 1)], d[(r, 2)]))
        .collect();
    Ok(GpioState { xi, t: state.t + i as f64 * model.t_s })
}

/// Euclidean envelope on the estimation error at step `k` for an initial
/// error of norm at most `delta`.
pub fn error_bound(cert: &ErrorCertificate, k: usize, delta: f64) -> f64 {
    cert.decay_factor(k) * delta
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const PAPER_ALPHAS: [f64; 3] = [5.0, 10.0, 2.0];
    const TS: f64 = 0.04;

    fn paper_phi() -> DMatrix<f64> {
        build_phi(&PAPER_ALPHAS, TS)
    }

    #[test]
    fn build_system_small_orders() {
        let m2 = build_system(2, 0.1).unwrap();
        assert_eq!(m2.a, DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]));
        let m3 = build_system(3, TS).unwrap();
        assert_eq!(
            m3.a,
            DMatrix::from_row_slice(3, 3, &[1.0, TS, 0.0, 0.0, 1.0, TS, 0.0, 0.0, 1.0])
        );
        assert!(matches!(build_system(1, TS), Err(ObserverError::OrderTooSmall(1))));
    }

    #[test]
    fn stationary_obstacle_is_a_fixed_point_of_the_model() {
        let model = build_system(3, TS).unwrap();
        let state = GpioState {
            xi: vec![Vector3::new(1.0, -2.0, 0.5), Vector3::zeros(), Vector3::zeros()],
            t: 0.0,
        };
        let ahead = predict_obstacle(&state, 7, &model).unwrap();
        assert_abs_diff_eq!(ahead.position(), state.position(), epsilon = 1e-15);
    }

    #[test]
    fn build_phi_matches_hand_computation() {
        let phi = paper_phi();
        let expect = DMatrix::from_row_slice(
            3,
            3,
            &[0.8, 0.04, 0.0, -0.4, 1.0, 0.04, -0.08, 0.0, 1.0],
        );
        assert_abs_diff_eq!(phi, expect, epsilon = 1e-15);
    }

    #[test]
    fn build_phi_scalar_order() {
        let phi = build_phi(&[3.0], 0.1);
        assert_eq!(phi.nrows(), 1);
        assert_abs_diff_eq!(phi[(0, 0)], 0.7, epsilon = 1e-15);
    }

    #[test]
    fn spectral_radius_basics() {
        assert_abs_diff_eq!(spectral_radius(&DMatrix::identity(3, 3)), 1.0, epsilon = 1e-12);
        let d = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, -0.2]);
        assert_abs_diff_eq!(spectral_radius(&d), 0.5, epsilon = 1e-12);
    }

    /// Independent check: the characteristic polynomial of the 3x3 error
    /// matrix, expanded by hand, solved by bisection plus quadratic
    /// deflation.
    #[test]
    fn spectral_radius_matches_characteristic_polynomial_oracle() {
        let phi = paper_phi();
        // det(Phi - lambda I) for the bidiagonal-plus-first-column shape:
        // (1-l)*[(p00-l)(1-l) + ts*ts*a2] - ts*ts*a3*(... ) expanded directly.
        let (p00, ts, a2, a3) = (phi[(0, 0)], TS, PAPER_ALPHAS[1], PAPER_ALPHAS[2]);
        let poly = |l: f64| (1.0 - l) * ((p00 - l) * (1.0 - l) + ts * ts * a2) - ts * ts * ts * a3;
        // One real root sits between 0.9 and 1.0 (sign change).
        let (mut lo, mut hi) = (0.9, 1.0);
        assert!(poly(lo) > 0.0 && poly(hi) < 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if poly(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let real_root = 0.5 * (lo + hi);
        // Read the cubic's coefficients off four evaluations:
        // poly(l) = c3 l^3 + c2 l^2 + c1 l + c0.
        let c0 = poly(0.0);
        let f1 = poly(1.0);
        let fm1 = poly(-1.0);
        let f2 = poly(2.0);
        let c2 = (f1 + fm1) / 2.0 - c0;
        let c3 = (f2 - f1 + fm1 - 4.0 * c2 - c0) / 6.0;
        let c1 = f1 - c3 - c2 - c0;
        // Divide out (l - real_root); the quotient is
        // c3 l^2 + (c2 + c3 r) l + (c1 + r (c2 + c3 r)).
        let q2 = c3;
        let q1 = c2 + c3 * real_root;
        let q0 = c1 + real_root * q1;
        let disc = q1 * q1 - 4.0 * q2 * q0;
        let pair_modulus = if disc >= 0.0 {
            let r1 = (-q1 + disc.sqrt()) / (2.0 * q2);
            let r2 = (-q1 - disc.sqrt()) / (2.0 * q2);
            r1.abs().max(r2.abs())
        } else {
            (q0 / q2).abs().sqrt()
        };
        let oracle = real_root.abs().max(pair_modulus);
        let rho = spectral_radius(&phi);
        assert_abs_diff_eq!(rho, oracle, epsilon = 1e-9);
        assert!(rho < 1.0, "paper gains must be stable, got rho = {rho}");
    }

    #[test]
    fn certificate_scalar_case() {
        let phi = DMatrix::from_element(1, 1, 0.5);
        let cert = lyapunov_certificate(&phi, 0.9).unwrap();
        // W = 1 / (1 - (0.5/0.9)^2).
        let expect = 1.0 / (1.0 - (0.5f64 / 0.9).powi(2));
        assert_abs_diff_eq!(cert.w[(0, 0)], expect, epsilon = 1e-12);
        assert_abs_diff_eq!(cert.phi0(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn certificate_matches_paper_constants() {
        let cert = lyapunov_certificate(&paper_phi(), 0.9999).unwrap();
        assert_abs_diff_eq!(cert.c1, 3.23, epsilon = 0.01);
        assert_abs_diff_eq!(cert.c2, 91.68, epsilon = 0.05);
        let phi0 = cert.phi0();
        assert!((phi0 - 5.33).abs() / 5.33 < 0.01, "phi0 = {phi0}");
    }

    #[test]
    fn certificate_satisfies_defining_inequality() {
        let cert = lyapunov_certificate(&paper_phi(), 0.9999).unwrap();
        let lhs = cert.phi.transpose() * &cert.w * &cert.phi - &cert.w * cert.eta * cert.eta;
        let max_eig = lhs
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(max_eig <= 1e-9, "max eigenvalue {max_eig} must be non-positive");
        assert!(cert.c1 > 0.0 && cert.c2 >= cert.c1);
    }

    #[test]
    fn certificate_rejects_unstable_pairs() {
        let phi = DMatrix::from_element(1, 1, 0.95);
        assert!(matches!(
            lyapunov_certificate(&phi, 0.9),
            Err(ObserverError::Unstable { .. })
        ));
    }

    #[test]
    fn weighted_norm_is_equivalent_to_euclidean_within_c1_c2() {
        let cert = lyapunov_certificate(&paper_phi(), 0.9999).unwrap();
        let mut rng = 0x243f6a8885a308d3u64;
        for _ in 0..100 {
            let mut next = || {
                rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((rng >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            };
            let e = DVector::from_vec(vec![next(), next(), next()]);
            let ee = e.norm_squared();
            let we = (e.transpose() * &cert.w * &e)[(0, 0)];
            assert!(cert.c1 * ee <= we + 1e-9 && we <= cert.c2 * ee + 1e-9);
        }
    }

    fn paper_config() -> GpioConfig {
        GpioConfig::new(3, PAPER_ALPHAS.to_vec(), TS, 0.9999, 0.8).unwrap()
    }

    #[test]
    fn gpio_step_fixed_point_on_stationary_truth() {
        let config = paper_config();
        let o = Vector3::new(0.6, -0.4, 0.16);
        let state = GpioState { xi: vec![o, Vector3::zeros(), Vector3::zeros()], t: 0.0 };
        let next = gpio_step(&state, &o, &config).unwrap();
        assert_abs_diff_eq!(next.position(), o, epsilon = 1e-15);
        assert_abs_diff_eq!(next.velocity(), Vector3::zeros(), epsilon = 1e-15);
        assert_abs_diff_eq!(next.t, TS, epsilon = 1e-15);
    }

    #[test]
    fn gpio_error_follows_phi_recursion_exactly() {
        // Truth generated by the nominal model (highest block constant) makes
        // the stacked error evolve exactly as E_{k+1} = Phi E_k per axis.
        let config = paper_config();
        let model = build_system(3, TS).unwrap();
        let phi = paper_phi();
        let mut truth = GpioState {
            xi: vec![
                Vector3::new(0.6, -0.4, 0.16),
                Vector3::new(0.0, 0.145, 0.0),
                Vector3::new(0.01, -0.02, 0.005),
            ],
            t: 0.0,
        };
        let mut est = GpioState {
            xi: vec![
                truth.xi[0] + Vector3::new(0.05, -0.03, 0.02),
                truth.xi[1] + Vector3::new(-0.01, 0.02, 0.0),
                truth.xi[2],
            ],
            t: 0.0,
        };
        for _ in 0..50 {
            let mut expected = Vec::new();
            for axis in 0..3 {
                let e = DVector::from_vec((0..3).map(|b| truth.xi[b][axis] - est.xi[b][axis]).collect());
                expected.push(&phi * e);
            }
            let meas = truth.position();
            truth = predict_obstacle(&truth, 1, &model).unwrap();
            est = gpio_step(&est, &meas, &config).unwrap();
            for axis in 0..3 {
                for b in 0..3 {
                    let got = truth.xi[b][axis] - est.xi[b][axis];
                    assert_abs_diff_eq!(got, expected[axis][b], epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn gpio_converges_within_oracle_step_count() {
        // An independent linear-recursion simulation of E_{k+1} = Phi E_k
        // determines the first step where the position error drops below
        // 1e-3; the observer run must match it on model-generated truth.
        let config = paper_config();
        let model = build_system(3, TS).unwrap();
        let phi = paper_phi();
        let e0 = [0.2, -0.15, 0.1];
        let mut oracle_k = None;
        {
            let mut e: Vec<DVector<f64>> = (0..3)
                .map(|a| DVector::from_vec(vec![e0[a], 0.0, 0.0]))
                .collect();
            for k in 0..5000 {
                let pos_err: f64 = e.iter().map(|v| v[0] * v[0]).sum::<f64>().sqrt();
                if pos_err < 1e-3 {
                    oracle_k = Some(k);
                    break;
                }
                e = e.iter().map(|v| &phi * v).collect();
            }
        }
        let oracle_k = oracle_k.expect("oracle recursion must converge");

        let mut truth = GpioState {
            xi: vec![Vector3::new(0.6, -0.4, 0.16), Vector3::new(0.0, 0.065, 0.0), Vector3::zeros()],
            t: 0.0,
        };
        let mut est = GpioState {
            xi: vec![truth.xi[0] - Vector3::new(e0[0], e0[1], e0[2]), truth.xi[1], truth.xi[2]],
            t: 0.0,
        };
        for _ in 0..oracle_k {
            let meas = truth.position();
            truth = predict_obstacle(&truth, 1, &model).unwrap();
            est = gpio_step(&est, &meas, &config).unwrap();
        }
        let err = (truth.position() - est.position()).norm();
        assert!(err < 1e-3, "error {err} after oracle step count {oracle_k}");
    }

    #[test]
    fn predict_obstacle_examples() {
        let model = build_system(3, TS).unwrap();
        let state = GpioState {
            xi: vec![Vector3::new(0.6, -0.4, 0.16), Vector3::new(0.0, 0.145, 0.0), Vector3::zeros()],
            t: 0.0,
        };
        let same = predict_obstacle(&state, 0, &model).unwrap();
        assert_abs_diff_eq!(same.position(), state.position(), epsilon = 1e-15);
        let one = predict_obstacle(&state, 1, &model).unwrap();
        assert_abs_diff_eq!(one.position()[1], -0.4 + 0.145 * TS, epsilon = 1e-15);
        assert_abs_diff_eq!(one.velocity(), state.velocity(), epsilon = 1e-15);
    }

    #[test]
    fn error_bound_examples() {
        let cert = ErrorCertificate {
            phi: paper_phi(),
            w: DMatrix::identity(3, 3),
            c1: 3.23,
            c2: 91.68,
            eta: 0.9999,
        };
        // sqrt(91.68/3.23) * 0.8 with the paper's rounding.
        assert_abs_diff_eq!(error_bound(&cert, 0, 0.8), 4.2624, epsilon = 2e-3);
        assert_abs_diff_eq!(error_bound(&cert, 0, 0.0), 0.0, epsilon = 1e-15);
        let mut prev = f64::INFINITY;
        for k in [0, 10, 100, 1000, 10000] {
            let b = error_bound(&cert, k, 0.8);
            assert!(b <= prev);
            prev = b;
        }
        assert!(error_bound(&cert, 200_000, 0.8) < 1e-3);
    }

    #[test]
    fn config_validation() {
        assert!(GpioConfig::new(1, vec![1.0], TS, 0.99, 0.0).is_err());
        assert!(GpioConfig::new(3, vec![1.0], TS, 0.99, 0.0).is_err());
        assert!(GpioConfig::new(3, vec![1.0, 1.0, 1.0], 0.0, 0.99, 0.0).is_err());
        assert!(GpioConfig::new(3, vec![1.0, 1.0, 1.0], TS, 1.0, 0.0).is_err());
        assert!(GpioConfig::new(3, vec![1.0, 1.0, 1.0], TS, 0.99, -0.1).is_err());
    }
}
