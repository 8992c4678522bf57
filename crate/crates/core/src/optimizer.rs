//! Three-frame loop refinement.
//!
//! For frames 0, 1, 2 the motions 0→1, 1→2 and 0→2 must chain: the two
//! short translations add up to the long one, the zooms multiply and the
//! rotations add. The 0→1 edge anchors the gauge (unit length, unit zoom,
//! fixed angles); the other angles and matching factors are adjusted to
//! close the loop while staying near their measurements.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Angles in degrees; `lambda_t*` are length ratios against the 0→1 edge,
/// `lambda_s*` are zoom-bin shifts against it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletState {
    pub theta01: f64,
    pub phi01: f64,
    pub theta12: f64,
    pub phi12: f64,
    pub theta02: f64,
    pub phi02: f64,
    pub lambda_t12: f64,
    pub lambda_t02: f64,
    pub lambda_s12: f64,
    pub lambda_s02: f64,
    /// Length of the 0→1 translation; 1 in the unit gauge.
    pub rho01: f64,
}

impl TripletState {
    const FREE: usize = 8;

    fn free(&self) -> [f64; 8] {
        [
            self.theta12,
            self.phi12,
            self.theta02,
            self.phi02,
            self.lambda_t12,
            self.lambda_t02,
            self.lambda_s12,
            self.lambda_s02,
        ]
    }

    fn with_free(&self, x: &[f64]) -> TripletState {
        TripletState {
            theta12: x[0],
            phi12: x[1],
            theta02: x[2],
            phi02: x[3],
            lambda_t12: x[4],
            lambda_t02: x[5],
            lambda_s12: x[6],
            lambda_s02: x[7],
            ..*self
        }
    }

    fn is_finite(&self) -> bool {
        self.free().iter().all(|v| v.is_finite())
            && self.theta01.is_finite()
            && self.phi01.is_finite()
            && self.rho01.is_finite()
    }
}

/// Standard deviations of the free measurements, same units as the state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletSigmas {
    pub theta12: f64,
    pub phi12: f64,
    pub theta02: f64,
    pub phi02: f64,
    pub lambda_t12: f64,
    pub lambda_t02: f64,
    pub lambda_s12: f64,
    pub lambda_s02: f64,
}

impl TripletSigmas {
    pub fn uniform(angle: f64, lambda_t: f64, lambda_s: f64) -> Self {
        Self {
            theta12: angle,
            phi12: angle,
            theta02: angle,
            phi02: angle,
            lambda_t12: lambda_t,
            lambda_t02: lambda_t,
            lambda_s12: lambda_s,
            lambda_s02: lambda_s,
        }
    }

    fn as_array(&self) -> [f64; 8] {
        [
            self.theta12,
            self.phi12,
            self.theta02,
            self.phi02,
            self.lambda_t12,
            self.lambda_t02,
            self.lambda_s12,
            self.lambda_s02,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletProblem {
    pub measured: TripletState,
    pub sigmas: TripletSigmas,
    /// Zoom growth per log-scale bin, converts `lambda_s*` to zoom ratios.
    pub epsilon: f64,
}

/// Loop mismatch: translation components, zoom ratio and rotation (radians).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LoopResiduals {
    pub mu: f64,
    pub nu: f64,
    pub s: f64,
    pub theta: f64,
}

impl LoopResiduals {
    /// Euclidean norm of `(mu, nu, s)`.
    pub fn norm(&self) -> f64 {
        (self.mu * self.mu + self.nu * self.nu + self.s * self.s).sqrt()
    }

    pub fn abs(&self) -> LoopResiduals {
        LoopResiduals {
            mu: self.mu.abs(),
            nu: self.nu.abs(),
            s: self.s.abs(),
            theta: self.theta.abs(),
        }
    }
}

/// Wraps an angle difference into `(-180, 180]` degrees.
pub fn wrap_degrees(a: f64) -> f64 {
    let w = a.rem_euclid(360.0);
    if w > 180.0 {
        w - 360.0
    } else {
        w
    }
}

fn signed_residuals(st: &TripletState, epsilon: f64) -> LoopResiduals {
    let a01 = (st.theta01 + st.phi01).to_radians();
    let a12 = (st.theta01 + st.theta12 + st.phi12).to_radians();
    let a02 = (st.theta02 + st.phi02).to_radians();
    let r = st.rho01;
    LoopResiduals {
        mu: r * a01.cos() + st.lambda_t12 * r * a12.cos() - st.lambda_t02 * r * a02.cos(),
        nu: r * a01.sin() + st.lambda_t12 * r * a12.sin() - st.lambda_t02 * r * a02.sin(),
        s: epsilon.powf(st.lambda_s02 - st.lambda_s12) - 1.0,
        theta: wrap_degrees(st.theta01 + st.theta12 - st.theta02).to_radians(),
    }
}

/// Absolute loop residuals of `state`.
pub fn loop_residuals(state: &TripletState, epsilon: f64) -> LoopResiduals {
    signed_residuals(state, epsilon).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub max_iter: usize,
    pub tol: f64,
    /// Weight of the squared loop residuals against the unit-free priors.
    pub loop_weight: f64,
    /// Cap on the prior weights `1/sigma^2`.
    pub max_prior_weight: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-10,
            loop_weight: 1e6,
            max_prior_weight: 1e12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletEstimate {
    pub state: TripletState,
    pub residual_before: LoopResiduals,
    pub residual_after: LoopResiduals,
    pub converged: bool,
    pub iterations: usize,
}

static INVOCATIONS: AtomicU64 = AtomicU64::new(0);
static VIOLATIONS: AtomicU64 = AtomicU64::new(0);

/// Process-wide count of optimizer calls and of calls whose loop residual
/// grew. The second number is zero by construction.
pub fn monotonicity_stats() -> (u64, u64) {
    (INVOCATIONS.load(Ordering::Relaxed), VIOLATIONS.load(Ordering::Relaxed))
}

const JACOBIAN_STEP: f64 = 1e-6;
const INITIAL_DAMPING: f64 = 1e-3;
const MAX_DAMPING: f64 = 1e16;

struct Objective<'a> {
    problem: &'a TripletProblem,
    sqrt_loop: f64,
    sqrt_prior: [f64; 8],
}

impl Objective<'_> {
    fn residuals(&self, x: &[f64]) -> DVector<f64> {
        let st = self.problem.measured.with_free(x);
        let l = signed_residuals(&st, self.problem.epsilon);
        let m = self.problem.measured.free();
        let mut r = DVector::zeros(4 + TripletState::FREE);
        r[0] = self.sqrt_loop * l.mu;
        r[1] = self.sqrt_loop * l.nu;
        r[2] = self.sqrt_loop * l.s;
        r[3] = self.sqrt_loop * l.theta;
        for i in 0..TripletState::FREE {
            let d = if i < 4 { wrap_degrees(x[i] - m[i]) } else { x[i] - m[i] };
            r[4 + i] = self.sqrt_prior[i] * d;
        }
        r
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = TripletState::FREE;
        let mut j = DMatrix::zeros(4 + n, n);
        let mut xp = x.to_vec();
        for k in 0..n {
            let orig = xp[k];
            xp[k] = orig + JACOBIAN_STEP;
            let rp = self.residuals(&xp);
            xp[k] = orig - JACOBIAN_STEP;
            let rm = self.residuals(&xp);
            xp[k] = orig;
            j.set_column(k, &((rp - rm) / (2.0 * JACOBIAN_STEP)));
        }
        j
    }
}

/// Damped Gauss-Newton refinement starting from the measurements.
///
/// A step is accepted only when it lowers the total cost without raising
/// the loop residual norm; otherwise the damping doubles.
pub fn optimize_triplet(problem: &TripletProblem, cfg: &OptimizerConfig) -> Result<TripletEstimate> {
    let sig = problem.sigmas.as_array();
    if sig.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(Error::InputDomain(format!("triplet sigmas must be finite and positive: {sig:?}")));
    }
    if !problem.measured.is_finite() || !(problem.epsilon > 1.0) {
        return Err(Error::InputDomain("triplet measurements must be finite".into()));
    }
    INVOCATIONS.fetch_add(1, Ordering::Relaxed);

    let mut sqrt_prior = [0.0; 8];
    for (w, s) in sqrt_prior.iter_mut().zip(sig) {
        *w = (1.0 / (s * s)).min(cfg.max_prior_weight).sqrt();
    }
    let obj = Objective {
        problem,
        sqrt_loop: cfg.loop_weight.max(0.0).sqrt(),
        sqrt_prior,
    };

    let before = loop_residuals(&problem.measured, problem.epsilon);
    let mut x = problem.measured.free().to_vec();
    let mut r = obj.residuals(&x);
    let mut cost = r.norm_squared();
    let mut loop_norm = before.norm();
    let mut damping = INITIAL_DAMPING;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        let j = obj.jacobian(&x);
        let jt = j.transpose();
        let g = &jt * &r;
        let h = &jt * &j;
        let mut step = None;
        while damping <= MAX_DAMPING {
            let mut a = h.clone();
            for k in 0..a.nrows() {
                a[(k, k)] += damping * h[(k, k)].max(1e-12);
            }
            let delta = match a.cholesky() {
                Some(c) => c.solve(&(-&g)),
                None => {
                    damping *= 2.0;
                    continue;
                }
            };
            if delta.norm() < cfg.tol {
                converged = true;
                break;
            }
            let cand: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, d)| a + d).collect();
            let cand_state = problem.measured.with_free(&cand);
            if !cand_state.is_finite() {
                return Err(Error::Optimizer {
                    reason: "non-finite state".into(),
                    last_state: Box::new(problem.measured.with_free(&x)),
                });
            }
            let rc = obj.residuals(&cand);
            let cc = rc.norm_squared();
            if !cc.is_finite() {
                return Err(Error::Optimizer {
                    reason: "non-finite residual".into(),
                    last_state: Box::new(problem.measured.with_free(&x)),
                });
            }
            let lc = loop_residuals(&cand_state, problem.epsilon).norm();
            if cc < cost && lc <= loop_norm {
                step = Some((cand, rc, cc, lc));
                damping = (damping * 0.5).max(1e-12);
                break;
            }
            damping *= 2.0;
        }
        if converged {
            break;
        }
        match step {
            Some((cand, rc, cc, lc)) => {
                let rel = (cost - cc) / cost.max(f64::MIN_POSITIVE);
                x = cand;
                r = rc;
                cost = cc;
                loop_norm = lc;
                if rel < 1e-15 {
                    converged = true;
                    break;
                }
            }
            // no damping level improves the cost: a stationary point
            None => {
                converged = true;
                break;
            }
        }
    }

    let state = problem.measured.with_free(&x);
    let after = loop_residuals(&state, problem.epsilon);
    if after.norm() > before.norm() + 1e-12 {
        VIOLATIONS.fetch_add(1, Ordering::Relaxed);
    }
    assert!(
        after.norm() <= before.norm() + 1e-12,
        "loop residual grew: {} -> {}",
        before.norm(),
        after.norm()
    );
    Ok(TripletEstimate {
        state,
        residual_before: before,
        residual_after: after,
        converged,
        iterations,
    })
}
