//! Lateral MPC on path-tracking error dynamics with box-bounded steering.

use nalgebra::{DMatrix, DVector, Matrix4, Matrix6, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vehicle::{LateralOutputs, VehicleParams, VehicleState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("speed {0} m/s below the error-model threshold")]
    TooSlow(f64),
    #[error("invalid MPC configuration: {0}")]
    Config(String),
    #[error("non-finite controller input")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub prediction_steps: usize,
    pub control_steps: usize,
    pub step: f64,
    pub w_offset: f64,
    pub w_offset_rate: f64,
    pub w_yaw: f64,
    pub w_yaw_rate: f64,
    /// Weight on steering deviation from the curvature feedforward.
    pub w_input: f64,
    pub w_input_rate: f64,
    pub max_steer: f64,
    pub min_speed: f64,
    pub max_iterations: usize,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            prediction_steps: 20,
            control_steps: 5,
            step: 0.05,
            w_offset: 10.0,
            w_offset_rate: 1.0,
            w_yaw: 5.0,
            w_yaw_rate: 1.0,
            w_input: 1.0,
            w_input_rate: 10.0,
            max_steer: 0.5,
            min_speed: 1.0,
            max_iterations: 100,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let bad = |m: &str| Err(ControllerError::Config(m.into()));
        if self.control_steps == 0 || self.control_steps > self.prediction_steps {
            return bad("need 0 < control_steps <= prediction_steps");
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return bad("step must be positive");
        }
        let w = [self.w_offset, self.w_offset_rate, self.w_yaw, self.w_yaw_rate, self.w_input, self.w_input_rate];
        if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("weights must be non-negative");
        }
        if !(self.max_steer > 0.0) {
            return bad("max_steer must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorState {
    pub e_d: f64,
    pub e_d_rate: f64,
    pub e_yaw: f64,
    pub e_yaw_rate: f64,
}

impl ErrorState {
    /// Error coordinates from tracking outputs and the path curvature at the
    /// foot point.
    pub fn from_vehicle(out: &LateralOutputs, st: &VehicleState, curvature: f64) -> Self {
        Self {
            e_d: out.e_d,
            e_d_rate: st.vy * out.e_yaw.cos() + st.vx * out.e_yaw.sin(),
            e_yaw: out.e_yaw,
            e_yaw_rate: st.yaw_rate - st.vx * curvature,
        }
    }

    pub fn vector(&self) -> Vector4<f64> {
        Vector4::new(self.e_d, self.e_d_rate, self.e_yaw, self.e_yaw_rate)
    }
}

/// `x' = A x + B δ + E ψ̇_des` for `x = [e_d, ė_d, e_yaw, ė_yaw]`.
pub fn continuous_error_dynamics(p: &VehicleParams, vx: f64) -> (Matrix4<f64>, Vector4<f64>, Vector4<f64>) {
    let (m, iz, lf, lr, cf, cr) = (p.mass, p.yaw_inertia, p.lf, p.lr, p.cf, p.cr);
    let a = Matrix4::new(
        0.0, 1.0, 0.0, 0.0,
        0.0, -(cf + cr) / (m * vx), (cf + cr) / m, (cr * lr - cf * lf) / (m * vx),
        0.0, 0.0, 0.0, 1.0,
        0.0, (cr * lr - cf * lf) / (iz * vx), (cf * lf - cr * lr) / iz, -(cf * lf * lf + cr * lr * lr) / (iz * vx),
    );
    let b = Vector4::new(0.0, cf / m, 0.0, cf * lf / iz);
    let e = Vector4::new(0.0, (cr * lr - cf * lf) / (m * vx) - vx, 0.0, -(cf * lf * lf + cr * lr * lr) / (iz * vx));
    (a, b, e)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorDynamics {
    pub a: Matrix4<f64>,
    pub b: Vector4<f64>,
    /// Input matrix of the desired yaw rate `v_x κ`.
    pub e: Vector4<f64>,
    pub vx: f64,
    pub step: f64,
}

/// Zero-order-hold discretization via the augmented matrix exponential.
pub fn linearize_discretize(p: &VehicleParams, vx: f64, step: f64, min_speed: f64) -> Result<ErrorDynamics, ControllerError> {
    if !vx.is_finite() || !step.is_finite() {
        return Err(ControllerError::NonFinite);
    }
    if vx < min_speed.max(1.0) {
        return Err(ControllerError::TooSlow(vx));
    }
    let (a, b, e) = continuous_error_dynamics(p, vx);
    let mut aug = Matrix6::<f64>::zeros();
    aug.fixed_view_mut::<4, 4>(0, 0).copy_from(&a);
    aug.fixed_view_mut::<4, 1>(0, 4).copy_from(&b);
    aug.fixed_view_mut::<4, 1>(0, 5).copy_from(&e);
    let phi = (aug * step).exp();
    Ok(ErrorDynamics {
        a: phi.fixed_view::<4, 4>(0, 0).into_owned(),
        b: phi.fixed_view::<4, 1>(0, 4).into_owned(),
        e: phi.fixed_view::<4, 1>(0, 5).into_owned(),
        vx,
        step,
    })
}

/// Steady-state steering that holds curvature `kappa` at `vx`.
pub fn feedforward_steer(p: &VehicleParams, vx: f64, kappa: f64) -> f64 {
    let k_us = p.mass * (p.lr * p.cr - p.lf * p.cf) / (p.wheelbase() * p.cf * p.cr);
    (p.wheelbase() + k_us * vx * vx) * kappa
}

/// Condensed QP `min ½ uᵀ H u + fᵀ u` subject to `lower ≤ u ≤ upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxQp {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxQp {
    pub fn cost(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.h * u)) + self.f.dot(u)
    }
}

/// Builds the condensed tracking QP. Moves past the control horizon hold
/// the last control move.
pub fn build_qp(
    dynamics: &ErrorDynamics,
    params: &VehicleParams,
    e: &ErrorState,
    curvature: &[f64],
    prev_delta: f64,
    cfg: &MpcConfig,
) -> BoxQp {
    let (np, nc) = (cfg.prediction_steps, cfg.control_steps);
    let kappa = |k: usize| curvature.get(k).or(curvature.last()).copied().unwrap_or(0.0);
    let q = Vector4::new(cfg.w_offset, cfg.w_offset_rate, cfg.w_yaw, cfg.w_yaw_rate);
    let col = |k: usize| k.min(nc - 1);

    // x_k = free_k + Σ_j G_{k,j} u_j, built forward.
    let mut free = dynamics.a * e.vector();
    let mut gain: Vec<Vector4<f64>> = vec![Vector4::zeros(); nc];
    let mut h = DMatrix::<f64>::zeros(nc, nc);
    let mut f = DVector::<f64>::zeros(nc);
    for k in 0..np {
        if k > 0 {
            free = dynamics.a * free;
            for g in gain.iter_mut() {
                *g = dynamics.a * *g;
            }
        }
        free += dynamics.e * (dynamics.vx * kappa(k));
        gain[col(k)] += dynamics.b;
        for i in 0..nc {
            let qi = gain[i].component_mul(&q);
            f[i] += qi.dot(&free);
            for j in 0..nc {
                h[(i, j)] += qi.dot(&gain[j]);
            }
        }
        // Input term on u_k - δ_ff,k.
        let ff = feedforward_steer(params, dynamics.vx, kappa(k));
        h[(col(k), col(k))] += cfg.w_input;
        f[col(k)] -= cfg.w_input * ff;
    }
    for i in 0..nc {
        h[(i, i)] += cfg.w_input_rate * if i + 1 < nc { 2.0 } else { 1.0 };
        if i + 1 < nc {
            h[(i, i + 1)] -= cfg.w_input_rate;
            h[(i + 1, i)] -= cfg.w_input_rate;
        }
    }
    f[0] -= cfg.w_input_rate * prev_delta;
    BoxQp {
        h: h * 2.0,
        f: f * 2.0,
        lower: DVector::from_element(nc, -cfg.max_steer),
        upper: DVector::from_element(nc, cfg.max_steer),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

/// Primal active-set solver for a strictly convex box QP. Returns the
/// solution and whether optimality was reached within `max_iter`.
pub fn solve_box_qp(qp: &BoxQp, start: Option<&DVector<f64>>, max_iter: usize) -> (DVector<f64>, bool) {
    let n = qp.f.len();
    let mut u = match start {
        Some(s) if s.len() == n => s.clone(),
        _ => DVector::zeros(n),
    };
    let mut set = vec![Bound::Free; n];
    for i in 0..n {
        if u[i] <= qp.lower[i] {
            u[i] = qp.lower[i];
            set[i] = Bound::Lower;
        } else if u[i] >= qp.upper[i] {
            u[i] = qp.upper[i];
            set[i] = Bound::Upper;
        }
    }
    for _ in 0..max_iter {
        let free: Vec<usize> = (0..n).filter(|i| set[*i] == Bound::Free).collect();
        // Equality-constrained minimizer over the free variables.
        let mut target = u.clone();
        if !free.is_empty() {
            let hf = DMatrix::from_fn(free.len(), free.len(), |r, c| qp.h[(free[r], free[c])]);
            let rhs = DVector::from_fn(free.len(), |r, _| {
                let i = free[r];
                -qp.f[i] - (0..n).filter(|j| set[*j] != Bound::Free).map(|j| qp.h[(i, j)] * u[j]).sum::<f64>()
            });
            let sol = match hf.cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => return (u, false),
            };
            for (r, &i) in free.iter().enumerate() {
                target[i] = sol[r];
            }
        }
        let step = &target - &u;
        if step.amax() > 1e-14 {
            let mut alpha = 1.0;
            let mut blocking = None;
            for &i in &free {
                let ratio = if step[i] > 0.0 && target[i] > qp.upper[i] {
                    Some(((qp.upper[i] - u[i]) / step[i], Bound::Upper))
                } else if step[i] < 0.0 && target[i] < qp.lower[i] {
                    Some(((qp.lower[i] - u[i]) / step[i], Bound::Lower))
                } else {
                    None
                };
                if let Some((r, b)) = ratio {
                    if r < alpha {
                        alpha = r;
                        blocking = Some((i, b));
                    }
                }
            }
            u += step * alpha;
            if let Some((i, b)) = blocking {
                set[i] = b;
                u[i] = if b == Bound::Upper { qp.upper[i] } else { qp.lower[i] };
                continue;
            }
        }
        // Multiplier check on the bound set.
        let grad = &qp.h * &u + &qp.f;
        let worst = (0..n)
            .filter_map(|i| match set[i] {
                Bound::Lower if grad[i] < -1e-12 => Some((i, -grad[i])),
                Bound::Upper if grad[i] > 1e-12 => Some((i, grad[i])),
                _ => None,
            })
            .max_by(|a, b| a.1.total_cmp(&b.1));
        match worst {
            Some((i, _)) => set[i] = Bound::Free,
            None => return (u, true),
        }
    }
    (u, false)
}

/// Stateless solve: first control move of the box-constrained optimum.
pub fn mpc_solve(
    e: &ErrorState,
    curvature: &[f64],
    vx: f64,
    prev_delta: f64,
    params: &VehicleParams,
    cfg: &MpcConfig,
) -> Result<f64, ControllerError> {
    let dynamics = linearize_discretize(params, vx, cfg.step, cfg.min_speed)?;
    let qp = build_qp(&dynamics, params, e, curvature, prev_delta, cfg);
    let (u, ok) = solve_box_qp(&qp, None, cfg.max_iterations);
    if !ok {
        log::warn!("MPC active set did not converge; using last iterate");
    }
    Ok(u[0])
}

/// MPC with cached discretization, previous move and warm start.
#[derive(Debug, Clone)]
pub struct MpcController {
    pub cfg: MpcConfig,
    pub params: VehicleParams,
    cache: Option<ErrorDynamics>,
    prev_delta: f64,
    warm: Option<DVector<f64>>,
}

impl MpcController {
    pub fn new(cfg: MpcConfig, params: VehicleParams) -> Result<Self, ControllerError> {
        cfg.validate()?;
        Ok(Self { cfg, params, cache: None, prev_delta: 0.0, warm: None })
    }

    pub fn reset(&mut self) {
        self.prev_delta = 0.0;
        self.warm = None;
    }

    /// Records the steering that was actually applied, used as the
    /// reference for the first rate penalty.
    pub fn set_applied(&mut self, delta: f64) {
        self.prev_delta = delta;
    }

    pub fn solve(&mut self, e: &ErrorState, vx: f64, curvature: &[f64]) -> Result<f64, ControllerError> {
        if !vx.is_finite() || [e.e_d, e.e_d_rate, e.e_yaw, e.e_yaw_rate].iter().any(|v| !v.is_finite()) {
            return Err(ControllerError::NonFinite);
        }
        let dynamics = match self.cache {
            Some(d) if d.vx == vx => d,
            _ => {
                let d = linearize_discretize(&self.params, vx, self.cfg.step, self.cfg.min_speed)?;
                self.cache = Some(d);
                d
            }
        };
        let qp = build_qp(&dynamics, &self.params, e, curvature, self.prev_delta, &self.cfg);
        let (u, ok) = solve_box_qp(&qp, self.warm.as_ref(), self.cfg.max_iterations);
        if !ok {
            log::warn!("MPC active set did not converge; using last iterate");
        }
        let first = u[0];
        let n = u.len();
        self.warm = Some(DVector::from_fn(n, |i, _| u[(i + 1).min(n - 1)]));
        self.prev_delta = first;
        Ok(first)
    }
}
