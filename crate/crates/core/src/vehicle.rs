//! Linear 2-DOF bicycle model for lateral motion with kinematic pose
//! integration. Longitudinal speed is an input held by [`speed_hold`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_angle, GeometryError, Point2, ReferenceLine};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VehicleError {
    #[error("non-finite vehicle state")]
    NonFinite,
    #[error("integration step must lie in (0, 0.05] s, got {0}")]
    BadStep(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    pub mass: f64,
    pub yaw_inertia: f64,
    /// CG to front axle.
    pub lf: f64,
    /// CG to rear axle.
    pub lr: f64,
    /// Front axle cornering stiffness, N/rad.
    pub cf: f64,
    /// Rear axle cornering stiffness, N/rad.
    pub cr: f64,
    pub max_steer: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self { mass: 1500.0, yaw_inertia: 2500.0, lf: 1.2, lr: 1.6, cf: 80_000.0, cr: 80_000.0, max_steer: 0.5 }
    }
}

impl VehicleParams {
    pub fn wheelbase(&self) -> f64 {
        self.lf + self.lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub vx: f64,
    pub vy: f64,
    pub yaw_rate: f64,
}

impl VehicleState {
    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.yaw, self.vx, self.vy, self.yaw_rate].iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LateralOutputs {
    pub e_d: f64,
    pub e_yaw: f64,
    pub a_y: f64,
    pub v_y: f64,
}

/// `(dv_y/dt, d(yaw_rate)/dt)` of the linear single-track model.
pub fn lateral_derivatives(vy: f64, r: f64, vx: f64, delta: f64, p: &VehicleParams) -> (f64, f64) {
    let (m, iz, lf, lr, cf, cr) = (p.mass, p.yaw_inertia, p.lf, p.lr, p.cf, p.cr);
    let vy_dot = -(cf + cr) / (m * vx) * vy + ((cr * lr - cf * lf) / (m * vx) - vx) * r + cf / m * delta;
    let r_dot = (cr * lr - cf * lf) / (iz * vx) * vy - (cf * lf * lf + cr * lr * lr) / (iz * vx) * r + cf * lf / iz * delta;
    (vy_dot, r_dot)
}

/// Lateral acceleration `dv_y/dt + v_x * yaw_rate` at the given state.
pub fn lateral_acceleration(st: &VehicleState, delta: f64, p: &VehicleParams) -> f64 {
    let (vy_dot, _) = lateral_derivatives(st.vy, st.yaw_rate, st.vx, delta, p);
    vy_dot + st.vx * st.yaw_rate
}

fn derivatives(s: &[f64; 5], vx: f64, delta: f64, p: &VehicleParams) -> [f64; 5] {
    let [_, _, yaw, vy, r] = *s;
    let (vy_dot, r_dot) = lateral_derivatives(vy, r, vx, delta, p);
    let (sin, cos) = yaw.sin_cos();
    [vx * cos - vy * sin, vx * sin + vy * cos, r, vy_dot, r_dot]
}

pub fn clamp_steer(delta: f64, p: &VehicleParams) -> f64 {
    if delta.abs() > p.max_steer {
        log::warn!("steering {delta:.4} rad clamped to ±{}", p.max_steer);
    }
    delta.clamp(-p.max_steer, p.max_steer)
}

/// Advances the state by `dt` with classic RK4 at constant `vx` and steer.
pub fn step_dynamics(st: &VehicleState, delta: f64, p: &VehicleParams, dt: f64) -> Result<VehicleState, VehicleError> {
    if !st.is_finite() || !delta.is_finite() {
        return Err(VehicleError::NonFinite);
    }
    if !(dt > 0.0 && dt <= 0.05) {
        return Err(VehicleError::BadStep(dt));
    }
    let delta = clamp_steer(delta, p);
    let y0 = [st.x, st.y, st.yaw, st.vy, st.yaw_rate];
    let add = |a: &[f64; 5], k: &[f64; 5], h: f64| std::array::from_fn::<f64, 5, _>(|i| a[i] + h * k[i]);
    let k1 = derivatives(&y0, st.vx, delta, p);
    let k2 = derivatives(&add(&y0, &k1, dt / 2.0), st.vx, delta, p);
    let k3 = derivatives(&add(&y0, &k2, dt / 2.0), st.vx, delta, p);
    let k4 = derivatives(&add(&y0, &k3, dt), st.vx, delta, p);
    let y1: [f64; 5] = std::array::from_fn(|i| y0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    let next = VehicleState { x: y1[0], y: y1[1], yaw: normalize_angle(y1[2]), vx: st.vx, vy: y1[3], yaw_rate: y1[4] };
    if !next.is_finite() {
        return Err(VehicleError::NonFinite);
    }
    Ok(next)
}

/// Proportional speed hold with an acceleration limit.
pub fn speed_hold(vx: f64, target: f64, gain: f64, max_accel: f64, dt: f64) -> f64 {
    let accel = (gain * (target - vx)).clamp(-max_accel, max_accel);
    vx + accel * dt
}

/// Tracking errors of `st` relative to `path`, searched near `s_hint`.
pub fn lateral_outputs(st: &VehicleState, a_y: f64, path: &ReferenceLine, s_hint: f64) -> Result<(LateralOutputs, f64), VehicleError> {
    let (s, l) = path.project_point_near(&st.position(), s_hint, 30.0)?;
    let e_yaw = normalize_angle(st.yaw - path.sample(s).heading);
    Ok((LateralOutputs { e_d: l, e_yaw, a_y, v_y: st.vy }, s))
}
