//! Reference lines and conversions between Cartesian poses and Frenet states.
//!
//! A [`ReferenceLine`] is a polyline resampled at uniform arc-length spacing.
//! Position, heading and curvature are linearly interpolated between samples,
//! which defines the continuous map `(s, l) -> (x, y)` used by both
//! conversion directions. `l` is positive to the left of increasing `s`.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest lateral distance at which a projection is considered meaningful.
pub const MAX_PROJECTION_DISTANCE: f64 = 20.0;

/// Upper bound on the resampling step of a reference line.
pub const MAX_RESAMPLE_STEP: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("reference line needs at least 2 distinct waypoints, got {0}")]
    TooFewWaypoints(usize),
    #[error("duplicate consecutive waypoints at index {0}")]
    DuplicatePoint(usize),
    #[error("resample step must lie in (0, {MAX_RESAMPLE_STEP}] m, got {0}")]
    BadStep(f64),
    #[error("non-finite value in geometry input")]
    NonFinite,
    #[error("pose is {distance:.3} m from the reference line (limit {limit} m)")]
    TooFar { distance: f64, limit: f64 },
    #[error("ambiguous projection: foot points at s={first:.3} and s={second:.3} are equally near")]
    Ambiguous { first: f64, second: f64 },
    #[error("no foot point found on the reference line")]
    NoFootPoint,
    #[error("heading differs from the reference tangent by {0:.3} rad; Frenet derivatives undefined")]
    Perpendicular(f64),
    #[error("s = {s:.3} outside [0, {length:.3}]")]
    OutOfRange { s: f64, length: f64 },
    #[error("Frenet singularity: |l * kappa| = {0:.6} >= 1")]
    Singular(f64),
    #[error("route file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("route file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Vehicle state in the Frenet frame of a reference line.
///
/// `l_prime` and `l_dprime` are derivatives with respect to `s`; the dotted
/// fields are time derivatives. The two sets are tied by
/// `l_dot = l_prime * s_dot` and `l_ddot = l_dprime * s_dot^2 + l_prime * s_ddot`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrenetState {
    pub s: f64,
    pub s_dot: f64,
    pub s_ddot: f64,
    pub l: f64,
    pub l_dot: f64,
    pub l_ddot: f64,
    pub l_prime: f64,
    pub l_dprime: f64,
}

impl FrenetState {
    /// Builds a state from time-domain derivatives, filling in the
    /// arc-length derivatives. Below 1e-6 m/s the s-derivatives are zero.
    pub fn from_time_domain(s: f64, s_dot: f64, s_ddot: f64, l: f64, l_dot: f64, l_ddot: f64) -> Self {
        let (l_prime, l_dprime) = if s_dot.abs() > 1e-6 {
            let lp = l_dot / s_dot;
            (lp, (l_ddot - lp * s_ddot) / (s_dot * s_dot))
        } else {
            (0.0, 0.0)
        };
        Self { s, s_dot, s_ddot, l, l_dot, l_ddot, l_prime, l_dprime }
    }

    /// Builds a state from arc-length derivatives, filling in the time derivatives.
    pub fn from_arc_domain(s: f64, s_dot: f64, s_ddot: f64, l: f64, l_prime: f64, l_dprime: f64) -> Self {
        Self {
            s,
            s_dot,
            s_ddot,
            l,
            l_dot: l_prime * s_dot,
            l_ddot: l_dprime * s_dot * s_dot + l_prime * s_ddot,
            l_prime,
            l_dprime,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.s, self.s_dot, self.s_ddot, self.l, self.l_dot, self.l_ddot, self.l_prime, self.l_dprime]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CartesianPose {
    pub position: Point2,
    /// Radians in (-pi, pi].
    pub heading: f64,
    pub speed: f64,
    /// Tangential acceleration.
    pub acceleration: f64,
    pub curvature: f64,
}

impl CartesianPose {
    pub fn at(x: f64, y: f64, heading: f64, speed: f64) -> Self {
        Self {
            position: Point2::new(x, y),
            heading: normalize_angle(heading),
            speed,
            acceleration: 0.0,
            curvature: 0.0,
        }
    }
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Sample of a reference line at an arbitrary arc length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefPoint {
    pub s: f64,
    pub position: Point2,
    /// Unwrapped heading.
    pub heading: f64,
    pub curvature: f64,
    /// d(curvature)/ds.
    pub curvature_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceLine {
    points: Vec<Point2>,
    arc: Vec<f64>,
    heading: Vec<f64>,
    curvature: Vec<f64>,
    step: f64,
}

impl ReferenceLine {
    /// Resamples `waypoints` at uniform arc-length spacing no larger than
    /// `resample_step`, then derives headings and curvature by finite
    /// differences (second order, one-sided at the ends).
    pub fn build(waypoints: &[Point2], resample_step: f64) -> Result<Self, GeometryError> {
        if !(resample_step > 0.0 && resample_step <= MAX_RESAMPLE_STEP) {
            return Err(GeometryError::BadStep(resample_step));
        }
        if waypoints.iter().any(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if waypoints.len() < 2 {
            return Err(GeometryError::TooFewWaypoints(waypoints.len()));
        }
        let mut cumulative = Vec::with_capacity(waypoints.len());
        cumulative.push(0.0);
        for (i, pair) in waypoints.windows(2).enumerate() {
            let d = pair[0].distance(&pair[1]);
            if d < 1e-9 {
                return Err(GeometryError::DuplicatePoint(i + 1));
            }
            cumulative.push(cumulative[i] + d);
        }
        let total = *cumulative.last().unwrap();
        let n = ((total / resample_step) - 1e-9).ceil().max(1.0) as usize;
        let ds = total / n as f64;

        let mut points = Vec::with_capacity(n + 1);
        let mut seg = 0;
        for i in 0..=n {
            let s = if i == n { total } else { i as f64 * ds };
            while seg + 1 < waypoints.len() - 1 && cumulative[seg + 1] < s {
                seg += 1;
            }
            let span = cumulative[seg + 1] - cumulative[seg];
            let u = ((s - cumulative[seg]) / span).clamp(0.0, 1.0);
            let a = waypoints[seg];
            let b = waypoints[seg + 1];
            points.push(Point2::new(a.x + u * (b.x - a.x), a.y + u * (b.y - a.y)));
        }
        let arc: Vec<f64> = (0..=n).map(|i| i as f64 * ds).collect();

        let heading = unwrap(&derivative_directions(&points, ds));
        let curvature = if n < 2 {
            vec![0.0; n + 1]
        } else {
            first_derivative(&heading, ds)
        };
        Ok(Self { points, arc, heading, curvature, step: ds })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        *self.arc.last().unwrap()
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn arc_lengths(&self) -> &[f64] {
        &self.arc
    }

    /// Unwrapped headings per sample.
    pub fn headings(&self) -> &[f64] {
        &self.heading
    }

    pub fn curvatures(&self) -> &[f64] {
        &self.curvature
    }

    fn segment(&self, s: f64) -> (usize, f64) {
        let last = self.points.len() - 2;
        let i = ((s / self.step).floor().max(0.0) as usize).min(last);
        (i, (s - self.arc[i]) / self.step)
    }

    /// Interpolated sample at arc length `s` (clamped to the line).
    pub fn sample(&self, s: f64) -> RefPoint {
        let s = s.clamp(0.0, self.total_length());
        let (i, u) = self.segment(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        RefPoint {
            s,
            position: Point2::new(a.x + u * (b.x - a.x), a.y + u * (b.y - a.y)),
            heading: self.heading[i] + u * (self.heading[i + 1] - self.heading[i]),
            curvature: self.curvature[i] + u * (self.curvature[i + 1] - self.curvature[i]),
            curvature_rate: (self.curvature[i + 1] - self.curvature[i]) / self.step,
        }
    }

    pub fn curvature_at(&self, s: f64) -> f64 {
        self.sample(s).curvature
    }

    /// Point at arc length `s` offset laterally by `l`.
    pub fn offset_point(&self, s: f64, l: f64) -> Point2 {
        let r = self.sample(s);
        Point2::new(r.position.x - l * r.heading.sin(), r.position.y + l * r.heading.cos())
    }

    /// Foot-point residual: projection of `(p - P(s))` on the tangent at `s`.
    fn foot_residual(&self, p: &Point2, s: f64) -> f64 {
        let r = self.sample(s);
        (p.x - r.position.x) * r.heading.cos() + (p.y - r.position.y) * r.heading.sin()
    }

    fn vertex_residual(&self, p: &Point2, j: usize) -> f64 {
        let q = self.points[j];
        let h = self.heading[j];
        (p.x - q.x) * h.cos() + (p.y - q.y) * h.sin()
    }

    /// Root of the foot residual inside `[lo, hi]`, where the residual
    /// changes sign from non-negative to non-positive.
    fn solve_foot(&self, p: &Point2, mut lo: f64, mut hi: f64) -> f64 {
        let mut s = 0.5 * (lo + hi);
        for _ in 0..100 {
            let g = self.foot_residual(p, s);
            if g > 0.0 {
                lo = s;
            } else {
                hi = s;
            }
            let r = self.sample(s);
            let (c, sn) = (r.heading.cos(), r.heading.sin());
            let (dx, dy) = (p.x - r.position.x, p.y - r.position.y);
            // dP/ds along the segment and dtheta/ds.
            let (i, _) = self.segment(s);
            let (a, b) = (self.points[i], self.points[i + 1]);
            let (px, py) = ((b.x - a.x) / self.step, (b.y - a.y) / self.step);
            let dtheta = (self.heading[i + 1] - self.heading[i]) / self.step;
            let dg = -(px * c + py * sn) + dtheta * (-dx * sn + dy * c);
            let mut next = if dg.abs() > 1e-12 { s - g / dg } else { 0.5 * (lo + hi) };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - s).abs() < 1e-14 || hi - lo < 1e-14 {
                s = next;
                break;
            }
            s = next;
        }
        s
    }

    /// All foot points `(s, signed l)` between vertices `from..=to`.
    fn feet(&self, p: &Point2, from: usize, to: usize) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let total = self.total_length();
        let g_first = self.vertex_residual(p, from);
        if from == 0 && g_first < 0.0 {
            // Behind the start: clamp to the first sample.
            out.push((0.0, self.lateral_at(p, 0.0)));
        }
        let mut g_prev = g_first;
        for j in from..to {
            let g_next = self.vertex_residual(p, j + 1);
            if g_prev >= 0.0 && g_next <= 0.0 {
                let s = if g_prev == 0.0 {
                    self.arc[j]
                } else if g_next == 0.0 {
                    self.arc[j + 1]
                } else {
                    self.solve_foot(p, self.arc[j], self.arc[j + 1])
                };
                out.push((s, self.lateral_at(p, s)));
            }
            g_prev = g_next;
        }
        if to == self.points.len() - 1 && g_prev > 0.0 {
            out.push((total, self.lateral_at(p, total)));
        }
        out
    }

    fn lateral_at(&self, p: &Point2, s: f64) -> f64 {
        let r = self.sample(s);
        -(p.x - r.position.x) * r.heading.sin() + (p.y - r.position.y) * r.heading.cos()
    }

    fn pick_foot(&self, feet: Vec<(f64, f64)>) -> Result<(f64, f64), GeometryError> {
        let mut best: Option<(f64, f64)> = None;
        for f in &feet {
            if best.is_none_or(|b| f.1.abs() < b.1.abs()) {
                best = Some(*f);
            }
        }
        let best = best.ok_or(GeometryError::NoFootPoint)?;
        for f in &feet {
            if (f.0 - best.0).abs() > self.step && (f.1.abs() - best.1.abs()).abs() < 1e-6 {
                return Err(GeometryError::Ambiguous { first: best.0.min(f.0), second: best.0.max(f.0) });
            }
        }
        if best.1.abs() > MAX_PROJECTION_DISTANCE {
            return Err(GeometryError::TooFar { distance: best.1.abs(), limit: MAX_PROJECTION_DISTANCE });
        }
        Ok(best)
    }

    /// Foot point `(s, l)` of `p` over the whole line.
    pub fn project_point(&self, p: &Point2) -> Result<(f64, f64), GeometryError> {
        if !p.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        self.pick_foot(self.feet(p, 0, self.points.len() - 1))
    }

    /// Foot point searched only within `window` metres of `s_hint`; used on
    /// looping routes and in the simulation hot loop.
    pub fn project_point_near(&self, p: &Point2, s_hint: f64, window: f64) -> Result<(f64, f64), GeometryError> {
        if !p.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        let last = self.points.len() - 1;
        let from = (((s_hint - window) / self.step).floor().max(0.0) as usize).min(last - 1);
        let to = (((s_hint + window) / self.step).ceil().max(0.0) as usize).clamp(from + 1, last);
        self.pick_foot(self.feet(p, from, to))
    }

    /// Cartesian pose to Frenet state.
    pub fn project_to_frenet(&self, pose: &CartesianPose) -> Result<FrenetState, GeometryError> {
        let (s, l) = self.project_point(&pose.position)?;
        self.frenet_from_foot(pose, s, l)
    }

    pub fn project_to_frenet_near(&self, pose: &CartesianPose, s_hint: f64, window: f64) -> Result<FrenetState, GeometryError> {
        let (s, l) = self.project_point_near(&pose.position, s_hint, window)?;
        self.frenet_from_foot(pose, s, l)
    }

    fn frenet_from_foot(&self, pose: &CartesianPose, s: f64, l: f64) -> Result<FrenetState, GeometryError> {
        let r = self.sample(s);
        let one_minus = 1.0 - r.curvature * l;
        if one_minus <= 0.0 {
            return Err(GeometryError::Singular((r.curvature * l).abs()));
        }
        let dtheta = normalize_angle(pose.heading - r.heading);
        let (cos_d, tan_d) = (dtheta.cos(), dtheta.tan());
        if cos_d <= 1e-6 {
            return Err(GeometryError::Perpendicular(dtheta));
        }
        let l_prime = one_minus * tan_d;
        let kr_d = r.curvature_rate * l + r.curvature * l_prime;
        let k_ratio = pose.curvature * one_minus / cos_d - r.curvature;
        let l_dprime = -kr_d * tan_d + one_minus / (cos_d * cos_d) * k_ratio;
        let s_dot = pose.speed * cos_d / one_minus;
        let s_ddot = (pose.acceleration * cos_d - s_dot * s_dot * (l_prime * k_ratio - kr_d)) / one_minus;
        Ok(FrenetState::from_arc_domain(s, s_dot, s_ddot, l, l_prime, l_dprime))
    }

    /// Frenet state to Cartesian pose.
    pub fn frenet_to_cartesian(&self, f: &FrenetState) -> Result<CartesianPose, GeometryError> {
        if !f.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        let length = self.total_length();
        if f.s < -1e-9 || f.s > length + 1e-9 {
            return Err(GeometryError::OutOfRange { s: f.s, length });
        }
        let r = self.sample(f.s);
        let kl = r.curvature * f.l;
        if kl >= 1.0 || kl.abs() >= 1.0 {
            return Err(GeometryError::Singular(kl.abs()));
        }
        let one_minus = 1.0 - kl;
        let (sin_r, cos_r) = r.heading.sin_cos();
        let position = Point2::new(r.position.x - f.l * sin_r, r.position.y + f.l * cos_r);
        let tan_d = f.l_prime / one_minus;
        let dtheta = tan_d.atan();
        let cos_d = dtheta.cos();
        let kr_d = r.curvature_rate * f.l + r.curvature * f.l_prime;
        let curvature = ((f.l_dprime + kr_d * tan_d) * cos_d * cos_d / one_minus + r.curvature) * cos_d / one_minus;
        let speed = (one_minus * f.s_dot).hypot(f.s_dot * f.l_prime);
        let k_ratio = curvature * one_minus / cos_d - r.curvature;
        let acceleration = f.s_ddot * one_minus / cos_d + f.s_dot * f.s_dot / cos_d * (f.l_prime * k_ratio - kr_d);
        Ok(CartesianPose {
            position,
            heading: normalize_angle(r.heading + dtheta),
            speed,
            acceleration,
            curvature,
        })
    }
}

fn derivative_directions(points: &[Point2], ds: f64) -> Vec<f64> {
    let n = points.len();
    if n == 2 {
        let h = (points[1].y - points[0].y).atan2(points[1].x - points[0].x);
        return vec![h, h];
    }
    let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    let dx = first_derivative(&xs, ds);
    let dy = first_derivative(&ys, ds);
    dx.iter().zip(&dy).map(|(x, y)| y.atan2(*x)).collect()
}

/// Central differences inside, second-order one-sided stencils at the ends.
fn first_derivative(v: &[f64], h: f64) -> Vec<f64> {
    let n = v.len();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
    }
    d[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
    d[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h);
    d
}

fn unwrap(angles: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(angles.len());
    let mut prev = angles[0];
    out.push(prev);
    for &a in &angles[1..] {
        let next = prev + normalize_angle(a - prev);
        out.push(next);
        prev = next;
    }
    out
}

/// Parses a route file: one `x y` pair per line, `#` starts a comment.
pub fn parse_route(text: &str) -> Result<Vec<Point2>, GeometryError> {
    let mut points = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let mut next = |name: &str| -> Result<f64, GeometryError> {
            let tok = fields.next().ok_or_else(|| GeometryError::Parse {
                line: idx + 1,
                message: format!("missing {name} coordinate"),
            })?;
            tok.parse::<f64>().map_err(|e| GeometryError::Parse { line: idx + 1, message: format!("{tok:?}: {e}") })
        };
        let x = next("x")?;
        let y = next("y")?;
        if fields.next().is_some() {
            return Err(GeometryError::Parse { line: idx + 1, message: "expected exactly two fields".into() });
        }
        points.push(Point2::new(x, y));
    }
    Ok(points)
}

pub fn load_route(path: &Path) -> Result<Vec<Point2>, GeometryError> {
    let text = std::fs::read_to_string(path).map_err(|e| GeometryError::Io(format!("{}: {e}", path.display())))?;
    parse_route(&text)
}

pub fn format_route(points: &[Point2]) -> String {
    let mut out = String::from("# x y (meters)\n");
    for p in points {
        out.push_str(&format!("{} {}\n", p.x, p.y));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight() -> ReferenceLine {
        ReferenceLine::build(&[Point2::new(0.0, 0.0), Point2::new(100.0, 0.0)], 1.0).unwrap()
    }

    pub(crate) fn circle(radius: f64, samples: usize) -> Vec<Point2> {
        (0..=samples)
            .map(|i| {
                let a = -PI / 2.0 + 1.5 * PI * i as f64 / samples as f64;
                Point2::new(radius * a.cos(), radius * a.sin() + radius)
            })
            .collect()
    }

    #[test]
    fn straight_segment_resamples_to_unit_steps() {
        let line = straight();
        assert_eq!(line.len(), 101);
        assert!(line.curvatures().iter().all(|k| k.abs() < 1e-12));
        assert!(line.headings().iter().all(|h| h.abs() < 1e-12));
        assert!((line.total_length() - 100.0).abs() < 1e-12);
    }

    #[test]
    fn dense_circle_has_inverse_radius_curvature() {
        let line = ReferenceLine::build(&circle(50.0, 20_000), 0.5).unwrap();
        for k in line.curvatures() {
            assert!((k - 0.02).abs() < 1e-4, "curvature {k}");
        }
    }

    #[test]
    fn l_shape_spike_at_corner() {
        let wp = [Point2::new(0.0, 0.0), Point2::new(50.0, 0.0), Point2::new(50.0, 50.0)];
        let line = ReferenceLine::build(&wp, 1.0).unwrap();
        assert!((line.total_length() - 100.0).abs() / 100.0 < 0.01);
        let (imax, _) = line
            .curvatures()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap();
        assert!((line.arc_lengths()[imax] - 50.0).abs() <= 1.0);
        for (s, k) in line.arc_lengths().iter().zip(line.curvatures()) {
            if (s - 50.0).abs() > 3.0 {
                assert!(k.abs() < 1e-9, "curvature {k} at s={s}");
            }
        }
    }

    #[test]
    fn build_rejects_bad_input() {
        assert_eq!(ReferenceLine::build(&[Point2::new(0.0, 0.0)], 1.0), Err(GeometryError::TooFewWaypoints(1)));
        let dup = [Point2::new(0.0, 0.0), Point2::new(0.0, 0.0), Point2::new(1.0, 0.0)];
        assert_eq!(ReferenceLine::build(&dup, 1.0), Err(GeometryError::DuplicatePoint(1)));
        let ok = [Point2::new(0.0, 0.0), Point2::new(1.0, 0.0)];
        assert!(matches!(ReferenceLine::build(&ok, 0.0), Err(GeometryError::BadStep(_))));
    }

    #[test]
    fn axis_aligned_projection() {
        let line = straight();
        let f = line.project_to_frenet(&CartesianPose::at(10.0, 2.0, 0.0, 15.0)).unwrap();
        assert!((f.s - 10.0).abs() < 1e-12);
        assert!((f.l - 2.0).abs() < 1e-12);
        assert!((f.s_dot - 15.0).abs() < 1e-12);
        assert!(f.l_dot.abs() < 1e-12);
        let on = line.project_to_frenet(&CartesianPose::at(42.0, 0.0, 0.0, 10.0)).unwrap();
        assert_eq!((on.l, on.l_prime), (0.0, 0.0));
    }

    #[test]
    fn circle_projection_outside_is_right_of_travel() {
        // Counter-clockwise circle: the outside lies to the right.
        let line = ReferenceLine::build(&circle(50.0, 20_000), 0.5).unwrap();
        let angle: f64 = 0.3;
        let p = Point2::new(51.0 * angle.cos(), 51.0 * angle.sin() + 50.0);
        let (s, l) = line.project_point(&p).unwrap();
        let expected_s = 50.0 * (angle + PI / 2.0);
        assert!((l + 1.0).abs() < 1e-3, "l = {l}");
        assert!((s - expected_s).abs() < 0.05, "s = {s}, expected {expected_s}");
    }

    #[test]
    fn inverse_on_straight_line() {
        let line = straight();
        let pose = line.frenet_to_cartesian(&FrenetState { s: 10.0, l: 2.0, ..Default::default() }).unwrap();
        assert!((pose.position.x - 10.0).abs() < 1e-12 && (pose.position.y - 2.0).abs() < 1e-12);
        assert_eq!(pose.heading, 0.0);
    }

    #[test]
    fn zero_offset_lies_on_samples() {
        let line = ReferenceLine::build(&circle(30.0, 5000), 0.5).unwrap();
        for (i, s) in line.arc_lengths().iter().enumerate().step_by(7) {
            let pose = line.frenet_to_cartesian(&FrenetState { s: *s, ..Default::default() }).unwrap();
            assert!(pose.position.distance(&line.points()[i]) < 1e-9);
        }
    }

    #[test]
    fn singular_inverse_is_reported() {
        let line = ReferenceLine::build(&circle(10.0, 5000), 0.5).unwrap();
        let err = line.frenet_to_cartesian(&FrenetState { s: 5.0, l: 10.5, ..Default::default() });
        assert!(matches!(err, Err(GeometryError::Singular(_))));
    }

    #[test]
    fn far_and_ambiguous_projections_fail() {
        let line = straight();
        assert!(matches!(line.project_point(&Point2::new(50.0, 25.0)), Err(GeometryError::TooFar { .. })));
        // Centre of a full circle is equidistant from every foot point.
        let full: Vec<Point2> = (0..=4000)
            .map(|i| {
                let a = 1.9 * PI * i as f64 / 4000.0;
                Point2::new(10.0 * a.cos(), 10.0 * a.sin())
            })
            .collect();
        let ring = ReferenceLine::build(&full, 0.5).unwrap();
        assert!(matches!(ring.project_point(&Point2::new(0.0, 0.0)), Err(GeometryError::Ambiguous { .. })));
    }

    #[test]
    fn route_file_parsing() {
        let pts = parse_route("# header\n0 0\n 10.5 -2 # tail comment\n\n20 0\n").unwrap();
        assert_eq!(pts, vec![Point2::new(0.0, 0.0), Point2::new(10.5, -2.0), Point2::new(20.0, 0.0)]);
        assert!(matches!(parse_route("1 2 3"), Err(GeometryError::Parse { line: 1, .. })));
        assert!(matches!(parse_route("1"), Err(GeometryError::Parse { .. })));
        assert_eq!(parse_route(&format_route(&pts)).unwrap(), pts);
    }

    #[test]
    fn normalize_angle_range() {
        assert_eq!(normalize_angle(PI), PI);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }
}
