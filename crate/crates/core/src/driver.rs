//! Two-point preview driver with a per-state transport delay.

use std::collections::VecDeque;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::{Point2, ReferenceLine};
use crate::planner::DriverIntent;
use crate::vehicle::VehicleState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriverStateKind {
    Concentrated,
    Normal,
    Distracted,
}

impl DriverStateKind {
    pub const ALL: [DriverStateKind; 3] = [Self::Concentrated, Self::Normal, Self::Distracted];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for DriverStateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Concentrated => "concentrated",
            Self::Normal => "normal",
            Self::Distracted => "distracted",
        })
    }
}

impl std::str::FromStr for DriverStateKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "concentrated" => Ok(Self::Concentrated),
            "normal" => Ok(Self::Normal),
            "distracted" => Ok(Self::Distracted),
            other => Err(format!("unknown driver state `{other}`")),
        }
    }
}

/// Quantified driver state.
pub fn quantify_state(kind: DriverStateKind) -> f64 {
    match kind {
        DriverStateKind::Concentrated => 0.2,
        DriverStateKind::Normal => 0.5,
        DriverStateKind::Distracted => 0.8,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriverModelConfig {
    pub near_preview: f64,
    pub far_preview: f64,
    /// rad per metre of lateral error at the near point.
    pub near_gain: f64,
    /// rad per rad of visual angle to the far point.
    pub far_gain: f64,
    pub rate_limit: f64,
    pub delay_concentrated: f64,
    pub delay_normal: f64,
    pub delay_distracted: f64,
    pub max_steer: f64,
    /// Stationary std of the Ornstein-Uhlenbeck steering noise, rad.
    pub noise_std: f64,
    pub noise_time_constant: f64,
}

impl Default for DriverModelConfig {
    fn default() -> Self {
        Self {
            near_preview: 5.0,
            far_preview: 15.0,
            near_gain: 0.02,
            far_gain: 0.3,
            rate_limit: 1.0,
            delay_concentrated: 0.2,
            delay_normal: 0.3,
            delay_distracted: 0.5,
            max_steer: 0.5,
            noise_std: 0.003,
            noise_time_constant: 0.5,
        }
    }
}

impl DriverModelConfig {
    pub fn delay(&self, kind: DriverStateKind) -> f64 {
        match kind {
            DriverStateKind::Concentrated => self.delay_concentrated,
            DriverStateKind::Normal => self.delay_normal,
            DriverStateKind::Distracted => self.delay_distracted,
        }
    }

    pub fn delay_steps(&self, kind: DriverStateKind, dt: f64) -> usize {
        (self.delay(kind) / dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("near_preview", self.near_preview),
            ("far_preview", self.far_preview),
            ("near_gain", self.near_gain),
            ("far_gain", self.far_gain),
            ("rate_limit", self.rate_limit),
            ("max_steer", self.max_steer),
            ("noise_time_constant", self.noise_time_constant),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("driver {name} must be positive, got {v}"));
            }
        }
        if self.near_preview >= self.far_preview {
            return Err("driver near preview must be shorter than far preview".into());
        }
        for kind in DriverStateKind::ALL {
            if !(self.delay(kind) >= 0.0) {
                return Err(format!("driver delay for {kind} must be non-negative"));
            }
        }
        if !(self.noise_std >= 0.0) {
            return Err("driver noise_std must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverCommand {
    pub delta_h: f64,
    pub intent: Option<DriverIntent>,
}

fn to_vehicle_frame(st: &VehicleState, p: Point2) -> (f64, f64) {
    let (dx, dy) = (p.x - st.x, p.y - st.y);
    let (sin, cos) = st.yaw.sin_cos();
    (cos * dx + sin * dy, -sin * dx + cos * dy)
}

/// Undelayed preview command toward lateral offset `target_offset` of `path`.
/// `s` is the vehicle's arc position on `path`. `None` when the far point
/// runs past the end of the path.
pub fn preview_raw(st: &VehicleState, path: &ReferenceLine, s: f64, target_offset: f64, cfg: &DriverModelConfig) -> Option<f64> {
    if s + cfg.far_preview > path.total_length() {
        return None;
    }
    let near = path.offset_point(s + cfg.near_preview, target_offset);
    let far = path.offset_point(s + cfg.far_preview, target_offset);
    let (_, near_y) = to_vehicle_frame(st, near);
    let (far_x, far_y) = to_vehicle_frame(st, far);
    Some(cfg.near_gain * near_y + cfg.far_gain * far_y.atan2(far_x))
}

/// Stateful driver: preview law, transport delay, rate limit, noise.
#[derive(Debug, Clone)]
pub struct DriverModel {
    cfg: DriverModelConfig,
    dt: f64,
    kind: DriverStateKind,
    buffer: VecDeque<f64>,
    last_raw: f64,
    output: f64,
    noise: f64,
    rng: ChaCha8Rng,
}

impl DriverModel {
    pub fn new(cfg: DriverModelConfig, kind: DriverStateKind, dt: f64, seed: u64) -> Self {
        let n = cfg.delay_steps(kind, dt);
        Self {
            cfg,
            dt,
            kind,
            buffer: std::iter::repeat_n(0.0, n).collect(),
            last_raw: 0.0,
            output: 0.0,
            noise: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn config(&self) -> &DriverModelConfig {
        &self.cfg
    }

    pub fn kind(&self) -> DriverStateKind {
        self.kind
    }

    pub fn output(&self) -> f64 {
        self.output
    }

    /// Switches state; the delay line is padded with its oldest value or
    /// trimmed from the oldest end.
    pub fn set_kind(&mut self, kind: DriverStateKind) {
        self.kind = kind;
        let n = self.cfg.delay_steps(kind, self.dt);
        while self.buffer.len() < n {
            let oldest = self.buffer.front().copied().unwrap_or(self.output);
            self.buffer.push_front(oldest);
        }
        while self.buffer.len() > n {
            self.buffer.pop_front();
        }
    }

    /// Feeds one undelayed command through delay, rate limit and clamp.
    pub fn push(&mut self, raw: f64) -> f64 {
        self.buffer.push_back(raw);
        let delayed = self.buffer.pop_front().unwrap_or(raw);
        let max_change = self.cfg.rate_limit * self.dt;
        let change = delayed - self.output;
        let limited = if change.abs() <= max_change { delayed } else { self.output + max_change.copysign(change) };
        self.output = limited.clamp(-self.cfg.max_steer, self.cfg.max_steer);
        self.output
    }

    fn next_noise(&mut self) -> f64 {
        if self.cfg.noise_std == 0.0 {
            return 0.0;
        }
        let a = (-self.dt / self.cfg.noise_time_constant).exp();
        let z: f64 = StandardNormal.sample(&mut self.rng);
        self.noise = a * self.noise + self.cfg.noise_std * (1.0 - a * a).sqrt() * z;
        self.noise
    }

    /// One control tick. `bias` is an additive scripted steering error.
    pub fn step(&mut self, st: &VehicleState, path: &ReferenceLine, s: f64, target_offset: f64, bias: f64) -> f64 {
        let preview = preview_raw(st, path, s, target_offset, &self.cfg).unwrap_or(self.last_raw);
        self.last_raw = preview;
        let noise = self.next_noise();
        self.push(preview + bias + noise)
    }

    /// Tick with the preview switched off: only `bias` and noise reach the
    /// delay line.
    pub fn step_blind(&mut self, bias: f64) -> f64 {
        let noise = self.next_noise();
        self.push(bias + noise)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::{step_dynamics, VehicleParams};

    fn straight(len: f64) -> ReferenceLine {
        ReferenceLine::build(&[Point2::new(0.0, 0.0), Point2::new(len, 0.0)], 0.5).unwrap()
    }

    fn quiet() -> DriverModelConfig {
        DriverModelConfig { noise_std: 0.0, ..Default::default() }
    }

    #[test]
    fn quantified_states() {
        assert_eq!(quantify_state(DriverStateKind::Concentrated), 0.2);
        assert_eq!(quantify_state(DriverStateKind::Normal), 0.5);
        assert_eq!(quantify_state(DriverStateKind::Distracted), 0.8);
    }

    #[test]
    fn centred_driver_does_not_steer() {
        let path = straight(500.0);
        let mut d = DriverModel::new(quiet(), DriverStateKind::Normal, 0.01, 1);
        let p = VehicleParams::default();
        let mut st = VehicleState { vx: 16.7, ..Default::default() };
        for _ in 0..1000 {
            let (s, _) = path.project_point(&st.position()).unwrap();
            let delta = d.step(&st, &path, s, 0.0, 0.0);
            assert_eq!(delta, 0.0);
            st = step_dynamics(&st, delta, &p, 0.01).unwrap();
        }
    }

    #[test]
    fn distracted_delay_is_fifty_steps() {
        let cfg = DriverModelConfig { rate_limit: 1e6, ..quiet() };
        let mut d = DriverModel::new(cfg, DriverStateKind::Distracted, 0.01, 1);
        let out: Vec<f64> = (0..60).map(|_| d.push(0.1)).collect();
        assert!(out[..50].iter().all(|v| *v == 0.0));
        assert!(out[50..].iter().all(|v| *v == 0.1));
    }

    #[test]
    fn delay_is_a_pure_shift() {
        for kind in DriverStateKind::ALL {
            let cfg = DriverModelConfig { rate_limit: 1e6, ..quiet() };
            let n = cfg.delay_steps(kind, 0.01);
            let mut d = DriverModel::new(cfg, kind, 0.01, 1);
            let input: Vec<f64> = (0..200).map(|i| 0.3 * (i as f64 * 0.07).sin()).collect();
            let out: Vec<f64> = input.iter().map(|v| d.push(*v)).collect();
            for i in 0..200 {
                let expected = if i < n { 0.0 } else { input[i - n] };
                assert_eq!(out[i], expected);
            }
        }
    }

    #[test]
    fn rate_limit_and_clamp() {
        let mut d = DriverModel::new(DriverModelConfig { delay_normal: 0.0, ..quiet() }, DriverStateKind::Normal, 0.01, 1);
        assert!((d.push(1.0) - 0.01).abs() < 1e-15);
        for _ in 0..100 {
            d.push(1.0);
        }
        assert_eq!(d.output(), 0.5);
    }

    #[test]
    fn kind_switch_resizes_delay() {
        let mut d = DriverModel::new(quiet(), DriverStateKind::Concentrated, 0.01, 1);
        assert_eq!(d.buffer.len(), 20);
        d.set_kind(DriverStateKind::Distracted);
        assert_eq!(d.buffer.len(), 50);
        d.set_kind(DriverStateKind::Normal);
        assert_eq!(d.buffer.len(), 30);
    }

    fn left_arc(radius: f64) -> ReferenceLine {
        let mut pts = vec![Point2::new(-50.0, 0.0)];
        for i in 0..=600 {
            let a = i as f64 / 600.0 * 1.2 * std::f64::consts::PI;
            pts.push(Point2::new(radius * a.sin(), radius * (1.0 - a.cos())));
        }
        ReferenceLine::build(&pts, 0.5).unwrap()
    }

    #[test]
    fn steers_left_on_left_curve() {
        let path = left_arc(200.0);
        let mut d = DriverModel::new(quiet(), DriverStateKind::Normal, 0.01, 1);
        let p = VehicleParams::default();
        let mut st = VehicleState { x: -40.0, vx: 16.7, ..Default::default() };
        let mut s = 10.0;
        let mut last = 0.0;
        for _ in 0..1000 {
            s = path.project_point_near(&st.position(), s, 20.0).unwrap().0;
            last = d.step(&st, &path, s, 0.0, 0.0);
            assert!(last.abs() < 0.2);
            st = step_dynamics(&st, last, &p, 0.01).unwrap();
        }
        assert!(last > 0.0);
        let (_, l) = path.project_point_near(&st.position(), s, 20.0).unwrap();
        assert!(l.abs() < 1.0, "offset {l}");
    }

    fn peak_offset(kind: DriverStateKind) -> f64 {
        let path = straight(400.0);
        let mut d = DriverModel::new(DriverModelConfig::default(), kind, 0.01, 3);
        let p = VehicleParams::default();
        let mut st = VehicleState { vx: 16.7, ..Default::default() };
        let mut peak: f64 = 0.0;
        for i in 0..1500 {
            let (s, l) = path.project_point(&st.position()).unwrap();
            peak = peak.max(l.abs());
            let t = i as f64 * 0.01;
            let gust = if (1.0..1.5).contains(&t) { 0.03 } else { 0.0 };
            let delta = d.step(&st, &path, s, 0.0, 0.0) + gust;
            st = step_dynamics(&st, delta, &p, 0.01).unwrap();
        }
        peak
    }

    #[test]
    fn longer_delay_means_larger_excursion() {
        let [c, n, x] = DriverStateKind::ALL.map(peak_offset);
        assert!(x >= n && n >= c, "{c} {n} {x}");
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let run = |seed| {
            let mut d = DriverModel::new(DriverModelConfig::default(), DriverStateKind::Normal, 0.01, seed);
            (0..100).map(|_| d.next_noise()).collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn parse_kind() {
        assert_eq!("Distracted".parse::<DriverStateKind>().unwrap(), DriverStateKind::Distracted);
        assert!("sleepy".parse::<DriverStateKind>().is_err());
        assert!(DriverModelConfig::default().validate().is_ok());
    }
}
