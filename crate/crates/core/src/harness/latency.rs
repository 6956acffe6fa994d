//! Wall-clock cost of one control cycle: policy forward, blend and MPC solve.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::arbitration::blend;
use crate::rl::PolicyParams;

use super::scenario::Scenario;
use super::sim::Simulation;
use super::{HarnessError, Mode, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub steps: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
    pub policy_blend_mean_ms: f64,
    pub mpc_mean_ms: f64,
}

impl LatencyReport {
    pub fn from_samples(total: &[Duration], policy_blend: &[Duration], mpc: &[Duration]) -> Self {
        let ms = |d: &Duration| d.as_secs_f64() * 1e3;
        let mean = |v: &[Duration]| v.iter().map(ms).sum::<f64>() / v.len().max(1) as f64;
        let mut sorted: Vec<f64> = total.iter().map(ms).collect();
        sorted.sort_by(f64::total_cmp);
        let pct = |p: f64| sorted.get(((sorted.len() as f64 - 1.0) * p).round() as usize).copied().unwrap_or(0.0);
        Self {
            steps: total.len(),
            mean_ms: mean(total),
            p50_ms: pct(0.5),
            p99_ms: pct(0.99),
            max_ms: sorted.last().copied().unwrap_or(0.0),
            policy_blend_mean_ms: mean(policy_blend),
            mpc_mean_ms: mean(mpc),
        }
    }
}

/// Drives HOCD episodes of `scenario` for `steps` ticks, restarting on
/// termination, and times the control path of every tick. Planning, the
/// driver model and dynamics are excluded.
pub fn measure_latency(scenario: &Scenario, cfg: &SimConfig, policy: &PolicyParams, steps: usize) -> Result<LatencyReport, HarnessError> {
    let mut total = Vec::with_capacity(steps);
    let mut policy_blend = Vec::with_capacity(steps);
    let mut mpc = Vec::with_capacity(steps);
    let mut episode = 0u64;
    let mut sim = Simulation::new(scenario, cfg, Mode::Hocd, None, episode)?;
    while total.len() < steps {
        if sim.is_done() {
            episode += 1;
            sim = Simulation::new(scenario, cfg, Mode::Hocd, None, episode)?;
        }
        let p = sim.prepare()?;
        let started = Instant::now();
        let lambda = sim.mode_lambda(&p, Some(policy))?;
        let delta = blend(p.delta_a, p.delta_h, lambda, cfg.vehicle.max_steer)?;
        let spent = started.elapsed();
        std::hint::black_box(delta);
        policy_blend.push(spent);
        mpc.push(p.mpc_time);
        total.push(spent + p.mpc_time);
        sim.apply(lambda)?;
    }
    Ok(LatencyReport::from_samples(&total, &policy_blend, &mpc))
}
