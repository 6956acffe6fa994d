//! Per-step episode records, events and their CSV exports.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::arbitration::blend;
use crate::driver::DriverStateKind;

use super::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LogRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub vx: f64,
    pub vy: f64,
    pub yaw_rate: f64,
    /// Lateral error to the active plan.
    pub e_d: f64,
    pub e_yaw: f64,
    /// Lateral offset from the centre of the ego lane.
    pub lane_offset: f64,
    pub a_y: f64,
    pub jerk: f64,
    pub delta_h: f64,
    pub delta_h_rate: f64,
    pub delta_a: f64,
    pub delta: f64,
    pub lambda: f64,
    pub s_h: f64,
    pub r_tracking: f64,
    pub r_comfort: f64,
    pub r_collision: f64,
    pub r_conflict: f64,
    pub reward: f64,
    pub plan_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    IntentIssued,
    GateAccept,
    GateReject,
    IntentComplete,
    IntentAbandoned,
    PlanFallback,
    DriverState,
    Takeover,
    Collision,
    OffRoad,
    NdrtOn,
    NdrtAck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    #[serde(default)]
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Horizon,
    Collision,
    OffRoad,
    Stopped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub scenario: String,
    pub mode: Mode,
    pub kind: DriverStateKind,
    pub seed: u64,
    pub dt: f64,
    pub rows: Vec<LogRow>,
    pub events: Vec<Event>,
    /// NDRT reaction times in seconds.
    pub reaction_times: Vec<f64>,
    pub termination: Option<Termination>,
}

impl EpisodeLog {
    pub fn new(scenario: &str, mode: Mode, kind: DriverStateKind, seed: u64, dt: f64) -> Self {
        Self {
            scenario: scenario.to_string(),
            mode,
            kind,
            seed,
            dt,
            rows: Vec::new(),
            events: Vec::new(),
            reaction_times: Vec::new(),
            termination: None,
        }
    }

    pub fn duration(&self) -> f64 {
        self.rows.len() as f64 * self.dt
    }

    pub fn has_event(&self, kind: EventKind) -> bool {
        self.events.iter().any(|e| e.kind == kind)
    }

    pub fn first_event(&self, kind: EventKind) -> Option<&Event> {
        self.events.iter().find(|e| e.kind == kind)
    }

    /// First row whose executed steering differs from the clamped blend.
    pub fn blend_violation(&self, max_steer: f64) -> Option<usize> {
        self.rows.iter().position(|r| blend(r.delta_a, r.delta_h, r.lambda, max_steer).map_or(true, |d| d != r.delta))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_events_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "kind", "detail"])?;
        for e in &self.events {
            let kind = serde_json::to_value(e.kind).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
            w.write_record([e.t.to_string(), kind, e.detail.clone()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Recomputes `jerk` and `delta_h_rate` by backward differences; the first
/// row gets zero rates.
pub fn fill_rates(rows: &mut [LogRow], dt: f64) {
    for i in (1..rows.len()).rev() {
        rows[i].jerk = (rows[i].a_y - rows[i - 1].a_y) / dt;
        rows[i].delta_h_rate = (rows[i].delta_h - rows[i - 1].delta_h) / dt;
    }
    if let Some(r) = rows.first_mut() {
        r.jerk = 0.0;
        r.delta_h_rate = 0.0;
    }
}
