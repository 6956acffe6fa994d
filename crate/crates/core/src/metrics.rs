//! Episode metrics: time-averaged rectangle-rule integrals over a log.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::driver::DriverStateKind;
use crate::harness::{EpisodeLog, Mode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("episode log has no rows")]
    EmptyLog,
    #[error("episode duration is zero")]
    ZeroDuration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub safety: f64,
    /// Lateral acceleration plus lateral velocity, units mixed as defined.
    pub stability: f64,
    pub comfort: f64,
    pub dpw: f64,
    /// Mean NDRT reaction time; absent without reaction samples.
    pub dcw: Option<f64>,
    pub hmc: f64,
    pub duration: f64,
    pub reaction_samples: usize,
}

pub fn compute_metrics(log: &EpisodeLog) -> Result<MetricsReport, MetricsError> {
    if log.rows.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    let t = log.duration();
    if !(t > 0.0) {
        return Err(MetricsError::ZeroDuration);
    }
    let avg = |f: &dyn Fn(&crate::harness::LogRow) -> f64| log.rows.iter().map(|r| f(r) * log.dt).sum::<f64>() / t;
    let dcw = (!log.reaction_times.is_empty())
        .then(|| log.reaction_times.iter().sum::<f64>() / log.reaction_times.len() as f64);
    Ok(MetricsReport {
        safety: avg(&|r| r.e_d.abs()) + avg(&|r| r.e_yaw.abs()),
        stability: avg(&|r| r.a_y.abs()) + avg(&|r| r.vy.abs()),
        comfort: avg(&|r| r.jerk.abs()),
        dpw: avg(&|r| r.delta_h.abs()) + avg(&|r| r.delta_h_rate.abs()),
        dcw,
        hmc: avg(&|r| (r.delta_h - r.delta).abs()),
        duration: t,
        reaction_samples: log.reaction_times.len(),
    })
}

/// One metrics CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub mode: Mode,
    pub kind: DriverStateKind,
    pub seed: u64,
    pub safety: f64,
    pub stability: f64,
    pub comfort: f64,
    pub dpw: f64,
    pub dcw: Option<f64>,
    pub hmc: f64,
}

impl MetricsRow {
    pub fn new(log: &EpisodeLog, m: &MetricsReport) -> Self {
        Self {
            scenario: log.scenario.clone(),
            mode: log.mode,
            kind: log.kind,
            seed: log.seed,
            safety: m.safety,
            stability: m.stability,
            comfort: m.comfort,
            dpw: m.dpw,
            dcw: m.dcw,
            hmc: m.hmc,
        }
    }
}

pub fn write_metrics_csv<W: Write>(out: W, rows: &[MetricsRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scenario", "mode", "kind", "seed", "safety", "stability", "comfort", "dpw", "dcw", "hmc"])?;
    for r in rows {
        w.write_record([
            r.scenario.clone(),
            r.mode.to_string(),
            r.kind.to_string(),
            r.seed.to_string(),
            r.safety.to_string(),
            r.stability.to_string(),
            r.comfort.to_string(),
            r.dpw.to_string(),
            r.dcw.map(|v| v.to_string()).unwrap_or_default(),
            r.hmc.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
