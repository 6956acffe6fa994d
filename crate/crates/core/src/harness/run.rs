//! Episode runners, mode comparison and the training environment factory.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::driver::DriverStateKind;
use crate::metrics::{compute_metrics, write_metrics_csv, MetricsReport, MetricsRow};
use crate::rl::{load_checkpoint, EnvRole, PolicyParams, RlError};

use super::log::EpisodeLog;
use super::scenario::{builtin_scenario, Scenario};
use super::sim::{SimEnv, Simulation};
use super::{HarnessError, Mode, SimConfig};

/// Environment variable that overrides every output directory.
pub const OUT_DIR_ENV: &str = "HOCD_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    /// Built-in scenario id or scenario file path.
    pub scenario: String,
    pub seed: u64,
    /// Overrides the scenario's initial driver state.
    pub kind: Option<DriverStateKind>,
    pub checkpoint: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub sim: SimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Facd,
            scenario: "route2".into(),
            seed: 0,
            kind: None,
            checkpoint: None,
            output_dir: None,
            sim: SimConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.mode == Mode::Hocd && self.checkpoint.is_none() {
            return Err(HarnessError::Config("HOCD mode requires a checkpoint".into()));
        }
        self.sim.validate()
    }

    /// The output directory after applying the environment override.
    pub fn resolved_output_dir(&self) -> Option<PathBuf> {
        resolve_output_dir(self.output_dir.as_deref())
    }
}

pub fn resolve_output_dir(configured: Option<&Path>) -> Option<PathBuf> {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => Some(PathBuf::from(v)),
        _ => configured.map(Path::to_path_buf),
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: EpisodeLog,
    pub metrics: MetricsReport,
}

/// Runs one episode to termination.
pub fn run_scenario(
    scenario: &Scenario,
    cfg: &SimConfig,
    mode: Mode,
    kind: Option<DriverStateKind>,
    seed: u64,
    policy: Option<&PolicyParams>,
) -> Result<RunOutput, HarnessError> {
    if mode == Mode::Hocd && policy.is_none() {
        return Err(HarnessError::Config("HOCD mode requires a policy".into()));
    }
    let mut sim = Simulation::new(scenario, cfg, mode, kind, seed)?;
    while !sim.is_done() {
        let p = sim.prepare()?;
        let lambda = sim.mode_lambda(&p, policy)?;
        sim.apply(lambda)?;
    }
    let log = sim.into_log();
    let metrics = compute_metrics(&log)?;
    Ok(RunOutput { log, metrics })
}

pub fn episode_stem(log: &EpisodeLog) -> String {
    format!("{}_{}_{}_{}", log.scenario, log.mode, log.kind, log.seed)
}

/// Writes `<stem>.csv`, `<stem>_events.csv` and `<stem>_metrics.csv`.
pub fn write_run(dir: &Path, out: &RunOutput) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    let stem = episode_stem(&out.log);
    out.log.write_csv(std::fs::File::create(dir.join(format!("{stem}.csv")))?)?;
    out.log.write_events_csv(std::fs::File::create(dir.join(format!("{stem}_events.csv")))?)?;
    write_metrics_csv(std::fs::File::create(dir.join(format!("{stem}_metrics.csv")))?, &[MetricsRow::new(&out.log, &out.metrics)])?;
    Ok(())
}

/// Loads the scenario and checkpoint named in `cfg`, runs, and writes the
/// outputs when an output directory is configured.
pub fn run_episode(cfg: &RunConfig) -> Result<RunOutput, HarnessError> {
    cfg.validate()?;
    let scenario = Scenario::resolve(&cfg.scenario)?;
    let policy = match (&cfg.checkpoint, cfg.mode) {
        (Some(path), Mode::Hocd) => Some(load_checkpoint(path)?),
        _ => None,
    };
    let out = run_scenario(&scenario, &cfg.sim, cfg.mode, cfg.kind, cfg.seed, policy.as_ref())?;
    if let Some(dir) = cfg.resolved_output_dir() {
        write_run(&dir, &out)?;
    }
    Ok(out)
}

/// Runs the cross product scenarios × modes × kinds × seeds on up to
/// `threads` workers; rows come back in that nesting order regardless of
/// scheduling.
pub fn compare_modes(
    scenarios: &[Scenario],
    modes: &[Mode],
    kinds: &[DriverStateKind],
    seeds: &[u64],
    cfg: &SimConfig,
    policy: Option<&PolicyParams>,
    threads: usize,
) -> Result<Vec<MetricsRow>, HarnessError> {
    let mut jobs = Vec::new();
    for sc in scenarios {
        for &mode in modes {
            for &kind in kinds {
                for &seed in seeds {
                    jobs.push((sc, mode, kind, seed));
                }
            }
        }
    }
    let results: Mutex<Vec<Option<Result<MetricsRow, HarnessError>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = threads.clamp(1, jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(sc, mode, kind, seed)) = jobs.get(i) else { break };
                let row = run_scenario(sc, cfg, mode, Some(kind), seed, policy).map(|o| MetricsRow::new(&o.log, &o.metrics));
                results.lock().expect("results lock")[i] = Some(row);
            });
        }
    });
    results.into_inner().expect("results lock").into_iter().map(|r| r.expect("every job ran")).collect()
}

/// Mean and spread of HMC per (mode, driver kind).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmcBar {
    pub mode: Mode,
    pub kind: DriverStateKind,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn hmc_bars(rows: &[MetricsRow]) -> Vec<HmcBar> {
    let mut groups: BTreeMap<(Mode, DriverStateKind), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.mode, r.kind)).or_default().push(r.hmc);
    }
    groups
        .into_iter()
        .map(|((mode, kind), v)| {
            let n = v.len();
            let mean = v.iter().sum::<f64>() / n as f64;
            let var = if n > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
            HmcBar { mode, kind, mean, std: var.sqrt(), n }
        })
        .collect()
}

pub fn write_hmc_bars_csv<W: Write>(out: W, bars: &[HmcBar]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for b in bars {
        w.serialize(b)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean of every metric per (scenario, mode).
pub fn write_summary_csv<W: Write>(out: W, rows: &[MetricsRow]) -> Result<(), HarnessError> {
    let mut groups: BTreeMap<(String, Mode), Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.scenario.clone(), r.mode)).or_default().push(r);
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scenario", "mode", "n", "safety", "stability", "comfort", "dpw", "dcw", "hmc"])?;
    for ((scenario, mode), g) in groups {
        let mean = |f: fn(&MetricsRow) -> f64| g.iter().map(|r| f(r)).sum::<f64>() / g.len() as f64;
        let dcw: Vec<f64> = g.iter().filter_map(|r| r.dcw).collect();
        w.write_record([
            scenario,
            mode.to_string(),
            g.len().to_string(),
            mean(|r| r.safety).to_string(),
            mean(|r| r.stability).to_string(),
            mean(|r| r.comfort).to_string(),
            mean(|r| r.dpw).to_string(),
            if dcw.is_empty() { String::new() } else { (dcw.iter().sum::<f64>() / dcw.len() as f64).to_string() },
            mean(|r| r.hmc).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Episode layout for policy training on the curved single-lane route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSetup {
    pub scenario: String,
    pub sim: SimConfig,
    /// Training episode length, seconds.
    pub segment: f64,
    /// Control ticks per policy decision during training.
    pub action_repeat: usize,
    /// Arc length where evaluation episodes start.
    pub eval_start: f64,
}

impl Default for TrainingSetup {
    fn default() -> Self {
        Self { scenario: "route2".into(), sim: SimConfig::default(), segment: 30.0, action_repeat: 10, eval_start: 60.0 }
    }
}

/// Environment factory: training episodes start at random arc lengths and
/// cycle through the driver states; evaluation episodes use fixed starts.
pub fn route2_env_factory(setup: &TrainingSetup) -> Result<impl FnMut(EnvRole) -> Result<SimEnv, RlError>, HarnessError> {
    let base = builtin_scenario(&setup.scenario).map_or_else(|| Scenario::resolve(&setup.scenario), Ok)?;
    let length = base.build_road()?.reference.total_length();
    let max_start = length - setup.segment * base.cruise_speed - 30.0;
    if max_start <= base.start_s || setup.eval_start > max_start {
        return Err(HarnessError::Config("route too short for the training segment".into()));
    }
    let setup = setup.clone();
    Ok(move |role: EnvRole| {
        let mut sc = base.clone();
        sc.duration = setup.segment;
        let (kind, seed) = match role {
            EnvRole::Train { episode, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                sc.start_s = rng.random_range(base.start_s..max_start);
                (DriverStateKind::ALL[episode % 3], seed)
            }
            EnvRole::Eval { index } => {
                sc.start_s = setup.eval_start;
                (DriverStateKind::ALL[index % 3], 10_000 + index as u64)
            }
        };
        Ok(SimEnv::new(sc, setup.sim.clone(), kind, seed, setup.action_repeat))
    })
}
