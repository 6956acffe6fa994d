mod config;
mod serve;

use std::fs::File;
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use hocd_core::driver::DriverStateKind;
use hocd_core::harness::{
    compare_modes, hmc_bars, measure_latency, route2_env_factory, run_scenario, write_hmc_bars_csv, write_run, write_summary_csv,
    LiveSession, Mode, Scenario, Simulation,
};
use hocd_core::metrics::write_metrics_csv;
use hocd_core::planner::{write_candidates_csv, IntentDirection};
use hocd_core::rl::{load_checkpoint, train, PolicyParams};

use config::Config;
use serve::{ServeOptions, QueryOverrides};

#[derive(Parser)]
#[command(name = "hocd", version, about = "Shared-control driving simulator with learned authority allocation")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (HOCD_OUT_DIR overrides it).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dump the planner's candidate set at the start of a scenario.
    Plan {
        #[arg(long, default_value = "scenario2")]
        scenario: String,
        /// Lane-change intent to plan for: left or right.
        #[arg(long)]
        intent: Option<String>,
    },
    /// Train the authority policy on route-2 segments.
    Train {
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one episode and write its log.
    Run {
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        kind: Option<DriverStateKind>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the scenario × mode × kind × seed matrix.
    Compare {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Serve a live session over a websocket.
    Serve {
        #[arg(long)]
        addr: Option<String>,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Simulation speed relative to wall time.
        #[arg(long)]
        speed: Option<f64>,
        /// Exit after the first session finishes.
        #[arg(long)]
        once: bool,
    },
    /// Time the per-step policy, blend and MPC work.
    Bench {
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn policy(mode: Mode, checkpoint: Option<&Path>) -> Result<Option<PolicyParams>> {
    match (mode, checkpoint) {
        (Mode::Hocd, Some(path)) => Ok(Some(load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?)),
        (Mode::Hocd, None) => bail!("HOCD needs --checkpoint"),
        _ => Ok(None),
    }
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = Config::load(cli.config.as_deref())?;
    let out = cfg.output_dir(cli.out.as_deref());

    match cli.command {
        Command::Plan { scenario, intent } => {
            let dir = match intent.as_deref() {
                None => None,
                Some("left") => Some(IntentDirection::Left),
                Some("right") => Some(IntentDirection::Right),
                Some(other) => bail!("unknown intent {other:?} (expected left or right)"),
            };
            let sc = Scenario::resolve(&scenario)?;
            let sim = Simulation::new(&sc, &cfg.sim, Mode::Facd, None, 0)?;
            let candidates = sim.candidates(dir)?;
            let path = out.join("candidates.csv");
            write_candidates_csv(create(&path)?, &candidates)?;
            let valid: Vec<_> = candidates.iter().filter(|c| c.is_valid()).collect();
            println!("{} candidates, {} valid -> {}", candidates.len(), valid.len(), path.display());
            if let Some(best) = valid.iter().min_by(|a, b| a.cost_total.total_cmp(&b.cost_total)) {
                println!("best: d = {}, tau = {}, v = {}, cost = {:.4}", best.target_offset, best.horizon, best.target_speed, best.cost_total);
            }
        }
        Command::Train { episodes, seed } => {
            let mut opts = cfg.train.options.clone();
            if let Some(m) = episodes {
                opts.ppo.episodes = m;
            }
            opts.checkpoint.get_or_insert_with(|| out.join("policy.ckpt"));
            opts.curve.get_or_insert_with(|| out.join("learning_curve.csv"));
            let factory = route2_env_factory(&cfg.train.setup)?;
            let result = train(factory, &opts, seed.unwrap_or(cfg.train.seed))?;
            let last = result.curve.last();
            println!(
                "trained {} episodes, {} updates; last eval return {}; checkpoint {}",
                opts.ppo.episodes,
                result.updates.len(),
                last.map_or("n/a".into(), |p| format!("{:.2}", p.eval_return)),
                opts.checkpoint.as_ref().expect("set above").display()
            );
        }
        Command::Run { mode, scenario, seed, kind, checkpoint } => {
            let r = &cfg.run;
            let mode = mode.unwrap_or(r.mode);
            let sc = Scenario::resolve(scenario.as_deref().unwrap_or(&r.scenario))?;
            let policy = policy(mode, checkpoint.as_deref().or(r.checkpoint.as_deref()))?;
            let result = run_scenario(&sc, &cfg.sim, mode, kind.or(r.kind), seed.unwrap_or(r.seed), policy.as_ref())?;
            write_run(&out, &result)?;
            println!(
                "{} {} {} seed {}: {} after {:.2} s",
                result.log.scenario,
                result.log.mode,
                result.log.kind,
                result.log.seed,
                result.log.termination.map_or("running".into(), |t| format!("{t:?}").to_lowercase()),
                result.log.duration()
            );
            println!("{}", serde_json::to_string(&result.metrics)?);
        }
        Command::Compare { checkpoint, threads } => {
            let c = &cfg.compare;
            let scenarios = c.scenarios.iter().map(|s| Scenario::resolve(s)).collect::<Result<Vec<_>, _>>()?;
            let checkpoint = checkpoint.or_else(|| c.checkpoint.clone());
            let modes: Vec<Mode> = c.modes.iter().copied().filter(|m| *m != Mode::Hocd || checkpoint.is_some()).collect();
            if modes.len() < c.modes.len() {
                log::warn!("no checkpoint given; skipping HOCD");
            }
            let policy = match &checkpoint {
                Some(path) => policy(Mode::Hocd, Some(path))?,
                None => None,
            };
            let rows = compare_modes(&scenarios, &modes, &c.kinds, &c.seeds, &cfg.sim, policy.as_ref(), threads.unwrap_or(c.threads))?;
            write_metrics_csv(create(&out.join("metrics.csv"))?, &rows)?;
            write_summary_csv(create(&out.join("summary.csv"))?, &rows)?;
            let bars = hmc_bars(&rows);
            write_hmc_bars_csv(create(&out.join("hmc_bars.csv"))?, &bars)?;
            for b in &bars {
                println!("{:<5} {:<12} HMC {:.5} ± {:.5} (n = {})", b.mode, b.kind, b.mean, b.std, b.n);
            }
        }
        Command::Serve { addr, scenario, mode, checkpoint, speed, once } => {
            let s = &cfg.serve;
            let addr = addr.unwrap_or_else(|| s.addr.clone());
            let default_scenario = scenario.unwrap_or_else(|| s.scenario.clone());
            let default_mode = mode.unwrap_or(s.mode);
            let checkpoint = checkpoint.or_else(|| s.checkpoint.clone());
            let speed = speed.unwrap_or(s.speed);
            if !(speed > 0.0) {
                bail!("speed must be positive");
            }
            let loaded = match &checkpoint {
                Some(path) => Some(load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?),
                None => None,
            };
            let listener = TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
            println!("listening on ws://{}", listener.local_addr()?);
            let make = |q: &QueryOverrides| -> Result<LiveSession> {
                let sc = Scenario::resolve(q.scenario.as_deref().unwrap_or(&default_scenario))?;
                let mode = match &q.mode {
                    Some(m) => m.parse()?,
                    None => default_mode,
                };
                if mode == Mode::Hocd && loaded.is_none() {
                    bail!("HOCD sessions need a checkpoint");
                }
                let mut live = s.live.clone();
                if let Some(seed) = q.seed {
                    live.seed = seed;
                }
                Ok(LiveSession::new(&sc, &cfg.sim, mode, loaded.clone(), &live)?)
            };
            serve::serve(listener, make, &ServeOptions { speed, output_dir: out, once })?;
        }
        Command::Bench { steps, scenario, checkpoint } => {
            let b = &cfg.bench;
            let sc = Scenario::resolve(scenario.as_deref().unwrap_or(&b.scenario))?;
            let policy = match checkpoint.or_else(|| b.checkpoint.clone()) {
                Some(path) => load_checkpoint(&path).with_context(|| format!("loading {}", path.display()))?,
                None => {
                    use rand::SeedableRng;
                    PolicyParams::new(&cfg.train.options.ppo, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))
                }
            };
            let report = measure_latency(&sc, &cfg.sim, &policy, steps.unwrap_or(b.steps))?;
            println!(
                "{} steps: mean {:.4} ms, p50 {:.4} ms, p99 {:.4} ms, max {:.4} ms (policy + blend {:.4} ms, MPC {:.4} ms)",
                report.steps, report.mean_ms, report.p50_ms, report.p99_ms, report.max_ms, report.policy_blend_mean_ms, report.mpc_mean_ms
            );
            let path = out.join("latency.json");
            serde_json::to_writer_pretty(create(&path)?, &report)?;
            if report.mean_ms >= 10.0 {
                bail!("mean control step {:.3} ms exceeds the 10 ms cycle", report.mean_ms);
            }
        }
    }
    Ok(())
}
