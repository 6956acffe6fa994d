//! The run configuration file. Every section is optional; command-line flags
//! override file values.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hocd_core::driver::DriverStateKind;
use hocd_core::harness::{resolve_output_dir, LiveConfig, Mode, SimConfig, TrainingSetup};
use hocd_core::rl::TrainOptions;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Where results go; `HOCD_OUT_DIR` wins over this.
    pub output_dir: Option<PathBuf>,
    pub sim: SimConfig,
    pub run: RunSection,
    pub compare: CompareSection,
    pub train: TrainSection,
    pub serve: ServeSection,
    pub bench: BenchSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub mode: Mode,
    pub scenario: String,
    pub seed: u64,
    pub kind: Option<DriverStateKind>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { mode: Mode::Facd, scenario: "route2".into(), seed: 0, kind: None, checkpoint: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub scenarios: Vec<String>,
    pub modes: Vec<Mode>,
    pub kinds: Vec<DriverStateKind>,
    pub seeds: Vec<u64>,
    pub checkpoint: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            scenarios: vec!["route2".into()],
            modes: Mode::ALL.to_vec(),
            kinds: DriverStateKind::ALL.to_vec(),
            seeds: (0..5).collect(),
            checkpoint: None,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub seed: u64,
    pub setup: TrainingSetup,
    pub options: TrainOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub addr: String,
    pub scenario: String,
    pub mode: Mode,
    pub checkpoint: Option<PathBuf>,
    /// Simulated seconds per wall-clock second.
    pub speed: f64,
    pub live: LiveConfig,
}

impl Default for ServeSection {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:8765".into(),
            scenario: "route1".into(),
            mode: Mode::Dccd,
            checkpoint: None,
            speed: 1.0,
            live: LiveConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub scenario: String,
    pub steps: usize,
    /// Random weights are timed when absent; the network cost is the same.
    pub checkpoint: Option<PathBuf>,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self { scenario: "route2".into(), steps: 5000, checkpoint: None }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Config = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.sim.validate()?;
        Ok(cfg)
    }

    /// Output directory after the environment override, defaulting to `out`.
    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        resolve_output_dir(flag.or(self.output_dir.as_deref())).unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let cfg: Config = toml::from_str("").unwrap();
        assert_eq!(cfg, Config::default());
    }

    #[test]
    fn sections_parse_and_unknown_keys_fail() {
        let text = r#"
output_dir = "results"
[sim]
dt = 0.01
[run]
mode = "HOCD"
scenario = "scenario4"
kind = "distracted"
checkpoint = "policy.ckpt"
[compare]
modes = ["MD", "FACD"]
seeds = [1, 2]
[train.setup]
segment = 20.0
[train.options]
episodes_per_update = 3
[train.options.ppo]
episodes = 50
[serve]
speed = 4.0
[serve.live]
seed = 3
"#;
        let cfg: Config = toml::from_str(text).unwrap();
        assert_eq!(cfg.run.mode, Mode::Hocd);
        assert_eq!(cfg.run.kind, Some(DriverStateKind::Distracted));
        assert_eq!(cfg.compare.seeds, vec![1, 2]);
        assert_eq!(cfg.train.options.ppo.episodes, 50);
        assert_eq!(cfg.train.setup.segment, 20.0);
        assert_eq!(cfg.serve.live.seed, 3);
        assert!(toml::from_str::<Config>("[run]\nspeed = 1").is_err());
    }
}
