//! Rollout collection, periodic deterministic evaluation and checkpointing.

use std::io::Write;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ppo::{critic_forward, deterministic_action, ppo_update, sample_action, PolicyParams, PpoConfig, RolloutBuffer, RolloutSample, UpdateDiagnostics};
use super::{compute_gae, save_checkpoint, Environment, RlError, Transition};

/// Which environment the factory should build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvRole {
    Train { episode: usize, seed: u64 },
    Eval { index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub ppo: PpoConfig,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Episodes collected before each update.
    pub episodes_per_update: usize,
    pub checkpoint: Option<PathBuf>,
    pub curve: Option<PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { ppo: PpoConfig::default(), eval_every: 2, eval_episodes: 3, episodes_per_update: 3, checkpoint: None, curve: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub eval_return: f64,
    pub mean_lambda: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: PolicyParams,
    pub curve: Vec<CurvePoint>,
    pub updates: Vec<UpdateDiagnostics>,
}

pub fn write_learning_curve<W: Write>(out: W, curve: &[CurvePoint]) -> Result<(), RlError> {
    let mut w = csv::Writer::from_writer(out);
    for p in curve {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean undiscounted return and mean λ of the deterministic policy.
pub fn evaluate<E, F>(factory: &mut F, params: &PolicyParams, episodes: usize, max_steps: usize) -> Result<(f64, f64), RlError>
where
    E: Environment,
    F: FnMut(EnvRole) -> Result<E, RlError>,
{
    let (mut total, mut lambda_sum, mut steps) = (0.0, 0.0, 0usize);
    for index in 0..episodes {
        let mut env = factory(EnvRole::Eval { index })?;
        let mut obs = env.reset()?;
        for _ in 0..max_steps {
            let lambda = deterministic_action(&obs, params)?;
            let out = env.step(lambda)?;
            total += out.reward;
            lambda_sum += lambda;
            steps += 1;
            obs = out.obs;
            if out.terminal || out.truncated {
                break;
            }
        }
    }
    Ok((total / episodes.max(1) as f64, lambda_sum / steps.max(1) as f64))
}

fn finish_episode(
    episode: &mut Vec<RolloutSample>,
    bootstrap: f64,
    cfg: &PpoConfig,
    buffer: &mut RolloutBuffer,
) -> Result<(), RlError> {
    let rewards: Vec<f64> = episode.iter().map(|s| s.transition.reward).collect();
    let values: Vec<f64> = episode.iter().map(|s| s.value).collect();
    let terminals: Vec<bool> = episode.iter().map(|s| s.transition.terminal).collect();
    let (adv, targets) = compute_gae(&rewards, &values, &terminals, bootstrap, cfg.gamma, cfg.gae_lambda)?;
    for ((s, a), t) in episode.drain(..).zip(adv).zip(targets) {
        if !buffer.push(RolloutSample { advantage: a, target: t, ..s }) {
            log::warn!("rollout buffer full at {} samples; dropping the rest of the episode", buffer.capacity);
            break;
        }
    }
    Ok(())
}

/// PPO training loop. Episodes are collected with the stochastic policy;
/// every `episodes_per_update` episodes the buffer is consumed by one update
/// if it holds at least one minibatch.
pub fn train<E, F>(mut factory: F, opts: &TrainOptions, seed: u64) -> Result<TrainResult, RlError>
where
    E: Environment,
    F: FnMut(EnvRole) -> Result<E, RlError>,
{
    let cfg = &opts.ppo;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = PolicyParams::new(cfg, &mut rng);
    let mut buffer = RolloutBuffer::new(cfg.buffer_size);
    let mut curve = Vec::new();
    let mut updates = Vec::new();
    let mut episode_samples = Vec::with_capacity(cfg.steps_per_episode);

    for episode in 0..cfg.episodes {
        let mut env = factory(EnvRole::Train { episode, seed: seed.wrapping_add(episode as u64) })?;
        let mut obs = env.reset()?;
        let mut bootstrap = 0.0;
        for step in 0..cfg.steps_per_episode {
            let action = sample_action(&obs, &params, &mut rng)?;
            let value = critic_forward(&obs, &params)?;
            let out = env.step(action.lambda)?;
            if !out.reward.is_finite() || !out.obs.is_finite() {
                return Err(RlError::NonFinite(format!("environment output at episode {episode}, step {step}")));
            }
            // Ratios are taken in pre-squash space, so drop the Jacobian term.
            let log_prob_old = action.log_prob + (action.lambda * (1.0 - action.lambda)).ln();
            episode_samples.push(RolloutSample {
                transition: Transition {
                    obs,
                    lambda: action.lambda,
                    reward: out.reward,
                    next_obs: out.obs,
                    terminal: out.terminal,
                    breakdown: out.breakdown,
                },
                pre_squash: action.pre_squash,
                log_prob_old,
                value,
                advantage: 0.0,
                target: 0.0,
            });
            obs = out.obs;
            if out.terminal {
                break;
            }
            let last = step + 1 == cfg.steps_per_episode;
            if out.truncated || last {
                bootstrap = critic_forward(&obs, &params)?;
                break;
            }
        }
        finish_episode(&mut episode_samples, bootstrap, cfg, &mut buffer)?;
        let last_episode = episode + 1 == cfg.episodes;
        let due = (episode + 1) % opts.episodes_per_update.max(1) == 0;
        if (due && buffer.len() >= cfg.batch_size) || (last_episode && !buffer.is_empty()) {
            let diag = ppo_update(&buffer, &mut params, cfg, &mut rng)?;
            log::debug!("episode {}: update {:?}", episode + 1, diag);
            updates.push(diag);
            buffer.clear();
        }
        if opts.eval_every > 0 && (episode + 1) % opts.eval_every == 0 {
            let (eval_return, mean_lambda) = evaluate(&mut factory, &params, opts.eval_episodes, cfg.steps_per_episode)?;
            log::info!("episode {}: eval return {eval_return:.2}, mean λ {mean_lambda:.3}", episode + 1);
            curve.push(CurvePoint { episode: episode + 1, eval_return, mean_lambda });
            persist(opts, &params, &curve)?;
        }
    }
    persist(opts, &params, &curve)?;
    Ok(TrainResult { params, curve, updates })
}

fn persist(opts: &TrainOptions, params: &PolicyParams, curve: &[CurvePoint]) -> Result<(), RlError> {
    if let Some(path) = &opts.checkpoint {
        save_checkpoint(path, params)?;
    }
    if let Some(path) = &opts.curve {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        write_learning_curve(std::fs::File::create(path)?, curve)?;
    }
    Ok(())
}
