//! Squashed-Gaussian actor, critic, GAE and the clipped PPO update.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::mlp::{Adam, Mlp};
use super::{Observation, RlError, Transition, OBS_DIM};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub buffer_size: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub entropy_coef: f64,
    pub epochs: usize,
    /// Training episodes M.
    pub episodes: usize,
    /// Control steps per episode T.
    pub steps_per_episode: usize,
    pub normalize_advantages: bool,
    /// Global gradient-norm clip; `None` disables it.
    pub max_grad_norm: Option<f64>,
    /// Lower limit on the exploration log-std while training. The head
    /// itself stays bounded to `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub log_std_floor: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            buffer_size: 100_000,
            batch_size: 128,
            hidden: 256,
            gamma: 0.90,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            entropy_coef: 0.01,
            epochs: 10,
            episodes: 500,
            steps_per_episode: 1000,
            normalize_advantages: true,
            max_grad_norm: Some(0.5),
            log_std_floor: -1.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::Config(m.into()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) {
            return bad("gamma and gae_lambda must lie in (0, 1]");
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        if self.batch_size == 0 || self.hidden == 0 || self.epochs == 0 || self.buffer_size == 0 {
            return bad("sizes must be positive");
        }
        if !(LOG_STD_MIN..=LOG_STD_MAX).contains(&self.log_std_floor) {
            return bad("log_std_floor must lie within the log-std bounds");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0 && self.entropy_coef >= 0.0) {
            return bad("learning rates must be positive, entropy_coef non-negative");
        }
        Ok(())
    }
}

/// Actor and critic with their optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub updates: u64,
    /// See [`PpoConfig::log_std_floor`]; not stored in checkpoints.
    pub log_std_floor: f64,
}

impl PolicyParams {
    pub fn new<R: Rng>(cfg: &PpoConfig, rng: &mut R) -> Self {
        let h = cfg.hidden;
        let mut actor = Mlp::init(&[OBS_DIM, h, h, 2], 0.01, rng);
        // Initial std of exp(-1) in pre-squash space.
        actor.layers[2].b[1] = (2.0 * (-1.0 - LOG_STD_MIN) / (LOG_STD_MAX - LOG_STD_MIN) - 1.0).atanh();
        let critic = Mlp::init(&[OBS_DIM, h, h, 1], 1.0, rng);
        Self::from_networks(actor, critic, cfg)
    }

    pub fn from_networks(actor: Mlp, critic: Mlp, cfg: &PpoConfig) -> Self {
        let actor_opt = Adam::new(&actor, cfg.actor_lr);
        let critic_opt = Adam::new(&critic, cfg.critic_lr);
        Self { actor, critic, actor_opt, critic_opt, updates: 0, log_std_floor: cfg.log_std_floor }
    }

    pub fn zeros(cfg: &PpoConfig) -> Self {
        let h = cfg.hidden;
        Self::from_networks(Mlp::zeros(&[OBS_DIM, h, h, 2]), Mlp::zeros(&[OBS_DIM, h, h, 1]), cfg)
    }
}

pub fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

fn bounded_log_std(h: f64) -> f64 {
    LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (h.tanh() + 1.0)
}

fn bounded_log_std_grad(h: f64) -> f64 {
    let t = h.tanh();
    0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (1.0 - t * t)
}

/// Log-std used for sampling and its derivative in the head output; flat
/// below the floor.
fn floored_log_std(h: f64, floor: f64) -> (f64, f64) {
    let l = bounded_log_std(h);
    if l < floor {
        (floor, 0.0)
    } else {
        (l, bounded_log_std_grad(h))
    }
}

fn obs_matrix(obs: &[Observation]) -> Array2<f64> {
    let mut m = Array2::zeros((obs.len(), OBS_DIM));
    for (i, o) in obs.iter().enumerate() {
        for (j, v) in o.normalized().iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    m
}

/// `(mean, log_std)` of the pre-squash Gaussian.
pub fn actor_forward(obs: &Observation, params: &PolicyParams) -> Result<(f64, f64), RlError> {
    let out = params.actor.forward(&obs_matrix(std::slice::from_ref(obs)));
    let (mean, log_std) = (out[(0, 0)], floored_log_std(out[(0, 1)], params.log_std_floor).0);
    if !mean.is_finite() || !log_std.is_finite() {
        return Err(RlError::NonFinite("actor output".into()));
    }
    Ok((mean, log_std))
}

pub fn critic_forward(obs: &Observation, params: &PolicyParams) -> Result<f64, RlError> {
    let v = params.critic.forward(&obs_matrix(std::slice::from_ref(obs)))[(0, 0)];
    if !v.is_finite() {
        return Err(RlError::NonFinite("critic output".into()));
    }
    Ok(v)
}

/// Gaussian log-density of `u` in pre-squash space.
pub fn gaussian_log_prob(u: f64, mean: f64, log_std: f64) -> f64 {
    let z = (u - mean) / log_std.exp();
    -0.5 * z * z - log_std - HALF_LOG_2PI
}

/// Log-density of `λ = logistic(u)` on (0, 1).
pub fn squashed_log_prob(lambda: f64, mean: f64, log_std: f64) -> f64 {
    let u = (lambda / (1.0 - lambda)).ln();
    gaussian_log_prob(u, mean, log_std) - (lambda * (1.0 - lambda)).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionSample {
    pub lambda: f64,
    /// Log-density of `lambda`, including the squash correction.
    pub log_prob: f64,
    pub pre_squash: f64,
}

pub fn sample_action<R: Rng>(obs: &Observation, params: &PolicyParams, rng: &mut R) -> Result<ActionSample, RlError> {
    let (mean, log_std) = actor_forward(obs, params)?;
    let z: f64 = StandardNormal.sample(rng);
    let u = mean + log_std.exp() * z;
    let lambda = logistic(u).clamp(1e-12, 1.0 - 1e-12);
    let log_prob = gaussian_log_prob(u, mean, log_std) - (lambda * (1.0 - lambda)).ln();
    Ok(ActionSample { lambda, log_prob, pre_squash: u })
}

/// Deterministic evaluation action: the squashed mean.
pub fn deterministic_action(obs: &Observation, params: &PolicyParams) -> Result<f64, RlError> {
    Ok(logistic(actor_forward(obs, params)?.0))
}

/// GAE over one trajectory; `bootstrap` is V of the state after the last
/// step (ignored if that step is terminal). Returns advantages and value
/// targets.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    terminals: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), RlError> {
    let n = rewards.len();
    if values.len() != n || terminals.len() != n {
        return Err(RlError::LengthMismatch { rewards: n, values: values.len(), terminals: terminals.len() });
    }
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { bootstrap };
        let live = if terminals[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, targets))
}

/// In-place zero-mean, unit-variance normalization.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    if adv.len() < 2 {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for a in adv.iter_mut() {
        *a = (*a - mean) / std;
    }
}

/// Per-sample clipped surrogate `min(ρA, clip(ρ, 1−ε, 1+ε) A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutSample {
    pub transition: Transition,
    pub pre_squash: f64,
    pub log_prob_old: f64,
    pub value: f64,
    pub advantage: f64,
    pub target: f64,
}

/// On-policy rollout store, cleared after each update.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub samples: Vec<RolloutSample>,
    pub capacity: usize,
}

impl RolloutBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { samples: Vec::new(), capacity }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Appends; returns `false` when full.
    pub fn push(&mut self, s: RolloutSample) -> bool {
        if self.samples.len() >= self.capacity {
            return false;
        }
        self.samples.push(s);
        true
    }

    pub fn clear(&mut self) {
        self.samples.clear();
    }
}

/// Minibatch view used by the loss functions.
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub obs: Array2<f64>,
    pub pre_squash: Array1<f64>,
    pub log_prob_old: Array1<f64>,
    pub advantage: Array1<f64>,
    pub target: Array1<f64>,
}

impl Minibatch {
    pub fn from_samples(samples: &[&RolloutSample]) -> Self {
        let obs: Vec<Observation> = samples.iter().map(|s| s.transition.obs).collect();
        Self {
            obs: obs_matrix(&obs),
            pre_squash: samples.iter().map(|s| s.pre_squash).collect(),
            log_prob_old: samples.iter().map(|s| s.log_prob_old).collect(),
            advantage: samples.iter().map(|s| s.advantage).collect(),
            target: samples.iter().map(|s| s.target).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ActorStats {
    pub loss: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub entropy: f64,
}

/// Actor loss `−mean(surrogate) − c·mean(entropy)` and its gradient.
/// Log-probability ratios use the Gaussian density of the stored
/// pre-squash value; the squash Jacobian cancels.
pub fn actor_loss_and_grad(actor: &Mlp, mb: &Minibatch, eps: f64, entropy_coef: f64, log_std_floor: f64) -> (ActorStats, Mlp) {
    let n = mb.obs.nrows();
    let (out, cache) = actor.forward_cached(&mb.obs);
    let mut dout = Array2::zeros((n, 2));
    let mut stats = ActorStats::default();
    for i in 0..n {
        let (mean, h) = (out[(i, 0)], out[(i, 1)]);
        let (log_std, dlogstd_dh) = floored_log_std(h, log_std_floor);
        let u = mb.pre_squash[i];
        let logp = gaussian_log_prob(u, mean, log_std);
        let ratio = (logp - mb.log_prob_old[i]).exp();
        let a = mb.advantage[i];
        let unclipped = ratio * a;
        let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * a;
        let surrogate = unclipped.min(clipped);
        let entropy = HALF_LOG_2PI + 0.5 + log_std;
        stats.loss -= surrogate + entropy_coef * entropy;
        stats.mean_ratio += ratio;
        stats.entropy += entropy;
        if clipped < unclipped {
            stats.clip_fraction += 1.0;
        }
        // d(surrogate)/d(logp) is ρA on the unclipped branch, zero otherwise.
        let ds = if unclipped <= clipped { unclipped } else { 0.0 };
        let var = (2.0 * log_std).exp();
        let dlogp_dmean = (u - mean) / var;
        let dlogp_dlogstd = (u - mean).powi(2) / var - 1.0;
        let dloss_dmean = -ds * dlogp_dmean;
        let dloss_dlogstd = -ds * dlogp_dlogstd - entropy_coef;
        dout[(i, 0)] = dloss_dmean / n as f64;
        dout[(i, 1)] = dloss_dlogstd * dlogstd_dh / n as f64;
    }
    let nf = n as f64;
    stats.loss /= nf;
    stats.mean_ratio /= nf;
    stats.clip_fraction /= nf;
    stats.entropy /= nf;
    let (grads, _) = actor.backward(&cache, &dout);
    (stats, grads)
}

/// Critic loss `mean((V − target)²)` and its gradient.
pub fn critic_loss_and_grad(critic: &Mlp, mb: &Minibatch) -> (f64, Mlp) {
    let n = mb.obs.nrows() as f64;
    let (out, cache) = critic.forward_cached(&mb.obs);
    let err = &out.column(0) - &mb.target;
    let loss = err.mapv(|e| e * e).sum() / n;
    let dout = err.mapv(|e| 2.0 * e / n).insert_axis(ndarray::Axis(1));
    let (grads, _) = critic.backward(&cache, &dout);
    (loss, grads)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateDiagnostics {
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub minibatches: usize,
}

fn clip_grad(g: &mut Mlp, max_norm: Option<f64>) {
    if let Some(max) = max_norm {
        let norm = g.norm();
        if norm > max {
            g.scale(max / norm);
        }
    }
}

/// K epochs of shuffled minibatch updates over the buffer. Advantages and
/// targets must already be filled in.
pub fn ppo_update<R: Rng>(
    buffer: &RolloutBuffer,
    params: &mut PolicyParams,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateDiagnostics, RlError> {
    if buffer.is_empty() {
        return Err(RlError::Config("empty rollout buffer".into()));
    }
    let mut samples = buffer.samples.clone();
    if cfg.normalize_advantages {
        let mut adv: Vec<f64> = samples.iter().map(|s| s.advantage).collect();
        normalize_advantages(&mut adv);
        for (s, a) in samples.iter_mut().zip(adv) {
            s.advantage = a;
        }
    }
    update_epochs(samples, params, cfg, rng)
}

fn update_epochs<R: Rng>(
    mut samples: Vec<RolloutSample>,
    params: &mut PolicyParams,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateDiagnostics, RlError> {
    let mut diag = UpdateDiagnostics::default();
    for _ in 0..cfg.epochs {
        samples.shuffle(rng);
        for chunk in samples.chunks(cfg.batch_size) {
            let refs: Vec<&RolloutSample> = chunk.iter().collect();
            let mb = Minibatch::from_samples(&refs);
            let (stats, mut ga) = actor_loss_and_grad(&params.actor, &mb, cfg.clip_eps, cfg.entropy_coef, params.log_std_floor);
            let (closs, mut gc) = critic_loss_and_grad(&params.critic, &mb);
            if !stats.loss.is_finite() || !closs.is_finite() || !ga.is_finite() || !gc.is_finite() {
                log::error!("non-finite PPO loss on minibatch of {} (actor {}, critic {closs})", chunk.len(), stats.loss);
                return Err(RlError::NonFinite("PPO loss".into()));
            }
            clip_grad(&mut ga, cfg.max_grad_norm);
            clip_grad(&mut gc, cfg.max_grad_norm);
            params.actor_opt.step(&mut params.actor, &ga);
            params.critic_opt.step(&mut params.critic, &gc);
            diag.mean_ratio += stats.mean_ratio;
            diag.clip_fraction += stats.clip_fraction;
            diag.actor_loss += stats.loss;
            diag.critic_loss += closs;
            diag.entropy += stats.entropy;
            diag.minibatches += 1;
        }
    }
    let n = diag.minibatches.max(1) as f64;
    diag.mean_ratio /= n;
    diag.clip_fraction /= n;
    diag.actor_loss /= n;
    diag.critic_loss /= n;
    diag.entropy /= n;
    params.updates += 1;
    Ok(diag)
}
