//! Clipped-surrogate PPO with generalized advantage estimation.

mod policy;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::arena::{Action, Arena, ArenaConfig, Observation, Task};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, softmax, Adam, AdamConfig, Tape, Tensor};
use crate::rng::{derive_seed, rng_from_seed, Rng};

pub use policy::{pixel_network, Agent, InputMode, PolicyParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub rollout_steps: usize,
    pub lr: f64,
    pub max_grad_norm: f64,
    /// Snapshot the policy every this many completed episodes.
    pub checkpoint_every: usize,
    /// Divide learning rewards by a running standard deviation of the
    /// discounted return. Recorded episode rewards stay raw.
    pub scale_rewards: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            epochs: 4,
            minibatch_size: 64,
            value_coef: 0.5,
            entropy_coef: 0.01,
            rollout_steps: 2048,
            lr: 3e-4,
            max_grad_norm: 0.5,
            checkpoint_every: 200,
            scale_rewards: true,
        }
    }
}

/// On-policy transitions with their advantage estimates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutBatch {
    pub feature_len: usize,
    /// Row-major `[len, feature_len]` policy inputs.
    pub features: Vec<f64>,
    pub actions: Vec<usize>,
    pub action_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    /// Value of the observation reached by each step (used at episode ends and
    /// after the last step).
    pub next_values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Total reward of every episode that finished inside this batch.
    pub episode_rewards: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_len..(i + 1) * self.feature_len]
    }
}

/// GAE over a batch. Episode ends are time limits, so their returns are
/// bootstrapped from the value of the final observation while the advantage
/// recursion is cut.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let bootstrap = if dones[t] || t + 1 == n { next_values[t] } else { values[t + 1] };
        let delta = rewards[t] + gamma * bootstrap - values[t];
        running = if dones[t] { delta } else { delta + gamma * lambda * running };
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Keeps an environment alive across successive rollouts.
#[derive(Debug)]
pub struct RolloutCollector {
    env: Arena,
    rng: Rng,
    obs: Observation,
    episode_reward: f64,
    episodes: usize,
    steps: usize,
    discounted: f64,
    return_stats: RunningStats,
}

/// Welford running mean and variance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    count: f64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1.0;
        let d = x - self.mean;
        self.mean += d / self.count;
        self.m2 += d * (x - self.mean);
    }

    pub fn std(&self) -> f64 {
        if self.count < 2.0 {
            1.0
        } else {
            (self.m2 / self.count).sqrt()
        }
    }
}

impl RolloutCollector {
    pub fn new(config: ArenaConfig, seed: u64) -> Result<Self> {
        let mut env = Arena::new(config, derive_seed(seed, 0))?;
        let obs = env.reset(derive_seed(seed, 1));
        Ok(RolloutCollector {
            env,
            rng: rng_from_seed(derive_seed(seed, 2)),
            obs,
            episode_reward: 0.0,
            episodes: 0,
            steps: 0,
            discounted: 0.0,
            return_stats: RunningStats::default(),
        })
    }

    pub fn episodes(&self) -> usize {
        self.episodes
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Samples `n_steps` actions from the agent's categorical distribution.
    pub fn collect(&mut self, agent: &Agent, n_steps: usize, cfg: &PpoConfig) -> Result<RolloutBatch> {
        let fl = agent.feature_len();
        let mut b = RolloutBatch {
            feature_len: fl,
            features: Vec::with_capacity(n_steps * fl),
            ..Default::default()
        };
        let mut feat = agent.features(&self.obs)?;
        for _ in 0..n_steps {
            let (logits, value) = agent.evaluate_features(&feat)?;
            let probs = softmax(&logits);
            let action = sample(&probs, &mut self.rng);
            let step = self.env.step(Action::from_index(action)?)?;
            self.episode_reward += step.reward;
            self.steps += 1;
            b.features.extend_from_slice(&feat);
            b.actions.push(action);
            b.action_probs.push(probs[action]);
            self.discounted = self.discounted * cfg.gamma + step.reward;
            self.return_stats.push(self.discounted);
            let scale = if cfg.scale_rewards { self.return_stats.std().max(1e-8) } else { 1.0 };
            b.rewards.push(step.reward / scale);
            b.values.push(value);
            b.dones.push(step.done);
            let next_feat = agent.features(&step.observation)?;
            let (_, next_value) = agent.evaluate_features(&next_feat)?;
            b.next_values.push(next_value);
            if step.done {
                b.episode_rewards.push(self.episode_reward);
                self.episode_reward = 0.0;
                self.discounted = 0.0;
                self.episodes += 1;
                let seed = self.rng.gen();
                self.obs = self.env.reset(seed);
                feat = agent.features(&self.obs)?;
            } else {
                self.obs = step.observation;
                feat = next_feat;
            }
        }
        let (adv, ret) = compute_gae(&b.rewards, &b.values, &b.next_values, &b.dones, cfg.gamma, cfg.gae_lambda);
        b.advantages = adv;
        b.returns = ret;
        Ok(b)
    }
}

pub fn collect_rollouts(config: &ArenaConfig, agent: &Agent, n_steps: usize, seed: u64) -> Result<RolloutBatch> {
    RolloutCollector::new(config.clone(), seed)?.collect(agent, n_steps, &PpoConfig::default())
}

pub(crate) fn sample(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// `min(r·A, clip(r, 1-ε, 1+ε)·A)` averaged over samples.
pub fn clipped_surrogate(ratios: &[f64], advantages: &[f64], eps: f64) -> f64 {
    let n = ratios.len() as f64;
    ratios
        .iter()
        .zip(advantages)
        .map(|(&r, &a)| (r * a).min(r.clamp(1.0 - eps, 1.0 + eps) * a))
        .sum::<f64>()
        / n
}

/// Gradient of one sample's clipped surrogate with respect to the policy
/// logits. Zero when the clipped branch is active.
pub fn surrogate_logit_grad(probs: &[f64], action: usize, old_prob: f64, advantage: f64, eps: f64) -> Vec<f64> {
    let ratio = probs[action] / old_prob;
    let clipped = (advantage > 0.0 && ratio > 1.0 + eps) || (advantage < 0.0 && ratio < 1.0 - eps);
    if clipped {
        return vec![0.0; probs.len()];
    }
    probs
        .iter()
        .enumerate()
        .map(|(j, &p)| advantage * ratio * (if j == action { 1.0 } else { 0.0 } - p))
        .collect()
}

/// Gradient of the entropy `-Σ p ln p` with respect to the logits.
pub fn entropy_logit_grad(probs: &[f64]) -> (f64, Vec<f64>) {
    let h: f64 = -probs.iter().map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 }).sum::<f64>();
    let g = probs
        .iter()
        .map(|&p| if p > 0.0 { -p * (p.ln() + h) } else { 0.0 })
        .collect();
    (h, g)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    /// Surrogate of the very first minibatch, before any parameter change.
    pub initial_surrogate: f64,
}

/// Optimiser state for one agent's actor and critic.
#[derive(Debug, Clone)]
pub struct PpoOptimizer {
    policy: Adam,
    value: Adam,
}

impl PpoOptimizer {
    pub fn new(params: &PolicyParams, lr: f64) -> Self {
        let cfg = AdamConfig::with_lr(lr);
        PpoOptimizer {
            policy: Adam::new(cfg, params.policy.param_count()),
            value: Adam::new(cfg, params.value.param_count()),
        }
    }
}

/// Runs `epochs` passes of minibatch updates over `batch`. Advantages are
/// standardised over the whole batch first.
pub fn ppo_update(
    params: &mut PolicyParams,
    opt: &mut PpoOptimizer,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    rng: &mut Rng,
) -> Result<UpdateStats> {
    if batch.is_empty() {
        return Err(Error::config("ppo update on an empty batch"));
    }
    let n = batch.len();
    let mean = batch.advantages.iter().sum::<f64>() / n as f64;
    let var = batch.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    let adv: Vec<f64> = if std > 1e-8 {
        batch.advantages.iter().map(|a| (a - mean) / std).collect()
    } else {
        batch.advantages.iter().map(|a| a - mean).collect()
    };

    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = UpdateStats::default();
    let mut minibatches = 0usize;
    let (mut tape_p, mut tape_v) = (Tape::new(), Tape::new());
    let mut mb_shape = vec![0];
    mb_shape.extend_from_slice(params.input_shape());
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for idx in order.chunks(cfg.minibatch_size.max(1)) {
            let m = idx.len();
            let mut feats = Vec::with_capacity(m * batch.feature_len);
            for &i in idx {
                feats.extend_from_slice(batch.feature_row(i));
            }
            mb_shape[0] = m;
            let x = Tensor::new(mb_shape.clone(), feats)?;
            let logits = params.policy.forward_train(&x, &mut tape_p)?;
            let values = params.value.forward_train(&x, &mut tape_v)?;

            let mut g_logits = vec![0.0; m * Action::COUNT];
            let mut g_values = vec![0.0; m];
            let (mut surr, mut vloss, mut ent, mut clipped) = (0.0, 0.0, 0.0, 0usize);
            for (k, &i) in idx.iter().enumerate() {
                let probs = softmax(logits.row(k));
                let a = batch.actions[i];
                let ratio = probs[a] / batch.action_probs[i];
                surr += (ratio * adv[i]).min(ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv[i]);
                if (ratio - 1.0).abs() > cfg.clip_eps {
                    clipped += 1;
                }
                let gs = surrogate_logit_grad(&probs, a, batch.action_probs[i], adv[i], cfg.clip_eps);
                let (h, gh) = entropy_logit_grad(&probs);
                ent += h;
                // minimise -(surrogate + c_e·entropy)
                for j in 0..Action::COUNT {
                    g_logits[k * Action::COUNT + j] = -(gs[j] + cfg.entropy_coef * gh[j]) / m as f64;
                }
                let err = values.data()[k] - batch.returns[i];
                vloss += err * err;
                g_values[k] = cfg.value_coef * 2.0 * err / m as f64;
            }
            let mf = m as f64;
            if !(surr.is_finite() && vloss.is_finite() && ent.is_finite()) {
                return Err(Error::Divergence(format!(
                    "ppo loss became non-finite (surrogate {surr}, value {vloss}, entropy {ent})"
                )));
            }
            if minibatches == 0 {
                stats.initial_surrogate = surr / mf;
            }
            stats.surrogate += surr / mf;
            stats.value_loss += vloss / mf;
            stats.entropy += ent / mf;
            stats.clip_fraction += clipped as f64 / mf;
            minibatches += 1;

            let mut gp = params.policy.backward(&tape_p, &Tensor::new(logits.shape().to_vec(), g_logits)?)?.params;
            let mut gv = params.value.backward(&tape_v, &Tensor::new(values.shape().to_vec(), g_values)?)?.params;
            clip_grad_norm(&mut gp, cfg.max_grad_norm);
            clip_grad_norm(&mut gv, cfg.max_grad_norm);
            opt.policy.step(params.policy.params_mut(), &gp)?;
            opt.value.step(params.value.params_mut(), &gv)?;
        }
    }
    let k = minibatches.max(1) as f64;
    stats.surrogate /= k;
    stats.value_loss /= k;
    stats.entropy /= k;
    stats.clip_fraction /= k;
    Ok(stats)
}

impl TeacherRun {
    pub fn teacher(&self) -> Teacher {
        Teacher {
            task: self.task,
            agent: self.agent.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub episode: usize,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub episode: usize,
    pub params: PolicyParams,
}

/// A trained agent tagged with the task it solves.
#[derive(Debug, Clone, PartialEq)]
pub struct Teacher {
    pub task: Task,
    pub agent: Agent,
}

impl Teacher {
    pub fn to_container(&self) -> Container {
        let mut c = self.agent.to_container();
        c.kind = "teacher".into();
        c.set_meta("task", self.task);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("teacher")?;
        let task = c.meta("task")?.parse()?;
        let mut inner = c.clone();
        inner.kind = "agent".into();
        Ok(Teacher {
            task,
            agent: Agent::from_container(&inner)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TeacherRun {
    pub task: Task,
    pub agent: Agent,
    pub curve: Vec<CurvePoint>,
    pub checkpoints: Vec<Checkpoint>,
    pub episodes: usize,
    pub steps: usize,
}

/// Alternates rollouts and updates until `budget_steps` environment steps
/// were taken. Records the mean reward of the episodes finished in each
/// rollout and snapshots the policy every `checkpoint_every` episodes.
pub fn train_teacher(config: &ArenaConfig, agent: Agent, budget_steps: usize, seed: u64, cfg: &PpoConfig) -> Result<TeacherRun> {
    let mut collector = RolloutCollector::new(config.clone(), derive_seed(seed, 10))?;
    continue_training(&mut collector, agent, budget_steps, seed, cfg, |_, _| Ok(()))
}

/// Training loop over an existing collector; `on_rollout(agent, steps)` runs
/// after every update.
pub fn continue_training(
    collector: &mut RolloutCollector,
    mut agent: Agent,
    budget_steps: usize,
    seed: u64,
    cfg: &PpoConfig,
    mut on_rollout: impl FnMut(&Agent, usize) -> Result<()>,
) -> Result<TeacherRun> {
    let mut opt = PpoOptimizer::new(&agent.params, cfg.lr);
    let mut rng = rng_from_seed(derive_seed(seed, 11));
    let mut curve = Vec::new();
    let mut checkpoints = Vec::new();
    let start_steps = collector.steps();
    let start_episodes = collector.episodes();
    let mut steps = 0;
    while steps < budget_steps {
        let n = cfg.rollout_steps.min(budget_steps - steps);
        let before = collector.episodes() - start_episodes;
        let batch = collector.collect(&agent, n, cfg)?;
        steps += n;
        let episodes = collector.episodes() - start_episodes;
        if let Some(last) = episodes.checked_div(cfg.checkpoint_every) {
            for e in (before / cfg.checkpoint_every + 1)..=last {
                checkpoints.push(Checkpoint {
                    episode: e * cfg.checkpoint_every,
                    params: agent.params.clone(),
                });
            }
        }
        if !batch.episode_rewards.is_empty() {
            let mean = batch.episode_rewards.iter().sum::<f64>() / batch.episode_rewards.len() as f64;
            curve.push(CurvePoint {
                step: steps,
                episode: episodes,
                mean_reward: mean,
            });
        }
        let stats = ppo_update(&mut agent.params, &mut opt, &batch, cfg, &mut rng)?;
        log::debug!(
            "ppo step {steps}: episodes {episodes} surrogate {:.4} value {:.3} entropy {:.3}",
            stats.surrogate,
            stats.value_loss,
            stats.entropy
        );
        on_rollout(&agent, steps)?;
    }
    Ok(TeacherRun {
        task: collector.env.config().task,
        agent,
        curve,
        checkpoints,
        episodes: collector.episodes() - start_episodes,
        steps: collector.steps() - start_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_reward_and_value_give_zero_advantage() {
        let gamma = 0.99;
        let r = 0.5;
        let v = r / (1.0 - gamma);
        let n = 20;
        let dones: Vec<bool> = (0..n).map(|i| i % 7 == 6).collect();
        let (adv, ret) = compute_gae(&vec![r; n], &vec![v; n], &vec![v; n], &dones, gamma, 0.95);
        assert!(adv.iter().all(|a| a.abs() < 1e-9));
        assert!(ret.iter().all(|x| (x - v).abs() < 1e-9));
    }

    #[test]
    fn gae_matches_hand_computation() {
        let (g, l) = (0.9, 0.5);
        let r = [1.0, 0.0, 2.0];
        let v = [0.5, 0.2, 0.1];
        let nv = [0.2, 0.1, 0.3];
        let d = [false, true, false];
        let (adv, _) = compute_gae(&r, &v, &nv, &d, g, l);
        let d2 = 2.0 + g * 0.3 - 0.1;
        let d1 = 0.0 + g * 0.1 - 0.2;
        let d0 = 1.0 + g * 0.2 - 0.5;
        assert!((adv[2] - d2).abs() < 1e-12);
        assert!((adv[1] - d1).abs() < 1e-12);
        assert!((adv[0] - (d0 + g * l * d1)).abs() < 1e-12);
    }

    #[test]
    fn unit_ratio_surrogate_is_mean_advantage() {
        let adv = [0.3, -1.2, 2.0, 0.1];
        let s = clipped_surrogate(&[1.0; 4], &adv, 0.2);
        assert!((s - adv.iter().sum::<f64>() / 4.0).abs() < 1e-12);
    }

    #[test]
    fn clipped_samples_contribute_no_gradient() {
        let probs = [0.7, 0.1, 0.1, 0.1];
        // ratio 0.7/0.5 = 1.4 > 1.2 with positive advantage: clipped
        assert!(surrogate_logit_grad(&probs, 0, 0.5, 1.0, 0.2).iter().all(|&g| g == 0.0));
        // same ratio but negative advantage: the unclipped branch is the minimum
        assert!(surrogate_logit_grad(&probs, 0, 0.5, -1.0, 0.2).iter().any(|&g| g != 0.0));
        // ratio 0.1/0.5 = 0.2 < 0.8 with negative advantage: clipped
        assert!(surrogate_logit_grad(&probs, 1, 0.5, -1.0, 0.2).iter().all(|&g| g == 0.0));
        assert!(surrogate_logit_grad(&probs, 1, 0.5, 1.0, 0.2).iter().any(|&g| g != 0.0));
    }

    #[test]
    fn zero_advantage_gives_zero_surrogate_gradient() {
        let g = surrogate_logit_grad(&[0.4, 0.3, 0.2, 0.1], 2, 0.25, 0.0, 0.2);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sampling_matches_distribution() {
        let mut rng = rng_from_seed(3);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[sample(&[0.25; 4], &mut rng)] += 1;
        }
        for c in counts {
            assert!((c as f64 / 10_000.0 - 0.25).abs() < 0.03, "{counts:?}");
        }
    }

    fn bandit_batch(params: &PolicyParams, rng: &mut Rng, n: usize) -> RolloutBatch {
        // Two one-step states: Right pays in state 0, Up in state 1.
        let best = [Action::Right as usize, Action::Up as usize];
        let mut b = RolloutBatch {
            feature_len: 2,
            ..RolloutBatch::default()
        };
        for i in 0..n {
            let s = i % 2;
            let x = if s == 0 { [1.0, 0.0] } else { [0.0, 1.0] };
            let t = Tensor::new(vec![1, 2], x.to_vec()).unwrap();
            let probs = softmax(params.policy.forward(&t).unwrap().data());
            let v = params.value.forward(&t).unwrap().data()[0];
            let a = sample(&probs, rng);
            b.features.extend(x);
            b.actions.push(a);
            b.action_probs.push(probs[a]);
            b.rewards.push(if a == best[s] { 1.0 } else { 0.0 });
            b.values.push(v);
            b.dones.push(true);
            b.next_values.push(0.0);
        }
        let (adv, ret) = compute_gae(&b.rewards, &b.values, &b.next_values, &b.dones, 0.99, 0.95);
        b.advantages = adv;
        b.returns = ret;
        b
    }

    #[test]
    fn learns_two_state_bandit() {
        let mut params = PolicyParams::encoded(2, 5).unwrap();
        let cfg = PpoConfig {
            minibatch_size: 32,
            lr: 3e-3,
            ..PpoConfig::default()
        };
        let mut opt = PpoOptimizer::new(&params, cfg.lr);
        let mut rng = rng_from_seed(8);
        for _ in 0..40 {
            let batch = bandit_batch(&params, &mut rng, 128);
            ppo_update(&mut params, &mut opt, &batch, &cfg, &mut rng).unwrap();
        }
        let p = |x: [f64; 2]| softmax(params.policy.forward(&Tensor::new(vec![1, 2], x.to_vec()).unwrap()).unwrap().data());
        assert!(p([1.0, 0.0])[Action::Right as usize] > 0.9);
        assert!(p([0.0, 1.0])[Action::Up as usize] > 0.9);
    }

    fn small_agent(seed: u64) -> Agent {
        let spec = crate::srl::SrlSpec {
            state_dim: 4,
            render_size: 16,
            decoder_hidden: 8,
            inverse_hidden: 8,
            seed,
        };
        Agent::new(Some(crate::srl::SrlModel::new(&spec).unwrap()), PolicyParams::encoded(4, seed).unwrap()).unwrap()
    }

    fn small_env() -> ArenaConfig {
        let mut c = ArenaConfig::new(Task::Reaching).with_randomization(true);
        c.render_size = 16;
        c.episode_len = 10;
        c
    }

    fn small_cfg() -> PpoConfig {
        PpoConfig {
            rollout_steps: 40,
            minibatch_size: 20,
            checkpoint_every: 3,
            ..PpoConfig::default()
        }
    }

    #[test]
    fn zero_budget_leaves_agent_untouched() {
        let agent = small_agent(1);
        let run = train_teacher(&small_env(), agent.clone(), 0, 1, &small_cfg()).unwrap();
        assert_eq!(run.agent, agent);
        assert_eq!((run.steps, run.episodes), (0, 0));
        assert!(run.curve.is_empty() && run.checkpoints.is_empty());
    }

    #[test]
    fn checkpoints_every_n_episodes() {
        let run = train_teacher(&small_env(), small_agent(2), 100, 2, &small_cfg()).unwrap();
        assert_eq!(run.episodes, 10);
        let eps: Vec<usize> = run.checkpoints.iter().map(|c| c.episode).collect();
        assert_eq!(eps, [3, 6, 9]);
        assert_eq!(run.curve.last().unwrap().step, 100);
    }

    #[test]
    fn training_is_deterministic() {
        let a = train_teacher(&small_env(), small_agent(3), 80, 9, &small_cfg()).unwrap();
        let b = train_teacher(&small_env(), small_agent(3), 80, 9, &small_cfg()).unwrap();
        assert_eq!(a.agent, b.agent);
        assert_eq!(a.curve, b.curve);
        let c = train_teacher(&small_env(), small_agent(3), 80, 10, &small_cfg()).unwrap();
        assert_ne!(a.agent, c.agent);
    }
}
