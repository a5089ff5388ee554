//! Distillation datasets, losses and the raw-pixel student policy.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::arena::{Action, Arena, ArenaConfig, Observation, Task, CHANNELS};
use crate::container::{fingerprint, Container};
use crate::error::{Error, Result};
use crate::eval::Policy;
use crate::nn::{softmax, Adam, AdamConfig, Network, Tape, Tensor};
use crate::ppo::{pixel_network, sample, Agent, PolicyParams, Teacher};
use crate::rng::{derive_seed, rng_from_seed};
use crate::srl::{argmax, pixel_batch};

/// Floor added to stored probabilities before taking logarithms.
pub const LOGIT_FLOOR: f64 = 1e-12;

/// Grid-walker datasets larger than this are refused.
pub const MAX_GRID_SAMPLES: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    OnPolicy,
    GridWalker,
    RandomWalker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Full,
    Train,
    Val,
}

macro_rules! text_enum {
    ($ty:ident { $($var:ident => $s:literal),* $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$var => $s),* })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($ty::$var),)*
                    _ => Err(Error::Format(format!("unknown {} `{s}`", stringify!($ty)))),
                }
            }
        }
    };
}

text_enum!(GenerationMode { OnPolicy => "on_policy", GridWalker => "grid_walker", RandomWalker => "random_walker" });
text_enum!(Split { Full => "full", Train => "train", Val => "val" });

/// Observations annotated with a teacher's action distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillDataset {
    pub task: Task,
    pub mode: GenerationMode,
    pub teacher: String,
    pub seed: u64,
    pub split: Split,
    pub observations: Vec<Observation>,
    pub probs: Vec<[f64; 4]>,
    /// Episode each item came from; the train/val split never separates an
    /// episode.
    pub episodes: Vec<u32>,
}

impl DistillDataset {
    fn empty(task: Task, mode: GenerationMode, teacher: &Teacher, seed: u64) -> Self {
        DistillDataset {
            task,
            mode,
            teacher: teacher.agent.params.fingerprint(),
            seed,
            split: Split::Full,
            observations: Vec::new(),
            probs: Vec::new(),
            episodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    fn push(&mut self, obs: Observation, probs: [f64; 4], episode: u32) {
        self.observations.push(obs);
        self.probs.push(probs);
        self.episodes.push(episode);
    }

    fn subset(&self, keep: impl Fn(u32) -> bool, split: Split) -> Self {
        let mut out = DistillDataset {
            split,
            observations: Vec::new(),
            probs: Vec::new(),
            episodes: Vec::new(),
            ..self.clone_header()
        };
        for i in 0..self.len() {
            if keep(self.episodes[i]) {
                out.push(self.observations[i].clone(), self.probs[i], self.episodes[i]);
            }
        }
        out
    }

    fn clone_header(&self) -> Self {
        DistillDataset {
            task: self.task,
            mode: self.mode,
            teacher: self.teacher.clone(),
            seed: self.seed,
            split: self.split,
            observations: Vec::new(),
            probs: Vec::new(),
            episodes: Vec::new(),
        }
    }

    /// Holds out `val_fraction` of the episodes (at least one when there are
    /// two or more), chosen by a seeded shuffle.
    pub fn split_by_episode(&self, val_fraction: f64, seed: u64) -> (Self, Self) {
        let mut ids: Vec<u32> = self.episodes.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        ids.shuffle(&mut rng_from_seed(seed));
        let n_val = if ids.len() < 2 {
            0
        } else {
            ((ids.len() as f64 * val_fraction).round() as usize).clamp(1, ids.len() - 1)
        };
        let val: BTreeSet<u32> = ids[..n_val].iter().copied().collect();
        (
            self.subset(|e| !val.contains(&e), Split::Train),
            self.subset(|e| val.contains(&e), Split::Val),
        )
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new("distill-dataset");
        c.set_meta("task", self.task);
        c.set_meta("mode", self.mode);
        c.set_meta("teacher", &self.teacher);
        c.set_meta("seed", self.seed);
        c.set_meta("split", self.split);
        c.set_meta("size", self.len());
        let size = self.observations.first().map_or(0, Observation::size);
        let n = self.len();
        let mut obs = Vec::with_capacity(n * CHANNELS * size * size);
        for o in &self.observations {
            obs.extend_from_slice(o.levels());
        }
        c.push_u8("obs", vec![n.max(1), CHANNELS, size, size], obs);
        c.push_f64("probs", vec![n, Action::COUNT], self.probs.iter().flatten().copied().collect());
        c.push_f64("episodes", vec![n], self.episodes.iter().map(|&e| e as f64).collect());
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("distill-dataset")?;
        let n: usize = c.meta_parse("size")?;
        let (shape, obs) = c.u8_blob("obs")?;
        let (_, probs) = c.f64_blob("probs")?;
        let (_, episodes) = c.f64_blob("episodes")?;
        let size = shape[2];
        let stride = CHANNELS * size * size;
        let bad = || Error::Format("distill dataset arrays are inconsistent".into());
        if obs.len() < n * stride || probs.len() != n * Action::COUNT || episodes.len() != n {
            return Err(bad());
        }
        let mut out = DistillDataset {
            task: c.meta("task")?.parse()?,
            mode: c.meta("mode")?.parse()?,
            teacher: c.meta("teacher")?.to_string(),
            seed: c.meta_parse("seed")?,
            split: c.meta("split")?.parse()?,
            observations: Vec::with_capacity(n),
            probs: Vec::with_capacity(n),
            episodes: Vec::with_capacity(n),
        };
        for i in 0..n {
            let o = Observation::from_levels(size, obs[i * stride..(i + 1) * stride].to_vec()).ok_or_else(bad)?;
            let p = &probs[i * 4..i * 4 + 4];
            out.push(o, [p[0], p[1], p[2], p[3]], episodes[i] as u32);
        }
        Ok(out)
    }
}

fn check_task(config: &ArenaConfig, teacher: &Teacher) -> Result<()> {
    if config.task != teacher.task {
        return Err(Error::config(format!(
            "teacher trained on {} cannot annotate {} observations",
            teacher.task, config.task
        )));
    }
    Ok(())
}

fn teacher_probs(agent: &Agent, obs: &Observation) -> Result<[f64; 4]> {
    agent.action_probs(obs)
}

/// Settings for on-policy generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnPolicyConfig {
    /// Candidate episodes are collected until they hold this many times
    /// `n_samples` frames; the best of them by reward per step are kept.
    pub candidate_factor: f64,
    /// Reaching episodes end after this many target contacts.
    pub contact_limit: usize,
}

impl Default for OnPolicyConfig {
    fn default() -> Self {
        OnPolicyConfig {
            candidate_factor: 1.5,
            contact_limit: 10,
        }
    }
}

struct Episode {
    frames: Vec<(Observation, [f64; 4])>,
    reward: f64,
}

/// Episodes from random starts with the teacher sampling from its own
/// distribution. Keeps the episodes with the highest reward per step until
/// exactly `n_samples` frames are stored.
pub fn generate_onpolicy(
    config: &ArenaConfig,
    teacher: &Teacher,
    n_samples: usize,
    seed: u64,
    opts: &OnPolicyConfig,
) -> Result<DistillDataset> {
    check_task(config, teacher)?;
    let mut cfg = config.clone();
    if cfg.task == Task::Reaching {
        cfg.contact_limit = Some(opts.contact_limit);
    }
    let mut env = Arena::new(cfg, derive_seed(seed, 0))?;
    let mut rng = rng_from_seed(derive_seed(seed, 1));
    let target = ((n_samples as f64) * opts.candidate_factor.max(1.0)).ceil() as usize;
    let mut episodes = Vec::new();
    let mut total = 0;
    while total < target {
        let mut obs = env.reset(derive_seed(seed, 2 + episodes.len() as u64));
        let mut ep = Episode {
            frames: Vec::new(),
            reward: 0.0,
        };
        while !env.is_done() {
            let p = teacher_probs(&teacher.agent, &obs)?;
            let step = env.step(Action::from_index(sample(&p, &mut rng))?)?;
            ep.reward += step.reward;
            ep.frames.push((obs, p));
            obs = step.observation;
        }
        total += ep.frames.len();
        episodes.push(ep);
    }
    let mut order: Vec<usize> = (0..episodes.len()).collect();
    let rate = |i: usize| episodes[i].reward / episodes[i].frames.len() as f64;
    order.sort_by(|&a, &b| rate(b).total_cmp(&rate(a)).then(a.cmp(&b)));
    let mut keep = Vec::new();
    let mut kept = 0;
    for i in order {
        if kept >= n_samples {
            break;
        }
        keep.push(i);
        kept += episodes[i].frames.len();
    }
    keep.sort_unstable();
    let mut out = DistillDataset::empty(config.task, GenerationMode::OnPolicy, teacher, seed);
    for i in keep {
        for (obs, p) in episodes[i].frames.drain(..) {
            if out.len() == n_samples {
                break;
            }
            out.push(obs, p, i as u32);
        }
    }
    Ok(out)
}

/// Chaser positions swept for the escaping task: a 3×3 lattice over the
/// arena.
pub fn chaser_lattice(config: &ArenaConfig) -> Result<Vec<[f64; 2]>> {
    crate::arena::grid_positions(config, config.half_width)
}

/// The robot placed at every lattice position (crossed with the chaser
/// lattice on the escaping task), each frame annotated by the teacher.
pub fn generate_gridwalker(config: &ArenaConfig, teacher: &Teacher, stride: f64, seed: u64) -> Result<DistillDataset> {
    check_task(config, teacher)?;
    let robots = crate::arena::grid_positions(config, stride)?;
    let chasers: Vec<Option<[f64; 2]>> = if config.task == Task::Escaping {
        chaser_lattice(config)?.into_iter().map(Some).collect()
    } else {
        vec![None]
    };
    let n = robots.len() * chasers.len();
    if n > MAX_GRID_SAMPLES {
        return Err(Error::config(format!("grid stride {stride} would produce {n} samples")));
    }
    let mut env = Arena::new(config.clone(), derive_seed(seed, 0))?;
    let mut out = DistillDataset::empty(config.task, GenerationMode::GridWalker, teacher, seed);
    for c in &chasers {
        for &r in &robots {
            let obs = env.reset_to(r, *c)?;
            let p = teacher_probs(&teacher.agent, &obs)?;
            let id = out.len() as u32;
            out.push(obs, p, id);
        }
    }
    Ok(out)
}

/// Trajectories of an untrained raw-pixel policy, annotated by the teacher.
pub fn generate_random_walker(config: &ArenaConfig, teacher: &Teacher, n_samples: usize, seed: u64) -> Result<DistillDataset> {
    check_task(config, teacher)?;
    let walker = Agent::new(None, PolicyParams::raw_pixels(config.render_size, derive_seed(seed, 0))?)?;
    let mut env = Arena::new(config.clone(), derive_seed(seed, 1))?;
    let mut rng = rng_from_seed(derive_seed(seed, 2));
    let mut out = DistillDataset::empty(config.task, GenerationMode::RandomWalker, teacher, seed);
    let mut episode = 0u32;
    let mut obs = env.reset(derive_seed(seed, 3));
    while out.len() < n_samples {
        let p = teacher_probs(&teacher.agent, &obs)?;
        let a = sample(&walker.action_probs(&obs)?, &mut rng);
        let step = env.step(Action::from_index(a)?)?;
        out.push(obs, p, episode);
        obs = if step.done {
            episode += 1;
            env.reset(derive_seed(seed, 3 + episode as u64))
        } else {
            step.observation
        };
    }
    Ok(out)
}

/// Batch mean of the squared L2 distance between probability vectors, and
/// its gradient with respect to `student`.
pub fn loss_mse(student: &[f64], teacher: &[f64]) -> Result<(f64, Vec<f64>)> {
    if student.len() != teacher.len() || !student.len().is_multiple_of(Action::COUNT) {
        return Err(Error::config("mse loss expects equal batches of 4-vectors"));
    }
    let b = (student.len() / Action::COUNT).max(1) as f64;
    let mut loss = 0.0;
    let grad = student
        .iter()
        .zip(teacher)
        .map(|(&x, &y)| {
            loss += (x - y) * (x - y);
            2.0 * (x - y) / b
        })
        .collect();
    Ok((loss / b, grad))
}

/// `softmax(ln(p + floor) / τ)` for one stored probability vector.
pub fn tempered(probs: &[f64], tau: f64) -> Vec<f64> {
    let logits: Vec<f64> = probs.iter().map(|&p| (p + LOGIT_FLOOR).ln() / tau).collect();
    softmax(&logits)
}

/// Batch mean of `KL(softmax(ln p / τ) ‖ softmax(q))` and its gradient with
/// respect to the student logits `q`.
pub fn loss_kl_tau(teacher_probs: &[f64], student_logits: &[f64], tau: f64) -> Result<(f64, Vec<f64>)> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::config(format!("temperature must be positive, got {tau}")));
    }
    if teacher_probs.len() != student_logits.len() || !teacher_probs.len().is_multiple_of(Action::COUNT) {
        return Err(Error::config("kl loss expects equal batches of 4-vectors"));
    }
    let b = (teacher_probs.len() / Action::COUNT).max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(student_logits.len());
    for (p, q) in teacher_probs.chunks(Action::COUNT).zip(student_logits.chunks(Action::COUNT)) {
        let pt = tempered(p, tau);
        let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + q.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for j in 0..Action::COUNT {
            if pt[j] > 0.0 {
                loss += pt[j] * (pt[j].ln() - (q[j] - lse));
            }
            grad.push(((q[j] - lse).exp() - pt[j]) / b);
        }
    }
    Ok((loss / b, grad))
}

/// Back-propagates a gradient on softmax outputs to the logits, row by row.
pub fn softmax_backward(probs: &[f64], grad_probs: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(probs.len());
    for (p, g) in probs.chunks(Action::COUNT).zip(grad_probs.chunks(Action::COUNT)) {
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        out.extend(p.iter().zip(g).map(|(pi, gi)| pi * (gi - dot)));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistillLoss {
    Mse,
    Kl { tau: f64 },
}

impl DistillLoss {
    /// The four losses of the loss comparison, in table order.
    pub const TABLE: [DistillLoss; 4] = [
        DistillLoss::Mse,
        DistillLoss::Kl { tau: 1.0 },
        DistillLoss::Kl { tau: 0.1 },
        DistillLoss::Kl { tau: 0.01 },
    ];

    /// Loss and gradient with respect to the student logits.
    pub fn evaluate(&self, teacher_probs: &[f64], student_logits: &[f64]) -> Result<(f64, Vec<f64>)> {
        match *self {
            DistillLoss::Mse => {
                let probs: Vec<f64> = student_logits.chunks(Action::COUNT).flat_map(softmax).collect();
                let (loss, g) = loss_mse(&probs, teacher_probs)?;
                Ok((loss, softmax_backward(&probs, &g)))
            }
            DistillLoss::Kl { tau } => loss_kl_tau(teacher_probs, student_logits, tau),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DistillLoss::Kl { tau } if tau.is_nan() || tau <= 0.0 => Err(Error::config(format!("temperature must be positive, got {tau}"))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for DistillLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistillLoss::Mse => f.write_str("mse"),
            DistillLoss::Kl { tau } => write!(f, "kl_tau={tau}"),
        }
    }
}

impl FromStr for DistillLoss {
    type Err = Error;

    /// `mse`, `kl` (τ = 1) or `kl_tau=<τ>`.
    fn from_str(s: &str) -> Result<Self> {
        let loss = match s {
            "mse" => DistillLoss::Mse,
            "kl" => DistillLoss::Kl { tau: 1.0 },
            _ => {
                let tau = s
                    .strip_prefix("kl_tau=")
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::config(format!("unknown distillation loss `{s}`")))?;
                DistillLoss::Kl { tau }
            }
        };
        loss.validate()?;
        Ok(loss)
    }
}

/// Raw-pixel policy distilled from one or more teachers. It sees only
/// observations; no task label enters its forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Student {
    pub network: Network,
    pub tasks: Vec<Task>,
}

impl Student {
    pub fn new(render_size: usize, hidden: usize, seed: u64) -> Result<Self> {
        Ok(Student {
            network: pixel_network(render_size, hidden, Action::COUNT, seed)?,
            tasks: Vec::new(),
        })
    }

    pub fn action_probs(&self, obs: &Observation) -> Result<[f64; 4]> {
        let p = softmax(self.network.forward(&pixel_batch(&[obs])?)?.data());
        Ok([p[0], p[1], p[2], p[3]])
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new("student");
        let tasks: Vec<String> = self.tasks.iter().map(Task::to_string).collect();
        c.set_meta("tasks", tasks.join(","));
        c.push_network("policy", &self.network);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("student")?;
        let tasks = c.meta("tasks")?;
        let tasks = if tasks.is_empty() {
            Vec::new()
        } else {
            tasks.split(',').map(str::parse).collect::<Result<_>>()?
        };
        Ok(Student {
            network: c.network("policy")?,
            tasks,
        })
    }
}

impl Policy for Student {
    fn act(&self, obs: &Observation) -> Result<Action> {
        Action::from_index(argmax(&self.action_probs(obs)?))
    }

    fn identity(&self) -> String {
        fingerprint(self.network.params())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudentTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub loss: DistillLoss,
    pub val_fraction: f64,
    /// Width of the dense hidden layer after the conv trunk.
    pub hidden: usize,
    pub seed: u64,
}

impl Default for StudentTrainConfig {
    fn default() -> Self {
        StudentTrainConfig {
            epochs: 4,
            batch_size: 32,
            lr: 1e-3,
            loss: DistillLoss::Kl { tau: 0.01 },
            val_fraction: 0.1,
            hidden: 128,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// `NaN` when there is no validation data.
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentRun {
    pub student: Student,
    pub epochs: Vec<EpochStats>,
    /// Epoch (1-based) whose weights were kept; 0 means the initial weights.
    pub best_epoch: usize,
}

type Item<'a> = (&'a Observation, &'a [f64; 4]);

fn batch_loss(net: &Network, loss: &DistillLoss, items: &[Item<'_>], chunk: usize) -> Result<f64> {
    let mut total = 0.0;
    for c in items.chunks(chunk.max(1)) {
        let obs: Vec<&Observation> = c.iter().map(|i| i.0).collect();
        let probs: Vec<f64> = c.iter().flat_map(|i| i.1.iter().copied()).collect();
        let logits = net.forward(&pixel_batch(&obs)?)?;
        total += loss.evaluate(&probs, logits.data())?.0 * c.len() as f64;
    }
    Ok(total / items.len().max(1) as f64)
}

/// Minibatch training on the union of the train splits, shuffled across
/// tasks. Stops early once validation loss fails to improve for an epoch and
/// returns the weights with the lowest validation loss.
pub fn train_student(datasets: &[&DistillDataset], cfg: &StudentTrainConfig) -> Result<StudentRun> {
    cfg.loss.validate()?;
    let size = datasets
        .iter()
        .flat_map(|d| d.observations.first())
        .map(Observation::size)
        .next()
        .ok_or_else(|| Error::config("student training needs a non-empty dataset"))?;
    if datasets.iter().any(|d| d.observations.iter().any(|o| o.size() != size)) {
        return Err(Error::config("datasets have different observation sizes"));
    }
    let splits: Vec<(DistillDataset, DistillDataset)> = datasets
        .iter()
        .enumerate()
        .map(|(i, d)| d.split_by_episode(cfg.val_fraction, derive_seed(cfg.seed, 100 + i as u64)))
        .collect();
    let mut train: Vec<Item<'_>> = Vec::new();
    let mut val: Vec<Item<'_>> = Vec::new();
    for (t, v) in &splits {
        train.extend(t.observations.iter().zip(&t.probs));
        val.extend(v.observations.iter().zip(&v.probs));
    }
    if train.is_empty() {
        return Err(Error::config("student training needs a non-empty dataset"));
    }

    let mut student = Student::new(size, cfg.hidden, derive_seed(cfg.seed, 0))?;
    let mut tasks: Vec<Task> = Vec::new();
    for d in datasets {
        if !tasks.contains(&d.task) {
            tasks.push(d.task);
        }
    }
    student.tasks = tasks;
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 1));
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr), student.network.param_count());
    let mut tape = Tape::new();
    let mut grads = vec![0.0; student.network.param_count()];

    let mut best_params = student.network.params().to_vec();
    let initial = batch_loss(&student.network, &cfg.loss, if val.is_empty() { &train } else { &val }, 256)?;
    let mut best = (initial, 0usize);
    let mut history = Vec::new();
    for epoch in 1..=cfg.epochs {
        train.shuffle(&mut rng);
        let mut total = 0.0;
        for c in train.chunks(cfg.batch_size.max(1)) {
            let obs: Vec<&Observation> = c.iter().map(|i| i.0).collect();
            let probs: Vec<f64> = c.iter().flat_map(|i| i.1.iter().copied()).collect();
            let logits = student.network.forward_train(&pixel_batch(&obs)?, &mut tape)?;
            let (loss, g) = cfg.loss.evaluate(&probs, logits.data())?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("student loss became {loss} in epoch {epoch}")));
            }
            total += loss * c.len() as f64;
            grads.fill(0.0);
            student
                .network
                .backward_into(&tape, &Tensor::new(logits.shape().to_vec(), g)?, &mut grads)?;
            opt.step(student.network.params_mut(), &grads)?;
        }
        let train_loss = total / train.len() as f64;
        let val_loss = if val.is_empty() {
            f64::NAN
        } else {
            batch_loss(&student.network, &cfg.loss, &val, 256)?
        };
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });
        log::debug!("student epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
        // without validation data, select on the post-epoch training loss
        let score = if val.is_empty() {
            batch_loss(&student.network, &cfg.loss, &train, 256)?
        } else {
            val_loss
        };
        if score < best.0 {
            best = (score, epoch);
            best_params.copy_from_slice(student.network.params());
        } else {
            break;
        }
    }
    student.network.params_mut().copy_from_slice(&best_params);
    Ok(StudentRun {
        student,
        epochs: history,
        best_epoch: best.1,
    })
}

/// Fraction of items where the student's argmax equals the teacher's.
pub fn agreement(student: &Student, data: &DistillDataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(f64::NAN);
    }
    let mut hits = 0;
    for (o, p) in data.observations.iter().zip(&data.probs) {
        if argmax(&student.action_probs(o)?) == argmax(p) {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::srl::{SrlModel, SrlSpec};

    fn teacher(task: Task, seed: u64) -> Teacher {
        let srl = SrlModel::new(&SrlSpec::default()).unwrap();
        Teacher {
            task,
            agent: Agent::new(Some(srl), PolicyParams::encoded(16, seed).unwrap()).unwrap(),
        }
    }

    #[test]
    fn onpolicy_has_exact_size_and_true_annotations() {
        let t = teacher(Task::Reaching, 1);
        let cfg = ArenaConfig::new(Task::Reaching);
        let d = generate_onpolicy(&cfg, &t, 10, 3, &OnPolicyConfig::default()).unwrap();
        assert_eq!(d.len(), 10);
        for (o, p) in d.observations.iter().zip(&d.probs) {
            assert_eq!(*p, t.agent.action_probs(o).unwrap());
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert_eq!(d, generate_onpolicy(&cfg, &t, 10, 3, &OnPolicyConfig::default()).unwrap());
    }

    #[test]
    fn task_mismatch_is_a_config_error() {
        let t = teacher(Task::Reaching, 1);
        let err = generate_onpolicy(&ArenaConfig::new(Task::Circling), &t, 10, 0, &OnPolicyConfig::default());
        assert!(matches!(err, Err(Error::Config(_))));
        assert!(generate_gridwalker(&ArenaConfig::new(Task::Escaping), &t, 0.25, 0).is_err());
    }

    #[test]
    fn grid_walker_counts() {
        let cfg = ArenaConfig::new(Task::Circling);
        let d = generate_gridwalker(&cfg, &teacher(Task::Circling, 2), 0.25, 0).unwrap();
        assert_eq!(d.len(), 81);
        let te = ArenaConfig::new(Task::Escaping);
        let d = generate_gridwalker(&te, &teacher(Task::Escaping, 2), 0.25, 0).unwrap();
        assert_eq!(d.len(), 729);
        let t = teacher(Task::Escaping, 2);
        for i in [0, 100, 728] {
            assert_eq!(d.probs[i], t.agent.action_probs(&d.observations[i]).unwrap());
        }
        assert!(generate_gridwalker(&te, &t, 0.001, 0).is_err());
    }

    #[test]
    fn split_is_disjoint_by_episode() {
        let t = teacher(Task::Escaping, 4);
        let d = generate_random_walker(&ArenaConfig::new(Task::Escaping), &t, 1300, 5).unwrap();
        assert_eq!(d.len(), 1300);
        let (tr, va) = d.split_by_episode(0.1, 1);
        assert_eq!(tr.len() + va.len(), d.len());
        assert!(!va.is_empty());
        let a: BTreeSet<u32> = tr.episodes.iter().copied().collect();
        assert!(va.episodes.iter().all(|e| !a.contains(e)));
        assert_eq!((tr.split, va.split), (Split::Train, Split::Val));
    }

    #[test]
    fn dataset_container_roundtrip() {
        let d = generate_gridwalker(&ArenaConfig::new(Task::Reaching), &teacher(Task::Reaching, 2), 0.5, 0).unwrap();
        let back = DistillDataset::from_container(&Container::from_bytes(&d.to_container().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn mse_examples() {
        assert_eq!(loss_mse(&[0.1, 0.2, 0.3, 0.4], &[0.1, 0.2, 0.3, 0.4]).unwrap().0, 0.0);
        assert_eq!(loss_mse(&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0]).unwrap().0, 2.0);
    }

    #[test]
    fn kl_examples() {
        let p = [0.4, 0.3, 0.2, 0.1];
        let logits: Vec<f64> = p.iter().map(|v: &f64| v.ln()).collect();
        assert!(loss_kl_tau(&p, &logits, 1.0).unwrap().0.abs() < 1e-9);
        assert!(tempered(&[0.7, 0.1, 0.1, 0.1], 0.01)[0] > 0.999);
        assert!(loss_kl_tau(&p, &logits, 0.0).is_err());
        assert!(loss_kl_tau(&p, &logits, -1.0).is_err());
    }

    #[test]
    fn loss_names_roundtrip() {
        for l in DistillLoss::TABLE {
            assert_eq!(l.to_string().parse::<DistillLoss>().unwrap(), l);
        }
        assert_eq!("kl".parse::<DistillLoss>().unwrap(), DistillLoss::Kl { tau: 1.0 });
        assert!("kl_tau=0".parse::<DistillLoss>().is_err());
        assert!("hinge".parse::<DistillLoss>().is_err());
    }

    #[test]
    fn student_memorises_a_single_sample() {
        let t = teacher(Task::Reaching, 6);
        let mut d = generate_gridwalker(&ArenaConfig::new(Task::Reaching), &t, 2.0, 0).unwrap();
        d.observations.truncate(1);
        d.probs = vec![[0.1, 0.1, 0.7, 0.1]];
        d.episodes.truncate(1);
        let before = d.clone();
        let cfg = StudentTrainConfig {
            epochs: 100,
            lr: 1e-2,
            hidden: 16,
            ..Default::default()
        };
        let run = train_student(&[&d], &cfg).unwrap();
        assert_eq!(d, before);
        assert_eq!(run.student.act(&d.observations[0]).unwrap(), Action::Up);
        assert_eq!(run.student.tasks, vec![Task::Reaching]);
    }

    #[test]
    fn empty_datasets_are_rejected() {
        let mut d = generate_gridwalker(&ArenaConfig::new(Task::Reaching), &teacher(Task::Reaching, 6), 2.0, 0).unwrap();
        d.observations.clear();
        d.probs.clear();
        d.episodes.clear();
        assert!(matches!(train_student(&[&d], &StudentTrainConfig::default()), Err(Error::Config(_))));
        assert!(train_student(&[], &StudentTrainConfig::default()).is_err());
    }

    #[test]
    fn student_container_roundtrip() {
        let mut s = Student::new(32, 8, 1).unwrap();
        s.tasks = vec![Task::Reaching, Task::Escaping];
        assert_eq!(Student::from_container(&Container::from_bytes(&s.to_container().to_bytes()).unwrap()).unwrap(), s);
    }

    #[test]
    fn student_sees_only_the_observation() {
        let t = teacher(Task::Escaping, 3);
        let cfg = ArenaConfig::new(Task::Escaping);
        let a = generate_random_walker(&cfg, &t, 40, 1).unwrap();
        let b = generate_random_walker(&ArenaConfig::new(Task::Reaching), &teacher(Task::Reaching, 3), 40, 2).unwrap();
        let run = train_student(&[&a, &b], &StudentTrainConfig { epochs: 1, hidden: 8, ..Default::default() }).unwrap();
        let s = &run.student;
        assert_eq!(s.network.input_shape(), &[3, 32, 32]);
        let o = &a.observations[7];
        assert_eq!(s.action_probs(o).unwrap(), s.action_probs(&o.clone()).unwrap());
        assert_eq!(s.act(o).unwrap(), Action::from_index(argmax(&s.action_probs(o).unwrap())).unwrap());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn probs() -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(-5.0f64..5.0, 4).prop_map(|l| softmax(&l))
        }

        proptest! {
            #[test]
            fn kl_vanishes_when_student_matches(p in probs()) {
                let logits: Vec<f64> = p.iter().map(|v| v.ln()).collect();
                prop_assert!(loss_kl_tau(&p, &logits, 1.0).unwrap().0.abs() < 1e-9);
            }

            #[test]
            fn lower_temperature_sharpens(p in probs(), t1 in 0.01f64..1.0, t2 in 0.01f64..1.0) {
                let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
                let sharp = tempered(&p, lo);
                let soft = tempered(&p, hi);
                let top = argmax(&p);
                prop_assert!(sharp[top] >= soft[top] - 1e-12);
                prop_assert!(soft[top] >= p[top] - 1e-9);
                prop_assert!((sharp.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }

            #[test]
            fn losses_are_nonnegative(p in probs(), q in proptest::collection::vec(-5.0f64..5.0, 4), tau in 0.01f64..2.0) {
                prop_assert!(loss_kl_tau(&p, &q, tau).unwrap().0 >= -1e-12);
                prop_assert!(loss_mse(&softmax(&q), &p).unwrap().0 >= 0.0);
            }
        }
    }
}
