//! Experiments around the pipeline: forgetting under plain fine-tuning,
//! distillation of intermediate teacher checkpoints, and the loss
//! comparison.

use std::path::Path;

use crate::arena::Task;
use crate::distill::{train_student, DistillDataset, DistillLoss, Student};
use crate::error::{Error, Result};
use crate::eval::{evaluate, evaluate_task, summarize, Policy};
use crate::ppo::{continue_training, train_teacher, Agent, PolicyParams, RolloutCollector, Teacher};
use crate::rng::derive_seed;

use super::{eval_configs, f, generate_dataset, seeds, train_encoder, write_csv, PipelineConfig};

fn mean_normalized(policy: &dyn Policy, cfg: &PipelineConfig, task: Task, episodes: usize) -> Result<f64> {
    let e = evaluate_task(policy, &cfg.arena_config(task, false), episodes, derive_seed(cfg.seed, seeds::EVAL))?;
    Ok(e.mean_normalized())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForgettingRow {
    /// `finetune` or `discorl`.
    pub method: String,
    pub seed: usize,
    /// Environment steps spent on the second task.
    pub step: usize,
    pub first_norm: f64,
    pub second_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForgettingResult {
    pub first: Task,
    pub second: Task,
    pub rows: Vec<ForgettingRow>,
}

impl ForgettingResult {
    fn rows_of<'a>(&'a self, method: &str, seed: usize) -> impl Iterator<Item = &'a ForgettingRow> + 'a {
        let method = method.to_string();
        self.rows.iter().filter(move |r| r.method == method && r.seed == seed)
    }

    pub fn seeds(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.rows.iter().map(|r| r.seed).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// First-task score at the start and at the end of the second task, for
    /// one method and seed.
    pub fn endpoints(&self, method: &str, seed: usize) -> Option<(&ForgettingRow, &ForgettingRow)> {
        let first = self.rows_of(method, seed).min_by_key(|r| r.step)?;
        let last = self.rows_of(method, seed).max_by_key(|r| r.step)?;
        Some((first, last))
    }

    /// First-task score after the second task relative to the score before,
    /// per seed. Both methods are measured against the policy trained on the
    /// first task before it moved on.
    pub fn retention(&self, method: &str) -> Vec<f64> {
        self.seeds()
            .into_iter()
            .filter_map(|s| {
                let (start, _) = self.endpoints("finetune", s)?;
                let (_, end) = self.endpoints(method, s)?;
                Some(end.first_norm / start.first_norm.max(1e-9))
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| vec![r.method.clone(), r.seed.to_string(), r.step.to_string(), f(r.first_norm), f(r.second_norm)])
            .collect();
        write_csv(path, &["method", "seed", "step", "first_norm", "second_norm"], &rows)
    }
}

/// Trains one agent on the first task, then keeps training the same network
/// on the second task and evaluates it on both every `eval_every` steps.
/// Both tasks share one encoder fitted on random data from both, so the
/// fine-tuned network is not handicapped by its representation.
///
/// The DisCoRL rows distil the policy before fine-tuning and the fine-tuned
/// policy (as the second-task teacher) into a student, first from the first
/// dataset alone and then from both.
pub fn run_finetune_baseline(cfg: &PipelineConfig) -> Result<ForgettingResult> {
    cfg.validate()?;
    let ft = &cfg.finetune;
    if ft.first == ft.second {
        return Err(Error::config("fine-tuning needs two different tasks"));
    }
    let tasks = [ft.first, ft.second];
    let mut rows = Vec::new();
    for s in 0..ft.seeds {
        let root = derive_seed(cfg.seed, 0xf17e_0000 + s as u64);
        let (model, _) = train_encoder(cfg, &tasks, derive_seed(root, seeds::SRL_DATA), derive_seed(root, seeds::SRL_TRAIN))?;
        let agent = Agent::new(
            Some(model),
            PolicyParams::encoded(cfg.srl.state_dim, derive_seed(root, seeds::POLICY_INIT))?,
        )?;
        let first = train_teacher(
            &cfg.arena_config(ft.first, true),
            agent,
            ft.first_budget,
            derive_seed(root, seeds::PPO),
            &cfg.rl.ppo,
        )?;
        let row = |method: &str, step: usize, p: &dyn Policy| -> Result<ForgettingRow> {
            Ok(ForgettingRow {
                method: method.into(),
                seed: s,
                step,
                first_norm: mean_normalized(p, cfg, ft.first, ft.eval_episodes)?,
                second_norm: mean_normalized(p, cfg, ft.second, ft.eval_episodes)?,
            })
        };
        rows.push(row("finetune", 0, &first.agent)?);

        let mut collector = RolloutCollector::new(cfg.arena_config(ft.second, true), derive_seed(root, 20))?;
        let mut next_eval = ft.eval_every;
        let mut periodic = Vec::new();
        let second = continue_training(
            &mut collector,
            first.agent.clone(),
            ft.second_budget,
            derive_seed(root, 21),
            &cfg.rl.ppo,
            |agent, steps| {
                if steps >= next_eval || steps == ft.second_budget {
                    periodic.push(row("finetune", steps, agent)?);
                    next_eval = steps + ft.eval_every;
                }
                Ok(())
            },
        )?;
        rows.extend(periodic);
        log::info!("fine-tuning seed {s}: {} -> {} done", ft.first, ft.second);

        let teachers = [first.teacher(), second.teacher()];
        let mut datasets = Vec::new();
        for (i, t) in teachers.iter().enumerate() {
            datasets.push(generate_dataset(cfg, t, cfg.distill.samples, derive_seed(root, 30 + i as u64))?);
        }
        for (k, step) in [(1, 0), (2, ft.second_budget)] {
            let refs: Vec<&DistillDataset> = datasets[..k].iter().collect();
            let run = train_student(&refs, &cfg.student_train(cfg.distill.loss, derive_seed(root, 40 + k as u64)))?;
            rows.push(row("discorl", step, &run.student)?);
        }
    }
    Ok(ForgettingResult {
        first: ft.first,
        second: ft.second,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// Training episodes the checkpoint had seen.
    pub episode: usize,
    pub teacher_norm: f64,
    pub student_seed: usize,
    pub student_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub task: Task,
    pub checkpoints: Vec<usize>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn teacher_norm(&self, episode: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.episode == episode).map(|r| r.teacher_norm)
    }

    pub fn student_norms(&self, episode: usize) -> Vec<f64> {
        self.rows.iter().filter(|r| r.episode == episode).map(|r| r.student_norm).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| vec![r.episode.to_string(), f(r.teacher_norm), r.student_seed.to_string(), f(r.student_norm)])
            .collect();
        write_csv(path, &["episode", "teacher_norm", "student_seed", "student_norm"], &rows)
    }
}

/// Trains a teacher with a snapshot every `checkpoint_every` episodes (plus
/// the untrained policy) and distils every snapshot into `seeds` fresh
/// students. Snapshots are written to `out` when given.
pub fn run_checkpoint_sweep(cfg: &PipelineConfig, out: Option<&Path>) -> Result<SweepResult> {
    cfg.validate()?;
    let sw = &cfg.sweep;
    let root = derive_seed(cfg.seed, 0x5eef_0000);
    let (model, _) = train_encoder(cfg, &[sw.task], derive_seed(root, seeds::SRL_DATA), derive_seed(root, seeds::SRL_TRAIN))?;
    let agent = Agent::new(
        Some(model),
        PolicyParams::encoded(cfg.srl.state_dim, derive_seed(root, seeds::POLICY_INIT))?,
    )?;
    let ppo = crate::ppo::PpoConfig {
        checkpoint_every: sw.checkpoint_every,
        ..cfg.rl.ppo
    };
    let initial = agent.params.clone();
    let run = train_teacher(&cfg.arena_config(sw.task, true), agent, sw.budget_steps, derive_seed(root, seeds::PPO), &ppo)?;
    let mut snapshots = vec![(0, initial)];
    snapshots.extend(run.checkpoints.iter().map(|c| (c.episode, c.params.clone())));

    let mut rows = Vec::new();
    for (episode, params) in &snapshots {
        let mut agent = run.agent.clone();
        agent.params = params.clone();
        let teacher = Teacher { task: sw.task, agent };
        if let Some(dir) = out {
            teacher
                .to_container()
                .save(&dir.join(format!("teacher_{}_ep{episode}.bin", sw.task.code())))?;
        }
        let teacher_norm = mean_normalized(&teacher.agent, cfg, sw.task, cfg.eval.episodes)?;
        for s in 0..sw.seeds {
            let seed = derive_seed(root, (*episode as u64) << 8 | s as u64);
            let data = generate_dataset(cfg, &teacher, sw.samples, derive_seed(seed, seeds::DISTILL_DATA))?;
            let student = train_student(&[&data], &cfg.student_train(cfg.distill.loss, derive_seed(seed, seeds::STUDENT)))?.student;
            rows.push(SweepRow {
                episode: *episode,
                teacher_norm,
                student_seed: s,
                student_norm: mean_normalized(&student, cfg, sw.task, cfg.eval.episodes)?,
            });
        }
        log::info!("sweep checkpoint {episode}: teacher {teacher_norm:.3}");
    }
    Ok(SweepResult {
        task: sw.task,
        checkpoints: snapshots.iter().map(|(e, _)| *e).collect(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossRow {
    pub loss: DistillLoss,
    /// Mean over tasks of the normalized reward, one entry per seed.
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Mean ± std reported for the same loss on the real robot at full scale.
    pub reference: Option<(f64, f64)>,
}

pub fn reference_performance(loss: DistillLoss) -> Option<(f64, f64)> {
    match loss {
        DistillLoss::Mse => Some((0.71, 0.22)),
        DistillLoss::Kl { tau: 1.0 } => Some((0.76, 0.14)),
        DistillLoss::Kl { tau: 0.1 } => Some((0.68, 0.18)),
        DistillLoss::Kl { tau: 0.01 } => Some((0.77, 0.13)),
        DistillLoss::Kl { .. } => None,
    }
}

/// For every seed, draws one dataset per teacher and trains one multi-task
/// student per loss on the same data; students are scored by their mean
/// normalized reward over the teachers' tasks.
pub fn compare_losses(
    cfg: &PipelineConfig,
    teachers: &[Teacher],
    losses: &[DistillLoss],
    n_seeds: usize,
) -> Result<Vec<LossRow>> {
    if teachers.is_empty() || losses.is_empty() || n_seeds == 0 {
        return Err(Error::config("loss comparison needs teachers, losses and seeds"));
    }
    let tasks: Vec<Task> = teachers.iter().map(|t| t.task).collect();
    let configs = eval_configs(cfg, &tasks);
    let root = derive_seed(cfg.seed, 0xc0de_0000);
    let mut per_loss = vec![Vec::new(); losses.len()];
    for s in 0..n_seeds {
        let seed = derive_seed(root, s as u64);
        let datasets = teachers
            .iter()
            .enumerate()
            .map(|(i, t)| generate_dataset(cfg, t, cfg.distill.samples, derive_seed(seed, i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&DistillDataset> = datasets.iter().collect();
        for (li, &loss) in losses.iter().enumerate() {
            let student: Student = train_student(&refs, &cfg.student_train(loss, derive_seed(seed, 100)))?.student;
            let report = evaluate(&student, &configs, cfg.eval.episodes, derive_seed(cfg.seed, seeds::EVAL))?;
            let score = tasks.iter().map(|&t| report.mean_normalized(t)).sum::<f64>() / tasks.len() as f64;
            log::info!("loss {loss} seed {s}: {score:.3}");
            per_loss[li].push(score);
        }
    }
    Ok(losses
        .iter()
        .zip(per_loss)
        .map(|(&loss, per_seed)| {
            let sm = summarize(&per_seed);
            LossRow {
                loss,
                per_seed,
                mean: sm.mean,
                std: sm.std,
                reference: reference_performance(loss),
            }
        })
        .collect())
}

pub fn write_loss_table(path: &Path, rows: &[LossRow]) -> Result<()> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let (rm, rs) = r.reference.map_or((String::new(), String::new()), |(m, s)| (m.to_string(), s.to_string()));
            vec![r.loss.to_string(), f(r.mean), f(r.std), rm, rs]
        })
        .collect();
    write_csv(path, &["loss", "mean", "std", "reference_mean", "reference_std"], &body)
}
