//! Greedy evaluation against scripted oracle policies.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::arena::{Action, Arena, ArenaConfig, Observation, Task};
use crate::error::{Error, Result};
use crate::ppo::Agent;
use crate::rng::derive_seed;

/// Anything that maps a single observation to an action.
pub trait Policy {
    fn act(&self, obs: &Observation) -> Result<Action>;

    /// Stable identifier, typically a weight fingerprint.
    fn identity(&self) -> String;
}

impl Policy for Agent {
    fn act(&self, obs: &Observation) -> Result<Action> {
        self.greedy(obs)
    }

    fn identity(&self) -> String {
        self.params.fingerprint()
    }
}

fn stepped(pos: [f64; 2], action: Action, config: &ArenaConfig) -> ([f64; 2], bool) {
    let d = action.delta(config.step_size);
    let hw = config.half_width;
    let raw = [pos[0] + d[0], pos[1] + d[1]];
    let c = [raw[0].clamp(-hw, hw), raw[1].clamp(-hw, hw)];
    (c, c != raw)
}

fn norm(p: [f64; 2]) -> f64 {
    (p[0] * p[0] + p[1] * p[1]).sqrt()
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    norm([a[0] - b[0], a[1] - b[1]])
}

/// Highest-scoring action, lowest index on ties.
fn best_action(mut score: impl FnMut(Action) -> f64) -> Action {
    let mut best = (Action::ALL[0], f64::NEG_INFINITY);
    for a in Action::ALL {
        let s = score(a);
        if s > best.1 {
            best = (a, s);
        }
    }
    best.0
}

/// Scripted policy with access to the true simulator state, used as the
/// reference for the best achievable episode reward.
pub fn oracle_action(env: &Arena) -> Result<Action> {
    let config = env.config();
    let pos = env.state().robot_pos;
    match config.task {
        // Manhattan walk to the target; once there, the distance-minimising
        // step keeps hopping across it without leaving contact range.
        Task::Reaching => Ok(best_action(|a| {
            let (p, bumped) = stepped(pos, a, config);
            -dist(p, config.tr.target) - if bumped { 10.0 } else { 0.0 }
        })),
        Task::Circling => {
            let r = config.tc.r_circle;
            if (norm(pos) - r).abs() > config.step_size {
                // walk onto the circle first
                Ok(best_action(|a| -(norm(stepped(pos, a, config).0) - r).abs()))
            } else {
                // counter-clockwise tangent, with the radius error as a penalty
                let n = norm(pos).max(1e-9);
                let tangent = [-pos[1] / n, pos[0] / n];
                Ok(best_action(|a| {
                    let d = a.delta(1.0);
                    let (p, bumped) = stepped(pos, a, config);
                    d[0] * tangent[0] + d[1] * tangent[1] - 8.0 * (norm(p) - r).abs() - if bumped { 10.0 } else { 0.0 }
                }))
            }
        }
        Task::Escaping => {
            // Twice as fast as the chaser, the robot is safe orbiting the
            // centre; the search keeps it on the orbit and away from the chaser.
            let orbit = 0.65 * config.half_width;
            let leaf = |e: &Arena| {
                let s = e.state();
                let p = s.robot_pos;
                let c = s.chaser_pos.unwrap_or(e.config().te.chaser_start);
                dist(p, c) - (norm(p) - orbit).abs()
            };
            Ok(lookahead(env, ORACLE_DEPTH, &leaf)?.1)
        }
    }
}

const ORACLE_DEPTH: usize = 4;

/// Exhaustive search over action sequences on a copy of the simulator,
/// maximising summed reward plus a heuristic value at the leaves.
fn lookahead(env: &Arena, depth: usize, leaf: &dyn Fn(&Arena) -> f64) -> Result<(f64, Action)> {
    let mut best = (f64::NEG_INFINITY, Action::ALL[0]);
    for a in Action::ALL {
        let mut e = env.clone();
        let (r, done, _) = e.advance(a)?;
        let rest = if done {
            0.0
        } else if depth > 1 {
            lookahead(&e, depth - 1, leaf)?.0
        } else {
            leaf(&e)
        };
        if r + rest > best.0 {
            best = (r + rest, a);
        }
    }
    Ok(best)
}

/// Total reward of the oracle from the episode that `reset(seed)` starts.
pub fn oracle_reward(config: &ArenaConfig, seed: u64) -> Result<f64> {
    let cfg = eval_config(config);
    let mut env = Arena::new(cfg.clone(), seed)?;
    env.reset(seed);
    let mut total = 0.0;
    while !env.is_done() {
        let a = oracle_action(&env)?;
        total += env.advance(a)?.0;
    }
    Ok(total)
}

/// Evaluation always runs full-length episodes on the canonical background.
pub fn eval_config(config: &ArenaConfig) -> ArenaConfig {
    let mut cfg = config.clone();
    cfg.domain_randomization = false;
    cfg.contact_limit = None;
    cfg
}

/// `raw / oracle`, clamped to `[0, 1]`.
pub fn normalize(raw: f64, oracle: f64) -> f64 {
    if oracle > 0.0 {
        (raw / oracle).clamp(0.0, 1.0)
    } else if raw >= oracle {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskEval {
    pub task: Task,
    pub seeds: Vec<u64>,
    pub raw: Vec<f64>,
    pub oracle: Vec<f64>,
    pub normalized: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

pub fn summarize(v: &[f64]) -> Summary {
    if v.is_empty() {
        return Summary {
            mean: f64::NAN,
            std: f64::NAN,
            min: f64::NAN,
            max: f64::NAN,
        };
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    Summary {
        mean,
        std,
        min: v.iter().copied().fold(f64::INFINITY, f64::min),
        max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

impl TaskEval {
    pub fn raw_summary(&self) -> Summary {
        summarize(&self.raw)
    }

    pub fn normalized_summary(&self) -> Summary {
        summarize(&self.normalized)
    }

    pub fn mean_normalized(&self) -> f64 {
        self.normalized_summary().mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub policy: String,
    pub tasks: Vec<TaskEval>,
}

impl EvalReport {
    pub fn task(&self, task: Task) -> Option<&TaskEval> {
        self.tasks.iter().find(|t| t.task == task)
    }

    pub fn mean_normalized(&self, task: Task) -> f64 {
        self.task(task).map_or(f64::NAN, TaskEval::mean_normalized)
    }

    /// One row per task with raw and normalised summaries.
    pub fn write_csv(&self, w: impl Write, label: &str) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        write_summary_header(&mut out)?;
        for t in &self.tasks {
            write_summary_row(&mut out, label, &self.policy, t)?;
        }
        out.flush().map_err(|e| Error::Format(e.to_string()))
    }
}

pub(crate) fn write_summary_header<W: Write>(out: &mut csv::Writer<W>) -> Result<()> {
    out.write_record([
        "label", "policy", "task", "episodes", "raw_mean", "raw_std", "raw_min", "raw_max", "norm_mean",
        "norm_std", "norm_min", "norm_max",
    ])
    .map_err(|e| Error::Format(e.to_string()))
}

pub(crate) fn write_summary_row<W: Write>(out: &mut csv::Writer<W>, label: &str, policy: &str, t: &TaskEval) -> Result<()> {
    let r = t.raw_summary();
    let n = t.normalized_summary();
    let mut rec = vec![label.to_string(), policy.to_string(), t.task.to_string(), t.raw.len().to_string()];
    rec.extend([r.mean, r.std, r.min, r.max, n.mean, n.std, n.min, n.max].map(|v| format!("{v:.6}")));
    out.write_record(&rec).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_report_csv(path: &Path, rows: &[(String, EvalReport)]) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut out = csv::Writer::from_writer(&mut buf);
        write_summary_header(&mut out)?;
        for (label, report) in rows {
            for t in &report.tasks {
                write_summary_row(&mut out, label, &report.policy, t)?;
            }
        }
        out.flush().map_err(|e| Error::io(path, e))?;
    }
    crate::container::write_atomic(path, &buf)
}

/// Greedy rollout of `policy` from the start that `reset(seed)` produces.
pub fn episode_reward(policy: &dyn Policy, config: &ArenaConfig, seed: u64) -> Result<f64> {
    let cfg = eval_config(config);
    let mut env = Arena::new(cfg, seed)?;
    let mut obs = env.reset(seed);
    let mut total = 0.0;
    while !env.is_done() {
        let step = env.step(policy.act(&obs)?)?;
        total += step.reward;
        obs = step.observation;
    }
    Ok(total)
}

/// `n_episodes` greedy episodes on one task; episode `i` starts from
/// `reset(derive_seed(seed, i))`, the same start the oracle is scored on.
pub fn evaluate_task(policy: &dyn Policy, config: &ArenaConfig, n_episodes: usize, seed: u64) -> Result<TaskEval> {
    let seeds: Vec<u64> = (0..n_episodes as u64).map(|i| derive_seed(seed, i)).collect();
    let mut raw = Vec::with_capacity(n_episodes);
    let mut oracle = Vec::with_capacity(n_episodes);
    for &s in &seeds {
        raw.push(episode_reward(policy, config, s)?);
        oracle.push(oracle_reward(config, s)?);
    }
    let normalized = raw.iter().zip(&oracle).map(|(&r, &o)| normalize(r, o)).collect();
    Ok(TaskEval {
        task: config.task,
        seeds,
        raw,
        oracle,
        normalized,
    })
}

pub fn evaluate(policy: &dyn Policy, configs: &[ArenaConfig], n_episodes: usize, seed: u64) -> Result<EvalReport> {
    let tasks = configs
        .iter()
        .map(|c| evaluate_task(policy, c, n_episodes, seed))
        .collect::<Result<_>>()?;
    Ok(EvalReport {
        policy: policy.identity(),
        tasks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ppo::PolicyParams;

    /// Replays the oracle through the observation interface.
    struct OracleReplay {
        env: std::cell::RefCell<Arena>,
    }

    impl Policy for OracleReplay {
        fn act(&self, _obs: &Observation) -> Result<Action> {
            let mut env = self.env.borrow_mut();
            let a = oracle_action(&env)?;
            env.advance(a)?;
            Ok(a)
        }

        fn identity(&self) -> String {
            "oracle".into()
        }
    }

    #[test]
    fn oracle_scores_exactly_one_on_its_own_task() {
        for task in Task::ALL {
            let cfg = ArenaConfig::new(task);
            for i in 0..3 {
                let seed = derive_seed(9, i);
                let mut env = Arena::new(cfg.clone(), seed).unwrap();
                env.reset(seed);
                let p = OracleReplay {
                    env: std::cell::RefCell::new(env),
                };
                let raw = episode_reward(&p, &cfg, seed).unwrap();
                let oracle = oracle_reward(&cfg, seed).unwrap();
                assert_eq!(raw, oracle);
                assert_eq!(normalize(raw, oracle), 1.0);
            }
        }
    }

    #[test]
    fn oracles_score_well() {
        for task in Task::ALL {
            let cfg = ArenaConfig::new(task);
            let r: Vec<f64> = (0..10).map(|s| oracle_reward(&cfg, s).unwrap()).collect();
            let s = summarize(&r);
            assert!(s.min > 0.0, "{task}: {r:?}");
        }
        // the escaper is never caught from a start away from the chaser
        let cfg = ArenaConfig::new(Task::Escaping);
        let mut env = Arena::new(cfg.clone(), 0).unwrap();
        env.reset_to([0.5, 0.5], None).unwrap();
        let mut total = 0.0;
        while !env.is_done() {
            total += env.advance(oracle_action(&env).unwrap()).unwrap().0;
        }
        assert_eq!(total, 250.0);
    }

    #[test]
    fn random_policy_scores_near_zero_on_reaching() {
        let agent = Agent::new(None, PolicyParams::raw_pixels(32, 4).unwrap()).unwrap();
        let e = evaluate_task(&agent, &ArenaConfig::new(Task::Reaching), 10, 1).unwrap();
        assert_eq!(e.raw.len(), 10);
        assert!(e.mean_normalized() < 0.2, "{:?}", e.normalized);
    }

    #[test]
    fn normalization_is_clamped() {
        assert_eq!(normalize(300.0, 200.0), 1.0);
        assert_eq!(normalize(-5.0, 200.0), 0.0);
        assert_eq!(normalize(50.0, 200.0), 0.25);
    }

    #[test]
    fn summary_statistics() {
        let s = summarize(&[1.0, 3.0]);
        assert_eq!((s.mean, s.std, s.min, s.max), (2.0, 1.0, 1.0, 3.0));
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
