//! Deterministic 2-D arena with three navigation tasks.
//!
//! The arena is the square `[-half_width, half_width]²`. The robot moves a
//! fixed step along one axis per action and is clamped at the walls; hitting a
//! wall sets the `bumped` flag for that step. Observations are small top-down
//! RGB renders.

mod render;
mod reward;
mod trace;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Rng};

pub use render::{render, Observation, CHANNELS};
pub use reward::{reward, reward_tc, reward_te, reward_tr};
pub use trace::{EpisodeTrace, TraceRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    /// Target reaching.
    #[serde(rename = "TR")]
    Reaching,
    /// Target circling.
    #[serde(rename = "TC")]
    Circling,
    /// Target escaping.
    #[serde(rename = "TE")]
    Escaping,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Reaching, Task::Circling, Task::Escaping];

    pub fn code(self) -> &'static str {
        match self {
            Task::Reaching => "TR",
            Task::Circling => "TC",
            Task::Escaping => "TE",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "TR" => Ok(Task::Reaching),
            "TC" => Ok(Task::Circling),
            "TE" => Ok(Task::Escaping),
            _ => Err(Error::config(format!("unknown task `{s}` (expected TR, TC or TE)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Left = 0,
    Right = 1,
    Up = 2,
    Down = 3,
}

impl Action {
    pub const COUNT: usize = 4;
    pub const ALL: [Action; 4] = [Action::Left, Action::Right, Action::Up, Action::Down];

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::config(format!("action index {i} out of range")))
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn delta(self, step: f64) -> [f64; 2] {
        match self {
            Action::Left => [-step, 0.0],
            Action::Right => [step, 0.0],
            Action::Up => [0.0, step],
            Action::Down => [0.0, -step],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReachingParams {
    pub target: [f64; 2],
    pub contact_range: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CirclingParams {
    pub lambda: f64,
    pub r_circle: f64,
    /// Displacement window, in steps.
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscapingParams {
    pub chaser_speed: f64,
    pub catch_range: f64,
    pub chaser_start: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArenaConfig {
    pub half_width: f64,
    pub step_size: f64,
    pub episode_len: usize,
    pub render_size: usize,
    pub task: Task,
    pub tr: ReachingParams,
    pub tc: CirclingParams,
    pub te: EscapingParams,
    /// Redraw the background colour at every reset and step.
    pub domain_randomization: bool,
    /// End TR episodes after this many steps in contact with the target.
    /// Only used while recording distillation data.
    pub contact_limit: Option<usize>,
}

/// Background used whenever domain randomization is off.
pub const CANONICAL_BACKGROUND: [u8; 3] = [200, 200, 200];

impl ArenaConfig {
    pub fn new(task: Task) -> Self {
        ArenaConfig {
            half_width: 1.0,
            step_size: 0.1,
            episode_len: 250,
            render_size: 32,
            task,
            tr: ReachingParams {
                target: [0.6, 0.6],
                contact_range: 0.15,
            },
            tc: CirclingParams {
                lambda: 10.0,
                r_circle: 0.5,
                k: 5,
            },
            te: EscapingParams {
                chaser_speed: 0.05,
                catch_range: 0.3,
                chaser_start: [-1.0, -1.0],
            },
            domain_randomization: false,
            contact_limit: None,
        }
    }

    pub fn with_randomization(mut self, on: bool) -> Self {
        self.domain_randomization = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let hw = self.half_width;
        let ok = hw > 0.0
            && self.step_size > 0.0
            && self.step_size < hw
            && self.episode_len > 0
            && self.render_size >= 8
            && self.tc.r_circle > 0.0
            && self.tc.r_circle < hw
            && self.tc.k >= 1
            && self.te.catch_range > 0.0
            && self.te.chaser_speed >= 0.0
            && self.tr.contact_range > 0.0
            && in_bounds(self.tr.target, hw)
            && in_bounds(self.te.chaser_start, hw);
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid arena configuration: {self:?}")))
        }
    }
}

fn in_bounds(p: [f64; 2], hw: f64) -> bool {
    p.iter().all(|v| v.abs() <= hw)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArenaState {
    pub robot_pos: [f64; 2],
    /// Up to `k` previous robot positions, oldest first. The front is
    /// `z_{t-k}` (the start position while fewer than `k` steps were taken).
    pub position_history: VecDeque<[f64; 2]>,
    pub chaser_pos: Option<[f64; 2]>,
    /// Background colour, each channel a multiple of 1/255 in [0, 1].
    pub background_color: [f64; 3],
    pub t: usize,
    pub bumped: bool,
}

impl ArenaState {
    /// State at `t = 0` with the robot at `robot_pos`.
    pub fn start(config: &ArenaConfig, robot_pos: [f64; 2], background: [u8; 3]) -> Self {
        let mut history = VecDeque::with_capacity(config.tc.k + 1);
        history.push_back(robot_pos);
        ArenaState {
            robot_pos,
            position_history: history,
            chaser_pos: (config.task == Task::Escaping).then_some(config.te.chaser_start),
            background_color: background.map(|c| c as f64 / 255.0),
            t: 0,
            bumped: false,
        }
    }

    /// `z_{t-k}` as seen by the circling reward.
    pub fn lagged_position(&self) -> [f64; 2] {
        *self.position_history.front().unwrap_or(&self.robot_pos)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepInfo {
    pub bumped: bool,
    pub contact_with_target: bool,
    pub caught_by_chaser: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// One environment instance.
#[derive(Debug, Clone)]
pub struct Arena {
    config: ArenaConfig,
    state: ArenaState,
    rng: Rng,
    contacts: usize,
    done: bool,
}

impl Arena {
    pub fn new(config: ArenaConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let state = ArenaState::start(&config, [0.0, 0.0], CANONICAL_BACKGROUND);
        let mut arena = Arena {
            config,
            state,
            rng: rng_from_seed(seed),
            contacts: 0,
            done: false,
        };
        arena.reset(seed);
        Ok(arena)
    }

    pub fn config(&self) -> &ArenaConfig {
        &self.config
    }

    pub fn state(&self) -> &ArenaState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Starts a new episode from a uniformly random robot position.
    pub fn reset(&mut self, seed: u64) -> Observation {
        self.rng = rng_from_seed(seed);
        let hw = self.config.half_width;
        let pos = [self.rng.gen_range(-hw..=hw), self.rng.gen_range(-hw..=hw)];
        let bg = self.draw_background();
        self.state = ArenaState::start(&self.config, pos, bg);
        self.contacts = 0;
        self.done = false;
        self.observation()
    }

    /// Continues with the internal random stream instead of reseeding.
    pub fn reset_next(&mut self) -> Observation {
        let seed = self.rng.gen();
        self.reset(seed)
    }

    /// Resets to an explicit robot (and, for TE, chaser) position.
    pub fn reset_to(&mut self, robot_pos: [f64; 2], chaser_pos: Option<[f64; 2]>) -> Result<Observation> {
        let hw = self.config.half_width;
        if !in_bounds(robot_pos, hw) || chaser_pos.is_some_and(|c| !in_bounds(c, hw)) {
            return Err(Error::config("reset position outside the arena"));
        }
        let bg = self.draw_background();
        self.state = ArenaState::start(&self.config, robot_pos, bg);
        if self.config.task == Task::Escaping {
            if let Some(c) = chaser_pos {
                self.state.chaser_pos = Some(c);
            }
        }
        self.contacts = 0;
        self.done = false;
        Ok(self.observation())
    }

    pub fn observation(&self) -> Observation {
        render(&self.state, &self.config)
    }

    fn draw_background(&mut self) -> [u8; 3] {
        if self.config.domain_randomization {
            [self.rng.gen(), self.rng.gen(), self.rng.gen()]
        } else {
            CANONICAL_BACKGROUND
        }
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        let (reward, done, info) = self.advance(action)?;
        Ok(StepResult {
            observation: self.observation(),
            reward,
            done,
            info,
        })
    }

    /// Advances the simulation without rendering.
    pub fn advance(&mut self, action: Action) -> Result<(f64, bool, StepInfo)> {
        if self.done {
            return Err(Error::usage("step called on a finished episode"));
        }
        let cfg = &self.config;
        let hw = cfg.half_width;
        let d = action.delta(cfg.step_size);
        let raw = [self.state.robot_pos[0] + d[0], self.state.robot_pos[1] + d[1]];
        let clamped = [raw[0].clamp(-hw, hw), raw[1].clamp(-hw, hw)];
        self.state.bumped = raw != clamped;
        self.state.robot_pos = clamped;
        if cfg.domain_randomization {
            let bg = [self.rng.gen::<u8>(), self.rng.gen::<u8>(), self.rng.gen::<u8>()];
            self.state.background_color = bg.map(|c| c as f64 / 255.0);
        }
        if let Some(chaser) = self.state.chaser_pos {
            self.state.chaser_pos = Some(chaser_policy(chaser, clamped, cfg));
        }
        let cfg = &self.config;
        let r = reward(&self.state, cfg);
        let info = StepInfo {
            bumped: self.state.bumped,
            contact_with_target: cfg.task == Task::Reaching && dist(clamped, cfg.tr.target) <= cfg.tr.contact_range,
            caught_by_chaser: self
                .state
                .chaser_pos
                .is_some_and(|c| dist(clamped, c) <= cfg.te.catch_range),
        };
        let hist = &mut self.state.position_history;
        hist.push_back(clamped);
        while hist.len() > cfg.tc.k {
            hist.pop_front();
        }
        self.state.t += 1;
        if info.contact_with_target {
            self.contacts += 1;
        }
        let contact_stop = cfg.task == Task::Reaching && cfg.contact_limit.is_some_and(|n| self.contacts >= n);
        self.done = self.state.t >= cfg.episode_len || contact_stop;
        Ok((r, self.done, info))
    }
}

pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Greedy pursuit: the chaser moves `chaser_speed` straight towards the robot
/// without overshooting, then is clamped to the arena.
pub fn chaser_policy(chaser: [f64; 2], robot: [f64; 2], config: &ArenaConfig) -> [f64; 2] {
    let dx = robot[0] - chaser[0];
    let dy = robot[1] - chaser[1];
    let d = (dx * dx + dy * dy).sqrt();
    if d == 0.0 {
        return chaser;
    }
    let s = config.te.chaser_speed.min(d) / d;
    let hw = config.half_width;
    [
        (chaser[0] + dx * s).clamp(-hw, hw),
        (chaser[1] + dy * s).clamp(-hw, hw),
    ]
}

/// Origin-centred lattice of robot positions with spacing `stride`, covering
/// the arena; rows run from the top (largest y) down, left to right.
pub fn grid_positions(config: &ArenaConfig, stride: f64) -> Result<Vec<[f64; 2]>> {
    let width = 2.0 * config.half_width;
    if !(stride > 0.0 && stride <= width) {
        return Err(Error::config(format!("grid stride {stride} must be in (0, {width}]")));
    }
    let m = (config.half_width / stride + 1e-9).floor() as i64;
    let coord = |i: i64| (i as f64 * stride).clamp(-config.half_width, config.half_width);
    let mut out = Vec::with_capacity(((2 * m + 1) * (2 * m + 1)) as usize);
    for iy in (-m..=m).rev() {
        for ix in -m..=m {
            out.push([coord(ix), coord(iy)]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centered(task: Task) -> Arena {
        let mut a = Arena::new(ArenaConfig::new(task), 0).unwrap();
        a.reset_to([0.0, 0.0], None).unwrap();
        a
    }

    #[test]
    fn fixed_seed_fixed_start() {
        let mut a = Arena::new(ArenaConfig::new(Task::Reaching), 1).unwrap();
        let mut b = Arena::new(ArenaConfig::new(Task::Reaching), 99).unwrap();
        a.reset(5);
        b.reset(5);
        assert_eq!(a.state(), b.state());
    }

    #[test]
    fn resets_cover_all_quadrants() {
        let mut a = Arena::new(ArenaConfig::new(Task::Reaching), 0).unwrap();
        let mut counts = [0usize; 4];
        for s in 0..10_000u64 {
            a.reset(s);
            let [x, y] = a.state().robot_pos;
            counts[(x >= 0.0) as usize * 2 + (y >= 0.0) as usize] += 1;
        }
        // chi-square against uniform, 3 dof, 0.1% critical value 16.27
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - 2500.0).powi(2) / 2500.0).sum();
        assert!(chi2 < 16.27, "{counts:?} chi2={chi2}");
    }

    #[test]
    fn te_reset_puts_chaser_at_start() {
        let mut a = Arena::new(ArenaConfig::new(Task::Escaping), 0).unwrap();
        a.reset(3);
        assert_eq!(a.state().chaser_pos, Some([-1.0, -1.0]));
        assert_eq!(Arena::new(ArenaConfig::new(Task::Reaching), 0).unwrap().state().chaser_pos, None);
    }

    #[test]
    fn moving_right_from_center() {
        let mut a = centered(Task::Reaching);
        let r = a.step(Action::Right).unwrap();
        assert!((a.state().robot_pos[0] - 0.1).abs() < 1e-12);
        assert_eq!(a.state().robot_pos[1], 0.0);
        assert!(!r.info.bumped);
    }

    #[test]
    fn bumping_the_right_wall() {
        let mut a = centered(Task::Reaching);
        a.reset_to([1.0, 0.0], None).unwrap();
        let r = a.step(Action::Right).unwrap();
        assert_eq!(a.state().robot_pos, [1.0, 0.0]);
        assert!(r.info.bumped);
        assert_eq!(r.reward, -1.0);
    }

    #[test]
    fn episode_ends_after_episode_len_steps() {
        let mut a = Arena::new(ArenaConfig::new(Task::Circling).with_randomization(true), 4).unwrap();
        let mut rng = rng_from_seed(4);
        let mut steps = 0;
        loop {
            let r = a.step(Action::from_index(rng.gen_range(0..4)).unwrap()).unwrap();
            steps += 1;
            if r.done {
                break;
            }
        }
        assert_eq!(steps, 250);
        assert_eq!(a.state().t, 250);
        assert!(matches!(a.step(Action::Up), Err(Error::Usage(_))));
    }

    #[test]
    fn contact_limit_ends_reaching_episodes() {
        let mut cfg = ArenaConfig::new(Task::Reaching);
        cfg.contact_limit = Some(10);
        let mut a = Arena::new(cfg, 0).unwrap();
        a.reset_to([0.6, 0.6], None).unwrap();
        let mut n = 0;
        loop {
            let act = if n % 2 == 0 { Action::Right } else { Action::Left };
            n += 1;
            if a.step(act).unwrap().done {
                break;
            }
        }
        assert_eq!(n, 10);
    }

    #[test]
    fn chaser_moves_toward_robot() {
        let cfg = ArenaConfig {
            te: EscapingParams {
                chaser_speed: 0.5,
                ..ArenaConfig::new(Task::Escaping).te
            },
            ..ArenaConfig::new(Task::Escaping)
        };
        let hw3 = ArenaConfig {
            half_width: 3.0,
            ..cfg.clone()
        };
        assert_eq!(chaser_policy([0.0, 0.0], [3.0, 0.0], &hw3), [0.5, 0.0]);
        assert_eq!(chaser_policy([0.2, 0.3], [0.2, 0.3], &cfg), [0.2, 0.3]);
    }

    #[test]
    fn chaser_closes_in_on_a_stationary_robot() {
        let cfg = ArenaConfig::new(Task::Escaping);
        let robot = [0.7, -0.2];
        let mut c = cfg.te.chaser_start;
        let mut last = dist(c, robot);
        for _ in 0..100 {
            c = chaser_policy(c, robot, &cfg);
            let d = dist(c, robot);
            assert!(d <= last);
            last = d;
        }
        assert!(last < 1e-9);
    }

    #[test]
    fn grid_counts() {
        let cfg = ArenaConfig::new(Task::Reaching);
        let g = grid_positions(&cfg, 1.0).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], [-1.0, 1.0]);
        assert_eq!(g[8], [1.0, -1.0]);
        assert_eq!(grid_positions(&cfg, 0.25).unwrap().len(), 81);
        assert_eq!(grid_positions(&cfg, 2.0).unwrap(), vec![[0.0, 0.0]]);
        assert_eq!(grid_positions(&cfg, 0.1).unwrap().len(), 441);
        assert!(grid_positions(&cfg, 0.0).is_err());
        assert!(grid_positions(&cfg, 2.5).is_err());
        for p in grid_positions(&cfg, 0.3).unwrap() {
            assert!(p[0].abs() <= 1.0 && p[1].abs() <= 1.0);
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut cfg = ArenaConfig::new(Task::Circling);
        cfg.tc.r_circle = 1.5;
        assert!(Arena::new(cfg, 0).is_err());
        let mut cfg = ArenaConfig::new(Task::Reaching);
        cfg.step_size = 2.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn randomization_changes_background_each_step() {
        let mut a = Arena::new(ArenaConfig::new(Task::Reaching).with_randomization(true), 2).unwrap();
        let mut seen = std::collections::HashSet::new();
        for _ in 0..20 {
            a.step(Action::Up).unwrap();
            seen.insert(a.state().background_color.map(f64::to_bits));
        }
        assert!(seen.len() > 15);
        let mut b = Arena::new(ArenaConfig::new(Task::Reaching), 2).unwrap();
        b.step(Action::Up).unwrap();
        assert_eq!(b.state().background_color, CANONICAL_BACKGROUND.map(|c| c as f64 / 255.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn robot_stays_in_bounds_and_bump_means_clamped(
                seed in 0u64..1000,
                actions in proptest::collection::vec(0usize..4, 1..200),
            ) {
                let mut a = Arena::new(ArenaConfig::new(Task::Escaping), seed).unwrap();
                for i in actions {
                    let before = a.state().robot_pos;
                    let act = Action::from_index(i).unwrap();
                    let r = a.step(act).unwrap();
                    let d = act.delta(0.1);
                    let raw = [before[0] + d[0], before[1] + d[1]];
                    let outside = raw.iter().any(|v| v.abs() > 1.0);
                    prop_assert_eq!(r.info.bumped, outside);
                    let p = a.state().robot_pos;
                    prop_assert!(p[0].abs() <= 1.0 && p[1].abs() <= 1.0);
                    prop_assert!(a.state().position_history.len() <= 5);
                    let c = a.state().chaser_pos.unwrap();
                    prop_assert!(c[0].abs() <= 1.0 && c[1].abs() <= 1.0);
                    if r.done { break; }
                }
            }
        }
    }
}
