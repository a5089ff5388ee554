use super::{dist, ArenaConfig, ArenaState, Task};

/// Reward of the configured task for a state that has just been stepped into.
pub fn reward(state: &ArenaState, config: &ArenaConfig) -> f64 {
    match config.task {
        Task::Reaching => reward_tr(state, config),
        Task::Circling => reward_tc(state, config),
        Task::Escaping => reward_te(state, config),
    }
}

/// `-1` on a bump, `+1` within contact range of the target, else `0`.
pub fn reward_tr(state: &ArenaState, config: &ArenaConfig) -> f64 {
    if state.bumped {
        -1.0
    } else if dist(state.robot_pos, config.tr.target) <= config.tr.contact_range {
        1.0
    } else {
        0.0
    }
}

/// Circling reward:
/// `λ·(1 − λ(‖z_t‖ − r)²)·‖z_t − z_{t−k}‖² + λ²·R_bump`, with `z` measured
/// from the arena centre and `R_bump = −1` on a bump.
pub fn reward_tc(state: &ArenaState, config: &ArenaConfig) -> f64 {
    let lambda = config.tc.lambda;
    let z = state.robot_pos;
    let lag = state.lagged_position();
    let radius = (z[0] * z[0] + z[1] * z[1]).sqrt();
    let on_circle = 1.0 - lambda * (radius - config.tc.r_circle).powi(2);
    let moved = (z[0] - lag[0]).powi(2) + (z[1] - lag[1]).powi(2);
    let bump = if state.bumped { -1.0 } else { 0.0 };
    lambda * on_circle * moved + lambda * lambda * bump
}

/// `-1` on a bump or within catch range of the chaser, else `+1`.
pub fn reward_te(state: &ArenaState, config: &ArenaConfig) -> f64 {
    let caught = state
        .chaser_pos
        .is_some_and(|c| dist(state.robot_pos, c) <= config.te.catch_range);
    if state.bumped || caught {
        -1.0
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arena::CANONICAL_BACKGROUND;

    fn state(task: Task, pos: [f64; 2]) -> (ArenaState, ArenaConfig) {
        let cfg = ArenaConfig::new(task);
        (ArenaState::start(&cfg, pos, CANONICAL_BACKGROUND), cfg)
    }

    #[test]
    fn reaching() {
        let (mut s, cfg) = state(Task::Reaching, [0.6, 0.6]);
        assert_eq!(reward_tr(&s, &cfg), 1.0);
        s.robot_pos = [0.0, 0.0];
        assert_eq!(reward_tr(&s, &cfg), 0.0);
        s.robot_pos = [-1.0, 0.0];
        s.bumped = true;
        assert_eq!(reward_tr(&s, &cfg), -1.0);
        // bump dominates contact
        s.robot_pos = [0.6, 0.6];
        assert_eq!(reward_tr(&s, &cfg), -1.0);
    }

    #[test]
    fn circling_worked_examples() {
        let (mut s, cfg) = state(Task::Circling, [0.5, 0.0]);
        assert_eq!(reward_tc(&s, &cfg), 0.0);
        // ‖z_t - z_{t-k}‖² = 0.04 with ‖z_t‖ = r_circle
        s.position_history[0] = [0.5, 0.2];
        assert!((reward_tc(&s, &cfg) - 0.4).abs() < 1e-12);
        s.bumped = true;
        assert!((reward_tc(&s, &cfg) + 99.6).abs() < 1e-12);
    }

    #[test]
    fn escaping() {
        let (mut s, cfg) = state(Task::Escaping, [0.0, 0.0]);
        s.chaser_pos = Some([0.9, 0.0]);
        assert_eq!(reward_te(&s, &cfg), 1.0);
        s.chaser_pos = Some([0.2, 0.0]);
        assert_eq!(reward_te(&s, &cfg), -1.0);
        s.chaser_pos = Some([0.9, 0.0]);
        s.bumped = true;
        assert_eq!(reward_te(&s, &cfg), -1.0);
    }
}
