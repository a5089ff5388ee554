use super::{ArenaConfig, ArenaState, Task};
use crate::container::Container;
use crate::nn::Tensor;

pub const CHANNELS: usize = 3;

const RED: [u8; 3] = [255, 0, 0];
const BLUE: [u8; 3] = [0, 0, 255];
const ORANGE: [u8; 3] = [255, 128, 0];
const BLACK: [u8; 3] = [0, 0, 0];

/// Half-extent, in pixels, of the task marker (7×7) and the robot (5×5).
const MARKER_RADIUS: i64 = 3;
const ROBOT_RADIUS: i64 = 2;

/// Rendered top-down view, stored channel-major (`[3, size, size]`) as 8-bit
/// levels; pixel values are `level / 255` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Observation {
    size: usize,
    levels: Vec<u8>,
}

impl Observation {
    pub fn from_levels(size: usize, levels: Vec<u8>) -> Option<Self> {
        (levels.len() == CHANNELS * size * size).then_some(Observation { size, levels })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn levels(&self) -> &[u8] {
        &self.levels
    }

    pub fn value(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.levels[(channel * self.size + row) * self.size + col] as f64 / 255.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.levels.iter().map(|&v| v as f64 / 255.0).collect()
    }

    pub fn write_f64(&self, out: &mut Vec<f64>) {
        out.extend(self.levels.iter().map(|&v| v as f64 / 255.0));
    }

    pub fn shape(&self) -> [usize; 3] {
        [CHANNELS, self.size, self.size]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, CHANNELS, self.size, self.size], self.to_f64()).expect("observation shape")
    }

    /// Debug dump as an f64 tensor container.
    pub fn to_container(&self) -> Container {
        let mut c = Container::new("observation");
        c.push_f64("pixels", self.shape().to_vec(), self.to_f64());
        c
    }

    fn put(&mut self, row: i64, col: i64, rgb: [u8; 3]) {
        let s = self.size as i64;
        if row < 0 || col < 0 || row >= s || col >= s {
            return;
        }
        let (row, col) = (row as usize, col as usize);
        for (c, &v) in rgb.iter().enumerate() {
            self.levels[(c * self.size + row) * self.size + col] = v;
        }
    }

    fn square(&mut self, center: (i64, i64), radius: i64, rgb: [u8; 3]) {
        for r in center.0 - radius..=center.0 + radius {
            for c in center.1 - radius..=center.1 + radius {
                self.put(r, c, rgb);
            }
        }
    }
}

/// Pixel `(row, col)` of an arena coordinate; the frame occupies the outermost
/// pixel ring and positions map onto the remaining interior.
pub fn to_pixel(pos: [f64; 2], config: &ArenaConfig) -> (i64, i64) {
    let span = (config.render_size - 3) as f64;
    let hw = config.half_width;
    let col = 1 + ((pos[0] + hw) / (2.0 * hw) * span).round() as i64;
    let row = 1 + ((hw - pos[1]) / (2.0 * hw) * span).round() as i64;
    (row, col)
}

/// Draw order: background, red frame, task marker, robot.
pub fn render(state: &ArenaState, config: &ArenaConfig) -> Observation {
    let n = config.render_size;
    let bg = state.background_color.map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8);
    let mut levels = vec![0u8; CHANNELS * n * n];
    for (c, plane) in levels.chunks_mut(n * n).enumerate() {
        plane.fill(bg[c]);
    }
    let mut obs = Observation { size: n, levels };
    let last = n as i64 - 1;
    for i in 0..=last {
        obs.put(0, i, RED);
        obs.put(last, i, RED);
        obs.put(i, 0, RED);
        obs.put(i, last, RED);
    }
    let (marker_pos, color) = match config.task {
        Task::Reaching => (config.tr.target, RED),
        Task::Circling => ([0.0, 0.0], BLUE),
        Task::Escaping => (state.chaser_pos.unwrap_or(config.te.chaser_start), ORANGE),
    };
    obs.square(to_pixel(marker_pos, config), MARKER_RADIUS, color);
    obs.square(to_pixel(state.robot_pos, config), ROBOT_RADIUS, BLACK);
    obs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arena::{Arena, CANONICAL_BACKGROUND};
    use proptest::prelude::*;

    fn obs_at(task: Task, pos: [f64; 2]) -> Observation {
        let cfg = ArenaConfig::new(task);
        render(&ArenaState::start(&cfg, pos, CANONICAL_BACKGROUND), &cfg)
    }

    fn marker_pixels(obs: &Observation, rgb: [u8; 3]) -> usize {
        let n = obs.size();
        (1..n - 1)
            .flat_map(|r| (1..n - 1).map(move |c| (r, c)))
            .filter(|&(r, c)| (0..3).all(|ch| obs.levels()[(ch * n + r) * n + c] == rgb[ch]))
            .count()
    }

    #[test]
    fn rendering_is_deterministic_and_in_range() {
        let a = obs_at(Task::Escaping, [0.3, -0.4]);
        assert_eq!(a, obs_at(Task::Escaping, [0.3, -0.4]));
        assert!(a.to_f64().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a.shape(), [3, 32, 32]);
    }

    #[test]
    fn tasks_differ_only_around_their_markers() {
        let pos = [-0.5, -0.5];
        let tr = obs_at(Task::Reaching, pos);
        let tc = obs_at(Task::Circling, pos);
        let cfg = ArenaConfig::new(Task::Reaching);
        let (tr_r, tr_c) = to_pixel(cfg.tr.target, &cfg);
        let (tc_r, tc_c) = to_pixel([0.0, 0.0], &cfg);
        let near = |r: i64, c: i64, (mr, mc): (i64, i64)| (r - mr).abs() <= MARKER_RADIUS && (c - mc).abs() <= MARKER_RADIUS;
        let n = 32;
        let mut diffs = 0;
        for r in 0..n {
            for c in 0..n {
                let differs = (0..3).any(|ch| tr.value(ch, r, c) != tc.value(ch, r, c));
                if differs {
                    diffs += 1;
                    let (ri, ci) = (r as i64, c as i64);
                    assert!(near(ri, ci, (tr_r, tr_c)) || near(ri, ci, (tc_r, tc_c)), "pixel ({r},{c})");
                }
            }
        }
        assert_eq!(diffs, 2 * 49);
    }

    #[test]
    fn frame_is_red() {
        let o = obs_at(Task::Circling, [0.0, 0.5]);
        for i in 0..32 {
            assert_eq!((o.value(0, 0, i), o.value(1, 0, i), o.value(2, 0, i)), (1.0, 0.0, 0.0));
            assert_eq!((o.value(0, i, 31), o.value(1, i, 31)), (1.0, 0.0));
        }
    }

    proptest! {
        #[test]
        fn marker_always_visible(x in -1.0f64..=1.0, y in -1.0f64..=1.0, cx in -1.0f64..=1.0, cy in -1.0f64..=1.0) {
            prop_assert!(marker_pixels(&obs_at(Task::Reaching, [x, y]), RED) >= 1);
            prop_assert!(marker_pixels(&obs_at(Task::Circling, [x, y]), BLUE) >= 1);
            let cfg = ArenaConfig::new(Task::Escaping);
            let mut arena = Arena::new(cfg, 0).unwrap();
            let o = arena.reset_to([x, y], Some([cx, cy])).unwrap();
            let n = o.size();
            let orange = (0..n).flat_map(|r| (0..n).map(move |c| (r, c)))
                .filter(|&(r, c)| (0..3).all(|ch| o.levels()[(ch * n + r) * n + c] == ORANGE[ch]))
                .count();
            prop_assert!(orange >= 1);
        }
    }
}
