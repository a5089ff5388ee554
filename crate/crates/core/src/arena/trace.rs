use std::path::Path;

use super::Task;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub action: usize,
    pub reward: f64,
    pub bumped: bool,
}

/// Per-step record of one episode, exportable as CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub task: Task,
    pub rows: Vec<TraceRow>,
}

impl EpisodeTrace {
    pub fn new(task: Task) -> Self {
        EpisodeTrace { task, rows: Vec::new() }
    }

    pub fn total_reward(&self) -> f64 {
        self.rows.iter().map(|r| r.reward).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,y,action,reward,bumped,task\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.t, r.x, r.y, r.action, r.reward, r.bumped as u8, self.task
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
