use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arena::{ArenaConfig, Task};
use crate::container::sha256_hex;
use crate::distill::{DistillLoss, GenerationMode, OnPolicyConfig, StudentTrainConfig};
use crate::error::{Error, Result};
use crate::ppo::PpoConfig;
use crate::srl::{SrlSpec, SrlTrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Everything a run needs, read from a TOML file. Missing keys take their
/// defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub tasks: Vec<Task>,
    pub output_dir: PathBuf,
    pub arena: ArenaSettings,
    pub srl: SrlSettings,
    pub rl: RlSettings,
    pub distill: DistillSettings,
    pub eval: EvalSettings,
    pub finetune: FinetuneSettings,
    pub sweep: SweepSettings,
    pub compare: CompareSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArenaSettings {
    pub render_size: usize,
    pub episode_len: usize,
    /// Random backgrounds while collecting SRL data, training teachers and
    /// generating distillation data. Evaluation always uses the canonical
    /// background.
    pub domain_randomization: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SrlSettings {
    pub samples: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub state_dim: usize,
    pub reconstruction_weight: f64,
    pub inverse_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlSettings {
    pub budget_steps: usize,
    pub ppo: PpoConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillSettings {
    pub samples: usize,
    pub mode: GenerationMode,
    pub grid_stride: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: usize,
    pub val_fraction: f64,
    pub loss: DistillLoss,
    pub candidate_factor: f64,
    pub contact_limit: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub episodes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSettings {
    pub first: Task,
    pub second: Task,
    pub seeds: usize,
    pub first_budget: usize,
    pub second_budget: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub task: Task,
    pub budget_steps: usize,
    pub checkpoint_every: usize,
    pub seeds: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSettings {
    pub seeds: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            schema_version: SCHEMA_VERSION,
            seed: 42,
            tasks: Task::ALL.to_vec(),
            output_dir: PathBuf::from("runs/discorl"),
            arena: ArenaSettings::default(),
            srl: SrlSettings::default(),
            rl: RlSettings::default(),
            distill: DistillSettings::default(),
            eval: EvalSettings::default(),
            finetune: FinetuneSettings::default(),
            sweep: SweepSettings::default(),
            compare: CompareSettings::default(),
        }
    }
}

impl Default for ArenaSettings {
    fn default() -> Self {
        ArenaSettings {
            render_size: 32,
            episode_len: 250,
            domain_randomization: true,
        }
    }
}

impl Default for SrlSettings {
    fn default() -> Self {
        SrlSettings {
            samples: 5000,
            epochs: 20,
            batch_size: 32,
            lr: 2e-3,
            state_dim: 16,
            reconstruction_weight: 100.0,
            inverse_weight: 1.0,
        }
    }
}

impl Default for RlSettings {
    fn default() -> Self {
        RlSettings {
            budget_steps: 300_000,
            ppo: PpoConfig::default(),
        }
    }
}

impl Default for DistillSettings {
    fn default() -> Self {
        DistillSettings {
            samples: 10_000,
            mode: GenerationMode::OnPolicy,
            grid_stride: 0.1,
            epochs: 4,
            batch_size: 32,
            lr: 1e-3,
            hidden: 128,
            val_fraction: 0.1,
            loss: DistillLoss::Kl { tau: 0.01 },
            candidate_factor: 1.5,
            contact_limit: 10,
        }
    }
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings { episodes: 10 }
    }
}

impl Default for FinetuneSettings {
    fn default() -> Self {
        FinetuneSettings {
            first: Task::Reaching,
            second: Task::Circling,
            seeds: 5,
            first_budget: 300_000,
            second_budget: 300_000,
            eval_every: 20_480,
            eval_episodes: 5,
        }
    }
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            task: Task::Circling,
            budget_steps: 300_000,
            checkpoint_every: 200,
            seeds: 8,
            samples: 15_000,
        }
    }
}

impl Default for CompareSettings {
    fn default() -> Self {
        CompareSettings { seeds: 5 }
    }
}

fn positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::config(format!("{name} must be positive")));
    }
    Ok(())
}

fn positive_f(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::config(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.tasks.is_empty() {
            return Err(Error::config("task list is empty"));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if self.tasks[..i].contains(t) {
                return Err(Error::config(format!("task {t} listed twice")));
            }
        }
        positive("srl.samples", self.srl.samples)?;
        positive("srl.epochs", self.srl.epochs)?;
        positive("srl.batch_size", self.srl.batch_size)?;
        positive("srl.state_dim", self.srl.state_dim)?;
        positive_f("srl.lr", self.srl.lr)?;
        positive("rl.budget_steps", self.rl.budget_steps)?;
        positive("rl.ppo.rollout_steps", self.rl.ppo.rollout_steps)?;
        positive("rl.ppo.minibatch_size", self.rl.ppo.minibatch_size)?;
        positive_f("rl.ppo.lr", self.rl.ppo.lr)?;
        positive("distill.samples", self.distill.samples)?;
        positive("distill.epochs", self.distill.epochs)?;
        positive("distill.batch_size", self.distill.batch_size)?;
        positive("distill.hidden", self.distill.hidden)?;
        positive_f("distill.lr", self.distill.lr)?;
        positive_f("distill.grid_stride", self.distill.grid_stride)?;
        if !(0.0..1.0).contains(&self.distill.val_fraction) {
            return Err(Error::config("distill.val_fraction must be in [0, 1)"));
        }
        self.distill.loss.validate()?;
        positive("eval.episodes", self.eval.episodes)?;
        positive("finetune.first_budget", self.finetune.first_budget)?;
        positive("finetune.second_budget", self.finetune.second_budget)?;
        positive("finetune.eval_every", self.finetune.eval_every)?;
        positive("finetune.eval_episodes", self.finetune.eval_episodes)?;
        if self.finetune.first == self.finetune.second {
            return Err(Error::config("finetune needs two different tasks"));
        }
        positive("sweep.budget_steps", self.sweep.budget_steps)?;
        positive("sweep.checkpoint_every", self.sweep.checkpoint_every)?;
        positive("sweep.samples", self.sweep.samples)?;
        for task in Task::ALL {
            self.arena_config(task, true).validate()?;
        }
        Ok(())
    }

    /// Hash of the configuration, ignoring where the output goes.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        sha256_hex(c.to_toml().as_bytes())
    }

    /// Arena for `task`; `training` turns on domain randomization if
    /// configured.
    pub fn arena_config(&self, task: Task, training: bool) -> ArenaConfig {
        let mut c = ArenaConfig::new(task).with_randomization(training && self.arena.domain_randomization);
        c.render_size = self.arena.render_size;
        c.episode_len = self.arena.episode_len;
        c
    }

    pub fn srl_spec(&self, seed: u64) -> SrlSpec {
        SrlSpec {
            state_dim: self.srl.state_dim,
            render_size: self.arena.render_size,
            seed,
            ..SrlSpec::default()
        }
    }

    pub fn srl_train(&self, seed: u64) -> SrlTrainConfig {
        SrlTrainConfig {
            epochs: self.srl.epochs,
            batch_size: self.srl.batch_size,
            lr: self.srl.lr,
            reconstruction_weight: self.srl.reconstruction_weight,
            inverse_weight: self.srl.inverse_weight,
            seed,
        }
    }

    pub fn student_train(&self, loss: DistillLoss, seed: u64) -> StudentTrainConfig {
        StudentTrainConfig {
            epochs: self.distill.epochs,
            batch_size: self.distill.batch_size,
            lr: self.distill.lr,
            loss,
            val_fraction: self.distill.val_fraction,
            hidden: self.distill.hidden,
            seed,
        }
    }

    pub fn onpolicy(&self) -> OnPolicyConfig {
        OnPolicyConfig {
            candidate_factor: self.distill.candidate_factor,
            contact_limit: self.distill.contact_limit,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_roundtrips_through_toml() {
        let c = PipelineConfig::default();
        let text = c.to_toml();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn partial_files_take_defaults() {
        let c = PipelineConfig::from_toml("schema_version = 1\ntasks = [\"TC\"]\n[rl]\nbudget_steps = 1000\n").unwrap();
        assert_eq!(c.tasks, vec![Task::Circling]);
        assert_eq!(c.rl.budget_steps, 1000);
        assert_eq!(c.rl.ppo, PpoConfig::default());
        assert_eq!(c.srl, SrlSettings::default());
    }

    #[test]
    fn invalid_files_are_config_errors() {
        for text in [
            "schema_version = 2",
            "tasks = []",
            "tasks = [\"TR\", \"TR\"]",
            "bogus = 1",
            "[rl]\nbudget_steps = 0",
            "[distill.loss]\nkind = \"kl\"\ntau = 0.0",
            "tasks = [\"TX\"]",
        ] {
            assert!(matches!(PipelineConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn documented_defaults_match() {
        let readme = include_str!("../../../../README.md");
        let section = &readme[readme.find("## Configuration").unwrap()..];
        let start = section.find("```toml\n").unwrap() + 8;
        let end = start + section[start..].find("```").unwrap();
        assert_eq!(PipelineConfig::from_toml(&section[start..end]).unwrap(), PipelineConfig::default());
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
