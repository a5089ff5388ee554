//! The sequential learn-distill-forget pipeline and the experiments built on
//! top of it.

mod config;
pub mod experiments;
pub mod memory;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arena::Task;
use crate::container::{file_sha256, write_atomic, Container};
use crate::distill::{
    generate_gridwalker, generate_onpolicy, generate_random_walker, DistillDataset, EpochStats, GenerationMode,
    Student,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, write_report_csv, EvalReport};
use crate::ppo::{train_teacher, Agent, CurvePoint, PolicyParams, Teacher, TeacherRun};
use crate::rng::derive_seed;
use crate::srl::{collect_random_dataset, train_srl, SrlDataset, SrlEpochLoss, SrlModel};

pub use config::*;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const CONFIG_FILE: &str = "config.toml";
pub const STUDENT_FILE: &str = "student.bin";
pub const DATASET_DIR: &str = "datasets";
pub const SCRATCH_DIR: &str = "scratch";
pub const METRICS_DIR: &str = "metrics";

/// Per-stage seed offsets. Stage `s` of the task at position `i` in the task
/// list uses `derive_seed(root, 256 * i + s)`.
pub mod seeds {
    pub const SRL_DATA: u64 = 0;
    pub const SRL_TRAIN: u64 = 1;
    pub const POLICY_INIT: u64 = 2;
    pub const PPO: u64 = 3;
    pub const DISTILL_DATA: u64 = 4;
    pub const STUDENT: u64 = 5;
    /// Evaluation episodes are shared by every stage: `derive_seed(root, EVAL)`.
    pub const EVAL: u64 = 1 << 20;
}

pub fn stage_seed(root: u64, task_index: usize, stage: u64) -> u64 {
    derive_seed(root, 256 * task_index as u64 + stage)
}

pub fn dataset_file(task: Task) -> String {
    format!("{DATASET_DIR}/distill_{}.bin", task.code())
}

pub(crate) fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let err = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(header).map_err(err)?;
        for r in rows {
            w.write_record(r).map_err(err)?;
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(buf)
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    write_atomic(path, &csv_bytes(header, rows)?)
}

pub(crate) fn f(v: f64) -> String {
    format!("{v:.6}")
}

pub fn write_srl_losses(path: &Path, losses: &[SrlEpochLoss]) -> Result<()> {
    let rows: Vec<Vec<String>> = losses
        .iter()
        .enumerate()
        .map(|(i, l)| vec![(i + 1).to_string(), f(l.total), f(l.reconstruction), f(l.inverse)])
        .collect();
    write_csv(path, &["epoch", "total", "reconstruction", "inverse"], &rows)
}

pub fn write_curve(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let rows: Vec<Vec<String>> = curve
        .iter()
        .map(|p| vec![p.step.to_string(), p.episode.to_string(), f(p.mean_reward)])
        .collect();
    write_csv(path, &["step", "episode", "mean_reward"], &rows)
}

pub fn write_student_epochs(path: &Path, epochs: &[EpochStats]) -> Result<()> {
    let rows: Vec<Vec<String>> = epochs
        .iter()
        .map(|e| vec![e.epoch.to_string(), f(e.train_loss), f(e.val_loss)])
        .collect();
    write_csv(path, &["epoch", "train_loss", "val_loss"], &rows)
}

/// Random-policy data for one or more tasks, split evenly between them.
pub fn collect_srl_data(cfg: &PipelineConfig, tasks: &[Task], seed: u64) -> Result<SrlDataset> {
    let per = cfg.srl.samples.div_ceil(tasks.len());
    let mut out: Option<SrlDataset> = None;
    for (i, &task) in tasks.iter().enumerate() {
        let n = per.min(cfg.srl.samples - i * per);
        let d = collect_random_dataset(&cfg.arena_config(task, true), n, derive_seed(seed, i as u64))?;
        match &mut out {
            None => out = Some(d),
            Some(o) => o.transitions.extend(d.transitions),
        }
    }
    Ok(SrlDataset {
        seed,
        ..out.ok_or_else(|| Error::config("no tasks to collect SRL data for"))?
    })
}

/// State encoder for `tasks`, trained on fresh random-policy data.
pub fn train_encoder(cfg: &PipelineConfig, tasks: &[Task], data_seed: u64, train_seed: u64) -> Result<(SrlModel, Vec<SrlEpochLoss>)> {
    let data = collect_srl_data(cfg, tasks, data_seed)?;
    train_srl(&data, &cfg.srl_spec(train_seed), &cfg.srl_train(train_seed))
}

/// Encoder plus PPO teacher for one task, with all seeds derived from `root`
/// the same way the pipeline derives them for the first task.
pub fn train_task_teacher(cfg: &PipelineConfig, task: Task, root: u64) -> Result<(TeacherRun, Vec<SrlEpochLoss>)> {
    let (model, losses) = train_encoder(cfg, &[task], stage_seed(root, 0, seeds::SRL_DATA), stage_seed(root, 0, seeds::SRL_TRAIN))?;
    let agent = Agent::new(
        Some(model),
        PolicyParams::encoded(cfg.srl.state_dim, stage_seed(root, 0, seeds::POLICY_INIT))?,
    )?;
    let run = train_teacher(
        &cfg.arena_config(task, true),
        agent,
        cfg.rl.budget_steps,
        stage_seed(root, 0, seeds::PPO),
        &cfg.rl.ppo,
    )?;
    Ok((run, losses))
}

/// Distillation dataset in the configured generation mode.
pub fn generate_dataset(cfg: &PipelineConfig, teacher: &Teacher, n_samples: usize, seed: u64) -> Result<DistillDataset> {
    let env = cfg.arena_config(teacher.task, true);
    match cfg.distill.mode {
        GenerationMode::OnPolicy => generate_onpolicy(&env, teacher, n_samples, seed, &cfg.onpolicy()),
        GenerationMode::GridWalker => generate_gridwalker(&env, teacher, cfg.distill.grid_stride, seed),
        GenerationMode::RandomWalker => generate_random_walker(&env, teacher, n_samples, seed),
    }
}

pub fn eval_configs(cfg: &PipelineConfig, tasks: &[Task]) -> Vec<crate::arena::ArenaConfig> {
    tasks.iter().map(|&t| cfg.arena_config(t, false)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub task: Task,
    /// Relative path → sha256 of every artifact the stage wrote.
    pub artifacts: BTreeMap<String, String>,
}

/// Completed stages, persisted after each one so an interrupted run resumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn record(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// A task whose distillation dataset exists is closed: its environment
    /// and random-policy data may not be used again.
    pub fn is_closed(&self, task: Task) -> bool {
        self.stages.iter().any(|s| s.task == task && s.name.ends_with(":dataset"))
    }
}

fn stage_name(index: usize, task: Task, kind: &str) -> String {
    format!("{}-{}:{kind}", index + 1, task.code())
}

/// Result of a full pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub student: Student,
    /// Evaluations performed during this invocation, labelled by stage.
    pub reports: Vec<(String, EvalReport)>,
}

struct Runner<'a> {
    cfg: &'a PipelineConfig,
    out: PathBuf,
    manifest: Manifest,
    reports: Vec<(String, EvalReport)>,
}

impl Runner<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn save_manifest(&self) -> Result<()> {
        let text = toml::to_string(&self.manifest).map_err(|e| Error::Format(e.to_string()))?;
        write_atomic(&self.path(MANIFEST_FILE), text.as_bytes())
    }

    fn verify(&self, rec: &StageRecord) -> bool {
        rec.artifacts
            .iter()
            .all(|(rel, hash)| file_sha256(&self.path(rel)).is_ok_and(|h| &h == hash))
    }

    fn complete(&mut self, name: String, task: Task, artifacts: &[&str]) -> Result<()> {
        let mut map = BTreeMap::new();
        for rel in artifacts {
            map.insert(rel.to_string(), file_sha256(&self.path(rel))?);
        }
        self.manifest.stages.retain(|s| s.name != name);
        self.manifest.stages.push(StageRecord { name, task, artifacts: map });
        self.save_manifest()
    }

    fn guard_open(&self, task: Task) -> Result<()> {
        if self.manifest.is_closed(task) {
            return Err(Error::config(format!(
                "the {task} environment and its random-policy data are closed after its dataset was generated"
            )));
        }
        Ok(())
    }

    fn scratch(task: Task, file: &str) -> String {
        format!("{SCRATCH_DIR}/{}/{file}", task.code())
    }

    fn teacher_stage(&mut self, i: usize, task: Task) -> Result<()> {
        let name = stage_name(i, task, "teacher");
        if self.manifest.is_closed(task) || self.manifest.record(&name).is_some_and(|r| self.verify(r)) {
            return Ok(());
        }
        self.guard_open(task)?;
        let cfg = self.cfg;
        let root = cfg.seed;
        let data = collect_srl_data(cfg, &[task], stage_seed(root, i, seeds::SRL_DATA))?;
        let data_rel = Self::scratch(task, "srl_dataset.bin");
        data.to_container().save(&self.path(&data_rel))?;
        let seed = stage_seed(root, i, seeds::SRL_TRAIN);
        let (model, losses) = train_srl(&data, &cfg.srl_spec(seed), &cfg.srl_train(seed))?;
        drop(data);
        let model_rel = Self::scratch(task, "srl_model.bin");
        model.to_container().save(&self.path(&model_rel))?;
        write_srl_losses(&self.path(&format!("{METRICS_DIR}/srl_{}.csv", task.code())), &losses)?;

        let agent = Agent::new(
            Some(model),
            PolicyParams::encoded(cfg.srl.state_dim, stage_seed(root, i, seeds::POLICY_INIT))?,
        )?;
        let run = train_teacher(
            &cfg.arena_config(task, true),
            agent,
            cfg.rl.budget_steps,
            stage_seed(root, i, seeds::PPO),
            &cfg.rl.ppo,
        )?;
        write_curve(&self.path(&format!("{METRICS_DIR}/teacher_{}_curve.csv", task.code())), &run.curve)?;
        let teacher_rel = Self::scratch(task, "teacher.bin");
        run.teacher().to_container().save(&self.path(&teacher_rel))?;
        let report = evaluate(
            &run.agent,
            &eval_configs(cfg, &[task]),
            cfg.eval.episodes,
            derive_seed(root, seeds::EVAL),
        )?;
        let label = format!("teacher_{}", task.code());
        write_report_csv(&self.path(&format!("{METRICS_DIR}/eval_{label}.csv")), &[(label.clone(), report.clone())])?;
        log::info!("{name}: teacher normalized reward {:.3}", report.mean_normalized(task));
        self.reports.push((label, report));
        self.complete(name, task, &[&data_rel, &model_rel, &teacher_rel])
    }

    fn dataset_stage(&mut self, i: usize, task: Task) -> Result<()> {
        let name = stage_name(i, task, "dataset");
        if let Some(rec) = self.manifest.record(&name) {
            if self.verify(rec) {
                return Ok(());
            }
            return Err(Error::config(format!(
                "dataset for {task} is missing or modified and its environment is closed"
            )));
        }
        self.guard_open(task)?;
        let teacher_stage = stage_name(i, task, "teacher");
        let rec = self
            .manifest
            .record(&teacher_stage)
            .filter(|r| self.verify(r))
            .ok_or_else(|| Error::config(format!("teacher for {task} is missing")))?;
        let teacher_rel = Self::scratch(task, "teacher.bin");
        debug_assert!(rec.artifacts.contains_key(&teacher_rel));
        let teacher = Teacher::from_container(&Container::load(&self.path(&teacher_rel))?)?;
        let data = generate_dataset(self.cfg, &teacher, self.cfg.distill.samples, stage_seed(self.cfg.seed, i, seeds::DISTILL_DATA))?;
        let rel = dataset_file(task);
        data.to_container().save(&self.path(&rel))?;
        self.complete(name, task, &[&rel])?;
        // Only the distillation dataset outlives the task.
        let dir = self.path(&format!("{SCRATCH_DIR}/{}", task.code()));
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let scratch = self.path(SCRATCH_DIR);
        if fs::read_dir(&scratch).is_ok_and(|mut d| d.next().is_none()) {
            fs::remove_dir(&scratch).map_err(|e| Error::io(&scratch, e))?;
        }
        Ok(())
    }

    fn student_stage(&mut self, i: usize) -> Result<Option<Student>> {
        let cfg = self.cfg;
        let task = cfg.tasks[i];
        let name = stage_name(i, task, "student");
        let later_done = cfg.tasks[i + 1..]
            .iter()
            .enumerate()
            .any(|(j, &t)| self.manifest.record(&stage_name(i + 1 + j, t, "student")).is_some());
        if let Some(rec) = self.manifest.record(&name) {
            if later_done || self.verify(rec) {
                return Ok(None);
            }
        }
        let mut datasets = Vec::new();
        for (j, &t) in cfg.tasks[..=i].iter().enumerate() {
            let rec = self
                .manifest
                .record(&stage_name(j, t, "dataset"))
                .ok_or_else(|| Error::config(format!("dataset for {t} is missing")))?;
            if !self.verify(rec) {
                return Err(Error::config(format!("dataset for {t} was modified")));
            }
            datasets.push(DistillDataset::from_container(&Container::load(&self.path(&dataset_file(t)))?)?);
        }
        let refs: Vec<&DistillDataset> = datasets.iter().collect();
        let run = crate::distill::train_student(&refs, &cfg.student_train(cfg.distill.loss, stage_seed(cfg.seed, i, seeds::STUDENT)))?;
        drop(datasets);
        run.student.to_container().save(&self.path(STUDENT_FILE))?;
        write_student_epochs(&self.path(&format!("{METRICS_DIR}/student_{}_epochs.csv", i + 1)), &run.epochs)?;
        let report = evaluate(
            &run.student,
            &eval_configs(cfg, &cfg.tasks[..=i]),
            cfg.eval.episodes,
            derive_seed(cfg.seed, seeds::EVAL),
        )?;
        let label = format!("student_{}", i + 1);
        write_report_csv(&self.path(&format!("{METRICS_DIR}/eval_{label}.csv")), &[(label.clone(), report.clone())])?;
        for t in &report.tasks {
            log::info!("{name}: student normalized reward on {} {:.3}", t.task, t.mean_normalized());
        }
        self.reports.push((label, report));
        self.complete(name, task, &[STUDENT_FILE])?;
        Ok(Some(run.student))
    }
}

fn staged<T>(name: String, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(_) | Error::Stage { .. } => e,
        other => Error::Stage {
            stage: name,
            reason: other.to_string(),
        },
    })
}

/// Learns the configured tasks one after another. For each task: random
/// data, encoder and teacher (kept in a scratch area), then the distillation
/// dataset, after which the scratch area is deleted and the task's
/// environment is closed; finally a fresh student is distilled from every
/// dataset so far and evaluated on every task so far.
///
/// Re-running on the same output directory skips stages recorded as complete
/// in the manifest.
pub fn run_discorl(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let manifest_path = out.join(MANIFEST_FILE);
    let manifest = if manifest_path.exists() {
        let m = Manifest::load(&manifest_path)?;
        if m.config_hash != cfg.hash() {
            return Err(Error::config(format!(
                "{} belongs to a run with a different configuration",
                out.display()
            )));
        }
        m
    } else {
        Manifest {
            schema_version: SCHEMA_VERSION,
            config_hash: cfg.hash(),
            stages: Vec::new(),
        }
    };
    // The saved copy points at its own directory so that runs in different
    // places produce identical files.
    let saved = PipelineConfig {
        output_dir: PathBuf::from("."),
        ..cfg.clone()
    };
    write_atomic(&out.join(CONFIG_FILE), saved.to_toml().as_bytes())?;
    let mut runner = Runner {
        cfg,
        out,
        manifest,
        reports: Vec::new(),
    };
    runner.save_manifest()?;
    let mut student = None;
    for (i, &task) in cfg.tasks.iter().enumerate() {
        let r = runner.teacher_stage(i, task);
        staged(stage_name(i, task, "teacher"), r)?;
        let r = runner.dataset_stage(i, task);
        staged(stage_name(i, task, "dataset"), r)?;
        let r = runner.student_stage(i);
        if let Some(s) = staged(stage_name(i, task, "student"), r)? {
            student = Some(s);
        }
    }
    let student = match student {
        Some(s) => s,
        None => Student::from_container(&Container::load(&runner.path(STUDENT_FILE))?)?,
    };
    Ok(PipelineOutcome {
        student,
        reports: runner.reports,
    })
}

/// sha256 of every file under `dir`, keyed by relative path.
pub fn artifact_hashes(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for path in memory::files_under(dir)? {
        let rel = path.strip_prefix(dir).unwrap_or(&path).to_string_lossy().replace('\\', "/");
        out.insert(rel, file_sha256(&path)?);
    }
    Ok(out)
}
