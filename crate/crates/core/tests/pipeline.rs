use std::fs;
use std::path::Path;

use discorl::arena::Task;
use discorl::distill::DistillLoss;
use discorl::error::Error;
use discorl::pipeline::experiments::{compare_losses, run_checkpoint_sweep, run_finetune_baseline};
use discorl::pipeline::memory::{memory_report, ArtifactClass};
use discorl::pipeline::{artifact_hashes, run_discorl, train_task_teacher, PipelineConfig};

fn tiny(tasks: &[Task], out: &Path) -> PipelineConfig {
    let mut c = PipelineConfig {
        tasks: tasks.to_vec(),
        output_dir: out.to_path_buf(),
        ..PipelineConfig::default()
    };
    c.arena.episode_len = 40;
    c.srl.samples = 64;
    c.srl.epochs = 1;
    c.srl.batch_size = 16;
    c.rl.budget_steps = 160;
    c.rl.ppo.rollout_steps = 80;
    c.rl.ppo.minibatch_size = 40;
    c.distill.samples = 120;
    c.distill.epochs = 1;
    c.distill.hidden = 8;
    c.eval.episodes = 1;
    c.finetune.seeds = 1;
    c.finetune.first_budget = 80;
    c.finetune.second_budget = 160;
    c.finetune.eval_every = 80;
    c.finetune.eval_episodes = 1;
    c.sweep.budget_steps = 160;
    c.sweep.checkpoint_every = 2;
    c.sweep.seeds = 1;
    c.sweep.samples = 60;
    c
}

fn persistent(dir: &Path) -> Vec<String> {
    artifact_hashes(dir)
        .unwrap()
        .into_keys()
        .filter(|k| k.ends_with(".bin"))
        .collect()
}

#[test]
fn two_task_run_keeps_only_datasets_and_student() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(&[Task::Reaching, Task::Circling], dir.path());
    let out = run_discorl(&cfg).unwrap();
    assert_eq!(
        persistent(dir.path()),
        ["datasets/distill_TC.bin", "datasets/distill_TR.bin", "student.bin"]
    );
    assert!(!dir.path().join("scratch").exists());
    assert_eq!(out.student.tasks, [Task::Reaching, Task::Circling]);
    let labels: Vec<&str> = out.reports.iter().map(|(l, _)| l.as_str()).collect();
    assert_eq!(labels, ["teacher_TR", "student_1", "teacher_TC", "student_2"]);
    assert_eq!(out.reports[3].1.tasks.len(), 2);
    for name in ["srl_TR.csv", "teacher_TC_curve.csv", "student_2_epochs.csv", "eval_student_2.csv"] {
        let text = fs::read_to_string(dir.path().join("metrics").join(name)).unwrap();
        assert!(text.lines().count() >= 2, "{name}");
    }
    let report = memory_report(dir.path()).unwrap();
    assert_eq!(report.bytes_of(ArtifactClass::Teacher), 0);
    assert_eq!(report.bytes_of(ArtifactClass::Srl), 0);
    assert!(report.bytes_of(ArtifactClass::Datasets) > 0);
    assert!(report.bytes_of(ArtifactClass::Student) > 0);
}

#[test]
fn rerun_resumes_without_redoing_stages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(&[Task::Reaching], dir.path());
    let first = run_discorl(&cfg).unwrap();
    let hashes = artifact_hashes(dir.path()).unwrap();
    let again = run_discorl(&cfg).unwrap();
    assert!(again.reports.is_empty());
    assert_eq!(again.student, first.student);
    assert_eq!(artifact_hashes(dir.path()).unwrap(), hashes);
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_discorl(&tiny(&[Task::Escaping], a.path())).unwrap();
    run_discorl(&tiny(&[Task::Escaping], b.path())).unwrap();
    assert_eq!(artifact_hashes(a.path()).unwrap(), artifact_hashes(b.path()).unwrap());
}

#[test]
fn closed_task_is_not_revisited() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(&[Task::Reaching], dir.path());
    run_discorl(&cfg).unwrap();
    fs::remove_file(dir.path().join("datasets/distill_TR.bin")).unwrap();
    let err = run_discorl(&cfg).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    assert!(!dir.path().join("scratch").exists());
}

#[test]
fn changed_config_refuses_existing_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(&[Task::Reaching], dir.path());
    run_discorl(&cfg).unwrap();
    cfg.distill.samples += 1;
    assert!(matches!(run_discorl(&cfg), Err(Error::Config(_))));
}

#[test]
fn finetune_baseline_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(&Task::ALL, dir.path());
    let r = run_finetune_baseline(&cfg).unwrap();
    let steps: Vec<usize> = r.rows.iter().filter(|r| r.method == "finetune").map(|r| r.step).collect();
    assert_eq!(steps, [0, 80, 160]);
    assert_eq!(r.rows.iter().filter(|r| r.method == "discorl").count(), 2);
    assert_eq!(r.retention("finetune").len(), 1);
    for row in &r.rows {
        assert!((0.0..=1.0).contains(&row.first_norm) && (0.0..=1.0).contains(&row.second_norm));
    }
    let path = dir.path().join("f.csv");
    r.write_csv(&path).unwrap();
    let text = fs::read_to_string(path).unwrap();
    assert!(text.starts_with("method,seed,step,first_norm,second_norm\n"));
    assert_eq!(text.lines().count(), 6);
}

#[test]
fn sweep_has_one_point_per_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(&Task::ALL, dir.path());
    let r = run_checkpoint_sweep(&cfg, Some(dir.path())).unwrap();
    assert_eq!(r.checkpoints[0], 0);
    assert!(r.checkpoints.len() > 1);
    assert_eq!(r.rows.len(), r.checkpoints.len() * cfg.sweep.seeds);
    for ep in &r.checkpoints {
        assert!(dir.path().join(format!("teacher_TC_ep{ep}.bin")).exists());
    }
}

#[test]
fn loss_table_has_four_rows_with_references() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(&Task::ALL, dir.path());
    let (run, _) = train_task_teacher(&cfg, Task::Reaching, 1).unwrap();
    let rows = compare_losses(&cfg, &[run.teacher()], &DistillLoss::TABLE, 2).unwrap();
    assert_eq!(rows.len(), 4);
    let refs: Vec<(f64, f64)> = rows.iter().map(|r| r.reference.unwrap()).collect();
    assert_eq!(refs, [(0.71, 0.22), (0.76, 0.14), (0.68, 0.18), (0.77, 0.13)]);
    assert!(rows.iter().all(|r| r.per_seed.len() == 2));
}

#[test]
fn memory_report_of_empty_dir_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let r = memory_report(dir.path()).unwrap();
    assert_eq!(r.total(), 0);
    assert!(memory_report(&dir.path().join("missing")).is_err());
}
