use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use discorl::arena::Task;
use discorl::container::Container;
use discorl::distill::{train_student, DistillDataset, DistillLoss, GenerationMode, Student};
use discorl::error::{Error, Result};
use discorl::eval::{evaluate, write_report_csv, Policy};
use discorl::pipeline::experiments::{compare_losses, run_checkpoint_sweep, run_finetune_baseline, write_loss_table};
use discorl::pipeline::memory::memory_report;
use discorl::pipeline::{
    eval_configs, generate_dataset, run_discorl, seeds, train_encoder, write_curve, write_srl_losses,
    write_student_epochs, PipelineConfig,
};
use discorl::ppo::{train_teacher, Agent, PolicyParams, Teacher};
use discorl::rng::derive_seed;
use discorl::srl::SrlModel;

#[derive(Parser)]
#[command(name = "discorl", version, about = "Continual reinforcement learning by policy distillation")]
struct Cli {
    /// Pipeline configuration (TOML). Defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a state encoder on random-policy data from one task.
    SrlTrain {
        #[arg(long)]
        task: Task,
    },
    /// Train a PPO teacher on top of an encoder (a fresh one if none given).
    RlTrain {
        #[arg(long)]
        task: Task,
        #[arg(long)]
        srl: Option<PathBuf>,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Generate a distillation dataset from a teacher.
    GenDistill {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        mode: Option<GenerationMode>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Train a student on one or more distillation datasets.
    Distill {
        #[arg(required = true)]
        datasets: Vec<PathBuf>,
        #[arg(long)]
        loss: Option<DistillLoss>,
    },
    /// Evaluate a student, teacher or agent file.
    Eval {
        policy: PathBuf,
        /// Tasks to evaluate on; defaults to the configured task list.
        #[arg(long, value_delimiter = ',')]
        tasks: Vec<Task>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Run the full sequential pipeline.
    Pipeline,
    /// Fine-tune one network across two tasks and compare with distillation.
    FinetuneBaseline,
    /// Distil every checkpoint of one teacher run.
    CheckpointSweep,
    /// Compare the distillation losses on multi-task students.
    CompareLosses {
        /// Teacher files; teachers are trained for every configured task when omitted.
        teachers: Vec<PathBuf>,
    },
    /// Disk usage of a run directory by artifact class.
    MemoryReport { dir: Option<PathBuf> },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_policy(path: &Path) -> Result<Box<dyn Policy>> {
    let c = Container::load(path)?;
    Ok(match c.kind.as_str() {
        "student" => Box::new(Student::from_container(&c)?),
        "teacher" => Box::new(Teacher::from_container(&c)?.agent),
        "agent" => Box::new(Agent::from_container(&c)?),
        other => return Err(Error::config(format!("{} holds a `{other}`, not a policy", path.display()))),
    })
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let out = cfg.output_dir.clone();
    let root = cfg.seed;
    match cli.command {
        Command::SrlTrain { task } => {
            let (model, losses) = train_encoder(&cfg, &[task], derive_seed(root, seeds::SRL_DATA), derive_seed(root, seeds::SRL_TRAIN))?;
            let path = out.join(format!("srl_{}.bin", task.code()));
            model.to_container().save(&path)?;
            write_srl_losses(&out.join(format!("srl_{}.csv", task.code())), &losses)?;
            println!("{}", path.display());
        }
        Command::RlTrain { task, srl, budget } => {
            let model = match srl {
                Some(p) => SrlModel::from_container(&Container::load(&p)?)?,
                None => train_encoder(&cfg, &[task], derive_seed(root, seeds::SRL_DATA), derive_seed(root, seeds::SRL_TRAIN))?.0,
            };
            let agent = Agent::new(
                Some(model),
                PolicyParams::encoded(cfg.srl.state_dim, derive_seed(root, seeds::POLICY_INIT))?,
            )?;
            let run = train_teacher(
                &cfg.arena_config(task, true),
                agent,
                budget.unwrap_or(cfg.rl.budget_steps),
                derive_seed(root, seeds::PPO),
                &cfg.rl.ppo,
            )?;
            let path = out.join(format!("teacher_{}.bin", task.code()));
            run.teacher().to_container().save(&path)?;
            write_curve(&out.join(format!("teacher_{}_curve.csv", task.code())), &run.curve)?;
            for ck in &run.checkpoints {
                let mut agent = run.agent.clone();
                agent.params = ck.params.clone();
                Teacher { task, agent }
                    .to_container()
                    .save(&out.join(format!("teacher_{}_ep{}.bin", task.code(), ck.episode)))?;
            }
            println!("{}", path.display());
        }
        Command::GenDistill { teacher, mode, samples } => {
            let teacher = Teacher::from_container(&Container::load(&teacher)?)?;
            let mut cfg = cfg.clone();
            if let Some(m) = mode {
                cfg.distill.mode = m;
            }
            let data = generate_dataset(&cfg, &teacher, samples.unwrap_or(cfg.distill.samples), derive_seed(root, seeds::DISTILL_DATA))?;
            let path = out.join(format!("distill_{}_{}.bin", teacher.task.code(), cfg.distill.mode));
            data.to_container().save(&path)?;
            println!("{} ({} frames)", path.display(), data.len());
        }
        Command::Distill { datasets, loss } => {
            let data = datasets
                .iter()
                .map(|p| DistillDataset::from_container(&Container::load(p)?))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&DistillDataset> = data.iter().collect();
            let run = train_student(&refs, &cfg.student_train(loss.unwrap_or(cfg.distill.loss), derive_seed(root, seeds::STUDENT)))?;
            let path = out.join("student.bin");
            run.student.to_container().save(&path)?;
            write_student_epochs(&out.join("student_epochs.csv"), &run.epochs)?;
            println!("{} (best epoch {})", path.display(), run.best_epoch);
        }
        Command::Eval { policy, tasks, episodes } => {
            let p = load_policy(&policy)?;
            let tasks = if tasks.is_empty() { cfg.tasks.clone() } else { tasks };
            let report = evaluate(
                p.as_ref(),
                &eval_configs(&cfg, &tasks),
                episodes.unwrap_or(cfg.eval.episodes),
                derive_seed(root, seeds::EVAL),
            )?;
            for t in &report.tasks {
                let s = t.normalized_summary();
                println!("{}: normalized mean {:.3} std {:.3} min {:.3} max {:.3}", t.task, s.mean, s.std, s.min, s.max);
            }
            write_report_csv(&out.join("eval.csv"), &[(p.identity(), report)])?;
        }
        Command::Pipeline => {
            let outcome = run_discorl(&cfg)?;
            for (label, report) in &outcome.reports {
                for t in &report.tasks {
                    println!("{label} {}: {:.3}", t.task, t.mean_normalized());
                }
            }
        }
        Command::FinetuneBaseline => {
            let r = run_finetune_baseline(&cfg)?;
            r.write_csv(&out.join("finetune_baseline.csv"))?;
            for method in ["finetune", "discorl"] {
                println!("{method}: {} retention {:?}", r.first, r.retention(method));
            }
        }
        Command::CheckpointSweep => {
            let r = run_checkpoint_sweep(&cfg, Some(&out))?;
            r.write_csv(&out.join("checkpoint_sweep.csv"))?;
            for ep in &r.checkpoints {
                let s = r.student_norms(*ep);
                let mean = s.iter().sum::<f64>() / s.len().max(1) as f64;
                println!("episode {ep}: teacher {:.3} student {mean:.3}", r.teacher_norm(*ep).unwrap_or(f64::NAN));
            }
        }
        Command::CompareLosses { teachers } => {
            let teachers = if teachers.is_empty() {
                cfg.tasks
                    .iter()
                    .map(|&t| discorl::pipeline::train_task_teacher(&cfg, t, derive_seed(root, t as u64)).map(|r| r.0.teacher()))
                    .collect::<Result<Vec<_>>>()?
            } else {
                teachers
                    .iter()
                    .map(|p| Teacher::from_container(&Container::load(p)?))
                    .collect::<Result<Vec<_>>>()?
            };
            let rows = compare_losses(&cfg, &teachers, &DistillLoss::TABLE, cfg.compare.seeds)?;
            write_loss_table(&out.join("compare_losses.csv"), &rows)?;
            for r in &rows {
                let (rm, rs) = r.reference.unwrap_or((f64::NAN, f64::NAN));
                println!("{:<12} {:.3} ± {:.3}   (reference {rm:.2} ± {rs:.2})", r.loss.to_string(), r.mean, r.std);
            }
        }
        Command::MemoryReport { dir } => {
            let dir = dir.unwrap_or(out);
            let report = memory_report(&dir)?;
            println!("{report}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) | Error::Usage(_) => 2,
                _ => 3,
            })
        }
    }
}
