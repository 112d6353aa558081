//! `oda` command line. Every command reads its inputs from and writes its
//! outputs to the `--out` directory, so commands chain.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use oda_core::baselines::{awac_config, awac_train, bc_train, ddpgfd_train, zero_latent_policy, BaselineCheckpoint};
use oda_core::config::{ExperimentConfig, Precision};
use oda_core::data::{load_buffer, save_buffer, Buffer};
use oda_core::learners::ActMode;
use oda_core::oda::{curve_csv, finetune, log_csv, meta_train, MetaCheckpoint};
use oda_core::sim::{tasks_from_str, tasks_to_string};
use oda_core::Scalar;

use crate::studies::{
    adaptation_table, curves_to_csv, demo_episodes, eval_oda, eval_policy, run_finetune_study, run_scaling_study, runs_to_csv,
    scaling_summary, scaling_to_csv, study_data, study_tasks, StudyTasks,
};
use crate::table::{episode_records, episodes_to_csv, row_from_eval, Phase, ResultTable};
use crate::{read_file, report, write_file, EvalError};

#[derive(Debug, Parser)]
#[command(name = "oda", version, about = "Offline meta-RL with demonstration adaptation on simulated insertion tasks")]
pub struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default: the config's `out` key).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the effective config with every key documented.
    Config,
    /// Task family files.
    Tasks {
        #[command(subcommand)]
        action: TasksAction,
    },
    /// Demonstration and offline datasets.
    Data {
        #[command(subcommand)]
        action: DataAction,
    },
    /// Meta-train on the training tasks' datasets.
    MetaTrain,
    /// Adapt the meta-trained policy to every held-out task from its demos and evaluate.
    Adapt,
    /// Finetune online on held-out tasks.
    Finetune {
        /// Only this task (default: every held-out task).
        #[arg(long)]
        task: Option<u64>,
    },
    /// Train a comparison method.
    Baseline {
        #[command(subcommand)]
        method: BaselineMethod,
    },
    /// Run a whole experiment.
    Study {
        #[command(subcommand)]
        which: StudyKind,
    },
    /// Summary tables, plots and a markdown report from the study outputs.
    Report,
}

#[derive(Debug, Subcommand)]
pub enum TasksAction {
    /// Write train, held-out and out-of-distribution tasks to tasks.txt.
    Gen,
}

#[derive(Debug, Subcommand)]
pub enum DataAction {
    /// Record demos for every task and offline data for the training tasks.
    Collect,
}

#[derive(Debug, Subcommand)]
pub enum BaselineMethod {
    /// Pooled AWAC on all training data.
    Awac,
    /// Behaviour cloning on each held-out task's demos.
    Bc {
        #[arg(long)]
        task: Option<u64>,
    },
    /// DDPG from demonstrations on each held-out task.
    Ddpgfd {
        #[arg(long)]
        task: Option<u64>,
    },
}

#[derive(Debug, Subcommand)]
pub enum StudyKind {
    Adaptation,
    Finetune,
    Scaling,
}

/// Parse arguments, run, and map the outcome to an exit code.
pub fn main_with_args(args: impl IntoIterator<Item = impl Into<OsString> + Clone>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Config file, then `--set` overrides, then `--seed`.
pub fn effective_config(cli: &Cli) -> Result<ExperimentConfig, EvalError> {
    let base = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let mut pairs = Vec::new();
    for s in &cli.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| oda_core::config::ConfigError::Syntax { line: 0, reason: format!("--set expects KEY=VALUE, got {s:?}") })?;
        pairs.push((k.trim(), v.trim()));
    }
    let seed = cli.seed.map(|s| s.to_string());
    if let Some(s) = &seed {
        pairs.push(("seed", s.as_str()));
    }
    Ok(base.with_overrides(&pairs)?)
}

pub fn run(cli: &Cli) -> Result<(), EvalError> {
    let cfg = effective_config(cli)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
    match cfg.precision {
        Precision::F32 => run_with::<f32>(&cli.command, &cfg, &out),
        Precision::F64 => run_with::<f64>(&cli.command, &cfg, &out),
    }
}

struct Files<'a>(&'a Path);

impl Files<'_> {
    fn at(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    fn require(&self, names: &[&str]) -> Result<(), EvalError> {
        let missing: Vec<PathBuf> = names.iter().map(|n| self.at(n)).filter(|p| !p.exists()).collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(EvalError::Missing(missing))
        }
    }

    fn tasks(&self, cfg: &ExperimentConfig) -> Result<StudyTasks, EvalError> {
        self.require(&["tasks.txt"])?;
        Ok(StudyTasks::from_all(tasks_from_str(&read_file(self.at("tasks.txt"))?)?, cfg.n_train))
    }

    fn buffer(&self, name: &str) -> Result<Buffer, EvalError> {
        self.require(&[name])?;
        Ok(load_buffer(self.at(name))?)
    }
}

fn selected(tasks: &StudyTasks, only: Option<u64>) -> Result<Vec<oda_core::sim::TaskSpec>, EvalError> {
    let held = tasks.held_out();
    match only {
        None => Ok(held),
        Some(id) => {
            let t = held.into_iter().find(|t| t.task_id == id).ok_or_else(|| EvalError::Table(format!("task {id} is not a held-out task")))?;
            Ok(vec![t])
        }
    }
}

fn write_tasks_and_data(files: &Files, tasks: &StudyTasks, cfg: &ExperimentConfig) -> Result<(Buffer, Buffer), EvalError> {
    write_file(files.at("tasks.txt"), tasks_to_string(&tasks.all()))?;
    eprintln!("collecting datasets");
    let data = study_data(tasks, cfg)?;
    save_buffer(&data.demos, files.at("demos.buf"))?;
    save_buffer(&data.offline, files.at("offline.buf"))?;
    Ok((data.demos, data.offline))
}

fn run_with<T: Scalar>(command: &Command, cfg: &ExperimentConfig, out: &Path) -> Result<(), EvalError> {
    let files = Files(out);
    if !matches!(command, Command::Config | Command::Report) {
        write_file(files.at("config.txt"), cfg.render_documented())?;
    }
    match command {
        Command::Config => print!("{}", cfg.render_documented()),
        Command::Tasks { action: TasksAction::Gen } => {
            let tasks = study_tasks(cfg)?;
            write_file(files.at("tasks.txt"), tasks_to_string(&tasks.all()))?;
            eprintln!("wrote {} tasks to {}", tasks.all().len(), files.at("tasks.txt").display());
        }
        Command::Data { action: DataAction::Collect } => {
            let tasks = files.tasks(cfg)?;
            let data = study_data(&tasks, cfg)?;
            save_buffer(&data.demos, files.at("demos.buf"))?;
            save_buffer(&data.offline, files.at("offline.buf"))?;
            eprintln!("{} demo and {} offline transitions", data.demos.len(), data.offline.len());
        }
        Command::MetaTrain => {
            let tasks = files.tasks(cfg)?;
            let (demos, offline) = (files.buffer("demos.buf")?, files.buffer("offline.buf")?);
            let res = meta_train::<T>(&tasks.train, &demos, &offline, cfg)?;
            res.checkpoint.save(files.at("meta.ckpt"))?;
            write_file(files.at("meta_log.csv"), log_csv(&res.log))?;
        }
        Command::Adapt => {
            let tasks = files.tasks(cfg)?;
            let demos = files.buffer("demos.buf")?;
            files.require(&["meta.ckpt"])?;
            let ck = MetaCheckpoint::<T>::load_expecting(files.at("meta.ckpt"), cfg)?;
            let mut table = ResultTable::new();
            let mut eps = Vec::new();
            for task in tasks.held_out() {
                let e = eval_oda(&ck, &task, &demos, cfg)?;
                eprintln!("task {}: {:.2}", task.task_id, e.success_rate);
                table.insert(row_from_eval("oda", task.task_id, Phase::Adapt, &e, 0, 0))?;
                eps.extend(episode_records("oda", task.task_id, Phase::Adapt, &e));
            }
            table.save(files.at("adapt.csv"))?;
            write_file(files.at("adapt_episodes.csv"), episodes_to_csv(&eps))?;
        }
        Command::Finetune { task } => {
            let tasks = files.tasks(cfg)?;
            let demos = files.buffer("demos.buf")?;
            files.require(&["meta.ckpt"])?;
            let ck = MetaCheckpoint::<T>::load_expecting(files.at("meta.ckpt"), cfg)?;
            for t in selected(&tasks, *task)? {
                let res = finetune(&ck, &t, &demo_episodes(&demos, t.task_id))?;
                eprintln!("task {}: solved after {:?} episodes", t.task_id, res.solved_after);
                write_file(files.at(&format!("finetune_task{}_curve.csv", t.task_id)), curve_csv(&res.curve))?;
                res.checkpoint.save(files.at(&format!("finetune_task{}.ckpt", t.task_id)))?;
            }
        }
        Command::Baseline { method: BaselineMethod::Awac } => {
            let tasks = files.tasks(cfg)?;
            let (demos, offline) = (files.buffer("demos.buf")?, files.buffer("offline.buf")?);
            let res = awac_train::<T>(&tasks.train, &demos, &offline, cfg)?;
            BaselineCheckpoint::Awac(res.checkpoint).save(files.at("awac.ckpt"))?;
            write_file(files.at("awac_log.csv"), log_csv(&res.log))?;
        }
        Command::Baseline { method: BaselineMethod::Bc { task } } => {
            let tasks = files.tasks(cfg)?;
            let demos = files.buffer("demos.buf")?;
            for t in selected(&tasks, *task)? {
                let mut own = Buffer::new();
                for ep in demo_episodes(&demos, t.task_id) {
                    own.push_episode(&ep);
                }
                let res = bc_train::<T>(&own, cfg)?;
                let e = eval_policy(&mut zero_latent_policy(&res.checkpoint).policy(ActMode::Mean), &t, cfg)?;
                eprintln!("task {}: {:.2}", t.task_id, e.success_rate);
                BaselineCheckpoint::Bc(res.checkpoint).save(files.at(&format!("bc_task{}.ckpt", t.task_id)))?;
            }
        }
        Command::Baseline { method: BaselineMethod::Ddpgfd { task } } => {
            let tasks = files.tasks(cfg)?;
            let demos = files.buffer("demos.buf")?;
            for t in selected(&tasks, *task)? {
                let res = ddpgfd_train::<T>(&t, &demo_episodes(&demos, t.task_id), cfg)?;
                eprintln!("task {}: solved after {:?} episodes", t.task_id, res.solved_after);
                write_file(files.at(&format!("ddpgfd_task{}_curve.csv", t.task_id)), curve_csv(&res.curve))?;
                BaselineCheckpoint::Ddpgfd(res.checkpoint).save(files.at(&format!("ddpgfd_task{}.ckpt", t.task_id)))?;
            }
        }
        Command::Study { which: StudyKind::Adaptation } => {
            let tasks = study_tasks(cfg)?;
            let (demos, offline) = write_tasks_and_data(&files, &tasks, cfg)?;
            eprintln!("meta-training ({} iterations)", cfg.iterations);
            let oda = meta_train::<T>(&tasks.train, &demos, &offline, cfg)?;
            oda.checkpoint.save(files.at("meta.ckpt"))?;
            write_file(files.at("meta_log.csv"), log_csv(&oda.log))?;
            eprintln!("training pooled AWAC ({} iterations)", cfg.awac_iterations);
            let awac = awac_train::<T>(&tasks.train, &demos, &offline, cfg)?;
            BaselineCheckpoint::Awac(awac.checkpoint.clone()).save(files.at("awac.ckpt"))?;
            write_file(files.at("awac_log.csv"), log_csv(&awac.log))?;
            let (table, eps) = adaptation_table(&tasks, &demos, &oda.checkpoint, &awac.checkpoint, cfg)?;
            table.save(files.at("adaptation.csv"))?;
            write_file(files.at("adaptation_episodes.csv"), episodes_to_csv(&eps))?;
            print!("{}", table.to_csv());
        }
        Command::Study { which: StudyKind::Finetune } => {
            files.require(&["tasks.txt", "demos.buf", "adaptation.csv", "meta.ckpt", "awac.ckpt"])?;
            let tasks = files.tasks(cfg)?;
            let demos = files.buffer("demos.buf")?;
            let adaptation = ResultTable::load(files.at("adaptation.csv"))?;
            let oda = MetaCheckpoint::<T>::load_expecting(files.at("meta.ckpt"), cfg)?;
            let awac = match BaselineCheckpoint::<T>::load(files.at("awac.ckpt"))? {
                BaselineCheckpoint::Awac(c) if c.config == awac_config(cfg, tasks.train.len()) => c,
                _ => return Err(EvalError::Table("awac.ckpt does not hold an AWAC checkpoint for this config".into())),
            };
            let study = run_finetune_study(&tasks, &demos, &adaptation, &oda, &awac, cfg)?;
            study.table.save(files.at("finetune.csv"))?;
            write_file(files.at("finetune_episodes.csv"), episodes_to_csv(&study.episodes))?;
            write_file(files.at("finetune_runs.csv"), runs_to_csv(&study.runs))?;
            write_file(files.at("finetune_curves.csv"), curves_to_csv(&study.runs))?;
            print!("{}", runs_to_csv(&study.runs));
        }
        Command::Study { which: StudyKind::Scaling } => {
            let rows = run_scaling_study::<T>(cfg, |r| eprintln!("{} tasks, seed {}: {:.3}", r.n_train, r.seed, r.mean_success()))?;
            write_file(files.at("scaling.csv"), scaling_to_csv(&rows))?;
            for p in scaling_summary(&rows) {
                println!("{} tasks: {:.3} +- {:.3}", p.n_train, p.mean, p.stderr);
            }
        }
        Command::Report => {
            let written = report::report(out)?;
            for p in written {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("oda").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_are_global_and_layer_in_order() {
        let cli = parse(&["study", "scaling", "--seed", "5", "--set", "train.iterations=7", "--out", "x"]);
        let cfg = effective_config(&cli).unwrap();
        assert_eq!((cfg.seed, cfg.iterations), (5, 7));
        assert_eq!(cli.out.as_deref(), Some(Path::new("x")));
    }

    #[test]
    fn config_problems_exit_with_two() {
        assert_eq!(main_with_args(["oda", "config", "--set", "no.such.key=1"]), 2);
        assert_eq!(main_with_args(["oda", "config", "--config", "/nonexistent/cfg"]), 2);
        assert_eq!(main_with_args(["oda", "frobnicate"]), 2);
    }

    #[test]
    fn missing_inputs_exit_with_three() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(main_with_args(["oda", "meta-train", "--out", out]), 3);
        assert_eq!(main_with_args(["oda", "report", "--out", out]), 3);
    }
}
