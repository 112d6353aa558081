//! Offline meta-training, adaptation from demonstrations, and online
//! finetuning.

mod adapt;
mod checkpoint;
mod finetune;

use std::fmt::Write as _;

use rand::Rng;

pub use adapt::{adapt, eval_start_noise, evaluate, solves_task, AdaptedPolicy, EvalRecord, EvalResult};
pub use checkpoint::MetaCheckpoint;
pub use finetune::{curve_csv, finetune, CurvePoint, FinetuneOutcome};
pub(crate) use finetune::{check_seed, online_loop, OnlineLearner};

use crate::config::ExperimentConfig;
use crate::data::{Buffer, DataError, Transition};
use crate::learners::{task_losses, LearnError, TaskStats};
use crate::nn::{polyak, ContainerError, NnError};
use crate::seeding;
use crate::sim::{SimError, TaskSpec};
use crate::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum OdaError {
    #[error("task {task_id} has no {what}")]
    MissingData { task_id: u64, what: &'static str },
    #[error("non-finite values at iteration {iteration}, task {task_id}: {detail}")]
    NonFinite { iteration: usize, task_id: u64, detail: String },
    #[error("checkpoint was written with config {stored} but {expected} was expected")]
    ConfigMismatch { stored: String, expected: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Loss averages over tasks at one logged iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub critic: f64,
    pub actor: f64,
    pub kl: f64,
    pub mean_weight: f64,
    pub mean_q: f64,
}

impl LogRow {
    pub(crate) fn from_stats(iteration: usize, stats: &[TaskStats]) -> Self {
        let n = stats.len().max(1) as f64;
        let avg = |f: fn(&TaskStats) -> f64| stats.iter().map(f).sum::<f64>() / n;
        LogRow {
            iteration,
            critic: avg(|s| s.critic),
            actor: avg(|s| s.actor),
            kl: avg(|s| s.kl),
            mean_weight: avg(|s| s.mean_weight),
            mean_q: avg(|s| s.mean_q),
        }
    }
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut out = String::from("iteration,critic_loss,actor_loss,kl,mean_weight,mean_q\n");
    for r in rows {
        let _ = writeln!(out, "{},{:e},{:e},{:e},{:e},{:e}", r.iteration, r.critic, r.actor, r.kl, r.mean_weight, r.mean_q);
    }
    out
}

/// Everything [`meta_train`] produces.
#[derive(Debug, Clone)]
pub struct MetaTrainOutput<T> {
    pub checkpoint: MetaCheckpoint<T>,
    pub log: Vec<LogRow>,
}

fn stats_finite(s: &TaskStats) -> bool {
    [s.critic, s.actor, s.kl, s.mean_weight, s.mean_q, s.mean_log_prob].iter().all(|v| v.is_finite())
}

impl<T: Scalar> MetaCheckpoint<T> {
    /// One gradient step on the summed losses of every `(task, context,
    /// batch)` draw, then a target update. Returns per-draw statistics.
    pub fn update(&mut self, draws: &[(u64, Vec<Transition>, Vec<Transition>)], rng: &mut impl Rng) -> Result<Vec<TaskStats>, OdaError> {
        let cfg = self.config.loss_config();
        let mut gphi = self.phi.zeros_like();
        let mut gtheta = self.theta.zeros_like();
        let mut gpsi = self.psi.zeros_like();
        let mut stats = Vec::with_capacity(draws.len());
        for (task_id, ctx, batch) in draws {
            let target = if self.config.use_target { &self.psi_target } else { &self.psi };
            let (g, st) = task_losses(&self.nets, &self.phi, &self.theta, &self.psi, target, ctx, batch, &cfg, rng)?;
            if !stats_finite(&st) || !g.phi.all_finite() || !g.theta.all_finite() || !g.psi.all_finite() {
                return Err(OdaError::NonFinite { iteration: self.iteration + 1, task_id: *task_id, detail: format!("{st:?}") });
            }
            gphi.axpy(T::one(), &g.phi);
            gtheta.axpy(T::one(), &g.theta);
            gpsi.axpy(T::one(), &g.psi);
            stats.push(st);
        }
        let nonfinite = |e: NnError| OdaError::NonFinite { iteration: self.iteration + 1, task_id: u64::MAX, detail: e.to_string() };
        if !self.phi.is_empty() {
            self.opt_phi.step(&mut self.phi, &gphi, T::of(self.config.lr_encoder)).map_err(nonfinite)?;
        }
        self.opt_theta.step(&mut self.theta, &gtheta, T::of(self.config.lr_actor)).map_err(nonfinite)?;
        self.opt_psi.step(&mut self.psi, &gpsi, T::of(self.config.lr_critic)).map_err(nonfinite)?;
        if self.config.use_target {
            polyak(&mut self.psi_target, &self.psi, T::of(self.config.polyak));
        } else {
            self.psi_target = self.psi.clone();
        }
        self.iteration += 1;
        Ok(stats)
    }
}

/// Check that every task has demonstrations and offline transitions.
pub fn check_buffers(tasks: &[TaskSpec], demos: &Buffer, offline: &Buffer) -> Result<(), OdaError> {
    for t in tasks {
        if demos.demo_count_for(t.task_id) == 0 {
            return Err(OdaError::MissingData { task_id: t.task_id, what: "demonstrations" });
        }
        if offline.count_for(t.task_id) == 0 {
            return Err(OdaError::MissingData { task_id: t.task_id, what: "offline transitions" });
        }
    }
    Ok(())
}

/// Offline meta-training over `tasks`.
///
/// Each iteration draws, per task, a context from that task's
/// demonstrations and a minibatch from its offline data, sums the per-task
/// losses and takes one step of each optimiser. Fully determined by the
/// config.
pub fn meta_train<T: Scalar>(
    tasks: &[TaskSpec],
    demos: &Buffer,
    offline: &Buffer,
    config: &ExperimentConfig,
) -> Result<MetaTrainOutput<T>, OdaError> {
    let checkpoint = MetaCheckpoint::init(config.clone());
    continue_meta_train(checkpoint, tasks, demos, offline, config.iterations)
}

/// Run `iterations` more meta-training iterations from `checkpoint`.
///
/// The sampling stream is keyed on the iteration index, so training in
/// several calls gives the same result as training in one.
pub fn continue_meta_train<T: Scalar>(
    mut checkpoint: MetaCheckpoint<T>,
    tasks: &[TaskSpec],
    demos: &Buffer,
    offline: &Buffer,
    iterations: usize,
) -> Result<MetaTrainOutput<T>, OdaError> {
    check_buffers(tasks, demos, offline)?;
    let cfg = checkpoint.config.clone();
    let mut log = Vec::new();
    let end = checkpoint.iteration + iterations;
    while checkpoint.iteration < end {
        let mut rng = seeding::rng_from(seeding::mix(seeding::mix(cfg.seed, 0x6d_74), checkpoint.iteration as u64));
        let mut draws = Vec::with_capacity(tasks.len());
        for t in tasks {
            let ctx = demos.sample_context(t.task_id, cfg.context_size, &mut rng)?;
            let batch = offline.sample_batch(t.task_id, cfg.batch_size, &mut rng)?;
            draws.push((t.task_id, ctx, batch));
        }
        let stats = checkpoint.update(&draws, &mut rng)?;
        let it = checkpoint.iteration;
        if it % cfg.log_every.max(1) == 0 || it == end {
            log.push(LogRow::from_stats(it, &stats));
        }
    }
    Ok(MetaTrainOutput { checkpoint, log })
}
