//! Comparison methods: pooled (non-meta) AWAC, behaviour cloning and
//! DDPG from demonstrations.

mod ddpgfd;

use std::path::Path;

use rand::Rng;

pub use ddpgfd::{
    ddpg_action, ddpg_losses, ddpgfd_offline, ddpgfd_train, DdpgCheckpoint, DdpgGrads, DdpgNets, DdpgOutcome, DdpgPolicy,
    DdpgStats,
};

use crate::config::{ExperimentConfig, OfflineSource};
use crate::data::{offline_buffer_scripted, task_demos, Buffer, Episode, Transition};
use crate::learners::{actor_loss, ActorLoss, LatentPosterior};
use crate::nn::Container;
use crate::oda::{check_buffers, finetune, AdaptedPolicy, FinetuneOutcome, LogRow, MetaCheckpoint, MetaTrainOutput, OdaError};
use crate::seeding;
use crate::sim::TaskSpec;
use crate::Scalar;

/// Task id every transition carries after pooling.
pub const POOLED_TASK: u64 = u64::MAX;

/// Every task's demos and offline transitions in one buffer under
/// [`POOLED_TASK`], weighted uniformly. Provenance is kept.
pub fn pooled_buffer(tasks: &[TaskSpec], demos: &Buffer, offline: &Buffer) -> Buffer {
    let mut out = Buffer::new();
    for t in tasks {
        for src in [demos, offline] {
            for tr in src.task_transitions(t.task_id) {
                out.push(Transition { task_id: POOLED_TASK, ..*tr });
            }
        }
    }
    out
}

/// The AWAC variant of a config: no latent, no KL term, its own iteration
/// count, and one batch as large as a meta-training iteration's total.
pub fn awac_config(config: &ExperimentConfig, n_tasks: usize) -> ExperimentConfig {
    ExperimentConfig {
        d_z: 0,
        beta: 0.0,
        iterations: config.awac_iterations,
        batch_size: config.batch_size * n_tasks.max(1),
        ..config.clone()
    }
}

/// Offline AWAC on the pooled data of all `tasks`.
pub fn awac_train<T: Scalar>(
    tasks: &[TaskSpec],
    demos: &Buffer,
    offline: &Buffer,
    config: &ExperimentConfig,
) -> Result<MetaTrainOutput<T>, OdaError> {
    check_buffers(tasks, demos, offline)?;
    let cfg = awac_config(config, tasks.len());
    let pooled = pooled_buffer(tasks, demos, offline);
    let mut checkpoint = MetaCheckpoint::<T>::init(cfg.clone());
    let mut log = Vec::new();
    while checkpoint.iteration < cfg.iterations {
        let mut rng = seeding::rng_from(seeding::mix(seeding::mix(cfg.seed, 0xa3ac), checkpoint.iteration as u64));
        let batch = pooled.sample_batch(POOLED_TASK, cfg.batch_size, &mut rng)?;
        let stats = checkpoint.update(&[(POOLED_TASK, Vec::new(), batch)], &mut rng)?;
        let it = checkpoint.iteration;
        if it % cfg.log_every.max(1) == 0 || it == cfg.iterations {
            log.push(LogRow::from_stats(it, &stats));
        }
    }
    Ok(MetaTrainOutput { checkpoint, log })
}

/// Online finetuning of a pooled-AWAC checkpoint on one task; the same
/// loop as ODA finetuning, with nothing to infer.
pub fn awac_finetune<T: Scalar>(checkpoint: &MetaCheckpoint<T>, task: &TaskSpec, demos: &[Episode]) -> Result<FinetuneOutcome<T>, OdaError> {
    if checkpoint.nets.d_z() != 0 {
        return Err(OdaError::Checkpoint("AWAC checkpoints have no latent".into()));
    }
    finetune(checkpoint, task, demos)
}

/// The policy of a baseline checkpoint that has the ODA actor shape: the
/// latent input is held at zero.
pub fn zero_latent_policy<T: Scalar>(checkpoint: &MetaCheckpoint<T>) -> AdaptedPolicy<T> {
    let d_z = checkpoint.nets.d_z();
    AdaptedPolicy {
        nets: checkpoint.nets.clone(),
        theta: checkpoint.theta.clone(),
        posterior: LatentPosterior::standard(d_z),
        z: vec![T::zero(); d_z],
    }
}

/// Mean negative log-likelihood of the batch actions under the actor with
/// a zero latent, with its gradient.
pub fn bc_loss<T: Scalar>(checkpoint: &MetaCheckpoint<T>, batch: &[Transition]) -> Result<ActorLoss<T>, OdaError> {
    let z = vec![T::zero(); checkpoint.nets.d_z()];
    let adv = vec![T::zero(); batch.len()];
    Ok(actor_loss(&checkpoint.nets, batch, &z, &checkpoint.theta, &adv, 1.0, 1.0)?)
}

/// One Adam step of behaviour cloning on `batch`; returns the loss before
/// the step.
pub fn bc_step<T: Scalar>(checkpoint: &mut MetaCheckpoint<T>, batch: &[Transition]) -> Result<f64, OdaError> {
    let l = bc_loss(checkpoint, batch)?;
    let it = checkpoint.iteration + 1;
    if !l.loss.is_finite() || !l.grad_theta.all_finite() {
        return Err(OdaError::NonFinite { iteration: it, task_id: POOLED_TASK, detail: format!("bc loss {}", l.loss.as_f64()) });
    }
    let lr = T::of(checkpoint.config.bc_lr);
    checkpoint.opt_theta.step(&mut checkpoint.theta, &l.grad_theta, lr)?;
    checkpoint.iteration = it;
    Ok(l.loss.as_f64())
}

#[derive(Debug, Clone)]
pub struct BcOutput<T> {
    pub checkpoint: MetaCheckpoint<T>,
    /// `(iteration, loss)` every `log_every` iterations and at the end.
    pub log: Vec<(usize, f64)>,
}

/// Behaviour cloning on every demonstration transition in `demos`. No
/// critic is trained and the encoder is never used.
pub fn bc_train<T: Scalar>(demos: &Buffer, config: &ExperimentConfig) -> Result<BcOutput<T>, OdaError> {
    let pool: Vec<Transition> = demos.transitions().iter().filter(|t| t.source == crate::data::Source::Demo).copied().collect();
    if pool.is_empty() {
        return Err(OdaError::MissingData { task_id: POOLED_TASK, what: "demonstrations" });
    }
    let cfg = ExperimentConfig { iterations: config.bc_iterations, ..config.clone() };
    let mut checkpoint = MetaCheckpoint::<T>::init(cfg.clone());
    let mut log = Vec::new();
    while checkpoint.iteration < cfg.bc_iterations {
        let mut rng = seeding::rng_from(seeding::mix(seeding::mix(cfg.seed, 0xbc), checkpoint.iteration as u64));
        let batch: Vec<Transition> = (0..cfg.bc_batch_size).map(|_| pool[rng.random_range(0..pool.len())]).collect();
        let loss = bc_step(&mut checkpoint, &batch)?;
        let it = checkpoint.iteration;
        if it % cfg.log_every.max(1) == 0 || it == cfg.bc_iterations {
            log.push((it, loss));
        }
    }
    Ok(BcOutput { checkpoint, log })
}

/// Offline data for `tasks` from the configured provenance.
pub fn offline_buffer(tasks: &[TaskSpec], config: &ExperimentConfig) -> Result<Buffer, OdaError> {
    match config.offline_source {
        OfflineSource::Scripted => Ok(offline_buffer_scripted(tasks, config)?),
        OfflineSource::Ddpgfd => {
            let mut buf = Buffer::new();
            for t in tasks {
                let demos = task_demos(t, config)?;
                buf.extend_from(&ddpgfd_offline::<f64>(t, &demos, config)?);
            }
            Ok(buf)
        }
    }
}

/// A saved baseline: AWAC and BC share the ODA actor/critic shapes (AWAC
/// with no latent), DDPG-from-demos has its own networks.
#[derive(Debug, Clone)]
pub enum BaselineCheckpoint<T> {
    Awac(MetaCheckpoint<T>),
    Bc(MetaCheckpoint<T>),
    Ddpgfd(DdpgCheckpoint<T>),
}

impl<T: Scalar> BaselineCheckpoint<T> {
    pub fn method(&self) -> &'static str {
        match self {
            BaselineCheckpoint::Awac(_) => "awac",
            BaselineCheckpoint::Bc(_) => "bc",
            BaselineCheckpoint::Ddpgfd(_) => "ddpgfd",
        }
    }

    pub fn config(&self) -> &ExperimentConfig {
        match self {
            BaselineCheckpoint::Awac(c) | BaselineCheckpoint::Bc(c) => &c.config,
            BaselineCheckpoint::Ddpgfd(c) => &c.config,
        }
    }

    pub fn to_container(&self) -> Container {
        let mut c = match self {
            BaselineCheckpoint::Awac(m) | BaselineCheckpoint::Bc(m) => m.to_container(),
            BaselineCheckpoint::Ddpgfd(d) => d.to_container(),
        };
        c.set_meta("baseline", self.method());
        c
    }

    pub fn from_container(c: &Container) -> Result<Self, OdaError> {
        match c.meta("baseline")? {
            "awac" => Ok(BaselineCheckpoint::Awac(MetaCheckpoint::from_container(c)?)),
            "bc" => Ok(BaselineCheckpoint::Bc(MetaCheckpoint::from_container(c)?)),
            "ddpgfd" => Ok(BaselineCheckpoint::Ddpgfd(DdpgCheckpoint::from_container(c)?)),
            other => Err(OdaError::Checkpoint(format!("unknown baseline {other:?}"))),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), OdaError> {
        Ok(self.to_container().save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, OdaError> {
        Self::from_container(&Container::load(path)?)
    }
}
