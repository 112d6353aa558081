use ndarray::{s, Array2};

use crate::config::ExperimentConfig;
use crate::data::{collect_offline, rollout, Buffer, Episode, ExplorationNoise, Source, Transition};
use crate::learners::{actor_inputs, critic_inputs, norm_obs};
use crate::nn::{polyak, Adam, Container, Mlp, ParamSet};
use crate::oda::{check_seed, eval_start_noise, online_loop, solves_task, CurvePoint, OdaError, OnlineLearner};
use crate::policy::Policy;
use crate::seeding;
use crate::sim::{Action, Observation, TaskSpec, ACT_DIM, A_MAX, OBS_DIM};
use crate::Scalar;

/// Deterministic actor `s -> a_max * tanh(f(s))` and critic `(s, a) -> Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct DdpgNets {
    pub actor: Mlp,
    pub critic: Mlp,
}

impl DdpgNets {
    pub fn new(hidden: &[usize]) -> Self {
        DdpgNets {
            actor: Mlp::new("ddpg_actor", OBS_DIM, hidden, ACT_DIM),
            critic: Mlp::new("ddpg_critic", OBS_DIM + ACT_DIM, hidden, 1),
        }
    }

    /// Normalised actions `tanh(f(s))` for a batch of states.
    fn squashed<T: Scalar>(&self, theta: &ParamSet<T>, states: &[[f64; OBS_DIM]]) -> Array2<T> {
        self.actor.forward(theta, actor_inputs::<T>(states, &[]).view()).mapv(crate::nn::tanh)
    }
}

/// Rows of `[s/scale, u]` with `u` already in normalised action units.
fn critic_rows<T: Scalar>(states: &[[f64; OBS_DIM]], u: &Array2<T>) -> Array2<T> {
    let mut x = Array2::zeros((states.len(), OBS_DIM + ACT_DIM));
    for (b, st) in states.iter().enumerate() {
        for (k, v) in norm_obs::<T>(st).into_iter().enumerate() {
            x[[b, k]] = v;
        }
        for k in 0..ACT_DIM {
            x[[b, OBS_DIM + k]] = u[[b, k]];
        }
    }
    x
}

pub fn ddpg_action<T: Scalar>(nets: &DdpgNets, theta: &ParamSet<T>, s: &[f64; OBS_DIM]) -> Action {
    let u = nets.squashed(theta, std::slice::from_ref(s));
    Action(std::array::from_fn(|k| u[[0, k]].as_f64() * A_MAX[k])).clipped()
}

/// The greedy actor. Exploration noise is added by the caller.
#[derive(Debug, Clone)]
pub struct DdpgPolicy<T> {
    pub nets: DdpgNets,
    pub theta: ParamSet<T>,
}

impl<T: Scalar> Policy for DdpgPolicy<T> {
    fn act(&mut self, obs: &Observation) -> Action {
        ddpg_action(&self.nets, &self.theta, &obs.0)
    }
}

/// Actor, critic, their targets and optimisers.
#[derive(Debug, Clone)]
pub struct DdpgCheckpoint<T> {
    pub nets: DdpgNets,
    pub theta: ParamSet<T>,
    pub theta_target: ParamSet<T>,
    pub psi: ParamSet<T>,
    pub psi_target: ParamSet<T>,
    pub opt_theta: Adam<T>,
    pub opt_psi: Adam<T>,
    pub config: ExperimentConfig,
    pub updates: usize,
}

const KIND: &str = "ddpgfd-checkpoint";

#[derive(Debug, Clone)]
pub struct DdpgGrads<T> {
    pub theta: ParamSet<T>,
    pub psi: ParamSet<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdpgStats {
    pub critic: f64,
    /// `-mean Q(s, mu(s))`.
    pub actor: f64,
    pub mean_q: f64,
}

/// Critic: mean squared error against `r + gamma * Q'(s', mu'(s'))`.
/// Actor: `-mean Q(s, mu(s))`, differentiated through the critic into the
/// actor only.
pub fn ddpg_losses<T: Scalar>(ck: &DdpgCheckpoint<T>, batch: &[Transition]) -> Result<(DdpgGrads<T>, DdpgStats), OdaError> {
    if batch.is_empty() {
        return Err(crate::learners::LearnError::EmptyBatch.into());
    }
    let nets = &ck.nets;
    let gamma = T::of(ck.config.gamma);
    let n = T::of(batch.len() as f64);
    let s: Vec<[f64; OBS_DIM]> = batch.iter().map(|t| t.s).collect();
    let a: Vec<[f64; ACT_DIM]> = batch.iter().map(|t| t.a).collect();
    let s2: Vec<[f64; OBS_DIM]> = batch.iter().map(|t| t.s_next).collect();

    let u2 = nets.squashed(&ck.theta_target, &s2);
    let q2 = nets.critic.forward(&ck.psi_target, critic_rows(&s2, &u2).view());
    let trace = nets.critic.forward_traced(&ck.psi, critic_inputs::<T>(&s, &a, &[]).view());
    let mut dq = Array2::zeros((batch.len(), 1));
    let (mut critic, mut mean_q) = (T::zero(), T::zero());
    for (b, t) in batch.iter().enumerate() {
        let y = T::of(t.r) + if t.done { T::zero() } else { gamma * q2[[b, 0]] };
        let e = trace.output[[b, 0]] - y;
        critic += e * e;
        mean_q += trace.output[[b, 0]];
        dq[[b, 0]] = T::of(2.0) * e / n;
    }
    let mut grad_psi = ck.psi.zeros_like();
    nets.critic.backward(&ck.psi, &trace, dq.view(), &mut grad_psi);

    let at = nets.actor.forward_traced(&ck.theta, actor_inputs::<T>(&s, &[]).view());
    let u = at.output.mapv(crate::nn::tanh);
    let ct = nets.critic.forward_traced(&ck.psi, critic_rows(&s, &u).view());
    let actor = -ct.output.sum() / n;
    let dneg = Array2::from_elem((batch.len(), 1), -T::one() / n);
    let mut scratch = ck.psi.zeros_like();
    let dx = nets.critic.backward(&ck.psi, &ct, dneg.view(), &mut scratch);
    let mut dout = dx.slice(s![.., OBS_DIM..]).to_owned();
    ndarray::Zip::from(&mut dout).and(&u).for_each(|g, &v| *g = *g * (T::one() - v * v));
    let mut grad_theta = ck.theta.zeros_like();
    nets.actor.backward(&ck.theta, &at, dout.view(), &mut grad_theta);

    let stats = DdpgStats { critic: (critic / n).as_f64(), actor: actor.as_f64(), mean_q: (mean_q / n).as_f64() };
    Ok((DdpgGrads { theta: grad_theta, psi: grad_psi }, stats))
}

impl<T: Scalar> DdpgCheckpoint<T> {
    pub fn init(config: ExperimentConfig) -> Self {
        let nets = DdpgNets::new(&config.ddpg_hidden);
        let seed = seeding::mix(config.seed, 0xdd_9f);
        let mut theta = ParamSet::new();
        nets.actor.init(&mut theta, &mut seeding::stream(seed, "init-actor"), 0.1);
        let mut psi = ParamSet::new();
        nets.critic.init(&mut psi, &mut seeding::stream(seed, "init-critic"), 1.0);
        DdpgCheckpoint {
            opt_theta: Adam::new(&theta),
            opt_psi: Adam::new(&psi),
            theta_target: theta.clone(),
            psi_target: psi.clone(),
            nets,
            theta,
            psi,
            config,
            updates: 0,
        }
    }

    pub fn policy(&self) -> DdpgPolicy<T> {
        DdpgPolicy { nets: self.nets.clone(), theta: self.theta.clone() }
    }

    /// One step of both optimisers and both target updates.
    pub fn update(&mut self, batch: &[Transition]) -> Result<DdpgStats, OdaError> {
        let it = self.updates + 1;
        let task_id = batch.first().map_or(0, |t| t.task_id);
        let (g, st) = ddpg_losses(self, batch)?;
        let finite = [st.critic, st.actor, st.mean_q].iter().all(|v| v.is_finite());
        if !finite || !g.theta.all_finite() || !g.psi.all_finite() {
            return Err(OdaError::NonFinite {
                iteration: it,
                task_id,
                detail: format!(
                    "ddpg critic {:e}, actor {:e}, mean q {:e}, |grad actor| {:e}, |grad critic| {:e}",
                    st.critic,
                    st.actor,
                    st.mean_q,
                    g.theta.max_abs().as_f64(),
                    g.psi.max_abs().as_f64()
                ),
            });
        }
        self.opt_psi.step(&mut self.psi, &g.psi, T::of(self.config.ddpg_lr_critic))?;
        self.opt_theta.step(&mut self.theta, &g.theta, T::of(self.config.ddpg_lr_actor))?;
        let rho = T::of(self.config.polyak);
        polyak(&mut self.psi_target, &self.psi, rho);
        polyak(&mut self.theta_target, &self.theta, rho);
        self.updates = it;
        Ok(st)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.set_meta("kind", KIND);
        c.set_meta("config", self.config.render());
        c.set_meta("config_hash", self.config.hash_hex());
        c.set_meta("updates", self.updates);
        c.put_params("theta", &self.theta);
        c.put_params("theta_target", &self.theta_target);
        c.put_params("psi", &self.psi);
        c.put_params("psi_target", &self.psi_target);
        c.put_adam("adam.theta", &self.opt_theta);
        c.put_adam("adam.psi", &self.opt_psi);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self, OdaError> {
        if c.meta("kind")? != KIND {
            return Err(OdaError::Checkpoint(format!("expected kind {KIND}, found {}", c.meta("kind")?)));
        }
        let config = ExperimentConfig::parse(c.meta("config")?).map_err(|e| OdaError::Checkpoint(format!("stored config: {e}")))?;
        let stored = c.meta("config_hash")?;
        if stored != config.hash_hex() {
            return Err(OdaError::ConfigMismatch { stored: stored.to_string(), expected: config.hash_hex() });
        }
        let fresh = Self::init(config);
        let ck = DdpgCheckpoint {
            theta: c.params("theta"),
            theta_target: c.params("theta_target"),
            psi: c.params("psi"),
            psi_target: c.params("psi_target"),
            opt_theta: c.adam("adam.theta")?,
            opt_psi: c.adam("adam.psi")?,
            updates: c.meta_parsed("updates")?,
            ..fresh.clone()
        };
        let shape = |p: &ParamSet<T>| p.iter().map(|(n, a)| (n.to_string(), a.dim())).collect::<Vec<_>>();
        let ok = [&ck.theta, &ck.theta_target, &ck.opt_theta.m, &ck.opt_theta.v].iter().all(|p| shape(p) == shape(&fresh.theta))
            && [&ck.psi, &ck.psi_target, &ck.opt_psi.m, &ck.opt_psi.v].iter().all(|p| shape(p) == shape(&fresh.psi));
        if !ok {
            return Err(OdaError::Checkpoint("arrays do not match the configured networks".into()));
        }
        Ok(ck)
    }
}

#[derive(Debug, Clone)]
pub struct DdpgOutcome<T> {
    pub checkpoint: DdpgCheckpoint<T>,
    pub curve: Vec<CurvePoint>,
    pub solved_after: Option<usize>,
    /// Replay buffer: the demos, then every online episode.
    pub replay: Buffer,
}

struct DdpgLearner<'a, T> {
    ck: DdpgCheckpoint<T>,
    task: &'a TaskSpec,
    seed: u64,
}

impl<T: Scalar> OnlineLearner for DdpgLearner<'_, T> {
    fn collect(&mut self, episode_seed: u64) -> Result<Episode, OdaError> {
        let noise = eval_start_noise(self.task, &self.ck.config);
        let explore = Some(ExplorationNoise { frac: self.ck.config.ddpg_noise });
        Ok(rollout(self.task, &mut self.ck.policy(), episode_seed, noise, explore, Source::Rl)?)
    }

    fn train(&mut self, replay: &Buffer, n_updates: usize) -> Result<(), OdaError> {
        let mut rng = seeding::rng_from(seeding::mix(self.seed, self.ck.updates as u64));
        for _ in 0..n_updates {
            let batch = replay.sample_batch(self.task.task_id, self.ck.config.ddpg_batch_size, &mut rng)?;
            self.ck.update(&batch)?;
        }
        Ok(())
    }

    fn solved(&mut self, check: usize) -> Result<bool, OdaError> {
        let cfg = &self.ck.config;
        let noise = eval_start_noise(self.task, cfg);
        solves_task(&mut self.ck.policy(), self.task, cfg.solve_n_eval, cfg.solve_threshold, check_seed(cfg, check), noise)
    }
}

/// DDPG from demonstrations on one task, from freshly initialised networks.
///
/// The replay buffer starts with the demos and is never pruned; after each
/// online episode (greedy action plus Gaussian noise of
/// `ddpg_noise * a_max`) the learner takes `ddpg_updates_per_episode`
/// steps. Stops once the solves-task check passes or the episode budget is
/// spent.
pub fn ddpgfd_train<T: Scalar>(task: &TaskSpec, demos: &[Episode], config: &ExperimentConfig) -> Result<DdpgOutcome<T>, OdaError> {
    ddpgfd_continue(DdpgCheckpoint::init(config.clone()), task, demos)
}

/// As [`ddpgfd_train`] from a given starting checkpoint.
pub fn ddpgfd_continue<T: Scalar>(ck: DdpgCheckpoint<T>, task: &TaskSpec, demos: &[Episode]) -> Result<DdpgOutcome<T>, OdaError> {
    if demos.is_empty() {
        return Err(OdaError::MissingData { task_id: task.task_id, what: "demonstrations" });
    }
    let loop_cfg = ExperimentConfig { updates_per_episode: ck.config.ddpg_updates_per_episode, ..ck.config.clone() };
    let seed = seeding::mix(seeding::mix(loop_cfg.seed, 0xdd_f0), task.task_id);
    let mut learner = DdpgLearner { ck, task, seed };
    let run = online_loop(&mut learner, &loop_cfg, demos, seeding::mix(seed, 0xe9))?;
    Ok(DdpgOutcome { checkpoint: learner.ck, curve: run.curve, solved_after: run.solved_after, replay: run.online })
}

/// Offline data for one task in DDPG-from-demos provenance: the online part
/// of a DDPG-from-demos run's replay buffer, followed by
/// `ddpg_replay_episodes` reruns of the final actor with exploration noise.
pub fn ddpgfd_offline<T: Scalar>(task: &TaskSpec, demos: &[Episode], config: &ExperimentConfig) -> Result<Buffer, OdaError> {
    let out = ddpgfd_train::<T>(task, demos, config)?;
    let mut buf = Buffer::new();
    for t in out.replay.transitions().iter().filter(|t| t.source == Source::Rl) {
        buf.push(*t);
    }
    let reruns = collect_offline(
        task,
        &mut out.checkpoint.policy(),
        config.ddpg_replay_episodes,
        seeding::derive(config.seed, "ddpg-rerun", task.task_id),
        Some(ExplorationNoise { frac: config.exploration_frac }),
        eval_start_noise(task, config),
        Source::Rl,
    )?;
    buf.extend_from(&reruns);
    Ok(buf)
}
