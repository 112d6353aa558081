use std::fmt::Write as _;

use super::{adapt, eval_start_noise, solves_task, AdaptedPolicy, MetaCheckpoint, OdaError};
use crate::config::ExperimentConfig;
use crate::data::{rollout, Buffer, Episode, Source, Transition};
use crate::learners::ActMode;
use crate::seeding;
use crate::sim::TaskSpec;
use crate::Scalar;

/// One online episode of a learning curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub episode: usize,
    pub success: bool,
    pub length: usize,
    pub env_steps: usize,
}

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("episode,success,length,env_steps\n");
    for p in curve {
        let _ = writeln!(out, "{},{},{},{}", p.episode, u8::from(p.success), p.length, p.env_steps);
    }
    out
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome<T> {
    pub checkpoint: MetaCheckpoint<T>,
    pub adapted: AdaptedPolicy<T>,
    pub curve: Vec<CurvePoint>,
    /// Online episodes after which the solves-task check first passed.
    pub solved_after: Option<usize>,
    pub online: Buffer,
    pub updates: usize,
}

/// Seed of the `k`-th solves-task check of a run.
pub(crate) fn check_seed(config: &ExperimentConfig, k: usize) -> u64 {
    seeding::mix(seeding::mix(config.eval_seed, 0x50_1e), k as u64)
}

/// Callbacks a finetuning loop needs from its learner.
pub(crate) trait OnlineLearner {
    /// Run one training episode and return it.
    fn collect(&mut self, episode_seed: u64) -> Result<Episode, OdaError>;
    /// Gradient updates after an episode.
    fn train(&mut self, online: &Buffer, n_updates: usize) -> Result<(), OdaError>;
    /// Deterministic check of the current policy.
    fn solved(&mut self, check: usize) -> Result<bool, OdaError>;
}

pub(crate) struct OnlineRun {
    pub curve: Vec<CurvePoint>,
    pub solved_after: Option<usize>,
    pub online: Buffer,
    pub updates: usize,
}

/// Shared episode loop: check at entry, then up to `budget` episodes with
/// updates after each and a check every `check_every`.
pub(crate) fn online_loop(
    learner: &mut impl OnlineLearner,
    config: &ExperimentConfig,
    preseed: &[Episode],
    episode_seed_base: u64,
) -> Result<OnlineRun, OdaError> {
    let mut online = Buffer::new();
    for ep in preseed {
        online.push_episode(ep);
    }
    let mut run = OnlineRun { curve: Vec::new(), solved_after: None, online, updates: 0 };
    if config.finetune_budget == 0 {
        return Ok(run);
    }
    let mut checks = 0;
    if learner.solved(checks)? {
        run.solved_after = Some(0);
        return Ok(run);
    }
    let mut env_steps = 0;
    for ep_idx in 0..config.finetune_budget {
        let ep = learner.collect(seeding::mix(episode_seed_base, ep_idx as u64))?;
        env_steps += ep.len();
        run.online.push_episode(&ep);
        run.curve.push(CurvePoint { episode: ep_idx + 1, success: ep.success, length: ep.len(), env_steps });
        learner.train(&run.online, config.updates_per_episode)?;
        run.updates += config.updates_per_episode;
        if (ep_idx + 1) % config.check_every == 0 {
            checks += 1;
            if learner.solved(checks)? {
                run.solved_after = Some(ep_idx + 1);
                break;
            }
        }
    }
    Ok(run)
}

struct OdaLearner<'a, T> {
    checkpoint: MetaCheckpoint<T>,
    adapted: AdaptedPolicy<T>,
    task: &'a TaskSpec,
    context: Buffer,
    demo_transitions: Vec<Transition>,
    seed: u64,
}

impl<T: Scalar> OnlineLearner for OdaLearner<'_, T> {
    fn collect(&mut self, episode_seed: u64) -> Result<Episode, OdaError> {
        let mut pol = self.adapted.policy(ActMode::Stochastic);
        let noise = eval_start_noise(self.task, &self.checkpoint.config);
        Ok(rollout(self.task, &mut pol, episode_seed, noise, None, Source::Rl)?)
    }

    fn train(&mut self, online: &Buffer, n_updates: usize) -> Result<(), OdaError> {
        let cfg = &self.checkpoint.config;
        let (c, b) = (cfg.context_size, cfg.finetune_batch_size);
        let mut rng = seeding::rng_from(seeding::mix(self.seed, self.checkpoint.iteration as u64));
        let id = self.task.task_id;
        for _ in 0..n_updates {
            let ctx = self.context.sample_context(id, c, &mut rng)?;
            let batch = online.sample_batch(id, b, &mut rng)?;
            self.checkpoint.update(&[(id, ctx, batch)], &mut rng)?;
        }
        let z_mode = self.checkpoint.config.z_mode;
        self.adapted = adapt(&self.checkpoint, &self.demo_transitions, z_mode, self.seed)?;
        Ok(())
    }

    fn solved(&mut self, check: usize) -> Result<bool, OdaError> {
        let cfg = &self.checkpoint.config;
        let noise = eval_start_noise(self.task, cfg);
        solves_task(&mut self.adapted.policy(ActMode::Mean), self.task, cfg.solve_n_eval, cfg.solve_threshold, check_seed(cfg, check), noise)
    }
}

/// Online finetuning of every network on one task.
///
/// Episodes are collected with the stochastic policy, stored in an online
/// buffer (optionally pre-seeded with the demos) and trained on with the
/// same losses as meta-training; contexts are always drawn from the demos.
pub fn finetune<T: Scalar>(checkpoint: &MetaCheckpoint<T>, task: &TaskSpec, demos: &[Episode]) -> Result<FinetuneOutcome<T>, OdaError> {
    let config = checkpoint.config.clone();
    let mut context = Buffer::new();
    for ep in demos {
        context.push_episode(ep);
    }
    let demo_transitions: Vec<Transition> = context.transitions().to_vec();
    let seed = seeding::mix(seeding::mix(config.seed, 0xf7), task.task_id);
    let adapted = adapt(checkpoint, &demo_transitions, config.z_mode, seed)?;
    let mut learner = OdaLearner { checkpoint: checkpoint.clone(), adapted, task, context, demo_transitions, seed };
    let preseed = if config.preseed_demos { demos } else { &[] };
    let run = online_loop(&mut learner, &config, preseed, seeding::mix(seed, 0xe9))?;
    Ok(FinetuneOutcome {
        checkpoint: learner.checkpoint,
        adapted: learner.adapted,
        curve: run.curve,
        solved_after: run.solved_after,
        online: run.online,
        updates: run.updates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::collect_demos;
    use crate::oda::tests::tiny_config;

    fn setup(budget: usize, threshold: f64, preseed: bool) -> (MetaCheckpoint<f64>, TaskSpec, Vec<Episode>) {
        let cfg = ExperimentConfig {
            finetune_budget: budget,
            solve_threshold: threshold,
            solve_n_eval: 2,
            updates_per_episode: 2,
            finetune_batch_size: 16,
            preseed_demos: preseed,
            ..tiny_config()
        };
        let task = TaskSpec::easy(0);
        let demos = collect_demos(&task, 3, 1, 0.1, 1.0).unwrap();
        (MetaCheckpoint::init(cfg), task, demos)
    }

    #[test]
    fn zero_budget_returns_unchanged() {
        let (ck, task, demos) = setup(0, 0.95, true);
        let out = finetune(&ck, &task, &demos).unwrap();
        assert!(out.curve.is_empty());
        assert_eq!(out.updates, 0);
        assert_eq!(out.checkpoint.theta, ck.theta);
    }

    #[test]
    fn already_solved_exits_without_updates() {
        let (ck, task, demos) = setup(10, 0.0, true);
        let out = finetune(&ck, &task, &demos).unwrap();
        assert_eq!(out.solved_after, Some(0));
        assert!(out.curve.is_empty());
        assert_eq!(out.updates, 0);
        assert_eq!(out.checkpoint.psi, ck.psi);
    }

    #[test]
    fn buffer_and_curve_account_for_every_episode() {
        for preseed in [false, true] {
            let (ck, task, demos) = setup(7, 1.0, preseed);
            let out = finetune(&ck, &task, &demos).unwrap();
            assert_eq!(out.curve.len(), 7);
            let demo_len: usize = demos.iter().map(Episode::len).sum();
            let online: usize = out.curve.iter().map(|p| p.length).sum();
            assert_eq!(out.online.len(), online + if preseed { demo_len } else { 0 });
            assert_eq!(out.curve.last().unwrap().env_steps, online);
            assert_eq!(out.updates, 14);
            assert_eq!(out.checkpoint.iteration, 14);
            assert_ne!(out.checkpoint.theta, ck.theta);
            let again = finetune(&ck, &task, &demos).unwrap();
            assert_eq!(again.curve, out.curve);
        }
    }

    #[test]
    fn curve_csv_has_one_row_per_episode() {
        let c = vec![CurvePoint { episode: 1, success: true, length: 12, env_steps: 12 }];
        assert_eq!(curve_csv(&c), "episode,success,length,env_steps\n1,1,12,12\n");
    }
}
