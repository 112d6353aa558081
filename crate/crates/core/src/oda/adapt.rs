use super::{MetaCheckpoint, OdaError};
use crate::config::{ExperimentConfig, ZMode};
use crate::data::{rollout, Source, Transition};
use crate::learners::{encode, sample_latent, ActMode, ActorPolicy, LatentPosterior, Nets};
use crate::nn::ParamSet;
use crate::policy::Policy;
use crate::seeding;
use crate::sim::TaskSpec;
use crate::Scalar;

/// The meta-trained actor with its latent fixed from a new task's
/// demonstrations.
#[derive(Debug, Clone)]
pub struct AdaptedPolicy<T> {
    pub nets: Nets,
    pub theta: ParamSet<T>,
    pub posterior: LatentPosterior<T>,
    pub z: Vec<T>,
}

impl<T: Scalar> AdaptedPolicy<T> {
    pub fn policy(&self, mode: ActMode) -> ActorPolicy<T> {
        ActorPolicy::new(self.nets.clone(), self.theta.clone(), self.z.clone(), mode)
    }

    /// Same actor with a different latent.
    pub fn with_z(&self, z: Vec<T>) -> Self {
        AdaptedPolicy { z, ..self.clone() }
    }
}

/// Infer the task latent from `demos` (every transition is one factor). No
/// parameter changes. With a zero-width latent the demos are ignored.
pub fn adapt<T: Scalar>(
    checkpoint: &MetaCheckpoint<T>,
    demos: &[Transition],
    z_mode: ZMode,
    seed: u64,
) -> Result<AdaptedPolicy<T>, OdaError> {
    let d_z = checkpoint.nets.d_z();
    let posterior = if d_z == 0 { LatentPosterior::standard(0) } else { encode(&checkpoint.nets, &checkpoint.phi, demos)? };
    let z = match z_mode {
        ZMode::Mean => posterior.mean.clone(),
        ZMode::Sample => sample_latent(&posterior, &mut seeding::stream(seed, "adapt-z")).0,
    };
    Ok(AdaptedPolicy { nets: checkpoint.nets.clone(), theta: checkpoint.theta.clone(), posterior, z })
}

/// Start-pose noise used for evaluation on `task`.
pub fn eval_start_noise(task: &TaskSpec, config: &ExperimentConfig) -> f64 {
    if task.no_start_noise {
        0.0
    } else {
        config.start_noise_mm
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub episode_seed: u64,
    pub success: bool,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub success_rate: f64,
    pub mean_length: f64,
    pub records: Vec<EvalRecord>,
}

/// `n` episodes with seeds derived from `(seed, task_id, k)`. The caller
/// chooses the policy mode; evaluation proper uses the mean action.
pub fn evaluate(policy: &mut impl Policy, task: &TaskSpec, n: usize, seed: u64, start_noise_mm: f64) -> Result<EvalResult, OdaError> {
    let base = seeding::mix(seed, task.task_id);
    let mut records = Vec::with_capacity(n);
    for k in 0..n as u64 {
        let s = seeding::mix(base, k);
        let ep = rollout(task, policy, s, start_noise_mm, None, Source::Rl)?;
        records.push(EvalRecord { episode_seed: s, success: ep.success, length: ep.len() });
    }
    let n_f = n.max(1) as f64;
    Ok(EvalResult {
        success_rate: records.iter().filter(|r| r.success).count() as f64 / n_f,
        mean_length: records.iter().map(|r| r.length as f64).sum::<f64>() / n_f,
        records,
    })
}

/// Whether `policy` reaches `threshold` success over `n_eval` episodes. A
/// threshold of zero is met without running anything.
pub fn solves_task(
    policy: &mut impl Policy,
    task: &TaskSpec,
    n_eval: usize,
    threshold: f64,
    seed: u64,
    start_noise_mm: f64,
) -> Result<bool, OdaError> {
    if threshold <= 0.0 {
        return Ok(true);
    }
    Ok(evaluate(policy, task, n_eval, seed, start_noise_mm)?.success_rate >= threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ScriptedDemonstrator;
    use crate::oda::tests::{tiny_config, tiny_data};
    use crate::policy::ZeroPolicy;

    #[test]
    fn adapt_is_pure_and_reproducible() {
        let (_, demos, _) = tiny_data(1);
        let ck = MetaCheckpoint::<f64>::init(tiny_config());
        let a = adapt(&ck, demos.transitions(), ZMode::Mean, 1).unwrap();
        assert_eq!(a.z, a.posterior.mean);
        assert_eq!(a.theta, ck.theta);
        let s1 = adapt(&ck, demos.transitions(), ZMode::Sample, 1).unwrap();
        let s2 = adapt(&ck, demos.transitions(), ZMode::Sample, 1).unwrap();
        let s3 = adapt(&ck, demos.transitions(), ZMode::Sample, 2).unwrap();
        assert_eq!(s1.z, s2.z);
        assert_ne!(s1.z, s3.z);
        assert!(matches!(adapt(&ck, &[], ZMode::Mean, 0), Err(OdaError::Learn(_))));
    }

    #[test]
    fn threshold_zero_always_solves() {
        let t = TaskSpec::easy(0);
        assert!(solves_task(&mut ZeroPolicy, &t, 5, 0.0, 0, 1.0).unwrap());
        assert!(!solves_task(&mut ZeroPolicy, &t, 5, 0.5, 0, 1.0).unwrap());
    }

    #[test]
    fn demonstrator_solves_easy_task() {
        let t = TaskSpec::easy(0);
        let mut demo = ScriptedDemonstrator::new(&t, 0.1);
        assert!(solves_task(&mut demo, &t, 20, 0.95, 77, 1.0).unwrap());
    }

    #[test]
    fn evaluation_is_deterministic() {
        let t = TaskSpec::easy(0);
        let ck = MetaCheckpoint::<f64>::init(tiny_config());
        let ad = adapt(&ck, tiny_data(1).1.transitions(), ZMode::Mean, 0).unwrap();
        let a = evaluate(&mut ad.policy(ActMode::Mean), &t, 3, 5, 1.0).unwrap();
        let b = evaluate(&mut ad.policy(ActMode::Mean), &t, 3, 5, 1.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 3);
    }
}
