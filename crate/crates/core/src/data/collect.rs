use rand_distr::{Distribution, StandardNormal};

use super::{Buffer, DataError, Episode, Source, Transition};
use crate::policy::Policy;
use crate::seeding;
use crate::sim::{self, TaskSpec, ACT_DIM, A_MAX};

/// Additive zero-mean Gaussian noise on commanded twists, with per-component
/// standard deviation `frac * A_MAX[i]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplorationNoise {
    pub frac: f64,
}

/// Run one episode and record what was executed.
///
/// The recorded action is the post-noise, post-clip twist the simulator
/// actually applied.
pub fn rollout(
    task: &TaskSpec,
    policy: &mut impl Policy,
    episode_seed: u64,
    start_noise_mm: f64,
    exploration: Option<ExplorationNoise>,
    source: Source,
) -> Result<Episode, DataError> {
    let (mut state, mut obs) = sim::reset(task, episode_seed, start_noise_mm)?;
    let mut noise_rng = seeding::rng_from(seeding::mix(episode_seed, 0xe8_91_0e));
    policy.begin_episode(episode_seed);
    let mut transitions: Vec<Transition> = Vec::new();
    let success = loop {
        let mut a = policy.act(&obs);
        if let Some(n) = exploration.filter(|n| n.frac > 0.0) {
            for k in 0..ACT_DIM {
                let e: f64 = StandardNormal.sample(&mut noise_rng);
                a.0[k] += n.frac * A_MAX[k] * e;
            }
        }
        let a = a.clipped();
        let out = sim::step(&state, &a, task)?;
        transitions.push(Transition {
            s: obs.0,
            a: a.0,
            r: out.reward,
            s_next: out.obs.0,
            a_next: [0.0; ACT_DIM],
            a_next_valid: false,
            done: out.done,
            task_id: task.task_id,
            source,
        });
        obs = out.obs;
        state = out.state;
        if out.done {
            break out.success;
        }
    };
    for k in 0..transitions.len() - 1 {
        transitions[k].a_next = transitions[k + 1].a;
        transitions[k].a_next_valid = true;
    }
    Ok(Episode { task_id: task.task_id, episode_seed, source, success, transitions })
}

/// Roll out `policy` for `n_episodes`, keeping every episode.
pub fn collect_offline(
    task: &TaskSpec,
    policy: &mut impl Policy,
    n_episodes: usize,
    seed: u64,
    exploration: Option<ExplorationNoise>,
    start_noise_mm: f64,
    source: Source,
) -> Result<Buffer, DataError> {
    let mut buf = Buffer::new();
    for k in 0..n_episodes as u64 {
        let ep = rollout(task, policy, seeding::mix(seed, k), start_noise_mm, exploration, source)?;
        buf.push_episode(&ep);
    }
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::ZeroPolicy;
    use crate::sim::MAX_EPISODE_STEPS;

    #[test]
    fn zero_policy_fills_one_full_episode() {
        let mut t = TaskSpec::easy(2);
        t.hole_center_x = 8.0;
        let b = collect_offline(&t, &mut ZeroPolicy, 1, 3, None, 1.0, Source::Rl).unwrap();
        assert_eq!(b.len(), MAX_EPISODE_STEPS);
        assert!(b.transitions().iter().all(|x| x.r == 0.0));
        assert_eq!(b.episode_count_for(2), 1);
    }

    #[test]
    fn episodes_chain_and_counts_add_up() {
        let mut t = TaskSpec::easy(2);
        t.hole_center_x = 8.0;
        let mut total = 0;
        let mut buf = Buffer::new();
        for k in 0..3 {
            let ep = rollout(&t, &mut ZeroPolicy, k, 1.0, Some(ExplorationNoise { frac: 0.5 }), Source::Rl).unwrap();
            ep.check().unwrap();
            total += ep.len();
            buf.push_episode(&ep);
        }
        assert_eq!(buf.len(), total);
    }
}
