use super::{collect_demos, collect_offline, Buffer, DataError, Episode, ExplorationNoise, ScriptedDemonstrator, SkillSchedule, Source};
use crate::config::ExperimentConfig;
use crate::seeding;
use crate::sim::TaskSpec;

/// The configured number of demonstrations on `task`.
pub fn task_demos(task: &TaskSpec, config: &ExperimentConfig) -> Result<Vec<Episode>, DataError> {
    let seed = seeding::derive(config.seed, "demos", task.task_id);
    collect_demos(task, config.demos_per_task, seed, config.demo_skill, config.start_noise_mm)
}

/// Offline episodes on `task` from the scripted controller whose skill
/// noise decays over the run, with exploration noise on every step.
pub fn task_offline_scripted(task: &TaskSpec, config: &ExperimentConfig) -> Result<Buffer, DataError> {
    let schedule = SkillSchedule { start: config.offline_skill_start, end: config.offline_skill_end, episodes: config.offline_episodes };
    let mut policy = ScriptedDemonstrator::new(task, config.offline_skill_start).with_schedule(schedule);
    collect_offline(
        task,
        &mut policy,
        config.offline_episodes,
        seeding::derive(config.seed, "offline", task.task_id),
        Some(ExplorationNoise { frac: config.exploration_frac }),
        config.start_noise_mm,
        Source::ScriptedNoise,
    )
}

/// Demonstrations for every task in one buffer.
pub fn demo_buffer(tasks: &[TaskSpec], config: &ExperimentConfig) -> Result<Buffer, DataError> {
    let mut buf = Buffer::new();
    for t in tasks {
        for ep in task_demos(t, config)? {
            buf.push_episode(&ep);
        }
    }
    Ok(buf)
}

/// Scripted offline data for every task in one buffer.
pub fn offline_buffer_scripted(tasks: &[TaskSpec], config: &ExperimentConfig) -> Result<Buffer, DataError> {
    let mut buf = Buffer::new();
    for t in tasks {
        buf.extend_from(&task_offline_scripted(t, config)?);
    }
    Ok(buf)
}
