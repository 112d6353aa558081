//! Transitions, episodes, buffers, and the data that feeds training: a
//! scripted demonstrator, rollout collection, and an exact on-disk format.

mod collect;
mod demonstrator;
mod format;
mod study;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

pub use collect::{collect_offline, rollout, ExplorationNoise};
pub use demonstrator::{collect_demos, scripted_demonstrator, ScriptedDemonstrator, SkillSchedule};
pub use study::{demo_buffer, offline_buffer_scripted, task_demos, task_offline_scripted};
pub use format::{load_buffer, read_buffer, save_buffer, write_buffer, MAGIC, SCHEMA_VERSION};

use crate::sim::{ACT_DIM, OBS_DIM};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("no transitions for task {0}")]
    UnknownTask(u64),
    #[error("no demonstration transitions for task {0}")]
    NoDemos(u64),
    #[error("bad magic bytes: not a transition buffer file")]
    BadMagic,
    #[error("schema version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("file truncated: {0}")]
    Truncated(String),
    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("malformed episode: {0}")]
    Episode(String),
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Provenance of a transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Demo,
    /// Collected by a learning agent (DDPG-from-demos or online finetuning).
    Rl,
    /// Scripted controller with exploration noise.
    ScriptedNoise,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Demo => "demo",
            Source::Rl => "rl",
            Source::ScriptedNoise => "scripted-noise",
        })
    }
}

impl FromStr for Source {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, DataError> {
        match s {
            "demo" => Ok(Source::Demo),
            "rl" => Ok(Source::Rl),
            "scripted-noise" => Ok(Source::ScriptedNoise),
            other => Err(DataError::Header(format!("unknown source {other:?}"))),
        }
    }
}

/// One `(s, a, r, s', a')` tuple.
///
/// `a_next` is the action actually taken at `s_next`; on the terminal
/// transition it is the zero vector and `a_next_valid` is false.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: [f64; OBS_DIM],
    pub a: [f64; ACT_DIM],
    pub r: f64,
    pub s_next: [f64; OBS_DIM],
    pub a_next: [f64; ACT_DIM],
    pub a_next_valid: bool,
    pub done: bool,
    pub task_id: u64,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub task_id: u64,
    pub episode_seed: u64,
    pub source: Source,
    pub success: bool,
    pub transitions: Vec<Transition>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Check chaining, reward sparsity, terminal flags and `a_next` linkage.
    pub fn check(&self) -> Result<(), DataError> {
        let err = |m: String| Err(DataError::Episode(m));
        let n = self.transitions.len();
        if n == 0 {
            return err("empty episode".into());
        }
        let mut reward_sum = 0.0;
        for (k, t) in self.transitions.iter().enumerate() {
            if t.task_id != self.task_id {
                return err(format!("transition {k} has task {} != {}", t.task_id, self.task_id));
            }
            if t.r != 0.0 && t.r != 1.0 {
                return err(format!("transition {k} has reward {}", t.r));
            }
            reward_sum += t.r;
            let last = k + 1 == n;
            if t.done != last {
                return err(format!("transition {k}: done={} but last={last}", t.done));
            }
            if t.a_next_valid == t.done {
                return err(format!("transition {k}: a_next_valid must be !done"));
            }
            if t.r == 1.0 && !last {
                return err(format!("reward at non-terminal transition {k}"));
            }
            if !last {
                let nx = &self.transitions[k + 1];
                if t.s_next != nx.s || t.a_next != nx.a {
                    return err(format!("transitions {k} and {} do not chain", k + 1));
                }
            } else if t.a_next != [0.0; ACT_DIM] {
                return err("terminal a_next must be zero".into());
            }
        }
        if reward_sum > 1.0 {
            return err("more than one rewarded transition".into());
        }
        if self.success != (reward_sum == 1.0) {
            return err("success flag disagrees with rewards".into());
        }
        Ok(())
    }
}

/// Append-only transition store indexed by task and provenance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Buffer {
    transitions: Vec<Transition>,
    by_task: BTreeMap<u64, Vec<usize>>,
    demos_by_task: BTreeMap<u64, Vec<usize>>,
    episodes_by_task: BTreeMap<u64, usize>,
}

impl Buffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: Transition) {
        let idx = self.transitions.len();
        self.by_task.entry(t.task_id).or_default().push(idx);
        if t.source == Source::Demo {
            self.demos_by_task.entry(t.task_id).or_default().push(idx);
        }
        if t.done {
            *self.episodes_by_task.entry(t.task_id).or_default() += 1;
        }
        self.transitions.push(t);
    }

    pub fn push_episode(&mut self, ep: &Episode) {
        for t in &ep.transitions {
            self.push(*t);
        }
    }

    pub fn extend_from(&mut self, other: &Buffer) {
        for t in &other.transitions {
            self.push(*t);
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn task_ids(&self) -> Vec<u64> {
        self.by_task.keys().copied().collect()
    }

    pub fn count_for(&self, task_id: u64) -> usize {
        self.by_task.get(&task_id).map_or(0, Vec::len)
    }

    pub fn demo_count_for(&self, task_id: u64) -> usize {
        self.demos_by_task.get(&task_id).map_or(0, Vec::len)
    }

    /// Completed episodes (terminal transitions) stored for a task.
    pub fn episode_count_for(&self, task_id: u64) -> usize {
        self.episodes_by_task.get(&task_id).copied().unwrap_or(0)
    }

    pub fn task_transitions(&self, task_id: u64) -> impl Iterator<Item = &Transition> {
        self.by_task.get(&task_id).into_iter().flatten().map(|&i| &self.transitions[i])
    }

    /// Split the stored transitions back into episodes (by terminal flag).
    pub fn episodes(&self, task_id: u64) -> Vec<Vec<Transition>> {
        let mut out = Vec::new();
        let mut cur = Vec::new();
        for t in self.task_transitions(task_id) {
            cur.push(*t);
            if t.done {
                out.push(std::mem::take(&mut cur));
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
        out
    }

    /// Uniform i.i.d. draws, with replacement, from one task's transitions.
    pub fn sample_batch(&self, task_id: u64, batch_size: usize, rng: &mut impl Rng) -> Result<Vec<Transition>, DataError> {
        let idx = self.by_task.get(&task_id).filter(|v| !v.is_empty()).ok_or(DataError::UnknownTask(task_id))?;
        Ok((0..batch_size).map(|_| self.transitions[idx[rng.random_range(0..idx.len())]]).collect())
    }

    /// Uniform draws from one task's demonstration transitions only.
    ///
    /// Draws are with replacement, so a context larger than the demo set is
    /// still well defined.
    pub fn sample_context(&self, task_id: u64, context_size: usize, rng: &mut impl Rng) -> Result<Vec<Transition>, DataError> {
        if !self.by_task.contains_key(&task_id) {
            return Err(DataError::UnknownTask(task_id));
        }
        let idx = self.demos_by_task.get(&task_id).filter(|v| !v.is_empty()).ok_or(DataError::NoDemos(task_id))?;
        Ok((0..context_size).map(|_| self.transitions[idx[rng.random_range(0..idx.len())]]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from;

    pub(crate) fn toy(task_id: u64, k: usize, source: Source, done: bool) -> Transition {
        let mut s = [0.0; OBS_DIM];
        s[0] = k as f64;
        let mut s_next = s;
        s_next[0] += 1.0;
        Transition {
            s,
            a: [k as f64, 0.0, 0.0],
            r: 0.0,
            s_next,
            a_next: if done { [0.0; 3] } else { [k as f64 + 1.0, 0.0, 0.0] },
            a_next_valid: !done,
            done,
            task_id,
            source,
        }
    }

    fn buffer_with(n: usize) -> Buffer {
        let mut b = Buffer::new();
        for k in 0..n {
            b.push(toy(4, k, Source::ScriptedNoise, k + 1 == n));
        }
        b
    }

    #[test]
    fn single_transition_is_repeated() {
        let b = buffer_with(1);
        let batch = b.sample_batch(4, 4, &mut rng_from(0)).unwrap();
        assert_eq!(batch.len(), 4);
        assert!(batch.iter().all(|t| *t == b.transitions()[0]));
    }

    #[test]
    fn sampling_is_deterministic_and_checks_task() {
        let b = buffer_with(10);
        let x = b.sample_batch(4, 16, &mut rng_from(5)).unwrap();
        let y = b.sample_batch(4, 16, &mut rng_from(5)).unwrap();
        assert_eq!(x, y);
        assert!(matches!(b.sample_batch(9, 1, &mut rng_from(0)), Err(DataError::UnknownTask(9))));
    }

    /// Chi-square statistic of draw counts against a uniform expectation.
    fn chi_square(counts: &[usize], draws: usize) -> f64 {
        let e = draws as f64 / counts.len() as f64;
        counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum()
    }

    // chi-square upper 1% point with 9 degrees of freedom
    const CHI2_9DF_99: f64 = 21.666;

    // With 20 independent runs at the 1% level, 3 or more rejections has
    // probability about 0.001 under uniform sampling.
    #[test]
    fn batch_sampling_is_uniform() {
        let b = buffer_with(10);
        let draws = 100_000;
        let mut rejections = 0;
        for seed in 0..20 {
            let mut rng = rng_from(seed);
            let mut counts = [0usize; 10];
            for t in b.sample_batch(4, draws, &mut rng).unwrap() {
                counts[t.s[0] as usize] += 1;
            }
            if chi_square(&counts, draws) >= CHI2_9DF_99 {
                rejections += 1;
            }
        }
        assert!(rejections <= 2, "{rejections} rejections");
    }

    #[test]
    fn context_only_draws_demos_uniformly() {
        let mut b = buffer_with(30);
        for k in 0..10 {
            b.push(toy(4, 100 + k, Source::Demo, k == 9));
        }
        let mut rng = rng_from(77);
        let draws = 100_000;
        let ctx = b.sample_context(4, draws, &mut rng).unwrap();
        assert!(ctx.iter().all(|t| t.source == Source::Demo));
        let mut counts = [0usize; 10];
        for t in &ctx {
            counts[t.s[0] as usize - 100] += 1;
        }
        assert!(chi_square(&counts, draws) < CHI2_9DF_99);
        assert!(b.sample_context(4, 0, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn context_errors() {
        let b = buffer_with(3);
        assert!(matches!(b.sample_context(4, 2, &mut rng_from(0)), Err(DataError::NoDemos(4))));
        assert!(matches!(b.sample_context(5, 2, &mut rng_from(0)), Err(DataError::UnknownTask(5))));
    }

    #[test]
    fn counters_are_exact() {
        let mut b = buffer_with(7);
        b.push(toy(2, 0, Source::Demo, true));
        assert_eq!(b.count_for(4), 7);
        assert_eq!(b.count_for(2), 1);
        assert_eq!(b.demo_count_for(2), 1);
        assert_eq!(b.episode_count_for(4), 1);
        assert_eq!(b.task_ids(), vec![2, 4]);
        assert_eq!(b.episodes(4).len(), 1);
    }
}
