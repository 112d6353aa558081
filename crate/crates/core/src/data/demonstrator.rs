//! Scripted stand-in for a human teleoperator.
//!
//! The script knows the nominal hole location (relative to the nominal start
//! pose) but not the start-pose perturbation, so it has to find the opening
//! by feel: approach beside the nominal location, touch down, sweep across
//! it with a decaying sinusoid while pressing lightly, and switch to a
//! compliant push once the peg drops.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{rollout, DataError, Episode, Source};
use crate::policy::Policy;
use crate::seeding;
use crate::sim::{Action, Observation, TaskSpec, A_MAX, DT};

const APPROACH_GAIN: f64 = 4.0;
/// Lateral error below which the approach starts descending, mm.
const APPROACH_TOL: f64 = 0.4;
const DESCEND_SPEED: f64 = 10.0;
/// Normal force that counts as touchdown, N.
const TOUCH_FORCE: f64 = 0.5;
pub const SEARCH_AMPLITUDE: f64 = 1.5;
const SEARCH_HALF_PERIOD: f64 = 1.5;
const SEARCH_DECAY: f64 = 4.0;
const SEARCH_GAIN: f64 = 5.0;
/// Downward speed commanded while sweeping; sets the press force (about
/// 1 N per mm/s).
const PRESS_SPEED: f64 = 3.0;
/// Sink below touchdown height that counts as captured, mm.
const CAPTURE_DROP: f64 = 0.3;
const INSERT_SPEED: f64 = 15.0;
/// Lateral compliance while pushing, (mm/s)/N.
const COMPLY_GAIN: f64 = 0.5;
const WIGGLE_SPEED: f64 = 2.0;
const ANGLE_GAIN: f64 = 2.0;
/// Per-episode approach offset at unit skill noise, mm.
const SKILL_OFFSET: f64 = 1.0;
/// Per-step twist jitter at unit skill noise, as a fraction of `A_MAX`.
const SKILL_JITTER: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Approach,
    Search { t: f64, x_touch: f64, y_touch: f64 },
    Insert { y_touch: f64 },
}

#[derive(Debug, Clone)]
pub struct ScriptedDemonstrator {
    hole_x: f64,
    friction: f64,
    skill_noise: f64,
    phase: Phase,
    offset: f64,
    steps: u64,
    rng: ChaCha8Rng,
    schedule: Option<SkillSchedule>,
    episodes_begun: usize,
}

/// Skill noise that moves linearly from `start` to `end` over `episodes`
/// episodes, then stays at `end`. Mimics the replay buffer of an agent
/// that improves while collecting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkillSchedule {
    pub start: f64,
    pub end: f64,
    pub episodes: usize,
}

impl SkillSchedule {
    pub fn at(&self, episode: usize) -> f64 {
        if self.episodes <= 1 {
            return self.end;
        }
        let f = (episode as f64 / (self.episodes - 1) as f64).min(1.0);
        self.start + f * (self.end - self.start)
    }
}

impl ScriptedDemonstrator {
    pub fn new(task: &TaskSpec, skill_noise: f64) -> Self {
        ScriptedDemonstrator {
            hole_x: task.hole_center_x,
            friction: task.friction_coeff,
            skill_noise: skill_noise.max(0.0),
            phase: Phase::Approach,
            offset: 0.0,
            steps: 0,
            rng: seeding::rng_from(0),
            schedule: None,
            episodes_begun: 0,
        }
    }

    pub fn with_schedule(mut self, schedule: SkillSchedule) -> Self {
        self.schedule = Some(schedule);
        self
    }

    fn search_target(&self, t: f64, x_touch: f64) -> (f64, f64) {
        let w = PI / SEARCH_HALF_PERIOD;
        let env = (-t / SEARCH_DECAY).exp();
        let x = x_touch + SEARCH_AMPLITUDE - SEARCH_AMPLITUDE * env * (w * t).cos();
        let v = SEARCH_AMPLITUDE * env * (w * (w * t).sin() + (w * t).cos() / SEARCH_DECAY);
        (x, v)
    }

    fn plan(&mut self, obs: &Observation) -> [f64; 3] {
        let [x, y, theta] = obs.rel_pose();
        let vy = obs.vel()[1];
        let [fx, fy, tau] = obs.wrench();
        let omega = -ANGLE_GAIN * theta - 1e-3 * tau;
        loop {
            match self.phase {
                Phase::Approach => {
                    if fy > TOUCH_FORCE {
                        self.phase = Phase::Search { t: 0.0, x_touch: x, y_touch: y };
                        continue;
                    }
                    let target = self.hole_x + self.offset - SEARCH_AMPLITUDE;
                    let err = target - x;
                    let vy_cmd = if err.abs() < APPROACH_TOL { -DESCEND_SPEED } else { 0.0 };
                    return [APPROACH_GAIN * err, vy_cmd, omega];
                }
                Phase::Search { t, x_touch, y_touch } => {
                    if y_touch - y > CAPTURE_DROP {
                        self.phase = Phase::Insert { y_touch };
                        continue;
                    }
                    let t_next = t + DT;
                    let (xt, vt) = self.search_target(t_next, x_touch);
                    self.phase = Phase::Search { t: t_next, x_touch, y_touch };
                    // contact lost while pressing: hold still and let it drop
                    let vx_cmd = if fy < TOUCH_FORCE { 0.0 } else { vt + SEARCH_GAIN * (xt - x) };
                    return [vx_cmd, -PRESS_SPEED, omega];
                }
                Phase::Insert { y_touch } => {
                    if y > y_touch + 0.5 {
                        self.phase = Phase::Approach;
                        continue;
                    }
                    let stuck = vy > -1.0 && fy > 1.0;
                    let wiggle = if stuck {
                        let sign = if (self.steps / 2) % 2 == 0 { 1.0 } else { -1.0 };
                        sign * WIGGLE_SPEED * (0.5 + self.friction)
                    } else {
                        0.0
                    };
                    return [COMPLY_GAIN * fx + wiggle, -INSERT_SPEED, omega];
                }
            }
        }
    }
}

impl Policy for ScriptedDemonstrator {
    fn begin_episode(&mut self, episode_seed: u64) {
        if let Some(s) = self.schedule {
            self.skill_noise = s.at(self.episodes_begun).max(0.0);
        }
        self.episodes_begun += 1;
        self.rng = seeding::rng_from(seeding::mix(episode_seed, 0xde_40));
        let u: f64 = self.rng.random();
        self.offset = self.skill_noise * SKILL_OFFSET * (2.0 * u - 1.0);
        self.phase = Phase::Approach;
        self.steps = 0;
    }

    fn act(&mut self, obs: &Observation) -> Action {
        let mut a = self.plan(obs);
        if self.skill_noise > 0.0 {
            for (k, v) in a.iter_mut().enumerate() {
                let e: f64 = StandardNormal.sample(&mut self.rng);
                *v += self.skill_noise * SKILL_JITTER * A_MAX[k] * e;
            }
        }
        self.steps += 1;
        Action(a).clipped()
    }
}

/// One demonstration episode with the paper-protocol start noise of 1 mm.
pub fn scripted_demonstrator(
    task: &TaskSpec,
    episode_seed: u64,
    skill_noise: f64,
    start_noise_mm: f64,
) -> Result<Episode, DataError> {
    let mut demo = ScriptedDemonstrator::new(task, skill_noise);
    rollout(task, &mut demo, episode_seed, start_noise_mm, None, Source::Demo)
}

/// `n` demonstrations with seeds derived from `seed`.
pub fn collect_demos(
    task: &TaskSpec,
    n: usize,
    seed: u64,
    skill_noise: f64,
    start_noise_mm: f64,
) -> Result<Vec<Episode>, DataError> {
    (0..n as u64)
        .map(|k| scripted_demonstrator(task, seeding::mix(seed, k), skill_noise, start_noise_mm))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::make_task_family;

    #[test]
    fn centered_hole_no_noise_succeeds_with_monotone_push() {
        let t = TaskSpec::easy(0);
        let ep = scripted_demonstrator(&t, 1, 0.0, 0.0).unwrap();
        ep.check().unwrap();
        assert!(ep.success, "len {}", ep.len());
        assert!(ep.len() <= 60);
        // once sinking into the hole, height never increases
        let ys: Vec<f64> = ep.transitions.iter().map(|t| t.s_next[1]).collect();
        let start = ys.iter().position(|&y| y < -HOVER_DROP).unwrap();
        for w in ys[start..].windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{w:?}");
        }
    }
    const HOVER_DROP: f64 = crate::sim::dynamics::HOVER_HEIGHT + 0.5;

    #[test]
    fn schedule_interpolates() {
        let s = SkillSchedule { start: 6.0, end: 0.0, episodes: 4 };
        assert_eq!(s.at(0), 6.0);
        assert_eq!(s.at(3), 0.0);
        assert_eq!(s.at(10), 0.0);
        assert!((s.at(1) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic() {
        let (train, _) = make_task_family(3, 2, 0).unwrap();
        let a = scripted_demonstrator(&train[1], 9, 0.2, 1.0).unwrap();
        let b = scripted_demonstrator(&train[1], 9, 0.2, 1.0).unwrap();
        assert_eq!(a, b);
    }
}
