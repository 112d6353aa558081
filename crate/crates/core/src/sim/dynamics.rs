use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::contact::contact_wrench;
use super::task::TaskSpec;
use super::{Pose, SimError, Twist, Wrench};
use crate::seeding;

/// Agent control period in seconds (10 Hz).
pub const DT: f64 = 0.1;
/// Integration substeps per control period.
pub const SUBSTEPS: usize = 100;
pub const MAX_EPISODE_STEPS: usize = 100;
/// Per-component twist limits: mm/s, mm/s, rad/s.
pub const A_MAX: [f64; 3] = [20.0, 20.0, 0.5];
/// Time constant of the velocity-tracking controller, seconds.
pub const TAU_TRACK: f64 = 0.05;
/// Apparent translational mass of the tracked TCP, N*s^2/mm. Together with
/// `TAU_TRACK` this gives an admittance of 1 (mm/s)/N.
pub const EFFECTIVE_MASS: f64 = 0.05;
/// Apparent rotational inertia, N*mm*s^2.
pub const EFFECTIVE_INERTIA: f64 = 200.0;
/// Nominal tip height above the surface at reset, mm.
pub const HOVER_HEIGHT: f64 = 3.0;
/// Half-range of the start angle perturbation, applied whenever the
/// translational start noise is positive.
pub const START_ANGLE_NOISE: f64 = 0.02;
/// Orientation tolerance of the success predicate, rad.
pub const THETA_TOL: f64 = 0.05;

pub const OBS_DIM: usize = 9;
pub const ACT_DIM: usize = 3;

/// Pose at which every episode nominally starts.
pub const NOMINAL_HOVER_POSE: Pose = [0.0, HOVER_HEIGHT, 0.0];

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub tcp_pose: Pose,
    pub tcp_vel: Twist,
    pub wrench: Wrench,
    pub step_index: usize,
    pub start_pose: Pose,
    pub done: bool,
}

/// Agent observation: pose relative to the episode start, velocity, wrench.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn rel_pose(&self) -> [f64; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }
    pub fn vel(&self) -> [f64; 3] {
        [self.0[3], self.0[4], self.0[5]]
    }
    pub fn wrench(&self) -> [f64; 3] {
        [self.0[6], self.0[7], self.0[8]]
    }
}

/// Commanded TCP twist `(vx, vy, omega)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Action(pub [f64; ACT_DIM]);

impl Action {
    pub fn zero() -> Self {
        Action([0.0; ACT_DIM])
    }

    pub fn clipped(&self) -> Self {
        let mut a = self.0;
        for (v, m) in a.iter_mut().zip(A_MAX) {
            *v = v.clamp(-m, m);
        }
        Action(a)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: SimState,
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a % two_pi;
    if r <= -std::f64::consts::PI {
        r += two_pi;
    } else if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

pub fn observe(state: &SimState) -> Observation {
    let p = state.tcp_pose;
    let s = state.start_pose;
    let v = state.tcp_vel;
    let w = state.wrench;
    Observation([p[0] - s[0], p[1] - s[1], wrap_angle(p[2] - s[2]), v[0], v[1], v[2], w[0], w[1], w[2]])
}

/// Start an episode at the nominal hover pose plus uniform noise in
/// `[-start_noise_mm, start_noise_mm]` on x and y.
pub fn reset(task: &TaskSpec, episode_seed: u64, start_noise_mm: f64) -> Result<(SimState, Observation), SimError> {
    if !(start_noise_mm >= 0.0 && start_noise_mm.is_finite()) {
        return Err(SimError::InvalidNoise(start_noise_mm));
    }
    task.validate()?;
    let mut pose = NOMINAL_HOVER_POSE;
    if start_noise_mm > 0.0 {
        let mut rng = seeding::rng_from(seeding::mix(task.task_id, episode_seed));
        let u: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        pose[0] += start_noise_mm * (2.0 * u[0] - 1.0);
        pose[1] += start_noise_mm * (2.0 * u[1] - 1.0);
        pose[2] += START_ANGLE_NOISE * (2.0 * u[2] - 1.0);
    }
    let vel = [0.0; 3];
    let state = SimState {
        tcp_pose: pose,
        tcp_vel: vel,
        wrench: contact_wrench(&pose, &vel, task),
        step_index: 0,
        start_pose: pose,
        done: false,
    };
    let obs = observe(&state);
    Ok((state, obs))
}

/// Advance one control period.
///
/// The commanded twist is clipped, then tracked by a first-order controller
/// with time constant `TAU_TRACK` while contact forces act through the
/// apparent mass. Integration is semi-implicit Euler over `SUBSTEPS`
/// substeps.
pub fn step(state: &SimState, action: &Action, task: &TaskSpec) -> Result<StepOutcome, SimError> {
    if state.done || state.step_index >= MAX_EPISODE_STEPS {
        return Err(SimError::EpisodeDone { step_index: state.step_index });
    }
    if !action.is_finite() {
        return Err(SimError::NonFiniteAction(action.0));
    }
    let cmd = action.clipped().0;
    let h = DT / SUBSTEPS as f64;
    let mut pose = state.tcp_pose;
    let mut vel = state.tcp_vel;
    for _ in 0..SUBSTEPS {
        let f = contact_wrench(&pose, &vel, task);
        vel[0] += h * ((cmd[0] - vel[0]) / TAU_TRACK + f[0] / EFFECTIVE_MASS);
        vel[1] += h * ((cmd[1] - vel[1]) / TAU_TRACK + f[1] / EFFECTIVE_MASS);
        vel[2] += h * ((cmd[2] - vel[2]) / TAU_TRACK + f[2] / EFFECTIVE_INERTIA);
        for k in 0..3 {
            pose[k] += h * vel[k];
        }
    }
    let step_index = state.step_index + 1;
    let mut next = SimState {
        tcp_pose: pose,
        tcp_vel: vel,
        wrench: contact_wrench(&pose, &vel, task),
        step_index,
        start_pose: state.start_pose,
        done: false,
    };
    let success = is_success(&next, task);
    let done = success || step_index == MAX_EPISODE_STEPS;
    next.done = done;
    let obs = observe(&next);
    Ok(StepOutcome { state: next, obs, reward: if success { 1.0 } else { 0.0 }, done, success })
}

/// Peg tip deep enough, laterally inside the clearance band, and aligned.
pub fn is_success(state: &SimState, task: &TaskSpec) -> bool {
    let [x, y, theta] = state.tcp_pose;
    -y >= task.success_depth_frac * task.hole_depth
        && (x - task.hole_center_x).abs() <= task.clearance
        && wrap_angle(theta).abs() <= THETA_TOL
}

/// One environment instance: a task, its current state, and an optional
/// wrench-sensor noise stream.
#[derive(Debug, Clone)]
pub struct InsertionEnv {
    pub task: TaskSpec,
    state: Option<SimState>,
    /// Standard deviation (N, N*mm) of zero-mean noise added to the observed
    /// wrench. Zero disables it.
    pub sensor_noise_std: f64,
    noise_rng: ChaCha8Rng,
}

impl InsertionEnv {
    pub fn new(task: TaskSpec) -> Self {
        InsertionEnv { task, state: None, sensor_noise_std: 0.0, noise_rng: seeding::rng_from(0) }
    }

    pub fn with_sensor_noise(mut self, std: f64) -> Self {
        self.sensor_noise_std = std;
        self
    }

    pub fn state(&self) -> Option<&SimState> {
        self.state.as_ref()
    }

    pub fn reset(&mut self, episode_seed: u64, start_noise_mm: f64) -> Result<Observation, SimError> {
        let (state, obs) = reset(&self.task, episode_seed, start_noise_mm)?;
        self.noise_rng = seeding::rng_from(seeding::mix(episode_seed, 0x5e45_0e));
        self.state = Some(state);
        Ok(self.noisy(obs))
    }

    pub fn step(&mut self, action: &Action) -> Result<StepOutcome, SimError> {
        let state = self.state.as_ref().ok_or(SimError::NotReset)?;
        let mut out = step(state, action, &self.task)?;
        self.state = Some(out.state.clone());
        out.obs = self.noisy(out.obs);
        Ok(out)
    }

    fn noisy(&mut self, mut obs: Observation) -> Observation {
        if self.sensor_noise_std > 0.0 {
            for k in 6..9 {
                let e: f64 = StandardNormal.sample(&mut self.noise_rng);
                obs.0[k] += self.sensor_noise_std * e;
            }
        }
        obs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn far_task() -> TaskSpec {
        let mut t = TaskSpec::easy(0);
        t.hole_center_x = 8.0;
        t
    }

    #[test]
    fn zero_noise_reset_is_nominal() {
        let (s, o) = reset(&TaskSpec::easy(0), 42, 0.0).unwrap();
        assert_eq!(s.tcp_pose, NOMINAL_HOVER_POSE);
        assert_eq!(o.rel_pose(), [0.0; 3]);
    }

    #[test]
    fn reset_is_deterministic_and_relative_origin_is_zero() {
        let t = TaskSpec::easy(3);
        let (a, oa) = reset(&t, 9, 1.0).unwrap();
        let (b, _) = reset(&t, 9, 1.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(oa.rel_pose(), [0.0; 3]);
        let (c, _) = reset(&t, 10, 1.0).unwrap();
        assert_ne!(a.tcp_pose, c.tcp_pose);
    }

    #[test]
    fn negative_noise_rejected() {
        assert!(reset(&TaskSpec::easy(0), 0, -0.5).is_err());
    }

    #[test]
    fn reset_noise_statistics() {
        let t = TaskSpec::easy(0);
        let n = 10_000;
        let (mut lo, mut hi, mut sum) = (f64::MAX, f64::MIN, 0.0);
        for seed in 0..n {
            let (s, _) = reset(&t, seed, 1.0).unwrap();
            let dx = s.tcp_pose[0] - NOMINAL_HOVER_POSE[0];
            lo = lo.min(dx);
            hi = hi.max(dx);
            sum += dx;
            assert!(s.tcp_pose[2].abs() <= START_ANGLE_NOISE);
        }
        assert!(lo >= -1.0 && hi <= 1.0);
        // U[-1,1] has sd 0.577; 4 standard errors of the mean is 0.023
        assert!((sum / n as f64).abs() < 0.05);
        assert!(lo < -0.99 && hi > 0.99);
    }

    #[test]
    fn free_flight_has_zero_wrench() {
        let t = far_task();
        let (s, _) = reset(&t, 1, 0.0).unwrap();
        let out = step(&s, &Action([15.0, 5.0, 0.2]), &t).unwrap();
        assert_eq!(out.obs.wrench(), [0.0; 3]);
    }

    #[test]
    fn zero_command_from_rest_is_a_fixed_point() {
        let t = far_task();
        let (mut s, _) = reset(&t, 1, 0.0).unwrap();
        let start = s.tcp_pose;
        for k in 0..MAX_EPISODE_STEPS {
            let out = step(&s, &Action::zero(), &t).unwrap();
            assert_eq!(out.state.tcp_pose, start);
            assert_eq!(out.reward, 0.0);
            assert_eq!(out.done, k + 1 == MAX_EPISODE_STEPS);
            s = out.state;
        }
        assert!(matches!(step(&s, &Action::zero(), &t), Err(SimError::EpisodeDone { .. })));
    }

    #[test]
    fn velocity_decays_without_command() {
        let t = far_task();
        let (mut s, _) = reset(&t, 1, 0.0).unwrap();
        s = step(&s, &Action([20.0, 10.0, 0.5]), &t).unwrap().state;
        let mut last = s.tcp_vel.iter().map(|v| v * v).sum::<f64>();
        for _ in 0..5 {
            s = step(&s, &Action::zero(), &t).unwrap().state;
            let now = s.tcp_vel.iter().map(|v| v * v).sum::<f64>();
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn commands_are_clipped() {
        let t = far_task();
        let (s, _) = reset(&t, 1, 0.0).unwrap();
        let a = step(&s, &Action([1e6, 0.0, 0.0]), &t).unwrap();
        let b = step(&s, &Action([A_MAX[0], 0.0, 0.0]), &t).unwrap();
        assert_eq!(a.state, b.state);
        assert!(step(&s, &Action([f64::NAN, 0.0, 0.0]), &t).is_err());
    }

    #[test]
    fn wrench_in_observation_matches_state() {
        let t = TaskSpec::easy(0);
        let (mut s, _) = reset(&t, 1, 0.0).unwrap();
        s.tcp_pose[0] = 7.0;
        for _ in 0..10 {
            let out = step(&s, &Action([0.0, -20.0, 0.0]), &t).unwrap();
            assert_eq!(out.state.wrench, contact_wrench(&out.state.tcp_pose, &out.state.tcp_vel, &t));
            assert_eq!(out.obs.wrench(), out.state.wrench);
            s = out.state;
        }
        assert!(s.wrench[1] > 0.0);
    }

    #[test]
    fn success_boundary_is_inclusive() {
        let t = TaskSpec::easy(0);
        let (mut s, _) = reset(&t, 0, 0.0).unwrap();
        assert!(!is_success(&s, &t));
        s.tcp_pose = [t.hole_center_x, -t.success_depth_frac * t.hole_depth, 0.0];
        assert!(is_success(&s, &t));
        s.tcp_pose[0] = t.hole_center_x + t.clearance;
        assert!(is_success(&s, &t));
        s.tcp_pose[2] = 2.0 * THETA_TOL;
        assert!(!is_success(&s, &t));
    }

    #[test]
    fn success_flips_once_along_descent() {
        let t = TaskSpec::easy(0);
        let (mut s, _) = reset(&t, 0, 0.0).unwrap();
        let mut flips = 0;
        let mut prev = false;
        for k in 0..=2000 {
            s.tcp_pose = [t.hole_center_x, HOVER_HEIGHT - k as f64 * 0.005, 0.0];
            let now = is_success(&s, &t);
            if now != prev {
                flips += 1;
            }
            prev = now;
        }
        assert_eq!(flips, 1);
        assert!(prev);
    }

    #[test]
    fn straight_descent_into_easy_hole_succeeds() {
        let t = TaskSpec::easy(0);
        let (mut s, _) = reset(&t, 0, 0.0).unwrap();
        let mut steps = 0;
        loop {
            let out = step(&s, &Action([0.0, -10.0, 0.0]), &t).unwrap();
            steps += 1;
            if out.done {
                assert!(out.success);
                assert_eq!(out.reward, 1.0);
                break;
            }
            s = out.state;
        }
        assert!(steps <= 60);
    }

    #[test]
    fn angle_wrapping() {
        use std::f64::consts::PI;
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn sensor_noise_only_touches_wrench() {
        let t = far_task();
        let mut clean = InsertionEnv::new(t.clone());
        let mut noisy = InsertionEnv::new(t).with_sensor_noise(0.5);
        let a = clean.reset(3, 1.0).unwrap();
        let b = noisy.reset(3, 1.0).unwrap();
        assert_eq!(a.rel_pose(), b.rel_pose());
        assert_ne!(a.wrench(), b.wrench());
    }
}
