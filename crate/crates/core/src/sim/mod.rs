//! Planar peg-in-hole simulator: a parameterised family of insertion tasks,
//! penalty contact, and a 10 Hz twist-command interface.

pub mod contact;
pub mod dynamics;
pub mod task;

pub use contact::contact_wrench;
pub use dynamics::{
    is_success, observe, reset, step, Action, InsertionEnv, Observation, SimState, StepOutcome, ACT_DIM, A_MAX,
    DT, MAX_EPISODE_STEPS, OBS_DIM,
};
pub use task::{make_ood_tasks, make_task_family, tasks_from_str, tasks_to_string, TaskSpec};

/// `(x mm, y mm, theta rad)`
pub type Pose = [f64; 3];
/// `(vx mm/s, vy mm/s, omega rad/s)`
pub type Twist = [f64; 3];
/// `(fx N, fy N, tau N*mm)`
pub type Wrench = [f64; 3];

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("task family needs at least one training task")]
    EmptyFamily,
    #[error("task {task_id}: {reason}")]
    InvalidTask { task_id: u64, reason: String },
    #[error("start noise must be finite and >= 0, got {0}")]
    InvalidNoise(f64),
    #[error("episode already finished at step {step_index}")]
    EpisodeDone { step_index: usize },
    #[error("non-finite action {0:?}")]
    NonFiniteAction([f64; 3]),
    #[error("environment stepped before reset")]
    NotReset,
    #[error("task file line {line}: {reason}")]
    Parse { line: usize, reason: String },
}
