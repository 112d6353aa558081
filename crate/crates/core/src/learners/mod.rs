//! Demonstration encoder, latent-conditioned Gaussian actor and critic, and
//! the three training losses, each with an analytic gradient.

mod encoder;
mod losses;

use ndarray::{s, Array2, ArrayView1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use encoder::{
    encode, encode_backward, encode_traced, latent_backward, sample_latent, EncodeTrace, LatentPosterior,
    FACTOR_VAR_FLOOR,
};
pub use losses::{
    actor_loss, advantage, advantages, advantages_with, awac_weight, critic_loss, critic_loss_with_targets,
    critic_targets, critic_value, kl_loss, task_losses, ActorLoss, CriticLoss, KlLoss, LossConfig, TargetMode,
    TaskGrads, TaskStats,
};

use crate::nn::{Mlp, ParamSet};
use crate::policy::Policy;
use crate::seeding;
use crate::sim::{Action, Observation, ACT_DIM, A_MAX, OBS_DIM};
use crate::Scalar;

/// Per-component scale dividing raw observations before they enter a
/// network: pose (mm, mm, rad), twist (mm/s, mm/s, rad/s), wrench (N, N, N mm).
pub const OBS_SCALE: [f64; OBS_DIM] = [10.0, 5.0, 0.05, 20.0, 20.0, 0.5, 10.0, 10.0, 50.0];

/// Width of one context row: s, a, r, s'.
pub const CONTEXT_DIM: usize = OBS_DIM + ACT_DIM + 1 + OBS_DIM;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LearnError {
    #[error("context is empty")]
    EmptyContext,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("expected {what} of length {expected}, got {got}")]
    Dim { what: &'static str, expected: usize, got: usize },
    #[error("transition {0} is not terminal but has no valid next action")]
    MissingNextAction(usize),
    #[error("invalid loss setting: {0}")]
    Config(String),
}

/// Architecture of the three networks.
#[derive(Debug, Clone, PartialEq)]
pub struct NetSpec {
    pub d_z: usize,
    pub factor_hidden: Vec<usize>,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// Bounds on the log standard deviation in normalised action units
    /// (actions divided by `A_MAX`).
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl Default for NetSpec {
    fn default() -> Self {
        NetSpec {
            d_z: 5,
            factor_hidden: vec![64, 64],
            actor_hidden: vec![128, 128],
            critic_hidden: vec![128, 128],
            log_std_min: -5.0,
            log_std_max: 0.0,
        }
    }
}

pub const LOG_STD_OFFSET: &str = "actor.log_std";

/// Network shapes derived from a [`NetSpec`]. Parameters are held
/// separately in three [`ParamSet`]s: encoder (phi), actor (theta) and
/// critic (psi).
#[derive(Debug, Clone, PartialEq)]
pub struct Nets {
    pub spec: NetSpec,
    pub encoder: Mlp,
    pub actor: Mlp,
    pub critic: Mlp,
}

impl Nets {
    pub fn new(spec: NetSpec) -> Self {
        let d_z = spec.d_z;
        Nets {
            encoder: Mlp::new("encoder", CONTEXT_DIM, &spec.factor_hidden, 2 * d_z),
            actor: Mlp::new("actor", OBS_DIM + d_z, &spec.actor_hidden, 2 * ACT_DIM),
            critic: Mlp::new("critic", OBS_DIM + ACT_DIM + d_z, &spec.critic_hidden, 1),
            spec,
        }
    }

    pub fn d_z(&self) -> usize {
        self.spec.d_z
    }

    /// Fresh (phi, theta, psi). The encoder set is empty when `d_z = 0`.
    pub fn init<T: Scalar>(&self, seed: u64) -> (ParamSet<T>, ParamSet<T>, ParamSet<T>) {
        let mut phi = ParamSet::new();
        if self.d_z() > 0 {
            self.encoder.init(&mut phi, &mut seeding::stream(seed, "init-encoder"), 1.0);
        }
        let mut theta = ParamSet::new();
        self.actor.init(&mut theta, &mut seeding::stream(seed, "init-actor"), 0.1);
        theta.insert(LOG_STD_OFFSET, Array2::zeros((1, ACT_DIM)));
        let mut psi = ParamSet::new();
        self.critic.init(&mut psi, &mut seeding::stream(seed, "init-critic"), 1.0);
        (phi, theta, psi)
    }

    fn check_z<T>(&self, z: &[T]) -> Result<(), LearnError> {
        if z.len() != self.d_z() {
            return Err(LearnError::Dim { what: "z", expected: self.d_z(), got: z.len() });
        }
        Ok(())
    }

    /// Soft clamp of a raw log-std into `[log_std_min, log_std_max]`:
    /// returns the clamped value and its derivative.
    pub(crate) fn squash_log_std<T: Scalar>(&self, raw: T) -> (T, T) {
        let lo = T::of(self.spec.log_std_min);
        let hi = T::of(self.spec.log_std_max);
        let half = T::of(0.5);
        let t = raw.tanh();
        (lo + (hi - lo) * half * (t + T::one()), (hi - lo) * half * (T::one() - t * t))
    }
}

pub fn norm_obs<T: Scalar>(s: &[f64; OBS_DIM]) -> [T; OBS_DIM] {
    std::array::from_fn(|k| T::of(s[k] / OBS_SCALE[k]))
}

pub fn norm_act<T: Scalar>(a: &[f64; ACT_DIM]) -> [T; ACT_DIM] {
    std::array::from_fn(|k| T::of(a[k] / A_MAX[k]))
}

/// Rows of `[s/scale, z]`.
pub fn actor_inputs<T: Scalar>(states: &[[f64; OBS_DIM]], z: &[T]) -> Array2<T> {
    let mut x = Array2::zeros((states.len(), OBS_DIM + z.len()));
    for (b, s) in states.iter().enumerate() {
        let mut row = x.row_mut(b);
        for (k, v) in norm_obs::<T>(s).into_iter().enumerate() {
            row[k] = v;
        }
        for (k, &v) in z.iter().enumerate() {
            row[OBS_DIM + k] = v;
        }
    }
    x
}

/// Rows of `[s/scale, a/A_MAX, z]`.
pub fn critic_inputs<T: Scalar>(states: &[[f64; OBS_DIM]], actions: &[[f64; ACT_DIM]], z: &[T]) -> Array2<T> {
    debug_assert_eq!(states.len(), actions.len());
    let mut x = Array2::zeros((states.len(), OBS_DIM + ACT_DIM + z.len()));
    for (b, (s, a)) in states.iter().zip(actions).enumerate() {
        let mut row = x.row_mut(b);
        for (k, v) in norm_obs::<T>(s).into_iter().enumerate() {
            row[k] = v;
        }
        for (k, v) in norm_act::<T>(a).into_iter().enumerate() {
            row[OBS_DIM + k] = v;
        }
        for (k, &v) in z.iter().enumerate() {
            row[OBS_DIM + ACT_DIM + k] = v;
        }
    }
    x
}

/// Diagonal Gaussian over actions, in raw action units.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianActionDist<T> {
    pub mean: [T; ACT_DIM],
    pub log_std: [T; ACT_DIM],
}

impl<T: Scalar> GaussianActionDist<T> {
    pub fn log_prob(&self, a: &[f64; ACT_DIM]) -> T {
        let half_ln_2pi = T::of(0.5 * (2.0 * std::f64::consts::PI).ln());
        (0..ACT_DIM)
            .map(|k| {
                let u = (T::of(a[k]) - self.mean[k]) / self.log_std[k].exp();
                -T::of(0.5) * u * u - self.log_std[k] - half_ln_2pi
            })
            .sum()
    }

    /// Pre-clip sample.
    pub fn sample(&self, rng: &mut impl Rng) -> [f64; ACT_DIM] {
        std::array::from_fn(|k| {
            let e: f64 = StandardNormal.sample(rng);
            self.mean[k].as_f64() + self.log_std[k].exp().as_f64() * e
        })
    }
}

/// Normalised-unit heads for a batch: mean (B x 3) and squashed log-std
/// (B x 3), plus the derivative of the squash.
pub(crate) struct PolicyHeads<T> {
    pub mean: Array2<T>,
    pub log_std: Array2<T>,
    pub dsquash: Array2<T>,
}

pub(crate) fn policy_heads<T: Scalar>(nets: &Nets, theta: &ParamSet<T>, out: &Array2<T>) -> PolicyHeads<T> {
    let n = out.nrows();
    let offset: ArrayView1<T> = theta.get(LOG_STD_OFFSET).row(0);
    let mean = out.slice(s![.., ..ACT_DIM]).to_owned();
    let mut log_std = Array2::zeros((n, ACT_DIM));
    let mut dsquash = Array2::zeros((n, ACT_DIM));
    for b in 0..n {
        for k in 0..ACT_DIM {
            let (v, d) = nets.squash_log_std(out[[b, ACT_DIM + k]] + offset[k]);
            log_std[[b, k]] = v;
            dsquash[[b, k]] = d;
        }
    }
    PolicyHeads { mean, log_std, dsquash }
}

/// Action distribution at one state.
pub fn policy_dist<T: Scalar>(
    nets: &Nets,
    theta: &ParamSet<T>,
    s: &[f64; OBS_DIM],
    z: &[T],
) -> Result<GaussianActionDist<T>, LearnError> {
    nets.check_z(z)?;
    let out = nets.actor.forward(theta, actor_inputs(std::slice::from_ref(s), z).view());
    let h = policy_heads(nets, theta, &out);
    Ok(GaussianActionDist {
        mean: std::array::from_fn(|k| h.mean[[0, k]] * T::of(A_MAX[k])),
        log_std: std::array::from_fn(|k| h.log_std[[0, k]] + T::of(A_MAX[k].ln())),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Stochastic,
    Mean,
}

/// Mean mode returns the clipped mean; stochastic mode samples and clips.
pub fn policy_act<T: Scalar>(
    nets: &Nets,
    theta: &ParamSet<T>,
    s: &[f64; OBS_DIM],
    z: &[T],
    mode: ActMode,
    rng: &mut impl Rng,
) -> Result<Action, LearnError> {
    let d = policy_dist(nets, theta, s, z)?;
    let a = match mode {
        ActMode::Mean => d.mean.map(|m| m.as_f64()),
        ActMode::Stochastic => d.sample(rng),
    };
    Ok(Action(a).clipped())
}

/// Clipped samples for every row of `states`, `n` per state, grouped by
/// sample index: row `k * B + b` is sample `k` at state `b`.
pub fn sample_actions<T: Scalar>(
    nets: &Nets,
    theta: &ParamSet<T>,
    states: &[[f64; OBS_DIM]],
    z: &[T],
    n: usize,
    rng: &mut impl Rng,
) -> Vec<[f64; ACT_DIM]> {
    let out = nets.actor.forward(theta, actor_inputs(states, z).view());
    let h = policy_heads(nets, theta, &out);
    let mut acts = Vec::with_capacity(n * states.len());
    for _ in 0..n {
        for b in 0..states.len() {
            acts.push(std::array::from_fn(|k| {
                let e: f64 = StandardNormal.sample(rng);
                let v = (h.mean[[b, k]].as_f64() + h.log_std[[b, k]].as_f64().exp() * e) * A_MAX[k];
                v.clamp(-A_MAX[k], A_MAX[k])
            }));
        }
    }
    acts
}

/// A trained actor with a fixed latent, usable wherever a [`Policy`] is.
#[derive(Debug, Clone)]
pub struct ActorPolicy<T> {
    pub nets: Nets,
    pub theta: ParamSet<T>,
    pub z: Vec<T>,
    pub mode: ActMode,
    rng: ChaCha8Rng,
}

impl<T: Scalar> ActorPolicy<T> {
    pub fn new(nets: Nets, theta: ParamSet<T>, z: Vec<T>, mode: ActMode) -> Self {
        assert_eq!(z.len(), nets.d_z(), "latent width");
        ActorPolicy { nets, theta, z, mode, rng: seeding::rng_from(0) }
    }
}

impl<T: Scalar> Policy for ActorPolicy<T> {
    fn begin_episode(&mut self, episode_seed: u64) {
        self.rng = seeding::rng_from(seeding::mix(episode_seed, 0xac_70));
    }

    fn act(&mut self, obs: &Observation) -> Action {
        policy_act(&self.nets, &self.theta, &obs.0, &self.z, self.mode, &mut self.rng).expect("latent width checked at construction")
    }
}
