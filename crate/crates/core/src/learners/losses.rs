use ndarray::{s, Array2};
use rand::Rng;

use super::encoder::latent_backward;
use super::{
    actor_inputs, critic_inputs, encode_backward, encode_traced, policy_heads, sample_actions, sample_latent,
    LatentPosterior, LearnError, Nets, LOG_STD_OFFSET,
};
use crate::data::Transition;
use crate::nn::ParamSet;
use crate::sim::{ACT_DIM, A_MAX, OBS_DIM};
use crate::Scalar;

/// Which next action the critic bootstraps with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetMode {
    /// `a'` stored with the transition.
    DatasetAction,
    /// `a' ~ pi(.|s', z)`.
    PolicyAction,
}

impl std::fmt::Display for TargetMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TargetMode::DatasetAction => "dataset_action",
            TargetMode::PolicyAction => "policy_action",
        })
    }
}

impl std::str::FromStr for TargetMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dataset_action" => Ok(TargetMode::DatasetAction),
            "policy_action" => Ok(TargetMode::PolicyAction),
            other => Err(format!("unknown target mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub beta: f64,
    pub weight_clip: f64,
    pub n_action_samples: usize,
    pub target_mode: TargetMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 0.99,
            lambda: 0.3,
            beta: 0.1,
            weight_clip: 20.0,
            n_action_samples: 4,
            target_mode: TargetMode::DatasetAction,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: &str| Err(LearnError::Config(m.to_string()));
        if !(self.lambda > 0.0) {
            return bad("lambda must be positive");
        }
        if !(self.beta >= 0.0) {
            return bad("beta must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.weight_clip > 0.0) {
            return bad("weight_clip must be positive");
        }
        if self.n_action_samples == 0 {
            return bad("n_action_samples must be at least 1");
        }
        Ok(())
    }
}

fn columns(batch: &[Transition]) -> (Vec<[f64; OBS_DIM]>, Vec<[f64; ACT_DIM]>) {
    (batch.iter().map(|t| t.s).collect(), batch.iter().map(|t| t.a).collect())
}

fn q_values<T: Scalar>(nets: &Nets, psi: &ParamSet<T>, s: &[[f64; OBS_DIM]], a: &[[f64; ACT_DIM]], z: &[T]) -> Vec<T> {
    nets.critic.forward(psi, critic_inputs(s, a, z).view()).column(0).to_vec()
}

pub fn critic_value<T: Scalar>(
    nets: &Nets,
    psi: &ParamSet<T>,
    s: &[f64; OBS_DIM],
    a: &[f64; ACT_DIM],
    z: &[T],
) -> Result<T, LearnError> {
    nets.check_z(z)?;
    Ok(q_values(nets, psi, std::slice::from_ref(s), std::slice::from_ref(a), z)[0])
}

/// Bootstrap targets `y = r + gamma * Q_target(s', a', z)`, with `y = r` on
/// terminal transitions. Values only; nothing flows back through them.
#[allow(clippy::too_many_arguments)]
pub fn critic_targets<T: Scalar>(
    nets: &Nets,
    batch: &[Transition],
    z: &[T],
    psi_target: &ParamSet<T>,
    theta: &ParamSet<T>,
    gamma: f64,
    mode: TargetMode,
    rng: &mut impl Rng,
) -> Result<Vec<T>, LearnError> {
    let mut y: Vec<T> = batch.iter().map(|t| T::of(t.r)).collect();
    if gamma == 0.0 {
        return Ok(y);
    }
    let live: Vec<usize> = (0..batch.len()).filter(|&i| !batch[i].done).collect();
    if live.is_empty() {
        return Ok(y);
    }
    let s2: Vec<[f64; OBS_DIM]> = live.iter().map(|&i| batch[i].s_next).collect();
    let a2: Vec<[f64; ACT_DIM]> = match mode {
        TargetMode::DatasetAction => live
            .iter()
            .map(|&i| if batch[i].a_next_valid { Ok(batch[i].a_next) } else { Err(LearnError::MissingNextAction(i)) })
            .collect::<Result<_, _>>()?,
        TargetMode::PolicyAction => sample_actions(nets, theta, &s2, z, 1, rng),
    };
    let q2 = q_values(nets, psi_target, &s2, &a2, z);
    for (j, &i) in live.iter().enumerate() {
        y[i] += T::of(gamma) * q2[j];
    }
    Ok(y)
}

#[derive(Debug, Clone)]
pub struct CriticLoss<T> {
    pub loss: T,
    pub grad_psi: ParamSet<T>,
    /// Gradient with respect to the latent (shared by the whole batch).
    pub grad_z: Vec<T>,
    pub mean_q: T,
}

/// Mean squared Bellman error and its gradients for psi and z.
#[allow(clippy::too_many_arguments)]
pub fn critic_loss<T: Scalar>(
    nets: &Nets,
    batch: &[Transition],
    z: &[T],
    psi: &ParamSet<T>,
    psi_target: &ParamSet<T>,
    theta: &ParamSet<T>,
    gamma: f64,
    mode: TargetMode,
    rng: &mut impl Rng,
) -> Result<CriticLoss<T>, LearnError> {
    if batch.is_empty() {
        return Err(LearnError::EmptyBatch);
    }
    nets.check_z(z)?;
    let y = critic_targets(nets, batch, z, psi_target, theta, gamma, mode, rng)?;
    critic_loss_with_targets(nets, batch, z, psi, &y)
}

/// Squared error of `Q(s, a, z)` against given targets `y`.
pub fn critic_loss_with_targets<T: Scalar>(
    nets: &Nets,
    batch: &[Transition],
    z: &[T],
    psi: &ParamSet<T>,
    y: &[T],
) -> Result<CriticLoss<T>, LearnError> {
    if batch.is_empty() {
        return Err(LearnError::EmptyBatch);
    }
    nets.check_z(z)?;
    if y.len() != batch.len() {
        return Err(LearnError::Dim { what: "targets", expected: batch.len(), got: y.len() });
    }
    let (s, a) = columns(batch);
    let trace = nets.critic.forward_traced(psi, critic_inputs(&s, &a, z).view());
    let n = T::of(batch.len() as f64);
    let mut dq = Array2::zeros((batch.len(), 1));
    let mut loss = T::zero();
    let mut mean_q = T::zero();
    for b in 0..batch.len() {
        let e = trace.output[[b, 0]] - y[b];
        loss += e * e;
        mean_q += trace.output[[b, 0]];
        dq[[b, 0]] = T::of(2.0) * e / n;
    }
    let mut grad_psi = psi.zeros_like();
    let dx = nets.critic.backward(psi, &trace, dq.view(), &mut grad_psi);
    let grad_z = (0..z.len()).map(|d| dx.column(OBS_DIM + ACT_DIM + d).sum()).collect();
    Ok(CriticLoss { loss: loss / n, grad_psi, grad_z, mean_q: mean_q / n })
}

/// `Q(s, a, z) - mean_k Q(s, a_k, z)` with `a_k ~ pi(.|s, z)` for every
/// transition of `batch`. Pure values.
#[allow(clippy::too_many_arguments)]
pub fn advantages<T: Scalar>(
    nets: &Nets,
    psi: &ParamSet<T>,
    theta: &ParamSet<T>,
    states: &[[f64; OBS_DIM]],
    actions: &[[f64; ACT_DIM]],
    z: &[T],
    n_action_samples: usize,
    rng: &mut impl Rng,
) -> Vec<T> {
    advantages_with(nets, theta, states, actions, z, n_action_samples, rng, |s, a| q_values(nets, psi, s, a, z))
}

/// [`advantages`] with an arbitrary batched critic `q(states, actions)`.
#[allow(clippy::too_many_arguments)]
pub fn advantages_with<T: Scalar>(
    nets: &Nets,
    theta: &ParamSet<T>,
    states: &[[f64; OBS_DIM]],
    actions: &[[f64; ACT_DIM]],
    z: &[T],
    n_action_samples: usize,
    rng: &mut impl Rng,
    q: impl Fn(&[[f64; OBS_DIM]], &[[f64; ACT_DIM]]) -> Vec<T>,
) -> Vec<T> {
    let n = states.len();
    let q_data = q(states, actions);
    let sampled = sample_actions(nets, theta, states, z, n_action_samples, rng);
    let rep: Vec<[f64; OBS_DIM]> = (0..n_action_samples).flat_map(|_| states.iter().copied()).collect();
    let qs = q(&rep, &sampled);
    let inv = T::of(1.0 / n_action_samples as f64);
    (0..n)
        .map(|b| {
            let mut baseline = T::zero();
            for k in 0..n_action_samples {
                baseline += qs[k * n + b];
            }
            q_data[b] - baseline * inv
        })
        .collect()
}

/// Single-state advantage.
#[allow(clippy::too_many_arguments)]
pub fn advantage<T: Scalar>(
    nets: &Nets,
    psi: &ParamSet<T>,
    theta: &ParamSet<T>,
    s: &[f64; OBS_DIM],
    a: &[f64; ACT_DIM],
    z: &[T],
    n_action_samples: usize,
    rng: &mut impl Rng,
) -> Result<T, LearnError> {
    nets.check_z(z)?;
    if n_action_samples == 0 {
        return Err(LearnError::Config("n_action_samples must be at least 1".into()));
    }
    Ok(advantages(nets, psi, theta, std::slice::from_ref(s), std::slice::from_ref(a), z, n_action_samples, rng)[0])
}

/// `min(exp(A / lambda), clip)`, floored at the smallest positive normal
/// so a very negative advantage never underflows to a zero weight.
pub fn awac_weight<T: Scalar>(adv: T, lambda: f64, clip: f64) -> T {
    (adv / T::of(lambda)).exp().max(T::min_positive_value()).min(T::of(clip))
}

#[derive(Debug, Clone)]
pub struct ActorLoss<T> {
    pub loss: T,
    pub grad_theta: ParamSet<T>,
    pub weights: Vec<T>,
    pub mean_log_prob: T,
}

/// Advantage-weighted negative log-likelihood of the batch actions.
///
/// The weights are computed from `advantages` and treated as constants;
/// the latent is an input only.
pub fn actor_loss<T: Scalar>(
    nets: &Nets,
    batch: &[Transition],
    z: &[T],
    theta: &ParamSet<T>,
    advantages: &[T],
    lambda: f64,
    weight_clip: f64,
) -> Result<ActorLoss<T>, LearnError> {
    if batch.is_empty() {
        return Err(LearnError::EmptyBatch);
    }
    if !(lambda > 0.0) {
        return Err(LearnError::Config("lambda must be positive".into()));
    }
    if advantages.len() != batch.len() {
        return Err(LearnError::Dim { what: "advantages", expected: batch.len(), got: advantages.len() });
    }
    nets.check_z(z)?;
    let (s, _) = columns(batch);
    let trace = nets.actor.forward_traced(theta, actor_inputs(&s, z).view());
    let h = policy_heads(nets, theta, &trace.output);
    let n = T::of(batch.len() as f64);
    let half_ln_2pi = T::of(0.5 * (2.0 * std::f64::consts::PI).ln());
    let log_scale: T = A_MAX.iter().map(|m| T::of(m.ln())).sum();
    let weights: Vec<T> = advantages.iter().map(|&a| awac_weight(a, lambda, weight_clip)).collect();
    let mut dout = Array2::zeros((batch.len(), 2 * ACT_DIM));
    let mut loss = T::zero();
    let mut sum_lp = T::zero();
    for (b, t) in batch.iter().enumerate() {
        let w = weights[b];
        let mut lp = -log_scale;
        for k in 0..ACT_DIM {
            let a = T::of(t.a[k] / A_MAX[k]);
            let ls = h.log_std[[b, k]];
            let u = (a - h.mean[[b, k]]) / ls.exp();
            lp += -T::of(0.5) * u * u - ls - half_ln_2pi;
            // d(-w lp / n) / d mean, d / d raw log-std
            dout[[b, k]] = -w / n * u / ls.exp();
            dout[[b, ACT_DIM + k]] = -w / n * (u * u - T::one()) * h.dsquash[[b, k]];
        }
        loss -= w * lp;
        sum_lp += lp;
    }
    let mut grad_theta = theta.zeros_like();
    nets.actor.backward(theta, &trace, dout.view(), &mut grad_theta);
    let doff = dout.slice(s![.., ACT_DIM..]).sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0));
    *grad_theta.get_mut(LOG_STD_OFFSET) += &doff;
    Ok(ActorLoss { loss: loss / n, grad_theta, weights, mean_log_prob: sum_lp / n })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlLoss<T> {
    pub loss: T,
    pub dmean: Vec<T>,
    pub dvar: Vec<T>,
}

/// `beta * KL(q || N(0, I))` in closed form, with its gradient on (mean, var).
pub fn kl_loss<T: Scalar>(post: &LatentPosterior<T>, beta: f64) -> KlLoss<T> {
    let b = T::of(beta);
    let half = T::of(0.5);
    let mut loss = T::zero();
    for (&m, &v) in post.mean.iter().zip(&post.var) {
        loss += v + m * m - T::one() - v.ln();
    }
    KlLoss {
        loss: b * half * loss,
        dmean: post.mean.iter().map(|&m| b * m).collect(),
        dvar: post.var.iter().map(|&v| b * half * (T::one() - v.recip())).collect(),
    }
}

/// Gradients for one task, already routed: phi from the critic loss (through
/// the reparameterised latent) plus the KL term, theta from the actor loss,
/// psi from the critic loss.
#[derive(Debug, Clone)]
pub struct TaskGrads<T> {
    pub phi: ParamSet<T>,
    pub theta: ParamSet<T>,
    pub psi: ParamSet<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TaskStats {
    pub critic: f64,
    pub actor: f64,
    /// Unweighted divergence of the posterior from the prior.
    pub kl: f64,
    pub mean_weight: f64,
    pub mean_q: f64,
    pub mean_log_prob: f64,
}

/// Every loss for one task on one (context, batch) draw.
#[allow(clippy::too_many_arguments)]
pub fn task_losses<T: Scalar>(
    nets: &Nets,
    phi: &ParamSet<T>,
    theta: &ParamSet<T>,
    psi: &ParamSet<T>,
    psi_target: &ParamSet<T>,
    context: &[Transition],
    batch: &[Transition],
    cfg: &LossConfig,
    rng: &mut impl Rng,
) -> Result<(TaskGrads<T>, TaskStats), LearnError> {
    cfg.validate()?;
    let mut grad_phi = phi.zeros_like();
    let (z, latent) = if nets.d_z() > 0 {
        let trace = encode_traced(nets, phi, context)?;
        let (z, eps) = sample_latent(&trace.posterior, rng);
        (z, Some((trace, eps)))
    } else {
        (Vec::new(), None)
    };
    let crit = critic_loss(nets, batch, &z, psi, psi_target, theta, cfg.gamma, cfg.target_mode, rng)?;
    let (s, a) = columns(batch);
    let adv = advantages(nets, psi, theta, &s, &a, &z, cfg.n_action_samples, rng);
    let act = actor_loss(nets, batch, &z, theta, &adv, cfg.lambda, cfg.weight_clip)?;
    let mut kl_value = 0.0;
    if let Some((trace, eps)) = latent {
        let kl = kl_loss(&trace.posterior, cfg.beta);
        kl_value = kl_loss(&trace.posterior, 1.0).loss.as_f64();
        let (mut dmean, mut dvar) = latent_backward(&trace.posterior, &eps, &crit.grad_z);
        for d in 0..nets.d_z() {
            dmean[d] += kl.dmean[d];
            dvar[d] += kl.dvar[d];
        }
        encode_backward(nets, phi, &trace, &dmean, &dvar, &mut grad_phi);
    }
    let mean_weight = act.weights.iter().map(|w| w.as_f64()).sum::<f64>() / act.weights.len() as f64;
    let stats = TaskStats {
        critic: crit.loss.as_f64(),
        actor: act.loss.as_f64(),
        kl: kl_value,
        mean_weight,
        mean_q: crit.mean_q.as_f64(),
        mean_log_prob: act.mean_log_prob.as_f64(),
    };
    Ok((TaskGrads { phi: grad_phi, theta: act.grad_theta, psi: crit.grad_psi }, stats))
}
