use ndarray::{s, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{norm_act, norm_obs, LearnError, Nets, CONTEXT_DIM};
use crate::data::Transition;
use crate::nn::{MlpTrace, ParamSet};
use crate::scalar::ordered_sum;
use crate::sim::{ACT_DIM, OBS_DIM};
use crate::Scalar;

/// Added to every factor variance so no factor has infinite precision.
pub const FACTOR_VAR_FLOOR: f64 = 1e-6;

/// Diagonal Gaussian belief over the task latent.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPosterior<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> LatentPosterior<T> {
    pub fn standard(d_z: usize) -> Self {
        LatentPosterior { mean: vec![T::zero(); d_z], var: vec![T::one(); d_z] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Normalised product of Gaussian factors, one factor per row.
    ///
    /// Per dimension: precision is the sum of factor precisions and the
    /// mean is the precision-weighted mean. Both sums run in sorted order so
    /// the result is independent of row order.
    pub fn product(mu: &Array2<T>, var: &Array2<T>) -> Self {
        let d_z = mu.ncols();
        let mut mean = Vec::with_capacity(d_z);
        let mut post_var = Vec::with_capacity(d_z);
        for d in 0..d_z {
            let mut prec: Vec<T> = var.column(d).iter().map(|v| v.recip()).collect();
            let mut weighted: Vec<T> = mu.column(d).iter().zip(var.column(d)).map(|(&m, &v)| m / v).collect();
            let v = ordered_sum(&mut prec).recip();
            post_var.push(v);
            mean.push(v * ordered_sum(&mut weighted));
        }
        LatentPosterior { mean, var: post_var }
    }
}

/// Forward state of [`encode_traced`], needed to backpropagate into phi.
#[derive(Debug, Clone)]
pub struct EncodeTrace<T> {
    net: MlpTrace<T>,
    mu: Array2<T>,
    var: Array2<T>,
    /// d var_i / d raw_i (logistic of the raw output).
    dvar_draw: Array2<T>,
    pub posterior: LatentPosterior<T>,
}

fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn logistic<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub(crate) fn context_rows<T: Scalar>(context: &[Transition]) -> Array2<T> {
    let mut x = Array2::zeros((context.len(), CONTEXT_DIM));
    for (i, t) in context.iter().enumerate() {
        let mut row = x.row_mut(i);
        let s = norm_obs::<T>(&t.s);
        let a = norm_act::<T>(&t.a);
        let s2 = norm_obs::<T>(&t.s_next);
        for k in 0..OBS_DIM {
            row[k] = s[k];
            row[OBS_DIM + ACT_DIM + 1 + k] = s2[k];
        }
        for k in 0..ACT_DIM {
            row[OBS_DIM + k] = a[k];
        }
        row[OBS_DIM + ACT_DIM] = T::of(t.r);
    }
    x
}

pub fn encode_traced<T: Scalar>(nets: &Nets, phi: &ParamSet<T>, context: &[Transition]) -> Result<EncodeTrace<T>, LearnError> {
    if context.is_empty() {
        return Err(LearnError::EmptyContext);
    }
    let d_z = nets.d_z();
    let net = nets.encoder.forward_traced(phi, context_rows::<T>(context).view());
    let mu = net.output.slice(s![.., ..d_z]).to_owned();
    let raw = net.output.slice(s![.., d_z..]);
    let var = raw.mapv(|r| softplus(r) + T::of(FACTOR_VAR_FLOOR));
    let dvar_draw = raw.mapv(logistic);
    let posterior = LatentPosterior::product(&mu, &var);
    Ok(EncodeTrace { net, mu, var, dvar_draw, posterior })
}

/// Posterior over the latent given a context of transitions.
pub fn encode<T: Scalar>(nets: &Nets, phi: &ParamSet<T>, context: &[Transition]) -> Result<LatentPosterior<T>, LearnError> {
    Ok(encode_traced(nets, phi, context)?.posterior)
}

/// Accumulate into `grads` the phi-gradient of a loss whose gradients with
/// respect to the posterior mean and variance are `dmean` and `dvar`.
pub fn encode_backward<T: Scalar>(
    nets: &Nets,
    phi: &ParamSet<T>,
    trace: &EncodeTrace<T>,
    dmean: &[T],
    dvar: &[T],
    grads: &mut ParamSet<T>,
) {
    let d_z = nets.d_z();
    let n = trace.mu.nrows();
    let mut dout = Array2::zeros((n, 2 * d_z));
    for d in 0..d_z {
        let v = trace.posterior.var[d];
        let m = trace.posterior.mean[d];
        for i in 0..n {
            let p = trace.var[[i, d]].recip();
            // mean = v * sum(mu_j p_j), v = 1 / sum(p_j)
            dout[[i, d]] = dmean[d] * v * p;
            let dp = dmean[d] * v * (trace.mu[[i, d]] - m) - dvar[d] * v * v;
            dout[[i, d_z + d]] = -dp * p * p * trace.dvar_draw[[i, d]];
        }
    }
    nets.encoder.backward(phi, &trace.net, dout.view(), grads);
}

/// `z = mean + sqrt(var) * eps`; also returns `eps` so callers can route
/// gradients back to the posterior.
pub fn sample_latent<T: Scalar>(post: &LatentPosterior<T>, rng: &mut impl Rng) -> (Vec<T>, Vec<T>) {
    let eps: Vec<T> = (0..post.dim())
        .map(|_| {
            let e: f64 = StandardNormal.sample(rng);
            T::of(e)
        })
        .collect();
    let z = post.mean.iter().zip(&post.var).zip(&eps).map(|((&m, &v), &e)| m + v.sqrt() * e).collect();
    (z, eps)
}

/// Gradients on (mean, var) of a loss whose gradient on the reparameterised
/// sample is `dz`.
pub fn latent_backward<T: Scalar>(post: &LatentPosterior<T>, eps: &[T], dz: &[T]) -> (Vec<T>, Vec<T>) {
    let dmean = dz.to_vec();
    let dvar = (0..dz.len()).map(|d| dz[d] * eps[d] / (T::of(2.0) * post.var[d].sqrt())).collect();
    (dmean, dvar)
}
