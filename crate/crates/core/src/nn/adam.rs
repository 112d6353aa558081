use ndarray::Zip;

use super::{NnError, ParamSet};
use crate::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam with bias correction, one moment pair per named array.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub m: ParamSet<T>,
    pub v: ParamSet<T>,
    pub t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        Adam { m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }

    /// One update. Rejects the whole step, leaving everything untouched, if
    /// any gradient is missing, misshapen or non-finite.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>, lr: T) -> Result<(), NnError> {
        params.check_grads(grads)?;
        self.t += 1;
        let (b1, b2, eps) = (T::of(BETA1), T::of(BETA2), T::of(EPSILON));
        let c1 = T::one() - b1.powi(self.t as i32);
        let c2 = T::one() - b2.powi(self.t as i32);
        for (name, p) in params.iter_mut() {
            Zip::from(p)
                .and(self.m.get_mut(name))
                .and(self.v.get_mut(name))
                .and(grads.get(name))
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (T::one() - b1) * g;
                    *v = b2 * *v + (T::one() - b2) * g * g;
                    let mh = *m / c1;
                    let vh = *v / c2;
                    *p = *p - lr * mh / (vh.sqrt() + eps);
                });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matches_hand_recursion() {
        let mut p = ParamSet::new();
        p.insert("x", array![[1.5f64]]);
        let mut opt = Adam::new(&p);
        let gs = [0.3, -1.2, 0.05, 2.0, -0.7];
        let lr = 0.01;
        let (mut x, mut m, mut v) = (1.5f64, 0.0f64, 0.0f64);
        for (k, &g) in gs.iter().enumerate() {
            let mut gp = ParamSet::new();
            gp.insert("x", array![[g]]);
            opt.step(&mut p, &gp, lr).unwrap();
            let t = (k + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            x -= lr * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            assert!((p.get("x")[[0, 0]] - x).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = ParamSet::new();
        p.insert("x", array![[1.5f64, -2.0]]);
        let before = p.clone();
        let mut opt = Adam::new(&p);
        for _ in 0..3 {
            opt.step(&mut p, &before.zeros_like(), 0.1).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn non_finite_rejected_without_side_effects() {
        let mut p = ParamSet::new();
        p.insert("x", array![[1.0f64]]);
        let mut opt = Adam::new(&p);
        let mut g = ParamSet::new();
        g.insert("x", array![[f64::INFINITY]]);
        assert!(opt.step(&mut p, &g, 0.1).is_err());
        assert_eq!(opt.t, 0);
        assert_eq!(p.get("x")[[0, 0]], 1.0);
    }
}
