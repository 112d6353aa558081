use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use super::ParamSet;
use crate::Scalar;

/// `tanh` through a single `exp`; libm's version goes through `expm1` and
/// dominates the cost of small layers. Near zero a short series avoids the
/// cancellation in `1 - t`.
#[inline]
pub fn tanh<T: Scalar>(x: T) -> T {
    let a = x.abs();
    if a < T::of(0.02) {
        let x2 = x * x;
        return x * (T::one() - x2 * (T::of(1.0 / 3.0) - x2 * (T::of(2.0 / 15.0) - x2 * T::of(17.0 / 315.0))));
    }
    let t = (T::of(-2.0) * a).exp();
    let y = (T::one() - t) / (T::one() + t);
    if x < T::zero() {
        -y
    } else {
        y
    }
}

/// Fully connected network: tanh on hidden layers, linear output.
///
/// Parameters live in a [`ParamSet`] under `{name}.w{l}` (fan_in x fan_out)
/// and `{name}.b{l}` (1 x fan_out).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub name: String,
    pub sizes: Vec<usize>,
}

/// Layer inputs and the output of one forward pass, kept for backward.
#[derive(Debug, Clone)]
pub struct MlpTrace<T> {
    /// `inputs[l]` is the input to layer `l` (post-activation of layer l-1).
    inputs: Vec<Array2<T>>,
    pub output: Array2<T>,
}

impl Mlp {
    pub fn new(name: impl Into<String>, input: usize, hidden: &[usize], output: usize) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Mlp { name: name.into(), sizes }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn w(&self, l: usize) -> String {
        format!("{}.w{l}", self.name)
    }

    pub fn b(&self, l: usize) -> String {
        format!("{}.b{l}", self.name)
    }

    /// Uniform fan-in initialisation; the last layer is additionally
    /// multiplied by `out_scale`.
    pub fn init<T: Scalar>(&self, params: &mut ParamSet<T>, rng: &mut impl Rng, out_scale: f64) {
        for l in 0..self.n_layers() {
            let (fi, fo) = (self.sizes[l], self.sizes[l + 1]);
            let mut bound = 1.0 / (fi as f64).sqrt();
            if l + 1 == self.n_layers() {
                bound *= out_scale;
            }
            let w = Array2::from_shape_fn((fi, fo), |_| T::of(rng.random_range(-bound..=bound)));
            let b = Array2::from_shape_fn((1, fo), |_| T::of(rng.random_range(-bound..=bound)));
            params.insert(self.w(l), w);
            params.insert(self.b(l), b);
        }
    }

    pub fn forward<T: Scalar>(&self, p: &ParamSet<T>, x: ArrayView2<T>) -> Array2<T> {
        let mut h = x.to_owned();
        for l in 0..self.n_layers() {
            h = self.layer(p, l, h.view());
        }
        h
    }

    pub fn forward_traced<T: Scalar>(&self, p: &ParamSet<T>, x: ArrayView2<T>) -> MlpTrace<T> {
        let mut inputs = Vec::with_capacity(self.n_layers());
        let mut h = x.to_owned();
        for l in 0..self.n_layers() {
            let next = self.layer(p, l, h.view());
            inputs.push(h);
            h = next;
        }
        MlpTrace { inputs, output: h }
    }

    fn layer<T: Scalar>(&self, p: &ParamSet<T>, l: usize, h: ArrayView2<T>) -> Array2<T> {
        assert_eq!(h.ncols(), self.sizes[l], "{} layer {l} input width", self.name);
        let mut z = h.dot(p.get(&self.w(l)));
        z += p.get(&self.b(l));
        if l + 1 < self.n_layers() {
            z.mapv_inplace(tanh);
        }
        z
    }

    /// Accumulate parameter gradients of `sum(dout * output)` into `grads`
    /// and return the gradient with respect to the input.
    pub fn backward<T: Scalar>(
        &self,
        p: &ParamSet<T>,
        trace: &MlpTrace<T>,
        dout: ArrayView2<T>,
        grads: &mut ParamSet<T>,
    ) -> Array2<T> {
        let mut d = dout.to_owned();
        for l in (0..self.n_layers()).rev() {
            let input = &trace.inputs[l];
            *grads.get_mut(&self.w(l)) += &input.t().dot(&d);
            *grads.get_mut(&self.b(l)) += &d.sum_axis(Axis(0)).insert_axis(Axis(0));
            let mut dx = d.dot(&p.get(&self.w(l)).t());
            if l > 0 {
                // input[l] = tanh(pre-activation of layer l-1)
                ndarray::Zip::from(&mut dx).and(input).for_each(|g, &a| *g = *g * (T::one() - a * a));
            }
            d = dx;
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from;
    use ndarray::array;

    fn net() -> (Mlp, ParamSet<f64>) {
        let m = Mlp::new("n", 3, &[5, 4], 2);
        let mut p = ParamSet::new();
        m.init(&mut p, &mut rng_from(1), 1.0);
        (m, p)
    }

    /// Layer-by-layer recomputation with explicit loops.
    fn naive(m: &Mlp, p: &ParamSet<f64>, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for l in 0..m.n_layers() {
            let w = p.get(&m.w(l));
            let b = p.get(&m.b(l));
            let mut out = vec![0.0; w.ncols()];
            for (j, o) in out.iter_mut().enumerate() {
                let mut acc = b[[0, j]];
                for (i, hi) in h.iter().enumerate() {
                    acc += hi * w[[i, j]];
                }
                *o = if l + 1 < m.n_layers() { acc.tanh() } else { acc };
            }
            h = out;
        }
        h
    }

    #[test]
    fn tanh_matches_libm() {
        let mut worst = 0.0f64;
        for i in -200_000..=200_000 {
            let x = i as f64 * 1e-4 + 1.3e-9 * i as f64;
            let (a, b) = (tanh(x), x.tanh());
            worst = worst.max((a - b).abs() / b.abs().max(1e-300));
        }
        for x in [0.0, 1e-300, -1e-12, 0.0199999, 0.02, -0.0200001, 40.0, -800.0] {
            let b: f64 = f64::tanh(x);
            worst = worst.max((tanh(x) - b).abs() / b.abs().max(1e-300));
        }
        assert!(worst < 1e-14, "{worst}");
        assert!((tanh(0.5f32) - 0.5f32.tanh()).abs() < 1e-6);
    }

    #[test]
    fn forward_matches_loops() {
        let (m, p) = net();
        let x = array![[0.3, -1.2, 0.7], [2.0, 0.0, -0.5]];
        let y = m.forward(&p, x.view());
        for r in 0..2 {
            let want = naive(&m, &p, x.row(r).as_slice().unwrap());
            for j in 0..2 {
                assert!((y[[r, j]] - want[j]).abs() <= 1e-12 * want[j].abs().max(1.0));
            }
        }
        assert_eq!(m.forward_traced(&p, x.view()).output, y);
    }

    #[test]
    fn backward_matches_central_differences() {
        let (m, p) = net();
        let x = array![[0.3, -1.2, 0.7], [2.0, 0.1, -0.5], [-0.4, 0.9, 0.2]];
        let c = array![[1.0, -2.0], [0.5, 0.25], [-1.0, 3.0]];
        let loss = |p: &ParamSet<f64>, x: &Array2<f64>| (m.forward(p, x.view()) * &c).sum();
        let trace = m.forward_traced(&p, x.view());
        let mut g = p.zeros_like();
        let dx = m.backward(&p, &trace, c.view(), &mut g);
        let h = 1e-6;
        let flat = p.to_flat();
        let gflat = g.to_flat();
        for i in 0..flat.len() {
            let mut a = flat.clone();
            a[i] += h;
            let mut b = flat.clone();
            b[i] -= h;
            let (mut pa, mut pb) = (p.clone(), p.clone());
            pa.set_flat(&a);
            pb.set_flat(&b);
            let fd = (loss(&pa, &x) - loss(&pb, &x)) / (2.0 * h);
            assert!((fd - gflat[i]).abs() < 1e-7 * fd.abs().max(1.0), "param {i}: {fd} vs {}", gflat[i]);
        }
        for r in 0..3 {
            for k in 0..3 {
                let mut xa = x.clone();
                xa[[r, k]] += h;
                let mut xb = x.clone();
                xb[[r, k]] -= h;
                let fd = (loss(&p, &xa) - loss(&p, &xb)) / (2.0 * h);
                assert!((fd - dx[[r, k]]).abs() < 1e-7 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn zero_weights_give_final_bias() {
        let (m, mut p) = net();
        for (k, v) in p.iter_mut() {
            if k.contains(".w") {
                v.fill(0.0);
            }
        }
        let y = m.forward(&p, array![[9.0, 9.0, 9.0]].view());
        assert_eq!(y.row(0), p.get("n.b2").row(0));
    }
}
