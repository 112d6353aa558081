//! Small dense networks with hand-written backward passes, named parameter
//! maps, Adam, and a keyed checkpoint container.

mod adam;
mod container;
mod mlp;

use std::collections::BTreeMap;

use ndarray::{Array2, Zip};

pub use adam::Adam;
pub use container::{Container, ContainerError};
pub use mlp::{tanh, Mlp, MlpTrace};

use crate::Scalar;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch for {name}: parameter {param:?}, gradient {grad:?}")]
    Shape { name: String, param: (usize, usize), grad: (usize, usize) },
    #[error("gradient for {0} is missing")]
    MissingGrad(String),
    #[error("unexpected gradient for {0}")]
    UnknownGrad(String),
    #[error("non-finite gradient in {name}[{index}] = {value}")]
    NonFinite { name: String, index: usize, value: f64 },
}

/// Named real arrays. Biases are stored as single-row matrices so every
/// entry has the same rank.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet<T> {
    arrays: BTreeMap<String, Array2<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { arrays: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<T>) {
        self.arrays.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> &Array2<T> {
        self.arrays.get(name).unwrap_or_else(|| panic!("no parameter named {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array2<T> {
        self.arrays.get_mut(name).unwrap_or_else(|| panic!("no parameter named {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.arrays.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<T>)> {
        self.arrays.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array2<T>)> {
        self.arrays.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    /// Total number of scalars.
    pub fn size(&self) -> usize {
        self.arrays.values().map(|a| a.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet { arrays: self.arrays.iter().map(|(k, v)| (k.clone(), Array2::zeros(v.raw_dim()))).collect() }
    }

    /// `self += alpha * other`, entry by entry. Both sets must have the same
    /// names and shapes.
    pub fn axpy(&mut self, alpha: T, other: &ParamSet<T>) {
        for (k, v) in self.arrays.iter_mut() {
            Zip::from(v).and(other.get(k)).for_each(|a, &b| *a = *a + alpha * b);
        }
    }

    pub fn scale(&mut self, alpha: T) {
        for v in self.arrays.values_mut() {
            v.mapv_inplace(|x| x * alpha);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.arrays.values().all(|a| a.iter().all(|x| x.is_finite()))
    }

    pub fn is_zero(&self) -> bool {
        self.arrays.values().all(|a| a.iter().all(|x| *x == T::zero()))
    }

    pub fn max_abs(&self) -> T {
        self.arrays.values().flat_map(|a| a.iter()).fold(T::zero(), |m, x| m.max(x.abs()))
    }

    /// Check that `grads` has exactly our names and shapes and only finite
    /// values.
    pub fn check_grads(&self, grads: &ParamSet<T>) -> Result<(), NnError> {
        for (k, p) in &self.arrays {
            let g = grads.arrays.get(k).ok_or_else(|| NnError::MissingGrad(k.clone()))?;
            if g.dim() != p.dim() {
                return Err(NnError::Shape { name: k.clone(), param: p.dim(), grad: g.dim() });
            }
            if let Some((index, value)) = g.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(NnError::NonFinite { name: k.clone(), index, value: value.as_f64() });
            }
        }
        if let Some(k) = grads.arrays.keys().find(|k| !self.arrays.contains_key(*k)) {
            return Err(NnError::UnknownGrad(k.clone()));
        }
        Ok(())
    }

    /// All scalars in name order, row-major within each array.
    pub fn to_flat(&self) -> Vec<T> {
        self.arrays.values().flat_map(|a| a.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[T]) {
        assert_eq!(flat.len(), self.size(), "flat length");
        let mut it = flat.iter();
        for v in self.arrays.values_mut() {
            v.iter_mut().for_each(|x| *x = *it.next().unwrap());
        }
    }

    /// Keep only the arrays whose name starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> Self {
        ParamSet {
            arrays: self.arrays.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(k, v)| (k.clone(), v.clone())).collect(),
        }
    }

    pub fn merge(&mut self, other: ParamSet<T>) {
        self.arrays.extend(other.arrays);
    }

    /// Same values at another precision.
    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet { arrays: self.arrays.iter().map(|(k, v)| (k.clone(), v.mapv(|x| U::of(x.as_f64())))).collect() }
    }
}

/// `target <- rho * target + (1 - rho) * source`.
pub fn polyak<T: Scalar>(target: &mut ParamSet<T>, source: &ParamSet<T>, rho: T) {
    let one_minus = T::one() - rho;
    for (k, t) in target.iter_mut() {
        Zip::from(t).and(source.get(k)).for_each(|a, &b| *a = rho * *a + one_minus * b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn two() -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.insert("a.w0", array![[1.0, 2.0], [3.0, 4.0]]);
        p.insert("a.b0", array![[0.5, -0.5]]);
        p
    }

    #[test]
    fn flat_round_trip_and_axpy() {
        let mut p = two();
        let flat = p.to_flat();
        assert_eq!(flat, vec![0.5, -0.5, 1.0, 2.0, 3.0, 4.0]);
        p.set_flat(&flat.iter().map(|x| x * 2.0).collect::<Vec<_>>());
        let q = two();
        p.axpy(-2.0, &q);
        assert!(p.is_zero());
    }

    #[test]
    fn grad_checks() {
        let p = two();
        assert!(p.check_grads(&p.zeros_like()).is_ok());
        let mut g = p.zeros_like();
        g.get_mut("a.b0")[[0, 1]] = f64::NAN;
        assert!(matches!(p.check_grads(&g), Err(NnError::NonFinite { index: 1, .. })));
        let mut g = p.zeros_like();
        g.insert("a.b0", Array2::zeros((2, 2)));
        assert!(matches!(p.check_grads(&g), Err(NnError::Shape { .. })));
        let mut g = p.zeros_like();
        g.insert("zz", Array2::zeros((1, 1)));
        assert!(matches!(p.check_grads(&g), Err(NnError::UnknownGrad(_))));
    }

    #[test]
    fn polyak_blend() {
        let mut t = two();
        let mut s = two();
        s.scale(3.0);
        polyak(&mut t, &s, 0.75);
        assert_eq!(t.get("a.w0")[[1, 1]], 0.75 * 4.0 + 0.25 * 12.0);
    }
}
