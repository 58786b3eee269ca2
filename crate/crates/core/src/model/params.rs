use ndarray::Array2;

use crate::error::{bail, Result};
use crate::scalar::Scalar;

/// Named dense tensors with a fixed layout. The same type carries gradients,
/// moments and importance weights, so all of them share one flat indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Array2<T>>,
}

pub type GradientSet<T> = ParamSet<T>;

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { names: vec![], tensors: vec![] }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Array2<T>) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn zeros_like(&self) -> Self {
        Self { names: self.names.clone(), tensors: self.tensors.iter().map(|t| Array2::zeros(t.raw_dim())).collect() }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Array2<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Array2<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Array2<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    /// Total scalar count.
    pub fn size(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.dim() == b.dim())
    }

    fn check_layout(&self, other: &Self) -> Result<()> {
        if !self.same_layout(other) {
            bail!(Shape, "parameter layouts differ");
        }
        Ok(())
    }

    /// Row-major concatenation of every tensor in declaration order.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.size());
        for t in &self.tensors {
            out.extend(t.iter().copied());
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten) using `self` as the layout.
    pub fn unflatten(&self, flat: &[T]) -> Result<Self> {
        if flat.len() != self.size() {
            bail!(Shape, "flat vector of length {} for {} parameters", flat.len(), self.size());
        }
        let mut offset = 0;
        let mut tensors = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let n = t.len();
            tensors.push(Array2::from_shape_vec(t.raw_dim(), flat[offset..offset + n].to_vec()).expect("sized"));
            offset += n;
        }
        Ok(Self { names: self.names.clone(), tensors })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_layout(other)?;
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for t in &mut self.tensors {
            t.mapv_inplace(|x| x * s);
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { names: self.names.clone(), tensors: self.tensors.iter().map(|t| t.mapv(&f)).collect() }
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.check_layout(other)?;
        let mut acc = T::zero();
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            for (x, y) in a.iter().zip(b.iter()) {
                acc += *x * *y;
            }
        }
        Ok(acc)
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn flatten_round_trips(a in proptest::collection::vec(-5.0f64..5.0, 6), b in proptest::collection::vec(-5.0f64..5.0, 4)) {
            let mut p = ParamSet::new();
            p.push("w", Array2::from_shape_vec((2, 3), a).unwrap());
            p.push("b", Array2::from_shape_vec((1, 4), b).unwrap());
            let back = p.unflatten(&p.flatten()).unwrap();
            prop_assert_eq!(back, p);
        }
    }

    #[test]
    fn unflatten_checks_length() {
        let mut p = ParamSet::<f64>::new();
        p.push("w", Array2::zeros((2, 2)));
        assert!(p.unflatten(&[0.0; 3]).is_err());
    }
}
