//! The task-by-task performance matrix and the continual-learning metrics
//! derived from it. Task indices in the metric functions are 1-based, so
//! `ap(m, k)` is the average performance after learning the k-th task.

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::scalar::Scalar;

/// `N x N` matrix whose entry `(i, j)` is the performance on task `j` after
/// learning task `i`. Unfilled entries are `None`, never a sentinel number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceMatrix<T = f64> {
    n: usize,
    values: Vec<Vec<Option<T>>>,
}

impl<T: Scalar> PerformanceMatrix<T> {
    pub fn new(n: usize) -> Self {
        Self { n, values: vec![vec![None; n]; n] }
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            bail!(Shape, "performance matrix must be square");
        }
        Ok(Self { n, values: rows.into_iter().map(|r| r.into_iter().map(Some).collect()).collect() })
    }

    /// Square matrix from rows with explicit gaps.
    pub fn from_option_rows(rows: Vec<Vec<Option<T>>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            bail!(Shape, "performance matrix must be square");
        }
        Ok(Self { n, values: rows })
    }

    /// Every row equal to `row`, for a reference model evaluated once.
    pub fn from_repeated_row(row: &[T]) -> Self {
        let n = row.len();
        Self { n, values: vec![row.iter().copied().map(Some).collect(); n] }
    }

    pub fn tasks(&self) -> usize {
        self.n
    }

    /// 0-based accessor.
    pub fn get(&self, i: usize, j: usize) -> Option<T> {
        self.values.get(i).and_then(|r| r.get(j)).copied().flatten()
    }

    /// Writes entry `(i, j)` (0-based). Each entry may be written once.
    pub fn set(&mut self, i: usize, j: usize, v: T) -> Result<()> {
        if i >= self.n || j >= self.n {
            bail!(Index, "entry ({i}, {j}) outside a {n}x{n} matrix", n = self.n);
        }
        let cell = &mut self.values[i][j];
        if cell.is_some() {
            bail!(Protocol, "matrix entry ({i}, {j}) written twice");
        }
        *cell = Some(v);
        Ok(())
    }

    pub fn diagonal(&self) -> Vec<Option<T>> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn row_filled(&self, i: usize) -> bool {
        self.values.get(i).is_some_and(|r| r.iter().all(Option::is_some))
    }

    pub fn rows(&self) -> &[Vec<Option<T>>] {
        &self.values
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> PerformanceMatrix<U> {
        PerformanceMatrix {
            n: self.n,
            values: self.values.iter().map(|r| r.iter().map(|v| v.map(&f)).collect()).collect(),
        }
    }

    /// 1-based accessor used by the metric formulas.
    fn at(&self, i: usize, j: usize) -> Result<T> {
        match self.get(i - 1, j - 1) {
            Some(v) => Ok(v),
            None => bail!(Metric, "performance matrix entry ({i}, {j}) is not filled"),
        }
    }

    fn check_k(&self, k: usize, min: usize) -> Result<()> {
        if k < min || k > self.n {
            bail!(Metric, "k = {k} outside {min}..={}", self.n);
        }
        Ok(())
    }
}

/// Average performance on the first `k` tasks after learning task `k`.
pub fn ap<T: Scalar>(m: &PerformanceMatrix<T>, k: usize) -> Result<T> {
    m.check_k(k, 1)?;
    let mut sum = T::zero();
    for i in 1..=k {
        sum += m.at(k, i)?;
    }
    Ok(sum / T::of_usize(k))
}

/// Average forgetting on the first `k - 1` tasks after learning task `k`.
pub fn af<T: Scalar>(m: &PerformanceMatrix<T>, k: usize) -> Result<T> {
    m.check_k(k, 2)?;
    let mut sum = T::zero();
    for i in 1..k {
        sum += m.at(i, i)? - m.at(k, i)?;
    }
    Ok(sum / T::of_usize(k - 1))
}

/// Mean gap between the joint reference and the target model on the diagonal.
pub fn intransigence<T: Scalar>(m: &PerformanceMatrix<T>, joint: &PerformanceMatrix<T>, k: usize) -> Result<T> {
    m.check_k(k, 1)?;
    if joint.tasks() < k {
        bail!(Metric, "joint reference covers {} tasks, need {k}", joint.tasks());
    }
    let mut sum = T::zero();
    for i in 1..=k {
        sum += joint.at(i, i)? - m.at(i, i)?;
    }
    Ok(sum / T::of_usize(k))
}

/// Forward transfer relative to an untrained model's performance `r`.
pub fn fwt<T: Scalar>(m: &PerformanceMatrix<T>, r: &[T], k: usize) -> Result<T> {
    m.check_k(k, 2)?;
    if r.len() < k {
        bail!(Metric, "random baseline has {} entries, need {k}", r.len());
    }
    let mut sum = T::zero();
    for i in 2..=k {
        sum += m.at(i - 1, i)? - r[i - 1];
    }
    Ok(sum / T::of_usize(k - 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> PerformanceMatrix {
        PerformanceMatrix::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn ap_examples() {
        let x = m(&[&[0.9, 0.1], &[0.5, 0.8]]);
        assert_eq!(ap(&x, 1).unwrap(), 0.9);
        assert_abs_diff_eq!(ap(&x, 2).unwrap(), 0.65, epsilon = 1e-15);
        let c = m(&[&[0.3, 0.3], &[0.3, 0.3]]);
        assert_abs_diff_eq!(ap(&c, 2).unwrap(), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn ap_requires_filled_row() {
        let mut x = PerformanceMatrix::<f64>::new(2);
        x.set(0, 0, 0.5).unwrap();
        assert!(ap(&x, 2).is_err());
        assert!(x.set(0, 0, 0.1).is_err());
    }

    #[test]
    fn af_examples() {
        assert_eq!(af(&m(&[&[0.9, 0.0], &[0.9, 0.4]]), 2).unwrap(), 0.0);
        assert_abs_diff_eq!(af(&m(&[&[0.9, 0.0], &[0.5, 0.4]]), 2).unwrap(), 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(af(&m(&[&[0.9, 0.0], &[0.95, 0.4]]), 2).unwrap(), -0.05, epsilon = 1e-15);
        assert!(af(&m(&[&[0.9]]), 1).is_err());
    }

    #[test]
    fn int_examples() {
        let joint = m(&[&[0.9, 0.0], &[0.0, 0.8]]);
        let target = m(&[&[0.7, 0.0], &[0.0, 0.6]]);
        assert_abs_diff_eq!(intransigence(&target, &joint, 2).unwrap(), 0.2, epsilon = 1e-15);
        assert!(intransigence(&joint, &target, 2).unwrap() < 0.0);
        assert!(intransigence(&target, &PerformanceMatrix::new(1), 2).is_err());
    }

    #[test]
    fn fwt_examples() {
        let x = m(&[&[0.9, 0.6], &[0.5, 0.8]]);
        assert_abs_diff_eq!(fwt(&x, &[0.5, 0.5], 2).unwrap(), 0.1, epsilon = 1e-15);
        assert_eq!(fwt(&x, &[0.0, 0.6], 2).unwrap(), 0.0);
        assert!(fwt(&x, &[0.5], 2).is_err());
    }

    fn arb_matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..6).prop_flat_map(|n| proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, n), n))
    }

    proptest! {
        #[test]
        fn af_is_shift_invariant(rows in arb_matrix(), c in -0.5f64..0.5) {
            let n = rows.len();
            prop_assume!(n >= 2);
            let a = PerformanceMatrix::from_rows(rows.clone()).unwrap();
            let b = a.map(|v| v + c);
            for k in 2..=n {
                prop_assert!((af(&a, k).unwrap() - af(&b, k).unwrap()).abs() < 1e-12);
            }
        }

        #[test]
        fn self_intransigence_is_zero(rows in arb_matrix()) {
            let a = PerformanceMatrix::from_rows(rows.clone()).unwrap();
            for k in 1..=rows.len() {
                prop_assert_eq!(intransigence(&a, &a, k).unwrap(), 0.0);
            }
            prop_assert_eq!(ap(&a, 1).unwrap(), rows[0][0]);
        }
    }
}
