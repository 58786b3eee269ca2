use ndarray::{Array2, ArrayView2};

use crate::error::{bail, Result};
use crate::scalar::Scalar;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr<T> {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> Csr<T> {
    /// Builds a matrix from row-major triplets. Duplicate coordinates are summed
    /// and column indices end up sorted within each row.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut triplets: Vec<(usize, usize, T)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|(r, c, _)| *r >= n_rows || *c >= n_cols) {
            bail!(Index, "entry ({r}, {c}) outside a {n_rows}x{n_cols} matrix");
        }
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
                continue;
            }
            last = Some((r, c));
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self { n_rows, n_cols, row_ptr, col_idx, values })
    }

    pub fn identity(n: usize) -> Self {
        Self { n_rows: n, n_cols: n, row_ptr: (0..=n).collect(), col_idx: (0..n).collect(), values: vec![T::one(); n] }
    }

    /// Block-diagonal stacking, used to batch several graphs into one propagation.
    pub fn block_diagonal<'a>(blocks: impl IntoIterator<Item = &'a Csr<T>>) -> Self {
        let mut out = Self { n_rows: 0, n_cols: 0, row_ptr: vec![0], col_idx: vec![], values: vec![] };
        for b in blocks {
            let base = out.n_rows;
            let nnz_base = out.col_idx.len();
            out.col_idx.extend(b.col_idx.iter().map(|c| c + out.n_cols));
            out.values.extend_from_slice(&b.values);
            out.row_ptr.extend(b.row_ptr[1..].iter().map(|p| p + nnz_base));
            out.n_rows = base + b.n_rows;
            out.n_cols += b.n_cols;
        }
        out
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => T::zero(),
        }
    }

    pub fn transpose(&self) -> Self {
        let triplets = (0..self.n_rows).flat_map(|r| self.row(r).map(move |(c, v)| (c, r, v))).collect();
        Self::from_triplets(self.n_cols, self.n_rows, triplets).expect("indices already in range")
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.n_rows == self.n_cols
            && (0..self.n_rows).all(|r| self.row(r).all(|(c, v)| (self.get(c, r) - v).abs() <= tol))
    }

    /// Sparse-dense product `self · x`. Each output row accumulates in stored
    /// column order, so results are bitwise reproducible.
    pub fn matmul(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        if x.nrows() != self.n_cols {
            bail!(Shape, "sparse {}x{} times dense {}x{}", self.n_rows, self.n_cols, x.nrows(), x.ncols());
        }
        let mut out = Array2::zeros((self.n_rows, x.ncols()));
        for (r, mut out_row) in out.rows_mut().into_iter().enumerate() {
            for (c, v) in self.row(r) {
                out_row.scaled_add(v, &x.row(c));
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Array2<T> {
        let mut out = Array2::zeros((self.n_rows, self.n_cols));
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                out[[r, c]] = v;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn duplicates_are_summed() {
        let m = Csr::from_triplets(2, 2, vec![(0, 1, 1.0), (0, 1, 2.0), (1, 0, 4.0)]).unwrap();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(0, 1), 3.0);
    }

    #[test]
    fn matmul_matches_dense() {
        let m = Csr::from_triplets(2, 3, vec![(0, 0, 1.0), (0, 2, 2.0), (1, 1, -1.0)]).unwrap();
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        assert_eq!(m.matmul(x.view()).unwrap(), m.to_dense().dot(&x));
        assert_eq!(m.transpose().to_dense(), m.to_dense().t());
    }

    #[test]
    fn block_diagonal_offsets() {
        let a = Csr::<f64>::identity(2);
        let b = Csr::from_triplets(1, 1, vec![(0, 0, 5.0)]).unwrap();
        let d = Csr::block_diagonal([&a, &b]);
        assert_eq!(d.shape(), (3, 3));
        assert_eq!(d.get(2, 2), 5.0);
        assert_eq!(d.get(0, 2), 0.0);
    }

    #[test]
    fn out_of_range_triplet() {
        assert!(Csr::from_triplets(1, 1, vec![(0, 1, 1.0f64)]).is_err());
    }
}
