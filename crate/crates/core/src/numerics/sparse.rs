//! Compressed sparse row matrices.
//!
//! Every constructor canonicalizes: column indices are strictly increasing
//! within a row and no explicit zeros are stored. Products and Hadamard
//! products are evaluated row by row with a fixed accumulation order, so the
//! same inputs always produce bit-identical outputs.

use serde::{Deserialize, Serialize};

use super::dense::DenseMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            indptr: vec![0; rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds a canonical matrix from `(row, col, value)` triplets. Duplicate
    /// coordinates are summed; zero sums are dropped.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut items: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(r, c, v) in &items {
            if r >= rows {
                return Err(Error::IndexOutOfRange { index: r, len: rows });
            }
            if c >= cols {
                return Err(Error::IndexOutOfRange { index: c, len: cols });
            }
            if !v.is_finite() {
                return Err(Error::Numerical(format!("non-finite entry at ({r}, {c})")));
            }
        }
        items.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(items.len());
        let mut values = Vec::with_capacity(items.len());
        let mut i = 0;
        while i < items.len() {
            let (r, c, mut v) = items[i];
            i += 1;
            while i < items.len() && items[i].0 == r && items[i].1 == c {
                v += items[i].2;
                i += 1;
            }
            if v != 0.0 {
                indptr[r + 1] += 1;
                indices.push(c);
                values.push(v);
            }
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    /// Binary incidence matrix from per-row column lists.
    pub fn from_row_sets(cols: usize, row_sets: &[Vec<usize>]) -> Result<Self> {
        let triplets = row_sets
            .iter()
            .enumerate()
            .flat_map(|(r, set)| set.iter().map(move |&c| (r, c, 1.0)));
        let m = Self::from_triplets(row_sets.len(), cols, triplets)?;
        // Duplicates in a set would otherwise sum past 1.
        Ok(m.map_values(|_| 1.0))
    }

    /// Assembles a matrix from raw CSR arrays, validating canonical form.
    pub fn from_csr(
        rows: usize,
        cols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if indptr.len() != rows + 1 || indptr[0] != 0 || indptr[rows] != indices.len() {
            return Err(Error::Format("malformed CSR row pointer".into()));
        }
        if indices.len() != values.len() {
            return Err(Error::Format("CSR index/value length mismatch".into()));
        }
        for r in 0..rows {
            if indptr[r] > indptr[r + 1] {
                return Err(Error::Format("CSR row pointer not monotone".into()));
            }
            let row = &indices[indptr[r]..indptr[r + 1]];
            if row.windows(2).any(|w| w[0] >= w[1]) || row.last().is_some_and(|&c| c >= cols) {
                return Err(Error::Format(format!("row {r} column indices not canonical")));
            }
        }
        if values.iter().any(|v| *v == 0.0 || !v.is_finite()) {
            return Err(Error::Format("CSR stores a zero or non-finite value".into()));
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn from_dense(d: &DenseMatrix) -> Self {
        let mut out = Self::zeros(d.rows(), d.cols());
        out.indptr.clear();
        out.indptr.push(0);
        for r in 0..d.rows() {
            for (c, &v) in d.row(r).iter().enumerate() {
                if v != 0.0 {
                    out.indices.push(c);
                    out.values.push(v);
                }
            }
            out.indptr.push(out.indices.len());
        }
        out
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `r`.
    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(pos) => vals[pos],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).1.iter().sum()).collect()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                d.set(r, c, v);
            }
        }
        d
    }

    /// Applies `f` to every stored value, dropping results that are zero.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        self.filter_map_entries(|_, _, v| f(v))
    }

    fn filter_map_entries(&self, f: impl Fn(usize, usize, f64) -> f64) -> Self {
        let mut indptr = Vec::with_capacity(self.rows + 1);
        let mut indices = Vec::with_capacity(self.nnz());
        let mut values = Vec::with_capacity(self.nnz());
        indptr.push(0);
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let nv = f(r, c, v);
                if nv != 0.0 {
                    indices.push(c);
                    values.push(nv);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            rows: self.rows,
            cols: self.cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for c in 0..self.cols {
            counts[c + 1] += counts[c];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        // Rows are visited in order, so each output row receives ascending
        // column indices.
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let slot = next[c];
                indices[slot] = r;
                values[slot] = v;
                next[c] += 1;
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            indptr,
            indices,
            values,
        }
    }

    /// Sparse × sparse product (Gustavson's row-wise algorithm).
    pub fn spgemm(&self, rhs: &SparseMatrix) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::dims("spgemm", self.shape(), rhs.shape()));
        }
        let mut acc = vec![0.0; rhs.cols];
        let mut seen = vec![false; rhs.cols];
        let mut touched: Vec<usize> = Vec::new();
        let mut indptr = Vec::with_capacity(self.rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for r in 0..self.rows {
            let (a_cols, a_vals) = self.row(r);
            for (&k, &av) in a_cols.iter().zip(a_vals) {
                let (b_cols, b_vals) = rhs.row(k);
                for (&c, &bv) in b_cols.iter().zip(b_vals) {
                    if !seen[c] {
                        seen[c] = true;
                        touched.push(c);
                    }
                    acc[c] += av * bv;
                }
            }
            touched.sort_unstable();
            for &c in &touched {
                let v = acc[c];
                if v != 0.0 {
                    indices.push(c);
                    values.push(v);
                }
                acc[c] = 0.0;
                seen[c] = false;
            }
            touched.clear();
            indptr.push(indices.len());
        }
        Ok(Self {
            rows: self.rows,
            cols: rhs.cols,
            indptr,
            indices,
            values,
        })
    }

    /// Elementwise product; the support is the intersection of supports.
    pub fn hadamard(&self, rhs: &SparseMatrix) -> Result<Self> {
        if self.shape() != rhs.shape() {
            return Err(Error::dims("hadamard", self.shape(), rhs.shape()));
        }
        let mut indptr = Vec::with_capacity(self.rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for r in 0..self.rows {
            let (ac, av) = self.row(r);
            let (bc, bv) = rhs.row(r);
            let (mut i, mut j) = (0, 0);
            while i < ac.len() && j < bc.len() {
                match ac[i].cmp(&bc[j]) {
                    std::cmp::Ordering::Less => i += 1,
                    std::cmp::Ordering::Greater => j += 1,
                    std::cmp::Ordering::Equal => {
                        let v = av[i] * bv[j];
                        if v != 0.0 {
                            indices.push(ac[i]);
                            values.push(v);
                        }
                        i += 1;
                        j += 1;
                    }
                }
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            indptr,
            indices,
            values,
        })
    }

    /// Row-wise L1 normalization of a nonnegative matrix. Zero rows stay zero.
    pub fn row_normalize(&self) -> Result<Self> {
        if let Some(v) = self.values.iter().find(|v| **v < 0.0) {
            return Err(Error::Validation(format!(
                "row_normalize requires nonnegative entries, found {v}"
            )));
        }
        let sums = self.row_sums();
        Ok(self.filter_map_entries(|r, _, v| v / sums[r]))
    }

    /// Sparse × dense product.
    pub fn spmm(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != rhs.rows() {
            return Err(Error::dims("spmm", self.shape(), rhs.shape()));
        }
        let mut out = DenseMatrix::zeros(self.rows, rhs.cols());
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            let out_row = out.row_mut(r);
            for (&k, &v) in cols.iter().zip(vals) {
                for (o, &x) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }

    /// Same sparsity pattern as `self` with every stored value replaced by
    /// `values` (length must equal `nnz`). Zeros are kept explicitly, so the
    /// result is a pattern-aligned view rather than a canonical matrix.
    pub(crate) fn with_pattern_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.nnz());
        Self {
            rows: self.rows,
            cols: self.cols,
            indptr: self.indptr.clone(),
            indices: self.indices.clone(),
            values,
        }
    }

    /// Union of the stored pattern with the main diagonal. New diagonal
    /// entries get `fill`.
    pub fn with_diagonal(&self, fill: f64) -> Self {
        let n = self.rows.min(self.cols);
        let mut indptr = Vec::with_capacity(self.rows + 1);
        let mut indices = Vec::with_capacity(self.nnz() + n);
        let mut values = Vec::with_capacity(self.nnz() + n);
        indptr.push(0);
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            let mut placed = r >= n;
            for (&c, &v) in cols.iter().zip(vals) {
                if !placed && c >= r {
                    if c != r {
                        indices.push(r);
                        values.push(fill);
                    }
                    placed = true;
                }
                indices.push(c);
                values.push(v);
            }
            if !placed {
                indices.push(r);
                values.push(fill);
            }
            indptr.push(indices.len());
        }
        Self {
            rows: self.rows,
            cols: self.cols,
            indptr,
            indices,
            values,
        }
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn vstack(parts: &[&SparseMatrix]) -> Result<Self> {
        let cols = parts.first().map_or(0, |p| p.cols);
        let mut out = Self::zeros(0, cols);
        for p in parts {
            if p.cols != cols {
                return Err(Error::dims("vstack", (out.rows, cols), p.shape()));
            }
            let base = out.indices.len();
            out.indices.extend_from_slice(&p.indices);
            out.values.extend_from_slice(&p.values);
            out.indptr.extend(p.indptr[1..].iter().map(|&o| o + base));
            out.rows += p.rows;
        }
        Ok(out)
    }

    /// Keeps only the listed rows, in the listed order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut out = Self::zeros(0, self.cols);
        for &r in rows {
            let (c, v) = self.row(r);
            out.indices.extend_from_slice(c);
            out.values.extend_from_slice(v);
            out.indptr.push(out.indices.len());
            out.rows += 1;
        }
        out
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && *self == self.transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense_of(rows: &[&[f64]]) -> SparseMatrix {
        let v: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        SparseMatrix::from_dense(&DenseMatrix::from_rows(&v).unwrap())
    }

    fn brute_product(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn spgemm_counts_app_api_app_paths() {
        // Oracle: enumerate every (app, api, app) triple.
        let incidence = [[1.0, 1.0], [0.0, 1.0], [1.0, 0.0]];
        let mut expected = [[0.0; 3]; 3];
        for (i, row_i) in incidence.iter().enumerate() {
            for (j, row_j) in incidence.iter().enumerate() {
                for k in 0..2 {
                    if row_i[k] == 1.0 && row_j[k] == 1.0 {
                        expected[i][j] += 1.0;
                    }
                }
            }
        }
        assert_eq!(expected, [[2.0, 1.0, 1.0], [1.0, 1.0, 0.0], [1.0, 0.0, 1.0]]);

        let a = dense_of(&[&[1.0, 1.0], &[0.0, 1.0], &[1.0, 0.0]]);
        let psi = a.spgemm(&a.transpose()).unwrap();
        let want: Vec<&[f64]> = expected.iter().map(|r| &r[..]).collect();
        assert_eq!(psi, dense_of(&want));
    }

    #[test]
    fn spgemm_with_zero_and_identity() {
        let a = dense_of(&[&[1.0, 2.0, 0.0], &[0.0, 0.0, 3.0]]);
        let z = SparseMatrix::zeros(3, 4);
        assert_eq!(a.spgemm(&z).unwrap(), SparseMatrix::zeros(2, 4));
        assert_eq!(SparseMatrix::identity(2).spgemm(&a).unwrap(), a);
        assert!(matches!(a.spgemm(&a), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn hadamard_examples() {
        let a = dense_of(&[&[2.0, 1.0, 1.0], &[1.0, 1.0, 0.0], &[1.0, 0.0, 1.0]]);
        let b = dense_of(&[&[1.0, 1.0, 0.0], &[1.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let want = dense_of(&[&[2.0, 1.0, 0.0], &[1.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        assert_eq!(a.hadamard(&b).unwrap(), want);
        assert_eq!(a.hadamard(&SparseMatrix::zeros(3, 3)).unwrap().nnz(), 0);
        let ones = SparseMatrix::from_dense(&DenseMatrix::filled(3, 3, 1.0));
        assert_eq!(a.hadamard(&ones).unwrap(), a);
        assert!(a.hadamard(&SparseMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn row_normalize_examples() {
        let a = dense_of(&[&[2.0, 2.0], &[0.0, 0.0]]);
        assert_eq!(a.row_normalize().unwrap(), dense_of(&[&[0.5, 0.5], &[0.0, 0.0]]));
        let single = dense_of(&[&[0.0, 7.0]]);
        assert_eq!(single.row_normalize().unwrap().get(0, 1), 1.0);
        let neg = dense_of(&[&[-1.0, 2.0]]);
        assert!(matches!(neg.row_normalize(), Err(Error::Validation(_))));
    }

    #[test]
    fn with_diagonal_inserts_in_order() {
        let a = dense_of(&[&[0.0, 0.5, 0.0], &[0.3, 0.0, 0.0], &[0.0, 0.0, 0.9]]);
        let d = a.with_diagonal(0.0);
        assert_eq!(d.row(0).0, &[0, 1]);
        assert_eq!(d.row(1).0, &[0, 1]);
        assert_eq!(d.row(2).0, &[2]);
        assert_eq!(d.row(2).1, &[0.9]);
    }

    fn arb_matrix(max: usize) -> impl Strategy<Value = DenseMatrix> {
        (1..=max, 1..=max).prop_flat_map(|(r, c)| {
            proptest::collection::vec(prop_oneof![3 => Just(0u8), 1 => 1u8..4], r * c).prop_map(
                move |v| DenseMatrix::from_vec(r, c, v.into_iter().map(f64::from).collect()).unwrap(),
            )
        })
    }

    proptest! {
        #[test]
        fn spgemm_matches_triple_loop(a in arb_matrix(30), seed in 0usize..1000) {
            let cols = 1 + seed % 30;
            let b = DenseMatrix::from_vec(
                a.cols(),
                cols,
                (0..a.cols() * cols).map(|i| ((i * 7 + seed) % 5) as f64 * ((i % 3 == 0) as u8 as f64)).collect(),
            ).unwrap();
            let got = SparseMatrix::from_dense(&a).spgemm(&SparseMatrix::from_dense(&b)).unwrap();
            prop_assert_eq!(got.to_dense(), brute_product(&a, &b));
        }

        #[test]
        fn hadamard_commutes(a in arb_matrix(12)) {
            let sa = SparseMatrix::from_dense(&a);
            let sb = SparseMatrix::from_dense(&a.map(|v| if v > 1.0 { 0.0 } else { v + 1.0 }));
            let ab = sa.hadamard(&sb).unwrap();
            prop_assert_eq!(&ab, &sb.hadamard(&sa).unwrap());
            for r in 0..ab.rows() {
                for &c in ab.row(r).0 {
                    prop_assert!(sa.get(r, c) != 0.0 && sb.get(r, c) != 0.0);
                }
            }
        }

        #[test]
        fn row_normalize_sums(a in arb_matrix(10)) {
            let n = SparseMatrix::from_dense(&a).row_normalize().unwrap();
            for s in n.row_sums() {
                prop_assert!(s == 0.0 || (s - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn transpose_is_involution(a in arb_matrix(15)) {
            let s = SparseMatrix::from_dense(&a);
            prop_assert_eq!(s.transpose().to_dense(), a.transpose());
            prop_assert_eq!(s.transpose().transpose(), s);
        }
    }
}
