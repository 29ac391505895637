use super::SparseError;

/// Symmetric sparse matrix holding only its lower triangle in compressed
/// sparse column form. Row indices within a column are strictly increasing
/// and every column carries an explicit diagonal entry.
#[derive(Clone, Debug, PartialEq)]
pub struct SymSparseMatrix {
    dim: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SymSparseMatrix {
    /// Builds a matrix from coordinate triplets. Entries from either triangle
    /// are accepted (upper ones are mirrored), duplicates are summed and
    /// missing diagonal entries are inserted as explicit zeros.
    pub fn from_triplets<I>(dim: usize, triplets: I) -> Result<Self, SparseError>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        if dim == 0 {
            return Err(SparseError::EmptyMatrix);
        }
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        for (r, c, v) in triplets {
            if r >= dim || c >= dim {
                return Err(SparseError::IndexOutOfBounds {
                    row: r,
                    col: c,
                    dim,
                });
            }
            let (r, c) = if r >= c { (r, c) } else { (c, r) };
            entries.push((r, c, v));
        }
        entries.extend((0..dim).map(|i| (i, i, 0.0)));
        entries.sort_unstable_by_key(|e| (e.1, e.0));

        let mut col_ptr = vec![0usize; dim + 1];
        let mut row_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                row_idx.push(r);
                values.push(v);
                col_ptr[c + 1] += 1;
                last = Some((r, c));
            }
        }
        for c in 0..dim {
            col_ptr[c + 1] += col_ptr[c];
        }
        Ok(Self {
            dim,
            col_ptr,
            row_idx,
            values,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![1.0; dim])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let dim = d.len();
        Self {
            dim,
            col_ptr: (0..=dim).collect(),
            row_idx: (0..dim).collect(),
            values: d.to_vec(),
        }
    }

    /// Builds a matrix from a dense square array, keeping exact nonzeros of the
    /// lower triangle. Intended for small instances and tests.
    pub fn from_dense(a: &[Vec<f64>]) -> Result<Self, SparseError> {
        let n = a.len();
        let mut t = Vec::new();
        for (i, row) in a.iter().enumerate() {
            if row.len() != n {
                return Err(SparseError::DimensionMismatch {
                    expected: n,
                    found: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate().take(i + 1) {
                if v != 0.0 {
                    t.push((i, j, v));
                }
            }
        }
        Self::from_triplets(n, t)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates stored lower-triangle entries as `(row, col, value)`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim).flat_map(move |c| {
            (self.col_ptr[c]..self.col_ptr[c + 1])
                .map(move |p| (self.row_idx[p], c, self.values[p]))
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let rows = &self.row_idx[self.col_ptr[c]..self.col_ptr[c + 1]];
        match rows.binary_search(&r) {
            Ok(k) => self.values[self.col_ptr[c] + k],
            Err(_) => 0.0,
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|c| self.values[self.col_ptr[c]])
            .collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>, SparseError> {
        if x.len() != self.dim {
            return Err(SparseError::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        let mut y = vec![0.0; self.dim];
        for c in 0..self.dim {
            for p in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[p];
                let v = self.values[p];
                y[r] += v * x[c];
                if r != c {
                    y[c] += v * x[r];
                }
            }
        }
        Ok(y)
    }

    /// Quadratic form `xᵀ M x`.
    pub fn quad_form(&self, x: &[f64]) -> Result<f64, SparseError> {
        let y = self.mul_vec(x)?;
        Ok(y.iter().zip(x).map(|(a, b)| a * b).sum())
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn add(&self, other: &Self) -> Result<Self, SparseError> {
        if other.dim != self.dim {
            return Err(SparseError::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        Self::from_triplets(self.dim, self.iter().chain(other.iter()))
    }

    /// Block-diagonal concatenation.
    pub fn block_diag(blocks: &[&SymSparseMatrix]) -> Self {
        let dim: usize = blocks.iter().map(|b| b.dim).sum();
        let mut t = Vec::new();
        let mut off = 0;
        for b in blocks {
            t.extend(b.iter().map(|(r, c, v)| (r + off, c + off, v)));
            off += b.dim;
        }
        Self::from_triplets(dim, t).expect("block sizes are consistent")
    }

    /// Principal submatrix on the contiguous index range `start..end`.
    pub fn principal_block(&self, start: usize, end: usize) -> Result<Self, SparseError> {
        if start >= end || end > self.dim {
            return Err(SparseError::DimensionMismatch {
                expected: self.dim,
                found: end,
            });
        }
        let t = self
            .iter()
            .filter(|&(r, c, _)| r >= start && r < end && c >= start && c < end)
            .map(|(r, c, v)| (r - start, c - start, v));
        Self::from_triplets(end - start, t)
    }

    /// Full (both triangles) representation as a row-compressed matrix.
    pub fn to_full_csr(&self) -> CsrMatrix {
        let t = self
            .iter()
            .flat_map(|(r, c, v)| {
                let mirror = if r != c { Some((c, r, v)) } else { None };
                std::iter::once((r, c, v)).chain(mirror)
            })
            .collect::<Vec<_>>();
        CsrMatrix::from_triplets(self.dim, self.dim, t).expect("indices in range")
    }

    /// Congruence transform `Tᵀ M T` for a rectangular `T` with `dim` rows.
    pub fn congruence(&self, t: &CsrMatrix) -> Result<Self, SparseError> {
        if t.rows() != self.dim {
            return Err(SparseError::DimensionMismatch {
                expected: self.dim,
                found: t.rows(),
            });
        }
        let mt = self.to_full_csr().matmul(t)?;
        let prod = t.transpose().matmul(&mt)?;
        let n = prod.cols();
        Self::from_triplets(n, prod.iter().filter(|&(r, c, _)| r >= c))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.dim]; self.dim];
        for (r, c, v) in self.iter() {
            d[r][c] = v;
            d[c][r] = v;
        }
        d
    }

    /// Adjacency lists of the off-diagonal sparsity graph.
    pub(crate) fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.dim];
        for (r, c, _) in self.iter() {
            if r != c {
                adj[r].push(c);
                adj[c].push(r);
            }
        }
        adj
    }
}

/// Rectangular sparse matrix in compressed sparse row form.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_triplets<I>(rows: usize, cols: usize, triplets: I) -> Result<Self, SparseError>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        for (r, c, v) in triplets {
            if r >= rows || c >= cols {
                return Err(SparseError::IndexOutOfBounds {
                    row: r,
                    col: c,
                    dim: rows.max(cols),
                });
            }
            entries.push((r, c, v));
        }
        entries.sort_unstable_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Builds from per-row `(col, value)` lists.
    pub fn from_rows(cols: usize, rows: &[Vec<(usize, f64)>]) -> Result<Self, SparseError> {
        let t = rows
            .iter()
            .enumerate()
            .flat_map(|(r, row)| row.iter().map(move |&(c, v)| (r, c, v)));
        Self::from_triplets(rows.len(), cols, t)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1])
                .map(move |p| (r, self.col_idx[p], self.values[p]))
        })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let (cols, vals) = self.row(r);
        cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>, SparseError> {
        if x.len() != self.cols {
            return Err(SparseError::DimensionMismatch {
                expected: self.cols,
                found: x.len(),
            });
        }
        Ok((0..self.rows).map(|r| self.row_dot(r, x)).collect())
    }

    /// `Aᵀ y`.
    pub fn tr_mul_vec(&self, y: &[f64]) -> Result<Vec<f64>, SparseError> {
        if y.len() != self.rows {
            return Err(SparseError::DimensionMismatch {
                expected: self.rows,
                found: y.len(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (r, c, v) in self.iter() {
            out[c] += v * y[r];
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(self.cols, self.rows, self.iter().map(|(r, c, v)| (c, r, v)))
            .expect("indices in range")
    }

    /// Sparse product `self · other`.
    pub fn matmul(&self, other: &CsrMatrix) -> Result<CsrMatrix, SparseError> {
        if self.cols != other.rows {
            return Err(SparseError::DimensionMismatch {
                expected: self.cols,
                found: other.rows,
            });
        }
        let mut acc = vec![0.0; other.cols];
        let mut seen = vec![usize::MAX; other.cols];
        let mut touched = Vec::new();
        let mut t = Vec::new();
        for r in 0..self.rows {
            touched.clear();
            let (cols, vals) = self.row(r);
            for (&k, &a) in cols.iter().zip(vals) {
                let (oc, ov) = other.row(k);
                for (&j, &b) in oc.iter().zip(ov) {
                    if seen[j] != r {
                        seen[j] = r;
                        acc[j] = 0.0;
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            for &j in &touched {
                t.push((r, j, acc[j]));
            }
        }
        CsrMatrix::from_triplets(self.rows, other.cols, t)
    }

    /// `Aᵀ diag(w) A` as a symmetric sparse matrix.
    pub fn at_w_a(&self, w: &[f64]) -> Result<SymSparseMatrix, SparseError> {
        if w.len() != self.rows {
            return Err(SparseError::DimensionMismatch {
                expected: self.rows,
                found: w.len(),
            });
        }
        let mut t = Vec::new();
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for a in 0..cols.len() {
                for b in 0..=a {
                    let (i, j) = if cols[a] >= cols[b] {
                        (cols[a], cols[b])
                    } else {
                        (cols[b], cols[a])
                    };
                    t.push((i, j, w[r] * vals[a] * vals[b]));
                }
            }
        }
        SymSparseMatrix::from_triplets(self.cols, t)
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hstack(&self, other: &CsrMatrix) -> Result<CsrMatrix, SparseError> {
        if self.rows != other.rows {
            return Err(SparseError::DimensionMismatch {
                expected: self.rows,
                found: other.rows,
            });
        }
        let off = self.cols;
        let t = self
            .iter()
            .chain(other.iter().map(|(r, c, v)| (r, c + off, v)));
        CsrMatrix::from_triplets(self.rows, self.cols + other.cols, t)
    }

    /// Rows scaled by `s[r]`.
    pub fn scale_rows(&self, s: &[f64]) -> CsrMatrix {
        let mut out = self.clone();
        for r in 0..self.rows {
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                out.values[p] *= s[r];
            }
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.cols]; self.rows];
        for (r, c, v) in self.iter() {
            d[r][c] = v;
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_are_mirrored_and_summed() {
        let m = SymSparseMatrix::from_triplets(3, [(0, 1, 1.0), (1, 0, 2.0), (2, 2, 5.0)]).unwrap();
        assert_eq!(m.get(1, 0), 3.0);
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.diag(), vec![0.0, 0.0, 5.0]);
        assert_eq!(m.nnz(), 4);
    }

    #[test]
    fn rejects_bad_indices() {
        assert!(matches!(
            SymSparseMatrix::from_triplets(2, [(2, 0, 1.0)]),
            Err(SparseError::IndexOutOfBounds { .. })
        ));
        assert!(matches!(
            SymSparseMatrix::from_triplets(0, []),
            Err(SparseError::EmptyMatrix)
        ));
    }

    #[test]
    fn mul_vec_uses_both_triangles() {
        let m = SymSparseMatrix::from_dense(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        assert_eq!(m.mul_vec(&[1.0, 1.0]).unwrap(), vec![6.0, 5.0]);
        assert_eq!(m.quad_form(&[1.0, 1.0]).unwrap(), 11.0);
    }

    #[test]
    fn at_w_a_matches_dense() {
        let a = CsrMatrix::from_rows(3, &[vec![(0, 1.0), (2, 2.0)], vec![(1, -1.0), (2, 0.5)]])
            .unwrap();
        let w = [2.0, 3.0];
        let m = a.at_w_a(&w).unwrap().to_dense();
        let d = a.to_dense();
        for i in 0..3 {
            for j in 0..3 {
                let expect: f64 = (0..2).map(|r| d[r][i] * w[r] * d[r][j]).sum();
                assert!((m[i][j] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn congruence_matches_dense() {
        let m = SymSparseMatrix::from_dense(&[
            vec![4.0, 1.0, 0.0],
            vec![1.0, 3.0, -1.0],
            vec![0.0, -1.0, 2.0],
        ])
        .unwrap();
        let t = CsrMatrix::from_rows(
            2,
            &[vec![(0, 1.0)], vec![(0, 0.5), (1, 0.5)], vec![(1, 1.0)]],
        )
        .unwrap();
        let c = m.congruence(&t).unwrap().to_dense();
        let md = m.to_dense();
        let td = t.to_dense();
        for i in 0..2 {
            for j in 0..2 {
                let mut s = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        s += td[a][i] * md[a][b] * td[b][j];
                    }
                }
                assert!((c[i][j] - s).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn block_diag_and_principal_block() {
        let a = SymSparseMatrix::diagonal(&[1.0, 2.0]);
        let b = SymSparseMatrix::from_dense(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let m = SymSparseMatrix::block_diag(&[&a, &b]);
        assert_eq!(m.dim(), 4);
        assert_eq!(m.get(3, 2), 2.0);
        assert_eq!(m.get(2, 1), 0.0);
        assert_eq!(m.principal_block(2, 4).unwrap(), b);
    }

    #[test]
    fn csr_products() {
        let a = CsrMatrix::from_rows(2, &[vec![(0, 1.0), (1, 2.0)], vec![(1, 3.0)]]).unwrap();
        assert_eq!(a.mul_vec(&[1.0, 1.0]).unwrap(), vec![3.0, 3.0]);
        assert_eq!(a.tr_mul_vec(&[1.0, 1.0]).unwrap(), vec![1.0, 5.0]);
        let p = a.matmul(&a.transpose()).unwrap().to_dense();
        assert_eq!(p, vec![vec![5.0, 6.0], vec![6.0, 9.0]]);
        let h = a.hstack(&CsrMatrix::identity(2)).unwrap();
        assert_eq!(h.cols(), 4);
        assert_eq!(h.get(1, 3), 1.0);
    }
}
