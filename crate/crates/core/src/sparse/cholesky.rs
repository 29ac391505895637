use rand::Rng;
use rand_distr::StandardNormal;

use super::{Ordering, SparseError, SymSparseMatrix};

/// Sparse lower-triangular Cholesky factor `P M Pᵀ = L Lᵀ`.
///
/// Columns of `L` store the diagonal first followed by strictly increasing
/// row indices.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    dim: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
    /// `perm[new] = old`.
    perm: Vec<usize>,
}

/// Factorizes with the natural ordering.
pub fn factorize(m: &SymSparseMatrix) -> Result<CholeskyFactor, SparseError> {
    factorize_with(m, Ordering::Natural)
}

pub fn factorize_with(
    m: &SymSparseMatrix,
    ordering: Ordering,
) -> Result<CholeskyFactor, SparseError> {
    let n = m.dim();
    let perm = ordering.permutation(m);
    let mut pinv = vec![0usize; n];
    for (new, &old) in perm.iter().enumerate() {
        pinv[old] = new;
    }
    let (cp, ci, cx) = permuted_upper(m, &pinv);
    let parent = etree(n, &cp, &ci);

    let mut marker = vec![usize::MAX; n];
    let mut stack = vec![0usize; n];
    let mut work = vec![0usize; n];
    let mut counts = vec![1usize; n];
    for k in 0..n {
        let top = ereach(k, &cp, &ci, &parent, &mut marker, &mut stack, &mut work);
        for &j in &stack[top..] {
            counts[j] += 1;
        }
    }
    let mut lp = vec![0usize; n + 1];
    for j in 0..n {
        lp[j + 1] = lp[j] + counts[j];
    }
    let nnz = lp[n];
    let mut li = vec![0usize; nnz];
    let mut lx = vec![0.0; nnz];
    let mut next: Vec<usize> = lp[..n].to_vec();
    let mut x = vec![0.0; n];
    marker.iter_mut().for_each(|m| *m = usize::MAX);

    for k in 0..n {
        let top = ereach(k, &cp, &ci, &parent, &mut marker, &mut stack, &mut work);
        x[k] = 0.0;
        for p in cp[k]..cp[k + 1] {
            x[ci[p]] = cx[p];
        }
        let mut d = x[k];
        let tol = 1e-12 * d.abs();
        x[k] = 0.0;
        for &i in &stack[top..] {
            let lki = x[i] / lx[lp[i]];
            x[i] = 0.0;
            for p in lp[i] + 1..next[i] {
                x[li[p]] -= lx[p] * lki;
            }
            d -= lki * lki;
            let p = next[i];
            next[i] += 1;
            li[p] = k;
            lx[p] = lki;
        }
        if !(d > tol) {
            return Err(SparseError::NotPositiveDefinite {
                column: perm[k],
                pivot: d,
            });
        }
        let p = next[k];
        next[k] += 1;
        li[p] = k;
        lx[p] = d.sqrt();
    }

    Ok(CholeskyFactor {
        dim: n,
        col_ptr: lp,
        row_idx: li,
        values: lx,
        perm,
    })
}

/// Upper triangle of `P M Pᵀ` in CSC form.
fn permuted_upper(m: &SymSparseMatrix, pinv: &[usize]) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
    let n = m.dim();
    let mut cnt = vec![0usize; n + 1];
    let mapped: Vec<(usize, usize, f64)> = m
        .iter()
        .map(|(r, c, v)| {
            let (i, j) = (pinv[r], pinv[c]);
            (i.min(j), i.max(j), v)
        })
        .collect();
    for &(_, col, _) in &mapped {
        cnt[col + 1] += 1;
    }
    for j in 0..n {
        cnt[j + 1] += cnt[j];
    }
    let mut next = cnt[..n].to_vec();
    let mut ci = vec![0usize; mapped.len()];
    let mut cx = vec![0.0; mapped.len()];
    for (row, col, v) in mapped {
        let p = next[col];
        next[col] += 1;
        ci[p] = row;
        cx[p] = v;
    }
    (cnt, ci, cx)
}

fn etree(n: usize, cp: &[usize], ci: &[usize]) -> Vec<usize> {
    let mut parent = vec![usize::MAX; n];
    let mut ancestor = vec![usize::MAX; n];
    for k in 0..n {
        for &row in &ci[cp[k]..cp[k + 1]] {
            let mut i = row;
            while i != usize::MAX && i < k {
                let inext = ancestor[i];
                ancestor[i] = k;
                if inext == usize::MAX {
                    parent[i] = k;
                }
                i = inext;
            }
        }
    }
    parent
}

/// Nonzero pattern of row `k` of `L`, written to `stack[top..]` in
/// topological order.
fn ereach(
    k: usize,
    cp: &[usize],
    ci: &[usize],
    parent: &[usize],
    marker: &mut [usize],
    stack: &mut [usize],
    work: &mut [usize],
) -> usize {
    let n = marker.len();
    let mut top = n;
    marker[k] = k;
    for &row in &ci[cp[k]..cp[k + 1]] {
        let mut i = row;
        if i > k {
            continue;
        }
        let mut len = 0;
        while marker[i] != k {
            work[len] = i;
            len += 1;
            marker[i] = k;
            i = parent[i];
        }
        while len > 0 {
            len -= 1;
            top -= 1;
            stack[top] = work[len];
        }
    }
    top
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Entries of `L` as `(row, col, value)` in the permuted index space.
    pub fn factor_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim).flat_map(move |c| {
            (self.col_ptr[c]..self.col_ptr[c + 1])
                .map(move |p| (self.row_idx[p], c, self.values[p]))
        })
    }

    fn check_len(&self, len: usize) -> Result<(), SparseError> {
        if len != self.dim {
            return Err(SparseError::DimensionMismatch {
                expected: self.dim,
                found: len,
            });
        }
        Ok(())
    }

    /// In-place `L y = b`.
    fn lsolve(&self, x: &mut [f64]) {
        for j in 0..self.dim {
            let p0 = self.col_ptr[j];
            x[j] /= self.values[p0];
            let xj = x[j];
            for p in p0 + 1..self.col_ptr[j + 1] {
                x[self.row_idx[p]] -= self.values[p] * xj;
            }
        }
    }

    /// In-place `Lᵀ y = b`.
    fn ltsolve(&self, x: &mut [f64]) {
        for j in (0..self.dim).rev() {
            let p0 = self.col_ptr[j];
            let mut s = x[j];
            for p in p0 + 1..self.col_ptr[j + 1] {
                s -= self.values[p] * x[self.row_idx[p]];
            }
            x[j] = s / self.values[p0];
        }
    }

    /// Solves `M x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, SparseError> {
        self.check_len(b.len())?;
        let mut y: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        self.lsolve(&mut y);
        self.ltsolve(&mut y);
        let mut x = vec![0.0; self.dim];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        Ok(x)
    }

    /// `log det M = 2 Σ log L_jj`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim)
            .map(|j| self.values[self.col_ptr[j]].ln())
            .sum::<f64>()
    }

    /// Maps a standard-normal vector `z` to `Pᵀ L⁻ᵀ z`, a draw from `N(0, M⁻¹)`.
    pub fn whiten_inverse(&self, z: &[f64]) -> Result<Vec<f64>, SparseError> {
        self.check_len(z.len())?;
        let mut y = z.to_vec();
        self.ltsolve(&mut y);
        let mut x = vec![0.0; self.dim];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        Ok(x)
    }

    /// Draws from `N(mean, M⁻¹)` where `M` is the factorized precision.
    pub fn sample_gaussian<R: Rng + ?Sized>(
        &self,
        mean: &[f64],
        rng: &mut R,
    ) -> Result<Vec<f64>, SparseError> {
        self.check_len(mean.len())?;
        let z: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
        let mut x = self.whiten_inverse(&z)?;
        x.iter_mut().zip(mean).for_each(|(xi, mi)| *xi += mi);
        Ok(x)
    }

    /// Column `j` of `M⁻¹`.
    pub fn inverse_column(&self, j: usize) -> Result<Vec<f64>, SparseError> {
        if j >= self.dim {
            return Err(SparseError::IndexOutOfBounds {
                row: j,
                col: j,
                dim: self.dim,
            });
        }
        let mut e = vec![0.0; self.dim];
        e[j] = 1.0;
        self.solve(&e)
    }

    /// Diagonal of `M⁻¹` by selected inversion on the pattern of `L`.
    pub fn inverse_diagonal(&self) -> Vec<f64> {
        let n = self.dim;
        let mut sigma = vec![0.0; self.values.len()];
        let find = |row: usize, col: usize| -> usize {
            let span = self.col_ptr[col] + 1..self.col_ptr[col + 1];
            let k = self.row_idx[span.clone()]
                .binary_search(&row)
                .expect("selected inverse pattern is closed under fill");
            span.start + k
        };
        for j in (0..n).rev() {
            let p0 = self.col_ptr[j];
            let p1 = self.col_ptr[j + 1];
            let ljj = self.values[p0];
            for pi in (p0 + 1..p1).rev() {
                let i = self.row_idx[pi];
                let mut s = 0.0;
                for pk in p0 + 1..p1 {
                    let k = self.row_idx[pk];
                    let sik = if k == i {
                        sigma[self.col_ptr[i]]
                    } else if k > i {
                        sigma[find(k, i)]
                    } else {
                        sigma[find(i, k)]
                    };
                    s += self.values[pk] * sik;
                }
                sigma[pi] = -s / ljj;
            }
            let mut s = 0.0;
            for pk in p0 + 1..p1 {
                s += self.values[pk] * sigma[pk];
            }
            sigma[p0] = 1.0 / (ljj * ljj) - s / ljj;
        }
        let mut out = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = sigma[self.col_ptr[new]];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m2() -> SymSparseMatrix {
        SymSparseMatrix::from_dense(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap()
    }

    fn dense_factor(f: &CholeskyFactor) -> Vec<Vec<f64>> {
        let mut l = vec![vec![0.0; f.dim()]; f.dim()];
        for (r, c, v) in f.factor_entries() {
            l[r][c] = v;
        }
        l
    }

    #[test]
    fn identity_factor_is_identity() {
        let f = factorize(&SymSparseMatrix::identity(2)).unwrap();
        assert_eq!(dense_factor(&f), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(f.solve(&[3.0, -1.0]).unwrap(), vec![3.0, -1.0]);
        assert_eq!(f.log_det(), 0.0);
    }

    #[test]
    fn two_by_two_factor() {
        let f = factorize(&m2()).unwrap();
        let l = dense_factor(&f);
        assert!((l[0][0] - 2.0).abs() < 1e-15);
        assert!((l[1][0] - 1.0).abs() < 1e-15);
        assert!((l[1][1] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(l[0][1], 0.0);
    }

    #[test]
    fn two_by_two_solve_and_log_det() {
        let f = factorize(&m2()).unwrap();
        let x = f.solve(&[1.0, 0.0]).unwrap();
        assert!((x[0] - 0.375).abs() < 1e-14);
        assert!((x[1] + 0.25).abs() < 1e-14);
        assert!((f.log_det() - 8f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn diagonal_log_det() {
        let f = factorize(&SymSparseMatrix::diagonal(&[2.5, 7.0])).unwrap();
        assert!((f.log_det() - (2.5f64.ln() + 7f64.ln())).abs() < 1e-14);
    }

    #[test]
    fn indefinite_is_rejected() {
        let m = SymSparseMatrix::from_dense(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(
            factorize(&m),
            Err(SparseError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn wrong_length_rhs() {
        let f = factorize(&m2()).unwrap();
        assert!(matches!(
            f.solve(&[1.0]),
            Err(SparseError::DimensionMismatch { .. })
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(f.sample_gaussian(&[0.0; 3], &mut rng).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let f = factorize(&m2()).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..5)
                .map(|_| f.sample_gaussian(&[1.0, 2.0], &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    #[test]
    fn identity_sample_mean() {
        let f = factorize(&SymSparseMatrix::identity(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mut sum = [0.0; 3];
        for _ in 0..n {
            let x = f.sample_gaussian(&[0.0; 3], &mut rng).unwrap();
            for i in 0..3 {
                sum[i] += x[i];
            }
        }
        for s in sum {
            assert!((s / n as f64).abs() < 0.02);
        }
    }

    #[test]
    fn diag4_sample_variance() {
        let f = factorize(&SymSparseMatrix::diagonal(&[4.0])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| f.sample_gaussian(&[0.0], &mut rng).unwrap()[0])
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 0.25).abs() < 0.05 * 0.25);
    }

    #[test]
    fn selected_inverse_matches_columns() {
        let n = 30;
        let mut t: Vec<_> = (0..n).map(|i| (i, i, 4.0 + i as f64 * 0.1)).collect();
        t.extend((1..n).map(|i| (i, i - 1, -1.0)));
        t.extend((5..n).map(|i| (i, i - 5, 0.5)));
        t.extend((0..n - 1).map(|i| (n - 1, i, 0.05)));
        let m = SymSparseMatrix::from_triplets(n, t).unwrap();
        for ord in [Ordering::Natural, Ordering::Rcm] {
            let f = factorize_with(&m, ord).unwrap();
            let d = f.inverse_diagonal();
            for (j, dj) in d.iter().enumerate() {
                let col = f.inverse_column(j).unwrap();
                assert!((col[j] - dj).abs() < 1e-12, "{ord:?} {j}");
            }
        }
    }
}
