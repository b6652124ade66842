//! Sparse symmetric linear algebra for the pose-graph normal equations:
//! triplet assembly, compressed sparse columns, and a root-free sparse
//! Cholesky (LDL^T) factorization with elimination-tree symbolic analysis.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Unordered (row, col, value) entries; duplicates sum when compressed.
#[derive(Debug, Clone)]
pub struct TripletMatrix {
    pub n: usize,
    entries: Vec<(u32, u32, f64)>,
}

impl TripletMatrix {
    pub fn new(n: usize) -> Self {
        TripletMatrix {
            n,
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n && col < self.n);
        if value != 0.0 {
            self.entries.push((row as u32, col as u32, value));
        }
    }

    pub fn to_csc(&self) -> CscMatrix {
        let mut sorted = self.entries.clone();
        sorted.sort_by_key(|&(r, c, _)| (c, r));
        let mut col_ptr = vec![0usize; self.n + 1];
        let mut row_idx: Vec<usize> = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(u32, u32)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
            } else {
                row_idx.push(r as usize);
                values.push(v);
                col_ptr[c as usize + 1] += 1;
                last = Some((r, c));
            }
        }
        for c in 0..self.n {
            col_ptr[c + 1] += col_ptr[c];
        }
        CscMatrix {
            n: self.n,
            col_ptr,
            row_idx,
            values,
        }
    }
}

/// Compressed sparse column matrix (square, values in column-major order,
/// rows ascending within each column).
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CscMatrix {
    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn col(&self, c: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.col_ptr[c]..self.col_ptr[c + 1]).map(move |p| (self.row_idx[p], self.values[p]))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for c in 0..self.n {
            let xc = x[c];
            if xc == 0.0 {
                continue;
            }
            for (r, v) in self.col(c) {
                y[r] += v * xc;
            }
        }
        y
    }
}

/// Root-free sparse Cholesky `A = L D L^T` with unit-diagonal `L`, natural
/// ordering. The symbolic pass builds the elimination tree and per-column
/// counts; the numeric pass is the classic up-looking row algorithm.
#[derive(Debug)]
pub struct SparseLdl {
    n: usize,
    l_col_ptr: Vec<usize>,
    l_row_idx: Vec<usize>,
    l_values: Vec<f64>,
    d: Vec<f64>,
}

impl SparseLdl {
    /// Factor a symmetric positive definite matrix given as a full symmetric
    /// CSC (both triangles stored; only `row <= col` entries are read).
    pub fn factor(a: &CscMatrix) -> Result<SparseLdl, SparseError> {
        let n = a.n;
        let mut parent = vec![usize::MAX; n];
        let mut flag = vec![usize::MAX; n];
        let mut l_nnz = vec![0usize; n];

        // Symbolic: elimination tree and column counts via row subtrees.
        for k in 0..n {
            flag[k] = k;
            for (i, _) in a.col(k) {
                if i >= k {
                    continue;
                }
                let mut j = i;
                while flag[j] != k {
                    if parent[j] == usize::MAX {
                        parent[j] = k;
                    }
                    l_nnz[j] += 1;
                    flag[j] = k;
                    j = parent[j];
                }
            }
        }

        let mut l_col_ptr = vec![0usize; n + 1];
        for j in 0..n {
            l_col_ptr[j + 1] = l_col_ptr[j] + l_nnz[j];
        }
        let total = l_col_ptr[n];
        let mut l_row_idx = vec![0usize; total];
        let mut l_values = vec![0.0f64; total];
        let mut d = vec![0.0f64; n];
        let mut next = l_col_ptr.clone();
        let mut y = vec![0.0f64; n];
        let mut pattern = vec![0usize; n];
        let mut flag = vec![usize::MAX; n];

        for k in 0..n {
            // Scatter column k of A (upper part) into the dense work vector.
            let mut top = n;
            flag[k] = k;
            y[k] = 0.0;
            for (i, v) in a.col(k) {
                if i > k {
                    continue;
                }
                y[i] += v;
                if i == k {
                    continue;
                }
                // Walk up the elimination tree collecting the row pattern in
                // reverse topological order.
                let mut len = 0usize;
                let mut j = i;
                let mut stack = [0usize; 64];
                let mut overflow: Vec<usize> = Vec::new();
                while flag[j] != k {
                    if len < stack.len() {
                        stack[len] = j;
                    } else {
                        overflow.push(j);
                    }
                    len += 1;
                    flag[j] = k;
                    j = parent[j];
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    pattern[top] = if len < stack.len() {
                        stack[len]
                    } else {
                        overflow[len - stack.len()]
                    };
                }
            }
            let mut dk = y[k];
            y[k] = 0.0;
            for &j in &pattern[top..n] {
                let yj = y[j];
                y[j] = 0.0;
                // Apply pending updates from column j.
                for p in l_col_ptr[j]..next[j] {
                    y[l_row_idx[p]] -= l_values[p] * yj;
                }
                let ljk = yj / d[j];
                dk -= ljk * yj;
                l_row_idx[next[j]] = k;
                l_values[next[j]] = ljk;
                next[j] += 1;
            }
            if !(dk > 0.0) || !dk.is_finite() {
                return Err(SparseError::NotPositiveDefinite { column: k });
            }
            d[k] = dk;
        }

        Ok(SparseLdl {
            n,
            l_col_ptr,
            l_row_idx,
            l_values,
            d,
        })
    }

    /// Solve `A x = b` via forward substitution, diagonal scaling, and
    /// backward substitution.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        debug_assert_eq!(b.len(), self.n);
        let mut x = b.to_vec();
        for j in 0..self.n {
            let xj = x[j];
            if xj != 0.0 {
                for p in self.l_col_ptr[j]..self.l_col_ptr[j + 1] {
                    x[self.l_row_idx[p]] -= self.l_values[p] * xj;
                }
            }
        }
        for j in 0..self.n {
            x[j] /= self.d[j];
        }
        for j in (0..self.n).rev() {
            let mut xj = x[j];
            for p in self.l_col_ptr[j]..self.l_col_ptr[j + 1] {
                xj -= self.l_values[p] * x[self.l_row_idx[p]];
            }
            x[j] = xj;
        }
        x
    }

    pub fn fill_in(&self) -> usize {
        self.l_row_idx.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SparseError {
    NotPositiveDefinite { column: usize },
}

impl fmt::Display for SparseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SparseError::NotPositiveDefinite { column } => {
                write!(f, "matrix is not positive definite (pivot at column {column})")
            }
        }
    }
}

impl core::error::Error for SparseError {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Pcg32;

    /// Dense Cholesky solve used as the oracle.
    fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut l = vec![vec![0.0; n]; n];
        for j in 0..n {
            let mut diag = a[j][j];
            for k in 0..j {
                diag -= l[j][k] * l[j][k];
            }
            assert!(diag > 0.0, "oracle matrix not SPD");
            l[j][j] = diag.sqrt();
            for i in (j + 1)..n {
                let mut v = a[i][j];
                for k in 0..j {
                    v -= l[i][k] * l[j][k];
                }
                l[i][j] = v / l[j][j];
            }
        }
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut v = b[i];
            for k in 0..i {
                v -= l[i][k] * y[k];
            }
            y[i] = v / l[i][i];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut v = y[i];
            for k in (i + 1)..n {
                v -= l[k][i] * x[k];
            }
            x[i] = v / l[i][i];
        }
        x
    }

    fn random_spd(n: usize, density: f64, rng: &mut Pcg32) -> Vec<Vec<f64>> {
        // B^T B + n I with a sparse random B.
        let mut b = vec![vec![0.0; n]; n];
        for row in b.iter_mut() {
            for v in row.iter_mut() {
                if rng.chance(density) {
                    *v = rng.uniform(-1.0, 1.0);
                }
            }
        }
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for row in &b {
                    acc += row[i] * row[j];
                }
                a[i][j] = acc;
            }
            a[i][i] += n as f64;
        }
        a
    }

    fn to_csc(a: &[Vec<f64>]) -> CscMatrix {
        let n = a.len();
        let mut t = TripletMatrix::new(n);
        for (i, row) in a.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    t.add(i, j, v);
                }
            }
        }
        t.to_csc()
    }

    #[test]
    fn triplet_to_csc_accumulates_duplicates() {
        let mut t = TripletMatrix::new(3);
        t.add(0, 0, 1.0);
        t.add(0, 0, 2.0);
        t.add(2, 1, 5.0);
        t.add(1, 2, -1.0);
        let csc = t.to_csc();
        assert_eq!(csc.nnz(), 3);
        let x = csc.mul_vec(&[1.0, 1.0, 1.0]);
        assert_eq!(x, vec![3.0, -1.0, 5.0]);
    }

    #[test]
    fn ldl_matches_dense_oracle_on_random_spd() {
        let mut rng = Pcg32::new(42, 11);
        for trial in 0..20 {
            let n = 5 + rng.below(40) as usize;
            let a = random_spd(n, 0.15, &mut rng);
            let b: Vec<f64> = (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let csc = to_csc(&a);
            let ldl = SparseLdl::factor(&csc).unwrap();
            let x = ldl.solve(&b);
            let oracle = dense_solve(&a, &b);
            for (xs, xd) in x.iter().zip(oracle.iter()) {
                assert!((xs - xd).abs() < 1e-8, "trial {trial}: {xs} vs {xd}");
            }
            // Residual check.
            let r = csc.mul_vec(&x);
            for (ri, bi) in r.iter().zip(b.iter()) {
                assert!((ri - bi).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn block_tridiagonal_chain_plus_off_band() {
        // Pose-graph-shaped system: 3x3 blocks on a chain plus one distant
        // coupling block, as a loop closure would create.
        let n = 60;
        let mut a = vec![vec![0.0; n]; n];
        for blk in 0..(n / 3) {
            for i in 0..3 {
                a[blk * 3 + i][blk * 3 + i] = 4.0;
            }
            if blk + 1 < n / 3 {
                for i in 0..3 {
                    a[blk * 3 + i][(blk + 1) * 3 + i] = -1.0;
                    a[(blk + 1) * 3 + i][blk * 3 + i] = -1.0;
                }
            }
        }
        for i in 0..3 {
            a[3 + i][n - 3 + i] = -0.5;
            a[n - 3 + i][3 + i] = -0.5;
        }
        let b: Vec<f64> = (0..n).map(|k| (k as f64 * 0.37).sin()).collect();
        let ldl = SparseLdl::factor(&to_csc(&a)).unwrap();
        let x = ldl.solve(&b);
        let oracle = dense_solve(&a, &b);
        for (xs, xd) in x.iter().zip(oracle.iter()) {
            assert!((xs - xd).abs() < 1e-9);
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = vec![
            vec![1.0, 2.0, 0.0],
            vec![2.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        match SparseLdl::factor(&to_csc(&a)) {
            Err(SparseError::NotPositiveDefinite { column }) => assert_eq!(column, 1),
            other => panic!("expected failure, got {other:?}"),
        }
    }
}
