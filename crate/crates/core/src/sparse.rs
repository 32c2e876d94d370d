//! Sparse symmetric positive-definite systems assembled from triplets and
//! solved by a direct Cholesky factorization.

use crate::error::{Error, Result};
use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Llt;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};

/// Accumulates `(row, col, value)` entries of a symmetric matrix; duplicates
/// are summed. Only the lower triangle needs to be supplied.
#[derive(Debug, Clone)]
pub struct SymmetricBuilder {
    n: usize,
    entries: Vec<Triplet<usize, usize, f64>>,
}

impl SymmetricBuilder {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            entries: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Adds `value` at `(r, c)`; entries above the diagonal are mirrored below.
    pub fn add(&mut self, r: usize, c: usize, value: f64) {
        let (r, c) = if r >= c { (r, c) } else { (c, r) };
        self.entries.push(Triplet::new(r, c, value));
    }

    /// Adds `w * a a^T` for a sparse vector `a` given as `(index, value)` pairs.
    pub fn add_outer(&mut self, a: &[(usize, f64)], w: f64) {
        for (i, &(r, x)) in a.iter().enumerate() {
            self.add(r, r, w * x * x);
            for &(c, y) in &a[..i] {
                // A repeated index lands on the diagonal and needs both halves.
                let k = if r == c { 2.0 } else { 1.0 };
                self.add(r, c, k * w * x * y);
            }
        }
    }

    pub fn factor(self) -> Result<Cholesky> {
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(self.n, self.n, &self.entries)
            .map_err(|e| Error::SingularSystem(format!("matrix assembly failed: {e:?}")))?;
        let llt = mat
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::SingularSystem(format!("cholesky failed: {e:?}")))?;
        Ok(Cholesky { n: self.n, llt })
    }
}

/// A factored SPD matrix.
pub struct Cholesky {
    n: usize,
    llt: Llt<usize, f64>,
}

impl std::fmt::Debug for Cholesky {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Cholesky").field("n", &self.n).finish()
    }
}

impl Cholesky {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves for every column of `rhs` (column-major, `n` rows each).
    pub fn solve_columns(&self, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if let Some(bad) = rhs.iter().find(|c| c.len() != self.n) {
            return Err(Error::LengthMismatch {
                expected: self.n,
                got: bad.len(),
            });
        }
        let b = Mat::from_fn(self.n, rhs.len(), |i, j| rhs[j][i]);
        let x = self.llt.solve(&b);
        let out: Vec<Vec<f64>> = (0..rhs.len())
            .map(|j| (0..self.n).map(|i| x[(i, j)]).collect())
            .collect();
        if out.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem("non-finite solution".into()));
        }
        Ok(out)
    }
}
