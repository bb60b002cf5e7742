//! Data containers and fold partitioning.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use crate::error::{invalid, Result};
use crate::rng::RngSeed;

/// Outcome `y`, regressors `x` (n × d_x) and instruments `z` (n × d_z).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    x: DMatrix<f64>,
    z: DMatrix<f64>,
}

impl Dataset {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>, z: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return invalid("dataset must have at least one observation");
        }
        if x.nrows() != n || z.nrows() != n {
            return invalid(format!(
                "row mismatch: y has {n}, x has {}, z has {}",
                x.nrows(),
                z.nrows()
            ));
        }
        if x.ncols() == 0 || z.ncols() == 0 {
            return invalid("x and z need at least one column each");
        }
        let finite = |s: &[f64]| s.iter().all(|v| v.is_finite());
        if !finite(y.as_slice()) || !finite(x.as_slice()) || !finite(z.as_slice()) {
            return invalid("dataset contains non-finite entries");
        }
        Ok(Dataset { y, x, z })
    }

    /// Builds a dataset from row-major slices, mostly for tests and examples.
    pub fn from_rows(y: &[f64], x: &[Vec<f64>], z: &[Vec<f64>]) -> Result<Self> {
        let to_matrix = |rows: &[Vec<f64>], name: &str| -> Result<DMatrix<f64>> {
            let cols = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != cols) {
                return invalid(format!("ragged rows in {name}"));
            }
            Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
        };
        Dataset::new(
            DVector::from_column_slice(y),
            to_matrix(x, "x")?,
            to_matrix(z, "z")?,
        )
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn dx(&self) -> usize {
        self.x.ncols()
    }

    pub fn dz(&self) -> usize {
        self.z.ncols()
    }

    /// Rows `idx` in the given order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            y: DVector::from_fn(idx.len(), |i, _| self.y[idx[i]]),
            x: self.x.select_rows(idx),
            z: self.z.select_rows(idx),
        }
    }

    /// Concatenates `other` below `self`.
    pub fn stack(&self, other: &Dataset) -> Result<Dataset> {
        if self.dx() != other.dx() || self.dz() != other.dz() {
            return invalid("cannot stack datasets with different column counts");
        }
        let n = self.n() + other.n();
        let (a, b) = (self.n(), other);
        Ok(Dataset {
            y: DVector::from_fn(n, |i, _| if i < a { self.y[i] } else { b.y[i - a] }),
            x: DMatrix::from_fn(n, self.dx(), |i, j| {
                if i < a {
                    self.x[(i, j)]
                } else {
                    b.x[(i - a, j)]
                }
            }),
            z: DMatrix::from_fn(n, self.dz(), |i, j| {
                if i < a {
                    self.z[(i, j)]
                } else {
                    b.z[(i - a, j)]
                }
            }),
        })
    }
}

/// Assignment of each observation to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    fold_id: Vec<usize>,
    k: usize,
}

impl FoldAssignment {
    /// Wraps an explicit labelling; every fold in `0..k` must be non-empty.
    pub fn from_labels(fold_id: Vec<usize>, k: usize) -> Result<Self> {
        if k < 2 {
            return invalid(format!("fold count must be at least 2, got {k}"));
        }
        let mut seen = vec![0usize; k];
        for &f in &fold_id {
            if f >= k {
                return invalid(format!("fold label {f} out of range for k = {k}"));
            }
            seen[f] += 1;
        }
        if seen.contains(&0) {
            return invalid("every fold must be non-empty");
        }
        Ok(FoldAssignment { fold_id, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn labels(&self) -> &[usize] {
        &self.fold_id
    }

    /// Observation indices in fold `fold`, ascending.
    pub fn indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_id.len()).filter(|&i| self.fold_id[i] == fold).collect()
    }

    /// Observation indices outside fold `fold`, ascending.
    pub fn complement(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_id.len()).filter(|&i| self.fold_id[i] != fold).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.fold_id {
            s[f] += 1;
        }
        s
    }
}

/// Random K-fold split of `n` observations.
///
/// A seeded permutation is cut into consecutive chunks; the first `n mod k`
/// folds receive one extra observation so no data is dropped.
pub fn partition(n: usize, k: usize, seed: RngSeed) -> Result<FoldAssignment> {
    if k < 2 || k > n {
        return invalid(format!("need 2 <= k <= n, got k = {k}, n = {n}"));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed.rng());
    let (base, extra) = (n / k, n % k);
    let mut fold_id = vec![0; n];
    let mut pos = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &i in &perm[pos..pos + size] {
            fold_id[i] = fold;
        }
        pos += size;
    }
    Ok(FoldAssignment { fold_id, k })
}
