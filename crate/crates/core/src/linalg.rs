//! Minimum-norm least squares and orthogonal projection.
//!
//! Both routines go through a thin SVD. Singular values below
//! [`RANK_RTOL`] times the largest one are treated as zero, which makes
//! duplicated or collinear columns harmless: the solution is the
//! Moore–Penrose one.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};

/// Relative cutoff on singular values when deciding numerical rank.
pub const RANK_RTOL: f64 = 1e-10;

/// Minimum-norm solution of `min ‖b − A c‖²`.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    least_squares_rtol(a, b, RANK_RTOL)
}

/// [`least_squares`] with a caller-chosen relative singular-value cutoff.
pub fn least_squares_rtol(a: &DMatrix<f64>, b: &DVector<f64>, rtol: f64) -> Result<DVector<f64>> {
    if !(0.0..1.0).contains(&rtol) {
        return invalid(format!("rank tolerance must lie in [0, 1), got {rtol}"));
    }
    if a.nrows() == 0 || a.ncols() == 0 {
        return invalid("least squares needs a non-empty design");
    }
    if a.nrows() != b.len() {
        return invalid(format!(
            "least squares: design has {} rows but rhs has {}",
            a.nrows(),
            b.len()
        ));
    }
    let svd = a.clone().svd(true, true);
    let (u, v_t) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
    let cutoff = rtol * max_value(svd.singular_values.as_slice());
    let mut coef = DVector::zeros(a.ncols());
    for (j, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            let w = u.column(j).dot(b) / s;
            coef.axpy(w, &v_t.row(j).transpose(), 1.0);
        }
    }
    Ok(coef)
}

/// `P_H v`, the orthogonal projection of `v` onto the column span of `h`.
///
/// Never materializes the n × n projection matrix.
pub fn project(h: &DMatrix<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    let coef = least_squares(h, v)?;
    Ok(h * coef)
}

fn max_value(sv: &[f64]) -> f64 {
    sv.iter().cloned().fold(0.0_f64, f64::max)
}

/// Orthonormal basis `Q` (n × r) of a matrix's numerical column space.
///
/// Projection onto span(H) is `Q Qᵀ`, so coordinates `Qᵀ v` carry everything
/// needed for projected inner products: `⟨P v, P w⟩ = (Qᵀv)·(Qᵀw)`.
#[derive(Debug, Clone)]
pub struct OrthoBasis {
    q: DMatrix<f64>,
}

impl OrthoBasis {
    pub fn new(h: &DMatrix<f64>) -> Result<Self> {
        if h.nrows() == 0 || h.ncols() == 0 {
            return invalid("cannot build a basis of an empty matrix");
        }
        let svd = h.clone().svd(true, false);
        let u = svd.u.as_ref().unwrap();
        let cutoff = RANK_RTOL * max_value(svd.singular_values.as_slice());
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&j| svd.singular_values[j] > cutoff)
            .collect();
        Ok(OrthoBasis {
            q: u.select_columns(&keep),
        })
    }

    pub fn rank(&self) -> usize {
        self.q.ncols()
    }

    pub fn nrows(&self) -> usize {
        self.q.nrows()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// `Qᵀ v`.
    pub fn coords(&self, v: &DVector<f64>) -> DVector<f64> {
        self.q.tr_mul(v)
    }

    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.q * self.coords(v)
    }
}
