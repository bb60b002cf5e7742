//! Polynomial sieve bases with column standardization.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::linalg::least_squares;

/// Monomials of total degree ≤ `degree` in `d` variables, each involving at
/// most `interaction` distinct variables.
///
/// Columns are ordered by total degree, then lexicographically by the sorted
/// variable multiset: for two variables and degree 2 this is
/// `1, x1, x2, x1², x1·x2, x2²`. The intercept is always column 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolynomialBasis {
    d: usize,
    degree: usize,
    interaction: usize,
    terms: Vec<Vec<usize>>,
}

impl PolynomialBasis {
    pub fn new(d: usize, degree: usize, interaction: usize) -> Result<Self> {
        if d == 0 {
            return invalid("polynomial basis needs at least one variable");
        }
        if degree == 0 || interaction == 0 {
            return invalid("polynomial degree and interaction order must be at least 1");
        }
        let mut terms = vec![Vec::new()];
        for total in 1..=degree {
            let mut combo = vec![0usize; total];
            loop {
                if distinct(&combo) <= interaction {
                    terms.push(combo.clone());
                }
                // next non-decreasing sequence over 0..d
                let Some(pos) = (0..total).rev().find(|&p| combo[p] + 1 < d) else {
                    break;
                };
                let v = combo[pos] + 1;
                for c in &mut combo[pos..] {
                    *c = v;
                }
            }
        }
        Ok(PolynomialBasis {
            d,
            degree,
            interaction,
            terms,
        })
    }

    /// Full total-degree basis.
    pub fn full(d: usize, degree: usize) -> Result<Self> {
        Self::new(d, degree, degree)
    }

    pub fn ncols(&self) -> usize {
        self.terms.len()
    }

    pub fn nvars(&self) -> usize {
        self.d
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn interaction(&self) -> usize {
        self.interaction
    }

    /// Variable indices (with repetition) of each column's monomial.
    pub fn terms(&self) -> &[Vec<usize>] {
        &self.terms
    }

    /// Raw monomial design, one row per row of `x`.
    pub fn evaluate(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.d {
            return invalid(format!(
                "polynomial basis built for {} variables, got {}",
                self.d,
                x.ncols()
            ));
        }
        Ok(DMatrix::from_fn(x.nrows(), self.terms.len(), |i, j| {
            self.terms[j].iter().map(|&v| x[(i, v)]).product()
        }))
    }
}

fn distinct(combo: &[usize]) -> usize {
    // combo is sorted
    combo.windows(2).filter(|w| w[0] != w[1]).count() + usize::from(!combo.is_empty())
}

/// Training-set design `basis(x)`, rejecting designs wider than the sample.
pub fn polynomial_basis(x: &DMatrix<f64>, degree: usize, interaction: usize) -> Result<DMatrix<f64>> {
    let basis = PolynomialBasis::new(x.ncols(), degree, interaction)?;
    if basis.ncols() > x.nrows() {
        return invalid(format!(
            "polynomial design has {} columns but only {} rows",
            basis.ncols(),
            x.nrows()
        ));
    }
    basis.evaluate(x)
}

/// Per-column centering and scaling learned on a training design.
///
/// Column 0 (the intercept) and constant columns are left untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnScaling {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl ColumnScaling {
    pub fn fit(design: &DMatrix<f64>) -> Self {
        let n = design.nrows() as f64;
        let mut mean = vec![0.0; design.ncols()];
        let mut scale = vec![1.0; design.ncols()];
        for j in 1..design.ncols() {
            let col = design.column(j);
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            if var > 0.0 {
                mean[j] = m;
                scale[j] = var.sqrt();
            }
        }
        ColumnScaling { mean, scale }
    }

    pub fn apply(&self, design: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(design.nrows(), design.ncols(), |i, j| {
            (design[(i, j)] - self.mean[j]) / self.scale[j]
        })
    }

    /// Maps coefficients on standardized columns back to the raw columns.
    pub fn unscale_coefficients(&self, coef: &DVector<f64>) -> DVector<f64> {
        let mut raw = DVector::zeros(coef.len());
        for j in 1..coef.len() {
            raw[j] = coef[j] / self.scale[j];
            raw[0] -= raw[j] * self.mean[j];
        }
        raw[0] += coef[0];
        raw
    }
}

/// A polynomial regression `targets ≈ basis(z) · coef` fit on standardized columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SieveRegression {
    basis: PolynomialBasis,
    scaling: ColumnScaling,
    coef: DMatrix<f64>,
}

impl SieveRegression {
    pub fn fit(z: &DMatrix<f64>, targets: &DMatrix<f64>, basis: PolynomialBasis) -> Result<Self> {
        if z.nrows() != targets.nrows() {
            return invalid("sieve regression: row mismatch between inputs and targets");
        }
        let raw = basis.evaluate(z)?;
        let scaling = ColumnScaling::fit(&raw);
        let design = scaling.apply(&raw);
        let mut coef = DMatrix::zeros(basis.ncols(), targets.ncols());
        for t in 0..targets.ncols() {
            let c = least_squares(&design, &targets.column(t).into_owned())?;
            coef.set_column(t, &c);
        }
        Ok(SieveRegression {
            basis,
            scaling,
            coef,
        })
    }

    pub fn basis(&self) -> &PolynomialBasis {
        &self.basis
    }

    /// Standardized design at new points.
    pub fn design(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.scaling.apply(&self.basis.evaluate(z)?))
    }

    /// Fitted values, one column per target.
    pub fn predict(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.design(z)? * &self.coef)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cubic_monomials() {
        let b = PolynomialBasis::full(1, 3).unwrap();
        let row = b.evaluate(&DMatrix::from_element(1, 1, 2.0)).unwrap();
        assert_eq!(row.as_slice(), &[1.0, 2.0, 4.0, 8.0]);
    }

    #[test]
    fn two_variable_quadratic_order() {
        let b = PolynomialBasis::full(2, 2).unwrap();
        assert_eq!(b.ncols(), 6);
        assert_eq!(
            b.terms(),
            &[vec![], vec![0], vec![1], vec![0, 0], vec![0, 1], vec![1, 1]]
        );
        let row = b.evaluate(&DMatrix::from_row_slice(1, 2, &[2.0, 3.0])).unwrap();
        assert_eq!(row.as_slice(), &[1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
    }

    #[test]
    fn affine_design() {
        for d in 1..6 {
            assert_eq!(PolynomialBasis::full(d, 1).unwrap().ncols(), d + 1);
        }
    }

    #[test]
    fn column_counts_match_binomials() {
        // C(d + degree, degree)
        assert_eq!(PolynomialBasis::full(5, 3).unwrap().ncols(), 56);
        assert_eq!(PolynomialBasis::full(7, 4).unwrap().ncols(), 330);
        // no cross terms: 1 + d * degree
        assert_eq!(PolynomialBasis::new(3, 3, 1).unwrap().ncols(), 10);
    }

    #[test]
    fn blowup_reports_count() {
        let x = DMatrix::zeros(5, 3);
        let err = polynomial_basis(&x, 2, 2).unwrap_err();
        assert!(err.to_string().contains("10 columns"), "{err}");
    }

    #[test]
    fn unscaled_coefficients_reproduce_fit() {
        let x = DMatrix::from_fn(30, 2, |i, j| (i as f64 * 0.37 + j as f64).sin() * 3.0);
        let basis = PolynomialBasis::full(2, 3).unwrap();
        let raw = basis.evaluate(&x).unwrap();
        let scaling = ColumnScaling::fit(&raw);
        let coef = DVector::from_fn(raw.ncols(), |j, _| j as f64 - 4.0);
        let std_fit = scaling.apply(&raw) * &coef;
        let raw_fit = &raw * scaling.unscale_coefficients(&coef);
        assert_abs_diff_eq!(std_fit, raw_fit, epsilon = 1e-9);
    }
}
