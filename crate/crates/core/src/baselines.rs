//! Series (sieve) two-stage least squares.
//!
//! The structural basis `p(x)` is projected onto the span of the instrument
//! basis `q(z)`, and the outcome is regressed on the projection:
//! `γ̂ = (P̂'P̂)⁻ P̂'y` with `P̂ = Q(Q'Q)⁻Q'P`. Both designs are standardized
//! before solving; `γ̂` is reported on the raw monomials.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{invalid, Result};
use crate::linalg::{least_squares, OrthoBasis};
use crate::sieve::{ColumnScaling, PolynomialBasis};

/// Degrees of the structural and instrument polynomial bases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SieveSpec {
    pub basis_degree: usize,
    pub iv_degree: usize,
    /// Cap on the number of distinct variables in a monomial.
    pub interaction: usize,
}

impl SieveSpec {
    /// Equal structural and instrument degrees with full interactions.
    pub fn new(degree: usize) -> Self {
        SieveSpec {
            basis_degree: degree,
            iv_degree: degree,
            interaction: degree,
        }
    }

    /// Instrument degree one above the structural degree when there are more
    /// instruments than regressors and the larger basis still fits in `n`
    /// rows; equal degrees otherwise.
    pub fn for_dims(degree: usize, dx: usize, dz: usize, n: usize) -> Result<Self> {
        let mut spec = SieveSpec::new(degree);
        if dz > dx {
            let wider = PolynomialBasis::new(dz, degree + 1, degree + 1)?;
            if wider.ncols() <= n {
                spec.iv_degree = degree + 1;
                spec.interaction = degree + 1;
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.basis_degree == 0 {
            return invalid("structural basis degree must be at least 1");
        }
        if self.iv_degree < self.basis_degree {
            return invalid("instrument basis degree must be at least the structural degree");
        }
        if self.interaction == 0 {
            return invalid("interaction order must be at least 1");
        }
        Ok(())
    }

    fn structural(&self, dx: usize) -> Result<PolynomialBasis> {
        PolynomialBasis::new(dx, self.basis_degree, self.interaction.min(self.basis_degree))
    }

    fn instrument(&self, dz: usize) -> Result<PolynomialBasis> {
        PolynomialBasis::new(dz, self.iv_degree, self.interaction.min(self.iv_degree))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NPIVModel {
    gamma: DVector<f64>,
    basis: PolynomialBasis,
    spec: SieveSpec,
}

impl NPIVModel {
    /// Coefficients on the raw structural monomials, in basis order.
    pub fn gamma(&self) -> &DVector<f64> {
        &self.gamma
    }

    pub fn basis(&self) -> &PolynomialBasis {
        &self.basis
    }

    pub fn spec(&self) -> &SieveSpec {
        &self.spec
    }

    pub fn from_parts(gamma: DVector<f64>, dx: usize, spec: SieveSpec) -> Result<Self> {
        spec.validate()?;
        let basis = spec.structural(dx)?;
        if gamma.len() != basis.ncols() {
            return invalid(format!(
                "expected {} coefficients, got {}",
                basis.ncols(),
                gamma.len()
            ));
        }
        if gamma.iter().any(|g| !g.is_finite()) {
            return invalid("coefficients must be finite");
        }
        Ok(NPIVModel { gamma, basis, spec })
    }
}

fn design_fits(cols: usize, n: usize, what: &str) -> Result<()> {
    if cols > n {
        return invalid(format!("{what} design has {cols} columns but only {n} rows"));
    }
    Ok(())
}

pub fn npiv_fit(data: &Dataset, spec: &SieveSpec) -> Result<NPIVModel> {
    spec.validate()?;
    let basis = spec.structural(data.dx())?;
    let iv_basis = spec.instrument(data.dz())?;
    design_fits(basis.ncols(), data.n(), "structural")?;
    design_fits(iv_basis.ncols(), data.n(), "instrument")?;

    let p_raw = basis.evaluate(data.x())?;
    let p_scaling = ColumnScaling::fit(&p_raw);
    let p = p_scaling.apply(&p_raw);
    let q_raw = iv_basis.evaluate(data.z())?;
    let q = ColumnScaling::fit(&q_raw).apply(&q_raw);

    let span = OrthoBasis::new(&q)?;
    if span.rank() == 0 {
        return invalid("instrument design has rank zero");
    }
    let mut p_hat = DMatrix::zeros(p.nrows(), p.ncols());
    for j in 0..p.ncols() {
        p_hat.set_column(j, &span.project(&p.column(j).into_owned()));
    }
    let coef = least_squares(&p_hat, data.y())?;
    let gamma = p_scaling.unscale_coefficients(&coef);
    NPIVModel::from_parts(gamma, data.dx(), *spec)
}

pub fn npiv_predict(model: &NPIVModel, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    if x.ncols() != model.basis.nvars() {
        return invalid(format!(
            "model was trained on {} regressors, got {}",
            model.basis.nvars(),
            x.ncols()
        ));
    }
    Ok(model.basis.evaluate(x)? * &model.gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_iv(seed: u64, n: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = Vec::new();
        let mut x = Vec::new();
        let mut z = Vec::new();
        for _ in 0..n {
            let zv: f64 = rng.random_range(-1.0..1.0);
            let e: f64 = rng.random_range(-1.0..1.0);
            let xv = 0.8 * zv + e;
            y.push(1.0 + 2.0 * xv + e);
            x.push(vec![xv]);
            z.push(vec![zv]);
        }
        Dataset::from_rows(&y, &x, &z).unwrap()
    }

    #[test]
    fn exactly_identified_matches_2sls() {
        let data = linear_iv(41, 300);
        let model = npiv_fit(&data, &SieveSpec::new(1)).unwrap();
        let (xm, ym, zm) = (data.x().mean(), data.y().mean(), data.z().mean());
        let mut szy = 0.0;
        let mut szx = 0.0;
        for i in 0..data.n() {
            let zc = data.z()[(i, 0)] - zm;
            szy += zc * (data.y()[i] - ym);
            szx += zc * (data.x()[(i, 0)] - xm);
        }
        let slope = szy / szx;
        assert_abs_diff_eq!(model.gamma()[1], slope, epsilon = 1e-8);
        assert_abs_diff_eq!(model.gamma()[0], ym - slope * xm, epsilon = 1e-8);
        let at_one = npiv_predict(&model, &DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_abs_diff_eq!(at_one[0], model.gamma()[0] + model.gamma()[1], epsilon = 1e-12);
    }

    #[test]
    fn exogenous_quadratic_recovered() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 / 10.0 - 1.5]).collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0] * r[0]).collect();
        let data = Dataset::from_rows(&y, &rows, &rows).unwrap();
        let model = npiv_fit(&data, &SieveSpec::new(2)).unwrap();
        assert_abs_diff_eq!(model.gamma().clone(), DVector::from_column_slice(&[0.0, 0.0, 1.0]), epsilon = 1e-8);
    }

    #[test]
    fn constant_outcome() {
        let data = linear_iv(42, 50);
        let flat = Dataset::new(DVector::from_element(50, 3.0), data.x().clone(), data.z().clone()).unwrap();
        let model = npiv_fit(&flat, &SieveSpec::new(3)).unwrap();
        assert_abs_diff_eq!(model.gamma()[0], 3.0, epsilon = 1e-10);
        assert!(model.gamma().iter().skip(1).all(|g| g.abs() < 1e-10));
    }

    #[test]
    fn prediction_edge_cases() {
        let spec = SieveSpec::new(2);
        let zero = NPIVModel::from_parts(DVector::zeros(3), 1, spec).unwrap();
        let x = DMatrix::from_column_slice(3, 1, &[-1.0, 0.0, 5.0]);
        assert_eq!(npiv_predict(&zero, &x).unwrap(), DVector::zeros(3));
        let constant = NPIVModel::from_parts(DVector::from_column_slice(&[2.0, 0.0, 0.0]), 1, spec).unwrap();
        assert_eq!(npiv_predict(&constant, &x).unwrap(), DVector::from_element(3, 2.0));
        assert!(npiv_predict(&constant, &DMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn oversized_design_rejected() {
        let data = linear_iv(43, 5);
        let err = npiv_fit(&data, &SieveSpec::new(5)).unwrap_err();
        assert!(err.to_string().contains("6 columns"), "{err}");
    }

    #[test]
    fn spec_rules() {
        assert!(SieveSpec { basis_degree: 3, iv_degree: 2, interaction: 3 }.validate().is_err());
        assert_eq!(SieveSpec::for_dims(2, 2, 3, 1000).unwrap().iv_degree, 3);
        assert_eq!(SieveSpec::for_dims(2, 3, 3, 1000).unwrap().iv_degree, 2);
        // a cubic basis on 7 instruments has 120 columns
        assert_eq!(SieveSpec::for_dims(2, 5, 7, 100).unwrap().iv_degree, 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn identical_bases_reduce_to_ols(seed in 0u64..10_000, n in 12usize..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-2.0..2.0)]).collect();
            let y: Vec<f64> = rows.iter().map(|r| r[0].sin() + rng.random_range(-0.3..0.3)).collect();
            let data = Dataset::from_rows(&y, &rows, &rows).unwrap();
            let model = npiv_fit(&data, &SieveSpec::new(3)).unwrap();
            let design = PolynomialBasis::full(1, 3).unwrap().evaluate(data.x()).unwrap();
            let ols = &design * least_squares(&design, data.y()).unwrap();
            let fitted = npiv_predict(&model, data.x()).unwrap();
            prop_assert!((fitted - ols).amax() < 1e-8);
        }

        #[test]
        fn invariant_to_instrument_reparameterization(seed in 0u64..10_000, shift in -3.0f64..3.0, scale in 0.2f64..5.0) {
            let data = linear_iv(seed, 80);
            let moved = Dataset::new(
                data.y().clone(),
                data.x().clone(),
                data.z().map(|v| scale * v + shift),
            ).unwrap();
            let spec = SieveSpec { basis_degree: 2, iv_degree: 3, interaction: 3 };
            let a = npiv_predict(&npiv_fit(&data, &spec).unwrap(), data.x()).unwrap();
            let b = npiv_predict(&npiv_fit(&moved, &spec).unwrap(), data.x()).unwrap();
            prop_assert!((a - b).amax() < 1e-6);
        }
    }
}
