//! Large-sample moments of the simulated designs.

use boostiv::dgp::{
    gen_multivariate, gen_univariate, IvType, MultivariateDesign, MultivariateSpec, SimulatedDraw, StructuralFunction,
    UnivariateSpec,
};
use boostiv::RngSeed;
use nalgebra::{DMatrix, DVector};

const N: usize = 100_000;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64;
    cov / (var(a) * var(b)).sqrt()
}

fn univariate(g: StructuralFunction, rho: f64, seed: u64) -> SimulatedDraw {
    gen_univariate(&UnivariateSpec { g, rho, n: N, n_test: 10 }, RngSeed(seed)).unwrap()
}

fn multivariate(design: MultivariateDesign, iv_type: IvType, rho: f64, seed: u64) -> SimulatedDraw {
    let spec = MultivariateSpec { design, iv_type, dx: 5, dz: 7, rho, n: N, n_test: 1000 };
    gen_multivariate(&spec, RngSeed(seed)).unwrap()
}

fn structural_error(draw: &SimulatedDraw) -> Vec<f64> {
    (draw.data.y() - &draw.g_true_train).iter().copied().collect()
}

/// OLS of `u` on `[1, Z]`; returns each slope divided by its standard error.
fn slope_t_stats(z: &DMatrix<f64>, u: &[f64]) -> Vec<f64> {
    let n = z.nrows();
    let design = DMatrix::from_fn(n, z.ncols() + 1, |i, j| if j == 0 { 1.0 } else { z[(i, j - 1)] });
    let y = DVector::from_column_slice(u);
    let xtx_inv = (design.transpose() * &design).try_inverse().unwrap();
    let beta = &xtx_inv * design.transpose() * &y;
    let resid = &y - &design * &beta;
    let sigma2 = resid.norm_squared() / (n - design.ncols()) as f64;
    (1..design.ncols()).map(|j| beta[j] / (sigma2 * xtx_inv[(j, j)]).sqrt()).collect()
}

#[test]
fn univariate_regressor_moments() {
    let draw = univariate(StructuralFunction::Abs, 0.5, 1);
    let x: Vec<f64> = draw.data.x().column(0).iter().copied().collect();
    assert!(mean(&x).abs() < 0.05, "mean {}", mean(&x));
    let v = var(&x);
    assert!((v - 7.1).abs() < 0.05 * 7.1, "variance {v}");
    let endogeneity = corr(&x, &structural_error(&draw));
    assert!(endogeneity > 0.3, "corr(x, error) = {endogeneity}");
}

#[test]
fn univariate_instruments_are_exogenous() {
    for (i, g) in StructuralFunction::ALL.into_iter().enumerate() {
        let draw = univariate(g, 0.5, 10 + i as u64);
        for t in slope_t_stats(draw.data.z(), &structural_error(&draw)) {
            assert!(t.abs() < 3.0, "{g}: t = {t}");
        }
    }
}

#[test]
fn multivariate_instruments_are_exogenous() {
    let mut seed = 20;
    for design in [MultivariateDesign::Gaussian, MultivariateDesign::Sines] {
        for iv in [IvType::Linear, IvType::Nonlinear] {
            seed += 1;
            let draw = multivariate(design, iv, 0.5, seed);
            for t in slope_t_stats(draw.data.z(), &structural_error(&draw)) {
                assert!(t.abs() < 3.0, "design {} {iv:?}: t = {t}", design.number());
            }
        }
    }
}

#[test]
fn first_stage_noise_is_independent_at_zero_rho() {
    for iv in [IvType::Linear, IvType::Nonlinear] {
        let draw = multivariate(MultivariateDesign::Gaussian, iv, 0.0, 30);
        let stage = draw.first_stage.as_ref().unwrap();
        let v = draw.data.x() - stage.reduced_form(draw.data.z());
        let eps = structural_error(&draw);
        for k in 0..v.ncols() {
            let vk: Vec<f64> = v.column(k).iter().copied().collect();
            let c = corr(&vk, &eps);
            assert!(c.abs() < 0.02, "{iv:?} k = {k}: corr {c}");
        }
    }
}

#[test]
fn endogeneity_follows_rho() {
    let draw = multivariate(MultivariateDesign::Gaussian, IvType::Linear, 0.5, 31);
    let v = draw.data.x() - draw.first_stage.as_ref().unwrap().reduced_form(draw.data.z());
    let eps = structural_error(&draw);
    for k in 0..v.ncols() {
        let vk: Vec<f64> = v.column(k).iter().copied().collect();
        // Var(v_k) = 1 and Cov(v_k, ε) = ρ.
        assert!((corr(&vk, &eps) - 0.5).abs() < 0.02);
        assert!((var(&vk) - 1.0).abs() < 0.02);
    }
}

#[test]
fn sines_design_is_bounded() {
    for seed in 0..5 {
        for iv in [IvType::Linear, IvType::Nonlinear] {
            let spec = MultivariateSpec {
                design: MultivariateDesign::Sines,
                iv_type: iv,
                dx: 5,
                dz: 7,
                rho: 0.25,
                n: 2000,
                n_test: 2000,
            };
            let draw = gen_multivariate(&spec, RngSeed(seed)).unwrap();
            let bound = spec.dx as f64;
            assert!(draw.g_true_train.iter().chain(draw.g_true_test.iter()).all(|h| h.abs() <= bound));
        }
    }
}

#[test]
fn draws_are_deterministic() {
    let spec = UnivariateSpec::new(StructuralFunction::Log, 500);
    assert_eq!(gen_univariate(&spec, RngSeed(3)).unwrap(), gen_univariate(&spec, RngSeed(3)).unwrap());
    assert_ne!(gen_univariate(&spec, RngSeed(3)).unwrap(), gen_univariate(&spec, RngSeed(4)).unwrap());
    let m = MultivariateSpec {
        design: MultivariateDesign::Gaussian,
        iv_type: IvType::Nonlinear,
        dx: 2,
        dz: 3,
        rho: 0.25,
        n: 300,
        n_test: 100,
    };
    assert_eq!(gen_multivariate(&m, RngSeed(9)).unwrap(), gen_multivariate(&m, RngSeed(9)).unwrap());
}

#[test]
fn csv_export_round_trips() {
    let draw = gen_univariate(&UnivariateSpec::new(StructuralFunction::Step, 20), RngSeed(5)).unwrap();
    let mut buf = Vec::new();
    draw.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("y,x_1,z_1,z_2,g_true"));
    for (i, line) in lines.enumerate() {
        let vals: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(vals[0], draw.data.y()[i]);
        assert_eq!(vals[1], draw.data.x()[(i, 0)]);
        assert_eq!(vals[4], draw.g_true_train[i]);
    }
}
