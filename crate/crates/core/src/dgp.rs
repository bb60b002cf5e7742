//! Simulated designs with known structural functions.
//!
//! Every draw is a pure function of its spec and seed. The training sample,
//! the test sample, and the design parameters (`Π`, `θ_k`) each come from
//! their own derived stream, so the test sample does not shift when the
//! training size changes.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::rng::RngSeed;

const TRAIN_STREAM: u64 = 1;
const TEST_STREAM: u64 = 2;
const PARAM_STREAM: u64 = 3;

/// Variance of the small shocks `δ` and `γ` in the univariate design.
pub const SMALL_SHOCK_VARIANCE: f64 = 0.1;

/// Structural functions of the univariate design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StructuralFunction {
    Abs,
    Log,
    Sin,
    Step,
}

impl StructuralFunction {
    pub const ALL: [StructuralFunction; 4] = [Self::Abs, Self::Log, Self::Sin, Self::Step];

    pub fn name(self) -> &'static str {
        match self {
            Self::Abs => "abs",
            Self::Log => "log",
            Self::Sin => "sin",
            Self::Step => "step",
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Self::Abs => x.abs(),
            Self::Log => (16.0 * x - 8.0).abs().ln_1p() * sign(x - 0.5),
            Self::Sin => x.sin(),
            Self::Step => {
                if x < 0.0 {
                    1.0
                } else {
                    2.5
                }
            }
        }
    }
}

/// Sign with `sign(0) = 0`.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl fmt::Display for StructuralFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StructuralFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown structural function {s:?}")))
    }
}

/// Evaluates a named univariate structural function.
pub fn structural_g(name: &str, x: f64) -> Result<f64> {
    Ok(name.parse::<StructuralFunction>()?.eval(x))
}

/// `y = g(x) + ρe + δ`, `x = z₁ + z₂ + e + γ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnivariateSpec {
    pub g: StructuralFunction,
    pub rho: f64,
    pub n: usize,
    pub n_test: usize,
}

impl UnivariateSpec {
    pub fn new(g: StructuralFunction, n: usize) -> Self {
        UnivariateSpec {
            g,
            rho: 0.5,
            n,
            n_test: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return invalid("sample size must be at least 1");
        }
        if !self.rho.is_finite() {
            return invalid("rho must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MultivariateDesign {
    /// `h(x) = exp(−x'x / 2)`.
    Gaussian,
    /// `h(x) = Σ sin(10 x_k)`.
    Sines,
}

impl MultivariateDesign {
    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            Self::Gaussian => (-0.5 * x.iter().map(|v| v * v).sum::<f64>()).exp(),
            Self::Sines => x.iter().map(|v| (10.0 * v).sin()).sum(),
        }
    }

    /// Design number, 1 or 2.
    pub fn number(self) -> u8 {
        match self {
            Self::Gaussian => 1,
            Self::Sines => 2,
        }
    }

    pub fn from_number(k: u8) -> Result<Self> {
        match k {
            1 => Ok(Self::Gaussian),
            2 => Ok(Self::Sines),
            _ => invalid(format!("design must be 1 or 2, got {k}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IvType {
    /// `x = z'Π + v`.
    Linear,
    /// `x_k = φ(z; θ_k, I) + v_k`, a normal density in `z`.
    Nonlinear,
}

impl IvType {
    pub fn name(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Nonlinear => "nonlinear",
        }
    }
}

impl FromStr for IvType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" | "lin" => Ok(Self::Linear),
            "nonlinear" | "nonlin" => Ok(Self::Nonlinear),
            _ => invalid(format!("unknown instrument type {s:?}")),
        }
    }
}

/// `y = h(x) + ε`, `x_k = g_k(z) + v_k`, `z ~ N(0, I)`, `v_k ~ N(ρε, 1 − ρ²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultivariateSpec {
    pub design: MultivariateDesign,
    pub iv_type: IvType,
    pub dx: usize,
    pub dz: usize,
    pub rho: f64,
    pub n: usize,
    pub n_test: usize,
}

impl MultivariateSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return invalid("sample size must be at least 1");
        }
        if self.dx == 0 {
            return invalid("dx must be at least 1");
        }
        if self.dz < self.dx {
            return invalid(format!("dz must be at least dx, got dz = {} < dx = {}", self.dz, self.dx));
        }
        if self.rho.is_nan() || self.rho.abs() >= 1.0 {
            return invalid(format!("rho must satisfy |rho| < 1, got {}", self.rho));
        }
        Ok(())
    }
}

/// First-stage parameters drawn once per seed.
#[derive(Debug, Clone, PartialEq)]
pub enum FirstStage {
    /// `Π` is `dz × dx`.
    Linear { pi: DMatrix<f64> },
    /// Row `k` of `theta` is the mean of the `k`-th density (`dx × dz`).
    Nonlinear { theta: DMatrix<f64> },
}

impl FirstStage {
    fn draw(spec: &MultivariateSpec, rng: &mut ChaCha8Rng) -> Self {
        match spec.iv_type {
            IvType::Linear => {
                let normal = Normal::new(0.0, (1.0 / spec.dz as f64).sqrt()).expect("positive scale");
                FirstStage::Linear {
                    pi: DMatrix::from_fn(spec.dz, spec.dx, |_, _| normal.sample(rng)),
                }
            }
            IvType::Nonlinear => {
                let unif = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
                FirstStage::Nonlinear {
                    theta: DMatrix::from_fn(spec.dx, spec.dz, |_, _| unif.sample(rng)),
                }
            }
        }
    }

    /// `g(z)` for one row of instruments.
    pub fn eval(&self, z: &[f64], k: usize) -> f64 {
        match self {
            FirstStage::Linear { pi } => z.iter().enumerate().map(|(j, v)| v * pi[(j, k)]).sum(),
            FirstStage::Nonlinear { theta } => {
                let dz = z.len() as f64;
                let dist2: f64 = z.iter().enumerate().map(|(j, v)| (v - theta[(k, j)]).powi(2)).sum();
                (2.0 * std::f64::consts::PI).powf(-dz / 2.0) * (-0.5 * dist2).exp()
            }
        }
    }

    /// `g(Z)` row by row (`n × dx`).
    pub fn reduced_form(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let dx = match self {
            FirstStage::Linear { pi } => pi.ncols(),
            FirstStage::Nonlinear { theta } => theta.nrows(),
        };
        DMatrix::from_fn(z.nrows(), dx, |i, k| {
            let row: Vec<f64> = z.row(i).iter().copied().collect();
            self.eval(&row, k)
        })
    }
}

/// A training sample with its noiseless structural values and a test sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDraw {
    pub data: Dataset,
    pub g_true_train: DVector<f64>,
    pub test_x: DMatrix<f64>,
    pub g_true_test: DVector<f64>,
    /// Design parameters of multivariate draws.
    pub first_stage: Option<FirstStage>,
}

impl SimulatedDraw {
    /// Moves the first `n_val` training rows into a separate validation
    /// sample, returned alongside its structural values.
    pub fn split_validation(&self, n_val: usize) -> Result<(SimulatedDraw, Dataset, DVector<f64>)> {
        let n = self.data.n();
        if n_val == 0 || n_val >= n {
            return invalid(format!("cannot hold out {n_val} of {n} rows"));
        }
        let val_idx: Vec<usize> = (0..n_val).collect();
        let train_idx: Vec<usize> = (n_val..n).collect();
        let val = self.data.subset(&val_idx);
        let g_val = DVector::from_fn(n_val, |i, _| self.g_true_train[i]);
        let train = SimulatedDraw {
            data: self.data.subset(&train_idx),
            g_true_train: DVector::from_fn(n - n_val, |i, _| self.g_true_train[n_val + i]),
            test_x: self.test_x.clone(),
            g_true_test: self.g_true_test.clone(),
            first_stage: self.first_stage.clone(),
        };
        Ok((train, val, g_val))
    }

    /// Writes the training sample as CSV with header
    /// `y,x_1,…,x_dx,z_1,…,z_dz,g_true`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let d = &self.data;
        let mut header = vec!["y".to_string()];
        header.extend((1..=d.dx()).map(|k| format!("x_{k}")));
        header.extend((1..=d.dz()).map(|k| format!("z_{k}")));
        header.push("g_true".into());
        writeln!(out, "{}", header.join(","))?;
        for i in 0..d.n() {
            let mut fields = vec![d.y()[i].to_string()];
            fields.extend(d.x().row(i).iter().map(f64::to_string));
            fields.extend(d.z().row(i).iter().map(f64::to_string));
            fields.push(self.g_true_train[i].to_string());
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

struct UnivariateSample {
    y: Vec<f64>,
    x: Vec<f64>,
    z: Vec<[f64; 2]>,
    g: Vec<f64>,
}

fn univariate_sample(spec: &UnivariateSpec, n: usize, rng: &mut ChaCha8Rng) -> UnivariateSample {
    let unif = Uniform::new_inclusive(-3.0, 3.0).expect("valid range");
    let small = Normal::new(0.0, SMALL_SHOCK_VARIANCE.sqrt()).expect("positive scale");
    let mut s = UnivariateSample {
        y: Vec::with_capacity(n),
        x: Vec::with_capacity(n),
        z: Vec::with_capacity(n),
        g: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let z1 = unif.sample(rng);
        let z2 = unif.sample(rng);
        let e: f64 = rng.sample(StandardNormal);
        let delta = small.sample(rng);
        let gamma = small.sample(rng);
        let x = z1 + z2 + e + gamma;
        let g = spec.g.eval(x);
        s.y.push(g + spec.rho * e + delta);
        s.x.push(x);
        s.z.push([z1, z2]);
        s.g.push(g);
    }
    s
}

pub fn gen_univariate(spec: &UnivariateSpec, seed: RngSeed) -> Result<SimulatedDraw> {
    spec.validate()?;
    let train = univariate_sample(spec, spec.n, &mut seed.derive(TRAIN_STREAM).rng());
    let test = univariate_sample(spec, spec.n_test, &mut seed.derive(TEST_STREAM).rng());
    let data = Dataset::new(
        DVector::from_vec(train.y),
        DMatrix::from_column_slice(spec.n, 1, &train.x),
        DMatrix::from_fn(spec.n, 2, |i, j| train.z[i][j]),
    )?;
    Ok(SimulatedDraw {
        data,
        g_true_train: DVector::from_vec(train.g),
        test_x: DMatrix::from_column_slice(spec.n_test, 1, &test.x),
        g_true_test: DVector::from_vec(test.g),
        first_stage: None,
    })
}

struct MultivariateSample {
    y: DVector<f64>,
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    g: DVector<f64>,
}

fn multivariate_sample(
    spec: &MultivariateSpec,
    stage: &FirstStage,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> MultivariateSample {
    let v_scale = (1.0 - spec.rho * spec.rho).sqrt();
    let mut y = DVector::zeros(n);
    let mut x = DMatrix::zeros(n, spec.dx);
    let mut z = DMatrix::zeros(n, spec.dz);
    let mut g = DVector::zeros(n);
    let mut zrow = vec![0.0; spec.dz];
    let mut xrow = vec![0.0; spec.dx];
    for i in 0..n {
        for v in zrow.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let eps: f64 = rng.sample(StandardNormal);
        for (k, xv) in xrow.iter_mut().enumerate() {
            let noise: f64 = rng.sample(StandardNormal);
            *xv = stage.eval(&zrow, k) + spec.rho * eps + v_scale * noise;
        }
        let h = spec.design.eval(&xrow);
        y[i] = h + eps;
        g[i] = h;
        x.row_mut(i).copy_from_slice(&xrow);
        z.row_mut(i).copy_from_slice(&zrow);
    }
    MultivariateSample { y, x, z, g }
}

pub fn gen_multivariate(spec: &MultivariateSpec, seed: RngSeed) -> Result<SimulatedDraw> {
    spec.validate()?;
    let stage = FirstStage::draw(spec, &mut seed.derive(PARAM_STREAM).rng());
    let train = multivariate_sample(spec, &stage, spec.n, &mut seed.derive(TRAIN_STREAM).rng());
    let test = multivariate_sample(spec, &stage, spec.n_test, &mut seed.derive(TEST_STREAM).rng());
    Ok(SimulatedDraw {
        data: Dataset::new(train.y, train.x, train.z)?,
        g_true_train: train.g,
        test_x: test.x,
        g_true_test: test.g,
        first_stage: Some(stage),
    })
}

/// Mean squared difference between predictions and true structural values.
pub fn mse(pred: &DVector<f64>, truth: &DVector<f64>) -> Result<f64> {
    if pred.len() != truth.len() {
        return invalid(format!("length mismatch: {} predictions, {} truths", pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return invalid("cannot score an empty prediction");
    }
    Ok((pred - truth).norm_squared() / pred.len() as f64)
}

/// Mean of `pred − truth`.
pub fn bias(pred: &DVector<f64>, truth: &DVector<f64>) -> Result<f64> {
    if pred.len() != truth.len() {
        return invalid(format!("length mismatch: {} predictions, {} truths", pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return invalid("cannot score an empty prediction");
    }
    Ok((pred - truth).sum() / pred.len() as f64)
}
