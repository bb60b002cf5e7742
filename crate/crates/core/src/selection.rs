//! Choosing the number of boosting iterations.
//!
//! Both tuners walk an increasing grid and stop at the first point whose
//! error exceeds the previous point's error by more than `epsilon`, returning
//! the previous point. Errors along the grid come from a single boosting path
//! per fold: advancing a trainer is equivalent to refitting from scratch.

use nalgebra::DVector;

use crate::boosting::{BoostConfig, BoostTrainer};
use crate::data::{partition, Dataset, FoldAssignment};
use crate::error::{invalid, Result};
use crate::postprocess::{predict_post, PostTrainer};

/// Largest iteration count a tuning grid may request.
pub const ITERATION_BUDGET: usize = 100_000;

/// Default tolerance as a multiple of the outcome variance.
pub const DEFAULT_RELATIVE_EPSILON: f64 = 1e-4;

/// Stream index for the cross-validation partition seed.
const CV_STREAM: u64 = 0x6376;

/// Strictly increasing iteration counts with a stopping tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningGrid {
    points: Vec<usize>,
    /// `None` means `DEFAULT_RELATIVE_EPSILON · Var(y)`.
    epsilon: Option<f64>,
}

impl TuningGrid {
    pub fn new(points: Vec<usize>, epsilon: Option<f64>) -> Result<Self> {
        if points.is_empty() {
            return invalid("tuning grid is empty");
        }
        if points[0] == 0 {
            return invalid("tuning grid entries must be at least 1");
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("tuning grid must be strictly increasing");
        }
        if let Some(&last) = points.last() {
            if last > ITERATION_BUDGET {
                return invalid(format!(
                    "grid point {last} exceeds the iteration budget {ITERATION_BUDGET}"
                ));
            }
        }
        if let Some(eps) = epsilon {
            if !(eps >= 0.0 && eps.is_finite()) {
                return invalid("tolerance must be finite and non-negative");
            }
        }
        Ok(TuningGrid { points, epsilon })
    }

    /// `1, 1 + step, 1 + 2·step, …` up to and including `max`.
    pub fn stepped(max: usize, step: usize, epsilon: Option<f64>) -> Result<Self> {
        if step == 0 {
            return invalid("grid step must be positive");
        }
        let mut points: Vec<usize> = (1..=max).step_by(step).collect();
        if points.last() != Some(&max) && max > 0 {
            points.push(max);
        }
        Self::new(points, epsilon)
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn max(&self) -> usize {
        *self.points.last().expect("grid is non-empty")
    }

    pub fn epsilon(&self) -> Option<f64> {
        self.epsilon
    }

    /// The tolerance applied for outcome `y`.
    pub fn resolve_epsilon(&self, y: &DVector<f64>) -> f64 {
        self.epsilon.unwrap_or_else(|| DEFAULT_RELATIVE_EPSILON * variance(y))
    }
}

fn variance(y: &DVector<f64>) -> f64 {
    if y.len() < 2 {
        return 0.0;
    }
    let mean = y.mean();
    y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (y.len() - 1) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningResult {
    pub m_star: usize,
    /// `(M, error)` for every grid point evaluated, in grid order.
    pub curve: Vec<(usize, f64)>,
    pub stopped_early: bool,
}

/// Which estimator the tuner evaluates along the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EstimatorFamily {
    /// Boosting with both stages on the full training sample.
    Naive,
    /// Cross-fitted boosting.
    CrossFit,
    /// Post-processed boosting with `outer_folds` outer folds and the given
    /// weight-regression tolerance; weights are refitted at every grid point.
    Post { outer_folds: usize, weight_rtol: f64 },
}

/// Walks `grid` with the early-stopping rule, calling `error_at(M)` for each
/// point in order until the rule triggers.
pub fn early_stop<F>(grid: &TuningGrid, epsilon: f64, mut error_at: F) -> Result<TuningResult>
where
    F: FnMut(usize) -> Result<f64>,
{
    let mut curve: Vec<(usize, f64)> = Vec::with_capacity(grid.points.len());
    for &m in &grid.points {
        let err = error_at(m)?;
        if let Some(&(prev_m, prev_err)) = curve.last() {
            curve.push((m, err));
            if err > prev_err + epsilon {
                return Ok(TuningResult {
                    m_star: prev_m,
                    curve,
                    stopped_early: true,
                });
            }
        } else {
            curve.push((m, err));
        }
    }
    Ok(TuningResult {
        m_star: grid.max(),
        curve,
        stopped_early: false,
    })
}

/// A fitted path that can be advanced and evaluated.
enum PathFit {
    Boost(BoostTrainer),
    Post(PostTrainer),
}

impl PathFit {
    fn new(data: &Dataset, family: EstimatorFamily, config: &BoostConfig) -> Result<Self> {
        Ok(match family {
            EstimatorFamily::Naive => PathFit::Boost(BoostTrainer::naive(data, config)?),
            EstimatorFamily::CrossFit => PathFit::Boost(BoostTrainer::crossfit(data, config)?),
            EstimatorFamily::Post { outer_folds, weight_rtol } => PathFit::Post(
                PostTrainer::new(data, config, outer_folds)?.with_weight_rtol(weight_rtol)?,
            ),
        })
    }

    /// Mean squared error on `eval` after advancing to `m` iterations.
    fn error_at(&mut self, m: usize, eval: &Dataset) -> Result<f64> {
        let pred = match self {
            PathFit::Boost(t) => {
                t.advance_to(m)?;
                t.model().predict(eval.x())?
            }
            PathFit::Post(t) => {
                t.advance_to(m)?;
                predict_post(&t.model()?, eval.x())?
            }
        };
        Ok((pred - eval.y()).norm_squared() / eval.n() as f64)
    }
}

fn check_grid(grid: &TuningGrid) -> Result<()> {
    if grid.max() > ITERATION_BUDGET {
        return invalid(format!("grid point {} exceeds the iteration budget", grid.max()));
    }
    Ok(())
}

/// `k`-fold cross-validation with early stopping over a seeded partition.
pub fn cv_early_stopping(
    data: &Dataset,
    grid: &TuningGrid,
    k: usize,
    family: EstimatorFamily,
    config: &BoostConfig,
) -> Result<TuningResult> {
    if k < 2 || k > data.n() {
        return invalid(format!("cross-validation needs 2 <= k <= n, got k = {k}"));
    }
    let folds = partition(data.n(), k, config.seed.derive(CV_STREAM))?;
    cv_early_stopping_with_folds(data, grid, &folds, family, config)
}

/// Cross-validation over an explicit partition. Each fold's estimator seed
/// is derived from the smallest row index it holds out, so relabeling the
/// folds leaves the curve unchanged up to summation order.
pub fn cv_early_stopping_with_folds(
    data: &Dataset,
    grid: &TuningGrid,
    folds: &FoldAssignment,
    family: EstimatorFamily,
    config: &BoostConfig,
) -> Result<TuningResult> {
    check_grid(grid)?;
    if folds.k() < 2 {
        return invalid("cross-validation needs at least two folds");
    }
    if folds.labels().len() != data.n() {
        return invalid("fold assignment length differs from the sample size");
    }
    let mut paths = Vec::with_capacity(folds.k());
    for kappa in 0..folds.k() {
        let held = folds.indices(kappa);
        let inner = BoostConfig {
            seed: config.seed.derive(held[0] as u64),
            ..*config
        };
        let train = data.subset(&folds.complement(kappa));
        paths.push((PathFit::new(&train, family, &inner)?, data.subset(&held)));
    }
    let epsilon = grid.resolve_epsilon(data.y());
    let k = paths.len() as f64;
    early_stop(grid, epsilon, |m| {
        let mut total = 0.0;
        for (path, eval) in &mut paths {
            total += path.error_at(m, eval)?;
        }
        Ok(total / k)
    })
}

/// Tunes on a held-out validation sample from one boosting path fitted on
/// `train`.
pub fn validation_tune(
    train: &Dataset,
    val: &Dataset,
    grid: &TuningGrid,
    family: EstimatorFamily,
    config: &BoostConfig,
) -> Result<TuningResult> {
    check_grid(grid)?;
    if train.dx() != val.dx() || train.dz() != val.dz() {
        return invalid("training and validation samples differ in column counts");
    }
    let mut path = PathFit::new(train, family, config)?;
    let epsilon = grid.resolve_epsilon(train.y());
    early_stop(grid, epsilon, |m| path.error_at(m, val))
}
