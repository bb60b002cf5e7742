//! Boosting with instrumental variables.
//!
//! Each iteration fits one stump to the current residual, scoring splits by
//! how well the *instrument-projected* stump explains the residual, and then
//! moves the structural fit by `nu` times the stump itself (not its
//! projection). With cross-fitting the first stage of fold `k` is learned on
//! the other folds and the final estimate averages the per-fold ensembles.

use nalgebra::{DMatrix, DVector};

use crate::data::{partition, Dataset, FoldAssignment};
use crate::error::{invalid, Error, Result};
use crate::learners::{
    fit_instrument_learner, instrument_features, FirstStageTarget, InstrumentFeatures,
    InstrumentLearnerSpec, ProjectedSplitSearch, StumpBasis,
};
use crate::rng::RngSeed;

/// Hyperparameters shared by all boosting estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoostConfig {
    /// Number of boosting iterations `M`.
    pub iterations: usize,
    /// Shrinkage applied to every update.
    pub nu: f64,
    /// Cross-fitting folds (ignored by [`fit_naive`]).
    pub folds: usize,
    pub instruments: InstrumentLearnerSpec,
    /// Seeds the fold partition.
    pub seed: RngSeed,
    /// Optional bound on stump leaf magnitudes; off by default.
    pub leaf_cap: Option<f64>,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            iterations: 5000,
            nu: 0.1,
            folds: 2,
            instruments: InstrumentLearnerSpec::default(),
            seed: RngSeed(0),
            leaf_cap: None,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return invalid("iterations must be at least 1");
        }
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return invalid(format!("shrinkage must lie in (0, 1], got {}", self.nu));
        }
        if let Some(cap) = self.leaf_cap {
            if cap.is_nan() || cap <= 0.0 {
                return invalid("leaf cap must be positive");
            }
        }
        self.instruments.validate()
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }
}

/// Non-fatal conditions met while fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitWarning {
    /// The outcome has zero variance; the model is the intercept alone.
    ConstantOutcome,
}

/// Objective values at one iteration of one fold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    /// Projected loss of the chosen stump.
    pub loss: f64,
    /// `‖r‖²` before the update, the loss of the zero stump.
    pub residual_ss: f64,
}

/// One fold's ensemble: intercept plus an ordered list of stumps.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldModel {
    pub intercept: f64,
    pub stumps: Vec<StumpBasis>,
}

impl FoldModel {
    fn eval_row(&self, x: &DMatrix<f64>, row: usize, nu: f64, upto: usize) -> f64 {
        self.stumps[..upto.min(self.stumps.len())]
            .iter()
            .fold(self.intercept, |acc, s| acc + nu * s.eval_row(x, row))
    }
}

/// A fitted boosting estimator: `K` fold ensembles whose predictions are
/// averaged (`K = 1` for the naive variant).
#[derive(Debug, Clone, PartialEq)]
pub struct BoostIVModel {
    pub(crate) folds: Vec<FoldModel>,
    pub(crate) n_features: usize,
    pub(crate) config: BoostConfig,
    pub(crate) traces: Vec<Vec<IterationRecord>>,
    pub(crate) warnings: Vec<FitWarning>,
}

impl BoostIVModel {
    /// Assembles a model from parts, e.g. after deserialization.
    pub fn from_parts(folds: Vec<FoldModel>, n_features: usize, config: BoostConfig) -> Result<Self> {
        if folds.is_empty() {
            return invalid("a model needs at least one fold");
        }
        if n_features == 0 {
            return invalid("a model needs at least one feature");
        }
        for fold in &folds {
            if fold.stumps.iter().any(|s| s.feature >= n_features) {
                return invalid("stump feature index out of range");
            }
        }
        Ok(BoostIVModel {
            traces: vec![Vec::new(); folds.len()],
            folds,
            n_features,
            config,
            warnings: Vec::new(),
        })
    }

    pub fn folds(&self) -> &[FoldModel] {
        &self.folds
    }

    pub fn n_folds(&self) -> usize {
        self.folds.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn nu(&self) -> f64 {
        self.config.nu
    }

    pub fn config(&self) -> &BoostConfig {
        &self.config
    }

    /// Number of stumps per fold.
    pub fn iterations(&self) -> usize {
        self.folds.iter().map(|f| f.stumps.len()).min().unwrap_or(0)
    }

    /// Per-fold objective trace; empty for deserialized models.
    pub fn traces(&self) -> &[Vec<IterationRecord>] {
        &self.traces
    }

    pub fn warnings(&self) -> &[FitWarning] {
        &self.warnings
    }

    fn check_columns(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.n_features {
            return invalid(format!(
                "model was trained on {} regressors, got {}",
                self.n_features,
                x.ncols()
            ));
        }
        Ok(())
    }

    /// Prediction of fold `k` alone.
    pub fn predict_fold(&self, k: usize, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_columns(x)?;
        let fold = self
            .folds
            .get(k)
            .ok_or_else(|| Error::InvalidArgument(format!("no fold {k}")))?;
        let upto = fold.stumps.len();
        Ok(DVector::from_fn(x.nrows(), |i, _| fold.eval_row(x, i, self.config.nu, upto)))
    }

    /// Fold-averaged ensemble prediction.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_columns(x)?;
        let k = self.folds.len() as f64;
        Ok(DVector::from_fn(x.nrows(), |i, _| {
            self.folds
                .iter()
                .map(|f| f.eval_row(x, i, self.config.nu, f.stumps.len()))
                .sum::<f64>()
                / k
        }))
    }

    /// Predictions of the first `m` iterations for every `m` in `grid`
    /// (ascending), computed in one pass. Each entry equals
    /// `self.truncated(m).predict(x)` exactly.
    pub fn predict_path(&self, x: &DMatrix<f64>, grid: &[usize]) -> Result<Vec<DVector<f64>>> {
        self.check_columns(x)?;
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("prediction grid must be strictly increasing");
        }
        let n = x.nrows();
        let nu = self.config.nu;
        let mut acc: Vec<Vec<f64>> = self.folds.iter().map(|f| vec![f.intercept; n]).collect();
        let mut done = 0;
        let mut out = Vec::with_capacity(grid.len());
        for &m in grid {
            for (fold, a) in self.folds.iter().zip(acc.iter_mut()) {
                let stop = m.min(fold.stumps.len());
                for s in fold.stumps.get(done.min(stop)..stop).unwrap_or(&[]) {
                    for (i, v) in a.iter_mut().enumerate() {
                        *v += nu * s.eval_row(x, i);
                    }
                }
            }
            done = m;
            let k = self.folds.len() as f64;
            out.push(DVector::from_fn(n, |i, _| acc.iter().map(|a| a[i]).sum::<f64>() / k));
        }
        Ok(out)
    }

    /// The model after its first `m` iterations.
    pub fn truncated(&self, m: usize) -> BoostIVModel {
        let mut out = self.clone();
        for f in &mut out.folds {
            f.stumps.truncate(m);
        }
        for t in &mut out.traces {
            t.truncate(m);
        }
        out.config.iterations = m.min(self.config.iterations);
        out
    }

    /// Fold-averaged `m`-th basis function `(1/K) Σ_k φ(x; θ_m^k)`
    /// (1-based `m`, unshrunk).
    pub fn averaged_basis(&self, m: usize, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_columns(x)?;
        if m == 0 || m > self.iterations() {
            return invalid(format!("basis index {m} out of range 1..={}", self.iterations()));
        }
        let k = self.folds.len() as f64;
        Ok(DVector::from_fn(x.nrows(), |i, _| {
            self.folds.iter().map(|f| f.stumps[m - 1].eval_row(x, i)).sum::<f64>() / k
        }))
    }
}

enum Stage {
    /// `H` fixed for the whole run.
    Fixed(ProjectedSplitSearch),
    /// `H` rebuilt from the previous stump every iteration.
    Refit(Box<RefitStage>),
}

struct RefitStage {
    target: FirstStageTarget,
    spec: InstrumentLearnerSpec,
    z_eval: DMatrix<f64>,
    z_train: DMatrix<f64>,
    x_train: DMatrix<f64>,
    y_train: DVector<f64>,
    /// Current structural fit of this fold evaluated on the training rows.
    fit_train: DVector<f64>,
    search: ProjectedSplitSearch,
}

struct FoldState {
    x: DMatrix<f64>,
    residual: DVector<f64>,
    stage: Stage,
    stumps: Vec<StumpBasis>,
    trace: Vec<IterationRecord>,
}

/// Incremental boosting driver. Advancing a trainer to `m` iterations and
/// snapshotting it gives exactly the model a fresh fit with `iterations = m`
/// would return.
pub struct BoostTrainer {
    config: BoostConfig,
    n_features: usize,
    intercept: f64,
    folds: Vec<FoldState>,
    frozen: bool,
    warnings: Vec<FitWarning>,
}

impl BoostTrainer {
    /// Single-fold trainer using every observation for both stages.
    pub fn naive(data: &Dataset, config: &BoostConfig) -> Result<Self> {
        config.validate()?;
        let all: Vec<usize> = (0..data.n()).collect();
        Self::build(data, config, vec![(all.clone(), all)])
    }

    /// Cross-fitted trainer with a seeded partition into `config.folds` folds.
    pub fn crossfit(data: &Dataset, config: &BoostConfig) -> Result<Self> {
        config.validate()?;
        if config.folds < 2 || config.folds * 2 > data.n() {
            return invalid(format!(
                "cross-fitting needs 2 <= K <= n/2, got K = {}, n = {}",
                config.folds,
                data.n()
            ));
        }
        let folds = partition(data.n(), config.folds, config.seed)?;
        Self::with_folds(data, config, &folds)
    }

    /// Cross-fitted trainer over an explicit partition.
    pub fn with_folds(data: &Dataset, config: &BoostConfig, folds: &FoldAssignment) -> Result<Self> {
        config.validate()?;
        if folds.labels().len() != data.n() {
            return invalid("fold assignment length differs from the sample size");
        }
        let parts = (0..folds.k())
            .map(|k| (folds.indices(k), folds.complement(k)))
            .collect();
        Self::build(data, config, parts)
    }

    fn build(data: &Dataset, config: &BoostConfig, parts: Vec<(Vec<usize>, Vec<usize>)>) -> Result<Self> {
        let intercept = data.y().mean();
        let frozen = data.y().iter().all(|&v| v == data.y()[0]);
        let mut folds = Vec::with_capacity(parts.len());
        for (eval, train) in parts {
            if eval.len() < 2 {
                return invalid(format!("fold with {} rows is too small to fit stumps", eval.len()));
            }
            let ev = data.subset(&eval);
            let tr = data.subset(&train);
            let residual = ev.y().add_scalar(-intercept);
            let spec = config.instruments;
            let initial = match spec.target {
                FirstStageTarget::SieveBasis | FirstStageTarget::ReducedForm => spec,
                // the first iteration has no previous stump: start from the reduced form
                FirstStageTarget::PreviousBasis | FirstStageTarget::Optimal => InstrumentLearnerSpec {
                    target: FirstStageTarget::ReducedForm,
                    ..spec
                },
            };
            let fitted = fit_instrument_learner(tr.z(), tr.x(), &initial)?;
            let h = instrument_features(&fitted, ev.z())?;
            let search = ProjectedSplitSearch::new(ev.x(), &h)?;
            let stage = match spec.target {
                FirstStageTarget::SieveBasis | FirstStageTarget::ReducedForm => Stage::Fixed(search),
                target => Stage::Refit(Box::new(RefitStage {
                    target,
                    spec,
                    z_eval: ev.z().clone(),
                    fit_train: DVector::from_element(tr.n(), intercept),
                    z_train: tr.z().clone(),
                    x_train: tr.x().clone(),
                    y_train: tr.y().clone(),
                    search,
                })),
            };
            folds.push(FoldState {
                x: ev.x().clone(),
                residual,
                stage,
                stumps: Vec::new(),
                trace: Vec::new(),
            });
        }
        let warnings = if frozen { vec![FitWarning::ConstantOutcome] } else { Vec::new() };
        Ok(BoostTrainer {
            config: *config,
            n_features: data.dx(),
            intercept,
            folds,
            frozen,
            warnings,
        })
    }

    /// Iterations completed so far.
    pub fn iteration(&self) -> usize {
        self.folds[0].stumps.len()
    }

    /// Runs one boosting iteration on every fold.
    pub fn step(&mut self) -> Result<()> {
        if self.frozen {
            return Ok(());
        }
        let nu = self.config.nu;
        for fold in &mut self.folds {
            if let Stage::Refit(stage) = &mut fold.stage {
                if let Some(prev) = fold.stumps.last() {
                    stage.rebuild(prev, &fold.x)?;
                }
            }
            let search = match &fold.stage {
                Stage::Fixed(s) => s,
                Stage::Refit(stage) => &stage.search,
            };
            let fit = search.best(&fold.residual)?;
            fold.trace.push(IterationRecord {
                loss: fit.loss,
                residual_ss: fold.residual.norm_squared(),
            });
            let stump = match self.config.leaf_cap {
                Some(cap) => fit.stump.capped(cap),
                None => fit.stump,
            };
            for i in 0..fold.residual.len() {
                fold.residual[i] -= nu * stump.eval_row(&fold.x, i);
            }
            if let Stage::Refit(stage) = &mut fold.stage {
                for i in 0..stage.fit_train.len() {
                    stage.fit_train[i] += nu * stump.eval_row(&stage.x_train, i);
                }
            }
            fold.stumps.push(stump);
        }
        Ok(())
    }

    /// Steps until `m` iterations are done (no-op if already there).
    pub fn advance_to(&mut self, m: usize) -> Result<()> {
        while !self.frozen && self.iteration() < m {
            self.step()?;
        }
        Ok(())
    }

    /// Snapshot of the current ensemble.
    pub fn model(&self) -> BoostIVModel {
        BoostIVModel {
            folds: self
                .folds
                .iter()
                .map(|f| FoldModel {
                    intercept: self.intercept,
                    stumps: f.stumps.clone(),
                })
                .collect(),
            n_features: self.n_features,
            config: BoostConfig {
                iterations: self.iteration(),
                ..self.config
            },
            traces: self.folds.iter().map(|f| f.trace.clone()).collect(),
            warnings: self.warnings.clone(),
        }
    }
}

impl RefitStage {
    fn rebuild(&mut self, prev: &StumpBasis, x_eval: &DMatrix<f64>) -> Result<()> {
        let h = match self.target {
            FirstStageTarget::PreviousBasis => {
                let target = DMatrix::from_fn(self.x_train.nrows(), 1, |i, _| prev.eval_row(&self.x_train, i));
                let spec = InstrumentLearnerSpec {
                    target: FirstStageTarget::ReducedForm,
                    ..self.spec
                };
                let fitted = fit_instrument_learner(&self.z_train, &target, &spec)?;
                instrument_features(&fitted, &self.z_eval)?
            }
            FirstStageTarget::Optimal => {
                let residuals = &self.y_train - &self.fit_train;
                let opt = OptimalInstruments::fit(&self.z_train, &self.x_train, prev, &residuals, &self.spec)?;
                opt.features(&self.z_eval)?
            }
            FirstStageTarget::SieveBasis | FirstStageTarget::ReducedForm => unreachable!("fixed stage"),
        };
        self.search = ProjectedSplitSearch::new(x_eval, &h)?;
        Ok(())
    }
}

/// Boosting with both stages on the full sample.
pub fn fit_naive(data: &Dataset, config: &BoostConfig) -> Result<BoostIVModel> {
    let mut trainer = BoostTrainer::naive(data, config)?;
    trainer.advance_to(config.iterations)?;
    Ok(trainer.model())
}

/// Cross-fitted boosting: the first stage of each fold is learned on the
/// remaining folds; predictions average the fold ensembles.
pub fn fit_crossfit(data: &Dataset, config: &BoostConfig) -> Result<BoostIVModel> {
    let mut trainer = BoostTrainer::crossfit(data, config)?;
    trainer.advance_to(config.iterations)?;
    Ok(trainer.model())
}

/// Cross-fitted boosting over a caller-supplied partition.
pub fn fit_crossfit_with_folds(data: &Dataset, config: &BoostConfig, folds: &FoldAssignment) -> Result<BoostIVModel> {
    let mut trainer = BoostTrainer::with_folds(data, config, folds)?;
    trainer.advance_to(config.iterations)?;
    Ok(trainer.model())
}

/// First stage of the optimal-instrument variant: `D̂(z)` regresses the
/// derivative proxies of the previous stump (its left and right indicators)
/// on the instruments, `σ̂²` is the mean squared residual.
#[derive(Debug, Clone)]
pub struct OptimalInstruments {
    fitted: crate::learners::FittedInstruments,
    sigma2: f64,
}

impl OptimalInstruments {
    pub fn fit(
        z: &DMatrix<f64>,
        x: &DMatrix<f64>,
        prev: &StumpBasis,
        residuals: &DVector<f64>,
        spec: &InstrumentLearnerSpec,
    ) -> Result<Self> {
        if z.nrows() != x.nrows() || z.nrows() != residuals.len() {
            return invalid("optimal instruments: inputs differ in length");
        }
        if prev.feature >= x.ncols() {
            return invalid("previous stump splits on a missing regressor");
        }
        let sigma2 = residuals.norm_squared() / residuals.len() as f64;
        if sigma2.is_nan() || sigma2 <= 0.0 {
            return Err(Error::DegenerateScale("residual variance is zero".into()));
        }
        let (left, right) = prev.indicators(x);
        let mut targets = DMatrix::zeros(x.nrows(), 2);
        targets.set_column(0, &left);
        targets.set_column(1, &right);
        let spec = InstrumentLearnerSpec {
            target: FirstStageTarget::ReducedForm,
            ..*spec
        };
        let fitted = fit_instrument_learner(z, &targets, &spec)?;
        Ok(OptimalInstruments { fitted, sigma2 })
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// `H = [1, D̂(z) / σ̂²]`.
    pub fn features(&self, z: &DMatrix<f64>) -> Result<InstrumentFeatures> {
        let raw = instrument_features(&self.fitted, z)?;
        let scaled = raw.h().columns(1, raw.q() - 1).map(|v| v / self.sigma2);
        InstrumentFeatures::with_intercept(&scaled)
    }
}

/// Optimal-instrument features on a single sample from the last of
/// `prev_bases`.
pub fn optimal_instrument_features(
    z: &DMatrix<f64>,
    x: &DMatrix<f64>,
    prev_bases: &[StumpBasis],
    residuals: &DVector<f64>,
    spec: &InstrumentLearnerSpec,
) -> Result<InstrumentFeatures> {
    let Some(prev) = prev_bases.last() else {
        return invalid("optimal instruments need a previous iteration");
    };
    OptimalInstruments::fit(z, x, prev, residuals, spec)?.features(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::InstrumentMode;
    use crate::linalg::project;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn step_data(values: &[f64]) -> Dataset {
        let y: Vec<f64> = values.iter().map(|&v| f64::from(u8::from(v > 0.0))).collect();
        let rows: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
        Dataset::from_rows(&y, &rows, &rows).unwrap()
    }

    fn endogenous(seed: u64, n: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = Vec::new();
        let mut x = Vec::new();
        let mut z = Vec::new();
        for _ in 0..n {
            let z1: f64 = rng.random_range(-2.0..2.0);
            let z2: f64 = rng.random_range(-2.0..2.0);
            let e: f64 = rng.random_range(-1.0..1.0);
            let xv = z1 + 0.5 * z2 + e;
            y.push(xv.abs() + 0.5 * e);
            x.push(vec![xv]);
            z.push(vec![z1, z2]);
        }
        Dataset::from_rows(&y, &x, &z).unwrap()
    }

    fn exog_config(nu: f64, m: usize) -> BoostConfig {
        BoostConfig {
            iterations: m,
            nu,
            instruments: InstrumentLearnerSpec::sieve_basis(1),
            ..BoostConfig::default()
        }
    }

    #[test]
    fn intercept_only_predicts_mean() {
        let data = endogenous(1, 50);
        let model = fit_naive(&data, &BoostConfig::default().with_iterations(3)).unwrap().truncated(0);
        let p = model.predict(data.x()).unwrap();
        assert!(p.iter().all(|&v| v == data.y().mean()));
    }

    #[test]
    fn single_projected_stump_recovers_step() {
        // x takes two values, so H = [1, x] spans both split indicators.
        let data = step_data(&[-1.0, 1.0, 1.0, -1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0]);
        let model = fit_naive(&data, &exog_config(1.0, 1)).unwrap();
        let fitted = model.predict(data.x()).unwrap();
        let mse = (fitted - data.y()).norm_squared() / data.n() as f64;
        assert!(mse <= 1e-10, "mse {mse}");
    }

    #[test]
    fn half_step_is_partial() {
        let data = step_data(&[-1.0, 1.0, 1.0, -1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0]);
        let resid = |nu: f64| {
            let m = fit_naive(&data, &exog_config(nu, 1)).unwrap();
            (data.y() - m.predict(data.x()).unwrap()).norm()
        };
        let initial = data.y().add_scalar(-data.y().mean()).norm();
        let half = resid(0.5);
        assert!(half < initial && half > resid(1.0));
        // residual halves exactly: r1 = (1 - nu) r0
        assert_abs_diff_eq!(half, 0.5 * initial, epsilon = 1e-10);
    }

    #[test]
    fn constant_outcome_warns() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let data = Dataset::from_rows(&[2.0; 10], &rows, &rows).unwrap();
        let model = fit_naive(&data, &BoostConfig::default().with_iterations(5)).unwrap();
        assert_eq!(model.warnings(), &[FitWarning::ConstantOutcome]);
        assert_eq!(model.iterations(), 0);
        assert!(model.predict(data.x()).unwrap().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn crossfit_identical_folds_agree() {
        let half = endogenous(3, 30);
        let data = half.stack(&half).unwrap();
        let labels: Vec<usize> = (0..60).map(|i| usize::from(i >= 30)).collect();
        let folds = FoldAssignment::from_labels(labels, 2).unwrap();
        let cfg = BoostConfig { iterations: 25, ..BoostConfig::default() };
        let model = fit_crossfit_with_folds(&data, &cfg, &folds).unwrap();
        assert_eq!(model.folds()[0], model.folds()[1]);
        let probe = DMatrix::from_fn(9, 1, |i, _| i as f64 - 4.0);
        assert_eq!(model.predict(&probe).unwrap(), model.predict_fold(0, &probe).unwrap());
    }

    #[test]
    fn prediction_is_fold_mean() {
        let data = endogenous(4, 120);
        let cfg = BoostConfig { iterations: 40, folds: 3, ..BoostConfig::default() };
        let model = fit_crossfit(&data, &cfg).unwrap();
        let probe = DMatrix::from_fn(25, 1, |i, _| i as f64 * 0.3 - 3.5);
        let per: Vec<DVector<f64>> = (0..3).map(|k| model.predict_fold(k, &probe).unwrap()).collect();
        let mean = (&per[0] + &per[1] + &per[2]) / 3.0;
        assert_abs_diff_eq!(model.predict(&probe).unwrap(), mean, epsilon = 1e-12);
    }

    #[test]
    fn naive_is_single_fold() {
        let data = endogenous(5, 60);
        let model = fit_naive(&data, &BoostConfig::default().with_iterations(20)).unwrap();
        assert_eq!(model.n_folds(), 1);
        assert_eq!(model.predict(data.x()).unwrap(), model.predict_fold(0, data.x()).unwrap());
        let dup = DMatrix::from_row_slice(2, 1, &[0.7, 0.7]);
        let p = model.predict(&dup).unwrap();
        assert_eq!(p[0], p[1]);
        assert!(model.predict(&DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn crossfit_rejects_tiny_folds() {
        let data = endogenous(6, 5);
        let cfg = BoostConfig { folds: 3, ..BoostConfig::default() };
        assert!(fit_crossfit(&data, &cfg).is_err());
    }

    #[test]
    fn projected_loss_never_exceeds_zero_stump() {
        let data = endogenous(7, 200);
        for target in [FirstStageTarget::SieveBasis, FirstStageTarget::ReducedForm, FirstStageTarget::PreviousBasis, FirstStageTarget::Optimal] {
            let cfg = BoostConfig {
                iterations: 50,
                instruments: InstrumentLearnerSpec { mode: InstrumentMode::LinearSieve { degree: 2 }, target },
                ..BoostConfig::default()
            };
            let model = fit_crossfit(&data, &cfg).unwrap();
            for trace in model.traces() {
                assert_eq!(trace.len(), 50);
                assert!(trace.iter().all(|r| r.loss <= r.residual_ss), "{target:?}");
            }
        }
    }

    #[test]
    fn training_predictions_reproduced() {
        // residual after fitting equals y minus the stored model's prediction
        let data = endogenous(8, 80);
        let mut trainer = BoostTrainer::naive(&data, &BoostConfig::default()).unwrap();
        trainer.advance_to(30).unwrap();
        let model = trainer.model();
        let pred = model.predict(data.x()).unwrap();
        for i in 0..data.n() {
            assert_abs_diff_eq!(data.y()[i] - pred[i], trainer.folds[0].residual[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn prefix_path_is_bit_exact() {
        let data = endogenous(9, 150);
        let cfg = BoostConfig { iterations: 60, ..BoostConfig::default() };
        let full = fit_crossfit(&data, &cfg).unwrap();
        let grid = [1, 7, 30, 60];
        let path = full.predict_path(data.x(), &grid).unwrap();
        for (&m, p) in grid.iter().zip(&path) {
            let fresh = fit_crossfit(&data, &cfg.with_iterations(m)).unwrap();
            assert_eq!(&fresh.predict(data.x()).unwrap(), p);
            assert_eq!(fresh.folds(), full.truncated(m).folds());
        }
    }

    #[test]
    fn optimal_features_match_group_means() {
        // z ∈ {0, 1}; a degree-1 sieve on a binary instrument reproduces group means.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 400;
        let z = DMatrix::from_fn(n, 1, |i, _| (i % 2) as f64);
        let x = DMatrix::from_fn(n, 1, |i, _| rng.random_range(-1.0..1.0) + 0.6 * z[(i, 0)]);
        let resid = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let prev = StumpBasis { feature: 0, threshold: 0.0, leaf_left: 1.0, leaf_right: -1.0 };
        let spec = InstrumentLearnerSpec::reduced_form(InstrumentMode::LinearSieve { degree: 1 });
        let h = optimal_instrument_features(&z, &x, &[prev], &resid, &spec).unwrap();
        let sigma2 = resid.norm_squared() / n as f64;
        for g in 0..2 {
            let members: Vec<usize> = (0..n).filter(|&i| i % 2 == g).collect();
            let share = members.iter().filter(|&&i| x[(i, 0)] <= 0.0).count() as f64 / members.len() as f64;
            assert_abs_diff_eq!(h.h()[(members[0], 1)] * sigma2, share, epsilon = 1e-8);
            assert_abs_diff_eq!(h.h()[(members[0], 2)] * sigma2, 1.0 - share, epsilon = 1e-8);
        }
    }

    #[test]
    fn optimal_features_scale_free_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 60;
        let z = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let x = DMatrix::from_fn(n, 1, |i, _| z[(i, 0)] + rng.random_range(-0.5..0.5));
        let prev = StumpBasis { feature: 0, threshold: 0.1, leaf_left: 1.0, leaf_right: 0.0 };
        let spec = InstrumentLearnerSpec::reduced_form(InstrumentMode::LinearSieve { degree: 2 });
        let r1 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let r2 = &r1 * 3.0;
        let h1 = optimal_instrument_features(&z, &x, &[prev], &r1, &spec).unwrap();
        let h2 = optimal_instrument_features(&z, &x, &[prev], &r2, &spec).unwrap();
        let v = DVector::from_fn(n, |i, _| (i as f64).sin());
        assert_abs_diff_eq!(project(h1.h(), &v).unwrap(), project(h2.h(), &v).unwrap(), epsilon = 1e-9);
    }

    #[test]
    fn optimal_features_degenerate_cases() {
        let z = DMatrix::from_fn(10, 1, |i, _| i as f64);
        let x = z.clone();
        let spec = InstrumentLearnerSpec::reduced_form(InstrumentMode::LinearSieve { degree: 1 });
        let prev = StumpBasis { feature: 0, threshold: 100.0, leaf_left: 1.0, leaf_right: 1.0 };
        // every row falls left: D(z) is constant and H collapses to the intercept span
        let h = optimal_instrument_features(&z, &x, &[prev], &DVector::from_element(10, 1.0), &spec).unwrap();
        assert_eq!(crate::linalg::OrthoBasis::new(h.h()).unwrap().rank(), 1);
        let zero = optimal_instrument_features(&z, &x, &[prev], &DVector::zeros(10), &spec);
        assert!(matches!(zero, Err(Error::DegenerateScale(_))));
        assert!(optimal_instrument_features(&z, &x, &[], &DVector::zeros(10), &spec).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(BoostConfig { nu: 0.0, ..BoostConfig::default() }.validate().is_err());
        assert!(BoostConfig { nu: 1.5, ..BoostConfig::default() }.validate().is_err());
        assert!(BoostConfig { iterations: 0, ..BoostConfig::default() }.validate().is_err());
        assert!(BoostConfig { leaf_cap: Some(0.0), ..BoostConfig::default() }.validate().is_err());
    }

    #[test]
    fn leaf_cap_bounds_leaves() {
        let data = endogenous(12, 100);
        let cfg = BoostConfig { iterations: 30, leaf_cap: Some(0.25), ..BoostConfig::default() };
        let model = fit_crossfit(&data, &cfg).unwrap();
        for f in model.folds() {
            assert!(f.stumps.iter().all(|s| s.leaf_left.abs() <= 0.25 && s.leaf_right.abs() <= 0.25));
        }
    }

    /// Plain L2 boosting with stumps: leaves are residual means on each side.
    fn l2_boost_oracle(x: &DMatrix<f64>, y: &DVector<f64>, nu: f64, m: usize) -> DVector<f64> {
        let n = y.len();
        let mut fitted = DVector::from_element(n, y.mean());
        for _ in 0..m {
            let r = y - &fitted;
            let mut best: Option<(f64, usize, f64)> = None;
            for f in 0..x.ncols() {
                let mut values: Vec<f64> = x.column(f).iter().copied().collect();
                values.sort_by(f64::total_cmp);
                values.dedup();
                for w in values.windows(2) {
                    let t = 0.5 * (w[0] + w[1]);
                    let (mut sl, mut nl, mut sr, mut nr) = (0.0, 0.0, 0.0, 0.0);
                    for i in 0..n {
                        if x[(i, f)] <= t { sl += r[i]; nl += 1.0 } else { sr += r[i]; nr += 1.0 }
                    }
                    let (cl, cr) = (sl / nl, sr / nr);
                    let loss: f64 = (0..n)
                        .map(|i| (r[i] - if x[(i, f)] <= t { cl } else { cr }).powi(2))
                        .sum();
                    if best.is_none_or(|b| loss < b.0) {
                        best = Some((loss, f, t));
                    }
                }
            }
            let (_, f, t) = best.unwrap();
            let left: Vec<usize> = (0..n).filter(|&i| x[(i, f)] <= t).collect();
            let cl = left.iter().map(|&i| r[i]).sum::<f64>() / left.len() as f64;
            let cr = (r.sum() - cl * left.len() as f64) / (n - left.len()) as f64;
            for i in 0..n {
                fitted[i] += nu * if x[(i, f)] <= t { cl } else { cr };
            }
        }
        fitted
    }

    #[test]
    fn exogenous_case_is_l2_boosting() {
        // Five levels per feature: a quartic sieve of X spans every split indicator.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let rows: Vec<Vec<f64>> = (0..48)
            .map(|_| vec![f64::from(rng.random_range(0..5u8)), f64::from(rng.random_range(0..5u8))])
            .collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| (r[0] - 2.0).abs() + 0.5 * r[1] + rng.random_range(-0.5..0.5))
            .collect();
        let data = Dataset::from_rows(&y, &rows, &rows).unwrap();
        let cfg = BoostConfig {
            iterations: 25,
            nu: 0.3,
            instruments: InstrumentLearnerSpec::sieve_basis(4),
            ..BoostConfig::default()
        };
        let model = fit_naive(&data, &cfg).unwrap();
        let oracle = l2_boost_oracle(data.x(), data.y(), cfg.nu, cfg.iterations);
        assert_abs_diff_eq!(model.predict(data.x()).unwrap(), oracle, epsilon = 1e-8);
    }

    #[test]
    fn predictions_continuous_in_shrinkage() {
        let data = endogenous(13, 200);
        let predict = |nu: f64| {
            let cfg = BoostConfig { iterations: 20, nu, seed: RngSeed(5), ..BoostConfig::default() };
            fit_crossfit(&data, &cfg).unwrap().predict(data.x()).unwrap()
        };
        let (a, b, c) = (predict(0.05), predict(0.1), predict(0.2));
        let d = |p: &DVector<f64>, q: &DVector<f64>| (p - q).norm();
        assert!(d(&a, &b) < d(&a, &c), "{} vs {}", d(&a, &b), d(&a, &c));
        assert!(d(&b, &c) < d(&a, &c), "{} vs {}", d(&b, &c), d(&a, &c));
    }
}
