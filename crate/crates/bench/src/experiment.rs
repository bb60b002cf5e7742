//! Replication loop: simulate, tune, fit, score.

use std::time::Instant;

use boostiv::dgp::{bias, gen_multivariate, gen_univariate, mse, MultivariateSpec, UnivariateSpec};
use boostiv::learners::InstrumentLearnerSpec;
use boostiv::postprocess::PostTrainer;
use boostiv::selection::{validation_tune, EstimatorFamily, TuningGrid};
use boostiv::{fit_crossfit, npiv_fit, npiv_predict, predict_post, BoostConfig, Dataset, RngSeed, SieveSpec};
use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::config::{Design, ExperimentConfig};
use crate::BenchError;

/// Stream for the estimators' own randomness (fold partitions).
const FIT_STREAM: u64 = 0x66_6974;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Estimator {
    Npiv,
    BoostIV,
    PostBoostIV,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [Estimator::Npiv, Estimator::BoostIV, Estimator::PostBoostIV];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Npiv => "npiv",
            Estimator::BoostIV => "boostiv",
            Estimator::PostBoostIV => "post-boostiv",
        }
    }

    pub fn from_name(name: &str) -> Option<Estimator> {
        Estimator::ALL.into_iter().find(|e| e.name() == name)
    }
}

/// One estimator on one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub estimator: Estimator,
    pub rep: usize,
    pub seed: u64,
    pub mse: Option<f64>,
    pub bias: Option<f64>,
    pub m_star: Option<usize>,
    pub wall_ms: Option<u64>,
    /// `ok`, or `failed: <error>`.
    pub status: String,
}

impl Row {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    /// Estimator-major, then replication order.
    pub rows: Vec<Row>,
}

struct Sample {
    train: Dataset,
    val: Dataset,
    test_x: DMatrix<f64>,
    truth: DVector<f64>,
}

fn simulate(design: &Design, cfg: &ExperimentConfig, seed: RngSeed) -> boostiv::Result<Sample> {
    let n = cfg.n_train + cfg.n_val;
    let draw = match *design {
        Design::Univariate { g, rho } => gen_univariate(&UnivariateSpec { g, rho, n, n_test: cfg.n_test }, seed)?,
        Design::Multivariate { design, iv, dx, dz, rho } => gen_multivariate(
            &MultivariateSpec { design, iv_type: iv, dx, dz, rho, n, n_test: cfg.n_test },
            seed,
        )?,
    };
    let (train, val, _) = draw.split_validation(cfg.n_val)?;
    Ok(Sample { train: train.data, val, test_x: train.test_x, truth: train.g_true_test })
}

/// Boosting settings for a sample of `n` rows. The automatic instrument
/// degree is sized to the rows each first-stage fit sees: `n` minus one fold.
pub fn boost_config(cfg: &ExperimentConfig, dz: usize, n: usize, seed: RngSeed) -> BoostConfig {
    let b = &cfg.boosting;
    let rows = n - n / b.folds;
    let instruments = match b.instrument_degree {
        Some(d) => InstrumentLearnerSpec::sieve_basis(d),
        None => InstrumentLearnerSpec::auto_sieve(dz, rows),
    };
    BoostConfig {
        iterations: 1,
        nu: b.nu,
        folds: b.folds,
        instruments,
        seed,
        leaf_cap: None,
    }
}

struct Fit {
    pred: DVector<f64>,
    m_star: Option<usize>,
}

fn fit_one(
    estimator: Estimator,
    cfg: &ExperimentConfig,
    design: &Design,
    grids: &(TuningGrid, Option<TuningGrid>),
    sample: &Sample,
    seed: RngSeed,
) -> boostiv::Result<Fit> {
    let n = sample.train.n();
    let seed = seed.derive(FIT_STREAM);
    let est = &cfg.estimators;
    match estimator {
        Estimator::Npiv => {
            let degree = est.npiv.as_ref().map_or(3, |n| n.degree);
            let spec = SieveSpec::for_dims(degree, sample.train.dx(), sample.train.dz(), sample.train.n())?;
            let model = npiv_fit(&sample.train, &spec)?;
            Ok(Fit { pred: npiv_predict(&model, &sample.test_x)?, m_star: None })
        }
        Estimator::BoostIV => {
            let settings = est.boostiv.clone().unwrap_or_default();
            let boost = boost_config(cfg, design.dz(), n, seed);
            let m = if settings.tune {
                validation_tune(&sample.train, &sample.val, &grids.0, EstimatorFamily::CrossFit, &boost)?.m_star
            } else {
                settings.iterations
            };
            let model = fit_crossfit(&sample.train, &boost.with_iterations(m))?;
            Ok(Fit { pred: model.predict(&sample.test_x)?, m_star: Some(m) })
        }
        Estimator::PostBoostIV => {
            let settings = est.post_boostiv.clone().unwrap_or_default();
            let grid = grids.1.as_ref().expect("post grid exists when post-boostiv is enabled");
            let family = EstimatorFamily::Post { outer_folds: cfg.boosting.outer_folds, weight_rtol: settings.weight_rtol };
            // Inner boosting runs on the complement of one outer fold.
            let inner = n - n / cfg.boosting.outer_folds;
            let boost = boost_config(cfg, design.dz(), inner, seed);
            let m = validation_tune(&sample.train, &sample.val, grid, family, &boost)?.m_star;
            let mut trainer = PostTrainer::new(&sample.train, &boost.with_iterations(m), cfg.boosting.outer_folds)?
                .with_weight_rtol(settings.weight_rtol)?;
            trainer.advance_to(m)?;
            Ok(Fit { pred: predict_post(&trainer.model()?, &sample.test_x)?, m_star: Some(m) })
        }
    }
}

fn enabled(cfg: &ExperimentConfig) -> Vec<Estimator> {
    let e = &cfg.estimators;
    let mut out = Vec::new();
    if e.npiv.is_some() {
        out.push(Estimator::Npiv);
    }
    if e.boostiv.is_some() {
        out.push(Estimator::BoostIV);
    }
    if e.post_boostiv.is_some() {
        out.push(Estimator::PostBoostIV);
    }
    out
}

fn failed(estimator: Estimator, rep: usize, seed: RngSeed, err: impl std::fmt::Display) -> Row {
    Row {
        estimator,
        rep,
        seed: seed.0,
        mse: None,
        bias: None,
        m_star: None,
        wall_ms: None,
        status: format!("failed: {err}"),
    }
}

fn run_replication(cfg: &ExperimentConfig, design: &Design, grids: &(TuningGrid, Option<TuningGrid>), rep: usize) -> Vec<Row> {
    let seed = RngSeed(cfg.base_seed).derive(rep as u64);
    let estimators = enabled(cfg);
    let sample = match simulate(design, cfg, seed) {
        Ok(s) => s,
        Err(e) => return estimators.into_iter().map(|est| failed(est, rep, seed, &e)).collect(),
    };
    estimators
        .into_iter()
        .map(|est| {
            let start = Instant::now();
            let scored = fit_one(est, cfg, design, grids, &sample, seed)
                .and_then(|fit| Ok((mse(&fit.pred, &sample.truth)?, bias(&fit.pred, &sample.truth)?, fit.m_star)));
            let elapsed = start.elapsed().as_millis() as u64;
            match scored {
                Ok((m, b, m_star)) => {
                    debug!("rep {rep} {}: mse {m:.4}", est.name());
                    Row {
                        estimator: est,
                        rep,
                        seed: seed.0,
                        mse: Some(m),
                        bias: Some(b),
                        m_star,
                        wall_ms: cfg.timing.then_some(elapsed),
                        status: "ok".into(),
                    }
                }
                Err(e) => failed(est, rep, seed, e),
            }
        })
        .collect()
}

/// Runs every replication on a pool of `jobs` threads. Rows depend only on
/// the config, never on scheduling.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentReport, BenchError> {
    cfg.validate()?;
    let design = cfg.design()?;
    let grids = (cfg.grid()?, cfg.post_grid()?);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| BenchError::Runtime(e.to_string()))?;
    info!("running {} replications on {} threads", cfg.n_reps, jobs.max(1));
    let per_rep: Vec<Vec<Row>> =
        pool.install(|| (0..cfg.n_reps).into_par_iter().map(|rep| run_replication(cfg, &design, &grids, rep)).collect());
    let mut rows: Vec<Row> = per_rep.into_iter().flatten().collect();
    rows.sort_by_key(|r| (r.estimator, r.rep));
    Ok(ExperimentReport { config: cfg.clone(), rows })
}
