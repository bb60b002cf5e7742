//! Post-processing: relearn the weights of boosted basis functions.
//!
//! The sample is split into `L` outer folds. For each outer fold, cross-fitted
//! boosting runs on the other folds, its fold-averaged stumps are evaluated on
//! the held-out fold, and the outcome is regressed on them by least squares.
//! Predictions average the `L` weighted fits.

use nalgebra::{DMatrix, DVector};

use crate::boosting::{BoostConfig, BoostIVModel, BoostTrainer};
use crate::data::{partition, Dataset, FoldAssignment};
use crate::error::{invalid, Result};
use crate::linalg::{least_squares_rtol, RANK_RTOL};

/// Stream index used to derive the outer partition seed.
const OUTER_STREAM: u64 = 0x6f_7574_6572;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PostWarning {
    /// Outer fold `fold` has no more rows than weights.
    UnderdeterminedWeights { fold: usize, rows: usize, weights: usize },
}

/// One outer fold: the cross-fitted ensemble trained on the complement and
/// the weights `(β₀, β₁, …, β_M)` learned on the fold.
#[derive(Debug, Clone, PartialEq)]
pub struct PostFold {
    pub model: BoostIVModel,
    pub weights: DVector<f64>,
}

impl PostFold {
    /// `[1, φ̂₁(x), …, φ̂_M(x)]`.
    pub fn design(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        basis_design(&self.model, x)
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(self.design(x)? * &self.weights)
    }
}

/// Design matrix of fold-averaged basis functions, intercept first.
pub fn basis_design(model: &BoostIVModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = model.iterations();
    let mut design = DMatrix::from_element(x.nrows(), m + 1, 1.0);
    for j in 1..=m {
        design.set_column(j, &model.averaged_basis(j, x)?);
    }
    Ok(design)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostBoostModel {
    pub(crate) folds: Vec<PostFold>,
    pub(crate) warnings: Vec<PostWarning>,
}

impl PostBoostModel {
    pub fn from_folds(folds: Vec<PostFold>) -> Result<Self> {
        if folds.is_empty() {
            return invalid("a post-processed model needs at least one outer fold");
        }
        let d = folds[0].model.n_features();
        for f in &folds {
            if f.model.n_features() != d {
                return invalid("outer folds disagree on the regressor count");
            }
            if f.weights.len() != f.model.iterations() + 1 {
                return invalid("weight vector length must be the basis count plus one");
            }
        }
        Ok(PostBoostModel {
            folds,
            warnings: Vec::new(),
        })
    }

    pub fn folds(&self) -> &[PostFold] {
        &self.folds
    }

    pub fn outer_folds(&self) -> usize {
        self.folds.len()
    }

    pub fn n_features(&self) -> usize {
        self.folds[0].model.n_features()
    }

    pub fn warnings(&self) -> &[PostWarning] {
        &self.warnings
    }
}

/// Average of the outer-fold weighted fits.
pub fn predict_post(model: &PostBoostModel, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    if x.ncols() != model.n_features() {
        return invalid(format!(
            "model was trained on {} regressors, got {}",
            model.n_features(),
            x.ncols()
        ));
    }
    let mut total = DVector::zeros(x.nrows());
    for fold in &model.folds {
        total += fold.predict(x)?;
    }
    Ok(total / model.folds.len() as f64)
}

/// Incremental post-processing driver: one cross-fitted boosting trainer per
/// outer fold. Weights are refitted whenever a model is requested, so the
/// model at `m` iterations equals a fresh [`fit_post`] with `iterations = m`.
pub struct PostTrainer {
    held_out: Vec<Dataset>,
    trainers: Vec<BoostTrainer>,
    weight_rtol: f64,
}

impl PostTrainer {
    pub fn new(data: &Dataset, config: &BoostConfig, outer_folds: usize) -> Result<Self> {
        if outer_folds < 2 {
            return invalid("post-processing needs at least two outer folds");
        }
        if outer_folds > data.n() {
            return invalid(format!("{outer_folds} outer folds for {} rows", data.n()));
        }
        let folds = partition(data.n(), outer_folds, config.seed.derive(OUTER_STREAM))?;
        Self::with_folds(data, config, &folds)
    }

    /// Uses an explicit outer partition. The inner seed of each outer fold is
    /// derived from its smallest row index, so relabeling folds only permutes
    /// the fold models.
    pub fn with_folds(data: &Dataset, config: &BoostConfig, folds: &FoldAssignment) -> Result<Self> {
        config.validate()?;
        if folds.labels().len() != data.n() {
            return invalid("fold assignment length differs from the sample size");
        }
        let mut held_out = Vec::with_capacity(folds.k());
        let mut trainers = Vec::with_capacity(folds.k());
        for l in 0..folds.k() {
            let idx = folds.indices(l);
            let inner = BoostConfig {
                seed: config.seed.derive(idx[0] as u64),
                ..*config
            };
            let complement = data.subset(&folds.complement(l));
            trainers.push(BoostTrainer::crossfit(&complement, &inner)?);
            held_out.push(data.subset(&idx));
        }
        Ok(PostTrainer {
            held_out,
            trainers,
            weight_rtol: RANK_RTOL,
        })
    }

    /// Relative singular-value cutoff for the weight regression. The default
    /// is the exact minimum-norm solution; larger values drop directions
    /// that only a handful of held-out rows identify.
    pub fn with_weight_rtol(mut self, rtol: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rtol) {
            return invalid(format!("weight tolerance must lie in [0, 1), got {rtol}"));
        }
        self.weight_rtol = rtol;
        Ok(self)
    }

    pub fn advance_to(&mut self, m: usize) -> Result<()> {
        for t in &mut self.trainers {
            t.advance_to(m)?;
        }
        Ok(())
    }

    /// Fits the weights on the current bases.
    pub fn model(&self) -> Result<PostBoostModel> {
        let mut folds = Vec::with_capacity(self.trainers.len());
        let mut warnings = Vec::new();
        for (l, (trainer, fold)) in self.trainers.iter().zip(&self.held_out).enumerate() {
            let model = trainer.model();
            let design = basis_design(&model, fold.x())?;
            if fold.n() <= design.ncols() {
                warnings.push(PostWarning::UnderdeterminedWeights {
                    fold: l,
                    rows: fold.n(),
                    weights: design.ncols(),
                });
            }
            let weights = least_squares_rtol(&design, fold.y(), self.weight_rtol)?;
            folds.push(PostFold { model, weights });
        }
        Ok(PostBoostModel { folds, warnings })
    }
}

/// Post-processed boosting with `outer_folds` outer folds.
pub fn fit_post(data: &Dataset, config: &BoostConfig, outer_folds: usize) -> Result<PostBoostModel> {
    let mut trainer = PostTrainer::new(data, config, outer_folds)?;
    trainer.advance_to(config.iterations)?;
    trainer.model()
}

/// [`fit_post`] over an explicit outer partition.
pub fn fit_post_with_folds(data: &Dataset, config: &BoostConfig, folds: &FoldAssignment) -> Result<PostBoostModel> {
    let mut trainer = PostTrainer::with_folds(data, config, folds)?;
    trainer.advance_to(config.iterations)?;
    trainer.model()
}
