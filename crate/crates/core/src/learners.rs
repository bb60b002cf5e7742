//! Weak learners for the structural function and instrument learners for
//! the first stage.
//!
//! The structural weak learner is a depth-one stump whose two leaves are
//! fitted against the *projected* indicator columns: for a split with left
//! and right indicators `u_L`, `u_R` and instrument matrix `H`, the leaves
//! solve
//!
//! ```text
//! min over (c_L, c_R) of ‖r − c_L·P_H u_L − c_R·P_H u_R‖²
//! ```
//!
//! With an orthonormal basis `Q` of span(H), `Qᵀ u_L` is a prefix sum of the
//! rows of `Q` taken in sorted feature order, so every candidate split of a
//! feature is scored from precomputed coordinates with a single dot product.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::linalg::OrthoBasis;
use crate::sieve::{PolynomialBasis, SieveRegression};

/// Cap on candidate thresholds per feature.
pub const MAX_CANDIDATES: usize = 255;

/// Relative eigenvalue cutoff for the 2 × 2 leaf systems. Eigenvalues of a
/// Gram matrix are squared singular values, so this corresponds to a
/// singular-value ratio of 1e-6.
pub const GRAM_RTOL: f64 = 1e-12;

/// A depth-one regression stump. Rows with `x[feature] <= threshold` get
/// `leaf_left`, all others `leaf_right`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StumpBasis {
    pub feature: usize,
    pub threshold: f64,
    pub leaf_left: f64,
    pub leaf_right: f64,
}

impl StumpBasis {
    #[inline]
    pub fn eval(&self, value: f64) -> f64 {
        if value <= self.threshold {
            self.leaf_left
        } else {
            self.leaf_right
        }
    }

    #[inline]
    pub fn eval_row(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        self.eval(x[(row, self.feature)])
    }

    /// Left and right indicator columns of the split.
    pub fn indicators(&self, x: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
        let left = DVector::from_fn(x.nrows(), |i, _| {
            f64::from(u8::from(x[(i, self.feature)] <= self.threshold))
        });
        let right = left.map(|v| 1.0 - v);
        (left, right)
    }

    /// Same split with both leaves clamped to `[-cap, cap]`.
    pub fn capped(mut self, cap: f64) -> Self {
        self.leaf_left = self.leaf_left.clamp(-cap, cap);
        self.leaf_right = self.leaf_right.clamp(-cap, cap);
        self
    }
}

pub fn predict_stump(stump: &StumpBasis, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    if stump.feature >= x.ncols() {
        return invalid(format!(
            "stump splits on feature {} but input has {} columns",
            stump.feature,
            x.ncols()
        ));
    }
    Ok(DVector::from_fn(x.nrows(), |i, _| stump.eval_row(x, i)))
}

/// Midpoint strictly separating `lo < hi`: `lo <= t < hi`.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let t = lo + (hi - lo) / 2.0;
    if t < hi {
        t
    } else {
        lo
    }
}

/// Candidate splits of an ascending sequence as `(left_count, threshold)`.
///
/// Every boundary between distinct consecutive values is a candidate; above
/// [`MAX_CANDIDATES`] boundaries, the boundaries closest to evenly spaced
/// rank quantiles are kept.
pub fn candidate_splits(sorted: &[f64]) -> Vec<(usize, f64)> {
    let n = sorted.len();
    let boundaries: Vec<usize> = (1..n).filter(|&p| sorted[p - 1] < sorted[p]).collect();
    let chosen: Vec<usize> = if boundaries.len() <= MAX_CANDIDATES {
        boundaries
    } else {
        let mut out: Vec<usize> = Vec::with_capacity(MAX_CANDIDATES);
        let slots = (MAX_CANDIDATES + 1) as f64;
        for k in 1..=MAX_CANDIDATES {
            let target = (k as f64 * n as f64 / slots).ceil() as usize;
            let idx = boundaries.partition_point(|&p| p < target).min(boundaries.len() - 1);
            let p = boundaries[idx];
            if out.last() != Some(&p) {
                out.push(p);
            }
        }
        out
    };
    chosen
        .into_iter()
        .map(|p| (p, midpoint(sorted[p - 1], sorted[p])))
        .collect()
}

fn sorted_order(x: &DMatrix<f64>, feature: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    order.sort_by(|&a, &b| x[(a, feature)].total_cmp(&x[(b, feature)]));
    order
}

/// Minimum-norm solution of the symmetric PSD system `[[a, b], [b, c]] w = rhs`.
fn solve_psd2(a: f64, b: f64, c: f64, r1: f64, r2: f64) -> (f64, f64) {
    let trace = a + c;
    if trace <= 0.0 {
        return (0.0, 0.0);
    }
    let radius = ((a - c) / 2.0).hypot(b);
    let lmax = trace / 2.0 + radius;
    let det = a * c - b * b;
    let lmin = det / lmax;
    if lmin > GRAM_RTOL * lmax {
        return ((c * r1 - b * r2) / det, (a * r2 - b * r1) / det);
    }
    // rank one: keep only the leading eigenvector
    let (v1, v2) = if a >= c { (lmax - c, b) } else { (b, lmax - a) };
    let norm = v1.hypot(v2);
    if norm == 0.0 {
        return (0.0, 0.0);
    }
    let (v1, v2) = (v1 / norm, v2 / norm);
    let s = (v1 * r1 + v2 * r2) / lmax;
    (s * v1, s * v2)
}

/// A fitted stump and its objective value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFit {
    pub stump: StumpBasis,
    pub loss: f64,
}

#[derive(Debug, Clone)]
struct FeatureSplits {
    thresholds: Vec<f64>,
    /// `Qᵀ u_L` per candidate, one column each.
    left: DMatrix<f64>,
    g11: Vec<f64>,
    g12: Vec<f64>,
    g22: Vec<f64>,
}

/// Split search against a fixed instrument matrix, reusable across
/// boosting iterations.
#[derive(Debug, Clone)]
pub struct ProjectedSplitSearch {
    basis: OrthoBasis,
    ones: DVector<f64>,
    features: Vec<FeatureSplits>,
    fallback_threshold: f64,
}

impl ProjectedSplitSearch {
    pub fn new(x: &DMatrix<f64>, h: &InstrumentFeatures) -> Result<Self> {
        let n = x.nrows();
        if h.h().nrows() != n {
            return invalid(format!(
                "instrument matrix has {} rows, regressors have {n}",
                h.h().nrows()
            ));
        }
        if n < 2 {
            return invalid("stump fitting needs at least two observations");
        }
        let basis = OrthoBasis::new(h.h())?;
        if basis.rank() == 0 {
            return invalid("instrument matrix has rank 0");
        }
        let q = basis.q();
        let ones = basis.coords(&DVector::from_element(n, 1.0));
        let r = basis.rank();
        let mut features = Vec::with_capacity(x.ncols());
        for f in 0..x.ncols() {
            let order = sorted_order(x, f);
            let sorted: Vec<f64> = order.iter().map(|&i| x[(i, f)]).collect();
            let splits = candidate_splits(&sorted);
            let mut left = DMatrix::zeros(r, splits.len());
            let (mut g11, mut g12, mut g22) = (Vec::new(), Vec::new(), Vec::new());
            let mut acc = DVector::zeros(r);
            let mut taken = 0;
            for (s, &(count, _)) in splits.iter().enumerate() {
                while taken < count {
                    acc += q.row(order[taken]).transpose();
                    taken += 1;
                }
                let right = &ones - &acc;
                g11.push(acc.norm_squared());
                g12.push(acc.dot(&right));
                g22.push(right.norm_squared());
                left.set_column(s, &acc);
            }
            features.push(FeatureSplits {
                thresholds: splits.iter().map(|s| s.1).collect(),
                left,
                g11,
                g12,
                g22,
            });
        }
        let fallback_threshold = x.column(0).max();
        Ok(ProjectedSplitSearch {
            basis,
            ones,
            features,
            fallback_threshold,
        })
    }

    pub fn rank(&self) -> usize {
        self.basis.rank()
    }

    /// Best stump for residual `r`; ties go to the lowest feature, then the
    /// lowest threshold. When no feature has two distinct values the zero
    /// stump is returned.
    pub fn best(&self, r: &DVector<f64>) -> Result<SplitFit> {
        if r.len() != self.basis.nrows() {
            return invalid(format!(
                "residual has length {}, expected {}",
                r.len(),
                self.basis.nrows()
            ));
        }
        let rss = r.norm_squared();
        let rho = self.basis.coords(r);
        let rho_ones = rho.dot(&self.ones);
        let mut best: Option<(usize, usize, f64, (f64, f64))> = None;
        for (f, feat) in self.features.iter().enumerate() {
            if feat.thresholds.is_empty() {
                continue;
            }
            let b_left = feat.left.tr_mul(&rho);
            for s in 0..feat.thresholds.len() {
                let b1 = b_left[s];
                let b2 = rho_ones - b1;
                let w = solve_psd2(feat.g11[s], feat.g12[s], feat.g22[s], b1, b2);
                let explained = (w.0 * b1 + w.1 * b2).max(0.0);
                let loss = rss - explained;
                if best.is_none_or(|(_, _, l, _)| loss < l) {
                    best = Some((f, s, loss, w));
                }
            }
        }
        Ok(match best {
            Some((f, s, loss, (left, right))) => SplitFit {
                stump: StumpBasis {
                    feature: f,
                    threshold: self.features[f].thresholds[s],
                    leaf_left: left,
                    leaf_right: right,
                },
                loss,
            },
            None => SplitFit {
                stump: StumpBasis {
                    feature: 0,
                    threshold: self.fallback_threshold,
                    leaf_left: 0.0,
                    leaf_right: 0.0,
                },
                loss: rss,
            },
        })
    }
}

/// Fits one stump against projected indicators; returns the stump and its
/// projected loss, which never exceeds `‖r‖²`.
pub fn fit_stump_projected(
    r: &DVector<f64>,
    x: &DMatrix<f64>,
    h: &InstrumentFeatures,
) -> Result<(StumpBasis, f64)> {
    if r.len() != x.nrows() {
        return invalid("residual and regressors differ in length");
    }
    let fit = ProjectedSplitSearch::new(x, h)?.best(r)?;
    Ok((fit.stump, fit.loss))
}

/// Ordinary least-squares stump search (no projection), used by the
/// boosted-stumps instrument learner.
#[derive(Debug, Clone)]
struct PlainSplitSearch {
    orders: Vec<Vec<usize>>,
    splits: Vec<Vec<(usize, f64)>>,
}

impl PlainSplitSearch {
    fn new(x: &DMatrix<f64>) -> Self {
        let mut orders = Vec::new();
        let mut splits = Vec::new();
        for f in 0..x.ncols() {
            let order = sorted_order(x, f);
            let sorted: Vec<f64> = order.iter().map(|&i| x[(i, f)]).collect();
            splits.push(candidate_splits(&sorted));
            orders.push(order);
        }
        PlainSplitSearch { orders, splits }
    }

    fn best(&self, r: &DVector<f64>) -> Option<StumpBasis> {
        let n = r.len() as f64;
        let total: f64 = r.sum();
        let mut best: Option<(f64, StumpBasis)> = None;
        for (f, order) in self.orders.iter().enumerate() {
            let mut sum_left = 0.0;
            let mut taken = 0;
            for &(count, threshold) in &self.splits[f] {
                while taken < count {
                    sum_left += r[order[taken]];
                    taken += 1;
                }
                let n_left = count as f64;
                let n_right = n - n_left;
                let sum_right = total - sum_left;
                let gain = sum_left * sum_left / n_left + sum_right * sum_right / n_right;
                if best.as_ref().is_none_or(|(g, _)| gain > *g) {
                    best = Some((
                        gain,
                        StumpBasis {
                            feature: f,
                            threshold,
                            leaf_left: sum_left / n_left,
                            leaf_right: sum_right / n_right,
                        },
                    ));
                }
            }
        }
        best.map(|b| b.1)
    }
}

/// L2-boosted stumps for one target column.
#[derive(Debug, Clone, PartialEq)]
pub struct StumpEnsemble {
    pub init: f64,
    pub learning_rate: f64,
    pub stumps: Vec<StumpBasis>,
}

impl StumpEnsemble {
    fn fit(z: &DMatrix<f64>, target: &DVector<f64>, n_rounds: usize, learning_rate: f64) -> Self {
        let init = target.mean();
        let mut residual = target.add_scalar(-init);
        let search = PlainSplitSearch::new(z);
        let mut stumps = Vec::with_capacity(n_rounds);
        for _ in 0..n_rounds {
            let Some(stump) = search.best(&residual) else {
                break;
            };
            for i in 0..residual.len() {
                residual[i] -= learning_rate * stump.eval_row(z, i);
            }
            stumps.push(stump);
        }
        StumpEnsemble {
            init,
            learning_rate,
            stumps,
        }
    }

    pub fn predict(&self, z: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_fn(z.nrows(), |i, _| {
            self.stumps
                .iter()
                .fold(self.init, |acc, s| acc + self.learning_rate * s.eval_row(z, i))
        })
    }
}

/// Upper bound on the degree chosen by [`InstrumentLearnerSpec::auto_sieve`].
pub const MAX_AUTO_DEGREE: usize = 14;

/// How the first stage models instruments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InstrumentMode {
    /// Polynomial regression on the instruments of total degree `degree`.
    LinearSieve { degree: usize },
    /// L2 boosting of depth-one stumps on the instruments.
    BoostedStumps { n_rounds: usize, learning_rate: f64 },
}

/// What the first stage is fitted to, and so which columns make up `H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FirstStageTarget {
    /// `H` is the sieve basis of the instruments itself, so `P_H φ` is the
    /// sieve estimate of `E[φ(x) | z]` for every candidate stump at once.
    /// Only valid with [`InstrumentMode::LinearSieve`].
    SieveBasis,
    /// `H = [1, Ê[x_1|z], …, Ê[x_dx|z]]`, fitted once.
    ReducedForm,
    /// `H = [1, Ê[φ_{m−1}(x)|z]]`, refitted every iteration on the previous
    /// stump.
    PreviousBasis,
    /// `H = [1, D̂(z)/σ̂²]` built from the previous stump's derivative proxies.
    Optimal,
}

/// First-stage configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstrumentLearnerSpec {
    pub mode: InstrumentMode,
    pub target: FirstStageTarget,
}

impl InstrumentLearnerSpec {
    pub fn sieve_basis(degree: usize) -> Self {
        InstrumentLearnerSpec {
            mode: InstrumentMode::LinearSieve { degree },
            target: FirstStageTarget::SieveBasis,
        }
    }

    /// Sieve-basis instruments of the largest degree (at most
    /// [`MAX_AUTO_DEGREE`]) whose column count stays within a quarter of
    /// `rows`, the number of observations the split search will see.
    pub fn auto_sieve(dz: usize, rows: usize) -> Self {
        let mut degree = 1;
        while degree < MAX_AUTO_DEGREE
            && PolynomialBasis::full(dz, degree + 1).is_ok_and(|b| 4 * b.ncols() <= rows)
        {
            degree += 1;
        }
        InstrumentLearnerSpec::sieve_basis(degree)
    }

    pub fn reduced_form(mode: InstrumentMode) -> Self {
        InstrumentLearnerSpec {
            mode,
            target: FirstStageTarget::ReducedForm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            InstrumentMode::LinearSieve { degree: 0 } => {
                return invalid("linear-sieve degree must be at least 1")
            }
            InstrumentMode::BoostedStumps {
                n_rounds,
                learning_rate,
            } => {
                if n_rounds == 0 {
                    return invalid("boosted-stumps learner needs at least one round");
                }
                if !(learning_rate > 0.0 && learning_rate <= 1.0) {
                    return invalid("boosted-stumps learning rate must lie in (0, 1]");
                }
                if self.target == FirstStageTarget::SieveBasis {
                    return invalid("the sieve-basis target requires the linear-sieve mode");
                }
            }
            _ => {}
        }
        Ok(())
    }
}

impl Default for InstrumentLearnerSpec {
    fn default() -> Self {
        InstrumentLearnerSpec::sieve_basis(3)
    }
}

/// The instrument matrix `H` (n × q). Column 0 is all ones.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentFeatures {
    h: DMatrix<f64>,
}

impl InstrumentFeatures {
    pub fn new(h: DMatrix<f64>) -> Result<Self> {
        if h.ncols() == 0 || h.nrows() == 0 {
            return invalid("instrument matrix must be non-empty");
        }
        if h.column(0).iter().any(|&v| v != 1.0) {
            return invalid("first instrument column must be the intercept");
        }
        if h.iter().any(|v| !v.is_finite()) {
            return invalid("instrument matrix contains non-finite entries");
        }
        Ok(InstrumentFeatures { h })
    }

    /// Prepends the intercept to `columns`.
    pub fn with_intercept(columns: &DMatrix<f64>) -> Result<Self> {
        let h = columns.clone().insert_column(0, 1.0);
        Self::new(h)
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn q(&self) -> usize {
        self.h.ncols()
    }

    pub fn nrows(&self) -> usize {
        self.h.nrows()
    }
}

/// A fitted first-stage transformation `η̂`, applicable to new instruments.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedInstruments {
    /// Intercept only.
    Constant { dz: usize },
    /// Sieve regression of each target on the instruments.
    Sieve(SieveRegression),
    /// The standardized sieve basis itself.
    Basis(SieveRegression),
    Stumps { dz: usize, ensembles: Vec<StumpEnsemble> },
}

impl FittedInstruments {
    pub fn dz(&self) -> usize {
        match self {
            FittedInstruments::Constant { dz } | FittedInstruments::Stumps { dz, .. } => *dz,
            FittedInstruments::Sieve(s) | FittedInstruments::Basis(s) => s.basis().nvars(),
        }
    }
}

/// Fits the first stage on training instruments. `targets` holds one column
/// per quantity to predict; it is ignored by the sieve-basis target.
pub fn fit_instrument_learner(
    z_train: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    spec: &InstrumentLearnerSpec,
) -> Result<FittedInstruments> {
    spec.validate()?;
    if z_train.nrows() == 0 || z_train.ncols() == 0 {
        return invalid("instrument learner needs a non-empty training set");
    }
    let dz = z_train.ncols();
    if spec.target == FirstStageTarget::SieveBasis {
        let InstrumentMode::LinearSieve { degree } = spec.mode else {
            unreachable!("validated above");
        };
        let basis = PolynomialBasis::full(dz, degree)?;
        let empty = DMatrix::zeros(z_train.nrows(), 0);
        return Ok(FittedInstruments::Basis(SieveRegression::fit(z_train, &empty, basis)?));
    }
    if targets.nrows() != z_train.nrows() {
        return invalid(format!(
            "targets have {} rows, instruments have {}",
            targets.nrows(),
            z_train.nrows()
        ));
    }
    if targets.ncols() == 0 {
        return invalid("instrument learner needs at least one target column");
    }
    match spec.mode {
        InstrumentMode::LinearSieve { degree } => {
            let basis = PolynomialBasis::full(dz, degree)?;
            Ok(FittedInstruments::Sieve(SieveRegression::fit(z_train, targets, basis)?))
        }
        InstrumentMode::BoostedStumps {
            n_rounds,
            learning_rate,
        } => {
            let ensembles = (0..targets.ncols())
                .map(|t| StumpEnsemble::fit(z_train, &targets.column(t).into_owned(), n_rounds, learning_rate))
                .collect();
            Ok(FittedInstruments::Stumps { dz, ensembles })
        }
    }
}

/// Applies a fitted first stage: `H = [1, ĝ_1(z), …, ĝ_p(z)]`, or the
/// standardized sieve basis for [`FittedInstruments::Basis`].
pub fn instrument_features(fitted: &FittedInstruments, z: &DMatrix<f64>) -> Result<InstrumentFeatures> {
    if z.ncols() != fitted.dz() {
        return invalid(format!(
            "instrument learner was fitted on {} columns, got {}",
            fitted.dz(),
            z.ncols()
        ));
    }
    match fitted {
        FittedInstruments::Constant { .. } => InstrumentFeatures::new(DMatrix::from_element(z.nrows(), 1, 1.0)),
        FittedInstruments::Sieve(s) => InstrumentFeatures::with_intercept(&s.predict(z)?),
        FittedInstruments::Basis(s) => InstrumentFeatures::new(s.design(z)?),
        FittedInstruments::Stumps { ensembles, .. } => {
            let mut cols = DMatrix::zeros(z.nrows(), ensembles.len());
            for (t, e) in ensembles.iter().enumerate() {
                cols.set_column(t, &e.predict(z));
            }
            InstrumentFeatures::with_intercept(&cols)
        }
    }
}
