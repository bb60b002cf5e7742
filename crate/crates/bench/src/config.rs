//! JSON experiment configuration.
//!
//! Every field except `design` has a default:
//!
//! | field | default |
//! |---|---|
//! | `n_train` / `n_val` / `n_test` | 1000 / 500 / 1000 |
//! | `n_reps` | 20 |
//! | `base_seed` | 0 |
//! | `output` | `"bench-out"` |
//! | `timing` | `false` (the `wall_ms` column stays empty) |
//! | `design.rho` | 0.5 |
//! | `design.dx` / `design.dz` (multivariate) | 5 / 7 |
//! | `boosting.nu` / `folds` / `outer_folds` | 0.1 / 2 / 2 |
//! | `boosting.instrument_degree` | `null`: largest sieve degree with four rows per column, at most 14 |
//! | `boosting.grid` | 1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000 |
//! | `boosting.epsilon` | `null`: 1e-4 times the training outcome variance |
//! | `estimators` | all three with their defaults |
//!
//! Listing `estimators` enables only the named ones. Precedence, highest
//! first: command-line flags, the `BENCH_SEED` environment variable (seed
//! only), the config file, defaults.

use boostiv::dgp::{IvType, MultivariateDesign, StructuralFunction};
use boostiv::selection::{TuningGrid, ITERATION_BUDGET};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::BenchError;

fn default_rho() -> f64 {
    0.5
}
fn default_dx() -> usize {
    5
}
fn default_dz() -> usize {
    7
}
fn default_n_train() -> usize {
    1000
}
fn default_n_val() -> usize {
    500
}
fn default_n_test() -> usize {
    1000
}
fn default_n_reps() -> usize {
    20
}
fn default_output() -> Option<String> {
    Some("bench-out".into())
}
fn default_nu() -> f64 {
    0.1
}
fn default_folds() -> usize {
    2
}
fn default_grid() -> Vec<usize> {
    vec![1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000]
}
fn default_npiv_degree() -> usize {
    3
}
fn default_true() -> bool {
    true
}
fn default_iterations() -> usize {
    5000
}
fn default_post_grid() -> Vec<usize> {
    vec![10, 20, 50, 100, 200, 500, 1000, 2000]
}
fn default_weight_rtol() -> f64 {
    1e-2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DesignConfig {
    Univariate {
        g: String,
        #[serde(default = "default_rho")]
        rho: f64,
    },
    Multivariate {
        design: u8,
        iv: String,
        #[serde(default = "default_dx")]
        dx: usize,
        #[serde(default = "default_dz")]
        dz: usize,
        #[serde(default = "default_rho")]
        rho: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostingConfig {
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_folds")]
    pub outer_folds: usize,
    #[serde(default)]
    pub instrument_degree: Option<usize>,
    #[serde(default = "default_grid")]
    pub grid: Vec<usize>,
    #[serde(default)]
    pub epsilon: Option<f64>,
}

impl Default for BoostingConfig {
    fn default() -> Self {
        BoostingConfig {
            nu: default_nu(),
            folds: default_folds(),
            outer_folds: default_folds(),
            instrument_degree: None,
            grid: default_grid(),
            epsilon: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpivConfig {
    #[serde(default = "default_npiv_degree")]
    pub degree: usize,
}

impl Default for NpivConfig {
    fn default() -> Self {
        NpivConfig { degree: default_npiv_degree() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostIVConfig {
    /// Tune M on the validation slice over `boosting.grid`; otherwise fit
    /// `iterations` rounds.
    #[serde(default = "default_true")]
    pub tune: bool,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
}

impl Default for BoostIVConfig {
    fn default() -> Self {
        BoostIVConfig { tune: true, iterations: default_iterations() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostConfig {
    /// Tuning grid for M. Above the outer fold size the weight regression
    /// is underdetermined and relies on `weight_rtol`.
    #[serde(default = "default_post_grid")]
    pub grid: Vec<usize>,
    /// Relative singular-value cutoff for the weight regression.
    #[serde(default = "default_weight_rtol")]
    pub weight_rtol: f64,
}

impl Default for PostConfig {
    fn default() -> Self {
        PostConfig { grid: default_post_grid(), weight_rtol: default_weight_rtol() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorsConfig {
    #[serde(default)]
    pub npiv: Option<NpivConfig>,
    #[serde(default)]
    pub boostiv: Option<BoostIVConfig>,
    #[serde(default)]
    pub post_boostiv: Option<PostConfig>,
}

impl Default for EstimatorsConfig {
    fn default() -> Self {
        EstimatorsConfig {
            npiv: Some(NpivConfig::default()),
            boostiv: Some(BoostIVConfig::default()),
            post_boostiv: Some(PostConfig::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub design: DesignConfig,
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    #[serde(default = "default_n_val")]
    pub n_val: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_n_reps")]
    pub n_reps: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_output")]
    pub output: Option<String>,
    #[serde(default)]
    pub timing: bool,
    #[serde(default)]
    pub boosting: BoostingConfig,
    #[serde(default)]
    pub estimators: EstimatorsConfig,
}

/// Parsed design with library types.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Design {
    Univariate { g: StructuralFunction, rho: f64 },
    Multivariate { design: MultivariateDesign, iv: IvType, dx: usize, dz: usize, rho: f64 },
}

impl Design {
    pub fn dz(&self) -> usize {
        match *self {
            Design::Univariate { .. } => 2,
            Design::Multivariate { dz, .. } => dz,
        }
    }
}

fn constraint(field: &str, rule: impl std::fmt::Display) -> BenchError {
    BenchError::Config(format!("{field}: {rule}"))
}

impl ExperimentConfig {
    pub fn design(&self) -> Result<Design, BenchError> {
        match &self.design {
            DesignConfig::Univariate { g, rho } => {
                let g = g
                    .parse::<StructuralFunction>()
                    .map_err(|_| constraint("design.g", format!("must be one of abs, log, sin, step, got {g:?}")))?;
                if !rho.is_finite() {
                    return Err(constraint("design.rho", "must be finite"));
                }
                Ok(Design::Univariate { g, rho: *rho })
            }
            DesignConfig::Multivariate { design, iv, dx, dz, rho } => {
                let design = MultivariateDesign::from_number(*design)
                    .map_err(|_| constraint("design.design", format!("must be 1 or 2, got {design}")))?;
                let iv = iv
                    .parse::<IvType>()
                    .map_err(|_| constraint("design.iv", format!("must be linear or nonlinear, got {iv:?}")))?;
                if *dx == 0 {
                    return Err(constraint("design.dx", "must be at least 1"));
                }
                if dz < dx {
                    return Err(constraint("design.dz", format!("must be at least dx = {dx}, got {dz}")));
                }
                if rho.is_nan() || rho.abs() >= 1.0 {
                    return Err(constraint("design.rho", format!("must satisfy |rho| < 1, got {rho}")));
                }
                Ok(Design::Multivariate { design, iv, dx: *dx, dz: *dz, rho: *rho })
            }
        }
    }

    pub fn grid(&self) -> Result<TuningGrid, BenchError> {
        TuningGrid::new(self.boosting.grid.clone(), self.boosting.epsilon)
            .map_err(|e| constraint("boosting.grid", e))
    }

    pub fn post_grid(&self) -> Result<Option<TuningGrid>, BenchError> {
        self.estimators
            .post_boostiv
            .as_ref()
            .map(|p| {
                TuningGrid::new(p.grid.clone(), self.boosting.epsilon)
                    .map_err(|e| constraint("estimators.post_boostiv.grid", e))
            })
            .transpose()
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        self.design()?;
        for (field, value) in [("n_train", self.n_train), ("n_val", self.n_val), ("n_test", self.n_test), ("n_reps", self.n_reps)] {
            if value == 0 {
                return Err(constraint(field, "must be positive"));
            }
        }
        let b = &self.boosting;
        if !(b.nu > 0.0 && b.nu <= 1.0) {
            return Err(constraint("boosting.nu", format!("must lie in (0, 1], got {}", b.nu)));
        }
        if b.folds < 2 || b.folds > self.n_train / 2 {
            return Err(constraint("boosting.folds", format!("must lie in [2, n_train / 2], got {}", b.folds)));
        }
        if b.outer_folds < 2 || b.outer_folds > self.n_train {
            return Err(constraint("boosting.outer_folds", format!("must lie in [2, n_train], got {}", b.outer_folds)));
        }
        if b.instrument_degree == Some(0) {
            return Err(constraint("boosting.instrument_degree", "must be at least 1"));
        }
        if let Some(eps) = b.epsilon {
            if !(eps >= 0.0 && eps.is_finite()) {
                return Err(constraint("boosting.epsilon", format!("must be finite and non-negative, got {eps}")));
            }
        }
        self.grid()?;
        self.post_grid()?;
        let e = &self.estimators;
        if e.npiv.is_none() && e.boostiv.is_none() && e.post_boostiv.is_none() {
            return Err(constraint("estimators", "at least one estimator must be enabled"));
        }
        if e.npiv.as_ref().is_some_and(|n| n.degree == 0) {
            return Err(constraint("estimators.npiv.degree", "must be at least 1"));
        }
        if let Some(bi) = &e.boostiv {
            if bi.iterations == 0 || bi.iterations > ITERATION_BUDGET {
                return Err(constraint(
                    "estimators.boostiv.iterations",
                    format!("must lie in [1, {ITERATION_BUDGET}], got {}", bi.iterations),
                ));
            }
        }
        if let Some(p) = &e.post_boostiv {
            if !(p.weight_rtol >= 0.0 && p.weight_rtol < 1.0) {
                return Err(constraint(
                    "estimators.post_boostiv.weight_rtol",
                    format!("must lie in [0, 1), got {}", p.weight_rtol),
                ));
            }
        }
        Ok(())
    }

    /// The config as echoed into reports: everything except the output path.
    pub fn echo(&self) -> ExperimentConfig {
        ExperimentConfig { output: None, ..self.clone() }
    }
}

/// Collects dotted paths of keys in `input` that do not occur in `known`.
fn unknown_keys(input: &Value, known: &Value, path: &str, out: &mut Vec<String>) {
    if let (Value::Object(given), Value::Object(allowed)) = (input, known) {
        for (key, value) in given {
            let full = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
            match allowed.get(key) {
                Some(sub) => unknown_keys(value, sub, &full, out),
                None => out.push(full),
            }
        }
    }
}

/// Parses and validates a JSON config, applying defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, BenchError> {
    let raw: Value = serde_json::from_str(text).map_err(|e| BenchError::Config(format!("malformed JSON: {e}")))?;
    let config: ExperimentConfig =
        serde_json::from_value(raw.clone()).map_err(|e| BenchError::Config(e.to_string()))?;
    // Every field serializes (absent options as null), so the serialized
    // config lists exactly the accepted keys.
    let mut known = serde_json::to_value(&config).map_err(|e| BenchError::Config(e.to_string()))?;
    if let Value::Object(top) = &mut known {
        let full = serde_json::to_value(EstimatorsConfig::default()).map_err(|e| BenchError::Config(e.to_string()))?;
        if let (Some(Value::Object(est)), Value::Object(all)) = (top.get_mut("estimators"), full) {
            for (k, v) in all {
                if est.get(&k).is_none_or(Value::is_null) {
                    est.insert(k, v);
                }
            }
        }
    }
    let mut unknown = Vec::new();
    unknown_keys(&raw, &known, "", &mut unknown);
    if !unknown.is_empty() {
        return Err(BenchError::Config(format!("unknown keys: {}", unknown.join(", "))));
    }
    config.validate()?;
    Ok(config)
}
