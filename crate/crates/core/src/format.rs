//! Versioned text serialization of fitted models.
//!
//! One field per line, floats written with 17 significant digits so that
//! every value round-trips exactly. A boosting model looks like:
//!
//! ```text
//! boostiv-model 1
//! nu 1.0000000000000001e-1
//! features 1
//! folds 2
//! iterations 3
//! seed 42
//! instruments linear-sieve 3 sieve-basis
//! leaf_cap none
//! intercept 0 1.2500000000000000e0
//! intercept 1 1.2500000000000000e0
//! stumps fold,iter,feature,threshold,leaf_l,leaf_r
//! 0,1,0,5.0000000000000000e-1,-1.0000000000000000e0,2.0000000000000000e0
//! …
//! end
//! ```
//!
//! A post-processed model wraps one boosting block per outer fold:
//!
//! ```text
//! post-boostiv-model 1
//! outer_folds 2
//! outer 0
//! weights 4
//! weight 0 …
//! …
//! boostiv-model 1
//! …
//! end
//! outer 1
//! …
//! end
//! ```

use crate::boosting::{BoostConfig, BoostIVModel, FoldModel};
use crate::error::{Error, Result};
use crate::learners::{FirstStageTarget, InstrumentLearnerSpec, InstrumentMode, StumpBasis};
use crate::postprocess::{PostBoostModel, PostFold};
use crate::rng::RngSeed;
use nalgebra::DVector;

const BOOST_HEADER: &str = "boostiv-model 1";
const POST_HEADER: &str = "post-boostiv-model 1";
const STUMP_COLUMNS: &str = "stumps fold,iter,feature,threshold,leaf_l,leaf_r";

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

fn target_name(t: FirstStageTarget) -> &'static str {
    match t {
        FirstStageTarget::SieveBasis => "sieve-basis",
        FirstStageTarget::ReducedForm => "reduced-form",
        FirstStageTarget::PreviousBasis => "previous-basis",
        FirstStageTarget::Optimal => "optimal",
    }
}

fn parse_target(s: &str) -> Option<FirstStageTarget> {
    [
        FirstStageTarget::SieveBasis,
        FirstStageTarget::ReducedForm,
        FirstStageTarget::PreviousBasis,
        FirstStageTarget::Optimal,
    ]
    .into_iter()
    .find(|&t| target_name(t) == s)
}

fn write_boost(model: &BoostIVModel, out: &mut String) {
    let cfg = model.config();
    let mut line = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };
    line(BOOST_HEADER.into());
    line(format!("nu {}", float(cfg.nu)));
    line(format!("features {}", model.n_features()));
    line(format!("folds {}", model.n_folds()));
    line(format!("iterations {}", model.iterations()));
    line(format!("seed {}", cfg.seed.0));
    let spec = cfg.instruments;
    line(match spec.mode {
        InstrumentMode::LinearSieve { degree } => {
            format!("instruments linear-sieve {degree} {}", target_name(spec.target))
        }
        InstrumentMode::BoostedStumps { n_rounds, learning_rate } => format!(
            "instruments boosted-stumps {n_rounds} {} {}",
            float(learning_rate),
            target_name(spec.target)
        ),
    });
    line(match cfg.leaf_cap {
        Some(cap) => format!("leaf_cap {}", float(cap)),
        None => "leaf_cap none".into(),
    });
    for (k, fold) in model.folds().iter().enumerate() {
        line(format!("intercept {k} {}", float(fold.intercept)));
    }
    line(STUMP_COLUMNS.into());
    for (k, fold) in model.folds().iter().enumerate() {
        for (m, s) in fold.stumps.iter().enumerate() {
            line(format!(
                "{k},{},{},{},{},{}",
                m + 1,
                s.feature,
                float(s.threshold),
                float(s.leaf_left),
                float(s.leaf_right)
            ));
        }
    }
    line("end".into());
}

impl BoostIVModel {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        write_boost(self, &mut out);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);
        let model = read_boost(&mut lines)?;
        lines.finish()?;
        Ok(model)
    }
}

impl PostBoostModel {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(POST_HEADER);
        out.push('\n');
        out.push_str(&format!("outer_folds {}\n", self.outer_folds()));
        for (l, fold) in self.folds().iter().enumerate() {
            out.push_str(&format!("outer {l}\n"));
            out.push_str(&format!("weights {}\n", fold.weights.len()));
            for (j, w) in fold.weights.iter().enumerate() {
                out.push_str(&format!("weight {j} {}\n", float(*w)));
            }
            write_boost(&fold.model, &mut out);
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);
        lines.expect_line(POST_HEADER)?;
        let outer: usize = lines.keyed("outer_folds")?;
        let mut folds = Vec::with_capacity(outer);
        for l in 0..outer {
            let idx: usize = lines.keyed("outer")?;
            if idx != l {
                return Err(lines.error(format!("expected outer fold {l}, found {idx}")));
            }
            let count: usize = lines.keyed("weights")?;
            let mut weights = DVector::zeros(count);
            for j in 0..count {
                let (line_no, fields) = lines.fields("weight", 2)?;
                if fields[0] != j.to_string() {
                    return Err(format_error(line_no, format!("expected weight {j}")));
                }
                weights[j] = parse_float(line_no, &fields[1])?;
            }
            let model = read_boost(&mut lines)?;
            folds.push(PostFold { model, weights });
        }
        lines.expect_line("end")?;
        lines.finish()?;
        PostBoostModel::from_folds(folds).map_err(|e| lines.error(e.to_string()))
    }
}

fn read_boost(lines: &mut Lines<'_>) -> Result<BoostIVModel> {
    lines.expect_line(BOOST_HEADER)?;
    let nu_line = lines.fields("nu", 1)?;
    let nu = parse_float(nu_line.0, &nu_line.1[0])?;
    let features: usize = lines.keyed("features")?;
    let n_folds: usize = lines.keyed("folds")?;
    let iterations: usize = lines.keyed("iterations")?;
    let seed: u64 = lines.keyed("seed")?;
    let instruments = read_instruments(lines)?;
    let (cap_line, cap_fields) = lines.fields("leaf_cap", 1)?;
    let leaf_cap = match cap_fields[0].as_str() {
        "none" => None,
        v => Some(parse_float(cap_line, v)?),
    };
    let mut folds = Vec::with_capacity(n_folds);
    for k in 0..n_folds {
        let (line_no, fields) = lines.fields("intercept", 2)?;
        if fields[0] != k.to_string() {
            return Err(format_error(line_no, format!("expected intercept of fold {k}")));
        }
        folds.push(FoldModel {
            intercept: parse_float(line_no, &fields[1])?,
            stumps: Vec::with_capacity(iterations),
        });
    }
    lines.expect_line(STUMP_COLUMNS)?;
    for (k, fold) in folds.iter_mut().enumerate() {
        for m in 0..iterations {
            let (line_no, line) = lines.next_line()?;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(format_error(line_no, "stump records have six fields".into()));
            }
            if fields[0] != k.to_string() || fields[1] != (m + 1).to_string() {
                return Err(format_error(
                    line_no,
                    format!("expected stump {} of fold {k}", m + 1),
                ));
            }
            let feature: usize = fields[2]
                .parse()
                .map_err(|_| format_error(line_no, format!("bad feature index {:?}", fields[2])))?;
            fold.stumps.push(StumpBasis {
                feature,
                threshold: parse_float(line_no, fields[3])?,
                leaf_left: parse_float(line_no, fields[4])?,
                leaf_right: parse_float(line_no, fields[5])?,
            });
        }
    }
    lines.expect_line("end")?;
    let config = BoostConfig {
        iterations,
        nu,
        folds: n_folds,
        instruments,
        seed: RngSeed(seed),
        leaf_cap,
    };
    BoostIVModel::from_parts(folds, features, config).map_err(|e| lines.error(e.to_string()))
}

fn read_instruments(lines: &mut Lines<'_>) -> Result<InstrumentLearnerSpec> {
    let (line_no, line) = lines.next_line()?;
    let fields: Vec<&str> = line.split_whitespace().collect();
    let bad = || format_error(line_no, format!("malformed instrument line {line:?}"));
    let spec = match fields.as_slice() {
        ["instruments", "linear-sieve", degree, target] => InstrumentLearnerSpec {
            mode: InstrumentMode::LinearSieve {
                degree: degree.parse().map_err(|_| bad())?,
            },
            target: parse_target(target).ok_or_else(bad)?,
        },
        ["instruments", "boosted-stumps", rounds, rate, target] => InstrumentLearnerSpec {
            mode: InstrumentMode::BoostedStumps {
                n_rounds: rounds.parse().map_err(|_| bad())?,
                learning_rate: parse_float(line_no, rate)?,
            },
            target: parse_target(target).ok_or_else(bad)?,
        },
        _ => return Err(bad()),
    };
    Ok(spec)
}

fn format_error(line: usize, message: String) -> Error {
    Error::Format { line, message }
}

fn parse_float(line: usize, s: &str) -> Result<f64> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format_error(line, format!("expected a finite number, found {s:?}"))),
    }
}

/// Line cursor with 1-based line numbers for error messages.
struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines {
            inner: text.lines().enumerate(),
            last: 0,
        }
    }

    fn error(&self, message: String) -> Error {
        format_error(self.last, message)
    }

    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        match self.inner.next() {
            Some((i, line)) => {
                self.last = i + 1;
                Ok((i + 1, line.trim_end()))
            }
            None => Err(format_error(self.last + 1, "unexpected end of input".into())),
        }
    }

    fn expect_line(&mut self, expected: &str) -> Result<()> {
        let (line_no, line) = self.next_line()?;
        if line != expected {
            return Err(format_error(line_no, format!("expected {expected:?}, found {line:?}")));
        }
        Ok(())
    }

    /// A line `key f1 f2 …` with exactly `count` fields after the key.
    fn fields(&mut self, key: &str, count: usize) -> Result<(usize, Vec<String>)> {
        let (line_no, line) = self.next_line()?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(format_error(line_no, format!("expected {key:?} line, found {line:?}")));
        }
        let rest: Vec<String> = parts.map(str::to_owned).collect();
        if rest.len() != count {
            return Err(format_error(
                line_no,
                format!("{key:?} takes {count} field(s), found {}", rest.len()),
            ));
        }
        Ok((line_no, rest))
    }

    fn keyed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let (line_no, fields) = self.fields(key, 1)?;
        fields[0]
            .parse()
            .map_err(|_| format_error(line_no, format!("bad value for {key:?}: {:?}", fields[0])))
    }

    fn finish(&mut self) -> Result<()> {
        for (i, line) in self.inner.by_ref() {
            if !line.trim().is_empty() {
                return Err(format_error(i + 1, "trailing content after model".into()));
            }
        }
        Ok(())
    }
}
