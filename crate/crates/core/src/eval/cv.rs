use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{rmse, Confusion};
use super::EvalError;
use crate::dataset::{assign_folds, assign_folds_grouped, ExampleSet};
use crate::nn::Mode;

/// Indices into an example set for one fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub fold: u8,
    pub train: Vec<usize>,
    /// Held out from `train` for best-epoch selection.
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Anything that can be trained on a split and score its test examples.
/// Returns, per test example, P(like) when classifying or the predicted
/// score when regressing.
pub trait Learner {
    fn fit_predict(&self, set: &ExampleSet, split: &Split, mode: Mode) -> Result<Vec<f64>, EvalError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldGrouping {
    /// Segments assigned to folds independently.
    Example,
    /// Every subject confined to one fold.
    Subject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub k: usize,
    pub val_fraction: f64,
    pub seed: u64,
    pub mode: Mode,
    pub grouping: FoldGrouping,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { k: 5, val_fraction: 0.1, seed: 0, mode: Mode::Classify, grouping: FoldGrouping::Example }
    }
}

/// Held-out outcome of one example.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExampleResult {
    pub index: usize,
    pub fold: u8,
    pub subject: u32,
    pub video: u32,
    pub segment: u32,
    pub truth_class: usize,
    pub truth_score: f64,
    /// P(like) or the predicted score.
    pub output: f64,
}

impl ExampleResult {
    pub fn predicted_class(&self) -> usize {
        usize::from(self.output > 0.5)
    }

    pub fn is_failure(&self, mode: Mode) -> bool {
        mode == Mode::Classify && self.predicted_class() != self.truth_class
    }

    pub fn residual(&self) -> f64 {
        self.output - self.truth_score
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldResult {
    pub fold: Option<u8>,
    pub n: usize,
    pub confusion: Option<Confusion>,
    pub rmse: Option<f64>,
    pub mean_residual: Option<f64>,
}

impl FoldResult {
    fn from_results(fold: Option<u8>, mode: Mode, rs: &[&ExampleResult]) -> Result<Self, EvalError> {
        let n = rs.len();
        Ok(match mode {
            Mode::Classify => {
                let pred: Vec<usize> = rs.iter().map(|r| r.predicted_class()).collect();
                let truth: Vec<usize> = rs.iter().map(|r| r.truth_class).collect();
                FoldResult {
                    fold,
                    n,
                    confusion: Some(Confusion::from_predictions(&pred, &truth)?),
                    rmse: None,
                    mean_residual: None,
                }
            }
            Mode::Regress => {
                let pred: Vec<f64> = rs.iter().map(|r| r.output).collect();
                let truth: Vec<f64> = rs.iter().map(|r| r.truth_score).collect();
                let mean = rs.iter().map(|r| r.residual()).sum::<f64>() / n as f64;
                FoldResult { fold, n, confusion: None, rmse: Some(rmse(&pred, &truth)?), mean_residual: Some(mean) }
            }
        })
    }

    pub fn macro_f1(&self) -> Option<f64> {
        self.confusion.map(|c| c.macro_f1())
    }

    /// Macro-F1 when classifying, RMSE when regressing.
    pub fn headline(&self) -> f64 {
        self.macro_f1().or(self.rmse).unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub mode: Mode,
    pub folds: Vec<FoldResult>,
    pub pooled: FoldResult,
    /// In example-index order.
    pub results: Vec<ExampleResult>,
}

impl EvalReport {
    pub fn from_results(mode: Mode, k: usize, mut results: Vec<ExampleResult>) -> Result<Self, EvalError> {
        results.sort_by_key(|r| r.index);
        let mut folds = Vec::with_capacity(k);
        for f in 0..k as u8 {
            let rs: Vec<&ExampleResult> = results.iter().filter(|r| r.fold == f).collect();
            if rs.is_empty() {
                return Err(EvalError::EmptyFold(f));
            }
            folds.push(FoldResult::from_results(Some(f), mode, &rs)?);
        }
        let all: Vec<&ExampleResult> = results.iter().collect();
        let pooled = FoldResult::from_results(None, mode, &all)?;
        Ok(Self { mode, folds, pooled, results })
    }

    pub fn macro_f1(&self) -> Option<f64> {
        self.pooled.macro_f1()
    }

    pub fn rmse(&self) -> Option<f64> {
        self.pooled.rmse
    }

    pub fn headline(&self) -> f64 {
        self.pooled.headline()
    }
}

/// Fold id of every example: taken from the set when all are assigned,
/// otherwise drawn from the seed.
fn fold_ids(set: &ExampleSet, cfg: &CvConfig) -> Result<Vec<u8>, EvalError> {
    if let Some(ids) = set.meta.iter().map(|m| m.fold).collect::<Option<Vec<u8>>>() {
        if let Some(&bad) = ids.iter().find(|&&f| f as usize >= cfg.k) {
            return Err(EvalError::Config(format!("fold id {bad} but k = {}", cfg.k)));
        }
        return Ok(ids);
    }
    Ok(match cfg.grouping {
        FoldGrouping::Example => assign_folds(set.len(), cfg.k, cfg.seed)?,
        FoldGrouping::Subject => {
            let subjects: Vec<u32> = set.meta.iter().map(|m| m.subject).collect();
            assign_folds_grouped(&subjects, cfg.k, cfg.seed)?
        }
    })
}

/// Train/validation/test indices for every fold.
pub fn make_splits(set: &ExampleSet, cfg: &CvConfig) -> Result<Vec<Split>, EvalError> {
    if cfg.k < 2 {
        return Err(EvalError::Config(format!("need k >= 2, got {}", cfg.k)));
    }
    if !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(EvalError::Config(format!("validation fraction {} outside [0, 1)", cfg.val_fraction)));
    }
    let ids = fold_ids(set, cfg)?;
    let mut splits = Vec::with_capacity(cfg.k);
    for f in 0..cfg.k as u8 {
        let test: Vec<usize> = (0..ids.len()).filter(|&i| ids[i] == f).collect();
        if test.is_empty() {
            return Err(EvalError::EmptyFold(f));
        }
        let mut rest: Vec<usize> = (0..ids.len()).filter(|&i| ids[i] != f).collect();
        let n_val = (cfg.val_fraction * rest.len() as f64).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(f as u64 + 1)));
        rest.shuffle(&mut rng);
        let mut val = rest.split_off(rest.len() - n_val);
        rest.sort_unstable();
        val.sort_unstable();
        splits.push(Split { fold: f, train: rest, val, test });
    }
    Ok(splits)
}

/// k-fold cross-validation: each fold is scored by a learner trained on the
/// others; pooled metrics use the concatenated held-out predictions.
pub fn cross_validate(set: &ExampleSet, learner: &dyn Learner, cfg: &CvConfig) -> Result<EvalReport, EvalError> {
    if set.is_empty() {
        return Err(EvalError::Empty("example set".into()));
    }
    let splits = make_splits(set, cfg)?;
    let mut results = Vec::with_capacity(set.len());
    for split in &splits {
        log::info!(
            "fold {}: {} train, {} validation, {} test",
            split.fold,
            split.train.len(),
            split.val.len(),
            split.test.len()
        );
        let out = learner.fit_predict(set, split, cfg.mode)?;
        if out.len() != split.test.len() {
            return Err(EvalError::PredictionCount { expected: split.test.len(), got: out.len() });
        }
        for (&i, o) in split.test.iter().zip(out) {
            let m = &set.meta[i];
            results.push(ExampleResult {
                index: i,
                fold: split.fold,
                subject: m.subject,
                video: m.video,
                segment: m.segment,
                truth_class: m.class.index(),
                truth_score: m.score,
                output: o,
            });
        }
    }
    EvalReport::from_results(cfg.mode, cfg.k, results)
}
