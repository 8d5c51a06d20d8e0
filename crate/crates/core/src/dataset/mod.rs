//! Trials, labels, folds, the example store, the tensor container, CSV
//! interchange and the synthetic corpus generator.

pub mod csv;
pub mod etns;
pub mod synth;

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::{ElectrodeOrdering, FeatureTensor, LayoutError, TensorKind};
use crate::signalcore::{MultichannelRecording, SignalError};

pub use synth::{
    for_each_trial, synthesize, synthesize_trial, trial_scores, CouplingSpec, Profile, SynthesisPlan, TrialScores,
};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("score {0} outside [1, 9]")]
    ScoreOutOfRange(f64),
    #[error("need at least {k} examples for {k} folds, got {n}")]
    TooFewExamples { n: usize, k: usize },
    #[error("invalid synthesis plan: {0}")]
    InvalidPlan(String),
    #[error("coupling target {0} is infeasible (must be at most 0.98)")]
    InfeasibleCoupling(f64),
    #[error("{file}: {msg}")]
    File { file: String, msg: String },
    #[error("example shape {got:?} does not match the set's {expected:?}")]
    ShapeMismatch { expected: [usize; 3], got: [usize; 3] },
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Etns(#[from] etns::EtnsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    Dislike = 0,
    Like = 1,
}

impl Class {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Class {
        if i == 0 {
            Class::Dislike
        } else {
            Class::Like
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Class::Dislike => "dislike",
            Class::Like => "like",
        })
    }
}

/// Highest preference score still labelled dislike.
pub const DISLIKE_MAX_SCORE: f64 = 5.0;

/// Preference label on the 9-point scale: scores up to and including 5 are
/// dislike.
pub fn label(score: f64) -> Result<Class, DatasetError> {
    if !(1.0..=9.0).contains(&score) {
        return Err(DatasetError::ScoreOutOfRange(score));
    }
    Ok(if score <= DISLIKE_MAX_SCORE { Class::Dislike } else { Class::Like })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub recording: MultichannelRecording,
    pub subject: u32,
    pub video: u32,
    pub score: f64,
    pub valence: Option<f64>,
    pub arousal: Option<f64>,
}

impl TrialRecord {
    pub fn class(&self) -> Result<Class, DatasetError> {
        label(self.score)
    }
}

/// Per-example bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleMeta {
    pub class: Class,
    pub score: f64,
    pub valence: Option<f64>,
    pub arousal: Option<f64>,
    pub subject: u32,
    pub video: u32,
    pub segment: u32,
    pub fold: Option<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub tensor: FeatureTensor,
    pub meta: ExampleMeta,
}

/// Examples with their tensors stored contiguously, ready for training.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleSet {
    pub dims: [usize; 3],
    pub kind: TensorKind,
    pub ordering: Option<ElectrodeOrdering>,
    pub inputs: Vec<f32>,
    pub meta: Vec<ExampleMeta>,
}

impl ExampleSet {
    pub fn new(dims: [usize; 3], kind: TensorKind, ordering: Option<ElectrodeOrdering>) -> Self {
        Self { dims, kind, ordering, inputs: Vec::new(), meta: Vec::new() }
    }

    pub fn input_len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn push(&mut self, ex: LabeledExample) -> Result<(), DatasetError> {
        let got = ex.tensor.dims();
        if got != self.dims {
            return Err(DatasetError::ShapeMismatch { expected: self.dims, got });
        }
        self.inputs.extend_from_slice(&ex.tensor.values);
        self.meta.push(ex.meta);
        Ok(())
    }

    pub fn tensor(&self, i: usize) -> &[f32] {
        let l = self.input_len();
        &self.inputs[i * l..(i + 1) * l]
    }

    pub fn example(&self, i: usize) -> LabeledExample {
        LabeledExample {
            tensor: FeatureTensor {
                bands: self.dims[0],
                side: self.dims[1],
                values: self.tensor(i).to_vec(),
                kind: self.kind,
                ordering: self.ordering.clone(),
            },
            meta: self.meta[i].clone(),
        }
    }

    pub fn classes(&self) -> Vec<usize> {
        self.meta.iter().map(|m| m.class.index()).collect()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.meta.iter().map(|m| m.score).collect()
    }

    /// Re-orders every connectivity tensor in place.
    pub fn reorder(&mut self, ord: &ElectrodeOrdering) -> Result<(), DatasetError> {
        for i in 0..self.len() {
            let t = self.example(i).tensor.reordered(ord)?;
            let l = self.input_len();
            self.inputs[i * l..(i + 1) * l].copy_from_slice(&t.values);
        }
        self.ordering = Some(match &self.ordering {
            Some(prev) => prev.then(ord),
            None => ord.clone(),
        });
        Ok(())
    }

    pub fn set_folds(&mut self, folds: &[u8]) {
        assert_eq!(folds.len(), self.len());
        for (m, &f) in self.meta.iter_mut().zip(folds) {
            m.fold = Some(f);
        }
    }
}

/// Uniform random fold ids at example granularity; fold sizes differ by at
/// most one.
pub fn assign_folds(n: usize, k: usize, seed: u64) -> Result<Vec<u8>, DatasetError> {
    if k == 0 || k > u8::MAX as usize + 1 || n < k {
        return Err(DatasetError::TooFewExamples { n, k });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![0u8; n];
    for (pos, &i) in idx.iter().enumerate() {
        folds[i] = (pos % k) as u8;
    }
    Ok(folds)
}

/// Fold ids with every group (e.g. subject) confined to one fold. Groups are
/// shuffled, then dealt to the currently smallest fold.
pub fn assign_folds_grouped(groups: &[u32], k: usize, seed: u64) -> Result<Vec<u8>, DatasetError> {
    let mut ids: Vec<u32> = groups.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if k == 0 || k > u8::MAX as usize + 1 || ids.len() < k {
        return Err(DatasetError::TooFewExamples { n: ids.len(), k });
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut sizes = vec![0usize; k];
    let mut fold_of = std::collections::HashMap::new();
    for g in ids {
        let count = groups.iter().filter(|&&x| x == g).count();
        let f = (0..k).min_by_key(|&f| (sizes[f], f)).unwrap();
        sizes[f] += count;
        fold_of.insert(g, f as u8);
    }
    Ok(groups.iter().map(|g| fold_of[g]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn label_boundaries() {
        assert_eq!(label(5.0).unwrap(), Class::Dislike);
        assert_eq!(label(1.0).unwrap(), Class::Dislike);
        assert_eq!(label(9.0).unwrap(), Class::Like);
        assert_eq!(label(5.0001).unwrap(), Class::Like);
        assert!(label(0.99).is_err());
        assert!(label(9.01).is_err());
        assert!(label(f64::NAN).is_err());
    }

    #[test]
    fn fold_sizes() {
        let f = assign_folds(147_200, 5, 1).unwrap();
        for k in 0..5u8 {
            assert_eq!(f.iter().filter(|&&x| x == k).count(), 29_440);
        }
        let f = assign_folds(7, 5, 3).unwrap();
        let mut sizes: Vec<usize> = (0..5u8).map(|k| f.iter().filter(|&&x| x == k).count()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, [1, 1, 1, 2, 2]);
        assert_eq!(assign_folds(100, 5, 9).unwrap(), assign_folds(100, 5, 9).unwrap());
        assert_ne!(assign_folds(100, 5, 9).unwrap(), assign_folds(100, 5, 10).unwrap());
        assert!(assign_folds(4, 5, 0).is_err());
    }

    #[test]
    fn grouped_folds_keep_groups_together() {
        let groups: Vec<u32> = (0..400).map(|i| (i / 50) as u32).collect();
        let f = assign_folds_grouped(&groups, 4, 2).unwrap();
        for g in 0..8u32 {
            let fs: Vec<u8> = groups.iter().zip(&f).filter(|(&x, _)| x == g).map(|(_, &y)| y).collect();
            assert!(fs.iter().all(|&y| y == fs[0]));
        }
        for k in 0..4u8 {
            assert_eq!(f.iter().filter(|&&x| x == k).count(), 100);
        }
        assert!(assign_folds_grouped(&[1, 1, 2], 3, 0).is_err());
    }

    proptest! {
        #[test]
        fn folds_partition(n in 5usize..300, k in 2usize..6, seed in 0u64..1000) {
            prop_assume!(n >= k);
            let f = assign_folds(n, k, seed).unwrap();
            prop_assert_eq!(f.len(), n);
            let sizes: Vec<usize> = (0..k).map(|j| f.iter().filter(|&&x| x as usize == j).count()).collect();
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }

        #[test]
        fn labelling_is_monotone(a in 1.0f64..=9.0, b in 1.0f64..=9.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(label(lo).unwrap() <= label(hi).unwrap());
        }
    }
}
