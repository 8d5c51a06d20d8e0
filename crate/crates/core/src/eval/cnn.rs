use serde::{Deserialize, Serialize};

use super::cv::{Learner, Split};
use super::EvalError;
use crate::dataset::ExampleSet;
use crate::nn::{
    build_cnn_for, predict_indices, train, Examples, Mode, Network, Targets, TrainConfig, TrainTrace, Variant,
};

/// Per-band input standardisation, fitted on training examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl BandScaler {
    pub fn fit(set: &ExampleSet, idx: &[usize]) -> Self {
        let bands = set.dims[0];
        let plane = set.dims[1] * set.dims[2];
        let mut sum = vec![0.0f64; bands];
        let mut sq = vec![0.0f64; bands];
        for &i in idx {
            for (b, p) in set.tensor(i).chunks_exact(plane).enumerate() {
                for &v in p {
                    sum[b] += v as f64;
                    sq[b] += v as f64 * v as f64;
                }
            }
        }
        let n = (idx.len() * plane).max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let s = (q / n - m * m).max(0.0).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    /// Standardised copies of the given examples, concatenated.
    pub fn transform(&self, set: &ExampleSet, idx: &[usize]) -> Vec<f32> {
        let plane = set.dims[1] * set.dims[2];
        let mut out = Vec::with_capacity(idx.len() * set.input_len());
        for &i in idx {
            for (b, p) in set.tensor(i).chunks_exact(plane).enumerate() {
                let (m, s) = (self.mean[b], self.std[b]);
                out.extend(p.iter().map(|&v| ((v as f64 - m) / s) as f32));
            }
        }
        out
    }
}

/// Affine map between scores and the network's regression output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScale {
    pub mean: f64,
    pub std: f64,
}

impl TargetScale {
    pub const IDENTITY: TargetScale = TargetScale { mean: 0.0, std: 1.0 };

    pub fn fit(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: if var > 1e-12 { var.sqrt() } else { 1.0 } }
    }
}

/// A trained network with the scaling fitted on its training split.
#[derive(Debug, Clone)]
pub struct FittedCnn {
    pub net: Network<f32>,
    pub scaler: BandScaler,
    pub target: TargetScale,
    pub trace: TrainTrace,
}

impl FittedCnn {
    /// P(like) or predicted scores for the given examples.
    pub fn predict(&self, set: &ExampleSet, idx: &[usize], chunk: usize) -> Result<Vec<f64>, EvalError> {
        if set.dims != self.net.spec().input {
            return Err(EvalError::Config(format!(
                "examples are {:?}, network expects {:?}",
                set.dims,
                self.net.spec().input
            )));
        }
        let mut out = Vec::with_capacity(idx.len());
        let all: Vec<usize> = (0..idx.len().min(chunk.max(1))).collect();
        for part in idx.chunks(chunk.max(1)) {
            let inputs = self.scaler.transform(set, part);
            let y = predict_indices(&self.net, &inputs, &all[..part.len()], chunk)?;
            match self.net.spec().mode() {
                Some(Mode::Regress) => {
                    out.extend(y.iter().map(|&v| v as f64 * self.target.std + self.target.mean))
                }
                _ => out.extend(y.chunks_exact(2).map(|p| p[1] as f64)),
            }
        }
        Ok(out)
    }
}

/// Trains one of the reference CNNs per fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnLearner {
    pub variant: Variant,
    pub train: TrainConfig,
}

impl CnnLearner {
    pub fn new(variant: Variant, train: TrainConfig) -> Self {
        Self { variant, train }
    }

    pub fn fit(&self, set: &ExampleSet, split: &Split, mode: Mode) -> Result<FittedCnn, EvalError> {
        if split.train.is_empty() {
            return Err(EvalError::Empty("training split".into()));
        }
        let scaler = BandScaler::fit(set, &split.train);
        // compact buffer: training examples first, then validation
        let used: Vec<usize> = split.train.iter().chain(&split.val).copied().collect();
        let inputs = scaler.transform(set, &used);
        let train_idx: Vec<usize> = (0..split.train.len()).collect();
        let val_idx: Vec<usize> = (split.train.len()..used.len()).collect();
        let classes: Vec<usize> = used.iter().map(|&i| set.meta[i].class.index()).collect();
        let train_scores: Vec<f64> = split.train.iter().map(|&i| set.meta[i].score).collect();
        let target = match mode {
            Mode::Classify => TargetScale::IDENTITY,
            Mode::Regress => TargetScale::fit(&train_scores),
        };
        let z: Vec<f64> = used.iter().map(|&i| (set.meta[i].score - target.mean) / target.std).collect();
        let targets = match mode {
            Mode::Classify => Targets::Classes(&classes),
            Mode::Regress => Targets::Values(&z),
        };
        let spec = build_cnn_for(self.variant, mode, set.dims);
        let cfg = TrainConfig { mode, seed: self.train.seed.wrapping_add(split.fold as u64), ..self.train.clone() };
        let mut net = Network::<f32>::new(spec, cfg.seed)?;
        let trace = train(&mut net, &Examples { inputs: &inputs, targets }, &train_idx, &val_idx, &cfg)?;
        log::info!(
            "fold {}: best epoch {:?} of {}, validation {:?}",
            split.fold,
            trace.best_epoch,
            trace.epochs.len(),
            trace.best_epoch.and_then(|e| trace.epochs[e].val_metric)
        );
        Ok(FittedCnn { net, scaler, target, trace })
    }
}

impl Learner for CnnLearner {
    fn fit_predict(&self, set: &ExampleSet, split: &Split, mode: Mode) -> Result<Vec<f64>, EvalError> {
        self.fit(set, split, mode)?.predict(set, &split.test, self.train.batch_size)
    }
}
