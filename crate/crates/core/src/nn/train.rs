use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{Network, Phase, Targets};
use super::optim::{adam_step, TrainConfig};
use super::real::Real;
use super::spec::Mode;
use super::NnError;
use crate::eval::metrics::{argmax2, rmse, Confusion};

/// Inputs stored contiguously (`n x input_len`) with one target each.
pub struct Examples<'a, T> {
    pub inputs: &'a [T],
    pub targets: Targets<'a>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Macro-F1 (classify) or RMSE (regress) on the validation split.
    pub val_metric: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
}

fn gather<T: Real>(inputs: &[T], len: usize, idx: &[usize], out: &mut Vec<T>) {
    out.clear();
    for &i in idx {
        out.extend_from_slice(&inputs[i * len..(i + 1) * len]);
    }
}

fn select<'a>(targets: &Targets<'_>, idx: &[usize], cls: &'a mut Vec<usize>, vals: &'a mut Vec<f64>) -> Targets<'a> {
    match targets {
        Targets::Classes(c) => {
            cls.clear();
            cls.extend(idx.iter().map(|&i| c[i]));
            Targets::Classes(cls)
        }
        Targets::Values(v) => {
            vals.clear();
            vals.extend(idx.iter().map(|&i| v[i]));
            Targets::Values(vals)
        }
    }
}

/// Predictions for the given examples: class probabilities (`n x 2`) or
/// values.
pub fn predict_indices<T: Real>(
    net: &Network<T>,
    inputs: &[T],
    idx: &[usize],
    chunk: usize,
) -> Result<Vec<T>, NnError> {
    let len = net.spec().input_len();
    let mut buf = Vec::new();
    let mut out = Vec::new();
    for part in idx.chunks(chunk.max(1)) {
        gather(inputs, len, part, &mut buf);
        out.extend(net.forward(&buf, part.len(), Phase::Infer)?.output());
    }
    Ok(out)
}

fn validation_metric<T: Real>(
    net: &Network<T>,
    data: &Examples<'_, T>,
    idx: &[usize],
    chunk: usize,
) -> Result<f64, NnError> {
    let out = predict_indices(net, data.inputs, idx, chunk)?;
    match &data.targets {
        Targets::Classes(c) => {
            let truth: Vec<usize> = idx.iter().map(|&i| c[i]).collect();
            let conf = Confusion::from_predictions(&argmax2(&out), &truth).expect("equal lengths");
            Ok(conf.macro_f1())
        }
        Targets::Values(v) => {
            let truth: Vec<f64> = idx.iter().map(|&i| v[i]).collect();
            let pred: Vec<f64> = out.iter().map(|x| x.f64()).collect();
            Ok(rmse(&pred, &truth).expect("non-empty validation split"))
        }
    }
}

/// Mini-batch Adam training. Deterministic for a given seed; keeps the
/// parameters of the best validation epoch (the last epoch without a
/// validation split).
pub fn train<T: Real>(
    net: &mut Network<T>,
    data: &Examples<'_, T>,
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainTrace, NnError> {
    cfg.validate()?;
    if train_idx.is_empty() {
        return Err(NnError::InvalidConfig("empty training split".into()));
    }
    if net.spec().mode() != Some(cfg.mode) {
        return Err(NnError::InvalidConfig(format!("network head does not match mode {}", cfg.mode)));
    }
    let len = net.spec().input_len();
    let n_total = data.inputs.len() / len;
    if data.inputs.len() != n_total * len || data.targets.len() != n_total {
        return Err(NnError::BadInput { expected: len, n: data.targets.len(), got: data.inputs.len() });
    }
    if let Some(&bad) = train_idx.iter().chain(val_idx).find(|&&i| i >= n_total) {
        return Err(NnError::InvalidConfig(format!("example index {bad} out of range")));
    }
    let higher_is_better = cfg.mode == Mode::Classify;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = train_idx.to_vec();
    let mut trace = TrainTrace::default();
    let mut best: Option<(f64, super::network::NetworkState<T>)> = None;
    let (mut buf, mut cls, mut vals) = (Vec::new(), Vec::new(), Vec::new());
    let mut batch_counter = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for part in order.chunks(cfg.batch_size) {
            gather(data.inputs, len, part, &mut buf);
            let targets = select(&data.targets, part, &mut cls, &mut vals);
            let pass = net.forward(&buf, part.len(), Phase::Train)?;
            let (loss, grads) = match net.backward(&pass, &targets, batch_counter) {
                Ok(r) => r,
                Err(NnError::NonFiniteLoss { batch }) => {
                    return Err(NnError::Diverged { epoch, batch, trace: Box::new(trace) })
                }
                Err(e) => return Err(e),
            };
            net.update_running_stats(&pass);
            adam_step(&mut net.state, &grads, cfg)?;
            loss_sum += loss * part.len() as f64;
            batch_counter += 1;
        }
        let val_metric = if val_idx.is_empty() {
            None
        } else {
            Some(validation_metric(net, data, val_idx, cfg.batch_size)?)
        };
        let record = EpochRecord { epoch, train_loss: loss_sum / order.len() as f64, val_metric };
        log::debug!("epoch {epoch}: loss {:.5}, validation {:?}", record.train_loss, val_metric);
        trace.epochs.push(record);
        if let Some(m) = val_metric {
            let improved = match &best {
                None => true,
                Some((b, _)) => (higher_is_better && m > *b) || (!higher_is_better && m < *b),
            };
            if improved {
                best = Some((m, net.state.clone()));
                trace.best_epoch = Some(epoch);
            }
        } else {
            trace.best_epoch = Some(epoch);
        }
    }
    if let Some((_, state)) = best {
        net.state = state;
    }
    Ok(trace)
}
