use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, BnCache, ConvDims, BN_MOMENTUM};
use super::real::Real;
use super::spec::{HeadKind, Layer, NetworkSpec, Shape};
use super::NnError;

/// Location of one named parameter inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamEntry {
    pub layer: usize,
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Trainable parameters, Adam moments and batchnorm running statistics.
/// Parameters, moments and gradients share one flat layout.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState<T> {
    pub params: Vec<T>,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
    pub running: Vec<Option<RunningStats<T>>>,
    pub entries: Vec<ParamEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Infer,
}

pub enum Targets<'a> {
    Classes(&'a [usize]),
    Values(&'a [f64]),
}

impl Targets<'_> {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Everything the backward pass needs from a forward pass.
pub struct ForwardPass<T> {
    pub n: usize,
    pub phase: Phase,
    /// `acts[i]` is the input of layer `i`; the last entry is the head output.
    pub acts: Vec<Vec<T>>,
    pool_args: Vec<Option<Vec<u32>>>,
    bn: Vec<Option<BnCache<T>>>,
    head: HeadKind,
}

impl<T: Real> ForwardPass<T> {
    /// Raw head output: logits or regression values.
    pub fn raw_output(&self) -> &[T] {
        self.acts.last().expect("at least one activation")
    }

    /// Class probabilities (`n x 2`) or regression values (`n`).
    pub fn output(&self) -> Vec<T> {
        match self.head {
            HeadKind::Softmax2 => kernels::softmax(self.raw_output(), 2),
            HeadKind::Linear1 => self.raw_output().to_vec(),
        }
    }

    /// Per-channel batch statistics of batchnorm layer `layer` (train phase).
    pub fn batch_stats(&self, layer: usize) -> Option<(&[T], &[T])> {
        self.bn[layer].as_ref().map(|c| (c.mean.as_slice(), c.var.as_slice()))
    }
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    spec: NetworkSpec,
    shapes: Vec<Shape>,
    /// Per layer, (first, second, end) offsets of its two parameter tensors.
    slots: Vec<Option<(usize, usize, usize)>>,
    pub state: NetworkState<T>,
}

fn map_dims(s: Shape) -> (usize, usize, usize) {
    match s {
        Shape::Map { c, h, w } => (c, h, w),
        Shape::Flat(n) => (n, 1, 1),
    }
}

impl<T: Real> Network<T> {
    /// Fresh network: fan-in scaled uniform weights, zero biases, unit
    /// batchnorm gain and zero shift.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self, NnError> {
        let shapes = spec.shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut entries = Vec::new();
        let mut running = Vec::new();
        let mut slots = Vec::new();
        for (i, layer) in spec.layers.iter().enumerate() {
            let (inp, out) = (shapes[i], shapes[i + 1]);
            let (names, shape_a, shape_b, fan_in): (_, Vec<usize>, Vec<usize>, usize) = match *layer {
                Layer::Conv { out_ch, kernel } => {
                    let (c, _, _) = map_dims(inp);
                    (("weight", "bias"), vec![out_ch, c, kernel, kernel], vec![out_ch], c * kernel * kernel)
                }
                Layer::Dense { .. } | Layer::Head(_) => {
                    let o = out.len();
                    (("weight", "bias"), vec![o, inp.len()], vec![o], inp.len())
                }
                Layer::BatchNorm => {
                    let (c, _, _) = map_dims(inp);
                    running.push(Some(RunningStats { mean: vec![T::zero(); c], var: vec![T::one(); c] }));
                    slots.push(Some((params.len(), params.len() + c, params.len() + 2 * c)));
                    entries.push(ParamEntry { layer: i, name: "gamma", shape: vec![c], offset: params.len() });
                    params.extend(std::iter::repeat_n(T::one(), c));
                    entries.push(ParamEntry { layer: i, name: "beta", shape: vec![c], offset: params.len() });
                    params.extend(std::iter::repeat_n(T::zero(), c));
                    continue;
                }
                _ => {
                    running.push(None);
                    slots.push(None);
                    continue;
                }
            };
            running.push(None);
            let limit = (6.0 / fan_in as f64).sqrt();
            let a = params.len();
            entries.push(ParamEntry { layer: i, name: names.0, shape: shape_a.clone(), offset: a });
            let na: usize = shape_a.iter().product();
            params.extend((0..na).map(|_| T::of(rng.gen_range(-limit..limit))));
            let b = params.len();
            entries.push(ParamEntry { layer: i, name: names.1, shape: shape_b.clone(), offset: b });
            params.extend(std::iter::repeat_n(T::zero(), shape_b.iter().product()));
            slots.push(Some((a, b, params.len())));
        }
        let n = params.len();
        Ok(Self {
            spec,
            shapes,
            slots,
            state: NetworkState {
                params,
                m: vec![T::zero(); n],
                v: vec![T::zero(); n],
                step: 0,
                running,
                entries,
            },
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn head(&self) -> HeadKind {
        self.spec.head().expect("validated spec has a head")
    }

    pub fn n_params(&self) -> usize {
        self.state.params.len()
    }

    pub fn param(&self, layer: usize, name: &str) -> Option<&[T]> {
        self.state
            .entries
            .iter()
            .find(|e| e.layer == layer && e.name == name)
            .map(|e| &self.state.params[e.range()])
    }

    pub fn param_mut(&mut self, layer: usize, name: &str) -> Option<&mut [T]> {
        let r = self.state.entries.iter().find(|e| e.layer == layer && e.name == name)?.range();
        Some(&mut self.state.params[r])
    }

    fn split(&self, layer: usize) -> (&[T], &[T]) {
        let (a, b, e) = self.slots[layer].expect("layer has parameters");
        (&self.state.params[a..b], &self.state.params[b..e])
    }

    pub fn forward(&self, x: &[T], n: usize, phase: Phase) -> Result<ForwardPass<T>, NnError> {
        let want = self.spec.input_len();
        if n == 0 || x.len() != n * want {
            return Err(NnError::BadInput { expected: want, n, got: x.len() });
        }
        let layers = &self.spec.layers;
        let mut acts = Vec::with_capacity(layers.len() + 1);
        acts.push(x.to_vec());
        let mut pool_args = vec![None; layers.len()];
        let mut bn = Vec::with_capacity(layers.len());
        bn.resize_with(layers.len(), || None);
        for (i, layer) in layers.iter().enumerate() {
            let (c, h, w) = map_dims(self.shapes[i]);
            let out_len = self.shapes[i + 1].len();
            let input = &acts[i];
            let mut y = vec![T::zero(); n * out_len];
            match *layer {
                Layer::Conv { out_ch, kernel } => {
                    let (wt, b) = self.split(i);
                    let d = ConvDims { n, c, h, w, out: out_ch, k: kernel };
                    kernels::conv_forward(d, input, wt, b, &mut y);
                }
                Layer::MaxPool => {
                    let mut arg = vec![0u32; y.len()];
                    kernels::pool_forward(input, n * c, h, w, &mut y, &mut arg);
                    pool_args[i] = Some(arg);
                }
                Layer::BatchNorm => {
                    let (g, b) = self.split(i);
                    match phase {
                        Phase::Train => {
                            bn[i] = Some(kernels::bn_forward_train(input, n, c, h * w, g, b, &mut y));
                        }
                        Phase::Infer => {
                            let rs = self.state.running[i].as_ref().expect("batchnorm has stats");
                            kernels::bn_forward_infer(input, n, c, h * w, g, b, &rs.mean, &rs.var, &mut y);
                        }
                    }
                }
                Layer::Relu => {
                    for (o, &v) in y.iter_mut().zip(input) {
                        *o = if v > T::zero() { v } else { T::zero() };
                    }
                }
                Layer::Flatten => y.copy_from_slice(input),
                Layer::Dense { out } => {
                    let (wt, b) = self.split(i);
                    kernels::dense_forward(input, n, c, out, wt, b, &mut y);
                }
                Layer::Head(kind) => {
                    let (wt, b) = self.split(i);
                    kernels::dense_forward(input, n, c, kind.outputs(), wt, b, &mut y);
                }
            }
            acts.push(y);
        }
        Ok(ForwardPass { n, phase, acts, pool_args, bn, head: self.head() })
    }

    /// Mean loss over the batch and its gradient for every parameter, in the
    /// flat parameter layout. `batch_index` only labels errors.
    pub fn backward(
        &self,
        pass: &ForwardPass<T>,
        targets: &Targets<'_>,
        batch_index: usize,
    ) -> Result<(f64, Vec<T>), NnError> {
        let n = pass.n;
        if targets.len() != n {
            return Err(NnError::BadTargets(format!("{} targets for {n} inputs", targets.len())));
        }
        let out = pass.raw_output();
        let inv_n = T::of(1.0 / n as f64);
        let mut loss = 0.0;
        let mut grad = vec![T::zero(); out.len()];
        match (self.head(), targets) {
            (HeadKind::Softmax2, Targets::Classes(cls)) => {
                let probs = kernels::softmax(out, 2);
                for s in 0..n {
                    let t = cls[s];
                    if t > 1 {
                        return Err(NnError::BadTargets(format!("class {t} outside {{0, 1}}")));
                    }
                    loss += kernels::cross_entropy(&out[2 * s..2 * s + 2], t).f64();
                    for k in 0..2 {
                        let y = if k == t { T::one() } else { T::zero() };
                        grad[2 * s + k] = (probs[2 * s + k] - y) * inv_n;
                    }
                }
            }
            (HeadKind::Linear1, Targets::Values(vals)) => {
                for s in 0..n {
                    let r = out[s] - T::of(vals[s]);
                    loss += (r * r).f64();
                    grad[s] = T::of(2.0) * r * inv_n;
                }
            }
            _ => return Err(NnError::BadTargets("targets do not match the head".into())),
        }
        loss /= n as f64;
        if !loss.is_finite() {
            return Err(NnError::NonFiniteLoss { batch: batch_index });
        }
        let mut grads = vec![T::zero(); self.state.params.len()];
        let layers = &self.spec.layers;
        for i in (0..layers.len()).rev() {
            let (c, h, w) = map_dims(self.shapes[i]);
            let input = &pass.acts[i];
            let need_dx = i > 0;
            let mut dx = vec![T::zero(); if need_dx { input.len() } else { 0 }];
            match layers[i] {
                Layer::Conv { out_ch, kernel } => {
                    let (a, b, e) = self.slots[i].unwrap();
                    let (gw, gb) = grads[a..e].split_at_mut(b - a);
                    let d = ConvDims { n, c, h, w, out: out_ch, k: kernel };
                    let wt = &self.state.params[a..b];
                    kernels::conv_backward(d, input, wt, &grad, gw, gb, need_dx.then_some(&mut dx[..]));
                }
                Layer::MaxPool => {
                    let arg = pass.pool_args[i].as_ref().expect("pool cache");
                    if need_dx {
                        kernels::pool_backward(&grad, arg, &mut dx);
                    }
                }
                Layer::BatchNorm => {
                    let cache = pass.bn[i].as_ref().ok_or_else(|| {
                        NnError::Spec("backward needs a train-phase forward pass".into())
                    })?;
                    let (a, b, e) = self.slots[i].unwrap();
                    let (gg, gb) = grads[a..e].split_at_mut(b - a);
                    let gamma = &self.state.params[a..b];
                    let mut tmp = vec![T::zero(); input.len()];
                    kernels::bn_backward(cache, &grad, n, c, h * w, gamma, gg, gb, &mut tmp);
                    dx = tmp;
                }
                Layer::Relu => {
                    if need_dx {
                        for ((d, &g), &v) in dx.iter_mut().zip(&grad).zip(input) {
                            *d = if v > T::zero() { g } else { T::zero() };
                        }
                    }
                }
                Layer::Flatten => {
                    if need_dx {
                        dx.copy_from_slice(&grad);
                    }
                }
                Layer::Dense { out } => {
                    let (a, b, e) = self.slots[i].unwrap();
                    let (gw, gb) = grads[a..e].split_at_mut(b - a);
                    let wt = &self.state.params[a..b];
                    kernels::dense_backward(input, &grad, n, c, out, wt, gw, gb, need_dx.then_some(&mut dx[..]));
                }
                Layer::Head(kind) => {
                    let (a, b, e) = self.slots[i].unwrap();
                    let (gw, gb) = grads[a..e].split_at_mut(b - a);
                    let wt = &self.state.params[a..b];
                    kernels::dense_backward(
                        input, &grad, n, c, kind.outputs(), wt, gw, gb, need_dx.then_some(&mut dx[..]),
                    );
                }
            }
            grad = dx;
        }
        Ok((loss, grads))
    }

    /// Folds the batch statistics of a train-phase pass into the running
    /// estimates (momentum 0.9, unbiased variance).
    pub fn update_running_stats(&mut self, pass: &ForwardPass<T>) {
        let mom = T::of(BN_MOMENTUM);
        let rest = T::one() - mom;
        for (i, cache) in pass.bn.iter().enumerate() {
            let (Some(cache), Some(rs)) = (cache, self.state.running[i].as_mut()) else { continue };
            let (_, h, w) = map_dims(self.shapes[i]);
            let m = (pass.n * h * w) as f64;
            let unbias = T::of(if m > 1.0 { m / (m - 1.0) } else { 1.0 });
            for ch in 0..rs.mean.len() {
                rs.mean[ch] = mom * rs.mean[ch] + rest * cache.mean[ch];
                rs.var[ch] = mom * rs.var[ch] + rest * cache.var[ch] * unbias;
            }
        }
    }

    /// Inference in chunks: probabilities (`n x 2`) or values (`n`).
    pub fn predict(&self, x: &[T], n: usize, chunk: usize) -> Result<Vec<T>, NnError> {
        let len = self.spec.input_len();
        if x.len() != n * len {
            return Err(NnError::BadInput { expected: len, n, got: x.len() });
        }
        let mut out = Vec::new();
        let chunk = chunk.max(1);
        for start in (0..n).step_by(chunk) {
            let m = chunk.min(n - start);
            out.extend(self.forward(&x[start * len..(start + m) * len], m, Phase::Infer)?.output());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::{build_cnn, build_cnn_for, Mode, Variant};

    fn rand_input(n: usize, len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn tiny(mode: Mode) -> Network<f64> {
        Network::new(build_cnn_for(Variant::Cnn1, mode, [1, 4, 4]), 11).unwrap()
    }

    /// Loss as a function of the flat parameters.
    fn loss_at(net: &Network<f64>, x: &[f64], n: usize, t: &Targets<'_>) -> f64 {
        let pass = net.forward(x, n, Phase::Train).unwrap();
        net.backward(&pass, t, 0).unwrap().0
    }

    fn gradient_check(mode: Mode) -> f64 {
        let mut net = tiny(mode);
        // non-zero biases and batchnorm parameters exercise every path
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for v in net.state.params.iter_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
        let n = 3;
        let x = rand_input(n, 16, 7);
        let classes = [0usize, 1, 1];
        let values = [0.5, -1.0, 2.0];
        let t = match mode {
            Mode::Classify => Targets::Classes(&classes),
            Mode::Regress => Targets::Values(&values),
        };
        let pass = net.forward(&x, n, Phase::Train).unwrap();
        let (_, grads) = net.backward(&pass, &t, 0).unwrap();
        let step = 1e-3;
        let mut worst: f64 = 0.0;
        for k in 0..net.n_params() {
            let orig = net.state.params[k];
            net.state.params[k] = orig + step;
            let up = loss_at(&net, &x, n, &t);
            net.state.params[k] = orig - step;
            let down = loss_at(&net, &x, n, &t);
            net.state.params[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = (numeric - grads[k]).abs() / numeric.abs().max(grads[k].abs()).max(1e-8);
            worst = worst.max(err);
        }
        worst
    }

    #[test]
    fn gradient_check_classify() {
        let worst = gradient_check(Mode::Classify);
        assert!(worst <= 1e-4, "max relative error {worst}");
    }

    #[test]
    fn gradient_check_regress() {
        let worst = gradient_check(Mode::Regress);
        assert!(worst <= 1e-4, "max relative error {worst}");
    }

    #[test]
    fn zero_input_gives_even_odds() {
        let net: Network<f64> = Network::new(build_cnn(Variant::Cnn1, Mode::Classify), 1).unwrap();
        let x = vec![0.0; 2 * 10 * 32 * 32];
        for phase in [Phase::Train, Phase::Infer] {
            let out = net.forward(&x, 2, phase).unwrap().output();
            for p in out {
                assert!((p - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_output_has_ln2_loss() {
        let net: Network<f64> = Network::new(build_cnn(Variant::Cnn1, Mode::Classify), 1).unwrap();
        let x = vec![0.0; 10 * 32 * 32];
        let pass = net.forward(&x, 1, Phase::Train).unwrap();
        let (loss, _) = net.backward(&pass, &Targets::Classes(&[1]), 0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_has_no_gradient() {
        let mut net = tiny(Mode::Classify);
        let head = net.spec().layers.len() - 1;
        net.param_mut(head, "weight").unwrap().fill(0.0);
        net.param_mut(head, "bias").unwrap().copy_from_slice(&[-20.0, 20.0]);
        let x = rand_input(4, 16, 3);
        let pass = net.forward(&x, 4, Phase::Train).unwrap();
        let (loss, g) = net.backward(&pass, &Targets::Classes(&[1; 4]), 0).unwrap();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(loss <= 1e-6, "{loss}");
        assert!(norm <= 1e-4, "{norm}");
    }

    #[test]
    fn duplicated_batch_matches_single_sample() {
        // without batchnorm the samples of a batch are independent
        let spec = NetworkSpec {
            layers: vec![
                Layer::Conv { out_ch: 4, kernel: 3 },
                Layer::Relu,
                Layer::MaxPool,
                Layer::Flatten,
                Layer::Head(HeadKind::Softmax2),
            ],
            input: [2, 4, 4],
        };
        let net: Network<f64> = Network::new(spec, 4).unwrap();
        let x = rand_input(1, 32, 9);
        let one = net.forward(&x, 1, Phase::Train).unwrap();
        let (l1, g1) = net.backward(&one, &Targets::Classes(&[1]), 0).unwrap();
        let x3: Vec<f64> = x.iter().cycle().take(96).copied().collect();
        let three = net.forward(&x3, 3, Phase::Train).unwrap();
        let (l3, g3) = net.backward(&three, &Targets::Classes(&[1, 1, 1]), 0).unwrap();
        assert!((l1 - l3).abs() < 1e-12);
        for (a, b) in g1.iter().zip(&g3) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let net: Network<f32> = Network::new(build_cnn(Variant::Cnn2, Mode::Regress), 8).unwrap();
        let x: Vec<f32> = rand_input(3, 10240, 2).into_iter().map(|v| v as f32).collect();
        let a = net.forward(&x, 3, Phase::Train).unwrap().output();
        let b = net.forward(&x, 3, Phase::Train).unwrap().output();
        assert_eq!(a, b);
        let again: Network<f32> = Network::new(build_cnn(Variant::Cnn2, Mode::Regress), 8).unwrap();
        assert_eq!(again.state, net.state);
    }

    #[test]
    fn input_and_target_errors() {
        let net = tiny(Mode::Classify);
        assert!(matches!(net.forward(&[0.0; 15], 1, Phase::Train), Err(NnError::BadInput { .. })));
        let pass = net.forward(&[0.0; 16], 1, Phase::Train).unwrap();
        assert!(matches!(net.backward(&pass, &Targets::Values(&[1.0]), 0), Err(NnError::BadTargets(_))));
        assert!(matches!(net.backward(&pass, &Targets::Classes(&[2]), 0), Err(NnError::BadTargets(_))));
        let mut broken = net.clone();
        let head = broken.spec().layers.len() - 1;
        broken.param_mut(head, "bias").unwrap()[0] = f64::INFINITY;
        let pass = broken.forward(&[0.0; 16], 1, Phase::Train).unwrap();
        assert!(matches!(
            broken.backward(&pass, &Targets::Classes(&[1]), 17),
            Err(NnError::NonFiniteLoss { batch: 17 })
        ));
    }

    #[test]
    fn running_stats_follow_batches() {
        let mut net = tiny(Mode::Classify);
        let x = rand_input(8, 16, 1);
        for _ in 0..200 {
            let pass = net.forward(&x, 8, Phase::Train).unwrap();
            net.update_running_stats(&pass);
        }
        let pass = net.forward(&x, 8, Phase::Train).unwrap();
        let bn = net.spec().layers.iter().position(|l| *l == Layer::BatchNorm).unwrap();
        let (mean, var) = pass.batch_stats(bn).unwrap();
        let rs = net.state.running[bn].as_ref().unwrap();
        // running variance is the unbiased estimate over 8 samples x 2 x 2
        let unbias = 32.0 / 31.0;
        for c in 0..mean.len() {
            assert!((rs.mean[c] - mean[c]).abs() < 1e-9);
            assert!((rs.var[c] - var[c] * unbias).abs() < 1e-9);
        }
    }
}
