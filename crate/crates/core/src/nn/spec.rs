use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Classify,
    Regress,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "classify" => Ok(Mode::Classify),
            "regress" => Ok(Mode::Regress),
            _ => Err(format!("unknown mode {s:?} (expected classify or regress)")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Classify => "classify",
            Mode::Regress => "regress",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Cnn1,
    Cnn2,
    Cnn3,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Cnn1, Variant::Cnn2, Variant::Cnn3];
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cnn1" => Ok(Variant::Cnn1),
            "cnn2" => Ok(Variant::Cnn2),
            "cnn3" => Ok(Variant::Cnn3),
            _ => Err(format!("unknown network {s:?} (expected cnn1, cnn2 or cnn3)")),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Cnn1 => "cnn1",
            Variant::Cnn2 => "cnn2",
            Variant::Cnn3 => "cnn3",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// Dense to two logits, softmax, cross-entropy loss.
    Softmax2,
    /// Dense to one linear output, squared-error loss.
    Linear1,
}

impl HeadKind {
    pub fn outputs(self) -> usize {
        match self {
            HeadKind::Softmax2 => 2,
            HeadKind::Linear1 => 1,
        }
    }

    pub fn mode(self) -> Mode {
        match self {
            HeadKind::Softmax2 => Mode::Classify,
            HeadKind::Linear1 => Mode::Regress,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    /// Same-padded, stride-1 convolution with a square odd kernel.
    Conv { out_ch: usize, kernel: usize },
    /// 2x2 max-pooling, stride 2.
    MaxPool,
    BatchNorm,
    Relu,
    Flatten,
    Dense { out: usize },
    Head(HeadKind),
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv { .. } => "conv",
            Layer::MaxPool => "pool",
            Layer::BatchNorm => "bn",
            Layer::Relu => "relu",
            Layer::Flatten => "flatten",
            Layer::Dense { .. } => "dense",
            Layer::Head(_) => "head",
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layer::Conv { out_ch, kernel } => write!(f, "conv {out_ch} {kernel}"),
            Layer::Dense { out } => write!(f, "dense {out}"),
            Layer::Head(HeadKind::Softmax2) => f.write_str("head softmax2"),
            Layer::Head(HeadKind::Linear1) => f.write_str("head linear1"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Map { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Map { c, h, w } => c * h * w,
            Shape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub layers: Vec<Layer>,
    /// Channels, height, width.
    pub input: [usize; 3],
}

pub const DEFAULT_INPUT: [usize; 3] = [10, 32, 32];
pub const HIDDEN_DENSE: usize = 128;

pub fn build_cnn(variant: Variant, mode: Mode) -> NetworkSpec {
    build_cnn_for(variant, mode, DEFAULT_INPUT)
}

/// Same architecture on a different input size (used for reduced checks).
pub fn build_cnn_for(variant: Variant, mode: Mode, input: [usize; 3]) -> NetworkSpec {
    use Layer::*;
    let conv = |out_ch| Conv { out_ch, kernel: 3 };
    let mut layers = match variant {
        Variant::Cnn1 => vec![conv(32), Relu, MaxPool, BatchNorm, Flatten],
        Variant::Cnn2 => vec![
            conv(32), Relu, MaxPool, BatchNorm,
            conv(64), Relu, conv(128), Relu, MaxPool, BatchNorm,
            Flatten, Dense { out: HIDDEN_DENSE }, Relu,
        ],
        Variant::Cnn3 => {
            let mut l = Vec::new();
            for k in 0..5 {
                l.extend([conv(32 << k), Relu, MaxPool, BatchNorm]);
            }
            l.extend([Flatten, Dense { out: HIDDEN_DENSE }, Relu]);
            l
        }
    };
    layers.push(Head(match mode {
        Mode::Classify => HeadKind::Softmax2,
        Mode::Regress => HeadKind::Linear1,
    }));
    NetworkSpec { layers, input }
}

impl NetworkSpec {
    pub fn input_len(&self) -> usize {
        self.input.iter().product()
    }

    pub fn head(&self) -> Option<HeadKind> {
        match self.layers.last() {
            Some(Layer::Head(h)) => Some(*h),
            _ => None,
        }
    }

    pub fn mode(&self) -> Option<Mode> {
        self.head().map(HeadKind::mode)
    }

    /// Activation shapes: entry 0 is the input, entry `i + 1` the output of
    /// layer `i`.
    pub fn shapes(&self) -> Result<Vec<Shape>, NnError> {
        let [c, h, w] = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(NnError::Spec("empty input shape".into()));
        }
        let mut cur = Shape::Map { c, h, w };
        let mut out = vec![cur];
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |msg: String| NnError::ShapeMismatch { layer: i, kind: layer.name(), msg };
            cur = match (*layer, cur) {
                (Layer::Conv { out_ch, kernel }, Shape::Map { h, w, .. }) => {
                    if kernel % 2 == 0 || out_ch == 0 {
                        return Err(bad(format!("kernel {kernel} must be odd, filters {out_ch} > 0")));
                    }
                    Shape::Map { c: out_ch, h, w }
                }
                (Layer::MaxPool, Shape::Map { c, h, w }) => {
                    if h % 2 != 0 || w % 2 != 0 {
                        return Err(bad(format!("cannot halve {h}x{w}")));
                    }
                    Shape::Map { c, h: h / 2, w: w / 2 }
                }
                (Layer::BatchNorm, s @ Shape::Map { .. }) => s,
                (Layer::Relu, s) => s,
                (Layer::Flatten, s @ Shape::Map { .. }) => Shape::Flat(s.len()),
                (Layer::Dense { out }, Shape::Flat(_)) if out > 0 => Shape::Flat(out),
                (Layer::Head(kind), Shape::Flat(_)) => {
                    if i + 1 != self.layers.len() {
                        return Err(bad("head must be the last layer".into()));
                    }
                    Shape::Flat(kind.outputs())
                }
                (_, s) => return Err(bad(format!("cannot take input {s:?}"))),
            };
            out.push(cur);
        }
        if self.head().is_none() {
            return Err(NnError::Spec("network must end with a head".into()));
        }
        Ok(out)
    }

    pub fn conv_filters(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Conv { out_ch, .. } => Some(*out_ch),
                _ => None,
            })
            .collect()
    }

    /// Spatial side after each pooling layer.
    pub fn pooled_sizes(&self) -> Result<Vec<usize>, NnError> {
        let shapes = self.shapes()?;
        Ok(self
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Layer::MaxPool)
            .filter_map(|(i, _)| match shapes[i + 1] {
                Shape::Map { h, .. } => Some(h),
                _ => None,
            })
            .collect())
    }

    /// Text form, one layer per line after an `input c h w` line.
    pub fn to_text(&self) -> String {
        let [c, h, w] = self.input;
        let mut s = format!("input {c} {h} {w}\n");
        for l in &self.layers {
            s.push_str(&format!("{l}\n"));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, NnError> {
        let mut input = None;
        let mut layers = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split_whitespace().collect();
            let num = |k: usize| -> Result<usize, NnError> {
                f.get(k)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| NnError::Spec(format!("bad line {line:?}")))
            };
            match f[0] {
                "input" => input = Some([num(1)?, num(2)?, num(3)?]),
                "conv" => layers.push(Layer::Conv { out_ch: num(1)?, kernel: num(2)? }),
                "pool" => layers.push(Layer::MaxPool),
                "bn" => layers.push(Layer::BatchNorm),
                "relu" => layers.push(Layer::Relu),
                "flatten" => layers.push(Layer::Flatten),
                "dense" => layers.push(Layer::Dense { out: num(1)? }),
                "head" => layers.push(Layer::Head(match f.get(1) {
                    Some(&"softmax2") => HeadKind::Softmax2,
                    Some(&"linear1") => HeadKind::Linear1,
                    _ => return Err(NnError::Spec(format!("bad head {line:?}"))),
                })),
                _ => return Err(NnError::Spec(format!("unknown layer {line:?}"))),
            }
        }
        let spec = NetworkSpec {
            layers,
            input: input.ok_or_else(|| NnError::Spec("missing input line".into()))?,
        };
        spec.shapes()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cnn3_shape_gate() {
        let spec = build_cnn(Variant::Cnn3, Mode::Classify);
        assert_eq!(spec.conv_filters(), [32, 64, 128, 256, 512]);
        assert_eq!(spec.pooled_sizes().unwrap(), [16, 8, 4, 2, 1]);
    }

    #[test]
    fn cnn1_flattened_size() {
        let spec = build_cnn(Variant::Cnn1, Mode::Classify);
        let shapes = spec.shapes().unwrap();
        let flat = spec.layers.iter().position(|l| *l == Layer::Flatten).unwrap();
        assert_eq!(shapes[flat + 1], Shape::Flat(16 * 16 * 32));
    }

    #[test]
    fn all_builders_chain() {
        for v in Variant::ALL {
            for mode in [Mode::Classify, Mode::Regress] {
                let spec = build_cnn(v, mode);
                let shapes = spec.shapes().unwrap();
                assert_eq!(shapes[0], Shape::Map { c: 10, h: 32, w: 32 });
                let want = if mode == Mode::Classify { 2 } else { 1 };
                assert_eq!(*shapes.last().unwrap(), Shape::Flat(want));
                assert_eq!(spec.mode(), Some(mode));
                // filters double from 32
                let f = spec.conv_filters();
                assert_eq!(f[0], 32);
                assert!(f.windows(2).all(|w| w[1] == 2 * w[0]));
                assert_eq!(NetworkSpec::parse(&spec.to_text()).unwrap(), spec);
            }
        }
        let c2 = build_cnn(Variant::Cnn2, Mode::Classify);
        assert_eq!(c2.conv_filters(), [32, 64, 128]);
        assert_eq!(c2.pooled_sizes().unwrap(), [16, 8]);
    }

    #[test]
    fn bad_specs_name_the_layer() {
        let spec = NetworkSpec { layers: vec![Layer::Flatten, Layer::MaxPool], input: [1, 4, 4] };
        match spec.shapes() {
            Err(NnError::ShapeMismatch { layer: 1, kind: "pool", .. }) => {}
            other => panic!("{other:?}"),
        }
        let odd = build_cnn_for(Variant::Cnn3, Mode::Classify, [1, 24, 24]);
        assert!(matches!(odd.shapes(), Err(NnError::ShapeMismatch { kind: "pool", .. })));
        let headless = NetworkSpec { layers: vec![Layer::Flatten], input: [1, 2, 2] };
        assert!(headless.shapes().is_err());
    }
}
