//! Experiment configuration: a TOML file with one section per stage,
//! overridden by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use neurograph::eval::{CvConfig, FoldGrouping};
use neurograph::features::ConnectivityConfig;
use neurograph::layout::{ElectrodeMontage, OrderingMethod};
use neurograph::nn::{Mode, TrainConfig, Variant};
use neurograph::pipeline::{parse_ordering, ExtractConfig, FeatureKind};
use neurograph::signalcore::BandDefinition;
use serde::{Deserialize, Serialize};

use crate::{usage, CommonArgs};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub extract: ExtractSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub cv: CvSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub montage: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractSection {
    pub feature: String,
    /// Unset means distance ordering for connectivity features.
    pub ordering: Option<String>,
    /// Standard band names; unset means all ten.
    pub bands: Option<Vec<String>>,
    pub win_s: f64,
    pub hop_s: f64,
    pub res: usize,
    pub te_bins: usize,
    /// Folds written to the label index.
    pub folds: usize,
}

impl Default for ExtractSection {
    fn default() -> Self {
        Self {
            feature: "plv".into(),
            ordering: None,
            bands: None,
            win_s: 3.0,
            hop_s: 0.5,
            res: 32,
            te_bins: 8,
            folds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub network: String,
    pub mode: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { network: "cnn1".into(), mode: "classify".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub val_fraction: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            epochs: t.epochs,
            val_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub k: usize,
    pub grouping: FoldGrouping,
    /// Orderings averaged for each random-ordering cell.
    pub random_orderings: usize,
    /// Grid axes; empty means the single configured value.
    pub features: Vec<String>,
    pub orderings: Vec<String>,
    pub networks: Vec<String>,
}

impl Default for CvSection {
    fn default() -> Self {
        Self {
            k: 5,
            grouping: FoldGrouping::Example,
            random_orderings: 3,
            features: Vec::new(),
            orderings: Vec::new(),
            networks: Vec::new(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
    }

    /// Config file (if any) with flags applied on top.
    pub fn from_args(args: &CommonArgs) -> Result<Self> {
        let mut cfg = match &args.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(p) = &args.input {
            cfg.paths.input = Some(p.clone());
        }
        if let Some(p) = &args.out {
            cfg.paths.output = Some(p.clone());
        }
        if let Some(f) = &args.feature {
            cfg.extract.feature = f.clone();
            cfg.cv.features = vec![f.clone()];
        }
        if let Some(o) = &args.ordering {
            cfg.extract.ordering = Some(o.clone());
            cfg.cv.orderings = vec![o.clone()];
        }
        if let Some(n) = &args.network {
            cfg.model.network = n.clone();
            cfg.cv.networks = vec![n.clone()];
        }
        if let Some(m) = &args.mode {
            cfg.model.mode = m.clone();
        }
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }

    pub fn input(&self) -> Result<&Path> {
        self.paths.input.as_deref().ok_or_else(|| usage("no input directory (set paths.input or --input)"))
    }

    pub fn output(&self) -> Result<&Path> {
        self.paths.output.as_deref().ok_or_else(|| usage("no output directory (set paths.output or --out)"))
    }

    pub fn montage(&self) -> Result<ElectrodeMontage> {
        match &self.paths.montage {
            Some(p) => Ok(ElectrodeMontage::load(p)?),
            None => Ok(ElectrodeMontage::deap32()),
        }
    }

    pub fn feature(&self) -> Result<FeatureKind> {
        parse_feature(&self.extract.feature)
    }

    pub fn mode(&self) -> Result<Mode> {
        self.model.mode.parse::<Mode>().map_err(usage)
    }

    pub fn network(&self) -> Result<Variant> {
        parse_network(&self.model.network)
    }

    /// Ordering for one feature; rejects an explicit ordering for PSD.
    pub fn ordering_for(&self, feature: FeatureKind, ordering: Option<&str>) -> Result<OrderingMethod> {
        match (feature, ordering) {
            (FeatureKind::Psd, Some(o)) => Err(usage(format!(
                "ordering {o:?} given for psd: electrode ordering only applies to connectivity features (pcc, plv, te)"
            ))),
            (_, None) => Ok(OrderingMethod::Distance),
            (_, Some(o)) => parse_ordering(o).map_err(|e| usage(e.to_string())),
        }
    }

    pub fn bands(&self) -> Result<Vec<BandDefinition>> {
        match &self.extract.bands {
            None => Ok(BandDefinition::standard_bands()),
            Some(names) => names
                .iter()
                .map(|n| BandDefinition::standard(n).ok_or_else(|| usage(format!("unknown band {n:?}"))))
                .collect(),
        }
    }

    pub fn extract_config(&self, feature: FeatureKind, ordering: OrderingMethod) -> Result<ExtractConfig> {
        Ok(ExtractConfig {
            kind: feature,
            bands: self.bands()?,
            win_s: self.extract.win_s,
            hop_s: self.extract.hop_s,
            res: self.extract.res,
            connectivity: ConnectivityConfig { te_bins: self.extract.te_bins, ..Default::default() },
            ordering,
            ..Default::default()
        })
    }

    pub fn train_config(&self, mode: Mode) -> Result<TrainConfig> {
        let t = &self.train;
        let cfg = TrainConfig {
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            epochs: t.epochs,
            seed: self.seed,
            mode,
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }

    pub fn cv_config(&self, mode: Mode) -> CvConfig {
        CvConfig {
            k: self.cv.k,
            val_fraction: self.train.val_fraction,
            seed: self.seed,
            mode,
            grouping: self.cv.grouping,
        }
    }
}

pub fn parse_feature(s: &str) -> Result<FeatureKind> {
    s.parse::<FeatureKind>().map_err(|e| usage(e.to_string()))
}

pub fn parse_network(s: &str) -> Result<Variant> {
    s.parse::<Variant>().map_err(usage)
}
