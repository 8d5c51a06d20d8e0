//! Trial to feature-tensor extraction: segmentation, per-band features,
//! spatial layout and electrode ordering.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    label, synthesize_trial, DatasetError, ExampleMeta, ExampleSet, LabeledExample, SynthesisPlan, TrialRecord,
};
use crate::features::{
    band_power, connectivity_matrix, plv_windowed, welch_psd, ConnectivityConfig, ConnectivityKind, FeatureError,
    PlvMode, WelchConfig,
};
use crate::layout::{
    distance_ordering, permute_square, random_ordering, stack_bands, ElectrodeMontage, ElectrodeOrdering,
    FeatureTensor, LayoutError, OrderingMethod, TensorKind, TopographyRenderer,
};
use crate::signalcore::{
    analytic_signal, bandpass_recording, segment, segment_baseline, BandDefinition, BandSegment, SegmentOrigin,
    SignalError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("recording channels do not match the montage: {0}")]
    ChannelMismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Psd,
    Pcc,
    Plv,
    Te,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 4] = [FeatureKind::Psd, FeatureKind::Pcc, FeatureKind::Plv, FeatureKind::Te];

    pub fn connectivity(self) -> Option<ConnectivityKind> {
        match self {
            FeatureKind::Psd => None,
            FeatureKind::Pcc => Some(ConnectivityKind::Pcc),
            FeatureKind::Plv => Some(ConnectivityKind::Plv),
            FeatureKind::Te => Some(ConnectivityKind::Te),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Psd => "psd",
            FeatureKind::Pcc => "pcc",
            FeatureKind::Plv => "plv",
            FeatureKind::Te => "te",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureKind {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| PipelineError::Config(format!("unknown feature {s:?} (psd, pcc, plv, te)")))
    }
}

/// Parses `identity`, `distance` or `random:<seed>`.
pub fn parse_ordering(s: &str) -> Result<OrderingMethod, PipelineError> {
    let s = s.trim().to_ascii_lowercase();
    match s.as_str() {
        "identity" => Ok(OrderingMethod::Identity),
        "distance" => Ok(OrderingMethod::Distance),
        _ => s
            .strip_prefix("random:")
            .and_then(|seed| seed.parse().ok())
            .map(|seed| OrderingMethod::Random { seed })
            .ok_or_else(|| PipelineError::Config(format!("unknown ordering {s:?} (distance, random:<seed>)"))),
    }
}

pub fn ordering_name(m: OrderingMethod) -> String {
    match m {
        OrderingMethod::Identity => "identity".into(),
        OrderingMethod::Distance => "distance".into(),
        OrderingMethod::Random { seed } => format!("random:{seed}"),
    }
}

/// Concrete ordering for a montage.
pub fn make_ordering(montage: &ElectrodeMontage, m: OrderingMethod) -> Result<ElectrodeOrdering, LayoutError> {
    match m {
        OrderingMethod::Identity => Ok(ElectrodeOrdering::identity(montage.len())),
        OrderingMethod::Distance => distance_ordering(montage),
        OrderingMethod::Random { seed } => Ok(random_ordering(montage.len(), seed)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractConfig {
    pub kind: FeatureKind,
    pub bands: Vec<BandDefinition>,
    pub win_s: f64,
    pub hop_s: f64,
    /// Topography side length in pixels.
    pub res: usize,
    pub welch: WelchConfig,
    pub connectivity: ConnectivityConfig,
    /// Electrode ordering for connectivity matrices; ignored for PSD.
    pub ordering: OrderingMethod,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            kind: FeatureKind::Plv,
            bands: BandDefinition::standard_bands(),
            win_s: 3.0,
            hop_s: 0.5,
            res: 32,
            welch: WelchConfig::default(),
            connectivity: ConnectivityConfig::default(),
            ordering: OrderingMethod::Distance,
        }
    }
}

/// Extracts feature tensors from trials recorded on one montage.
#[derive(Debug, Clone)]
pub struct Extractor {
    cfg: ExtractConfig,
    montage: ElectrodeMontage,
    renderer: Option<TopographyRenderer>,
    ordering: Option<ElectrodeOrdering>,
}

impl Extractor {
    pub fn new(cfg: ExtractConfig, montage: ElectrodeMontage) -> Result<Self, PipelineError> {
        if cfg.bands.is_empty() {
            return Err(PipelineError::Config("no bands".into()));
        }
        let (renderer, ordering) = match cfg.kind {
            FeatureKind::Psd => (Some(TopographyRenderer::new(&montage, cfg.res)?), None),
            _ => (None, Some(make_ordering(&montage, cfg.ordering)?)),
        };
        Ok(Self { cfg, montage, renderer, ordering })
    }

    pub fn config(&self) -> &ExtractConfig {
        &self.cfg
    }

    pub fn montage(&self) -> &ElectrodeMontage {
        &self.montage
    }

    pub fn ordering(&self) -> Option<&ElectrodeOrdering> {
        self.ordering.as_ref()
    }

    /// `[bands, side, side]` of every tensor this extractor produces.
    pub fn dims(&self) -> [usize; 3] {
        let side = match self.cfg.kind {
            FeatureKind::Psd => self.cfg.res,
            _ => self.montage.len(),
        };
        [self.cfg.bands.len(), side, side]
    }

    pub fn tensor_kind(&self) -> TensorKind {
        match self.cfg.kind.connectivity() {
            Some(k) => TensorKind::Connectivity(k),
            None => TensorKind::Topography,
        }
    }

    /// Index into the recording of each montage electrode.
    fn channel_map(&self, trial: &TrialRecord) -> Result<Vec<usize>, PipelineError> {
        let names = trial.recording.channel_names();
        if names.len() != self.montage.len() {
            return Err(PipelineError::ChannelMismatch(format!(
                "{} channels, montage has {}",
                names.len(),
                self.montage.len()
            )));
        }
        self.montage
            .labels()
            .iter()
            .map(|l| {
                names.iter().position(|n| n == l).ok_or_else(|| PipelineError::ChannelMismatch(format!("no {l}")))
            })
            .collect()
    }

    /// One tensor per stimulus segment, in time order.
    pub fn extract_trial(&self, trial: &TrialRecord) -> Result<Vec<FeatureTensor>, PipelineError> {
        let map = self.channel_map(trial)?;
        let planes = match self.cfg.kind {
            FeatureKind::Psd => self.psd_planes(trial, &map)?,
            _ => self.connectivity_planes(trial, &map)?,
        };
        let kind = self.tensor_kind();
        let side = self.dims()[1];
        planes
            .into_iter()
            .map(|p| {
                let labelled = self.cfg.bands.iter().cloned().zip(p).collect();
                Ok(stack_bands(labelled, &self.cfg.bands, side, kind, self.ordering.clone())?)
            })
            .collect()
    }

    /// Labelled examples of one trial.
    pub fn extract_examples(&self, trial: &TrialRecord) -> Result<Vec<LabeledExample>, PipelineError> {
        let class = label(trial.score)?;
        Ok(self
            .extract_trial(trial)?
            .into_iter()
            .enumerate()
            .map(|(k, tensor)| LabeledExample {
                tensor,
                meta: ExampleMeta {
                    class,
                    score: trial.score,
                    valence: trial.valence,
                    arousal: trial.arousal,
                    subject: trial.subject,
                    video: trial.video,
                    segment: k as u32,
                    fold: None,
                },
            })
            .collect())
    }

    /// Per segment, per band: rendered topography of baseline-corrected
    /// band power.
    fn psd_planes(&self, trial: &TrialRecord, map: &[usize]) -> Result<Vec<Vec<Vec<f64>>>, PipelineError> {
        let rec = &trial.recording;
        let fs = rec.fs();
        let bands = &self.cfg.bands;
        let powers = |x: &[f64]| -> Result<Vec<f64>, FeatureError> {
            let spec = welch_psd(x, fs, &self.cfg.welch)?;
            bands.iter().map(|b| band_power(&spec, b)).collect()
        };
        let base_ranges = segment_baseline(rec, self.cfg.win_s, self.cfg.hop_s)?;
        // baseline[c][b]
        let mut baseline = Vec::with_capacity(map.len());
        for &c in map {
            let mut acc = vec![0.0; bands.len()];
            for r in &base_ranges {
                for (a, p) in acc.iter_mut().zip(powers(&rec.channel(c)[r.clone()])?) {
                    *a += p;
                }
            }
            baseline.push(acc.into_iter().map(|a| a / base_ranges.len() as f64).collect::<Vec<_>>());
        }
        let renderer = self.renderer.as_ref().expect("psd extractor has a renderer");
        let mut out = Vec::new();
        for r in segment(rec, self.cfg.win_s, self.cfg.hop_s)? {
            let mut per_band = vec![vec![0.0; map.len()]; bands.len()];
            for (e, &c) in map.iter().enumerate() {
                for (b, p) in powers(&rec.channel(c)[r.clone()])?.into_iter().enumerate() {
                    per_band[b][e] = p - baseline[e][b];
                }
            }
            out.push(per_band.iter().map(|v| renderer.render(v)).collect::<Result<Vec<_>, _>>()?);
        }
        Ok(out)
    }

    fn connectivity_planes(&self, trial: &TrialRecord, map: &[usize]) -> Result<Vec<Vec<Vec<f64>>>, PipelineError> {
        let kind = self.cfg.kind.connectivity().expect("connectivity feature");
        let rec = &trial.recording;
        let ranges = segment(rec, self.cfg.win_s, self.cfg.hop_s)?;
        let n = map.len();
        let ord = self.ordering.as_ref().expect("connectivity extractor has an ordering");
        let mut out = vec![Vec::with_capacity(self.cfg.bands.len()); ranges.len()];
        for band in &self.cfg.bands {
            let (filtered, half) = bandpass_recording(rec, band)?;
            let chans: Vec<&[f64]> = map.iter().map(|&c| filtered[c].as_slice()).collect();
            let mats: Vec<Vec<f64>> = match kind {
                ConnectivityKind::Plv => {
                    let valid_end = rec.n_samples().saturating_sub(half);
                    let windows: Vec<(usize, usize)> = ranges
                        .iter()
                        .map(|r| (r.start.max(half), r.end.min(valid_end)))
                        .collect();
                    if let Some(&(s, e)) = windows.iter().find(|(s, e)| e <= s) {
                        return Err(PipelineError::Config(format!(
                            "segment {s}..{e} lies inside the filter transient"
                        )));
                    }
                    plv_matrices(&chans, &windows, self.cfg.connectivity.plv_mode)?
                }
                _ => ranges
                    .iter()
                    .enumerate()
                    .map(|(k, r)| {
                        let seg = BandSegment {
                            data: chans.iter().map(|c| c[r.clone()].to_vec()).collect(),
                            band: band.clone(),
                            fs: rec.fs(),
                            origin: SegmentOrigin { trial: 0, index: k },
                        };
                        Ok(connectivity_matrix(&seg, kind, &self.cfg.connectivity)?.values)
                    })
                    .collect::<Result<_, PipelineError>>()?,
            };
            for (slot, m) in out.iter_mut().zip(mats) {
                slot.push(permute_square(&m, n, ord));
            }
        }
        Ok(out)
    }
}

/// PLV matrices over several windows of the same trial. Phases come from the
/// analytic signal of the whole filtered trial, and per-sample PLV uses
/// prefix sums of the pairwise phase-difference phasors.
fn plv_matrices(
    chans: &[&[f64]],
    windows: &[(usize, usize)],
    mode: PlvMode,
) -> Result<Vec<Vec<f64>>, PipelineError> {
    let n = chans.len();
    let mut phasors = Vec::with_capacity(n);
    for c in chans {
        if c.iter().all(|&v| v == 0.0) {
            return Err(SignalError::ZeroSignal.into());
        }
        let z = analytic_signal(c);
        phasors.push(
            z.iter()
                .map(|z| {
                    let r = z.norm();
                    if r > 0.0 {
                        z / r
                    } else {
                        Complex64::new(1.0, 0.0)
                    }
                })
                .collect::<Vec<_>>(),
        );
    }
    let mut mats: Vec<Vec<f64>> = windows
        .iter()
        .map(|_| {
            let mut m = vec![0.0; n * n];
            for i in 0..n {
                m[i * n + i] = 1.0;
            }
            m
        })
        .collect();
    let len = chans.first().map_or(0, |c| c.len());
    let mut prefix = vec![Complex64::new(0.0, 0.0); len + 1];
    let mut phases: Vec<Vec<f64>> = Vec::new();
    if let PlvMode::PerSubwindow(_) = mode {
        phases = phasors.iter().map(|p| p.iter().map(|z| z.arg()).collect()).collect();
    }
    for i in 0..n {
        for j in 0..i {
            if let PlvMode::PerSubwindow(w) = mode {
                for (m, &(s, e)) in mats.iter_mut().zip(windows) {
                    let v = plv_windowed(&phases[i][s..e], &phases[j][s..e], w)
                        .map_err(|e| FeatureError::Entry { row: i, col: j, source: Box::new(e) })?;
                    m[i * n + j] = v;
                    m[j * n + i] = v;
                }
                continue;
            }
            for t in 0..len {
                prefix[t + 1] = prefix[t] + phasors[i][t] * phasors[j][t].conj();
            }
            for (m, &(s, e)) in mats.iter_mut().zip(windows) {
                let v = ((prefix[e] - prefix[s]).norm() / (e - s) as f64).min(1.0);
                m[i * n + j] = v;
                m[j * n + i] = v;
            }
        }
    }
    Ok(mats)
}

/// Extracts every trial in parallel into one example set, in trial order.
pub fn build_example_set(extractor: &Extractor, trials: &[TrialRecord]) -> Result<ExampleSet, PipelineError> {
    let parts: Vec<Vec<LabeledExample>> =
        trials.par_iter().map(|t| extractor.extract_examples(t)).collect::<Result<_, _>>()?;
    collect_set(extractor, parts)
}

/// Generates and extracts a synthetic corpus without holding its raw
/// signals in memory.
pub fn example_set_from_plan(extractor: &Extractor, plan: &SynthesisPlan) -> Result<ExampleSet, PipelineError> {
    plan.validate()?;
    let ids: Vec<(u32, u32)> =
        (0..plan.n_subjects).flat_map(|s| (0..plan.n_videos).map(move |v| (s, v))).collect();
    let parts: Vec<Vec<LabeledExample>> = ids
        .par_iter()
        .map(|&(s, v)| extractor.extract_examples(&synthesize_trial(plan, s, v)?))
        .collect::<Result<_, _>>()?;
    collect_set(extractor, parts)
}

fn collect_set(extractor: &Extractor, parts: Vec<Vec<LabeledExample>>) -> Result<ExampleSet, PipelineError> {
    let mut set = ExampleSet::new(extractor.dims(), extractor.tensor_kind(), extractor.ordering().cloned());
    for ex in parts.into_iter().flatten() {
        set.push(ex)?;
    }
    Ok(set)
}
