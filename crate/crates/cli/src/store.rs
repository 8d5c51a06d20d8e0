//! On-disk feature store written by `extract` and read by `train`/`eval`:
//! `extract.toml`, `index.csv` and one ETNS file per trial under `tensors/`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use neurograph::dataset::etns::{read_tensors, write_tensors, NamedTensor, TensorData};
use neurograph::dataset::{Class, ExampleMeta, ExampleSet};
use neurograph::layout::{ElectrodeOrdering, FeatureTensor, TensorKind};
use neurograph::pipeline::{parse_ordering, FeatureKind};
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "extract.toml";
pub const INDEX: &str = "index.csv";
pub const TENSOR_DIR: &str = "tensors";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractManifest {
    pub feature: FeatureKind,
    /// `none` for PSD.
    pub ordering: String,
    pub ordering_perm: Option<Vec<usize>>,
    pub dims: [usize; 3],
    pub bands: Vec<String>,
    pub win_s: f64,
    pub hop_s: f64,
    pub folds: usize,
    pub seed: u64,
}

impl ExtractManifest {
    pub fn tensor_kind(&self) -> TensorKind {
        match self.feature.connectivity() {
            Some(k) => TensorKind::Connectivity(k),
            None => TensorKind::Topography,
        }
    }

    pub fn ordering(&self) -> Result<Option<ElectrodeOrdering>> {
        match &self.ordering_perm {
            None => Ok(None),
            Some(p) => Ok(Some(ElectrodeOrdering::new(p.clone(), parse_ordering(&self.ordering)?)?)),
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

pub fn tensor_file(dir: &Path, subject: u32, video: u32) -> PathBuf {
    dir.join(TENSOR_DIR).join(format!("s{subject}_v{video}.etns"))
}

pub fn entry_name(segment: usize) -> String {
    format!("seg{segment:03}")
}

pub fn write_trial_tensors(path: &Path, tensors: &[FeatureTensor]) -> Result<()> {
    let named: Vec<NamedTensor> = tensors
        .iter()
        .enumerate()
        .map(|(k, t)| NamedTensor::f32(entry_name(k), t.dims().to_vec(), t.values.clone()))
        .collect();
    // write then rename so an interrupted run never leaves a partial file
    let tmp = path.with_extension("etns.partial");
    write_tensors(&tmp, &named)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// One label-index row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexRow {
    pub file: String,
    pub entry: String,
    pub subject: u32,
    pub video: u32,
    pub segment: u32,
    pub score: f64,
    pub class: Class,
    pub valence: Option<f64>,
    pub arousal: Option<f64>,
    pub fold: u8,
}

pub fn write_index(dir: &Path, rows: &[IndexRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(INDEX))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_index(dir: &Path) -> Result<Vec<IndexRow>> {
    let path = dir.join(INDEX);
    let mut r = csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for row in r.deserialize() {
        rows.push(row.with_context(|| format!("parsing {}", path.display()))?);
    }
    Ok(rows)
}

/// Loads every indexed example; fold ids come from the index.
pub fn load_set(dir: &Path) -> Result<(ExtractManifest, ExampleSet)> {
    let manifest = ExtractManifest::load(dir)?;
    let rows = read_index(dir)?;
    let mut set = ExampleSet::new(manifest.dims, manifest.tensor_kind(), manifest.ordering()?);
    let mut files: BTreeMap<String, BTreeMap<String, Vec<f32>>> = BTreeMap::new();
    for row in &rows {
        if !files.contains_key(&row.file) {
            let path = dir.join(&row.file);
            let tensors = read_tensors(&path).with_context(|| format!("reading {}", path.display()))?;
            let map = tensors
                .into_iter()
                .map(|t| match t.data {
                    TensorData::F32(v) if t.dims == manifest.dims.to_vec() => Ok((t.name, v)),
                    _ => bail!("{}: entry {} is not an f32 tensor of {:?}", path.display(), t.name, manifest.dims),
                })
                .collect::<Result<_>>()?;
            files.insert(row.file.clone(), map);
        }
        let values = files[&row.file]
            .get(&row.entry)
            .with_context(|| format!("{}: no entry {}", row.file, row.entry))?;
        set.inputs.extend_from_slice(values);
        set.meta.push(ExampleMeta {
            class: row.class,
            score: row.score,
            valence: row.valence,
            arousal: row.arousal,
            subject: row.subject,
            video: row.video,
            segment: row.segment,
            fold: Some(row.fold),
        });
    }
    Ok((manifest, set))
}
