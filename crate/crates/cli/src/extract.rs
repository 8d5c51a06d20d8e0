use std::fs;

use anyhow::{Context, Result};
use neurograph::dataset::csv::{list_trials, meta_file_name, read_meta, read_trial};
use neurograph::dataset::etns::read_tensors;
use neurograph::dataset::{assign_folds, label};
use neurograph::pipeline::{ordering_name, Extractor};
use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::store::{
    entry_name, tensor_file, write_index, write_trial_tensors, ExtractManifest, IndexRow, MANIFEST, TENSOR_DIR,
};
use crate::{usage, CommonArgs, PartialFailure};

pub fn run(args: CommonArgs) -> Result<()> {
    let cfg = PipelineConfig::from_args(&args)?;
    let feature = cfg.feature()?;
    let ordering = cfg.ordering_for(feature, cfg.extract.ordering.as_deref())?;
    let input = cfg.input()?;
    let out = cfg.output()?;
    let montage = cfg.montage()?;
    let extractor = Extractor::new(cfg.extract_config(feature, ordering)?, montage.clone())?;
    let manifest = ExtractManifest {
        feature,
        ordering: if extractor.ordering().is_some() { ordering_name(ordering) } else { "none".into() },
        ordering_perm: extractor.ordering().map(|o| o.perm().to_vec()),
        dims: extractor.dims(),
        bands: extractor.config().bands.iter().map(|b| b.name.clone()).collect(),
        win_s: cfg.extract.win_s,
        hop_s: cfg.extract.hop_s,
        folds: cfg.extract.folds,
        seed: cfg.seed,
    };

    fs::create_dir_all(out.join(TENSOR_DIR)).with_context(|| format!("creating {}", out.display()))?;
    if let Ok(prev) = ExtractManifest::load(out) {
        if prev != manifest {
            if !args.force {
                return Err(usage(format!(
                    "{} holds {} features with different settings (use --force to replace them)",
                    out.display(),
                    prev.feature
                )));
            }
            fs::remove_dir_all(out.join(TENSOR_DIR))?;
            fs::create_dir_all(out.join(TENSOR_DIR))?;
        }
    }
    fs::write(out.join(MANIFEST), toml::to_string(&manifest)?)?;

    let trials = list_trials(input).with_context(|| format!("listing {}", input.display()))?;
    if trials.is_empty() {
        return Err(usage(format!("no trials found in {}", input.display())));
    }
    let pending: Vec<(u32, u32)> = trials
        .iter()
        .copied()
        .filter(|&(s, v)| args.force || !tensor_file(out, s, v).exists())
        .collect();
    log::info!("{} trials, {} to extract", trials.len(), pending.len());
    let failures: Vec<String> = pending
        .par_iter()
        .filter_map(|&(s, v)| {
            let result = read_trial(input, s, v, &montage)
                .map_err(anyhow::Error::from)
                .and_then(|t| Ok(extractor.extract_trial(&t)?))
                .and_then(|tensors| write_trial_tensors(&tensor_file(out, s, v), &tensors));
            result.err().map(|e| {
                let msg = format!("s{s}_v{v}: {e:#}");
                log::error!("{msg}");
                msg
            })
        })
        .collect();

    let mut rows = Vec::new();
    for &(s, v) in &trials {
        let path = tensor_file(out, s, v);
        if !path.exists() {
            continue;
        }
        let meta = read_meta(&input.join(meta_file_name(s, v)))?;
        let n_seg = read_tensors(&path)?.len();
        let file = path.strip_prefix(out).unwrap_or(&path).to_string_lossy().into_owned();
        for k in 0..n_seg {
            rows.push(IndexRow {
                file: file.clone(),
                entry: entry_name(k),
                subject: s,
                video: v,
                segment: k as u32,
                score: meta.score,
                class: label(meta.score)?,
                valence: meta.valence,
                arousal: meta.arousal,
                fold: 0,
            });
        }
    }
    if rows.len() >= cfg.extract.folds {
        let folds = assign_folds(rows.len(), cfg.extract.folds, cfg.seed)?;
        for (r, f) in rows.iter_mut().zip(folds) {
            r.fold = f;
        }
    }
    write_index(out, &rows)?;
    println!(
        "{} examples from {} trials in {} ({} failed)",
        rows.len(),
        trials.len() - failures.len(),
        out.display(),
        failures.len()
    );
    if failures.is_empty() {
        Ok(())
    } else {
        Err(PartialFailure(failures.len()).into())
    }
}
