use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use neurograph::eval::{
    failure_analysis, write_report, BandScaler, CnnLearner, EvalReport, ExampleResult, FittedCnn, Split, TargetScale,
};
use neurograph::nn::{load_checkpoint, save_checkpoint, Mode, TrainTrace, Variant};
use neurograph::pipeline::FeatureKind;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::store::load_set;
use crate::synth::prepare_out_dir;
use crate::{usage, CommonArgs};

pub const CHECKPOINT: &str = "model.etns";

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Leave this fold out of training so `eval` can score it.
    #[arg(long)]
    pub holdout_fold: Option<u8>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
}

/// Everything besides the weights needed to apply a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub network: Variant,
    pub mode: Mode,
    pub feature: FeatureKind,
    pub ordering: String,
    pub holdout_fold: Option<u8>,
    pub best_epoch: Option<usize>,
    pub target: TargetScale,
    pub scaler: BandScaler,
}

fn card_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("toml")
}

fn trace_csv(trace: &TrainTrace) -> String {
    let mut s = String::from("epoch,train_loss,val_metric\n");
    for e in &trace.epochs {
        let _ = writeln!(s, "{},{:.6},{}", e.epoch, e.train_loss, e.val_metric.map_or(String::new(), |v| format!("{v:.6}")));
    }
    s
}

pub fn run_train(args: TrainArgs) -> Result<()> {
    let cfg = PipelineConfig::from_args(&args.common)?;
    let (mode, network) = (cfg.mode()?, cfg.network()?);
    let input = cfg.input()?;
    let out = cfg.output()?;
    let (manifest, set) = load_set(input)?;
    if set.is_empty() {
        return Err(usage(format!("no examples in {}", input.display())));
    }
    let mut pool: Vec<usize> = (0..set.len()).filter(|&i| Some(set.meta[i].fold) != args.holdout_fold.map(Some)).collect();
    if pool.is_empty() {
        return Err(usage("the held-out fold covers every example"));
    }
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let n_val = (cfg.train.val_fraction * pool.len() as f64).round() as usize;
    let mut val = pool.split_off(pool.len() - n_val);
    pool.sort_unstable();
    val.sort_unstable();
    let split = Split { fold: 0, train: pool, val, test: Vec::new() };

    prepare_out_dir(out, args.common.force)?;
    let learner = CnnLearner::new(network, cfg.train_config(mode)?);
    let fitted = learner.fit(&set, &split, mode)?;
    let ckpt = out.join(CHECKPOINT);
    save_checkpoint(&fitted.net, &ckpt)?;
    let card = ModelCard {
        network,
        mode,
        feature: manifest.feature,
        ordering: manifest.ordering.clone(),
        holdout_fold: args.holdout_fold,
        best_epoch: fitted.trace.best_epoch,
        target: fitted.target,
        scaler: fitted.scaler.clone(),
    };
    fs::write(card_path(&ckpt), toml::to_string(&card)?)?;
    fs::write(out.join("trace.csv"), trace_csv(&fitted.trace))?;
    println!(
        "trained {network} ({mode}) on {} examples; best epoch {:?}; checkpoint {}",
        split.train.len(),
        fitted.trace.best_epoch,
        ckpt.display()
    );
    Ok(())
}

pub fn run_eval(args: EvalArgs) -> Result<()> {
    let cfg = PipelineConfig::from_args(&args.common)?;
    let input = cfg.input()?;
    let out = cfg.output()?;
    let card_file = card_path(&args.checkpoint);
    let card: ModelCard = toml::from_str(
        &fs::read_to_string(&card_file).with_context(|| format!("reading {}", card_file.display()))?,
    )
    .with_context(|| format!("parsing {}", card_file.display()))?;
    let net = load_checkpoint(&args.checkpoint)?;
    let (manifest, set) = load_set(input)?;
    if manifest.feature != card.feature || manifest.ordering != card.ordering {
        return Err(usage(format!(
            "model was trained on {}/{} features, {} holds {}/{}",
            card.feature,
            card.ordering,
            input.display(),
            manifest.feature,
            manifest.ordering
        )));
    }
    let test: Vec<usize> = (0..set.len())
        .filter(|&i| card.holdout_fold.is_none_or(|f| set.meta[i].fold == Some(f)))
        .collect();
    if test.is_empty() {
        return Err(usage("no examples to evaluate"));
    }
    let fitted = FittedCnn { net, scaler: card.scaler.clone(), target: card.target, trace: TrainTrace::default() };
    let outputs = fitted.predict(&set, &test, cfg.train.batch_size)?;
    let results = test
        .iter()
        .zip(outputs)
        .map(|(&i, output)| {
            let m = &set.meta[i];
            ExampleResult {
                index: i,
                fold: 0,
                subject: m.subject,
                video: m.video,
                segment: m.segment,
                truth_class: m.class.index(),
                truth_score: m.score,
                output,
            }
        })
        .collect();
    let report = EvalReport::from_results(card.mode, 1, results)?;
    let analysis = failure_analysis(&report, &set.meta)?;
    let header = vec![
        ("network".to_string(), card.network.to_string()),
        ("feature".to_string(), card.feature.to_string()),
        ("ordering".to_string(), card.ordering.clone()),
        ("checkpoint".to_string(), args.checkpoint.display().to_string()),
    ];
    write_report(out, &report, &analysis, &header)?;
    match card.mode {
        Mode::Classify => println!("macro-F1 {:.4} on {} examples", report.headline(), test.len()),
        Mode::Regress => println!("RMSE {:.4} on {} examples", report.headline(), test.len()),
    }
    Ok(())
}
