use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use neurograph::dataset::csv::write_trial;
use neurograph::dataset::{for_each_trial, trial_scores, Profile, SynthesisPlan};
use serde::Serialize;

use crate::usage;

pub const MANIFEST: &str = "manifest.toml";

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML synthesis plan; defaults to 32 subjects x 40 videos.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub subjects: Option<u32>,
    #[arg(long)]
    pub videos: Option<u32>,
    /// classes or graded.
    #[arg(long)]
    pub profile: Option<String>,
    /// Write into a non-empty directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Serialize)]
struct Manifest<'a> {
    trials: usize,
    dislike_trials: usize,
    plan: &'a SynthesisPlan,
}

/// Refuses a non-empty directory unless forced; creates it otherwise.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?.next().is_some();
        if non_empty && !force {
            return Err(usage(format!("{} is not empty (use --force to write into it)", dir.display())));
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

pub fn run(args: SynthArgs) -> Result<()> {
    let mut plan = match &args.plan {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<SynthesisPlan>(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => SynthesisPlan::default(),
    };
    if let Some(s) = args.seed {
        plan.seed = s;
    }
    if let Some(n) = args.subjects {
        plan.n_subjects = n;
    }
    if let Some(n) = args.videos {
        plan.n_videos = n;
    }
    if let Some(p) = &args.profile {
        plan.profile = match p.as_str() {
            "classes" => Profile::Classes,
            "graded" => Profile::Graded,
            _ => return Err(usage(format!("unknown profile {p:?} (classes or graded)"))),
        };
    }
    plan.validate().map_err(|e| usage(e.to_string()))?;
    prepare_out_dir(&args.out, args.force)?;

    let mut written = 0usize;
    for_each_trial(&plan, 32, |t| {
        write_trial(&args.out, &t)?;
        written += 1;
        if written.is_multiple_of(100) {
            log::info!("{written} / {} trials written", plan.n_trials());
        }
        Ok(())
    })?;
    let dislike = trial_scores(&plan).iter().filter(|s| s.score <= 5.0).count();
    let manifest = Manifest { trials: written, dislike_trials: dislike, plan: &plan };
    fs::write(args.out.join(MANIFEST), toml::to_string(&manifest)?)?;
    println!("wrote {written} trials to {}", args.out.display());
    Ok(())
}
