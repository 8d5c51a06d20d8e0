//! Plain-text trial interchange: `s<subject>_v<video>_eeg.csv` holds samples
//! (one column per channel, header = channel names) and
//! `s<subject>_v<video>_meta.csv` holds `key,value` rating rows.

use std::fs;
use std::path::{Path, PathBuf};

use super::{DatasetError, TrialRecord};
use crate::layout::ElectrodeMontage;
use crate::signalcore::MultichannelRecording;

pub fn eeg_file_name(subject: u32, video: u32) -> String {
    format!("s{subject}_v{video}_eeg.csv")
}

pub fn meta_file_name(subject: u32, video: u32) -> String {
    format!("s{subject}_v{video}_meta.csv")
}

fn file_err(path: &Path, msg: impl Into<String>) -> DatasetError {
    DatasetError::File { file: path.display().to_string(), msg: msg.into() }
}

/// Writes both files of a trial into `dir`. Samples are printed with six
/// decimals so output is byte-stable.
pub fn write_trial(dir: &Path, trial: &TrialRecord) -> Result<(), DatasetError> {
    let rec = &trial.recording;
    let eeg = dir.join(eeg_file_name(trial.subject, trial.video));
    let csv_err = |e: csv::Error| file_err(&eeg, e.to_string());
    let mut w = csv::Writer::from_path(&eeg).map_err(csv_err)?;
    w.write_record(rec.channel_names()).map_err(csv_err)?;
    let mut row = Vec::with_capacity(rec.n_channels());
    for t in 0..rec.n_samples() {
        row.clear();
        row.extend(rec.data().iter().map(|ch| format!("{:.6}", ch[t])));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;

    let mut meta = format!("key,value\npreference,{:.6}\n", trial.score);
    if let Some(v) = trial.valence {
        meta += &format!("valence,{v:.6}\n");
    }
    if let Some(a) = trial.arousal {
        meta += &format!("arousal,{a:.6}\n");
    }
    meta += &format!("fs,{}\nbaseline_s,{}\n", rec.fs(), rec.baseline_duration_s());
    fs::write(dir.join(meta_file_name(trial.subject, trial.video)), meta)?;
    Ok(())
}

fn parse_name(name: &str) -> Option<(u32, u32)> {
    let rest = name.strip_prefix('s')?.strip_suffix("_eeg.csv")?;
    let (s, v) = rest.split_once("_v")?;
    Some((s.parse().ok()?, v.parse().ok()?))
}

/// Contents of a `_meta.csv` file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialMeta {
    pub score: f64,
    pub valence: Option<f64>,
    pub arousal: Option<f64>,
    pub fs: f64,
    pub baseline_s: f64,
}

pub fn read_meta(path: &Path) -> Result<TrialMeta, DatasetError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| file_err(path, e.to_string()))?;
    let (mut score, mut valence, mut arousal, mut fs, mut baseline_s) = (None, None, None, None, None);
    for rec in r.records() {
        let rec = rec.map_err(|e| file_err(path, e.to_string()))?;
        if rec.len() != 2 {
            return Err(file_err(path, format!("expected key,value row, got {} fields", rec.len())));
        }
        let v: f64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| file_err(path, format!("bad value {:?} for {}", &rec[1], &rec[0])))?;
        match rec[0].trim() {
            "preference" => score = Some(v),
            "valence" => valence = Some(v),
            "arousal" => arousal = Some(v),
            "fs" => fs = Some(v),
            "baseline_s" => baseline_s = Some(v),
            other => log::debug!("{}: ignoring row {other}", path.display()),
        }
    }
    let missing = |k: &str| file_err(path, format!("missing {k} row"));
    Ok(TrialMeta {
        score: score.ok_or_else(|| missing("preference"))?,
        valence,
        arousal,
        fs: fs.ok_or_else(|| missing("fs"))?,
        baseline_s: baseline_s.ok_or_else(|| missing("baseline_s"))?,
    })
}

/// Reads one trial and reorders its columns to montage order.
pub fn read_trial(dir: &Path, subject: u32, video: u32, montage: &ElectrodeMontage) -> Result<TrialRecord, DatasetError> {
    let meta_path = dir.join(meta_file_name(subject, video));
    let meta = read_meta(&meta_path)?;
    super::label(meta.score).map_err(|e| file_err(&meta_path, e.to_string()))?;

    let path = dir.join(eeg_file_name(subject, video));
    let csv_err = |e: csv::Error| file_err(&path, e.to_string());
    let mut r = csv::Reader::from_path(&path).map_err(csv_err)?;
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(|h| h.trim().to_string()).collect();
    if header.len() != montage.len() {
        return Err(file_err(&path, format!("{} channels, montage has {}", header.len(), montage.len())));
    }
    let mut column = Vec::with_capacity(montage.len());
    for label in montage.labels() {
        let c = header
            .iter()
            .position(|h| *h == label)
            .ok_or_else(|| file_err(&path, format!("channel {label} missing")))?;
        column.push(c);
    }
    let mut data = vec![Vec::new(); montage.len()];
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        for (out, &c) in data.iter_mut().zip(&column) {
            let v: f64 = rec
                .get(c)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| file_err(&path, format!("bad sample on data row {}", line + 1)))?;
            out.push(v);
        }
    }
    let baseline = (meta.baseline_s * meta.fs).round() as usize;
    let recording = MultichannelRecording::new(data, meta.fs, baseline, montage.labels())
        .map_err(|e| file_err(&path, e.to_string()))?;
    Ok(TrialRecord { recording, subject, video, score: meta.score, valence: meta.valence, arousal: meta.arousal })
}

/// Trials found in `dir`, plus the errors of files that failed to import.
#[derive(Debug, Default)]
pub struct CsvImport {
    pub trials: Vec<TrialRecord>,
    pub errors: Vec<DatasetError>,
}

/// `(subject, video)` of every EEG file in `dir`, sorted.
pub fn list_trials(dir: &Path) -> Result<Vec<(u32, u32)>, DatasetError> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name();
        if let Some(id) = name.to_str().and_then(parse_name) {
            ids.push(id);
        }
    }
    ids.sort_unstable();
    Ok(ids)
}

/// Imports every trial pair in `dir`. A broken file is reported and skipped.
pub fn import_csv_trials(dir: &Path, montage: &ElectrodeMontage) -> Result<CsvImport, DatasetError> {
    let mut out = CsvImport::default();
    for (s, v) in list_trials(dir)? {
        match read_trial(dir, s, v, montage) {
            Ok(t) => out.trials.push(t),
            Err(e) => {
                log::warn!("{e}");
                out.errors.push(e);
            }
        }
    }
    Ok(out)
}

pub fn trial_paths(dir: &Path, subject: u32, video: u32) -> (PathBuf, PathBuf) {
    (dir.join(eeg_file_name(subject, video)), dir.join(meta_file_name(subject, video)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthesize_trial, SynthesisPlan};

    fn plan() -> SynthesisPlan {
        SynthesisPlan { n_subjects: 1, n_videos: 2, stimulus_s: 4.0, baseline_s: 1.0, ..Default::default() }
    }

    #[test]
    fn round_trip_within_print_precision() {
        let dir = tempfile::tempdir().unwrap();
        let t = synthesize_trial(&plan(), 0, 1).unwrap();
        write_trial(dir.path(), &t).unwrap();
        let m = ElectrodeMontage::deap32();
        let back = read_trial(dir.path(), 0, 1, &m).unwrap();
        assert_eq!(back.recording.channel_names(), t.recording.channel_names());
        assert_eq!(back.recording.baseline_samples(), t.recording.baseline_samples());
        assert!((back.score - t.score).abs() <= 5e-7);
        for (a, b) in back.recording.data().iter().zip(t.recording.data()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 5e-7);
            }
        }
    }

    #[test]
    fn columns_follow_the_montage() {
        let dir = tempfile::tempdir().unwrap();
        let t = synthesize_trial(&plan(), 0, 0).unwrap();
        write_trial(dir.path(), &t).unwrap();
        // swap the first two columns on disk
        let (eeg, _) = trial_paths(dir.path(), 0, 0);
        let text = fs::read_to_string(&eeg).unwrap();
        let swapped: String = text
            .lines()
            .map(|l| {
                let mut f: Vec<&str> = l.split(',').collect();
                f.swap(0, 1);
                f.join(",") + "\n"
            })
            .collect();
        fs::write(&eeg, swapped).unwrap();
        let back = read_trial(dir.path(), 0, 0, &ElectrodeMontage::deap32()).unwrap();
        assert!((back.recording.channel(0)[5] - t.recording.channel(0)[5]).abs() <= 5e-7);
        assert!((back.recording.channel(1)[5] - t.recording.channel(1)[5]).abs() <= 5e-7);
    }

    #[test]
    fn bad_files_are_reported_and_skipped() {
        let dir = tempfile::tempdir().unwrap();
        for v in 0..2 {
            write_trial(dir.path(), &synthesize_trial(&plan(), 0, v).unwrap()).unwrap();
        }
        // trial 0: drop the label row; trial 1 stays valid
        let (_, meta) = trial_paths(dir.path(), 0, 0);
        let text = fs::read_to_string(&meta).unwrap();
        fs::write(&meta, text.lines().filter(|l| !l.starts_with("preference")).collect::<Vec<_>>().join("\n")).unwrap();
        // a third file with too few channels
        fs::write(dir.path().join("s0_v7_eeg.csv"), "Fp1,AF3\n0,0\n").unwrap();
        fs::copy(trial_paths(dir.path(), 0, 1).1, trial_paths(dir.path(), 0, 7).1).unwrap();

        let imp = import_csv_trials(dir.path(), &ElectrodeMontage::deap32()).unwrap();
        assert_eq!(imp.trials.len(), 1);
        assert_eq!(imp.trials[0].video, 1);
        assert_eq!(imp.errors.len(), 2);
        let msgs: Vec<String> = imp.errors.iter().map(|e| e.to_string()).collect();
        assert!(msgs.iter().any(|m| m.contains("missing preference")), "{msgs:?}");
        assert!(msgs.iter().any(|m| m.contains("2 channels")), "{msgs:?}");
    }

    #[test]
    fn file_names_parse() {
        assert_eq!(parse_name("s12_v3_eeg.csv"), Some((12, 3)));
        assert_eq!(parse_name("s12_v3_meta.csv"), None);
        assert_eq!(parse_name("x12_v3_eeg.csv"), None);
    }
}
