use std::collections::BTreeMap;

use serde::Serialize;

use super::cv::EvalReport;
use super::EvalError;
use crate::dataset::ExampleMeta;
use crate::nn::Mode;

/// Share of videos, by mean preference, flagged as the low-score group.
pub const BOTTOM_QUANTILE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VideoSummary {
    pub video: u32,
    pub examples: usize,
    pub failures: u64,
    pub mean_preference: f64,
    pub mean_valence: Option<f64>,
    pub mean_arousal: Option<f64>,
    /// Regression only.
    pub abs_residual_sum: Option<f64>,
    /// Mean preference in the lowest `BOTTOM_QUANTILE` of videos.
    pub bottom_quantile: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureAnalysis {
    pub mode: Mode,
    pub total_failures: u64,
    /// `(subject, failures)`, most failures first, ties by id.
    pub by_subject: Vec<(u32, u64)>,
    /// `(video, failures)`, most failures first, ties by id.
    pub by_video: Vec<(u32, u64)>,
    /// One row per video, by id.
    pub videos: Vec<VideoSummary>,
}

impl FailureAnalysis {
    /// Fraction of all failures owned by the `k` worst subjects.
    pub fn top_subject_share(&self, k: usize) -> f64 {
        if self.total_failures == 0 {
            return 0.0;
        }
        self.by_subject.iter().take(k).map(|s| s.1).sum::<u64>() as f64 / self.total_failures as f64
    }
}

fn ranked(counts: BTreeMap<u32, u64>) -> Vec<(u32, u64)> {
    let mut v: Vec<(u32, u64)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    v
}

fn mean_opt(xs: &[Option<f64>]) -> Option<f64> {
    let v: Option<Vec<f64>> = xs.iter().copied().collect();
    v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

/// Failure histograms and per-video rating tables. `meta` is the metadata of
/// the evaluated example set, indexed like the report's results.
pub fn failure_analysis(report: &EvalReport, meta: &[ExampleMeta]) -> Result<FailureAnalysis, EvalError> {
    let mut by_subject = BTreeMap::new();
    let mut by_video = BTreeMap::new();
    let mut per_video: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    let mut total = 0u64;
    for (k, r) in report.results.iter().enumerate() {
        let m = meta
            .get(r.index)
            .ok_or_else(|| EvalError::LengthMismatch(meta.len(), r.index + 1))?;
        let fail = u64::from(r.is_failure(report.mode));
        total += fail;
        *by_subject.entry(m.subject).or_insert(0) += fail;
        *by_video.entry(m.video).or_insert(0) += fail;
        per_video.entry(m.video).or_default().push(k);
    }
    let mut videos: Vec<VideoSummary> = per_video
        .iter()
        .map(|(&video, ks)| {
            let ms: Vec<&ExampleMeta> = ks.iter().map(|&k| &meta[report.results[k].index]).collect();
            let n = ks.len();
            let valence: Vec<Option<f64>> = ms.iter().map(|m| m.valence).collect();
            let arousal: Vec<Option<f64>> = ms.iter().map(|m| m.arousal).collect();
            VideoSummary {
                video,
                examples: n,
                failures: by_video[&video],
                mean_preference: ms.iter().map(|m| m.score).sum::<f64>() / n as f64,
                mean_valence: mean_opt(&valence),
                mean_arousal: mean_opt(&arousal),
                abs_residual_sum: (report.mode == Mode::Regress)
                    .then(|| ks.iter().map(|&k| report.results[k].residual().abs()).sum()),
                bottom_quantile: false,
            }
        })
        .collect();
    let mut by_pref: Vec<usize> = (0..videos.len()).collect();
    by_pref.sort_by(|&a, &b| {
        videos[a].mean_preference.total_cmp(&videos[b].mean_preference).then(videos[a].video.cmp(&videos[b].video))
    });
    let n_bottom = (BOTTOM_QUANTILE * videos.len() as f64).ceil() as usize;
    for &i in &by_pref[..n_bottom] {
        videos[i].bottom_quantile = true;
    }
    Ok(FailureAnalysis {
        mode: report.mode,
        total_failures: total,
        by_subject: ranked(by_subject),
        by_video: ranked(by_video),
        videos,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{label, Class};
    use crate::eval::cv::ExampleResult;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn meta(subject: u32, video: u32, score: f64) -> ExampleMeta {
        ExampleMeta {
            class: label(score).unwrap(),
            score,
            valence: Some(score - 0.5),
            arousal: Some(4.0),
            subject,
            video,
            segment: 0,
            fold: None,
        }
    }

    /// Report whose outputs are correct except where `flip` says otherwise.
    fn report(metas: &[ExampleMeta], flip: impl Fn(usize) -> bool, mode: Mode) -> EvalReport {
        let results = metas
            .iter()
            .enumerate()
            .map(|(i, m)| ExampleResult {
                index: i,
                fold: (i % 5) as u8,
                subject: m.subject,
                video: m.video,
                segment: 0,
                truth_class: m.class.index(),
                truth_score: m.score,
                output: match mode {
                    Mode::Classify => {
                        let right = if m.class == Class::Like { 1.0 } else { 0.0 };
                        if flip(i) {
                            1.0 - right
                        } else {
                            right
                        }
                    }
                    Mode::Regress => m.score + if flip(i) { 2.0 } else { 0.0 },
                },
            })
            .collect();
        EvalReport::from_results(mode, 5, results).unwrap()
    }

    fn corpus() -> Vec<ExampleMeta> {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut v = Vec::new();
        for s in 0..8 {
            for vid in 0..10 {
                for _ in 0..5 {
                    v.push(meta(s, vid, 1.0 + 8.0 * rng.gen::<f64>()));
                }
            }
        }
        v
    }

    #[test]
    fn zero_failures_give_empty_bars() {
        let m = corpus();
        let a = failure_analysis(&report(&m, |_| false, Mode::Classify), &m).unwrap();
        assert_eq!(a.total_failures, 0);
        assert!(a.by_subject.iter().chain(&a.by_video).all(|b| b.1 == 0));
        assert_eq!(a.by_subject.len(), 8);
        assert_eq!(a.top_subject_share(3), 0.0);
    }

    #[test]
    fn planted_noisy_subject_ranks_first_and_totals_conserve() {
        let m = corpus();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let flips: Vec<bool> =
            m.iter().map(|x| rng.gen::<f64>() < if x.subject == 5 { 0.6 } else { 0.05 }).collect();
        let r = report(&m, |i| flips[i], Mode::Classify);
        let a = failure_analysis(&r, &m).unwrap();
        assert_eq!(a.by_subject[0].0, 5);
        let n_flip = flips.iter().filter(|&&f| f).count() as u64;
        assert_eq!(a.total_failures, n_flip);
        assert_eq!(a.total_failures, r.pooled.confusion.unwrap().failures());
        assert_eq!(a.by_subject.iter().map(|s| s.1).sum::<u64>(), n_flip);
        assert_eq!(a.by_video.iter().map(|s| s.1).sum::<u64>(), n_flip);
        assert!(a.by_subject.windows(2).all(|w| w[0].1 >= w[1].1));
        assert_eq!(a.videos.iter().map(|v| v.failures).sum::<u64>(), n_flip);
    }

    #[test]
    fn video_tables_and_bottom_flags() {
        let m = corpus();
        let r = report(&m, |i| i % 7 == 0, Mode::Regress);
        let a = failure_analysis(&r, &m).unwrap();
        assert_eq!(a.total_failures, 0);
        assert_eq!(a.videos.len(), 10);
        assert_eq!(a.videos.iter().filter(|v| v.bottom_quantile).count(), 2);
        let flagged_max = a.videos.iter().filter(|v| v.bottom_quantile).map(|v| v.mean_preference).fold(f64::MIN, f64::max);
        let other_min = a.videos.iter().filter(|v| !v.bottom_quantile).map(|v| v.mean_preference).fold(f64::MAX, f64::min);
        assert!(flagged_max <= other_min);
        let total_abs: f64 = a.videos.iter().map(|v| v.abs_residual_sum.unwrap()).sum();
        assert!((total_abs - 2.0 * (0..m.len()).filter(|i| i % 7 == 0).count() as f64).abs() < 1e-9);
        let v0 = &a.videos[0];
        let want: f64 = m.iter().filter(|x| x.video == 0).map(|x| x.score).sum::<f64>() / 40.0;
        assert!((v0.mean_preference - want).abs() < 1e-12);
        assert!((v0.mean_valence.unwrap() - (want - 0.5)).abs() < 1e-12);
    }
}
