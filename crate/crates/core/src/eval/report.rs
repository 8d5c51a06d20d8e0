use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::cv::EvalReport;
use super::failure::FailureAnalysis;
use super::EvalError;

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

/// Key-value header followed by fold, histogram and video tables.
pub fn report_text(report: &EvalReport, analysis: &FailureAnalysis, header: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in header {
        let _ = writeln!(s, "{k}: {v}");
    }
    let p = &report.pooled;
    let _ = writeln!(s, "mode: {}", report.mode);
    let _ = writeln!(s, "examples: {}", p.n);
    if let Some(c) = p.confusion {
        let _ = writeln!(s, "macro_f1: {:.6}", c.macro_f1());
        let _ = writeln!(s, "f1_like: {:.6}", c.f1_positive());
        let _ = writeln!(s, "f1_dislike: {:.6}", c.f1_negative());
        let _ = writeln!(s, "accuracy: {:.6}", c.accuracy());
        let _ = writeln!(s, "confusion: tp={} fp={} tn={} fn={}", c.tp, c.fp, c.tn, c.fn_);
    }
    if let Some(r) = p.rmse {
        let _ = writeln!(s, "rmse: {r:.6}");
        let _ = writeln!(s, "mean_residual: {}", opt(p.mean_residual));
    }
    let _ = writeln!(s, "failures: {}", analysis.total_failures);
    let _ = writeln!(s, "top3_subject_share: {:.6}", analysis.top_subject_share(3));

    let _ = writeln!(s, "\n[folds]\nfold  n       headline");
    for f in &report.folds {
        let _ = writeln!(s, "{:<5} {:<7} {:.6}", f.fold.unwrap_or(0), f.n, f.headline());
    }
    let _ = writeln!(s, "\n[failures by subject]\nsubject  failures");
    for (id, n) in &analysis.by_subject {
        let _ = writeln!(s, "{id:<8} {n}");
    }
    let _ = writeln!(s, "\n[failures by video]\nvideo  failures");
    for (id, n) in &analysis.by_video {
        let _ = writeln!(s, "{id:<6} {n}");
    }
    let _ = writeln!(s, "\n[videos]\nvideo  n      failures  preference  valence   arousal   abs_residual  bottom");
    for v in &analysis.videos {
        let _ = writeln!(
            s,
            "{:<6} {:<6} {:<9} {:<11.4} {:<9} {:<9} {:<13} {}",
            v.video,
            v.examples,
            v.failures,
            v.mean_preference,
            v.mean_valence.map_or("-".into(), |x| format!("{x:.4}")),
            v.mean_arousal.map_or("-".into(), |x| format!("{x:.4}")),
            v.abs_residual_sum.map_or("-".into(), |x| format!("{x:.4}")),
            v.bottom_quantile
        );
    }
    s
}

/// Writes `report.txt` plus CSV tables for folds, both histograms, the
/// video table and per-example predictions.
pub fn write_report(
    dir: &Path,
    report: &EvalReport,
    analysis: &FailureAnalysis,
    header: &[(String, String)],
) -> Result<(), EvalError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.txt"), report_text(report, analysis, header))?;

    let mut folds = String::from("fold,n,tp,fp,tn,fn,macro_f1,rmse\n");
    for f in report.folds.iter().chain(std::iter::once(&report.pooled)) {
        let c = f.confusion;
        let _ = writeln!(
            folds,
            "{},{},{},{},{},{},{},{}",
            f.fold.map_or("pooled".into(), |x| x.to_string()),
            f.n,
            c.map_or(String::new(), |c| c.tp.to_string()),
            c.map_or(String::new(), |c| c.fp.to_string()),
            c.map_or(String::new(), |c| c.tn.to_string()),
            c.map_or(String::new(), |c| c.fn_.to_string()),
            opt(f.macro_f1()),
            opt(f.rmse)
        );
    }
    fs::write(dir.join("folds.csv"), folds)?;

    let hist = |name: &str, rows: &[(u32, u64)]| {
        let mut t = format!("{name},failures\n");
        for (id, n) in rows {
            let _ = writeln!(t, "{id},{n}");
        }
        t
    };
    fs::write(dir.join("failures_by_subject.csv"), hist("subject", &analysis.by_subject))?;
    fs::write(dir.join("failures_by_video.csv"), hist("video", &analysis.by_video))?;

    let mut videos = String::from("video,examples,failures,mean_preference,mean_valence,mean_arousal,abs_residual_sum,bottom_quantile\n");
    for v in &analysis.videos {
        let _ = writeln!(
            videos,
            "{},{},{},{:.6},{},{},{},{}",
            v.video,
            v.examples,
            v.failures,
            v.mean_preference,
            opt(v.mean_valence),
            opt(v.mean_arousal),
            opt(v.abs_residual_sum),
            v.bottom_quantile
        );
    }
    fs::write(dir.join("videos.csv"), videos)?;

    let mut preds = String::from("index,fold,subject,video,segment,truth_class,truth_score,output\n");
    for r in &report.results {
        let _ = writeln!(
            preds,
            "{},{},{},{},{},{},{:.6},{:.6}",
            r.index, r.fold, r.subject, r.video, r.segment, r.truth_class, r.truth_score, r.output
        );
    }
    fs::write(dir.join("predictions.csv"), preds)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{label, ExampleMeta};
    use crate::eval::cv::ExampleResult;
    use crate::eval::failure::failure_analysis;
    use crate::nn::Mode;

    #[test]
    fn report_files_are_written_and_consistent() {
        let metas: Vec<ExampleMeta> = (0..20)
            .map(|i| ExampleMeta {
                class: label(if i % 2 == 0 { 3.0 } else { 7.0 }).unwrap(),
                score: if i % 2 == 0 { 3.0 } else { 7.0 },
                valence: None,
                arousal: None,
                subject: i % 3,
                video: i % 4,
                segment: 0,
                fold: None,
            })
            .collect();
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
                output: if i < 3 { 0.9 } else { m.class.index() as f64 },
            })
            .collect();
        let r = EvalReport::from_results(Mode::Classify, 5, results).unwrap();
        let a = failure_analysis(&r, &metas).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let header = vec![("feature".to_string(), "plv".to_string())];
        write_report(dir.path(), &r, &a, &header).unwrap();
        let text = fs::read_to_string(dir.path().join("report.txt")).unwrap();
        assert!(text.starts_with("feature: plv\n"));
        assert!(text.contains("failures: 2"));
        let subj = fs::read_to_string(dir.path().join("failures_by_subject.csv")).unwrap();
        let total: u64 = subj.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<u64>().unwrap()).sum();
        assert_eq!(total, 2);
        let folds = fs::read_to_string(dir.path().join("folds.csv")).unwrap();
        assert_eq!(folds.lines().count(), 1 + 5 + 1);
        assert_eq!(fs::read_to_string(dir.path().join("predictions.csv")).unwrap().lines().count(), 21);
    }
}
