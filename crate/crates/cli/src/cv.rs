use std::fmt::Write as _;
use std::fs;

use anyhow::Result;
use clap::Args;
use neurograph::dataset::csv::import_csv_trials;
use neurograph::eval::{cross_validate, failure_analysis, write_report, CnnLearner, EvalReport};
use neurograph::layout::OrderingMethod;
use neurograph::nn::{Mode, Variant};
use neurograph::pipeline::{build_example_set, make_ordering, ordering_name, Extractor, FeatureKind};

use crate::config::{parse_feature, parse_network, PipelineConfig};
use crate::synth::prepare_out_dir;
use crate::{usage, CommonArgs, PartialFailure};

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Run every network x feature x ordering combination.
    #[arg(long)]
    pub grid: bool,
    /// Print the configurations that would run, then exit.
    #[arg(long)]
    pub list: bool,
}

/// Ordering axis value of a grid row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridOrdering {
    /// PSD topographies have no electrode ordering.
    None,
    Distance,
    /// Averaged over consecutive seeds starting here.
    Random(u64),
}

impl GridOrdering {
    fn label(self) -> String {
        match self {
            GridOrdering::None => "-".into(),
            GridOrdering::Distance => "distance".into(),
            GridOrdering::Random(s) => format!("random:{s}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridRow {
    pub network: Variant,
    pub feature: FeatureKind,
    pub ordering: GridOrdering,
}

/// Rows in table order: network, then feature, then ordering.
pub fn grid_rows(cfg: &PipelineConfig, full: bool) -> Result<Vec<GridRow>> {
    let networks: Vec<Variant> = if !cfg.cv.networks.is_empty() {
        cfg.cv.networks.iter().map(|n| parse_network(n)).collect::<Result<_>>()?
    } else if full {
        vec![Variant::Cnn1, Variant::Cnn2, Variant::Cnn3]
    } else {
        vec![cfg.network()?]
    };
    let features: Vec<FeatureKind> = if !cfg.cv.features.is_empty() {
        cfg.cv.features.iter().map(|f| parse_feature(f)).collect::<Result<_>>()?
    } else if full {
        vec![FeatureKind::Pcc, FeatureKind::Plv, FeatureKind::Te, FeatureKind::Psd]
    } else {
        vec![cfg.feature()?]
    };
    let explicit: Option<Vec<String>> = if !cfg.cv.orderings.is_empty() {
        Some(cfg.cv.orderings.clone())
    } else {
        cfg.extract.ordering.clone().map(|o| vec![o])
    };
    let orderings: Vec<String> = match &explicit {
        Some(o) => o.clone(),
        None if full => vec!["distance".into(), "random".into()],
        None => vec!["distance".into()],
    };
    let mut rows = Vec::new();
    for &network in &networks {
        for &feature in &features {
            if feature == FeatureKind::Psd {
                if !full {
                    if let Some(o) = explicit.as_ref().and_then(|o| o.iter().find(|o| *o != "distance")) {
                        cfg.ordering_for(feature, Some(o))?;
                    }
                }
                rows.push(GridRow { network, feature, ordering: GridOrdering::None });
                continue;
            }
            for o in &orderings {
                let ordering = if o == "random" {
                    GridOrdering::Random(cfg.seed)
                } else {
                    match cfg.ordering_for(feature, Some(o))? {
                        OrderingMethod::Distance => GridOrdering::Distance,
                        OrderingMethod::Random { seed } => GridOrdering::Random(seed),
                        OrderingMethod::Identity => {
                            return Err(usage("identity ordering is not part of the experiment grid"))
                        }
                    }
                };
                rows.push(GridRow { network, feature, ordering });
            }
        }
    }
    Ok(rows)
}

pub fn run(args: CvArgs) -> Result<()> {
    let cfg = PipelineConfig::from_args(&args.common)?;
    let mode = cfg.mode()?;
    let rows = grid_rows(&cfg, args.grid)?;
    let metric = match mode {
        Mode::Classify => "macro_f1",
        Mode::Regress => "rmse",
    };
    if args.list {
        for r in &rows {
            println!("{} {} {} {metric}", r.network, r.feature, r.ordering.label());
        }
        return Ok(());
    }
    if cfg.cv.random_orderings == 0 {
        return Err(usage("cv.random_orderings must be at least 1"));
    }
    let train_cfg = cfg.train_config(mode)?;
    let cv_cfg = cfg.cv_config(mode);
    let input = cfg.input()?;
    let out = cfg.output()?;
    let montage = cfg.montage()?;
    prepare_out_dir(out, args.common.force)?;

    let import = import_csv_trials(input, &montage)?;
    if import.trials.is_empty() {
        return Err(usage(format!("no usable trials in {}", input.display())));
    }
    log::info!("{} trials imported, {} failed", import.trials.len(), import.errors.len());

    let mut values: Vec<Option<Vec<f64>>> = vec![None; rows.len()];
    let mut features: Vec<FeatureKind> = rows.iter().map(|r| r.feature).collect();
    features.dedup();
    features.sort_by_key(|f| f.as_str());
    features.dedup();
    for feature in features {
        // extract once in montage order, reorder per row
        let extractor =
            Extractor::new(cfg.extract_config(feature, OrderingMethod::Identity)?, montage.clone())?;
        let base = build_example_set(&extractor, &import.trials)?;
        log::info!("{feature}: {} examples", base.len());
        for (ri, row) in rows.iter().enumerate().filter(|(_, r)| r.feature == feature) {
            let methods: Vec<OrderingMethod> = match row.ordering {
                GridOrdering::None => vec![OrderingMethod::Identity],
                GridOrdering::Distance => vec![OrderingMethod::Distance],
                GridOrdering::Random(s) => (0..cfg.cv.random_orderings as u64)
                    .map(|k| OrderingMethod::Random { seed: s + k })
                    .collect(),
            };
            let mut runs = Vec::new();
            for m in methods {
                let mut set = base.clone();
                if row.ordering != GridOrdering::None {
                    set.reorder(&make_ordering(&montage, m)?)?;
                }
                let learner = CnnLearner::new(row.network, train_cfg.clone());
                let report = cross_validate(&set, &learner, &cv_cfg)?;
                let name = format!(
                    "{}_{}_{}",
                    row.network,
                    feature,
                    if row.ordering == GridOrdering::None { "none".into() } else { ordering_name(m).replace(':', "") }
                );
                save_run(out, &name, row, &report, &set.meta)?;
                log::info!("{name}: {metric} {:.4}", report.headline());
                runs.push(report.headline());
            }
            values[ri] = Some(runs);
        }
    }

    let mut csv = "network,feature,ordering,metric,value,runs\n".to_string();
    let mut table = format!("{:<8} {:<8} {:<12} {:>10}\n", "network", "feature", "ordering", metric);
    for (row, runs) in rows.iter().zip(&values) {
        let runs = runs.as_ref().expect("every row ran");
        let mean = runs.iter().sum::<f64>() / runs.len() as f64;
        let run_list: Vec<String> = runs.iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(
            csv,
            "{},{},{},{metric},{mean:.6},{}",
            row.network,
            row.feature,
            row.ordering.label(),
            run_list.join(";")
        );
        let _ = writeln!(table, "{:<8} {:<8} {:<12} {:>10.4}", row.network, row.feature, row.ordering.label(), mean);
    }
    fs::write(out.join("cv_table.csv"), csv)?;
    fs::write(out.join("cv_table.txt"), &table)?;
    print!("{table}");
    if import.errors.is_empty() {
        Ok(())
    } else {
        Err(PartialFailure(import.errors.len()).into())
    }
}

fn save_run(
    out: &std::path::Path,
    name: &str,
    row: &GridRow,
    report: &EvalReport,
    meta: &[neurograph::dataset::ExampleMeta],
) -> Result<()> {
    let analysis = failure_analysis(report, meta)?;
    let header = vec![
        ("network".to_string(), row.network.to_string()),
        ("feature".to_string(), row.feature.to_string()),
        ("ordering".to_string(), row.ordering.label()),
    ];
    write_report(&out.join(name), report, &analysis, &header)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_grid_has_21_rows() {
        let rows = grid_rows(&PipelineConfig::default(), true).unwrap();
        assert_eq!(rows.len(), 21);
        assert_eq!(rows.iter().filter(|r| r.feature == FeatureKind::Psd).count(), 3);
        assert!(rows.iter().filter(|r| r.feature == FeatureKind::Psd).all(|r| r.ordering == GridOrdering::None));
        assert_eq!(rows.iter().filter(|r| matches!(r.ordering, GridOrdering::Random(_))).count(), 9);
    }

    #[test]
    fn single_row_and_rejections() {
        let cfg = PipelineConfig::default();
        let rows = grid_rows(&cfg, false).unwrap();
        assert_eq!(rows, vec![GridRow { network: Variant::Cnn1, feature: FeatureKind::Plv, ordering: GridOrdering::Distance }]);
        let mut psd = PipelineConfig::default();
        psd.extract.feature = "psd".into();
        psd.extract.ordering = Some("random:4".into());
        assert!(grid_rows(&psd, false).is_err());
        let mut bad = PipelineConfig::default();
        bad.extract.ordering = Some("sideways".into());
        assert!(grid_rows(&bad, false).is_err());
    }
}
