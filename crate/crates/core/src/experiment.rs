//! Train-and-evaluate helpers shared by the command-line tool and the
//! acceptance harness.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::config::{EvalMethod, ExperimentConfig, Variant};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::resiliency::{MaskedAccuracy, ReliabilitySetting, ResiliencyReport};
use crate::topology::DistributedDnn;
use crate::training::{train_with, EpochStats, TrainedModel};

/// Trains one variant from the seed's initial weights. Both variants share
/// those weights because layer streams are keyed by layer index.
pub fn train_variant(
    config: &ExperimentConfig,
    data: &Dataset,
    variant: Variant,
    seed: u64,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainedModel> {
    let graph = config.graph(variant)?;
    let train_cfg = config.train_config(seed, Some(data))?;
    train_with(DistributedDnn::initialize(graph, seed), data, &train_cfg, on_epoch)
}

/// One report per named setting, using the configured split, guess mode
/// and method.
pub fn evaluate_settings(
    config: &ExperimentConfig,
    dnn: &DistributedDnn<f32>,
    data: &Dataset,
    settings: &[(String, ReliabilitySetting)],
) -> Result<Vec<(String, ResiliencyReport)>> {
    let ev = &config.evaluation;
    let eval = MaskedAccuracy::new(dnn, data, ev.split, ev.guess);
    settings
        .iter()
        .map(|(name, s)| {
            let report = match ev.method {
                EvalMethod::Exact => eval.exact(s)?,
                EvalMethod::MonteCarlo { samples, seed } => eval.monte_carlo(s, samples, seed)?,
            };
            Ok((name.clone(), report))
        })
        .collect()
}

/// One trained model's average accuracy under one setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: Variant,
    pub setting: String,
    pub seed: u64,
    pub average_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub variant: Variant,
    pub setting: String,
    pub runs: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
}

/// Mean and spread over seeds per (variant, setting), ordered by variant
/// then by first appearance of the setting.
pub fn aggregate(results: &[RunResult]) -> Vec<AggregateRow> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<(Variant, usize), Vec<f64>> = BTreeMap::new();
    for r in results {
        let pos = match order.iter().position(|s| *s == r.setting) {
            Some(p) => p,
            None => {
                order.push(&r.setting);
                order.len() - 1
            }
        };
        groups.entry((r.variant, pos)).or_default().push(r.average_accuracy);
    }
    groups
        .into_iter()
        .map(|((variant, pos), xs)| {
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            AggregateRow {
                variant,
                setting: order[pos].to_string(),
                runs: xs.len(),
                mean,
                std_dev: var.sqrt(),
                min: xs.iter().copied().fold(f64::INFINITY, f64::min),
                max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

/// Mean deepfogguard minus mean vanilla accuracy for `setting`.
pub fn mean_gap(rows: &[AggregateRow], setting: &str) -> Result<f64> {
    let mean = |v: Variant| {
        rows.iter()
            .find(|r| r.variant == v && r.setting == setting)
            .map(|r| r.mean)
            .ok_or_else(|| Error::Config(format!("no {v} results for {setting}")))
    };
    Ok(mean(Variant::Deepfogguard)? - mean(Variant::Vanilla)?)
}

/// Tidy CSV with the config hash on every row.
pub fn write_aggregate_csv<W: Write>(out: W, rows: &[AggregateRow], config_hash: &str, seeds: &[u64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variant", "setting", "runs", "mean", "std_dev", "min", "max", "seeds", "config_hash"])?;
    let seeds = seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(" ");
    for r in rows {
        w.write_record([
            r.variant.name().to_string(),
            r.setting.clone(),
            r.runs.to_string(),
            format!("{:.6}", r.mean),
            format!("{:.6}", r.std_dev),
            format!("{:.6}", r.min),
            format!("{:.6}", r.max),
            seeds.clone(),
            config_hash.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(variant: Variant, setting: &str, seed: u64, acc: f64) -> RunResult {
        RunResult { variant, setting: setting.into(), seed, average_accuracy: acc }
    }

    #[test]
    fn aggregates_per_variant_and_setting() {
        let results = vec![
            run(Variant::Vanilla, "poor", 0, 0.5),
            run(Variant::Vanilla, "normal", 0, 0.7),
            run(Variant::Vanilla, "poor", 1, 0.7),
            run(Variant::Deepfogguard, "poor", 0, 0.8),
            run(Variant::Deepfogguard, "poor", 1, 0.8),
        ];
        let rows = aggregate(&results);
        assert_eq!(rows.len(), 3);
        assert_eq!((rows[0].variant, rows[0].setting.as_str()), (Variant::Vanilla, "poor"));
        assert!((rows[0].mean - 0.6).abs() < 1e-12);
        assert!((rows[0].std_dev - 0.02f64.sqrt()).abs() < 1e-12);
        assert_eq!((rows[0].min, rows[0].max), (0.5, 0.7));
        assert_eq!(rows[1].runs, 1);
        assert_eq!(rows[1].std_dev, 0.0);
        assert!((mean_gap(&rows, "poor").unwrap() - 0.2).abs() < 1e-12);
        assert!(mean_gap(&rows, "normal").is_err());
    }

    #[test]
    fn aggregate_csv_is_self_describing() {
        let rows = aggregate(&[run(Variant::Vanilla, "poor", 3, 0.25)]);
        let mut buf = Vec::new();
        write_aggregate_csv(&mut buf, &rows, "abc", &[3]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut r = csv::Reader::from_reader(text.as_bytes());
        assert_eq!(r.headers().unwrap().len(), 9);
        let rec = r.records().next().unwrap().unwrap();
        assert_eq!(&rec[0], "vanilla");
        assert_eq!(rec[3].parse::<f64>().unwrap(), 0.25);
        assert_eq!(&rec[8], "abc");
    }
}
