//! Failure-combination probabilities and reliability-weighted accuracy.
//!
//! Nodes fail independently: node `i` survives with probability `r_i`. A
//! failure combination assigns survive/fail to every fallible node, has
//! probability `∏ (b_i r_i + (1 − b_i)(1 − r_i))`, and the average accuracy
//! of a network is the probability-weighted sum of its accuracy under every
//! combination.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SplitKind};
use crate::error::{Error, Result};
use crate::inference::{accuracy, GuessMode};
use crate::nn::Real;
use crate::topology::DistributedDnn;

/// Exact enumeration is refused above this many fallible nodes.
pub const ENUMERATION_LIMIT: usize = 20;

/// Survival probability for each named fallible node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilitySetting {
    pub nodes: Vec<String>,
    pub survival: Vec<f64>,
}

impl ReliabilitySetting {
    pub fn new<S: Into<String>>(nodes: impl IntoIterator<Item = S>, survival: Vec<f64>) -> Result<Self> {
        let setting = Self { nodes: nodes.into_iter().map(Into::into).collect(), survival };
        setting.validate()?;
        Ok(setting)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes.len() != self.survival.len() {
            return Err(Error::Reliability(format!(
                "{} nodes but {} survival probabilities",
                self.nodes.len(),
                self.survival.len()
            )));
        }
        if let Some(r) = self.survival.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Reliability(format!("survival probability {r} is outside [0, 1]")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Survive (`true`) or fail for every node of a [`ReliabilitySetting`], in
/// the same order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FailureCombination {
    pub alive: Vec<bool>,
}

impl FailureCombination {
    pub fn all_alive(n: usize) -> Self {
        Self { alive: vec![true; n] }
    }

    /// The `index`-th of the `2^n` combinations: bit `n − 1 − i` of `index`
    /// is the survival bit of node `i`, so index 0 is "all failed" and
    /// `2^n − 1` is "all alive".
    pub fn from_index(index: u64, n: usize) -> Self {
        Self { alive: (0..n).map(|i| (index >> (n - 1 - i)) & 1 == 1).collect() }
    }

    /// Bits as a string such as `"110"`, first node first.
    pub fn bits(&self) -> String {
        self.alive.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }
}

pub fn combination_probability(combination: &FailureCombination, setting: &ReliabilitySetting) -> Result<f64> {
    if combination.alive.len() != setting.survival.len() {
        return Err(Error::Reliability(format!(
            "combination has {} bits for {} nodes",
            combination.alive.len(),
            setting.survival.len()
        )));
    }
    Ok(combination.alive.iter().zip(&setting.survival).map(|(&b, &r)| if b { r } else { 1.0 - r }).product())
}

/// All `2^n` combinations in index order.
pub fn all_combinations(n: usize) -> impl Iterator<Item = FailureCombination> {
    (0..1u64 << n).map(move |i| FailureCombination::from_index(i, n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Method {
    Exact,
    MonteCarlo { samples: usize, seed: u64, std_error: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationRow {
    pub bits: String,
    pub alive: Vec<bool>,
    /// Probability of the combination under the setting.
    pub probability: f64,
    pub accuracy: f64,
    /// Times the combination was drawn (Monte Carlo only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draws: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResiliencyReport {
    pub setting: ReliabilitySetting,
    pub rows: Vec<CombinationRow>,
    pub average_accuracy: f64,
    pub method: Method,
}

impl ResiliencyReport {
    /// One row per combination followed by an `average` row. `extra`
    /// columns (name, value) are repeated on every row.
    pub fn write_csv<W: Write>(&self, out: W, extra: &[(&str, String)]) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["combination", "probability", "accuracy", "draws"];
        header.extend(extra.iter().map(|(k, _)| *k));
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![
                row.bits.clone(),
                row.probability.to_string(),
                row.accuracy.to_string(),
                row.draws.map(|d| d.to_string()).unwrap_or_default(),
            ];
            rec.extend(extra.iter().map(|(_, v)| v.clone()));
            w.write_record(&rec)?;
        }
        let draws = match self.method {
            Method::MonteCarlo { samples, .. } => samples.to_string(),
            Method::Exact => String::new(),
        };
        let total: f64 = self.rows.iter().map(|r| r.probability).sum();
        let mut rec = vec!["average".to_string(), total.to_string(), self.average_accuracy.to_string(), draws];
        rec.extend(extra.iter().map(|(_, v)| v.clone()));
        w.write_record(&rec)?;
        w.flush()?;
        Ok(())
    }
}

/// Exact reliability-weighted accuracy: `accuracy_of` is called once per
/// combination with the survival bits of the setting's nodes.
pub fn weighted_average<F>(setting: &ReliabilitySetting, accuracy_of: F) -> Result<ResiliencyReport>
where
    F: Fn(&[bool]) -> Result<f64> + Sync,
{
    setting.validate()?;
    let n = setting.len();
    if n > ENUMERATION_LIMIT {
        return Err(Error::EnumerationLimit { fallible: n, limit: ENUMERATION_LIMIT });
    }
    let combos: Vec<FailureCombination> = all_combinations(n).collect();
    let rows = combos
        .into_par_iter()
        .map(|c| {
            Ok(CombinationRow {
                bits: c.bits(),
                probability: combination_probability(&c, setting)?,
                accuracy: accuracy_of(&c.alive)?,
                alive: c.alive,
                draws: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let average_accuracy = rows.iter().map(|r| r.probability * r.accuracy).sum();
    Ok(ResiliencyReport { setting: setting.clone(), rows, average_accuracy, method: Method::Exact })
}

/// Monte Carlo estimate: draws `samples` combinations with independent
/// Bernoulli survivals and averages their accuracies. Each distinct
/// combination is evaluated once.
pub fn monte_carlo<F>(
    setting: &ReliabilitySetting,
    samples: usize,
    seed: u64,
    accuracy_of: F,
) -> Result<ResiliencyReport>
where
    F: Fn(&[bool]) -> Result<f64> + Sync,
{
    setting.validate()?;
    if samples == 0 {
        return Err(Error::Reliability("Monte Carlo needs at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws: BTreeMap<Vec<bool>, usize> = BTreeMap::new();
    for _ in 0..samples {
        let alive: Vec<bool> = setting.survival.iter().map(|&r| rng.random::<f64>() < r).collect();
        *draws.entry(alive).or_default() += 1;
    }
    let rows = draws
        .into_iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(alive, count)| {
            let c = FailureCombination { alive };
            Ok(CombinationRow {
                bits: c.bits(),
                probability: combination_probability(&c, setting)?,
                accuracy: accuracy_of(&c.alive)?,
                alive: c.alive,
                draws: Some(count),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n = samples as f64;
    let mean = rows.iter().map(|r| r.accuracy * r.draws.unwrap_or(0) as f64).sum::<f64>() / n;
    let std_error = if samples > 1 {
        let ss: f64 = rows.iter().map(|r| r.draws.unwrap_or(0) as f64 * (r.accuracy - mean).powi(2)).sum();
        (ss / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    Ok(ResiliencyReport {
        setting: setting.clone(),
        rows,
        average_accuracy: mean,
        method: Method::MonteCarlo { samples, seed, std_error },
    })
}

/// Accuracy of one network on one split, memoized per failure mask so that
/// several settings over the same nodes evaluate each mask once.
pub struct MaskedAccuracy<'a, T> {
    dnn: &'a DistributedDnn<T>,
    data: &'a Dataset,
    split: SplitKind,
    guess: GuessMode,
    cache: Mutex<HashMap<Vec<bool>, f64>>,
}

impl<'a, T: Real> MaskedAccuracy<'a, T> {
    pub fn new(dnn: &'a DistributedDnn<T>, data: &'a Dataset, split: SplitKind, guess: GuessMode) -> Self {
        Self { dnn, data, split, guess, cache: Mutex::new(HashMap::new()) }
    }

    fn check_covers(&self, setting: &ReliabilitySetting) -> Result<()> {
        let graph = &self.dnn.graph;
        let fallible: Vec<&str> = graph.fallible_nodes().into_iter().map(|i| graph.nodes[i].id.as_str()).collect();
        let mut named: Vec<&str> = setting.nodes.iter().map(String::as_str).collect();
        named.sort_unstable();
        let mut expected = fallible.clone();
        expected.sort_unstable();
        if named != expected {
            return Err(Error::Reliability(format!(
                "setting covers {:?} but the fallible nodes are {:?}",
                setting.nodes, fallible
            )));
        }
        Ok(())
    }

    fn of(&self, setting: &ReliabilitySetting, bits: &[bool]) -> Result<f64> {
        let mask = self.dnn.graph.alive_mask(&setting.nodes, bits)?;
        if let Some(&acc) = self.cache.lock().expect("cache lock").get(&mask) {
            return Ok(acc);
        }
        let acc = accuracy(self.dnn, self.data, self.split, &mask, self.guess)?;
        self.cache.lock().expect("cache lock").insert(mask, acc);
        Ok(acc)
    }

    pub fn exact(&self, setting: &ReliabilitySetting) -> Result<ResiliencyReport> {
        self.check_covers(setting)?;
        weighted_average(setting, |bits| self.of(setting, bits))
    }

    pub fn monte_carlo(&self, setting: &ReliabilitySetting, samples: usize, seed: u64) -> Result<ResiliencyReport> {
        self.check_covers(setting)?;
        monte_carlo(setting, samples, seed, |bits| self.of(setting, bits))
    }
}

/// Exact average accuracy of a trained network on one split.
pub fn average_accuracy<T: Real>(
    dnn: &DistributedDnn<T>,
    data: &Dataset,
    split: SplitKind,
    setting: &ReliabilitySetting,
    guess: GuessMode,
) -> Result<ResiliencyReport> {
    MaskedAccuracy::new(dnn, data, split, guess).exact(setting)
}

pub fn monte_carlo_average_accuracy<T: Real>(
    dnn: &DistributedDnn<T>,
    data: &Dataset,
    split: SplitKind,
    setting: &ReliabilitySetting,
    samples: usize,
    seed: u64,
    guess: GuessMode,
) -> Result<ResiliencyReport> {
    MaskedAccuracy::new(dnn, data, split, guess).monte_carlo(setting, samples, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Health,
    Camera,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReliabilityTier {
    NoFailure,
    Normal,
    Poor,
    Hazardous,
}

impl ReliabilityTier {
    pub const ALL: [ReliabilityTier; 4] =
        [ReliabilityTier::NoFailure, ReliabilityTier::Normal, ReliabilityTier::Poor, ReliabilityTier::Hazardous];

    pub fn name(self) -> &'static str {
        match self {
            ReliabilityTier::NoFailure => "no_failure",
            ReliabilityTier::Normal => "normal",
            ReliabilityTier::Poor => "poor",
            ReliabilityTier::Hazardous => "hazardous",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }
}

/// Node order of the reference reliability tables.
pub fn reliability_nodes(experiment: Experiment) -> &'static [&'static str] {
    match experiment {
        Experiment::Health => &["f1", "f2", "e1"],
        Experiment::Camera => &["f1", "f2", "f3", "f4", "e1", "e2", "e3", "e4"],
    }
}

/// Reference survival probabilities for each experiment and tier.
pub fn tier_settings(experiment: Experiment, tier: ReliabilityTier) -> ReliabilitySetting {
    let nodes = reliability_nodes(experiment);
    let survival = match (experiment, tier) {
        (_, ReliabilityTier::NoFailure) => vec![1.0; nodes.len()],
        (Experiment::Health, ReliabilityTier::Normal) => vec![0.99, 0.98, 0.96],
        (Experiment::Health, ReliabilityTier::Poor) => vec![0.98, 0.96, 0.92],
        (Experiment::Health, ReliabilityTier::Hazardous) => vec![0.90, 0.85, 0.80],
        (Experiment::Camera, ReliabilityTier::Normal) => vec![0.995, 0.99, 0.98, 0.97, 0.95, 0.95, 0.95, 0.95],
        (Experiment::Camera, ReliabilityTier::Poor) => vec![0.99, 0.98, 0.94, 0.93, 0.90, 0.90, 0.87, 0.87],
        (Experiment::Camera, ReliabilityTier::Hazardous) => vec![0.90, 0.90, 0.80, 0.80, 0.70, 0.60, 0.70, 0.66],
    };
    ReliabilitySetting::new(nodes.iter().copied(), survival).expect("static table")
}
