//! TOML experiment configuration.
//!
//! A config names a model (a reference preset or an explicit topology), the
//! skip policy of the guarded variant, a dataset, training hyperparameters,
//! reliability settings, evaluation options, runtime timeouts and an output
//! directory. Relative paths resolve against the config file's directory.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    class_weights, load_mhealth, read_dataset, synth_multiview, Dataset, MHealthOptions, SplitKind, SynthMultiViewSpec,
};
use crate::error::{Error, Result};
use crate::inference::GuessMode;
use crate::nn::{LossKind, LossSpec, OptimizerSpec};
use crate::resiliency::{tier_settings, Experiment, ReliabilitySetting, ReliabilityTier};
use crate::runtime::RuntimeOptions;
use crate::topology::{
    build_distributed, camera_reference_topology, health_topology, DistributedGraph, DnnSpec, FogOrder, NodeSpec,
    PartitionMap, SkipPolicy,
};
use crate::training::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;
pub const MAX_SEEDS: usize = 10;

/// The two architectures every experiment compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Simple hyperconnections only.
    Vanilla,
    /// The configured skip policy on top of the same partition.
    Deepfogguard,
}

impl Variant {
    pub const BOTH: [Variant; 2] = [Variant::Vanilla, Variant::Deepfogguard];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Vanilla => "vanilla",
            Variant::Deepfogguard => "deepfogguard",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::BOTH.into_iter().find(|v| v.name() == s)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Reference deployment; its reliability tables become available.
    #[serde(default)]
    pub preset: Option<Experiment>,
    #[serde(default)]
    pub fog_order: FogOrder,
    /// Overrides the preset's input width (camera views can be shrunk for
    /// quick runs).
    #[serde(default)]
    pub input_dim: Option<usize>,
    #[serde(default)]
    pub spec: Option<DnnSpec>,
    #[serde(default)]
    pub nodes: Option<Vec<NodeSpec>>,
    /// Node id to global layer indices.
    #[serde(default)]
    pub partition: Option<BTreeMap<String, Vec<usize>>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    /// Skip policy of the deepfogguard variant; the preset's when absent.
    #[serde(default)]
    pub skip_policy: Option<SkipPolicy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSection {
    Mhealth {
        path: PathBuf,
        #[serde(flatten)]
        options: MHealthOptions,
    },
    Synth {
        #[serde(flatten)]
        spec: SynthMultiViewSpec,
    },
    /// A dataset container written by `write_dataset`.
    Container { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default)]
    pub patience: Option<usize>,
}

fn default_loss() -> LossKind {
    LossKind::CrossEntropy
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSetting {
    pub nodes: Vec<String>,
    pub survival: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReliabilitySection {
    /// Reference tiers; require a preset.
    #[serde(default)]
    pub tiers: Vec<ReliabilityTier>,
    /// Extra named settings.
    #[serde(default)]
    pub custom: BTreeMap<String, CustomSetting>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvalMethod {
    #[default]
    Exact,
    MonteCarlo {
        samples: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub split: SplitKind,
    pub guess: GuessMode,
    pub method: EvalMethod,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self { split: SplitKind::Test, guess: GuessMode::Expectation, method: EvalMethod::Exact }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub name: String,
    pub model: ModelSection,
    #[serde(default)]
    pub topology: TopologySection,
    pub dataset: DatasetSection,
    pub training: TrainingSection,
    #[serde(default)]
    pub reliability: ReliabilitySection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub runtime: RuntimeOptions,
    pub output_dir: PathBuf,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

/// A parsed config with the hash of its file bytes and the directory
/// relative paths resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub hash: String,
    pub base_dir: PathBuf,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let config = ExperimentConfig::from_toml(text)?;
        Ok(Self { config, hash: sha256_hex(&bytes), base_dir })
    }

    /// A config built in memory; the hash covers its TOML rendering.
    pub fn from_config(config: ExperimentConfig, base_dir: PathBuf) -> Result<Self> {
        config.validate()?;
        let text = toml::to_string(&config).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self { config, hash: sha256_hex(text.as_bytes()), base_dir })
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.config.dataset {
            DatasetSection::Mhealth { path, options } => load_mhealth(&self.resolve(path), options),
            DatasetSection::Synth { spec } => synth_multiview(spec),
            DatasetSection::Container { path } => read_dataset(&self.resolve(path)),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Every problem in the config, reported together.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.version != CONFIG_VERSION {
            out.push(format!("version must be {CONFIG_VERSION}, found {}", self.version));
        }
        if self.seeds.is_empty() || self.seeds.len() > MAX_SEEDS {
            out.push(format!("seeds must list 1 to {MAX_SEEDS} values"));
        }
        let mut unique = self.seeds.clone();
        unique.sort_unstable();
        unique.dedup();
        if unique.len() != self.seeds.len() {
            out.push("seeds must be distinct".into());
        }
        if let Err(e) = self.train_config(0, None) {
            out.push(format!("training: {e}"));
        }
        match self.graph(Variant::Deepfogguard) {
            Ok(graph) => {
                if let Err(e) = self.reliability_settings(&graph) {
                    out.push(format!("reliability: {e}"));
                }
            }
            Err(e) => out.push(format!("model: {e}")),
        }
        if let EvalMethod::MonteCarlo { samples: 0, .. } = self.evaluation.method {
            out.push("evaluation: monte carlo needs at least one sample".into());
        }
        if let Err(e) = self.runtime.timeouts.validate() {
            out.push(format!("runtime: {e}"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn topology(&self) -> Result<(DnnSpec, Vec<NodeSpec>, PartitionMap)> {
        let m = &self.model;
        let (mut spec, nodes, partition) = match m.preset {
            Some(Experiment::Health) => health_topology(m.fog_order),
            Some(Experiment::Camera) => camera_reference_topology(),
            None => {
                let (Some(spec), Some(nodes), Some(partition)) = (&m.spec, &m.nodes, &m.partition) else {
                    return Err(Error::Config("a model without a preset needs spec, nodes and partition".into()));
                };
                let pairs: Vec<(&str, Vec<usize>)> = partition.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
                (spec.clone(), nodes.clone(), PartitionMap::from_node_layers(&pairs)?)
            }
        };
        if m.preset.is_some() && (m.spec.is_some() || m.nodes.is_some() || m.partition.is_some()) {
            return Err(Error::Config("a preset model cannot also set spec, nodes or partition".into()));
        }
        if let Some(d) = m.input_dim {
            spec.input_dim = d;
        }
        spec.validate()?;
        Ok((spec, nodes, partition))
    }

    pub fn skip_policy(&self) -> SkipPolicy {
        if let Some(p) = &self.topology.skip_policy {
            return p.clone();
        }
        match self.model.preset {
            Some(Experiment::Camera) => SkipPolicy::SkipOne { from_iot: false },
            _ => SkipPolicy::skip_one(),
        }
    }

    pub fn graph(&self, variant: Variant) -> Result<DistributedGraph> {
        let (spec, nodes, partition) = self.topology()?;
        let policy = match variant {
            Variant::Vanilla => SkipPolicy::None,
            Variant::Deepfogguard => self.skip_policy(),
        };
        build_distributed(&spec, &nodes, &partition, &policy)
    }

    /// Training settings for one seed. Weighted cross-entropy needs the
    /// dataset for its class weights.
    pub fn train_config(&self, seed: u64, data: Option<&Dataset>) -> Result<TrainConfig> {
        let t = &self.training;
        let loss = match (t.loss, data) {
            (LossKind::CrossEntropy, _) => LossSpec::cross_entropy(),
            (LossKind::WeightedCrossEntropy, Some(d)) => LossSpec::weighted(class_weights(d)?)?,
            (LossKind::WeightedCrossEntropy, None) => LossSpec::weighted(vec![1.0])?,
        };
        let cfg = TrainConfig {
            optimizer: OptimizerSpec::adam(t.learning_rate, t.batch_size),
            epochs: t.epochs,
            seed,
            loss,
            patience: t.patience,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Named settings in report order: reference tiers first, then custom
    /// ones sorted by name. Each must cover exactly the graph's fallible
    /// nodes.
    pub fn reliability_settings(&self, graph: &DistributedGraph) -> Result<Vec<(String, ReliabilitySetting)>> {
        let r = &self.reliability;
        let mut out = Vec::new();
        if !r.tiers.is_empty() {
            let Some(exp) = self.model.preset else {
                return Err(Error::Config("reference tiers need a model preset".into()));
            };
            for &tier in &r.tiers {
                out.push((tier.name().to_string(), tier_settings(exp, tier)));
            }
        }
        for (name, c) in &r.custom {
            if ReliabilityTier::parse(name).is_some() {
                return Err(Error::Config(format!("custom setting {name} shadows a reference tier")));
            }
            out.push((name.clone(), ReliabilitySetting::new(c.nodes.iter().cloned(), c.survival.clone())?));
        }
        let mut fallible: Vec<&str> = graph.fallible_nodes().iter().map(|&n| graph.nodes[n].id.as_str()).collect();
        fallible.sort_unstable();
        for (name, s) in &out {
            let mut ids: Vec<&str> = s.nodes.iter().map(String::as_str).collect();
            ids.sort_unstable();
            if ids != fallible {
                return Err(Error::Config(format!(
                    "setting {name} covers {ids:?} but the fallible nodes are {fallible:?}"
                )));
            }
        }
        Ok(out)
    }

    pub fn setting(&self, graph: &DistributedGraph, name: &str) -> Result<ReliabilitySetting> {
        if let (Some(tier), Some(exp)) = (ReliabilityTier::parse(name), self.model.preset) {
            return Ok(tier_settings(exp, tier));
        }
        self.reliability_settings(graph)?
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::Config(format!("unknown reliability setting {name}")))
    }
}
