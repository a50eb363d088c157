//! Failure-resilient distributed neural networks over IoT, edge, fog and
//! cloud nodes: graph construction with skip hyperconnections, failure-masked
//! inference, training, reliability-weighted evaluation and a TCP runtime
//! with fault injection.

pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod inference;
pub mod nn;
pub mod resiliency;
pub mod runtime;
pub mod topology;
pub mod training;

pub use config::{ExperimentConfig, LoadedConfig, Variant};
pub use data::{Dataset, SplitKind, SynthMultiViewSpec};
pub use error::{Error, Result};
pub use inference::{distributed_forward, ActivationVector, GuessMode, InferenceOutcome, Prediction};
pub use resiliency::{
    average_accuracy, combination_probability, Experiment, FailureCombination, ReliabilitySetting, ReliabilityTier,
    ResiliencyReport,
};
pub use runtime::{ChaosPlan, WireMessage};
pub use topology::{DistributedDnn, DistributedGraph, DnnSpec, Hyperconnection, HyperconnectionKind, SkipPolicy};
pub use training::{train, TrainConfig, TrainedModel};
