//! Scheduled kills and revivals of node processes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::DistributedGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChaosAction {
    Kill,
    Revive,
}

/// One scheduled action. It fires before the instance with id
/// `at_instance` is sent, or before the first instance sent at least
/// `at_ms` milliseconds after the run started.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChaosEvent {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at_instance: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at_ms: Option<u64>,
    pub node: String,
    pub action: ChaosAction,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChaosPlan {
    #[serde(default)]
    pub events: Vec<ChaosEvent>,
}

impl ChaosPlan {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn kill_at(node: &str, instance: u64) -> Self {
        Self {
            events: vec![ChaosEvent {
                at_instance: Some(instance),
                at_ms: None,
                node: node.into(),
                action: ChaosAction::Kill,
            }],
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("chaos plan: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::data(path, e.to_string()))?)
    }

    /// Every event must name a fallible node of `graph` and exactly one
    /// trigger.
    pub fn validate(&self, graph: &DistributedGraph) -> Result<()> {
        for e in &self.events {
            let n = graph
                .node_index(&e.node)
                .ok_or_else(|| Error::Config(format!("chaos plan names unknown node {}", e.node)))?;
            if !graph.nodes[n].fallible {
                return Err(Error::Config(format!(
                    "chaos plan targets {}, which is not fallible ({:?})",
                    e.node, graph.nodes[n].tier
                )));
            }
            if e.at_instance.is_some() == e.at_ms.is_some() {
                return Err(Error::Config(format!(
                    "chaos event for {} needs exactly one of at_instance or at_ms",
                    e.node
                )));
            }
        }
        Ok(())
    }
}
