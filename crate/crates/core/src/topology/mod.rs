//! Logical DNN description, physical node hierarchy, partition maps, and
//! construction of the distributed graph with simple and skip
//! hyperconnections.

mod build;
pub(crate) mod dnn;
mod reference;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use build::build_distributed;
pub use dnn::DistributedDnn;
pub use reference::{camera_reference_topology, health_reference_topology, health_topology, FogOrder};
pub use validate::{validate_topology, Violation};

/// The logical (unpartitioned) network: an input layer, hidden widths, and
/// the classification layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DnnSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
}

impl DnnSpec {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>, output_dim: usize) -> Result<Self> {
        let spec = Self { input_dim, hidden_widths, output_dim };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_widths.contains(&0) {
            return Err(Error::Topology("all layer widths must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of non-input layers, the output layer included.
    pub fn layer_count(&self) -> usize {
        self.hidden_widths.len() + 1
    }

    pub fn output_layer(&self) -> usize {
        self.hidden_widths.len()
    }

    pub fn width(&self, layer: usize) -> usize {
        if layer < self.hidden_widths.len() {
            self.hidden_widths[layer]
        } else {
            self.output_dim
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Iot,
    Edge,
    Fog,
    Cloud,
}

impl Tier {
    /// IoT sources and the cloud never fail; edge and fog nodes may.
    pub fn default_fallible(self) -> bool {
        matches!(self, Tier::Edge | Tier::Fog)
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Tier::Iot => "iot",
            Tier::Edge => "edge",
            Tier::Fog => "fog",
            Tier::Cloud => "cloud",
        };
        f.write_str(s)
    }
}

/// Description of one physical node before the graph is built.
///
/// `parents` lists the nodes this one feeds through simple hyperconnections.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    pub tier: Tier,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallible: Option<bool>,
    #[serde(default)]
    pub parents: Vec<String>,
}

impl NodeSpec {
    pub fn new(id: &str, tier: Tier, parents: &[&str]) -> Self {
        Self { id: id.to_string(), tier, fallible: None, parents: parents.iter().map(|p| p.to_string()).collect() }
    }

    pub fn is_fallible(&self) -> bool {
        self.fallible.unwrap_or_else(|| self.tier.default_fallible())
    }
}

/// Assignment of every non-input layer to the node that houses it.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PartitionMap {
    assignment: BTreeMap<usize, String>,
}

impl PartitionMap {
    /// Builds the map from per-node layer lists, rejecting a layer listed twice.
    pub fn from_node_layers<S: AsRef<str>>(nodes: &[(S, Vec<usize>)]) -> Result<Self> {
        let mut assignment = BTreeMap::new();
        for (node, layers) in nodes {
            for &layer in layers {
                if let Some(prev) = assignment.insert(layer, node.as_ref().to_string()) {
                    return Err(Error::Topology(format!(
                        "layer {layer} assigned to both {prev} and {}",
                        node.as_ref()
                    )));
                }
            }
        }
        Ok(Self { assignment })
    }

    pub fn node_of(&self, layer: usize) -> Option<&str> {
        self.assignment.get(&layer).map(String::as_str)
    }

    pub fn layers_of(&self, node: &str) -> Vec<usize> {
        self.assignment.iter().filter(|(_, n)| n.as_str() == node).map(|(&l, _)| l).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &str)> {
        self.assignment.iter().map(|(&l, n)| (l, n.as_str()))
    }

    pub fn by_node(&self) -> BTreeMap<String, Vec<usize>> {
        let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (l, n) in &self.assignment {
            out.entry(n.clone()).or_default().push(*l);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SkipPolicy {
    /// Simple hyperconnections only (the Vanilla graph).
    None,
    /// Add every skip hyperconnection that bypasses exactly one physical
    /// node. With `from_iot = false`, IoT sources do not originate skips.
    SkipOne {
        #[serde(default = "yes")]
        from_iot: bool,
    },
    /// Explicit `(src, dst)` skip hyperconnections, each of which must reach
    /// a strict ancestor beyond the parent.
    Explicit { hyperconnections: Vec<(String, String)> },
}

fn yes() -> bool {
    true
}

impl SkipPolicy {
    pub fn skip_one() -> Self {
        SkipPolicy::SkipOne { from_iot: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperconnectionKind {
    Simple,
    Skip,
}

/// A vector-carrying link from `src` to `dst` (node indices).
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperconnection {
    pub src: usize,
    pub dst: usize,
    pub kind: HyperconnectionKind,
    pub dim: usize,
    /// Element-wise multiplier applied to the carried vector; fixed to ones.
    pub weight: Vec<f32>,
}

/// A built physical node.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalNode {
    pub id: String,
    pub tier: Tier,
    pub fallible: bool,
    pub assigned_layers: Vec<usize>,
    /// Node indices reached by simple hyperconnections.
    pub parents: Vec<usize>,
}

/// Identity layer that receives the Add output; every in-weight is one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpansionLayer {
    pub width: usize,
}

/// The partitioned network's structure: nodes, hyperconnections and
/// expansion layers, without weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributedGraph {
    pub spec: DnnSpec,
    pub nodes: Vec<PhysicalNode>,
    pub hyperconnections: Vec<Hyperconnection>,
    pub expansion: Vec<Option<ExpansionLayer>>,
    /// Deterministic topological order (ties broken by node id).
    pub order: Vec<usize>,
}

impl DistributedGraph {
    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    /// IoT source nodes in declaration order; dataset views map onto them.
    pub fn sources(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].tier == Tier::Iot).collect()
    }

    /// The node with no parents, which holds the output layer.
    pub fn sink(&self) -> usize {
        *self.order.last().expect("non-empty graph")
    }

    pub fn fallible_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].fallible).collect()
    }

    pub fn incoming(&self, node: usize) -> Vec<usize> {
        (0..self.hyperconnections.len()).filter(|&h| self.hyperconnections[h].dst == node).collect()
    }

    pub fn outgoing(&self, node: usize) -> Vec<usize> {
        (0..self.hyperconnections.len()).filter(|&h| self.hyperconnections[h].src == node).collect()
    }

    pub fn output_dim(&self, node: usize) -> usize {
        match self.nodes[node].assigned_layers.last() {
            Some(&l) => self.spec.width(l),
            None => self.spec.input_dim,
        }
    }

    pub fn skip_count(&self) -> usize {
        self.hyperconnections.iter().filter(|h| h.kind == HyperconnectionKind::Skip).count()
    }

    /// Input width of every layer, indexed by global layer index.
    pub fn layer_input_dims(&self) -> Vec<usize> {
        let mut dims = vec![0; self.spec.layer_count()];
        for (n, node) in self.nodes.iter().enumerate() {
            let mut prev = self.expansion[n].map(|e| e.width).unwrap_or(0);
            for &l in &node.assigned_layers {
                dims[l] = prev;
                prev = self.spec.width(l);
            }
        }
        dims
    }

    /// Per-node alive mask from the alive bits of an ordered list of node ids.
    /// Nodes not named are alive.
    pub fn alive_mask(&self, ids: &[String], alive: &[bool]) -> Result<Vec<bool>> {
        if ids.len() != alive.len() {
            return Err(Error::dims(ids.len(), alive.len(), "failure combination"));
        }
        let mut mask = vec![true; self.nodes.len()];
        for (id, &a) in ids.iter().zip(alive) {
            let n = self.node_index(id).ok_or_else(|| Error::Topology(format!("unknown node {id}")))?;
            if !a && !self.nodes[n].fallible {
                return Err(Error::Topology(format!("node {id} is not fallible")));
            }
            mask[n] = a;
        }
        Ok(mask)
    }

    /// The same graph with every skip hyperconnection removed.
    pub fn without_skips(&self) -> DistributedGraph {
        let mut g = self.clone();
        g.hyperconnections.retain(|h| h.kind == HyperconnectionKind::Simple);
        for n in 0..g.nodes.len() {
            if g.expansion[n].is_some() {
                let width = g.incoming(n).into_iter().map(|h| g.hyperconnections[h].dim).max().unwrap_or(0);
                g.expansion[n] = Some(ExpansionLayer { width });
            }
        }
        g
    }
}
