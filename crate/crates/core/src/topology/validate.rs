use std::fmt;

use super::build::ancestors;
use super::{DistributedGraph, HyperconnectionKind, Tier};

/// A broken invariant found by [`validate_topology`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    SimpleNotToParent { src: String, dst: String },
    SkipNotToAncestor { src: String, dst: String },
    NonUnitWeight { src: String, dst: String },
    WrongDimension { src: String, dst: String, dim: usize, expected: usize },
    MissingExpansion { node: String },
    UnexpectedExpansion { node: String },
    ExpansionWidth { node: String, width: usize, required: usize },
    FallibleTier { node: String, tier: Tier },
    IotHoldsLayers { node: String },
    Partition(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SimpleNotToParent { src, dst } => {
                write!(f, "simple hyperconnection {src} -> {dst} does not reach a parent")
            }
            Violation::SkipNotToAncestor { src, dst } => {
                write!(f, "skip hyperconnection {src} -> {dst} does not reach an ancestor beyond the parent")
            }
            Violation::NonUnitWeight { src, dst } => {
                write!(f, "hyperconnection {src} -> {dst} has a weight other than all-ones")
            }
            Violation::WrongDimension { src, dst, dim, expected } => {
                write!(f, "hyperconnection {src} -> {dst} carries {dim} values, source emits {expected}")
            }
            Violation::MissingExpansion { node } => write!(f, "{node} has inputs but no expansion layer"),
            Violation::UnexpectedExpansion { node } => write!(f, "{node} has an expansion layer but no inputs"),
            Violation::ExpansionWidth { node, width, required } => {
                write!(f, "expansion layer on {node} has width {width}, incoming maximum is {required}")
            }
            Violation::FallibleTier { node, tier } => write!(f, "{tier} node {node} is marked fallible"),
            Violation::IotHoldsLayers { node } => write!(f, "IoT node {node} holds layers"),
            Violation::Partition(msg) => write!(f, "partition: {msg}"),
        }
    }
}

/// Every structural invariant the graph breaks; empty when well-formed.
pub fn validate_topology(graph: &DistributedGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let id = |n: usize| graph.nodes[n].id.clone();

    for h in &graph.hyperconnections {
        let (src, dst) = (id(h.src), id(h.dst));
        match h.kind {
            HyperconnectionKind::Simple => {
                if !graph.nodes[h.src].parents.contains(&h.dst) {
                    out.push(Violation::SimpleNotToParent { src: src.clone(), dst: dst.clone() });
                }
            }
            HyperconnectionKind::Skip => {
                let beyond =
                    !graph.nodes[h.src].parents.contains(&h.dst) && ancestors(&graph.nodes, h.src).contains(&h.dst);
                if !beyond {
                    out.push(Violation::SkipNotToAncestor { src: src.clone(), dst: dst.clone() });
                }
            }
        }
        if h.weight.len() != h.dim || h.weight.iter().any(|&w| w != 1.0) {
            out.push(Violation::NonUnitWeight { src: src.clone(), dst: dst.clone() });
        }
        let expected = graph.output_dim(h.src);
        if h.dim != expected {
            out.push(Violation::WrongDimension { src, dst, dim: h.dim, expected });
        }
    }

    for (n, node) in graph.nodes.iter().enumerate() {
        let required = graph.hyperconnections.iter().filter(|h| h.dst == n).map(|h| h.dim).max();
        match (required, graph.expansion.get(n).copied().flatten()) {
            (Some(_), None) => out.push(Violation::MissingExpansion { node: id(n) }),
            (None, Some(_)) => out.push(Violation::UnexpectedExpansion { node: id(n) }),
            (Some(required), Some(e)) if e.width != required => {
                out.push(Violation::ExpansionWidth { node: id(n), width: e.width, required })
            }
            _ => {}
        }
        if node.fallible && matches!(node.tier, Tier::Iot | Tier::Cloud) {
            out.push(Violation::FallibleTier { node: id(n), tier: node.tier });
        }
        if node.tier == Tier::Iot && !node.assigned_layers.is_empty() {
            out.push(Violation::IotHoldsLayers { node: id(n) });
        }
        if node.assigned_layers.windows(2).any(|w| w[1] != w[0] + 1) {
            out.push(Violation::Partition(format!("layers on {} are not contiguous", node.id)));
        }
    }

    let mut owners = vec![0usize; graph.spec.layer_count()];
    for node in &graph.nodes {
        for &l in &node.assigned_layers {
            if l < owners.len() {
                owners[l] += 1;
            } else {
                out.push(Violation::Partition(format!("layer {l} does not exist")));
            }
        }
    }
    for (l, &count) in owners.iter().enumerate() {
        if count != 1 {
            out.push(Violation::Partition(format!("layer {l} housed on {count} nodes")));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_distributed, health_reference_topology, Hyperconnection, SkipPolicy};

    fn health() -> DistributedGraph {
        let (spec, nodes, partition) = health_reference_topology();
        build_distributed(&spec, &nodes, &partition, &SkipPolicy::skip_one()).unwrap()
    }

    #[test]
    fn well_formed_health_graph_has_no_violations() {
        assert_eq!(validate_topology(&health()), vec![]);
    }

    #[test]
    fn skip_to_non_ancestor_is_reported() {
        let mut g = health();
        let f1 = g.node_index("f1").unwrap();
        let f2 = g.node_index("f2").unwrap();
        g.hyperconnections.push(Hyperconnection {
            src: f1,
            dst: f2,
            kind: HyperconnectionKind::Skip,
            dim: 250,
            weight: vec![1.0; 250],
        });
        let v = validate_topology(&g);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(matches!(v[0], Violation::SkipNotToAncestor { .. }));
    }

    #[test]
    fn narrow_expansion_is_reported() {
        let mut g = health();
        let f1 = g.node_index("f1").unwrap();
        g.expansion[f1] = Some(crate::topology::ExpansionLayer { width: 100 });
        let v = validate_topology(&g);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(matches!(v[0], Violation::ExpansionWidth { width: 100, required: 250, .. }));
    }

    #[test]
    fn non_unit_weight_is_reported() {
        let mut g = health();
        g.hyperconnections[0].weight[3] = 0.5;
        assert_eq!(validate_topology(&g).len(), 1);
    }
}
