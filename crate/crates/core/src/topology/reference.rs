//! The two reference deployments: a vertically partitioned activity
//! classifier and a vertically and horizontally partitioned multi-camera
//! classifier.

use serde::{Deserialize, Serialize};

use super::{DnnSpec, NodeSpec, PartitionMap, Tier};

/// Which fog node sits next to the edge in the activity-classifier chain.
///
/// Fog ids follow the reliability-table labels: `f1` is the fog node that
/// feeds the cloud, `f2` the one fed by the edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FogOrder {
    /// Edge (1 layer) → f2 (2 layers) → f1 (3 layers) → cloud (4 layers).
    #[default]
    EdgeFirst,
    /// Edge (1 layer) → f2 (3 layers) → f1 (2 layers) → cloud (4 layers).
    Swapped,
}

/// 23 inputs, ten hidden layers of 250, 12 classes, over
/// IoT → e1 → f2 → f1 → cloud.
pub fn health_reference_topology() -> (DnnSpec, Vec<NodeSpec>, PartitionMap) {
    health_topology(FogOrder::EdgeFirst)
}

pub fn health_topology(order: FogOrder) -> (DnnSpec, Vec<NodeSpec>, PartitionMap) {
    let spec = DnnSpec { input_dim: 23, hidden_widths: vec![250; 10], output_dim: 12 };
    let nodes = vec![
        NodeSpec::new("iot", Tier::Iot, &["e1"]),
        NodeSpec::new("e1", Tier::Edge, &["f2"]),
        NodeSpec::new("f2", Tier::Fog, &["f1"]),
        NodeSpec::new("f1", Tier::Fog, &["cloud"]),
        NodeSpec::new("cloud", Tier::Cloud, &[]),
    ];
    let (near_edge, near_cloud) = match order {
        FogOrder::EdgeFirst => (vec![1, 2], vec![3, 4, 5]),
        FogOrder::Swapped => (vec![1, 2, 3], vec![4, 5]),
    };
    let partition = PartitionMap::from_node_layers(&[
        ("e1", vec![0]),
        ("f2", near_edge),
        ("f1", near_cloud),
        ("cloud", vec![6, 7, 8, 9, 10]),
    ])
    .expect("static partition");
    (spec, nodes, partition)
}

/// Six 32×32×3 camera views, 14 hidden layers of 32, 3 classes, over four
/// edge nodes, four fog nodes and the cloud.
///
/// Cameras c2 and c5 each feed two edge nodes and e2/e3 each feed both
/// lower fog nodes (f3, f4), so the Vanilla graph already has some
/// redundancy below f2. Above that, f2 → f1 → cloud is a chain. Raw camera
/// views are merged at the edge and do not originate skips, so build this
/// with `SkipPolicy::SkipOne { from_iot: false }`.
pub fn camera_reference_topology() -> (DnnSpec, Vec<NodeSpec>, PartitionMap) {
    let spec = DnnSpec { input_dim: 32 * 32 * 3, hidden_widths: vec![32; 14], output_dim: 3 };
    let nodes = vec![
        NodeSpec::new("c1", Tier::Iot, &["e1"]),
        NodeSpec::new("c2", Tier::Iot, &["e1", "e2"]),
        NodeSpec::new("c3", Tier::Iot, &["e2"]),
        NodeSpec::new("c4", Tier::Iot, &["e3"]),
        NodeSpec::new("c5", Tier::Iot, &["e3", "e4"]),
        NodeSpec::new("c6", Tier::Iot, &["e4"]),
        NodeSpec::new("e1", Tier::Edge, &["f3"]),
        NodeSpec::new("e2", Tier::Edge, &["f3", "f4"]),
        NodeSpec::new("e3", Tier::Edge, &["f3", "f4"]),
        NodeSpec::new("e4", Tier::Edge, &["f4"]),
        NodeSpec::new("f3", Tier::Fog, &["f2"]),
        NodeSpec::new("f4", Tier::Fog, &["f2"]),
        NodeSpec::new("f2", Tier::Fog, &["f1"]),
        NodeSpec::new("f1", Tier::Fog, &["cloud"]),
        NodeSpec::new("cloud", Tier::Cloud, &[]),
    ];
    let partition = PartitionMap::from_node_layers(&[
        ("e1", vec![0, 1]),
        ("e2", vec![2, 3]),
        ("e3", vec![4, 5]),
        ("e4", vec![6, 7]),
        ("f3", vec![8]),
        ("f4", vec![9]),
        ("f2", vec![10]),
        ("f1", vec![11]),
        ("cloud", vec![12, 13, 14]),
    ])
    .expect("static partition");
    (spec, nodes, partition)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn health_shape() {
        let (spec, nodes, partition) = health_reference_topology();
        assert_eq!(spec.input_dim, 23);
        assert_eq!(spec.output_dim, 12);
        assert_eq!(spec.hidden_widths, vec![250; 10]);
        let hidden_per_node: Vec<usize> = ["e1", "f2", "f1", "cloud"]
            .iter()
            .map(|n| partition.layers_of(n).into_iter().filter(|&l| l < spec.output_layer()).count())
            .collect();
        assert_eq!(hidden_per_node, vec![1, 2, 3, 4]);
        assert_eq!(hidden_per_node.iter().sum::<usize>(), 10);
        let fallible: Vec<&str> = nodes.iter().filter(|n| n.is_fallible()).map(|n| n.id.as_str()).collect();
        assert_eq!(fallible, vec!["e1", "f2", "f1"]);
    }

    #[test]
    fn swapped_fog_order_moves_one_layer() {
        let (_, _, p) = health_topology(FogOrder::Swapped);
        assert_eq!(p.layers_of("f2").len(), 3);
        assert_eq!(p.layers_of("f1").len(), 2);
    }

    #[test]
    fn camera_shape() {
        let (spec, nodes, partition) = camera_reference_topology();
        assert_eq!(spec.input_dim, 3072);
        assert_eq!(spec.hidden_widths.len(), 14);
        let compute: Vec<&NodeSpec> = nodes.iter().filter(|n| n.tier != Tier::Iot).collect();
        assert_eq!(compute.len(), 9);
        assert_eq!(compute.iter().filter(|n| n.tier == Tier::Edge).count(), 4);
        assert_eq!(compute.iter().filter(|n| n.tier == Tier::Fog).count(), 4);
        assert_eq!(nodes.iter().filter(|n| n.tier == Tier::Iot).count(), 6);
        assert_eq!(partition.iter().count(), 15);
    }
}
