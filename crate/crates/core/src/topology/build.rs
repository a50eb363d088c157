use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use super::{
    DistributedGraph, DnnSpec, ExpansionLayer, Hyperconnection, HyperconnectionKind, NodeSpec, PartitionMap,
    PhysicalNode, SkipPolicy, Tier,
};
use crate::error::{Error, Result};

fn topo_err(msg: impl Into<String>) -> Error {
    Error::Topology(msg.into())
}

/// Partitions `spec` over `nodes` according to `partition` and wires the
/// hyperconnections required by `policy`.
pub fn build_distributed(
    spec: &DnnSpec,
    nodes: &[NodeSpec],
    partition: &PartitionMap,
    policy: &SkipPolicy,
) -> Result<DistributedGraph> {
    spec.validate()?;
    let index: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
    if index.len() != nodes.len() {
        return Err(topo_err("duplicate node id"));
    }

    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (layer, node) in partition.iter() {
        if layer >= spec.layer_count() {
            return Err(topo_err(format!("layer {layer} does not exist ({} layers)", spec.layer_count())));
        }
        let n = *index.get(node).ok_or_else(|| topo_err(format!("layer {layer} assigned to unknown node {node}")))?;
        assigned[n].push(layer);
    }
    for layer in 0..spec.layer_count() {
        if partition.node_of(layer).is_none() {
            return Err(topo_err(format!("layer {layer} is not assigned to any node")));
        }
    }

    let mut physical = Vec::with_capacity(nodes.len());
    for (i, node) in nodes.iter().enumerate() {
        let layers = std::mem::take(&mut assigned[i]);
        if layers.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(topo_err(format!("layers on {} are not contiguous: {layers:?}", node.id)));
        }
        match node.tier {
            Tier::Iot if !layers.is_empty() => {
                return Err(topo_err(format!("IoT node {} cannot hold layers", node.id)))
            }
            Tier::Iot => {}
            _ if layers.is_empty() => return Err(topo_err(format!("node {} holds no layers", node.id))),
            _ => {}
        }
        let fallible = node.is_fallible();
        if fallible && matches!(node.tier, Tier::Iot | Tier::Cloud) {
            return Err(topo_err(format!("{} node {} cannot be fallible", node.tier, node.id)));
        }
        let mut parents = Vec::with_capacity(node.parents.len());
        for p in &node.parents {
            let pi = *index.get(p.as_str()).ok_or_else(|| topo_err(format!("{} has unknown parent {p}", node.id)))?;
            if pi == i || parents.contains(&pi) {
                return Err(topo_err(format!("{} lists parent {p} invalidly", node.id)));
            }
            parents.push(pi);
        }
        physical.push(PhysicalNode {
            id: node.id.clone(),
            tier: node.tier,
            fallible,
            assigned_layers: layers,
            parents,
        });
    }

    let order = topological_order(&physical)?;
    let sinks: Vec<usize> = (0..physical.len()).filter(|&i| physical[i].parents.is_empty()).collect();
    if sinks.len() != 1 {
        let ids: Vec<&str> = sinks.iter().map(|&i| physical[i].id.as_str()).collect();
        return Err(topo_err(format!("hierarchy must end at exactly one node, found {ids:?}")));
    }
    let sink = sinks[0];
    if physical[sink].tier != Tier::Cloud {
        return Err(topo_err(format!("hierarchy ends at non-cloud node {}", physical[sink].id)));
    }
    if physical[sink].assigned_layers.last() != Some(&spec.output_layer()) {
        return Err(topo_err("the output layer must live on the cloud node"));
    }
    let mut has_children = vec![false; physical.len()];
    for node in &physical {
        for &p in &node.parents {
            has_children[p] = true;
        }
    }
    for (i, node) in physical.iter().enumerate() {
        if node.tier != Tier::Iot && !has_children[i] {
            return Err(topo_err(format!("node {} is disconnected: nothing feeds it", node.id)));
        }
        if node.tier == Tier::Iot && has_children[i] {
            return Err(topo_err(format!("IoT node {} cannot receive hyperconnections", node.id)));
        }
    }

    let out_dim = |n: usize| match physical[n].assigned_layers.last() {
        Some(&l) => spec.width(l),
        None => spec.input_dim,
    };

    let mut links: Vec<(usize, usize, HyperconnectionKind)> = Vec::new();
    for (i, node) in physical.iter().enumerate() {
        for &p in &node.parents {
            links.push((i, p, HyperconnectionKind::Simple));
        }
    }
    let skips = skip_links(&physical, &index, policy)?;
    links.extend(skips.into_iter().map(|(s, d)| (s, d, HyperconnectionKind::Skip)));

    let hyperconnections: Vec<Hyperconnection> = links
        .into_iter()
        .map(|(src, dst, kind)| {
            let dim = out_dim(src);
            Hyperconnection { src, dst, kind, dim, weight: vec![1.0; dim] }
        })
        .collect();

    let expansion = (0..physical.len())
        .map(|n| {
            hyperconnections.iter().filter(|h| h.dst == n).map(|h| h.dim).max().map(|width| ExpansionLayer { width })
        })
        .collect();

    Ok(DistributedGraph { spec: spec.clone(), nodes: physical, hyperconnections, expansion, order })
}

/// Kahn's algorithm over child → parent edges, smallest id first.
fn topological_order(nodes: &[PhysicalNode]) -> Result<Vec<usize>> {
    let mut indegree = vec![0usize; nodes.len()];
    for node in nodes {
        for &p in &node.parents {
            indegree[p] += 1;
        }
    }
    let mut ready: BinaryHeap<Reverse<(&str, usize)>> =
        (0..nodes.len()).filter(|&i| indegree[i] == 0).map(|i| Reverse((nodes[i].id.as_str(), i))).collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(Reverse((_, i))) = ready.pop() {
        order.push(i);
        for &p in &nodes[i].parents {
            indegree[p] -= 1;
            if indegree[p] == 0 {
                ready.push(Reverse((nodes[p].id.as_str(), p)));
            }
        }
    }
    if order.len() != nodes.len() {
        return Err(topo_err("node hierarchy contains a cycle"));
    }
    Ok(order)
}

/// Nodes reachable from `from` by following parents, excluding `from`.
pub(super) fn ancestors(nodes: &[PhysicalNode], from: usize) -> BTreeSet<usize> {
    let mut seen = BTreeSet::new();
    let mut stack: Vec<usize> = nodes[from].parents.clone();
    while let Some(n) = stack.pop() {
        if seen.insert(n) {
            stack.extend(nodes[n].parents.iter().copied());
        }
    }
    seen
}

fn skip_links(
    nodes: &[PhysicalNode],
    index: &HashMap<&str, usize>,
    policy: &SkipPolicy,
) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    match policy {
        SkipPolicy::None => {}
        SkipPolicy::SkipOne { from_iot } => {
            for (src, node) in nodes.iter().enumerate() {
                if node.tier == Tier::Iot && !from_iot {
                    continue;
                }
                let mut targets = BTreeSet::new();
                for &via in &node.parents {
                    for &dst in &nodes[via].parents {
                        if !node.parents.contains(&dst) {
                            targets.insert(dst);
                        }
                    }
                }
                out.extend(targets.into_iter().map(|dst| (src, dst)));
            }
        }
        SkipPolicy::Explicit { hyperconnections } => {
            for (s, d) in hyperconnections {
                let src = *index.get(s.as_str()).ok_or_else(|| topo_err(format!("skip from unknown node {s}")))?;
                let dst = *index.get(d.as_str()).ok_or_else(|| topo_err(format!("skip to unknown node {d}")))?;
                if nodes[src].parents.contains(&dst) || !ancestors(nodes, src).contains(&dst) {
                    return Err(topo_err(format!("skip {s} -> {d} must target an ancestor beyond the parent")));
                }
                if out.contains(&(src, dst)) {
                    return Err(topo_err(format!("skip {s} -> {d} listed twice")));
                }
                out.push((src, dst));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{camera_reference_topology, health_reference_topology};

    fn fig1() -> (DnnSpec, Vec<NodeSpec>, PartitionMap) {
        // Four layers split 2/2: v2 holds l1, l2 and v1 holds l3, l4.
        let spec = DnnSpec::new(3, vec![4, 4, 4], 2).unwrap();
        let nodes = vec![
            NodeSpec::new("iot", Tier::Iot, &["v2"]),
            NodeSpec::new("v2", Tier::Edge, &["v1"]),
            NodeSpec::new("v1", Tier::Cloud, &[]),
        ];
        let partition = PartitionMap::from_node_layers(&[("v2", vec![0, 1]), ("v1", vec![2, 3])]).unwrap();
        (spec, nodes, partition)
    }

    #[test]
    fn fig1_split_has_one_simple_link_into_an_expansion_layer() {
        let (spec, nodes, partition) = fig1();
        let g = build_distributed(&spec, &nodes, &partition, &SkipPolicy::None).unwrap();
        let v1 = g.node_index("v1").unwrap();
        let v2 = g.node_index("v2").unwrap();
        let into_v1: Vec<_> = g.incoming(v1).into_iter().map(|h| &g.hyperconnections[h]).collect();
        assert_eq!(into_v1.len(), 1);
        assert_eq!(into_v1[0].src, v2);
        assert_eq!(into_v1[0].kind, HyperconnectionKind::Simple);
        assert_eq!(g.expansion[v1], Some(ExpansionLayer { width: 4 }));
        assert_eq!(g.skip_count(), 0);
    }

    #[test]
    fn health_skip_one_adds_three_skips() {
        let (spec, nodes, partition) = health_reference_topology();
        let g = build_distributed(&spec, &nodes, &partition, &SkipPolicy::skip_one()).unwrap();
        assert_eq!(g.skip_count(), 3);
        let pairs: BTreeSet<(&str, &str)> = g
            .hyperconnections
            .iter()
            .filter(|h| h.kind == HyperconnectionKind::Skip)
            .map(|h| (g.nodes[h.src].id.as_str(), g.nodes[h.dst].id.as_str()))
            .collect();
        assert_eq!(pairs, BTreeSet::from([("iot", "f2"), ("e1", "f1"), ("f2", "cloud")]));
        // IoT (23) and e1 (250) meet at f2: the expansion layer takes the wider.
        let f2 = g.node_index("f2").unwrap();
        assert_eq!(g.expansion[f2].unwrap().width, 250);
    }

    #[test]
    fn camera_skip_one_adds_seven_skips() {
        let (spec, nodes, partition) = camera_reference_topology();
        let g = build_distributed(&spec, &nodes, &partition, &SkipPolicy::SkipOne { from_iot: false }).unwrap();
        assert_eq!(g.nodes.iter().filter(|n| n.tier != Tier::Iot).count(), 9);
        assert_eq!(g.skip_count(), 7);
    }

    #[test]
    fn vanilla_is_skip_build_minus_skips() {
        let (spec, nodes, partition) = health_reference_topology();
        let vanilla = build_distributed(&spec, &nodes, &partition, &SkipPolicy::None).unwrap();
        let guarded = build_distributed(&spec, &nodes, &partition, &SkipPolicy::skip_one()).unwrap();
        assert_eq!(vanilla.nodes, guarded.nodes);
        assert_eq!(guarded.without_skips(), vanilla);
        for h in &vanilla.hyperconnections {
            assert!(guarded.hyperconnections.contains(h));
        }
    }

    #[test]
    fn rejects_non_contiguous_partition() {
        let (spec, nodes, _) = fig1();
        let p = PartitionMap::from_node_layers(&[("v2", vec![0, 2]), ("v1", vec![1, 3])]).unwrap();
        let err = build_distributed(&spec, &nodes, &p, &SkipPolicy::None).unwrap_err();
        assert!(err.to_string().contains("contiguous"), "{err}");
    }

    #[test]
    fn rejects_layer_assigned_twice() {
        assert!(PartitionMap::from_node_layers(&[("a", vec![0, 1]), ("b", vec![1])]).is_err());
    }

    #[test]
    fn rejects_disconnected_node() {
        let (spec, mut nodes, _) = fig1();
        nodes.push(NodeSpec::new("orphan", Tier::Fog, &["v1"]));
        let p = PartitionMap::from_node_layers(&[("v2", vec![0]), ("orphan", vec![1]), ("v1", vec![2, 3])]).unwrap();
        let err = build_distributed(&spec, &nodes, &p, &SkipPolicy::None).unwrap_err();
        assert!(err.to_string().contains("disconnected"), "{err}");
    }

    #[test]
    fn rejects_unassigned_layer_and_fallible_cloud() {
        let (spec, nodes, _) = fig1();
        let p = PartitionMap::from_node_layers(&[("v2", vec![0, 1]), ("v1", vec![2])]).unwrap();
        assert!(build_distributed(&spec, &nodes, &p, &SkipPolicy::None).is_err());

        let (spec, mut nodes, p) = fig1();
        nodes[2].fallible = Some(true);
        assert!(build_distributed(&spec, &nodes, &p, &SkipPolicy::None).is_err());
    }

    #[test]
    fn explicit_skips_may_bypass_several_nodes() {
        let (spec, nodes, partition) = health_reference_topology();
        let policy = SkipPolicy::Explicit { hyperconnections: vec![("iot".into(), "cloud".into())] };
        let g = build_distributed(&spec, &nodes, &partition, &policy).unwrap();
        assert_eq!(g.skip_count(), 1);

        let bad = SkipPolicy::Explicit { hyperconnections: vec![("f1".into(), "e1".into())] };
        assert!(build_distributed(&spec, &nodes, &partition, &bad).is_err());
    }

    #[test]
    fn topological_order_breaks_ties_by_id() {
        let (spec, nodes, partition) = camera_reference_topology();
        let g = build_distributed(&spec, &nodes, &partition, &SkipPolicy::None).unwrap();
        let ids: Vec<&str> = g.order.iter().map(|&i| g.nodes[i].id.as_str()).collect();
        assert_eq!(&ids[..6], &["c1", "c2", "c3", "c4", "c5", "c6"]);
        assert_eq!(*ids.last().unwrap(), "cloud");
    }
}
