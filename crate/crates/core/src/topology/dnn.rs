use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DistributedGraph, HyperconnectionKind, Tier};
use crate::error::{Error, Result};
use crate::nn::{glorot_uniform, he_uniform, persist, Activation, DenseLayer, Mlp, Real};

/// A distributed graph together with the dense layers every node houses.
///
/// `layers` is indexed by global layer index; each node owns the contiguous
/// run listed in its `assigned_layers`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributedDnn<T> {
    pub graph: DistributedGraph,
    pub layers: Vec<DenseLayer<T>>,
}

impl<T: Real> DistributedDnn<T> {
    /// Seeded initialization: He-uniform for hidden ReLU layers and
    /// Glorot-uniform for the softmax output layer.
    ///
    /// Each layer draws from its own stream keyed by the global layer index,
    /// so two graphs with the same layer shapes get identical weights.
    pub fn initialize(graph: DistributedGraph, seed: u64) -> Self {
        let dims = graph.layer_input_dims();
        let out = graph.spec.output_layer();
        let layers = (0..graph.spec.layer_count())
            .map(|l| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(l as u64);
                let width = graph.spec.width(l);
                if l == out {
                    glorot_uniform(dims[l], width, Activation::Softmax, &mut rng)
                } else {
                    he_uniform(dims[l], width, Activation::Relu, &mut rng)
                }
            })
            .collect();
        Self { graph, layers }
    }

    pub fn from_layers(graph: DistributedGraph, layers: Vec<DenseLayer<T>>) -> Result<Self> {
        let dnn = Self { graph, layers };
        dnn.check_shapes()?;
        Ok(dnn)
    }

    pub fn check_shapes(&self) -> Result<()> {
        if self.layers.len() != self.graph.spec.layer_count() {
            return Err(Error::ShapeMismatch(format!(
                "graph has {} layers, weights have {}",
                self.graph.spec.layer_count(),
                self.layers.len()
            )));
        }
        let dims = self.graph.layer_input_dims();
        for (l, layer) in self.layers.iter().enumerate() {
            let want = (self.graph.spec.width(l), dims[l]);
            if (layer.outputs(), layer.inputs()) != want {
                return Err(Error::ShapeMismatch(format!(
                    "layer {l}: expected {}x{}, found {}x{}",
                    want.0,
                    want.1,
                    layer.outputs(),
                    layer.inputs()
                )));
            }
        }
        Ok(())
    }

    /// The dense layers housed on `node`, in forward order.
    pub fn slab(&self, node: usize) -> &[DenseLayer<T>] {
        match self.graph.nodes[node].assigned_layers.as_slice() {
            [] => &[],
            [first, .., last] => &self.layers[*first..=*last],
            [only] => &self.layers[*only..=*only],
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn class_count(&self) -> usize {
        self.graph.spec.output_dim
    }

    pub fn cast<U: Real>(&self) -> DistributedDnn<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| DenseLayer {
                weights: l.weights.mapv(|w| U::real(w.to_f64())),
                bias: l.bias.mapv(|b| U::real(b.to_f64())),
                activation: l.activation,
            })
            .collect();
        DistributedDnn { graph: self.graph.clone(), layers }
    }

    /// The equivalent single sequential network, when the graph is a plain
    /// chain: one IoT source and only simple hyperconnections, each into the
    /// node holding the next layer.
    pub fn to_monolithic(&self) -> Option<Mlp<T>> {
        let g = &self.graph;
        if g.sources().len() != 1 || g.hyperconnections.iter().any(|h| h.kind == HyperconnectionKind::Skip) {
            return None;
        }
        for h in &g.hyperconnections {
            let next = g.nodes[h.src].assigned_layers.last().map_or(0, |l| l + 1);
            if g.nodes[h.dst].assigned_layers.first() != Some(&next) || g.incoming(h.dst).len() != 1 {
                return None;
            }
        }
        debug_assert!(g.nodes.iter().any(|n| n.tier == Tier::Cloud));
        Mlp::new(self.layers.clone()).ok()
    }
}

impl DistributedDnn<f32> {
    pub fn save_weights(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        let refs: Vec<&DenseLayer<f32>> = self.layers.iter().collect();
        persist::write_layers(&mut out, &refs)?;
        out.flush()?;
        Ok(())
    }

    pub fn load_weights(graph: DistributedGraph, path: &Path) -> Result<Self> {
        let layers = persist::read_layers(BufReader::new(File::open(path)?))?;
        Self::from_layers(graph, layers)
    }

    pub fn weight_bytes(&self) -> Vec<u8> {
        let refs: Vec<&DenseLayer<f32>> = self.layers.iter().collect();
        persist::encode_layers(&refs)
    }
}

/// Element-wise hyperconnection weight as a vector of `T`.
pub(crate) fn hc_weight<T: Real>(weight: &[f32]) -> Array1<T> {
    weight.iter().map(|&w| T::real(w as f64)).collect()
}
