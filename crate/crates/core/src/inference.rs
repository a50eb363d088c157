//! Failure-masked forward pass through a distributed DNN.
//!
//! A failed node emits the null vector Φ. The Add junction at each node
//! zero-pads its non-null inputs at the tail to the widest one and sums
//! them; Φ operands are ignored and an all-Φ sum is Φ. A node that receives
//! Φ emits Φ, and Φ at the output means the instance is classified by a
//! random guess.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SplitKind};
use crate::error::{Error, Result};
use crate::nn::{argmax, Activation, DenseLayer, Real};
use crate::topology::dnn::hc_weight;
use crate::topology::{DistributedDnn, Tier};

/// Output of a node or hyperconnection: a vector, or Φ.
#[derive(Debug, Clone, PartialEq)]
pub enum ActivationVector<T> {
    Value(Array1<T>),
    Null,
}

impl<T: Real> ActivationVector<T> {
    pub fn is_null(&self) -> bool {
        matches!(self, ActivationVector::Null)
    }

    pub fn value(&self) -> Option<&Array1<T>> {
        match self {
            ActivationVector::Value(v) => Some(v),
            ActivationVector::Null => None,
        }
    }
}

impl<T: Real> From<Vec<T>> for ActivationVector<T> {
    fn from(v: Vec<T>) -> Self {
        ActivationVector::Value(Array1::from(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Class(usize),
    RandomGuess,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceOutcome<T> {
    pub logits: ActivationVector<T>,
    pub predicted: Prediction,
}

impl<T: Real> InferenceOutcome<T> {
    pub fn from_logits(logits: ActivationVector<T>) -> Self {
        let predicted = match &logits {
            ActivationVector::Value(v) => Prediction::Class(argmax(v.as_slice().expect("contiguous"))),
            ActivationVector::Null => Prediction::RandomGuess,
        };
        Self { logits, predicted }
    }
}

/// How an instance whose output is Φ is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum GuessMode {
    /// Each random guess counts as 1/K correct.
    #[default]
    Expectation,
    /// Each random guess draws a class uniformly from a seeded generator.
    Sampled { seed: u64 },
}

/// The Add junction with unit hyperconnection weights.
pub fn add_inputs<T: Real>(inputs: &[ActivationVector<T>]) -> ActivationVector<T> {
    let width = inputs.iter().filter_map(|v| v.value().map(Array1::len)).max();
    let Some(width) = width else {
        return ActivationVector::Null;
    };
    let mut sum = Array1::zeros(width);
    for v in inputs.iter().filter_map(ActivationVector::value) {
        let mut head = sum.slice_mut(s![..v.len()]);
        head += v;
    }
    ActivationVector::Value(sum)
}

/// Batched Add: each operand is scaled by its hyperconnection weight and
/// added into the first `dim` columns of a `width`-wide result.
pub(crate) fn add_batch<T: Real>(
    operands: &[(Option<ArrayView2<T>>, &[f32])],
    rows: usize,
    width: usize,
) -> Option<Array2<T>> {
    let mut sum: Option<Array2<T>> = None;
    for (x, weight) in operands {
        let Some(x) = x else { continue };
        let acc = sum.get_or_insert_with(|| Array2::zeros((rows, width)));
        let w = hc_weight::<T>(weight);
        let mut head = acc.slice_mut(s![.., ..x.ncols()]);
        head += &(&x.view() * &w);
    }
    sum
}

fn run_slab<T: Real>(slab: &[DenseLayer<T>], mut x: Array2<T>) -> Result<Array2<T>> {
    for layer in slab {
        let mut z = layer.pre_activation(x.view())?;
        if layer.activation == Activation::Relu {
            Activation::Relu.apply_rows(&mut z);
        }
        x = z;
    }
    Ok(x)
}

/// Expansion layer then the node's dense slab. The output layer's softmax
/// is not applied: the cloud emits logits.
///
/// An input narrower than the expansion layer (its widest operand was Φ) is
/// zero-padded at the tail; a wider one is an error.
pub fn node_forward<T: Real>(
    dnn: &DistributedDnn<T>,
    node: usize,
    input: &ActivationVector<T>,
) -> Result<ActivationVector<T>> {
    let ActivationVector::Value(v) = input else {
        return Ok(ActivationVector::Null);
    };
    if dnn.graph.nodes[node].tier == Tier::Iot {
        return Ok(input.clone());
    }
    let width = dnn.graph.expansion[node]
        .ok_or_else(|| Error::Topology(format!("{} has no expansion layer", dnn.graph.nodes[node].id)))?
        .width;
    if v.len() > width {
        return Err(Error::dims(width, v.len(), "expansion layer input"));
    }
    let mut x = Array2::zeros((1, width));
    x.slice_mut(s![0, ..v.len()]).assign(v);
    let out = run_slab(dnn.slab(node), x)?;
    Ok(ActivationVector::Value(out.index_axis_move(Axis(0), 0)))
}

/// Per-node outputs for a batch under an alive mask; `None` is Φ.
pub(crate) fn forward_all<T: Real>(
    dnn: &DistributedDnn<T>,
    inputs: &[ArrayView2<T>],
    alive: &[bool],
) -> Result<Vec<Option<Array2<T>>>> {
    let g = &dnn.graph;
    if alive.len() != g.nodes.len() {
        return Err(Error::dims(g.nodes.len(), alive.len(), "failure combination"));
    }
    let sources = g.sources();
    if inputs.len() != sources.len() {
        return Err(Error::dims(sources.len(), inputs.len(), "input views"));
    }
    let rows = inputs.first().map_or(0, |x| x.nrows());
    let mut outputs: Vec<Option<Array2<T>>> = vec![None; g.nodes.len()];
    for (&src, x) in sources.iter().zip(inputs) {
        if x.ncols() != g.spec.input_dim || x.nrows() != rows {
            return Err(Error::dims(g.spec.input_dim, x.ncols(), "IoT source input"));
        }
        if alive[src] {
            outputs[src] = Some(x.to_owned());
        }
    }
    for &n in &g.order {
        if g.nodes[n].tier == Tier::Iot || !alive[n] {
            continue;
        }
        let width = g.expansion[n].map_or(0, |e| e.width);
        let operands: Vec<(Option<ArrayView2<T>>, &[f32])> = g
            .incoming(n)
            .into_iter()
            .map(|h| {
                let hc = &g.hyperconnections[h];
                (outputs[hc.src].as_ref().map(|a| a.view()), hc.weight.as_slice())
            })
            .collect();
        outputs[n] = match add_batch(&operands, rows, width) {
            Some(x) => Some(run_slab(dnn.slab(n), x)?),
            None => None,
        };
    }
    Ok(outputs)
}

/// Logits for a batch (one row per instance and one matrix per IoT source),
/// or `None` when Φ reaches the output.
pub fn forward_batch<T: Real>(
    dnn: &DistributedDnn<T>,
    inputs: &[ArrayView2<T>],
    alive: &[bool],
) -> Result<Option<Array2<T>>> {
    let sink = dnn.graph.sink();
    Ok(forward_all(dnn, inputs, alive)?.swap_remove(sink))
}

/// Single-instance forward pass; `inputs` holds one vector per IoT source.
pub fn distributed_forward<T: Real>(
    dnn: &DistributedDnn<T>,
    inputs: &[ArrayView1<T>],
    alive: &[bool],
) -> Result<InferenceOutcome<T>> {
    let views: Vec<ArrayView2<T>> = inputs.iter().map(|x| x.view().insert_axis(Axis(0))).collect();
    let logits = match forward_batch(dnn, &views, alive)? {
        Some(out) => ActivationVector::Value(out.index_axis_move(Axis(0), 0)),
        None => ActivationVector::Null,
    };
    Ok(InferenceOutcome::from_logits(logits))
}

const EVAL_CHUNK: usize = 4096;

/// Number of correct predictions on `indices`; random guesses score per
/// `guess`. Returned as a real because expectation-mode guesses count 1/K.
pub fn correct_count<T: Real>(
    dnn: &DistributedDnn<T>,
    data: &Dataset,
    indices: &[usize],
    alive: &[bool],
    guess: GuessMode,
) -> Result<f64> {
    let k = dnn.class_count();
    let mut rng = match guess {
        GuessMode::Sampled { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        GuessMode::Expectation => None,
    };
    let mut correct = 0.0;
    for chunk in indices.chunks(EVAL_CHUNK) {
        let views: Vec<Array2<T>> = data.gather(chunk).into_iter().map(|v| v.mapv(|x| T::real(x as f64))).collect();
        let view_refs: Vec<ArrayView2<T>> = views.iter().map(|v| v.view()).collect();
        let out = forward_batch(dnn, &view_refs, alive)?;
        for (row, &i) in chunk.iter().enumerate() {
            let label = data.labels[i];
            match &out {
                Some(logits) => {
                    let r = logits.row(row);
                    if argmax(r.as_slice().expect("contiguous")) == label {
                        correct += 1.0;
                    }
                }
                None => match rng.as_mut() {
                    None => correct += 1.0 / k as f64,
                    Some(rng) => {
                        if rng.random_range(0..k) == label {
                            correct += 1.0;
                        }
                    }
                },
            }
        }
    }
    Ok(correct)
}

/// Accuracy of the masked network on one split of `data`.
pub fn accuracy<T: Real>(
    dnn: &DistributedDnn<T>,
    data: &Dataset,
    split: SplitKind,
    alive: &[bool],
    guess: GuessMode,
) -> Result<f64> {
    let indices = data.split(split);
    if indices.is_empty() {
        return Err(Error::Dataset(format!("{split:?} split is empty")));
    }
    Ok(correct_count(dnn, data, indices, alive, guess)? / indices.len() as f64)
}
