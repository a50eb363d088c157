//! Mini-batch training of a distributed DNN as one network.
//!
//! All nodes are alive during training. Gradients flow back through every
//! Add junction: the gradient of an Add output is truncated to each
//! operand's width, scaled by the hyperconnection weight, and accumulated at
//! the operand's source node, which may feed several destinations.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SplitKind};
use crate::error::{Error, Result};
use crate::inference::{accuracy, add_batch, GuessMode};
use crate::nn::{
    batch_loss_and_grad, flat_param, loss_and_grad, set_flat_param, Adam, GradCheckable, LossSpec, OptimizerSpec, Real,
};
use crate::topology::dnn::hc_weight;
use crate::topology::{DistributedDnn, Tier};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerSpec,
    pub epochs: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    pub loss: LossSpec,
    /// Stop after this many epochs without a validation improvement.
    #[serde(default)]
    pub patience: Option<usize>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.loss.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    /// Weights from the best epoch.
    pub dnn: DistributedDnn<f32>,
    pub best_epoch: usize,
    pub val_accuracy: f64,
    pub history: Vec<EpochStats>,
}

/// The 1-based epoch with the highest validation accuracy; the earliest wins
/// ties.
pub fn select_best(history: &[EpochStats]) -> Option<usize> {
    let mut best: Option<&EpochStats> = None;
    for stats in history {
        if best.is_none_or(|b| stats.val_accuracy > b.val_accuracy) {
            best = Some(stats);
        }
    }
    best.map(|b| b.epoch)
}

struct Cache<T> {
    /// Per global layer: its input and pre-activation.
    layers: Vec<Option<(Array2<T>, Array2<T>)>>,
    /// Per node: its output (IoT nodes pass their input through).
    outputs: Vec<Option<Array2<T>>>,
}

fn forward_cached<T: Real>(dnn: &DistributedDnn<T>, inputs: &[ArrayView2<T>]) -> Result<Cache<T>> {
    let g = &dnn.graph;
    let sources = g.sources();
    if inputs.len() != sources.len() {
        return Err(Error::dims(sources.len(), inputs.len(), "input views"));
    }
    let rows = inputs.first().map_or(0, |x| x.nrows());
    let mut cache = Cache { layers: vec![None; dnn.layers.len()], outputs: vec![None; g.nodes.len()] };
    for (&src, x) in sources.iter().zip(inputs) {
        if x.ncols() != g.spec.input_dim || x.nrows() != rows {
            return Err(Error::dims(g.spec.input_dim, x.ncols(), "IoT source input"));
        }
        cache.outputs[src] = Some(x.to_owned());
    }
    for &n in &g.order {
        if g.nodes[n].tier == Tier::Iot {
            continue;
        }
        let width = g.expansion[n].map_or(0, |e| e.width);
        let operands: Vec<(Option<ArrayView2<T>>, &[f32])> = g
            .incoming(n)
            .into_iter()
            .map(|h| {
                let hc = &g.hyperconnections[h];
                (cache.outputs[hc.src].as_ref().map(|a| a.view()), hc.weight.as_slice())
            })
            .collect();
        let mut x = add_batch(&operands, rows, width)
            .ok_or_else(|| Error::Topology(format!("{} has no input", g.nodes[n].id)))?;
        for &l in &g.nodes[n].assigned_layers {
            let (z, a) = dnn.layers[l].forward_train(x.view())?;
            cache.layers[l] = Some((x, z));
            x = a;
        }
        cache.outputs[n] = Some(x);
    }
    Ok(cache)
}

/// `(dW, db)` per global layer.
pub type LayerGrads<T> = Vec<(Array2<T>, Array1<T>)>;

/// Mean loss over a batch and its gradient for every layer as `(dW, db)`,
/// indexed by global layer.
pub fn loss_and_gradients<T: Real>(
    dnn: &DistributedDnn<T>,
    inputs: &[ArrayView2<T>],
    labels: &[usize],
    loss: &LossSpec,
) -> Result<(T, LayerGrads<T>)> {
    let g = &dnn.graph;
    let mut cache = forward_cached(dnn, inputs)?;
    let sink = g.sink();
    let logits = cache.outputs[sink].take().expect("sink computed");
    let (value, grad) = batch_loss_and_grad(loss, logits.view(), labels)?;

    let mut grads: Vec<Option<(Array2<T>, Array1<T>)>> = vec![None; dnn.layers.len()];
    let mut upstream: Vec<Option<Array2<T>>> = vec![None; g.nodes.len()];
    upstream[sink] = Some(grad);
    for &n in g.order.iter().rev() {
        if g.nodes[n].tier == Tier::Iot {
            continue;
        }
        let Some(mut grad) = upstream[n].take() else {
            continue;
        };
        for &l in g.nodes[n].assigned_layers.iter().rev() {
            let (input, pre) = cache.layers[l].take().expect("layer computed");
            let (dw, db, dx) = dnn.layers[l].backward(input.view(), pre.view(), grad);
            grads[l] = Some((dw, db));
            grad = dx;
        }
        for h in g.incoming(n) {
            let hc = &g.hyperconnections[h];
            if g.nodes[hc.src].tier == Tier::Iot {
                continue;
            }
            let part = &grad.slice(s![.., ..hc.dim]) * &hc_weight::<T>(&hc.weight);
            match &mut upstream[hc.src] {
                Some(acc) => *acc += &part,
                slot => *slot = Some(part),
            }
        }
    }
    let grads = grads
        .into_iter()
        .enumerate()
        .map(|(l, gr)| {
            gr.unwrap_or_else(|| {
                let layer = &dnn.layers[l];
                (Array2::zeros(layer.weights.raw_dim()), Array1::zeros(layer.bias.len()))
            })
        })
        .collect();
    Ok((value, grads))
}

fn to_real<T: Real>(views: Vec<Array2<f32>>) -> Vec<Array2<T>> {
    views.into_iter().map(|v| v.mapv(|x| T::real(x as f64))).collect()
}

fn adam_step(adam: &mut Adam<f32>, dnn: &mut DistributedDnn<f32>, grads: &[(Array2<f32>, Array1<f32>)]) -> Result<()> {
    let mut params: Vec<&mut [f32]> = Vec::with_capacity(2 * dnn.layers.len());
    for layer in &mut dnn.layers {
        params.push(layer.weights.as_slice_mut().expect("standard layout"));
        params.push(layer.bias.as_slice_mut().expect("contiguous"));
    }
    let flat: Vec<&[f32]> = grads
        .iter()
        .flat_map(|(dw, db)| [dw.as_slice().expect("standard layout"), db.as_slice().expect("contiguous")])
        .collect();
    adam.step(&mut params, &flat)
}

pub fn train(dnn: DistributedDnn<f32>, data: &Dataset, config: &TrainConfig) -> Result<TrainedModel> {
    train_with(dnn, data, config, |_| {})
}

/// Trains on the train split, scores every epoch on the validation split
/// with all nodes alive, and keeps the weights of the best epoch.
/// `on_epoch` sees each epoch's statistics as they are produced.
pub fn train_with(
    mut dnn: DistributedDnn<f32>,
    data: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainedModel> {
    config.validate()?;
    dnn.check_shapes()?;
    if data.views.len() != dnn.graph.sources().len() {
        return Err(Error::dims(dnn.graph.sources().len(), data.views.len(), "dataset views"));
    }
    if data.class_count != dnn.class_count() {
        return Err(Error::dims(dnn.class_count(), data.class_count, "class count"));
    }
    if let Some(w) = &config.loss.class_weights {
        if w.len() != data.class_count {
            return Err(Error::dims(data.class_count, w.len(), "class weights"));
        }
    }
    let mut order = data.split(SplitKind::Train).to_vec();
    if order.is_empty() || data.split(SplitKind::Val).is_empty() {
        return Err(Error::Dataset("training needs non-empty train and validation splits".into()));
    }

    let alive = vec![true; dnn.graph.nodes.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.optimizer.clone())?;
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(DistributedDnn<f32>, EpochStats)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch, idx) in order.chunks(config.optimizer.batch_size).enumerate() {
            let views = data.gather(idx);
            let refs: Vec<ArrayView2<f32>> = views.iter().map(|v| v.view()).collect();
            let labels = data.labels_of(idx);
            let (value, grads) = loss_and_gradients(&dnn, &refs, &labels, &config.loss)?;
            let value = value as f64;
            if !value.is_finite() || grads.iter().any(|(w, b)| w.iter().chain(b).any(|x| !x.is_finite())) {
                return Err(Error::Diverged { epoch, batch, loss: value });
            }
            total += value * idx.len() as f64;
            adam_step(&mut adam, &mut dnn, &grads)?;
        }
        let stats = EpochStats {
            epoch,
            train_loss: total / order.len() as f64,
            val_accuracy: accuracy(&dnn, data, SplitKind::Val, &alive, GuessMode::Expectation)?,
        };
        on_epoch(&stats);
        history.push(stats);
        if best.as_ref().is_none_or(|(_, b)| stats.val_accuracy > b.val_accuracy) {
            best = Some((dnn.clone(), stats));
        }
        let best_epoch = best.as_ref().map_or(epoch, |(_, b)| b.epoch);
        if config.patience.is_some_and(|p| epoch - best_epoch >= p) {
            break;
        }
    }
    let (dnn, stats) = best.expect("at least one epoch");
    Ok(TrainedModel { dnn, best_epoch: stats.epoch, val_accuracy: stats.val_accuracy, history })
}

/// Parameters are flattened layer by layer in global layer order, each as
/// row-major weights followed by bias. The input holds one vector per IoT
/// source.
impl<T: Real> GradCheckable<T> for DistributedDnn<T> {
    type Input = Vec<Array1<T>>;

    fn param_count(&self) -> usize {
        DistributedDnn::param_count(self)
    }

    fn param(&self, index: usize) -> T {
        flat_param(&self.layers, index)
    }

    fn set_param(&mut self, index: usize, value: T) {
        set_flat_param(&mut self.layers, index, value)
    }

    fn loss(&self, input: &Self::Input, label: usize, loss: &LossSpec) -> Result<T> {
        let views: Vec<ArrayView2<T>> = input.iter().map(|x| x.view().insert_axis(Axis(0))).collect();
        let mut cache = forward_cached(self, &views)?;
        let logits = cache.outputs[self.graph.sink()].take().expect("sink computed");
        Ok(loss_and_grad(loss, &logits.row(0).to_vec(), label)?.0)
    }

    fn gradient(&self, input: &Self::Input, label: usize, loss: &LossSpec) -> Result<Vec<T>> {
        let views: Vec<ArrayView2<T>> = input.iter().map(|x| x.view().insert_axis(Axis(0))).collect();
        let (_, grads) = loss_and_gradients(self, &views, &[label], loss)?;
        let mut flat = Vec::with_capacity(DistributedDnn::param_count(self));
        for (dw, db) in grads {
            flat.extend(dw.iter().copied());
            flat.extend(db.iter().copied());
        }
        Ok(flat)
    }
}

/// Mean loss of `dnn` over a split with all nodes alive.
pub fn split_loss<T: Real>(dnn: &DistributedDnn<T>, data: &Dataset, split: SplitKind, loss: &LossSpec) -> Result<f64> {
    let idx = data.split(split);
    let mut total = 0.0;
    for chunk in idx.chunks(4096) {
        let views = to_real::<T>(data.gather(chunk));
        let refs: Vec<ArrayView2<T>> = views.iter().map(|v| v.view()).collect();
        let mut cache = forward_cached(dnn, &refs)?;
        let logits = cache.outputs[dnn.graph.sink()].take().expect("sink computed");
        let (value, _) = batch_loss_and_grad(loss, logits.view(), &data.labels_of(chunk))?;
        total += value.to_f64() * chunk.len() as f64;
    }
    Ok(total / idx.len().max(1) as f64)
}
