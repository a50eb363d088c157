use ndarray::{Array1, ArrayView1, Axis};

use super::{flat_param, loss_and_grad, set_flat_param, DenseLayer, GradCheckable, LossSpec, Real};
use crate::error::{Error, Result};

/// A plain sequential stack of dense layers.
///
/// Serves as the monolithic reference network that a distributed DNN must
/// reproduce when no node has failed.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<DenseLayer<T>>,
}

impl<T: Real> Mlp<T> {
    pub fn new(layers: Vec<DenseLayer<T>>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::dims(pair[1].inputs(), pair[0].outputs(), "stacked layers"));
            }
        }
        Ok(Self { layers })
    }

    /// Raw output of the last layer, before any softmax.
    pub fn logits(&self, input: ArrayView1<T>) -> Result<Array1<T>> {
        let mut x = input.insert_axis(Axis(0)).to_owned();
        for layer in &self.layers {
            x = layer.forward_train(x.view())?.1;
        }
        Ok(x.index_axis_move(Axis(0), 0))
    }

    fn gradients(&self, input: ArrayView1<T>, label: usize, loss: &LossSpec) -> Result<(T, Vec<T>)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pres = Vec::with_capacity(self.layers.len());
        let mut x = input.insert_axis(Axis(0)).to_owned();
        for layer in &self.layers {
            let (z, a) = layer.forward_train(x.view())?;
            inputs.push(x);
            pres.push(z);
            x = a;
        }
        let logits = x.row(0).to_vec();
        let (value, g) = loss_and_grad(loss, &logits, label)?;
        let mut grad = Array1::from(g).insert_axis(Axis(0));
        let mut per_layer = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (dw, db, dx) = layer.backward(inputs[i].view(), pres[i].view(), grad);
            per_layer.push((dw, db));
            grad = dx;
        }
        per_layer.reverse();
        let mut flat = Vec::with_capacity(self.param_count());
        for (dw, db) in per_layer {
            flat.extend(dw.iter().copied());
            flat.extend(db.iter().copied());
        }
        Ok((value, flat))
    }
}

impl<T: Real> GradCheckable<T> for Mlp<T> {
    type Input = Array1<T>;

    fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    fn param(&self, index: usize) -> T {
        flat_param(&self.layers, index)
    }

    fn set_param(&mut self, index: usize, value: T) {
        set_flat_param(&mut self.layers, index, value)
    }

    fn loss(&self, input: &Array1<T>, label: usize, loss: &LossSpec) -> Result<T> {
        let logits = self.logits(input.view())?;
        Ok(loss_and_grad(loss, logits.as_slice().expect("contiguous"), label)?.0)
    }

    fn gradient(&self, input: &Array1<T>, label: usize, loss: &LossSpec) -> Result<Vec<T>> {
        Ok(self.gradients(input.view(), label, loss)?.1)
    }
}
