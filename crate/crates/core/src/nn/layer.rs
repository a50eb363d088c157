use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{softmax, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
    Softmax,
}

impl Activation {
    /// Tag byte used by the weight persistence format.
    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
            Activation::Softmax => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Identity),
            2 => Some(Activation::Softmax),
            _ => None,
        }
    }

    /// Applies the activation to each row of `z` in place.
    pub fn apply_rows<T: Real>(self, z: &mut Array2<T>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() }),
            Activation::Identity => {}
            Activation::Softmax => {
                for mut row in z.axis_iter_mut(Axis(0)) {
                    let s = softmax(row.as_slice().expect("standard layout"));
                    row.assign(&Array1::from(s));
                }
            }
        }
    }
}

/// Fully connected layer computing `activation(W·x + b)`.
///
/// `weights` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    pub weights: Array2<T>,
    pub bias: Array1<T>,
    pub activation: Activation,
}

impl<T: Real> DenseLayer<T> {
    pub fn new(weights: Array2<T>, bias: Array1<T>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.nrows() {
            return Err(Error::dims(weights.nrows(), bias.len(), "bias length"));
        }
        Ok(Self { weights, bias, activation })
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self { weights: Array2::zeros((outputs, inputs)), bias: Array1::zeros(outputs), activation }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Pre-activation `x·Wᵀ + b` for a batch laid out one sample per row.
    pub fn pre_activation(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        if x.ncols() != self.inputs() {
            return Err(Error::dims(self.inputs(), x.ncols(), "dense layer input"));
        }
        let mut z = x.dot(&self.weights.t());
        z += &self.bias;
        Ok(z)
    }

    pub fn forward_batch(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        let mut z = self.pre_activation(x)?;
        self.activation.apply_rows(&mut z);
        Ok(z)
    }

    /// Backward pass for one layer given its cached input and pre-activation.
    ///
    /// Softmax is treated as the identity here: it only ever appears on the
    /// output layer, where the loss gradient is taken with respect to logits.
    /// Returns `(dW, db, d_input)`.
    pub(crate) fn backward(
        &self,
        input: ArrayView2<T>,
        pre: ArrayView2<T>,
        mut grad: Array2<T>,
    ) -> (Array2<T>, Array1<T>, Array2<T>) {
        if self.activation == Activation::Relu {
            ndarray::Zip::from(&mut grad).and(&pre).for_each(|g, &z| {
                if z <= T::zero() {
                    *g = T::zero();
                }
            });
        }
        let d_weights = grad.t().dot(&input);
        let d_bias = grad.sum_axis(Axis(0));
        let d_input = grad.dot(&self.weights);
        (d_weights, d_bias, d_input)
    }

    /// Forward pass used during training: returns the pre-activation and the
    /// activation, with softmax left as raw logits.
    pub(crate) fn forward_train(&self, x: ArrayView2<T>) -> Result<(Array2<T>, Array2<T>)> {
        let z = self.pre_activation(x)?;
        let mut a = z.clone();
        if self.activation == Activation::Relu {
            Activation::Relu.apply_rows(&mut a);
        }
        Ok((z, a))
    }
}

/// Single-sample forward pass.
pub fn dense_forward<T: Real>(layer: &DenseLayer<T>, input: ArrayView1<T>) -> Result<Array1<T>> {
    let x = input.insert_axis(Axis(0));
    let out = layer.forward_batch(x)?;
    Ok(out.index_axis_move(Axis(0), 0))
}

/// He-uniform initialization: weights drawn from `U(-√(6/fan_in), √(6/fan_in))`, zero bias.
pub fn he_uniform<T: Real, R: Rng + ?Sized>(
    inputs: usize,
    outputs: usize,
    activation: Activation,
    rng: &mut R,
) -> DenseLayer<T> {
    let limit = (6.0 / inputs.max(1) as f64).sqrt();
    let weights = Array2::from_shape_simple_fn((outputs, inputs), || T::real(rng.random_range(-limit..limit)));
    DenseLayer { weights, bias: Array1::zeros(outputs), activation }
}

/// Glorot-uniform initialization, `U(-√(6/(fan_in+fan_out)), …)`, zero bias.
pub fn glorot_uniform<T: Real, R: Rng + ?Sized>(
    inputs: usize,
    outputs: usize,
    activation: Activation,
    rng: &mut R,
) -> DenseLayer<T> {
    let limit = (6.0 / (inputs + outputs).max(1) as f64).sqrt();
    let weights = Array2::from_shape_simple_fn((outputs, inputs), || T::real(rng.random_range(-limit..limit)));
    DenseLayer { weights, bias: Array1::zeros(outputs), activation }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = DenseLayer::new(array![[1.0, 0.0], [0.0, 1.0]], array![0.0, 0.0], Activation::Identity).unwrap();
        let out = dense_forward(&layer, array![3.0, 4.0].view()).unwrap();
        assert_eq!(out, array![3.0, 4.0]);
    }

    #[test]
    fn relu_clamps_negative_preactivation() {
        let layer = DenseLayer::new(array![[1.0, 1.0]], array![-5.0], Activation::Relu).unwrap();
        let out = dense_forward(&layer, array![2.0, 2.0].view()).unwrap();
        assert_eq!(out, array![0.0]);
    }

    #[test]
    fn matches_hand_rolled_matvec() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let layer: DenseLayer<f64> = {
            let mut l = he_uniform(5, 3, Activation::Identity, &mut rng);
            l.bias = Array1::from_shape_simple_fn(3, || rng.random_range(-1.0..1.0));
            l
        };
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let out = dense_forward(&layer, ArrayView1::from(&x)).unwrap();
        assert_eq!(out.len(), 3);
        for r in 0..3 {
            let mut acc = layer.bias[r];
            for (c, xc) in x.iter().enumerate() {
                acc += layer.weights[[r, c]] * xc;
            }
            assert!((out[r] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_wrong_input_length() {
        let layer = DenseLayer::<f32>::zeros(3, 2, Activation::Relu);
        let err = dense_forward(&layer, array![1.0f32, 2.0].view()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 3, got: 2, .. }));
    }

    #[test]
    fn bias_length_must_match_rows() {
        assert!(DenseLayer::new(array![[1.0, 2.0]], array![0.0, 0.0], Activation::Relu).is_err());
    }

    #[test]
    fn softmax_layer_rows_sum_to_one() {
        let layer =
            DenseLayer::new(array![[1.0, -2.0], [0.5, 0.5], [3.0, 0.0]], array![0.1, 0.2, 0.3], Activation::Softmax)
                .unwrap();
        let out = layer.forward_batch(array![[1.0, 2.0], [-4.0, 9.0]].view()).unwrap();
        for row in out.rows() {
            assert!((row.sum() - 1.0f64).abs() < 1e-12);
        }
    }
}
