//! Dense neural-network math: layers, activations, losses, Adam, and
//! finite-difference gradient checking.
//!
//! Everything is generic over [`Real`] so the same code runs in 32-bit mode
//! for training and inference and in 64-bit mode for gradient checks.

mod adam;
mod gradcheck;
mod layer;
mod loss;
mod mlp;
pub mod persist;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{Array2, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

pub use adam::{Adam, OptimizerSpec};
pub use gradcheck::{grad_check, GradCheckable};
pub use layer::{dense_forward, glorot_uniform, he_uniform, Activation, DenseLayer};
pub use loss::{batch_loss_and_grad, loss_and_grad, softmax, LossKind, LossSpec};
pub use mlp::Mlp;

/// Row-major dense matrix.
pub type Matrix<T> = Array2<T>;

/// Floating-point scalar usable by every numeric routine in the crate.
pub trait Real:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn real(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 is representable")
    }

    fn to_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("finite real")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Position of flat parameter `index` when every layer is flattened as its
/// row-major weights followed by its bias.
fn locate_param<T: Real>(layers: &[DenseLayer<T>], mut index: usize) -> (usize, usize) {
    for (l, layer) in layers.iter().enumerate() {
        if index < layer.param_count() {
            return (l, index);
        }
        index -= layer.param_count();
    }
    panic!("parameter index out of range");
}

pub(crate) fn flat_param<T: Real>(layers: &[DenseLayer<T>], index: usize) -> T {
    let (l, i) = locate_param(layers, index);
    let layer = &layers[l];
    let n = layer.weights.len();
    if i < n {
        layer.weights.as_slice().expect("standard layout")[i]
    } else {
        layer.bias[i - n]
    }
}

pub(crate) fn set_flat_param<T: Real>(layers: &mut [DenseLayer<T>], index: usize, value: T) {
    let (l, i) = locate_param(layers, index);
    let layer = &mut layers[l];
    let n = layer.weights.len();
    if i < n {
        layer.weights.as_slice_mut().expect("standard layout")[i] = value;
    } else {
        layer.bias[i - n] = value;
    }
}

/// Index of the largest element; the first wins on ties.
pub fn argmax<T: Real>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
