use super::{LossSpec, Real};
use crate::error::Result;

/// A model whose flattened parameters can be perturbed one at a time and
/// whose analytic gradient can be compared against finite differences.
pub trait GradCheckable<T: Real> {
    type Input;

    fn param_count(&self) -> usize;
    fn param(&self, index: usize) -> T;
    fn set_param(&mut self, index: usize, value: T);
    fn loss(&self, input: &Self::Input, label: usize, loss: &LossSpec) -> Result<T>;
    fn gradient(&self, input: &Self::Input, label: usize, loss: &LossSpec) -> Result<Vec<T>>;
}

/// Maximum relative error between backprop and central finite differences,
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`, under
/// unweighted cross-entropy.
pub fn grad_check<T, N>(network: &mut N, input: &N::Input, label: usize, epsilon: f64) -> Result<f64>
where
    T: Real,
    N: GradCheckable<T>,
{
    let loss = LossSpec::cross_entropy();
    let analytic = network.gradient(input, label, &loss)?;
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let original = network.param(i);
        network.set_param(i, T::real(original.to_f64() + epsilon));
        let plus = network.loss(input, label, &loss)?.to_f64();
        network.set_param(i, T::real(original.to_f64() - epsilon));
        let minus = network.loss(input, label, &loss)?.to_f64();
        network.set_param(i, original);

        let numeric = (plus - minus) / (2.0 * epsilon);
        let a = a.to_f64();
        let scale = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / scale);
    }
    Ok(worst)
}
