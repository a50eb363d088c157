use serde::{Deserialize, Serialize};

use super::Real;
use crate::error::{Error, Result};

/// Adam hyperparameters. Defaults follow the common Keras settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub batch_size: usize,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-7
}

impl OptimizerSpec {
    pub fn adam(learning_rate: f64, batch_size: usize) -> Self {
        Self { learning_rate, beta1: default_beta1(), beta2: default_beta2(), epsilon: default_epsilon(), batch_size }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && self.beta1 > 0.0
            && (0.0..1.0).contains(&self.beta2)
            && self.beta2 > 0.0
            && self.epsilon > 0.0
            && self.batch_size >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings: {self:?}")))
        }
    }
}

/// Adam state over an ordered list of flat parameter tensors.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    spec: OptimizerSpec,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(spec: OptimizerSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec, step: 0, first: Vec::new(), second: Vec::new() })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update. Moment buffers are sized on the first
    /// call; later calls must present the same tensor shapes.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameter tensors but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(Error::ShapeMismatch(format!(
                    "tensor {i}: {} parameters but {} gradients",
                    p.len(),
                    g.len()
                )));
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len()
            || self.first.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len())
        {
            return Err(Error::ShapeMismatch("parameter shapes changed between Adam steps".into()));
        }

        self.step += 1;
        let b1 = T::real(self.spec.beta1);
        let b2 = T::real(self.spec.beta2);
        let lr = T::real(self.spec.learning_rate);
        let eps = T::real(self.spec.epsilon);
        let t = self.step as i32;
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);

        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.first.iter_mut().zip(self.second.iter_mut())) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut adam = Adam::<f64>::new(OptimizerSpec::adam(0.01, 1)).unwrap();
        let mut w = vec![0.5, -1.5, 2.0];
        let g = vec![0.0; 3];
        for _ in 0..10 {
            adam.step(&mut [&mut w], &[&g]).unwrap();
        }
        assert_eq!(w, vec![0.5, -1.5, 2.0]);
        assert_eq!(adam.steps_taken(), 10);
    }

    #[test]
    fn constant_gradient_step_approaches_learning_rate() {
        let lr = 0.001;
        let mut adam = Adam::<f64>::new(OptimizerSpec::adam(lr, 1)).unwrap();
        let mut w = vec![0.0, 0.0];
        let g = vec![0.3, -4.0];
        let mut prev = w.clone();
        for _ in 0..2000 {
            adam.step(&mut [&mut w], &[&g]).unwrap();
            for i in 0..2 {
                let delta = (w[i] - prev[i]).abs();
                // With m̂ = g and v̂ = g², the step is lr·|g|/(|g|+ε).
                assert!((delta - lr).abs() < 1e-6, "step {delta}");
            }
            prev = w.clone();
        }
    }

    #[test]
    fn matches_hand_trace() {
        // Hand-computed trace for p0 = 1, gradients 0.5, -0.25, 1.0.
        let expected = [0.9990000001999999, 0.9987336632277282, 0.9980755517269424];
        let mut adam = Adam::<f64>::new(OptimizerSpec::adam(0.001, 1)).unwrap();
        let mut p = vec![1.0];
        for (g, want) in [0.5, -0.25, 1.0].into_iter().zip(expected) {
            adam.step(&mut [&mut p], &[&[g]]).unwrap();
            assert!((p[0] - want).abs() < 1e-12, "{} vs {want}", p[0]);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut adam = Adam::<f32>::new(OptimizerSpec::adam(0.1, 1)).unwrap();
        let mut w = vec![0.0f32; 3];
        assert!(adam.step(&mut [&mut w], &[&[1.0, 2.0]]).is_err());
        adam.step(&mut [&mut w], &[&[1.0, 2.0, 3.0]]).unwrap();
        let mut other = vec![0.0f32; 4];
        assert!(adam.step(&mut [&mut other], &[&[0.0; 4]]).is_err());
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let mut spec = OptimizerSpec::adam(0.0, 8);
        assert!(spec.validate().is_err());
        spec.learning_rate = 0.1;
        spec.beta2 = 1.0;
        assert!(spec.validate().is_err());
    }
}
