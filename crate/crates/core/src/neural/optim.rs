use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{c, Module, NeuralError, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<F> {
    pub first: Tensor<F>,
    pub second: Tensor<F>,
}

impl<F: Scalar> Moments<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { first: Tensor::zeros(shape), second: Tensor::zeros(shape) }
    }
}

/// One bias-corrected Adam update of `value`; `step` counts from 1.
pub fn adam_step<F: Scalar>(
    value: &mut Tensor<F>,
    grad: &Tensor<F>,
    moments: &mut Moments<F>,
    step: u64,
    config: &AdamConfig,
) -> Result<(), NeuralError> {
    grad.expect_shape(value.shape())?;
    moments.first.expect_shape(value.shape())?;
    moments.second.expect_shape(value.shape())?;
    let (b1, b2) = (c::<F>(config.beta1), c::<F>(config.beta2));
    let t = step.max(1) as i32;
    let corr1 = F::one() - c::<F>(config.beta1).powi(t);
    let corr2 = F::one() - c::<F>(config.beta2).powi(t);
    let (lr, eps) = (c::<F>(config.lr), c::<F>(config.eps));
    let (m, v) = (moments.first.data_mut(), moments.second.data_mut());
    for (((p, &g), m), v) in value.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = b1 * *m + (F::one() - b1) * g;
        *v = b2 * *v + (F::one() - b2) * g * g;
        let mh = *m / corr1;
        let vh = *v / corr2;
        *p = *p - lr * mh / (vh.sqrt() + eps);
    }
    Ok(())
}

/// Adam over every parameter of a module, visited in its fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<F> {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<Moments<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, moments: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update using the gradients currently stored in the
    /// module. Parameters with `requires_grad == false` are left alone.
    pub fn step<M: Module<F> + ?Sized>(&mut self, module: &mut M) -> Result<(), NeuralError> {
        if self.moments.is_empty() {
            module.visit(&mut |p| self.moments.push(Moments::zeros(p.value.shape())));
        }
        self.step += 1;
        let (step, config) = (self.step, self.config);
        let mut idx = 0;
        let mut result = Ok(());
        let moments = &mut self.moments;
        module.visit_mut(&mut |p| {
            if result.is_err() {
                return;
            }
            match moments.get_mut(idx) {
                Some(m) if p.requires_grad => result = adam_step(&mut p.value, &p.grad, m, step, &config),
                Some(_) => {}
                None => {
                    result = Err(NeuralError::ShapeMismatch { expected: alloc::vec![idx], found: p.value.shape().to_vec() })
                }
            }
            idx += 1;
        });
        if result.is_ok() && idx != moments.len() {
            result = Err(NeuralError::ShapeMismatch { expected: alloc::vec![moments.len()], found: alloc::vec![idx] });
        }
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn quadratic_trace(steps: u64) -> Vec<f64> {
        let config = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut x = Tensor::from_vec(&[1], vec![1.0f64]).unwrap();
        let mut m = Moments::zeros(&[1]);
        (1..=steps)
            .map(|t| {
                let g = Tensor::from_vec(&[1], vec![2.0 * x.data()[0]]).unwrap();
                adam_step(&mut x, &g, &mut m, t, &config).unwrap();
                x.data()[0]
            })
            .collect()
    }

    #[test]
    fn two_step_trace_matches_hand_computation() {
        let trace = quadratic_trace(2);
        assert!((trace[0] - 0.900_000_000_5).abs() < 1e-15);
        assert!((trace[1] - 0.800_412_228_691_792_8).abs() < 1e-13);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut x = Tensor::from_vec(&[2], vec![0.3f32, -1.0]).unwrap();
        let before = x.clone();
        let mut m = Moments::zeros(&[2]);
        adam_step(&mut x, &Tensor::zeros(&[2]), &mut m, 1, &AdamConfig::default()).unwrap();
        assert_eq!(x, before);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut x = Tensor::<f32>::zeros(&[2]);
        let mut m = Moments::zeros(&[2]);
        let r = adam_step(&mut x, &Tensor::zeros(&[3]), &mut m, 1, &AdamConfig::default());
        assert!(matches!(r, Err(NeuralError::ShapeMismatch { .. })));
    }
}
