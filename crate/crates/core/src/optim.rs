//! SGD with classical momentum.

use std::fmt;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum OptimError {
    /// step() called while a parameter has no gradient
    MissingGrad { param_index: usize },
    /// parameter count changed between steps
    ParamCountChanged { expected: usize, got: usize },
    BadHyperparameter { reason: String },
}

impl fmt::Display for OptimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimError::MissingGrad { param_index } => {
                write!(f, "parameter {param_index} has no gradient; run backward first")
            }
            OptimError::ParamCountChanged { expected, got } => {
                write!(f, "optimizer built for {expected} parameters, got {got}")
            }
            OptimError::BadHyperparameter { reason } => write!(f, "bad hyperparameter: {reason}"),
        }
    }
}

impl std::error::Error for OptimError {}

/// Velocity state for one set of parameters.
///
/// Update rule: `v <- momentum * v + g + weight_decay * p`,
/// `p <- p - lr * v`, gradients cleared.
pub struct SgdMomentum<T: Scalar> {
    learning_rate: T,
    momentum: T,
    weight_decay: T,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> SgdMomentum<T> {
    pub fn new(learning_rate: T, momentum: T, params: &[Tensor<T>]) -> Result<Self, OptimError> {
        Self::with_weight_decay(learning_rate, momentum, T::zero(), params)
    }

    pub fn with_weight_decay(
        learning_rate: T,
        momentum: T,
        weight_decay: T,
        params: &[Tensor<T>],
    ) -> Result<Self, OptimError> {
        if learning_rate < T::zero() || !learning_rate.is_finite() {
            return Err(OptimError::BadHyperparameter {
                reason: format!("learning rate {learning_rate} must be finite and >= 0"),
            });
        }
        if momentum < T::zero() || momentum >= T::one() {
            return Err(OptimError::BadHyperparameter {
                reason: format!("momentum {momentum} must lie in [0, 1)"),
            });
        }
        if weight_decay < T::zero() || !weight_decay.is_finite() {
            return Err(OptimError::BadHyperparameter {
                reason: format!("weight decay {weight_decay} must be finite and >= 0"),
            });
        }
        Ok(SgdMomentum {
            learning_rate,
            momentum,
            weight_decay,
            velocity: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
        })
    }

    pub fn step(&mut self, params: &[Tensor<T>]) -> Result<(), OptimError> {
        if params.len() != self.velocity.len() {
            return Err(OptimError::ParamCountChanged {
                expected: self.velocity.len(),
                got: params.len(),
            });
        }
        for (i, p) in params.iter().enumerate() {
            if p.grad().is_none() {
                return Err(OptimError::MissingGrad { param_index: i });
            }
        }
        for (i, p) in params.iter().enumerate() {
            let grad = p.grad().expect("checked above");
            let v = &mut self.velocity[i];
            let mut data = p.to_vec();
            for ((pv, vv), g) in data.iter_mut().zip(v.iter_mut()).zip(grad) {
                *vv = self.momentum * *vv + g + self.weight_decay * *pv;
                *pv = *pv - self.learning_rate * *vv;
            }
            p.copy_from_slice(&data);
            p.clear_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_sgd_single_step() {
        let p = Tensor::<f64>::param(vec![1.0], &[1]).unwrap();
        // loss = 2p  =>  g = 2
        p.scale(2.0).sum().backward().unwrap();
        let mut opt = SgdMomentum::new(0.1, 0.0, std::slice::from_ref(&p)).unwrap();
        opt.step(std::slice::from_ref(&p)).unwrap();
        assert!((p.to_vec()[0] - 0.8).abs() < 1e-12);
        assert!(p.grad().is_none(), "gradients cleared after step");
    }

    #[test]
    fn zero_learning_rate_leaves_params_bitwise_unchanged() {
        let p = Tensor::<f32>::param(vec![0.123_456_7, -9.875], &[2]).unwrap();
        let before = p.to_vec();
        p.sum().backward().unwrap();
        let mut opt = SgdMomentum::new(0.0, 0.9, std::slice::from_ref(&p)).unwrap();
        opt.step(std::slice::from_ref(&p)).unwrap();
        for (a, b) in p.to_vec().iter().zip(&before) {
            assert!(a.bits_eq(*b));
        }
    }

    #[test]
    fn momentum_recursion_two_steps() {
        // mu=0.9, alpha=1, g=1 twice from p=0: v1=1, p=-1; v2=1.9, p=-2.9
        let p = Tensor::<f64>::param(vec![0.0], &[1]).unwrap();
        let mut opt = SgdMomentum::new(1.0, 0.9, std::slice::from_ref(&p)).unwrap();
        for _ in 0..2 {
            p.sum().backward().unwrap();
            opt.step(std::slice::from_ref(&p)).unwrap();
        }
        assert!((p.to_vec()[0] - -2.9).abs() < 1e-12);
    }

    #[test]
    fn step_without_grad_is_usage_error() {
        let p = Tensor::<f64>::param(vec![1.0], &[1]).unwrap();
        let mut opt = SgdMomentum::new(0.1, 0.0, std::slice::from_ref(&p)).unwrap();
        assert!(matches!(
            opt.step(std::slice::from_ref(&p)),
            Err(OptimError::MissingGrad { param_index: 0 })
        ));
    }

    #[test]
    fn rejects_momentum_of_one() {
        let p = Tensor::<f64>::param(vec![1.0], &[1]).unwrap();
        assert!(SgdMomentum::new(0.1, 1.0, std::slice::from_ref(&p)).is_err());
    }
}
