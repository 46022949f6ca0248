use std::collections::BTreeMap;

use super::params::ParamStore;
use super::tensor::Tensor;
use super::AutodiffError;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> AdamConfig<T> {
    pub fn with_lr(lr: T) -> Self {
        Self {
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }
}

/// First/second moment estimates and the step counter.
#[derive(Clone, Debug, Default)]
pub struct AdamState<T> {
    pub step: u64,
    pub first: BTreeMap<String, Vec<T>>,
    pub second: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        Self {
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &BTreeMap<String, Tensor<T>>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig<T>,
) -> Result<(), AutodiffError> {
    state.step += 1;
    let t = T::from_u64(state.step).unwrap();
    let bc1 = T::one() - cfg.beta1.powf(t);
    let bc2 = T::one() - cfg.beta2.powf(t);
    for (name, grad) in grads {
        let param = params
            .get_mut(name)
            .ok_or_else(|| AutodiffError::MissingParam(name.clone()))?;
        if param.len() != grad.len() {
            return Err(AutodiffError::Shape {
                op: "adam_step",
                lhs: param.shape().to_vec(),
                rhs: grad.shape().to_vec(),
            });
        }
        let m = state
            .first
            .entry(name.clone())
            .or_insert_with(|| vec![T::zero(); grad.len()]);
        let v = state
            .second
            .entry(name.clone())
            .or_insert_with(|| vec![T::zero(); grad.len()]);
        for (((p, &g), mi), vi) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = cfg.beta1 * *mi + (T::one() - cfg.beta1) * g;
            *vi = cfg.beta2 * *vi + (T::one() - cfg.beta2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *p = *p - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamStore<f64> {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::vector(vec![value]));
        p
    }

    fn grad(value: f64) -> BTreeMap<String, Tensor<f64>> {
        BTreeMap::from([("w".to_string(), Tensor::vector(vec![value]))])
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = single(1.0);
        let mut s = AdamState::new();
        adam_step(&mut p, &grad(0.0), &mut s, &AdamConfig::with_lr(0.1)).unwrap();
        assert_eq!(p.get("w").unwrap().item(), 1.0);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = single(1.0);
        let mut s = AdamState::new();
        adam_step(&mut p, &grad(1.0), &mut s, &AdamConfig::with_lr(0.1)).unwrap();
        // m_hat = 1, v_hat = 1 -> step = 0.1 / (1 + 1e-8)
        assert!((p.get("w").unwrap().item() - 0.9).abs() < 1e-8);
    }

    #[test]
    fn moments_decay_under_zero_gradient() {
        let mut p = single(1.0);
        let mut s = AdamState::new();
        let cfg = AdamConfig::with_lr(0.01);
        adam_step(&mut p, &grad(2.0), &mut s, &cfg).unwrap();
        let (m0, v0) = (s.first["w"][0], s.second["w"][0]);
        for _ in 0..50 {
            adam_step(&mut p, &grad(0.0), &mut s, &cfg).unwrap();
        }
        assert!(s.first["w"][0].abs() < m0.abs() * 0.01);
        assert!(s.second["w"][0] < v0);
        assert!(s.second["w"][0] > 0.0);
    }

    #[test]
    fn unknown_parameter_is_rejected() {
        let mut p = single(1.0);
        let mut s = AdamState::new();
        let g = BTreeMap::from([("nope".to_string(), Tensor::vector(vec![1.0]))]);
        assert!(adam_step(&mut p, &g, &mut s, &AdamConfig::with_lr(0.1)).is_err());
    }
}
