//! Adam with bias correction and optional decoupled weight decay.

use indexmap::IndexMap;

use crate::autodiff::{ParamSet, Tensor};
use crate::error::{Error, Result};

/// Per-parameter first/second moments plus a shared step counter.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    step: u64,
    m: IndexMap<String, Tensor>,
    v: IndexMap<String, Tensor>,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

impl AdamState {
    pub fn new() -> Self {
        AdamState::default()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam step over every entry of `grads`. Weight decay is
/// decoupled: it contributes `-lr * weight_decay * param` on top of the
/// moment-based update.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &ParamSet,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    state.step += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.step as i32);

    for (name, grad) in grads.iter() {
        let param = params
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))?;
        if param.shape() != grad.shape() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "parameter `{name}` has shape {:?} but gradient {:?}",
                    param.shape(),
                    grad.shape()
                ),
            ));
        }
        let m = state
            .m
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(grad.shape()));
        let v = state
            .v
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(grad.shape()));

        let p = param.data_mut();
        let md = m.data_mut();
        let vd = v.data_mut();
        for i in 0..p.len() {
            let g = grad.data()[i];
            md[i] = ADAM_BETA1 * md[i] + (1.0 - ADAM_BETA1) * g;
            vd[i] = ADAM_BETA2 * vd[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            let update = lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON) + lr * weight_decay * p[i];
            p[i] -= update;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(name: &str, values: Vec<f64>) -> ParamSet {
        let mut ps = ParamSet::new();
        let len = values.len();
        ps.insert(name, Tensor::from_vec(&[len], values).unwrap());
        ps
    }

    #[test]
    fn first_step_with_unit_gradient() {
        // Bias correction makes m_hat = v_hat = 1 on step one, so the update
        // is lr / (1 + eps) regardless of the raw gradient scale's sign.
        let mut params = single("w", vec![0.0]);
        let grads = single("w", vec![1.0]);
        let mut state = AdamState::new();
        let lr = 0.01;
        adam_step(&mut params, &grads, &mut state, lr, 0.0).unwrap();
        let expected = -lr * 1.0 / (1.0 + ADAM_EPSILON);
        let got = params.get("w").unwrap().data()[0];
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn zero_gradient_zero_decay_is_a_no_op() {
        let mut params = single("w", vec![1.5, -2.0]);
        let grads = single("w", vec![0.0, 0.0]);
        let mut state = AdamState::new();
        adam_step(&mut params, &grads, &mut state, 0.01, 0.0).unwrap();
        assert_eq!(params.get("w").unwrap().data(), &[1.5, -2.0]);
    }

    #[test]
    fn decay_contributes_minus_lr_wd_param() {
        let mut params = single("w", vec![2.0]);
        let grads = single("w", vec![0.0]);
        let mut state = AdamState::new();
        let (lr, wd) = (0.001, 1e-5);
        adam_step(&mut params, &grads, &mut state, lr, wd).unwrap();
        let expected = 2.0 - lr * wd * 2.0;
        assert_eq!(params.get("w").unwrap().data(), &[expected]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut params = single("w", vec![1.0, 2.0]);
        let grads = single("w", vec![1.0]);
        let mut state = AdamState::new();
        let err = adam_step(&mut params, &grads, &mut state, 0.01, 0.0).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }
}
