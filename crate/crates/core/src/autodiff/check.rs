//! Finite-difference gradient verification and the one-step hypergradient.

use super::graph::{BoundParams, Graph, NodeId};
use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Builds a scalar loss from bound parameters.
pub trait LossBuilder: Fn(&mut Graph, &BoundParams) -> Result<NodeId> {}
impl<F: Fn(&mut Graph, &BoundParams) -> Result<NodeId>> LossBuilder for F {}

/// Builds a scalar inner loss from bound `(theta, omega)`.
pub trait InnerLossBuilder: Fn(&mut Graph, &BoundParams, &BoundParams) -> Result<NodeId> {}
impl<F: Fn(&mut Graph, &BoundParams, &BoundParams) -> Result<NodeId>> InnerLossBuilder for F {}

/// Outcome of comparing analytic gradients against central differences.
#[derive(Clone, Debug)]
pub struct FiniteDiffReport {
    pub max_rel_error: f64,
    /// Parameter name and flat coordinate of the worst disagreement.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
}

fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn require_scalar(g: &Graph, id: NodeId, what: &'static str) -> Result<()> {
    if g.value(id).is_scalar() {
        Ok(())
    } else {
        Err(Error::NonScalar { op: what, shape: g.shape(id).to_vec() })
    }
}

/// Evaluate a loss builder at `params` and return the scalar value.
pub fn eval_loss(loss: &impl LossBuilder, params: &ParamSet) -> Result<f64> {
    let mut g = Graph::new();
    let bound = g.bind(params);
    let out = loss(&mut g, &bound)?;
    require_scalar(&g, out, "loss")?;
    g.value(out).scalar_value()
}

/// Compare [`Graph::backward`] gradients against central finite differences,
/// coordinate by coordinate. Relative error uses denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check(
    loss: &impl LossBuilder,
    params: &ParamSet,
    h: f64,
) -> Result<FiniteDiffReport> {
    if !(h > 0.0 && h <= 1e-2) {
        return Err(Error::InvalidArgument(format!("finite_diff_check: h={h} not in (0, 1e-2]")));
    }

    let mut g = Graph::new();
    let bound = g.bind(params);
    let out = loss(&mut g, &bound)?;
    require_scalar(&g, out, "loss")?;
    let analytic = g.backward_params(out, &bound)?;

    let mut report =
        FiniteDiffReport { max_rel_error: 0.0, worst: None, coords_checked: 0 };
    for (name, tensor) in params.iter() {
        for i in 0..tensor.len() {
            let perturb = |delta: f64| -> Result<f64> {
                let mut shifted = params.clone();
                shifted.get_mut(name).expect("known param").data_mut()[i] += delta;
                eval_loss(loss, &shifted)
            };
            let numeric = (perturb(h)? - perturb(-h)?) / (2.0 * h);
            let a = analytic.require(name)?.data()[i];
            let err = rel_error(a, numeric);
            report.coords_checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.to_string(), i));
            }
        }
    }
    Ok(report)
}

fn pseudo_updated(
    g: &mut Graph,
    theta: &BoundParams,
    grads: &[NodeId],
    step_size: f64,
) -> Result<BoundParams> {
    let mut entries = Vec::with_capacity(theta.len());
    for ((name, param), grad) in theta.iter().zip(grads) {
        let scaled = g.scalar_mul(*grad, step_size)?;
        let updated = g.sub(param, scaled)?;
        entries.push((name.to_string(), updated));
    }
    Ok(BoundParams::from_pairs(entries))
}

/// Gradient of `outer(theta - eta * d inner/d theta)` with respect to
/// `omega`, differentiated through the inner gradient step. Neither input
/// set is mutated.
pub fn hypergradient(
    inner: &impl InnerLossBuilder,
    outer: &impl LossBuilder,
    theta: &ParamSet,
    omega: &ParamSet,
    inner_step_size: f64,
) -> Result<ParamSet> {
    if inner_step_size <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "hypergradient: inner_step_size={inner_step_size} must be positive"
        )));
    }
    let mut g = Graph::new();
    let bound_theta = g.bind(theta);
    let bound_omega = g.bind(omega);
    let inner_loss = inner(&mut g, &bound_theta, &bound_omega)?;
    require_scalar(&g, inner_loss, "inner loss")?;
    let grads = g.backward(inner_loss, &bound_theta.ids())?;
    let theta_hat = pseudo_updated(&mut g, &bound_theta, &grads, inner_step_size)?;
    let outer_loss = outer(&mut g, &theta_hat)?;
    require_scalar(&g, outer_loss, "outer loss")?;
    g.backward_params(outer_loss, &bound_omega)
}

/// Finite-difference reference for [`hypergradient`]: perturb each `omega`
/// coordinate, rerun the inner step and outer loss, central-difference the
/// results. Slow; for verification only.
pub fn hypergradient_fd(
    inner: &impl InnerLossBuilder,
    outer: &impl LossBuilder,
    theta: &ParamSet,
    omega: &ParamSet,
    inner_step_size: f64,
    h: f64,
) -> Result<ParamSet> {
    let outer_at = |omega_shifted: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let bound_theta = g.bind(theta);
        let bound_omega = g.bind(omega_shifted);
        let inner_loss = inner(&mut g, &bound_theta, &bound_omega)?;
        require_scalar(&g, inner_loss, "inner loss")?;
        let grads = g.backward(inner_loss, &bound_theta.ids())?;
        let theta_hat = pseudo_updated(&mut g, &bound_theta, &grads, inner_step_size)?;
        let outer_loss = outer(&mut g, &theta_hat)?;
        require_scalar(&g, outer_loss, "outer loss")?;
        g.value(outer_loss).scalar_value()
    };

    let mut result = ParamSet::new();
    for (name, tensor) in omega.iter() {
        let mut grad = Tensor::zeros(tensor.shape());
        for i in 0..tensor.len() {
            let mut shifted = omega.clone();
            shifted.get_mut(name).expect("known param").data_mut()[i] += h;
            let plus = outer_at(&shifted)?;
            shifted.get_mut(name).expect("known param").data_mut()[i] -= 2.0 * h;
            let minus = outer_at(&shifted)?;
            grad.data_mut()[i] = (plus - minus) / (2.0 * h);
        }
        result.insert(name, grad);
    }
    Ok(result)
}
