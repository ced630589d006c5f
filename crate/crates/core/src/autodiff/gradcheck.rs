use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheck<T> {
    /// `max |analytic - numeric| / max(1, |analytic|)` over checked coordinates.
    pub max_rel_error: T,
    /// Coordinates whose ±step probe crosses a ReLU kink.
    pub excluded: Vec<usize>,
    pub checked: usize,
}

fn relu_pattern<T: Scalar>(g: &Graph<T>) -> Vec<bool> {
    g.relu_inputs()
        .flat_map(|t| t.data().iter().map(|&v| v > T::zero()))
        .collect()
}

/// Checks `d f / d x` against central differences with the given step.
///
/// `build` receives a fresh graph and the leaf holding `x` and returns the
/// scalar output node. A coordinate is excluded when moving it by `±step`
/// changes the activation pattern of any ReLU, since the function is not
/// differentiable across that interval.
pub fn grad_check<T, F>(build: F, x: &Tensor<T>, step: T) -> Result<GradCheck<T>>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, NodeId) -> Result<NodeId>,
{
    if !(step > T::zero()) {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let eval = |point: Tensor<T>| -> Result<(Graph<T>, NodeId, NodeId)> {
        let mut g = Graph::new();
        let leaf = g.input(point);
        let out = build(&mut g, leaf)?;
        Ok((g, leaf, out))
    };

    let (g0, leaf, out) = eval(x.clone())?;
    let analytic = g0
        .backward(out)?
        .take(leaf)
        .expect("input leaf always receives a gradient");
    let base_pattern = relu_pattern(&g0);

    let two = T::one() + T::one();
    let mut max_rel_error = T::zero();
    let mut excluded = Vec::new();
    let mut checked = 0;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= step;
        let (gp, _, op) = eval(plus)?;
        let (gm, _, om) = eval(minus)?;
        if relu_pattern(&gp) != base_pattern || relu_pattern(&gm) != base_pattern {
            excluded.push(i);
            continue;
        }
        let fp = gp.value(op).to_scalar()?;
        let fm = gm.value(om).to_scalar()?;
        let numeric = (fp - fm) / (two * step);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(T::one());
        max_rel_error = max_rel_error.max(rel);
        checked += 1;
    }
    Ok(GradCheck {
        max_rel_error,
        excluded,
        checked,
    })
}
