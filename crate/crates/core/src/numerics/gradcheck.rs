//! Finite-difference gradient checking.

use crate::{CoreError, Result};

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;

/// Outcome of one finite-difference check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub parameter_name: String,
    pub max_relative_error: f64,
    pub passed: bool,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: max_rel_err={:.3e} {}",
            self.parameter_name,
            self.max_relative_error,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

/// Checks the analytic gradient of a scalar-valued computation against
/// central differences.
///
/// `build` constructs the computation for a given setting of the checked
/// parameter and returns the tape, the parameter's leaf node, and the output
/// node. The output must be a single value; the gradient is compared
/// element-wise with relative error |a-n| / max(|a|, |n|, 1e-8).
pub fn finite_difference_gradcheck<F>(
    name: &str,
    params: &Tensor,
    build: F,
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> (Graph, NodeId, NodeId),
{
    if epsilon <= 0.0 {
        return Err(CoreError::InvalidArgument(format!(
            "gradcheck epsilon must be positive, got {epsilon}"
        )));
    }
    if !params.is_finite() {
        return Err(CoreError::InvalidArgument(
            "gradcheck parameters must be finite".to_string(),
        ));
    }
    let base = params.to_f64();

    let (mut graph, param_node, loss_node) = build(&base);
    let loss_shape = graph.shape(loss_node).to_vec();
    if graph.value(loss_node).len() != 1 {
        return Err(CoreError::NonScalarLoss(loss_shape));
    }
    graph.backward(loss_node);
    let analytic = graph.grad(param_node).to_vec();
    if analytic.len() != base.len() {
        return Err(CoreError::InvalidArgument(format!(
            "gradcheck: parameter node has {} elements, tensor has {}",
            analytic.len(),
            base.len()
        )));
    }

    let mut max_rel = 0.0f64;
    let mut perturbed = base.clone();
    for i in 0..base.len() {
        perturbed[i] = base[i] + epsilon;
        let (gp, _, lp) = build(&perturbed);
        let fp = gp.scalar_value(lp);
        perturbed[i] = base[i] - epsilon;
        let (gm, _, lm) = build(&perturbed);
        let fm = gm.scalar_value(lm);
        perturbed[i] = base[i];
        let numeric = (fp - fm) / (2.0 * epsilon);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }

    Ok(GradCheckReport {
        parameter_name: name.to_string(),
        max_relative_error: max_rel,
        passed: max_rel <= tolerance,
    })
}
