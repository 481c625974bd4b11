//! Central finite-difference verification of the analytic gradients.

use super::net::{backward, loss_only};
use super::params::ModelParams;
use super::{MaskedBatch, ModelConfig, ModelError};

/// Gradients below this magnitude are compared on an absolute scale.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Tensor name and flat element index of the worst disagreement.
    pub worst: (String, usize),
    pub checked_params: usize,
}

/// Compare the analytic gradient of the total loss against central finite
/// differences for every parameter element. Relative error is
/// `|ga - gn| / max(|ga|, |gn|, 1e-6)`.
pub fn grad_check(
    params: &ModelParams,
    batch: &MaskedBatch,
    config: &ModelConfig,
    epsilon: f64,
) -> Result<GradCheckReport, ModelError> {
    let (_, grads) = backward(batch, params, config)?;
    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    grads.for_each_tensor(&mut |name, _, data| analytic.push((name.to_string(), data.to_vec())));

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (String::new(), 0),
        checked_params: 0,
    };

    // Tensor count and per-tensor lengths are fixed, so a (tensor, element)
    // index addresses the same parameter in `work` on every pass.
    let n_tensors = analytic.len();
    for tensor_idx in 0..n_tensors {
        let (name, ga) = &analytic[tensor_idx];
        for elem in 0..ga.len() {
            let mut probe = |delta: f64| -> Result<f64, ModelError> {
                let mut idx = 0;
                work.for_each_tensor_mut(&mut |_, _, data| {
                    if idx == tensor_idx {
                        data[elem] += delta;
                    }
                    idx += 1;
                });
                let loss = loss_only(batch, &work, config)?.total;
                let mut idx = 0;
                work.for_each_tensor_mut(&mut |_, _, data| {
                    if idx == tensor_idx {
                        data[elem] -= delta;
                    }
                    idx += 1;
                });
                Ok(loss)
            };
            let plus = probe(epsilon)?;
            let minus = probe(-epsilon)?;
            let gn = (plus - minus) / (2.0 * epsilon);
            let rel = (ga[elem] - gn).abs() / ga[elem].abs().max(gn.abs()).max(REL_FLOOR);
            report.checked_params += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (name.clone(), elem);
            }
        }
    }
    Ok(report)
}
