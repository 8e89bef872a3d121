//! Central-finite-difference verification of every analytic gradient in a
//! stack. This is the oracle the hand-written backward passes are held to.

use crate::error::Result;
use crate::layers::{GateVector, LayerStack};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub worst_rel_err: f64,
    pub worst_location: String,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.worst_rel_err <= self.tolerance
    }
}

/// |a − b| / max(1, |a|, |b|)
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Checks every parameter and every input-window coordinate of `stack`
/// against central differences of the loss with step `step`.
pub fn grad_check_stack(
    stack: &mut LayerStack,
    window: &[Vec<f64>],
    gate: Option<&GateVector>,
    target: usize,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let (_, _, analytic) = stack.loss_and_grads(window, gate, target)?;
    let mut report = GradCheckReport {
        worst_rel_err: 0.0,
        worst_location: String::new(),
        checked: 0,
        tolerance,
    };

    for layer_idx in 0..stack.layers().len() {
        let mut params = stack.layers()[layer_idx].flat_params();
        for p in 0..params.len() {
            let orig = params[p];
            params[p] = orig + step;
            stack.layers_mut()[layer_idx].set_flat_params(&params);
            let plus = stack.forward(window, gate, target)?.0;
            params[p] = orig - step;
            stack.layers_mut()[layer_idx].set_flat_params(&params);
            let minus = stack.forward(window, gate, target)?.0;
            params[p] = orig;
            stack.layers_mut()[layer_idx].set_flat_params(&params);

            let fd = (plus - minus) / (2.0 * step);
            let err = rel_err(analytic.per_layer[layer_idx][p], fd);
            report.checked += 1;
            if err > report.worst_rel_err {
                report.worst_rel_err = err;
                report.worst_location = format!("layer {layer_idx} param {p}");
            }
        }
    }

    let mut probe: Vec<Vec<f64>> = window.to_vec();
    for (j, frame) in window.iter().enumerate() {
        for (c, &orig) in frame.iter().enumerate() {
            probe[j][c] = orig + step;
            let plus = stack.forward(&probe, gate, target)?.0;
            probe[j][c] = orig - step;
            let minus = stack.forward(&probe, gate, target)?.0;
            probe[j][c] = orig;

            let fd = (plus - minus) / (2.0 * step);
            let err = rel_err(analytic.input_window[j][c], fd);
            report.checked += 1;
            if err > report.worst_rel_err {
                report.worst_rel_err = err;
                report.worst_location = format!("input frame {j} coord {c}");
            }
        }
    }

    Ok(report)
}

/// Checks the gradient with respect to the injected gate along
/// simplex-tangent directions e_i − e_j, which keep the gate on the simplex.
pub fn grad_check_gate(
    stack: &LayerStack,
    window: &[Vec<f64>],
    gate: &GateVector,
    target: usize,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let (_, _, analytic) = stack.loss_and_grads(window, Some(gate), target)?;
    let mut report = GradCheckReport {
        worst_rel_err: 0.0,
        worst_location: String::new(),
        checked: 0,
        tolerance,
    };
    let n = gate.len();
    for i in 0..n {
        for j in (i + 1)..n {
            let mut wp = gate.weights().to_vec();
            wp[i] += step;
            wp[j] -= step;
            let gp = GateVector::new(wp, 1e-3)?;
            let mut wm = gate.weights().to_vec();
            wm[i] -= step;
            wm[j] += step;
            let gm = GateVector::new(wm, 1e-3)?;
            let plus = stack.forward(window, Some(&gp), target)?.0;
            let minus = stack.forward(window, Some(&gm), target)?.0;
            let fd = (plus - minus) / (2.0 * step);
            let analytic_dir = analytic.gate[i] - analytic.gate[j];
            let err = rel_err(analytic_dir, fd);
            report.checked += 1;
            if err > report.worst_rel_err {
                report.worst_rel_err = err;
                report.worst_location = format!("gate direction ({i},{j})");
            }
        }
    }
    Ok(report)
}
