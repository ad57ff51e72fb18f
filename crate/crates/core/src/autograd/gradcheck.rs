//! Central finite-difference checking of tape gradients.

use super::{NodeId, Tape, Tensor};
use crate::error::Result;

/// Denominator floor for the relative error, so that gradients which are
/// zero up to rounding do not produce spurious failures.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(input, element)` position of the worst disagreement.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences with the given `step`, for every element of every
/// input.
pub fn check_gradients<F>(inputs: &[Tensor], step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &ids)?;
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &ids)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport { max_rel_err: 0.0, worst: (0, 0), analytic: 0.0, numeric: 0.0, checked: 0 };
    let mut probe = inputs.to_vec();
    for (t, id) in ids.iter().enumerate() {
        let analytic = grads.wrt(*id).data().to_vec();
        for e in 0..probe[t].len() {
            let orig = probe[t].data()[e];
            probe[t].data_mut()[e] = orig + step;
            let up = eval(&probe)?;
            probe[t].data_mut()[e] = orig - step;
            let down = eval(&probe)?;
            probe[t].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(analytic[e], numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.checked == 1 {
                report = GradCheckReport { max_rel_err: err, worst: (t, e), analytic: analytic[e], numeric, checked: report.checked };
            }
        }
    }
    Ok(report)
}
