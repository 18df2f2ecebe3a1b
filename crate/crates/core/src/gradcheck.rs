//! Central finite-difference gradient checking.
//!
//! The objective is evaluated through its forward path only; a run is
//! compared against whatever analytic gradient the caller supplies.

use crate::error::Result;
use crate::tensor::Tensor;

/// Scalar objective plus the kink signature of the evaluation that produced it.
pub struct Probe {
    pub loss: f64,
    pub signature: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct CoordCheck {
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central difference `(f(x+h) - f(x-h)) / 2h` along one coordinate.
///
/// Returns `None` when the two probes straddle a kink of the objective
/// (their signatures differ from the unperturbed one), in which case the
/// difference quotient says nothing about the derivative at `x`.
pub fn central_difference<F>(
    objective: &mut F,
    params: &mut [Tensor],
    tensor: usize,
    index: usize,
    h: f64,
    base_signature: u64,
) -> Result<Option<f64>>
where
    F: FnMut(&[Tensor]) -> Result<Probe>,
{
    let orig = params[tensor].data()[index];
    params[tensor].data_mut()[index] = orig + h;
    let plus = objective(params);
    params[tensor].data_mut()[index] = orig - h;
    let minus = objective(params);
    params[tensor].data_mut()[index] = orig;
    let (plus, minus) = (plus?, minus?);
    if plus.signature != base_signature || minus.signature != base_signature {
        return Ok(None);
    }
    Ok(Some((plus.loss - minus.loss) / (2.0 * h)))
}
