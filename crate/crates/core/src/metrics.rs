//! Recovery metrics.

use crate::error::{Error, Result};
use crate::learner::loss_sm;
use crate::solver::TuckerFactors;
use crate::tensor::Tensor3;

/// `‖X★ − X‖_F / ‖X★‖_F`.
pub fn relative_error(xstar: &Tensor3, f: &TuckerFactors) -> Result<f64> {
    let den = xstar.fro_norm();
    if den == 0.0 {
        return Err(Error::DegenerateInput("ground truth is all zero".into()));
    }
    Ok(xstar.sub(&f.reconstruct()?)?.fro_norm() / den)
}

/// Square root of the background-masked loss.
pub fn masked_error(y: &Tensor3, mask: &Tensor3, f: &TuckerFactors) -> Result<f64> {
    Ok(loss_sm(y, mask, f)?.sqrt())
}
