//! File formats: `TNS3` tensors and masks, binary PGM frames, CSV number
//! formatting and the JSON hyperparameter document.

mod params;
mod pgm;
mod tns3;

pub use params::{parse_params, read_params, write_params, ParamsDocument};
pub use pgm::{decode_pgm, frames_to_tensor, read_frame_dir, PgmImage};
pub use tns3::{decode_tns3, encode_tns3, read_mask, read_tensor, write_tensor, TNS3_MAGIC, TNS3_VERSION};

use std::path::Path;

use crate::error::{Error, Result};
use crate::solver::IterationRecord;
use crate::tensor::Tensor3;

/// Checks that every entry is exactly 0 or 1.
pub fn validate_mask(mask: &Tensor3) -> Result<()> {
    match mask
        .data()
        .iter()
        .enumerate()
        .find(|(_, &v)| v != 0.0 && v != 1.0)
    {
        Some((index, &value)) => Err(Error::MaskNotBinary { index, value }),
        None => Ok(()),
    }
}

/// Writes a solve trace as `t, loss_ssl, rel_error, zeta`; `rel_error` is
/// empty without ground truth.
pub fn write_trace(path: impl AsRef<Path>, records: &[IterationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "loss_ssl", "rel_error", "zeta"])?;
    for r in records {
        w.write_record([
            r.t.to_string(),
            fmt_f64(r.loss_ssl),
            r.rel_error.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.zeta),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}
