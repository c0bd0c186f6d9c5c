//! JSON hyperparameter document:
//! `{zeta0, zeta1, rho, eta, raw: {z0, z1, p, e}, scale: {s0, s1}}`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{activate, invert_activation, RawParams, ThresholdScale};
use crate::solver::HyperParams;

/// Relative tolerance when checking `activate(raw, scale)` against the stored
/// hyperparameters.
const CONSISTENCY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsDocument {
    pub zeta0: f64,
    pub zeta1: f64,
    pub rho: f64,
    pub eta: f64,
    pub raw: RawParams,
    pub scale: ThresholdScale,
}

impl ParamsDocument {
    pub fn from_raw(raw: RawParams, scale: ThresholdScale) -> Result<Self> {
        raw.validate()?;
        let h = activate(&raw, &scale);
        Ok(Self {
            zeta0: h.zeta0,
            zeta1: h.zeta1,
            rho: h.rho,
            eta: h.eta,
            raw,
            scale,
        })
    }

    pub fn from_hyper(h: &HyperParams, scale: ThresholdScale) -> Result<Self> {
        let raw = invert_activation(h, &scale)?;
        Ok(Self {
            zeta0: h.zeta0,
            zeta1: h.zeta1,
            rho: h.rho,
            eta: h.eta,
            raw,
            scale,
        })
    }

    pub fn hyper(&self) -> HyperParams {
        HyperParams {
            zeta0: self.zeta0,
            zeta1: self.zeta1,
            rho: self.rho,
            eta: self.eta,
        }
    }

    /// Checks field ranges and that the raw and activated values agree.
    pub fn validate(&self) -> Result<()> {
        self.hyper()
            .validate()
            .map_err(|e| Error::Format(e.to_string()))?;
        self.raw.validate().map_err(|e| Error::Format(e.to_string()))?;
        ThresholdScale::new(self.scale.s0, self.scale.s1).map_err(|e| Error::Format(e.to_string()))?;
        let back = activate(&self.raw, &self.scale);
        let pairs = [
            ("zeta0", back.zeta0, self.zeta0),
            ("zeta1", back.zeta1, self.zeta1),
            ("rho", back.rho, self.rho),
            ("eta", back.eta, self.eta),
        ];
        for (name, a, b) in pairs {
            if (a - b).abs() > CONSISTENCY_TOL * b.abs().max(f64::MIN_POSITIVE) {
                return Err(Error::Format(format!(
                    "{name} = {b} disagrees with its raw parameter (gives {a})"
                )));
            }
        }
        Ok(())
    }
}

pub fn parse_params(text: &str) -> Result<ParamsDocument> {
    let doc: ParamsDocument = serde_json::from_str(text)?;
    doc.validate()?;
    Ok(doc)
}

pub fn read_params(path: impl AsRef<Path>) -> Result<ParamsDocument> {
    parse_params(&fs::read_to_string(path)?)
}

pub fn write_params(path: impl AsRef<Path>, doc: &ParamsDocument) -> Result<()> {
    let mut text = serde_json::to_string_pretty(doc)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc() -> ParamsDocument {
        ParamsDocument::from_raw(RawParams::default(), ThresholdScale::new(2.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        write_params(&path, &doc()).unwrap();
        assert_eq!(read_params(&path).unwrap(), doc());
        let text = std::fs::read_to_string(&path).unwrap();
        for key in ["zeta0", "zeta1", "rho", "eta", "raw", "z0", "z1", "\"p\"", "\"e\"", "s0", "s1"] {
            assert!(text.contains(key), "{key}");
        }
    }

    #[test]
    fn from_hyper_inverts() {
        let h = HyperParams::new(0.7, 0.2, 0.9, 0.4).unwrap();
        let d = ParamsDocument::from_hyper(&h, ThresholdScale::new(1.5, 0.75).unwrap()).unwrap();
        d.validate().unwrap();
        assert_eq!(d.hyper(), h);
    }

    #[test]
    fn inconsistent_or_malformed_documents() {
        let mut d = doc();
        d.rho = 0.5;
        let text = serde_json::to_string(&d).unwrap();
        assert!(matches!(parse_params(&text), Err(Error::Format(_))));
        assert!(matches!(parse_params("{"), Err(Error::Json(_))));
        assert!(parse_params("{\"zeta0\": 1}").is_err());
        let mut d = doc();
        d.scale.s0 = -1.0;
        assert!(parse_params(&serde_json::to_string(&d).unwrap()).is_err());
    }
}
