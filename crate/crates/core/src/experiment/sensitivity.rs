use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::datagen::RpcaInstance;
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::learner::{activate, finetune, RawParams, ThresholdScale, TrainConfig};
use crate::solver::{solve, HyperParams, SolverConfig};

/// Instances must cut their error by more than this fraction to be kept.
const REDUCTION_FILTER: f64 = 0.9;

pub(crate) const PARAM_NAMES: [&str; 4] = ["zeta0", "zeta1", "rho", "eta"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SensitivityRow {
    pub warm: HyperParams,
    pub tuned: HyperParams,
    /// `100 (tuned - warm) / warm` in the order of [`PARAM_NAMES`].
    pub percent_change: [f64; 4],
    /// Recovery error when ground truth exists, otherwise ℒ_SSL.
    pub before: f64,
    pub after: f64,
    pub uses_ground_truth: bool,
    pub kept: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SensitivityReport {
    /// `None` for instances whose fine-tuning failed.
    pub rows: Vec<Option<SensitivityRow>>,
    /// `[Q1, Q2, Q3]` per parameter over the kept rows; `None` if none was kept.
    pub quartiles: Option<[[f64; 3]; 4]>,
}

impl SensitivityReport {
    pub fn kept(&self) -> impl Iterator<Item = &SensitivityRow> {
        self.rows.iter().flatten().filter(|r| r.kept)
    }

    /// Median absolute percent change of parameter `k` over the kept rows.
    pub fn median_abs_change(&self, k: usize) -> Option<f64> {
        let v: Vec<f64> = self.kept().map(|r| r.percent_change[k].abs()).collect();
        quartiles(&v).map(|q| q[1])
    }
}

/// Quartiles with linear interpolation between order statistics.
pub fn quartiles(values: &[f64]) -> Option<[f64; 3]> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |q: f64| {
        let pos = q * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
    };
    Some([at(0.25), at(0.5), at(0.75)])
}

fn percent(tuned: f64, warm: f64) -> f64 {
    100.0 * (tuned - warm) / warm
}

fn measure(inst: &RpcaInstance, cfg: &SolverConfig, warm: RawParams, tcfg: &TrainConfig) -> Result<SensitivityRow> {
    let scale = ThresholdScale::of(&inst.y)?;
    let warm_h = activate(&warm, &scale);
    let before_trace = solve(&inst.y, cfg, &warm_h, inst.xstar.as_ref())?;
    let tuned = finetune(inst, cfg, tcfg, warm)?;
    let uses_ground_truth = inst.xstar.is_some();
    let pick = |r: &crate::solver::IterationRecord| {
        if uses_ground_truth {
            r.rel_error.expect("ground truth given")
        } else {
            r.loss_ssl
        }
    };
    let before = pick(before_trace.final_record());
    let after = pick(tuned.trace.final_record());
    let reduction = if before > 0.0 { 1.0 - after / before } else { 0.0 };
    let t = tuned.hyper;
    Ok(SensitivityRow {
        warm: warm_h,
        tuned: t,
        percent_change: [
            percent(t.zeta0, warm_h.zeta0),
            percent(t.zeta1, warm_h.zeta1),
            percent(t.rho, warm_h.rho),
            percent(t.eta, warm_h.eta),
        ],
        before,
        after,
        uses_ground_truth,
        kept: reduction > REDUCTION_FILTER,
    })
}

/// Fine-tunes every instance from `warm` and tabulates how far each
/// hyperparameter moved on the instances where fine-tuning paid off.
pub fn sensitivity_report(
    instances: &[RpcaInstance],
    cfg: &SolverConfig,
    warm: RawParams,
    tcfg: &TrainConfig,
) -> Result<SensitivityReport> {
    if instances.len() < 4 {
        return Err(Error::InvalidParameter(format!(
            "sensitivity needs at least 4 instances, got {}",
            instances.len()
        )));
    }
    tcfg.validate()?;
    warm.validate()?;
    let rows: Vec<Option<SensitivityRow>> = instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| match measure(inst, cfg, warm, tcfg) {
            Ok(row) => Some(row),
            Err(e) => {
                warn!("instance {i}: fine-tuning failed: {e}");
                None
            }
        })
        .collect();
    let mut report = SensitivityReport {
        rows,
        quartiles: None,
    };
    let per_param: Vec<Vec<f64>> = (0..4)
        .map(|k| report.kept().map(|r| r.percent_change[k]).collect())
        .collect();
    if !per_param[0].is_empty() {
        let q: Vec<[f64; 3]> = per_param.iter().map(|v| quartiles(v).expect("nonempty")).collect();
        report.quartiles = Some([q[0], q[1], q[2], q[3]]);
    }
    Ok(report)
}

/// Writes `quartile, zeta0, zeta1, rho, eta` rows (percent). An empty filter
/// set is written as a single `empty` row.
pub fn write_sensitivity_csv(path: impl AsRef<Path>, report: &SensitivityReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["quartile"];
    header.extend(PARAM_NAMES);
    w.write_record(&header)?;
    match &report.quartiles {
        Some(q) => {
            for (j, name) in ["Q1", "Q2", "Q3"].iter().enumerate() {
                let mut row = vec![name.to_string()];
                row.extend((0..4).map(|k| fmt_f64(q[k][j])));
                w.write_record(&row)?;
            }
        }
        None => w.write_record(["empty", "", "", "", ""])?,
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::InstanceFamily;
    use crate::tensor::RankTriple;

    #[test]
    fn quartile_interpolation() {
        assert_eq!(quartiles(&[1.0, 2.0, 3.0, 4.0, 5.0]), Some([2.0, 3.0, 4.0]));
        assert_eq!(quartiles(&[4.0, 1.0, 3.0, 2.0]), Some([1.75, 2.5, 3.25]));
        assert_eq!(quartiles(&[]), None);
        assert_eq!(percent(1.05, 1.0).round(), 5.0);
        assert!((percent(1.05, 1.0) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn identical_optimal_instances_give_zero_quartiles() {
        // Noiseless, exact initialization, no learning: nothing moves.
        let inst = InstanceFamily::new(8, 2, 0.0, 2.0).sample(1).unwrap();
        let instances = vec![inst; 4];
        let cfg = SolverConfig::new(RankTriple::uniform(2), 10);
        let tcfg = TrainConfig {
            steps: 2,
            learning_rate: 0.0,
            ..TrainConfig::finetune()
        };
        let warm = RawParams::new(3.0, 0.0, 1.0, -1.0).unwrap();
        let report = sensitivity_report(&instances, &cfg, warm, &tcfg).unwrap();
        assert!(report.rows.iter().all(|r| r.as_ref().unwrap().percent_change == [0.0; 4]));
        // Errors sit at rounding level before and after, so no instance passes
        // the reduction filter; without the filter every quartile would be 0.
        assert!(report.quartiles.is_none());
        assert_eq!(quartiles(&[0.0; 4]), Some([0.0; 3]));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_sensitivity_csv(&path, &report).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text, "quartile,zeta0,zeta1,rho,eta\nempty,,,,\n");
    }

    #[test]
    fn needs_four_instances() {
        let inst = InstanceFamily::new(6, 2, 0.0, 2.0).sample(1).unwrap();
        let cfg = SolverConfig::new(RankTriple::uniform(2), 2);
        let err = sensitivity_report(&[inst], &cfg, RawParams::default(), &TrainConfig::finetune());
        assert!(matches!(err, Err(Error::InvalidParameter(_))));
    }
}
