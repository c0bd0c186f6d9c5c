//! Black-box search over `(zeta0, zeta1, rho, eta)` minimizing the final ℒ_SSL
//! of a single instance.
//!
//! Phase 1 spends 60% of the budget on a shifted Halton sequence (log scale for
//! the thresholds and the step size, linear for `rho`). Phase 2 perturbs the
//! incumbent with Gaussian noise in the same unit-cube coordinates and shrinks
//! the noise by 0.7 after every improvement.

use std::path::Path;

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::RpcaInstance;
use crate::error::{Error, ErrorClass, Result};
use crate::io::fmt_f64;
use crate::solver::{solve, HyperParams, SolverConfig};

const PHASE1_SHARE: f64 = 0.6;
const INITIAL_SPREAD: f64 = 0.15;
const SPREAD_SHRINK: f64 = 0.7;
const HALTON_BASES: [u64; 4] = [2, 3, 5, 7];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    /// Bounds for `zeta0` as multiples of `ℓ∞(Y)`.
    pub zeta0: (f64, f64),
    /// Bounds for `zeta1` as multiples of `ℓ∞(Y)`.
    pub zeta1: (f64, f64),
    pub rho: (f64, f64),
    pub eta: (f64, f64),
    pub budget: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            zeta0: (1e-4, 2.0),
            zeta1: (1e-4, 2.0),
            rho: (0.5, 0.999),
            eta: (0.05, 1.5),
            budget: 500,
        }
    }
}

impl SearchSpace {
    pub fn with_budget(budget: usize) -> Self {
        Self {
            budget,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bounds = [
            ("zeta0", self.zeta0),
            ("zeta1", self.zeta1),
            ("rho", self.rho),
            ("eta", self.eta),
        ];
        for (name, (lo, hi)) in bounds {
            if !(lo > 0.0 && lo < hi && hi.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "search bounds for {name} must satisfy 0 < lower < upper, got ({lo}, {hi})"
                )));
            }
        }
        if self.rho.1 >= 1.0 {
            return Err(Error::InvalidParameter("rho must stay below 1".into()));
        }
        if self.budget == 0 {
            return Err(Error::InvalidParameter("budget must be at least 1".into()));
        }
        Ok(())
    }

    /// Maps a point of the unit cube to hyperparameters for data scale `s0`.
    pub fn point(&self, u: [f64; 4], s0: f64) -> HyperParams {
        let log = |(lo, hi): (f64, f64), t: f64| (lo.ln() + t * (hi.ln() - lo.ln())).exp();
        HyperParams {
            zeta0: s0 * log(self.zeta0, u[0]),
            zeta1: s0 * log(self.zeta1, u[1]),
            rho: self.rho.0 + u[2] * (self.rho.1 - self.rho.0),
            eta: log(self.eta, u[3]),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Explore,
    Refine,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TuneRecord {
    pub index: usize,
    pub phase: Phase,
    pub params: HyperParams,
    /// Final-iterate ℒ_SSL, `+inf` for diverged solves.
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct TuneOutcome {
    pub best: HyperParams,
    pub best_loss: f64,
    pub log: Vec<TuneRecord>,
}

impl TuneOutcome {
    /// Best loss after each evaluation.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.log
            .iter()
            .map(|r| {
                best = best.min(r.loss);
                best
            })
            .collect()
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    out
}

/// Point `i` of the 4-D Halton sequence with a Cranley–Patterson shift.
pub fn halton(i: usize, shift: [f64; 4]) -> [f64; 4] {
    std::array::from_fn(|d| {
        let v = radical_inverse(i as u64 + 1, HALTON_BASES[d]) + shift[d];
        v - v.floor()
    })
}

fn score(inst: &RpcaInstance, cfg: &SolverConfig, h: &HyperParams) -> Result<f64> {
    match solve(&inst.y, cfg, h, None) {
        Ok(trace) => Ok(trace.final_record().loss_ssl),
        Err(e) if e.error.class() == ErrorClass::Numerical => {
            debug!("evaluation diverged: {}", e.error);
            Ok(f64::INFINITY)
        }
        Err(e) => Err(e.into()),
    }
}

/// Two-phase search; returns the best point and the full evaluation log.
pub fn tune(
    inst: &RpcaInstance,
    cfg: &SolverConfig,
    space: &SearchSpace,
    seed: u64,
) -> Result<TuneOutcome> {
    space.validate()?;
    cfg.rank.validate(inst.y.dims())?;
    let s0 = inst.y.linf_norm();
    if s0 == 0.0 {
        return Err(Error::DegenerateInput("observation is all zero".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: [f64; 4] = std::array::from_fn(|_| rng.random::<f64>());
    let explore = ((PHASE1_SHARE * space.budget as f64).round() as usize).clamp(1, space.budget);

    let points: Vec<[f64; 4]> = (0..explore).map(|i| halton(i, shift)).collect();
    let losses = points
        .par_iter()
        .map(|u| score(inst, cfg, &space.point(*u, s0)))
        .collect::<Result<Vec<f64>>>()?;
    let mut log: Vec<TuneRecord> = points
        .iter()
        .zip(&losses)
        .enumerate()
        .map(|(index, (u, &loss))| TuneRecord {
            index,
            phase: Phase::Explore,
            params: space.point(*u, s0),
            loss,
        })
        .collect();

    let mut best_i = 0;
    for (i, &l) in losses.iter().enumerate() {
        if l < losses[best_i] {
            best_i = i;
        }
    }
    let mut best_u = points[best_i];
    let mut best_loss = losses[best_i];
    let mut spread = INITIAL_SPREAD;
    for index in explore..space.budget {
        let u: [f64; 4] = std::array::from_fn(|d| {
            let z: f64 = rng.sample(StandardNormal);
            (best_u[d] + spread * z).clamp(0.0, 1.0)
        });
        let params = space.point(u, s0);
        let loss = score(inst, cfg, &params)?;
        if loss < best_loss {
            best_loss = loss;
            best_u = u;
            spread *= SPREAD_SHRINK;
        }
        log.push(TuneRecord {
            index,
            phase: Phase::Refine,
            params,
            loss,
        });
    }

    if !best_loss.is_finite() {
        return Err(Error::AllDiverged);
    }
    Ok(TuneOutcome {
        best: space.point(best_u, s0),
        best_loss,
        log,
    })
}

/// Writes `index, phase, zeta0, zeta1, rho, eta, loss` rows.
pub fn write_tune_log(path: impl AsRef<Path>, log: &[TuneRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "phase", "zeta0", "zeta1", "rho", "eta", "loss"])?;
    for r in log {
        let phase = match r.phase {
            Phase::Explore => "explore",
            Phase::Refine => "refine",
        };
        w.write_record([
            r.index.to_string(),
            phase.to_string(),
            fmt_f64(r.params.zeta0),
            fmt_f64(r.params.zeta1),
            fmt_f64(r.params.rho),
            fmt_f64(r.params.eta),
            fmt_f64(r.loss),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_instance, SparsityModel};
    use crate::learner::{activate, RawParams, ThresholdScale};
    use crate::tensor::RankTriple;

    fn instance(alpha: f64, seed: u64) -> RpcaInstance {
        gen_instance(10, 2, alpha, 3.0, SparsityModel::EntrywiseBernoulli(alpha), seed).unwrap()
    }

    #[test]
    fn halton_first_points() {
        let zero = [0.0; 4];
        assert_eq!(halton(0, zero), [0.5, 1.0 / 3.0, 0.2, 1.0 / 7.0]);
        assert_eq!(halton(1, zero)[0], 0.25);
        assert!((halton(1, zero)[1] - 2.0 / 3.0).abs() < 1e-15);
        let shifted = halton(0, [0.75, 0.0, 0.0, 0.0]);
        assert_eq!(shifted[0], 0.25);
    }

    #[test]
    fn space_mapping_hits_bounds() {
        let space = SearchSpace::default();
        let lo = space.point([0.0; 4], 2.0);
        let hi = space.point([1.0; 4], 2.0);
        assert!((lo.zeta0 - 2e-4).abs() < 1e-15);
        assert!((hi.zeta1 - 4.0).abs() < 1e-12);
        assert_eq!(lo.rho, 0.5);
        assert!((hi.rho - 0.999).abs() < 1e-15);
        assert!((lo.eta - 0.05).abs() < 1e-15);
        assert!((hi.eta - 1.5).abs() < 1e-12);
        assert!(SearchSpace::with_budget(0).validate().is_err());
        let bad = SearchSpace {
            rho: (0.9, 0.5),
            ..SearchSpace::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn budget_one_returns_its_sample() {
        let inst = instance(0.1, 1);
        let cfg = SolverConfig::new(RankTriple::uniform(2), 10);
        let out = tune(&inst, &cfg, &SearchSpace::with_budget(1), 3).unwrap();
        assert_eq!(out.log.len(), 1);
        assert_eq!(out.best, out.log[0].params);
        assert_eq!(out.best_loss, out.log[0].loss);
    }

    #[test]
    fn log_invariants_and_determinism() {
        let inst = instance(0.1, 2);
        let cfg = SolverConfig::new(RankTriple::uniform(2), 15);
        let space = SearchSpace::with_budget(30);
        let a = tune(&inst, &cfg, &space, 9).unwrap();
        assert_eq!(a.log.len(), 30);
        let min = a.log.iter().map(|r| r.loss).fold(f64::INFINITY, f64::min);
        assert_eq!(a.best_loss, min);
        let bsf = a.best_so_far();
        assert!(bsf.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(a.log.iter().filter(|r| r.phase == Phase::Explore).count(), 18);
        let b = tune(&inst, &cfg, &space, 9).unwrap();
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn beats_default_init_on_noiseless_instance() {
        let inst = instance(0.0, 4);
        let cfg = SolverConfig::new(RankTriple::uniform(2), 30);
        let h0 = activate(&RawParams::default(), &ThresholdScale::of(&inst.y).unwrap());
        let default_loss = solve(&inst.y, &cfg, &h0, None).unwrap().final_record().loss_ssl;
        let out = tune(&inst, &cfg, &SearchSpace::with_budget(300), 5).unwrap();
        assert!(out.best_loss <= default_loss, "{} vs {default_loss}", out.best_loss);
    }

    #[test]
    fn writes_csv() {
        let inst = instance(0.1, 6);
        let cfg = SolverConfig::new(RankTriple::uniform(2), 5);
        let out = tune(&inst, &cfg, &SearchSpace::with_budget(4), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tune.csv");
        write_tune_log(&path, &out.log).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("index,phase,zeta0,zeta1,rho,eta,loss\n0,explore,"));
    }
}
