//! Adam-style training of the raw parameters and per-instance fine-tuning.

use std::path::Path;

use log::{debug, warn};
use serde::Serialize;

use super::{activate, evaluate_with_gradient, LossKind, RawParams, ThresholdScale, TrainConfig};
use crate::datagen::RpcaInstance;
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::solver::{HyperParams, SolveTrace, SolverConfig};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// One optimizer step. Parameters and loss refer to the point the gradient was
/// taken at, before the update.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainRecord {
    pub step: usize,
    /// NaN when the step was skipped.
    pub loss: f64,
    pub zeta0: f64,
    pub zeta1: f64,
    pub rho: f64,
    pub eta: f64,
    pub step_size: f64,
    /// Solver runs spent so far, this step included.
    pub solves: usize,
    pub skipped: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best iterate (see [`TrainConfig::selection_smoothing`]).
    pub raw: RawParams,
    /// Parameters after the last update.
    pub last: RawParams,
    pub best_loss: f64,
    pub best_step: usize,
    pub log: Vec<TrainRecord>,
    pub skipped: usize,
    pub solves: usize,
}

struct Adam {
    m: [f64; 4],
    v: [f64; 4],
    t: i32,
}

impl Adam {
    fn new() -> Self {
        Self {
            m: [0.0; 4],
            v: [0.0; 4],
            t: 0,
        }
    }

    fn update(&mut self, x: &mut [f64; 4], g: &[f64; 4], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for i in 0..4 {
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g[i];
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g[i] * g[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            x[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
}

fn optimize(
    mut source: impl FnMut(usize) -> Result<RpcaInstance>,
    cfg: &SolverConfig,
    kind: LossKind,
    tcfg: &TrainConfig,
    init: RawParams,
) -> Result<(TrainOutcome, SolveTrace)> {
    tcfg.validate()?;
    init.validate()?;
    let mut x = init.as_array();
    let mut adam = Adam::new();
    let mut log = Vec::with_capacity(tcfg.steps);
    let mut best: Option<(f64, usize, RawParams, f64, SolveTrace)> = None;
    let mut smoothed: Option<f64> = None;
    let mut best_so_far: Vec<f64> = Vec::with_capacity(tcfg.steps);
    let (mut skipped, mut solves) = (0, 0);

    for step in 0..tcfg.steps {
        let inst = source(step)?;
        kind.check(&inst)?;
        let raw = RawParams::from_array(x);
        let h = activate(&raw, &ThresholdScale::of(&inst.y)?);
        let step_size = tcfg.step_size(step);
        let record = |loss: f64, solves: usize, skipped: bool| TrainRecord {
            step,
            loss,
            zeta0: h.zeta0,
            zeta1: h.zeta1,
            rho: h.rho,
            eta: h.eta,
            step_size,
            solves,
            skipped,
        };
        match evaluate_with_gradient(&inst, cfg, &raw, kind, tcfg) {
            Ok(ev) => {
                solves += ev.solves;
                log.push(record(ev.loss, solves, false));
                let a = tcfg.selection_smoothing;
                let score = match smoothed {
                    Some(s) if a > 0.0 => a * s + (1.0 - a) * ev.loss,
                    _ => ev.loss,
                };
                smoothed = Some(score);
                if best.as_ref().is_none_or(|b| score < b.0) {
                    best = Some((score, step, raw, ev.loss, ev.trace));
                }
                let prev = best_so_far.last().copied().unwrap_or(f64::INFINITY);
                best_so_far.push(prev.min(ev.loss));
                debug!("step {step}: loss {:e}, gradient {:?}", ev.loss, ev.gradient);
                if ev.gradient.iter().all(|g| g.is_finite()) {
                    adam.update(&mut x, &ev.gradient, step_size);
                } else {
                    warn!("step {step}: non-finite gradient, update skipped");
                }
            }
            Err(e @ Error::GradientUnavailable { .. }) => {
                warn!("step {step}: skipping instance: {e}");
                skipped += 1;
                log.push(record(f64::NAN, solves, true));
                best_so_far.push(best_so_far.last().copied().unwrap_or(f64::INFINITY));
                if 2 * skipped > tcfg.steps {
                    return Err(Error::TooManySkipped {
                        skipped,
                        steps: tcfg.steps,
                    });
                }
            }
            Err(e) => return Err(e),
        }
        if tcfg.patience > 0 && step >= tcfg.patience {
            let then = best_so_far[step - tcfg.patience];
            let now = best_so_far[step];
            if then.is_finite() && then - now < tcfg.early_stop_tol * then.abs() {
                debug!("early stop at step {step}");
                break;
            }
        }
    }

    let (_, best_step, raw, best_loss, trace) = best.ok_or(Error::TooManySkipped {
        skipped,
        steps: tcfg.steps,
    })?;
    Ok((
        TrainOutcome {
            raw,
            last: RawParams::from_array(x),
            best_loss,
            best_step,
            log,
            skipped,
            solves,
        },
        trace,
    ))
}

/// Trains on instances drawn from `source(step)`, one per step.
pub fn train(
    source: impl FnMut(usize) -> Result<RpcaInstance>,
    cfg: &SolverConfig,
    kind: LossKind,
    tcfg: &TrainConfig,
    init: RawParams,
) -> Result<TrainOutcome> {
    Ok(optimize(source, cfg, kind, tcfg, init)?.0)
}

/// Trains cycling through a fixed dataset.
pub fn train_on(
    dataset: &[RpcaInstance],
    cfg: &SolverConfig,
    kind: LossKind,
    tcfg: &TrainConfig,
    init: RawParams,
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::InvalidParameter("training dataset is empty".into()));
    }
    for inst in dataset {
        kind.check(inst)?;
    }
    train(|s| Ok(dataset[s % dataset.len()].clone()), cfg, kind, tcfg, init)
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub raw: RawParams,
    pub hyper: HyperParams,
    /// Solve at the selected parameters.
    pub trace: SolveTrace,
    /// Final-iterate ℒ_SSL at the warm start, if that solve succeeded.
    pub warm_loss: Option<f64>,
    pub train: TrainOutcome,
}

/// Self-supervised fine-tuning on a single instance from `warm`.
pub fn finetune(
    inst: &RpcaInstance,
    cfg: &SolverConfig,
    tcfg: &TrainConfig,
    warm: RawParams,
) -> Result<FinetuneOutcome> {
    let tcfg = TrainConfig {
        selection_smoothing: 0.0,
        ..tcfg.clone()
    };
    let (train, trace) = optimize(|_| Ok(inst.clone()), cfg, LossKind::Ssl, &tcfg, warm)?;
    let hyper = activate(&train.raw, &ThresholdScale::of(&inst.y)?);
    let warm_loss = train.log.first().filter(|r| !r.skipped).map(|r| r.loss);
    Ok(FinetuneOutcome {
        raw: train.raw,
        hyper,
        trace,
        warm_loss,
        train,
    })
}

/// Writes `step, loss, zeta0, zeta1, rho, eta, step_size` rows.
pub fn write_train_log(path: impl AsRef<Path>, log: &[TrainRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "loss", "zeta0", "zeta1", "rho", "eta", "step_size"])?;
    for r in log {
        w.write_record([
            r.step.to_string(),
            fmt_f64(r.loss),
            fmt_f64(r.zeta0),
            fmt_f64(r.zeta1),
            fmt_f64(r.rho),
            fmt_f64(r.eta),
            fmt_f64(r.step_size),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{InstanceFamily, SparsityModel};
    use crate::tensor::RankTriple;

    fn short(steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            ..TrainConfig::supervised()
        }
    }

    #[test]
    fn zero_learning_rate_returns_init() {
        let fam = InstanceFamily::new(8, 2, 0.1, 2.0);
        let cfg = SolverConfig::new(RankTriple::uniform(2), 5);
        let tcfg = TrainConfig {
            learning_rate: 0.0,
            ..short(3)
        };
        let init = RawParams::new(0.3, -0.2, 2.0, 0.1).unwrap();
        let out = train(|s| fam.sample(s as u64), &cfg, LossKind::Sl, &tcfg, init).unwrap();
        assert_eq!(out.raw, init);
        assert_eq!(out.last, init);
        assert_eq!(out.log.len(), 3);
        assert_eq!(out.solves, 27);
    }

    #[test]
    fn flat_point_stays_put() {
        // With T = 0 and a huge zeta0 the initialization is the exact HOSVD and
        // nothing depends on the parameters locally.
        let fam = InstanceFamily::new(6, 2, 0.0, 2.0);
        let cfg = SolverConfig::new(RankTriple::uniform(2), 0);
        let init = RawParams::new(30.0, 0.0, 0.0, 0.0).unwrap();
        let out = train(|s| fam.sample(s as u64), &cfg, LossKind::Sl, &short(1), init).unwrap();
        assert_eq!(out.raw, init);
        assert_eq!(out.last, init);
    }

    #[test]
    fn supervised_training_improves() {
        let mut fam = InstanceFamily::new(20, 2, 0.1, 3.0);
        fam.model = SparsityModel::EntrywiseBernoulli(0.1);
        let cfg = SolverConfig::new(RankTriple::uniform(2), 30);
        let val: Vec<_> = (0..3).map(|s| fam.sample(1000 + s).unwrap()).collect();
        let mean = |raw: &RawParams| {
            val.iter()
                .map(|i| super::super::evaluate(i, &cfg, raw, LossKind::Sl).unwrap().0)
                .sum::<f64>()
                / val.len() as f64
        };
        let init = RawParams::default();
        let tcfg = TrainConfig {
            learning_rate: 0.1,
            ..short(30)
        };
        let out = train(|s| fam.sample(s as u64), &cfg, LossKind::Sl, &tcfg, init).unwrap();
        assert_eq!(out.log.len(), 30);
        assert!(mean(&out.raw) < mean(&init), "{:?}", out.raw);
    }

    #[test]
    fn diverging_steps_are_skipped_then_abort() {
        let fam = InstanceFamily::new(10, 2, 0.1, 2.0);
        let cfg = SolverConfig::new(RankTriple::uniform(2), 40);
        let init = RawParams {
            e: 1e3,
            ..RawParams::default()
        };
        let err = train(|s| fam.sample(s as u64), &cfg, LossKind::Ssl, &short(4), init).unwrap_err();
        assert!(matches!(err, Error::TooManySkipped { .. }), "{err}");
    }

    #[test]
    fn finetune_never_worsens_warm_start() {
        let mut fam = InstanceFamily::new(30, 6, 0.5, 5.0);
        fam.model = SparsityModel::EntrywiseBernoulli(0.5);
        let inst = fam.sample(11).unwrap();
        let cfg = SolverConfig::new(RankTriple::uniform(6), 30);
        let tcfg = TrainConfig {
            steps: 6,
            ..TrainConfig::finetune()
        };
        let out = finetune(&inst, &cfg, &tcfg, RawParams::default()).unwrap();
        let warm = out.warm_loss.unwrap();
        assert!(out.trace.final_record().loss_ssl <= warm);
        assert_eq!(out.train.best_loss, out.trace.final_record().loss_ssl);
    }

    #[test]
    fn finetune_at_noiseless_optimum() {
        let inst = InstanceFamily::new(8, 2, 0.0, 2.0).sample(3).unwrap();
        let cfg = SolverConfig::new(RankTriple::uniform(2), 20);
        let tcfg = TrainConfig {
            steps: 3,
            ..TrainConfig::finetune()
        };
        // zeta0 far above every entry: exact HOSVD, zero residual from the start.
        // eta stays below 1/2: at an exact fixed point the error component
        // inside the core subspace is multiplied by 1 - 4 eta per iteration.
        let warm = RawParams::new(20.0, 0.0, 2.0, super::super::inverse_softplus(0.3)).unwrap();
        let out = finetune(&inst, &cfg, &tcfg, warm).unwrap();
        let warm_loss = out.warm_loss.unwrap();
        assert!(warm_loss < 1e-9);
        assert!((out.trace.final_record().loss_ssl - warm_loss).abs() <= 1e-10);
    }

    #[test]
    fn early_stop_shortens_log() {
        let inst = InstanceFamily::new(8, 2, 0.0, 2.0).sample(3).unwrap();
        let cfg = SolverConfig::new(RankTriple::uniform(2), 5);
        let tcfg = TrainConfig {
            steps: 50,
            learning_rate: 0.0,
            patience: 3,
            ..TrainConfig::finetune()
        };
        let out = finetune(&inst, &cfg, &tcfg, RawParams::default()).unwrap();
        assert_eq!(out.train.log.len(), 4);
    }

    #[test]
    fn log_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let rec = TrainRecord {
            step: 0,
            loss: 0.5,
            zeta0: 1.0,
            zeta1: 0.5,
            rho: 0.9,
            eta: 0.5,
            step_size: 0.05,
            solves: 9,
            skipped: false,
        };
        write_train_log(&path, &[rec]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "step,loss,zeta0,zeta1,rho,eta,step_size");
        assert!(lines.next().unwrap().starts_with("0,5.0000000000000000e-1,"));
    }
}
