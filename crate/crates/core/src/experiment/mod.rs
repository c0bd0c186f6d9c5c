//! Synthetic experiments: the (alpha, rank) phase grid and the fine-tuning
//! sensitivity table.

mod grid;
mod sensitivity;

pub use grid::{phase_grid, write_grid_csv, write_heatmap_svg, CellResult, GridReport};
pub use sensitivity::{
    quartiles, sensitivity_report, write_sensitivity_csv, SensitivityReport, SensitivityRow,
};

use serde::{Deserialize, Serialize};

use crate::baseline::{tune, SearchSpace};
use crate::datagen::{derive_seed, InstanceFamily, RpcaInstance, SparsityModel};
use crate::error::{Error, Result};
use crate::learner::{
    activate, finetune, train, GradientMethod, LossKind, RawParams, ThresholdScale, TrainConfig,
};
use crate::solver::{solve, HyperParams, SolverConfig};
use crate::tensor::RankTriple;

/// How hyperparameters are chosen for each trial instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Per-instance black-box search.
    Baseline,
    /// One supervised training run per cell, shared by its trials.
    Supervised,
    /// Supervised training followed by per-instance fine-tuning.
    SupervisedFinetune,
    /// Per-instance fine-tuning from the warm start, no supervised stage.
    SslOnly,
    /// The warm-start parameters as they are.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub alphas: Vec<f64>,
    pub ranks: Vec<usize>,
    pub n: usize,
    pub kappa: f64,
    pub trials: usize,
    /// Solver iterations `T`.
    pub iterations: usize,
    pub method: Method,
    pub seed: u64,
    /// Corrupt a fixed fraction of every fiber along this mode instead of
    /// sampling entries independently.
    pub per_fiber_mode: Option<usize>,
    pub train_steps: usize,
    pub finetune_steps: usize,
    pub learning_rate: f64,
    pub gradient: GradientMethod,
    pub baseline_budget: usize,
    /// Warm start; the default initialization when absent.
    pub warm: Option<RawParams>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            alphas: vec![0.0, 0.2, 0.4, 0.6],
            ranks: vec![2, 4, 6],
            n: 30,
            kappa: 5.0,
            trials: 3,
            iterations: 100,
            method: Method::SupervisedFinetune,
            seed: 0,
            per_fiber_mode: None,
            train_steps: 1000,
            finetune_steps: 500,
            learning_rate: 0.05,
            gradient: GradientMethod::CentralDiff,
            baseline_budget: 500,
            warm: None,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.alphas.is_empty() || self.ranks.is_empty() {
            return bad("alpha and rank grids must be nonempty".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if let Some(a) = self.alphas.iter().find(|a| !(0.0..1.0).contains(*a)) {
            return bad(format!("alpha {a} outside [0, 1)"));
        }
        if let Some(r) = self.ranks.iter().find(|&&r| r == 0 || r > self.n) {
            return bad(format!("rank {r} outside 1..={}", self.n));
        }
        if !(self.kappa >= 1.0) {
            return bad(format!("kappa {} must be at least 1", self.kappa));
        }
        if let Some(m) = self.per_fiber_mode {
            crate::tensor::check_mode(m)?;
        }
        if matches!(self.method, Method::Supervised | Method::SupervisedFinetune) && self.train_steps == 0
        {
            return bad("supervised methods need train_steps >= 1".into());
        }
        if matches!(self.method, Method::SupervisedFinetune | Method::SslOnly) && self.finetune_steps == 0
        {
            return bad("fine-tuning methods need finetune_steps >= 1".into());
        }
        if self.method == Method::Baseline && self.baseline_budget == 0 {
            return bad("baseline needs a positive budget".into());
        }
        Ok(())
    }

    pub fn family(&self, alpha: f64, r: usize) -> InstanceFamily {
        let model = match self.per_fiber_mode {
            Some(mode) => SparsityModel::PerFiberExact { alpha, mode },
            None => SparsityModel::EntrywiseBernoulli(alpha),
        };
        InstanceFamily {
            model,
            ..InstanceFamily::new(self.n, r, alpha, self.kappa)
        }
    }

    pub fn solver_config(&self, r: usize) -> SolverConfig {
        SolverConfig::new(RankTriple::uniform(r), self.iterations)
    }

    pub fn supervised_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.train_steps,
            learning_rate: self.learning_rate,
            method: self.gradient,
            seed: self.seed,
            ..TrainConfig::supervised()
        }
    }

    pub fn finetune_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.finetune_steps,
            learning_rate: self.learning_rate,
            method: self.gradient,
            seed: self.seed,
            ..TrainConfig::finetune()
        }
    }

    fn warm(&self) -> RawParams {
        self.warm.unwrap_or_default()
    }
}

// Separates the training-instance stream from the trial stream.
const TRAIN_SALT: u64 = 0x7472_6169_6e00_0000;

/// Supervised training on fresh instances from `family`.
pub fn train_for_family(
    family: &InstanceFamily,
    cfg: &SolverConfig,
    tcfg: &TrainConfig,
    init: RawParams,
    seed: u64,
) -> Result<RawParams> {
    let base = seed ^ TRAIN_SALT;
    let out = train(
        |step| family.sample(derive_seed(base, step as u64)),
        cfg,
        LossKind::Sl,
        tcfg,
        init,
    )?;
    Ok(out.raw)
}

/// Per-cell state shared by the trials of one method.
pub(crate) enum Prepared {
    Raw(RawParams),
    None,
}

pub(crate) fn prepare(
    spec: &ExperimentSpec,
    family: &InstanceFamily,
    cfg: &SolverConfig,
    cell_seed: u64,
) -> Result<Prepared> {
    match spec.method {
        Method::Supervised | Method::SupervisedFinetune => Ok(Prepared::Raw(train_for_family(
            family,
            cfg,
            &spec.supervised_config(),
            spec.warm(),
            cell_seed,
        )?)),
        Method::SslOnly | Method::Fixed => Ok(Prepared::Raw(spec.warm())),
        Method::Baseline => Ok(Prepared::None),
    }
}

/// Hyperparameters `spec.method` settles on for one instance.
pub(crate) fn choose_params(
    spec: &ExperimentSpec,
    prepared: &Prepared,
    inst: &RpcaInstance,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<HyperParams> {
    let scale = ThresholdScale::of(&inst.y)?;
    match (spec.method, prepared) {
        (Method::Baseline, _) => {
            Ok(tune(inst, cfg, &SearchSpace::with_budget(spec.baseline_budget), seed)?.best)
        }
        (Method::Supervised | Method::Fixed, Prepared::Raw(raw)) => Ok(activate(raw, &scale)),
        (Method::SupervisedFinetune | Method::SslOnly, Prepared::Raw(raw)) => {
            Ok(finetune(inst, cfg, &spec.finetune_config(), *raw)?.hyper)
        }
        _ => unreachable!("prepare covers every method"),
    }
}

/// Relative recovery error of one trial under `spec.method`.
pub(crate) fn trial_error(
    spec: &ExperimentSpec,
    prepared: &Prepared,
    inst: &RpcaInstance,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<f64> {
    let h = choose_params(spec, prepared, inst, cfg, seed)?;
    let trace = solve(&inst.y, cfg, &h, inst.xstar.as_ref())?;
    trace
        .final_record()
        .rel_error
        .ok_or_else(|| Error::InvalidParameter("instance has no ground truth".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        ExperimentSpec::default().validate().unwrap();
        let bad = ExperimentSpec {
            alphas: vec![],
            ..ExperimentSpec::default()
        };
        assert!(bad.validate().is_err());
        let bad = ExperimentSpec {
            trials: 0,
            ..ExperimentSpec::default()
        };
        assert!(bad.validate().is_err());
        let bad = ExperimentSpec {
            ranks: vec![31],
            ..ExperimentSpec::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn spec_json_defaults() {
        let spec: ExperimentSpec =
            serde_json::from_str(r#"{"alphas": [0.1], "method": "ssl-only"}"#).unwrap();
        assert_eq!(spec.alphas, vec![0.1]);
        assert_eq!(spec.method, Method::SslOnly);
        assert_eq!(spec.n, 30);
        assert!(serde_json::from_str::<ExperimentSpec>(r#"{"alpha": [0.1]}"#).is_err());
    }
}
