//! Unrolled hyperparameter learning: a squashing reparametrization of
//! `(zeta0, zeta1, rho, eta)`, the three training losses, hyper-gradients of the
//! unrolled solve and the supervised / self-supervised training loops.

mod gradient;
mod train;

pub use gradient::{evaluate, evaluate_with_gradient, hyper_gradient, Evaluation};
pub use train::{
    finetune, train, train_on, write_train_log, FinetuneOutcome, TrainOutcome, TrainRecord,
};

use serde::{Deserialize, Serialize};

use crate::datagen::RpcaInstance;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::solver::{HyperParams, TuckerFactors};
use crate::tensor::Tensor3;

/// Unconstrained parameters behind [`activate`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawParams {
    pub z0: f64,
    pub z1: f64,
    pub p: f64,
    pub e: f64,
}

impl RawParams {
    pub fn new(z0: f64, z1: f64, p: f64, e: f64) -> Result<Self> {
        let raw = Self { z0, z1, p, e };
        raw.validate()?;
        Ok(raw)
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("raw parameters must be finite: {self:?}")))
        }
    }

    /// Order: `[z0, z1, p, e]`.
    pub fn as_array(&self) -> [f64; 4] {
        [self.z0, self.z1, self.p, self.e]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self {
            z0: v[0],
            z1: v[1],
            p: v[2],
            e: v[3],
        }
    }

    /// Targets `zeta0 ≈ 0.6 s0`, `zeta1 ≈ 0.3 s0`, `rho = 0.95`, `eta = 0.5`.
    pub fn default_init() -> Self {
        Self {
            z0: inverse_softplus(0.6),
            z1: inverse_softplus(0.6),
            p: logit(0.95),
            e: inverse_softplus(0.5),
        }
    }
}

impl Default for RawParams {
    fn default() -> Self {
        Self::default_init()
    }
}

/// Data-derived threshold scales: `s0 = ℓ∞(Y)`, `s1 = s0 / 2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdScale {
    pub s0: f64,
    pub s1: f64,
}

impl ThresholdScale {
    pub fn new(s0: f64, s1: f64) -> Result<Self> {
        if !(s0 > 0.0 && s1 > 0.0 && s0.is_finite() && s1.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "threshold scales must be positive and finite, got ({s0}, {s1})"
            )));
        }
        Ok(Self { s0, s1 })
    }

    pub fn of(y: &Tensor3) -> Result<Self> {
        let s0 = y.linf_norm();
        if s0 == 0.0 {
            return Err(Error::DegenerateInput("observation is all zero".into()));
        }
        Self::new(s0, s0 / 2.0)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

// The activations saturate in floating point (sigmoid(40) rounds to 1), so the
// outputs are kept strictly inside their open domains.
const RHO_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

fn positive(v: f64) -> f64 {
    v.max(f64::MIN_POSITIVE)
}

/// Maps raw parameters to valid hyperparameters.
pub fn activate(raw: &RawParams, scale: &ThresholdScale) -> HyperParams {
    HyperParams {
        zeta0: positive(softplus(raw.z0) * scale.s0),
        zeta1: positive(softplus(raw.z1) * scale.s1),
        rho: sigmoid(raw.p).clamp(f64::MIN_POSITIVE, RHO_MAX),
        eta: positive(softplus(raw.e)),
    }
}

/// Derivatives of [`activate`] with respect to `[z0, z1, p, e]`, one per output.
pub(crate) fn activation_slopes(raw: &RawParams, scale: &ThresholdScale) -> [f64; 4] {
    let s = sigmoid(raw.p);
    [
        sigmoid(raw.z0) * scale.s0,
        sigmoid(raw.z1) * scale.s1,
        s * (1.0 - s),
        sigmoid(raw.e),
    ]
}

pub fn invert_activation(h: &HyperParams, scale: &ThresholdScale) -> Result<RawParams> {
    h.validate()?;
    let raw = RawParams {
        z0: inverse_softplus(h.zeta0 / scale.s0),
        z1: inverse_softplus(h.zeta1 / scale.s1),
        p: logit(h.rho),
        e: inverse_softplus(h.eta),
    };
    raw.validate()?;
    Ok(raw)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Self-supervised ℓ1 residual, needs only `Y`.
    Ssl,
    /// Supervised relative error against `X★`.
    Sl,
    /// Background-masked error; the mask is taken from the instance.
    Sm,
}

impl LossKind {
    /// Checks that `inst` carries the labels this loss needs.
    pub fn check(&self, inst: &RpcaInstance) -> Result<()> {
        match self {
            LossKind::Ssl => Ok(()),
            LossKind::Sl => inst
                .xstar
                .as_ref()
                .map(|_| ())
                .ok_or_else(|| Error::InvalidParameter("supervised loss needs ground truth".into())),
            LossKind::Sm => inst
                .mask
                .as_ref()
                .map(|_| ())
                .ok_or_else(|| Error::InvalidParameter("masked loss needs a mask".into())),
        }
    }

    /// Loss of a reconstruction `x`.
    pub fn of_reconstruction<T: Scalar>(&self, inst: &RpcaInstance, x: &Tensor3<T>) -> Result<T> {
        self.check(inst)?;
        match self {
            LossKind::Ssl => ssl_of(&inst.y, x),
            LossKind::Sl => sl_of(inst.xstar.as_ref().expect("checked"), x),
            LossKind::Sm => sm_of(&inst.y, inst.mask.as_ref().expect("checked"), x),
        }
    }

    pub fn of_factors(&self, inst: &RpcaInstance, f: &TuckerFactors) -> Result<f64> {
        self.of_reconstruction(inst, &f.reconstruct()?)
    }
}

pub(crate) fn ssl_of<T: Scalar>(y: &Tensor3, x: &Tensor3<T>) -> Result<T> {
    let den = y.fro_sq();
    if den == 0.0 {
        return Err(Error::DegenerateInput("observation is all zero".into()));
    }
    Ok(residual(y, x)?.l1().scale(1.0 / den))
}

pub(crate) fn sl_of<T: Scalar>(xstar: &Tensor3, x: &Tensor3<T>) -> Result<T> {
    let den = xstar.fro_sq();
    if den == 0.0 {
        return Err(Error::DegenerateInput("ground truth is all zero".into()));
    }
    Ok(residual(xstar, x)?.fro_sq().scale(1.0 / den))
}

pub(crate) fn sm_of<T: Scalar>(y: &Tensor3, mask: &Tensor3, x: &Tensor3<T>) -> Result<T> {
    y.check_same_dims(mask)?;
    crate::io::validate_mask(mask)?;
    let background = mask.map(|m| 1.0 - m);
    let den = y.hadamard(&background)?.fro_sq();
    if den == 0.0 {
        return Err(Error::DegenerateInput("mask leaves no background".into()));
    }
    let r = residual(y, x)?.hadamard(&background.lift())?;
    Ok(r.fro_sq().scale(1.0 / den))
}

fn residual<T: Scalar>(a: &Tensor3, x: &Tensor3<T>) -> Result<Tensor3<T>> {
    if a.dims() != x.dims() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.dims(), x.dims())));
    }
    Ok(Tensor3::from_vec(
        x.dims(),
        a.data()
            .iter()
            .zip(x.data())
            .map(|(&a, &x)| T::from_f64(a) - x)
            .collect(),
    )
    .expect("dims match"))
}

/// `‖Y − X‖₁ / ‖Y‖_F²`.
pub fn loss_ssl(y: &Tensor3, f: &TuckerFactors) -> Result<f64> {
    ssl_of(y, &f.reconstruct()?)
}

/// `‖X★ − X‖_F² / ‖X★‖_F²`.
pub fn loss_sl(xstar: &Tensor3, f: &TuckerFactors) -> Result<f64> {
    sl_of(xstar, &f.reconstruct()?)
}

/// `‖(Y − X) ⊙ (1 − M)‖_F² / ‖Y ⊙ (1 − M)‖_F²`.
pub fn loss_sm(y: &Tensor3, mask: &Tensor3, f: &TuckerFactors) -> Result<f64> {
    sm_of(y, mask, &f.reconstruct()?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMethod {
    CentralDiff,
    ForwardDual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Multiplicative step-size decay applied every `decay_interval` steps.
    pub decay_factor: f64,
    pub decay_interval: usize,
    pub method: GradientMethod,
    pub fd_step: f64,
    /// Stop once the best loss improved by less than this fraction over the
    /// last `patience` steps. `patience = 0` disables early stopping.
    pub early_stop_tol: f64,
    pub patience: usize,
    /// Exponential smoothing of the recorded loss used for best-iterate
    /// selection; 0 selects on the raw per-step loss.
    pub selection_smoothing: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::supervised()
    }
}

impl TrainConfig {
    pub fn supervised() -> Self {
        Self {
            steps: 1000,
            learning_rate: 0.05,
            decay_factor: 0.95,
            decay_interval: 50,
            method: GradientMethod::CentralDiff,
            fd_step: 1e-4,
            early_stop_tol: 0.0,
            patience: 0,
            selection_smoothing: 0.9,
            seed: 0,
        }
    }

    pub fn finetune() -> Self {
        Self {
            steps: 500,
            early_stop_tol: 1e-4,
            patience: 25,
            selection_smoothing: 0.0,
            ..Self::supervised()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(format!("train config: {what}")));
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad("decay factor must be in (0, 1]");
        }
        if self.decay_interval == 0 {
            return bad("decay interval must be at least 1");
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return bad("fd step must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be nonnegative");
        }
        if !(self.early_stop_tol >= 0.0) {
            return bad("early-stop tolerance must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.selection_smoothing) {
            return bad("selection smoothing must be in [0, 1)");
        }
        Ok(())
    }

    /// Step size used at (0-based) step `t`.
    pub fn step_size(&self, t: usize) -> f64 {
        self.learning_rate * self.decay_factor.powi((t / self.decay_interval) as i32)
    }
}
