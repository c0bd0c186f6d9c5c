//! Tensor RPCA by scaled gradient descent on Tucker factors.
//!
//! Starting from a spectral initialization (HOSVD of the observation with its
//! largest entries clipped), every iteration thresholds the current residual to
//! estimate the sparse corruption, then takes one preconditioned gradient step
//! on each factor and on the core. All updates in an iteration read the
//! iteration-`t` factors.
//!
//! Everything here is generic over [`Scalar`] so that the same iteration can be
//! pushed through forward-mode dual numbers by the hyperparameter learner.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::linalg::{spd_inverse, top_singular_vectors};
use crate::scalar::Scalar;
use crate::tensor::{multilinear_product, Matrix, RankTriple, Tensor3};

/// ℒ_SSL may not grow past this multiple of its initial value.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Low-rank estimate `(U1, U2, U3, G)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TuckerFactors<T = f64> {
    pub u: [Matrix<T>; 3],
    pub core: Tensor3<T>,
}

impl<T: Scalar> TuckerFactors<T> {
    pub fn new(u1: Matrix<T>, u2: Matrix<T>, u3: Matrix<T>, core: Tensor3<T>) -> Result<Self> {
        let f = Self {
            u: [u1, u2, u3],
            core,
        };
        let r = f.core.dims_array();
        for k in 0..3 {
            if f.u[k].cols() != r[k] {
                return Err(Error::ShapeMismatch(format!(
                    "U{} has {} columns, core has r{} = {}",
                    k + 1,
                    f.u[k].cols(),
                    k + 1,
                    r[k]
                )));
            }
        }
        Ok(f)
    }

    /// All-zero factors of the given shape.
    pub fn zeros(dims: (usize, usize, usize), rank: RankTriple) -> Self {
        let n = [dims.0, dims.1, dims.2];
        let r = rank.as_array();
        Self {
            u: [
                Matrix::zeros(n[0], r[0]),
                Matrix::zeros(n[1], r[1]),
                Matrix::zeros(n[2], r[2]),
            ],
            core: Tensor3::zeros((r[0], r[1], r[2])),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.u[0].rows(), self.u[1].rows(), self.u[2].rows())
    }

    pub fn rank(&self) -> RankTriple {
        let (a, b, c) = self.core.dims();
        RankTriple(a, b, c)
    }

    pub fn reconstruct(&self) -> Result<Tensor3<T>> {
        multilinear_product(&self.u[0], &self.u[1], &self.u[2], &self.core)
    }

    pub fn primal(&self) -> TuckerFactors<f64> {
        TuckerFactors {
            u: [self.u[0].primal(), self.u[1].primal(), self.u[2].primal()],
            core: self.core.primal(),
        }
    }
}

impl TuckerFactors<f64> {
    pub fn is_finite(&self) -> bool {
        self.u.iter().all(|u| u.is_finite()) && self.core.is_finite()
    }
}

/// The four algorithm hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HyperParams<T = f64> {
    /// Threshold used by the spectral initialization.
    pub zeta0: T,
    /// Threshold of the first iteration.
    pub zeta1: T,
    /// Per-iteration threshold decay.
    pub rho: T,
    /// Step size.
    pub eta: T,
}

impl HyperParams<f64> {
    pub fn new(zeta0: f64, zeta1: f64, rho: f64, eta: f64) -> Result<Self> {
        let h = Self {
            zeta0,
            zeta1,
            rho,
            eta,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.zeta0 > 0.0
            && self.zeta1 > 0.0
            && self.eta > 0.0
            && self.rho > 0.0
            && self.rho < 1.0
            && self.zeta0.is_finite()
            && self.zeta1.is_finite()
            && self.eta.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "hyperparameters need zeta0, zeta1, eta > 0 and 0 < rho < 1, got {self:?}"
            )))
        }
    }

    pub fn lift<S: Scalar>(&self) -> HyperParams<S> {
        HyperParams {
            zeta0: S::from_f64(self.zeta0),
            zeta1: S::from_f64(self.zeta1),
            rho: S::from_f64(self.rho),
            eta: S::from_f64(self.eta),
        }
    }
}

impl<T: Scalar> HyperParams<T> {
    /// Threshold at iteration `t`: `zeta0` for `t = 0`, else `zeta1 * rho^(t-1)`.
    pub fn schedule(&self, t: usize) -> T {
        if t == 0 {
            self.zeta0
        } else {
            self.zeta1 * self.rho.powi((t - 1) as u32)
        }
    }
}

/// Free-function form of [`HyperParams::schedule`].
pub fn schedule<T: Scalar>(h: &HyperParams<T>, t: usize) -> T {
    h.schedule(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SolverConfig {
    pub rank: RankTriple,
    /// Number of iterations `T`.
    pub iterations: usize,
    /// Pin modes with `r_k == n_k` to the identity and never update them.
    pub skip_full_rank_modes: bool,
}

impl SolverConfig {
    pub fn new(rank: RankTriple, iterations: usize) -> Self {
        Self {
            rank,
            iterations,
            skip_full_rank_modes: false,
        }
    }

    pub fn with_skipping(mut self, skip: bool) -> Self {
        self.skip_full_rank_modes = skip;
        self
    }

    /// Which modes are pinned to the identity for a tensor of shape `dims`.
    pub fn skipped_modes(&self, dims: (usize, usize, usize)) -> [bool; 3] {
        let n = [dims.0, dims.1, dims.2];
        let r = self.rank.as_array();
        std::array::from_fn(|k| self.skip_full_rank_modes && r[k] == n[k])
    }
}

/// One row of a solve trace.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct IterationRecord {
    pub t: usize,
    pub loss_ssl: f64,
    pub rel_error: Option<f64>,
    pub zeta: f64,
}

/// Result of an unrolled solve: one record per iterate `0..=T` plus the final estimates.
#[derive(Clone, Debug)]
pub struct SolveTrace {
    pub records: Vec<IterationRecord>,
    pub factors: TuckerFactors,
    pub sparse: Tensor3,
}

impl SolveTrace {
    pub fn final_record(&self) -> &IterationRecord {
        self.records.last().expect("trace always holds the initial state")
    }
}

/// A failed solve together with the records gathered before the failure.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct SolveError {
    #[source]
    pub error: Error,
    pub records: Vec<IterationRecord>,
}

impl From<SolveError> for Error {
    fn from(e: SolveError) -> Self {
        e.error
    }
}

/// Entrywise soft thresholding `sgn(x) max(0, |x| - zeta)`.
pub fn shrink<T: Scalar>(a: &Tensor3<T>, zeta: T) -> Result<Tensor3<T>> {
    if zeta.re() < 0.0 || zeta.re().is_nan() {
        return Err(Error::InvalidParameter(format!(
            "shrinkage threshold {} is negative",
            zeta.re()
        )));
    }
    Ok(a.map(|x| shrink_scalar(x, zeta)))
}

#[inline]
fn shrink_scalar<T: Scalar>(x: T, zeta: T) -> T {
    let v = x.re();
    if v > zeta.re() {
        x - zeta
    } else if v < -zeta.re() {
        x + zeta
    } else {
        T::zero()
    }
}

fn contract<'a, T: Scalar>(
    t: &'a Tensor3<T>,
    u: &Matrix<T>,
    k: usize,
    skipped: bool,
) -> Result<Cow<'a, Tensor3<T>>> {
    if skipped {
        Ok(Cow::Borrowed(t))
    } else {
        Ok(Cow::Owned(t.mode_product(&u.transpose(), k)?))
    }
}

fn expand<'a, T: Scalar>(
    t: &'a Tensor3<T>,
    u: &Matrix<T>,
    k: usize,
    skipped: bool,
) -> Result<Cow<'a, Tensor3<T>>> {
    if skipped {
        Ok(Cow::Borrowed(t))
    } else {
        Ok(Cow::Owned(t.mode_product(u, k)?))
    }
}

/// `(V1, V2, V3) · A`, skipping identity modes.
fn apply_all<T: Scalar>(
    a: &Tensor3<T>,
    v: [&Matrix<T>; 3],
    skipped: [bool; 3],
) -> Result<Tensor3<T>> {
    let a1 = expand(a, v[0], 1, skipped[0])?;
    let a2 = expand(&a1, v[1], 2, skipped[1])?;
    Ok(expand(&a2, v[2], 3, skipped[2])?.into_owned())
}

fn reconstruct_skipping<T: Scalar>(f: &TuckerFactors<T>, skipped: [bool; 3]) -> Result<Tensor3<T>> {
    apply_all(&f.core, [&f.u[0], &f.u[1], &f.u[2]], skipped)
}

/// Rank-`r` HOSVD of `Y - shrink(Y, zeta0)`.
pub fn spectral_init(y: &Tensor3, cfg: &SolverConfig, h: &HyperParams) -> Result<TuckerFactors> {
    cfg.rank.validate(y.dims())?;
    let clipped = clip(y, h.zeta0)?;
    let skipped = cfg.skipped_modes(y.dims());
    let u = hosvd_bases(&clipped, cfg.rank, skipped)?;
    let core = project_core(&clipped, &u, skipped)?;
    let [u1, u2, u3] = u;
    TuckerFactors::new(u1, u2, u3, core)
}

/// `Y - shrink(Y, zeta)`, i.e. `Y` with magnitudes capped at `zeta`.
pub(crate) fn clip<T: Scalar>(y: &Tensor3<T>, zeta: T) -> Result<Tensor3<T>> {
    y.sub(&shrink(y, zeta)?)
}

pub(crate) fn hosvd_bases(
    x: &Tensor3,
    rank: RankTriple,
    skipped: [bool; 3],
) -> Result<[Matrix; 3]> {
    let n = x.dims_array();
    let r = rank.as_array();
    let mut out: [Matrix; 3] = std::array::from_fn(|k| Matrix::identity(n[k]));
    for k in 0..3 {
        if !skipped[k] {
            out[k] = top_singular_vectors(&x.matricize(k + 1)?, r[k])?.u;
        }
    }
    Ok(out)
}

/// `(U1ᵀ, U2ᵀ, U3ᵀ) · X`.
pub(crate) fn project_core<T: Scalar>(
    x: &Tensor3<T>,
    u: &[Matrix<T>; 3],
    skipped: [bool; 3],
) -> Result<Tensor3<T>> {
    let a1 = contract(x, &u[0], 1, skipped[0])?;
    let a2 = contract(&a1, &u[1], 2, skipped[1])?;
    Ok(contract(&a2, &u[2], 3, skipped[2])?.into_owned())
}

/// Gradients of `½‖(U1,U2,U3)·G + S - Y‖_F²`.
#[derive(Clone, Debug)]
pub struct FactorGradients<T = f64> {
    /// `None` for modes pinned to the identity.
    pub u: [Option<Matrix<T>>; 3],
    pub core: Tensor3<T>,
}

/// The least-squares objective `½‖(U1,U2,U3)·G + S - Y‖_F²`.
pub fn objective(y: &Tensor3, f: &TuckerFactors, s: &Tensor3) -> Result<f64> {
    let r = f.reconstruct()?.add(s)?.sub(y)?;
    Ok(0.5 * r.fro_sq())
}

/// Gradients of [`objective`] w.r.t. every factor and the core.
pub fn objective_gradients(
    y: &Tensor3,
    f: &TuckerFactors,
    s: &Tensor3,
) -> Result<FactorGradients> {
    let r = f.reconstruct()?.add(s)?.sub(y)?;
    gradients_from_residual(&r, f, [false; 3])
}

/// With residual `R`: `∇_{U1} = M1(R)(U3 ⊗ U2)M1(G)ᵀ` (cyclically for modes 2, 3)
/// and `∇_G = (U1ᵀ, U2ᵀ, U3ᵀ)·R`. The Kronecker products are never formed;
/// `M1(R)(U3 ⊗ U2) = M1(R ×2 U2ᵀ ×3 U3ᵀ)`.
fn gradients_from_residual<T: Scalar>(
    r: &Tensor3<T>,
    f: &TuckerFactors<T>,
    skipped: [bool; 3],
) -> Result<FactorGradients<T>> {
    let [u1, u2, u3] = &f.u;
    let r2 = contract(r, u2, 2, skipped[1])?;
    let w1 = contract(&r2, u3, 3, skipped[2])?;
    let grad_core = contract(&w1, u1, 1, skipped[0])?.into_owned();
    let mut grads: [Option<Matrix<T>>; 3] = [None, None, None];
    if !skipped[0] {
        grads[0] = Some(w1.matricize(1)?.matmul_t(&f.core.matricize(1)?)?);
    }
    if !skipped[1] {
        let r1 = contract(r, u1, 1, skipped[0])?;
        let w2 = contract(&r1, u3, 3, skipped[2])?;
        grads[1] = Some(w2.matricize(2)?.matmul_t(&f.core.matricize(2)?)?);
    }
    if !skipped[2] {
        let w3 = contract(&r2, u1, 1, skipped[0])?;
        grads[2] = Some(w3.matricize(3)?.matmul_t(&f.core.matricize(3)?)?);
    }
    Ok(FactorGradients {
        u: grads,
        core: grad_core,
    })
}

/// `Ŭ_kᵀ Ŭ_k` computed as `M_k(G ×_j A_j ×_l A_l) M_k(G)ᵀ` with `A_j = U_jᵀU_j`.
pub(crate) fn breve_gram<T: Scalar>(
    f: &TuckerFactors<T>,
    grams: &[Option<Matrix<T>>; 3],
    k: usize,
) -> Result<Matrix<T>> {
    let mut g = Cow::Borrowed(&f.core);
    for j in 0..3 {
        if j != k {
            if let Some(a) = &grams[j] {
                g = Cow::Owned(g.mode_product(a, j + 1)?);
            }
        }
    }
    g.matricize(k + 1)?.matmul_t(&f.core.matricize(k + 1)?)
}

/// Explicit `Ŭ_k` built with Kronecker products, for small cores and checks.
pub fn breve_matrix(f: &TuckerFactors, k: usize) -> Result<Matrix> {
    use crate::tensor::kronecker;
    let [u1, u2, u3] = &f.u;
    let kron = match k {
        1 => kronecker(u3, u2),
        2 => kronecker(u3, u1),
        3 => kronecker(u2, u1),
        other => return Err(Error::InvalidMode(other)),
    };
    kron.matmul_t(&f.core.matricize(k)?)
}

fn divergence(iteration: usize, e: Error) -> Error {
    match e {
        e @ Error::SolverDivergence { .. } => e,
        other => Error::SolverDivergence {
            iteration,
            reason: other.to_string(),
        },
    }
}

/// One iteration given the current reconstruction `x = (U1,U2,U3)·G`.
pub(crate) fn advance<T: Scalar>(
    y: &Tensor3<T>,
    f: &TuckerFactors<T>,
    x: &Tensor3<T>,
    h: &HyperParams<T>,
    t: usize,
    skipped: [bool; 3],
) -> Result<(TuckerFactors<T>, Tensor3<T>)> {
    let s_next = shrink(&y.sub(x)?, h.schedule(t + 1))?;
    let r = x.add(&s_next)?.sub(y)?;
    let grads = gradients_from_residual(&r, f, skipped)?;

    let grams: [Option<Matrix<T>>; 3] = std::array::from_fn(|k| {
        (!skipped[k]).then(|| f.u[k].t_matmul(&f.u[k]).expect("square gram"))
    });
    let mut next_u = f.u.clone();
    let mut tilde: [Option<Matrix<T>>; 3] = [None, None, None];
    for k in 0..3 {
        if skipped[k] {
            continue;
        }
        let precond = spd_inverse(&breve_gram(f, &grams, k)?).map_err(|e| divergence(t, e))?;
        let grad = grads.u[k].as_ref().expect("gradient of a free mode");
        let step = grad.matmul(&precond)?.scale(h.eta);
        next_u[k] = f.u[k].sub(&step)?;
        tilde[k] = Some(
            spd_inverse(grams[k].as_ref().expect("gram of a free mode"))
                .map_err(|e| divergence(t, e))?,
        );
    }

    let mut scaled = Cow::Borrowed(&grads.core);
    for (k, tk) in tilde.iter().enumerate() {
        if let Some(tk) = tk {
            scaled = Cow::Owned(scaled.mode_product(tk, k + 1)?);
        }
    }
    let next_core = f.core.sub(&scaled.scale(h.eta))?;
    Ok((
        TuckerFactors {
            u: next_u,
            core: next_core,
        },
        s_next,
    ))
}

/// One scaled gradient iteration from `F_t`, returning `(F_{t+1}, S_{t+1})`.
pub fn step<T: Scalar>(
    y: &Tensor3<T>,
    f: &TuckerFactors<T>,
    h: &HyperParams<T>,
    t: usize,
    cfg: &SolverConfig,
) -> Result<(TuckerFactors<T>, Tensor3<T>)> {
    if f.dims() != y.dims() || f.rank() != cfg.rank {
        return Err(Error::ShapeMismatch(format!(
            "factors {:?} rank {:?} vs observation {:?} rank {:?}",
            f.dims(),
            f.rank(),
            y.dims(),
            cfg.rank
        )));
    }
    let skipped = cfg.skipped_modes(y.dims());
    let x = reconstruct_skipping(f, skipped)?;
    advance(y, f, &x, h, t, skipped)
}

/// Runs `T` iterations from `init`, calling `observe(t, X_t, zeta_t)` for every
/// iterate including the last. The observer may abort the run.
pub(crate) fn unroll<T: Scalar>(
    y: &Tensor3<T>,
    init: TuckerFactors<T>,
    s0: Tensor3<T>,
    h: &HyperParams<T>,
    cfg: &SolverConfig,
    mut observe: impl FnMut(usize, &Tensor3<T>, &TuckerFactors<T>) -> Result<()>,
) -> Result<(TuckerFactors<T>, Tensor3<T>)> {
    let skipped = cfg.skipped_modes(y.dims());
    let mut f = init;
    let mut s = s0;
    for t in 0..cfg.iterations {
        let x = reconstruct_skipping(&f, skipped)?;
        observe(t, &x, &f)?;
        let (nf, ns) = advance(y, &f, &x, h, t, skipped)?;
        f = nf;
        s = ns;
    }
    let x = reconstruct_skipping(&f, skipped)?;
    observe(cfg.iterations, &x, &f)?;
    Ok((f, s))
}

/// Tracks ℒ_SSL across iterations and flags blow-ups.
pub(crate) struct DivergenceGuard {
    reference: Option<f64>,
    fallback: f64,
}

impl DivergenceGuard {
    /// `fallback` is used as the reference when the initial loss is exactly zero.
    pub(crate) fn new(fallback: f64) -> Self {
        Self {
            reference: None,
            fallback,
        }
    }

    pub(crate) fn check(&mut self, t: usize, loss: f64, factors_finite: bool) -> Result<()> {
        if !loss.is_finite() || !factors_finite {
            return Err(Error::SolverDivergence {
                iteration: t,
                reason: "non-finite iterate".into(),
            });
        }
        let reference = *self.reference.get_or_insert(if loss > 0.0 {
            loss
        } else {
            self.fallback
        });
        if loss > DIVERGENCE_FACTOR * reference {
            return Err(Error::SolverDivergence {
                iteration: t,
                reason: format!("loss {loss:e} exceeds {DIVERGENCE_FACTOR:e} x initial {reference:e}"),
            });
        }
        Ok(())
    }
}

/// Spectral initialization followed by `T` scaled gradient iterations.
///
/// Records ℒ_SSL (and the relative recovery error when `ground_truth` is
/// given) for every iterate `0..=T`.
pub fn solve(
    y: &Tensor3,
    cfg: &SolverConfig,
    h: &HyperParams,
    ground_truth: Option<&Tensor3>,
) -> std::result::Result<SolveTrace, SolveError> {
    let mut records = Vec::with_capacity(cfg.iterations + 1);
    let result = solve_inner(y, cfg, h, ground_truth, &mut records);
    match result {
        Ok((factors, sparse)) => Ok(SolveTrace {
            records,
            factors,
            sparse,
        }),
        Err(error) => Err(SolveError { error, records }),
    }
}

fn solve_inner(
    y: &Tensor3,
    cfg: &SolverConfig,
    h: &HyperParams,
    ground_truth: Option<&Tensor3>,
    records: &mut Vec<IterationRecord>,
) -> Result<(TuckerFactors, Tensor3)> {
    h.validate()?;
    cfg.rank.validate(y.dims())?;
    let y_sq = y.fro_sq();
    if y_sq == 0.0 {
        return Err(Error::DegenerateInput("observation is all zero".into()));
    }
    let truth_norm = match ground_truth {
        Some(x) => {
            x.check_same_dims(y)?;
            let n = x.fro_norm();
            if n == 0.0 {
                return Err(Error::DegenerateInput("ground truth is all zero".into()));
            }
            Some(n)
        }
        None => None,
    };

    let init = spectral_init(y, cfg, h)?;
    let s0 = shrink(y, h.zeta0)?;
    let mut guard = DivergenceGuard::new(y.l1() / y_sq);
    unroll(y, init, s0, h, cfg, |t, x, f| {
        let loss_ssl = y.sub(x)?.l1() / y_sq;
        let rel_error = match (ground_truth, truth_norm) {
            (Some(xs), Some(n)) => Some(xs.sub(x)?.fro_norm() / n),
            _ => None,
        };
        records.push(IterationRecord {
            t,
            loss_ssl,
            rel_error,
            zeta: h.schedule(t),
        });
        guard.check(t, loss_ssl, x.is_finite() && f.is_finite())
    })
}
