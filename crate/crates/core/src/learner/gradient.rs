//! Hyper-gradients of `loss(activate(raw))` through the unrolled solve.
//!
//! Two estimators: central differences in raw space (8 probe solves) and a
//! forward-mode pass carrying four tangents through every iteration. The
//! forward pass also differentiates the spectral initialization: the top
//! subspace of each unfolding moves with `zeta0` through first-order
//! eigenvector perturbation. Rotations inside that subspace are dropped since
//! the iterates do not depend on them.

use rayon::prelude::*;

use super::{activate, activation_slopes, ssl_of, LossKind, RawParams, ThresholdScale};
use crate::datagen::RpcaInstance;
use crate::error::{Error, ErrorClass, Result};
use crate::linalg::{symmetric_eigen, top_singular_vectors};
use crate::scalar::Dual4;
use crate::solver::{
    clip, project_core, shrink, solve, unroll, DivergenceGuard, HyperParams, SolveTrace,
    SolverConfig, TuckerFactors,
};
use crate::tensor::{Matrix, RankTriple, Tensor3};

const PROBES: [&str; 8] = ["+z0", "-z0", "+z1", "-z1", "+p", "-p", "+e", "-e"];

/// Loss, hyper-gradient and the solve at the base point.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loss: f64,
    /// Gradient with respect to `[z0, z1, p, e]`.
    pub gradient: [f64; 4],
    /// Solver runs spent, including the base point.
    pub solves: usize,
    pub trace: SolveTrace,
}

fn unavailable(probe: &str, e: Error) -> Error {
    if e.class() == ErrorClass::Numerical {
        Error::GradientUnavailable {
            probe: probe.to_string(),
            source: Box::new(e),
        }
    } else {
        e
    }
}

/// Solves at `raw` and returns the final-iterate loss with the trace.
pub fn evaluate(
    inst: &RpcaInstance,
    cfg: &SolverConfig,
    raw: &RawParams,
    kind: LossKind,
) -> Result<(f64, SolveTrace)> {
    kind.check(inst)?;
    raw.validate()?;
    let scale = ThresholdScale::of(&inst.y)?;
    let trace = solve(&inst.y, cfg, &activate(raw, &scale), inst.xstar.as_ref())?;
    let loss = match kind {
        LossKind::Ssl => trace.final_record().loss_ssl,
        _ => kind.of_factors(inst, &trace.factors)?,
    };
    Ok((loss, trace))
}

fn probe_loss(inst: &RpcaInstance, cfg: &SolverConfig, raw: &RawParams, kind: LossKind) -> Result<f64> {
    let scale = ThresholdScale::of(&inst.y)?;
    let trace = solve(&inst.y, cfg, &activate(raw, &scale), None)?;
    match kind {
        LossKind::Ssl => Ok(trace.final_record().loss_ssl),
        _ => kind.of_factors(inst, &trace.factors),
    }
}

/// Base-point loss together with the gradient from `tcfg.method`.
pub fn evaluate_with_gradient(
    inst: &RpcaInstance,
    cfg: &SolverConfig,
    raw: &RawParams,
    kind: LossKind,
    tcfg: &super::TrainConfig,
) -> Result<Evaluation> {
    let (loss, trace) = evaluate(inst, cfg, raw, kind).map_err(|e| unavailable("base", e))?;
    let (gradient, extra) = match tcfg.method {
        super::GradientMethod::CentralDiff => (central_diff(inst, cfg, raw, kind, tcfg.fd_step)?, 8),
        super::GradientMethod::ForwardDual => {
            let d = dual_loss(inst, cfg, raw, kind).map_err(|e| unavailable("forward", e))?;
            (d.eps, 1)
        }
    };
    Ok(Evaluation {
        loss,
        gradient,
        solves: 1 + extra,
        trace,
    })
}

/// Gradient of the final-iterate loss with respect to the raw parameters.
pub fn hyper_gradient(
    inst: &RpcaInstance,
    cfg: &SolverConfig,
    raw: &RawParams,
    kind: LossKind,
    tcfg: &super::TrainConfig,
) -> Result<[f64; 4]> {
    kind.check(inst)?;
    raw.validate()?;
    match tcfg.method {
        super::GradientMethod::CentralDiff => central_diff(inst, cfg, raw, kind, tcfg.fd_step),
        super::GradientMethod::ForwardDual => Ok(dual_loss(inst, cfg, raw, kind)
            .map_err(|e| unavailable("forward", e))?
            .eps),
    }
}

fn central_diff(
    inst: &RpcaInstance,
    cfg: &SolverConfig,
    raw: &RawParams,
    kind: LossKind,
    h: f64,
) -> Result<[f64; 4]> {
    let base = raw.as_array();
    let losses: Vec<Result<f64>> = (0..PROBES.len())
        .into_par_iter()
        .map(|j| {
            let mut x = base;
            x[j / 2] += if j % 2 == 0 { h } else { -h };
            probe_loss(inst, cfg, &RawParams::from_array(x), kind)
        })
        .collect();
    let mut values = [0.0; 8];
    for (j, l) in losses.into_iter().enumerate() {
        values[j] = l.map_err(|e| unavailable(PROBES[j], e))?;
    }
    Ok(std::array::from_fn(|k| (values[2 * k] - values[2 * k + 1]) / (2.0 * h)))
}

fn seeded(re: f64, k: usize, slope: f64) -> Dual4 {
    let mut eps = [0.0; 4];
    eps[k] = slope;
    Dual4::new(re, eps)
}

/// Runs the whole solve in dual numbers; the tangents of the returned loss are
/// its derivatives with respect to `[z0, z1, p, e]`.
pub(crate) fn dual_loss(
    inst: &RpcaInstance,
    cfg: &SolverConfig,
    raw: &RawParams,
    kind: LossKind,
) -> Result<Dual4> {
    let y = &inst.y;
    cfg.rank.validate(y.dims())?;
    let scale = ThresholdScale::of(y)?;
    let h = activate(raw, &scale);
    h.validate()?;
    let slopes = activation_slopes(raw, &scale);
    let hd = HyperParams {
        zeta0: seeded(h.zeta0, 0, slopes[0]),
        zeta1: seeded(h.zeta1, 1, slopes[1]),
        rho: seeded(h.rho, 2, slopes[2]),
        eta: seeded(h.eta, 3, slopes[3]),
    };

    let yd: Tensor3<Dual4> = y.lift();
    let clipped = clip(&yd, hd.zeta0)?;
    let skipped = cfg.skipped_modes(y.dims());
    let u = dual_bases(&clipped, cfg.rank, skipped)?;
    let core = project_core(&clipped, &u, skipped)?;
    let [u1, u2, u3] = u;
    let init = TuckerFactors::new(u1, u2, u3, core)?;
    let s0 = shrink(&yd, hd.zeta0)?;

    let mut guard = DivergenceGuard::new(y.l1_norm() / y.fro_sq());
    let mut last = None;
    unroll(&yd, init, s0, &hd, cfg, |t, x, _| {
        let l = ssl_of(y, x)?;
        let finite = x.data().iter().all(|v| v.re.is_finite());
        guard.check(t, l.re, finite)?;
        if t == cfg.iterations {
            last = Some(x.clone());
        }
        Ok(())
    })?;
    kind.of_reconstruction(inst, &last.expect("final iterate observed"))
}

/// Leading left singular vectors of each unfolding of `c`, with the tangent of
/// the first direction (`zeta0`) propagated through the subspace.
fn dual_bases(
    c: &Tensor3<Dual4>,
    rank: RankTriple,
    skipped: [bool; 3],
) -> Result<[Matrix<Dual4>; 3]> {
    let primal = c.primal();
    let tangent = Tensor3::from_vec(c.dims(), c.data().iter().map(|v| v.eps[0]).collect())?;
    let n = c.dims_array();
    let r = rank.as_array();
    let mut out: [Matrix<Dual4>; 3] = std::array::from_fn(|k| Matrix::identity(n[k]));
    for k in 0..3 {
        if skipped[k] {
            continue;
        }
        let m = primal.matricize(k + 1)?;
        let dm = tangent.matricize(k + 1)?;
        let u = top_singular_vectors(&m, r[k])?.u;
        let eig = symmetric_eigen(&m.matmul_t(&m)?)?;
        let da = dm.matmul_t(&m)?.add(&m.matmul_t(&dm)?)?;
        // Component of dA·u_i along each eigenvector v_j.
        let coords = eig.vectors.t_matmul(&da.matmul(&u)?)?;
        let floor = 1e-12 * eig.values[0].abs();
        let mut du = Matrix::zeros(n[k], r[k]);
        for i in 0..r[k] {
            for j in r[k]..n[k] {
                let gap = eig.values[i] - eig.values[j];
                if gap.abs() <= floor {
                    continue;
                }
                let coef = coords.get(j, i) / gap;
                for a in 0..n[k] {
                    du.set(a, i, du.get(a, i) + coef * eig.vectors.get(a, j));
                }
            }
        }
        out[k] = Matrix::from_fn(n[k], r[k], |a, i| {
            Dual4::new(u.get(a, i), [du.get(a, i), 0.0, 0.0, 0.0])
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::{GradientMethod, TrainConfig};
    use super::*;
    use crate::datagen::{gen_instance, SparsityModel};

    fn instance(n: usize, r: usize, alpha: f64, seed: u64) -> RpcaInstance {
        gen_instance(n, r, alpha, 3.0, SparsityModel::EntrywiseBernoulli(alpha), seed).unwrap()
    }

    fn fd(h: f64) -> TrainConfig {
        TrainConfig {
            fd_step: h,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn init_only_has_dead_parameters() {
        let inst = instance(8, 2, 0.1, 1);
        let cfg = SolverConfig::new(RankTriple::uniform(2), 0);
        let g = hyper_gradient(&inst, &cfg, &RawParams::default(), LossKind::Ssl, &fd(1e-4)).unwrap();
        assert_eq!(g[2], 0.0);
        assert_eq!(g[3], 0.0);
        assert_eq!(g[1], 0.0);
        assert!(g[0] != 0.0);
    }

    #[test]
    fn richardson_step_halving() {
        let inst = instance(10, 2, 0.1, 2);
        let cfg = SolverConfig::new(RankTriple::uniform(2), 60);
        let raw = RawParams::default();
        // Small steps keep the probes clear of shrinkage support changes.
        let g1 = hyper_gradient(&inst, &cfg, &raw, LossKind::Ssl, &fd(4e-5)).unwrap();
        let g2 = hyper_gradient(&inst, &cfg, &raw, LossKind::Ssl, &fd(2e-5)).unwrap();
        let g4 = hyper_gradient(&inst, &cfg, &raw, LossKind::Ssl, &fd(1e-5)).unwrap();
        let scale = g2.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for k in 0..4 {
            let (d1, d2) = ((g1[k] - g2[k]).abs(), (g2[k] - g4[k]).abs());
            // O(h²): halving the step cuts the disagreement about fourfold,
            // unless both are already at the rounding floor.
            assert!(d2 <= 1e-5 * scale || d2 <= 0.5 * d1, "{k}: {d1:e} {d2:e} {g2:?}");
        }
    }

    #[test]
    fn forward_dual_matches_central_differences() {
        let inst = instance(10, 2, 0.1, 3);
        let cfg = SolverConfig::new(RankTriple::uniform(2), 15);
        let raw = RawParams::default();
        let g_fd = hyper_gradient(&inst, &cfg, &raw, LossKind::Sl, &fd(1e-5)).unwrap();
        let dual = TrainConfig {
            method: GradientMethod::ForwardDual,
            ..TrainConfig::default()
        };
        let g_ad = hyper_gradient(&inst, &cfg, &raw, LossKind::Sl, &dual).unwrap();
        let scale = g_fd.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for k in 0..4 {
            assert!((g_fd[k] - g_ad[k]).abs() <= 1e-4 * scale, "{k}: {g_fd:?} vs {g_ad:?}");
        }
    }

    #[test]
    fn dual_primal_matches_plain_solve() {
        let inst = instance(8, 2, 0.2, 4);
        let cfg = SolverConfig::new(RankTriple::uniform(2), 12);
        let raw = RawParams::default();
        let (plain, _) = evaluate(&inst, &cfg, &raw, LossKind::Ssl).unwrap();
        let dual = dual_loss(&inst, &cfg, &raw, LossKind::Ssl).unwrap();
        assert!((plain - dual.re).abs() <= 1e-10 * plain);
    }

    #[test]
    fn divergent_probe_is_named() {
        let inst = instance(10, 2, 0.1, 4);
        let cfg = SolverConfig::new(RankTriple::uniform(2), 50);
        // eta = softplus(e) ≈ 1e3 diverges on the base point already.
        let raw = RawParams {
            e: 1e3,
            ..RawParams::default()
        };
        match evaluate_with_gradient(&inst, &cfg, &raw, LossKind::Ssl, &fd(1e-4)) {
            Err(Error::GradientUnavailable { probe, .. }) => assert_eq!(probe, "base"),
            other => panic!("expected an unavailable gradient, got {other:?}"),
        }
    }
}
