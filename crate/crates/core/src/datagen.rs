//! Synthetic tensor RPCA instances.
//!
//! The low-rank part is `(U1, U2, U3) · G` with orthonormal Gaussian factors
//! and a superdiagonal core `G[i,i,i] = κ^{-(i-1)/(r-1)}`. The corruption is
//! uniform on `(-θ, θ)` with `θ = ‖X‖_1 / (n1 n2 n3)` of the realized low-rank
//! tensor, placed either entrywise at random or with an exact count per fiber.
//!
//! Randomness comes from ChaCha8 with one stream per tensor role, so each role
//! draws the same numbers whatever else was generated before it.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{multilinear_product, Matrix, RankTriple, Tensor3};
use crate::solver::TuckerFactors;

/// Stream identifiers for the per-role generators.
#[derive(Clone, Copy, Debug)]
#[repr(u64)]
pub enum Role {
    Factor1 = 1,
    Factor2 = 2,
    Factor3 = 3,
    Support = 4,
    Values = 5,
}

/// Generator for one `(seed, role)` pair.
pub fn role_rng(seed: u64, role: Role) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(role as u64);
    rng
}

/// Where the nonzeros of the corruption go.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparsityModel {
    /// Each entry is corrupted independently with probability `alpha`.
    EntrywiseBernoulli(f64),
    /// Every mode-`mode` fiber has exactly `floor(alpha * len)` nonzeros.
    PerFiberExact { alpha: f64, mode: usize },
}

impl SparsityModel {
    pub fn alpha(&self) -> f64 {
        match *self {
            SparsityModel::EntrywiseBernoulli(a) => a,
            SparsityModel::PerFiberExact { alpha, .. } => alpha,
        }
    }

    fn validate(&self) -> Result<()> {
        let a = self.alpha();
        if !(0.0..1.0).contains(&a) {
            return Err(Error::InvalidParameter(format!("alpha {a} outside [0, 1)")));
        }
        if let SparsityModel::PerFiberExact { mode, .. } = *self {
            crate::tensor::check_mode(mode)?;
        }
        Ok(())
    }
}

/// Generation parameters carried alongside an instance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub n: usize,
    pub r: usize,
    pub alpha: f64,
    pub kappa: f64,
    pub theta: f64,
    pub model: SparsityModel,
    pub seed: u64,
}

/// One tensor RPCA problem: the observation plus whatever labels exist.
#[derive(Clone, Debug)]
pub struct RpcaInstance {
    pub y: Tensor3,
    pub rank: RankTriple,
    pub xstar: Option<Tensor3>,
    pub sstar: Option<Tensor3>,
    /// Binary foreground mask, 1 where the observation is corrupted.
    pub mask: Option<Tensor3>,
    pub meta: Option<InstanceMeta>,
}

impl RpcaInstance {
    /// An unlabeled observation.
    pub fn observed(y: Tensor3, rank: RankTriple) -> Result<Self> {
        rank.validate(y.dims())?;
        Ok(Self {
            y,
            rank,
            xstar: None,
            sstar: None,
            mask: None,
            meta: None,
        })
    }

    pub fn with_mask(mut self, mask: Tensor3) -> Result<Self> {
        mask.check_same_dims(&self.y)?;
        crate::io::validate_mask(&mask)?;
        self.mask = Some(mask);
        Ok(self)
    }

    /// Attaches the mask `1[S★ ≠ 0]`.
    pub fn with_support_mask(self) -> Result<Self> {
        let s = self
            .sstar
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("no sparse ground truth to derive a mask".into()))?;
        let mask = s.map(|v| if v != 0.0 { 1.0 } else { 0.0 });
        self.with_mask(mask)
    }
}

/// `n × r` matrix with orthonormal columns: Gaussian entries followed by
/// modified Gram-Schmidt with a re-orthogonalization pass.
pub fn random_orthonormal(n: usize, r: usize, rng: &mut impl Rng) -> Result<Matrix> {
    if r == 0 || r > n {
        return Err(Error::InvalidRank(format!("{r} orthonormal columns in R^{n}")));
    }
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(r);
    while cols.len() < r {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let before = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for _ in 0..2 {
            for q in &cols {
                let dot: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= dot * qi;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        // resample on (astronomically unlikely) near-dependence
        if norm <= 1e-8 * before {
            continue;
        }
        cols.push(v.into_iter().map(|x| x / norm).collect());
    }
    Ok(Matrix::from_fn(n, r, |i, j| cols[j][i]))
}

/// Superdiagonal core values `κ^{-(i-1)/(r-1)}`, `i = 1..=r`.
pub fn core_diagonal(r: usize, kappa: f64) -> Result<Vec<f64>> {
    if !(kappa >= 1.0) || !kappa.is_finite() {
        return Err(Error::InvalidParameter(format!("kappa {kappa} must be >= 1")));
    }
    if r == 0 {
        return Err(Error::InvalidRank("r must be positive".into()));
    }
    if r == 1 {
        return Ok(vec![1.0]);
    }
    Ok((0..r)
        .map(|i| kappa.powf(-(i as f64) / (r as f64 - 1.0)))
        .collect())
}

/// Rank-`(r, r, r)` tensor of shape `n × n × n` with condition number `kappa`.
pub fn gen_low_rank(n: usize, r: usize, kappa: f64, seed: u64) -> Result<(Tensor3, TuckerFactors)> {
    if r == 0 || r > n {
        return Err(Error::InvalidRank(format!("r = {r} with n = {n}")));
    }
    let diag = core_diagonal(r, kappa)?;
    let mut core = Tensor3::zeros((r, r, r));
    for (i, &d) in diag.iter().enumerate() {
        core.set(i, i, i, d);
    }
    let u1 = random_orthonormal(n, r, &mut role_rng(seed, Role::Factor1))?;
    let u2 = random_orthonormal(n, r, &mut role_rng(seed, Role::Factor2))?;
    let u3 = random_orthonormal(n, r, &mut role_rng(seed, Role::Factor3))?;
    let x = multilinear_product(&u1, &u2, &u3, &core)?;
    Ok((x, TuckerFactors::new(u1, u2, u3, core)?))
}

/// Sparse corruption with values uniform on `(-theta, theta)`.
pub fn gen_sparse(
    dims: (usize, usize, usize),
    model: SparsityModel,
    theta: f64,
    seed: u64,
) -> Result<Tensor3> {
    model.validate()?;
    if !(theta >= 0.0) || !theta.is_finite() {
        return Err(Error::InvalidParameter(format!("theta {theta} must be >= 0")));
    }
    let mut out = Tensor3::zeros(dims);
    if model.alpha() == 0.0 || theta == 0.0 {
        return Ok(out);
    }
    let mut support = role_rng(seed, Role::Support);
    let mut values = role_rng(seed, Role::Values);
    let draw = |rng: &mut ChaCha8Rng| {
        // Uniform on [-θ, θ); the endpoint -θ has probability zero in practice.
        rng.random_range(-theta..theta)
    };
    match model {
        SparsityModel::EntrywiseBernoulli(alpha) => {
            for v in out.data_mut() {
                if support.random::<f64>() < alpha {
                    *v = draw(&mut values);
                }
            }
        }
        SparsityModel::PerFiberExact { alpha, mode } => {
            let n = [dims.0, dims.1, dims.2];
            let len = n[mode - 1];
            let count = (alpha * len as f64).floor() as usize;
            let others: Vec<usize> = (0..3).filter(|&k| k != mode - 1).collect();
            for a in 0..n[others[0]] {
                for b in 0..n[others[1]] {
                    for pos in sample(&mut support, len, count).iter() {
                        let mut idx = [0usize; 3];
                        idx[others[0]] = a;
                        idx[others[1]] = b;
                        idx[mode - 1] = pos;
                        out.set(idx[0], idx[1], idx[2], draw(&mut values));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// A full synthetic instance `Y = X★ + S★` of shape `n × n × n`.
pub fn gen_instance(
    n: usize,
    r: usize,
    alpha: f64,
    kappa: f64,
    model: SparsityModel,
    seed: u64,
) -> Result<RpcaInstance> {
    let model = match model {
        SparsityModel::EntrywiseBernoulli(_) => SparsityModel::EntrywiseBernoulli(alpha),
        SparsityModel::PerFiberExact { mode, .. } => SparsityModel::PerFiberExact { alpha, mode },
    };
    let (x, _) = gen_low_rank(n, r, kappa, seed)?;
    let theta = x.l1_norm() / x.len() as f64;
    let s = gen_sparse(x.dims(), model, theta, seed)?;
    let y = x.add(&s)?;
    Ok(RpcaInstance {
        y,
        rank: RankTriple::uniform(r),
        xstar: Some(x),
        sstar: Some(s),
        mask: None,
        meta: Some(InstanceMeta {
            n,
            r,
            alpha,
            kappa,
            theta,
            model,
            seed,
        }),
    })
}

/// Parameters of a synthetic family, convenient for training callbacks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceFamily {
    pub n: usize,
    pub r: usize,
    pub alpha: f64,
    pub kappa: f64,
    #[serde(default = "default_model")]
    pub model: SparsityModel,
}

fn default_model() -> SparsityModel {
    SparsityModel::EntrywiseBernoulli(0.0)
}

impl InstanceFamily {
    pub fn new(n: usize, r: usize, alpha: f64, kappa: f64) -> Self {
        Self {
            n,
            r,
            alpha,
            kappa,
            model: SparsityModel::EntrywiseBernoulli(alpha),
        }
    }

    pub fn sample(&self, seed: u64) -> Result<RpcaInstance> {
        gen_instance(self.n, self.r, self.alpha, self.kappa, self.model, seed)
    }
}

/// Mixes a base seed with an index (SplitMix64 finalizer).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::top_singular_vectors;
    use crate::linalg::oracle::hestenes_singular_values;

    fn det3(m: &Matrix) -> f64 {
        let g = |i, j| m.get(i, j);
        g(0, 0) * (g(1, 1) * g(2, 2) - g(1, 2) * g(2, 1)) - g(0, 1) * (g(1, 0) * g(2, 2) - g(1, 2) * g(2, 0))
            + g(0, 2) * (g(1, 0) * g(2, 1) - g(1, 1) * g(2, 0))
    }

    #[test]
    fn orthonormal_square_and_tall() {
        let q = random_orthonormal(3, 3, &mut role_rng(1, Role::Factor1)).unwrap();
        assert!((det3(&q).abs() - 1.0).abs() < 1e-10);
        for seed in 0..5 {
            let u = random_orthonormal(20, 6, &mut role_rng(seed, Role::Factor2)).unwrap();
            let g = u.t_matmul(&u).unwrap();
            assert!(g.sub(&Matrix::identity(6)).unwrap().max_abs() < 1e-10);
        }
        assert!(random_orthonormal(3, 4, &mut role_rng(1, Role::Factor1)).is_err());
    }

    #[test]
    fn orthonormal_determinism() {
        let a = random_orthonormal(10, 3, &mut role_rng(7, Role::Factor1)).unwrap();
        let b = random_orthonormal(10, 3, &mut role_rng(7, Role::Factor1)).unwrap();
        let c = random_orthonormal(10, 3, &mut role_rng(8, Role::Factor1)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn core_diagonal_values() {
        assert_eq!(core_diagonal(4, 1.0).unwrap(), vec![1.0; 4]);
        let d = core_diagonal(3, 5.0).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-15);
        assert!((d[1] - 0.4472135954999579).abs() < 1e-12);
        assert!((d[2] - 0.2).abs() < 1e-15);
        assert_eq!(core_diagonal(1, 5.0).unwrap(), vec![1.0]);
        assert!(core_diagonal(3, 0.5).is_err());
    }

    #[test]
    fn low_rank_condition_number_and_rank() {
        let (x, _) = gen_low_rank(12, 3, 5.0, 3).unwrap();
        for k in 1..=3 {
            let m = x.matricize(k).unwrap();
            let svd = top_singular_vectors(&m, 3).unwrap();
            let s = &svd.singular_values;
            assert!((s[0] / s[2] - 5.0).abs() < 1e-8, "{s:?}");
            // The Gram route floors small singular values near sqrt(eps)·σ1,
            // so the trailing ones come from the one-sided Jacobi oracle.
            let exact = hestenes_singular_values(&m.transpose());
            assert!(exact[3] <= 1e-10, "{exact:?}");
        }
        let (x, _) = gen_low_rank(8, 3, 1.0, 4).unwrap();
        let svd = top_singular_vectors(&x.matricize(1).unwrap(), 3).unwrap();
        assert!((svd.singular_values[0] - svd.singular_values[2]).abs() < 1e-10);
    }

    #[test]
    fn sparse_zero_alpha() {
        let s = gen_sparse((4, 4, 4), SparsityModel::EntrywiseBernoulli(0.0), 1.0, 1).unwrap();
        assert_eq!(s, Tensor3::zeros((4, 4, 4)));
    }

    #[test]
    fn per_fiber_exact_counts() {
        for mode in 1..=3 {
            let s = gen_sparse(
                (10, 10, 10),
                SparsityModel::PerFiberExact { alpha: 0.5, mode },
                1.0,
                2,
            )
            .unwrap();
            for a in 0..10 {
                for b in 0..10 {
                    let count = (0..10)
                        .filter(|&c| {
                            let v = match mode {
                                1 => s.get(c, a, b),
                                2 => s.get(a, c, b),
                                _ => s.get(a, b, c),
                            };
                            v != 0.0
                        })
                        .count();
                    assert_eq!(count, 5);
                }
            }
        }
    }

    #[test]
    fn bernoulli_fraction_within_three_sigma() {
        let n = 50usize;
        let s = gen_sparse((n, n, n), SparsityModel::EntrywiseBernoulli(0.3), 1.0, 5).unwrap();
        let total = (n * n * n) as f64;
        let nz = s.data().iter().filter(|&&v| v != 0.0).count() as f64;
        let sigma = (total * 0.3 * 0.7).sqrt();
        assert!((nz - 0.3 * total).abs() <= 3.0 * sigma, "{nz}");
        assert!(s.linf_norm() <= 1.0);
    }

    #[test]
    fn instance_invariants() {
        let inst = gen_instance(12, 2, 0.2, 5.0, SparsityModel::EntrywiseBernoulli(0.2), 9).unwrap();
        let x = inst.xstar.as_ref().unwrap();
        let s = inst.sstar.as_ref().unwrap();
        assert_eq!(inst.y, x.add(s).unwrap());
        assert!(inst.y.sub(x).unwrap().sub(s).unwrap().linf_norm() <= 1e-12);
        let meta = inst.meta.unwrap();
        assert!((meta.theta - x.l1_norm() / 1728.0).abs() < 1e-15);
        assert!(s.linf_norm() <= meta.theta);

        let clean = gen_instance(8, 2, 0.0, 5.0, SparsityModel::EntrywiseBernoulli(0.0), 1).unwrap();
        assert_eq!(&clean.y, clean.xstar.as_ref().unwrap());
    }

    #[test]
    fn instance_determinism() {
        let a = gen_instance(10, 2, 0.3, 5.0, SparsityModel::EntrywiseBernoulli(0.3), 42).unwrap();
        let b = gen_instance(10, 2, 0.3, 5.0, SparsityModel::EntrywiseBernoulli(0.3), 42).unwrap();
        assert_eq!(a.y, b.y);
        let c = gen_instance(10, 2, 0.3, 5.0, SparsityModel::EntrywiseBernoulli(0.3), 43).unwrap();
        assert_ne!(a.y, c.y);
    }

    #[test]
    fn paper_grid_cell_configuration() {
        // One cell of the full-size grid; n = 100 is too slow to solve here but
        // generation itself must work and honor the shape.
        let inst = gen_instance(100, 10, 0.1, 5.0, SparsityModel::EntrywiseBernoulli(0.1), 0).unwrap();
        assert_eq!(inst.y.dims(), (100, 100, 100));
        assert_eq!(inst.rank, RankTriple::uniform(10));
    }

    #[test]
    fn support_mask_matches_sparse_part() {
        let inst = gen_instance(8, 2, 0.3, 5.0, SparsityModel::EntrywiseBernoulli(0.3), 2)
            .unwrap()
            .with_support_mask()
            .unwrap();
        let m = inst.mask.as_ref().unwrap();
        for (mv, sv) in m.data().iter().zip(inst.sstar.as_ref().unwrap().data()) {
            assert_eq!(*mv == 1.0, *sv != 0.0);
        }
    }

    #[test]
    fn meta_json_round_trip() {
        let inst = gen_instance(6, 2, 0.25, 2.0, SparsityModel::PerFiberExact { alpha: 0.25, mode: 2 }, 5).unwrap();
        let meta = inst.meta.unwrap();
        let text = serde_json::to_string(&meta).unwrap();
        assert_eq!(serde_json::from_str::<InstanceMeta>(&text).unwrap(), meta);
        let m: SparsityModel = serde_json::from_str(r#"{"entrywise_bernoulli": 0.1}"#).unwrap();
        assert_eq!(m, SparsityModel::EntrywiseBernoulli(0.1));
    }
}
