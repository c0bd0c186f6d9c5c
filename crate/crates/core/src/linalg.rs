//! Dense kernels: truncated left singular vectors through a cyclic Jacobi
//! eigensolver on the smaller Gram matrix, and Cholesky-based inverses of
//! small symmetric positive-definite matrices.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

pub const MAX_SWEEPS: usize = 100;
pub const JACOBI_TOL: f64 = 1e-12;
pub const MAX_CONDITION: f64 = 1e12;

/// Leading left singular vectors and their singular values.
#[derive(Clone, Debug)]
pub struct ThinSvd {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
}

/// Full eigendecomposition of a symmetric matrix, eigenvalues descending.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// Eigenvectors as columns, in the order of `values`.
    pub vectors: Matrix,
}

fn off_diagonal_norm(a: &[f64], n: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += a[i * n + j] * a[i * n + j];
            }
        }
    }
    acc.sqrt()
}

fn sweep(a: &mut [f64], v: &mut [f64], n: usize) {
    for p in 0..n {
        for q in p + 1..n {
            let apq = a[p * n + q];
            let app = a[p * n + p];
            let aqq = a[q * n + q];
            if apq.abs() <= 1e-18 * (app.abs() + aqq.abs()) || apq == 0.0 {
                continue;
            }
            let theta = (aqq - app) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for k in 0..n {
                let akp = a[k * n + p];
                let akq = a[k * n + q];
                a[k * n + p] = c * akp - s * akq;
                a[k * n + q] = s * akp + c * akq;
            }
            for k in 0..n {
                let apk = a[p * n + k];
                let aqk = a[q * n + k];
                a[p * n + k] = c * apk - s * aqk;
                a[q * n + k] = s * apk + c * aqk;
            }
            for k in 0..n {
                let vkp = v[k * n + p];
                let vkq = v[k * n + q];
                v[k * n + p] = c * vkp - s * vkq;
                v[k * n + q] = s * vkp + c * vkq;
            }
        }
    }
}

/// Cyclic Jacobi eigensolver. Stops once the off-diagonal Frobenius norm drops
/// below `JACOBI_TOL * ‖A‖_F`; exceeding [`MAX_SWEEPS`] is an error.
///
/// Eigenvalues are sorted descending with a stable sort, so equal eigenvalues
/// keep their original column order.
pub fn symmetric_eigen(m: &Matrix) -> Result<SymmetricEigen> {
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::ShapeMismatch(format!(
            "eigen of a non-square {:?} matrix",
            m.shape()
        )));
    }
    let mut a = m.data().to_vec();
    let mut v = Matrix::<f64>::identity(n).into_data();
    let tol = JACOBI_TOL * m.fro_norm();

    let mut converged = off_diagonal_norm(&a, n) <= tol;
    let mut sweeps = 0;
    while !converged {
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence(MAX_SWEEPS));
        }
        sweeps += 1;
        sweep(&mut a, &mut v, n);
        converged = off_diagonal_norm(&a, n) <= tol;
    }
    // Convergence is quadratic, so one more sweep takes the off-diagonal part
    // from the tolerance down to rounding level.
    if sweeps > 0 {
        sweep(&mut a, &mut v, n);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = Matrix::from_fn(n, n, |row, col| v[row * n + order[col]]);
    Ok(SymmetricEigen { values, vectors })
}

/// Flips each column so that its largest-magnitude entry (first on ties) is positive.
fn normalize_signs(u: &mut Matrix) {
    for j in 0..u.cols() {
        let mut best = 0;
        let mut best_abs = -1.0;
        for i in 0..u.rows() {
            let a = u.get(i, j).abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if u.get(best, j) < 0.0 {
            for i in 0..u.rows() {
                u.set(i, j, -u.get(i, j));
            }
        }
    }
}

/// Modified Gram-Schmidt with a second pass. Columns that vanish after
/// projection are replaced by the first standard basis vector that survives.
fn orthonormalize_columns(u: &mut Matrix) {
    let (n, r) = u.shape();
    let mut basis_candidate = 0;
    for j in 0..r {
        let mut col = u.column(j);
        let original = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        for _ in 0..2 {
            for prev in 0..j {
                let dot: f64 = (0..n).map(|i| u.get(i, prev) * col[i]).sum();
                for (i, c) in col.iter_mut().enumerate() {
                    *c -= dot * u.get(i, prev);
                }
            }
        }
        let mut norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        while norm <= 1e-10 * original.max(1.0) && basis_candidate < n {
            col = vec![0.0; n];
            col[basis_candidate] = 1.0;
            basis_candidate += 1;
            for _ in 0..2 {
                for prev in 0..j {
                    let dot: f64 = (0..n).map(|i| u.get(i, prev) * col[i]).sum();
                    for (i, c) in col.iter_mut().enumerate() {
                        *c -= dot * u.get(i, prev);
                    }
                }
            }
            norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        for (i, c) in col.iter().enumerate() {
            u.set(i, j, c / norm);
        }
    }
}

/// Top-`r` left singular vectors of `m`.
///
/// Uses the eigendecomposition of `M Mᵀ` when `m` is wide and of `MᵀM` when it
/// is tall, recovering `U = M V Σ⁻¹` in the latter case.
pub fn top_singular_vectors(m: &Matrix, r: usize) -> Result<ThinSvd> {
    let (rows, cols) = m.shape();
    if r == 0 || r > rows.min(cols) {
        return Err(Error::InvalidRank(format!(
            "{r} singular vectors requested from a {rows}x{cols} matrix"
        )));
    }
    let mut u;
    let mut sv: Vec<f64>;
    if rows <= cols {
        let eig = symmetric_eigen(&m.matmul_t(m)?)?;
        sv = eig.values[..r].iter().map(|&l| l.max(0.0).sqrt()).collect();
        u = Matrix::from_fn(rows, r, |i, j| eig.vectors.get(i, j));
    } else {
        let eig = symmetric_eigen(&m.t_matmul(m)?)?;
        sv = eig.values[..r].iter().map(|&l| l.max(0.0).sqrt()).collect();
        let v = Matrix::from_fn(cols, r, |i, j| eig.vectors.get(i, j));
        u = m.matmul(&v)?;
        let floor = 1e-10 * sv[0];
        for (j, s) in sv.iter_mut().enumerate() {
            if *s > floor && *s > 0.0 {
                for i in 0..rows {
                    u.set(i, j, u.get(i, j) / *s);
                }
            } else {
                *s = 0.0;
                for i in 0..rows {
                    u.set(i, j, 0.0);
                }
            }
        }
        orthonormalize_columns(&mut u);
    }
    normalize_signs(&mut u);
    Ok(ThinSvd {
        u,
        singular_values: sv,
    })
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
///
/// Symmetry, definiteness and the 1-norm condition number are all judged on the
/// primal part; the tangent part of a dual input is carried through exactly.
pub fn spd_inverse<T: Scalar>(m: &Matrix<T>) -> Result<Matrix<T>> {
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::ShapeMismatch(format!(
            "inverse of a non-square {:?} matrix",
            m.shape()
        )));
    }
    let scale = m.data().iter().fold(0.0f64, |acc, v| acc.max(v.re().abs()));
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            asym = asym.max((m.get(i, j).re() - m.get(j, i).re()).abs());
        }
    }
    if asym > 1e-10 * scale.max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }

    // Cholesky, lower triangle.
    let mut l = Matrix::<T>::zeros(n, n);
    for j in 0..n {
        let mut d = m.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if d.re() <= 0.0 || !d.re().is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        let ljj = d.sqrt();
        l.set(j, j, ljj);
        for i in j + 1..n {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / ljj);
        }
    }

    // L^{-1} by forward substitution, then M^{-1} = L^{-T} L^{-1}.
    let mut linv = Matrix::<T>::zeros(n, n);
    for col in 0..n {
        for i in col..n {
            let mut s = if i == col { T::one() } else { T::zero() };
            for k in col..i {
                s -= l.get(i, k) * linv.get(k, col);
            }
            linv.set(i, col, s / l.get(i, i));
        }
    }
    let inv = linv.t_matmul(&linv)?;

    let norm1 = |a: &Matrix<T>| {
        (0..n)
            .map(|j| (0..n).map(|i| a.get(i, j).re().abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let cond = norm1(m) * norm1(&inv);
    if !cond.is_finite() || cond > MAX_CONDITION {
        return Err(Error::IllConditioned(cond));
    }
    Ok(inv)
}


#[cfg(test)]
mod tests {
    use super::oracle::hestenes_singular_values;
    use super::*;
    use crate::scalar::Dual4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(r: usize, c: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn diag(v: &[f64]) -> Matrix {
        Matrix::from_fn(v.len(), v.len(), |i, j| if i == j { v[i] } else { 0.0 })
    }

    #[test]
    fn hestenes_oracle_on_diagonal() {
        let sv = hestenes_singular_values(&diag(&[2.0, -5.0, 1.0]));
        assert_eq!(sv, vec![5.0, 2.0, 1.0]);
    }

    #[test]
    fn identity_and_diagonal() {
        let svd = top_singular_vectors(&Matrix::identity(3), 2).unwrap();
        assert_eq!(svd.u, Matrix::from_fn(3, 2, |i, j| (i == j) as u8 as f64));
        assert_eq!(svd.singular_values, vec![1.0, 1.0]);

        let svd = top_singular_vectors(&diag(&[3.0, 2.0, 1.0]), 1).unwrap();
        assert_eq!(svd.u, Matrix::from_vec(3, 1, vec![1.0, 0.0, 0.0]).unwrap());
        assert!((svd.singular_values[0] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn singular_values_match_jacobi_oracle() {
        let m = random_matrix(8, 6, 3);
        let oracle = hestenes_singular_values(&m);
        let svd = top_singular_vectors(&m, 3).unwrap();
        for (s, o) in svd.singular_values.iter().zip(&oracle) {
            assert!((s - o).abs() < 1e-9, "{s} vs {o}");
        }
        let wide = m.transpose();
        let svd = top_singular_vectors(&wide, 3).unwrap();
        for (s, o) in svd.singular_values.iter().zip(&oracle) {
            assert!((s - o).abs() < 1e-9, "{s} vs {o}");
        }
    }

    #[test]
    fn orthonormal_and_sorted() {
        for (rows, cols, seed) in [(8, 6, 1), (5, 12, 2), (7, 7, 3)] {
            let m = random_matrix(rows, cols, seed);
            let svd = top_singular_vectors(&m, 4).unwrap();
            let gram = svd.u.t_matmul(&svd.u).unwrap();
            assert!(gram.sub(&Matrix::identity(4)).unwrap().max_abs() < 1e-10);
            assert!(svd.singular_values.windows(2).all(|w| w[0] >= w[1]));
            for j in 0..4 {
                let col = svd.u.column(j);
                let big = col.iter().fold(0.0f64, |a, v| if v.abs() > a.abs() { *v } else { a });
                assert!(big > 0.0);
            }
        }
    }

    #[test]
    fn exact_rank_reconstruction() {
        for (rows, cols) in [(9, 5), (5, 9)] {
            let a = random_matrix(rows, 3, 10);
            let b = random_matrix(3, cols, 11);
            let m = a.matmul(&b).unwrap();
            let u = top_singular_vectors(&m, 3).unwrap().u;
            let proj = u.matmul(&u.t_matmul(&m).unwrap()).unwrap();
            let err = m.sub(&proj).unwrap().fro_norm() / m.fro_norm();
            assert!(err < 1e-9, "{err}");
        }
    }

    #[test]
    fn projection_beats_random_subspace() {
        let m = random_matrix(10, 7, 21);
        let u = top_singular_vectors(&m, 3).unwrap().u;
        let resid = |q: &Matrix| {
            m.sub(&q.matmul(&q.t_matmul(&m).unwrap()).unwrap())
                .unwrap()
                .fro_norm()
        };
        let best = resid(&u);
        for seed in 0..20 {
            let mut q = random_matrix(10, 3, 100 + seed);
            orthonormalize_columns(&mut q);
            assert!(best <= resid(&q) + 1e-8);
        }
    }

    #[test]
    fn zero_matrix_tall_gets_orthonormal_completion() {
        let svd = top_singular_vectors(&Matrix::zeros(6, 3), 2).unwrap();
        let gram = svd.u.t_matmul(&svd.u).unwrap();
        assert!(gram.sub(&Matrix::identity(2)).unwrap().max_abs() < 1e-12);
        assert_eq!(svd.singular_values, vec![0.0, 0.0]);
    }

    #[test]
    fn rank_out_of_range() {
        let m = random_matrix(3, 5, 1);
        assert!(matches!(top_singular_vectors(&m, 0), Err(Error::InvalidRank(_))));
        assert!(matches!(top_singular_vectors(&m, 4), Err(Error::InvalidRank(_))));
    }

    #[test]
    fn spd_inverse_cases() {
        assert_eq!(spd_inverse(&Matrix::<f64>::identity(3)).unwrap(), Matrix::identity(3));
        let inv = spd_inverse(&diag(&[4.0, 1.0])).unwrap();
        assert!(inv.sub(&diag(&[0.25, 1.0])).unwrap().max_abs() < 1e-15);

        let a = random_matrix(5, 5, 7);
        let m = a.t_matmul(&a).unwrap().add(&Matrix::identity(5)).unwrap();
        let inv = spd_inverse(&m).unwrap();
        let prod = inv.matmul(&m).unwrap();
        assert!(prod.sub(&Matrix::identity(5)).unwrap().max_abs() < 1e-8);
        let back = spd_inverse(&inv).unwrap();
        assert!(back.sub(&m).unwrap().fro_norm() / m.fro_norm() < 1e-6);
    }

    #[test]
    fn spd_inverse_errors() {
        let asym = Matrix::from_vec(2, 2, vec![1.0, 0.5, 0.0, 1.0]).unwrap();
        assert!(matches!(spd_inverse(&asym), Err(Error::NotSymmetric(_))));
        assert!(matches!(
            spd_inverse(&diag(&[1.0, -1.0])),
            Err(Error::NotPositiveDefinite)
        ));
        assert!(matches!(
            spd_inverse(&diag(&[1.0, 1e-14])),
            Err(Error::IllConditioned(_))
        ));
    }

    #[test]
    fn spd_inverse_dual_tangent() {
        // d(M^{-1}) = -M^{-1} dM M^{-1}; for M = diag(x, 2) with dx = 1, d/dx (1/x) = -1/x^2.
        let x = Dual4::new(4.0, [1.0, 0.0, 0.0, 0.0]);
        let m = Matrix::from_vec(
            2,
            2,
            vec![x, Dual4::constant(0.0), Dual4::constant(0.0), Dual4::constant(2.0)],
        )
        .unwrap();
        let inv = spd_inverse(&m).unwrap();
        assert!((inv.get(0, 0).re - 0.25).abs() < 1e-15);
        assert!((inv.get(0, 0).eps[0] + 1.0 / 16.0).abs() < 1e-15);
        assert_eq!(inv.get(1, 1).eps[0], 0.0);
    }

    #[test]
    fn eigen_of_symmetric() {
        let a = random_matrix(6, 6, 9);
        let s = a.add(&a.transpose()).unwrap();
        let eig = symmetric_eigen(&s).unwrap();
        let recon = eig
            .vectors
            .matmul(&diag(&eig.values))
            .unwrap()
            .matmul_t(&eig.vectors)
            .unwrap();
        assert!(recon.sub(&s).unwrap().max_abs() < 1e-12);
        assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
    }
}
