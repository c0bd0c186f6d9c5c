//! Dense third-order tensors, dense matrices and the multilinear algebra the
//! solver is built from.
//!
//! Storage is row-major with the third index fastest. Mode-`k` unfoldings use
//! the column ordering in which the *earlier* remaining mode varies fastest:
//!
//! | mode | rows | column index     |
//! |------|------|------------------|
//! | 1    | `i1` | `i2 + n2 * i3`   |
//! | 2    | `i2` | `i1 + n1 * i3`   |
//! | 3    | `i3` | `i1 + n1 * i2`   |
//!
//! With this ordering the Tucker reconstruction unfolds as
//! `M1(X) = U1 M1(G) (U3 ⊗ U2)^T`, `M2(X) = U2 M2(G) (U3 ⊗ U1)^T` and
//! `M3(X) = U3 M3(G) (U2 ⊗ U1)^T`, which is what the scaled preconditioners
//! in [`crate::solver`] rely on.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Validates a 1-based mode index.
pub fn check_mode(k: usize) -> Result<()> {
    if (1..=3).contains(&k) {
        Ok(())
    } else {
        Err(Error::InvalidMode(k))
    }
}

/// Dense real matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * other`.
    pub fn t_matmul(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::ShapeMismatch(format!(
                "t_matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let arow = self.row(k);
            let brow = other.row(k);
            for (i, &a) in arow.iter().enumerate() {
                let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * other^T`.
    pub fn matmul_t(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::ShapeMismatch(format!(
                "matmul_t {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let arow = self.row(i);
            for j in 0..other.rows {
                let brow = other.row(j);
                let mut acc = T::zero();
                for (&a, &b) in arow.iter().zip(brow) {
                    acc += a * b;
                }
                out.data[i * other.rows + j] = acc;
            }
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }
}

impl Matrix<f64> {
    pub fn fro_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Lifts into another scalar type with zero tangent.
    pub fn lift<S: Scalar>(&self) -> Matrix<S> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| S::from_f64(v)).collect(),
        }
    }
}

impl<T: Scalar> Matrix<T> {
    /// Primal part, dropping any tangent information.
    pub fn primal(&self) -> Matrix<f64> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v.re()).collect(),
        }
    }
}

/// Kronecker product: block `(i, j)` of the result is `a[i][j] * b`.
pub fn kronecker<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let (p, q) = a.shape();
    let (r, s) = b.shape();
    let mut out = Matrix::zeros(p * r, q * s);
    for i in 0..p {
        for j in 0..q {
            let aij = a.get(i, j);
            for k in 0..r {
                for l in 0..s {
                    out.set(i * r + k, j * s + l, aij * b.get(k, l));
                }
            }
        }
    }
    out
}

/// Multilinear rank `(r1, r2, r3)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RankTriple(pub usize, pub usize, pub usize);

impl RankTriple {
    pub fn uniform(r: usize) -> Self {
        Self(r, r, r)
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.0, self.1, self.2]
    }

    /// 1-based accessor.
    pub fn get(&self, k: usize) -> usize {
        self.as_array()[k - 1]
    }

    pub fn validate(&self, dims: (usize, usize, usize)) -> Result<()> {
        let d = [dims.0, dims.1, dims.2];
        for (k, (&r, &n)) in self.as_array().iter().zip(&d).enumerate() {
            if r == 0 || r > n {
                return Err(Error::InvalidRank(format!(
                    "r{} = {r} outside 1..={n}",
                    k + 1
                )));
            }
        }
        Ok(())
    }
}

/// Dense third-order tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3<T = f64> {
    dims: (usize, usize, usize),
    data: Vec<T>,
}

impl<T: Scalar> Tensor3<T> {
    pub fn zeros(dims: (usize, usize, usize)) -> Self {
        Self {
            dims,
            data: vec![T::zero(); dims.0 * dims.1 * dims.2],
        }
    }

    pub fn from_vec(dims: (usize, usize, usize), data: Vec<T>) -> Result<Self> {
        let expected = dims
            .0
            .checked_mul(dims.1)
            .and_then(|v| v.checked_mul(dims.2))
            .ok_or_else(|| Error::ShapeMismatch(format!("dims {dims:?} overflow")))?;
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{} values for dims {dims:?}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(
        dims: (usize, usize, usize),
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(dims.0 * dims.1 * dims.2);
        for i in 0..dims.0 {
            for j in 0..dims.1 {
                for k in 0..dims.2 {
                    data.push(f(i, j, k));
                }
            }
        }
        Self { dims, data }
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn dims_array(&self) -> [usize; 3] {
        [self.dims.0, self.dims.1, self.dims.2]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims.1 + j) * self.dims.2 + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.data[self.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: T) {
        let idx = self.index(i, j, k);
        self.data[idx] = v;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_dims(other)?;
        Ok(Self {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn check_same_dims(&self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    /// Sum of absolute values.
    pub fn l1(&self) -> T {
        let mut acc = T::zero();
        for &v in &self.data {
            acc += v.abs();
        }
        acc
    }

    /// Squared Frobenius norm.
    pub fn fro_sq(&self) -> T {
        let mut acc = T::zero();
        for &v in &self.data {
            acc += v * v;
        }
        acc
    }

    pub fn primal(&self) -> Tensor3<f64> {
        Tensor3 {
            dims: self.dims,
            data: self.data.iter().map(|v| v.re()).collect(),
        }
    }

    /// Mode-`k` unfolding (1-based `k`).
    pub fn matricize(&self, k: usize) -> Result<Matrix<T>> {
        check_mode(k)?;
        let (n1, n2, n3) = self.dims;
        let mut out;
        match k {
            1 => {
                out = Matrix::zeros(n1, n2 * n3);
                for i1 in 0..n1 {
                    for i2 in 0..n2 {
                        for i3 in 0..n3 {
                            out.set(i1, i2 + n2 * i3, self.get(i1, i2, i3));
                        }
                    }
                }
            }
            2 => {
                out = Matrix::zeros(n2, n1 * n3);
                for i1 in 0..n1 {
                    for i2 in 0..n2 {
                        for i3 in 0..n3 {
                            out.set(i2, i1 + n1 * i3, self.get(i1, i2, i3));
                        }
                    }
                }
            }
            _ => {
                out = Matrix::zeros(n3, n1 * n2);
                for i1 in 0..n1 {
                    for i2 in 0..n2 {
                        for i3 in 0..n3 {
                            out.set(i3, i1 + n1 * i2, self.get(i1, i2, i3));
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`Tensor3::matricize`].
    pub fn fold(m: &Matrix<T>, k: usize, dims: (usize, usize, usize)) -> Result<Self> {
        check_mode(k)?;
        let (n1, n2, n3) = dims;
        let expected = match k {
            1 => (n1, n2 * n3),
            2 => (n2, n1 * n3),
            _ => (n3, n1 * n2),
        };
        if m.shape() != expected {
            return Err(Error::ShapeMismatch(format!(
                "cannot fold a {:?} matrix along mode {k} into {dims:?}",
                m.shape()
            )));
        }
        Ok(Self::from_fn(dims, |i1, i2, i3| match k {
            1 => m.get(i1, i2 + n2 * i3),
            2 => m.get(i2, i1 + n1 * i3),
            _ => m.get(i3, i1 + n1 * i2),
        }))
    }

    /// `self ×_k m`, where `m` is `p × n_k`; the result has `n_k` replaced by `p`.
    pub fn mode_product(&self, m: &Matrix<T>, k: usize) -> Result<Self> {
        check_mode(k)?;
        let (n1, n2, n3) = self.dims;
        let nk = self.dims_array()[k - 1];
        if m.cols() != nk {
            return Err(Error::ShapeMismatch(format!(
                "mode-{k} product of {:?} with a {:?} matrix",
                self.dims,
                m.shape()
            )));
        }
        let p = m.rows();
        match k {
            1 => {
                let slab = n2 * n3;
                let mut out = Self::zeros((p, n2, n3));
                for j in 0..p {
                    let dst = &mut out.data[j * slab..(j + 1) * slab];
                    for i in 0..n1 {
                        let c = m.get(j, i);
                        let src = &self.data[i * slab..(i + 1) * slab];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += c * s;
                        }
                    }
                }
                Ok(out)
            }
            2 => {
                let mut out = Self::zeros((n1, p, n3));
                for i1 in 0..n1 {
                    for j in 0..p {
                        let dbase = (i1 * p + j) * n3;
                        for i in 0..n2 {
                            let c = m.get(j, i);
                            let sbase = (i1 * n2 + i) * n3;
                            let (dst, src) = (
                                &mut out.data[dbase..dbase + n3],
                                &self.data[sbase..sbase + n3],
                            );
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += c * s;
                            }
                        }
                    }
                }
                Ok(out)
            }
            _ => {
                let mut out = Self::zeros((n1, n2, p));
                for f in 0..n1 * n2 {
                    let src = &self.data[f * n3..(f + 1) * n3];
                    for j in 0..p {
                        let mut acc = T::zero();
                        for (&c, &s) in m.row(j).iter().zip(src) {
                            acc += c * s;
                        }
                        out.data[f * p + j] = acc;
                    }
                }
                Ok(out)
            }
        }
    }
}

impl Tensor3<f64> {
    pub fn fro_norm(&self) -> f64 {
        self.fro_sq().sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.l1()
    }

    pub fn linf_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn lift<S: Scalar>(&self) -> Tensor3<S> {
        Tensor3 {
            dims: self.dims,
            data: self.data.iter().map(|&v| S::from_f64(v)).collect(),
        }
    }
}

/// Inner product `Σ a·b` over all entries.
pub fn inner<T: Scalar>(a: &Tensor3<T>, b: &Tensor3<T>) -> Result<T> {
    a.check_same_dims(b)?;
    let mut acc = T::zero();
    for (&x, &y) in a.data.iter().zip(&b.data) {
        acc += x * y;
    }
    Ok(acc)
}

/// Tucker reconstruction `(U1, U2, U3) · G`, computed as three mode products.
pub fn multilinear_product<T: Scalar>(
    u1: &Matrix<T>,
    u2: &Matrix<T>,
    u3: &Matrix<T>,
    g: &Tensor3<T>,
) -> Result<Tensor3<T>> {
    let (r1, r2, r3) = g.dims();
    if u1.cols() != r1 || u2.cols() != r2 || u3.cols() != r3 {
        return Err(Error::ShapeMismatch(format!(
            "factor widths ({}, {}, {}) vs core {:?}",
            u1.cols(),
            u2.cols(),
            u3.cols(),
            g.dims()
        )));
    }
    g.mode_product(u1, 1)?
        .mode_product(u2, 2)?
        .mode_product(u3, 3)
}
