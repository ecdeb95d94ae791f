//! Dense row-major `f64` matrices, a one-sided Jacobi SVD, the Moore–Penrose
//! pseudoinverse and the two least-squares solvers built on it.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Relative singular-value cutoff used when callers do not pick one.
pub const DEFAULT_RCOND: f64 = 1e-10;

const SVD_MAX_SWEEPS: usize = 80;

/// Dense row-major matrix of finite `f64` values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Dense vector of finite `f64` values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Vector {
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vector"));
        }
        Ok(Vector { data })
    }

    pub(crate) fn from_vec_unchecked(data: Vec<f64>) -> Self {
        Vector { data }
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.data
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(dot(&self.data, &self.data))
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.data
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.data
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Matrix::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m.data[i * values.len() + i] = *v;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("matrix data length", rows * cols, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix"));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub(crate) fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::dim("matrix row length", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Matrix::from_vec(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Builds a matrix whose columns are the given equally long vectors.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let rows = columns.first().map_or(0, |c| c.len());
        if let Some(bad) = columns.iter().find(|c| c.len() != rows) {
            return Err(Error::dim("matrix column length", rows, bad.len()));
        }
        let m = Matrix::from_fn(rows, columns.len(), |i, j| columns[j][i]);
        if m.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix"));
        }
        Ok(m)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// Keeps the listed columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Matrix {
        Matrix::from_fn(self.rows, cols.len(), |i, j| self.get(i, cols[j]))
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        matmul(self, other)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vector> {
        if v.len() != self.cols {
            return Err(Error::dim("matvec", self.cols, v.len()));
        }
        Ok(Vector::from_vec_unchecked(
            (0..self.rows).map(|i| dot(self.row(i), v)).collect(),
        ))
    }

    /// `selfᵀ v` without forming the transpose.
    pub fn tr_matvec(&self, v: &[f64]) -> Result<Vector> {
        if v.len() != self.rows {
            return Err(Error::dim("transposed matvec", self.rows, v.len()));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        Ok(Vector::from_vec_unchecked(out))
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::dim("matrix subtraction", self.len(), other.len()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Matrix::from_vec_unchecked(self.rows, self.cols, data))
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix::from_vec_unchecked(
            self.rows,
            self.cols,
            self.data.iter().map(|v| v * s).collect(),
        )
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(dot(&self.data, &self.data))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| f64::max(m, libm::fabs(*v)))
    }

    fn len(&self) -> usize {
        self.data.len()
    }
}

/// Dense product `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::dim("matmul inner dimension", a.cols, b.rows));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    let n = b.cols;
    for i in 0..a.rows {
        let out_row = &mut out.data[i * n..(i + 1) * n];
        for (p, &aip) in a.row(i).iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    Ok(out)
}

/// Thin singular value decomposition `m = U · diag(S) · Vt`.
#[derive(Clone, Debug)]
pub struct Svd {
    /// `rows × r` with orthonormal columns, `r = min(rows, cols)`.
    pub u: Matrix,
    /// Nonincreasing, nonnegative.
    pub s: Vector,
    /// `r × cols` with orthonormal rows.
    pub vt: Matrix,
}

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd(m: &Matrix) -> Result<Svd> {
    if m.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("svd input"));
    }
    if m.rows >= m.cols {
        svd_tall(m)
    } else {
        let t = svd_tall(&m.transpose())?;
        Ok(Svd {
            u: t.vt.transpose(),
            s: t.s,
            vt: t.u.transpose(),
        })
    }
}

fn svd_tall(m: &Matrix) -> Result<Svd> {
    let (rows, cols) = (m.rows, m.cols);
    // Column-major working copies.
    let mut w: Vec<Vec<f64>> = (0..cols).map(|j| m.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut e = vec![0.0; cols];
            e[j] = 1.0;
            e
        })
        .collect();
    let eps = f64::EPSILON;
    // Columns this small are numerically zero; rotating against them only
    // shuffles rounding noise and can keep the sweep from settling.
    let negligible = m.data.iter().map(|x| x * x).sum::<f64>() * eps * eps;
    // Rounding in a length-`rows` dot product is of order `rows · eps`, so
    // a stricter orthogonality test may never be met.
    let tol = eps * rows as f64;
    let mut converged = cols < 2;
    let mut sweeps = 0;
    while !converged {
        if sweeps == SVD_MAX_SWEEPS {
            return Err(Error::NoConvergence { iterations: sweeps });
        }
        sweeps += 1;
        converged = true;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma == 0.0 || alpha <= negligible || beta <= negligible || libm::fabs(gamma) <= tol * libm::sqrt(alpha * beta) {
                    continue;
                }
                converged = false;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = libm::copysign(1.0, zeta) / (libm::fabs(zeta) + libm::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
    }
    let norms: Vec<f64> = w.iter().map(|c| libm::sqrt(dot(c, c))).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(cols);
    let mut s = Vec::with_capacity(cols);
    let mut pending_zero = 0;
    for &j in &order {
        let sigma = norms[j];
        s.push(sigma);
        if sigma > 0.0 {
            u_cols.push(w[j].iter().map(|x| x / sigma).collect());
        } else {
            pending_zero += 1;
        }
    }
    complete_orthonormal(&mut u_cols, rows, pending_zero);

    let u = Matrix::from_fn(rows, cols, |i, j| u_cols[j][i]);
    let vt = Matrix::from_fn(cols, cols, |i, j| v[order[i]][j]);
    Ok(Svd {
        u,
        s: Vector::from_vec_unchecked(s),
        vt,
    })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (a, b) = (&mut lo[p], &mut hi[0]);
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (xp, yq) = (*x, *y);
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Appends `extra` unit vectors orthogonal to the existing columns.
fn complete_orthonormal(cols: &mut Vec<Vec<f64>>, dim: usize, extra: usize) {
    let mut candidate = 0;
    let mut added = 0;
    while added < extra && candidate < dim {
        let mut e = vec![0.0; dim];
        e[candidate] = 1.0;
        candidate += 1;
        for _ in 0..2 {
            for c in cols.iter() {
                let proj = dot(c, &e);
                for (x, ci) in e.iter_mut().zip(c) {
                    *x -= proj * ci;
                }
            }
        }
        let norm = libm::sqrt(dot(&e, &e));
        if norm > 0.5 {
            cols.push(e.into_iter().map(|x| x / norm).collect());
            added += 1;
        }
    }
}

/// Moore–Penrose pseudoinverse. Singular values at or below `rcond · S[0]`
/// are treated as zero.
pub fn pinv(m: &Matrix, rcond: f64) -> Result<Matrix> {
    if !(rcond > 0.0) {
        return Err(Error::input("rcond must be positive"));
    }
    let Svd { u, s, vt } = svd(m)?;
    let r = s.len();
    let mut out = Matrix::zeros(m.cols, m.rows);
    let Some(&smax) = s.first() else {
        return Ok(out);
    };
    let cutoff = rcond * smax;
    for t in 0..r {
        let sigma = s[t];
        if !(sigma > cutoff) {
            break;
        }
        let inv = 1.0 / sigma;
        // out += v_t · (u_t / sigma)ᵀ
        for i in 0..m.cols {
            let vi = vt.get(t, i) * inv;
            if vi == 0.0 {
                continue;
            }
            let row = &mut out.data[i * m.rows..(i + 1) * m.rows];
            for (j, o) in row.iter_mut().enumerate() {
                *o += vi * u.get(j, t);
            }
        }
    }
    Ok(out)
}

/// Minimum-norm minimizer of `‖a x − b‖₂`, computed as `pinv(a) · b`.
pub fn lstsq_min_norm(a: &Matrix, b: &[f64]) -> Result<Vector> {
    if a.rows != b.len() {
        return Err(Error::dim("least-squares right-hand side", a.rows, b.len()));
    }
    pinv(a, DEFAULT_RCOND)?.matvec(b)
}

/// Least squares with optional lower bounds: `min ‖a x − b‖₂` subject to
/// `x_i ≥ lower_i` wherever a bound is present.
///
/// Returns the unconstrained minimum-norm solution when it is feasible and
/// otherwise runs a Lawson–Hanson style primal active-set method.
pub fn lstsq_bounded(a: &Matrix, b: &[f64], lower: &[Option<f64>]) -> Result<Vector> {
    let a_pinv = pinv(a, DEFAULT_RCOND)?;
    lstsq_bounded_with_pinv(a, &a_pinv, b, lower)
}

/// [`lstsq_bounded`] reusing a precomputed pseudoinverse for the feasibility
/// check of the unconstrained solution.
pub fn lstsq_bounded_with_pinv(
    a: &Matrix,
    a_pinv: &Matrix,
    b: &[f64],
    lower: &[Option<f64>],
) -> Result<Vector> {
    if a.rows != b.len() {
        return Err(Error::dim("least-squares right-hand side", a.rows, b.len()));
    }
    if lower.len() != a.cols {
        return Err(Error::dim("bound vector", a.cols, lower.len()));
    }
    if lower.iter().flatten().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("lower bounds"));
    }
    let x0 = a_pinv.matvec(b)?;
    let feasible = x0
        .iter()
        .zip(lower)
        .all(|(x, l)| l.map_or(true, |l| *x >= l));
    if feasible {
        return Ok(x0);
    }
    active_set(a, b, lower)
}

fn active_set(a: &Matrix, b: &[f64], lower: &[Option<f64>]) -> Result<Vector> {
    let n = a.cols;
    // Shift so bounded coordinates start at zero: y = x - l, y_i >= 0.
    let shift: Vec<f64> = lower.iter().map(|l| l.unwrap_or(0.0)).collect();
    let a_shift = a.matvec(&shift)?;
    let rhs: Vec<f64> = b.iter().zip(a_shift.iter()).map(|(b, s)| b - s).collect();
    let bounded: Vec<bool> = lower.iter().map(Option::is_some).collect();

    let grad_scale = 1.0 + a.tr_matvec(&rhs)?.iter().fold(0.0, |m, v| f64::max(m, libm::fabs(*v)));
    let tol = 1e-11 * grad_scale;

    let mut passive: Vec<bool> = bounded.iter().map(|b| !b).collect();
    let mut y = vec![0.0; n];
    if passive.iter().any(|p| *p) {
        y = solve_passive(a, &rhs, &passive)?;
    }

    let max_iter = (n * n).max(1);
    let mut iterations = 0;
    loop {
        let resid: Vec<f64> = {
            let ay = a.matvec(&y)?;
            rhs.iter().zip(ay.iter()).map(|(r, v)| r - v).collect()
        };
        let w = a.tr_matvec(&resid)?;
        let candidate = (0..n)
            .filter(|&j| bounded[j] && !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]).then(j.cmp(&i)));
        let Some(j) = candidate else { break };
        iterations += 1;
        if iterations > max_iter {
            return Err(Error::ActiveSetCycle { iterations });
        }
        passive[j] = true;
        loop {
            let s = solve_passive(a, &rhs, &passive)?;
            let blocking: Vec<usize> = (0..n)
                .filter(|&i| bounded[i] && passive[i] && s[i] <= 0.0)
                .collect();
            if blocking.is_empty() {
                y = s;
                break;
            }
            let mut alpha = f64::INFINITY;
            for &i in &blocking {
                let step = y[i] / (y[i] - s[i]);
                if step < alpha {
                    alpha = step;
                }
            }
            let alpha = alpha.clamp(0.0, 1.0);
            for i in 0..n {
                y[i] += alpha * (s[i] - y[i]);
            }
            let mut moved = false;
            for i in 0..n {
                if bounded[i] && passive[i] && y[i] <= tol * 1e-3 {
                    passive[i] = false;
                    y[i] = 0.0;
                    moved = true;
                }
            }
            if !moved {
                // Numerical corner: force the blocking coordinate out.
                let i = blocking[0];
                passive[i] = false;
                y[i] = 0.0;
            }
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::ActiveSetCycle { iterations });
            }
        }
    }
    let x: Vec<f64> = y
        .iter()
        .zip(&shift)
        .zip(&bounded)
        .map(|((y, s), b)| if *b { y.max(0.0) + s } else { y + s })
        .collect();
    Ok(Vector::from_vec_unchecked(x))
}

/// Min-norm least squares over the passive columns; other coordinates are 0.
fn solve_passive(a: &Matrix, rhs: &[f64], passive: &[bool]) -> Result<Vec<f64>> {
    let cols: Vec<usize> = (0..a.cols).filter(|&j| passive[j]).collect();
    let mut out = vec![0.0; a.cols];
    if cols.is_empty() {
        return Ok(out);
    }
    let sub = a.select_columns(&cols);
    let s = lstsq_min_norm(&sub, rhs)?;
    for (k, &j) in cols.iter().enumerate() {
        out[j] = s[k];
    }
    Ok(out)
}

/// Largest violation of the KKT conditions of the bounded least-squares
/// problem at `x`: stationarity on free coordinates, sign of the multiplier
/// on active ones and primal feasibility.
pub fn kkt_residual(a: &Matrix, b: &[f64], lower: &[Option<f64>], x: &[f64]) -> Result<f64> {
    let ax = a.matvec(x)?;
    let resid: Vec<f64> = b.iter().zip(ax.iter()).map(|(b, v)| b - v).collect();
    // w = -∇(½‖ax−b‖²)
    let w = a.tr_matvec(&resid)?;
    let mut worst: f64 = 0.0;
    for j in 0..a.cols {
        match lower[j] {
            Some(l) if x[j] <= l => {
                worst = worst.max(w[j].max(0.0)).max(l - x[j]);
            }
            _ => worst = worst.max(libm::fabs(w[j])),
        }
    }
    Ok(worst)
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::*;
    use rand::Rng as _;

    pub fn random_matrix(rng: &mut crate::rng::Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    /// Random matrix with a prescribed rank, built as a product of factors.
    pub fn random_rank(rng: &mut crate::rng::Rng, rows: usize, cols: usize, rank: usize) -> Matrix {
        let l = random_matrix(rng, rows, rank);
        let r = random_matrix(rng, rank, cols);
        matmul(&l, &r).unwrap()
    }
}
