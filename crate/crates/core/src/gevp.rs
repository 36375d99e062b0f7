//! Symmetric generalized eigenproblems `S v = rho B v`.
//!
//! The pencil is reduced to a standard symmetric problem. When `B` has a
//! well-conditioned Cholesky factor `B = C C'` the reduction is
//! `C^{-1} S C^{-T}`. Otherwise a pivoted Cholesky factor of `B` spans its
//! numerical range and the problem is restricted to that range, dropping the
//! directions where the constraint `v' B v = 1` cannot be met. Which end of
//! the spectrum is returned follows [`Direction`].

use nalgebra::{DMatrix, DVector};

use crate::error::{arg, Error, Result};
use crate::graphs::Direction;
use crate::linalg::{canonicalize_sign, relative_asymmetry, sorted_eigh, symmetrize};

/// Cholesky factors whose squared diagonal spread exceeds this are rejected
/// in favour of the restricted reduction.
const CHOLESKY_SPREAD: f64 = 1e-8;
/// Pivots of `B` below this fraction of its largest diagonal entry are
/// treated as null directions.
pub const NULL_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Cholesky,
    /// Restricted to a `rank`-dimensional range of `B`.
    Restricted { rank: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GevpResult {
    /// Ascending for minimization, descending for maximization.
    pub eigenvalues: DVector<f64>,
    /// `B`-orthonormal columns, one per eigenvalue.
    pub eigenvectors: DMatrix<f64>,
    /// `||S v - rho B v|| / ((||S|| + |rho| ||B||) ||v||)`, Frobenius norms.
    pub residual_norms: Vec<f64>,
    /// Absolute ridge added to the diagonal of `B`.
    pub ridge_used: f64,
    pub reduction: Reduction,
    /// Fewer than the requested columns were available.
    pub reduced_rank: bool,
}

impl GevpResult {
    pub fn max_residual(&self) -> f64 {
        self.residual_norms.iter().copied().fold(0.0, f64::max)
    }
}

fn check_square(m: &DMatrix<f64>, n: usize, what: &str) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: m.nrows(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return arg(format!("{what} contains non-finite entries"));
    }
    if relative_asymmetry(m) > 1e-8 {
        return arg(format!("{what} is not symmetric"));
    }
    Ok(())
}

/// Solves `S v = rho B v` for `d` eigenpairs.
///
/// `ridge` is relative: `ridge * tr(B) / n` is added to the diagonal of `B`
/// before solving.
pub fn solve_gevp(s: &DMatrix<f64>, b: &DMatrix<f64>, d: usize, direction: Direction, ridge: f64) -> Result<GevpResult> {
    let n = s.nrows();
    check_square(s, n, "S")?;
    check_square(b, n, "B")?;
    if d == 0 || d > n {
        return arg(format!("requested {d} eigenpairs from a problem of size {n}"));
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return arg(format!("ridge must be finite and >= 0, got {ridge}"));
    }
    let s = symmetrize(s);
    let mut b = symmetrize(b);
    let ridge_used = if ridge > 0.0 { ridge * b.trace().abs() / n as f64 } else { 0.0 };
    for i in 0..n {
        b[(i, i)] += ridge_used;
    }

    let (values, vectors, reduction, range) = match cholesky_reduce(&s, &b) {
        Some((values, vectors)) => (values, vectors, Reduction::Cholesky, None),
        None => {
            let (values, vectors, q) = restricted_reduce(&s, &b)?;
            let rank = q.ncols();
            (values, vectors, Reduction::Restricted { rank }, Some(q))
        }
    };

    let available = values.len();
    let take = d.min(available);
    let order: Vec<usize> = match direction {
        Direction::Minimize => (0..take).collect(),
        Direction::Maximize => (0..take).map(|k| available - 1 - k).collect(),
    };
    let eigenvalues = DVector::from_iterator(take, order.iter().map(|&k| values[k]));
    let mut v = DMatrix::zeros(n, take);
    for (dst, &src) in order.iter().enumerate() {
        v.set_column(dst, &vectors.column(src));
    }
    b_orthonormalize(&mut v, &b);
    for j in 0..take {
        let mut col = v.column(j).clone_owned();
        canonicalize_sign(&mut col);
        v.set_column(j, &col);
    }
    let residual_norms = residuals(&s, &b, &eigenvalues, &v, range.as_ref());
    Ok(GevpResult {
        eigenvalues,
        eigenvectors: v,
        residual_norms,
        ridge_used,
        reduction,
        reduced_rank: take < d,
    })
}

fn cholesky_reduce(s: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let chol = b.clone().cholesky()?;
    let l = chol.l();
    let diag = l.diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x * x), hi.max(x * x)));
    if !(hi > 0.0) || lo / hi < CHOLESKY_SPREAD {
        return None;
    }
    let x = l.solve_lower_triangular(s)?;
    let m = l.solve_lower_triangular(&x.transpose())?;
    let (values, y) = sorted_eigh(&symmetrize(&m));
    let v = l.transpose().solve_upper_triangular(&y)?;
    Some((values, v))
}

/// Pivoted Cholesky `B = L L'` truncated once the largest remaining pivot
/// drops below `NULL_TOL` times the largest diagonal entry.
fn pivoted_cholesky(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = b.nrows();
    let mut resid: Vec<f64> = (0..n).map(|i| b[(i, i)]).collect();
    let top = resid.iter().copied().fold(0.0, f64::max);
    if !(top > 0.0) {
        return Err(Error::Singular("constraint matrix has no positive diagonal entry".into()));
    }
    let mut cols: Vec<DVector<f64>> = Vec::new();
    let mut used = vec![false; n];
    loop {
        let mut p = usize::MAX;
        for i in (0..n).filter(|&i| !used[i]) {
            if resid[i] < -1e-8 * top {
                return Err(Error::NotPsd(format!("constraint matrix has negative pivot {} at {i}", resid[i])));
            }
            if p == usize::MAX || resid[i] > resid[p] {
                p = i;
            }
        }
        if p == usize::MAX || resid[p] <= NULL_TOL * top {
            break;
        }
        let pivot = resid[p].sqrt();
        let mut col = b.column(p).clone_owned();
        for prev in &cols {
            col.axpy(-prev[p], prev, 1.0);
        }
        col /= pivot;
        for i in 0..n {
            col[i] = if used[i] { 0.0 } else { col[i] };
        }
        col[p] = pivot;
        used[p] = true;
        for i in 0..n {
            if !used[i] {
                resid[i] -= col[i] * col[i];
            }
        }
        cols.push(col);
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Restricts the pencil to the range of `B`: with `B = L L'` and `L = Q R`,
/// `T = Q R^{-T}` satisfies `T' B T = I`. Returns the orthonormal range basis
/// `Q` alongside the eigenpairs.
fn restricted_reduce(s: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let l = pivoted_cholesky(b)?;
    let qr = l.qr();
    let (q, r) = (qr.q(), qr.r());
    let singular = || Error::Singular("range basis of the constraint matrix is singular".into());
    // Q' B Q = R R', so whiten with R^{-1} (.) R^{-T}.
    let qsq = q.transpose() * s * &q;
    let x = r.solve_upper_triangular(&qsq).ok_or_else(singular)?;
    let m = r.solve_upper_triangular(&x.transpose()).ok_or_else(singular)?;
    let (values, y) = sorted_eigh(&symmetrize(&m));
    let w = r.transpose().solve_lower_triangular(&y).ok_or_else(singular)?;
    let v = &q * w;
    Ok((values, v, q))
}

/// Modified Gram-Schmidt in the `B` inner product.
fn b_orthonormalize(v: &mut DMatrix<f64>, b: &DMatrix<f64>) {
    let mut bv: Vec<DVector<f64>> = Vec::with_capacity(v.ncols());
    for j in 0..v.ncols() {
        let mut col = v.column(j).clone_owned();
        for (k, bk) in bv.iter().enumerate() {
            let proj = bk.dot(&col);
            col.axpy(-proj, &v.column(k), 1.0);
        }
        let mut bcol = b * &col;
        let norm = col.dot(&bcol);
        if norm > 0.0 {
            let inv = 1.0 / norm.sqrt();
            col *= inv;
            bcol *= inv;
        }
        v.set_column(j, &col);
        bv.push(bcol);
    }
}

/// With a range basis the residual is projected onto that range: outside it
/// `S v - rho B v = 0` has no solution in general and is not what was solved.
fn residuals(s: &DMatrix<f64>, b: &DMatrix<f64>, rho: &DVector<f64>, v: &DMatrix<f64>, range: Option<&DMatrix<f64>>) -> Vec<f64> {
    let (sn, bn) = (s.norm(), b.norm());
    let sv = s * v;
    let bv = b * v;
    (0..v.ncols())
        .map(|j| {
            let full = sv.column(j) - bv.column(j) * rho[j];
            let r = match range {
                Some(q) => q.transpose() * full,
                None => full,
            };
            let scale = (sn + rho[j].abs() * bn) * v.column(j).norm();
            if scale > 0.0 {
                r.norm() / scale
            } else {
                r.norm()
            }
        })
        .collect()
}
