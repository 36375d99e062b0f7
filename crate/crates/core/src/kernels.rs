//! First-level kernels on points and mean-embedding kernels on distributions.
//!
//! For Gaussian inputs the expected kernels have closed forms:
//!
//! * linear: `mu_p' mu_q`
//! * rbf(s): `|I + S/s^2|^{-1/2} exp(-1/2 d' (S + s^2 I)^{-1} d)` with
//!   `S = Sigma_p + Sigma_q`, `d = mu_p - mu_q`
//! * poly2(c): `(mu_p' mu_q + c)^2 + mu_p' Sigma_q mu_p + mu_q' Sigma_p mu_q + Tr(Sigma_p Sigma_q)`
//!
//! Monte-Carlo estimates are available for every distribution and serve as
//! the reference the closed forms are tested against.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::linalg::{dot, rows_of, sq_dist};
use crate::rng::{self, TAG_CROSS, TAG_KME};
use crate::uncertainty::{CovarianceModel, Distribution, UncertainDataset};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum FirstLevelKernel {
    Linear,
    Rbf { sigma: f64 },
    Poly2 { offset: f64 },
}

impl FirstLevelKernel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Linear => Ok(()),
            Self::Rbf { sigma } if sigma > 0.0 && sigma.is_finite() => Ok(()),
            Self::Rbf { sigma } => arg(format!("rbf width must be positive and finite, got {sigma}")),
            Self::Poly2 { offset } if offset >= 0.0 && offset.is_finite() => Ok(()),
            Self::Poly2 { offset } => arg(format!("poly2 offset must be finite and >= 0, got {offset}")),
        }
    }

    /// Kernel order used for tie-breaking: linear, rbf (by width), poly2.
    pub fn rank(&self) -> u8 {
        match self {
            Self::Linear => 0,
            Self::Rbf { .. } => 1,
            Self::Poly2 { .. } => 2,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Linear => "linear".into(),
            Self::Rbf { sigma } => format!("rbf(sigma={sigma})"),
            Self::Poly2 { offset } => format!("poly2(c={offset})"),
        }
    }

    /// Value from the inner product and squared distance of two points.
    #[inline]
    fn from_stats(&self, xz: f64, d2: f64) -> f64 {
        match *self {
            Self::Linear => xz,
            Self::Rbf { sigma } => (-d2 / (2.0 * sigma * sigma)).exp(),
            Self::Poly2 { offset } => {
                let t = xz + offset;
                t * t
            }
        }
    }

    #[inline]
    fn eval_unchecked(&self, x: &[f64], z: &[f64]) -> f64 {
        match self {
            Self::Linear => dot(x, z),
            Self::Rbf { .. } => self.from_stats(0.0, sq_dist(x, z)),
            Self::Poly2 { .. } => self.from_stats(dot(x, z), 0.0),
        }
    }
}

pub fn eval_first(kernel: &FirstLevelKernel, x: &[f64], z: &[f64]) -> Result<f64> {
    if x.len() != z.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: z.len(),
        });
    }
    Ok(kernel.eval_unchecked(x, z))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Evaluation {
    ClosedForm,
    MonteCarlo { samples: usize, seed: u64 },
}

/// How `K_ii` is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagonalConvention {
    /// `K(P_i, P_i)` with two independent copies of `P_i`.
    ExpectedKernel,
    /// `mu_i' mu_i + Tr(Sigma_i)`, linear kernel only.
    TraceAugmented,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub first: FirstLevelKernel,
    pub mode: Evaluation,
    pub diagonal: DiagonalConvention,
}

impl KernelSpec {
    pub fn new(first: FirstLevelKernel, mode: Evaluation, diagonal: DiagonalConvention) -> Result<Self> {
        let spec = Self { first, mode, diagonal };
        spec.validate()?;
        Ok(spec)
    }

    /// Closed form, trace-augmented diagonal for linear and expected kernel otherwise.
    pub fn default_for(first: FirstLevelKernel) -> Self {
        let diagonal = match first {
            FirstLevelKernel::Linear => DiagonalConvention::TraceAugmented,
            _ => DiagonalConvention::ExpectedKernel,
        };
        Self {
            first,
            mode: Evaluation::ClosedForm,
            diagonal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.first.validate()?;
        if self.diagonal == DiagonalConvention::TraceAugmented && self.first != FirstLevelKernel::Linear {
            return arg("the trace-augmented diagonal is only defined for the linear kernel");
        }
        if let Evaluation::MonteCarlo { samples: 0, .. } = self.mode {
            return arg("Monte-Carlo evaluation needs at least one sample");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrix {
    pub k: DMatrix<f64>,
    pub spec: KernelSpec,
}

/// Isotropic variance of a Gaussian whose covariance is Dirac or isotropic.
fn iso_variance(p: &Distribution) -> Option<f64> {
    p.covariance().and_then(iso_of)
}

/// Closed form for isotropic pairs from precomputed moments.
#[inline]
fn iso_closed(first: &FirstLevelKernel, xz: f64, d2: f64, np: f64, nq: f64, ap: f64, aq: f64, dim: usize) -> f64 {
    if ap == 0.0 && aq == 0.0 {
        return first.from_stats(xz, d2);
    }
    match *first {
        FirstLevelKernel::Linear => xz,
        FirstLevelKernel::Rbf { sigma } => {
            let s2 = sigma * sigma;
            let s = ap + aq;
            (-0.5 * dim as f64 * (s / s2).ln_1p() - 0.5 * d2 / (s + s2)).exp()
        }
        FirstLevelKernel::Poly2 { offset } => {
            let t = xz + offset;
            t * t + aq * np + ap * nq + dim as f64 * ap * aq
        }
    }
}

/// Per-coordinate variances when the covariance is not a full matrix.
fn diag_variances(c: &CovarianceModel, dim: usize) -> Option<DVector<f64>> {
    match c {
        CovarianceModel::Dirac => Some(DVector::zeros(dim)),
        CovarianceModel::Isotropic(a) => Some(DVector::from_element(dim, *a)),
        CovarianceModel::Diagonal(v) => Some(v.clone()),
        CovarianceModel::Full(_) => None,
    }
}

fn gaussian_closed(
    first: &FirstLevelKernel,
    mp: &DVector<f64>,
    cp: &CovarianceModel,
    mq: &DVector<f64>,
    cq: &CovarianceModel,
) -> Result<f64> {
    let dim = mp.len();
    let (x, z) = (mp.as_slice(), mq.as_slice());
    if cp.is_dirac() && cq.is_dirac() {
        return Ok(first.eval_unchecked(x, z));
    }
    if let (Some(ap), Some(aq)) = (iso_of(cp), iso_of(cq)) {
        return Ok(iso_closed(first, dot(x, z), sq_dist(x, z), dot(x, x), dot(z, z), ap, aq, dim));
    }
    Ok(match *first {
        FirstLevelKernel::Linear => dot(x, z),
        FirstLevelKernel::Poly2 { offset } => {
            let t = dot(x, z) + offset;
            t * t + cq.quad_form(x) + cp.quad_form(z) + cp.trace_product(cq, dim)
        }
        FirstLevelKernel::Rbf { sigma } => {
            let s2 = sigma * sigma;
            match (diag_variances(cp, dim), diag_variances(cq, dim)) {
                (Some(vp), Some(vq)) => {
                    let mut log = 0.0;
                    for k in 0..dim {
                        let s = vp[k] + vq[k];
                        let d = x[k] - z[k];
                        log -= 0.5 * (s / s2).ln_1p() + 0.5 * d * d / (s + s2);
                    }
                    log.exp()
                }
                _ => {
                    let mut m = cp.to_dense(dim) + cq.to_dense(dim);
                    for k in 0..dim {
                        m[(k, k)] += s2;
                    }
                    let chol = Cholesky::new(m)
                        .ok_or_else(|| Error::NotPsd("combined covariance is not positive definite".into()))?;
                    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() - dim as f64 * s2.ln();
                    let diff = mp - mq;
                    let quad = diff.dot(&chol.solve(&diff));
                    (-0.5 * log_det - 0.5 * quad).exp()
                }
            }
        }
    })
}

fn iso_of(c: &CovarianceModel) -> Option<f64> {
    match c {
        CovarianceModel::Dirac => Some(0.0),
        CovarianceModel::Isotropic(a) => Some(*a),
        _ => None,
    }
}

fn check_dims(p: &Distribution, q: &Distribution) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    Ok(())
}

/// Closed-form expected kernel between two distinct Gaussian distributions.
pub fn kme_closed_form(first: &FirstLevelKernel, p: &Distribution, q: &Distribution) -> Result<f64> {
    check_dims(p, q)?;
    match (p, q) {
        (Distribution::Gaussian { mean: mp, cov: cp }, Distribution::Gaussian { mean: mq, cov: cq }) => {
            gaussian_closed(first, mp, cp, mq, cq)
        }
        _ => Err(Error::UnsupportedMode(
            "closed-form evaluation needs Gaussian or Dirac distributions".into(),
        )),
    }
}

/// Monte-Carlo estimate of `E k(x, z)`, `x ~ p`, `z ~ q` independent, with
/// its standard error.
pub fn kme_monte_carlo<R: Rng + ?Sized>(
    first: &FirstLevelKernel,
    p: &Distribution,
    q: &Distribution,
    samples: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    check_dims(p, q)?;
    if samples == 0 {
        return arg("Monte-Carlo evaluation needs at least one sample");
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for t in 0..samples {
        let x = p.sample(rng);
        let z = q.sample(rng);
        let v = first.eval_unchecked(x.as_slice(), z.as_slice());
        let delta = v - mean;
        mean += delta / (t + 1) as f64;
        m2 += delta * (v - mean);
    }
    let se = if samples > 1 {
        (m2 / (samples - 1) as f64 / samples as f64).sqrt()
    } else {
        0.0
    };
    Ok((mean, se))
}

/// Expected kernel between two (treated as distinct) distributions.
pub fn kme_kernel(p: &Distribution, q: &Distribution, spec: &KernelSpec) -> Result<f64> {
    spec.validate()?;
    match spec.mode {
        Evaluation::ClosedForm => kme_closed_form(&spec.first, p, q),
        Evaluation::MonteCarlo { samples, seed } => {
            let mut r = rng::stream(seed, &[TAG_KME]);
            Ok(kme_monte_carlo(&spec.first, p, q, samples, &mut r)?.0)
        }
    }
}

/// Inner products and squared distances between two sets of points.
#[derive(Clone, Debug)]
pub struct PairStats {
    pub dot: DMatrix<f64>,
    pub sq_dist: DMatrix<f64>,
    pub norms_a: Vec<f64>,
    pub norms_b: Vec<f64>,
}

impl PairStats {
    /// Statistics between the rows of `a` and of `b`.
    pub fn cross(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Self {
        let ra = rows_of(a);
        let rb = rows_of(b);
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = ra
            .par_iter()
            .map(|x| rb.iter().map(|z| (dot(x, z), sq_dist(x, z))).unzip())
            .collect();
        let (na, nb) = (ra.len(), rb.len());
        let dotm = DMatrix::from_fn(na, nb, |i, j| pairs[i].0[j]);
        let d2m = DMatrix::from_fn(na, nb, |i, j| pairs[i].1[j]);
        Self {
            dot: dotm,
            sq_dist: d2m,
            norms_a: ra.iter().map(|x| dot(x, x)).collect(),
            norms_b: rb.iter().map(|z| dot(z, z)).collect(),
        }
    }

    /// Statistics of the rows of `a` against themselves; symmetric by construction.
    pub fn within(a: &DMatrix<f64>) -> Self {
        let ra = rows_of(a);
        let n = ra.len();
        let upper: Vec<Vec<(f64, f64)>> = (0..n)
            .into_par_iter()
            .map(|i| (i..n).map(|j| (dot(&ra[i], &ra[j]), sq_dist(&ra[i], &ra[j]))).collect())
            .collect();
        let mut dotm = DMatrix::zeros(n, n);
        let mut d2m = DMatrix::zeros(n, n);
        for (i, row) in upper.iter().enumerate() {
            for (off, &(g, d)) in row.iter().enumerate() {
                let j = i + off;
                dotm[(i, j)] = g;
                dotm[(j, i)] = g;
                d2m[(i, j)] = d;
                d2m[(j, i)] = d;
            }
        }
        let norms = (0..n).map(|i| dotm[(i, i)]).collect::<Vec<_>>();
        Self {
            dot: dotm,
            sq_dist: d2m,
            norms_a: norms.clone(),
            norms_b: norms,
        }
    }
}

fn isotropic_variances(data: &UncertainDataset) -> Option<Vec<f64>> {
    data.samples.iter().map(iso_variance).collect()
}

fn diagonal_entry(p: &Distribution, spec: &KernelSpec, i: usize) -> Result<f64> {
    match spec.diagonal {
        DiagonalConvention::TraceAugmented => {
            let m = p.mean().as_slice();
            Ok(dot(m, m) + p.trace_var())
        }
        DiagonalConvention::ExpectedKernel => pair_entry(p, p, spec, &[TAG_KME, i as u64, i as u64]),
    }
}

fn pair_entry(p: &Distribution, q: &Distribution, spec: &KernelSpec, key: &[u64]) -> Result<f64> {
    match spec.mode {
        Evaluation::ClosedForm => kme_closed_form(&spec.first, p, q),
        Evaluation::MonteCarlo { samples, seed } => {
            let mut r = rng::stream(seed, key);
            Ok(kme_monte_carlo(&spec.first, p, q, samples, &mut r)?.0)
        }
    }
}

/// Kernel matrix of a dataset.
pub fn kernel_matrix(data: &UncertainDataset, spec: &KernelSpec) -> Result<KernelMatrix> {
    spec.validate()?;
    if spec.mode == Evaluation::ClosedForm {
        if let Some(vars) = isotropic_variances(data) {
            let stats = PairStats::within(&data.means());
            return kernel_matrix_from_stats(&stats, &vars, data.dim(), spec);
        }
    }
    let n = data.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let p = &data.samples[i];
            let mut row = Vec::with_capacity(n - i);
            row.push(diagonal_entry(p, spec, i)?);
            for j in (i + 1)..n {
                // Lower index first so Monte-Carlo entries are symmetric.
                row.push(pair_entry(p, &data.samples[j], spec, &[TAG_KME, i as u64, j as u64])?);
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let mut k = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            k[(i, i + off)] = v;
            k[(i + off, i)] = v;
        }
    }
    Ok(KernelMatrix { k, spec: *spec })
}

/// Closed-form kernel matrix for isotropic (or Dirac) samples with
/// variances `vars`, reusing precomputed mean statistics.
pub fn kernel_matrix_from_stats(stats: &PairStats, vars: &[f64], dim: usize, spec: &KernelSpec) -> Result<KernelMatrix> {
    spec.validate()?;
    let n = vars.len();
    if stats.dot.nrows() != n || stats.dot.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: stats.dot.nrows(),
        });
    }
    let nr = &stats.norms_a;
    let k = DMatrix::from_fn(n, n, |i, j| {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        if a == b && spec.diagonal == DiagonalConvention::TraceAugmented {
            return stats.dot[(a, a)] + dim as f64 * vars[a];
        }
        iso_closed(&spec.first, stats.dot[(a, b)], stats.sq_dist[(a, b)], nr[a], nr[b], vars[a], vars[b], dim)
    });
    Ok(KernelMatrix { k, spec: *spec })
}

/// Closed-form cross kernel from precomputed statistics (`test` rows, `train` columns).
pub fn cross_kernel_from_stats(stats: &PairStats, test_vars: &[f64], train_vars: &[f64], dim: usize, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let (m, n) = (test_vars.len(), train_vars.len());
    if stats.dot.shape() != (m, n) {
        return Err(Error::DimensionMismatch {
            expected: m * n,
            got: stats.dot.len(),
        });
    }
    let augmented = spec.diagonal == DiagonalConvention::TraceAugmented;
    Ok(DMatrix::from_fn(m, n, |t, k| {
        let xz = stats.dot[(t, k)];
        if augmented && stats.sq_dist[(t, k)] == 0.0 && test_vars[t] == train_vars[k] {
            return xz + dim as f64 * train_vars[k];
        }
        iso_closed(
            &spec.first,
            xz,
            stats.sq_dist[(t, k)],
            stats.norms_a[t],
            stats.norms_b[k],
            test_vars[t],
            train_vars[k],
            dim,
        )
    }))
}

/// `M x N` matrix of expected kernels between test and training distributions.
///
/// Under the trace-augmented convention the `Tr(Sigma)` term is added only
/// when a test distribution is identical to the training distribution, so
/// embedding the training set reproduces the fit-time kernel matrix.
pub fn cross_kernel(test: &UncertainDataset, train: &UncertainDataset, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    if test.dim() != train.dim() {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            got: test.dim(),
        });
    }
    if spec.mode == Evaluation::ClosedForm {
        if let (Some(tv), Some(rv)) = (isotropic_variances(test), isotropic_variances(train)) {
            let stats = PairStats::cross(&test.means(), &train.means());
            return cross_kernel_from_stats(&stats, &tv, &rv, train.dim(), spec);
        }
    }
    let (m, n) = (test.len(), train.len());
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|t| {
            (0..n)
                .map(|k| {
                    let (p, q) = (&test.samples[t], &train.samples[k]);
                    let v = pair_entry(p, q, spec, &[TAG_CROSS, t as u64, k as u64])?;
                    let same = spec.diagonal == DiagonalConvention::TraceAugmented && p == q;
                    Ok(if same { v + q.trace_var() } else { v })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(m, n, |t, k| rows[t][k]))
}

/// `i,j,value` CSV of a dense matrix.
pub fn matrix_csv(k: &DMatrix<f64>) -> String {
    let mut out = String::from("i,j,value\n");
    for i in 0..k.nrows() {
        for j in 0..k.ncols() {
            out.push_str(&format!("{i},{j},{}\n", k[(i, j)]));
        }
    }
    out
}
