//! Distribution-valued samples and the schemes that attach them to data.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataio::LabeledDataset;
use crate::error::{arg, Error, Result};
use crate::linalg::{relative_asymmetry, sq_dist};

/// Full covariance with its (jittered) lower Cholesky factor.
#[derive(Clone, Debug, PartialEq)]
pub struct FullCovariance {
    sigma: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl FullCovariance {
    /// Accepts symmetric PSD matrices; the PSD check is a Cholesky
    /// factorisation of `sigma + tau I` with `tau = 1e-12 * max(tr/D, 1)`.
    pub fn new(sigma: DMatrix<f64>) -> Result<Self> {
        let d = sigma.nrows();
        if d == 0 || sigma.ncols() != d {
            return arg("covariance must be a non-empty square matrix");
        }
        if sigma.iter().any(|v| !v.is_finite()) {
            return arg("covariance contains non-finite values");
        }
        if relative_asymmetry(&sigma) > 1e-10 {
            return Err(Error::NotPsd("covariance is not symmetric".into()));
        }
        let tau = 1e-12 * (sigma.trace() / d as f64).max(1.0);
        let jittered = &sigma + DMatrix::identity(d, d) * tau;
        let factor = Cholesky::new(jittered)
            .ok_or_else(|| Error::NotPsd("covariance failed the Cholesky check".into()))?
            .l();
        Ok(Self { sigma, factor })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CovarianceModel {
    Dirac,
    Isotropic(f64),
    Diagonal(DVector<f64>),
    Full(FullCovariance),
}

impl CovarianceModel {
    /// `alpha * I`; zero gives `Dirac`.
    pub fn isotropic(alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return arg(format!("isotropic variance must be finite and >= 0, got {alpha}"));
        }
        Ok(if alpha == 0.0 { Self::Dirac } else { Self::Isotropic(alpha) })
    }

    pub fn diagonal(v: DVector<f64>) -> Result<Self> {
        if v.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return arg("diagonal variances must be finite and >= 0");
        }
        Ok(if v.iter().all(|&x| x == 0.0) { Self::Dirac } else { Self::Diagonal(v) })
    }

    pub fn full(sigma: DMatrix<f64>) -> Result<Self> {
        if sigma.iter().all(|&x| x == 0.0) {
            return Ok(Self::Dirac);
        }
        Ok(Self::Full(FullCovariance::new(sigma)?))
    }

    pub fn is_dirac(&self) -> bool {
        matches!(self, Self::Dirac)
    }

    pub fn trace(&self, dim: usize) -> f64 {
        match self {
            Self::Dirac => 0.0,
            Self::Isotropic(a) => a * dim as f64,
            Self::Diagonal(v) => v.sum(),
            Self::Full(f) => f.sigma.trace(),
        }
    }

    /// Dimension the model is tied to, if any.
    pub fn fixed_dim(&self) -> Option<usize> {
        match self {
            Self::Dirac | Self::Isotropic(_) => None,
            Self::Diagonal(v) => Some(v.len()),
            Self::Full(f) => Some(f.sigma.nrows()),
        }
    }

    pub fn to_dense(&self, dim: usize) -> DMatrix<f64> {
        match self {
            Self::Dirac => DMatrix::zeros(dim, dim),
            Self::Isotropic(a) => DMatrix::identity(dim, dim) * *a,
            Self::Diagonal(v) => DMatrix::from_diagonal(v),
            Self::Full(f) => f.sigma.clone(),
        }
    }

    /// `v^T Sigma v`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        match self {
            Self::Dirac => 0.0,
            Self::Isotropic(a) => a * v.iter().map(|x| x * x).sum::<f64>(),
            Self::Diagonal(d) => d.iter().zip(v).map(|(s, x)| s * x * x).sum(),
            Self::Full(f) => {
                let x = DVector::from_column_slice(v);
                x.dot(&(&f.sigma * &x))
            }
        }
    }

    /// `Tr(Sigma_self Sigma_other)`.
    pub fn trace_product(&self, other: &Self, dim: usize) -> f64 {
        use CovarianceModel::*;
        match (self, other) {
            (Dirac, _) | (_, Dirac) => 0.0,
            (Isotropic(a), Isotropic(b)) => a * b * dim as f64,
            (Isotropic(a), m) | (m, Isotropic(a)) => a * m.trace(dim),
            (Diagonal(a), Diagonal(b)) => a.dot(b),
            (Diagonal(a), Full(f)) | (Full(f), Diagonal(a)) => {
                a.iter().enumerate().map(|(k, s)| s * f.sigma[(k, k)]).sum()
            }
            (Full(a), Full(b)) => a.sigma.component_mul(&b.sigma).sum(),
        }
    }

    /// `mean + Sigma^{1/2} z` for standard normal `z`.
    pub fn sample_around<R: Rng + ?Sized>(&self, mean: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        let d = mean.len();
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        match self {
            Self::Dirac => mean.clone(),
            Self::Isotropic(a) => mean + z * a.sqrt(),
            Self::Diagonal(v) => mean + v.map(f64::sqrt).component_mul(&z),
            Self::Full(f) => mean + &f.factor * z,
        }
    }
}

/// One input sample: a Gaussian (possibly degenerate) or an empirical
/// distribution given by its draws (one per row).
#[derive(Clone, Debug, PartialEq)]
pub enum Distribution {
    Gaussian { mean: DVector<f64>, cov: CovarianceModel },
    Empirical { samples: DMatrix<f64>, mean: DVector<f64> },
}

impl Distribution {
    pub fn dirac(point: DVector<f64>) -> Self {
        Self::Gaussian {
            mean: point,
            cov: CovarianceModel::Dirac,
        }
    }

    pub fn gaussian(mean: DVector<f64>, cov: CovarianceModel) -> Result<Self> {
        if let Some(d) = cov.fixed_dim() {
            if d != mean.len() {
                return Err(Error::DimensionMismatch {
                    expected: mean.len(),
                    got: d,
                });
            }
        }
        Ok(Self::Gaussian { mean, cov })
    }

    pub fn empirical(samples: DMatrix<f64>) -> Result<Self> {
        if samples.nrows() == 0 || samples.ncols() == 0 {
            return arg("empirical distribution needs at least one draw");
        }
        let mean = samples.row_mean().transpose();
        Ok(Self::Empirical { samples, mean })
    }

    pub fn mean(&self) -> &DVector<f64> {
        match self {
            Self::Gaussian { mean, .. } | Self::Empirical { mean, .. } => mean,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean().len()
    }

    pub fn covariance(&self) -> Option<&CovarianceModel> {
        match self {
            Self::Gaussian { cov, .. } => Some(cov),
            Self::Empirical { .. } => None,
        }
    }

    pub fn is_dirac(&self) -> bool {
        match self {
            Self::Gaussian { cov, .. } => cov.is_dirac(),
            Self::Empirical { .. } => self.trace_var() == 0.0,
        }
    }

    /// Trace of the covariance (population covariance for empirical draws).
    pub fn trace_var(&self) -> f64 {
        match self {
            Self::Gaussian { mean, cov } => cov.trace(mean.len()),
            Self::Empirical { samples, mean } => {
                let m = samples.nrows() as f64;
                (0..samples.nrows())
                    .map(|i| {
                        samples
                            .row(i)
                            .iter()
                            .zip(mean.iter())
                            .map(|(x, mu)| (x - mu) * (x - mu))
                            .sum::<f64>()
                    })
                    .sum::<f64>()
                    / m
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        match self {
            Self::Gaussian { mean, cov } => cov.sample_around(mean, rng),
            Self::Empirical { samples, .. } => {
                let i = rng.random_range(0..samples.nrows());
                samples.row(i).transpose()
            }
        }
    }
}

/// Distribution-valued dataset with class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertainDataset {
    pub samples: Vec<Distribution>,
    pub labels: Vec<usize>,
}

impl UncertainDataset {
    pub fn new(samples: Vec<Distribution>, labels: Vec<usize>) -> Result<Self> {
        if samples.is_empty() {
            return arg("dataset must contain at least one distribution");
        }
        if labels.len() != samples.len() {
            return Err(Error::DimensionMismatch {
                expected: samples.len(),
                got: labels.len(),
            });
        }
        let d = samples[0].dim();
        if d == 0 {
            return arg("distributions must have at least one dimension");
        }
        if let Some(bad) = samples.iter().find(|s| s.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.dim(),
            });
        }
        Ok(Self { samples, labels })
    }

    /// Point masses at the rows of `features`.
    pub fn from_points(features: &DMatrix<f64>, labels: Vec<usize>) -> Result<Self> {
        let samples = (0..features.nrows())
            .map(|i| Distribution::dirac(features.row(i).transpose()))
            .collect();
        Self::new(samples, labels)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].dim()
    }

    /// N x D matrix of means.
    pub fn means(&self) -> DMatrix<f64> {
        let n = self.len();
        let d = self.dim();
        DMatrix::from_fn(n, d, |i, j| self.samples[i].mean()[j])
    }

    /// `sum_i Tr(Sigma_i)`.
    pub fn trace_total(&self) -> f64 {
        self.samples.iter().map(Distribution::trace_var).sum()
    }

    pub fn all_dirac(&self) -> bool {
        self.samples.iter().all(Distribution::is_dirac)
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let samples = idx.iter().map(|&i| self.samples[i].clone()).collect();
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        Self::new(samples, labels)
    }
}

/// Which scheme turns points into distributions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UncertaintyScheme {
    /// Isotropic variance `lambda * d_i^2`, `d_i` = distance to nearest distinct point.
    NnDistance,
    /// Isotropic variance `alpha` for every sample.
    Constant,
    Dirac,
}

impl UncertaintyScheme {
    pub fn apply(self, ds: &LabeledDataset, width: f64) -> Result<UncertainDataset> {
        match self {
            Self::NnDistance => estimate_nn_distance(ds, width),
            Self::Constant => estimate_constant(ds, width),
            Self::Dirac => dirac(ds),
        }
    }
}

/// Gaussian per sample, mean `x_i`, covariance `lambda * d_i^2 * I` where
/// `d_i` is the distance to the nearest point not coinciding with `x_i`.
/// Samples with no distinct neighbour, or `lambda = 0`, become Dirac.
pub fn estimate_nn_distance(ds: &LabeledDataset, lambda: f64) -> Result<UncertainDataset> {
    if ds.len() < 2 {
        return arg("nearest-neighbour uncertainty needs at least two samples");
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return arg(format!("width lambda must be finite and >= 0, got {lambda}"));
    }
    let rows = crate::linalg::rows_of(&ds.features);
    let n = rows.len();
    let mut nearest = vec![f64::INFINITY; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d2 = sq_dist(&rows[i], &rows[j]);
            if d2 > 0.0 {
                nearest[i] = nearest[i].min(d2);
                nearest[j] = nearest[j].min(d2);
            }
        }
    }
    let samples = rows
        .into_iter()
        .zip(nearest)
        .map(|(x, d2)| {
            let cov = if d2.is_finite() {
                CovarianceModel::isotropic(lambda * d2)?
            } else {
                CovarianceModel::Dirac
            };
            Ok(Distribution::Gaussian {
                mean: DVector::from_vec(x),
                cov,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    UncertainDataset::new(samples, ds.labels.clone())
}

/// Gaussian per sample with mean `x_i` and covariance `alpha * I`.
pub fn estimate_constant(ds: &LabeledDataset, alpha: f64) -> Result<UncertainDataset> {
    let cov = CovarianceModel::isotropic(alpha)?;
    let samples = (0..ds.len())
        .map(|i| Distribution::Gaussian {
            mean: ds.features.row(i).transpose(),
            cov: cov.clone(),
        })
        .collect();
    UncertainDataset::new(samples, ds.labels.clone())
}

pub fn dirac(ds: &LabeledDataset) -> Result<UncertainDataset> {
    UncertainDataset::from_points(&ds.features, ds.labels.clone())
}
