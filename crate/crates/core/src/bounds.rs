//! Rademacher-complexity quantities for norm-bounded mean-embedding hypotheses.
//!
//! For `F = { P -> <w, mu(P)> : ||w|| <= A }` the empirical complexity over
//! `N` distributions is `(A/N) E_sigma sqrt(sigma' K sigma)`, which Jensen
//! bounds by `A sqrt(Tr K) / N`. With the linear kernel and the
//! trace-augmented diagonal the trace splits into a mean part and an
//! uncertainty part.

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::embed::{EmbeddingModel, ModelKind};
use crate::error::{arg, Error, Result};
use crate::kernels::{kernel_matrix, DiagonalConvention, Evaluation, FirstLevelKernel, KernelSpec};
use crate::linalg::dot;
use crate::rng::{self, TAG_RESAMPLE, TAG_SIGMA};
use crate::uncertainty::{Distribution, UncertainDataset};

pub const DEFAULT_SIGMA_DRAWS: usize = 10_000;
pub const DEFAULT_DATASETS: usize = 200;
/// Draws per pair when an empirical distribution forces Monte-Carlo kernels.
const EMPIRICAL_PAIR_SAMPLES: usize = 2_000;

fn check_budget(a: f64) -> Result<()> {
    if !(a > 0.0) || !a.is_finite() {
        return arg(format!("norm budget A must be positive and finite, got {a}"));
    }
    Ok(())
}

/// `A sqrt(Tr K) / N`.
pub fn trace_bound(k: &DMatrix<f64>, a: f64) -> Result<f64> {
    check_budget(a)?;
    let n = k.nrows();
    if n == 0 || k.ncols() != n {
        return arg("kernel matrix must be square and non-empty");
    }
    let tr = k.trace();
    if !(tr >= 0.0) {
        return arg(format!("kernel matrix has negative trace {tr}"));
    }
    Ok(a * tr.sqrt() / n as f64)
}

/// `(A/N) sqrt(sum_i mu_i' mu_i)` and `(A/N) sqrt(sum_i Tr Sigma_i)`.
pub fn split_bound(data: &UncertainDataset, a: f64) -> Result<(f64, f64)> {
    check_budget(a)?;
    let n = data.len() as f64;
    let means: f64 = data
        .samples
        .iter()
        .map(|p| {
            let m = p.mean().as_slice();
            dot(m, m)
        })
        .sum();
    Ok((a * means.sqrt() / n, a * data.trace_total().sqrt() / n))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

/// Monte-Carlo estimate of `(A/N) E_sigma sqrt(sigma' K sigma)` over
/// Rademacher vectors drawn from the stream keyed by `seed`.
pub fn empirical_rademacher(k: &DMatrix<f64>, a: f64, n_sigma: usize, seed: u64) -> Result<Estimate> {
    check_budget(a)?;
    let n = k.nrows();
    if n == 0 || k.ncols() != n {
        return arg("kernel matrix must be square and non-empty");
    }
    if n_sigma == 0 {
        return arg("need at least one Rademacher draw");
    }
    let tol = 1e-10 * k.amax().max(f64::MIN_POSITIVE) * n as f64;
    let mut r = rng::stream(seed, &[TAG_SIGMA]);
    let mut sigma = vec![0.0; n];
    let (mut mean, mut m2) = (0.0, 0.0);
    for t in 0..n_sigma {
        for s in sigma.iter_mut() {
            *s = if r.random::<bool>() { 1.0 } else { -1.0 };
        }
        let mut q = 0.0;
        for i in 0..n {
            let row: f64 = (0..n).map(|j| k[(i, j)] * sigma[j]).sum();
            q += sigma[i] * row;
        }
        if q < -tol {
            return Err(Error::NotPsd(format!("sigma' K sigma = {q}")));
        }
        let v = a * q.max(0.0).sqrt() / n as f64;
        let delta = v - mean;
        mean += delta / (t + 1) as f64;
        m2 += delta * (v - mean);
    }
    let std_error = if n_sigma > 1 {
        (m2 / (n_sigma - 1) as f64 / n_sigma as f64).sqrt()
    } else {
        0.0
    };
    Ok(Estimate { value: mean, std_error })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub n: usize,
    pub a: f64,
    pub trace_bound: f64,
    pub empirical: Estimate,
    /// Mean and uncertainty terms of the split bound (linear kernel only).
    pub split_terms: Option<(f64, f64)>,
}

pub fn bound_report(
    k: &DMatrix<f64>,
    a: f64,
    n_sigma: usize,
    seed: u64,
    linear_data: Option<&UncertainDataset>,
) -> Result<BoundReport> {
    Ok(BoundReport {
        n: k.nrows(),
        a,
        trace_bound: trace_bound(k, a)?,
        empirical: empirical_rademacher(k, a, n_sigma, seed)?,
        split_terms: linear_data.map(|d| split_bound(d, a)).transpose()?,
    })
}

/// RKHS norm `sqrt(alpha_1' K alpha_1)` of the first direction of a kernel
/// model, or the Euclidean norm of the first projection for linear models.
pub fn model_norm_budget(model: &EmbeddingModel) -> Result<f64> {
    let (alpha, k) = match &model.kind {
        ModelKind::LinearGe { projection } => return Ok(projection.column(0).norm()),
        ModelKind::KernelGe { alpha, train, first } => {
            let pts = UncertainDataset::from_points(train, vec![0; train.nrows()])?;
            (alpha, kernel_matrix(&pts, &KernelSpec::default_for(*first))?.k)
        }
        ModelKind::Ngeu { alpha, train, spec } => (alpha, kernel_matrix(train, spec)?.k),
    };
    let a = alpha.column(0);
    Ok(a.dot(&(&k * a)).max(0.0).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Theorem4Check {
    pub lhs: Estimate,
    pub rhs: Estimate,
    /// `lhs <= rhs + 3 sqrt(se_lhs^2 + se_rhs^2)`.
    pub holds: bool,
    /// The trace-augmented diagonal is not a mean-embedding kernel.
    pub outside_hypotheses: bool,
}

/// Compares the complexity over distributions with the expected complexity
/// over point datasets drawn one sample per distribution. Both sides use the
/// same Rademacher stream.
pub fn theorem4_check(
    data: &UncertainDataset,
    first: FirstLevelKernel,
    diagonal: DiagonalConvention,
    a: f64,
    n_datasets: usize,
    n_sigma: usize,
    seed: u64,
) -> Result<Theorem4Check> {
    if n_datasets == 0 {
        return arg("need at least one resampled dataset");
    }
    let empirical = data.samples.iter().any(|p| matches!(p, Distribution::Empirical { .. }));
    let mode = if empirical {
        Evaluation::MonteCarlo {
            samples: EMPIRICAL_PAIR_SAMPLES,
            seed,
        }
    } else {
        Evaluation::ClosedForm
    };
    let spec = KernelSpec::new(first, mode, diagonal)?;
    let lhs = empirical_rademacher(&kernel_matrix(data, &spec)?.k, a, n_sigma, seed)?;

    let point_spec = KernelSpec::new(first, Evaluation::ClosedForm, DiagonalConvention::ExpectedKernel)?;
    let n = data.len();
    let dim = data.dim();
    let (mut mean, mut m2) = (0.0, 0.0);
    let mut last_se = 0.0;
    for s in 0..n_datasets {
        let mut pts = DMatrix::zeros(n, dim);
        for (i, p) in data.samples.iter().enumerate() {
            let mut r = rng::stream(seed, &[TAG_RESAMPLE, s as u64, i as u64]);
            let x = p.sample(&mut r);
            pts.set_row(i, &x.transpose());
        }
        let ds = UncertainDataset::from_points(&pts, data.labels.clone())?;
        let est = empirical_rademacher(&kernel_matrix(&ds, &point_spec)?.k, a, n_sigma, seed)?;
        last_se = est.std_error;
        let delta = est.value - mean;
        mean += delta / (s + 1) as f64;
        m2 += delta * (est.value - mean);
    }
    let rhs_se = if n_datasets > 1 {
        (m2 / (n_datasets - 1) as f64 / n_datasets as f64).sqrt()
    } else {
        last_se
    };
    let rhs = Estimate {
        value: mean,
        std_error: rhs_se,
    };
    let slack = 3.0 * (lhs.std_error.powi(2) + rhs.std_error.powi(2)).sqrt();
    Ok(Theorem4Check {
        lhs,
        rhs,
        holds: lhs.value <= rhs.value + slack,
        outside_hypotheses: diagonal == DiagonalConvention::TraceAugmented,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uncertainty::CovarianceModel;
    use nalgebra::DVector;

    #[test]
    fn trace_bound_examples() {
        let k = DMatrix::identity(4, 4);
        assert_eq!(trace_bound(&k, 1.0).unwrap(), 0.5);
        assert_eq!(trace_bound(&k, 2.0).unwrap(), 1.0);
        assert!((trace_bound(&(&k * 9.0), 1.0).unwrap() - 1.5).abs() < 1e-15);
        assert!(trace_bound(&(-k), 1.0).is_err());
    }

    #[test]
    fn identity_estimate_is_exact() {
        let e = empirical_rademacher(&DMatrix::identity(4, 4), 1.0, 500, 3).unwrap();
        assert_eq!(e.value, 0.5);
        assert_eq!(e.std_error, 0.0);
    }

    #[test]
    fn rank_one_matches_enumeration() {
        let v = DVector::from_vec(vec![0.5, -1.0, 2.0, 0.3, 1.1, -0.7, 0.2, 0.9, -1.5, 0.4]);
        let k = &v * v.transpose();
        let n = v.len();
        let mut exact = 0.0;
        for mask in 0..(1u32 << n) {
            let s: f64 = (0..n).map(|i| if mask >> i & 1 == 1 { v[i] } else { -v[i] }).sum();
            exact += s.abs();
        }
        exact /= (1u32 << n) as f64 * n as f64;
        let e = empirical_rademacher(&k, 1.0, 20_000, 5).unwrap();
        assert!((e.value - exact).abs() <= 3.0 * e.std_error, "{} vs {exact}", e.value);
    }

    #[test]
    fn split_bound_examples() {
        let n = 5;
        let d = 3;
        let unit = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let samples = (0..n)
            .map(|_| Distribution::gaussian(unit.clone(), CovarianceModel::Isotropic(1.0)).unwrap())
            .collect();
        let data = UncertainDataset::new(samples, vec![0; n]).unwrap();
        let (ge, unc) = split_bound(&data, 1.0).unwrap();
        assert!((unc - ((n * d) as f64).sqrt() / n as f64).abs() < 1e-15);
        assert!((ge - (n as f64).sqrt() / n as f64).abs() < 1e-15);
        let dirac = UncertainDataset::from_points(&DMatrix::from_element(n, d, 0.5), vec![0; n]).unwrap();
        let (ge, unc) = split_bound(&dirac, 1.0).unwrap();
        assert_eq!(unc, 0.0);
        let gram = dirac.means() * dirac.means().transpose();
        assert!((ge - trace_bound(&gram, 1.0).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn dirac_inputs_give_equal_complexities() {
        let x = DMatrix::from_row_slice(4, 2, &[0.0, 1.0, 1.0, 0.5, -1.0, 0.2, 0.3, 0.3]);
        let data = UncertainDataset::from_points(&x, vec![0, 1, 0, 1]).unwrap();
        let c = theorem4_check(&data, FirstLevelKernel::Rbf { sigma: 1.0 }, DiagonalConvention::ExpectedKernel, 1.0, 5, 200, 9).unwrap();
        assert_eq!(c.lhs.value, c.rhs.value);
        assert_eq!(c.rhs.std_error, 0.0);
        assert!(c.holds);
    }
}
