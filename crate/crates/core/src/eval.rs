//! Evaluation protocol: k-NN on embeddings, validation grid search, rank
//! diagnostics and the two-dimensional toy experiment.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::LabeledDataset;
use crate::embed::{fit_ge_kernel, fit_ngeu, solve_kernel_pencil, Centering, FitOptions};
use crate::error::{arg, Error, Result};
use crate::graphs::{build_graphs, build_lda_graphs, build_mfa_graphs, GraphFamily, GraphPair};
use crate::kernels::{
    cross_kernel_from_stats, kernel_matrix, kernel_matrix_from_stats, FirstLevelKernel, KernelSpec, PairStats,
};
use crate::linalg::{min_eigenvalue, numerical_rank, sq_dist};
use crate::rng::{self, TAG_TOY};
use crate::uncertainty::{
    estimate_nn_distance, CovarianceModel, Distribution, UncertainDataset, UncertaintyScheme,
};

/// Relative singular-value tolerance for numerical ranks.
pub const RANK_TOL: f64 = 1e-10;

/// Euclidean k-NN majority vote. Equal votes go to the label with the
/// smaller summed distance, then to the smaller label.
pub fn knn_classify(train: &DMatrix<f64>, train_labels: &[usize], test: &DMatrix<f64>, k: usize) -> Result<Vec<usize>> {
    let n = train.nrows();
    if k == 0 || k > n {
        return arg(format!("k = {k} must be between 1 and the {n} training samples"));
    }
    if train_labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: train_labels.len(),
        });
    }
    if test.ncols() != train.ncols() {
        return Err(Error::DimensionMismatch {
            expected: train.ncols(),
            got: test.ncols(),
        });
    }
    let train_rows = crate::linalg::rows_of(train);
    let test_rows = crate::linalg::rows_of(test);
    let mut out = Vec::with_capacity(test_rows.len());
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(n);
    for x in &test_rows {
        dist.clear();
        dist.extend(train_rows.iter().enumerate().map(|(i, z)| (sq_dist(x, z).sqrt(), i)));
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
        for &(d, i) in &dist[..k] {
            let e = votes.entry(train_labels[i]).or_insert((0, 0.0));
            e.0 += 1;
            e.1 += d;
        }
        let best = votes
            .iter()
            .min_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.total_cmp(&b.1 .1)).then(a.0.cmp(b.0)))
            .map(|(&l, _)| l)
            .expect("k >= 1");
        out.push(best);
    }
    Ok(out)
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Embedder {
    LinearGe,
    KernelGe,
    Ngeu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Method {
    pub embedder: Embedder,
    pub family: GraphFamily,
    /// Uncertainty scheme for NGEU; ignored otherwise.
    pub scheme: UncertaintyScheme,
}

impl Method {
    /// Report label, e.g. `KDA-NGEU`, `MFA-GE` or `KMFA-NGEU-N`.
    pub fn label(&self) -> String {
        let kernel = self.embedder != Embedder::LinearGe;
        let base = match self.family {
            GraphFamily::Pca => "PCA",
            GraphFamily::Lda => if kernel { "DA" } else { "LDA" },
            GraphFamily::Mfa => "MFA",
        };
        let prefix = if kernel { "K" } else { "" };
        let suffix = match (self.embedder, self.scheme) {
            (Embedder::Ngeu, UncertaintyScheme::Constant) => "-NGEU-N",
            (Embedder::Ngeu, _) => "-NGEU",
            _ => "-GE",
        };
        format!("{prefix}{base}{suffix}")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridConfig {
    pub dims: Vec<usize>,
    /// Dimension grid used for LDA graphs.
    pub lda_dims: Vec<usize>,
    /// Widths `lambda` (nn-distance) or variances `alpha` (constant).
    pub widths: Vec<f64>,
    pub kernels: Vec<FirstLevelKernel>,
    pub knn_k: usize,
    pub k1: usize,
    pub k2: usize,
    pub fit: FitOptions,
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.lda_dims.is_empty() || self.kernels.is_empty() || self.widths.is_empty() {
            return arg("grids must be non-empty");
        }
        if self.dims.iter().chain(&self.lda_dims).any(|&d| d == 0) {
            return arg("embedding dimensions must be at least 1");
        }
        if let Some(w) = self.widths.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return arg(format!("width {w} must be finite and >= 0"));
        }
        for k in &self.kernels {
            k.validate()?;
        }
        if self.knn_k == 0 {
            return arg("knn k must be at least 1");
        }
        Ok(())
    }
}

/// One train / validation / test partition.
#[derive(Clone, Debug)]
pub struct Fold {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub test: LabeledDataset,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Cell {
    /// `None` for linear GE.
    pub kernel: Option<FirstLevelKernel>,
    pub width: f64,
    pub d: usize,
    pub val_accuracy: f64,
    pub note: Option<String>,
}

impl Cell {
    fn order_key(&self) -> (usize, f64, u8, f64) {
        let (rank, param) = match self.kernel {
            None => (0, 0.0),
            Some(FirstLevelKernel::Linear) => (0, 0.0),
            Some(FirstLevelKernel::Rbf { sigma }) => (1, sigma),
            Some(FirstLevelKernel::Poly2 { offset }) => (2, offset),
        };
        (self.d, self.width, rank, param)
    }

    /// Better validation accuracy first; ties to smaller d, width, kernel.
    fn better_than(&self, other: &Cell) -> bool {
        if self.val_accuracy != other.val_accuracy {
            return self.val_accuracy > other.val_accuracy;
        }
        let (a, b) = (self.order_key(), other.order_key());
        a.0.cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.total_cmp(&b.3))
            .is_lt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostics {
    pub max_residual: f64,
    pub ridge_used: f64,
    pub restricted_rank: Option<usize>,
    pub min_kernel_eigenvalue: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FoldReport {
    pub label: String,
    pub cells: Vec<Cell>,
    pub selected: Option<Cell>,
    pub test_accuracy: f64,
    pub notes: Vec<String>,
    pub diagnostics: Option<Diagnostics>,
}

impl FoldReport {
    /// `kernel,width,d,val_accuracy,note` table, one row per cell.
    pub fn cells_csv(&self) -> String {
        let mut out = String::from("kernel,width,d,val_accuracy,note\n");
        for c in &self.cells {
            let kernel = c.kernel.map(|k| k.label()).unwrap_or_else(|| "none".into());
            let _ = writeln!(
                out,
                "\"{kernel}\",{},{},{:.6},{}",
                c.width,
                c.d,
                c.val_accuracy,
                c.note.as_deref().unwrap_or("")
            );
        }
        out
    }
}

/// Per-sample isotropic variances at unit width for a scheme.
fn unit_variances(ds: &LabeledDataset, scheme: UncertaintyScheme) -> Result<Vec<f64>> {
    Ok(match scheme {
        UncertaintyScheme::Dirac => vec![0.0; ds.len()],
        UncertaintyScheme::Constant => vec![1.0; ds.len()],
        UncertaintyScheme::NnDistance => estimate_nn_distance(ds, 1.0)?
            .samples
            .iter()
            .map(|p| match p.covariance() {
                Some(CovarianceModel::Isotropic(a)) => *a,
                _ => 0.0,
            })
            .collect(),
    })
}

fn scaled(v: &[f64], width: f64) -> Vec<f64> {
    v.iter().map(|&a| if a == 0.0 { 0.0 } else { width * a }).collect()
}

fn dims_for(method: &Method, grid: &GridConfig, fold: &Fold, notes: &mut Vec<String>) -> Vec<usize> {
    let n = fold.train.len();
    let dims = if method.family == GraphFamily::Lda { &grid.lda_dims } else { &grid.dims };
    let classes = fold.train.classes().len();
    let mut out = Vec::new();
    for &d in dims {
        if method.family == GraphFamily::Lda && d + 1 > classes {
            notes.push(format!("d = {d} skipped: LDA allows at most {} directions", classes.saturating_sub(1)));
            continue;
        }
        let cap = if method.embedder == Embedder::LinearGe { fold.train.dim() } else { n };
        if d > cap {
            notes.push(format!("d = {d} skipped: exceeds problem size {cap}"));
            continue;
        }
        out.push(d);
    }
    out
}

struct Fitted {
    /// Training, validation and test embeddings at the largest d.
    train: DMatrix<f64>,
    val: DMatrix<f64>,
    test: DMatrix<f64>,
    diagnostics: Diagnostics,
}

struct FoldCache {
    train_stats: PairStats,
    val_stats: PairStats,
    test_stats: PairStats,
    vars: [Vec<f64>; 3],
}

/// Exhaustive validation grid search for one method on one fold.
pub fn grid_search(method: &Method, fold: &Fold, grid: &GridConfig) -> Result<FoldReport> {
    grid.validate()?;
    let mut notes = Vec::new();
    let dims = dims_for(method, grid, fold, &mut notes);
    let label = method.label();
    if dims.is_empty() {
        notes.push("no admissible embedding dimension".into());
        return Ok(FoldReport {
            label,
            cells: vec![],
            selected: None,
            test_accuracy: 0.0,
            notes,
            diagnostics: None,
        });
    }
    let d_max = *dims.iter().max().expect("non-empty");
    let train = &fold.train;
    let graphs = build_graphs(method.family, &train.features, &train.labels, grid.k1, grid.k2)?;

    let widths: Vec<f64> = match (method.embedder, method.scheme) {
        (Embedder::Ngeu, UncertaintyScheme::Dirac) | (Embedder::LinearGe | Embedder::KernelGe, _) => vec![0.0],
        _ => grid.widths.clone(),
    };
    let kernels: Vec<Option<FirstLevelKernel>> = match method.embedder {
        Embedder::LinearGe => vec![None],
        _ => grid.kernels.iter().map(|&k| Some(k)).collect(),
    };
    let cache = if method.embedder == Embedder::LinearGe {
        None
    } else {
        let scheme = if method.embedder == Embedder::Ngeu { method.scheme } else { UncertaintyScheme::Dirac };
        Some(FoldCache {
            train_stats: PairStats::within(&train.features),
            val_stats: PairStats::cross(&fold.val.features, &train.features),
            test_stats: PairStats::cross(&fold.test.features, &train.features),
            vars: [
                unit_variances(train, scheme)?,
                unit_variances(&fold.val, scheme)?,
                unit_variances(&fold.test, scheme)?,
            ],
        })
    };

    let mut cells = Vec::new();
    let mut fitted: Vec<Option<Fitted>> = Vec::new();
    let mut owners = Vec::new();
    for kernel in &kernels {
        for &width in &widths {
            let fit = fit_cell(fold, &graphs, *kernel, width, d_max, grid, cache.as_ref());
            let slot = fitted.len();
            match fit {
                Ok(f) => {
                    for &d in &dims {
                        let (acc, note) = if f.train.ncols() < d {
                            (0.0, Some(format!("reduced rank: {} directions available", f.train.ncols())))
                        } else {
                            let tr = f.train.columns(0, d).into_owned();
                            let va = f.val.columns(0, d).into_owned();
                            match knn_classify(&tr, &train.labels, &va, grid.knn_k.min(train.len())) {
                                Ok(p) => (accuracy(&p, &fold.val.labels), None),
                                Err(e) => (0.0, Some(e.to_string())),
                            }
                        };
                        cells.push(Cell {
                            kernel: *kernel,
                            width,
                            d,
                            val_accuracy: acc,
                            note,
                        });
                        owners.push(slot);
                    }
                    fitted.push(Some(f));
                }
                Err(e) => {
                    for &d in &dims {
                        cells.push(Cell {
                            kernel: *kernel,
                            width,
                            d,
                            val_accuracy: 0.0,
                            note: Some(format!("fit failed: {e}")),
                        });
                        owners.push(slot);
                    }
                    fitted.push(None);
                }
            }
        }
    }

    let mut best: Option<usize> = None;
    for (i, c) in cells.iter().enumerate() {
        if c.note.is_some() {
            continue;
        }
        if best.is_none_or(|b| c.better_than(&cells[b])) {
            best = Some(i);
        }
    }
    let (selected, test_accuracy, diagnostics) = match best {
        Some(i) => {
            let c = cells[i].clone();
            let f = fitted[owners[i]].as_ref().expect("selected cell was fitted");
            let tr = f.train.columns(0, c.d).into_owned();
            let te = f.test.columns(0, c.d).into_owned();
            let pred = knn_classify(&tr, &train.labels, &te, grid.knn_k.min(train.len()))?;
            (Some(c), accuracy(&pred, &fold.test.labels), Some(f.diagnostics.clone()))
        }
        None => {
            notes.push("every cell failed".into());
            (None, 0.0, None)
        }
    };
    Ok(FoldReport {
        label,
        cells,
        selected,
        test_accuracy,
        notes,
        diagnostics,
    })
}

fn fit_cell(
    fold: &Fold,
    graphs: &GraphPair,
    kernel: Option<FirstLevelKernel>,
    width: f64,
    d_max: usize,
    grid: &GridConfig,
    cache: Option<&FoldCache>,
) -> Result<Fitted> {
    let train = &fold.train;
    let Some(first) = kernel else {
        let model = crate::embed::fit_ge_linear(train, graphs, d_max, &grid.fit)?;
        return Ok(Fitted {
            train: model.transform(train)?,
            val: model.transform(&fold.val)?,
            test: model.transform(&fold.test)?,
            diagnostics: Diagnostics {
                max_residual: model.diagnostics.residual_norms.iter().copied().fold(0.0, f64::max),
                ridge_used: model.diagnostics.ridge_used,
                restricted_rank: model.diagnostics.restricted_rank,
                min_kernel_eigenvalue: None,
            },
        });
    };
    let cache = cache.expect("kernel methods carry a cache");
    let spec = KernelSpec::default_for(first);
    let dim = train.dim();
    let [tv, vv, sv] = &cache.vars;
    let (tv, vv, sv) = (scaled(tv, width), scaled(vv, width), scaled(sv, width));
    let k = kernel_matrix_from_stats(&cache.train_stats, &tv, dim, &spec)?.k;
    let sol = solve_kernel_pencil(&k, graphs, d_max, &grid.fit)?;
    let alpha = &sol.gevp.eigenvectors;
    let project = |kt: DMatrix<f64>, c: &Option<Centering>| match c {
        Some(c) => {
            let n = kt.ncols() as f64;
            let rm: Vec<f64> = kt.row_iter().map(|r| r.sum() / n).collect();
            DMatrix::from_fn(kt.nrows(), kt.ncols(), |t, j| kt[(t, j)] - c.column_means[j] - rm[t] + c.grand_mean) * alpha
        }
        None => kt * alpha,
    };
    let kv = cross_kernel_from_stats(&cache.val_stats, &vv, &tv, dim, &spec)?;
    let ks = cross_kernel_from_stats(&cache.test_stats, &sv, &tv, dim, &spec)?;
    Ok(Fitted {
        train: project(k.clone(), &sol.centering),
        val: project(kv, &sol.centering),
        test: project(ks, &sol.centering),
        diagnostics: Diagnostics {
            max_residual: sol.gevp.max_residual(),
            ridge_used: sol.gevp.ridge_used,
            restricted_rank: match sol.gevp.reduction {
                crate::gevp::Reduction::Cholesky => None,
                crate::gevp::Reduction::Restricted { rank } => Some(rank),
            },
            min_kernel_eigenvalue: None,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodSummary {
    pub label: String,
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub summaries: Vec<MethodSummary>,
    /// `folds[f][m]` for fold `f` and method `m`.
    pub folds: Vec<Vec<FoldReport>>,
}

impl ExperimentReport {
    pub fn summary(&self, label: &str) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.label == label)
    }

    /// `method,mean,std,fold_1..fold_k` table.
    pub fn accuracy_csv(&self) -> String {
        let k = self.folds.len();
        let mut out = String::from("method,mean,std");
        for f in 0..k {
            let _ = write!(out, ",fold_{}", f + 1);
        }
        out.push('\n');
        for s in &self.summaries {
            let _ = write!(out, "{},{:.6},{:.6}", s.label, s.mean, s.std);
            for a in &s.fold_accuracies {
                let _ = write!(out, ",{a:.6}");
            }
            out.push('\n');
        }
        out
    }
}

/// Grid search for every method (each with its own grid) on every fold.
/// Accuracies are aggregated as mean and population standard deviation.
pub fn run_experiment(methods: &[(Method, GridConfig)], folds: &[Fold]) -> Result<ExperimentReport> {
    let mut per_fold = Vec::with_capacity(folds.len());
    for fold in folds {
        per_fold.push(methods.iter().map(|(m, g)| grid_search(m, fold, g)).collect::<Result<Vec<_>>>()?);
    }
    let summaries = methods
        .iter()
        .enumerate()
        .map(|(m, (method, _))| {
            let accs: Vec<f64> = per_fold.iter().map(|f| f[m].test_accuracy).collect();
            let mean = accs.iter().sum::<f64>() / accs.len().max(1) as f64;
            let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / accs.len().max(1) as f64;
            MethodSummary {
                label: method.label(),
                fold_accuracies: accs,
                mean,
                std: var.sqrt(),
            }
        })
        .collect();
    Ok(ExperimentReport {
        summaries,
        folds: per_fold,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankReport {
    pub rank_k_ge: usize,
    pub rank_k_ngeu: usize,
    pub rank_s_ge: usize,
    pub rank_s_ngeu: usize,
    pub rank_b_ge: usize,
    pub rank_b_ngeu: usize,
    pub min_eig_k_ge: f64,
    pub min_eig_k_ngeu: f64,
    pub min_trace: f64,
}

/// Numerical ranks of `K`, `K L K` and the constraint matrix with and
/// without uncertainty (the GE side uses the means as Dirac samples).
pub fn rank_report(data: &UncertainDataset, graphs: &GraphPair, spec: &KernelSpec) -> Result<RankReport> {
    let means = UncertainDataset::from_points(&data.means(), data.labels.clone())?;
    let k_ge = kernel_matrix(&means, spec)?.k;
    let k_ng = kernel_matrix(data, spec)?.k;
    let l = graphs.laplacian();
    let lp = graphs.penalty_laplacian();
    let pencil = |k: &DMatrix<f64>| {
        let s = k * &l * k;
        let b = match &lp {
            Some(lp) => k * lp * k,
            None => k.clone(),
        };
        (numerical_rank(&s, RANK_TOL), numerical_rank(&b, RANK_TOL))
    };
    let (s_ge, b_ge) = pencil(&k_ge);
    let (s_ng, b_ng) = pencil(&k_ng);
    Ok(RankReport {
        rank_k_ge: numerical_rank(&k_ge, RANK_TOL),
        rank_k_ngeu: numerical_rank(&k_ng, RANK_TOL),
        rank_s_ge: s_ge,
        rank_s_ngeu: s_ng,
        rank_b_ge: b_ge,
        rank_b_ngeu: b_ng,
        min_eig_k_ge: min_eigenvalue(&k_ge),
        min_eig_k_ngeu: min_eigenvalue(&k_ng),
        min_trace: data.samples.iter().map(Distribution::trace_var).fold(f64::INFINITY, f64::min),
    })
}

/// Points per class in the toy experiment.
pub const TOY_PER_CLASS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ToyDirection {
    pub method: String,
    pub family: GraphFamily,
    pub direction: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ellipse {
    pub center: [f64; 2],
    /// Standard deviations along the principal axes, major first.
    pub axes: [f64; 2],
    /// Angle of the major axis in radians.
    pub angle: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ToyResult {
    pub labels: Vec<usize>,
    pub ellipses: Vec<Ellipse>,
    pub directions: Vec<ToyDirection>,
    pub angle_lda: f64,
    pub angle_mfa: f64,
}

impl ToyResult {
    pub fn directions_csv(&self) -> String {
        let mut out = String::from("method,family,x,y\n");
        for d in &self.directions {
            let _ = writeln!(out, "{},{},{},{}", d.method, d.family.name(), d.direction[0], d.direction[1]);
        }
        out
    }

    pub fn ellipses_csv(&self) -> String {
        let mut out = String::from("index,label,cx,cy,major,minor,angle\n");
        for (i, (e, l)) in self.ellipses.iter().zip(&self.labels).enumerate() {
            let _ = writeln!(out, "{i},{l},{},{},{},{},{}", e.center[0], e.center[1], e.axes[0], e.axes[1], e.angle);
        }
        out
    }
}

/// Random SPD 2x2 covariance: uniform rotation, axis variances in [0.1, 1].
fn random_covariance<R: Rng>(r: &mut R) -> DMatrix<f64> {
    let theta = r.random_range(0.0..std::f64::consts::PI);
    let (c, s) = (theta.cos(), theta.sin());
    let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
    let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![r.random_range(0.1..1.0), r.random_range(0.1..1.0)]));
    crate::linalg::symmetrize(&(&rot * diag * rot.transpose()))
}

fn ellipse_of(center: &DVector<f64>, cov: &DMatrix<f64>) -> Ellipse {
    let (vals, vecs) = crate::linalg::sorted_eigh(cov);
    let major = vecs.column(1);
    Ellipse {
        center: [center[0], center[1]],
        axes: [vals[1].max(0.0).sqrt(), vals[0].max(0.0).sqrt()],
        angle: major[1].atan2(major[0]),
    }
}

/// Unsigned angle between two directions.
pub fn direction_angle(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let na = (a[0] * a[0] + a[1] * a[1]).sqrt();
    let nb = (b[0] * b[0] + b[1] * b[1]).sqrt();
    ((a[0] * b[0] + a[1] * b[1]).abs() / (na * nb)).min(1.0).acos()
}

/// Input-space direction `sum_k alpha_k mu_k` of a linear-kernel model.
fn input_direction(alpha: &DMatrix<f64>, means: &DMatrix<f64>) -> [f64; 2] {
    let p = means.transpose() * alpha.column(0);
    let p = p.normalize();
    let mut out = [p[0], p[1]];
    if out[0].abs() >= out[1].abs() && out[0] < 0.0 || out[0].abs() < out[1].abs() && out[1] < 0.0 {
        out = [-out[0], -out[1]];
    }
    out
}

/// Two classes of three points in the plane, each with a random Gaussian
/// uncertainty scaled by `scale`; LDA and MFA directions from linear-kernel
/// GE and NGEU.
pub fn toy2d_experiment(seed: u64, scale: f64) -> Result<ToyResult> {
    if !(scale >= 0.0) || !scale.is_finite() {
        return arg(format!("uncertainty scale must be finite and >= 0, got {scale}"));
    }
    let ds = crate::dataio::synthetic_two_class_2d(seed, TOY_PER_CLASS)?;
    let mut r = rng::stream(seed, &[TAG_TOY]);
    let covs: Vec<DMatrix<f64>> = (0..ds.len()).map(|_| random_covariance(&mut r) * scale).collect();
    let samples = (0..ds.len())
        .map(|i| Distribution::gaussian(ds.features.row(i).transpose(), CovarianceModel::full(covs[i].clone())?))
        .collect::<Result<Vec<_>>>()?;
    let data = UncertainDataset::new(samples, ds.labels.clone())?;
    let spec = KernelSpec::default_for(FirstLevelKernel::Linear);
    let opts = FitOptions::default();
    let mut directions = Vec::new();
    let mut angles = [0.0; 2];
    for (slot, family) in [GraphFamily::Lda, GraphFamily::Mfa].into_iter().enumerate() {
        let graphs = match family {
            GraphFamily::Lda => build_lda_graphs(&ds.labels)?,
            _ => build_mfa_graphs(&ds.features, &ds.labels, 1, 2)?,
        };
        let ge = fit_ge_kernel(&ds, FirstLevelKernel::Linear, &graphs, 1, &opts)?;
        let ng = fit_ngeu(&data, &spec, &graphs, 1, &opts)?;
        let dir = |m: &crate::embed::EmbeddingModel| match &m.kind {
            crate::embed::ModelKind::KernelGe { alpha, .. } | crate::embed::ModelKind::Ngeu { alpha, .. } => {
                input_direction(alpha, &ds.features)
            }
            crate::embed::ModelKind::LinearGe { .. } => unreachable!("kernel fits"),
        };
        let (pg, pn) = (dir(&ge), dir(&ng));
        angles[slot] = direction_angle(&pg, &pn);
        directions.push(ToyDirection {
            method: "GE".into(),
            family,
            direction: pg,
        });
        directions.push(ToyDirection {
            method: "NGEU".into(),
            family,
            direction: pn,
        });
    }
    Ok(ToyResult {
        labels: ds.labels.clone(),
        ellipses: (0..ds.len()).map(|i| ellipse_of(&ds.features.row(i).transpose(), &covs[i])).collect(),
        directions,
        angle_lda: angles[0],
        angle_mfa: angles[1],
    })
}
