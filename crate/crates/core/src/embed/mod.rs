//! Linear graph embedding, kernel graph embedding and NGEU.
//!
//! All three reduce to a generalized eigenproblem. With data matrix `X`
//! (one sample per row) the linear pencil is `X' L X p = rho X' Lp X p`
//! (or `p' p = 1` for the identity constraint). The kernel pencils are
//! `K L K a = rho K Lp K a` (or `K a` for the identity constraint), where `K`
//! is the point Gram matrix for kernel GE and the mean-embedding kernel
//! matrix for NGEU.

mod persist;

pub use persist::{load_model, model_from_bytes, model_to_bytes, save_model, FORMAT_VERSION};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataio::LabeledDataset;
use crate::error::{arg, Error, Result};
use crate::gevp::{solve_gevp, GevpResult, Reduction};
use crate::graphs::{GraphFamily, GraphPair, Penalty};
use crate::kernels::{cross_kernel, kernel_matrix, FirstLevelKernel, KernelSpec};
use crate::uncertainty::{UncertainDataset, UncertaintyScheme};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FitOptions {
    /// Relative ridge added to the constraint matrix.
    pub ridge: f64,
    /// Double-centre the kernel matrix before solving.
    pub center: bool,
}

/// Solver diagnostics kept with a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GevpSummary {
    pub eigenvalues: Vec<f64>,
    pub residual_norms: Vec<f64>,
    pub ridge_used: f64,
    /// Dimension of the constraint range when the restricted reduction was used.
    pub restricted_rank: Option<usize>,
    pub reduced_rank: bool,
}

impl From<&GevpResult> for GevpSummary {
    fn from(r: &GevpResult) -> Self {
        Self {
            eigenvalues: r.eigenvalues.iter().copied().collect(),
            residual_norms: r.residual_norms.clone(),
            ridge_used: r.ridge_used,
            restricted_rank: match r.reduction {
                Reduction::Cholesky => None,
                Reduction::Restricted { rank } => Some(rank),
            },
            reduced_rank: r.reduced_rank,
        }
    }
}

/// Column means and grand mean of the training kernel matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Centering {
    pub column_means: DVector<f64>,
    pub grand_mean: f64,
}

impl Centering {
    fn of(k: &DMatrix<f64>) -> Self {
        let n = k.nrows() as f64;
        let column_means = DVector::from_iterator(k.ncols(), k.column_iter().map(|c| c.sum() / n));
        let grand_mean = column_means.sum() / k.ncols() as f64;
        Self {
            column_means,
            grand_mean,
        }
    }

    /// Centres rows of a kernel evaluated against the training set.
    fn apply(&self, kt: &DMatrix<f64>) -> DMatrix<f64> {
        let n = kt.ncols() as f64;
        let row_means: Vec<f64> = kt.row_iter().map(|r| r.sum() / n).collect();
        DMatrix::from_fn(kt.nrows(), kt.ncols(), |t, k| {
            kt[(t, k)] - self.column_means[k] - row_means[t] + self.grand_mean
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelKind {
    /// Projection `P` (D x d).
    LinearGe { projection: DMatrix<f64> },
    /// Coefficients `alpha` (N x d) over the stored training points (N x D).
    KernelGe {
        alpha: DMatrix<f64>,
        train: DMatrix<f64>,
        first: FirstLevelKernel,
    },
    /// Coefficients `alpha` (N x d) over the stored training distributions.
    Ngeu {
        alpha: DMatrix<f64>,
        train: UncertainDataset,
        spec: KernelSpec,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel {
    pub kind: ModelKind,
    pub family: GraphFamily,
    /// Dimension that was asked for; the model may hold fewer columns.
    pub requested_dim: usize,
    pub train_labels: Vec<usize>,
    pub centering: Option<Centering>,
    pub diagnostics: GevpSummary,
    /// How point inputs are turned into distributions by `transform`.
    pub uncertainty: Option<UncertaintyRecipe>,
}

/// Uncertainty scheme and width applied within each input set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRecipe {
    pub scheme: UncertaintyScheme,
    pub width: f64,
}

impl EmbeddingModel {
    /// Number of output dimensions.
    pub fn dim(&self) -> usize {
        match &self.kind {
            ModelKind::LinearGe { projection } => projection.ncols(),
            ModelKind::KernelGe { alpha, .. } | ModelKind::Ngeu { alpha, .. } => alpha.ncols(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.kind {
            ModelKind::LinearGe { projection } => projection.nrows(),
            ModelKind::KernelGe { train, .. } => train.ncols(),
            ModelKind::Ngeu { train, .. } => train.dim(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            ModelKind::LinearGe { .. } => "linear-ge",
            ModelKind::KernelGe { .. } => "kernel-ge",
            ModelKind::Ngeu { .. } => "ngeu",
        }
    }

    /// Keeps the first `d` output dimensions.
    pub fn truncated(&self, d: usize) -> Result<Self> {
        if d == 0 || d > self.dim() {
            return arg(format!("cannot keep {d} of {} dimensions", self.dim()));
        }
        let mut m = self.clone();
        match &mut m.kind {
            ModelKind::LinearGe { projection } => *projection = projection.columns(0, d).into_owned(),
            ModelKind::KernelGe { alpha, .. } | ModelKind::Ngeu { alpha, .. } => *alpha = alpha.columns(0, d).into_owned(),
        }
        m.requested_dim = d;
        m.diagnostics.eigenvalues.truncate(d);
        m.diagnostics.residual_norms.truncate(d);
        m.diagnostics.reduced_rank = false;
        Ok(m)
    }

    /// Embeds point inputs (one per row). Point inputs are lifted to Dirac
    /// distributions for NGEU models.
    pub fn transform_points(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input_dim(x.ncols())?;
        match &self.kind {
            ModelKind::LinearGe { projection } => Ok(x * projection),
            ModelKind::KernelGe { .. } | ModelKind::Ngeu { .. } => {
                let labels = vec![0; x.nrows()];
                self.transform_distributions(&UncertainDataset::from_points(x, labels)?)
            }
        }
    }

    /// Embeds distribution inputs. Linear and kernel GE models use the means.
    pub fn transform_distributions(&self, inputs: &UncertainDataset) -> Result<DMatrix<f64>> {
        self.check_input_dim(inputs.dim())?;
        let (kt, alpha) = match &self.kind {
            ModelKind::LinearGe { projection } => return Ok(inputs.means() * projection),
            ModelKind::KernelGe { alpha, train, first } => {
                let points = UncertainDataset::from_points(&inputs.means(), inputs.labels.clone())?;
                let train_d = UncertainDataset::from_points(train, vec![0; train.nrows()])?;
                (cross_kernel(&points, &train_d, &KernelSpec::default_for(*first))?, alpha)
            }
            ModelKind::Ngeu { alpha, train, spec } => (cross_kernel(inputs, train, spec)?, alpha),
        };
        Ok(self.project_kernel_rows(&kt, alpha))
    }

    /// `K_t alpha` for kernel rows against the training set.
    pub fn project_kernel_rows(&self, kt: &DMatrix<f64>, alpha: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.centering {
            Some(c) => c.apply(kt) * alpha,
            None => kt * alpha,
        }
    }

    /// Embeds a point dataset. NGEU models carrying an uncertainty recipe
    /// apply it within `data` first; otherwise points are Dirac inputs.
    pub fn transform(&self, data: &LabeledDataset) -> Result<DMatrix<f64>> {
        match (&self.kind, self.uncertainty) {
            (ModelKind::Ngeu { .. }, Some(r)) => {
                self.check_input_dim(data.dim())?;
                self.transform_distributions(&r.scheme.apply(data, r.width)?)
            }
            _ => self.transform_points(&data.features),
        }
    }

    fn check_input_dim(&self, d: usize) -> Result<()> {
        if d != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: d,
            });
        }
        Ok(())
    }
}

fn check_graph_size(graphs: &GraphPair, n: usize) -> Result<()> {
    if graphs.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: graphs.len(),
        });
    }
    Ok(())
}

/// Linear graph embedding on the rows of `data.features`.
pub fn fit_ge_linear(data: &LabeledDataset, graphs: &GraphPair, d: usize, opts: &FitOptions) -> Result<EmbeddingModel> {
    check_graph_size(graphs, data.len())?;
    if d > data.dim() {
        return arg(format!("d = {d} exceeds the input dimension {}", data.dim()));
    }
    let x = &data.features;
    let xt = x.transpose();
    let s = &xt * graphs.laplacian() * x;
    let b = match graphs.penalty_laplacian() {
        Some(lp) => &xt * lp * x,
        None => DMatrix::identity(data.dim(), data.dim()),
    };
    let r = solve_gevp(&s, &b, d, graphs.direction, opts.ridge)?;
    Ok(EmbeddingModel {
        diagnostics: GevpSummary::from(&r),
        kind: ModelKind::LinearGe { projection: r.eigenvectors },
        family: graphs.family,
        requested_dim: d,
        train_labels: data.labels.clone(),
        centering: None,
        uncertainty: None,
    })
}

/// Result of a kernel pencil solve.
pub struct KernelSolve {
    pub gevp: GevpResult,
    pub centering: Option<Centering>,
}

/// Solves the kernel pencil for a precomputed training kernel matrix.
pub fn solve_kernel_pencil(k: &DMatrix<f64>, graphs: &GraphPair, d: usize, opts: &FitOptions) -> Result<KernelSolve> {
    check_graph_size(graphs, k.nrows())?;
    let (k, centering) = if opts.center {
        let c = Centering::of(k);
        (c.apply(k), Some(c))
    } else {
        (k.clone(), None)
    };
    let s = &k * graphs.laplacian() * &k;
    let b = match &graphs.penalty {
        Penalty::Identity => k.clone(),
        Penalty::Graph(_) => {
            let lp = graphs.penalty_laplacian().expect("penalty graph present");
            &k * lp * &k
        }
    };
    let gevp = solve_gevp(&s, &b, d, graphs.direction, opts.ridge)?;
    Ok(KernelSolve { gevp, centering })
}

/// Kernel graph embedding with a first-level kernel on the points.
pub fn fit_ge_kernel(
    data: &LabeledDataset,
    first: FirstLevelKernel,
    graphs: &GraphPair,
    d: usize,
    opts: &FitOptions,
) -> Result<EmbeddingModel> {
    first.validate()?;
    let points = UncertainDataset::from_points(&data.features, data.labels.clone())?;
    let k = kernel_matrix(&points, &KernelSpec::default_for(first))?;
    let sol = solve_kernel_pencil(&k.k, graphs, d, opts)?;
    Ok(EmbeddingModel {
        diagnostics: GevpSummary::from(&sol.gevp),
        kind: ModelKind::KernelGe {
            alpha: sol.gevp.eigenvectors,
            train: data.features.clone(),
            first,
        },
        family: graphs.family,
        requested_dim: d,
        train_labels: data.labels.clone(),
        centering: sol.centering,
        uncertainty: None,
    })
}

/// NGEU on distribution-valued training data.
pub fn fit_ngeu(
    data: &UncertainDataset,
    spec: &KernelSpec,
    graphs: &GraphPair,
    d: usize,
    opts: &FitOptions,
) -> Result<EmbeddingModel> {
    let k = kernel_matrix(data, spec)?;
    let sol = solve_kernel_pencil(&k.k, graphs, d, opts)?;
    Ok(EmbeddingModel {
        diagnostics: GevpSummary::from(&sol.gevp),
        kind: ModelKind::Ngeu {
            alpha: sol.gevp.eigenvectors,
            train: data.clone(),
            spec: *spec,
        },
        family: graphs.family,
        requested_dim: d,
        train_labels: data.labels.clone(),
        centering: sol.centering,
        uncertainty: None,
    })
}

/// Embedding of the training set implied by a kernel model: `K alpha`.
pub fn training_embedding(model: &EmbeddingModel) -> Result<DMatrix<f64>> {
    match &model.kind {
        ModelKind::LinearGe { .. } => arg("linear models keep no training data"),
        ModelKind::KernelGe { alpha, train, first } => {
            let points = UncertainDataset::from_points(train, vec![0; train.nrows()])?;
            let k = kernel_matrix(&points, &KernelSpec::default_for(*first))?.k;
            Ok(model.project_kernel_rows(&k, alpha))
        }
        ModelKind::Ngeu { alpha, train, spec } => {
            let k = kernel_matrix(train, spec)?.k;
            Ok(model.project_kernel_rows(&k, alpha))
        }
    }
}
