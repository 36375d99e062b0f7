//! Run configuration files (TOML). Unknown keys are rejected and every
//! value is checked before any computation starts.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::dataio::{self, LabeledDataset, SplitSpec, SplitStrategy};
use crate::embed::FitOptions;
use crate::eval::{Embedder, GridConfig, Method};
use crate::graphs::GraphFamily;
use crate::kernels::{DiagonalConvention, Evaluation, FirstLevelKernel, KernelSpec};
use crate::uncertainty::UncertaintyScheme;

use super::CliError;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub data: DataConfig,
    pub split: Option<SplitConfig>,
    pub model: Option<ModelConfig>,
    pub experiment: Option<ExperimentConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Idx,
    Csv,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub format: DataFormat,
    /// IDX image file.
    pub images: Option<PathBuf>,
    /// IDX label file.
    pub labels: Option<PathBuf>,
    /// CSV file.
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub label_column: usize,
    #[serde(default)]
    pub header: bool,
    /// Keep only the first `limit` rows.
    pub limit: Option<usize>,
    /// Map CSV features from `[lo, hi]` to `[0, 1]`.
    pub rescale: Option<[f64; 2]>,
    /// Additive white Gaussian noise at this signal-to-noise ratio.
    pub snr: Option<f64>,
    #[serde(default = "yes")]
    pub clip: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitKind {
    Sequential,
    PerClass,
    Kfold,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub strategy: SplitKind,
    #[serde(default)]
    pub train: usize,
    #[serde(default)]
    pub val: usize,
    #[serde(default)]
    pub test: usize,
    /// Number of folds for k-fold splits.
    #[serde(default = "three")]
    pub k: usize,
    /// Folds to run; all by default. `fit` uses the first.
    pub folds: Option<Vec<usize>>,
}

fn three() -> usize {
    3
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub embedder: Embedder,
    pub family: GraphFamily,
    #[serde(default = "dirac")]
    pub scheme: UncertaintyScheme,
    #[serde(default)]
    pub width: f64,
    pub d: usize,
    #[serde(default = "linear")]
    pub kernel: FirstLevelKernel,
    pub diagonal: Option<DiagonalConvention>,
    /// Monte-Carlo draws per kernel entry; closed forms when absent.
    pub monte_carlo_samples: Option<usize>,
    #[serde(default = "five")]
    pub k1: usize,
    #[serde(default = "twenty")]
    pub k2: usize,
    #[serde(default)]
    pub ridge: f64,
    #[serde(default)]
    pub center: bool,
}

fn dirac() -> UncertaintyScheme {
    UncertaintyScheme::Dirac
}
fn linear() -> FirstLevelKernel {
    FirstLevelKernel::Linear
}
fn five() -> usize {
    5
}
fn twenty() -> usize {
    20
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub embedder: Embedder,
    pub family: GraphFamily,
    #[serde(default = "dirac")]
    pub scheme: UncertaintyScheme,
    /// Overrides `experiment.widths` for this method.
    pub widths: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub methods: Vec<MethodConfig>,
    pub dims: Vec<usize>,
    pub lda_dims: Option<Vec<usize>>,
    #[serde(default = "zero_width")]
    pub widths: Vec<f64>,
    pub kernels: Vec<FirstLevelKernel>,
    #[serde(default = "five")]
    pub knn_k: usize,
    #[serde(default = "five")]
    pub k1: usize,
    #[serde(default = "twenty")]
    pub k2: usize,
    #[serde(default)]
    pub ridge: f64,
    #[serde(default)]
    pub center: bool,
}

fn zero_width() -> Vec<f64> {
    vec![0.0]
}

fn bad(key: &str, why: impl std::fmt::Display) -> CliError {
    CliError::config(format!("{key}: {why}"))
}

fn check_width(key: &str, w: f64) -> Result<(), CliError> {
    if !w.is_finite() || w < 0.0 {
        return Err(bad(key, format!("must be finite and >= 0, got {w}")));
    }
    Ok(())
}

fn check_kernel(key: &str, k: &FirstLevelKernel) -> Result<(), CliError> {
    k.validate().map_err(|e| bad(key, e))
}

fn check_ridge(key: &str, r: f64) -> Result<(), CliError> {
    if !r.is_finite() || r < 0.0 {
        return Err(bad(key, format!("must be finite and >= 0, got {r}")));
    }
    Ok(())
}

impl RunConfig {
    /// Reads, parses and validates. Relative paths resolve against the
    /// directory of the configuration file.
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>), CliError> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let text = std::str::from_utf8(&bytes).map_err(|_| CliError::config("config is not UTF-8"))?;
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.images, &mut cfg.data.labels, &mut cfg.data.path].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok((cfg, bytes))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let d = &self.data;
        match d.format {
            DataFormat::Idx => {
                if d.images.is_none() || d.labels.is_none() {
                    return Err(bad("data", "idx format needs `images` and `labels`"));
                }
            }
            DataFormat::Csv => {
                if d.path.is_none() {
                    return Err(bad("data", "csv format needs `path`"));
                }
            }
        }
        if let Some(snr) = d.snr {
            if snr.is_nan() || snr <= 0.0 {
                return Err(bad("data.snr", format!("must be positive, got {snr}")));
            }
        }
        if let Some([lo, hi]) = d.rescale {
            if !(hi > lo) {
                return Err(bad("data.rescale", "needs lo < hi"));
            }
        }
        if let Some(s) = &self.split {
            if s.strategy == SplitKind::Kfold {
                if s.k < 2 {
                    return Err(bad("split.k", format!("must be at least 2, got {}", s.k)));
                }
                if let Some(f) = s.folds.as_ref().and_then(|f| f.iter().find(|&&f| f >= s.k)) {
                    return Err(bad("split.folds", format!("fold {f} out of range for k = {}", s.k)));
                }
            }
        }
        if let Some(m) = &self.model {
            check_width("model.width", m.width)?;
            check_kernel("model.kernel", &m.kernel)?;
            check_ridge("model.ridge", m.ridge)?;
            if m.d == 0 {
                return Err(bad("model.d", "must be at least 1"));
            }
            if m.monte_carlo_samples == Some(0) {
                return Err(bad("model.monte_carlo_samples", "must be at least 1"));
            }
            if m.diagonal == Some(DiagonalConvention::TraceAugmented) && m.kernel != FirstLevelKernel::Linear {
                return Err(bad("model.diagonal", "trace-augmented needs the linear kernel"));
            }
        }
        if let Some(e) = &self.experiment {
            if e.methods.is_empty() {
                return Err(bad("experiment.methods", "must not be empty"));
            }
            for (i, m) in e.methods.iter().enumerate() {
                for &w in m.widths.iter().flatten() {
                    check_width(&format!("experiment.methods[{i}].widths"), w)?;
                }
                if m.widths.as_ref().is_some_and(|w| w.is_empty()) {
                    return Err(bad(&format!("experiment.methods[{i}].widths"), "must not be empty"));
                }
            }
            for &w in &e.widths {
                check_width("experiment.widths", w)?;
            }
            for k in &e.kernels {
                check_kernel("experiment.kernels", k)?;
            }
            check_ridge("experiment.ridge", e.ridge)?;
            self.grid(e, None).validate().map_err(|err| bad("experiment", err))?;
        }
        Ok(())
    }

    pub fn grid(&self, e: &ExperimentConfig, widths: Option<&[f64]>) -> GridConfig {
        GridConfig {
            dims: e.dims.clone(),
            lda_dims: e.lda_dims.clone().unwrap_or_else(|| e.dims.clone()),
            widths: widths.map(<[f64]>::to_vec).unwrap_or_else(|| e.widths.clone()),
            kernels: e.kernels.clone(),
            knn_k: e.knn_k,
            k1: e.k1,
            k2: e.k2,
            fit: FitOptions {
                ridge: e.ridge,
                center: e.center,
            },
        }
    }

    /// Loads the dataset, applies `limit`, rescaling and noise.
    pub fn dataset(&self, seed: u64) -> Result<LabeledDataset, CliError> {
        let d = &self.data;
        let with_path = |p: &Path, e: crate::Error| CliError::data(format!("{}: {e}", p.display()));
        let mut ds = match d.format {
            DataFormat::Idx => {
                let (img, lab) = (d.images.as_ref().expect("validated"), d.labels.as_ref().expect("validated"));
                for p in [img, lab] {
                    if !p.exists() {
                        return Err(CliError::data(format!("dataset file not found: {}", p.display())));
                    }
                }
                dataio::load_idx_pair(img, lab, "idx").map_err(|e| with_path(img, e))?
            }
            DataFormat::Csv => {
                let p = d.path.as_ref().expect("validated");
                if !p.exists() {
                    return Err(CliError::data(format!("dataset file not found: {}", p.display())));
                }
                dataio::load_csv(p, d.label_column, d.header).map_err(|e| with_path(p, e))?
            }
        };
        if let Some(n) = d.limit {
            ds = ds.head(n.min(ds.len())).map_err(CliError::from)?;
        }
        if let Some([lo, hi]) = d.rescale {
            ds.features = dataio::rescale_to_unit(&ds.features, lo, hi)?;
        }
        if let Some(snr) = d.snr {
            ds.features = dataio::add_awgn(&ds.features, snr, seed, d.clip)?;
        }
        Ok(ds)
    }

    /// Split specs for each fold to run.
    pub fn splits(&self) -> Vec<SplitSpec> {
        let Some(s) = &self.split else {
            return vec![];
        };
        let base = |strategy| SplitSpec {
            train_count: s.train,
            val_count: s.val,
            test_count: s.test,
            strategy,
        };
        match s.strategy {
            SplitKind::Sequential => vec![base(SplitStrategy::Sequential)],
            SplitKind::PerClass => vec![base(SplitStrategy::PerClassSequential)],
            SplitKind::Kfold => s
                .folds
                .clone()
                .unwrap_or_else(|| (0..s.k).collect())
                .into_iter()
                .map(|fold| base(SplitStrategy::KFold { k: s.k, fold }))
                .collect(),
        }
    }
}

impl ModelConfig {
    pub fn spec(&self, seed: u64) -> Result<KernelSpec, CliError> {
        let mode = match self.monte_carlo_samples {
            Some(samples) => Evaluation::MonteCarlo { samples, seed },
            None => Evaluation::ClosedForm,
        };
        let diagonal = self.diagonal.unwrap_or(KernelSpec::default_for(self.kernel).diagonal);
        KernelSpec::new(self.kernel, mode, diagonal).map_err(|e| bad("model", e))
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            ridge: self.ridge,
            center: self.center,
        }
    }
}

impl MethodConfig {
    pub fn method(&self) -> Method {
        Method {
            embedder: self.embedder,
            family: self.family,
            scheme: self.scheme,
        }
    }
}
