//! Binary model container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "NGEU" | version u16 | kind u8 | header_len u32 | header (JSON)
//! body matrices: rows u64 | cols u64 | rows*cols f64, row-major
//! distributions: tag u8 | mean D f64 | covariance payload
//! centering flag u8 [| column means as a 1 x N matrix]
//! ```

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Centering, EmbeddingModel, GevpSummary, ModelKind, UncertaintyRecipe};
use crate::dataio::write_atomic;
use crate::error::{Error, Result};
use crate::graphs::GraphFamily;
use crate::kernels::{FirstLevelKernel, KernelSpec};
use crate::uncertainty::{CovarianceModel, Distribution, UncertainDataset};

const MAGIC: &[u8; 4] = b"NGEU";
pub const FORMAT_VERSION: u16 = 1;

const KIND_LINEAR: u8 = 0;
const KIND_KERNEL: u8 = 1;
const KIND_NGEU: u8 = 2;

const DIST_DIRAC: u8 = 0;
const DIST_ISOTROPIC: u8 = 1;
const DIST_DIAGONAL: u8 = 2;
const DIST_FULL: u8 = 3;
const DIST_EMPIRICAL: u8 = 4;

#[derive(Serialize, Deserialize)]
struct Header {
    family: GraphFamily,
    requested_dim: usize,
    train_labels: Vec<usize>,
    first: Option<FirstLevelKernel>,
    spec: Option<KernelSpec>,
    grand_mean: Option<f64>,
    diagnostics: GevpSummary,
    #[serde(default)]
    uncertainty: Option<UncertaintyRecipe>,
}

fn put_matrix(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_distribution(out: &mut Vec<u8>, p: &Distribution) {
    match p {
        Distribution::Gaussian { mean, cov } => {
            let tag = match cov {
                CovarianceModel::Dirac => DIST_DIRAC,
                CovarianceModel::Isotropic(_) => DIST_ISOTROPIC,
                CovarianceModel::Diagonal(_) => DIST_DIAGONAL,
                CovarianceModel::Full(_) => DIST_FULL,
            };
            out.push(tag);
            put_f64s(out, mean.as_slice());
            match cov {
                CovarianceModel::Dirac => {}
                CovarianceModel::Isotropic(a) => put_f64s(out, &[*a]),
                CovarianceModel::Diagonal(v) => put_f64s(out, v.as_slice()),
                CovarianceModel::Full(f) => put_matrix(out, f.matrix()),
            }
        }
        Distribution::Empirical { samples, .. } => {
            out.push(DIST_EMPIRICAL);
            put_matrix(out, samples);
        }
    }
}

pub fn model_to_bytes(model: &EmbeddingModel) -> Result<Vec<u8>> {
    let (kind, first, spec) = match &model.kind {
        ModelKind::LinearGe { .. } => (KIND_LINEAR, None, None),
        ModelKind::KernelGe { first, .. } => (KIND_KERNEL, Some(*first), None),
        ModelKind::Ngeu { spec, .. } => (KIND_NGEU, None, Some(*spec)),
    };
    let header = Header {
        family: model.family,
        requested_dim: model.requested_dim,
        train_labels: model.train_labels.clone(),
        first,
        spec,
        grand_mean: model.centering.as_ref().map(|c| c.grand_mean),
        diagnostics: model.diagnostics.clone(),
        uncertainty: model.uncertainty,
    };
    let blob = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(kind);
    out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
    out.extend_from_slice(&blob);
    match &model.kind {
        ModelKind::LinearGe { projection } => put_matrix(&mut out, projection),
        ModelKind::KernelGe { alpha, train, .. } => {
            put_matrix(&mut out, alpha);
            put_matrix(&mut out, train);
        }
        ModelKind::Ngeu { alpha, train, .. } => {
            put_matrix(&mut out, alpha);
            out.extend_from_slice(&(train.len() as u64).to_le_bytes());
            out.extend_from_slice(&(train.dim() as u64).to_le_bytes());
            for p in &train.samples {
                put_distribution(&mut out, p);
            }
        }
    }
    match &model.centering {
        Some(c) => {
            out.push(1);
            put_matrix(&mut out, &DMatrix::from_row_slice(1, c.column_means.len(), c.column_means.as_slice()));
        }
        None => out.push(0),
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("model file truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn count(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Format(format!("count {v} out of range")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| Error::Format("length overflow".into()))?;
        let raw = self.take(len)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn matrix(&mut self) -> Result<DMatrix<f64>> {
        let r = self.count()?;
        let c = self.count()?;
        let n = r.checked_mul(c).ok_or_else(|| Error::Format("matrix size overflow".into()))?;
        Ok(DMatrix::from_row_slice(r, c, &self.f64s(n)?))
    }

    fn distribution(&mut self, dim: usize) -> Result<Distribution> {
        let tag = self.u8()?;
        if tag == DIST_EMPIRICAL {
            return Distribution::empirical(self.matrix()?);
        }
        let mean = DVector::from_vec(self.f64s(dim)?);
        let cov = match tag {
            DIST_DIRAC => CovarianceModel::Dirac,
            DIST_ISOTROPIC => CovarianceModel::isotropic(self.f64s(1)?[0])?,
            DIST_DIAGONAL => CovarianceModel::diagonal(DVector::from_vec(self.f64s(dim)?))?,
            DIST_FULL => CovarianceModel::full(self.matrix()?)?,
            other => return Err(Error::Format(format!("unknown covariance tag {other}"))),
        };
        Distribution::gaussian(mean, cov)
    }
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<EmbeddingModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let kind = r.u8()?;
    let len = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(len)?).map_err(|e| Error::Format(format!("bad header: {e}")))?;
    let bad = |what: &str| Error::Format(format!("header lacks {what}"));
    let kind = match kind {
        KIND_LINEAR => ModelKind::LinearGe { projection: r.matrix()? },
        KIND_KERNEL => {
            let alpha = r.matrix()?;
            let train = r.matrix()?;
            ModelKind::KernelGe {
                alpha,
                train,
                first: header.first.ok_or_else(|| bad("first-level kernel"))?,
            }
        }
        KIND_NGEU => {
            let alpha = r.matrix()?;
            let n = r.count()?;
            let dim = r.count()?;
            let samples = (0..n).map(|_| r.distribution(dim)).collect::<Result<Vec<_>>>()?;
            ModelKind::Ngeu {
                alpha,
                train: UncertainDataset::new(samples, header.train_labels.clone())?,
                spec: header.spec.ok_or_else(|| bad("kernel spec"))?,
            }
        }
        other => return Err(Error::Format(format!("unknown model kind {other}"))),
    };
    let centering = match r.u8()? {
        0 => None,
        1 => {
            let m = r.matrix()?;
            Some(Centering {
                column_means: DVector::from_iterator(m.len(), m.iter().copied()),
                grand_mean: header.grand_mean.ok_or_else(|| bad("grand mean"))?,
            })
        }
        other => return Err(Error::Format(format!("bad centering flag {other}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(EmbeddingModel {
        kind,
        family: header.family,
        requested_dim: header.requested_dim,
        train_labels: header.train_labels,
        centering,
        diagnostics: header.diagnostics,
        uncertainty: header.uncertainty,
    })
}

pub fn save_model(model: &EmbeddingModel, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &model_to_bytes(model)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<EmbeddingModel> {
    model_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::LabeledDataset;
    use crate::embed::{fit_ge_kernel, fit_ge_linear, fit_ngeu, FitOptions};
    use crate::graphs::{build_lda_graphs, build_pca_graphs};
    use crate::uncertainty::FullCovariance;

    fn data() -> LabeledDataset {
        let x = DMatrix::from_row_slice(6, 2, &[0.0, 0.1, 1.0, 0.3, 0.2, 1.1, 3.0, 3.2, 4.1, 2.9, 3.5, 4.0]);
        LabeledDataset::new(x, vec![0, 0, 0, 1, 1, 1], "p").unwrap()
    }

    fn mixed() -> UncertainDataset {
        let ds = data();
        let covs = [
            CovarianceModel::Dirac,
            CovarianceModel::Isotropic(0.2),
            CovarianceModel::Diagonal(DVector::from_vec(vec![0.1, 0.3])),
            CovarianceModel::Full(FullCovariance::new(DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.4])).unwrap()),
            CovarianceModel::Isotropic(0.05),
            CovarianceModel::Dirac,
        ];
        let samples = covs
            .into_iter()
            .enumerate()
            .map(|(i, c)| Distribution::gaussian(ds.features.row(i).transpose(), c).unwrap())
            .collect();
        UncertainDataset::new(samples, ds.labels.clone()).unwrap()
    }

    fn models() -> Vec<EmbeddingModel> {
        let ds = data();
        let lda = build_lda_graphs(&ds.labels).unwrap();
        let pca = build_pca_graphs(ds.len()).unwrap();
        let centred = FitOptions { ridge: 0.0, center: true };
        vec![
            fit_ge_linear(&ds, &lda, 1, &FitOptions::default()).unwrap(),
            fit_ge_kernel(&ds, FirstLevelKernel::Rbf { sigma: 1.0 }, &pca, 2, &centred).unwrap(),
            fit_ngeu(&mixed(), &KernelSpec::default_for(FirstLevelKernel::Poly2 { offset: 1.0 }), &lda, 1, &FitOptions::default()).unwrap(),
        ]
    }

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let ds = data();
        for (i, m) in models().into_iter().enumerate() {
            let path = dir.path().join(format!("m{i}.ngeu"));
            save_model(&m, &path).unwrap();
            let back = load_model(&path).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.transform(&ds).unwrap(), m.transform(&ds).unwrap());
        }
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        for m in models() {
            let bytes = model_to_bytes(&m).unwrap();
            for cut in [0, 3, 7, bytes.len() / 2, bytes.len() - 1] {
                assert!(matches!(model_from_bytes(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
            }
        }
    }

    #[test]
    fn unknown_version_is_reported() {
        let mut bytes = model_to_bytes(&models()[0]).unwrap();
        bytes[4] = 9;
        assert!(matches!(model_from_bytes(&bytes), Err(Error::UnsupportedVersion(9))));
        bytes[0] = b'X';
        assert!(matches!(model_from_bytes(&bytes), Err(Error::Format(_))));
    }
}
