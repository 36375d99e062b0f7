//! Intrinsic and penalty graphs for the PCA, LDA and MFA instantiations.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::linalg::{rows_of, sq_dist};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphFamily {
    Pca,
    Lda,
    Mfa,
}

impl GraphFamily {
    pub fn name(self) -> &'static str {
        match self {
            Self::Pca => "pca",
            Self::Lda => "lda",
            Self::Mfa => "mfa",
        }
    }
}

/// Constraint side of the pencil.
#[derive(Clone, Debug, PartialEq)]
pub enum Penalty {
    Identity,
    Graph(DMatrix<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Minimize,
    Maximize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphPair {
    pub family: GraphFamily,
    pub intrinsic: DMatrix<f64>,
    pub penalty: Penalty,
    pub direction: Direction,
}

impl GraphPair {
    pub fn len(&self) -> usize {
        self.intrinsic.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        unchecked_laplacian(&self.intrinsic)
    }

    /// Laplacian of the penalty graph, `None` for the identity constraint.
    pub fn penalty_laplacian(&self) -> Option<DMatrix<f64>> {
        match &self.penalty {
            Penalty::Identity => None,
            Penalty::Graph(w) => Some(unchecked_laplacian(w)),
        }
    }
}

fn validate_weights(w: &DMatrix<f64>) -> Result<()> {
    let n = w.nrows();
    if w.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: w.ncols(),
        });
    }
    for i in 0..n {
        if w[(i, i)] != 0.0 {
            return arg(format!("weight matrix has nonzero diagonal at {i}"));
        }
        for j in 0..n {
            let v = w[(i, j)];
            if !v.is_finite() || v < 0.0 {
                return arg(format!("weight ({i},{j}) = {v} is not a finite nonnegative number"));
            }
            if (v - w[(j, i)]).abs() > 1e-12 {
                return arg(format!("weight matrix is asymmetric at ({i},{j})"));
            }
        }
    }
    Ok(())
}

fn unchecked_laplacian(w: &DMatrix<f64>) -> DMatrix<f64> {
    let mut l = -w.clone();
    for i in 0..w.nrows() {
        l[(i, i)] = w.row(i).sum();
    }
    l
}

/// `L = diag(W 1) - W` for a symmetric nonnegative zero-diagonal `W`.
pub fn laplacian(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    validate_weights(w)?;
    Ok(unchecked_laplacian(w))
}

fn class_sizes(labels: &[usize]) -> BTreeMap<usize, usize> {
    let mut sizes = BTreeMap::new();
    for &c in labels {
        *sizes.entry(c).or_insert(0) += 1;
    }
    sizes
}

/// Within-class weights `1/n_c`, penalty weights `1/N`.
pub fn build_lda_graphs(labels: &[usize]) -> Result<GraphPair> {
    let n = labels.len();
    let sizes = class_sizes(labels);
    if sizes.len() < 2 {
        return arg("LDA graphs need at least two classes");
    }
    let intrinsic = DMatrix::from_fn(n, n, |i, j| {
        if i != j && labels[i] == labels[j] {
            1.0 / sizes[&labels[i]] as f64
        } else {
            0.0
        }
    });
    let penalty = DMatrix::from_fn(n, n, |i, j| if i != j { 1.0 / n as f64 } else { 0.0 });
    Ok(GraphPair {
        family: GraphFamily::Lda,
        intrinsic,
        penalty: Penalty::Graph(penalty),
        direction: Direction::Minimize,
    })
}

/// Complete graph with weights `1/N` and the identity constraint, maximized.
pub fn build_pca_graphs(n: usize) -> Result<GraphPair> {
    if n < 2 {
        return arg("PCA graphs need at least two samples");
    }
    let intrinsic = DMatrix::from_fn(n, n, |i, j| if i != j { 1.0 / n as f64 } else { 0.0 });
    Ok(GraphPair {
        family: GraphFamily::Pca,
        intrinsic,
        penalty: Penalty::Identity,
        direction: Direction::Maximize,
    })
}

/// `k` nearest candidates of `i` by squared distance, ties to the lower index.
fn nearest(d2: &DMatrix<f64>, i: usize, candidates: &[usize], k: usize) -> Vec<usize> {
    let mut c: Vec<usize> = candidates.to_vec();
    c.sort_by(|&a, &b| d2[(i, a)].total_cmp(&d2[(i, b)]).then(a.cmp(&b)));
    c.truncate(k);
    c
}

/// Marginal Fisher analysis graphs over the rows of `means`.
///
/// The intrinsic graph joins each point to its `k1` nearest same-class
/// points; the penalty graph joins each point to its `k2` nearest points of
/// other classes (clamped to the number available). Both are symmetrized by
/// "either endpoint".
pub fn build_mfa_graphs(means: &DMatrix<f64>, labels: &[usize], k1: usize, k2: usize) -> Result<GraphPair> {
    let n = means.nrows();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    if k1 == 0 || k2 == 0 {
        return arg("MFA neighbourhood sizes k1 and k2 must be at least 1");
    }
    let sizes = class_sizes(labels);
    if sizes.len() < 2 {
        return arg("MFA graphs need at least two classes");
    }
    for (&c, &m) in &sizes {
        if m < 2 {
            return arg(format!("class {c} has a single sample; MFA needs at least two per class"));
        }
        if k1 >= m {
            return arg(format!("k1 = {k1} must be smaller than the size {m} of class {c}"));
        }
    }
    let rows = rows_of(means);
    let mut d2 = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = sq_dist(&rows[i], &rows[j]);
            d2[(i, j)] = v;
            d2[(j, i)] = v;
        }
    }
    let mut intrinsic = DMatrix::zeros(n, n);
    let mut penalty = DMatrix::zeros(n, n);
    for i in 0..n {
        let same: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
        let other: Vec<usize> = (0..n).filter(|&j| labels[j] != labels[i]).collect();
        for j in nearest(&d2, i, &same, k1) {
            intrinsic[(i, j)] = 1.0;
            intrinsic[(j, i)] = 1.0;
        }
        for j in nearest(&d2, i, &other, k2) {
            penalty[(i, j)] = 1.0;
            penalty[(j, i)] = 1.0;
        }
    }
    Ok(GraphPair {
        family: GraphFamily::Mfa,
        intrinsic,
        penalty: Penalty::Graph(penalty),
        direction: Direction::Minimize,
    })
}

/// Builds the graphs of `family` for samples with the given means and labels.
pub fn build_graphs(
    family: GraphFamily,
    means: &DMatrix<f64>,
    labels: &[usize],
    k1: usize,
    k2: usize,
) -> Result<GraphPair> {
    match family {
        GraphFamily::Pca => build_pca_graphs(labels.len()),
        GraphFamily::Lda => build_lda_graphs(labels),
        GraphFamily::Mfa => build_mfa_graphs(means, labels, k1, k2),
    }
}

/// `i,j,weight` rows for every nonzero upper-triangle entry.
pub fn edge_list_csv(w: &DMatrix<f64>) -> String {
    let mut out = String::from("i,j,weight\n");
    for i in 0..w.nrows() {
        for j in (i + 1)..w.ncols() {
            if w[(i, j)] != 0.0 {
                let _ = writeln!(out, "{i},{j},{}", w[(i, j)]);
            }
        }
    }
    out
}

/// `sum_{i != j} ||y_i - y_j||^2 W_ij` over the rows of `y`.
pub fn graph_criterion(y: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    let rows = rows_of(y);
    let mut total = 0.0;
    for i in 0..rows.len() {
        for j in 0..rows.len() {
            if i != j && w[(i, j)] != 0.0 {
                total += sq_dist(&rows[i], &rows[j]) * w[(i, j)];
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eigenvalue;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn laplacian_of_single_edge() {
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let l = laplacian(&w).unwrap();
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        assert_eq!(laplacian(&DMatrix::zeros(3, 3)).unwrap(), DMatrix::zeros(3, 3));
    }

    #[test]
    fn laplacian_rejects_bad_weights() {
        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.5, 0.0]);
        assert!(laplacian(&asym).is_err());
        let neg = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0]);
        assert!(laplacian(&neg).is_err());
        let diag = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(laplacian(&diag).is_err());
    }

    #[test]
    fn random_laplacian_is_psd_with_zero_rows() {
        let mut r = rng::stream(3, &[99]);
        let mut w = DMatrix::zeros(10, 10);
        for i in 0..10 {
            for j in (i + 1)..10 {
                let v: f64 = r.random();
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
        let l = laplacian(&w).unwrap();
        assert!(min_eigenvalue(&l) >= -1e-10);
        for i in 0..10 {
            assert!(l.row(i).sum().abs() < 1e-12);
        }
    }

    #[test]
    fn lda_weights() {
        let g = build_lda_graphs(&[0, 0, 1]).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[0.0, 0.5, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(g.intrinsic, expected);
        match &g.penalty {
            Penalty::Graph(p) => {
                for i in 0..3 {
                    for j in 0..3 {
                        let want = if i == j { 0.0 } else { 1.0 / 3.0 };
                        assert_eq!(p[(i, j)], want);
                    }
                }
            }
            Penalty::Identity => panic!("LDA uses a penalty graph"),
        }
        assert_eq!(build_lda_graphs(&[0, 1]).unwrap().intrinsic, DMatrix::zeros(2, 2));
        assert!(build_lda_graphs(&[2, 2, 2]).is_err());
    }

    #[test]
    fn lda_laplacian_is_within_class_scatter() {
        // y^T L y equals the within-class scatter of y (per-class sum of
        // squared deviations from the class mean).
        let labels = [0, 0, 0, 1, 1, 2, 2, 2];
        let y = [0.3, -1.2, 2.0, 0.7, 0.1, -0.5, 1.5, 0.9];
        let g = build_lda_graphs(&labels).unwrap();
        let l = g.laplacian();
        let yv = nalgebra::DVector::from_column_slice(&y);
        let quad = yv.dot(&(&l * &yv));
        let mut scatter = 0.0;
        for c in 0..3 {
            let members: Vec<f64> = labels.iter().zip(y).filter(|(&l, _)| l == c).map(|(_, v)| v).collect();
            let m = members.iter().sum::<f64>() / members.len() as f64;
            scatter += members.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        }
        assert!((quad - scatter).abs() < 1e-12);
    }

    #[test]
    fn pca_weights() {
        let g = build_pca_graphs(3).unwrap();
        assert_eq!(g.intrinsic[(0, 1)], 1.0 / 3.0);
        assert_eq!(g.direction, Direction::Maximize);
        let l = g.laplacian();
        for i in 0..3 {
            assert!(l.row(i).sum().abs() < 1e-15);
        }
        assert!(build_pca_graphs(1).is_err());
    }

    #[test]
    fn mfa_collinear_nearest_neighbours() {
        let means = DMatrix::from_row_slice(6, 1, &[0.0, 1.0, 3.0, 10.0, 12.0, 13.0]);
        let labels = [0, 0, 0, 1, 1, 1];
        let g = build_mfa_graphs(&means, &labels, 1, 1).unwrap();
        let mut edges = vec![];
        for i in 0..6 {
            for j in (i + 1)..6 {
                if g.intrinsic[(i, j)] > 0.0 {
                    edges.push((i, j));
                }
            }
        }
        // 0-1, 1-0, 2->1, 3->4, 4->5, 5->4.
        assert_eq!(edges, vec![(0, 1), (1, 2), (3, 4), (4, 5)]);
        let Penalty::Graph(p) = &g.penalty else { panic!() };
        let mut between = vec![];
        for i in 0..6 {
            for j in (i + 1)..6 {
                if p[(i, j)] > 0.0 {
                    between.push((i, j));
                }
            }
        }
        // Every class-0 point's nearest class-1 point is 3; vice versa 2.
        assert_eq!(between, vec![(0, 3), (1, 3), (2, 3), (2, 4), (2, 5)]);
    }

    #[test]
    fn mfa_full_within_class() {
        let means = DMatrix::from_row_slice(6, 2, &[0., 0., 1., 0., 0., 2., 5., 5., 6., 5., 5., 7.]);
        let labels = [0, 0, 0, 1, 1, 1];
        let g = build_mfa_graphs(&means, &labels, 2, 1).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let want = if i != j && labels[i] == labels[j] { 1.0 } else { 0.0 };
                assert_eq!(g.intrinsic[(i, j)], want);
            }
        }
        assert!(build_mfa_graphs(&means, &labels, 3, 1).is_err());
        assert!(build_mfa_graphs(&means, &labels, 0, 1).is_err());
    }

    #[test]
    fn criterion_matches_laplacian_form() {
        let g = build_lda_graphs(&[0, 1, 0, 1, 1]).unwrap();
        let y = DMatrix::from_row_slice(5, 2, &[1., 2., -1., 0., 3., 1., 0.5, 0.5, 2., -2.]);
        let direct = graph_criterion(&y, &g.intrinsic);
        let lap = 2.0 * (y.transpose() * g.laplacian() * &y).trace();
        assert!((direct - lap).abs() < 1e-12 * lap.abs().max(1.0));
    }

    #[test]
    fn edge_list_format() {
        let w = DMatrix::from_row_slice(3, 3, &[0., 0.5, 0., 0.5, 0., 2., 0., 2., 0.]);
        assert_eq!(edge_list_csv(&w), "i,j,weight\n0,1,0.5\n1,2,2\n");
    }

    proptest! {
        #[test]
        fn mfa_is_permutation_equivariant(seed in 0u64..200, shift in 1usize..9) {
            let mut r = rng::stream(seed, &[17]);
            let n = 10;
            let means = DMatrix::from_fn(n, 2, |_, _| r.random::<f64>());
            let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
            let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
            let pm = DMatrix::from_fn(n, 2, |i, j| means[(perm[i], j)]);
            let pl: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
            let g = build_mfa_graphs(&means, &labels, 2, 3).unwrap();
            let h = build_mfa_graphs(&pm, &pl, 2, 3).unwrap();
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(h.intrinsic[(i, j)], g.intrinsic[(perm[i], perm[j])]);
                }
            }
        }

        #[test]
        fn builders_yield_valid_weights(seed in 0u64..100) {
            let mut r = rng::stream(seed, &[18]);
            let n = 12;
            let means = DMatrix::from_fn(n, 3, |_, _| r.random::<f64>());
            let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
            for fam in [GraphFamily::Pca, GraphFamily::Lda, GraphFamily::Mfa] {
                let g = build_graphs(fam, &means, &labels, 2, 4).unwrap();
                prop_assert!(laplacian(&g.intrinsic).is_ok());
                if let Penalty::Graph(p) = &g.penalty {
                    prop_assert!(laplacian(p).is_ok());
                }
            }
        }
    }
}
