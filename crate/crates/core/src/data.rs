//! Clustered datasets and contrast families.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the response column is to be interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    Continuous,
    /// Binary responses coded 0/1.
    Binary01,
    /// Binary responses coded -1/+1.
    BinaryPm1,
    Positive,
}

impl ResponseKind {
    pub fn admits(self, y: f64) -> bool {
        match self {
            ResponseKind::Continuous => y.is_finite(),
            ResponseKind::Binary01 => y == 0.0 || y == 1.0,
            ResponseKind::BinaryPm1 => y == -1.0 || y == 1.0,
            ResponseKind::Positive => y.is_finite() && y > 0.0,
        }
    }

    pub fn is_binary(self) -> bool {
        matches!(self, ResponseKind::Binary01 | ResponseKind::BinaryPm1)
    }
}

/// One independent cluster: `m` responses and their `m x p` covariate rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub id: String,
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
}

impl Cluster {
    pub fn new(id: impl Into<String>, y: DVector<f64>, x: DMatrix<f64>) -> Self {
        Cluster {
            id: id.into(),
            y,
            x,
        }
    }

    pub fn size(&self) -> usize {
        self.y.len()
    }
}

/// A collection of independent clusters sharing one covariate dimension.
///
/// Construction does not validate; call [`ClusteredDataset::validate`] or
/// [`ClusteredDataset::ensure_valid`] before fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredDataset {
    clusters: Vec<Cluster>,
    response_kind: ResponseKind,
    p: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    TooFewClusters,
    EmptyCluster,
    Shape,
    CovariateCount,
    Domain,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub cluster: Option<String>,
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.cluster {
            Some(id) => write!(f, "cluster {id}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, cluster: Option<&str>, kind: ViolationKind, message: String) {
        self.violations.push(Violation {
            cluster: cluster.map(str::to_owned),
            kind,
            message,
        });
    }
}

impl ClusteredDataset {
    pub fn new(clusters: Vec<Cluster>, response_kind: ResponseKind, p: usize) -> Self {
        ClusteredDataset {
            clusters,
            response_kind,
            p,
        }
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn response_kind(&self) -> ResponseKind {
        self.response_kind
    }

    /// Number of covariates.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of clusters.
    pub fn n(&self) -> usize {
        self.clusters.len()
    }

    pub fn total_observations(&self) -> usize {
        self.clusters.iter().map(Cluster::size).sum()
    }

    /// The common cluster size, if every cluster has the same size.
    pub fn constant_size(&self) -> Option<usize> {
        let first = self.clusters.first()?.size();
        self.clusters
            .iter()
            .all(|c| c.size() == first)
            .then_some(first)
    }

    /// Lists every invariant violation. An empty report means the dataset is valid.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        if self.clusters.len() < 2 {
            report.push(
                None,
                ViolationKind::TooFewClusters,
                format!("need at least 2 clusters, found {}", self.clusters.len()),
            );
        }
        for c in &self.clusters {
            let id = Some(c.id.as_str());
            if c.y.is_empty() {
                report.push(
                    id,
                    ViolationKind::EmptyCluster,
                    "cluster has no observations".into(),
                );
            }
            if c.x.nrows() != c.y.len() {
                report.push(
                    id,
                    ViolationKind::Shape,
                    format!(
                        "response length {} but covariate matrix has {} rows",
                        c.y.len(),
                        c.x.nrows()
                    ),
                );
            }
            if c.x.ncols() != self.p {
                report.push(
                    id,
                    ViolationKind::CovariateCount,
                    format!("expected {} covariates, found {}", self.p, c.x.ncols()),
                );
            }
            let bad: Vec<f64> =
                c.y.iter()
                    .copied()
                    .filter(|&y| !self.response_kind.admits(y))
                    .collect();
            if !bad.is_empty() {
                report.push(
                    id,
                    ViolationKind::Domain,
                    format!(
                        "{} response value(s) outside the {:?} domain (first: {})",
                        bad.len(),
                        self.response_kind,
                        bad[0]
                    ),
                );
            }
            if c.x.iter().any(|v| !v.is_finite()) {
                report.push(
                    id,
                    ViolationKind::NonFinite,
                    "non-finite covariate value".into(),
                );
            }
        }
        report
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        match report.violations.first() {
            None => Ok(()),
            Some(v) => Err(Error::InvalidDataset(if report.violations.len() == 1 {
                v.to_string()
            } else {
                format!("{v} (and {} more)", report.violations.len() - 1)
            })),
        }
    }

    /// Responses recoded to -1/+1. Only meaningful for binary data.
    pub(crate) fn pm1_response(&self, cluster: &Cluster) -> DVector<f64> {
        match self.response_kind {
            ResponseKind::Binary01 => cluster.y.map(|v| 2.0 * v - 1.0),
            _ => cluster.y.clone(),
        }
    }
}

/// Shape of a contrast family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastKind {
    /// Every parameter compared to `baseline` (a 0-based index).
    ManyToOne {
        baseline: usize,
    },
    AllPairwise,
    Custom,
}

/// A `c x p` contrast matrix whose rows define hypotheses `C_i theta = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastFamily {
    matrix: DMatrix<f64>,
    labels: Vec<String>,
    kind: ContrastKind,
}

fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|i| format!("beta{i}")).collect()
}

/// Builds a many-to-one or all-pairwise family over `p` parameters.
///
/// Rows are ordered by ascending index pair. For many-to-one the baseline is
/// 0-based and every row carries `+1` at the baseline and `-1` at the other index.
pub fn build_contrasts(kind: ContrastKind, p: usize) -> Result<ContrastFamily> {
    if p < 2 {
        return Err(Error::invalid(format!("contrasts need p >= 2, got {p}")));
    }
    let names = default_names(p);
    let pairs: Vec<(usize, usize)> = match kind {
        ContrastKind::ManyToOne { baseline } => {
            if baseline >= p {
                return Err(Error::invalid(format!(
                    "baseline index {baseline} out of range for p = {p}"
                )));
            }
            (0..p)
                .filter(|&j| j != baseline)
                .map(|j| (baseline, j))
                .collect()
        }
        ContrastKind::AllPairwise => (0..p)
            .flat_map(|i| (i + 1..p).map(move |j| (i, j)))
            .collect(),
        ContrastKind::Custom => {
            return Err(Error::invalid(
                "custom contrasts are built with ContrastFamily::custom",
            ))
        }
    };
    let mut matrix = DMatrix::zeros(pairs.len(), p);
    let mut labels = Vec::with_capacity(pairs.len());
    for (row, &(i, j)) in pairs.iter().enumerate() {
        matrix[(row, i)] = 1.0;
        matrix[(row, j)] = -1.0;
        labels.push(format!("{} = {}", names[i], names[j]));
    }
    Ok(ContrastFamily {
        matrix,
        labels,
        kind,
    })
}

impl ContrastFamily {
    pub fn custom(matrix: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::invalid(
                "contrast matrix must have at least one row and column",
            ));
        }
        if labels.len() != matrix.nrows() {
            return Err(Error::dims(format!(
                "{} labels for {} contrast rows",
                labels.len(),
                matrix.nrows()
            )));
        }
        for (i, row) in matrix.row_iter().enumerate() {
            if row.iter().all(|&v| v == 0.0) {
                return Err(Error::invalid(format!(
                    "contrast row {} is all zero",
                    i + 1
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "contrast row {} is not finite",
                    i + 1
                )));
            }
        }
        Ok(ContrastFamily {
            matrix,
            labels,
            kind: ContrastKind::Custom,
        })
    }

    /// Rewrites the labels of a many-to-one or all-pairwise family using
    /// parameter names (`"smoking = age"` instead of `"beta2 = beta6"`).
    pub fn with_parameter_names(mut self, names: &[String]) -> Result<Self> {
        if names.len() != self.p() {
            return Err(Error::dims(format!(
                "{} names for {} parameters",
                names.len(),
                self.p()
            )));
        }
        if self.kind == ContrastKind::Custom {
            return Ok(self);
        }
        for (row, label) in self.matrix.row_iter().zip(self.labels.iter_mut()) {
            let pos = row.iter().position(|&v| v == 1.0);
            let neg = row.iter().position(|&v| v == -1.0);
            if let (Some(i), Some(j)) = (pos, neg) {
                *label = format!("{} = {}", names[i], names[j]);
            }
        }
        Ok(self)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn kind(&self) -> ContrastKind {
        self.kind
    }

    /// Number of hypotheses.
    pub fn c(&self) -> usize {
        self.matrix.nrows()
    }

    /// Number of parameters addressed.
    pub fn p(&self) -> usize {
        self.matrix.ncols()
    }

    /// The contrast matrix widened with zero columns to `dim` parameters, so a
    /// family over the regression block applies to a longer parameter vector.
    pub fn padded_matrix(&self, dim: usize) -> Result<DMatrix<f64>> {
        let p = self.p();
        if dim < p {
            return Err(Error::dims(format!(
                "contrasts address {p} parameters but the model has only {dim}"
            )));
        }
        let mut out = DMatrix::zeros(self.c(), dim);
        out.view_mut((0, 0), (self.c(), p)).copy_from(&self.matrix);
        Ok(out)
    }

    /// Numerical rank of the contrast matrix.
    pub fn rank(&self) -> usize {
        let svd = self.matrix.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let tol = smax * (self.c().max(self.p()) as f64) * f64::EPSILON * 16.0;
        svd.singular_values.iter().filter(|&&s| s > tol).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(cf: &ContrastFamily) -> Vec<Vec<f64>> {
        cf.matrix()
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }

    #[test]
    fn many_to_one_p3() {
        let cf = build_contrasts(ContrastKind::ManyToOne { baseline: 0 }, 3).unwrap();
        assert_eq!(rows(&cf), vec![vec![1.0, -1.0, 0.0], vec![1.0, 0.0, -1.0]]);
        assert_eq!(cf.labels()[0], "beta1 = beta2");
    }

    #[test]
    fn all_pairwise_p3_and_p7() {
        let cf = build_contrasts(ContrastKind::AllPairwise, 3).unwrap();
        assert_eq!(
            rows(&cf),
            vec![
                vec![1.0, -1.0, 0.0],
                vec![1.0, 0.0, -1.0],
                vec![0.0, 1.0, -1.0]
            ]
        );
        assert_eq!(
            build_contrasts(ContrastKind::AllPairwise, 7).unwrap().c(),
            21
        );
    }

    #[test]
    fn contrast_errors() {
        assert!(build_contrasts(ContrastKind::AllPairwise, 1).is_err());
        assert!(build_contrasts(ContrastKind::ManyToOne { baseline: 3 }, 3).is_err());
        assert!(ContrastFamily::custom(DMatrix::zeros(1, 3), vec!["z".into()]).is_err());
    }

    #[test]
    fn ranks() {
        assert_eq!(
            build_contrasts(ContrastKind::AllPairwise, 7)
                .unwrap()
                .rank(),
            6
        );
        let m2o = build_contrasts(ContrastKind::ManyToOne { baseline: 2 }, 5).unwrap();
        assert_eq!(m2o.rank(), 4);
    }

    #[test]
    fn renamed_labels() {
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let cf = build_contrasts(ContrastKind::AllPairwise, 3)
            .unwrap()
            .with_parameter_names(&names)
            .unwrap();
        assert_eq!(cf.labels(), &["a = b", "a = c", "b = c"]);
    }

    fn cluster(id: &str, y: &[f64], rows: usize, p: usize) -> Cluster {
        Cluster::new(
            id,
            DVector::from_column_slice(y),
            DMatrix::from_element(rows, p, 0.5),
        )
    }

    #[test]
    fn validation_reports() {
        let ok = ClusteredDataset::new(
            vec![cluster("a", &[1.0, 2.0], 2, 1), cluster("b", &[3.0], 1, 1)],
            ResponseKind::Continuous,
            1,
        );
        assert!(ok.validate().is_valid());

        let shape = ClusteredDataset::new(
            vec![
                cluster("a", &[1.0, 2.0, 3.0], 4, 1),
                cluster("b", &[3.0], 1, 1),
            ],
            ResponseKind::Continuous,
            1,
        );
        let r = shape.validate();
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].kind, ViolationKind::Shape);
        assert_eq!(r.violations[0].cluster.as_deref(), Some("a"));

        let domain = ClusteredDataset::new(
            vec![cluster("a", &[0.0, 2.0], 2, 1), cluster("b", &[1.0], 1, 1)],
            ResponseKind::Binary01,
            1,
        );
        let r = domain.validate();
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].kind, ViolationKind::Domain);
        assert!(domain.ensure_valid().is_err());

        let single = ClusteredDataset::new(
            vec![cluster("a", &[1.0], 1, 1)],
            ResponseKind::Continuous,
            1,
        );
        assert_eq!(
            single.validate().violations[0].kind,
            ViolationKind::TooFewClusters
        );
    }
}
