//! Feature association matrices and the per-instance association score.
//!
//! Two dense matrices are built from the co-occurrence tables: `C`
//! (classes x features) and `L` (labeling functions x features), under one
//! of three methods: the chi-square cell statistic, positive pointwise
//! mutual information, or its normalized variant. The association score of
//! a feature in an instance subtracts the LF association from the class
//! association, once per matching labeling function.
//!
//! All logarithms are natural.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CountTables, Instance};
use crate::error::{Error, Result};

/// How an association matrix was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssociationMethod {
    Chi2,
    Ppmi,
    Npmi,
}

impl std::str::FromStr for AssociationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chi2" => Ok(AssociationMethod::Chi2),
            "ppmi" => Ok(AssociationMethod::Ppmi),
            "npmi" => Ok(AssociationMethod::Npmi),
            other => Err(Error::Config(format!(
                "unknown association method {other:?} (expected chi2, ppmi or npmi)"
            ))),
        }
    }
}

impl std::fmt::Display for AssociationMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AssociationMethod::Chi2 => "chi2",
            AssociationMethod::Ppmi => "ppmi",
            AssociationMethod::Npmi => "npmi",
        };
        f.write_str(s)
    }
}

/// Dense feature-class matrix `C` (K x V) and feature-LF matrix `L` (J x V).
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationMatrices {
    pub method: AssociationMethod,
    /// K x V.
    pub class_features: Vec<Vec<f64>>,
    /// J x V.
    pub lf_features: Vec<Vec<f64>>,
}

impl AssociationMatrices {
    pub fn num_classes(&self) -> usize {
        self.class_features.len()
    }

    pub fn num_lfs(&self) -> usize {
        self.lf_features.len()
    }

    pub fn num_features(&self) -> usize {
        self.class_features.first().map_or(0, |row| row.len())
    }
}

/// One cell of the chi-square statistic: `(observed - expected)^2 / expected`.
///
/// A zero expectation means the combination cannot occur at all; the cell is
/// defined as 0 rather than dividing by zero.
pub fn chi_square_cell(observed: f64, expected: f64) -> f64 {
    if expected <= 0.0 {
        return 0.0;
    }
    let d = observed - expected;
    d * d / expected
}

/// Builds chi-square matrices. The expectation for a cell is
/// `n_z * n_f / T` from the marginals of the owning table.
pub fn build_chi2_matrices(counts: &CountTables) -> AssociationMatrices {
    let class_features = build_table(counts, Table::Class, |n_zf, n_f, n_z, t| {
        let expected = n_z * n_f / t;
        chi_square_cell(n_zf, expected)
    });
    let lf_features = build_table(counts, Table::Lf, |n_zf, n_f, n_z, t| {
        let expected = n_z * n_f / t;
        chi_square_cell(n_zf, expected)
    });
    AssociationMatrices {
        method: AssociationMethod::Chi2,
        class_features,
        lf_features,
    }
}

/// Builds PPMI matrices: `max(0, ln(P(f,z) / (P(f) P(z))))` with zero-count
/// cells defined as 0.
pub fn build_ppmi_matrices(counts: &CountTables) -> AssociationMatrices {
    let cell = |n_zf: f64, n_f: f64, n_z: f64, t: f64| pmi(n_zf, n_f, n_z, t).max(0.0);
    AssociationMatrices {
        method: AssociationMethod::Ppmi,
        class_features: build_table(counts, Table::Class, cell),
        lf_features: build_table(counts, Table::Lf, cell),
    }
}

/// Builds NPMI matrices: PMI divided by the joint self-information
/// `-ln P(f,z)`, clamped to `[0, 1]`. A joint probability of 1 has zero
/// self-information; the cell is defined as 1, the perfect-coupling limit.
pub fn build_npmi_matrices(counts: &CountTables) -> AssociationMatrices {
    let cell = |n_zf: f64, n_f: f64, n_z: f64, t: f64| {
        if n_zf <= 0.0 {
            return 0.0;
        }
        let p_joint = n_zf / t;
        let h = -p_joint.ln();
        if h == 0.0 {
            return 1.0;
        }
        (pmi(n_zf, n_f, n_z, t) / h).max(0.0)
    };
    AssociationMatrices {
        method: AssociationMethod::Npmi,
        class_features: build_table(counts, Table::Class, cell),
        lf_features: build_table(counts, Table::Lf, cell),
    }
}

/// Builds matrices under the given method.
pub fn build_matrices(counts: &CountTables, method: AssociationMethod) -> AssociationMatrices {
    match method {
        AssociationMethod::Chi2 => build_chi2_matrices(counts),
        AssociationMethod::Ppmi => build_ppmi_matrices(counts),
        AssociationMethod::Npmi => build_npmi_matrices(counts),
    }
}

fn pmi(n_zf: f64, n_f: f64, n_z: f64, t: f64) -> f64 {
    if n_zf <= 0.0 || n_f <= 0.0 || n_z <= 0.0 {
        // zero-count cells are defined as 0, never -inf
        return 0.0;
    }
    ((n_zf * t) / (n_f * n_z)).ln()
}

enum Table {
    Class,
    Lf,
}

fn build_table(
    counts: &CountTables,
    table: Table,
    cell: impl Fn(f64, f64, f64, f64) -> f64,
) -> Vec<Vec<f64>> {
    let v = counts.n_f_class.len();
    let (num_z, joint, n_f, n_z, t): (usize, &Vec<Vec<u64>>, &Vec<u64>, &Vec<u64>, u64) =
        match table {
            Table::Class => (
                counts.n_class.len(),
                &counts.n_fc,
                &counts.n_f_class,
                &counts.n_class,
                counts.t_class,
            ),
            Table::Lf => (
                counts.n_lf.len(),
                &counts.n_fl,
                &counts.n_f_lf,
                &counts.n_lf,
                counts.t_lf,
            ),
        };
    let t = t as f64;
    (0..num_z)
        .map(|z| {
            (0..v)
                .map(|f| cell(joint[f][z] as f64, n_f[f] as f64, n_z[z] as f64, t))
                .collect()
        })
        .collect()
}

/// Per-instance association score of a feature: the class association minus
/// the LF association, summed over the instance's matching labeling
/// functions. The class term is added once per match.
///
/// Positive means class-dominant, negative means LF-dominant.
pub fn association_score(
    instance: &Instance,
    feature: usize,
    matrices: &AssociationMatrices,
) -> Result<f64> {
    if feature >= matrices.num_features() {
        return Err(Error::UnknownFeature {
            feature: format!("#{feature}"),
        });
    }
    let class_assoc = matrices.class_features[instance.weak_label][feature];
    Ok(instance
        .lf_matches
        .iter()
        .map(|&lf| class_assoc - matrices.lf_features[lf][feature])
        .sum())
}

/// Serialized form of [`AssociationMatrices`], carrying the names the
/// matrices were built over so consumers can cross-check vocabularies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatricesFile {
    pub method: AssociationMethod,
    pub classes: Vec<String>,
    pub lfs: Vec<String>,
    pub features: Vec<String>,
    /// Row-major K x V.
    #[serde(rename = "C")]
    pub class_features: Vec<f64>,
    /// Row-major J x V.
    #[serde(rename = "L")]
    pub lf_features: Vec<f64>,
}

impl MatricesFile {
    pub fn new(matrices: &AssociationMatrices, corpus: &Corpus) -> Self {
        MatricesFile {
            method: matrices.method,
            classes: corpus.meta.class_names.clone(),
            lfs: corpus.meta.lfs.iter().map(|lf| lf.name.clone()).collect(),
            features: corpus.vocabulary.terms().to_vec(),
            class_features: matrices.class_features.concat(),
            lf_features: matrices.lf_features.concat(),
        }
    }

    pub fn into_matrices(self) -> Result<(AssociationMatrices, Vec<String>)> {
        let v = self.features.len();
        let k = self.classes.len();
        let j = self.lfs.len();
        if self.class_features.len() != k * v || self.lf_features.len() != j * v {
            return Err(Error::Dimension(format!(
                "matrix file declares K={k}, J={j}, V={v} but C has {} and L has {} entries",
                self.class_features.len(),
                self.lf_features.len()
            )));
        }
        let class_features = self.class_features.chunks(v).map(<[f64]>::to_vec).collect();
        let lf_features = self.lf_features.chunks(v).map(<[f64]>::to_vec).collect();
        Ok((
            AssociationMatrices {
                method: self.method,
                class_features,
                lf_features,
            },
            self.features,
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::to_writer(BufWriter::new(file), self)
            .map_err(|e| Error::malformed(path.display().to_string(), e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::malformed(path.display().to_string(), e.to_string()))
    }
}
