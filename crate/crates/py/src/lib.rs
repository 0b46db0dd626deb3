//! Python bindings: corpus loading, association matrices, model training
//! and generalization scoring, mirroring the command-line pipeline.

// the pyo3 0.22 macros expand to PyErr-to-PyErr conversions
#![allow(clippy::useless_conversion)]

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use xpasc_core::association::{
    build_matrices, AssociationMatrices, AssociationMethod, MatricesFile,
};
use xpasc_core::corpus::{count_cooccurrences, filter_unmatched, Corpus};
use xpasc_core::explainability::PredictionDistribution;
use xpasc_core::models::{
    majority_vote_label, train_bow_softmax, train_knowman, BowSoftmaxModel, KnowManModel,
    PredictionOracle, TiePolicy, TrainConfig,
};
use xpasc_core::score::{xpasc as xpasc_score, xpasc_scaled};
use xpasc_core::synthetic::{planted_correlation_corpus, PlantedConfig};

fn err(e: xpasc_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A validated corpus: metadata, instances and the feature vocabulary.
#[pyclass(name = "Corpus")]
#[derive(Clone)]
struct PyCorpus {
    inner: Corpus,
}

#[pymethods]
impl PyCorpus {
    #[getter]
    fn num_instances(&self) -> usize {
        self.inner.num_instances()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.meta.num_classes()
    }

    #[getter]
    fn num_lfs(&self) -> usize {
        self.inner.meta.num_lfs()
    }

    #[getter]
    fn vocabulary(&self) -> Vec<String> {
        self.inner.vocabulary.terms().to_vec()
    }

    /// Drops instances without labeling-function matches. Returns the
    /// filtered corpus and a stats dict.
    fn filter_unmatched(&self, py: Python<'_>) -> PyResult<(PyCorpus, PyObject)> {
        let (filtered, stats) = filter_unmatched(&self.inner).map_err(err)?;
        let dict = pyo3::types::PyDict::new_bound(py);
        dict.set_item("original_size", stats.original_size)?;
        dict.set_item("filtered_size", stats.filtered_size)?;
        dict.set_item("retained_fraction", stats.retained_fraction)?;
        Ok((PyCorpus { inner: filtered }, dict.into()))
    }

    fn __len__(&self) -> usize {
        self.inner.num_instances()
    }

    fn __repr__(&self) -> String {
        format!(
            "Corpus({} instances, {} classes, {} lfs, {} features)",
            self.inner.num_instances(),
            self.inner.meta.num_classes(),
            self.inner.meta.num_lfs(),
            self.inner.vocabulary.len()
        )
    }
}

/// Loads a corpus from a metadata JSON file and an instance JSON Lines file.
#[pyfunction]
fn load_corpus(meta_path: PathBuf, data_path: PathBuf) -> PyResult<PyCorpus> {
    let inner = xpasc_core::corpus::load_corpus(&meta_path, &data_path).map_err(err)?;
    Ok(PyCorpus { inner })
}

/// Deterministic synthetic corpus whose labeling-function keywords are
/// distinct from its class-indicative tokens.
#[pyfunction]
#[pyo3(signature = (num_instances=600, seed=0))]
fn planted_corpus(num_instances: usize, seed: u64) -> PyCorpus {
    let config = PlantedConfig { num_instances, seed, ..PlantedConfig::default() };
    PyCorpus { inner: planted_correlation_corpus(&config) }
}

/// Feature-class and feature-LF association matrices.
#[pyclass(name = "Matrices")]
#[derive(Clone)]
struct PyMatrices {
    inner: AssociationMatrices,
    features: Vec<String>,
}

#[pymethods]
impl PyMatrices {
    #[getter]
    fn method(&self) -> String {
        self.inner.method.to_string()
    }

    /// The K x V class matrix as nested lists.
    #[getter]
    fn class_features(&self) -> Vec<Vec<f64>> {
        self.inner.class_features.clone()
    }

    /// The J x V labeling-function matrix as nested lists.
    #[getter]
    fn lf_features(&self) -> Vec<Vec<f64>> {
        self.inner.lf_features.clone()
    }

    #[getter]
    fn features(&self) -> Vec<String> {
        self.features.clone()
    }

    fn save(&self, path: PathBuf, corpus: &PyCorpus) -> PyResult<()> {
        MatricesFile::new(&self.inner, &corpus.inner)
            .save(&path)
            .map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<PyMatrices> {
        let (inner, features) = MatricesFile::load(&path)
            .and_then(MatricesFile::into_matrices)
            .map_err(err)?;
        Ok(PyMatrices { inner, features })
    }
}

/// Builds association matrices ("chi2", "ppmi" or "npmi") from a corpus.
#[pyfunction]
fn build_association(corpus: &PyCorpus, method: &str) -> PyResult<PyMatrices> {
    let method: AssociationMethod = method.parse().map_err(err)?;
    let counts = count_cooccurrences(&corpus.inner);
    Ok(PyMatrices {
        inner: build_matrices(&counts, method),
        features: corpus.inner.vocabulary.terms().to_vec(),
    })
}

/// KL divergence (natural log) between two probability vectors.
#[pyfunction]
fn kl_divergence(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    let p = PredictionDistribution::new(p).map_err(err)?;
    let q = PredictionDistribution::new(q).map_err(err)?;
    xpasc_core::explainability::kl_divergence(&p, &q).map_err(err)
}

enum ModelInner {
    Bow(BowSoftmaxModel),
    Knowman(KnowManModel),
}

impl ModelInner {
    fn oracle(&self) -> &dyn PredictionOracle {
        match self {
            ModelInner::Bow(m) => m,
            ModelInner::Knowman(m) => m,
        }
    }
}

/// A trained model usable as a frozen prediction oracle.
#[pyclass(name = "Model")]
struct PyModel {
    inner: ModelInner,
}

#[pymethods]
impl PyModel {
    /// Class distribution for a token sequence.
    fn predict(&self, tokens: Vec<String>) -> PyResult<Vec<f64>> {
        let dist = self.inner.oracle().predict(&tokens).map_err(err)?;
        Ok(dist.probs().to_vec())
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.oracle().num_classes()
    }

    #[getter]
    fn kind(&self) -> &'static str {
        match self.inner {
            ModelInner::Bow(_) => "mv-bow",
            ModelInner::Knowman(_) => "knowman",
        }
    }
}

fn config_from(
    lambda: f64,
    lr: f64,
    lr_disc: f64,
    epochs: usize,
    batch_size: usize,
    hidden: usize,
    seed: u64,
) -> TrainConfig {
    TrainConfig { lambda, lr, lr_disc, epochs, batch_size, hidden, seed }
}

/// Trains the bag-of-words softmax classifier on majority-vote labels.
/// Tied votes fall to a seeded random choice.
#[pyfunction]
#[pyo3(signature = (corpus, lr=0.2, epochs=20, batch_size=16, seed=0))]
fn train_mv_bow(
    corpus: &PyCorpus,
    lr: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> PyResult<PyModel> {
    let config = config_from(0.0, lr, 0.02, epochs, batch_size, 1, seed);
    let tie = TiePolicy::Random { seed };
    let mut labeled = Vec::new();
    let mut labels = Vec::new();
    for instance in &corpus.inner.instances {
        if let Some(label) = majority_vote_label(instance, &corpus.inner.meta, tie) {
            labeled.push(instance.clone());
            labels.push(label);
        }
    }
    if labeled.is_empty() {
        return Err(PyValueError::new_err(
            "no usable instances: every majority vote abstained",
        ));
    }
    let train_corpus = Corpus {
        meta: corpus.inner.meta.clone(),
        instances: labeled,
        vocabulary: corpus.inner.vocabulary.clone(),
    };
    let model = train_bow_softmax(&train_corpus, &labels, &config).map_err(err)?;
    Ok(PyModel { inner: ModelInner::Bow(model) })
}

/// Trains the adversarial gradient-reversal network.
#[pyfunction]
#[pyo3(signature = (corpus, lambda_=0.0, lr=0.2, lr_disc=0.02, epochs=20, batch_size=16, hidden=12, seed=0))]
#[allow(clippy::too_many_arguments)]
fn train_adversarial(
    corpus: &PyCorpus,
    lambda_: f64,
    lr: f64,
    lr_disc: f64,
    epochs: usize,
    batch_size: usize,
    hidden: usize,
    seed: u64,
) -> PyResult<PyModel> {
    let config = config_from(lambda_, lr, lr_disc, epochs, batch_size, hidden, seed);
    let model = train_knowman(&corpus.inner, &config).map_err(err)?;
    Ok(PyModel { inner: ModelInner::Knowman(model) })
}

/// Scoring result: the aggregate score plus the JSON report.
#[pyclass(name = "Report")]
struct PyReport {
    score: f64,
    num_instances: usize,
    num_terms: usize,
    json: String,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn score(&self) -> f64 {
        self.score
    }

    #[getter]
    fn num_instances(&self) -> usize {
        self.num_instances
    }

    #[getter]
    fn num_terms(&self) -> usize {
        self.num_terms
    }

    /// Full report, including the per-instance breakdown, as a JSON string.
    fn to_json(&self) -> &str {
        &self.json
    }

    fn __repr__(&self) -> String {
        format!("Report(score={})", self.score)
    }
}

fn wrap_report(report: xpasc_core::score::XpascReport) -> PyResult<PyReport> {
    let json = serde_json::to_string(&report)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(PyReport {
        score: report.score,
        num_instances: report.num_instances,
        num_terms: report.num_terms,
        json,
    })
}

/// The generalization score of a model over a corpus and matrices.
#[pyfunction]
#[pyo3(signature = (corpus, model, matrices, gamma=1.0))]
fn xpasc(corpus: &PyCorpus, model: &PyModel, matrices: &PyMatrices, gamma: f64) -> PyResult<PyReport> {
    let report =
        xpasc_score(&corpus.inner, model.inner.oracle(), &matrices.inner, gamma).map_err(err)?;
    wrap_report(report)
}

/// The normalized variant: NPMI association, per-instance-max
/// explainability and min-max scaling of both pooled component
/// distributions.
#[pyfunction]
#[pyo3(signature = (corpus, model, gamma=1.0))]
fn xpasc_scaled_score(corpus: &PyCorpus, model: &PyModel, gamma: f64) -> PyResult<PyReport> {
    let counts = count_cooccurrences(&corpus.inner);
    let report =
        xpasc_scaled(&corpus.inner, model.inner.oracle(), &counts, gamma).map_err(err)?;
    wrap_report(report)
}

#[pymodule]
fn xpasc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyMatrices>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(load_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(planted_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(build_association, m)?)?;
    m.add_function(wrap_pyfunction!(kl_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(train_mv_bow, m)?)?;
    m.add_function(wrap_pyfunction!(train_adversarial, m)?)?;
    m.add_function(wrap_pyfunction!(xpasc, m)?)?;
    m.add_function(wrap_pyfunction!(xpasc_scaled_score, m)?)?;
    Ok(())
}
