//! Prediction oracles and desk-scale trainable models.
//!
//! Three implementations of the oracle contract are provided: a bag-of-words
//! softmax classifier trained on majority-vote labels, and the adversarial
//! gradient-reversal network, plus the majority-vote labeler itself.

mod bow;
mod knowman;

pub use bow::{train_bow_softmax, BowSoftmaxModel};
pub use knowman::{
    gradient_check, train_knowman, train_knowman_reversal_disabled, KnowManBatch, KnowManModel,
    KnowManSample,
};

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, CorpusMeta, Instance, Vocabulary};
use crate::error::{Error, Result};
use crate::explainability::PredictionDistribution;
use crate::rng;

/// A frozen model that maps token sequences to class distributions.
///
/// `predict` must be a pure function of its input; empty token input yields
/// the uniform distribution over the K classes.
pub trait PredictionOracle {
    fn predict(&self, tokens: &[String]) -> Result<PredictionDistribution>;
    fn num_classes(&self) -> usize;
}

/// Hyperparameters shared by the trainable models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Gradient-reversal strength; 0 disables the adversarial signal.
    pub lambda: f64,
    /// Learning rate of the classifier/extractor optimizer.
    pub lr: f64,
    /// Learning rate of the discriminator optimizer.
    pub lr_disc: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Hidden width of the feature extractor.
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        // the adversarial loop stays stable across lambda in [0, 4] with a
        // deliberately slow discriminator: a strong one chases the extractor
        // across class boundaries and the minimax oscillates
        TrainConfig {
            lambda: 0.0,
            lr: 0.2,
            lr_disc: 0.02,
            epochs: 20,
            batch_size: 16,
            hidden: 12,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.lr <= 0.0 || self.lr_disc <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::Config("batch size and hidden width must be positive".into()));
        }
        Ok(())
    }
}

/// How majority-vote ties are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TiePolicy {
    /// Seeded uniform choice among the tied classes.
    Random { seed: u64 },
    /// Emit no label.
    Abstain,
}

/// Tallies the classes voted for by the matching labeling functions. A
/// strict plurality wins; ties fall to the policy. `None` means abstain.
///
/// The random policy derives its choice from the seed and the instance id,
/// so the outcome does not depend on iteration order.
pub fn majority_vote_label(
    instance: &Instance,
    meta: &CorpusMeta,
    tie_policy: TiePolicy,
) -> Option<usize> {
    debug_assert!(!instance.lf_matches.is_empty());
    let mut votes = vec![0usize; meta.num_classes()];
    for &lf in &instance.lf_matches {
        votes[meta.lfs[lf].class] += 1;
    }
    let best = *votes.iter().max().unwrap();
    let tied: Vec<usize> = (0..votes.len()).filter(|&c| votes[c] == best).collect();
    if tied.len() == 1 {
        return Some(tied[0]);
    }
    match tie_policy {
        TiePolicy::Abstain => None,
        TiePolicy::Random { seed } => {
            let mut rng = rng::stream(seed, &format!("tie-break/{}", instance.id));
            Some(tied[rng.gen_range(0..tied.len())])
        }
    }
}

/// Numerically stable softmax.
pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Serialized model checkpoint. Loading verifies the vocabulary digest
/// against the corpus the model is applied to.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Checkpoint {
    MvBow {
        num_classes: usize,
        vocab_size: usize,
        vocab_sha256: String,
        /// Row-major K x V.
        weights: Vec<f64>,
        bias: Vec<f64>,
        config: TrainConfig,
    },
    Knowman {
        num_classes: usize,
        num_lfs: usize,
        hidden: usize,
        vocab_size: usize,
        vocab_sha256: String,
        /// Row-major H x V.
        extractor_weights: Vec<f64>,
        extractor_bias: Vec<f64>,
        /// Row-major K x H.
        classifier_weights: Vec<f64>,
        classifier_bias: Vec<f64>,
        /// Row-major J x H.
        discriminator_weights: Vec<f64>,
        discriminator_bias: Vec<f64>,
        config: TrainConfig,
    },
}

impl Checkpoint {
    pub fn vocab_sha256(&self) -> &str {
        match self {
            Checkpoint::MvBow { vocab_sha256, .. } | Checkpoint::Knowman { vocab_sha256, .. } => {
                vocab_sha256
            }
        }
    }

    pub fn config(&self) -> &TrainConfig {
        match self {
            Checkpoint::MvBow { config, .. } | Checkpoint::Knowman { config, .. } => config,
        }
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

    /// Rehydrates the model over the corpus vocabulary, verifying the
    /// stored digest.
    pub fn into_oracle(self, corpus: &Corpus) -> Result<Box<dyn PredictionOracle>> {
        let expected = corpus.vocabulary.sha256();
        if self.vocab_sha256() != expected {
            return Err(Error::VocabMismatch {
                expected,
                found: self.vocab_sha256().to_owned(),
            });
        }
        match self {
            Checkpoint::MvBow {
                num_classes,
                vocab_size,
                weights,
                bias,
                ..
            } => {
                let model = BowSoftmaxModel::from_flat(
                    num_classes,
                    vocab_size,
                    weights,
                    bias,
                    corpus.vocabulary.clone(),
                )?;
                Ok(Box::new(model))
            }
            Checkpoint::Knowman {
                num_classes,
                num_lfs,
                hidden,
                vocab_size,
                extractor_weights,
                extractor_bias,
                classifier_weights,
                classifier_bias,
                discriminator_weights,
                discriminator_bias,
                config,
                ..
            } => {
                let model = KnowManModel::from_flat(
                    num_classes,
                    num_lfs,
                    hidden,
                    vocab_size,
                    extractor_weights,
                    extractor_bias,
                    classifier_weights,
                    classifier_bias,
                    discriminator_weights,
                    discriminator_bias,
                    config.lambda,
                    corpus.vocabulary.clone(),
                )?;
                Ok(Box::new(model))
            }
        }
    }
}

/// Digest of a checkpoint's weight content, for byte-identity checks.
pub fn checkpoint_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

pub(crate) fn unflatten(flat: Vec<f64>, rows: usize, cols: usize) -> Result<Vec<Vec<f64>>> {
    if flat.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "expected {rows}x{cols} = {} weights, got {}",
            rows * cols,
            flat.len()
        )));
    }
    Ok(flat.chunks(cols).map(<[f64]>::to_vec).collect())
}

pub(crate) fn init_matrix(
    rng: &mut impl Rng,
    rows: usize,
    cols: usize,
    fan_in: usize,
) -> Vec<Vec<f64>> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.gen_range(-bound..bound)).collect())
        .collect()
}

/// Distinct in-vocabulary feature indices of a token sequence, ascending.
pub(crate) fn feature_indices(tokens: &[String], vocab: &Vocabulary) -> Vec<usize> {
    let mut features: Vec<usize> = tokens.iter().filter_map(|t| vocab.index_of(t)).collect();
    features.sort_unstable();
    features.dedup();
    features
}
