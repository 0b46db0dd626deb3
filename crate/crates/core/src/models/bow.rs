//! Binary bag-of-words softmax classifier trained by mini-batch SGD.

use rand::seq::SliceRandom;

use crate::corpus::{Corpus, Vocabulary};
use crate::error::{Error, Result};
use crate::explainability::PredictionDistribution;
use crate::rng;

use super::{feature_indices, softmax, Checkpoint, PredictionOracle, TrainConfig};

/// Linear classifier over binary presence vectors: `softmax(W x + b)`.
/// Out-of-vocabulary tokens contribute nothing; prediction is invariant to
/// token order and multiplicity.
#[derive(Debug, Clone)]
pub struct BowSoftmaxModel {
    /// K x V.
    weights: Vec<Vec<f64>>,
    /// K.
    bias: Vec<f64>,
    vocab: Vocabulary,
}

impl BowSoftmaxModel {
    pub(super) fn from_flat(
        num_classes: usize,
        vocab_size: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        vocab: Vocabulary,
    ) -> Result<Self> {
        if vocab.len() != vocab_size {
            return Err(Error::Dimension(format!(
                "checkpoint vocab size {vocab_size} != corpus vocab size {}",
                vocab.len()
            )));
        }
        if bias.len() != num_classes {
            return Err(Error::Dimension("bias length != num_classes".into()));
        }
        Ok(BowSoftmaxModel {
            weights: super::unflatten(weights, num_classes, vocab_size)?,
            bias,
            vocab,
        })
    }

    pub fn checkpoint(&self, config: &TrainConfig) -> Checkpoint {
        Checkpoint::MvBow {
            num_classes: self.bias.len(),
            vocab_size: self.vocab.len(),
            vocab_sha256: self.vocab.sha256(),
            weights: self.weights.concat(),
            bias: self.bias.clone(),
            config: config.clone(),
        }
    }

    fn logits(&self, features: &[usize]) -> Vec<f64> {
        let mut logits = self.bias.clone();
        for (k, logit) in logits.iter_mut().enumerate() {
            for &f in features {
                *logit += self.weights[k][f];
            }
        }
        logits
    }

    /// Fraction of instances whose argmax prediction equals `labels`.
    pub fn accuracy(&self, corpus: &Corpus, labels: &[usize]) -> f64 {
        let mut correct = 0usize;
        for (instance, &label) in corpus.instances.iter().zip(labels) {
            let pred = self.predict(&instance.tokens).map(|d| d.argmax()).ok();
            if pred == Some(label) {
                correct += 1;
            }
        }
        correct as f64 / labels.len().max(1) as f64
    }

    /// Mean negative log-likelihood of `labels`.
    pub fn mean_nll(&self, corpus: &Corpus, labels: &[usize]) -> f64 {
        let mut total = 0.0;
        for (instance, &label) in corpus.instances.iter().zip(labels) {
            let features = feature_indices(&instance.tokens, &self.vocab);
            let probs = softmax(&self.logits(&features));
            total += -probs[label].max(f64::MIN_POSITIVE).ln();
        }
        total / labels.len().max(1) as f64
    }
}

impl PredictionOracle for BowSoftmaxModel {
    fn predict(&self, tokens: &[String]) -> Result<PredictionDistribution> {
        if tokens.is_empty() {
            return Ok(PredictionDistribution::uniform(self.bias.len()));
        }
        let features = feature_indices(tokens, &self.vocab);
        PredictionDistribution::new(softmax(&self.logits(&features)))
    }

    fn num_classes(&self) -> usize {
        self.bias.len()
    }
}

/// Trains the classifier on per-instance labels by mini-batch SGD on the
/// mean NLL. Weights start at zero, so zero epochs yields uniform
/// predictions. Deterministic given the config seed: the per-epoch shuffle
/// order is the only source of randomness.
///
/// `labels` must align with `corpus.instances`; abstained instances are the
/// caller's responsibility to exclude beforehand.
pub fn train_bow_softmax(
    corpus: &Corpus,
    labels: &[usize],
    config: &TrainConfig,
) -> Result<BowSoftmaxModel> {
    config.validate()?;
    let n = corpus.num_instances();
    if labels.len() != n {
        return Err(Error::Train(format!(
            "{} labels for {} instances",
            labels.len(),
            n
        )));
    }
    if n == 0 {
        return Err(Error::Train("no usable training instances".into()));
    }
    let k = corpus.meta.num_classes();
    let v = corpus.vocabulary.len();
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Train(format!("label {bad} out of range (K = {k})")));
    }

    let features: Vec<Vec<usize>> = corpus
        .instances
        .iter()
        .map(|i| feature_indices(&i.tokens, &corpus.vocabulary))
        .collect();

    let mut model = BowSoftmaxModel {
        weights: vec![vec![0.0; v]; k],
        bias: vec![0.0; k],
        vocab: corpus.vocabulary.clone(),
    };

    let mut shuffle_rng = rng::stream(config.seed, "shuffle");
    let mut order: Vec<usize> = (0..n).collect();

    for _ in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(config.batch_size) {
            let scale = config.lr / batch.len() as f64;
            let mut grad_w = vec![vec![0.0; v]; k];
            let mut grad_b = vec![0.0; k];
            for &i in batch {
                let probs = softmax(&model.logits(&features[i]));
                for c in 0..k {
                    let g = probs[c] - f64::from(c == labels[i]);
                    grad_b[c] += g;
                    for &f in &features[i] {
                        grad_w[c][f] += g;
                    }
                }
            }
            for c in 0..k {
                model.bias[c] -= scale * grad_b[c];
                for (w, g) in model.weights[c].iter_mut().zip(&grad_w[c]) {
                    *w -= scale * g;
                }
            }
        }
    }

    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CorpusMeta, Instance, LabelingFunction};

    fn separable_corpus(n_per_class: usize) -> (Corpus, Vec<usize>) {
        let meta = CorpusMeta {
            class_names: vec!["c0".into(), "c1".into()],
            lfs: vec![
                LabelingFunction { name: "lf0".into(), class: 0 },
                LabelingFunction { name: "lf1".into(), class: 1 },
            ],
        };
        let mut instances = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n_per_class {
            instances.push(Instance {
                id: format!("p{i}"),
                tokens: vec!["p".into(), "noise".into()],
                weak_label: 0,
                lf_matches: vec![0],
            });
            labels.push(0);
            instances.push(Instance {
                id: format!("q{i}"),
                tokens: vec!["q".into(), "noise".into()],
                weak_label: 1,
                lf_matches: vec![1],
            });
            labels.push(1);
        }
        let vocabulary = Vocabulary::from_instances(&instances);
        (Corpus { meta, instances, vocabulary }, labels)
    }

    #[test]
    fn separable_corpus_reaches_full_accuracy() {
        let (corpus, labels) = separable_corpus(10);
        let config = TrainConfig { epochs: 50, seed: 3, ..TrainConfig::default() };
        let model = train_bow_softmax(&corpus, &labels, &config).unwrap();
        assert_eq!(model.accuracy(&corpus, &labels), 1.0);
    }

    #[test]
    fn zero_epochs_is_uniform() {
        let (corpus, labels) = separable_corpus(3);
        let config = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let model = train_bow_softmax(&corpus, &labels, &config).unwrap();
        let d = model.predict(&["p".into()]).unwrap();
        assert!(d.probs().iter().all(|&p| (p - 0.5).abs() < 1e-12));
    }

    #[test]
    fn training_is_deterministic() {
        let (corpus, labels) = separable_corpus(5);
        let config = TrainConfig { epochs: 10, seed: 11, ..TrainConfig::default() };
        let a = train_bow_softmax(&corpus, &labels, &config).unwrap();
        let b = train_bow_softmax(&corpus, &labels, &config).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.bias, b.bias);
    }

    #[test]
    fn prediction_ignores_order_and_multiplicity() {
        let (corpus, labels) = separable_corpus(5);
        let config = TrainConfig { epochs: 10, ..TrainConfig::default() };
        let model = train_bow_softmax(&corpus, &labels, &config).unwrap();
        let a = model.predict(&["p".into(), "noise".into()]).unwrap();
        let b = model.predict(&["noise".into(), "p".into(), "p".into()]).unwrap();
        assert_eq!(a.probs(), b.probs());
    }

    #[test]
    fn empty_and_oov_input() {
        let (corpus, labels) = separable_corpus(5);
        let config = TrainConfig { epochs: 10, ..TrainConfig::default() };
        let model = train_bow_softmax(&corpus, &labels, &config).unwrap();
        let empty = model.predict(&[]).unwrap();
        assert!(empty.probs().iter().all(|&p| (p - 0.5).abs() < 1e-12));
        let oov = model.predict(&["never-seen".into()]).unwrap();
        assert!((oov.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_label_length_mismatch() {
        let (corpus, _) = separable_corpus(2);
        let config = TrainConfig::default();
        assert!(train_bow_softmax(&corpus, &[0], &config).is_err());
    }
}
