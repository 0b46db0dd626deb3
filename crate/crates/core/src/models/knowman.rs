//! Adversarial gradient-reversal network over bag-of-words input.
//!
//! Topology: a shared extractor (linear map plus tanh), a classifier head
//! and a labeling-function discriminator head. Each batch takes two steps
//! with independent SGD optimizers: first the discriminator is updated on
//! its own NLL with the extractor and classifier frozen, then the
//! classifier and extractor are updated on the classification NLL plus the
//! discriminator gradient reversed and scaled by -lambda (the reversal
//! layer is the identity in the forward pass).

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{Corpus, Vocabulary};
use crate::error::{Error, Result};
use crate::explainability::PredictionDistribution;
use crate::rng;

use super::{feature_indices, init_matrix, softmax, Checkpoint, PredictionOracle, TrainConfig};

/// The trained adversarial model. Inference uses only the extractor and the
/// classifier head; lambda influences training, never prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowManModel {
    /// Extractor, H x V.
    pub w_extract: Vec<Vec<f64>>,
    pub b_extract: Vec<f64>,
    /// Classifier head, K x H.
    pub w_class: Vec<Vec<f64>>,
    pub b_class: Vec<f64>,
    /// Discriminator head, J x H.
    pub w_disc: Vec<Vec<f64>>,
    pub b_disc: Vec<f64>,
    pub lambda: f64,
    vocab: Vocabulary,
}

/// One training sample: distinct feature indices, weak class label, and the
/// discriminator target LF for this visit.
#[derive(Debug, Clone)]
pub struct KnowManSample {
    pub features: Vec<usize>,
    pub class: usize,
    pub lf_target: usize,
}

pub type KnowManBatch = [KnowManSample];

impl KnowManModel {
    #[allow(clippy::too_many_arguments)]
    pub(super) fn from_flat(
        num_classes: usize,
        num_lfs: usize,
        hidden: usize,
        vocab_size: usize,
        extractor_weights: Vec<f64>,
        extractor_bias: Vec<f64>,
        classifier_weights: Vec<f64>,
        classifier_bias: Vec<f64>,
        discriminator_weights: Vec<f64>,
        discriminator_bias: Vec<f64>,
        lambda: f64,
        vocab: Vocabulary,
    ) -> Result<Self> {
        if vocab.len() != vocab_size {
            return Err(Error::Dimension(format!(
                "checkpoint vocab size {vocab_size} != corpus vocab size {}",
                vocab.len()
            )));
        }
        Ok(KnowManModel {
            w_extract: super::unflatten(extractor_weights, hidden, vocab_size)?,
            b_extract: extractor_bias,
            w_class: super::unflatten(classifier_weights, num_classes, hidden)?,
            b_class: classifier_bias,
            w_disc: super::unflatten(discriminator_weights, num_lfs, hidden)?,
            b_disc: discriminator_bias,
            lambda,
            vocab,
        })
    }

    pub fn checkpoint(&self, config: &TrainConfig) -> Checkpoint {
        Checkpoint::Knowman {
            num_classes: self.b_class.len(),
            num_lfs: self.b_disc.len(),
            hidden: self.b_extract.len(),
            vocab_size: self.vocab.len(),
            vocab_sha256: self.vocab.sha256(),
            extractor_weights: self.w_extract.concat(),
            extractor_bias: self.b_extract.clone(),
            classifier_weights: self.w_class.concat(),
            classifier_bias: self.b_class.clone(),
            discriminator_weights: self.w_disc.concat(),
            discriminator_bias: self.b_disc.clone(),
            config: config.clone(),
        }
    }

    pub fn num_lfs(&self) -> usize {
        self.b_disc.len()
    }

    pub fn hidden_size(&self) -> usize {
        self.b_extract.len()
    }

    /// Extractor output for a binary presence vector given by its feature
    /// indices.
    fn hidden(&self, features: &[usize]) -> Vec<f64> {
        let mut h = self.b_extract.clone();
        for (row, value) in self.w_extract.iter().zip(h.iter_mut()) {
            for &f in features {
                *value += row[f];
            }
        }
        h.iter_mut().for_each(|v| *v = v.tanh());
        h
    }

    fn head(weights: &[Vec<f64>], bias: &[f64], h: &[f64]) -> Vec<f64> {
        bias.iter()
            .zip(weights)
            .map(|(&b, row)| b + row.iter().zip(h).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }

    /// Class distribution for a token sequence.
    pub fn predict_tokens(&self, tokens: &[String]) -> Result<PredictionDistribution> {
        if tokens.is_empty() {
            return Ok(PredictionDistribution::uniform(self.b_class.len()));
        }
        let features = feature_indices(tokens, &self.vocab);
        let h = self.hidden(&features);
        PredictionDistribution::new(softmax(&Self::head(&self.w_class, &self.b_class, &h)))
    }

    /// Discriminator distribution over labeling functions.
    pub fn predict_lf(&self, tokens: &[String]) -> Result<PredictionDistribution> {
        if tokens.is_empty() {
            return Ok(PredictionDistribution::uniform(self.b_disc.len()));
        }
        let features = feature_indices(tokens, &self.vocab);
        let h = self.hidden(&features);
        PredictionDistribution::new(softmax(&Self::head(&self.w_disc, &self.b_disc, &h)))
    }

    /// Argmax classification accuracy against the weak labels.
    pub fn class_accuracy(&self, corpus: &Corpus) -> f64 {
        let mut correct = 0usize;
        for instance in &corpus.instances {
            if let Ok(d) = self.predict_tokens(&instance.tokens) {
                if d.argmax() == instance.weak_label {
                    correct += 1;
                }
            }
        }
        correct as f64 / corpus.num_instances().max(1) as f64
    }

    /// Fraction of instances whose discriminator argmax is one of the
    /// instance's matching labeling functions.
    pub fn disc_accuracy(&self, corpus: &Corpus) -> f64 {
        let mut correct = 0usize;
        for instance in &corpus.instances {
            if let Ok(d) = self.predict_lf(&instance.tokens) {
                if instance.lf_matches.contains(&d.argmax()) {
                    correct += 1;
                }
            }
        }
        correct as f64 / corpus.num_instances().max(1) as f64
    }

    /// Mean classification NLL over the corpus weak labels.
    pub fn mean_class_nll(&self, corpus: &Corpus) -> f64 {
        let mut total = 0.0;
        for instance in &corpus.instances {
            let features = feature_indices(&instance.tokens, &self.vocab);
            let h = self.hidden(&features);
            let probs = softmax(&Self::head(&self.w_class, &self.b_class, &h));
            total += -probs[instance.weak_label].max(f64::MIN_POSITIVE).ln();
        }
        total / corpus.num_instances().max(1) as f64
    }
}

impl PredictionOracle for KnowManModel {
    fn predict(&self, tokens: &[String]) -> Result<PredictionDistribution> {
        self.predict_tokens(tokens)
    }

    fn num_classes(&self) -> usize {
        self.b_class.len()
    }
}

struct TaskGrads {
    w_extract: Vec<Vec<f64>>,
    b_extract: Vec<f64>,
    w_class: Vec<Vec<f64>>,
    b_class: Vec<f64>,
}

struct DiscGrads {
    w_disc: Vec<Vec<f64>>,
    b_disc: Vec<f64>,
}

/// Mean classification NLL minus lambda times the mean discriminator NLL,
/// the scalar whose gradient the task step follows (the reversal branch
/// enters with factor -lambda).
fn task_loss(model: &KnowManModel, batch: &KnowManBatch, lambda: f64) -> f64 {
    let mut total = 0.0;
    for sample in batch {
        let h = model.hidden(&sample.features);
        let pc = softmax(&KnowManModel::head(&model.w_class, &model.b_class, &h));
        total += -pc[sample.class].max(f64::MIN_POSITIVE).ln();
        if lambda != 0.0 {
            let pd = softmax(&KnowManModel::head(&model.w_disc, &model.b_disc, &h));
            total -= lambda * -pd[sample.lf_target].max(f64::MIN_POSITIVE).ln();
        }
    }
    total / batch.len() as f64
}

/// Mean discriminator NLL, the scalar the discriminator step minimizes.
fn disc_loss(model: &KnowManModel, batch: &KnowManBatch) -> f64 {
    let mut total = 0.0;
    for sample in batch {
        let h = model.hidden(&sample.features);
        let pd = softmax(&KnowManModel::head(&model.w_disc, &model.b_disc, &h));
        total += -pd[sample.lf_target].max(f64::MIN_POSITIVE).ln();
    }
    total / batch.len() as f64
}

/// Analytic gradients of [`task_loss`] with respect to the extractor and
/// classifier parameters. With `lambda == 0` the discriminator branch is
/// skipped entirely, so it contributes exactly zero.
fn task_grads(model: &KnowManModel, batch: &KnowManBatch, lambda: f64) -> TaskGrads {
    let hidden = model.hidden_size();
    let v = model.w_extract.first().map_or(0, Vec::len);
    let k = model.b_class.len();
    let mut grads = TaskGrads {
        w_extract: vec![vec![0.0; v]; hidden],
        b_extract: vec![0.0; hidden],
        w_class: vec![vec![0.0; hidden]; k],
        b_class: vec![0.0; k],
    };
    let scale = 1.0 / batch.len() as f64;

    for sample in batch {
        let h = model.hidden(&sample.features);
        let pc = softmax(&KnowManModel::head(&model.w_class, &model.b_class, &h));

        // d(mean NLL)/d(class logits)
        let mut gc = pc;
        gc[sample.class] -= 1.0;

        let mut dh = vec![0.0; hidden];
        for (c, &g) in gc.iter().enumerate() {
            grads.b_class[c] += scale * g;
            for (j, &hj) in h.iter().enumerate() {
                grads.w_class[c][j] += scale * g * hj;
                dh[j] += g * model.w_class[c][j];
            }
        }
        if lambda != 0.0 {
            let pd = softmax(&KnowManModel::head(&model.w_disc, &model.b_disc, &h));
            let mut gd = pd;
            gd[sample.lf_target] -= 1.0;
            // reversal: -lambda times the discriminator gradient into h
            for (l, &g) in gd.iter().enumerate() {
                for (d, &w) in dh.iter_mut().zip(&model.w_disc[l]) {
                    *d -= lambda * g * w;
                }
            }
        }

        // back through tanh
        for j in 0..hidden {
            let dpre = scale * dh[j] * (1.0 - h[j] * h[j]);
            grads.b_extract[j] += dpre;
            for &f in &sample.features {
                grads.w_extract[j][f] += dpre;
            }
        }
    }

    grads
}

/// Analytic gradients of [`disc_loss`] with respect to the discriminator
/// parameters only; the extractor is frozen during this step.
fn disc_grads(model: &KnowManModel, batch: &KnowManBatch) -> DiscGrads {
    let hidden = model.hidden_size();
    let j_lfs = model.b_disc.len();
    let mut grads = DiscGrads {
        w_disc: vec![vec![0.0; hidden]; j_lfs],
        b_disc: vec![0.0; j_lfs],
    };
    let scale = 1.0 / batch.len() as f64;

    for sample in batch {
        let h = model.hidden(&sample.features);
        let pd = softmax(&KnowManModel::head(&model.w_disc, &model.b_disc, &h));
        let mut gd = pd;
        gd[sample.lf_target] -= 1.0;
        for (l, &g) in gd.iter().enumerate() {
            grads.b_disc[l] += scale * g;
            for (jh, &hj) in h.iter().enumerate() {
                grads.w_disc[l][jh] += scale * g * hj;
            }
        }
    }

    grads
}

/// Trains the adversarial model. Fully deterministic for a given config:
/// weight init, shuffle order and per-visit LF target sampling each draw
/// from their own seeded stream.
pub fn train_knowman(corpus: &Corpus, config: &TrainConfig) -> Result<KnowManModel> {
    train_impl(corpus, config, true)
}

/// Same training loop with the reversal branch compiled out, regardless of
/// lambda. Exists to verify the lambda = 0 equivalence; not for production
/// use.
pub fn train_knowman_reversal_disabled(
    corpus: &Corpus,
    config: &TrainConfig,
) -> Result<KnowManModel> {
    train_impl(corpus, config, false)
}

fn train_impl(corpus: &Corpus, config: &TrainConfig, reversal: bool) -> Result<KnowManModel> {
    config.validate()?;
    let n = corpus.num_instances();
    if n == 0 {
        return Err(Error::Train("no usable training instances".into()));
    }
    let j_lfs = corpus.meta.num_lfs();
    if j_lfs < 2 {
        eprintln!(
            "warning: {j_lfs} labeling function(s); the discriminator task is degenerate"
        );
    }

    let mut model = init_model(corpus, config);
    let features: Vec<Vec<usize>> = corpus
        .instances
        .iter()
        .map(|i| feature_indices(&i.tokens, &corpus.vocabulary))
        .collect();

    let mut shuffle_rng = rng::stream(config.seed, "shuffle");
    let mut lf_rng = rng::stream(config.seed, "lf-sample");
    let mut order: Vec<usize> = (0..n).collect();
    let lambda = if reversal { config.lambda } else { 0.0 };

    for _ in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(config.batch_size) {
            // one LF target per instance per visit
            let batch: Vec<KnowManSample> = chunk
                .iter()
                .map(|&i| {
                    let matches = &corpus.instances[i].lf_matches;
                    let lf_target = matches[lf_rng.gen_range(0..matches.len())];
                    KnowManSample {
                        features: features[i].clone(),
                        class: corpus.instances[i].weak_label,
                        lf_target,
                    }
                })
                .collect();

            // discriminator step: C and F frozen
            let dg = disc_grads(&model, &batch);
            apply(&mut model.w_disc, &mut model.b_disc, &dg.w_disc, &dg.b_disc, config.lr_disc);

            // task step: D frozen
            let tg = task_grads(&model, &batch, lambda);
            apply(
                &mut model.w_extract,
                &mut model.b_extract,
                &tg.w_extract,
                &tg.b_extract,
                config.lr,
            );
            apply(&mut model.w_class, &mut model.b_class, &tg.w_class, &tg.b_class, config.lr);
        }
    }

    Ok(model)
}

fn init_model(corpus: &Corpus, config: &TrainConfig) -> KnowManModel {
    let v = corpus.vocabulary.len();
    let k = corpus.meta.num_classes();
    let j_lfs = corpus.meta.num_lfs();
    let h = config.hidden;
    let mut init_rng = rng::stream(config.seed, "init");
    KnowManModel {
        w_extract: init_matrix(&mut init_rng, h, v, v),
        b_extract: vec![0.0; h],
        w_class: init_matrix(&mut init_rng, k, h, h),
        b_class: vec![0.0; k],
        w_disc: init_matrix(&mut init_rng, j_lfs, h, h),
        b_disc: vec![0.0; j_lfs],
        lambda: config.lambda,
        vocab: corpus.vocabulary.clone(),
    }
}

fn apply(
    weights: &mut [Vec<f64>],
    bias: &mut [f64],
    grad_w: &[Vec<f64>],
    grad_b: &[f64],
    lr: f64,
) {
    for (row, grow) in weights.iter_mut().zip(grad_w) {
        for (w, g) in row.iter_mut().zip(grow) {
            *w -= lr * g;
        }
    }
    for (b, g) in bias.iter_mut().zip(grad_b) {
        *b -= lr * g;
    }
}

/// Compares the analytic training gradients to central finite differences
/// on a handful of randomly chosen parameters per tensor and returns the
/// maximum relative error observed.
///
/// The task-step gradient (extractor and classifier) is checked against the
/// scalar it follows, including the reversal branch; the discriminator
/// gradient is checked against its own NLL.
pub fn gradient_check(model: &KnowManModel, batch: &KnowManBatch, seed: u64) -> f64 {
    const STEP: f64 = 1e-5;
    const PER_TENSOR: usize = 5;
    let lambda = model.lambda;
    let mut pick_rng = rng::stream(seed, "grad-check");
    let mut worst = 0.0f64;

    let tg = task_grads(model, batch, lambda);
    let dg = disc_grads(model, batch);

    let mut check = |analytic: f64, perturb: &mut dyn FnMut(&mut KnowManModel, f64), disc: bool| {
        let mut plus = model.clone();
        perturb(&mut plus, STEP);
        let mut minus = model.clone();
        perturb(&mut minus, -STEP);
        let (fp, fm) = if disc {
            (disc_loss(&plus, batch), disc_loss(&minus, batch))
        } else {
            (task_loss(&plus, batch, lambda), task_loss(&minus, batch, lambda))
        };
        let numeric = (fp - fm) / (2.0 * STEP);
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic - numeric).abs() / denom);
    };

    let hidden = model.hidden_size();
    let v = model.w_extract.first().map_or(0, Vec::len);
    let k = model.b_class.len();
    let j_lfs = model.b_disc.len();

    for _ in 0..PER_TENSOR {
        let (r, c) = (pick_rng.gen_range(0..hidden), pick_rng.gen_range(0..v));
        check(tg.w_extract[r][c], &mut |m, eps| m.w_extract[r][c] += eps, false);

        let r = pick_rng.gen_range(0..hidden);
        check(tg.b_extract[r], &mut |m, eps| m.b_extract[r] += eps, false);

        let (r, c) = (pick_rng.gen_range(0..k), pick_rng.gen_range(0..hidden));
        check(tg.w_class[r][c], &mut |m, eps| m.w_class[r][c] += eps, false);

        let r = pick_rng.gen_range(0..k);
        check(tg.b_class[r], &mut |m, eps| m.b_class[r] += eps, false);

        let (r, c) = (pick_rng.gen_range(0..j_lfs), pick_rng.gen_range(0..hidden));
        check(dg.w_disc[r][c], &mut |m, eps| m.w_disc[r][c] += eps, true);

        let r = pick_rng.gen_range(0..j_lfs);
        check(dg.b_disc[r], &mut |m, eps| m.b_disc[r] += eps, true);
    }

    worst
}
