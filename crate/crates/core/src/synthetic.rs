//! Deterministic synthetic corpus generators for experiments and tests.

use rand::Rng;

use crate::corpus::{Corpus, CorpusMeta, Instance, LabelingFunction, Vocabulary};
use crate::rng;

/// Knobs for [`planted_correlation_corpus`].
#[derive(Debug, Clone)]
pub struct PlantedConfig {
    pub num_instances: usize,
    pub num_classes: usize,
    /// Labeling functions per class.
    pub lfs_per_class: usize,
    /// Distinct class-identifying token types per class.
    pub class_tokens: usize,
    /// Probability that each class token of the instance's own class is
    /// present.
    pub class_token_rate: f64,
    /// Probability that a class token of another class leaks in.
    pub cross_class_rate: f64,
    /// Probability that the keyword of a random non-matching labeling
    /// function appears, so no keyword is a perfect label predictor.
    pub distractor_rate: f64,
    /// Noise tokens appended to every instance, drawn from a shared pool.
    pub noise_tokens: usize,
    pub noise_pool: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            num_instances: 600,
            num_classes: 2,
            lfs_per_class: 2,
            class_tokens: 3,
            class_token_rate: 0.6,
            cross_class_rate: 0.1,
            distractor_rate: 0.2,
            noise_tokens: 2,
            noise_pool: 8,
            seed: 0,
        }
    }
}

/// Builds a corpus where labeling-function-identifying tokens are distinct
/// from class-identifying tokens.
///
/// Every instance is matched by exactly one labeling function and carries
/// that LF's keyword token, a perfect class predictor. The class tokens are
/// individually weak: each is present at `class_token_rate` (with the
/// dropout skewed across the class's LFs so class tokens end up strictly
/// class-dominant rather than tied with the LF association) and leaks into
/// the other classes at `cross_class_rate`. A model free to use the keyword
/// leans on it almost exclusively; a model denied the keyword can still
/// classify by pooling the weak class tokens.
pub fn planted_correlation_corpus(config: &PlantedConfig) -> Corpus {
    let k = config.num_classes;
    let j = k * config.lfs_per_class;
    let meta = CorpusMeta {
        class_names: (0..k).map(|c| format!("class{c}")).collect(),
        lfs: (0..j)
            .map(|l| LabelingFunction {
                name: format!("lf{l}"),
                class: l / config.lfs_per_class,
            })
            .collect(),
    };

    let mut gen = rng::stream(config.seed, "planted-corpus");
    let mut instances = Vec::with_capacity(config.num_instances);
    for i in 0..config.num_instances {
        let class = i % k;
        let lf_slot = gen.gen_range(0..config.lfs_per_class);
        let lf = class * config.lfs_per_class + lf_slot;

        let mut tokens = vec![format!("kw{lf}")];
        if j > 1 && config.distractor_rate > 0.0 && gen.gen_bool(config.distractor_rate) {
            let other = (lf + gen.gen_range(1..j)) % j;
            tokens.push(format!("kw{other}"));
        }
        // skew the class-token dropout by LF slot so the class association
        // strictly beats every single-LF association
        let rate = config.class_token_rate - 0.25 * lf_slot as f64 / config.lfs_per_class as f64;
        for t in 0..config.class_tokens {
            for other in 0..k {
                let p = if other == class { rate.clamp(0.05, 1.0) } else { config.cross_class_rate };
                if p > 0.0 && gen.gen_bool(p) {
                    tokens.push(format!("cls{other}t{t}"));
                }
            }
        }
        for _ in 0..config.noise_tokens {
            tokens.push(format!("w{}", gen.gen_range(0..config.noise_pool)));
        }

        instances.push(Instance {
            id: format!("synth{i}"),
            tokens,
            weak_label: class,
            lf_matches: vec![lf],
        });
    }

    let vocabulary = Vocabulary::from_instances(&instances);
    Corpus { meta, instances, vocabulary }
}

/// A uniformly random small corpus for property tests: every instance has
/// at least one token and one labeling-function match.
pub fn random_small_corpus(
    seed: u64,
    max_instances: usize,
    max_features: usize,
    num_classes: usize,
    num_lfs: usize,
) -> Corpus {
    let mut gen = rng::stream(seed, "random-corpus");
    let meta = CorpusMeta {
        class_names: (0..num_classes).map(|c| format!("c{c}")).collect(),
        lfs: (0..num_lfs)
            .map(|l| LabelingFunction {
                name: format!("lf{l}"),
                class: l % num_classes,
            })
            .collect(),
    };
    let n = gen.gen_range(1..=max_instances);
    let mut instances = Vec::with_capacity(n);
    for i in 0..n {
        let num_tokens = gen.gen_range(1..=max_features);
        let tokens = (0..num_tokens)
            .map(|_| format!("f{}", gen.gen_range(0..max_features)))
            .collect();
        let mut lf_matches: Vec<usize> = (0..num_lfs).filter(|_| gen.gen_bool(0.5)).collect();
        if lf_matches.is_empty() {
            lf_matches.push(gen.gen_range(0..num_lfs));
        }
        instances.push(Instance {
            id: format!("r{i}"),
            tokens,
            weak_label: gen.gen_range(0..num_classes),
            lf_matches,
        });
    }
    let vocabulary = Vocabulary::from_instances(&instances);
    Corpus { meta, instances, vocabulary }
}

/// Duplicates every instance once (ids suffixed), rebuilding the
/// vocabulary. Used by the scaling-law tests.
pub fn duplicate_corpus(corpus: &Corpus) -> Corpus {
    let mut instances = corpus.instances.clone();
    for instance in &corpus.instances {
        let mut copy = instance.clone();
        copy.id = format!("{}+dup", copy.id);
        instances.push(copy);
    }
    let vocabulary = Vocabulary::from_instances(&instances);
    Corpus {
        meta: corpus.meta.clone(),
        instances,
        vocabulary,
    }
}
