//! Measures how much a weakly supervised model generalizes away from its
//! labeling functions.
//!
//! The score multiplies two per-feature signals over a corpus: occlusion
//! explainability (how much removing a feature moves the prediction, by KL
//! divergence) and association (whether the feature co-occurs more with the
//! instance's class or with its labeling functions, by chi-square, PPMI or
//! NPMI). Desk-scale trainable models are included so the whole pipeline
//! runs without external ML frameworks: a majority-vote bag-of-words
//! softmax baseline and an adversarial gradient-reversal network whose
//! lambda hyperparameter controls the generalization pressure.

pub mod association;
pub mod corpus;
pub mod error;
pub mod explainability;
pub mod models;
pub mod rng;
pub mod score;
pub mod synthetic;

pub use association::{
    association_score, build_chi2_matrices, build_matrices, build_npmi_matrices,
    build_ppmi_matrices, chi_square_cell, AssociationMatrices, AssociationMethod, MatricesFile,
};
pub use corpus::{
    count_cooccurrences, filter_unmatched, load_corpus, Corpus, CorpusMeta, CountTables,
    FilterStats, Instance, LabelingFunction, Vocabulary,
};
pub use error::{Error, Result};
pub use explainability::{
    explainability_score, instance_explainability, kl_divergence, normalize_map, occlude,
    ExplainabilityMap, PredictionDistribution,
};
pub use models::{
    gradient_check, majority_vote_label, train_bow_softmax, train_knowman,
    train_knowman_reversal_disabled, BowSoftmaxModel, Checkpoint, KnowManModel, PredictionOracle,
    TiePolicy, TrainConfig,
};
pub use score::{
    lambda_sweep, minmax_scale, shift_analysis, spearman_rank_correlation, xpasc, xpasc_scaled,
    ShiftKind, ShiftReport, SweepReport, XpascReport,
};
