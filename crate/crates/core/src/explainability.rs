//! Occlusion-based feature importance.
//!
//! The importance of a feature for an instance is the KL divergence between
//! the model prediction on the full instance and the prediction on the
//! instance with every occurrence of that feature removed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Instance};
use crate::error::{Error, Result};
use crate::models::PredictionOracle;

/// Floor applied to every probability at construction, so KL terms are
/// always finite.
pub const PROB_FLOOR: f64 = 1e-12;

/// A probability vector over the K classes. Entries are floored at
/// [`PROB_FLOOR`] and renormalized, so they are strictly positive and sum
/// to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionDistribution {
    probs: Vec<f64>,
}

impl PredictionDistribution {
    /// Builds a distribution from non-negative weights (not necessarily
    /// normalized).
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Dimension("empty probability vector".into()));
        }
        if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::Dimension(
                "probability weights must be finite and non-negative".into(),
            ));
        }
        let floored: Vec<f64> = weights.iter().map(|&w| w.max(PROB_FLOOR)).collect();
        let total: f64 = floored.iter().sum();
        // re-floor after normalization; the sum stays within 1e-9 of 1
        Ok(PredictionDistribution {
            probs: floored.into_iter().map(|w| (w / total).max(PROB_FLOOR)).collect(),
        })
    }

    pub fn uniform(k: usize) -> Self {
        PredictionDistribution {
            probs: vec![1.0 / k as f64; k],
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Index of the most probable class.
    pub fn argmax(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

/// `D_KL(P || Q) = sum_x P(x) ln(P(x) / Q(x))`. Terms with `P(x) = 0`
/// contribute nothing. Non-negative; zero iff `P = Q`.
pub fn kl_divergence(p: &PredictionDistribution, q: &PredictionDistribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension(format!(
            "KL divergence over distributions of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    let mut total = 0.0;
    for (&pi, &qi) in p.probs.iter().zip(&q.probs) {
        if pi > 0.0 {
            total += pi * (pi / qi).ln();
        }
    }
    // rounding can leave a tiny negative residue at P ~= Q
    Ok(total.max(0.0))
}

/// Removes every token position whose surface form equals `feature`
/// (feature-type occlusion). Id, label and matches are unchanged. The
/// result may have zero tokens; the oracle contract maps empty input to the
/// uniform distribution.
pub fn occlude(instance: &Instance, feature: &str) -> Instance {
    Instance {
        id: instance.id.clone(),
        tokens: instance
            .tokens
            .iter()
            .filter(|t| t.as_str() != feature)
            .cloned()
            .collect(),
        weak_label: instance.weak_label,
        lf_matches: instance.lf_matches.clone(),
    }
}

/// Occlusion importance of one feature: KL between the full-instance
/// prediction and the occluded prediction.
pub fn explainability_score<O: PredictionOracle + ?Sized>(
    oracle: &O,
    instance: &Instance,
    feature: &str,
) -> Result<f64> {
    let full = oracle.predict(&instance.tokens)?;
    let occluded = occlude(instance, feature);
    let without = oracle.predict(&occluded.tokens)?;
    kl_divergence(&full, &without)
}

/// Per-feature occlusion scores for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainabilityMap {
    pub instance_id: String,
    /// Feature index -> S_xp, one entry per distinct feature type.
    pub entries: BTreeMap<usize, f64>,
    pub normalized: bool,
}

impl ExplainabilityMap {
    /// The feature with the highest score; ties break toward the lowest
    /// feature index. `None` on an empty map.
    pub fn top_feature(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (&f, &s) in &self.entries {
            match best {
                Some((_, bs)) if s <= bs => {}
                _ => best = Some((f, s)),
            }
        }
        best.map(|(f, _)| f)
    }
}

/// Scores every distinct feature of an instance: one oracle call for the
/// full instance plus one per feature type.
pub fn instance_explainability<O: PredictionOracle + ?Sized>(
    oracle: &O,
    corpus: &Corpus,
    instance: &Instance,
) -> Result<ExplainabilityMap> {
    let full = oracle.predict(&instance.tokens)?;
    let mut entries = BTreeMap::new();
    for f in corpus.feature_set(instance) {
        let occluded = occlude(instance, corpus.vocabulary.term(f));
        let without = oracle.predict(&occluded.tokens)?;
        entries.insert(f, kl_divergence(&full, &without)?);
    }
    Ok(ExplainabilityMap {
        instance_id: instance.id.clone(),
        entries,
        normalized: false,
    })
}

/// Divides every entry by the instance maximum. All-zero maps pass through
/// unchanged; either way the normalized flag is set.
pub fn normalize_map(mut map: ExplainabilityMap) -> ExplainabilityMap {
    let max = map.entries.values().cloned().fold(0.0f64, f64::max);
    if max > 0.0 {
        for value in map.entries.values_mut() {
            *value /= max;
        }
    }
    map.normalized = true;
    map
}

/// JSON Lines record for an [`ExplainabilityMap`], keyed by surface form.
#[derive(Debug, Serialize, Deserialize)]
pub struct ExplainabilityRecord {
    pub id: String,
    pub scores: BTreeMap<String, f64>,
    pub normalized: bool,
}

impl ExplainabilityRecord {
    pub fn new(map: &ExplainabilityMap, corpus: &Corpus) -> Self {
        ExplainabilityRecord {
            id: map.instance_id.clone(),
            scores: map
                .entries
                .iter()
                .map(|(&f, &s)| (corpus.vocabulary.term(f).to_owned(), s))
                .collect(),
            normalized: map.normalized,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dist(v: &[f64]) -> PredictionDistribution {
        PredictionDistribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn distribution_sums_to_one_and_is_floored() {
        let d = dist(&[1.0, 0.0]);
        assert!(d.probs().iter().all(|&p| p >= PROB_FLOOR));
        assert_relative_eq!(d.probs().iter().sum::<f64>(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn kl_identical_is_zero() {
        let p = dist(&[0.3, 0.7]);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn kl_single_nonzero_term() {
        let p = dist(&[1.0, 0.0]);
        let q = dist(&[0.5, 0.5]);
        assert_relative_eq!(kl_divergence(&p, &q).unwrap(), 2f64.ln(), epsilon = 1e-6);
    }

    #[test]
    fn kl_worked_example() {
        let p = dist(&[0.8, 0.2]);
        let q = dist(&[0.6, 0.4]);
        let expected = 0.8 * (0.8f64 / 0.6).ln() + 0.2 * (0.2f64 / 0.4).ln();
        assert_relative_eq!(kl_divergence(&p, &q).unwrap(), expected, epsilon = 1e-12);
        assert_relative_eq!(expected, 0.09151622184943562, epsilon = 1e-10);
    }

    #[test]
    fn kl_is_asymmetric() {
        let p = dist(&[0.9, 0.1]);
        let q = dist(&[0.5, 0.5]);
        let forward = kl_divergence(&p, &q).unwrap();
        let backward = kl_divergence(&q, &p).unwrap();
        assert!((forward - backward).abs() > 1e-3);
    }

    #[test]
    fn kl_rejects_length_mismatch() {
        let p = dist(&[0.5, 0.5]);
        let q = dist(&[0.3, 0.3, 0.4]);
        assert!(kl_divergence(&p, &q).is_err());
    }

    fn instance(tokens: &[&str]) -> Instance {
        Instance {
            id: "i".into(),
            tokens: tokens.iter().map(|t| (*t).to_string()).collect(),
            weak_label: 0,
            lf_matches: vec![0],
        }
    }

    #[test]
    fn occlusion_removes_all_occurrences() {
        let occluded = occlude(&instance(&["a", "b", "a"]), "a");
        assert_eq!(occluded.tokens, vec!["b".to_string()]);
        let occluded = occlude(&instance(&["a", "b"]), "b");
        assert_eq!(occluded.tokens, vec!["a".to_string()]);
    }

    #[test]
    fn occlusion_can_empty_the_instance() {
        let occluded = occlude(&instance(&["a"]), "a");
        assert!(occluded.tokens.is_empty());
    }

    #[test]
    fn occlusion_does_not_mutate_the_input() {
        let original = instance(&["a", "b"]);
        let copy = original.clone();
        let _ = occlude(&original, "a");
        assert_eq!(original, copy);
    }

    #[test]
    fn normalize_map_examples() {
        let mut entries = BTreeMap::new();
        entries.insert(0, 0.4);
        entries.insert(1, 0.2);
        let map = ExplainabilityMap {
            instance_id: "i".into(),
            entries,
            normalized: false,
        };
        let n = normalize_map(map);
        assert_relative_eq!(n.entries[&0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(n.entries[&1], 0.5, epsilon = 1e-12);
        assert!(n.normalized);

        // idempotent on its output
        let again = normalize_map(n.clone());
        assert_eq!(again, n);
    }

    #[test]
    fn normalize_map_all_zero_passes_through() {
        let mut entries = BTreeMap::new();
        entries.insert(0, 0.0);
        entries.insert(1, 0.0);
        let map = ExplainabilityMap {
            instance_id: "i".into(),
            entries: entries.clone(),
            normalized: false,
        };
        let n = normalize_map(map);
        assert_eq!(n.entries, entries);
        assert!(n.normalized);
    }

    #[test]
    fn normalize_single_entry() {
        let mut entries = BTreeMap::new();
        entries.insert(3, 0.7);
        let n = normalize_map(ExplainabilityMap {
            instance_id: "i".into(),
            entries,
            normalized: false,
        });
        assert_relative_eq!(n.entries[&3], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn top_feature_breaks_ties_low() {
        let mut entries = BTreeMap::new();
        entries.insert(2, 0.5);
        entries.insert(5, 0.5);
        entries.insert(7, 0.1);
        let map = ExplainabilityMap {
            instance_id: "i".into(),
            entries,
            normalized: false,
        };
        assert_eq!(map.top_feature(), Some(2));
    }
}
