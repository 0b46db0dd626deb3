//! Weakly labeled corpora: loading, validation, filtering and co-occurrence
//! counting.
//!
//! A corpus is a set of instances, each carrying its surface-form tokens, a
//! weak class label and the ids of the labeling functions that matched it.
//! Features are distinct surface-form tokens (exact string match); all counts
//! are instance-level binary presence.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One weakly labeled instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub tokens: Vec<String>,
    /// Weak class label, `0..K`.
    pub weak_label: usize,
    /// Ids of the labeling functions that matched, `0..J`, strictly
    /// increasing (deduplicated and sorted at load time).
    pub lf_matches: Vec<usize>,
}

/// A labeling function: a name and the single class it votes for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelingFunction {
    pub name: String,
    pub class: usize,
}

/// Class and labeling-function metadata for a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusMeta {
    #[serde(rename = "classes")]
    pub class_names: Vec<String>,
    pub lfs: Vec<LabelingFunction>,
}

impl CorpusMeta {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn num_lfs(&self) -> usize {
        self.lfs.len()
    }

    fn validate(&self) -> Result<()> {
        if self.class_names.is_empty() {
            return Err(Error::Config("metadata declares zero classes".into()));
        }
        for (j, lf) in self.lfs.iter().enumerate() {
            if lf.class >= self.num_classes() {
                return Err(Error::Config(format!(
                    "labeling function {} ({:?}) votes for class {} but only {} classes exist",
                    j,
                    lf.name,
                    lf.class,
                    self.num_classes()
                )));
            }
        }
        Ok(())
    }
}

/// Bijection between feature surface forms and dense feature indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary over the distinct tokens of `instances`, in first
    /// occurrence order.
    pub fn from_instances<'a>(instances: impl IntoIterator<Item = &'a Instance>) -> Self {
        let mut vocab = Vocabulary::default();
        for instance in instances {
            for token in &instance.tokens {
                vocab.intern(token);
            }
        }
        vocab
    }

    fn intern(&mut self, term: &str) -> usize {
        if let Some(&idx) = self.index.get(term) {
            return idx;
        }
        let idx = self.terms.len();
        self.terms.push(term.to_owned());
        self.index.insert(term.to_owned(), idx);
        idx
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn term(&self, index: usize) -> &str {
        &self.terms[index]
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    /// Content digest, used to cross-check that a model or matrix file was
    /// built against the same vocabulary.
    pub fn sha256(&self) -> String {
        let mut hasher = Sha256::new();
        for term in &self.terms {
            hasher.update((term.len() as u64).to_le_bytes());
            hasher.update(term.as_bytes());
        }
        hex(&hasher.finalize())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// A validated weakly labeled corpus.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub meta: CorpusMeta,
    pub instances: Vec<Instance>,
    pub vocabulary: Vocabulary,
}

/// Outcome of [`filter_unmatched`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterStats {
    pub original_size: usize,
    pub filtered_size: usize,
    pub retained_fraction: f64,
}

/// Instance-level co-occurrence counts and their marginals.
///
/// The class table lives on the sample space of instances (grand total
/// `t_class` = N); the labeling-function table lives on the sample space of
/// (instance, matching LF) events (grand total `t_lf`), so an instance
/// matched by two LFs contributes two events. Each table carries its own
/// feature marginal: the two differ whenever instances have multiple
/// matches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountTables {
    /// V x K: instances with class `c` containing feature `f`.
    pub n_fc: Vec<Vec<u64>>,
    /// V x J: instances matched by LF `l` containing feature `f`.
    pub n_fl: Vec<Vec<u64>>,
    /// V: instances containing `f` (row sums of `n_fc`).
    pub n_f_class: Vec<u64>,
    /// V: (instance, matching LF) events whose instance contains `f`
    /// (row sums of `n_fl`).
    pub n_f_lf: Vec<u64>,
    /// K: instances per class.
    pub n_class: Vec<u64>,
    /// J: instances matched per LF.
    pub n_lf: Vec<u64>,
    /// Grand total of the class table (= N).
    pub t_class: u64,
    /// Grand total of the LF table (= total match events).
    pub t_lf: u64,
}

#[derive(Deserialize)]
struct RawInstance {
    id: String,
    tokens: Vec<String>,
    label: usize,
    lf_matches: Vec<usize>,
}

/// Loads and validates a corpus from a metadata JSON file and a JSON Lines
/// instance file.
///
/// Tokens are taken exactly as they appear; no normalization is applied.
pub fn load_corpus(meta_path: &Path, data_path: &Path) -> Result<Corpus> {
    let meta_file = File::open(meta_path).map_err(|e| Error::io(meta_path.display().to_string(), e))?;
    let meta: CorpusMeta = serde_json::from_reader(BufReader::new(meta_file))
        .map_err(|e| Error::malformed(meta_path.display().to_string(), e.to_string()))?;
    meta.validate()?;

    let data_file = File::open(data_path).map_err(|e| Error::io(data_path.display().to_string(), e))?;
    let reader = BufReader::new(data_file);

    let mut instances = Vec::new();
    let mut seen_ids = HashSet::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(data_path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let location = format!("{}:{}", data_path.display(), line_no + 1);
        let raw: RawInstance = serde_json::from_str(&line)
            .map_err(|e| Error::malformed(&location, e.to_string()))?;
        let instance = validate_instance(raw, &meta, &location)?;
        if !seen_ids.insert(instance.id.clone()) {
            return Err(Error::DuplicateId { id: instance.id });
        }
        instances.push(instance);
    }

    let vocabulary = Vocabulary::from_instances(&instances);
    Ok(Corpus {
        meta,
        instances,
        vocabulary,
    })
}

fn validate_instance(raw: RawInstance, meta: &CorpusMeta, location: &str) -> Result<Instance> {
    if raw.label >= meta.num_classes() {
        return Err(Error::malformed(
            location,
            format!(
                "record {:?}: label {} out of range (K = {})",
                raw.id,
                raw.label,
                meta.num_classes()
            ),
        ));
    }
    for &lf in &raw.lf_matches {
        if lf >= meta.num_lfs() {
            return Err(Error::malformed(
                location,
                format!(
                    "record {:?}: lf_matches contains {} but only {} labeling functions exist",
                    raw.id,
                    lf,
                    meta.num_lfs()
                ),
            ));
        }
    }
    if raw.tokens.is_empty() {
        return Err(Error::malformed(
            location,
            format!("record {:?}: tokens is empty", raw.id),
        ));
    }
    let mut matches = raw.lf_matches;
    matches.sort_unstable();
    matches.dedup();
    Ok(Instance {
        id: raw.id,
        tokens: raw.tokens,
        weak_label: raw.label,
        lf_matches: matches,
    })
}

/// Drops every instance with no labeling-function match and rebuilds the
/// vocabulary over the survivors.
///
/// Errors if nothing survives: downstream scores divide by the corpus size.
pub fn filter_unmatched(corpus: &Corpus) -> Result<(Corpus, FilterStats)> {
    let original_size = corpus.instances.len();
    let survivors: Vec<Instance> = corpus
        .instances
        .iter()
        .filter(|i| !i.lf_matches.is_empty())
        .cloned()
        .collect();
    if survivors.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let stats = FilterStats {
        original_size,
        filtered_size: survivors.len(),
        retained_fraction: survivors.len() as f64 / original_size as f64,
    };
    let vocabulary = Vocabulary::from_instances(&survivors);
    Ok((
        Corpus {
            meta: corpus.meta.clone(),
            instances: survivors,
            vocabulary,
        },
        stats,
    ))
}

impl Corpus {
    pub fn num_instances(&self) -> usize {
        self.instances.len()
    }

    /// Distinct feature indices of an instance, ascending.
    pub fn feature_set(&self, instance: &Instance) -> Vec<usize> {
        let mut features: Vec<usize> = instance
            .tokens
            .iter()
            .filter_map(|t| self.vocabulary.index_of(t))
            .collect();
        features.sort_unstable();
        features.dedup();
        features
    }
}

/// Builds the (feature, class) and (feature, labeling function)
/// co-occurrence tables over a filtered corpus.
///
/// Presence is binary per instance: repeated tokens count once. An instance
/// matched by several LFs contributes one count to each matching LF column.
pub fn count_cooccurrences(corpus: &Corpus) -> CountTables {
    let v = corpus.vocabulary.len();
    let k = corpus.meta.num_classes();
    let j = corpus.meta.num_lfs();

    let mut tables = CountTables {
        n_fc: vec![vec![0; k]; v],
        n_fl: vec![vec![0; j]; v],
        n_f_class: vec![0; v],
        n_f_lf: vec![0; v],
        n_class: vec![0; k],
        n_lf: vec![0; j],
        t_class: 0,
        t_lf: 0,
    };

    for instance in &corpus.instances {
        let features = corpus.feature_set(instance);
        tables.n_class[instance.weak_label] += 1;
        tables.t_class += 1;
        for &lf in &instance.lf_matches {
            tables.n_lf[lf] += 1;
            tables.t_lf += 1;
        }
        for &f in &features {
            tables.n_fc[f][instance.weak_label] += 1;
            tables.n_f_class[f] += 1;
            for &lf in &instance.lf_matches {
                tables.n_fl[f][lf] += 1;
                tables.n_f_lf[f] += 1;
            }
        }
    }

    tables
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    pub(crate) fn write_corpus_files(
        dir: &Path,
        meta: &str,
        lines: &[&str],
    ) -> (std::path::PathBuf, std::path::PathBuf) {
        let meta_path = dir.join("meta.json");
        let data_path = dir.join("instances.jsonl");
        std::fs::write(&meta_path, meta).unwrap();
        let mut f = File::create(&data_path).unwrap();
        for line in lines {
            writeln!(f, "{line}").unwrap();
        }
        (meta_path, data_path)
    }

    const META_2C_1LF: &str =
        r#"{"classes": ["c0", "c1"], "lfs": [{"name": "lf0", "class": 0}]}"#;

    #[test]
    fn loads_minimal_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let (meta, data) = write_corpus_files(
            dir.path(),
            META_2C_1LF,
            &[r#"{"id":"a","tokens":["x","y"],"label":0,"lf_matches":[0]}"#],
        );
        let corpus = load_corpus(&meta, &data).unwrap();
        assert_eq!(corpus.num_instances(), 1);
        assert_eq!(corpus.vocabulary.len(), 2);
    }

    #[test]
    fn rejects_out_of_range_label() {
        let dir = tempfile::tempdir().unwrap();
        let (meta, data) = write_corpus_files(
            dir.path(),
            META_2C_1LF,
            &[r#"{"id":"a","tokens":["x"],"label":5,"lf_matches":[0]}"#],
        );
        let err = load_corpus(&meta, &data).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("\"a\""), "error should cite the record: {msg}");
        assert!(msg.contains("label 5"), "{msg}");
    }

    #[test]
    fn rejects_duplicate_ids() {
        let dir = tempfile::tempdir().unwrap();
        let (meta, data) = write_corpus_files(
            dir.path(),
            META_2C_1LF,
            &[
                r#"{"id":"a","tokens":["x"],"label":0,"lf_matches":[0]}"#,
                r#"{"id":"a","tokens":["y"],"label":1,"lf_matches":[]}"#,
            ],
        );
        assert!(matches!(
            load_corpus(&meta, &data).unwrap_err(),
            Error::DuplicateId { .. }
        ));
    }

    #[test]
    fn ignores_unknown_fields() {
        let dir = tempfile::tempdir().unwrap();
        let (meta, data) = write_corpus_files(
            dir.path(),
            META_2C_1LF,
            &[r#"{"id":"a","tokens":["x"],"label":0,"lf_matches":[0],"extra":42}"#],
        );
        assert!(load_corpus(&meta, &data).is_ok());
    }

    fn toy_corpus(records: &[(&str, &[&str], usize, &[usize])]) -> Corpus {
        let meta = CorpusMeta {
            class_names: vec!["c0".into(), "c1".into()],
            lfs: vec![
                LabelingFunction { name: "lf0".into(), class: 0 },
                LabelingFunction { name: "lf1".into(), class: 1 },
            ],
        };
        let instances: Vec<Instance> = records
            .iter()
            .map(|(id, tokens, label, matches)| Instance {
                id: (*id).into(),
                tokens: tokens.iter().map(|t| (*t).to_string()).collect(),
                weak_label: *label,
                lf_matches: matches.to_vec(),
            })
            .collect();
        let vocabulary = Vocabulary::from_instances(&instances);
        Corpus { meta, instances, vocabulary }
    }

    #[test]
    fn filter_drops_unmatched_and_reports_stats() {
        let matched: &[usize] = &[0];
        let unmatched: &[usize] = &[];
        let mut records: Vec<(String, Vec<&str>, usize, &[usize])> = Vec::new();
        for i in 0..10 {
            records.push((
                format!("i{i}"),
                vec!["x"],
                0,
                if i < 6 { matched } else { unmatched },
            ));
        }
        let refs: Vec<(&str, &[&str], usize, &[usize])> = records
            .iter()
            .map(|(id, t, l, m)| (id.as_str(), t.as_slice(), *l, *m))
            .collect();
        let corpus = toy_corpus(&refs);
        let (filtered, stats) = filter_unmatched(&corpus).unwrap();
        assert_eq!(stats.original_size, 10);
        assert_eq!(stats.filtered_size, 6);
        assert!((stats.retained_fraction - 0.6).abs() < 1e-12);
        assert_eq!(filtered.num_instances(), 6);

        // idempotent
        let (again, stats2) = filter_unmatched(&filtered).unwrap();
        assert_eq!(again.num_instances(), 6);
        assert!((stats2.retained_fraction - 1.0).abs() < 1e-12);
    }

    #[test]
    fn filter_identity_when_all_matched() {
        let corpus = toy_corpus(&[("a", &["x"], 0, &[0]), ("b", &["y"], 1, &[1])]);
        let (filtered, stats) = filter_unmatched(&corpus).unwrap();
        assert_eq!(filtered.num_instances(), 2);
        assert!((stats.retained_fraction - 1.0).abs() < 1e-12);
    }

    #[test]
    fn filter_rejects_empty_result() {
        let corpus = toy_corpus(&[("a", &["x"], 0, &[])]);
        assert!(matches!(filter_unmatched(&corpus), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn counts_use_binary_presence() {
        let corpus = toy_corpus(&[("a", &["x", "x", "y"], 0, &[0])]);
        let t = count_cooccurrences(&corpus);
        let x = corpus.vocabulary.index_of("x").unwrap();
        let y = corpus.vocabulary.index_of("y").unwrap();
        assert_eq!(t.n_fc[x][0], 1);
        assert_eq!(t.n_fc[y][0], 1);
    }

    #[test]
    fn counts_accumulate_across_instances() {
        let corpus = toy_corpus(&[("a", &["x"], 0, &[0]), ("b", &["x"], 1, &[1])]);
        let t = count_cooccurrences(&corpus);
        let x = corpus.vocabulary.index_of("x").unwrap();
        assert_eq!(t.n_fc[x][0], 1);
        assert_eq!(t.n_fc[x][1], 1);
        assert_eq!(t.n_f_class[x], 2);
    }

    #[test]
    fn counts_once_per_matching_lf() {
        let corpus = toy_corpus(&[("a", &["x"], 0, &[0, 1])]);
        let t = count_cooccurrences(&corpus);
        let x = corpus.vocabulary.index_of("x").unwrap();
        assert_eq!(t.n_fl[x][0], 1);
        assert_eq!(t.n_fl[x][1], 1);
        assert_eq!(t.n_f_lf[x], 2);
        assert_eq!(t.t_lf, 2);
        assert_eq!(t.t_class, 1);
    }

    #[test]
    fn marginals_are_consistent() {
        let corpus = toy_corpus(&[
            ("a", &["x", "y"], 0, &[0]),
            ("b", &["y", "z"], 1, &[0, 1]),
            ("c", &["x"], 1, &[1]),
        ]);
        let t = count_cooccurrences(&corpus);
        for f in 0..corpus.vocabulary.len() {
            assert_eq!(t.n_fc[f].iter().sum::<u64>(), t.n_f_class[f]);
            assert_eq!(t.n_fl[f].iter().sum::<u64>(), t.n_f_lf[f]);
        }
        assert_eq!(t.n_class.iter().sum::<u64>(), t.t_class);
        assert_eq!(t.n_lf.iter().sum::<u64>(), t.t_lf);
    }

    #[test]
    fn duplication_doubles_all_counts() {
        let corpus = toy_corpus(&[("a", &["x", "y"], 0, &[0]), ("b", &["y"], 1, &[0, 1])]);
        let t1 = count_cooccurrences(&corpus);

        let mut doubled = corpus.clone();
        for inst in corpus.instances.iter() {
            let mut copy = inst.clone();
            copy.id = format!("{}-dup", copy.id);
            doubled.instances.push(copy);
        }
        doubled.vocabulary = Vocabulary::from_instances(&doubled.instances);
        let t2 = count_cooccurrences(&doubled);

        for f in 0..corpus.vocabulary.len() {
            for c in 0..2 {
                assert_eq!(t2.n_fc[f][c], 2 * t1.n_fc[f][c]);
            }
            for l in 0..2 {
                assert_eq!(t2.n_fl[f][l], 2 * t1.n_fl[f][l]);
            }
        }
        assert_eq!(t2.t_class, 2 * t1.t_class);
        assert_eq!(t2.t_lf, 2 * t1.t_lf);
    }

    #[test]
    fn counting_is_order_invariant() {
        let corpus = toy_corpus(&[
            ("a", &["x", "y"], 0, &[0]),
            ("b", &["y"], 1, &[1]),
            ("c", &["z", "x"], 0, &[0, 1]),
        ]);
        let mut reversed = corpus.clone();
        reversed.instances.reverse();
        let t1 = count_cooccurrences(&corpus);
        let t2 = count_cooccurrences(&reversed);
        assert_eq!(t1, t2);
    }
}
