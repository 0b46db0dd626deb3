//! The acceptance gate: every release criterion as its own test, each
//! printing a single pass/fail line. Numeric criteria are checked against
//! independently coded reference evaluations, not against the library's own
//! implementations.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;

use xpasc_core::association::{
    build_chi2_matrices, build_ppmi_matrices, AssociationMatrices, AssociationMethod,
};
use xpasc_core::corpus::{count_cooccurrences, Corpus};
use xpasc_core::explainability::{kl_divergence, PredictionDistribution};
use xpasc_core::models::{
    gradient_check, train_knowman, train_knowman_reversal_disabled, KnowManSample,
    PredictionOracle, TrainConfig,
};
use xpasc_core::rng;
use xpasc_core::score::{lambda_sweep, shift_analysis, xpasc};
use xpasc_core::synthetic::{
    duplicate_corpus, planted_correlation_corpus, random_small_corpus, PlantedConfig,
};
use xpasc_core::Result as CoreResult;

fn report(name: &str, outcome: std::result::Result<(), String>) {
    match outcome {
        Ok(()) => println!("acceptance {name}: pass"),
        Err(reason) => {
            println!("acceptance {name}: FAIL ({reason})");
            panic!("acceptance {name} failed: {reason}");
        }
    }
}

fn ensure(condition: bool, reason: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if condition {
        Ok(())
    } else {
        Err(reason())
    }
}

// ---------------------------------------------------------------------------
// Criterion: association matrices match a brute-force evaluation.
// ---------------------------------------------------------------------------

/// Reference cell statistics gathered by direct instance enumeration,
/// written without reference to the count-table code.
struct CellStats {
    observed: f64,
    with_feature: f64,
    with_label: f64,
    total: f64,
}

fn class_cell(corpus: &Corpus, feature: &str, class: usize) -> CellStats {
    let mut s = CellStats { observed: 0.0, with_feature: 0.0, with_label: 0.0, total: 0.0 };
    for instance in &corpus.instances {
        let present = instance.tokens.iter().any(|t| t == feature);
        s.total += 1.0;
        if present {
            s.with_feature += 1.0;
        }
        if instance.weak_label == class {
            s.with_label += 1.0;
            if present {
                s.observed += 1.0;
            }
        }
    }
    s
}

fn lf_cell(corpus: &Corpus, feature: &str, lf: usize) -> CellStats {
    let mut s = CellStats { observed: 0.0, with_feature: 0.0, with_label: 0.0, total: 0.0 };
    for instance in &corpus.instances {
        let present = instance.tokens.iter().any(|t| t == feature);
        for &matched in &instance.lf_matches {
            s.total += 1.0;
            if present {
                s.with_feature += 1.0;
            }
            if matched == lf {
                s.with_label += 1.0;
                if present {
                    s.observed += 1.0;
                }
            }
        }
    }
    s
}

fn chi2_ref(s: &CellStats) -> f64 {
    let expected = s.with_label * s.with_feature / s.total;
    if expected <= 0.0 {
        0.0
    } else {
        (s.observed - expected).powi(2) / expected
    }
}

fn ppmi_ref(s: &CellStats) -> f64 {
    if s.observed <= 0.0 {
        return 0.0;
    }
    let joint = s.observed / s.total;
    let independent = (s.with_feature / s.total) * (s.with_label / s.total);
    (joint / independent).ln().max(0.0)
}

#[test]
fn association_oracle_equivalence() {
    let started = Instant::now();
    let outcome = (|| {
        for seed in 0..200u64 {
            let classes = 1 + (seed as usize % 3);
            let lfs = 1 + ((seed as usize / 3) % 3);
            let corpus = random_small_corpus(seed, 10, 6, classes, lfs);
            let counts = count_cooccurrences(&corpus);
            let chi2 = build_chi2_matrices(&counts);
            let ppmi = build_ppmi_matrices(&counts);
            for f in 0..corpus.vocabulary.len() {
                let term = corpus.vocabulary.term(f);
                for c in 0..classes {
                    let s = class_cell(&corpus, term, c);
                    ensure((chi2.class_features[c][f] - chi2_ref(&s)).abs() < 1e-10, || {
                        format!("chi2 C[{c}][{term}] mismatch on corpus {seed}")
                    })?;
                    ensure((ppmi.class_features[c][f] - ppmi_ref(&s)).abs() < 1e-10, || {
                        format!("ppmi C[{c}][{term}] mismatch on corpus {seed}")
                    })?;
                }
                for l in 0..lfs {
                    let s = lf_cell(&corpus, term, l);
                    ensure((chi2.lf_features[l][f] - chi2_ref(&s)).abs() < 1e-10, || {
                        format!("chi2 L[{l}][{term}] mismatch on corpus {seed}")
                    })?;
                    ensure((ppmi.lf_features[l][f] - ppmi_ref(&s)).abs() < 1e-10, || {
                        format!("ppmi L[{l}][{term}] mismatch on corpus {seed}")
                    })?;
                }
            }
        }
        ensure(started.elapsed() < Duration::from_secs(10), || {
            format!("took {:?}, budget 10 s", started.elapsed())
        })
    })();
    report("association matrices match brute-force enumeration on 200 corpora", outcome);
}

// ---------------------------------------------------------------------------
// Criterion: KL divergence properties and worked examples.
// ---------------------------------------------------------------------------

#[test]
fn kl_divergence_properties() {
    let outcome = (|| {
        let mut gen = rng::stream(7, "acceptance-kl");
        for i in 0..1000 {
            let k = gen.gen_range(2..=6);
            let draw = |g: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
                (0..k).map(|_| g.gen_range(0.0..10.0) + 1e-6).collect()
            };
            let p = PredictionDistribution::new(draw(&mut gen)).map_err(|e| e.to_string())?;
            let q = PredictionDistribution::new(draw(&mut gen)).map_err(|e| e.to_string())?;
            let d = kl_divergence(&p, &q).map_err(|e| e.to_string())?;
            ensure(d >= 0.0, || format!("negative divergence {d} on pair {i}"))?;
            let self_d = kl_divergence(&p, &p).map_err(|e| e.to_string())?;
            ensure(self_d.abs() <= 1e-12, || {
                format!("self-divergence {self_d} exceeds 1e-12 on pair {i}")
            })?;
        }

        let dist = |v: &[f64]| PredictionDistribution::new(v.to_vec()).unwrap();
        let examples = [
            (vec![0.3, 0.7], vec![0.3, 0.7], 0.0),
            (vec![1.0, 0.0], vec![0.5, 0.5], std::f64::consts::LN_2),
            (vec![0.8, 0.2], vec![0.6, 0.4], 0.09151622184943562),
        ];
        for (p, q, expected) in examples {
            let d = kl_divergence(&dist(&p), &dist(&q)).map_err(|e| e.to_string())?;
            ensure((d - expected).abs() < 1e-6, || {
                format!("worked example {p:?}||{q:?}: got {d}, expected {expected}")
            })?;
        }
        Ok(())
    })();
    report("KL divergence is non-negative, zero on self, and reproduces the worked examples", outcome);
}

// ---------------------------------------------------------------------------
// Criterion: analytic gradients vs central finite differences.
// ---------------------------------------------------------------------------

#[test]
fn knowman_gradient_check() {
    let started = Instant::now();
    let outcome = (|| {
        let mut worst = 0.0f64;
        let mut saw_nonzero_lambda = false;
        for pair in 0..20u64 {
            let corpus = random_small_corpus(300 + pair, 10, 6, 2, 3);
            let lambda = [0.0, 0.5, 1.5, 4.0][pair as usize % 4];
            if lambda != 0.0 {
                saw_nonzero_lambda = true;
            }
            // epochs 0 yields the freshly initialized model
            let config = TrainConfig {
                lambda,
                epochs: 0,
                hidden: 5,
                seed: pair,
                ..TrainConfig::default()
            };
            let model = train_knowman(&corpus, &config).map_err(|e| e.to_string())?;
            let mut gen = rng::stream(pair, "acceptance-batch");
            let batch: Vec<KnowManSample> = corpus
                .instances
                .iter()
                .take(6)
                .map(|i| {
                    let target = i.lf_matches[gen.gen_range(0..i.lf_matches.len())];
                    KnowManSample {
                        features: corpus
                            .feature_set(i)
                            .into_iter()
                            .collect(),
                        class: i.weak_label,
                        lf_target: target,
                    }
                })
                .collect();
            let err = gradient_check(&model, &batch, pair);
            worst = worst.max(err);
            ensure(err < 1e-4, || {
                format!("pair {pair} (lambda {lambda}): max relative error {err}")
            })?;
        }
        ensure(saw_nonzero_lambda, || "no nonzero-lambda pair exercised".into())?;
        ensure(started.elapsed() < Duration::from_secs(30), || {
            format!("took {:?}, budget 30 s (worst error {worst})", started.elapsed())
        })
    })();
    report("analytic gradients match finite differences on 20 (model, batch) pairs", outcome);
}

// ---------------------------------------------------------------------------
// Criterion: lambda = 0 training equals the reversal-disabled build.
// ---------------------------------------------------------------------------

#[test]
fn lambda_zero_bit_identity() {
    let outcome = (|| {
        for seed in [0u64, 11, 47] {
            let corpus = planted_correlation_corpus(&PlantedConfig {
                num_instances: 60,
                seed,
                ..PlantedConfig::default()
            });
            let config = TrainConfig { lambda: 0.0, epochs: 8, seed, ..TrainConfig::default() };
            let plain = train_knowman(&corpus, &config).map_err(|e| e.to_string())?;
            let disabled =
                train_knowman_reversal_disabled(&corpus, &config).map_err(|e| e.to_string())?;
            ensure(
                plain.w_extract == disabled.w_extract
                    && plain.b_extract == disabled.b_extract
                    && plain.w_class == disabled.w_class
                    && plain.b_class == disabled.b_class,
                || format!("weights differ at seed {seed}"),
            )?;
        }
        Ok(())
    })();
    report("lambda = 0 training is bit-identical to the reversal-disabled build", outcome);
}

// ---------------------------------------------------------------------------
// Criterion: duplication scaling laws of the combined score.
// ---------------------------------------------------------------------------

/// A frozen oracle whose prediction is a pure hash of the token multiset:
/// deterministic, corpus-independent, and not one of the trained models.
struct HashOracle {
    classes: usize,
}

impl PredictionOracle for HashOracle {
    fn predict(&self, tokens: &[String]) -> CoreResult<PredictionDistribution> {
        let mut weights = vec![1.0; self.classes];
        for token in tokens {
            let mut acc = 0u64;
            for b in token.as_bytes() {
                acc = acc.wrapping_mul(131).wrapping_add(u64::from(*b));
            }
            for (c, w) in weights.iter_mut().enumerate() {
                *w += ((acc >> (8 * c)) & 0xff) as f64 / 255.0;
            }
        }
        PredictionDistribution::new(weights)
    }

    fn num_classes(&self) -> usize {
        self.classes
    }
}

#[test]
fn duplication_scaling_laws() {
    let outcome = (|| {
        for seed in 0..20u64 {
            let corpus = random_small_corpus(500 + seed, 8, 5, 2, 2);
            let doubled = duplicate_corpus(&corpus);
            let oracle = HashOracle { classes: 2 };

            let ppmi_base = xpasc(
                &corpus,
                &oracle,
                &build_ppmi_matrices(&count_cooccurrences(&corpus)),
                1.0,
            )
            .map_err(|e| e.to_string())?;
            let ppmi_dup = xpasc(
                &doubled,
                &oracle,
                &build_ppmi_matrices(&count_cooccurrences(&doubled)),
                1.0,
            )
            .map_err(|e| e.to_string())?;
            ensure((ppmi_base.score - ppmi_dup.score).abs() < 1e-10, || {
                format!(
                    "ppmi not invariant on corpus {seed}: {} vs {}",
                    ppmi_base.score, ppmi_dup.score
                )
            })?;

            let chi_base = xpasc(
                &corpus,
                &oracle,
                &build_chi2_matrices(&count_cooccurrences(&corpus)),
                1.0,
            )
            .map_err(|e| e.to_string())?;
            let chi_dup = xpasc(
                &doubled,
                &oracle,
                &build_chi2_matrices(&count_cooccurrences(&doubled)),
                1.0,
            )
            .map_err(|e| e.to_string())?;
            ensure(
                (chi_dup.score - 1.0 - 2.0 * (chi_base.score - 1.0)).abs() < 1e-9,
                || {
                    format!(
                        "chi2 law violated on corpus {seed}: {} vs {}",
                        chi_base.score, chi_dup.score
                    )
                },
            )?;
        }
        Ok(())
    })();
    report("duplication leaves ppmi scores fixed and doubles chi2 deviations on 20 corpora", outcome);
}

// ---------------------------------------------------------------------------
// Criterion: zero association forces the score to exactly 1.
// ---------------------------------------------------------------------------

#[test]
fn zero_association_identity() {
    let outcome = (|| {
        for seed in [1u64, 2, 3] {
            let corpus = random_small_corpus(seed, 8, 5, 2, 2);
            let zeros = AssociationMatrices {
                method: AssociationMethod::Ppmi,
                class_features: vec![vec![0.0; corpus.vocabulary.len()]; 2],
                lf_features: vec![vec![0.0; corpus.vocabulary.len()]; 2],
            };
            for gamma in [0.0, 0.5, 1.0, 2.0] {
                let report = xpasc(&corpus, &HashOracle { classes: 2 }, &zeros, gamma)
                    .map_err(|e| e.to_string())?;
                ensure(report.score == 1.0, || {
                    format!("corpus {seed}, gamma {gamma}: score {} != 1.0", report.score)
                })?;
            }
        }
        Ok(())
    })();
    report("all-zero association matrices yield a score of exactly 1.0", outcome);
}

// ---------------------------------------------------------------------------
// Criterion: mean chi2 score rises with lambda on the planted corpus.
// ---------------------------------------------------------------------------

#[test]
fn lambda_trend_reproduction() {
    let started = Instant::now();
    let outcome = (|| {
        let corpus = planted_correlation_corpus(&PlantedConfig {
            num_instances: 600,
            seed: 8,
            ..PlantedConfig::default()
        });
        let report = lambda_sweep(
            &corpus,
            &[0.0, 0.5, 1.0, 2.0, 4.0],
            &[0, 1, 2, 3, 4],
            &TrainConfig::default(),
            AssociationMethod::Chi2,
            None,
        )
        .map_err(|e| e.to_string())?;
        let rho = report.spearman.ok_or_else(|| "no rank correlation computed".to_string())?;
        ensure(rho >= 0.9, || {
            let mut means = String::new();
            for s in &report.per_lambda {
                let _ = write!(means, " {}:{:?}", s.lambda, s.mean_xpasc);
            }
            format!("spearman rho {rho} < 0.9; per-lambda means{means}")
        })?;
        ensure(started.elapsed() < Duration::from_secs(300), || {
            format!("took {:?}, budget 5 min", started.elapsed())
        })
    })();
    report("per-lambda mean chi2 score has spearman rho >= 0.9 with lambda", outcome);
}

// ---------------------------------------------------------------------------
// Criterion: adversarial training shifts top features toward the class.
// ---------------------------------------------------------------------------

#[test]
fn shift_reproduction() {
    let outcome = (|| {
        let corpus = planted_correlation_corpus(&PlantedConfig {
            num_instances: 200,
            seed: 8,
            ..PlantedConfig::default()
        });
        let matrices = build_chi2_matrices(&count_cooccurrences(&corpus));
        let mut seeds_with_shift = 0;
        for seed in 0..5u64 {
            let blind = train_knowman(&corpus, &TrainConfig { lambda: 0.0, seed, ..TrainConfig::default() })
                .map_err(|e| e.to_string())?;
            let adversarial =
                train_knowman(&corpus, &TrainConfig { lambda: 4.0, seed, ..TrainConfig::default() })
                    .map_err(|e| e.to_string())?;
            let report = shift_analysis(&corpus, &blind, &adversarial, &matrices)
                .map_err(|e| e.to_string())?;
            if report.counts.to_class >= 1 {
                seeds_with_shift += 1;
            }
        }
        ensure(seeds_with_shift >= 3, || {
            format!("to-class shifts on only {seeds_with_shift}/5 seeds")
        })
    })();
    report("lambda 0 vs 4 comparison finds to-class shifts on >= 3 of 5 seeds", outcome);
}

// ---------------------------------------------------------------------------
// Criterion: ingest filtering statistics at reference scale.
// ---------------------------------------------------------------------------

fn xpasc_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_xpasc"))
}

fn write_reference_scale_corpus(dir: &Path) -> (PathBuf, PathBuf) {
    let meta = dir.join("meta.json");
    fs::write(
        &meta,
        r#"{"classes":["a","b"],"lfs":[{"name":"lf0","class":0},{"name":"lf1","class":1}]}"#,
    )
    .unwrap();
    let data = dir.join("data.jsonl");
    let mut body = String::new();
    for i in 0..22254 {
        let matches = if i < 5734 {
            format!("[{}]", i % 2)
        } else {
            "[]".to_string()
        };
        let _ = writeln!(
            body,
            r#"{{"id":"r{i}","tokens":["t{}"],"label":{},"lf_matches":{matches}}}"#,
            i % 50,
            i % 2
        );
    }
    fs::write(&data, body).unwrap();
    (meta, data)
}

#[test]
fn ingest_filtering_stats() {
    let outcome = (|| {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let (meta, data) = write_reference_scale_corpus(dir.path());
        let out = dir.path().join("corpus");
        let status = xpasc_bin()
            .args(["ingest", "--meta"])
            .arg(&meta)
            .arg("--data")
            .arg(&data)
            .arg("--out")
            .arg(&out)
            .status()
            .map_err(|e| e.to_string())?;
        ensure(status.success(), || format!("ingest exited with {status}"))?;
        let stats: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("stats.json")).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
        let retained = stats["retained_fraction"].as_f64().unwrap_or(f64::NAN);
        ensure(stats["original_size"] == 22254 && stats["filtered_size"] == 5734, || {
            format!("unexpected sizes in {stats}")
        })?;
        ensure((retained - 0.258).abs() <= 0.001, || {
            format!("retained fraction {retained} not within 0.258 +/- 0.001")
        })
    })();
    report("ingest reports retained fraction 0.258 +/- 0.001 at reference scale", outcome);
}

// ---------------------------------------------------------------------------
// Criterion: training and scoring commands are byte-identical on re-run.
// ---------------------------------------------------------------------------

fn write_corpus_dir(dir: &Path, corpus: &Corpus) -> PathBuf {
    let out = dir.join("corpus");
    fs::create_dir_all(&out).unwrap();
    fs::write(
        out.join("meta.json"),
        serde_json::to_string_pretty(&corpus.meta).unwrap(),
    )
    .unwrap();
    let mut body = String::new();
    for i in &corpus.instances {
        let record = serde_json::json!({
            "id": i.id,
            "tokens": i.tokens,
            "label": i.weak_label,
            "lf_matches": i.lf_matches,
        });
        let _ = writeln!(body, "{record}");
    }
    fs::write(out.join("instances.jsonl"), body).unwrap();
    out
}

#[test]
fn command_determinism() {
    let outcome = (|| {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let corpus = planted_correlation_corpus(&PlantedConfig {
            num_instances: 60,
            seed: 4,
            ..PlantedConfig::default()
        });
        let corpus_dir = write_corpus_dir(dir.path(), &corpus);

        let run = |args: &[&str]| -> std::result::Result<(), String> {
            let status = xpasc_bin().args(args).status().map_err(|e| e.to_string())?;
            ensure(status.success(), || format!("{args:?} exited with {status}"))
        };
        let path = |name: &str| dir.path().join(name).display().to_string();
        let identical = |a: &str, b: &str| -> std::result::Result<(), String> {
            let left = fs::read(dir.path().join(a)).map_err(|e| e.to_string())?;
            let right = fs::read(dir.path().join(b)).map_err(|e| e.to_string())?;
            ensure(left == right, || format!("{a} and {b} differ"))
        };
        let corpus_flag = corpus_dir.display().to_string();

        for round in ["one", "two"] {
            run(&[
                "train", "--corpus", &corpus_flag, "--model", "knowman", "--lambda", "2",
                "--seed", "9", "--epochs", "6", "--out", &path(&format!("km-{round}.json")),
            ])?;
            run(&[
                "train", "--corpus", &corpus_flag, "--model", "mv-bow", "--tie", "random",
                "--seed", "9", "--epochs", "6", "--out", &path(&format!("bow-{round}.json")),
            ])?;
        }
        identical("km-one.json", "km-two.json")?;
        identical("bow-one.json", "bow-two.json")?;

        run(&["assoc", "--corpus", &corpus_flag, "--method", "chi2", "--out", &path("chi2.json")])?;
        for round in ["one", "two"] {
            run(&[
                "score", "--corpus", &corpus_flag, "--model", &path("km-one.json"), "--assoc",
                &path("chi2.json"), "--out", &path(&format!("score-{round}.json")),
            ])?;
            run(&[
                "score", "--corpus", &corpus_flag, "--model", &path("km-one.json"), "--assoc",
                &path("chi2.json"), "--scaled", "--out", &path(&format!("scaled-{round}.json")),
            ])?;
            run(&[
                "sweep", "--corpus", &corpus_flag, "--lambdas", "0,1", "--seeds", "0,1",
                "--assoc-method", "chi2", "--epochs", "4", "--out",
                &path(&format!("sweep-{round}")),
            ])?;
        }
        identical("score-one.json", "score-two.json")?;
        identical("scaled-one.json", "scaled-two.json")?;
        identical("sweep-one/sweep.csv", "sweep-two/sweep.csv")?;
        identical("sweep-one/sweep.json", "sweep-two/sweep.json")?;
        Ok(())
    })();
    report("training and scoring commands re-run byte-identically", outcome);
}
