//! The combined generalization score, its scaled variant, the lambda sweep
//! and the qualitative feature-shift comparison.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::association::{
    association_score, build_matrices, build_npmi_matrices, AssociationMatrices, AssociationMethod,
};
use crate::corpus::{count_cooccurrences, Corpus, CountTables};
use crate::error::{Error, Result};
use crate::explainability::{instance_explainability, normalize_map};
use crate::models::{train_knowman, PredictionOracle, TrainConfig};

/// Per-feature contribution to the score of one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBreakdown {
    pub feature: String,
    pub feature_index: usize,
    pub s_xp: f64,
    pub s_asc: f64,
    pub product: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceBreakdown {
    pub id: String,
    pub features: Vec<FeatureBreakdown>,
}

/// Full scoring result. The score is 1 plus the mean of the per-pair
/// products over every (instance, distinct feature) pair, so it equals 1
/// exactly when every product is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XpascReport {
    pub score: f64,
    pub method: AssociationMethod,
    pub gamma: f64,
    pub scaled: bool,
    pub num_instances: usize,
    /// Number of (instance, distinct feature) terms in the mean.
    pub num_terms: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub per_instance: Vec<InstanceBreakdown>,
}

impl XpascReport {
    /// Recomputes the aggregate from the stored breakdown.
    pub fn recomputed_score(&self) -> f64 {
        let mut total = 0.0;
        let mut terms = 0usize;
        for instance in &self.per_instance {
            for feature in &instance.features {
                total += feature.product;
                terms += 1;
            }
        }
        if terms == 0 {
            1.0
        } else {
            1.0 + total / terms as f64
        }
    }
}

fn check_shapes(corpus: &Corpus, matrices: &AssociationMatrices) -> Result<()> {
    let (v, k, j) = (
        corpus.vocabulary.len(),
        corpus.meta.num_classes(),
        corpus.meta.num_lfs(),
    );
    if matrices.num_features() != v || matrices.num_classes() != k || matrices.num_lfs() != j {
        return Err(Error::Config(format!(
            "association matrices shaped {}x{} / {}x{} do not fit a corpus with K={k}, J={j}, V={v}",
            matrices.num_classes(),
            matrices.num_features(),
            matrices.num_lfs(),
            matrices.num_features(),
        )));
    }
    Ok(())
}

/// Scores a frozen oracle against a filtered corpus: for every instance and
/// every distinct feature, the occlusion explainability (raised to gamma)
/// times the association score, aggregated as 1 plus the mean product.
pub fn xpasc(
    corpus: &Corpus,
    oracle: &dyn PredictionOracle,
    matrices: &AssociationMatrices,
    gamma: f64,
) -> Result<XpascReport> {
    check_shapes(corpus, matrices)?;

    let mut per_instance = Vec::with_capacity(corpus.num_instances());
    let mut total = 0.0;
    let mut terms = 0usize;
    for instance in &corpus.instances {
        let map = instance_explainability(oracle, corpus, instance)?;
        let mut features = Vec::with_capacity(map.entries.len());
        for (&f, &s_xp) in &map.entries {
            let s_asc = association_score(instance, f, matrices)?;
            let product = s_xp.powf(gamma) * s_asc;
            total += product;
            terms += 1;
            features.push(FeatureBreakdown {
                feature: corpus.vocabulary.term(f).to_owned(),
                feature_index: f,
                s_xp,
                s_asc,
                product,
            });
        }
        per_instance.push(InstanceBreakdown {
            id: instance.id.clone(),
            features,
        });
    }

    let score = if terms == 0 { 1.0 } else { 1.0 + total / terms as f64 };
    Ok(XpascReport {
        score,
        method: matrices.method,
        gamma,
        scaled: false,
        num_instances: corpus.num_instances(),
        num_terms: terms,
        model_id: None,
        seed: None,
        per_instance,
    })
}

/// Affine map of a sequence onto [0, 1]. A constant sequence maps to all
/// zeros: the numerator of the scaling formula is zero everywhere.
pub fn minmax_scale(values: &[f64]) -> Vec<f64> {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range <= 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|&v| (v - min) / range).collect()
}

/// The normalized score variant: NPMI association, per-instance-max
/// explainability normalization, then MinMax over the pooled distributions
/// of both components before the usual 1 + mean(product) combination.
pub fn xpasc_scaled(
    corpus: &Corpus,
    oracle: &dyn PredictionOracle,
    counts: &CountTables,
    gamma: f64,
) -> Result<XpascReport> {
    let matrices = build_npmi_matrices(counts);
    check_shapes(corpus, &matrices)?;

    // gather every (instance, feature) pair in deterministic order
    let mut pair_ids = Vec::new();
    let mut xp_values = Vec::new();
    let mut asc_values = Vec::new();
    for instance in &corpus.instances {
        let map = normalize_map(instance_explainability(oracle, corpus, instance)?);
        for (&f, &s_xp) in &map.entries {
            pair_ids.push((instance.id.clone(), f));
            xp_values.push(s_xp);
            asc_values.push(association_score(instance, f, &matrices)?);
        }
    }

    let xp_scaled = minmax_scale(&xp_values);
    let asc_scaled = minmax_scale(&asc_values);

    let mut per_instance: Vec<InstanceBreakdown> = Vec::new();
    let mut total = 0.0;
    for (((id, f), &s_xp), &s_asc) in pair_ids.iter().zip(&xp_scaled).zip(&asc_scaled) {
        let product = s_xp.powf(gamma) * s_asc;
        total += product;
        if per_instance.last().map(|b| &b.id) != Some(id) {
            per_instance.push(InstanceBreakdown {
                id: id.clone(),
                features: Vec::new(),
            });
        }
        per_instance.last_mut().unwrap().features.push(FeatureBreakdown {
            feature: corpus.vocabulary.term(*f).to_owned(),
            feature_index: *f,
            s_xp,
            s_asc,
            product,
        });
    }

    let terms = pair_ids.len();
    let score = if terms == 0 { 1.0 } else { 1.0 + total / terms as f64 };
    Ok(XpascReport {
        score,
        method: AssociationMethod::Npmi,
        gamma,
        scaled: true,
        num_instances: corpus.num_instances(),
        num_terms: terms,
        model_id: None,
        seed: None,
        per_instance,
    })
}

/// How an instance's most important feature moved between two models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShiftKind {
    /// No qualifying movement.
    #[serde(rename = "none")]
    None,
    /// The top feature stopped being LF-dominant without becoming
    /// class-dominant.
    #[serde(rename = "off-lf")]
    OffLf,
    /// The top feature moved from LF-dominant to strictly class-dominant.
    #[serde(rename = "to-class")]
    ToClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftRecord {
    pub id: String,
    pub top_feature_a: String,
    pub top_feature_b: String,
    pub kind: ShiftKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ShiftCounts {
    pub none: usize,
    pub off_lf: usize,
    pub to_class: usize,
}

/// Per-instance comparison of the argmax-explainability feature under two
/// models.
///
/// The "to-class" / "off-LF" classification is one concrete reading of a
/// qualitative criterion; dominance compares the feature's class
/// association against its maximum association over the instance's matching
/// labeling functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub records: Vec<ShiftRecord>,
    pub counts: ShiftCounts,
}

/// Compares where two frozen oracles place their highest explainability,
/// instance by instance. Ties on the argmax break toward the lowest
/// feature index.
pub fn shift_analysis(
    corpus: &Corpus,
    oracle_a: &dyn PredictionOracle,
    oracle_b: &dyn PredictionOracle,
    matrices: &AssociationMatrices,
) -> Result<ShiftReport> {
    check_shapes(corpus, matrices)?;
    let mut records = Vec::with_capacity(corpus.num_instances());
    let mut counts = ShiftCounts::default();

    for instance in &corpus.instances {
        let top_a = instance_explainability(oracle_a, corpus, instance)?
            .top_feature()
            .expect("instances are non-empty");
        let top_b = instance_explainability(oracle_b, corpus, instance)?
            .top_feature()
            .expect("instances are non-empty");

        let dominance = |f: usize| -> (bool, bool) {
            let class_assoc = matrices.class_features[instance.weak_label][f];
            let max_lf = instance
                .lf_matches
                .iter()
                .map(|&l| matrices.lf_features[l][f])
                .fold(f64::NEG_INFINITY, f64::max);
            (class_assoc > max_lf, max_lf > class_assoc)
        };
        let (_, a_lf_dominant) = dominance(top_a);
        let (b_class_dominant, b_lf_dominant) = dominance(top_b);

        let kind = if b_class_dominant && a_lf_dominant {
            ShiftKind::ToClass
        } else if a_lf_dominant && !b_lf_dominant {
            ShiftKind::OffLf
        } else {
            ShiftKind::None
        };
        match kind {
            ShiftKind::None => counts.none += 1,
            ShiftKind::OffLf => counts.off_lf += 1,
            ShiftKind::ToClass => counts.to_class += 1,
        }
        records.push(ShiftRecord {
            id: instance.id.clone(),
            top_feature_a: corpus.vocabulary.term(top_a).to_owned(),
            top_feature_b: corpus.vocabulary.term(top_b).to_owned(),
            kind,
        });
    }

    Ok(ShiftReport { records, counts })
}

/// One (lambda, seed) cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub lambda: f64,
    pub seed: u64,
    pub xpasc: Option<f64>,
    pub task_metric: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSummary {
    pub lambda: f64,
    pub mean_xpasc: Option<f64>,
    pub mean_task_metric: Option<f64>,
}

/// Aggregated sweep results: the full (lambda, seed) grid, per-lambda means
/// and the Spearman rank correlation between lambda and mean score (absent
/// when fewer than two lambdas have a mean).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub association_method: AssociationMethod,
    pub cells: Vec<SweepCell>,
    pub per_lambda: Vec<LambdaSummary>,
    pub spearman: Option<f64>,
}

impl SweepReport {
    /// CSV rows for external plotting: `lambda,seed,xpasc,task_metric`.
    /// Failed cells leave the value columns empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,seed,xpasc,task_metric\n");
        for cell in &self.cells {
            let xp = cell.xpasc.map(|v| v.to_string()).unwrap_or_default();
            let tm = cell.task_metric.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", cell.lambda, cell.seed, xp, tm));
        }
        out
    }
}

/// Trains one adversarial model per (lambda, seed) pair, scores each with
/// the requested association method, and aggregates. Individual training
/// failures are recorded in their cell; the sweep continues.
///
/// Cells are independent and may run on up to `max_threads` workers; the
/// output order is the (lambda, seed) grid order either way.
pub fn lambda_sweep(
    corpus: &Corpus,
    lambdas: &[f64],
    seeds: &[u64],
    base_config: &TrainConfig,
    method: AssociationMethod,
    max_threads: Option<usize>,
) -> Result<SweepReport> {
    if lambdas.is_empty() || seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one lambda and one seed".into()));
    }
    let counts = count_cooccurrences(corpus);
    let matrices = build_matrices(&counts, method);

    let grid: Vec<(f64, u64)> = lambdas
        .iter()
        .flat_map(|&l| seeds.iter().map(move |&s| (l, s)))
        .collect();

    let run_cell = |&(lambda, seed): &(f64, u64)| -> SweepCell {
        let config = TrainConfig { lambda, seed, ..base_config.clone() };
        let outcome = train_knowman(corpus, &config).and_then(|model| {
            let report = xpasc(corpus, &model, &matrices, 1.0)?;
            Ok((report.score, model.class_accuracy(corpus)))
        });
        match outcome {
            Ok((score, accuracy)) => SweepCell {
                lambda,
                seed,
                xpasc: Some(score),
                task_metric: Some(accuracy),
                error: None,
            },
            Err(e) => SweepCell {
                lambda,
                seed,
                xpasc: None,
                task_metric: None,
                error: Some(e.to_string()),
            },
        }
    };

    let cells: Vec<SweepCell> = match max_threads {
        Some(threads) if threads > 1 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            pool.install(|| grid.par_iter().map(run_cell).collect())
        }
        _ => grid.iter().map(run_cell).collect(),
    };

    let per_lambda: Vec<LambdaSummary> = lambdas
        .iter()
        .map(|&lambda| {
            let ok: Vec<&SweepCell> = cells
                .iter()
                .filter(|c| c.lambda == lambda && c.xpasc.is_some())
                .collect();
            let mean = |get: fn(&SweepCell) -> Option<f64>| {
                if ok.is_empty() {
                    None
                } else {
                    Some(ok.iter().filter_map(|c| get(c)).sum::<f64>() / ok.len() as f64)
                }
            };
            LambdaSummary {
                lambda,
                mean_xpasc: mean(|c| c.xpasc),
                mean_task_metric: mean(|c| c.task_metric),
            }
        })
        .collect();

    let points: Vec<(f64, f64)> = per_lambda
        .iter()
        .filter_map(|s| s.mean_xpasc.map(|m| (s.lambda, m)))
        .collect();
    let spearman = if points.len() >= 2 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = points.into_iter().unzip();
        spearman_rank_correlation(&xs, &ys)
    } else {
        None
    };

    Ok(SweepReport {
        association_method: method,
        cells,
        per_lambda,
        spearman,
    })
}

/// Spearman rank correlation with average ranks for ties. `None` when
/// either sequence has zero rank variance.
pub fn spearman_rank_correlation(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (&a, &b) in rx.iter().zip(&ry) {
        cov += (a - mean) * (b - mean);
        var_x += (a - mean) * (a - mean);
        var_y += (b - mean) * (b - mean);
    }
    if var_x <= 0.0 || var_y <= 0.0 {
        return None;
    }
    Some(cov / (var_x * var_y).sqrt())
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}
