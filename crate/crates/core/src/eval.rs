//! Cross-validated experiments: stratified folds, positive-class
//! up-sampling, F-scores, and the E / E+BK / E+BK+MFD results matrix.
//!
//! Feature selection and up-sampling only ever see the training split of a
//! fold; test folds keep their natural class distribution. Every random
//! choice derives from the master seed, so a rerun with the same config
//! reproduces the report byte for byte.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{Corpus, Foundation, LabelClass, LabelSet};
use crate::features::{
    embed_sequence, mfd_vector, select_features, soft_encode, CpmidConfig, EmbeddingTable,
    FeatureError, MFDictionary, SoftEncoderConfig,
};
use crate::model::{train, Example, FeatureFlags, FeatureRow, ModelError, TrainConfig};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction and gold vectors have different lengths ({a} vs {b})")]
    LengthMismatch { a: usize, b: usize },
    #[error("rows contain a single class")]
    SingleClass,
    #[error("invalid eval config: {0}")]
    BadConfig(String),
    #[error("tweet {id:?} has no gold labels")]
    MissingGold { id: String },
    #[error("{target}, fold {fold}: {source}")]
    Context {
        target: String,
        fold: usize,
        #[source]
        source: Box<EvalError>,
    },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Fold count and master seed for one experiment run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalConfig {
    pub folds: usize,
    pub master_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> EvalConfig {
        EvalConfig {
            folds: 10,
            master_seed: 42,
        }
    }
}

/// One row of the results table: Non-moral appears both as a trained
/// sixth classifier and as the all-classifiers-negative rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ReportTarget {
    Foundation(Foundation),
    NonMoralTrained,
    NonMoralDerived,
}

impl ReportTarget {
    pub const ALL: [ReportTarget; 7] = [
        ReportTarget::Foundation(Foundation::CareHarm),
        ReportTarget::Foundation(Foundation::FairnessCheating),
        ReportTarget::Foundation(Foundation::LoyaltyBetrayal),
        ReportTarget::Foundation(Foundation::AuthoritySubversion),
        ReportTarget::Foundation(Foundation::PurityDegradation),
        ReportTarget::NonMoralTrained,
        ReportTarget::NonMoralDerived,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReportTarget::Foundation(f) => f.name(),
            ReportTarget::NonMoralTrained => "Non-moral (trained)",
            ReportTarget::NonMoralDerived => "Non-moral (derived)",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            ReportTarget::Foundation(f) => f.slug(),
            ReportTarget::NonMoralTrained => "non_moral_trained",
            ReportTarget::NonMoralDerived => "non_moral_derived",
        }
    }

    /// The class whose gold flag stratifies and scores this row.
    pub fn class(self) -> LabelClass {
        match self {
            ReportTarget::Foundation(f) => LabelClass::Foundation(f),
            ReportTarget::NonMoralTrained | ReportTarget::NonMoralDerived => LabelClass::NonMoral,
        }
    }

    fn index(self) -> u64 {
        match self {
            ReportTarget::Foundation(f) => f.index() as u64,
            ReportTarget::NonMoralTrained => 5,
            ReportTarget::NonMoralDerived => 6,
        }
    }
}

impl fmt::Display for ReportTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Deterministic seed mixing (splitmix64 over the master seed and tags).
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut state = master;
    for &tag in tags {
        state = state.wrapping_add(0x9e3779b97f4a7c15).wrapping_add(tag);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        state = z ^ (z >> 31);
    }
    state
}

/// Stratified fold assignment for one class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: BTreeMap<String, usize>,
    pub warnings: Vec<String>,
}

impl FoldPlan {
    pub fn fold_ids(&self, fold: usize) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

/// Shuffle positives and negatives separately (seeded), then deal each
/// round-robin, so per-fold positive counts differ by at most one.
pub fn make_folds(
    corpus: &Corpus,
    class: LabelClass,
    k: usize,
    seed: u64,
) -> Result<FoldPlan, EvalError> {
    if k < 2 {
        return Err(EvalError::BadConfig(format!(
            "fold count must be >= 2, got {k}"
        )));
    }
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for t in &corpus.tweets {
        let gold = t.gold.ok_or_else(|| EvalError::MissingGold {
            id: t.tweet.id.clone(),
        })?;
        if gold.class_flag(class) {
            positives.push(t.tweet.id.clone());
        } else {
            negatives.push(t.tweet.id.clone());
        }
    }
    let mut warnings = Vec::new();
    if positives.len() < k {
        warnings.push(format!(
            "{}: only {} positives for {k} folds; some folds lack positives",
            class.name(),
            positives.len()
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    positives.shuffle(&mut rng);
    negatives.shuffle(&mut rng);
    let mut assignments = BTreeMap::new();
    for (i, id) in positives.into_iter().enumerate() {
        assignments.insert(id, i % k);
    }
    for (i, id) in negatives.into_iter().enumerate() {
        assignments.insert(id, i % k);
    }
    Ok(FoldPlan {
        k,
        seed,
        assignments,
        warnings,
    })
}

/// Duplicate minority-class rows (whole copies, remainder drawn without
/// replacement) until the classes balance exactly, then shuffle. No row
/// is dropped or mutated.
pub fn upsample<T: Clone>(
    rows: &[T],
    is_positive: impl Fn(&T) -> bool,
    seed: u64,
) -> Result<Vec<T>, EvalError> {
    let positives: Vec<&T> = rows.iter().filter(|r| is_positive(r)).collect();
    let negatives: Vec<&T> = rows.iter().filter(|r| !is_positive(r)).collect();
    if positives.is_empty() || negatives.is_empty() {
        return Err(EvalError::SingleClass);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (minority, majority) = if positives.len() <= negatives.len() {
        (positives, negatives)
    } else {
        (negatives, positives)
    };
    let copies = majority.len() / minority.len();
    let remainder = majority.len() - copies * minority.len();
    let mut out: Vec<T> = Vec::with_capacity(2 * majority.len());
    out.extend(majority.iter().map(|r| (*r).clone()));
    for _ in 0..copies {
        out.extend(minority.iter().map(|r| (*r).clone()));
    }
    let mut extra_idx: Vec<usize> = (0..minority.len()).collect();
    extra_idx.shuffle(&mut rng);
    for &i in extra_idx.iter().take(remainder) {
        out.push(minority[i].clone());
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// F1 of the positive class; zero when precision or recall is undefined.
pub fn f_score(predictions: &[bool], golds: &[bool]) -> Result<f64, EvalError> {
    if predictions.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            a: predictions.len(),
            b: golds.len(),
        });
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &g) in predictions.iter().zip(golds) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    if tp + fp == 0 || tp + fn_ == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Immutable inputs to one experiment run.
pub struct ExperimentInputs<'a> {
    pub corpus: &'a Corpus,
    /// Per-tweet concatenation of knowledge-document tokens; tweets
    /// without enrichment may be absent (treated as empty).
    pub knowledge_tokens: &'a BTreeMap<String, Vec<String>>,
    pub embeddings: &'a EmbeddingTable,
    pub mfd: &'a MFDictionary,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ExperimentConfig {
    pub eval: EvalConfig,
    pub train: TrainConfig,
    pub cpmid: CpmidConfig,
    pub encoder: SoftEncoderConfig,
}

impl ExperimentConfig {
    /// Flat, sorted key/value view of every setting, for the report.
    pub fn snapshot(&self) -> Vec<(String, String)> {
        let t = &self.train;
        let mut pairs = vec![
            ("cpmid.delta".to_string(), self.cpmid.delta.to_string()),
            ("cpmid.k".to_string(), self.cpmid.k.to_string()),
            ("cpmid.min_df".to_string(), self.cpmid.min_df.to_string()),
            ("encoder.theta".to_string(), self.encoder.theta.to_string()),
            ("eval.folds".to_string(), self.eval.folds.to_string()),
            (
                "eval.master_seed".to_string(),
                self.eval.master_seed.to_string(),
            ),
            (
                "train.dropout_embed".to_string(),
                t.dropout_embed.to_string(),
            ),
            ("train.dropout_fc".to_string(), t.dropout_fc.to_string()),
            ("train.dropout_lstm".to_string(), t.dropout_lstm.to_string()),
            ("train.epochs".to_string(), t.epochs.to_string()),
            ("train.head_dim".to_string(), t.head_dim.to_string()),
            ("train.hidden_dim".to_string(), t.hidden_dim.to_string()),
            ("train.l2_lambda".to_string(), t.l2_lambda.to_string()),
            (
                "train.learning_rate".to_string(),
                t.learning_rate.to_string(),
            ),
        ];
        pairs.sort();
        pairs
    }
}

/// Mean and per-fold F-scores for one (target, feature set) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub target: ReportTarget,
    pub feature_set: FeatureFlags,
    pub fold_scores: Vec<f64>,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub config_snapshot: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

struct FoldData {
    train_ids: Vec<String>,
    test_ids: Vec<String>,
}

fn split_fold(plan: &FoldPlan, fold: usize) -> FoldData {
    let mut train_ids = Vec::new();
    let mut test_ids = Vec::new();
    for (id, &assigned) in &plan.assignments {
        if assigned == fold {
            test_ids.push(id.clone());
        } else {
            train_ids.push(id.clone());
        }
    }
    FoldData {
        train_ids,
        test_ids,
    }
}

/// Run the experiment matrix: for every target and feature set, k-fold
/// cross-validation with per-fold feature selection and training-side
/// up-sampling, reporting per-fold and mean F-scores.
pub fn run_experiment(
    inputs: &ExperimentInputs,
    targets: &[ReportTarget],
    feature_sets: &[FeatureFlags],
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport, EvalError> {
    cfg.cpmid.validate()?;
    cfg.train.validate()?;
    let gold: BTreeMap<String, LabelSet> = inputs
        .corpus
        .tweets
        .iter()
        .map(|t| {
            t.gold
                .map(|g| (t.tweet.id.clone(), g))
                .ok_or_else(|| EvalError::MissingGold {
                    id: t.tweet.id.clone(),
                })
        })
        .collect::<Result<_, _>>()?;
    let tokens_by_id: BTreeMap<String, &Vec<String>> = inputs
        .corpus
        .tweets
        .iter()
        .map(|t| (t.tweet.id.clone(), &t.tweet.tokens))
        .collect();
    let empty: Vec<String> = Vec::new();

    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for &target in targets {
        let plan = make_folds(
            inputs.corpus,
            target.class(),
            cfg.eval.folds,
            derive_seed(cfg.eval.master_seed, &[1, target.index()]),
        )?;
        warnings.extend(plan.warnings.iter().cloned());
        for &flags in feature_sets {
            let mut fold_scores = Vec::with_capacity(plan.k);
            for fold in 0..plan.k {
                let score = run_fold(
                    inputs,
                    &gold,
                    &tokens_by_id,
                    &empty,
                    target,
                    flags,
                    &plan,
                    fold,
                    cfg,
                )
                .map_err(|source| EvalError::Context {
                    target: target.name().to_string(),
                    fold,
                    source: Box::new(source),
                })?;
                fold_scores.push(score);
            }
            let mean = fold_scores.iter().sum::<f64>() / fold_scores.len() as f64;
            rows.push(ReportRow {
                target,
                feature_set: flags,
                fold_scores,
                mean,
            });
        }
    }
    Ok(ExperimentReport {
        rows,
        config_snapshot: cfg.snapshot(),
        warnings,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_fold(
    inputs: &ExperimentInputs,
    gold: &BTreeMap<String, LabelSet>,
    tokens_by_id: &BTreeMap<String, &Vec<String>>,
    empty: &Vec<String>,
    target: ReportTarget,
    flags: FeatureFlags,
    plan: &FoldPlan,
    fold: usize,
    cfg: &ExperimentConfig,
) -> Result<f64, EvalError> {
    let data = split_fold(plan, fold);
    let score_class = target.class();

    // The classes that need their own trained model on this fold.
    let model_classes: Vec<LabelClass> = match target {
        ReportTarget::Foundation(f) => vec![LabelClass::Foundation(f)],
        ReportTarget::NonMoralTrained => vec![LabelClass::NonMoral],
        ReportTarget::NonMoralDerived => Foundation::ALL
            .iter()
            .map(|&f| LabelClass::Foundation(f))
            .collect(),
    };

    // Per-class feature rows for train and test tweets.
    let build_rows = |class: LabelClass,
                      ids: &[String],
                      selected: Option<&crate::features::FoundationFeatureSet>|
     -> Vec<(String, Example)> {
        ids.iter()
            .map(|id| {
                let tokens = tokens_by_id[id];
                let knowledge = inputs.knowledge_tokens.get(id).unwrap_or(empty);
                let features = FeatureRow {
                    tweet: embed_sequence(tokens, inputs.embeddings),
                    bk: selected
                        .map(|fs| soft_encode(knowledge, fs, inputs.embeddings, &cfg.encoder)),
                    mfd: flags.mfd.then(|| mfd_vector(tokens, inputs.mfd)),
                };
                let label = gold[id].class_flag(class);
                (id.clone(), Example { features, label })
            })
            .collect()
    };

    let mut per_class_flags: BTreeMap<String, Vec<bool>> = BTreeMap::new();
    for class in &model_classes {
        // Feature selection on the training portion only.
        let selected = if flags.bk {
            let train_docs: BTreeMap<String, Vec<String>> = data
                .train_ids
                .iter()
                .map(|id| {
                    (
                        id.clone(),
                        inputs.knowledge_tokens.get(id).cloned().unwrap_or_default(),
                    )
                })
                .collect();
            Some(select_features(&train_docs, gold, *class, &cfg.cpmid)?)
        } else {
            None
        };
        let train_rows = build_rows(*class, &data.train_ids, selected.as_ref());
        let upsample_seed = derive_seed(
            cfg.eval.master_seed,
            &[2, target.index(), fold as u64, class_tag(*class)],
        );
        let balanced: Vec<Example> = upsample(
            &train_rows
                .iter()
                .map(|(_, e)| e.clone())
                .collect::<Vec<_>>(),
            |e| e.label,
            upsample_seed,
        )?;
        let mut train_cfg = cfg.train.clone();
        train_cfg.features = flags;
        train_cfg.seed = derive_seed(
            cfg.eval.master_seed,
            &[3, target.index(), fold as u64, class_tag(*class)],
        );
        let model = train(*class, &balanced, &train_cfg)?;
        let test_rows = build_rows(*class, &data.test_ids, selected.as_ref());
        let predictions: Vec<bool> = test_rows
            .iter()
            .map(|(_, e)| Ok(model.prob_positive(&e.features)? >= 0.5))
            .collect::<Result<_, ModelError>>()?;
        per_class_flags.insert(class.slug().to_string(), predictions);
    }

    let golds: Vec<bool> = data
        .test_ids
        .iter()
        .map(|id| gold[id].class_flag(score_class))
        .collect();
    let predictions: Vec<bool> = match target {
        ReportTarget::Foundation(f) => per_class_flags
            .remove(LabelClass::Foundation(f).slug())
            .expect("trained above"),
        ReportTarget::NonMoralTrained => per_class_flags
            .remove(LabelClass::NonMoral.slug())
            .expect("trained above"),
        ReportTarget::NonMoralDerived => {
            let all: Vec<&Vec<bool>> = Foundation::ALL
                .iter()
                .map(|f| &per_class_flags[LabelClass::Foundation(*f).slug()])
                .collect();
            (0..data.test_ids.len())
                .map(|i| all.iter().all(|v| !v[i]))
                .collect()
        }
    };
    f_score(&predictions, &golds)
}

fn class_tag(class: LabelClass) -> u64 {
    match class {
        LabelClass::Foundation(f) => f.index() as u64,
        LabelClass::NonMoral => 5,
    }
}

/// Sorted `key=value` lines: the full config snapshot plus every fold and
/// mean score. Stable across reruns with the same config.
pub fn write_machine_report(report: &ExperimentReport) -> String {
    let mut lines: Vec<String> = report
        .config_snapshot
        .iter()
        .map(|(k, v)| format!("config.{k}={v}"))
        .collect();
    for row in &report.rows {
        let base = format!("score.{}.{}", row.target.slug(), row.feature_set.label());
        for (i, s) in row.fold_scores.iter().enumerate() {
            lines.push(format!("{base}.fold{i}={s}"));
        }
        lines.push(format!("{base}.mean={}", row.mean));
    }
    lines.sort();
    let mut out = lines.join("\n");
    out.push('\n');
    out
}

/// Aligned results table, feature sets as columns, mean F-scores in
/// percent.
pub fn write_table(report: &ExperimentReport) -> String {
    let mut feature_sets: Vec<FeatureFlags> = Vec::new();
    for row in &report.rows {
        if !feature_sets.contains(&row.feature_set) {
            feature_sets.push(row.feature_set);
        }
    }
    let mut targets: Vec<ReportTarget> = Vec::new();
    for row in &report.rows {
        if !targets.contains(&row.target) {
            targets.push(row.target);
        }
    }
    let name_width = targets
        .iter()
        .map(|t| t.name().len())
        .max()
        .unwrap_or(10)
        .max("Foundation".len());
    let mut out = String::new();
    out.push_str(&format!("{:<name_width$}", "Foundation"));
    for fs in &feature_sets {
        out.push_str(&format!("  {:>9}", fs.label()));
    }
    out.push('\n');
    for target in &targets {
        out.push_str(&format!("{:<name_width$}", target.name()));
        for fs in &feature_sets {
            let cell = report
                .rows
                .iter()
                .find(|r| r.target == *target && r.feature_set == *fs)
                .map(|r| format!("{:.1}", r.mean * 100.0))
                .unwrap_or_else(|| "-".to_string());
            out.push_str(&format!("  {cell:>9}"));
        }
        out.push('\n');
    }
    out
}
