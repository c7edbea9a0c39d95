//! Acceptance suite. Each test exercises one release criterion end to end
//! and prints a single PASS/FAIL line (visible with `--nocapture`).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mft_core::corpus::{
    normalize_text, pabak, tokenize, AnnotatedTweet, Corpus, Foundation, LabelClass, LabelSet,
    Tweet,
};
use mft_core::eval::{
    f_score, run_experiment, upsample, write_machine_report, EvalConfig, ExperimentConfig,
    ExperimentInputs, ReportTarget,
};
use mft_core::features::{
    cpmid, embed_sequence, mean_embedding, select_features, CpmidConfig, EmbeddingTable,
    MFDictionary, SoftEncoderConfig,
};
use mft_core::knowledge::{
    enrich_corpus, merge_document, merged_tokens, KBEntity, PropertyWhitelist, SnapshotKb,
};
use mft_core::linking::{
    filter_by_confidence, filter_by_pos, filter_by_type, pos_tag, refine, token_spans,
    EntityAnnotation, FixtureLinker, LinkerConfig, Mention, PosTag, Provenance,
};
use mft_core::model::{
    train, train_logreg_baseline, ClassifierModel, DropoutMasks, Example, FeatureFlags, FeatureRow,
    LogRegModel, TrainConfig,
};

fn verdict(number: usize, name: &str, ok: bool, detail: String) {
    println!(
        "criterion {number} ({name}): {} — {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {number} ({name}) failed: {detail}");
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

// ---------------------------------------------------------------------
// 1. cPMId oracle equivalence on random corpora, plus the delta -> 1
//    plain-PMI limit.
// ---------------------------------------------------------------------

struct RandomCorpus {
    docs: Vec<(Vec<String>, LabelSet)>,
    vocab: Vec<String>,
}

fn random_corpus(rng: &mut ChaCha8Rng) -> RandomCorpus {
    let n_docs = rng.gen_range(1..=32);
    let vocab_size = rng.gen_range(1..=16);
    let vocab: Vec<String> = (0..vocab_size).map(|i| format!("w{i}")).collect();
    let docs = (0..n_docs)
        .map(|_| {
            let len = rng.gen_range(0..=12);
            let tokens: Vec<String> = (0..len)
                .map(|_| vocab[rng.gen_range(0..vocab_size)].clone())
                .collect();
            let mut labels = LabelSet::default();
            for f in Foundation::ALL {
                labels.set(f, rng.gen_bool(0.4));
            }
            (tokens, labels)
        })
        .collect();
    RandomCorpus { docs, vocab }
}

/// Brute-force oracle: explicit document-index sets, intersected, and the
/// closed form evaluated with independent arithmetic.
fn oracle_cpmid(word: &str, docs: &[(Vec<String>, bool)], delta: f64) -> Option<f64> {
    let with_word: HashSet<usize> = docs
        .iter()
        .enumerate()
        .filter(|(_, (tokens, _))| tokens.iter().any(|t| t == word))
        .map(|(i, _)| i)
        .collect();
    let positive: HashSet<usize> = docs
        .iter()
        .enumerate()
        .filter(|(_, (_, p))| *p)
        .map(|(i, _)| i)
        .collect();
    if with_word.is_empty() {
        return None;
    }
    let d_wf = with_word.intersection(&positive).count() as f64;
    if d_wf == 0.0 {
        return Some(f64::NEG_INFINITY);
    }
    let d_w = with_word.len() as f64;
    let d_f = positive.len() as f64;
    let d = docs.len() as f64;
    let significance = d_w.sqrt() * ((1.0 / delta).ln() / 2.0).sqrt();
    Some((d_wf / (d_w * d_f / d + significance)).log2())
}

#[test]
fn criterion_1_cpmid_matches_brute_force_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let cfg = CpmidConfig {
        delta: 0.9,
        k: 100,
        min_df: 1,
    };
    let mut comparisons = 0usize;
    let mut ok = true;
    let mut detail = String::new();
    'outer: for corpus_idx in 0..200 {
        let world = random_corpus(&mut rng);
        for f in Foundation::ALL {
            let flagged: Vec<(Vec<String>, bool)> = world
                .docs
                .iter()
                .map(|(tokens, labels)| (tokens.clone(), labels.get(f)))
                .collect();
            // The selection path scores every word in one counting pass;
            // check it against the oracle too.
            let docs_map: BTreeMap<String, Vec<String>> = flagged
                .iter()
                .enumerate()
                .map(|(i, (tokens, _))| (format!("d{i:02}"), tokens.clone()))
                .collect();
            let gold_map: BTreeMap<String, LabelSet> = world
                .docs
                .iter()
                .enumerate()
                .map(|(i, (_, labels))| (format!("d{i:02}"), *labels))
                .collect();
            let selected = select_features(&docs_map, &gold_map, LabelClass::Foundation(f), &cfg);
            let selected_scores: BTreeMap<String, f64> = match selected {
                Ok(fs) => fs.features.into_iter().collect(),
                Err(_) => BTreeMap::new(), // no positive docs for f
            };
            for word in &world.vocab {
                let oracle = oracle_cpmid(word, &flagged, cfg.delta);
                let streaming = cpmid(word, &flagged, &cfg);
                match (oracle, streaming) {
                    (None, Err(_)) => {}
                    (Some(want), Ok(got)) => {
                        comparisons += 1;
                        let agree = if want.is_infinite() {
                            got.is_infinite() && got < 0.0
                        } else {
                            (want - got).abs() <= 1e-9
                        };
                        if !agree {
                            ok = false;
                            detail = format!(
                                "corpus {corpus_idx}, {f}, word {word}: oracle {want}, got {got}"
                            );
                            break 'outer;
                        }
                        if let Some(score) = selected_scores.get(word) {
                            if (want - score).abs() > 1e-9 {
                                ok = false;
                                detail = format!(
                                    "corpus {corpus_idx}, {f}, word {word}: selection path {score}, oracle {want}"
                                );
                                break 'outer;
                            }
                        }
                    }
                    (want, got) => {
                        ok = false;
                        detail =
                            format!("corpus {corpus_idx}, {f}, word {word}: {want:?} vs {got:?}");
                        break 'outer;
                    }
                }
                // delta -> 1 limit: the correction vanishes and the score
                // is plain document PMI.
                let limit_cfg = CpmidConfig { delta: 1.0, ..cfg };
                if let (Some(want), Ok(got)) = (
                    oracle_cpmid(word, &flagged, 1.0),
                    cpmid(word, &flagged, &limit_cfg),
                ) {
                    let plain = want; // ln(1/1) = 0 exactly
                    let agree = if plain.is_infinite() {
                        got.is_infinite()
                    } else {
                        (plain - got).abs() <= 1e-9
                    };
                    if !agree {
                        ok = false;
                        detail = format!("plain-PMI limit mismatch for {word}: {plain} vs {got}");
                        break 'outer;
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let in_budget = elapsed < Duration::from_secs(30);
    verdict(
        1,
        "cPMId oracle equivalence",
        ok && in_budget && comparisons > 1000,
        format!("{comparisons} comparisons within 1e-9 in {elapsed:.2?} (budget 30s); {detail}"),
    );
}

// ---------------------------------------------------------------------
// 2. Gradient correctness by central finite differences.
// ---------------------------------------------------------------------

fn fd_relative_error(
    model: &ClassifierModel,
    batch: &[Example],
    masks: &[DropoutMasks],
    l2: f64,
) -> f64 {
    let analytic = model.gradients_with_masks(batch, masks, l2).unwrap();
    let step = 1e-5;
    let names: Vec<&'static str> = model.params.tensors().iter().map(|(n, _)| *n).collect();
    let mut worst = 0.0f64;
    for name in names {
        let len = model
            .params
            .tensors()
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| t.len())
            .unwrap();
        for idx in 0..len {
            let mut plus = model.clone();
            for (n, t) in plus.params.tensors_mut() {
                if n == name {
                    t[idx] += step;
                }
            }
            let mut minus = model.clone();
            for (n, t) in minus.params.tensors_mut() {
                if n == name {
                    t[idx] -= step;
                }
            }
            let numeric = (plus.loss_with_masks(batch, masks, l2).unwrap()
                - minus.loss_with_masks(batch, masks, l2).unwrap())
                / (2.0 * step);
            let a = analytic
                .tensors()
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| t[idx])
                .unwrap();
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
#[allow(clippy::needless_range_loop)]
fn criterion_2_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2002);
    let mut worst_lstm = 0.0f64;
    for config_idx in 0..20 {
        let bk_dim = if rng.gen_bool(0.5) {
            Some(rng.gen_range(2..5))
        } else {
            None
        };
        let mfd_dim = if rng.gen_bool(0.5) {
            Some(rng.gen_range(2..4))
        } else {
            None
        };
        let with_dropout = config_idx % 2 == 1;
        let cfg = TrainConfig {
            hidden_dim: rng.gen_range(2..5),
            head_dim: rng.gen_range(2..4),
            dropout_embed: if with_dropout { 0.3 } else { 0.0 },
            dropout_lstm: if with_dropout { 0.3 } else { 0.0 },
            dropout_fc: if with_dropout { 0.3 } else { 0.0 },
            l2_lambda: if config_idx % 3 == 0 { 1e-3 } else { 0.0 },
            seed: 2002 + config_idx as u64,
            features: FeatureFlags {
                bk: bk_dim.is_some(),
                mfd: mfd_dim.is_some(),
            },
            ..TrainConfig::default()
        };
        let input_dim = rng.gen_range(2..6);
        let mut rows = Vec::new();
        for i in 0..2 {
            let seq_len = rng.gen_range(1..5);
            let mut vec_of =
                |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
            rows.push(Example {
                features: FeatureRow {
                    tweet: (0..seq_len).map(|_| vec_of(input_dim)).collect(),
                    bk: bk_dim.map(&mut vec_of),
                    mfd: mfd_dim.map(&mut vec_of),
                },
                label: i % 2 == 0,
            });
        }
        // Seeded-init model via a one-example training set is overkill
        // here; build params directly through train's init path by
        // training zero epochs is unsupported, so draw a fresh model.
        let model = {
            train(
                LabelClass::Foundation(Foundation::CareHarm),
                &rows,
                &TrainConfig {
                    epochs: 1,
                    learning_rate: 0.0,
                    ..cfg.clone()
                },
            )
            .unwrap()
        };
        let dims = model.params.dims();
        let masks: Vec<DropoutMasks> = rows
            .iter()
            .map(|e| DropoutMasks::sample(&e.features, dims, &cfg, &mut rng))
            .collect();
        let rel = fd_relative_error(&model, &rows, &masks, cfg.l2_lambda);
        worst_lstm = worst_lstm.max(rel);
    }

    let mut worst_logreg = 0.0f64;
    for config_idx in 0..10 {
        let dim = rng.gen_range(3..9);
        let batch: Vec<(Vec<f64>, bool)> = (0..4)
            .map(|i| {
                (
                    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    i % 2 == 0,
                )
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 1,
            learning_rate: 0.0,
            l2_lambda: if config_idx % 2 == 0 { 1e-3 } else { 0.0 },
            seed: 7000 + config_idx as u64,
            ..TrainConfig::default()
        };
        let model: LogRegModel = train_logreg_baseline(LabelClass::NonMoral, &batch, &cfg).unwrap();
        let (dw, db) = model.gradients(&batch, cfg.l2_lambda).unwrap();
        let step = 1e-5;
        for i in 0..dim {
            let mut plus = model.clone();
            plus.weights[i] += step;
            let mut minus = model.clone();
            minus.weights[i] -= step;
            let numeric = (plus.loss(&batch, cfg.l2_lambda).unwrap()
                - minus.loss(&batch, cfg.l2_lambda).unwrap())
                / (2.0 * step);
            let rel = (dw[i] - numeric).abs() / dw[i].abs().max(numeric.abs()).max(1e-6);
            worst_logreg = worst_logreg.max(rel);
        }
        let mut plus = model.clone();
        plus.bias += step;
        let mut minus = model.clone();
        minus.bias -= step;
        let numeric = (plus.loss(&batch, cfg.l2_lambda).unwrap()
            - minus.loss(&batch, cfg.l2_lambda).unwrap())
            / (2.0 * step);
        let rel = (db - numeric).abs() / db.abs().max(numeric.abs()).max(1e-6);
        worst_logreg = worst_logreg.max(rel);
    }

    let elapsed = start.elapsed();
    let ok = worst_lstm <= 1e-4 && worst_logreg <= 1e-4 && elapsed < Duration::from_secs(120);
    verdict(
        2,
        "gradient correctness",
        ok,
        format!(
            "20 LSTM configs worst rel err {worst_lstm:.2e}, 10 baseline configs worst {worst_logreg:.2e}, in {elapsed:.2?} (budget 120s)"
        ),
    );
}

// ---------------------------------------------------------------------
// 3. The refinement worked example through the fixture files.
// ---------------------------------------------------------------------

#[test]
fn criterion_3_refinement_worked_example() {
    let start = Instant::now();
    let corpus = Corpus::new(
        "sandy",
        vec![
            AnnotatedTweet::new(Tweet::new(
                "t1",
                "Booker is a politician who will change everything for him",
            )),
            AnnotatedTweet::new(Tweet::new("t2", "Cory Booker spoke about the storm")),
        ],
    )
    .unwrap();
    let linker = FixtureLinker::from_path(fixture("linker_fixtures.jsonl")).unwrap();
    let refined = refine(&corpus, &linker, &LinkerConfig::default()).unwrap();

    let t1_ok = refined["t1"].len() == 1
        && refined["t1"][0].mention.surface == "Booker"
        && refined["t1"][0].entity_title == "Cory Booker"
        && matches!(refined["t1"][0].provenance, Provenance::Propagated { .. });
    let t2_ok = refined["t2"].len() == 1
        && refined["t2"][0].mention.surface == "Cory Booker"
        && refined["t2"][0].entity_title == "Cory Booker";

    let kb = SnapshotKb::from_path(fixture("kb_snapshot.jsonl")).unwrap();
    let entity = kb_fetch(&kb, "Cory Booker");
    let doc = merge_document(&entity, &PropertyWhitelist::default());
    let phrases = [
        "American politician",
        "Mayor of Newark, New Jersey",
        "Democratic Party (United States)",
    ];
    let merge_ok = phrases.iter().all(|p| doc.text.contains(p));

    let elapsed = start.elapsed();
    let ok = t1_ok && t2_ok && merge_ok && elapsed < Duration::from_secs(1);
    verdict(
        3,
        "refinement worked example",
        ok,
        format!(
            "t1 relinked: {t1_ok}, t2 direct: {t2_ok}, merged doc phrases: {merge_ok}, in {elapsed:.2?} (budget 1s)"
        ),
    );
}

fn kb_fetch(kb: &SnapshotKb, title: &str) -> KBEntity {
    use mft_core::knowledge::KbClient;
    kb.fetch(title).unwrap().expect("fixture entity present")
}

// ---------------------------------------------------------------------
// 4. Knowledge benefit at desk scale.
// ---------------------------------------------------------------------

const SIGNAL_WORDS: [&str; 8] = [
    "mercy", "rescue", "comfort", "healing", "shelter", "kindness", "relief", "solace",
];
const NEUTRAL_WORDS: [&str; 8] = [
    "schedule",
    "inventory",
    "logistics",
    "paperwork",
    "census",
    "archive",
    "catalog",
    "ledger",
];

struct SignalWorld {
    corpus: Corpus,
    knowledge: BTreeMap<String, Vec<String>>,
    embeddings: EmbeddingTable,
    mfd: MFDictionary,
}

/// 200 label-neutral tweets; positives mention one of ten entities whose
/// KB documents carry care-signal words, negatives one of ten whose
/// documents are administrative filler.
fn signal_world(seed: u64) -> SignalWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let filler: Vec<String> = (0..30).map(|i| format!("filler{i:02}")).collect();
    let mut embeddings = EmbeddingTable::new(8);
    for word in &filler {
        let v: Vec<f64> = (0..8).map(|_| rng.gen_range(-4.0..4.0)).collect();
        embeddings.insert(word.clone(), v).unwrap();
    }

    let mut linker_entries = Vec::new();
    let mut kb_entities = Vec::new();
    for group in 0..2 {
        let (prefix, words): (&str, &[&str]) = if group == 0 {
            ("AIDORG", &SIGNAL_WORDS)
        } else {
            ("NEUTORG", &NEUTRAL_WORDS)
        };
        for i in 0..10 {
            let surface = format!("{prefix}{i}");
            let title = format!("{prefix} {i}");
            let mut body: Vec<&str> = Vec::new();
            for k in 0..5 {
                body.push(words[(i + k) % words.len()]);
            }
            let abstract_text = format!("an organization known for {}", body.join(" and "));
            linker_entries.push((
                surface,
                title.clone(),
                0.5,
                vec!["Organisation".to_string()],
            ));
            kb_entities.push(KBEntity {
                title,
                abstract_text,
                properties: BTreeMap::new(),
                types: BTreeSet::from(["Organisation".to_string()]),
            });
        }
    }
    let linker = FixtureLinker::from_entries(linker_entries);
    let kb = SnapshotKb::from_entities(kb_entities);

    let mut tweets = Vec::new();
    for i in 0..200 {
        let positive = i % 2 == 0;
        let entity = if positive {
            format!("AIDORG{}", rng.gen_range(0..10))
        } else {
            format!("NEUTORG{}", rng.gen_range(0..10))
        };
        let mut words: Vec<String> = (0..6)
            .map(|_| filler[rng.gen_range(0..filler.len())].clone())
            .collect();
        let at = rng.gen_range(0..=words.len());
        words.insert(at, entity);
        let mut annotated = AnnotatedTweet::new(Tweet::new(format!("s{i:03}"), words.join(" ")));
        let mut gold = LabelSet::default();
        gold.set(Foundation::CareHarm, positive);
        gold.non_moral = !positive;
        annotated.gold = Some(gold);
        tweets.push(annotated);
    }
    let corpus = Corpus::new("synthetic", tweets).unwrap();

    let refined = refine(&corpus, &linker, &LinkerConfig::default()).unwrap();
    let (docs, diagnostics) = enrich_corpus(&refined, &kb, &PropertyWhitelist::default()).unwrap();
    assert!(diagnostics.is_empty());
    let knowledge: BTreeMap<String, Vec<String>> = docs
        .iter()
        .map(|(id, d)| (id.clone(), merged_tokens(d)))
        .collect();

    let mfd = MFDictionary::new(vec![
        ("mercy".to_string(), "HarmVirtue".to_string()),
        ("rescue".to_string(), "HarmVirtue".to_string()),
    ])
    .unwrap();
    SignalWorld {
        corpus,
        knowledge,
        embeddings,
        mfd,
    }
}

fn experiment_config(master_seed: u64, folds: usize) -> ExperimentConfig {
    ExperimentConfig {
        eval: EvalConfig { folds, master_seed },
        train: TrainConfig {
            hidden_dim: 8,
            head_dim: 4,
            learning_rate: 0.2,
            epochs: 20,
            dropout_embed: 0.0,
            dropout_lstm: 0.0,
            dropout_fc: 0.0,
            l2_lambda: 1e-4,
            seed: 0, // derived per fold
            features: FeatureFlags::default(),
        },
        cpmid: CpmidConfig::default(),
        encoder: SoftEncoderConfig::default(),
    }
}

#[test]
fn criterion_4_background_knowledge_improves_f1() {
    let start = Instant::now();
    let targets = [ReportTarget::Foundation(Foundation::CareHarm)];
    let feature_sets = [
        FeatureFlags::default(),
        FeatureFlags {
            bk: true,
            mfd: false,
        },
    ];
    let mut mean_e = 0.0;
    let mut mean_bk = 0.0;
    for master_seed in 1..=5u64 {
        let world = signal_world(4000 + master_seed);
        let inputs = ExperimentInputs {
            corpus: &world.corpus,
            knowledge_tokens: &world.knowledge,
            embeddings: &world.embeddings,
            mfd: &world.mfd,
        };
        let cfg = experiment_config(master_seed, 5);
        let report = run_experiment(&inputs, &targets, &feature_sets, &cfg).unwrap();
        for row in &report.rows {
            if row.feature_set.bk {
                mean_bk += row.mean / 5.0;
            } else {
                mean_e += row.mean / 5.0;
            }
        }
    }
    let elapsed = start.elapsed();
    let gain = mean_bk - mean_e;
    let ok = gain >= 0.15 && elapsed < Duration::from_secs(300);
    verdict(
        4,
        "knowledge benefit at desk scale",
        ok,
        format!(
            "mean F1(E) {mean_e:.3}, mean F1(E+BK) {mean_bk:.3}, gain {gain:.3} (needs >= 0.15), in {elapsed:.2?} (budget 300s)"
        ),
    );
}

// ---------------------------------------------------------------------
// 5. Up-sampling balances classes exactly.
// ---------------------------------------------------------------------

#[test]
fn criterion_5_upsampling_balances_exactly() {
    let rows: Vec<(usize, bool)> = (0..667)
        .map(|i| (i, true))
        .chain((0..3524).map(|i| (10_000 + i, false)))
        .collect();
    let balanced = upsample(&rows, |r| r.1, 99).unwrap();
    let positives = balanced.iter().filter(|r| r.1).count();
    let negatives = balanced.len() - positives;
    let originals: HashSet<usize> = rows.iter().map(|r| r.0).collect();
    let intact = balanced.iter().all(|r| originals.contains(&r.0));
    let ok = positives == 3524 && negatives == 3524 && intact;
    verdict(
        5,
        "up-sampling",
        ok,
        format!("667/3524 -> {positives}/{negatives}, rows intact: {intact}"),
    );
}

// ---------------------------------------------------------------------
// 6. PABAK hand cases plus symmetry/self-agreement on random vectors.
// ---------------------------------------------------------------------

#[test]
fn criterion_6_pabak() {
    let agree_fraction = |p: f64| -> f64 {
        let n = 100;
        let a = vec![true; n];
        let mut b = a.clone();
        for item in b.iter_mut().take((n as f64 * (1.0 - p)).round() as usize) {
            *item = false;
        }
        pabak(&a, &b).unwrap()
    };
    let hand = (agree_fraction(0.9) - 0.8).abs() < 1e-12
        && (agree_fraction(1.0) - 1.0).abs() < 1e-12
        && agree_fraction(0.5).abs() < 1e-12;

    let mut rng = ChaCha8Rng::seed_from_u64(6006);
    let mut properties = true;
    for _ in 0..100 {
        let n = rng.gen_range(1..200);
        let a: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let b: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
        let ab = pabak(&a, &b).unwrap();
        let ba = pabak(&b, &a).unwrap();
        if (ab - ba).abs() > 1e-15 || (pabak(&a, &a).unwrap() - 1.0).abs() > 1e-15 {
            properties = false;
            break;
        }
        if !(-1.0..=1.0).contains(&ab) {
            properties = false;
            break;
        }
    }
    verdict(
        6,
        "PABAK",
        hand && properties,
        format!("hand cases: {hand}, symmetry/self-agreement on 100 random vectors: {properties}"),
    );
}

// ---------------------------------------------------------------------
// 7. Determinism of evaluate and train.
// ---------------------------------------------------------------------

#[test]
fn criterion_7_determinism() {
    let start = Instant::now();
    let world = signal_world(7007);
    let inputs = ExperimentInputs {
        corpus: &world.corpus,
        knowledge_tokens: &world.knowledge,
        embeddings: &world.embeddings,
        mfd: &world.mfd,
    };
    let cfg = experiment_config(7, 3);
    let targets = [ReportTarget::Foundation(Foundation::CareHarm)];
    let sets = [FeatureFlags {
        bk: true,
        mfd: true,
    }];
    let report_a = write_machine_report(&run_experiment(&inputs, &targets, &sets, &cfg).unwrap());
    let report_b = write_machine_report(&run_experiment(&inputs, &targets, &sets, &cfg).unwrap());
    let reports_identical = report_a == report_b;

    let train_cfg = TrainConfig {
        hidden_dim: 6,
        head_dim: 3,
        epochs: 5,
        seed: 77,
        ..TrainConfig::default()
    };
    let dataset: Vec<Example> = world
        .corpus
        .tweets
        .iter()
        .map(|t| Example {
            features: FeatureRow {
                tweet: embed_sequence(&t.tweet.tokens, &world.embeddings),
                bk: None,
                mfd: None,
            },
            label: t.gold.unwrap().care_harm,
        })
        .collect();
    let class = LabelClass::Foundation(Foundation::CareHarm);
    let a = train(class, &dataset, &train_cfg).unwrap();
    let b = train(class, &dataset, &train_cfg).unwrap();
    let params_identical = a
        .params
        .tensors()
        .iter()
        .zip(b.params.tensors())
        .all(|((_, ta), (_, tb))| ta.iter().zip(tb).all(|(x, y)| x.to_bits() == y.to_bits()));

    let elapsed = start.elapsed();
    let ok = reports_identical && params_identical && elapsed < Duration::from_secs(120);
    verdict(
        7,
        "determinism",
        ok,
        format!(
            "reports byte-identical: {reports_identical}, parameters bitwise-identical: {params_identical}, in {elapsed:.2?} (budget 120s)"
        ),
    );
}

// ---------------------------------------------------------------------
// 8. Separable-corpus sanity for both classifiers.
// ---------------------------------------------------------------------

#[test]
fn criterion_8_separable_corpus_sanity() {
    let start = Instant::now();
    // Marker-token corpus as real text plus an embedding table.
    let mut embeddings = EmbeddingTable::new(4);
    embeddings
        .insert("marker".to_string(), vec![8.0, 0.0, 0.0, 0.0])
        .unwrap();
    for (i, word) in ["storm", "water", "wind"].iter().enumerate() {
        let mut v = vec![0.0; 4];
        v[i + 1] = 8.0;
        embeddings.insert(word.to_string(), v).unwrap();
    }
    let filler = ["storm", "water", "wind"];
    let mut rng = ChaCha8Rng::seed_from_u64(8008);
    let examples: Vec<(Vec<String>, bool)> = (0..100)
        .map(|i| {
            let positive = i % 2 == 0;
            let mut tokens: Vec<String> = (0..3)
                .map(|_| filler[rng.gen_range(0..3)].to_string())
                .collect();
            if positive {
                tokens.insert(rng.gen_range(0..=tokens.len()), "marker".to_string());
            }
            (tokens, positive)
        })
        .collect();

    let cfg = TrainConfig {
        hidden_dim: 8,
        head_dim: 4,
        learning_rate: 0.5,
        epochs: 20,
        dropout_embed: 0.0,
        dropout_lstm: 0.0,
        dropout_fc: 0.0,
        seed: 8,
        ..TrainConfig::default()
    };
    let class = LabelClass::Foundation(Foundation::CareHarm);
    let dataset: Vec<Example> = examples
        .iter()
        .map(|(tokens, label)| Example {
            features: FeatureRow {
                tweet: embed_sequence(tokens, &embeddings),
                bk: None,
                mfd: None,
            },
            label: *label,
        })
        .collect();
    let lstm = train(class, &dataset, &cfg).unwrap();
    let lstm_predictions: Vec<bool> = dataset
        .iter()
        .map(|e| lstm.prob_positive(&e.features).unwrap() >= 0.5)
        .collect();
    let golds: Vec<bool> = dataset.iter().map(|e| e.label).collect();
    let lstm_f1 = f_score(&lstm_predictions, &golds).unwrap();

    let logreg_data: Vec<(Vec<f64>, bool)> = examples
        .iter()
        .map(|(tokens, label)| (mean_embedding(tokens, &embeddings), *label))
        .collect();
    let baseline = train_logreg_baseline(class, &logreg_data, &cfg).unwrap();
    let baseline_predictions: Vec<bool> = logreg_data
        .iter()
        .map(|(x, _)| baseline.prob_positive(x).unwrap() >= 0.5)
        .collect();
    let baseline_f1 = f_score(&baseline_predictions, &golds).unwrap();

    let elapsed = start.elapsed();
    let ok = lstm_f1 == 1.0 && baseline_f1 == 1.0 && elapsed < Duration::from_secs(60);
    verdict(
        8,
        "separable-corpus sanity",
        ok,
        format!(
            "training F1: LSTM {lstm_f1}, baseline {baseline_f1} (both need 1.0), in {elapsed:.2?} (budget 60s)"
        ),
    );
}

// ---------------------------------------------------------------------
// 9. Normalization and filter idempotence on randomized inputs.
// ---------------------------------------------------------------------

fn random_raw_text(rng: &mut ChaCha8Rng) -> String {
    const POOL: &[char] = &[
        'a', 'b', 'Z', '0', '9', '_', ' ', ' ', '\t', '\n', '@', '#', '!', '.', ',', ':', '/', '?',
        '\'', '"', '(', ')', '-', '+', '=', '&', '%', 'é', 'ß', '中', '🌊', 'w', 'h', 't', 'p',
        's',
    ];
    let len = rng.gen_range(0..80);
    (0..len)
        .map(|_| POOL[rng.gen_range(0..POOL.len())])
        .collect()
}

#[test]
fn criterion_9_idempotence_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(9009);
    let mut normalize_ok = true;
    for _ in 0..1000 {
        let raw = random_raw_text(&mut rng);
        let once = normalize_text(&raw);
        let twice = normalize_text(&once);
        if once != twice {
            normalize_ok = false;
            eprintln!("not idempotent on {raw:?}: {once:?} vs {twice:?}");
            break;
        }
        let stripped = ['@', '#', '!', '.', ',', ':', '/', '?'];
        if tokenize(&once)
            .iter()
            .any(|t| t.chars().any(|c| stripped.contains(&c)))
        {
            normalize_ok = false;
            eprintln!("stripped character survived in {once:?}");
            break;
        }
    }

    let cfg = LinkerConfig::default();
    let type_pool = ["Song", "Politician", "Band", "Hurricane", "Book"];
    let text = "Cory Booker spoke about the storm and him";
    let tokens = tokenize(text);
    let tagged = pos_tag(&tokens);
    let spans = token_spans(text);
    let mut filters_ok = true;
    for _ in 0..1000 {
        let n = rng.gen_range(0..8);
        let anns: Vec<EntityAnnotation> = (0..n)
            .map(|_| {
                let token_idx = rng.gen_range(0..tokens.len());
                let (start, end) = spans[token_idx];
                let types: Vec<String> = (0..rng.gen_range(0..3))
                    .map(|_| type_pool[rng.gen_range(0..type_pool.len())].to_string())
                    .collect();
                EntityAnnotation::new(
                    Mention {
                        surface: tokens[token_idx].clone(),
                        start,
                        end,
                    },
                    format!("Entity {}", rng.gen_range(0..5)),
                    rng.gen_range(0.0..1.0),
                    types,
                )
            })
            .collect();
        let (kept1, rejected1) = filter_by_confidence(anns, &cfg);
        let (kept2, rejected2) = filter_by_confidence(kept1.clone(), &cfg);
        if kept1 != kept2 || !rejected2.is_empty() {
            filters_ok = false;
            break;
        }
        let _ = rejected1;
        let t1 = filter_by_type(kept2, &cfg);
        let t2 = filter_by_type(t1.clone(), &cfg);
        if t1 != t2 {
            filters_ok = false;
            break;
        }
        let (p1, _) = filter_by_pos(t2, &tagged, &spans, &cfg);
        let (p2, _) = filter_by_pos(p1.clone(), &tagged, &spans, &cfg);
        if p1 != p2 {
            filters_ok = false;
            break;
        }
        // POS-filter output only contains nominal-overlapping mentions.
        if !p2.iter().all(|a| {
            spans
                .iter()
                .enumerate()
                .filter(|(_, &(s, e))| s < a.mention.end && a.mention.start < e)
                .any(|(i, _)| matches!(tagged[i].tag, PosTag::Noun | PosTag::Propn))
        }) {
            filters_ok = false;
            break;
        }
    }
    verdict(
        9,
        "idempotence properties",
        normalize_ok && filters_ok,
        format!(
            "normalization idempotent on 1000 random inputs: {normalize_ok}, filters idempotent on 1000 random annotation lists: {filters_ok}"
        ),
    );
}
