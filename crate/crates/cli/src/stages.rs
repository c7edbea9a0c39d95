//! Pipeline stages. Each stage reads the previous stage's artifact from
//! the output directory, writes its own, and records a content hash so an
//! unchanged rerun is skipped unless forced.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use mft_core::corpus::{
    class_stats, load_corpus, pabak, save_corpus, Corpus, Foundation, LabelClass, LabelSet, Tweet,
};
use mft_core::eval::{
    derive_seed, run_experiment, upsample, write_machine_report, write_table, ExperimentConfig,
    ExperimentInputs,
};
use mft_core::features::{
    embed_sequence, gold_by_id, load_embeddings, load_feature_set, load_mfd, mfd_vector,
    save_feature_set, select_features, soft_encode, EmbeddingTable, FeatureError,
    FoundationFeatureSet, MFDictionary,
};
use mft_core::knowledge::{
    enrich_corpus, merged_tokens, KbClient, KnowledgeDoc, PropertyWhitelist, RemoteKb,
    RemoteKbConfig, SnapshotKb,
};
use mft_core::linking::{
    refine, EntityAnnotation, FixtureLinker, Linker, Mention, Provenance, RemoteLinker,
    RemoteLinkerConfig,
};
use mft_core::model::{
    load_model, predict, save_model, train, ClassifierModel, Example, FeatureRow, Prediction,
};
use mft_core::net::{DiskCache, RetryPolicy};

use crate::config::PipelineConfig;

/// Shared per-invocation switches.
#[derive(Clone, Copy, Debug, Default)]
pub struct RunFlags {
    pub force: bool,
    pub offline: bool,
    pub seed_override: Option<u64>,
}

// -------------------------------------------------------------------
// Artifact locations and the stage cache.
// -------------------------------------------------------------------

pub fn corpus_artifact(cfg: &PipelineConfig) -> PathBuf {
    cfg.output_dir.join("corpus.jsonl")
}

pub fn annotations_artifact(cfg: &PipelineConfig) -> PathBuf {
    cfg.output_dir.join("annotations.jsonl")
}

pub fn knowledge_artifact(cfg: &PipelineConfig) -> PathBuf {
    cfg.output_dir.join("knowledge.jsonl")
}

pub fn features_dir(cfg: &PipelineConfig) -> PathBuf {
    cfg.output_dir.join("features")
}

pub fn encoded_artifact(cfg: &PipelineConfig) -> PathBuf {
    cfg.output_dir.join("encoded.jsonl")
}

pub fn models_dir(cfg: &PipelineConfig) -> PathBuf {
    cfg.output_dir.join("models")
}

pub fn report_table_artifact(cfg: &PipelineConfig) -> PathBuf {
    cfg.output_dir.join("report.txt")
}

pub fn report_machine_artifact(cfg: &PipelineConfig) -> PathBuf {
    cfg.output_dir.join("report.kv")
}

fn require_file(path: &Path, hint: &str) -> Result<()> {
    if !path.is_file() {
        bail!("{hint} not found at {}", path.display());
    }
    Ok(())
}

/// Content hash over named inputs; any change invalidates the stage.
fn inputs_digest(parts: &[(&str, String)]) -> String {
    let joined: String = parts
        .iter()
        .map(|(label, content)| format!("{label}:{}\n", DiskCache::key_for(content)))
        .collect();
    DiskCache::key_for(&joined)
}

fn file_input(label: &'static str, path: &Path) -> Result<(&'static str, String)> {
    let content =
        std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok((label, content))
}

/// Returns true when the stage is already up to date (artifacts exist and
/// the recorded digest matches).
fn stage_is_current(
    cfg: &PipelineConfig,
    stage: &str,
    digest: &str,
    artifacts: &[PathBuf],
    flags: RunFlags,
) -> Result<bool> {
    let marker = cfg.output_dir.join(".hash").join(format!("{stage}.hash"));
    if flags.force {
        return Ok(false);
    }
    if !artifacts.iter().all(|a| a.exists()) {
        return Ok(false);
    }
    Ok(std::fs::read_to_string(&marker)
        .map(|recorded| recorded.trim() == digest)
        .unwrap_or(false))
}

fn record_stage(cfg: &PipelineConfig, stage: &str, digest: &str) -> Result<()> {
    let dir = cfg.output_dir.join(".hash");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join(format!("{stage}.hash")), digest)?;
    Ok(())
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let file =
        std::fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut writer = BufWriter::new(file);
    for line in lines {
        writeln!(writer, "{line}")?;
    }
    writer.flush()?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file =
        std::fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: malformed record", path.display(), idx + 1))?;
        out.push(value);
    }
    Ok(out)
}

// -------------------------------------------------------------------
// Serialized stage records.
// -------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct AnnotationRecord {
    surface: String,
    start: usize,
    end: usize,
    entity_title: String,
    rho: f64,
    entity_types: Vec<String>,
    provenance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    donor_rho: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct TweetAnnotations {
    tweet_id: String,
    annotations: Vec<AnnotationRecord>,
}

impl AnnotationRecord {
    fn from_annotation(ann: &EntityAnnotation) -> AnnotationRecord {
        let (provenance, donor_rho) = match ann.provenance {
            Provenance::Linker => ("linker".to_string(), None),
            Provenance::Propagated { donor_rho } => ("propagated".to_string(), Some(donor_rho)),
        };
        AnnotationRecord {
            surface: ann.mention.surface.clone(),
            start: ann.mention.start,
            end: ann.mention.end,
            entity_title: ann.entity_title.clone(),
            rho: ann.rho,
            entity_types: ann.entity_types.iter().cloned().collect(),
            provenance,
            donor_rho,
        }
    }

    fn into_annotation(self) -> EntityAnnotation {
        let mut ann = EntityAnnotation::new(
            Mention {
                surface: self.surface,
                start: self.start,
                end: self.end,
            },
            self.entity_title,
            self.rho,
            self.entity_types,
        );
        if self.provenance == "propagated" {
            ann.provenance = Provenance::Propagated {
                donor_rho: self.donor_rho.unwrap_or(0.0),
            };
        }
        ann
    }
}

#[derive(Serialize, Deserialize)]
struct TweetKnowledge {
    tweet_id: String,
    docs: Vec<KnowledgeDoc>,
}

#[derive(Serialize, Deserialize)]
struct EncodedTweet {
    tweet_id: String,
    mfd: Vec<f64>,
    bk: BTreeMap<String, Vec<f64>>,
}

// -------------------------------------------------------------------
// Shared loading helpers.
// -------------------------------------------------------------------

fn load_stage_corpus(cfg: &PipelineConfig) -> Result<Corpus> {
    let path = corpus_artifact(cfg);
    require_file(&path, "normalized corpus (run `ingest` first)")?;
    Ok(load_corpus(&path, &cfg.corpus_topic)?)
}

fn load_knowledge_tokens(cfg: &PipelineConfig) -> Result<BTreeMap<String, Vec<String>>> {
    let path = knowledge_artifact(cfg);
    require_file(&path, "knowledge documents (run `fetch-kb` first)")?;
    let records: Vec<TweetKnowledge> = read_jsonl(&path)?;
    Ok(records
        .into_iter()
        .map(|r| (r.tweet_id, merged_tokens(&r.docs)))
        .collect())
}

fn load_stage_embeddings(cfg: &PipelineConfig) -> Result<EmbeddingTable> {
    let path = cfg
        .embeddings
        .as_ref()
        .ok_or_else(|| anyhow!("config key paths.embeddings is required for this stage"))?;
    require_file(path, "embedding table")?;
    Ok(load_embeddings(path)?)
}

fn load_stage_mfd(cfg: &PipelineConfig) -> Result<MFDictionary> {
    let path = cfg
        .mfd
        .as_ref()
        .ok_or_else(|| anyhow!("config key paths.mfd is required for this stage"))?;
    require_file(path, "moral foundation dictionary")?;
    Ok(load_mfd(path)?)
}

fn build_linker(cfg: &PipelineConfig, flags: RunFlags) -> Result<Box<dyn Linker>> {
    if let Some(path) = &cfg.linker_fixtures {
        require_file(path, "linker fixture table")?;
        return Ok(Box::new(FixtureLinker::from_path(path)?));
    }
    let endpoint = cfg
        .linker_endpoint
        .clone()
        .ok_or_else(|| anyhow!("no linker configured: set linker.fixtures or linker.endpoint"))?;
    if flags.offline {
        bail!("--offline forbids the remote linker at {endpoint}");
    }
    Ok(Box::new(RemoteLinker::new(RemoteLinkerConfig {
        endpoint,
        api_key: cfg.linker_api_key.clone(),
        cache_dir: cfg.linker_cache_dir.clone(),
        retry: RetryPolicy::default(),
        force_refresh: flags.force,
    })?))
}

fn build_kb(cfg: &PipelineConfig, flags: RunFlags) -> Result<Box<dyn KbClient>> {
    if let Some(path) = &cfg.kb_snapshot {
        require_file(path, "KB snapshot")?;
        return Ok(Box::new(SnapshotKb::from_path(path)?));
    }
    let endpoint = cfg
        .kb_endpoint
        .clone()
        .ok_or_else(|| anyhow!("no KB configured: set kb.snapshot or kb.endpoint"))?;
    if flags.offline {
        bail!("--offline forbids the remote KB at {endpoint}");
    }
    Ok(Box::new(RemoteKb::new(RemoteKbConfig {
        endpoint,
        cache_dir: cfg.kb_cache_dir.clone(),
        retry: RetryPolicy::default(),
        force_refresh: flags.force,
    })?))
}

fn whitelist(cfg: &PipelineConfig) -> PropertyWhitelist {
    match &cfg.kb_whitelist {
        Some(names) => PropertyWhitelist::new(names.iter().cloned()),
        None => PropertyWhitelist::default(),
    }
}

fn experiment_config(cfg: &PipelineConfig, flags: RunFlags) -> ExperimentConfig {
    let mut eval = cfg.eval;
    if let Some(seed) = flags.seed_override {
        eval.master_seed = seed;
    }
    ExperimentConfig {
        eval,
        train: cfg.train.clone(),
        cpmid: cfg.cpmid,
        encoder: cfg.encoder,
    }
}

/// The six trainable classes: five foundations plus Non-moral.
fn trainable_classes() -> Vec<LabelClass> {
    let mut classes: Vec<LabelClass> = Foundation::ALL
        .iter()
        .map(|&f| LabelClass::Foundation(f))
        .collect();
    classes.push(LabelClass::NonMoral);
    classes
}

// -------------------------------------------------------------------
// Stages.
// -------------------------------------------------------------------

/// Normalize the raw corpus and derive missing gold labels from coder
/// votes.
pub fn ingest(cfg: &PipelineConfig, flags: RunFlags) -> Result<()> {
    require_file(&cfg.corpus_path, "raw corpus")?;
    let digest = inputs_digest(&[
        file_input("corpus", &cfg.corpus_path)?,
        ("topic", cfg.corpus_topic.clone()),
    ]);
    let artifact = corpus_artifact(cfg);
    if stage_is_current(
        cfg,
        "ingest",
        &digest,
        std::slice::from_ref(&artifact),
        flags,
    )? {
        println!("ingest: up to date ({})", artifact.display());
        return Ok(());
    }
    let mut corpus = load_corpus(&cfg.corpus_path, &cfg.corpus_topic)?;
    let mut derived = 0usize;
    for annotated in &mut corpus.tweets {
        // Normalization is recomputed from the raw text on ingest.
        let tweet = Tweet::new(annotated.tweet.id.clone(), annotated.tweet.raw_text.clone());
        annotated.tweet = tweet;
        if annotated.gold.is_none() && !annotated.coder_labels.is_empty() {
            annotated.derive_gold()?;
            derived += 1;
        }
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    save_corpus(&corpus, &artifact)?;
    record_stage(cfg, "ingest", &digest)?;
    println!(
        "ingest: {} tweets normalized ({derived} gold labels derived) -> {}",
        corpus.len(),
        artifact.display()
    );
    Ok(())
}

/// Link and refine every tweet against the configured linker.
pub fn link(cfg: &PipelineConfig, flags: RunFlags) -> Result<()> {
    let corpus_path = corpus_artifact(cfg);
    require_file(&corpus_path, "normalized corpus (run `ingest` first)")?;
    let mut inputs = vec![file_input("corpus", &corpus_path)?];
    if let Some(path) = &cfg.linker_fixtures {
        inputs.push(file_input("fixtures", path)?);
    }
    inputs.push((
        "linker_config",
        format!("{:?}|{:?}", cfg.linker, cfg.linker_endpoint),
    ));
    let digest = inputs_digest(&inputs);
    let artifact = annotations_artifact(cfg);
    if stage_is_current(cfg, "link", &digest, std::slice::from_ref(&artifact), flags)? {
        println!("link: up to date ({})", artifact.display());
        return Ok(());
    }
    let corpus = load_stage_corpus(cfg)?;
    let linker = build_linker(cfg, flags)?;
    let refined = refine(&corpus, linker.as_ref(), &cfg.linker)?;
    let total: usize = refined.values().map(Vec::len).sum();
    let lines = corpus.tweets.iter().map(|t| {
        let annotations = refined
            .get(&t.tweet.id)
            .map(|anns| anns.iter().map(AnnotationRecord::from_annotation).collect())
            .unwrap_or_default();
        serde_json::to_string(&TweetAnnotations {
            tweet_id: t.tweet.id.clone(),
            annotations,
        })
        .expect("annotation records serialize")
    });
    write_lines(&artifact, lines)?;
    record_stage(cfg, "link", &digest)?;
    println!(
        "link: {total} annotations across {} tweets -> {}",
        corpus.len(),
        artifact.display()
    );
    Ok(())
}

/// Fetch abstracts and properties for every linked entity and merge them
/// into enrichment documents.
pub fn fetch_kb(cfg: &PipelineConfig, flags: RunFlags) -> Result<()> {
    let annotations_path = annotations_artifact(cfg);
    require_file(&annotations_path, "annotations (run `link` first)")?;
    let mut inputs = vec![file_input("annotations", &annotations_path)?];
    if let Some(path) = &cfg.kb_snapshot {
        inputs.push(file_input("snapshot", path)?);
    }
    inputs.push(("whitelist", format!("{:?}", whitelist(cfg).names)));
    let digest = inputs_digest(&inputs);
    let artifact = knowledge_artifact(cfg);
    if stage_is_current(
        cfg,
        "fetch-kb",
        &digest,
        std::slice::from_ref(&artifact),
        flags,
    )? {
        println!("fetch-kb: up to date ({})", artifact.display());
        return Ok(());
    }
    let records: Vec<TweetAnnotations> = read_jsonl(&annotations_path)?;
    let refined: BTreeMap<String, Vec<EntityAnnotation>> = records
        .into_iter()
        .map(|r| {
            (
                r.tweet_id,
                r.annotations
                    .into_iter()
                    .map(AnnotationRecord::into_annotation)
                    .collect(),
            )
        })
        .collect();
    let kb = build_kb(cfg, flags)?;
    let (docs, diagnostics) = enrich_corpus(&refined, kb.as_ref(), &whitelist(cfg))?;
    for diagnostic in &diagnostics {
        eprintln!("fetch-kb: {diagnostic}");
    }
    let doc_count: usize = docs.values().map(Vec::len).sum();
    let lines = docs.iter().map(|(tweet_id, docs)| {
        serde_json::to_string(&TweetKnowledge {
            tweet_id: tweet_id.clone(),
            docs: docs.clone(),
        })
        .expect("knowledge records serialize")
    });
    write_lines(&artifact, lines)?;
    record_stage(cfg, "fetch-kb", &digest)?;
    println!(
        "fetch-kb: {doc_count} documents for {} tweets ({} misses) -> {}",
        docs.len(),
        diagnostics.len(),
        artifact.display()
    );
    Ok(())
}

/// Rank knowledge words per class by cPMId over the full corpus and
/// persist the top-k lists.
pub fn select_features_stage(cfg: &PipelineConfig, flags: RunFlags) -> Result<()> {
    let corpus_path = corpus_artifact(cfg);
    let knowledge_path = knowledge_artifact(cfg);
    require_file(&corpus_path, "normalized corpus (run `ingest` first)")?;
    require_file(
        &knowledge_path,
        "knowledge documents (run `fetch-kb` first)",
    )?;
    let digest = inputs_digest(&[
        file_input("corpus", &corpus_path)?,
        file_input("knowledge", &knowledge_path)?,
        ("cpmid", format!("{:?}", cfg.cpmid)),
    ]);
    let dir = features_dir(cfg);
    let artifacts: Vec<PathBuf> = trainable_classes()
        .iter()
        .map(|c| dir.join(format!("{}.tsv", c.slug())))
        .collect();
    if stage_is_current(cfg, "select-features", &digest, &artifacts, flags)? {
        println!("select-features: up to date ({})", dir.display());
        return Ok(());
    }
    let corpus = load_stage_corpus(cfg)?;
    let knowledge = load_knowledge_tokens(cfg)?;
    let gold = gold_by_id(&corpus);
    if gold.len() != corpus.len() {
        bail!("feature selection needs gold labels on every tweet");
    }
    std::fs::create_dir_all(&dir)?;
    let mut summary = Vec::new();
    for class in trainable_classes() {
        let path = dir.join(format!("{}.tsv", class.slug()));
        match select_features(&knowledge, &gold, class, &cfg.cpmid) {
            Ok(fs) => {
                save_feature_set(&fs, &path)?;
                summary.push(format!("{}:{}", class.slug(), fs.len()));
            }
            Err(FeatureError::NoPositiveClass { .. }) => {
                // A class with no positive tweets gets an empty list; its
                // classifier is skipped at training time anyway.
                std::fs::write(&path, "")?;
                eprintln!(
                    "select-features: {} has no positive documents, wrote empty list",
                    class.name()
                );
                summary.push(format!("{}:0", class.slug()));
            }
            Err(e) => return Err(e.into()),
        }
    }
    record_stage(cfg, "select-features", &digest)?;
    println!(
        "select-features: {} -> {}",
        summary.join(" "),
        dir.display()
    );
    Ok(())
}

fn load_feature_sets(cfg: &PipelineConfig) -> Result<BTreeMap<LabelClass, FoundationFeatureSet>> {
    let dir = features_dir(cfg);
    let mut out = BTreeMap::new();
    for class in trainable_classes() {
        let path = dir.join(format!("{}.tsv", class.slug()));
        require_file(&path, "feature set (run `select-features` first)")?;
        out.insert(class, load_feature_set(&path, class)?);
    }
    Ok(out)
}

/// Encode knowledge documents as per-class soft term-frequency vectors
/// and tweets as dictionary-category proportions.
pub fn encode(cfg: &PipelineConfig, flags: RunFlags) -> Result<()> {
    let corpus_path = corpus_artifact(cfg);
    let knowledge_path = knowledge_artifact(cfg);
    require_file(&corpus_path, "normalized corpus (run `ingest` first)")?;
    require_file(
        &knowledge_path,
        "knowledge documents (run `fetch-kb` first)",
    )?;
    let embeddings = load_stage_embeddings(cfg)?;
    let mfd = load_stage_mfd(cfg)?;
    let feature_sets = load_feature_sets(cfg)?;
    let mut inputs = vec![
        file_input("corpus", &corpus_path)?,
        file_input("knowledge", &knowledge_path)?,
        ("encoder", format!("{:?}", cfg.encoder)),
    ];
    for (class, fs) in &feature_sets {
        inputs.push((
            "features",
            format!(
                "{}:{}",
                class.slug(),
                fs.features
                    .iter()
                    .map(|(w, s)| format!("{w} {s}"))
                    .collect::<Vec<_>>()
                    .join(",")
            ),
        ));
    }
    let digest = inputs_digest(&inputs);
    let artifact = encoded_artifact(cfg);
    if stage_is_current(
        cfg,
        "encode",
        &digest,
        std::slice::from_ref(&artifact),
        flags,
    )? {
        println!("encode: up to date ({})", artifact.display());
        return Ok(());
    }
    let corpus = load_stage_corpus(cfg)?;
    let knowledge = load_knowledge_tokens(cfg)?;
    let empty: Vec<String> = Vec::new();
    let lines = corpus.tweets.iter().map(|t| {
        let tokens = knowledge.get(&t.tweet.id).unwrap_or(&empty);
        let bk = feature_sets
            .iter()
            .map(|(class, fs)| {
                (
                    class.slug().to_string(),
                    soft_encode(tokens, fs, &embeddings, &cfg.encoder),
                )
            })
            .collect();
        serde_json::to_string(&EncodedTweet {
            tweet_id: t.tweet.id.clone(),
            mfd: mfd_vector(&t.tweet.tokens, &mfd),
            bk,
        })
        .expect("encoded records serialize")
    });
    write_lines(&artifact, lines)?;
    record_stage(cfg, "encode", &digest)?;
    println!("encode: {} tweets -> {}", corpus.len(), artifact.display());
    Ok(())
}

/// Train one classifier per class on the full corpus with up-sampling.
pub fn train_stage(cfg: &PipelineConfig, flags: RunFlags) -> Result<()> {
    let corpus_path = corpus_artifact(cfg);
    let encoded_path = encoded_artifact(cfg);
    require_file(&corpus_path, "normalized corpus (run `ingest` first)")?;
    require_file(&encoded_path, "encoded vectors (run `encode` first)")?;
    let embeddings = load_stage_embeddings(cfg)?;
    let digest = inputs_digest(&[
        file_input("corpus", &corpus_path)?,
        file_input("encoded", &encoded_path)?,
        ("train", format!("{:?}", cfg.train)),
        ("seed", format!("{:?}", flags.seed_override)),
    ]);
    let dir = models_dir(cfg);
    let corpus = load_stage_corpus(cfg)?;
    // Classes with no positive (or no negative) gold labels cannot train;
    // they are skipped with a warning rather than failing the stage.
    let classes: Vec<LabelClass> = trainable_classes()
        .into_iter()
        .filter(|class| {
            let positives = corpus
                .tweets
                .iter()
                .filter(|t| t.gold.map(|g| g.class_flag(*class)).unwrap_or(false))
                .count();
            let trainable = positives > 0 && positives < corpus.len();
            if !trainable {
                eprintln!(
                    "train: skipping {}: {positives} positive of {} tweets",
                    class.name(),
                    corpus.len()
                );
            }
            trainable
        })
        .collect();
    let artifacts: Vec<PathBuf> = classes
        .iter()
        .map(|c| dir.join(format!("{}.model", c.slug())))
        .collect();
    if stage_is_current(cfg, "train", &digest, &artifacts, flags)? {
        println!("train: up to date ({})", dir.display());
        return Ok(());
    }
    let encoded: Vec<EncodedTweet> = read_jsonl(&encoded_path)?;
    let encoded_by_id: BTreeMap<&str, &EncodedTweet> =
        encoded.iter().map(|e| (e.tweet_id.as_str(), e)).collect();
    std::fs::create_dir_all(&dir)?;
    let master_seed = flags.seed_override.unwrap_or(cfg.train.seed);
    for class in classes {
        let rows: Vec<Example> = corpus
            .tweets
            .iter()
            .map(|t| {
                let enc = encoded_by_id
                    .get(t.tweet.id.as_str())
                    .ok_or_else(|| anyhow!("tweet {} missing from encoded file", t.tweet.id))?;
                let gold = t
                    .gold
                    .ok_or_else(|| anyhow!("tweet {} has no gold labels", t.tweet.id))?;
                Ok(Example {
                    features: FeatureRow {
                        tweet: embed_sequence(&t.tweet.tokens, &embeddings),
                        bk: cfg.train.features.bk.then(|| enc.bk[class.slug()].clone()),
                        mfd: cfg.train.features.mfd.then(|| enc.mfd.clone()),
                    },
                    label: gold.class_flag(class),
                })
            })
            .collect::<Result<_>>()?;
        let tag = match class {
            LabelClass::Foundation(f) => f.index() as u64,
            LabelClass::NonMoral => 5,
        };
        let balanced = upsample(&rows, |e| e.label, derive_seed(master_seed, &[10, tag]))?;
        let mut train_cfg = cfg.train.clone();
        train_cfg.seed = derive_seed(master_seed, &[11, tag]);
        let model = train(class, &balanced, &train_cfg)?;
        let path = dir.join(format!("{}.model", class.slug()));
        save_model(&model, &path)?;
        println!(
            "train: {} on {} rows ({} after up-sampling) -> {}",
            class.name(),
            rows.len(),
            balanced.len(),
            path.display()
        );
    }
    record_stage(cfg, "train", &digest)?;
    Ok(())
}

/// Cross-validated experiment matrix; prints the table and writes both
/// report forms.
pub fn evaluate(cfg: &PipelineConfig, flags: RunFlags) -> Result<()> {
    let experiment = experiment_config(cfg, flags);
    let corpus_path = corpus_artifact(cfg);
    let knowledge_path = knowledge_artifact(cfg);
    require_file(&corpus_path, "normalized corpus (run `ingest` first)")?;
    require_file(
        &knowledge_path,
        "knowledge documents (run `fetch-kb` first)",
    )?;
    let mut digest_inputs = vec![
        file_input("corpus", &corpus_path)?,
        file_input("knowledge", &knowledge_path)?,
        ("experiment", format!("{experiment:?}")),
        ("targets", format!("{:?}", cfg.targets)),
        ("feature_sets", format!("{:?}", cfg.feature_sets)),
    ];
    if let Some(path) = &cfg.embeddings {
        digest_inputs.push(file_input("embeddings", path)?);
    }
    if let Some(path) = &cfg.mfd {
        digest_inputs.push(file_input("mfd", path)?);
    }
    let digest = inputs_digest(&digest_inputs);
    let artifacts = [report_table_artifact(cfg), report_machine_artifact(cfg)];
    if stage_is_current(cfg, "evaluate", &digest, &artifacts, flags)? {
        print!("{}", std::fs::read_to_string(&artifacts[0])?);
        println!("evaluate: up to date ({})", artifacts[1].display());
        return Ok(());
    }
    let corpus = load_stage_corpus(cfg)?;
    let knowledge = load_knowledge_tokens(cfg)?;
    let embeddings = load_stage_embeddings(cfg)?;
    let mfd = load_stage_mfd(cfg)?;
    let inputs = ExperimentInputs {
        corpus: &corpus,
        knowledge_tokens: &knowledge,
        embeddings: &embeddings,
        mfd: &mfd,
    };
    let report = run_experiment(&inputs, &cfg.targets, &cfg.feature_sets, &experiment)?;
    for warning in &report.warnings {
        eprintln!("evaluate: warning: {warning}");
    }
    let table = write_table(&report);
    let machine = write_machine_report(&report);
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(report_table_artifact(cfg), &table)?;
    std::fs::write(report_machine_artifact(cfg), &machine)?;
    record_stage(cfg, "evaluate", &digest)?;
    print!("{table}");
    println!(
        "evaluate: {} cells -> {} and {}",
        report.rows.len(),
        report_table_artifact(cfg).display(),
        report_machine_artifact(cfg).display()
    );
    Ok(())
}

#[derive(Serialize)]
struct PredictOutput {
    #[serde(flatten)]
    labels: LabelSet,
    #[serde(skip_serializing_if = "Option::is_none")]
    non_moral_model: Option<bool>,
}

/// Classify raw text lines from stdin: one JSON label set per line.
pub fn predict_lines(
    cfg: &PipelineConfig,
    flags: RunFlags,
    input: impl BufRead,
    mut output: impl Write,
) -> Result<usize> {
    let embeddings = load_stage_embeddings(cfg)?;
    let mfd = load_stage_mfd(cfg)?;
    let feature_sets = load_feature_sets(cfg)?;
    let dir = models_dir(cfg);
    let mut models = BTreeMap::new();
    for f in Foundation::ALL {
        let path = dir.join(format!("{}.model", f.slug()));
        require_file(&path, "trained model (run `train` first)")?;
        models.insert(f, load_model(&path)?);
    }
    let nonmoral_path = dir.join("non_moral.model");
    let nonmoral_model: Option<ClassifierModel> = if nonmoral_path.is_file() {
        Some(load_model(&nonmoral_path)?)
    } else {
        None
    };
    let linker = build_linker(cfg, flags)?;
    let kb = build_kb(cfg, flags)?;

    // All stdin lines form one mini-corpus so cross-document propagation
    // can repair low-confidence links within the batch.
    let mut tweets = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        tweets.push(mft_core::corpus::AnnotatedTweet::new(Tweet::new(
            format!("stdin-{idx}"),
            line,
        )));
    }
    let corpus = Corpus::new("stdin", tweets)?;
    let refined = refine(&corpus, linker.as_ref(), &cfg.linker)?;
    let (docs, _) = enrich_corpus(&refined, kb.as_ref(), &whitelist(cfg))?;

    let mut count = 0usize;
    for annotated in &corpus.tweets {
        let tweet = &annotated.tweet;
        let knowledge: Vec<String> = docs
            .get(&tweet.id)
            .map(|d| merged_tokens(d))
            .unwrap_or_default();
        let build_row = |class: LabelClass, model: &ClassifierModel| -> FeatureRow {
            FeatureRow {
                tweet: embed_sequence(&tweet.tokens, &embeddings),
                bk: model.config.features.bk.then(|| {
                    soft_encode(&knowledge, &feature_sets[&class], &embeddings, &cfg.encoder)
                }),
                mfd: model
                    .config
                    .features
                    .mfd
                    .then(|| mfd_vector(&tweet.tokens, &mfd)),
            }
        };
        let rows: BTreeMap<Foundation, FeatureRow> = Foundation::ALL
            .iter()
            .map(|&f| (f, build_row(LabelClass::Foundation(f), &models[&f])))
            .collect();
        let nm_row = nonmoral_model
            .as_ref()
            .map(|m| build_row(LabelClass::NonMoral, m));
        let prediction: Prediction =
            predict(&models, &rows, nonmoral_model.as_ref().zip(nm_row.as_ref()))?;
        let record = PredictOutput {
            labels: prediction.labels,
            non_moral_model: prediction.nonmoral_model,
        };
        writeln!(
            output,
            "{}",
            serde_json::to_string(&record).expect("prediction serializes")
        )?;
        count += 1;
    }
    Ok(count)
}

/// Per-class PABAK between two coder columns.
pub fn agreement(cfg: &PipelineConfig, coder_a: usize, coder_b: usize) -> Result<()> {
    let corpus = load_stage_corpus(cfg)?;
    for class in LabelClass::ALL {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for t in &corpus.tweets {
            let labels = &t.coder_labels;
            if coder_a >= labels.len() || coder_b >= labels.len() {
                bail!(
                    "tweet {} has {} coder columns, need {} and {}",
                    t.tweet.id,
                    labels.len(),
                    coder_a,
                    coder_b
                );
            }
            a.push(labels[coder_a].class_flag(class));
            b.push(labels[coder_b].class_flag(class));
        }
        let kappa = pabak(&a, &b)?;
        println!("{}\t{kappa:.4}", class.name());
    }
    Ok(())
}

/// Gold-label class statistics, mirroring the data-set table layout.
pub fn stats(cfg: &PipelineConfig) -> Result<()> {
    let corpus = load_stage_corpus(cfg)?;
    println!(
        "{:<22}{:>9}{:>10}{:>10}",
        "Class", "Positive", "Negative", "Pos:Neg"
    );
    for class in LabelClass::ALL {
        let s = class_stats(&corpus, class)?;
        let ratio = if s.ratio.is_infinite() {
            "inf".to_string()
        } else {
            format!("{:.2}", s.ratio)
        };
        println!(
            "{:<22}{:>9}{:>10}{:>10}",
            class.name(),
            s.positive,
            s.negative,
            ratio
        );
    }
    Ok(())
}
