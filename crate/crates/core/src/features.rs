//! Word embeddings, the moral-foundation dictionary, and the knowledge
//! feature machinery: cPMId word selection and soft term-frequency
//! encoding.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader};
use std::path::Path;

use thiserror::Error;

use crate::corpus::{Foundation, LabelClass, LabelSet};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("vector length mismatch ({a} vs {b})")]
    LengthMismatch { a: usize, b: usize },
    #[error("word {word:?} not in corpus")]
    WordNotInCorpus { word: String },
    #[error("no positive class for {class}")]
    NoPositiveClass { class: String },
    #[error("invalid cPMId config: {0}")]
    InvalidConfig(String),
}

/// An exact-match lookup table of word vectors, all of one dimension.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> EmbeddingTable {
        EmbeddingTable {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn from_entries(
        dim: usize,
        entries: impl IntoIterator<Item = (String, Vec<f64>)>,
    ) -> Result<EmbeddingTable, FeatureError> {
        let mut table = EmbeddingTable::new(dim);
        for (word, vector) in entries {
            table.insert(word, vector)?;
        }
        Ok(table)
    }

    pub fn insert(&mut self, word: String, vector: Vec<f64>) -> Result<(), FeatureError> {
        if vector.len() != self.dim {
            return Err(FeatureError::LengthMismatch {
                a: vector.len(),
                b: self.dim,
            });
        }
        self.vectors.insert(word, vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Exact-match lookup on the stored word string.
    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    /// Lookup trying the original case first, then lowercase. Pretrained
    /// tables are case-sensitive; tweets are not.
    pub fn get_ci(&self, word: &str) -> Option<&[f64]> {
        self.get(word)
            .or_else(|| self.get(word.to_lowercase().as_str()))
    }
}

/// Load an embedding table: a `V D` header line, then `V` lines of
/// `word v1 .. vD`.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable, FeatureError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| FeatureError::Io {
        path: display.clone(),
        source,
    })?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let parse_err = |line: usize, message: String| FeatureError::Parse {
        path: display.clone(),
        line,
        message,
    };

    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file, expected 'V D' header".into()))?;
    let header = header.map_err(|source| FeatureError::Io {
        path: display.clone(),
        source,
    })?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 2 {
        return Err(parse_err(
            1,
            format!("expected 'V D' header, got {header:?}"),
        ));
    }
    let vocab: usize = parts[0]
        .parse()
        .map_err(|e| parse_err(1, format!("bad vocabulary size: {e}")))?;
    let dim: usize = parts[1]
        .parse()
        .map_err(|e| parse_err(1, format!("bad dimension: {e}")))?;

    let mut table = EmbeddingTable::new(dim);
    let mut count = 0usize;
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(|source| FeatureError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let word = fields
            .next()
            .ok_or_else(|| parse_err(line_no, "missing word".into()))?;
        let values: Vec<f64> = fields
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|e| parse_err(line_no, format!("bad float {v:?}: {e}")))
            })
            .collect::<Result<_, _>>()?;
        if values.len() != dim {
            return Err(parse_err(
                line_no,
                format!("expected {dim} values, found {}", values.len()),
            ));
        }
        if table.get(word).is_some() {
            return Err(parse_err(line_no, format!("duplicate word {word:?}")));
        }
        table
            .insert(word.to_owned(), values)
            .expect("length checked");
        count += 1;
    }
    if count != vocab {
        return Err(parse_err(
            1,
            format!("header declares {vocab} entries, file has {count}"),
        ));
    }
    Ok(table)
}

/// Token embeddings for a tweet, skipping out-of-vocabulary tokens. An
/// all-OOV tweet yields a single zero vector so sequence models stay total.
pub fn embed_sequence(tokens: &[String], table: &EmbeddingTable) -> Vec<Vec<f64>> {
    let seq: Vec<Vec<f64>> = tokens
        .iter()
        .filter_map(|t| table.get_ci(t).map(<[f64]>::to_vec))
        .collect();
    if seq.is_empty() {
        vec![vec![0.0; table.dim()]]
    } else {
        seq
    }
}

/// Mean of the in-vocabulary token embeddings (zero vector when all OOV).
pub fn mean_embedding(tokens: &[String], table: &EmbeddingTable) -> Vec<f64> {
    let mut sum = vec![0.0; table.dim()];
    let mut n = 0usize;
    for t in tokens {
        if let Some(v) = table.get_ci(t) {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
            n += 1;
        }
    }
    if n > 0 {
        for s in &mut sum {
            *s /= n as f64;
        }
    }
    sum
}

/// Word/stem lexicon grouped into categories. A pattern ending in `*`
/// matches any token with that prefix.
#[derive(Clone, Debug)]
pub struct MFDictionary {
    categories: Vec<String>,
    /// (pattern, category index); patterns stored lowercase.
    entries: Vec<(String, usize)>,
}

impl MFDictionary {
    pub fn new(
        entries: impl IntoIterator<Item = (String, String)>,
    ) -> Result<MFDictionary, FeatureError> {
        let mut categories: Vec<String> = Vec::new();
        let mut indexed = Vec::new();
        for (pattern, category) in entries {
            if pattern.is_empty() {
                return Err(FeatureError::InvalidConfig("empty pattern".into()));
            }
            let idx = match categories.iter().position(|c| *c == category) {
                Some(i) => i,
                None => {
                    categories.push(category);
                    categories.len() - 1
                }
            };
            indexed.push((pattern.to_lowercase(), idx));
        }
        Ok(MFDictionary {
            categories,
            entries: indexed,
        })
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn token_matches(token: &str, pattern: &str) -> bool {
        match pattern.strip_suffix('*') {
            Some(stem) => token.starts_with(stem),
            None => token == pattern,
        }
    }

    /// Category indices whose patterns match the (lowercased) token.
    fn matching_categories(&self, token: &str) -> BTreeSet<usize> {
        self.entries
            .iter()
            .filter(|(p, _)| Self::token_matches(token, p))
            .map(|&(_, c)| c)
            .collect()
    }
}

/// Load a dictionary from `pattern<TAB>category` lines; the category list
/// comes from file order.
pub fn load_mfd(path: impl AsRef<Path>) -> Result<MFDictionary, FeatureError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| FeatureError::Io {
        path: display.clone(),
        source,
    })?;
    let mut entries = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| FeatureError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.splitn(2, '\t');
        let pattern = parts.next().unwrap_or_default().trim();
        let category = parts.next().map(str::trim).unwrap_or_default();
        if pattern.is_empty() || category.is_empty() {
            return Err(FeatureError::Parse {
                path: display.clone(),
                line: line_no,
                message: format!("expected 'pattern<TAB>category', got {line:?}"),
            });
        }
        entries.push((pattern.to_owned(), category.to_owned()));
    }
    MFDictionary::new(entries)
}

/// Proportion of tokens falling in each dictionary category. Matching is
/// case-insensitive; each token counts at most once per category.
pub fn mfd_vector(tokens: &[String], dict: &MFDictionary) -> Vec<f64> {
    let mut counts = vec![0usize; dict.categories.len()];
    for token in tokens {
        let lower = token.to_lowercase();
        for c in dict.matching_categories(&lower) {
            counts[c] += 1;
        }
    }
    let denom = tokens.len().max(1) as f64;
    counts.iter().map(|&c| c as f64 / denom).collect()
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, FeatureError> {
    if u.len() != v.len() {
        return Err(FeatureError::LengthMismatch {
            a: u.len(),
            b: v.len(),
        });
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        Ok(0.0)
    } else {
        Ok(dot / (nu * nv))
    }
}

/// Settings for cPMId ranking: the significance parameter `delta`, the
/// number of features to keep, and the minimum document frequency.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CpmidConfig {
    pub delta: f64,
    pub k: usize,
    pub min_df: usize,
}

impl Default for CpmidConfig {
    fn default() -> CpmidConfig {
        CpmidConfig {
            delta: 0.9,
            k: 100,
            min_df: 2,
        }
    }
}

impl CpmidConfig {
    /// `delta` must lie in (0, 1]; at exactly 1 the significance
    /// correction vanishes and the score reduces to plain document PMI.
    pub fn validate(&self) -> Result<(), FeatureError> {
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(FeatureError::InvalidConfig(format!(
                "delta must be in (0, 1], got {}",
                self.delta
            )));
        }
        if self.k == 0 {
            return Err(FeatureError::InvalidConfig("k must be >= 1".into()));
        }
        Ok(())
    }
}

/// cPMId from document counts: `log2(d_wf / (d_w * d_f / d + sqrt(d_w) *
/// sqrt(ln(1/delta) / 2)))`. `d_wf == 0` yields `-inf`.
pub fn cpmid_from_counts(d_wf: usize, d_w: usize, d_f: usize, d: usize, delta: f64) -> f64 {
    if d_wf == 0 {
        return f64::NEG_INFINITY;
    }
    let expected = d_w as f64 * d_f as f64 / d as f64;
    let correction = (d_w as f64).sqrt() * ((1.0 / delta).ln() / 2.0).sqrt();
    (d_wf as f64 / (expected + correction)).log2()
}

/// Document-level PMI with corpus-level significance for one word against
/// the positive flag of the given documents. Membership tests are
/// case-insensitive.
pub fn cpmid(
    word: &str,
    docs: &[(Vec<String>, bool)],
    cfg: &CpmidConfig,
) -> Result<f64, FeatureError> {
    cfg.validate()?;
    let needle = word.to_lowercase();
    let mut d_w = 0usize;
    let mut d_f = 0usize;
    let mut d_wf = 0usize;
    for (tokens, positive) in docs {
        let contains = tokens.iter().any(|t| t.to_lowercase() == needle);
        if contains {
            d_w += 1;
        }
        if *positive {
            d_f += 1;
        }
        if contains && *positive {
            d_wf += 1;
        }
    }
    if d_w == 0 {
        return Err(FeatureError::WordNotInCorpus {
            word: word.to_owned(),
        });
    }
    Ok(cpmid_from_counts(d_wf, d_w, d_f, docs.len(), cfg.delta))
}

/// The top-ranked knowledge words for one class, descending by score.
#[derive(Clone, Debug, PartialEq)]
pub struct FoundationFeatureSet {
    pub class: LabelClass,
    /// `(word, cpmid_score)` with unique lowercase words, descending
    /// score, ties broken lexicographically.
    pub features: Vec<(String, f64)>,
}

impl FoundationFeatureSet {
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|(w, _)| w.as_str())
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Rank every eligible knowledge word by cPMId against one class and keep
/// the top `k`.
///
/// Each tweet contributes one document: the concatenation of its knowledge
/// tokens. A document is positive when the tweet's gold flag for the class
/// is set. Words in fewer than `min_df` documents, or co-occurring with no
/// positive document, are excluded.
pub fn select_features(
    docs_per_tweet: &BTreeMap<String, Vec<String>>,
    gold: &BTreeMap<String, LabelSet>,
    class: LabelClass,
    cfg: &CpmidConfig,
) -> Result<FoundationFeatureSet, FeatureError> {
    cfg.validate()?;
    let d = docs_per_tweet.len();
    let mut d_f = 0usize;
    let mut d_w: BTreeMap<String, usize> = BTreeMap::new();
    let mut d_wf: BTreeMap<String, usize> = BTreeMap::new();
    for (tweet_id, tokens) in docs_per_tweet {
        let positive = gold
            .get(tweet_id)
            .map(|g| g.class_flag(class))
            .unwrap_or(false);
        if positive {
            d_f += 1;
        }
        let distinct: BTreeSet<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
        for word in distinct {
            *d_w.entry(word.clone()).or_insert(0) += 1;
            if positive {
                *d_wf.entry(word).or_insert(0) += 1;
            }
        }
    }
    if d_f == 0 {
        return Err(FeatureError::NoPositiveClass {
            class: class.name().to_owned(),
        });
    }
    let mut scored: Vec<(String, f64)> = d_w
        .iter()
        .filter(|&(_, &df)| df >= cfg.min_df)
        .filter_map(|(word, &df)| {
            let wf = d_wf.get(word).copied().unwrap_or(0);
            if wf == 0 {
                return None;
            }
            Some((word.clone(), cpmid_from_counts(wf, df, d_f, d, cfg.delta)))
        })
        .collect();
    scored.sort_by(|(wa, sa), (wb, sb)| {
        sb.partial_cmp(sa)
            .expect("cPMId scores are finite")
            .then_with(|| wa.cmp(wb))
    });
    scored.truncate(cfg.k);
    Ok(FoundationFeatureSet {
        class,
        features: scored,
    })
}

/// Cosine threshold for the soft encoder.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SoftEncoderConfig {
    pub theta: f64,
}

impl Default for SoftEncoderConfig {
    fn default() -> SoftEncoderConfig {
        SoftEncoderConfig { theta: 0.6 }
    }
}

/// Soft term-frequency vector: component `i` counts the tokens whose
/// embedding cosine to feature word `i` reaches `theta`. Exact string
/// equality counts even when either word has no embedding; other tokens
/// without an embedding contribute nothing.
pub fn soft_encode(
    tokens: &[String],
    fs: &FoundationFeatureSet,
    emb: &EmbeddingTable,
    cfg: &SoftEncoderConfig,
) -> Vec<f64> {
    let feature_vecs: Vec<Option<&[f64]>> =
        fs.features.iter().map(|(w, _)| emb.get_ci(w)).collect();
    let mut out = vec![0.0; fs.features.len()];
    for token in tokens {
        let lower = token.to_lowercase();
        let token_vec = emb.get_ci(token);
        for (i, (word, _)) in fs.features.iter().enumerate() {
            let exact = lower == *word;
            let similar = match (feature_vecs[i], token_vec) {
                (Some(u), Some(v)) => {
                    cosine(u, v).expect("table vectors share one dimension") >= cfg.theta
                }
                _ => false,
            };
            if exact || similar {
                out[i] += 1.0;
            }
        }
    }
    out
}

/// Persist a feature set as `word<TAB>score` lines.
pub fn save_feature_set(
    fs: &FoundationFeatureSet,
    path: impl AsRef<Path>,
) -> Result<(), FeatureError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut out = String::new();
    for (word, score) in &fs.features {
        out.push_str(&format!("{word}\t{score}\n"));
    }
    std::fs::write(path, out).map_err(|source| FeatureError::Io {
        path: display,
        source,
    })
}

/// Load a feature set written by [`save_feature_set`].
pub fn load_feature_set(
    path: impl AsRef<Path>,
    class: LabelClass,
) -> Result<FoundationFeatureSet, FeatureError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| FeatureError::Io {
        path: display.clone(),
        source,
    })?;
    let mut features = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| FeatureError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(2, '\t');
        let word = parts.next().unwrap_or_default();
        let score: f64 =
            parts
                .next()
                .unwrap_or_default()
                .parse()
                .map_err(|e| FeatureError::Parse {
                    path: display.clone(),
                    line: idx + 1,
                    message: format!("bad score: {e}"),
                })?;
        features.push((word.to_owned(), score));
    }
    Ok(FoundationFeatureSet { class, features })
}

/// Convenience: gold labels keyed by tweet id, for feature selection.
pub fn gold_by_id(corpus: &crate::corpus::Corpus) -> BTreeMap<String, LabelSet> {
    corpus
        .tweets
        .iter()
        .filter_map(|t| t.gold.map(|g| (t.tweet.id.clone(), g)))
        .collect()
}

/// Stable foundation for tests that need one.
pub fn default_class() -> LabelClass {
    LabelClass::Foundation(Foundation::CareHarm)
}
