//! Tweet data model, text normalization, gold-label construction, and
//! inter-annotator agreement.
//!
//! A corpus is a set of short texts on one topic, each carrying per-coder
//! label sets and an optional gold label set obtained by majority vote.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The five moral foundations, in the stable order used wherever an index
/// is needed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Foundation {
    CareHarm,
    FairnessCheating,
    LoyaltyBetrayal,
    AuthoritySubversion,
    PurityDegradation,
}

impl Foundation {
    pub const ALL: [Foundation; 5] = [
        Foundation::CareHarm,
        Foundation::FairnessCheating,
        Foundation::LoyaltyBetrayal,
        Foundation::AuthoritySubversion,
        Foundation::PurityDegradation,
    ];

    /// Position in the stable order.
    pub fn index(self) -> usize {
        match self {
            Foundation::CareHarm => 0,
            Foundation::FairnessCheating => 1,
            Foundation::LoyaltyBetrayal => 2,
            Foundation::AuthoritySubversion => 3,
            Foundation::PurityDegradation => 4,
        }
    }

    /// Human-readable name, e.g. `Care/Harm`.
    pub fn name(self) -> &'static str {
        match self {
            Foundation::CareHarm => "Care/Harm",
            Foundation::FairnessCheating => "Fairness/Cheating",
            Foundation::LoyaltyBetrayal => "Loyalty/Betrayal",
            Foundation::AuthoritySubversion => "Authority/Subversion",
            Foundation::PurityDegradation => "Purity/Degradation",
        }
    }

    /// File- and key-safe identifier, e.g. `care_harm`.
    pub fn slug(self) -> &'static str {
        match self {
            Foundation::CareHarm => "care_harm",
            Foundation::FairnessCheating => "fairness_cheating",
            Foundation::LoyaltyBetrayal => "loyalty_betrayal",
            Foundation::AuthoritySubversion => "authority_subversion",
            Foundation::PurityDegradation => "purity_degradation",
        }
    }

    pub fn from_slug(s: &str) -> Option<Foundation> {
        Foundation::ALL.iter().copied().find(|f| f.slug() == s)
    }
}

impl fmt::Display for Foundation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A binary class a tweet can be evaluated against: one of the five
/// foundations, or the Non-moral class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LabelClass {
    Foundation(Foundation),
    NonMoral,
}

impl LabelClass {
    pub const ALL: [LabelClass; 6] = [
        LabelClass::Foundation(Foundation::CareHarm),
        LabelClass::Foundation(Foundation::FairnessCheating),
        LabelClass::Foundation(Foundation::LoyaltyBetrayal),
        LabelClass::Foundation(Foundation::AuthoritySubversion),
        LabelClass::Foundation(Foundation::PurityDegradation),
        LabelClass::NonMoral,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LabelClass::Foundation(f) => f.name(),
            LabelClass::NonMoral => "Non-moral",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            LabelClass::Foundation(f) => f.slug(),
            LabelClass::NonMoral => "non_moral",
        }
    }

    pub fn from_slug(s: &str) -> Option<LabelClass> {
        if s == "non_moral" {
            return Some(LabelClass::NonMoral);
        }
        Foundation::from_slug(s).map(LabelClass::Foundation)
    }
}

impl fmt::Display for LabelClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One coder's (or the gold) binary judgment per class.
///
/// Coder-supplied sets may mark a foundation and `non_moral` at the same
/// time; such sets are accepted as-is and only flagged by
/// [`LabelSet::is_consistent`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelSet {
    #[serde(default)]
    pub care_harm: bool,
    #[serde(default)]
    pub fairness_cheating: bool,
    #[serde(default)]
    pub loyalty_betrayal: bool,
    #[serde(default)]
    pub authority_subversion: bool,
    #[serde(default)]
    pub purity_degradation: bool,
    #[serde(default)]
    pub non_moral: bool,
}

impl LabelSet {
    pub fn get(&self, f: Foundation) -> bool {
        match f {
            Foundation::CareHarm => self.care_harm,
            Foundation::FairnessCheating => self.fairness_cheating,
            Foundation::LoyaltyBetrayal => self.loyalty_betrayal,
            Foundation::AuthoritySubversion => self.authority_subversion,
            Foundation::PurityDegradation => self.purity_degradation,
        }
    }

    pub fn set(&mut self, f: Foundation, value: bool) {
        match f {
            Foundation::CareHarm => self.care_harm = value,
            Foundation::FairnessCheating => self.fairness_cheating = value,
            Foundation::LoyaltyBetrayal => self.loyalty_betrayal = value,
            Foundation::AuthoritySubversion => self.authority_subversion = value,
            Foundation::PurityDegradation => self.purity_degradation = value,
        }
    }

    /// Flag for a [`LabelClass`]: the foundation flag, or `non_moral`.
    pub fn class_flag(&self, class: LabelClass) -> bool {
        match class {
            LabelClass::Foundation(f) => self.get(f),
            LabelClass::NonMoral => self.non_moral,
        }
    }

    pub fn set_class_flag(&mut self, class: LabelClass, value: bool) {
        match class {
            LabelClass::Foundation(f) => self.set(f, value),
            LabelClass::NonMoral => self.non_moral = value,
        }
    }

    /// The five foundation flags in stable order.
    pub fn foundation_flags(&self) -> [bool; 5] {
        [
            self.care_harm,
            self.fairness_cheating,
            self.loyalty_betrayal,
            self.authority_subversion,
            self.purity_degradation,
        ]
    }

    pub fn any_foundation(&self) -> bool {
        self.foundation_flags().iter().any(|&b| b)
    }

    /// True when `non_moral` agrees with the derive-by-rule value.
    pub fn is_consistent(&self) -> bool {
        self.non_moral == derive_non_moral(self)
    }
}

/// True iff all five foundation flags are false.
pub fn derive_non_moral(labels: &LabelSet) -> bool {
    !labels.any_foundation()
}

/// One text record. `clean_text` is the normalized form of `raw_text` and
/// `tokens` its whitespace split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tweet {
    pub id: String,
    pub raw_text: String,
    pub clean_text: String,
    pub tokens: Vec<String>,
}

impl Tweet {
    pub fn new(id: impl Into<String>, raw_text: impl Into<String>) -> Tweet {
        let raw_text = raw_text.into();
        let clean_text = normalize_text(&raw_text);
        let tokens = tokenize(&clean_text);
        Tweet {
            id: id.into(),
            raw_text,
            clean_text,
            tokens,
        }
    }

    /// Build a tweet from a pre-normalized text, keeping the stored clean
    /// form instead of recomputing it.
    pub fn with_clean(
        id: impl Into<String>,
        raw_text: impl Into<String>,
        clean_text: impl Into<String>,
    ) -> Tweet {
        let clean_text = clean_text.into();
        let tokens = tokenize(&clean_text);
        Tweet {
            id: id.into(),
            raw_text: raw_text.into(),
            clean_text,
            tokens,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotatedTweet {
    pub tweet: Tweet,
    pub coder_labels: Vec<LabelSet>,
    pub gold: Option<LabelSet>,
}

impl AnnotatedTweet {
    pub fn new(tweet: Tweet) -> AnnotatedTweet {
        AnnotatedTweet {
            tweet,
            coder_labels: Vec::new(),
            gold: None,
        }
    }

    /// Set `gold` to the majority vote of the coder labels.
    pub fn derive_gold(&mut self) -> Result<(), CorpusError> {
        self.gold = Some(majority_vote(&self.coder_labels)?);
        Ok(())
    }
}

/// An ordered set of annotated tweets on one topic. Tweet ids are unique.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub topic: String,
    pub tweets: Vec<AnnotatedTweet>,
}

impl Corpus {
    pub fn new(
        topic: impl Into<String>,
        tweets: Vec<AnnotatedTweet>,
    ) -> Result<Corpus, CorpusError> {
        let mut seen = BTreeSet::new();
        for t in &tweets {
            if !seen.insert(t.tweet.id.clone()) {
                return Err(CorpusError::DuplicateId {
                    id: t.tweet.id.clone(),
                });
            }
        }
        Ok(Corpus {
            topic: topic.into(),
            tweets,
        })
    }

    pub fn len(&self) -> usize {
        self.tweets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tweets.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&AnnotatedTweet> {
        self.tweets.iter().find(|t| t.tweet.id == id)
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("no coders")]
    NoCoders,
    #[error("rater vectors have different lengths ({a} vs {b})")]
    LengthMismatch { a: usize, b: usize },
    #[error("empty rater vectors")]
    EmptyRatings,
    #[error("missing gold labels on tweets: {}", ids.join(", "))]
    MissingGold { ids: Vec<String> },
    #[error("duplicate tweet id {id:?}")]
    DuplicateId { id: String },
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
}

/// Strip mentions, URLs, and punctuation from a raw tweet.
///
/// `@handle` becomes the literal token `AT_USER`, URLs (any `scheme://` or
/// `www.` run up to the next whitespace) are removed, `#` is dropped with
/// the tag word kept, every other non-alphanumeric non-underscore character
/// is removed, and whitespace runs collapse to single spaces. Idempotent.
pub fn normalize_text(raw: &str) -> String {
    let chars: Vec<char> = raw.chars().collect();
    let mut out = String::with_capacity(raw.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            out.push(' ');
            i += 1;
            continue;
        }
        if let Some(end) = url_end(&chars, i) {
            i = end;
            continue;
        }
        if c == '@' && i + 1 < chars.len() && is_handle_char(chars[i + 1]) {
            i += 1;
            while i < chars.len() && is_handle_char(chars[i]) {
                i += 1;
            }
            out.push_str("AT_USER");
            continue;
        }
        if c.is_alphanumeric() || c == '_' {
            out.push(c);
        }
        // '#' and all other punctuation fall through and are dropped.
        i += 1;
    }
    let mut collapsed = String::with_capacity(out.len());
    for (n, word) in out.split_whitespace().enumerate() {
        if n > 0 {
            collapsed.push(' ');
        }
        collapsed.push_str(word);
    }
    collapsed
}

fn is_handle_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// If a URL starts at `start`, return the index one past its end (the next
/// whitespace or end of input).
fn url_end(chars: &[char], start: usize) -> Option<usize> {
    let scheme = {
        let mut j = start;
        while j < chars.len() && chars[j].is_ascii_alphabetic() {
            j += 1;
        }
        j > start
            && chars[j..].starts_with(&[':', '/', '/'])
            && (start == 0 || !chars[start - 1].is_ascii_alphabetic())
    };
    let www = chars[start..].len() >= 4
        && chars[start..start + 3]
            .iter()
            .all(|&c| c == 'w' || c == 'W')
        && chars[start + 3] == '.'
        && (start == 0 || !chars[start - 1].is_alphanumeric());
    if !scheme && !www {
        return None;
    }
    let mut end = start;
    while end < chars.len() && !chars[end].is_whitespace() {
        end += 1;
    }
    Some(end)
}

/// Maximal non-whitespace runs, in order.
pub fn tokenize(clean: &str) -> Vec<String> {
    clean.split_whitespace().map(str::to_owned).collect()
}

/// Per-class strict majority over the coders' label sets. With an even
/// coder count a tie resolves to `false`.
pub fn majority_vote(coder_labels: &[LabelSet]) -> Result<LabelSet, CorpusError> {
    if coder_labels.is_empty() {
        return Err(CorpusError::NoCoders);
    }
    let n = coder_labels.len();
    let mut gold = LabelSet::default();
    for class in LabelClass::ALL {
        let votes = coder_labels.iter().filter(|l| l.class_flag(class)).count();
        gold.set_class_flag(class, 2 * votes > n);
    }
    Ok(gold)
}

/// Prevalence-adjusted bias-adjusted kappa for two raters' binary
/// judgments: `2 * observed_agreement - 1`.
pub fn pabak(a: &[bool], b: &[bool]) -> Result<f64, CorpusError> {
    if a.len() != b.len() {
        return Err(CorpusError::LengthMismatch {
            a: a.len(),
            b: b.len(),
        });
    }
    if a.is_empty() {
        return Err(CorpusError::EmptyRatings);
    }
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count();
    let p_o = agree as f64 / a.len() as f64;
    Ok(2.0 * p_o - 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassStats {
    pub positive: usize,
    pub negative: usize,
    /// `positive / negative`, or `+inf` when there are no negatives.
    pub ratio: f64,
}

/// Positive/negative gold counts for one class. Every tweet must carry
/// gold labels.
pub fn class_stats(corpus: &Corpus, class: LabelClass) -> Result<ClassStats, CorpusError> {
    let missing: Vec<String> = corpus
        .tweets
        .iter()
        .filter(|t| t.gold.is_none())
        .map(|t| t.tweet.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(CorpusError::MissingGold { ids: missing });
    }
    let positive = corpus
        .tweets
        .iter()
        .filter(|t| t.gold.expect("checked above").class_flag(class))
        .count();
    let negative = corpus.len() - positive;
    let ratio = if negative > 0 {
        positive as f64 / negative as f64
    } else {
        f64::INFINITY
    };
    Ok(ClassStats {
        positive,
        negative,
        ratio,
    })
}

/// On-disk record: one flat JSON object per line.
#[derive(Serialize, Deserialize)]
struct TweetRecord {
    id: String,
    raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    clean_text: Option<String>,
    #[serde(default)]
    coder_labels: Vec<LabelSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold: Option<LabelSet>,
}

/// Load a corpus from a line-delimited record file. The topic is not part
/// of the file format and is supplied by the caller.
pub fn load_corpus(path: impl AsRef<Path>, topic: &str) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: display.clone(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut tweets = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TweetRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            path: display.clone(),
            line: line_no,
            message: e.to_string(),
        })?;
        if !seen.insert(record.id.clone()) {
            return Err(CorpusError::Parse {
                path: display.clone(),
                line: line_no,
                message: format!("duplicate tweet id {:?}", record.id),
            });
        }
        let tweet = match record.clean_text {
            Some(clean) => Tweet::with_clean(record.id, record.raw_text, clean),
            None => Tweet::new(record.id, record.raw_text),
        };
        tweets.push(AnnotatedTweet {
            tweet,
            coder_labels: record.coder_labels,
            gold: record.gold,
        });
    }
    Corpus::new(topic, tweets)
}

/// Save a corpus as line-delimited records. The normalized text is always
/// written so a reload parses to an equal value.
pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = std::fs::File::create(path).map_err(|source| CorpusError::Io {
        path: display.clone(),
        source,
    })?;
    let mut writer = BufWriter::new(file);
    for t in &corpus.tweets {
        let record = TweetRecord {
            id: t.tweet.id.clone(),
            raw_text: t.tweet.raw_text.clone(),
            clean_text: Some(t.tweet.clean_text.clone()),
            coder_labels: t.coder_labels.clone(),
            gold: t.gold,
        };
        let json = serde_json::to_string(&record).expect("record serialization cannot fail");
        writeln!(writer, "{json}").map_err(|source| CorpusError::Io {
            path: display.clone(),
            source,
        })?;
    }
    writer.flush().map_err(|source| CorpusError::Io {
        path: display,
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(flags: [bool; 5], non_moral: bool) -> LabelSet {
        LabelSet {
            care_harm: flags[0],
            fairness_cheating: flags[1],
            loyalty_betrayal: flags[2],
            authority_subversion: flags[3],
            purity_degradation: flags[4],
            non_moral,
        }
    }

    #[test]
    fn normalize_strips_mentions_urls_and_punctuation() {
        assert_eq!(
            normalize_text("I maintain a profound respect for @govchristie #newjersey!"),
            "I maintain a profound respect for AT_USER newjersey"
        );
        assert_eq!(normalize_text(""), "");
        assert_eq!(
            normalize_text("God bless these men Truly touched"),
            "God bless these men Truly touched"
        );
    }

    #[test]
    fn normalize_removes_urls() {
        assert_eq!(normalize_text("look http://t.co/abc123 now"), "look now");
        assert_eq!(normalize_text("see:https://example.com/x?y=1"), "see");
        assert_eq!(normalize_text("at www.example.com today"), "at today");
        // "www." embedded in a word is not a URL
        assert_eq!(normalize_text("awww. so cute"), "awww so cute");
    }

    #[test]
    fn normalize_collapses_whitespace() {
        assert_eq!(normalize_text("  a\t\tb \n c  "), "a b c");
    }

    #[test]
    fn normalize_keeps_underscores_and_case() {
        assert_eq!(
            normalize_text("AT_USER stays Mixed_Case"),
            "AT_USER stays Mixed_Case"
        );
    }

    #[test]
    fn normalize_handles_bare_at_sign() {
        assert_eq!(
            normalize_text("meet @ noon with @bob"),
            "meet noon with AT_USER"
        );
    }

    #[test]
    fn tokenize_splits_on_whitespace() {
        assert_eq!(
            tokenize("Love our governors honesty"),
            vec!["Love", "our", "governors", "honesty"]
        );
        assert!(tokenize("").is_empty());
        assert_eq!(
            tokenize("AT_USER humanitarian"),
            vec!["AT_USER", "humanitarian"]
        );
    }

    #[test]
    fn majority_vote_is_strict() {
        let votes = vec![
            labels([true, false, false, false, false], false),
            labels([true, false, false, false, false], false),
            labels([false, false, false, false, false], true),
        ];
        let gold = majority_vote(&votes).unwrap();
        assert!(gold.care_harm);
        assert!(!gold.non_moral);

        let votes = vec![
            labels([false, false, false, false, false], true),
            labels([false, false, false, false, false], true),
            labels([true, false, false, false, false], false),
        ];
        let gold = majority_vote(&votes).unwrap();
        assert!(!gold.care_harm);
        assert!(gold.non_moral);
    }

    #[test]
    fn majority_vote_all_false() {
        let votes = vec![LabelSet::default(); 3];
        assert_eq!(majority_vote(&votes).unwrap(), LabelSet::default());
    }

    #[test]
    fn majority_vote_even_tie_is_false() {
        let votes = vec![
            labels([true, false, false, false, false], false),
            labels([false, false, false, false, false], false),
        ];
        assert!(!majority_vote(&votes).unwrap().care_harm);
    }

    #[test]
    fn majority_vote_rejects_empty() {
        assert!(matches!(majority_vote(&[]), Err(CorpusError::NoCoders)));
    }

    #[test]
    fn derive_non_moral_rule() {
        assert!(derive_non_moral(&labels([false; 5], false)));
        assert!(!derive_non_moral(&labels(
            [false, false, false, false, true],
            false
        )));
        assert!(!derive_non_moral(&labels([true; 5], false)));
    }

    #[test]
    fn pabak_hand_cases() {
        let a: Vec<bool> = (0..100).map(|i| i < 50).collect();
        let mut b = a.clone();
        for item in b.iter_mut().take(10) {
            *item = !*item;
        }
        assert!((pabak(&a, &b).unwrap() - 0.8).abs() < 1e-12);
        assert!((pabak(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let c: Vec<bool> = a
            .iter()
            .enumerate()
            .map(|(i, &v)| if i < 50 { !v } else { v })
            .collect();
        assert!(pabak(&a, &c).unwrap().abs() < 1e-12);
    }

    #[test]
    fn pabak_rejects_bad_input() {
        assert!(pabak(&[true], &[true, false]).is_err());
        assert!(pabak(&[], &[]).is_err());
    }

    fn gold_tweet(id: &str, care: bool) -> AnnotatedTweet {
        let mut t = AnnotatedTweet::new(Tweet::new(id, "text"));
        t.gold = Some(labels([care, false, false, false, false], !care));
        t
    }

    #[test]
    fn class_stats_counts_and_ratio() {
        let tweets: Vec<AnnotatedTweet> = (0..7)
            .map(|i| gold_tweet(&format!("t{i}"), i < 3))
            .collect();
        let corpus = Corpus::new("test", tweets).unwrap();
        let stats = class_stats(&corpus, LabelClass::Foundation(Foundation::CareHarm)).unwrap();
        assert_eq!((stats.positive, stats.negative), (3, 4));
        assert!((stats.ratio - 0.75).abs() < 1e-12);
        assert_eq!(stats.positive + stats.negative, corpus.len());
    }

    #[test]
    fn class_stats_matches_reported_ratios() {
        // 1802/2389 and 159/4032 round to 0.75 and 0.04 at two decimals.
        assert_eq!((1802.0 / 2389.0 * 100.0_f64).round() / 100.0, 0.75);
        assert_eq!((159.0 / 4032.0 * 100.0_f64).round() / 100.0, 0.04);
    }

    #[test]
    fn class_stats_empty_corpus() {
        let corpus = Corpus::new("empty", vec![]).unwrap();
        let stats = class_stats(&corpus, LabelClass::NonMoral).unwrap();
        assert_eq!((stats.positive, stats.negative), (0, 0));
        assert!(stats.ratio.is_infinite());
    }

    #[test]
    fn class_stats_rejects_missing_gold() {
        let t = AnnotatedTweet::new(Tweet::new("t1", "no gold"));
        let corpus = Corpus::new("test", vec![t]).unwrap();
        match class_stats(&corpus, LabelClass::NonMoral) {
            Err(CorpusError::MissingGold { ids }) => assert_eq!(ids, vec!["t1"]),
            other => panic!("expected MissingGold, got {other:?}"),
        }
    }

    #[test]
    fn corpus_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let mut t1 = AnnotatedTweet::new(Tweet::new("t1", "Hello @world! #sandy"));
        t1.coder_labels = vec![
            labels([true, false, false, false, false], false),
            labels([true, false, false, false, false], false),
            labels([false, false, false, false, false], true),
        ];
        t1.derive_gold().unwrap();
        let t2 = AnnotatedTweet::new(Tweet::new("t2", "no labels here"));
        let corpus = Corpus::new("sandy", vec![t1, t2]).unwrap();
        save_corpus(&corpus, &path).unwrap();
        let reloaded = load_corpus(&path, "sandy").unwrap();
        assert_eq!(reloaded, corpus);
        // A second save produces identical bytes.
        let path2 = dir.path().join("corpus2.jsonl");
        save_corpus(&reloaded, &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn load_reports_malformed_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"id\":\"t1\",\"raw_text\":\"ok\"}\nnot json\n").unwrap();
        match load_corpus(&path, "x") {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected Parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_duplicate_id() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"t1\",\"raw_text\":\"a\"}\n{\"id\":\"t1\",\"raw_text\":\"b\"}\n",
        )
        .unwrap();
        match load_corpus(&path, "x") {
            Err(CorpusError::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("t1"));
            }
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn loading_single_record_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.jsonl");
        std::fs::write(&path, "{\"id\":\"t1\",\"raw_text\":\"hello\"}\n").unwrap();
        let corpus = load_corpus(&path, "x").unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus.tweets[0].tweet.clean_text, "hello");
    }
}
