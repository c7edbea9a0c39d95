//! Entity-mention identification and annotation refinement.
//!
//! A pluggable linker produces candidate annotations per tweet; confidence,
//! entity-type, and part-of-speech rules then remove spurious ones, and a
//! corpus-wide propagation pass repairs low-confidence links by adopting
//! the entity of the most confident same-surface annotation elsewhere in
//! the topic.

mod fixture;
mod pos;
mod remote;

pub use fixture::FixtureLinker;
pub use pos::{pos_tag, PosTag, PosTaggedToken};
pub use remote::{RemoteLinker, RemoteLinkerConfig};

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::corpus::{Corpus, Tweet};

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("invalid mention span {start}..{end} in {tweet_id:?}")]
    InvalidSpan {
        tweet_id: String,
        start: usize,
        end: usize,
    },
    #[error("linking {tweet_id:?}")]
    Tweet {
        tweet_id: String,
        #[source]
        source: Box<LinkError>,
    },
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
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

impl LinkError {
    /// True when the failure (or its cause) was a transport failure.
    pub fn is_transport(&self) -> bool {
        match self {
            LinkError::Transport { .. } => true,
            LinkError::Tweet { source, .. } => source.is_transport(),
            _ => false,
        }
    }
}

/// A surface span in a tweet's clean text, in character offsets.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Mention {
    pub surface: String,
    pub start: usize,
    pub end: usize,
}

impl Mention {
    /// Check the span invariant against the text it points into.
    pub fn is_valid_in(&self, clean_text: &str) -> bool {
        let chars: Vec<char> = clean_text.chars().collect();
        self.start < self.end
            && self.end <= chars.len()
            && chars[self.start..self.end].iter().collect::<String>() == self.surface
    }
}

/// How an annotation earned its place in the kept set.
#[derive(Clone, Debug, PartialEq)]
pub enum Provenance {
    /// Straight from the linker, passing every filter.
    Linker,
    /// Relinked by cross-document propagation from a kept donor.
    Propagated { donor_rho: f64 },
}

/// A mention linked to a KB entity with the linker's confidence score.
#[derive(Clone, Debug, PartialEq)]
pub struct EntityAnnotation {
    pub mention: Mention,
    pub entity_title: String,
    pub rho: f64,
    pub entity_types: BTreeSet<String>,
    pub provenance: Provenance,
}

impl EntityAnnotation {
    pub fn new(
        mention: Mention,
        entity_title: impl Into<String>,
        rho: f64,
        entity_types: impl IntoIterator<Item = String>,
    ) -> EntityAnnotation {
        EntityAnnotation {
            mention,
            entity_title: entity_title.into(),
            rho,
            entity_types: entity_types.into_iter().collect(),
            provenance: Provenance::Linker,
        }
    }
}

/// Refinement thresholds and rule tables.
#[derive(Clone, Debug)]
pub struct LinkerConfig {
    /// Annotations strictly below this confidence are rejected.
    pub rho_threshold: f64,
    /// Annotations carrying any of these entity types are dropped.
    pub type_blacklist: BTreeSet<String>,
    /// A mention must overlap at least one token with one of these tags.
    pub nominal_tags: BTreeSet<PosTag>,
}

/// Work-like entity types that commonly swallow everyday words. The
/// published rule discards a hand-curated list; this default is the
/// artifact's stand-in and is fully overridable.
const DEFAULT_TYPE_BLACKLIST: [&str; 20] = [
    "Song",
    "Album",
    "Single",
    "Book",
    "Film",
    "Band",
    "TelevisionShow",
    "VideoGame",
    "Magazine",
    "Newspaper",
    "Play",
    "Poem",
    "MusicalWork",
    "WrittenWork",
    "Artwork",
    "ComicsCharacter",
    "FictionalCharacter",
    "Anime",
    "Manga",
    "Website",
];

impl Default for LinkerConfig {
    fn default() -> LinkerConfig {
        LinkerConfig {
            rho_threshold: 0.1,
            type_blacklist: DEFAULT_TYPE_BLACKLIST
                .iter()
                .map(|s| s.to_string())
                .collect(),
            nominal_tags: BTreeSet::from([PosTag::Noun, PosTag::Propn]),
        }
    }
}

impl LinkerConfig {
    pub fn validate(&self) -> Result<(), LinkError> {
        if !(self.rho_threshold > 0.0 && self.rho_threshold < 1.0) {
            return Err(LinkError::Parse {
                path: "config".into(),
                line: 0,
                message: format!(
                    "rho_threshold must be in (0, 1), got {}",
                    self.rho_threshold
                ),
            });
        }
        Ok(())
    }
}

/// Identifies and links entity mentions in one tweet.
pub trait Linker: Sync {
    fn link(&self, tweet: &Tweet) -> Result<Vec<EntityAnnotation>, LinkError>;
}

/// Character spans of a clean text's whitespace tokens.
pub fn token_spans(clean_text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    let mut idx = 0;
    for c in clean_text.chars() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                spans.push((s, idx));
            }
        } else if start.is_none() {
            start = Some(idx);
        }
        idx += 1;
    }
    if let Some(s) = start {
        spans.push((s, idx));
    }
    spans
}

/// Partition annotations into those meeting the confidence threshold and
/// the rest, preserving order. The rule removes strictly-below scores, so
/// a score exactly at the threshold is kept.
pub fn filter_by_confidence(
    anns: Vec<EntityAnnotation>,
    cfg: &LinkerConfig,
) -> (Vec<EntityAnnotation>, Vec<EntityAnnotation>) {
    anns.into_iter().partition(|a| a.rho >= cfg.rho_threshold)
}

/// Drop annotations whose entity carries any blacklisted type.
pub fn filter_by_type(anns: Vec<EntityAnnotation>, cfg: &LinkerConfig) -> Vec<EntityAnnotation> {
    anns.into_iter()
        .filter(|a| a.entity_types.is_disjoint(&cfg.type_blacklist))
        .collect()
}

/// Keep annotations whose mention overlaps at least one nominally tagged
/// token. Mentions overlapping no token at all are dropped with a
/// diagnostic.
pub fn filter_by_pos(
    anns: Vec<EntityAnnotation>,
    tagged: &[PosTaggedToken],
    spans: &[(usize, usize)],
    cfg: &LinkerConfig,
) -> (Vec<EntityAnnotation>, Vec<String>) {
    let mut kept = Vec::new();
    let mut diagnostics = Vec::new();
    for ann in anns {
        let overlapping: Vec<usize> = spans
            .iter()
            .enumerate()
            .filter(|(_, &(s, e))| s < ann.mention.end && ann.mention.start < e)
            .map(|(i, _)| i)
            .collect();
        if overlapping.is_empty() {
            diagnostics.push(format!(
                "mention {:?} at {}..{} overlaps no token",
                ann.mention.surface, ann.mention.start, ann.mention.end
            ));
            continue;
        }
        let nominal = overlapping
            .iter()
            .any(|&i| cfg.nominal_tags.contains(&tagged[i].tag));
        if nominal {
            kept.push(ann);
        }
    }
    (kept, diagnostics)
}

fn surface_tokens(surface: &str) -> Vec<String> {
    surface.split_whitespace().map(str::to_lowercase).collect()
}

fn is_contiguous_subsequence(needle: &[String], hay: &[String]) -> bool {
    if needle.is_empty() || needle.len() > hay.len() {
        return false;
    }
    hay.windows(needle.len()).any(|w| w == needle)
}

/// Repair rejected annotations by adopting the entity of the most
/// confident kept annotation with a matching surface elsewhere in the
/// corpus.
///
/// A surface matches a donor when it is equal case-insensitively or its
/// tokens form a contiguous subsequence of the donor's surface tokens
/// ("Booker" matches "Cory Booker"). Kept annotations are never changed.
#[allow(clippy::type_complexity)]
pub fn propagate(
    corpus_annotations: &BTreeMap<String, (Vec<EntityAnnotation>, Vec<EntityAnnotation>)>,
    cfg: &LinkerConfig,
) -> BTreeMap<String, Vec<EntityAnnotation>> {
    // (tokens, rho, title, types, tie-break key)
    let mut donors: Vec<(Vec<String>, f64, &String, &BTreeSet<String>, &String)> = Vec::new();
    for (tweet_id, (kept, _)) in corpus_annotations {
        for ann in kept {
            if matches!(ann.provenance, Provenance::Linker) && ann.rho >= cfg.rho_threshold {
                donors.push((
                    surface_tokens(&ann.mention.surface),
                    ann.rho,
                    &ann.entity_title,
                    &ann.entity_types,
                    tweet_id,
                ));
            }
        }
    }

    let mut out = BTreeMap::new();
    for (tweet_id, (kept, rejected)) in corpus_annotations {
        let mut final_anns = kept.clone();
        for ann in rejected {
            let needle = surface_tokens(&ann.mention.surface);
            let best = donors
                .iter()
                .filter(|(toks, ..)| *toks == needle || is_contiguous_subsequence(&needle, toks))
                .max_by(|(_, ra, ta, _, ia), (_, rb, tb, _, ib)| {
                    ra.partial_cmp(rb)
                        .expect("rho is finite")
                        .then_with(|| tb.cmp(ta))
                        .then_with(|| ib.cmp(ia))
                });
            if let Some((_, donor_rho, title, types, _)) = best {
                let mut rescued = ann.clone();
                rescued.entity_title = (*title).clone();
                rescued.entity_types = (*types).clone();
                rescued.provenance = Provenance::Propagated {
                    donor_rho: *donor_rho,
                };
                final_anns.push(rescued);
            }
        }
        final_anns.sort_by(|a, b| {
            (a.mention.start, a.mention.end).cmp(&(b.mention.start, b.mention.end))
        });
        out.insert(tweet_id.clone(), final_anns);
    }
    out
}

/// Full per-corpus refinement: link every tweet, apply the confidence,
/// type, and POS rules, then repair rejected links corpus-wide.
///
/// The rejected pool is POS-screened before propagation so non-name spans
/// can never be rescued; rescued annotations take their donor's entity and
/// types, which already passed the type rule.
pub fn refine(
    corpus: &Corpus,
    linker: &dyn Linker,
    cfg: &LinkerConfig,
) -> Result<BTreeMap<String, Vec<EntityAnnotation>>, LinkError> {
    cfg.validate()?;
    let linked = link_all(corpus, linker, 4)?;
    let mut per_tweet = BTreeMap::new();
    for (annotated, anns) in corpus.tweets.iter().zip(linked) {
        let tweet = &annotated.tweet;
        for ann in &anns {
            if !ann.mention.is_valid_in(&tweet.clean_text) {
                return Err(LinkError::Tweet {
                    tweet_id: tweet.id.clone(),
                    source: Box::new(LinkError::InvalidSpan {
                        tweet_id: tweet.id.clone(),
                        start: ann.mention.start,
                        end: ann.mention.end,
                    }),
                });
            }
        }
        let tagged = pos_tag(&tweet.tokens);
        let spans = token_spans(&tweet.clean_text);
        let (kept, rejected) = filter_by_confidence(anns, cfg);
        let kept = filter_by_type(kept, cfg);
        let (kept, _) = filter_by_pos(kept, &tagged, &spans, cfg);
        let (rejected, _) = filter_by_pos(rejected, &tagged, &spans, cfg);
        per_tweet.insert(tweet.id.clone(), (kept, rejected));
    }
    Ok(propagate(&per_tweet, cfg))
}

/// Link every tweet with bounded fan-out, preserving corpus order.
#[allow(clippy::type_complexity)]
pub fn link_all(
    corpus: &Corpus,
    linker: &dyn Linker,
    max_in_flight: usize,
) -> Result<Vec<Vec<EntityAnnotation>>, LinkError> {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    let n = corpus.tweets.len();
    let results: Mutex<Vec<Option<Result<Vec<EntityAnnotation>, LinkError>>>> =
        Mutex::new((0..n).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = max_in_flight.clamp(1, n.max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let tweet = &corpus.tweets[i].tweet;
                let outcome = linker.link(tweet).map_err(|e| LinkError::Tweet {
                    tweet_id: tweet.id.clone(),
                    source: Box::new(e),
                });
                results.lock().expect("no poisoned lock")[i] = Some(outcome);
            });
        }
    });

    results
        .into_inner()
        .expect("no poisoned lock")
        .into_iter()
        .map(|r| r.expect("every index visited"))
        .collect()
}
