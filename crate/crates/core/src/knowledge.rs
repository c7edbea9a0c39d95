//! Knowledge-base access and per-entity enrichment documents.
//!
//! For every linked entity the pipeline fetches an abstract and a
//! whitelisted set of properties, then merges them into one document whose
//! tokens feed feature selection and the soft encoder.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{normalize_text, tokenize};
use crate::linking::EntityAnnotation;
use crate::net::{DiskCache, RetryPolicy};

#[derive(Debug, Error)]
pub enum KbError {
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

impl KbError {
    pub fn is_transport(&self) -> bool {
        matches!(self, KbError::Transport { .. })
    }
}

/// A fetched KB page: abstract, structured properties, and types.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KBEntity {
    pub title: String,
    #[serde(rename = "abstract", default)]
    pub abstract_text: String,
    #[serde(default)]
    pub properties: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub types: BTreeSet<String>,
}

/// Property names whose values are worth merging into the enrichment
/// document, in merge order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PropertyWhitelist {
    pub names: Vec<String>,
}

impl Default for PropertyWhitelist {
    fn default() -> PropertyWhitelist {
        PropertyWhitelist {
            names: [
                "purpose",
                "office",
                "background",
                "meaning",
                "orderInOffice",
                "seniority",
                "title",
                "role",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        }
    }
}

impl PropertyWhitelist {
    pub fn new(names: impl IntoIterator<Item = String>) -> PropertyWhitelist {
        PropertyWhitelist {
            names: names.into_iter().collect(),
        }
    }
}

/// Merged abstract + property values for one entity, with normalized
/// tokens ready for feature extraction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeDoc {
    pub entity_title: String,
    pub text: String,
    pub tokens: Vec<String>,
}

/// Join the abstract and whitelisted property values (whitelist order,
/// fetched value order) with `". "`, then normalize and tokenize like
/// tweet text. Non-whitelisted properties never influence the output.
pub fn merge_document(entity: &KBEntity, wl: &PropertyWhitelist) -> KnowledgeDoc {
    let mut parts: Vec<&str> = Vec::new();
    if !entity.abstract_text.is_empty() {
        parts.push(&entity.abstract_text);
    }
    for name in &wl.names {
        if let Some(values) = entity.properties.get(name) {
            parts.extend(values.iter().map(String::as_str));
        }
    }
    let text = parts.join(". ");
    let tokens = tokenize(&normalize_text(&text));
    KnowledgeDoc {
        entity_title: entity.title.clone(),
        text,
        tokens,
    }
}

/// Fetches entities by title. `Ok(None)` means the KB has no such page.
pub trait KbClient {
    fn fetch(&self, title: &str) -> Result<Option<KBEntity>, KbError>;
}

/// Offline KB backed by a line-delimited snapshot file. Doubles as the
/// test fixture format so tests never touch the network.
#[derive(Clone, Debug, Default)]
pub struct SnapshotKb {
    entities: BTreeMap<String, KBEntity>,
}

impl SnapshotKb {
    pub fn from_entities(entities: impl IntoIterator<Item = KBEntity>) -> SnapshotKb {
        SnapshotKb {
            entities: entities.into_iter().map(|e| (e.title.clone(), e)).collect(),
        }
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<SnapshotKb, KbError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let file = std::fs::File::open(path).map_err(|source| KbError::Io {
            path: display.clone(),
            source,
        })?;
        let mut entities = BTreeMap::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| KbError::Io {
                path: display.clone(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let entity: KBEntity = serde_json::from_str(&line).map_err(|e| KbError::Parse {
                path: display.clone(),
                line: idx + 1,
                message: e.to_string(),
            })?;
            entities.insert(entity.title.clone(), entity);
        }
        Ok(SnapshotKb { entities })
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }
}

impl KbClient for SnapshotKb {
    fn fetch(&self, title: &str) -> Result<Option<KBEntity>, KbError> {
        Ok(self.entities.get(title).cloned())
    }
}

#[derive(Clone, Debug)]
pub struct RemoteKbConfig {
    pub endpoint: String,
    pub cache_dir: Option<PathBuf>,
    pub retry: RetryPolicy,
    pub force_refresh: bool,
}

/// HTTP client for a structured-entity endpoint, with the same on-disk
/// cache discipline as the remote linker. A 404 maps to "not found".
pub struct RemoteKb {
    config: RemoteKbConfig,
    cache: Option<DiskCache>,
    client: reqwest::blocking::Client,
}

const NOT_FOUND_SENTINEL: &str = "{\"__not_found\":true}";

impl RemoteKb {
    pub fn new(config: RemoteKbConfig) -> Result<RemoteKb, KbError> {
        let cache = match &config.cache_dir {
            Some(dir) => Some(DiskCache::new(dir.clone()).map_err(|source| KbError::Io {
                path: dir.display().to_string(),
                source,
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(30))
            .build()
            .map_err(|e| KbError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(RemoteKb {
            config,
            cache,
            client,
        })
    }
}

impl KbClient for RemoteKb {
    fn fetch(&self, title: &str) -> Result<Option<KBEntity>, KbError> {
        let key = DiskCache::key_for(title);
        let body = if self.config.force_refresh {
            None
        } else {
            self.cache.as_ref().and_then(|c| c.get(&key))
        };
        let body = match body {
            Some(b) => b,
            None => {
                let fetched = self
                    .config
                    .retry
                    .run(|| {
                        let response = self
                            .client
                            .get(&self.config.endpoint)
                            .query(&[("title", title)])
                            .send()
                            .map_err(|e| e.to_string())?;
                        if response.status() == reqwest::StatusCode::NOT_FOUND {
                            return Ok(NOT_FOUND_SENTINEL.to_string());
                        }
                        if !response.status().is_success() {
                            return Err(format!("service answered {}", response.status()));
                        }
                        response.text().map_err(|e| e.to_string())
                    })
                    .map_err(|f| KbError::Transport {
                        attempts: f.attempts,
                        message: f.message,
                    })?;
                if let Some(cache) = &self.cache {
                    cache.put(&key, &fetched).map_err(|source| KbError::Io {
                        path: cache.dir().display().to_string(),
                        source,
                    })?;
                }
                fetched
            }
        };
        if body == NOT_FOUND_SENTINEL {
            return Ok(None);
        }
        let entity: KBEntity = serde_json::from_str(&body).map_err(|e| KbError::Parse {
            path: self.config.endpoint.clone(),
            line: 0,
            message: format!("bad response body: {e}"),
        })?;
        Ok(Some(entity))
    }
}

/// One enrichment document per distinct entity per tweet. Entities the KB
/// does not know are skipped and reported in the diagnostics.
#[allow(clippy::type_complexity)]
pub fn enrich_corpus(
    refined: &BTreeMap<String, Vec<EntityAnnotation>>,
    kb: &dyn KbClient,
    wl: &PropertyWhitelist,
) -> Result<(BTreeMap<String, Vec<KnowledgeDoc>>, Vec<String>), KbError> {
    let mut fetched: BTreeMap<String, Option<KnowledgeDoc>> = BTreeMap::new();
    let mut diagnostics = Vec::new();
    let mut out = BTreeMap::new();
    for (tweet_id, annotations) in refined {
        let mut seen = BTreeSet::new();
        let mut docs = Vec::new();
        for ann in annotations {
            if !seen.insert(ann.entity_title.clone()) {
                continue;
            }
            let doc = match fetched.get(&ann.entity_title) {
                Some(cached) => cached.clone(),
                None => {
                    let doc = kb
                        .fetch(&ann.entity_title)?
                        .map(|entity| merge_document(&entity, wl));
                    fetched.insert(ann.entity_title.clone(), doc.clone());
                    doc
                }
            };
            match doc {
                Some(d) => docs.push(d),
                None => diagnostics.push(format!(
                    "{tweet_id}: entity {:?} not found in KB",
                    ann.entity_title
                )),
            }
        }
        out.insert(tweet_id.clone(), docs);
    }
    Ok((out, diagnostics))
}

/// Concatenated tokens of a tweet's knowledge documents.
pub fn merged_tokens(docs: &[KnowledgeDoc]) -> Vec<String> {
    docs.iter().flat_map(|d| d.tokens.iter().cloned()).collect()
}
