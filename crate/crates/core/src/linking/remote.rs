//! HTTP client for a remote short-text entity-linking service.
//!
//! The service receives the clean text via GET and answers with a JSON
//! body carrying annotation spans, titles, and confidence scores.
//! Responses are cached on disk keyed by a hash of the text, so reruns
//! are reproducible and polite.

use std::path::PathBuf;

use serde::Deserialize;

use crate::corpus::Tweet;
use crate::linking::{EntityAnnotation, LinkError, Linker, Mention};
use crate::net::{DiskCache, RetryPolicy};

#[derive(Clone, Debug)]
pub struct RemoteLinkerConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub cache_dir: Option<PathBuf>,
    pub retry: RetryPolicy,
    /// Bypass cached responses and refetch.
    pub force_refresh: bool,
}

pub struct RemoteLinker {
    config: RemoteLinkerConfig,
    cache: Option<DiskCache>,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct LinkResponse {
    #[serde(default)]
    annotations: Vec<AnnotationRecord>,
}

#[derive(Deserialize)]
struct AnnotationRecord {
    #[serde(alias = "spot")]
    surface: Option<String>,
    start: usize,
    end: usize,
    rho: f64,
    title: String,
    #[serde(default, alias = "dbpedia_categories")]
    types: Vec<String>,
}

impl RemoteLinker {
    pub fn new(config: RemoteLinkerConfig) -> Result<RemoteLinker, LinkError> {
        let cache = match &config.cache_dir {
            Some(dir) => Some(DiskCache::new(dir.clone()).map_err(|source| LinkError::Io {
                path: dir.display().to_string(),
                source,
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(30))
            .build()
            .map_err(|e| LinkError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(RemoteLinker {
            config,
            cache,
            client,
        })
    }

    fn fetch_body(&self, text: &str) -> Result<String, LinkError> {
        let key = DiskCache::key_for(text);
        if !self.config.force_refresh {
            if let Some(cache) = &self.cache {
                if let Some(body) = cache.get(&key) {
                    return Ok(body);
                }
            }
        }
        let body = self
            .config
            .retry
            .run(|| {
                let mut request = self
                    .client
                    .get(&self.config.endpoint)
                    .query(&[("text", text)]);
                if let Some(key) = &self.config.api_key {
                    request = request.query(&[("token", key.as_str())]);
                }
                let response = request.send().map_err(|e| e.to_string())?;
                let status = response.status();
                if !status.is_success() {
                    return Err(format!("service answered {status}"));
                }
                response.text().map_err(|e| e.to_string())
            })
            .map_err(|f| LinkError::Transport {
                attempts: f.attempts,
                message: f.message,
            })?;
        if let Some(cache) = &self.cache {
            cache.put(&key, &body).map_err(|source| LinkError::Io {
                path: cache.dir().display().to_string(),
                source,
            })?;
        }
        Ok(body)
    }
}

impl Linker for RemoteLinker {
    fn link(&self, tweet: &Tweet) -> Result<Vec<EntityAnnotation>, LinkError> {
        let body = self.fetch_body(&tweet.clean_text)?;
        let parsed: LinkResponse = serde_json::from_str(&body).map_err(|e| LinkError::Parse {
            path: self.config.endpoint.clone(),
            line: 0,
            message: format!("bad response body: {e}"),
        })?;
        let chars: Vec<char> = tweet.clean_text.chars().collect();
        let mut annotations = Vec::new();
        for record in parsed.annotations {
            if record.start >= record.end || record.end > chars.len() {
                // Malformed span from the service; skip rather than abort.
                continue;
            }
            let slice: String = chars[record.start..record.end].iter().collect();
            let surface = record.surface.unwrap_or_else(|| slice.clone());
            if surface != slice {
                continue;
            }
            annotations.push(EntityAnnotation::new(
                Mention {
                    surface,
                    start: record.start,
                    end: record.end,
                },
                record.title,
                record.rho,
                record.types,
            ));
        }
        Ok(annotations)
    }
}
