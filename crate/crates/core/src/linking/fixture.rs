//! Offline linker backed by a local surface-to-entity table.

use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use crate::corpus::Tweet;
use crate::linking::{token_spans, EntityAnnotation, LinkError, Linker, Mention};

#[derive(Clone, Debug)]
struct FixtureEntry {
    surface_tokens: Vec<String>,
    entity_title: String,
    rho: f64,
    types: Vec<String>,
}

/// Deterministic linker that matches fixture surfaces against token runs,
/// longest surface first, left to right, without overlaps.
#[derive(Clone, Debug, Default)]
pub struct FixtureLinker {
    entries: Vec<FixtureEntry>,
}

#[derive(Deserialize)]
struct FixtureRecord {
    surface: String,
    entity_title: String,
    rho: f64,
    #[serde(default)]
    types: Vec<String>,
}

impl FixtureLinker {
    /// Build from `(surface, entity_title, rho, types)` tuples.
    pub fn from_entries(
        entries: impl IntoIterator<Item = (String, String, f64, Vec<String>)>,
    ) -> FixtureLinker {
        let mut built: Vec<FixtureEntry> = entries
            .into_iter()
            .map(|(surface, entity_title, rho, types)| FixtureEntry {
                surface_tokens: surface.split_whitespace().map(str::to_lowercase).collect(),
                entity_title,
                rho,
                types,
            })
            .filter(|e| !e.surface_tokens.is_empty())
            .collect();
        // Longest surface first; ties by title for determinism.
        built.sort_by(|a, b| {
            b.surface_tokens
                .len()
                .cmp(&a.surface_tokens.len())
                .then_with(|| a.entity_title.cmp(&b.entity_title))
        });
        FixtureLinker { entries: built }
    }

    /// Load `{"surface", "entity_title", "rho", "types"}` records, one per
    /// line.
    pub fn from_path(path: impl AsRef<Path>) -> Result<FixtureLinker, LinkError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let file = std::fs::File::open(path).map_err(|source| LinkError::Io {
            path: display.clone(),
            source,
        })?;
        let mut entries = Vec::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| LinkError::Io {
                path: display.clone(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: FixtureRecord =
                serde_json::from_str(&line).map_err(|e| LinkError::Parse {
                    path: display.clone(),
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            entries.push((
                record.surface,
                record.entity_title,
                record.rho,
                record.types,
            ));
        }
        Ok(FixtureLinker::from_entries(entries))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Linker for FixtureLinker {
    fn link(&self, tweet: &Tweet) -> Result<Vec<EntityAnnotation>, LinkError> {
        let lowered: Vec<String> = tweet.tokens.iter().map(|t| t.to_lowercase()).collect();
        let spans = token_spans(&tweet.clean_text);
        let mut annotations = Vec::new();
        let mut i = 0;
        while i < lowered.len() {
            let hit = self.entries.iter().find(|e| {
                let n = e.surface_tokens.len();
                i + n <= lowered.len() && lowered[i..i + n] == e.surface_tokens[..]
            });
            match hit {
                Some(entry) => {
                    let n = entry.surface_tokens.len();
                    let start = spans[i].0;
                    let end = spans[i + n - 1].1;
                    let surface: String = tweet
                        .clean_text
                        .chars()
                        .skip(start)
                        .take(end - start)
                        .collect();
                    annotations.push(EntityAnnotation::new(
                        Mention {
                            surface,
                            start,
                            end,
                        },
                        entry.entity_title.clone(),
                        entry.rho,
                        entry.types.iter().cloned(),
                    ));
                    i += n;
                }
                None => i += 1,
            }
        }
        Ok(annotations)
    }
}
