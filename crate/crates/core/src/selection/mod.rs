//! Top-k selection of library adapters by prototype similarity to a target.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{cosine_similarity, SeededRng};
use crate::metrics::{prototype_embed, StyleEmbedding};
use crate::model::AuthorAdapter;

/// Number of texts sampled per author for its prototype embedding.
pub const PROTOTYPE_SAMPLE: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct LibraryEntry {
    pub author_id: String,
    pub adapter: AuthorAdapter,
    pub prototype: StyleEmbedding,
    pub sample_size: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdapterLibrary {
    entries: Vec<LibraryEntry>,
}

impl AdapterLibrary {
    pub fn new(entries: Vec<LibraryEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.author_id.as_str()) {
                return Err(Error::Library(format!(
                    "author {} appears twice in the library",
                    e.author_id
                )));
            }
            if e.adapter.author_id != e.author_id {
                return Err(Error::Library(format!(
                    "entry {} holds the adapter of {}",
                    e.author_id, e.adapter.author_id
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[LibraryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, author_id: &str) -> Option<&LibraryEntry> {
        self.entries.iter().find(|e| e.author_id == author_id)
    }

    pub fn adapters(&self) -> Vec<AuthorAdapter> {
        self.entries.iter().map(|e| e.adapter.clone()).collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.author_id.clone()).collect()
    }
}

/// Prototype over a random sample of at most `sample` texts, drawn without
/// replacement. Returns the prototype and the sample size used.
pub fn sampled_prototype<S: AsRef<str>>(
    texts: &[S],
    sample: usize,
    rng: &mut SeededRng,
) -> Result<(StyleEmbedding, usize)> {
    let mut idx: Vec<usize> = (0..texts.len()).collect();
    rng.shuffle(&mut idx);
    idx.truncate(sample);
    idx.sort_unstable();
    let chosen: Vec<&str> = idx.iter().map(|&i| texts[i].as_ref()).collect();
    Ok((prototype_embed(&chosen)?, chosen.len()))
}

/// Library entries ordered by descending cosine similarity to `target`,
/// ties broken by ascending author id.
pub fn rank_adapters(target: &StyleEmbedding, library: &AdapterLibrary) -> Result<Vec<(String, f64)>> {
    if library.is_empty() {
        return Err(Error::domain("cannot rank an empty library"));
    }
    let mut ranking = library
        .entries
        .iter()
        .map(|e| {
            Ok((
                e.author_id.clone(),
                cosine_similarity(target.as_slice(), e.prototype.as_slice())?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ranking)
}

/// The first `k` ranked entries, in ranking order.
pub fn select_top_k(library: &AdapterLibrary, ranking: &[(String, f64)], k: usize) -> Result<AdapterLibrary> {
    if k == 0 || k > ranking.len() {
        return Err(Error::config(format!("k = {k} outside 1..={}", ranking.len())));
    }
    let entries = ranking[..k]
        .iter()
        .map(|(id, _)| {
            library
                .get(id)
                .cloned()
                .ok_or_else(|| Error::Library(format!("ranked author {id} is not in the library")))
        })
        .collect::<Result<Vec<_>>>()?;
    AdapterLibrary::new(entries)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedAdapter {
    pub author_id: String,
    pub cosine: f64,
}

/// Persisted outcome of a selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub target_id: String,
    pub k: usize,
    pub selected: Vec<SelectedAdapter>,
    /// Logical timestamp; fixed so reruns are byte-identical.
    pub timestamp: u64,
}

impl Selection {
    pub fn new(target_id: impl Into<String>, ranking: &[(String, f64)], k: usize) -> Result<Self> {
        if k == 0 || k > ranking.len() {
            return Err(Error::config(format!("k = {k} outside 1..={}", ranking.len())));
        }
        Ok(Self {
            target_id: target_id.into(),
            k,
            selected: ranking[..k]
                .iter()
                .map(|(id, c)| SelectedAdapter {
                    author_id: id.clone(),
                    cosine: *c,
                })
                .collect(),
            timestamp: 0,
        })
    }

    pub fn ids(&self) -> Vec<String> {
        self.selected.iter().map(|s| s.author_id.clone()).collect()
    }
}
