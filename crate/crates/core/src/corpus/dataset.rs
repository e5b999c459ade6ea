use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::grammar::gen_neutral_sentence_with_bias;
use crate::corpus::profile::{stylize, StyleProfile};
use crate::error::{Error, Result};
use crate::math::SeededRng;

/// Sizes of the three disjoint author sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_high_resource: usize,
    pub pairs_per_author: usize,
    pub n_targets: usize,
    pub texts_per_target: usize,
    pub n_sources: usize,
    pub source_train: usize,
    pub source_test: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_high_resource: 8,
            pairs_per_author: 512,
            n_targets: 4,
            texts_per_target: 16,
            n_sources: 4,
            source_train: 50,
            source_test: 16,
            seed: 42,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_high_resource", self.n_high_resource),
            ("pairs_per_author", self.pairs_per_author),
            ("n_targets", self.n_targets),
            ("texts_per_target", self.texts_per_target),
            ("n_sources", self.n_sources),
            ("source_train", self.source_train),
            ("source_test", self.source_test),
        ];
        for (name, n) in counts {
            if n == 0 {
                return Err(Error::config(format!("corpus spec: {name} must be at least 1")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainPair {
    pub neutral: String,
    pub styled: String,
    pub author_id: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthorRole {
    HighResource,
    Target,
    Source,
}

impl AuthorRole {
    fn prefix(self) -> &'static str {
        match self {
            AuthorRole::HighResource => "hr",
            AuthorRole::Target => "tgt",
            AuthorRole::Source => "src",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// One author's slice of the dataset; serialized as one file per author.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuthorFile {
    pub author_id: String,
    pub role: AuthorRole,
    pub profile: StyleProfile,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairs: Vec<TrainPair>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub texts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SourceSplit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub spec: CorpusSpec,
    /// Sorted by role then author id.
    pub authors: Vec<AuthorFile>,
}

impl Dataset {
    pub fn by_role(&self, role: AuthorRole) -> impl Iterator<Item = &AuthorFile> {
        self.authors.iter().filter(move |a| a.role == role)
    }

    pub fn author(&self, id: &str) -> Option<&AuthorFile> {
        self.authors.iter().find(|a| a.author_id == id)
    }
}

fn author_id(role: AuthorRole, index: usize) -> String {
    format!("{}{index:02}", role.prefix())
}

/// `n` distinct styled texts of one author.
fn styled_texts(profile: &StyleProfile, n: usize, rng: &mut SeededRng) -> Result<Vec<TrainPair>> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        attempts += 1;
        let neutral = gen_neutral_sentence_with_bias(rng, profile.length_bias);
        let styled = stylize(profile, &neutral, rng)?;
        if seen.insert(neutral.clone()) || attempts > 50 * n {
            out.push(TrainPair {
                neutral,
                styled,
                author_id: profile.author_id.clone(),
            });
        }
    }
    Ok(out)
}

/// Builds the three disjoint author sets. Every author draws its profile
/// and its texts from streams derived from the spec seed and its own id,
/// so the result does not depend on generation order.
pub fn build_dataset(spec: &CorpusSpec) -> Result<Dataset> {
    spec.validate()?;
    let master = SeededRng::new(spec.seed);
    let plan = [
        (AuthorRole::HighResource, spec.n_high_resource),
        (AuthorRole::Source, spec.n_sources),
        (AuthorRole::Target, spec.n_targets),
    ];
    let mut authors = Vec::new();
    for (role, count) in plan {
        for i in 0..count {
            let id = author_id(role, i);
            let profile = StyleProfile::random(id.clone(), &mut master.derive(&format!("profile/{id}"), 0));
            let mut rng = master.derive(&format!("texts/{id}"), 0);
            let mut file = AuthorFile {
                author_id: id,
                role,
                profile,
                pairs: Vec::new(),
                texts: Vec::new(),
                split: None,
            };
            match role {
                AuthorRole::HighResource => {
                    file.pairs = styled_texts(&file.profile, spec.pairs_per_author, &mut rng)?;
                }
                AuthorRole::Target => {
                    file.texts = styled_texts(&file.profile, spec.texts_per_target, &mut rng)?
                        .into_iter()
                        .map(|p| p.styled)
                        .collect();
                }
                AuthorRole::Source => {
                    let mut texts: Vec<String> =
                        styled_texts(&file.profile, spec.source_train + spec.source_test, &mut rng)?
                            .into_iter()
                            .map(|p| p.styled)
                            .collect();
                    let test = texts.split_off(spec.source_train);
                    file.split = Some(SourceSplit { train: texts, test });
                }
            }
            authors.push(file);
        }
    }
    authors.sort_by(|a, b| a.author_id.cmp(&b.author_id));
    Ok(Dataset {
        spec: spec.clone(),
        authors,
    })
}
