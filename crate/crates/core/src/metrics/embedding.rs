use std::collections::HashSet;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::corpus::{gen_neutral_sentence, stylize, StyleProfile, ARCHAIC, FUNCTION_WORDS, INTERJECTIONS};
use crate::error::{Error, Result};
use crate::math::{cosine_similarity, l2_normalize, SeededRng};

pub const EMBED_DIM: usize = 64;

/// Punctuation marks with their own rate coordinate, in coordinate order.
pub const PUNCT_MARKS: [char; 12] = ['.', '!', '—', ',', '"', '«', '»', '\'', '?', ';', ':', '-'];
pub const UPPERCASE_FEATURE: usize = 12;
pub const FUNCTION_WORD_OFFSET: usize = 13;
pub const MEAN_WORD_LEN_FEATURE: usize = 53;
pub const MEAN_SENTENCE_LEN_FEATURE: usize = 54;
pub const TYPE_TOKEN_FEATURE: usize = 55;
pub const INTERJECTION_FEATURE: usize = 56;
pub const ARCHAIC_FEATURE: usize = 57;
/// Letter classes with their own rate coordinate, starting at 58.
const LETTER_CLASSES: [&str; 6] = ["aeiou", " ", "jkqvxz", "h", "y", "w"];
const LETTER_CLASS_OFFSET: usize = 58;
const SENTENCE_MARKS: [char; 4] = ['.', '!', '—', '?'];

/// Features that are pure length-normalized rates (everything except the
/// type-token ratio, which depends on repetition).
pub fn is_rate_feature(i: usize) -> bool {
    i < EMBED_DIM && i != TYPE_TOKEN_FEATURE
}

pub fn punct_feature(mark: char) -> Option<usize> {
    PUNCT_MARKS.iter().position(|&m| m == mark)
}

fn rate(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        (count as f64 / total as f64).ln_1p()
    }
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_ascii_alphabetic() || c == '\''))
        .map(|w| w.trim_matches('\''))
        .filter(|w| !w.is_empty())
        .map(str::to_ascii_lowercase)
        .collect()
}

/// Stylometric features before standardization. Each count becomes
/// `ln(1 + count / length)`, so repeating a text leaves every rate unchanged.
pub fn raw_features(text: &str) -> Result<[f64; EMBED_DIM]> {
    if text.trim().is_empty() {
        return Err(Error::domain("cannot embed empty text"));
    }
    let mut f = [0.0; EMBED_DIM];
    let chars: Vec<char> = text.chars().collect();
    let n_chars = chars.len();
    for (i, m) in PUNCT_MARKS.iter().enumerate() {
        f[i] = rate(chars.iter().filter(|c| *c == m).count(), n_chars);
    }
    f[UPPERCASE_FEATURE] = rate(chars.iter().filter(|c| c.is_uppercase()).count(), n_chars);
    for (i, class) in LETTER_CLASSES.iter().enumerate() {
        let count = chars.iter().filter(|c| class.contains(c.to_ascii_lowercase())).count();
        f[LETTER_CLASS_OFFSET + i] = rate(count, n_chars);
    }

    let ws = words(text);
    let n_words = ws.len();
    for (i, fw) in FUNCTION_WORDS.iter().enumerate() {
        f[FUNCTION_WORD_OFFSET + i] = rate(ws.iter().filter(|w| w == fw).count(), n_words);
    }
    let interjections: HashSet<&str> = INTERJECTIONS.iter().map(|w| w.trim_end_matches(',')).collect();
    let archaic: HashSet<&str> = ARCHAIC.iter().map(|(_, f)| *f).collect();
    f[INTERJECTION_FEATURE] = rate(
        ws.iter().filter(|w| interjections.contains(w.as_str())).count(),
        n_words,
    );
    f[ARCHAIC_FEATURE] = rate(ws.iter().filter(|w| archaic.contains(w.as_str())).count(), n_words);
    if n_words > 0 {
        let letters: usize = ws.iter().map(|w| w.len()).sum();
        f[MEAN_WORD_LEN_FEATURE] = (letters as f64 / n_words as f64).ln_1p();
        let sentences = chars.iter().filter(|c| SENTENCE_MARKS.contains(c)).count().max(1);
        f[MEAN_SENTENCE_LEN_FEATURE] = (n_words as f64 / sentences as f64).ln_1p();
        let types: HashSet<&String> = ws.iter().collect();
        f[TYPE_TOKEN_FEATURE] = (types.len() as f64 / n_words as f64).ln_1p();
    }
    Ok(f)
}

/// Per-feature mean and standard deviation used to standardize raw features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Lower bound on reference standard deviations, so marks that never occur
/// in the reference corpus do not explode when they do occur.
pub const STD_FLOOR: f64 = 0.01;
const REFERENCE_SEED: u64 = 0x5eed_57a7;
const REFERENCE_NEUTRAL: usize = 2000;
const REFERENCE_PROFILES: usize = 24;
const REFERENCE_PER_PROFILE: usize = 100;

impl ReferenceStats {
    /// Statistics over neutral grammar sentences plus their stylizations under
    /// a fixed set of reference profiles. Depends only on compiled-in constants.
    pub fn compute() -> Self {
        let root = SeededRng::new(REFERENCE_SEED);
        let mut rows = Vec::new();
        let mut rng = root.derive("reference/neutral", 0);
        for _ in 0..REFERENCE_NEUTRAL {
            let s = gen_neutral_sentence(&mut rng);
            rows.push(raw_features(&s).expect("grammar sentences are nonempty"));
        }
        for p in 0..REFERENCE_PROFILES {
            let profile = StyleProfile::random(format!("ref{p}"), &mut root.derive("reference/profile", p as u64));
            let mut rng = root.derive("reference/texts", p as u64);
            for _ in 0..REFERENCE_PER_PROFILE {
                let s = gen_neutral_sentence(&mut rng);
                let styled = stylize(&profile, &s, &mut rng).expect("grammar sentences stylize");
                rows.push(raw_features(&styled).expect("nonempty"));
            }
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; EMBED_DIM];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; EMBED_DIM];
        for r in &rows {
            for i in 0..EMBED_DIM {
                std[i] += (r[i] - mean[i]).powi(2) / n;
            }
        }
        let std = std.into_iter().map(|v| v.sqrt().max(STD_FLOOR)).collect();
        Self { mean, std }
    }

    /// The frozen statistics every embedding uses.
    pub fn shared() -> &'static ReferenceStats {
        static STATS: OnceLock<ReferenceStats> = OnceLock::new();
        STATS.get_or_init(ReferenceStats::compute)
    }
}

/// Unit-norm stylometric embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleEmbedding(Vec<f64>);

impl StyleEmbedding {
    /// Normalizes `v`; fails on zero or non-finite vectors.
    pub fn from_vec(v: Vec<f64>) -> Result<Self> {
        if v.len() != EMBED_DIM {
            return Err(Error::domain(format!(
                "embedding must have {EMBED_DIM} entries, got {}",
                v.len()
            )));
        }
        Ok(Self(l2_normalize(&v)?))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn cosine(&self, other: &StyleEmbedding) -> f64 {
        cosine_similarity(&self.0, &other.0).expect("embeddings are unit vectors")
    }
}

/// Standardized features of `text` before normalization.
pub fn standardized_features(text: &str) -> Result<Vec<f64>> {
    let raw = raw_features(text)?;
    let stats = ReferenceStats::shared();
    Ok(raw
        .iter()
        .zip(stats.mean.iter().zip(&stats.std))
        .map(|(x, (m, s))| (x - m) / s)
        .collect())
}

pub fn style_embed(text: &str) -> Result<StyleEmbedding> {
    StyleEmbedding::from_vec(standardized_features(text)?)
}

/// Normalized mean of member embeddings.
pub fn prototype_embed<S: AsRef<str>>(texts: &[S]) -> Result<StyleEmbedding> {
    if texts.is_empty() {
        return Err(Error::domain("prototype of an empty text set"));
    }
    let embs = texts
        .iter()
        .map(|t| style_embed(t.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    prototype_of(&embs)
}

/// Normalized mean of precomputed embeddings.
pub fn prototype_of(embeddings: &[StyleEmbedding]) -> Result<StyleEmbedding> {
    if embeddings.is_empty() {
        return Err(Error::domain("prototype of an empty embedding set"));
    }
    let mut sum = vec![0.0; EMBED_DIM];
    for e in embeddings {
        for (s, v) in sum.iter_mut().zip(e.as_slice()) {
            *s += v;
        }
    }
    let n = embeddings.len() as f64;
    StyleEmbedding::from_vec(sum.into_iter().map(|s| s / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TerminalMark;
    use crate::math::norm;
    use proptest::prelude::*;

    const X: &str = "the dog sees the hill.";

    #[test]
    fn embeddings_are_unit_and_deterministic() {
        let a = style_embed(X).unwrap();
        let b = style_embed(X).unwrap();
        assert_eq!(a, b);
        assert!((norm(a.as_slice()) - 1.0).abs() < 1e-12);
        assert!(style_embed("").is_err());
        assert!(style_embed("   ").is_err());
    }

    #[test]
    fn duplicated_text_keeps_rate_features() {
        let once = raw_features(X).unwrap();
        let twice = raw_features(&format!("{X}{X}")).unwrap();
        for i in (0..EMBED_DIM).filter(|&i| is_rate_feature(i)) {
            assert!(
                (once[i] - twice[i]).abs() < 1e-9,
                "feature {i}: {} vs {}",
                once[i],
                twice[i]
            );
        }
    }

    #[test]
    fn sentence_order_does_not_matter() {
        let a = style_embed("the dog sees the hill. lo, a cat has the cup!").unwrap();
        let b = style_embed("lo, a cat has the cup! the dog sees the hill.").unwrap();
        let diff = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-9);
    }

    #[test]
    fn exclamation_profile_moves_the_exclamation_coordinate() {
        let p = StyleProfile {
            terminal_punct: TerminalMark::Exclamation,
            terminal_rate: 1.0,
            ..StyleProfile::identity("p")
        };
        let styled = stylize(&p, X, &mut SeededRng::new(0)).unwrap();
        let before = raw_features(X).unwrap();
        let after = raw_features(&styled).unwrap();
        let bang = punct_feature('!').unwrap();
        let n = X.chars().count() as f64;
        assert_eq!(before[bang], 0.0);
        assert!((after[bang] - (1.0 / n).ln_1p()).abs() < 1e-15);
        let period = punct_feature('.').unwrap();
        assert_eq!(after[period], 0.0);
    }

    #[test]
    fn prototype_examples() {
        let e = style_embed(X).unwrap();
        assert_eq!(prototype_embed(&[X]).unwrap(), e);
        let two = prototype_embed(&[X, X]).unwrap();
        for (a, b) in two.as_slice().iter().zip(e.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
        let mut u = vec![0.0; EMBED_DIM];
        let mut v = vec![0.0; EMBED_DIM];
        u[0] = 1.0;
        v[1] = 1.0;
        let p = prototype_of(&[
            StyleEmbedding::from_vec(u).unwrap(),
            StyleEmbedding::from_vec(v).unwrap(),
        ])
        .unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((p.as_slice()[0] - h).abs() < 1e-15 && (p.as_slice()[1] - h).abs() < 1e-15);
        assert!(prototype_embed::<&str>(&[]).is_err());
    }

    #[test]
    fn reference_stats_are_stable() {
        let s = ReferenceStats::compute();
        assert_eq!(&s, ReferenceStats::shared());
        assert!(s.std.iter().all(|&v| v >= STD_FLOOR));
        // the terminal period is absent only from styled sentences
        let period = punct_feature('.').unwrap();
        assert!(s.mean[period] > 0.0 && s.std[period] > STD_FLOOR);
    }

    #[test]
    fn same_author_prototypes_are_closer_than_other_authors() {
        let root = SeededRng::new(11);
        let profiles: Vec<StyleProfile> = (0..4)
            .map(|i| StyleProfile::random(format!("a{i}"), &mut root.derive("p", i)))
            .collect();
        let sample = |p: &StyleProfile, stream: u64| {
            let mut rng = root.derive(&p.author_id, stream);
            let texts: Vec<String> = (0..64)
                .map(|_| stylize(p, &gen_neutral_sentence(&mut rng), &mut rng).unwrap())
                .collect();
            prototype_embed(&texts).unwrap()
        };
        for (i, p) in profiles.iter().enumerate() {
            let own = sample(p, 0).cosine(&sample(p, 1));
            for q in profiles.iter().skip(i + 1) {
                let cross = sample(p, 0).cosine(&sample(q, 0));
                assert!(
                    cross < own,
                    "{} vs {}: cross {cross} own {own}",
                    p.author_id,
                    q.author_id
                );
            }
        }
    }

    proptest! {
        #[test]
        fn arbitrary_text_embeds_to_unit_norm(s in "[a-zA-Z ,.!'\"?]{1,80}") {
            prop_assume!(!s.trim().is_empty());
            if let Ok(e) = style_embed(&s) {
                prop_assert!((norm(e.as_slice()) - 1.0).abs() < 1e-9);
            }
        }
    }
}
