use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::grammar::parse_neutral;
use crate::corpus::lexicon::{is_canonical, lexicon, ALTERNATES, ARCHAIC, INTERJECTIONS};
use crate::error::{Error, Result};
use crate::math::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminalMark {
    #[serde(rename = ".")]
    Period,
    #[serde(rename = "!")]
    Exclamation,
    #[serde(rename = "—")]
    Dash,
}

impl TerminalMark {
    pub const ALL: [TerminalMark; 3] = [TerminalMark::Period, TerminalMark::Exclamation, TerminalMark::Dash];

    pub fn as_char(self) -> char {
        match self {
            TerminalMark::Period => '.',
            TerminalMark::Exclamation => '!',
            TerminalMark::Dash => '—',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuoteStyle {
    Straight,
    Guillemet,
    None,
}

impl QuoteStyle {
    pub const ALL: [QuoteStyle; 3] = [QuoteStyle::Straight, QuoteStyle::Guillemet, QuoteStyle::None];

    fn marks(self) -> Option<(char, char)> {
        match self {
            QuoteStyle::Straight => Some(('"', '"')),
            QuoteStyle::Guillemet => Some(('«', '»')),
            QuoteStyle::None => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interjection {
    /// Prefix word including its comma, e.g. `"lo,"`.
    pub prefix: String,
    pub rate: f64,
}

/// Rule-based, exactly invertible writing style of one synthetic author.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleProfile {
    pub author_id: String,
    pub synonym_table: BTreeMap<String, String>,
    pub terminal_punct: TerminalMark,
    pub terminal_rate: f64,
    pub quote_style: QuoteStyle,
    pub interjection: Option<Interjection>,
    /// Offset applied to the clause count of this author's sentences.
    pub length_bias: i32,
    pub archaic_spelling: bool,
}

fn archaic_source(word: &str) -> Option<&'static str> {
    ARCHAIC.iter().find(|(w, _)| *w == word).map(|(_, f)| *f)
}

fn archaic_inverse(form: &str) -> Option<&'static str> {
    ARCHAIC.iter().find(|(_, f)| *f == form).map(|(w, _)| *w)
}

impl StyleProfile {
    /// The profile whose stylization is the identity.
    pub fn identity(author_id: impl Into<String>) -> Self {
        Self {
            author_id: author_id.into(),
            synonym_table: BTreeMap::new(),
            terminal_punct: TerminalMark::Period,
            terminal_rate: 0.0,
            quote_style: QuoteStyle::None,
            interjection: None,
            length_bias: 0,
            archaic_spelling: false,
        }
    }

    /// Fresh draw from the transform family.
    pub fn random(author_id: impl Into<String>, rng: &mut SeededRng) -> Self {
        let mut synonym_table = BTreeMap::new();
        for (word, alts) in ALTERNATES {
            if rng.bernoulli(0.35) {
                synonym_table.insert(word.to_string(), rng.choose(alts).to_string());
            }
        }
        let terminal_punct = *rng.choose(&TerminalMark::ALL);
        let terminal_rate = rng.uniform(0.6, 1.0);
        let quote_style = *rng.choose(&QuoteStyle::ALL);
        let interjection = rng.bernoulli(0.6).then(|| Interjection {
            prefix: rng.choose(INTERJECTIONS).to_string(),
            rate: rng.uniform(0.5, 1.0),
        });
        let length_bias = rng.below(3) as i32 - 1;
        let archaic_spelling = rng.bernoulli(0.5);
        Self {
            author_id: author_id.into(),
            synonym_table,
            terminal_punct,
            terminal_rate,
            quote_style,
            interjection,
            length_bias,
            archaic_spelling,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(format!("profile {}: {m}", self.author_id)));
        if self.author_id.is_empty() {
            return bad("empty author id".into());
        }
        if !(0.0..=1.0).contains(&self.terminal_rate) {
            return bad(format!("terminal rate {} outside [0,1]", self.terminal_rate));
        }
        let lex = lexicon();
        let mut values = HashSet::new();
        for (k, v) in &self.synonym_table {
            if !is_canonical(k) {
                return bad(format!("synonym key {k:?} is not a canonical word"));
            }
            if archaic_source(k).is_some() {
                return bad(format!("synonym key {k:?} has an archaic spelling"));
            }
            if v.is_empty() || !v.bytes().all(|b| b.is_ascii_lowercase()) {
                return bad(format!("synonym {v:?} is not a lowercase word"));
            }
            if is_canonical(v) || lex.archaic_forms.contains(v.as_str()) || lex.interjection_words.contains(v.as_str())
            {
                return bad(format!("synonym {v:?} collides with another lexicon"));
            }
            if !values.insert(v) {
                return bad(format!("synonym table is not injective at {v:?}"));
            }
        }
        if let Some(i) = &self.interjection {
            if !(0.0..=1.0).contains(&i.rate) {
                return bad(format!("interjection rate {} outside [0,1]", i.rate));
            }
            let word = i.prefix.strip_suffix(',').unwrap_or("");
            if word.is_empty() || !word.bytes().all(|b| b.is_ascii_lowercase()) {
                return bad(format!(
                    "interjection {:?} must be a lowercase word followed by a comma",
                    i.prefix
                ));
            }
            if is_canonical(word) || values.contains(&word.to_string()) {
                return bad(format!("interjection {:?} collides with the lexicon", i.prefix));
            }
        }
        Ok(())
    }

    fn inverse_synonyms(&self) -> HashMap<&str, &str> {
        self.synonym_table
            .iter()
            .map(|(k, v)| (v.as_str(), k.as_str()))
            .collect()
    }
}

/// Applies synonym substitution, archaic spelling, the interjection prefix,
/// the terminal mark swap and quoting, in that order.
pub fn stylize(profile: &StyleProfile, neutral: &str, rng: &mut SeededRng) -> Result<String> {
    parse_neutral(neutral)?;
    let body = &neutral[..neutral.len() - 1];
    let mut words = Vec::new();
    for token in body.split(' ') {
        let (word, comma) = match token.strip_suffix(',') {
            Some(w) => (w, ","),
            None => (token, ""),
        };
        let mut w = profile.synonym_table.get(word).map(String::as_str).unwrap_or(word);
        if profile.archaic_spelling {
            w = archaic_source(w).unwrap_or(w);
        }
        words.push(format!("{w}{comma}"));
    }
    let mut out = words.join(" ");
    if let Some(i) = &profile.interjection {
        if rng.bernoulli(i.rate) {
            out = format!("{} {out}", i.prefix);
        }
    }
    out.push(if rng.bernoulli(profile.terminal_rate) {
        profile.terminal_punct.as_char()
    } else {
        '.'
    });
    if let Some((open, close)) = profile.quote_style.marks() {
        out = format!("{open}{out}{close}");
    }
    Ok(out)
}

/// Exact inverse of [`stylize`] under the same profile. Text outside the
/// image of `stylize` is rejected.
pub fn neutralize(profile: &StyleProfile, styled: &str) -> Result<String> {
    let not_image = |why: &str| {
        Error::format(format!(
            "not produced by profile {}: {why}: {styled:?}",
            profile.author_id
        ))
    };
    let mut text = styled;
    if let Some((open, close)) = profile.quote_style.marks() {
        text = text
            .strip_prefix(open)
            .and_then(|t| t.strip_suffix(close))
            .ok_or_else(|| not_image("missing quotes"))?;
    }
    let last = text.chars().last().ok_or_else(|| not_image("empty"))?;
    let body = &text[..text.len() - last.len_utf8()];
    let swapped = profile.terminal_punct != TerminalMark::Period && last == profile.terminal_punct.as_char();
    let kept = last == '.';
    if !(swapped || kept) || (swapped && profile.terminal_rate == 0.0) {
        return Err(not_image("terminal mark"));
    }
    if kept && profile.terminal_punct != TerminalMark::Period && profile.terminal_rate == 1.0 {
        return Err(not_image("terminal mark"));
    }
    let mut body = body;
    if let Some(i) = &profile.interjection {
        match body.strip_prefix(i.prefix.as_str()).and_then(|b| b.strip_prefix(' ')) {
            Some(rest) if i.rate > 0.0 => body = rest,
            Some(_) => return Err(not_image("interjection")),
            None if i.rate == 1.0 => return Err(not_image("interjection")),
            None => {}
        }
    }
    let inverse = profile.inverse_synonyms();
    let mut words = Vec::new();
    for token in body.split(' ') {
        let (word, comma) = match token.strip_suffix(',') {
            Some(w) => (w, ","),
            None => (token, ""),
        };
        let mut w = word;
        if profile.archaic_spelling {
            if archaic_source(w).is_some() {
                return Err(not_image("unconverted archaic word"));
            }
            w = archaic_inverse(w).unwrap_or(w);
        }
        if let Some(canon) = inverse.get(w) {
            w = canon;
        } else if profile.synonym_table.contains_key(w) {
            return Err(not_image("unsubstituted synonym"));
        }
        words.push(format!("{w}{comma}"));
    }
    let neutral = format!("{}.", words.join(" "));
    parse_neutral(&neutral).map_err(|_| not_image("body is not a neutral sentence"))?;
    Ok(neutral)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::gen_neutral_sentence;
    use proptest::prelude::*;

    fn punct_profile() -> StyleProfile {
        StyleProfile {
            terminal_punct: TerminalMark::Exclamation,
            terminal_rate: 1.0,
            ..StyleProfile::identity("punct")
        }
    }

    fn hound_profile() -> StyleProfile {
        let mut p = StyleProfile::identity("lo");
        p.synonym_table.insert("dog".into(), "hound".into());
        p.interjection = Some(Interjection {
            prefix: "lo,".into(),
            rate: 1.0,
        });
        p
    }

    const SENT: &str = "the dog sees the hill.";

    #[test]
    fn identity_profile_is_identity() {
        let p = StyleProfile::identity("id");
        let mut rng = SeededRng::new(0);
        assert_eq!(stylize(&p, SENT, &mut rng).unwrap(), SENT);
        assert_eq!(neutralize(&p, SENT).unwrap(), SENT);
    }

    #[test]
    fn single_rule_examples() {
        let mut rng = SeededRng::new(0);
        assert_eq!(
            stylize(&punct_profile(), SENT, &mut rng).unwrap(),
            "the dog sees the hill!"
        );
        assert_eq!(neutralize(&punct_profile(), "the dog sees the hill!").unwrap(), SENT);
        let p = hound_profile();
        assert_eq!(stylize(&p, SENT, &mut rng).unwrap(), "lo, the hound sees the hill.");
        assert_eq!(neutralize(&p, "lo, the hound sees the hill.").unwrap(), SENT);
    }

    #[test]
    fn all_transforms_together() {
        let mut p = hound_profile();
        p.archaic_spelling = true;
        p.quote_style = QuoteStyle::Guillemet;
        p.terminal_punct = TerminalMark::Dash;
        p.terminal_rate = 1.0;
        let s = "the dog sees the hill, while a cat has the cup.";
        let styled = stylize(&p, s, &mut SeededRng::new(0)).unwrap();
        assert_eq!(styled, "«lo, the hound seeth the hill, whilst a cat hath the cup—»");
        assert_eq!(neutralize(&p, &styled).unwrap(), s);
    }

    #[test]
    fn foreign_words_are_format_errors() {
        let p = StyleProfile::identity("id");
        let mut rng = SeededRng::new(0);
        assert!(matches!(
            stylize(&p, "the zebra sees the hill.", &mut rng),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            neutralize(&p, "the zebra sees the hill."),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            neutralize(&hound_profile(), "lo, the dog sees the hill."),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            neutralize(&hound_profile(), "the hound sees the hill."),
            Err(Error::Format(_))
        ));
        assert!(matches!(neutralize(&punct_profile(), SENT), Err(Error::Format(_))));
        let mut q = StyleProfile::identity("q");
        q.quote_style = QuoteStyle::Straight;
        assert!(matches!(neutralize(&q, SENT), Err(Error::Format(_))));
    }

    #[test]
    fn validation_rejects_non_injective_tables() {
        let mut p = StyleProfile::identity("x");
        p.synonym_table.insert("dog".into(), "hound".into());
        p.synonym_table.insert("cat".into(), "hound".into());
        assert!(p.validate().is_err());
        let mut p = StyleProfile::identity("x");
        p.synonym_table.insert("dog".into(), "cat".into());
        assert!(p.validate().is_err());
        let mut p = StyleProfile::identity("x");
        p.terminal_rate = 1.5;
        assert!(p.validate().is_err());
    }

    #[test]
    fn random_profiles_are_valid() {
        for i in 0..200 {
            StyleProfile::random(format!("a{i}"), &mut SeededRng::new(i))
                .validate()
                .unwrap();
        }
    }

    proptest! {
        #[test]
        fn neutralize_inverts_stylize(profile_seed in 0u64..10_000, text_seed in 0u64..10_000) {
            let p = StyleProfile::random("p", &mut SeededRng::new(profile_seed));
            let mut rng = SeededRng::new(text_seed);
            let x = gen_neutral_sentence(&mut rng);
            let styled = stylize(&p, &x, &mut rng).unwrap();
            prop_assert_eq!(neutralize(&p, &styled).unwrap(), x);
        }
    }
}
