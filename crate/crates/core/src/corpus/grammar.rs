use crate::corpus::lexicon::is_canonical;
use crate::corpus::lexicon::{ADJECTIVES, CONJUNCTIONS, DETERMINERS, NOUNS, PREPOSITIONS, VERBS};
use crate::error::{Error, Result};
use crate::math::SeededRng;

/// Neutral sentences are kept short so a prompt and its rewrite fit in the
/// model context together.
pub const MAX_NEUTRAL_CHARS: usize = 44;

/// One subject-verb-object clause with up to three modifier slots: an
/// adjective on the subject, an adjective on the object, a trailing
/// prepositional phrase.
fn clause(rng: &mut SeededRng, modifiers: usize) -> String {
    let mut slots = [false; 3];
    let mut order = [0usize, 1, 2];
    rng.shuffle(&mut order);
    for &slot in order.iter().take(modifiers) {
        slots[slot] = true;
    }
    let mut words: Vec<&str> = Vec::with_capacity(10);
    let noun_phrase = |rng: &mut SeededRng, adj: bool, words: &mut Vec<&str>| {
        words.push(rng.choose(DETERMINERS));
        if adj {
            words.push(rng.choose(ADJECTIVES));
        }
        words.push(rng.choose(NOUNS));
    };
    noun_phrase(rng, slots[0], &mut words);
    words.push(rng.choose(VERBS));
    noun_phrase(rng, slots[1], &mut words);
    if slots[2] {
        words.push(rng.choose(PREPOSITIONS));
        noun_phrase(rng, false, &mut words);
    }
    words.join(" ")
}

/// Draws a neutral sentence: subject-verb-object clauses joined by
/// `", <conjunction> "` and closed with a period.
pub fn gen_neutral_sentence(rng: &mut SeededRng) -> String {
    gen_neutral_sentence_with_bias(rng, 0)
}

/// Like [`gen_neutral_sentence`] with the clause count shifted by `clause_bias`.
///
/// Two full clauses almost never fit under [`MAX_NEUTRAL_CHARS`], so the
/// count is spent on modifier phrases: one unit per adjective or trailing
/// prepositional phrase, and a second coordinated clause at three units.
pub fn gen_neutral_sentence_with_bias(rng: &mut SeededRng, clause_bias: i32) -> String {
    let base = [0, 1, 1, 2][rng.below(4)];
    let mut units = (base + clause_bias).clamp(0, 3) as usize;
    loop {
        let attempts = if units == 3 { 256 } else { 32 };
        for _ in 0..attempts {
            let mut s = if units == 3 {
                format!("{}, {} {}", clause(rng, 0), rng.choose(CONJUNCTIONS), clause(rng, 0))
            } else {
                clause(rng, units)
            };
            s.push('.');
            if s.len() <= MAX_NEUTRAL_CHARS {
                return s;
            }
        }
        units = units.saturating_sub(1);
    }
}

/// Splits a neutral sentence into words, checking that it has the grammar's
/// surface shape: lowercase canonical words, `", "` separators and a final period.
pub fn parse_neutral(text: &str) -> Result<Vec<&str>> {
    let body = text
        .strip_suffix('.')
        .ok_or_else(|| Error::format(format!("neutral sentence must end with '.': {text:?}")))?;
    if body.is_empty() {
        return Err(Error::format("empty sentence"));
    }
    let mut words = Vec::new();
    for clause in body.split(", ") {
        for w in clause.split(' ') {
            if w.is_empty() || !w.bytes().all(|b| b.is_ascii_lowercase()) {
                return Err(Error::format(format!("malformed word {w:?} in {text:?}")));
            }
            if !is_canonical(w) {
                return Err(Error::format(format!("word {w:?} is outside the canonical lexicon")));
            }
            words.push(w);
        }
    }
    Ok(words)
}
