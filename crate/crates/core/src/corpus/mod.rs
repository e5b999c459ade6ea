//! Deterministic synthetic author corpora built from a neutral template
//! grammar and an exactly invertible, rule-based style layer.

mod dataset;
mod grammar;
mod lexicon;
mod profile;

pub use dataset::{build_dataset, AuthorFile, AuthorRole, CorpusSpec, Dataset, SourceSplit, TrainPair};
pub use grammar::{gen_neutral_sentence, gen_neutral_sentence_with_bias, parse_neutral, MAX_NEUTRAL_CHARS};
pub use lexicon::{
    alternates_of, canonical_form, canonical_word_count, is_canonical, is_function_word, ADJECTIVES, ALTERNATES,
    ARCHAIC, CONJUNCTIONS, DETERMINERS, FUNCTION_WORDS, INTERJECTIONS, NOUNS, PREPOSITIONS, VERBS,
};
pub use profile::{neutralize, stylize, Interjection, QuoteStyle, StyleProfile, TerminalMark};
