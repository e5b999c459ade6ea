//! Fixed word lists shared by the grammar, the style layer and the metrics.

use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

pub const NOUNS: &[&str] = &[
    "dog", "cat", "hill", "river", "bird", "tree", "stone", "boat", "horse", "field", "house", "lamp", "road", "child",
    "king", "queen", "wolf", "fox", "crow", "owl", "ship", "bell", "door", "gate", "wall", "well", "cart", "farm",
    "barn", "mill", "pond", "lake", "town", "moon", "star", "sun", "wind", "rain", "snow", "fire", "bread", "cup",
    "box", "book", "coin", "ring", "sword", "shield", "crown", "cloak", "hat", "boot", "rope", "net", "fish", "frog",
    "goat", "sheep", "cow", "mule", "bear", "deer", "hare", "mouse", "seed", "leaf", "rose", "oak", "pine", "reed",
    "sand", "wave", "shore", "cave", "path", "bridge", "tower", "garden", "window", "table", "chair", "knife", "key",
    "map", "song", "letter", "baker", "miller",
];

pub const VERBS: &[&str] = &[
    "sees", "finds", "follows", "holds", "takes", "gives", "keeps", "knows", "makes", "has", "meets", "leaves",
    "carries", "watches", "guards", "moves", "pulls", "pushes", "lifts", "drops", "paints", "builds", "opens", "shuts",
    "calls", "greets", "feeds", "hides", "chases", "sells", "buys", "breaks", "fixes", "counts", "marks", "wants",
    "needs", "likes", "helps", "joins", "reaches", "passes", "crosses", "rides", "fills", "cleans", "wakes", "hears",
];

pub const ADJECTIVES: &[&str] = &[
    "old", "young", "small", "big", "red", "green", "blue", "white", "black", "grey", "cold", "warm", "quiet", "loud",
    "tall", "short", "dark", "bright", "wet", "dry", "slow", "quick", "brave", "calm", "kind", "proud", "wild",
    "plain", "round", "soft", "hard", "sweet", "wise", "poor", "rich", "pale", "lean", "fair", "grim", "gentle",
];

pub const DETERMINERS: &[&str] = &["the", "a", "each", "every", "one", "that", "this", "some", "no"];

pub const PREPOSITIONS: &[&str] = &[
    "by", "near", "with", "over", "under", "past", "from", "into", "beside", "behind",
];

pub const CONJUNCTIONS: &[&str] = &["and", "but", "so", "yet", "while", "then"];

/// Interjection prefixes, rendered as the prefix followed by a space.
pub const INTERJECTIONS: &[&str] = &["lo,", "alas,", "oh,", "hark,", "ah,", "behold,", "fie,", "yea,"];

/// Archaic spellings. The source words are never synonym targets.
pub const ARCHAIC: &[(&str, &str)] = &[
    ("has", "hath"),
    ("makes", "maketh"),
    ("takes", "taketh"),
    ("gives", "giveth"),
    ("keeps", "keepeth"),
    ("knows", "knoweth"),
    ("holds", "holdeth"),
    ("sees", "seeth"),
    ("over", "o'er"),
    ("near", "nigh"),
    ("while", "whilst"),
];

/// Stylistic alternates per canonical word. Alternates are never canonical
/// words and each belongs to exactly one canonical word.
pub const ALTERNATES: &[(&str, [&str; 2])] = &[
    ("dog", ["hound", "cur"]),
    ("cat", ["puss", "mouser"]),
    ("hill", ["knoll", "mound"]),
    ("river", ["stream", "brook"]),
    ("bird", ["fowl", "finch"]),
    ("tree", ["sapling", "trunk"]),
    ("stone", ["pebble", "rock"]),
    ("boat", ["skiff", "barge"]),
    ("horse", ["steed", "mare"]),
    ("field", ["meadow", "lea"]),
    ("house", ["cottage", "hut"]),
    ("road", ["lane", "track"]),
    ("child", ["lad", "lass"]),
    ("king", ["monarch", "lord"]),
    ("fox", ["vixen", "reynard"]),
    ("ship", ["vessel", "galley"]),
    ("door", ["portal", "hatch"]),
    ("town", ["village", "burgh"]),
    ("moon", ["luna", "crescent"]),
    ("sun", ["sol", "daystar"]),
    ("wind", ["breeze", "gale"]),
    ("fire", ["blaze", "flame"]),
    ("cup", ["goblet", "mug"]),
    ("book", ["tome", "volume"]),
    ("coin", ["penny", "ducat"]),
    ("sword", ["blade", "saber"]),
    ("cloak", ["mantle", "cape"]),
    ("path", ["trail", "byway"]),
    ("garden", ["grove", "orchard"]),
    ("old", ["ancient", "aged"]),
    ("small", ["tiny", "little"]),
    ("big", ["huge", "vast"]),
    ("quick", ["swift", "fleet"]),
    ("quiet", ["hushed", "silent"]),
    ("bright", ["radiant", "shining"]),
    ("cold", ["chill", "frosty"]),
    ("dark", ["dim", "murky"]),
    ("brave", ["bold", "valiant"]),
    ("wise", ["sage", "learned"]),
    ("finds", ["discovers", "spots"]),
    ("follows", ["pursues", "tracks"]),
    ("carries", ["bears", "hauls"]),
    ("watches", ["observes", "regards"]),
    ("greets", ["hails", "salutes"]),
    ("builds", ["raises", "erects"]),
    ("breaks", ["shatters", "smashes"]),
    ("calls", ["summons", "beckons"]),
    ("chases", ["hunts", "harries"]),
    ("helps", ["aids", "assists"]),
];

/// Fixed list of 40 function words counted by the style embedding.
pub const FUNCTION_WORDS: [&str; 40] = [
    "the", "a", "each", "every", "one", "that", "this", "some", "no", "by", "near", "with", "over", "under", "past",
    "from", "into", "beside", "behind", "and", "but", "so", "yet", "while", "then", "lo", "alas", "oh", "hark", "ah",
    "behold", "fie", "yea", "nigh", "whilst", "hath", "seeth", "maketh", "taketh", "giveth",
];

pub(crate) struct Lexicon {
    pub canonical: HashSet<&'static str>,
    /// Every style-layer surface form mapped back to its canonical word.
    pub to_canonical: HashMap<&'static str, &'static str>,
    pub archaic_forms: HashSet<&'static str>,
    pub interjection_words: HashSet<&'static str>,
    pub function_words: HashSet<&'static str>,
}

pub(crate) fn lexicon() -> &'static Lexicon {
    static LEX: OnceLock<Lexicon> = OnceLock::new();
    LEX.get_or_init(|| {
        let canonical: HashSet<&str> = [NOUNS, VERBS, ADJECTIVES, DETERMINERS, PREPOSITIONS, CONJUNCTIONS]
            .concat()
            .into_iter()
            .collect();
        let mut to_canonical = HashMap::new();
        for (word, alts) in ALTERNATES {
            for a in alts {
                to_canonical.insert(*a, *word);
            }
        }
        for (word, form) in ARCHAIC {
            to_canonical.insert(*form, *word);
        }
        Lexicon {
            canonical,
            to_canonical,
            archaic_forms: ARCHAIC.iter().map(|(_, f)| *f).collect(),
            interjection_words: INTERJECTIONS.iter().map(|w| w.trim_end_matches(',')).collect(),
            function_words: FUNCTION_WORDS.iter().copied().collect(),
        }
    })
}

/// Number of distinct canonical words the grammar draws from.
pub fn canonical_word_count() -> usize {
    lexicon().canonical.len()
}

pub fn is_canonical(word: &str) -> bool {
    lexicon().canonical.contains(word)
}

/// Maps any style-layer surface form (alternate or archaic spelling) to its
/// canonical word; other words map to themselves.
/// Closed-class words that carry no content.
pub fn is_function_word(word: &str) -> bool {
    lexicon().function_words.contains(word)
}

pub fn canonical_form(word: &str) -> &str {
    lexicon().to_canonical.get(word).copied().unwrap_or(word)
}

pub fn alternates_of(word: &str) -> Option<&'static [&'static str; 2]> {
    ALTERNATES.iter().find(|(w, _)| *w == word).map(|(_, a)| a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_lists_are_consistent() {
        let all = [NOUNS, VERBS, ADJECTIVES, DETERMINERS, PREPOSITIONS, CONJUNCTIONS].concat();
        assert_eq!(all.len(), canonical_word_count(), "duplicate canonical word");
        assert!(canonical_word_count() >= 200);
        let lex = lexicon();
        let mut seen = HashSet::new();
        for (w, alts) in ALTERNATES {
            assert!(is_canonical(w), "{w}");
            assert!(!ARCHAIC.iter().any(|(s, _)| s == w), "{w} is also archaic");
            for a in alts {
                assert!(!is_canonical(a), "{a}");
                assert!(!lex.interjection_words.contains(a));
                assert!(!lex.archaic_forms.contains(a));
                assert!(seen.insert(*a), "alternate {a} reused");
            }
        }
        for (w, f) in ARCHAIC {
            assert!(is_canonical(w));
            assert!(!is_canonical(f));
        }
        for i in &lex.interjection_words {
            assert!(!is_canonical(i));
        }
        assert_eq!(lex.function_words.len(), 40);
    }
}
