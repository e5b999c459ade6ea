//! Stylometric embeddings and the rewrite scoring suite.

mod embedding;
mod scores;

pub use embedding::{
    is_rate_feature, prototype_embed, prototype_of, punct_feature, raw_features, standardized_features, style_embed,
    ReferenceStats, StyleEmbedding, ARCHAIC_FEATURE, EMBED_DIM, FUNCTION_WORD_OFFSET, INTERJECTION_FEATURE,
    MEAN_SENTENCE_LEN_FEATURE, MEAN_WORD_LEN_FEATURE, PUNCT_MARKS, STD_FLOOR, TYPE_TOKEN_FEATURE, UPPERCASE_FEATURE,
};
pub(crate) use scores::csv_field;
pub use scores::{
    away, content_words, fluency, fluency_of_ids, joint, meaning_score, scores_to_csv, toward, ScoreReport, ScoreRow,
    SCORE_CSV_HEADER,
};
