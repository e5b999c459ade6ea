use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{canonical_form, is_function_word, INTERJECTIONS};
use crate::error::{Error, Result};
use crate::math::angular_similarity;
use crate::metrics::embedding::StyleEmbedding;
use crate::model::{encode_prompt, sequence_log_prob, BaseModel, Tokenizer};

fn sim(a: &StyleEmbedding, b: &StyleEmbedding) -> f64 {
    angular_similarity(a.as_slice(), b.as_slice()).expect("embeddings are unit vectors")
}

fn pair_denominator(e_s: &StyleEmbedding, e_t: &StyleEmbedding) -> Result<f64> {
    let d = 1.0 - sim(e_s, e_t);
    if d <= 0.0 {
        return Err(Error::domain("degenerate pair: source and target embeddings coincide"));
    }
    Ok(d)
}

/// Movement toward the target as a fraction of the maximum possible movement.
pub fn toward(e_s: &StyleEmbedding, e_t: &StyleEmbedding, e_out: &StyleEmbedding) -> Result<f64> {
    let denom = pair_denominator(e_s, e_t)?;
    let gain = (sim(e_out, e_t) - sim(e_s, e_t)).max(0.0);
    Ok((gain / denom).clamp(0.0, 1.0))
}

/// Distance moved from the source as a fraction of the source-target distance.
pub fn away(e_s: &StyleEmbedding, e_t: &StyleEmbedding, e_out: &StyleEmbedding) -> Result<f64> {
    let denom = pair_denominator(e_s, e_t)?;
    Ok(((1.0 - sim(e_out, e_s)) / denom).clamp(0.0, 1.0))
}

/// Content-word bag: style lexica mapped to canonical words, then function
/// words, interjections and punctuation dropped.
pub fn content_words(text: &str) -> BTreeMap<String, usize> {
    let mut bag = BTreeMap::new();
    let lowered = text.to_ascii_lowercase();
    for raw in lowered.split(|c: char| !(c.is_ascii_alphabetic() || c == '\'')) {
        let w = raw.trim_matches('\'');
        if w.is_empty() || INTERJECTIONS.iter().any(|i| i.trim_end_matches(',') == w) {
            continue;
        }
        let canon = canonical_form(w);
        if is_function_word(canon) {
            continue;
        }
        *bag.entry(canon.to_string()).or_insert(0) += 1;
    }
    bag
}

/// Cosine of content-word frequency vectors; 0 when either side has no
/// content words.
pub fn meaning_score(source: &str, rewrite: &str) -> f64 {
    let a = content_words(source);
    let b = content_words(rewrite);
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let dot: f64 = a.iter().filter_map(|(w, &x)| b.get(w).map(|&y| (x * y) as f64)).sum();
    let na: f64 = a.values().map(|&x| (x * x) as f64).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|&x| (x * x) as f64).sum::<f64>().sqrt();
    if a == b {
        return 1.0;
    }
    (dot / (na * nb)).clamp(0.0, 1.0)
}

/// Geometric mean of toward and meaning.
pub fn joint(toward: f64, meaning: f64) -> f64 {
    (toward * meaning).sqrt()
}

/// `exp(-mean per-token cross-entropy)` of `text` ids after `prompt` ids.
pub fn fluency_of_ids(model: &BaseModel, prompt: &[usize], text: &[usize]) -> Result<f64> {
    if text.is_empty() {
        return Err(Error::domain("fluency of empty text"));
    }
    let room = model.config.context_len.saturating_sub(prompt.len());
    let text = &text[..text.len().min(room)];
    let lp = sequence_log_prob(model, &[], prompt, text)?;
    Ok((lp / text.len() as f64).exp())
}

/// Fluency of `text` under the base model, read in the input slot of the
/// instruction template.
pub fn fluency(model: &BaseModel, tok: &Tokenizer, text: &str) -> Result<f64> {
    let mut prompt = encode_prompt(tok, "")?;
    prompt.pop(); // drop the newline that closes the input slot
    fluency_of_ids(model, &prompt, &tok.encode(text)?)
}

/// Scores of one rewrite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub toward: f64,
    pub away: f64,
    pub meaning: f64,
    pub joint: f64,
    pub fluency: f64,
}

impl ScoreReport {
    pub fn new(toward: f64, away: f64, meaning: f64, fluency: f64) -> Self {
        Self {
            toward,
            away,
            meaning,
            joint: joint(toward, meaning),
            fluency,
        }
    }
}

/// One CSV row: a scored rewrite of one source text toward one target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub pair_id: String,
    pub source_author: String,
    pub target_author: String,
    #[serde(flatten)]
    pub scores: ScoreReport,
}

pub const SCORE_CSV_HEADER: &str = "pair_id,source_author,target_author,toward,away,meaning,joint,fluency";

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// RFC 4180 CSV with CRLF line endings. Floats use Rust's shortest
/// round-trip formatting.
pub fn scores_to_csv(rows: &[ScoreRow]) -> String {
    let mut out = format!("{SCORE_CSV_HEADER}\r\n");
    for r in rows {
        let s = &r.scores;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\r\n",
            csv_field(&r.pair_id),
            csv_field(&r.source_author),
            csv_field(&r.target_author),
            s.toward,
            s.away,
            s.meaning,
            s.joint,
            s.fluency
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{gen_neutral_sentence, stylize, StyleProfile};
    use crate::math::SeededRng;
    use crate::metrics::embedding::{style_embed, EMBED_DIM};
    use crate::model::ModelConfig;
    use proptest::prelude::*;

    fn unit(i: usize) -> StyleEmbedding {
        let mut v = vec![0.0; EMBED_DIM];
        v[i] = 1.0;
        StyleEmbedding::from_vec(v).unwrap()
    }

    /// Unit vector at `angle` from the first axis in the plane of axes 0 and 1.
    fn at_angle(angle: f64) -> StyleEmbedding {
        let mut v = vec![0.0; EMBED_DIM];
        v[0] = angle.cos();
        v[1] = angle.sin();
        StyleEmbedding::from_vec(v).unwrap()
    }

    /// Angle with angular similarity `s`.
    fn angle_for(s: f64) -> f64 {
        (1.0 - s) * std::f64::consts::PI
    }

    #[test]
    fn toward_examples() {
        let e_s = unit(1);
        let e_t = unit(0);
        assert_eq!(toward(&e_s, &e_t, &e_t).unwrap(), 1.0);
        assert_eq!(toward(&e_s, &e_t, &e_s).unwrap(), 0.0);
        let e_s = at_angle(angle_for(0.6));
        let e_out = at_angle(-angle_for(0.8));
        assert!((toward(&e_s, &e_t, &e_out).unwrap() - 0.5).abs() < 1e-12);
        assert!(toward(&e_t, &e_t, &e_s).is_err());
    }

    #[test]
    fn away_examples() {
        let e_s = unit(1);
        let e_t = unit(0);
        assert_eq!(away(&e_s, &e_t, &e_s).unwrap(), 0.0);
        assert_eq!(away(&e_s, &e_t, &e_t).unwrap(), 1.0);
        // Sim(s,t) = 0.4 and Sim(out,s) = 0.7
        let e_s = unit(0);
        let e_t = at_angle(angle_for(0.4));
        let e_out = at_angle(-angle_for(0.7));
        assert!((away(&e_s, &e_t, &e_out).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn meaning_examples() {
        let x = "the dog sees the hill.";
        assert_eq!(meaning_score(x, x), 1.0);
        assert!((meaning_score(x, "the cat sees the hill.") - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(meaning_score("the a.", x), 0.0);
        assert_eq!(meaning_score("«lo, the hound seeth the knoll—»", x), 1.0);
    }

    #[test]
    fn meaning_is_one_under_every_random_profile() {
        let mut rng = SeededRng::new(4);
        for i in 0..200 {
            let p = StyleProfile::random("p", &mut SeededRng::new(i));
            let x = gen_neutral_sentence(&mut rng);
            let y = stylize(&p, &x, &mut rng).unwrap();
            assert_eq!(meaning_score(&x, &y), 1.0, "{x} / {y}");
        }
    }

    #[test]
    fn joint_examples() {
        assert_eq!(joint(0.0, 0.9), 0.0);
        assert_eq!(joint(1.0, 1.0), 1.0);
        assert!((joint(0.16, 0.83) - 0.364_417_343_165_321_3).abs() < 1e-12);
        assert!((joint(0.16, 0.83) - 0.34).abs() > 0.02);
    }

    #[test]
    fn uniform_model_fluency_is_one_over_vocab() {
        let cfg = ModelConfig {
            vocab_size: 4,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 16,
            context_len: 16,
        };
        let mut m = BaseModel::init(cfg, &mut SeededRng::new(0)).unwrap();
        m.head.fill(0.0);
        let f = fluency_of_ids(&m, &[0, 1], &[2, 3, 1, 2]).unwrap();
        assert!((f - 0.25).abs() < 1e-12);
    }

    #[test]
    fn csv_has_the_documented_columns() {
        let row = ScoreRow {
            pair_id: "src00>tgt01#3".into(),
            source_author: "src00".into(),
            target_author: "tgt01".into(),
            scores: ScoreReport::new(0.25, 0.5, 1.0, 0.75),
        };
        let csv = scores_to_csv(&[row]);
        let lines: Vec<&str> = csv.split("\r\n").collect();
        assert_eq!(lines[0], SCORE_CSV_HEADER);
        assert_eq!(lines[1], "src00>tgt01#3,src00,tgt01,0.25,0.5,1,0.5,0.75");
        assert_eq!(csv_field("a,b"), "\"a,b\"");
    }

    fn text_strategy() -> impl Strategy<Value = String> {
        "[a-z !.,'\"]{1,60}".prop_filter("nonblank", |s| !s.trim().is_empty())
    }

    proptest! {
        #[test]
        fn scores_stay_in_unit_interval(a in text_strategy(), b in text_strategy(), c in text_strategy()) {
            let (Ok(es), Ok(et), Ok(eo)) = (style_embed(&a), style_embed(&b), style_embed(&c)) else {
                return Ok(());
            };
            if let (Ok(t), Ok(w)) = (toward(&es, &et, &eo), away(&es, &et, &eo)) {
                let m = meaning_score(&a, &c);
                prop_assert!((0.0..=1.0).contains(&t));
                prop_assert!((0.0..=1.0).contains(&w));
                prop_assert!((0.0..=1.0).contains(&m));
                let j = joint(t, m);
                prop_assert!((0.0..=1.0).contains(&j));
                prop_assert!((j * j - t * m).abs() <= 1e-15);
            }
        }

        #[test]
        fn meaning_is_symmetric(a in text_strategy(), b in text_strategy()) {
            prop_assert_eq!(meaning_score(&a, &b), meaning_score(&b, &a));
        }

        #[test]
        fn toward_depends_only_on_angles(seed in 0u64..1000) {
            let mut rng = SeededRng::new(seed);
            let mut draw = || StyleEmbedding::from_vec((0..EMBED_DIM).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap();
            let (s, t, o) = (draw(), draw(), draw());
            // a random rotation in the plane of two random coordinates
            let (i, j) = (rng.below(EMBED_DIM), rng.below(EMBED_DIM));
            prop_assume!(i != j);
            let theta = rng.uniform(0.0, std::f64::consts::TAU);
            let rot = |e: &StyleEmbedding| {
                let mut v = e.as_slice().to_vec();
                let (a, b) = (v[i], v[j]);
                v[i] = theta.cos() * a - theta.sin() * b;
                v[j] = theta.sin() * a + theta.cos() * b;
                StyleEmbedding::from_vec(v).unwrap()
            };
            let before = toward(&s, &t, &o).unwrap();
            let after = toward(&rot(&s), &rot(&t), &rot(&o)).unwrap();
            prop_assert!((before - after).abs() < 1e-9);
        }
    }
}
