use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{gen_neutral_sentence_with_bias, stylize, AuthorFile, AuthorRole, Dataset, StyleProfile};
use crate::error::{Error, Result};
use crate::experiment::config::{AdapterTrainSpec, BaseTrainSpec, Method, RunConfig};
use crate::math::SeededRng;
use crate::metrics::{
    away, fluency, meaning_score, prototype_embed, style_embed, toward, ScoreReport, ScoreRow, StyleEmbedding,
};
use crate::mixing::{Granularity, MixWeights};
use crate::model::{
    encode_completion, encode_prompt, mean_loss, sft_train_adapter, train_base, AuthorAdapter, BaseModel, Decoding,
    Tokenizer, TrainExample, TrainReport,
};
use crate::optim::{es_optimize, grpo_optimize, RewardContext, SourceText, TraceRow};
use crate::selection::{sampled_prototype, AdapterLibrary, LibraryEntry, PROTOTYPE_SAMPLE};

/// Decoding used for every rewrite that gets scored.
pub const REWRITE_DECODING: Decoding = Decoding::Sample {
    temperature: 1.0,
    top_p: 0.95,
};

fn pair_example(tok: &Tokenizer, input: &str, output: &str) -> Result<TrainExample> {
    TrainExample::completion(&encode_prompt(tok, input)?, &encode_completion(tok, output)?)
}

/// Pretraining pairs for the base rewriter, split into train and held-out.
///
/// Styles come from fresh random profiles that share no id with the dataset
/// authors, plus the neutral style. Each output style gets
/// `texts_per_profile` examples whose input style is drawn uniformly.
pub fn base_examples(spec: &BaseTrainSpec) -> Result<(Vec<TrainExample>, Vec<TrainExample>)> {
    let tok = Tokenizer::standard();
    let root = SeededRng::new(spec.seed);
    let mut styles = vec![StyleProfile::identity("neutral")];
    for p in 0..spec.pretrain_profiles {
        styles.push(StyleProfile::random(
            format!("pre{p:02}"),
            &mut root.derive("pretrain/profile", p as u64),
        ));
    }
    let mut all = Vec::new();
    for (o, out_style) in styles.iter().enumerate() {
        let mut rng = root.derive("pretrain/texts", o as u64);
        for _ in 0..spec.texts_per_profile {
            let in_style = &styles[rng.below(styles.len())];
            let neutral = gen_neutral_sentence_with_bias(&mut rng, out_style.length_bias);
            let input = stylize(in_style, &neutral, &mut rng)?;
            let output = stylize(out_style, &neutral, &mut rng)?;
            all.push(pair_example(&tok, &input, &output)?);
        }
    }
    let every = spec.held_out_every;
    let (mut train, mut held) = (Vec::new(), Vec::new());
    for (i, ex) in all.into_iter().enumerate() {
        if every > 0 && i % every == every - 1 {
            held.push(ex);
        } else {
            train.push(ex);
        }
    }
    Ok((train, held))
}

pub fn train_base_stage(cfg: &RunConfig) -> Result<(BaseModel, TrainReport)> {
    let (train, held) = base_examples(&cfg.base)?;
    let mut rng = SeededRng::new(cfg.base.seed).derive("base/init", 0);
    let init = BaseModel::init(cfg.model.clone(), &mut rng)?;
    let mut rng = SeededRng::new(cfg.base.seed).derive("base/batches", 0);
    train_base(&init, &train, &held, &cfg.base.train, &mut rng)
}

/// `(neutral → styled)` pairs of one library author; the last `held_out`
/// pairs are returned separately.
pub fn adapter_examples(author: &AuthorFile, held_out: usize) -> Result<(Vec<TrainExample>, Vec<TrainExample>)> {
    let tok = Tokenizer::standard();
    let mut ex = author
        .pairs
        .iter()
        .map(|p| pair_example(&tok, &p.neutral, &p.styled))
        .collect::<Result<Vec<_>>>()?;
    if held_out >= ex.len() {
        return Err(Error::config(format!(
            "{} has too few pairs for the held-out split",
            author.author_id
        )));
    }
    let held = ex.split_off(ex.len() - held_out);
    Ok((ex, held))
}

/// Held-out reconstruction loss of one adapter next to that of the bare base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterReport {
    pub author_id: String,
    pub base_loss: f64,
    pub adapter_loss: f64,
    pub step_losses: Vec<f64>,
}

pub fn train_adapter_stage(
    spec: &AdapterTrainSpec,
    base: &BaseModel,
    author: &AuthorFile,
) -> Result<(AuthorAdapter, AdapterReport)> {
    if author.role != AuthorRole::HighResource {
        return Err(Error::config(format!("{} is not a library author", author.author_id)));
    }
    let (train, held) = adapter_examples(author, spec.held_out)?;
    let mut rng = SeededRng::new(spec.seed).derive(&format!("adapter/{}", author.author_id), 0);
    let init = AuthorAdapter::init(author.author_id.clone(), &base.config, spec.rank, spec.alpha, &mut rng);
    let base_loss = mean_loss(base, &[], &held)?;
    let (adapter, report) = sft_train_adapter(base, init, &train, &held, &spec.train, &mut rng)?;
    Ok((
        adapter,
        AdapterReport {
            author_id: author.author_id.clone(),
            base_loss,
            adapter_loss: report.final_eval_loss,
            step_losses: report.step_losses,
        },
    ))
}

/// Library of trained adapters with prototypes sampled from each author's
/// styled texts.
pub fn build_library(dataset: &Dataset, adapters: &[AuthorAdapter], seed: u64) -> Result<AdapterLibrary> {
    let root = SeededRng::new(seed);
    let entries = adapters
        .iter()
        .map(|a| {
            let author = dataset
                .author(&a.author_id)
                .ok_or_else(|| Error::Library(format!("no dataset author for adapter {}", a.author_id)))?;
            let texts: Vec<&str> = author.pairs.iter().map(|p| p.styled.as_str()).collect();
            let mut rng = root.derive(&format!("prototype/{}", a.author_id), 0);
            let (prototype, sample_size) = sampled_prototype(&texts, PROTOTYPE_SAMPLE, &mut rng)?;
            Ok(LibraryEntry {
                author_id: a.author_id.clone(),
                adapter: a.clone(),
                prototype,
                sample_size,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    AdapterLibrary::new(entries)
}

pub fn target_prototype(target: &AuthorFile) -> Result<StyleEmbedding> {
    if target.texts.is_empty() {
        return Err(Error::domain(format!("target {} has no texts", target.author_id)));
    }
    prototype_embed(&target.texts)
}

/// Source texts with stable ids, training texts interleaved across authors.
pub fn source_texts(dataset: &Dataset) -> Result<(Vec<SourceText>, Vec<SourceText>)> {
    let mut per_author_train = Vec::new();
    let mut test = Vec::new();
    for a in dataset.by_role(AuthorRole::Source) {
        let split = a
            .split
            .as_ref()
            .ok_or_else(|| Error::format(format!("source {} has no train/test split", a.author_id)))?;
        let mk = |part: &str, i: usize, text: &String| SourceText {
            id: format!("{}/{part}/{i:03}", a.author_id),
            author_id: a.author_id.clone(),
            text: text.clone(),
        };
        per_author_train.push(
            split
                .train
                .iter()
                .enumerate()
                .map(|(i, t)| mk("train", i, t))
                .collect::<Vec<_>>(),
        );
        test.extend(split.test.iter().enumerate().map(|(i, t)| mk("test", i, t)));
    }
    let longest = per_author_train.iter().map(Vec::len).max().unwrap_or(0);
    let mut train = Vec::new();
    for i in 0..longest {
        for texts in &per_author_train {
            if let Some(t) = texts.get(i) {
                train.push(t.clone());
            }
        }
    }
    Ok((train, test))
}

/// Fails if any text id is shared between the two sets.
pub fn check_disjoint(train: &[SourceText], test: &[SourceText]) -> Result<()> {
    let ids: HashSet<&str> = train.iter().map(|t| t.id.as_str()).collect();
    if let Some(t) = test.iter().find(|t| ids.contains(t.id.as_str())) {
        return Err(Error::config(format!(
            "text {} is in both the training and the test set",
            t.id
        )));
    }
    Ok(())
}

/// Learns mixing weights for one target from the source training texts.
#[allow(clippy::too_many_arguments)]
pub fn learn_weights(
    cfg: &RunConfig,
    method: Method,
    granularity: Granularity,
    seed: u64,
    base: &BaseModel,
    adapters: &[AuthorAdapter],
    target: &AuthorFile,
    train: &[SourceText],
) -> Result<(MixWeights, Vec<TraceRow>)> {
    let ctx = RewardContext::new(
        base.clone(),
        adapters,
        target.author_id.clone(),
        &target.texts,
        train.to_vec(),
    )?;
    match method {
        Method::Es => es_optimize(&ctx, &cfg.es_config(seed), granularity),
        Method::Grpo => grpo_optimize(&ctx, &cfg.grpo_config(seed), granularity),
    }
}

/// One scored or scorable rewrite.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rewrite {
    pub pair_id: String,
    pub source_author: String,
    pub target_author: String,
    pub source_text: String,
    pub rewrite: String,
}

/// Rewrites every test text toward `target_id` with the mixture merged into
/// the base. Text `id` decodes with a stream derived from the seed, the
/// target and the id, so rewrites of different runs are comparable.
pub fn rewrite_texts(
    base: &BaseModel,
    adapters: &[AuthorAdapter],
    weights: &MixWeights,
    target_id: &str,
    test: &[SourceText],
    seed: u64,
) -> Result<Vec<Rewrite>> {
    let ids: Vec<&str> = adapters.iter().map(|a| a.author_id.as_str()).collect();
    if ids != weights.adapter_ids().iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::Library("weights and adapters list different authors".into()));
    }
    let ctx_free = crate::mixing::mix_layerwise(adapters, weights)?;
    let merged = crate::mixing::merge_into_base(base, &ctx_free)?;
    let tok = Tokenizer::standard();
    let root = SeededRng::new(seed);
    test.par_iter()
        .map(|t| {
            let prompt = encode_prompt(&tok, &t.text)?;
            let budget = crate::optim::MAX_NEW_TOKENS.min(base.config.context_len.saturating_sub(prompt.len()));
            let mut rng = root.derive(&format!("rewrite/{target_id}/{}", t.id), 0);
            let out = crate::model::decode(&merged, &prompt, REWRITE_DECODING, budget, Some(&mut rng))?;
            Ok(Rewrite {
                pair_id: t.id.clone(),
                source_author: t.author_id.clone(),
                target_author: target_id.to_string(),
                source_text: t.text.clone(),
                rewrite: tok.decode(&out.ids)?,
            })
        })
        .collect()
}

/// Scores rewrites toward the target prototype; fluency is measured under
/// the bare base model. Blank rewrites score zero throughout.
pub fn score_rewrites(base: &BaseModel, target_proto: &StyleEmbedding, rewrites: &[Rewrite]) -> Result<Vec<ScoreRow>> {
    let tok = Tokenizer::standard();
    rewrites
        .par_iter()
        .map(|r| {
            let e_s = style_embed(&r.source_text)?;
            let scores = if r.rewrite.trim().is_empty() {
                toward(&e_s, target_proto, &e_s)?;
                ScoreReport::new(0.0, 0.0, 0.0, 0.0)
            } else {
                let e_out = style_embed(&r.rewrite)?;
                ScoreReport::new(
                    toward(&e_s, target_proto, &e_out)?,
                    away(&e_s, target_proto, &e_out)?,
                    meaning_score(&r.source_text, &r.rewrite),
                    fluency(base, &tok, &r.rewrite)?,
                )
            };
            Ok(ScoreRow {
                pair_id: r.pair_id.clone(),
                source_author: r.source_author.clone(),
                target_author: r.target_author.clone(),
                scores,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_dataset, CorpusSpec};

    fn small() -> Dataset {
        build_dataset(&CorpusSpec {
            pairs_per_author: 40,
            n_high_resource: 2,
            n_sources: 2,
            source_train: 5,
            source_test: 3,
            ..CorpusSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn source_split_is_disjoint_and_interleaved() {
        let ds = small();
        let (train, test) = source_texts(&ds).unwrap();
        assert_eq!((train.len(), test.len()), (10, 6));
        assert_eq!(train[0].author_id, "src00");
        assert_eq!(train[1].author_id, "src01");
        check_disjoint(&train, &test).unwrap();
        assert!(check_disjoint(&train, &train[..1]).is_err());
    }

    #[test]
    fn base_examples_hold_out_a_slice() {
        let spec = BaseTrainSpec {
            pretrain_profiles: 3,
            texts_per_profile: 10,
            held_out_every: 4,
            ..BaseTrainSpec::default()
        };
        let (train, held) = base_examples(&spec).unwrap();
        assert_eq!((train.len(), held.len()), (30, 10));
        assert_eq!(base_examples(&spec).unwrap().0, train);
    }

    #[test]
    fn adapter_examples_split_from_the_end() {
        let ds = small();
        let (train, held) = adapter_examples(ds.author("hr00").unwrap(), 8).unwrap();
        assert_eq!((train.len(), held.len()), (32, 8));
        assert!(adapter_examples(ds.author("hr00").unwrap(), 40).is_err());
    }
}
