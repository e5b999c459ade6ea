use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::SeededRng;
use crate::metrics::{joint, meaning_score, prototype_embed, style_embed, toward, StyleEmbedding};
use crate::mixing::{merge_into_base, mix_expanded, ExpandedAdapter, MixWeights};
use crate::model::{decode, encode_prompt, AuthorAdapter, BaseModel, Decoding, Tokenizer};

/// Upper bound on generated tokens per rewrite.
pub const MAX_NEW_TOKENS: usize = 72;

/// A source text with a stable id, used for train/test bookkeeping.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceText {
    pub id: String,
    pub author_id: String,
    pub text: String,
}

/// Everything the reward needs: the frozen base, the selected adapters, the
/// target prototype and the source training texts.
pub struct RewardContext {
    base: BaseModel,
    tokenizer: Tokenizer,
    adapters: Vec<ExpandedAdapter>,
    target_id: String,
    target_prototype: StyleEmbedding,
    train: Vec<(SourceText, StyleEmbedding)>,
    max_new_tokens: usize,
}

/// `joint(toward(e_s, e_t, emb(x_out)), meaning(x_s, x_out))`. Blank outputs
/// score 0; a degenerate pair is a domain error.
pub fn reward(e_s: &StyleEmbedding, e_t: &StyleEmbedding, x_s: &str, x_out: &str) -> Result<f64> {
    if x_out.trim().is_empty() {
        toward(e_s, e_t, e_s)?;
        return Ok(0.0);
    }
    let t = toward(e_s, e_t, &style_embed(x_out)?)?;
    Ok(joint(t, meaning_score(x_s, x_out)))
}

impl RewardContext {
    /// Source texts whose embedding coincides with the target prototype are
    /// dropped with a warning.
    pub fn new(
        base: BaseModel,
        adapters: &[AuthorAdapter],
        target_id: impl Into<String>,
        target_texts: &[String],
        train: Vec<SourceText>,
    ) -> Result<Self> {
        for a in adapters {
            a.check_against(&base)?;
        }
        if adapters.is_empty() {
            return Err(Error::Library("reward context needs at least one adapter".into()));
        }
        let target_id = target_id.into();
        let target_prototype = prototype_embed(target_texts)?;
        let mut kept = Vec::with_capacity(train.len());
        for s in train {
            let e_s = style_embed(&s.text)?;
            if toward(&e_s, &target_prototype, &e_s).is_err() {
                log::warn!("skipping {}: its style coincides with target {target_id}", s.id);
                continue;
            }
            kept.push((s, e_s));
        }
        if kept.is_empty() {
            return Err(Error::domain("no usable source training texts"));
        }
        Ok(Self {
            base,
            tokenizer: Tokenizer::standard(),
            adapters: adapters.iter().map(ExpandedAdapter::new).collect(),
            target_id,
            target_prototype,
            train: kept,
            max_new_tokens: MAX_NEW_TOKENS,
        })
    }

    pub fn base(&self) -> &BaseModel {
        &self.base
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn adapters(&self) -> &[ExpandedAdapter] {
        &self.adapters
    }

    pub fn adapter_ids(&self) -> Vec<String> {
        self.adapters.iter().map(|a| a.author_id.clone()).collect()
    }

    pub fn n_layers(&self) -> usize {
        self.base.config.n_layers
    }

    pub fn target_id(&self) -> &str {
        &self.target_id
    }

    pub fn target_prototype(&self) -> &StyleEmbedding {
        &self.target_prototype
    }

    pub fn train_texts(&self) -> impl Iterator<Item = &SourceText> {
        self.train.iter().map(|(s, _)| s)
    }

    pub fn n_train(&self) -> usize {
        self.train.len()
    }

    pub(crate) fn train_entry(&self, i: usize) -> (&SourceText, &StyleEmbedding) {
        let (s, e) = &self.train[i % self.train.len()];
        (s, e)
    }

    pub fn max_new_tokens(&self) -> usize {
        self.max_new_tokens
    }

    /// Base model with the mixture `weights` merged in.
    pub fn merged(&self, weights: &MixWeights) -> Result<BaseModel> {
        merge_into_base(&self.base, &mix_expanded(&self.adapters, weights)?)
    }

    pub fn prompt(&self, x_s: &str) -> Result<Vec<usize>> {
        encode_prompt(&self.tokenizer, x_s)
    }

    /// Room left for the rewrite after the prompt.
    pub fn decode_budget(&self, prompt_len: usize) -> usize {
        self.max_new_tokens
            .min(self.base.config.context_len.saturating_sub(prompt_len))
    }

    /// Reward of `x_out` as a rewrite of `x_s` toward this context's target.
    pub fn reward(&self, x_s: &str, x_out: &str) -> Result<f64> {
        reward(&style_embed(x_s)?, &self.target_prototype, x_s, x_out)
    }

    /// One decode of `x_s` on an already merged model.
    pub fn rewrite(&self, merged: &BaseModel, x_s: &str, decoding: Decoding, rng: &mut SeededRng) -> Result<String> {
        let prompt = self.prompt(x_s)?;
        let out = decode(merged, &prompt, decoding, self.decode_budget(prompt.len()), Some(rng))?;
        self.tokenizer.decode(&out.ids)
    }
}

/// Mean reward over `batch` (indices into the training texts, one rewrite
/// each) minus `lambda` times the L1 norm of the free weights. Text `i` of
/// the batch decodes with the stream `rng.derive("objective", i)`.
pub fn objective_lh(
    ctx: &RewardContext,
    weights: &MixWeights,
    batch: &[usize],
    decoding: Decoding,
    lambda: f64,
    rng: &SeededRng,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::domain("empty objective batch"));
    }
    let merged = ctx.merged(weights)?;
    let rewards = batch
        .par_iter()
        .enumerate()
        .map(|(i, &b)| {
            let (src, e_s) = ctx.train_entry(b);
            let out = ctx.rewrite(&merged, &src.text, decoding, &mut rng.derive("objective", i as u64))?;
            reward(e_s, &ctx.target_prototype, &src.text, &out)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(penalized(&rewards, lambda, weights.free_l1_norm()))
}

fn penalized(rewards: &[f64], lambda: f64, l1: f64) -> f64 {
    rewards.iter().sum::<f64>() / rewards.len() as f64 - lambda * l1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{gen_neutral_sentence, stylize, StyleProfile};

    #[test]
    fn copying_the_source_earns_nothing() {
        let mut rng = SeededRng::new(3);
        let target = StyleProfile::random("t", &mut rng);
        let texts: Vec<String> = (0..20)
            .map(|_| stylize(&target, &gen_neutral_sentence(&mut rng), &mut rng).unwrap())
            .collect();
        let e_t = prototype_embed(&texts).unwrap();
        let x_s = "the dog sees the hill.";
        let e_s = style_embed(x_s).unwrap();
        assert_eq!(reward(&e_s, &e_t, x_s, x_s).unwrap(), 0.0);
        assert_eq!(reward(&e_s, &e_t, x_s, "   ").unwrap(), 0.0);
        assert!(reward(&e_s, &e_s, x_s, x_s).is_err());
        let r = reward(&e_s, &e_t, x_s, &texts[0]).unwrap();
        assert!((0.0..=1.0).contains(&r));
    }

    #[test]
    fn penalty_is_subtracted() {
        assert!((penalized(&[0.2, 0.4, 0.3], 0.05, 4.0) - 0.10).abs() < 1e-12);
        assert_eq!(penalized(&[0.25, 0.75], 0.05, 0.0), 0.5);
    }
}
