use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::{argmax, top_p_sample, SeededRng};
use crate::model::forward::{forward_logits, log_softmax, DecodeState};
use crate::model::lora::{check_scaled, ScaledAdapter};
use crate::model::tokenizer::{encode_prompt, Tokenizer, EOT};
use crate::model::BaseModel;

/// `log p(completion | prompt)`, summed over completion tokens.
pub fn sequence_log_prob(
    model: &BaseModel,
    adapters: &[ScaledAdapter<'_>],
    prompt: &[usize],
    completion: &[usize],
) -> Result<f64> {
    if completion.is_empty() {
        return Err(Error::domain("empty completion"));
    }
    if prompt.is_empty() {
        return Err(Error::domain("empty prompt"));
    }
    let mut tokens = prompt.to_vec();
    tokens.extend_from_slice(completion);
    let logits = forward_logits(model, adapters, &tokens)?;
    let mut total = 0.0;
    for pos in prompt.len()..tokens.len() {
        total += log_softmax(logits.row(pos - 1))[tokens[pos]];
    }
    Ok(total)
}

/// Copy of `model` with every scaled adapter added to its target weights.
pub fn merge_scaled(model: &BaseModel, adapters: &[ScaledAdapter<'_>]) -> Result<BaseModel> {
    check_scaled(model, adapters)?;
    let mut merged = model.clone();
    for sa in adapters {
        for (j, layer) in sa.adapter.layers.iter().enumerate() {
            let s = sa.scales[j];
            if s == 0.0 {
                continue;
            }
            for delta in &layer.deltas {
                let w = match delta.module {
                    crate::model::AdaptedModule::Query => &mut merged.blocks[j].wq,
                    crate::model::AdaptedModule::Value => &mut merged.blocks[j].wv,
                };
                w.axpy(s, &delta.effective());
            }
        }
    }
    Ok(merged)
}

/// How the next token is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Decoding {
    /// Argmax; the zero-temperature limit.
    Greedy,
    /// Temperature then nucleus sampling.
    Sample { temperature: f64, top_p: f64 },
}

/// Token ids produced by one decode, without the end-of-text token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sampled {
    pub ids: Vec<usize>,
    /// Whether decoding ended by emitting end-of-text.
    pub stopped: bool,
}

impl Sampled {
    /// The scored completion: the ids plus end-of-text when it was emitted.
    pub fn completion(&self) -> Vec<usize> {
        let mut c = self.ids.clone();
        if self.stopped {
            c.push(EOT);
        }
        c
    }
}

fn check_decode_args(model: &BaseModel, prompt: &[usize], decoding: Decoding, has_rng: bool) -> Result<()> {
    if prompt.is_empty() {
        return Err(Error::domain("empty prompt"));
    }
    if prompt.len() > model.config.context_len {
        return Err(Error::domain("prompt exceeds the context length"));
    }
    if matches!(decoding, Decoding::Sample { .. }) && !has_rng {
        return Err(Error::config("sampling requires a random stream"));
    }
    Ok(())
}

fn prefill<'m>(model: &'m BaseModel, prompt: &[usize]) -> Result<(DecodeState<'m>, Vec<f64>)> {
    let mut state = DecodeState::new(model);
    let mut logits = Vec::new();
    for &t in prompt {
        logits = state.step(t)?;
    }
    Ok((state, logits))
}

fn continue_decoding(
    mut state: DecodeState<'_>,
    mut logits: Vec<f64>,
    decoding: Decoding,
    max_len: usize,
    mut rng: Option<&mut SeededRng>,
) -> Result<Sampled> {
    let context = state.context_len();
    let mut ids = Vec::new();
    if max_len == 0 {
        return Ok(Sampled { ids, stopped: false });
    }
    loop {
        let next = match decoding {
            Decoding::Greedy => argmax(&logits)?,
            Decoding::Sample { temperature, top_p } => top_p_sample(
                &logits,
                temperature,
                top_p,
                rng.as_deref_mut().expect("checked by caller"),
            )?,
        };
        if next == EOT {
            return Ok(Sampled { ids, stopped: true });
        }
        ids.push(next);
        if ids.len() >= max_len || state.position() >= context {
            return Ok(Sampled { ids, stopped: false });
        }
        logits = state.step(next)?;
    }
}

/// Autoregressive continuation of `prompt` on an already merged model.
///
/// Stops at end-of-text, at `max_len` new tokens, or at the context limit.
/// The returned ids exclude the end-of-text token.
pub fn generate_ids(
    model: &BaseModel,
    prompt: &[usize],
    decoding: Decoding,
    max_len: usize,
    rng: Option<&mut SeededRng>,
) -> Result<Vec<usize>> {
    Ok(decode(model, prompt, decoding, max_len, rng)?.ids)
}

/// Like [`generate_ids`], also reporting whether end-of-text was emitted.
pub fn decode(
    model: &BaseModel,
    prompt: &[usize],
    decoding: Decoding,
    max_len: usize,
    rng: Option<&mut SeededRng>,
) -> Result<Sampled> {
    check_decode_args(model, prompt, decoding, rng.is_some())?;
    let (state, logits) = prefill(model, prompt)?;
    continue_decoding(state, logits, decoding, max_len, rng)
}

/// One decode per random stream, all continuing a single pass over the
/// shared prompt. Sample `i` uses `rngs[i]` only, so the result does not
/// depend on evaluation order.
pub fn decode_group(
    model: &BaseModel,
    prompt: &[usize],
    decoding: Decoding,
    max_len: usize,
    rngs: &mut [SeededRng],
) -> Result<Vec<Sampled>> {
    check_decode_args(model, prompt, decoding, true)?;
    let (state, logits) = prefill(model, prompt)?;
    rngs.par_iter_mut()
        .map(|rng| continue_decoding(state.clone(), logits.clone(), decoding, max_len, Some(rng)))
        .collect()
}

/// Rewrites `input` with adapters applied: builds the instruction prompt,
/// merges the adapters once, decodes and returns the text.
pub fn generate(
    model: &BaseModel,
    adapters: &[ScaledAdapter<'_>],
    tok: &Tokenizer,
    input: &str,
    decoding: Decoding,
    max_len: usize,
    rng: Option<&mut SeededRng>,
) -> Result<String> {
    let merged = merge_scaled(model, adapters)?;
    let prompt = encode_prompt(tok, input)?;
    let ids = generate_ids(&merged, &prompt, decoding, max_len, rng)?;
    tok.decode(&ids)
}
