use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{DenseMatrix, SeededRng};
use crate::mixing::{merge_into_base, mix_expanded, ExpandedAdapter, Granularity, MixWeights, WEIGHT_BOUND};
use crate::model::{decode_group, param_gradients, AdaptedModule, BaseGrad, BaseModel, Decoding};
use crate::optim::reward::RewardContext;
use crate::optim::trace::{Stopwatch, TraceRow};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrpoConfig {
    pub lr: f64,
    pub steps: usize,
    pub group_size: usize,
    pub init: f64,
    /// Kept for the record; only zero is supported.
    pub beta_kl: f64,
    pub clip: f64,
    pub top_p: f64,
    pub temperature: f64,
    pub eps_std: f64,
    pub seed: u64,
    pub record_wallclock: bool,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            lr: 0.02,
            steps: 300,
            group_size: 8,
            init: 0.0,
            beta_kl: 0.0,
            clip: WEIGHT_BOUND,
            top_p: 0.95,
            temperature: 1.0,
            eps_std: 1e-8,
            seed: 42,
            record_wallclock: false,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::config("group size must be at least 2"));
        }
        if !(self.lr >= 0.0) || !(self.clip > 0.0) || self.init.abs() > self.clip {
            return Err(Error::config("invalid learning rate, clip bound or init"));
        }
        if self.beta_kl != 0.0 {
            return Err(Error::config("KL regularization is not supported"));
        }
        if !(self.eps_std > 0.0) {
            return Err(Error::config("eps_std must be positive"));
        }
        Ok(())
    }
}

/// `(r - mean) / (population std + eps)`.
pub fn grpo_advantages(rewards: &[f64], eps: f64) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::domain("advantages need at least two rewards"));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let denom = var.sqrt() + eps;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

/// `(1/G) Σ A_g ∇_W log π_W(completion_g | prompt)` as an `n × L` matrix.
///
/// The mixed query and value weights of layer `j` are linear in `W[i][j]`, so
/// each entry is the inner product of the effective-weight gradient with
/// adapter `i`'s delta at that layer.
pub fn grpo_weight_gradient(
    base: &BaseModel,
    adapters: &[ExpandedAdapter],
    weights: &MixWeights,
    prompt: &[usize],
    completions: &[Vec<usize>],
    advantages: &[f64],
) -> Result<DenseMatrix> {
    let merged = merge_into_base(base, &mix_expanded(adapters, weights)?)?;
    gradient_on_merged(&merged, adapters, prompt, completions, advantages)
}

fn gradient_on_merged(
    merged: &BaseModel,
    adapters: &[ExpandedAdapter],
    prompt: &[usize],
    completions: &[Vec<usize>],
    advantages: &[f64],
) -> Result<DenseMatrix> {
    if completions.len() != advantages.len() || completions.is_empty() {
        return Err(Error::domain("one advantage per completion is required"));
    }
    let n_layers = merged.config.n_layers;
    let per_sample = completions
        .par_iter()
        .zip(advantages)
        .map(|(c, &a)| {
            let mut g = DenseMatrix::zeros(adapters.len(), n_layers);
            if a == 0.0 || c.is_empty() {
                return Ok(g);
            }
            // gradient of the negative log-likelihood; flip sign for ascent
            let (_, grad) = param_gradients(merged, &[], prompt, c, BaseGrad::QueryValue)?;
            for (i, ad) in adapters.iter().enumerate() {
                for j in 0..n_layers {
                    let mut v = 0.0;
                    for m in AdaptedModule::ALL {
                        let dw = match m {
                            AdaptedModule::Query => &grad.blocks[j].wq,
                            AdaptedModule::Value => &grad.blocks[j].wv,
                        };
                        if let Some(delta) = ad.delta(j, m) {
                            v += dw.dot(delta);
                        }
                    }
                    g.set(i, j, -a * v);
                }
            }
            Ok(g)
        })
        .collect::<Result<Vec<DenseMatrix>>>()?;
    let mut total = DenseMatrix::zeros(adapters.len(), n_layers);
    for g in &per_sample {
        total.axpy(1.0 / completions.len() as f64, g);
    }
    Ok(total)
}

/// Tied rows move together: each row takes the mean of its layer gradients.
fn project_adapterwise(g: &mut DenseMatrix) {
    for i in 0..g.rows() {
        let row = g.row_mut(i);
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        row.fill(mean);
    }
}

/// Group-relative policy gradient on the mixing weights. One training text
/// per step, taken round-robin; the trace holds the group mean reward and the
/// L1 norm of the weights that produced it.
pub fn grpo_optimize(
    ctx: &RewardContext,
    cfg: &GrpoConfig,
    granularity: Granularity,
) -> Result<(MixWeights, Vec<TraceRow>)> {
    cfg.validate()?;
    let ids = ctx.adapter_ids();
    let n_layers = ctx.n_layers();
    let mut w = DenseMatrix::from_fn(ids.len(), n_layers, |_, _| cfg.init);
    let decoding = Decoding::Sample {
        temperature: cfg.temperature,
        top_p: cfg.top_p,
    };
    let root = SeededRng::new(cfg.seed);
    let clock = Stopwatch::start(cfg.record_wallclock);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let current = MixWeights::new(granularity, ids.clone(), w.clone())?;
        let merged = ctx.merged(&current)?;
        let (src, e_s) = ctx.train_entry(step);
        let prompt = ctx.prompt(&src.text)?;
        let stream = root.derive("grpo/step", step as u64);
        let mut rngs: Vec<SeededRng> = (0..cfg.group_size).map(|g| stream.derive("sample", g as u64)).collect();
        let samples = decode_group(&merged, &prompt, decoding, ctx.decode_budget(prompt.len()), &mut rngs)?;
        let rewards = samples
            .par_iter()
            .map(|s| {
                let out = ctx.tokenizer().decode(&s.ids)?;
                super::reward::reward(e_s, ctx.target_prototype(), &src.text, &out)
            })
            .collect::<Result<Vec<f64>>>()?;
        let advantages = grpo_advantages(&rewards, cfg.eps_std)?;
        let completions: Vec<Vec<usize>> = samples.iter().map(|s| s.completion()).collect();
        let mut grad = gradient_on_merged(&merged, ctx.adapters(), &prompt, &completions, &advantages)?;
        if !grad.is_finite() {
            return Err(Error::Training(format!("non-finite weight gradient at step {step}")));
        }
        if granularity == Granularity::Adapter {
            project_adapterwise(&mut grad);
        }
        trace.push(TraceRow {
            step,
            value: rewards.iter().sum::<f64>() / rewards.len() as f64,
            l1_norm: current.free_l1_norm(),
            wallclock_ms: clock.elapsed_ms(),
        });
        w.axpy(cfg.lr, &grad);
        w.data_mut().iter_mut().for_each(|v| *v = v.clamp(-cfg.clip, cfg.clip));
    }
    Ok((MixWeights::new(granularity, ids, w)?, trace))
}
