use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{DenseMatrix, SeededRng};
use crate::model::backward::{backward, completion_nll, BaseGrad};
use crate::model::forward::forward;
use crate::model::lora::ScaledAdapter;
use crate::model::{AuthorAdapter, BaseModel};

/// A token sequence whose loss covers `tokens[loss_start..]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainExample {
    pub tokens: Vec<usize>,
    pub loss_start: usize,
}

impl TrainExample {
    pub fn new(tokens: Vec<usize>, loss_start: usize) -> Result<Self> {
        if loss_start == 0 || loss_start >= tokens.len() {
            return Err(Error::domain("training example has no target tokens"));
        }
        Ok(Self { tokens, loss_start })
    }

    /// Prompt followed by completion, loss on the completion only.
    pub fn completion(prompt: &[usize], completion: &[usize]) -> Result<Self> {
        let mut tokens = prompt.to_vec();
        tokens.extend_from_slice(completion);
        Self::new(tokens, prompt.len())
    }

    fn n_targets(&self) -> usize {
        self.tokens.len() - self.loss_start
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Linear warmup length in steps.
    #[serde(default)]
    pub warmup_steps: usize,
    /// Cosine decay from `lr` down to `lr * final_lr_fraction` over the
    /// run; 1 keeps the rate constant.
    #[serde(default = "one")]
    pub final_lr_fraction: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 32,
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: Some(1.0),
            warmup_steps: 0,
            final_lr_fraction: 1.0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::config("batch_size and lr must be positive"));
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(Error::config("final_lr_fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Learning rate for the zero-based `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.steps.saturating_sub(self.warmup_steps).max(1) as f64;
        let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.lr * (self.final_lr_fraction + (1.0 - self.final_lr_fraction) * cosine)
    }
}

/// Loss curve of a training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_eval_loss: f64,
    pub final_eval_loss: f64,
    pub step_losses: Vec<f64>,
}

/// Adam state over an ordered list of tensors.
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
    cfg: TrainConfig,
}

impl Adam {
    pub fn new(shapes: &[usize], cfg: TrainConfig) -> Self {
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            cfg,
        }
    }

    pub fn step(&mut self, params: Vec<&mut DenseMatrix>, grads: Vec<&DenseMatrix>) {
        let lr = self.cfg.lr_at(self.t as usize);
        self.t += 1;
        let c = &self.cfg;
        let scale = match c.grad_clip {
            Some(max) => {
                let norm = grads
                    .iter()
                    .map(|g| g.data().iter().map(|x| x * x).sum::<f64>())
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, (w, &gr)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gr = gr * scale;
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * gr;
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * gr * gr;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                *w -= lr * mh / (vh.sqrt() + c.eps);
            }
        }
    }
}

/// Mean over examples of the per-token negative log-likelihood.
pub fn mean_loss(model: &BaseModel, adapters: &[ScaledAdapter<'_>], examples: &[TrainExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::domain("no examples to evaluate"));
    }
    let losses: Vec<f64> = examples
        .par_iter()
        .map(|ex| {
            let cache = forward(model, adapters, &ex.tokens)?;
            let (nll, _) = completion_nll(&cache.logits, &ex.tokens, ex.loss_start, 1.0)?;
            Ok(nll / ex.n_targets() as f64)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

fn sample_batch(rng: &mut SeededRng, n: usize, batch: usize) -> Vec<usize> {
    (0..batch).map(|_| rng.below(n)).collect()
}

fn check_finite(loss: f64, step: usize) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Training(format!("loss became {loss} at step {step}")));
    }
    Ok(())
}

/// Next-token pretraining of every base parameter.
pub fn train_base(
    model: &BaseModel,
    examples: &[TrainExample],
    held_out: &[TrainExample],
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<(BaseModel, TrainReport)> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::domain("empty training corpus"));
    }
    let mut model = model.clone();
    let mut report = TrainReport::default();
    if !held_out.is_empty() {
        report.initial_eval_loss = mean_loss(&model, &[], held_out)?;
    }
    let shapes: Vec<usize> = model.tensors().iter().map(|(_, t)| t.data().len()).collect();
    let mut adam = Adam::new(&shapes, cfg.clone());
    for step in 0..cfg.steps {
        let idx = sample_batch(rng, examples.len(), cfg.batch_size);
        let per_example: Vec<(f64, BaseModel)> = idx
            .par_iter()
            .map(|&i| {
                let ex = &examples[i];
                let cache = forward(&model, &[], &ex.tokens)?;
                let w = 1.0 / (ex.n_targets() * cfg.batch_size) as f64;
                let (nll, dl) = completion_nll(&cache.logits, &ex.tokens, ex.loss_start, w)?;
                let mut g = model.zeros_like();
                backward(&model, &[], &cache, &dl, BaseGrad::All, Some(&mut g), None)?;
                Ok((nll * w, g))
            })
            .collect::<Result<_>>()?;
        let mut grad = model.zeros_like();
        let mut loss = 0.0;
        for (l, g) in &per_example {
            loss += l;
            grad.axpy(1.0, g);
        }
        check_finite(loss, step)?;
        report.step_losses.push(loss);
        let grads: Vec<&DenseMatrix> = grad.tensors().into_iter().map(|(_, t)| t).collect();
        let params: Vec<&mut DenseMatrix> = model.tensors_mut().into_iter().map(|(_, t)| t).collect();
        adam.step(params, grads);
        if step % 100 == 0 {
            log::debug!("base step {step}: loss {loss:.4}");
        }
    }
    if !model.is_finite() {
        return Err(Error::Training("base parameters became non-finite".into()));
    }
    if !held_out.is_empty() {
        report.final_eval_loss = mean_loss(&model, &[], held_out)?;
    }
    Ok((model, report))
}

/// Fits a fresh adapter to reconstruct styled completions from their prompts.
/// The base model is borrowed immutably and never changes.
pub fn sft_train_adapter(
    model: &BaseModel,
    adapter: AuthorAdapter,
    examples: &[TrainExample],
    held_out: &[TrainExample],
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<(AuthorAdapter, TrainReport)> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::domain("no training pairs"));
    }
    adapter.check_against(model)?;
    let ones = vec![1.0; model.config.n_layers];
    let mut adapter = adapter;
    let mut report = TrainReport::default();
    if !held_out.is_empty() {
        report.initial_eval_loss = mean_loss(model, &[ScaledAdapter::new(&adapter, &ones)], held_out)?;
    }
    let shapes: Vec<usize> = adapter.factors().iter().map(|t| t.data().len()).collect();
    let mut adam = Adam::new(&shapes, cfg.clone());
    for step in 0..cfg.steps {
        let idx = sample_batch(rng, examples.len(), cfg.batch_size);
        let per_example: Vec<(f64, AuthorAdapter)> = idx
            .par_iter()
            .map(|&i| {
                let ex = &examples[i];
                let sa = [ScaledAdapter::new(&adapter, &ones)];
                let cache = forward(model, &sa, &ex.tokens)?;
                let w = 1.0 / (ex.n_targets() * cfg.batch_size) as f64;
                let (nll, dl) = completion_nll(&cache.logits, &ex.tokens, ex.loss_start, w)?;
                let mut g = [adapter.zeros_like()];
                backward(model, &sa, &cache, &dl, BaseGrad::None, None, Some(&mut g))?;
                let [g] = g;
                Ok((nll * w, g))
            })
            .collect::<Result<_>>()?;
        let mut grad = adapter.zeros_like();
        let mut loss = 0.0;
        for (l, g) in &per_example {
            loss += l;
            grad.axpy(1.0, g);
        }
        check_finite(loss, step)?;
        report.step_losses.push(loss);
        adam.step(adapter.factors_mut(), grad.factors());
    }
    if !held_out.is_empty() {
        report.final_eval_loss = mean_loss(model, &[ScaledAdapter::new(&adapter, &ones)], held_out)?;
    }
    Ok((adapter, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 6,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 16,
            context_len: 16,
        }
    }

    fn pattern_examples() -> Vec<TrainExample> {
        // 0 1 2 3 4 5 1 2 3 4 5 ... a deterministic cycle
        (0..8)
            .map(|s| {
                let toks: Vec<usize> = std::iter::once(0).chain((0..10).map(|i| 1 + (i + s) % 5)).collect();
                TrainExample::new(toks, 1).unwrap()
            })
            .collect()
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let tc = TrainConfig {
            steps: 110,
            lr: 1.0,
            warmup_steps: 10,
            final_lr_fraction: 0.1,
            ..TrainConfig::default()
        };
        assert!((tc.lr_at(0) - 0.1).abs() < 1e-15);
        assert_eq!(tc.lr_at(9), 1.0);
        assert_eq!(tc.lr_at(10), 1.0);
        assert!((tc.lr_at(60) - 0.55).abs() < 1e-12);
        assert!((tc.lr_at(110) - 0.1).abs() < 1e-12);
        let flat = TrainConfig::default();
        assert_eq!(flat.lr_at(0), flat.lr_at(1999));
    }

    #[test]
    fn zero_steps_leave_parameters_unchanged() {
        let m = BaseModel::init(cfg(), &mut SeededRng::new(1)).unwrap();
        let tc = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        let (out, _) = train_base(&m, &pattern_examples(), &[], &tc, &mut SeededRng::new(2)).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn base_training_learns_a_cycle_deterministically() {
        let m = BaseModel::init(cfg(), &mut SeededRng::new(1)).unwrap();
        let ex = pattern_examples();
        let tc = TrainConfig {
            steps: 60,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let (a, rep) = train_base(&m, &ex, &ex, &tc, &mut SeededRng::new(2)).unwrap();
        let (b, _) = train_base(&m, &ex, &ex, &tc, &mut SeededRng::new(2)).unwrap();
        assert_eq!(a, b);
        assert!(rep.final_eval_loss < 0.5 * rep.initial_eval_loss, "{rep:?}");
    }

    #[test]
    fn sft_only_moves_adapter() {
        let m = BaseModel::init(cfg(), &mut SeededRng::new(1)).unwrap();
        let before = m.clone();
        let ex = pattern_examples();
        let ad = AuthorAdapter::init("x", &m.config, 2, 4.0, &mut SeededRng::new(3));
        let ones = [1.0, 1.0];
        let l0 = mean_loss(&m, &[ScaledAdapter::new(&ad, &ones)], &ex).unwrap();
        assert_eq!(l0, mean_loss(&m, &[], &ex).unwrap());
        let tc = TrainConfig {
            steps: 40,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let (trained, rep) = sft_train_adapter(&m, ad, &ex, &ex, &tc, &mut SeededRng::new(4)).unwrap();
        assert_eq!(m, before);
        assert!(rep.final_eval_loss < rep.initial_eval_loss);
        assert!(trained.layers[0].deltas[0].b.max_abs() > 0.0);
    }
}
