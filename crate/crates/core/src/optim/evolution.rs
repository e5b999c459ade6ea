use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::SeededRng;
use crate::mixing::{Granularity, MixWeights, WEIGHT_BOUND};
use crate::model::Decoding;
use crate::optim::reward::{objective_lh, RewardContext};
use crate::optim::trace::{Stopwatch, TraceRow};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EsConfig {
    /// Generations after the initial population.
    pub steps: usize,
    pub bound: f64,
    pub init: f64,
    pub lambda_l1: f64,
    pub population: usize,
    pub diff_weight: f64,
    pub crossover: f64,
    pub top_p: f64,
    pub temperature: f64,
    pub seed: u64,
    /// Training texts rewritten per objective evaluation.
    pub batch_size: usize,
    /// Optional cap on objective evaluations, for compute parity.
    pub max_evaluations: Option<usize>,
    pub record_wallclock: bool,
}

impl Default for EsConfig {
    fn default() -> Self {
        Self {
            steps: 250,
            bound: WEIGHT_BOUND,
            init: 0.0,
            lambda_l1: 0.05,
            population: 20,
            diff_weight: 0.5,
            crossover: 0.9,
            top_p: 0.95,
            temperature: 1.0,
            seed: 42,
            batch_size: 8,
            max_evaluations: None,
            record_wallclock: false,
        }
    }
}

impl EsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return Err(Error::config("differential evolution needs a population of at least 4"));
        }
        if !(self.bound > 0.0 && self.init.abs() <= self.bound) {
            return Err(Error::config(format!(
                "init {} outside bounds ±{}",
                self.init, self.bound
            )));
        }
        if !(0.0..=1.0).contains(&self.crossover) || !(self.diff_weight > 0.0) || self.batch_size == 0 {
            return Err(Error::config("invalid differential evolution parameters"));
        }
        Ok(())
    }
}

/// Result of a maximization run.
#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionOutcome {
    pub best: Vec<f64>,
    pub best_value: f64,
    /// `(generation, best value so far)`; generation 0 is the initial population.
    pub trace: Vec<(usize, f64)>,
    pub evaluations: usize,
}

/// Differential evolution, rand/1/bin, maximizing `objective`.
///
/// `objective(candidates, generation)` scores a batch of candidates at once.
/// Member 0 of the initial population sits at `init`, the rest are uniform in
/// the bounds. Trial vectors are clipped to the bounds and replace their
/// parent when they score at least as well.
pub fn differential_evolution(
    dim: usize,
    cfg: &EsConfig,
    mut objective: impl FnMut(&[Vec<f64>], usize) -> Result<Vec<f64>>,
) -> Result<EvolutionOutcome> {
    cfg.validate()?;
    if dim == 0 {
        return Err(Error::config("nothing to optimize"));
    }
    let mut rng = SeededRng::new(cfg.seed).derive("evolution", 0);
    let b = cfg.bound;
    let budget = cfg.max_evaluations.unwrap_or(usize::MAX);
    let p = cfg.population.min(budget.max(1));
    let mut pop: Vec<Vec<f64>> = (0..p)
        .map(|k| {
            if k == 0 {
                vec![cfg.init; dim]
            } else {
                (0..dim).map(|_| rng.uniform(-b, b)).collect()
            }
        })
        .collect();
    let mut fit = objective(&pop, 0)?;
    check_scores(&fit, p)?;
    let mut evaluations = p;
    let mut best_idx = argmax(&fit);
    let mut best = pop[best_idx].clone();
    let mut best_value = fit[best_idx];
    let mut trace = vec![(0, best_value)];

    for generation in 1..=cfg.steps {
        let remaining = budget.saturating_sub(evaluations);
        if remaining == 0 || p < 4 {
            break;
        }
        let n_trials = p.min(remaining);
        let trials: Vec<Vec<f64>> = (0..n_trials)
            .map(|i| {
                let mut pick = |exclude: &[usize]| loop {
                    let r = rng.below(p);
                    if !exclude.contains(&r) {
                        break r;
                    }
                };
                let r1 = pick(&[i]);
                let r2 = pick(&[i, r1]);
                let r3 = pick(&[i, r1, r2]);
                let forced = rng.below(dim);
                (0..dim)
                    .map(|j| {
                        if j == forced || rng.unit() < cfg.crossover {
                            (pop[r1][j] + cfg.diff_weight * (pop[r2][j] - pop[r3][j])).clamp(-b, b)
                        } else {
                            pop[i][j]
                        }
                    })
                    .collect()
            })
            .collect();
        let scores = objective(&trials, generation)?;
        check_scores(&scores, n_trials)?;
        evaluations += n_trials;
        for (i, (trial, score)) in trials.into_iter().zip(scores).enumerate() {
            if score >= fit[i] {
                pop[i] = trial;
                fit[i] = score;
            }
        }
        best_idx = argmax(&fit);
        if fit[best_idx] > best_value {
            best_value = fit[best_idx];
            best = pop[best_idx].clone();
        }
        trace.push((generation, best_value));
    }
    Ok(EvolutionOutcome {
        best,
        best_value,
        trace,
        evaluations,
    })
}

fn check_scores(scores: &[f64], n: usize) -> Result<()> {
    if scores.len() != n {
        return Err(Error::domain(format!(
            "objective returned {} scores for {n} candidates",
            scores.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::domain("objective returned NaN"));
    }
    Ok(())
}

/// First index of the maximum.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Gradient-free search over the mixing weights of `ctx`'s adapters for the
/// L1-penalized reward objective. Every candidate of one generation is scored
/// on the same batch of training texts with the same random streams.
pub fn es_optimize(
    ctx: &RewardContext,
    cfg: &EsConfig,
    granularity: Granularity,
) -> Result<(MixWeights, Vec<TraceRow>)> {
    let ids = ctx.adapter_ids();
    let n_layers = ctx.n_layers();
    let dim = match granularity {
        Granularity::Layer => ids.len() * n_layers,
        Granularity::Adapter => ids.len(),
    };
    let decoding = Decoding::Sample {
        temperature: cfg.temperature,
        top_p: cfg.top_p,
    };
    let root = SeededRng::new(cfg.seed);
    let n_train = ctx.n_train();
    let clock = Stopwatch::start(cfg.record_wallclock);
    let mut l1_of_best = Vec::new();
    let mut best_seen = (f64::NEG_INFINITY, 0.0);
    let outcome = differential_evolution(dim, cfg, |cands, generation| {
        let batch: Vec<usize> = (0..cfg.batch_size)
            .map(|b| (generation * cfg.batch_size + b) % n_train)
            .collect();
        let stream = root.derive("es/generation", generation as u64);
        let scores = cands
            .par_iter()
            .map(|c| {
                let w = MixWeights::from_free(granularity, ids.clone(), n_layers, c)?;
                objective_lh(ctx, &w, &batch, decoding, cfg.lambda_l1, &stream)
            })
            .collect::<Result<Vec<f64>>>()?;
        for (c, s) in cands.iter().zip(&scores) {
            if *s > best_seen.0 {
                best_seen = (*s, c.iter().map(|v| v.abs()).sum());
            }
        }
        l1_of_best.push((best_seen.1, clock.elapsed_ms()));
        Ok(scores)
    })?;
    let trace = outcome
        .trace
        .iter()
        .zip(&l1_of_best)
        .map(|(&(step, value), &(l1, wall))| TraceRow {
            step,
            value,
            l1_norm: l1,
            wallclock_ms: wall,
        })
        .collect();
    let weights = MixWeights::from_free(granularity, ids, n_layers, &outcome.best)?;
    Ok((weights, trace))
}
