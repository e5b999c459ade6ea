use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusSpec;
use crate::error::{Error, Result};
use crate::experiment::artifact::{config_hash, read_text};
use crate::mixing::Granularity;
use crate::model::{ModelConfig, TrainConfig, DEFAULT_ALPHA, DEFAULT_RANK};
use crate::optim::{EsConfig, GrpoConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Es,
    Grpo,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Es => "es",
            Method::Grpo => "grpo",
        }
    }
}

/// Pretraining of the base rewriter on pairs that share content: the input
/// in one throwaway style, the output in another. The neutral style counts
/// as one of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseTrainSpec {
    pub pretrain_profiles: usize,
    /// Examples per output style.
    pub texts_per_profile: usize,
    /// Every `held_out_every`-th example is held out for evaluation.
    pub held_out_every: usize,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for BaseTrainSpec {
    fn default() -> Self {
        Self {
            pretrain_profiles: 64,
            texts_per_profile: 64,
            held_out_every: 40,
            train: TrainConfig {
                steps: 4000,
                batch_size: 16,
                warmup_steps: 100,
                final_lr_fraction: 0.05,
                ..TrainConfig::default()
            },
            seed: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterTrainSpec {
    pub rank: usize,
    pub alpha: f64,
    /// Trailing pairs per author kept out of training.
    pub held_out: usize,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for AdapterTrainSpec {
    fn default() -> Self {
        Self {
            rank: DEFAULT_RANK,
            alpha: DEFAULT_ALPHA,
            held_out: 32,
            train: TrainConfig {
                steps: 300,
                batch_size: 16,
                ..TrainConfig::default()
            },
            seed: 9,
        }
    }
}

/// Everything a run depends on. Optimizer seeds are overridden per run by
/// the entries of `seeds`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub corpus: CorpusSpec,
    pub model: ModelConfig,
    pub base: BaseTrainSpec,
    pub adapters: AdapterTrainSpec,
    pub k: usize,
    pub k_range: Vec<usize>,
    pub granularity: Granularity,
    pub method: Method,
    pub es: EsConfig,
    pub grpo: GrpoConfig,
    pub seeds: Vec<u64>,
    /// Seed of the prototype samples used for adapter selection.
    pub selection_seed: u64,
    /// Records optimizer wall-clock time in traces and sweeps. Off by
    /// default because it makes outputs differ between reruns.
    pub record_wallclock: bool,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let grpo = GrpoConfig::default();
        let es = EsConfig {
            // same number of generated rewrites as a default policy-gradient run
            max_evaluations: Some(grpo.steps * grpo.group_size / EsConfig::default().batch_size),
            ..EsConfig::default()
        };
        Self {
            corpus: CorpusSpec::default(),
            model: ModelConfig::default(),
            base: BaseTrainSpec::default(),
            adapters: AdapterTrainSpec::default(),
            k: 2,
            k_range: vec![2, 3],
            granularity: Granularity::Layer,
            method: Method::Grpo,
            es,
            grpo,
            seeds: vec![41, 42, 43],
            selection_seed: 42,
            record_wallclock: false,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(&read_text(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.model.validate()?;
        self.es.validate()?;
        self.grpo.validate()?;
        let lib = self.corpus.n_high_resource;
        for &k in std::iter::once(&self.k).chain(&self.k_range) {
            if k == 0 || k > lib {
                return Err(Error::config(format!("k = {k} outside 1..={lib}")));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if self.adapters.held_out >= self.corpus.pairs_per_author {
            return Err(Error::config("adapter held-out split leaves no training pairs"));
        }
        Ok(())
    }

    pub fn corpus_hash(&self) -> Result<String> {
        config_hash(&self.corpus)
    }

    pub fn base_hash_key(&self) -> Result<String> {
        config_hash(&(&self.corpus, &self.model, &self.base))
    }

    pub fn adapters_hash(&self) -> Result<String> {
        config_hash(&(&self.corpus, &self.model, &self.base, &self.adapters))
    }

    /// Hash of everything but the output directory and the seed list.
    pub fn run_hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.seeds.clear();
        c.record_wallclock = false;
        config_hash(&c)
    }

    /// Hash of everything one optimized variant depends on, seeds aside.
    pub fn variant_hash(&self, method: Method, granularity: Granularity, k: usize) -> Result<String> {
        let optimizer = match method {
            Method::Es => serde_json::to_value(self.es_config(0))?,
            Method::Grpo => serde_json::to_value(self.grpo_config(0))?,
        };
        let mut optimizer = optimizer;
        optimizer["record_wallclock"] = false.into();
        config_hash(&(
            self.adapters_hash()?,
            self.selection_seed,
            optimizer,
            method,
            granularity,
            k,
        ))
    }

    pub fn es_config(&self, seed: u64) -> EsConfig {
        EsConfig {
            seed,
            record_wallclock: self.record_wallclock,
            ..self.es.clone()
        }
    }

    pub fn grpo_config(&self, seed: u64) -> GrpoConfig {
        GrpoConfig {
            seed,
            record_wallclock: self.record_wallclock,
            ..self.grpo.clone()
        }
    }
}
