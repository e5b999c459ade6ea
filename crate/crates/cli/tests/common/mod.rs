#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use stylemix_cli::{run, Cli};
use stylemix_core::experiment::RunConfig;

pub fn cli(args: &[&str]) -> Cli {
    Cli::try_parse_from(std::iter::once("stylemix").chain(args.iter().copied())).unwrap()
}

pub fn run_in(out: &Path, config: Option<&Path>, args: &[&str]) -> anyhow::Result<String> {
    let out = out.to_str().unwrap();
    let mut all: Vec<&str> = args.to_vec();
    all.extend(["--out", out]);
    let cfg_path;
    if let Some(c) = config {
        cfg_path = c.to_str().unwrap().to_string();
        all.extend(["--config", &cfg_path]);
    }
    run(&cli(&all))
}

/// Small enough that every stage runs in seconds.
pub fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.corpus.n_high_resource = 3;
    cfg.corpus.pairs_per_author = 40;
    cfg.corpus.n_targets = 2;
    cfg.corpus.texts_per_target = 4;
    cfg.corpus.n_sources = 2;
    cfg.corpus.source_train = 4;
    cfg.corpus.source_test = 2;
    cfg.model.d_model = 16;
    cfg.model.n_layers = 2;
    cfg.model.n_heads = 2;
    cfg.model.d_ff = 16;
    cfg.base.pretrain_profiles = 2;
    cfg.base.texts_per_profile = 8;
    cfg.base.held_out_every = 4;
    cfg.base.train.steps = 4;
    cfg.base.train.batch_size = 4;
    cfg.base.train.warmup_steps = 1;
    cfg.adapters.held_out = 4;
    cfg.adapters.train.steps = 3;
    cfg.adapters.train.batch_size = 4;
    cfg.k = 2;
    cfg.k_range = vec![1, 2];
    cfg.es.steps = 1;
    cfg.es.population = 4;
    cfg.es.batch_size = 2;
    cfg.es.max_evaluations = None;
    cfg.grpo.steps = 2;
    cfg.grpo.group_size = 2;
    cfg.seeds = vec![3];
    cfg
}

pub fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

pub fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}
