//! Subcommands of the `stylemix` binary. Each one runs a single pipeline
//! stage inside the run directory and leaves its outputs there.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use stylemix_core::experiment::{
    layer_peak_ratio, layer_variance, read_artifact, write_text, GridReport, Method, RunConfig, Variant, Workspace,
};
use stylemix_core::mixing::Granularity;

#[derive(Debug, Parser)]
#[command(name = "stylemix", version, about = "Layer-wise adapter mixing for style transfer")]
pub struct Cli {
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Restrict seeded stages to this seed instead of the configured list.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long, global = true, value_enum)]
    pub granularity: Option<GranularityArg>,
    /// Run directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MethodArg {
    Es,
    Grpo,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum GranularityArg {
    Layer,
    Adapter,
}

#[derive(Clone, Copy, Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus, one JSON file per author.
    GenCorpus,
    /// Pretrain the base rewriter.
    TrainBase,
    /// Fit one adapter per library author.
    TrainAdapters,
    /// Rank library adapters for every target and keep the top k.
    Select,
    /// Learn mixing weights for every target.
    Optimize,
    /// Rewrite the source test texts with learned weights.
    Rewrite,
    /// Score rewrites and write the grid report.
    Evaluate,
    /// Run every method and granularity over the configured k range.
    KSweep,
    /// Export per-layer weight heatmaps and aggregates.
    Heatmap,
    /// Summarize every grid report in the run directory.
    Report,
}

impl Cli {
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => RunConfig::default(),
        };
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(m) = self.method {
            cfg.method = match m {
                MethodArg::Es => Method::Es,
                MethodArg::Grpo => Method::Grpo,
            };
        }
        if let Some(g) = self.granularity {
            cfg.granularity = match g {
                GranularityArg::Layer => Granularity::Layer,
                GranularityArg::Adapter => Granularity::Adapter,
            };
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn variants(cfg: &RunConfig) -> Vec<Variant> {
    cfg.seeds
        .iter()
        .map(|&seed| Variant {
            method: cfg.method,
            granularity: cfg.granularity,
            k: cfg.k,
            seed,
        })
        .collect()
}

/// Runs one subcommand and returns a human-readable summary.
pub fn run(cli: &Cli) -> Result<String> {
    let cfg = cli.run_config()?;
    let ws = Workspace::new(cfg.clone())?;
    let mut out = String::new();
    match cli.command {
        Command::GenCorpus => {
            let ds = ws.gen_corpus()?;
            out.push_str(&format!(
                "wrote {} author files to {}\n",
                ds.authors.len(),
                ws.root().join("dataset").display()
            ));
        }
        Command::TrainBase => {
            ws.train_base()?;
            let r = ws.base_report()?;
            out.push_str(&format!(
                "base held-out loss {:.4} -> {:.4}\n",
                r.initial_eval_loss, r.final_eval_loss
            ));
        }
        Command::TrainAdapters => {
            let ds = ws.load_dataset()?;
            let base = ws.load_base()?;
            for (_, r) in ws.train_adapters(&ds, &base)? {
                out.push_str(&format!(
                    "{}: held-out loss {:.4} (base {:.4})\n",
                    r.author_id, r.adapter_loss, r.base_loss
                ));
            }
        }
        Command::Select => {
            let ds = ws.load_dataset()?;
            let base = ws.load_base()?;
            let adapters = ws.load_adapters(&ds, &base)?;
            for sel in ws.select(&ds, &adapters, cfg.k)? {
                let picks: Vec<String> = sel
                    .selected
                    .iter()
                    .map(|s| format!("{} ({:.3})", s.author_id, s.cosine))
                    .collect();
                out.push_str(&format!("{}: {}\n", sel.target_id, picks.join(", ")));
            }
        }
        Command::Optimize => {
            let ds = ws.load_dataset()?;
            let base = ws.load_base()?;
            let adapters = ws.load_adapters(&ds, &base)?;
            for v in variants(&cfg) {
                for lw in ws.optimize(&ds, &base, &adapters, v)? {
                    let last = lw.trace.last().map(|r| r.value).unwrap_or(f64::NAN);
                    out.push_str(&format!(
                        "{} {}: final value {last:.4}, |W|_1 {:.3}\n",
                        v.tag(),
                        lw.target_id,
                        lw.weights.l1_norm()
                    ));
                }
            }
        }
        Command::Rewrite => {
            let ds = ws.load_dataset()?;
            let base = ws.load_base()?;
            let adapters = ws.load_adapters(&ds, &base)?;
            for v in variants(&cfg) {
                let n = ws.rewrite(&ds, &base, &adapters, v)?.len();
                out.push_str(&format!("{}: {n} rewrites\n", v.tag()));
            }
        }
        Command::Evaluate => {
            let ds = ws.load_dataset()?;
            let base = ws.load_base()?;
            for v in variants(&cfg) {
                let r = ws.evaluate(&ds, &base, v)?;
                out.push_str(&summary_line(&v.tag(), &r));
            }
        }
        Command::KSweep => {
            let ds = ws.load_dataset()?;
            let base = ws.load_base()?;
            let adapters = ws.load_adapters(&ds, &base)?;
            for &seed in &cfg.seeds {
                for r in ws.k_sweep(&ds, &base, &adapters, seed)? {
                    out.push_str(&format!(
                        "seed {seed} {} {} k={}: joint {:.4} toward {:.4} meaning {:.4}\n",
                        r.method, r.granularity, r.k, r.joint, r.toward, r.meaning
                    ));
                }
            }
        }
        Command::Heatmap => {
            let ds = ws.load_dataset()?;
            let base = ws.load_base()?;
            for v in variants(&cfg) {
                let stats = ws.heatmap(&ds, &base, &v)?;
                out.push_str(&format!(
                    "{}: peak/median |layer mean| {:.3}, layer variance {:.3e}\n",
                    v.tag(),
                    layer_peak_ratio(&stats),
                    layer_variance(&stats)
                ));
            }
        }
        Command::Report => {
            let reports = collect_reports(&ws)?;
            if reports.is_empty() {
                bail!("no grid reports under {}", ws.root().join("reports").display());
            }
            let mut csv =
                String::from("tag,method,granularity,k,seed,n,joint,joint_of_means,toward,away,meaning,fluency\r\n");
            for (tag, r) in &reports {
                let g = r.granularity.map(|g| g.as_str()).unwrap_or("");
                csv.push_str(&format!(
                    "{tag},{},{g},{},{},{},{},{},{},{},{},{}\r\n",
                    r.method,
                    r.k,
                    r.seed,
                    r.rows.len(),
                    r.mean.joint,
                    r.joint_of_means,
                    r.mean.toward,
                    r.mean.away,
                    r.mean.meaning,
                    r.mean.fluency
                ));
                out.push_str(&summary_line(tag, r));
            }
            write_text(&ws.root().join("summary.csv"), &csv)?;
        }
    }
    Ok(out)
}

fn summary_line(tag: &str, r: &GridReport) -> String {
    format!(
        "{tag}: joint {:.4} (joint of means {:.4}), toward {:.4}, meaning {:.4}, n={}\n",
        r.mean.joint,
        r.joint_of_means,
        r.mean.toward,
        r.mean.meaning,
        r.rows.len()
    )
}

/// Every variant report in the run directory, sorted by file name, each
/// checked for self-consistency.
fn collect_reports(ws: &Workspace) -> Result<Vec<(String, GridReport)>> {
    let dir = ws.root().join("reports");
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let tag = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if tag.starts_with("single-") {
            continue;
        }
        let art = read_artifact::<GridReport>(&p, "grid_report")?;
        art.payload
            .check_consistency()
            .with_context(|| format!("{} is inconsistent", p.display()))?;
        out.push((tag, art.payload));
    }
    Ok(out)
}
