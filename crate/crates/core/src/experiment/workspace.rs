use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_dataset, AuthorFile, AuthorRole, Dataset};
use crate::error::{Error, Result};
use crate::experiment::artifact::{read_artifact, write_artifact, write_text, Artifact, ArtifactMeta};
use crate::experiment::config::{Method, RunConfig};
use crate::experiment::report::{layer_stats, layer_stats_to_csv, sweep_to_csv, GridReport, LayerStat, SweepRow};
use crate::experiment::stages::{
    build_library, check_disjoint, learn_weights, rewrite_texts, score_rewrites, source_texts, target_prototype,
    train_adapter_stage, train_base_stage, AdapterReport, Rewrite,
};
use crate::metrics::scores_to_csv;
use crate::mixing::{Granularity, MixWeights};
use crate::model::{AuthorAdapter, BaseModel, TrainReport};
use crate::optim::{trace_to_csv, TraceRow};
use crate::selection::{rank_adapters, Selection};

/// Names one optimized variant: method, granularity, k and seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Variant {
    pub method: Method,
    pub granularity: Granularity,
    pub k: usize,
    pub seed: u64,
}

impl Variant {
    pub fn tag(&self) -> String {
        format!(
            "{}-{}-k{}-s{}",
            self.method.as_str(),
            self.granularity.as_str(),
            self.k,
            self.seed
        )
    }
}

/// Learned weights of one target plus the optimizer trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnedWeights {
    pub target_id: String,
    pub weights: MixWeights,
    pub trace: Vec<TraceRow>,
}

/// Mean test scores of every library adapter applied alone at weight 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleAdapterReport {
    pub seed: u64,
    /// One report per library adapter, method `single:<author_id>`.
    pub per_adapter: Vec<GridReport>,
}

impl SingleAdapterReport {
    /// Highest per-target mean joint over adapters, with the adapter id.
    pub fn best_for(&self, target_id: &str) -> Option<(String, f64)> {
        self.per_adapter
            .iter()
            .filter_map(|r| {
                let id = r.method.strip_prefix("single:")?;
                Some((id.to_string(), r.target(target_id)?.mean.joint))
            })
            .fold(None, |best: Option<(String, f64)>, (id, j)| match best {
                Some((_, b)) if b >= j => best,
                _ => Some((id, j)),
            })
    }
}

/// A run directory. Every stage writes its outputs below `root`; with
/// `reuse` set, a stage whose outputs exist with a matching config hash
/// loads them instead of recomputing.
pub struct Workspace {
    cfg: RunConfig,
    root: PathBuf,
    reuse: bool,
}

const DATASET_DIR: &str = "dataset";

impl Workspace {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let root = cfg.out_dir.clone();
        Ok(Self {
            cfg,
            root,
            reuse: false,
        })
    }

    /// Loads matching outputs of earlier runs instead of recomputing them.
    pub fn reusing(mut self) -> Self {
        self.reuse = true;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.root.join(rel)
    }

    fn cached<T: DeserializeOwned>(&self, path: &Path, kind: &str, hash: &str, seed: u64) -> Option<Artifact<T>> {
        if !self.reuse || !path.exists() {
            return None;
        }
        let art: Artifact<T> = read_artifact(path, kind).ok()?;
        (art.meta.config_hash == hash && art.meta.seed == seed).then_some(art)
    }

    // ---- corpus

    pub fn gen_corpus(&self) -> Result<Dataset> {
        let hash = self.cfg.corpus_hash()?;
        let seed = self.cfg.corpus.seed;
        if self.reuse {
            if let Ok(ds) = self.load_dataset() {
                return Ok(ds);
            }
        }
        let ds = build_dataset(&self.cfg.corpus)?;
        let dir = self.path(DATASET_DIR);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        for a in &ds.authors {
            write_artifact(
                &dir.join(format!("{}.json", a.author_id)),
                &ArtifactMeta::new("author", &hash, seed),
                a,
            )?;
        }
        Ok(ds)
    }

    /// Reads the dataset written by [`Workspace::gen_corpus`] for this config.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let dir = self.path(DATASET_DIR);
        let hash = self.cfg.corpus_hash()?;
        let mut names: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        names.sort();
        let mut authors = Vec::new();
        for p in names {
            let art: Artifact<AuthorFile> = read_artifact(&p, "author")?;
            if art.meta.config_hash != hash {
                return Err(Error::config(format!(
                    "{} was generated from a different corpus spec",
                    p.display()
                )));
            }
            authors.push(art.payload);
        }
        let ds = Dataset {
            spec: self.cfg.corpus.clone(),
            authors,
        };
        let count = |r| ds.by_role(r).count();
        let spec = &self.cfg.corpus;
        if count(AuthorRole::HighResource) != spec.n_high_resource
            || count(AuthorRole::Target) != spec.n_targets
            || count(AuthorRole::Source) != spec.n_sources
        {
            return Err(Error::config(format!(
                "{} does not hold the configured authors",
                dir.display()
            )));
        }
        Ok(ds)
    }

    // ---- base model

    pub fn train_base(&self) -> Result<BaseModel> {
        let hash = self.cfg.base_hash_key()?;
        let path = self.path("base/model.json");
        if let Some(art) = self.cached::<BaseModel>(&path, "base_model", &hash, self.cfg.base.seed) {
            return Ok(art.payload);
        }
        let (model, report) = train_base_stage(&self.cfg)?;
        let meta = ArtifactMeta::new("base_model", &hash, self.cfg.base.seed).with_base(model.content_hash());
        write_artifact(&path, &meta, &model)?;
        write_artifact(
            &self.path("base/report.json"),
            &ArtifactMeta::new("base_report", &hash, self.cfg.base.seed),
            &report,
        )?;
        Ok(model)
    }

    pub fn load_base(&self) -> Result<BaseModel> {
        let art: Artifact<BaseModel> = read_artifact(&self.path("base/model.json"), "base_model")?;
        art.meta.require_base(&art.payload.content_hash())?;
        Ok(art.payload)
    }

    pub fn base_report(&self) -> Result<TrainReport> {
        Ok(read_artifact::<TrainReport>(&self.path("base/report.json"), "base_report")?.payload)
    }

    // ---- adapters

    fn adapter_path(&self, id: &str) -> PathBuf {
        self.path(format!("adapters/{id}.json"))
    }

    pub fn train_adapters(&self, dataset: &Dataset, base: &BaseModel) -> Result<Vec<(AuthorAdapter, AdapterReport)>> {
        let hash = self.cfg.adapters_hash()?;
        let seed = self.cfg.adapters.seed;
        let base_hash = base.content_hash();
        let mut out = Vec::new();
        for author in dataset.by_role(AuthorRole::HighResource) {
            let path = self.adapter_path(&author.author_id);
            let report_path = self.path(format!("adapters/{}.report.json", author.author_id));
            if let (Some(a), Some(r)) = (
                self.cached::<AuthorAdapter>(&path, "adapter", &hash, seed),
                self.cached::<AdapterReport>(&report_path, "adapter_report", &hash, seed),
            ) {
                if a.meta.require_base(&base_hash).is_ok() {
                    out.push((a.payload, r.payload));
                    continue;
                }
            }
            let (adapter, report) = train_adapter_stage(&self.cfg.adapters, base, author)?;
            log::info!(
                "adapter {}: held-out loss {:.4} (base {:.4})",
                author.author_id,
                report.adapter_loss,
                report.base_loss
            );
            write_artifact(
                &path,
                &ArtifactMeta::new("adapter", &hash, seed).with_base(&base_hash),
                &adapter,
            )?;
            write_artifact(&report_path, &ArtifactMeta::new("adapter_report", &hash, seed), &report)?;
            out.push((adapter, report));
        }
        Ok(out)
    }

    /// Loads every library adapter, rejecting any trained on another base.
    pub fn load_adapters(&self, dataset: &Dataset, base: &BaseModel) -> Result<Vec<AuthorAdapter>> {
        let base_hash = base.content_hash();
        dataset
            .by_role(AuthorRole::HighResource)
            .map(|a| {
                let art: Artifact<AuthorAdapter> = read_artifact(&self.adapter_path(&a.author_id), "adapter")?;
                art.meta.require_base(&base_hash)?;
                art.payload.check_against(base)?;
                Ok(art.payload)
            })
            .collect()
    }

    // ---- selection

    pub fn select(&self, dataset: &Dataset, adapters: &[AuthorAdapter], k: usize) -> Result<Vec<Selection>> {
        let library = build_library(dataset, adapters, self.cfg.selection_seed)?;
        let hash = self.cfg.adapters_hash()?;
        dataset
            .by_role(AuthorRole::Target)
            .map(|t| {
                let ranking = rank_adapters(&target_prototype(t)?, &library)?;
                let sel = Selection::new(t.author_id.clone(), &ranking, k)?;
                write_artifact(
                    &self.path(format!("selection/k{k}/{}.json", t.author_id)),
                    &ArtifactMeta::new("selection", &hash, self.cfg.selection_seed),
                    &sel,
                )?;
                Ok(sel)
            })
            .collect()
    }

    // ---- optimization

    fn weights_path(&self, v: &Variant, target: &str) -> PathBuf {
        self.path(format!("weights/{}/{target}.json", v.tag()))
    }

    pub fn optimize(
        &self,
        dataset: &Dataset,
        base: &BaseModel,
        adapters: &[AuthorAdapter],
        v: Variant,
    ) -> Result<Vec<LearnedWeights>> {
        let hash = self.cfg.variant_hash(v.method, v.granularity, v.k)?;
        let base_hash = base.content_hash();
        let selections = self.select(dataset, adapters, v.k)?;
        let (train, test) = source_texts(dataset)?;
        check_disjoint(&train, &test)?;
        let mut out = Vec::new();
        for sel in selections {
            let path = self.weights_path(&v, &sel.target_id);
            if let Some(art) = self.cached::<LearnedWeights>(&path, "weights", &hash, v.seed) {
                if art.meta.require_base(&base_hash).is_ok() {
                    out.push(art.payload);
                    continue;
                }
            }
            let target = dataset
                .author(&sel.target_id)
                .ok_or_else(|| Error::config(format!("unknown target {}", sel.target_id)))?;
            let chosen = pick(adapters, &sel.ids())?;
            let (weights, trace) = learn_weights(
                &self.cfg,
                v.method,
                v.granularity,
                v.seed,
                base,
                &chosen,
                target,
                &train,
            )?;
            let learned = LearnedWeights {
                target_id: sel.target_id.clone(),
                weights,
                trace,
            };
            write_artifact(
                &path,
                &ArtifactMeta::new("weights", &hash, v.seed).with_base(&base_hash),
                &learned,
            )?;
            write_text(
                &self.path(format!("weights/{}/{}.trace.csv", v.tag(), sel.target_id)),
                &trace_to_csv(&learned.trace),
            )?;
            out.push(learned);
        }
        Ok(out)
    }

    pub fn load_weights(&self, v: &Variant, target: &str, base: &BaseModel) -> Result<LearnedWeights> {
        let art: Artifact<LearnedWeights> = read_artifact(&self.weights_path(v, target), "weights")?;
        art.meta.require_base(&base.content_hash())?;
        Ok(art.payload)
    }

    // ---- rewriting and scoring

    /// Rewrites every source test text toward every target with the learned
    /// weights of `v`.
    pub fn rewrite(
        &self,
        dataset: &Dataset,
        base: &BaseModel,
        adapters: &[AuthorAdapter],
        v: Variant,
    ) -> Result<Vec<Rewrite>> {
        let (train, test) = source_texts(dataset)?;
        check_disjoint(&train, &test)?;
        let mut all = Vec::new();
        for t in dataset.by_role(AuthorRole::Target) {
            let learned = self.load_weights(&v, &t.author_id, base)?;
            let chosen = pick(adapters, learned.weights.adapter_ids())?;
            all.extend(rewrite_texts(
                base,
                &chosen,
                &learned.weights,
                &t.author_id,
                &test,
                v.seed,
            )?);
        }
        let hash = self.cfg.variant_hash(v.method, v.granularity, v.k)?;
        write_artifact(
            &self.path(format!("rewrites/{}.json", v.tag())),
            &ArtifactMeta::new("rewrites", &hash, v.seed).with_base(base.content_hash()),
            &all,
        )?;
        Ok(all)
    }

    /// Scores the rewrites of `v` and writes the score CSV and the report.
    pub fn evaluate(&self, dataset: &Dataset, base: &BaseModel, v: Variant) -> Result<GridReport> {
        let path = self.path(format!("rewrites/{}.json", v.tag()));
        let art: Artifact<Vec<Rewrite>> = read_artifact(&path, "rewrites")?;
        art.meta.require_base(&base.content_hash())?;
        let report = self.score(dataset, base, &art.payload, |rows| {
            GridReport::for_method(v.method, v.granularity, v.k, v.seed, rows)
        })?;
        let hash = self.cfg.variant_hash(v.method, v.granularity, v.k)?;
        write_text(
            &self.path(format!("scores/{}.csv", v.tag())),
            &scores_to_csv(&report.rows),
        )?;
        write_artifact(
            &self.path(format!("reports/{}.json", v.tag())),
            &ArtifactMeta::new("grid_report", &hash, v.seed),
            &report,
        )?;
        Ok(report)
    }

    fn score(
        &self,
        dataset: &Dataset,
        base: &BaseModel,
        rewrites: &[Rewrite],
        build: impl FnOnce(Vec<crate::metrics::ScoreRow>) -> Result<GridReport>,
    ) -> Result<GridReport> {
        let mut rows = Vec::with_capacity(rewrites.len());
        for t in dataset.by_role(AuthorRole::Target) {
            let proto = target_prototype(t)?;
            let mine: Vec<Rewrite> = rewrites
                .iter()
                .filter(|r| r.target_author == t.author_id)
                .cloned()
                .collect();
            rows.extend(score_rewrites(base, &proto, &mine)?);
        }
        build(rows)
    }

    pub fn load_report(&self, v: &Variant) -> Result<GridReport> {
        let art: Artifact<GridReport> = read_artifact(&self.path(format!("reports/{}.json", v.tag())), "grid_report")?;
        art.payload.check_consistency()?;
        Ok(art.payload)
    }

    /// Optimize, rewrite and evaluate one variant; with reuse, a stored
    /// consistent report short-circuits everything.
    pub fn run_variant(
        &self,
        dataset: &Dataset,
        base: &BaseModel,
        adapters: &[AuthorAdapter],
        v: Variant,
    ) -> Result<GridReport> {
        if self.reuse {
            let hash = self.cfg.variant_hash(v.method, v.granularity, v.k)?;
            let path = self.path(format!("reports/{}.json", v.tag()));
            if let Some(art) = self.cached::<GridReport>(&path, "grid_report", &hash, v.seed) {
                if art.payload.check_consistency().is_ok() {
                    return Ok(art.payload);
                }
            }
        }
        self.optimize(dataset, base, adapters, v)?;
        self.rewrite(dataset, base, adapters, v)?;
        self.evaluate(dataset, base, v)
    }

    /// Every library adapter alone at weight 1, scored on the test texts.
    pub fn single_adapters(
        &self,
        dataset: &Dataset,
        base: &BaseModel,
        adapters: &[AuthorAdapter],
        seed: u64,
    ) -> Result<SingleAdapterReport> {
        let hash = self.cfg.adapters_hash()?;
        let path = self.path(format!("reports/single-s{seed}.json"));
        if let Some(art) = self.cached::<SingleAdapterReport>(&path, "single_adapters", &hash, seed) {
            return Ok(art.payload);
        }
        let (_, test) = source_texts(dataset)?;
        let mut per_adapter = Vec::new();
        for a in adapters {
            let w = MixWeights::one_hot(vec![a.author_id.clone()], base.config.n_layers, 0, Granularity::Layer)?;
            let mut rewrites = Vec::new();
            for t in dataset.by_role(AuthorRole::Target) {
                rewrites.extend(rewrite_texts(
                    base,
                    std::slice::from_ref(a),
                    &w,
                    &t.author_id,
                    &test,
                    seed,
                )?);
            }
            let method = format!("single:{}", a.author_id);
            per_adapter.push(self.score(dataset, base, &rewrites, |rows| {
                GridReport::new(method, None, 1, seed, rows)
            })?);
        }
        let report = SingleAdapterReport { seed, per_adapter };
        write_artifact(&path, &ArtifactMeta::new("single_adapters", &hash, seed), &report)?;
        Ok(report)
    }

    // ---- analysis

    /// Runs every method and granularity over `k_range` for one seed and
    /// writes `sweep-s{seed}.csv`.
    pub fn k_sweep(
        &self,
        dataset: &Dataset,
        base: &BaseModel,
        adapters: &[AuthorAdapter],
        seed: u64,
    ) -> Result<Vec<SweepRow>> {
        let mut rows = Vec::new();
        for method in [Method::Es, Method::Grpo] {
            for granularity in [Granularity::Layer, Granularity::Adapter] {
                for &k in &self.cfg.k_range {
                    let v = Variant {
                        method,
                        granularity,
                        k,
                        seed,
                    };
                    let report = self.run_variant(dataset, base, adapters, v)?;
                    let wallclock_ms = self.optimizer_wallclock(&v, dataset, base)?;
                    rows.push(SweepRow {
                        method: method.as_str().into(),
                        granularity: granularity.as_str().into(),
                        k,
                        joint: report.mean.joint,
                        toward: report.mean.toward,
                        meaning: report.mean.meaning,
                        wallclock_ms,
                    });
                }
            }
        }
        write_text(&self.path(format!("sweep-s{seed}.csv")), &sweep_to_csv(&rows))?;
        Ok(rows)
    }

    fn optimizer_wallclock(&self, v: &Variant, dataset: &Dataset, base: &BaseModel) -> Result<Option<f64>> {
        let mut total = None;
        for t in dataset.by_role(AuthorRole::Target) {
            let learned = self.load_weights(v, &t.author_id, base)?;
            if let Some(ms) = learned.trace.last().and_then(|r| r.wallclock_ms) {
                total = Some(total.unwrap_or(0.0) + ms);
            }
        }
        Ok(total)
    }

    /// Per-target heatmaps and per-layer aggregates over targets for one
    /// variant, written under `heatmap/<tag>/`.
    pub fn heatmap(&self, dataset: &Dataset, base: &BaseModel, v: &Variant) -> Result<Vec<LayerStat>> {
        if v.granularity == Granularity::Adapter {
            log::warn!("{}: adapter-wise weights give constant rows in the heatmap", v.tag());
        }
        let mut all = Vec::new();
        for t in dataset.by_role(AuthorRole::Target) {
            let learned = self.load_weights(v, &t.author_id, base)?;
            write_text(
                &self.path(format!("heatmap/{}/{}.csv", v.tag(), t.author_id)),
                &learned.weights.heatmap_csv(),
            )?;
            all.push(learned.weights);
        }
        let stats = layer_stats(&all.iter().collect::<Vec<_>>())?;
        write_text(
            &self.path(format!("heatmap/{}/layers.csv", v.tag())),
            &layer_stats_to_csv(&stats),
        )?;
        Ok(stats)
    }
}

/// Adapters with the given ids, in that order.
pub fn pick(adapters: &[AuthorAdapter], ids: &[String]) -> Result<Vec<AuthorAdapter>> {
    ids.iter()
        .map(|id| {
            adapters
                .iter()
                .find(|a| &a.author_id == id)
                .cloned()
                .ok_or_else(|| Error::Library(format!("adapter {id} is not in the library")))
        })
        .collect()
}
