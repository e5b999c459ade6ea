//! Layer-wise and adapter-wise scalar mixing of author adapters, and exact
//! merging of the mixture into the base model.

mod weights;

pub use weights::{Granularity, MixWeights, WEIGHT_BOUND};

use crate::error::{Error, Result};
use crate::math::DenseMatrix;
use crate::model::{AdaptedModule, AuthorAdapter, BaseModel};

/// Dense per-layer deltas of one adapter, `(alpha / r) · B · A` expanded.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpandedAdapter {
    pub author_id: String,
    pub layers: Vec<Vec<(AdaptedModule, DenseMatrix)>>,
}

impl ExpandedAdapter {
    pub fn new(adapter: &AuthorAdapter) -> Self {
        Self {
            author_id: adapter.author_id.clone(),
            layers: adapter
                .layers
                .iter()
                .map(|l| l.deltas.iter().map(|d| (d.module, d.effective())).collect())
                .collect(),
        }
    }

    pub fn delta(&self, layer: usize, module: AdaptedModule) -> Option<&DenseMatrix> {
        self.layers[layer].iter().find(|(m, _)| *m == module).map(|(_, d)| d)
    }

    fn structure(&self) -> Vec<Vec<(AdaptedModule, (usize, usize))>> {
        self.layers
            .iter()
            .map(|l| l.iter().map(|(m, d)| (*m, d.shape())).collect())
            .collect()
    }
}

/// Combined per-layer deltas for every adapted module.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedAdapter {
    pub layers: Vec<Vec<(AdaptedModule, DenseMatrix)>>,
}

impl MixedAdapter {
    pub fn delta(&self, layer: usize, module: AdaptedModule) -> Option<&DenseMatrix> {
        self.layers[layer].iter().find(|(m, _)| *m == module).map(|(_, d)| d)
    }

    /// The mixture with every delta multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> MixedAdapter {
        let mut out = self.clone();
        for layer in &mut out.layers {
            for (_, d) in layer {
                d.scale(factor);
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flatten()
            .map(|(_, d)| d.max_abs())
            .fold(0.0, f64::max)
    }
}

fn check_library(adapters: &[ExpandedAdapter], weights: &MixWeights) -> Result<()> {
    let first = adapters
        .first()
        .ok_or_else(|| Error::Library("cannot mix an empty adapter list".into()))?;
    let structure = first.structure();
    for a in &adapters[1..] {
        if a.structure() != structure {
            return Err(Error::Library(format!(
                "adapter {} does not share the module structure of {}",
                a.author_id, first.author_id
            )));
        }
    }
    if weights.n_adapters() != adapters.len() || weights.n_layers() != first.layers.len() {
        return Err(Error::Library(format!(
            "weights are {}x{}, library is {} adapters x {} layers",
            weights.n_adapters(),
            weights.n_layers(),
            adapters.len(),
            first.layers.len()
        )));
    }
    for (a, id) in adapters.iter().zip(weights.adapter_ids()) {
        if &a.author_id != id {
            return Err(Error::Library(format!(
                "weight row {id} does not match adapter {}",
                a.author_id
            )));
        }
    }
    Ok(())
}

/// `delta_j = sum_i W[i, j] · delta_j^(i)` for every layer `j` and module.
/// Terms are accumulated in ascending adapter order; zero weights are skipped.
pub fn mix_expanded(adapters: &[ExpandedAdapter], weights: &MixWeights) -> Result<MixedAdapter> {
    check_library(adapters, weights)?;
    let layers = (0..weights.n_layers())
        .map(|j| {
            adapters[0].layers[j]
                .iter()
                .enumerate()
                .map(|(k, (module, d))| {
                    let mut acc = DenseMatrix::zeros(d.rows(), d.cols());
                    for (i, a) in adapters.iter().enumerate() {
                        let w = weights.get(i, j);
                        if w != 0.0 {
                            acc.axpy(w, &a.layers[j][k].1);
                        }
                    }
                    (*module, acc)
                })
                .collect()
        })
        .collect();
    Ok(MixedAdapter { layers })
}

pub fn mix_layerwise(adapters: &[AuthorAdapter], weights: &MixWeights) -> Result<MixedAdapter> {
    let expanded: Vec<ExpandedAdapter> = adapters.iter().map(ExpandedAdapter::new).collect();
    mix_expanded(&expanded, weights)
}

/// Layer-wise mixing with each adapter's weight shared by all layers.
pub fn mix_adapterwise(adapters: &[AuthorAdapter], weights: &[f64]) -> Result<MixedAdapter> {
    let n_layers = adapters.first().map_or(0, |a| a.n_layers());
    let ids: Vec<String> = adapters.iter().map(|a| a.author_id.clone()).collect();
    let w = MixWeights::adapterwise(ids, n_layers, weights)?;
    mix_layerwise(adapters, &w)
}

/// Base model with every mixed delta added to its projection. Zero delta
/// entries leave the base parameter untouched, bit for bit.
pub fn merge_into_base(model: &BaseModel, mixed: &MixedAdapter) -> Result<BaseModel> {
    if mixed.layers.len() != model.config.n_layers {
        return Err(Error::Library(format!(
            "mixture has {} layers, model has {}",
            mixed.layers.len(),
            model.config.n_layers
        )));
    }
    let mut merged = model.clone();
    for (j, layer) in mixed.layers.iter().enumerate() {
        for (module, delta) in layer {
            let w = match module {
                AdaptedModule::Query => &mut merged.blocks[j].wq,
                AdaptedModule::Value => &mut merged.blocks[j].wv,
            };
            if w.shape() != delta.shape() {
                return Err(Error::Library(format!(
                    "delta for layer {j} {} has shape {:?}, weight has {:?}",
                    module.name(),
                    delta.shape(),
                    w.shape()
                )));
            }
            for (x, d) in w.data_mut().iter_mut().zip(delta.data()) {
                if *d != 0.0 {
                    *x += d;
                }
            }
        }
    }
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::SeededRng;
    use crate::model::{forward_logits, ModelConfig, ScaledAdapter};
    use proptest::prelude::*;

    fn toy() -> ModelConfig {
        ModelConfig {
            vocab_size: 12,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 16,
            context_len: 16,
        }
    }

    fn random_adapter(id: &str, cfg: &ModelConfig, seed: u64) -> AuthorAdapter {
        let mut rng = SeededRng::new(seed);
        let mut a = AuthorAdapter::init(id, cfg, 3, 6.0, &mut rng);
        for f in a.factors_mut() {
            f.data_mut().iter_mut().for_each(|v| *v = rng.normal(0.0, 0.3));
        }
        a
    }

    fn library(cfg: &ModelConfig) -> Vec<AuthorAdapter> {
        vec![
            random_adapter("a", cfg, 1),
            random_adapter("b", cfg, 2),
            random_adapter("c", cfg, 3),
        ]
    }

    fn ids(lib: &[AuthorAdapter]) -> Vec<String> {
        lib.iter().map(|a| a.author_id.clone()).collect()
    }

    #[test]
    fn one_hot_reproduces_the_adapter_bitwise() {
        let cfg = toy();
        let lib = library(&cfg);
        for i in 0..lib.len() {
            let w = MixWeights::one_hot(ids(&lib), cfg.n_layers, i, Granularity::Layer).unwrap();
            let mixed = mix_layerwise(&lib, &w).unwrap();
            let single = ExpandedAdapter::new(&lib[i]);
            assert_eq!(mixed.layers, single.layers);
        }
    }

    #[test]
    fn zero_weights_leave_the_base_untouched() {
        let cfg = toy();
        let lib = library(&cfg);
        let model = BaseModel::init(cfg.clone(), &mut SeededRng::new(5)).unwrap();
        let w = MixWeights::zeros(ids(&lib), cfg.n_layers, Granularity::Layer);
        let mixed = mix_layerwise(&lib, &w).unwrap();
        assert_eq!(mixed.max_abs(), 0.0);
        let merged = merge_into_base(&model, &mixed).unwrap();
        assert_eq!(merged, model);
        let toks = [0, 3, 5, 7];
        assert_eq!(
            forward_logits(&merged, &[], &toks).unwrap(),
            forward_logits(&model, &[], &toks).unwrap()
        );
    }

    #[test]
    fn half_weights_give_the_entrywise_mean() {
        let cfg = toy();
        let lib = vec![random_adapter("a", &cfg, 1), random_adapter("b", &cfg, 2)];
        let w = MixWeights::new(
            Granularity::Layer,
            ids(&lib),
            DenseMatrix::from_fn(2, cfg.n_layers, |_, _| 0.5),
        )
        .unwrap();
        let mixed = mix_layerwise(&lib, &w).unwrap();
        for j in 0..cfg.n_layers {
            for m in AdaptedModule::ALL {
                let d0 = lib[0].layers[j].get(m).unwrap().effective();
                let d1 = lib[1].layers[j].get(m).unwrap().effective();
                let got = mixed.delta(j, m).unwrap();
                for r in 0..cfg.d_model {
                    for c in 0..cfg.d_model {
                        let want = (d0.get(r, c) + d1.get(r, c)) / 2.0;
                        assert!((got.get(r, c) - want).abs() <= 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn adapterwise_is_constant_row_layerwise() {
        let cfg = toy();
        let lib = library(&cfg);
        let w = [0.3, -1.2, 0.7];
        let aw = mix_adapterwise(&lib, &w).unwrap();
        let lw = MixWeights::new(
            Granularity::Layer,
            ids(&lib),
            DenseMatrix::from_fn(3, cfg.n_layers, |i, _| w[i]),
        )
        .unwrap();
        assert_eq!(aw, mix_layerwise(&lib, &lw).unwrap());
        let e1 = mix_adapterwise(&lib, &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(e1.layers, ExpandedAdapter::new(&lib[1]).layers);
    }

    #[test]
    fn merged_matches_dynamic_application() {
        let cfg = toy();
        let lib = library(&cfg);
        let model = BaseModel::init(cfg.clone(), &mut SeededRng::new(9)).unwrap();
        let mut rng = SeededRng::new(10);
        let w = MixWeights::new(
            Granularity::Layer,
            ids(&lib),
            DenseMatrix::from_fn(3, cfg.n_layers, |_, _| rng.uniform(-1.5, 1.5)),
        )
        .unwrap();
        let merged = merge_into_base(&model, &mix_layerwise(&lib, &w).unwrap()).unwrap();
        let rows: Vec<Vec<f64>> = (0..3).map(|i| w.row(i).to_vec()).collect();
        let scaled: Vec<ScaledAdapter> = lib.iter().zip(&rows).map(|(a, r)| ScaledAdapter::new(a, r)).collect();
        for _ in 0..50 {
            let len = 1 + rng.below(cfg.context_len);
            let toks: Vec<usize> = (0..len).map(|_| rng.below(cfg.vocab_size)).collect();
            let a = forward_logits(&merged, &[], &toks).unwrap();
            let b = forward_logits(&model, &scaled, &toks).unwrap();
            assert!(a.max_abs_diff(&b) <= 1e-9);
        }
    }

    #[test]
    fn merge_then_subtract_recovers_the_base() {
        let cfg = toy();
        let lib = library(&cfg);
        let model = BaseModel::init(cfg.clone(), &mut SeededRng::new(9)).unwrap();
        let w = MixWeights::one_hot(ids(&lib), cfg.n_layers, 2, Granularity::Adapter).unwrap();
        let mixed = mix_layerwise(&lib, &w).unwrap();
        let back = merge_into_base(&merge_into_base(&model, &mixed).unwrap(), &mixed.scaled(-1.0)).unwrap();
        for ((_, a), (_, b)) in back.tensors().into_iter().zip(model.tensors()) {
            assert!(a.max_abs_diff(b) <= 1e-12);
        }
    }

    #[test]
    fn mismatched_libraries_are_rejected() {
        let cfg = toy();
        let mut lib = library(&cfg);
        let w = MixWeights::zeros(ids(&lib)[..2].to_vec(), cfg.n_layers, Granularity::Layer);
        assert!(matches!(mix_layerwise(&lib, &w), Err(Error::Library(_))));
        lib[1].layers[0].deltas.pop();
        let w = MixWeights::zeros(ids(&lib), cfg.n_layers, Granularity::Layer);
        assert!(matches!(mix_layerwise(&lib, &w), Err(Error::Library(_))));
        assert!(matches!(mix_layerwise(&[], &w), Err(Error::Library(_))));
    }

    proptest! {
        #[test]
        fn mixing_is_linear(seed in 0u64..500, a in -1.0f64..1.0, b in -1.0f64..1.0) {
            let cfg = toy();
            let lib = library(&cfg);
            let mut rng = SeededRng::new(seed);
            let mut draw = || DenseMatrix::from_fn(3, cfg.n_layers, |_, _| rng.uniform(-0.7, 0.7));
            let (w1, w2) = (draw(), draw());
            let mut combo = w1.clone();
            combo.scale(a);
            combo.axpy(b, &w2);
            let mk = |m: DenseMatrix| MixWeights::new(Granularity::Layer, ids(&lib), m).unwrap();
            let lhs = mix_layerwise(&lib, &mk(combo)).unwrap();
            let m1 = mix_layerwise(&lib, &mk(w1)).unwrap();
            let m2 = mix_layerwise(&lib, &mk(w2)).unwrap();
            for (j, layer) in lhs.layers.iter().enumerate() {
                for (k, (_, d)) in layer.iter().enumerate() {
                    let mut rhs = m1.layers[j][k].1.clone();
                    rhs.scale(a);
                    rhs.axpy(b, &m2.layers[j][k].1);
                    prop_assert!(d.max_abs_diff(&rhs) <= 1e-12);
                }
            }
        }

        #[test]
        fn permuting_adapters_and_rows_commutes(seed in 0u64..500) {
            let cfg = toy();
            let lib = library(&cfg);
            let mut rng = SeededRng::new(seed);
            let w = DenseMatrix::from_fn(3, cfg.n_layers, |_, _| rng.uniform(-1.5, 1.5));
            let perm = [2usize, 0, 1];
            let plib: Vec<AuthorAdapter> = perm.iter().map(|&i| lib[i].clone()).collect();
            let pw = DenseMatrix::from_fn(3, cfg.n_layers, |r, c| w.get(perm[r], c));
            let a = mix_layerwise(&lib, &MixWeights::new(Granularity::Layer, ids(&lib), w).unwrap()).unwrap();
            let b = mix_layerwise(&plib, &MixWeights::new(Granularity::Layer, ids(&plib), pw).unwrap()).unwrap();
            for (la, lb) in a.layers.iter().zip(&b.layers) {
                for ((_, x), (_, y)) in la.iter().zip(lb) {
                    prop_assert!(x.max_abs_diff(y) <= 1e-12);
                }
            }
        }
    }
}
