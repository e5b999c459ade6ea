use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{DenseMatrix, Op, SeededRng};
use crate::model::{BaseModel, ModelConfig};

pub const DEFAULT_RANK: usize = 8;
pub const DEFAULT_ALPHA: f64 = 16.0;
const A_INIT_STD: f64 = 0.02;

/// Linear map inside an attention block that carries a low-rank delta.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptedModule {
    Query,
    Value,
}

impl AdaptedModule {
    pub const ALL: [AdaptedModule; 2] = [AdaptedModule::Query, AdaptedModule::Value];

    pub fn name(self) -> &'static str {
        match self {
            AdaptedModule::Query => "wq",
            AdaptedModule::Value => "wv",
        }
    }
}

/// `(alpha / r) · B · A` with `A: r × d_in`, `B: d_out × r`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowRankDelta {
    pub module: AdaptedModule,
    pub a: DenseMatrix,
    pub b: DenseMatrix,
    pub alpha: f64,
}

impl LowRankDelta {
    /// Gaussian `A`, zero `B`: the initial delta is exactly zero.
    pub fn init(
        module: AdaptedModule,
        d_out: usize,
        d_in: usize,
        rank: usize,
        alpha: f64,
        rng: &mut SeededRng,
    ) -> Self {
        Self {
            module,
            a: DenseMatrix::from_fn(rank, d_in, |_, _| rng.normal(0.0, A_INIT_STD)),
            b: DenseMatrix::zeros(d_out, rank),
            alpha,
        }
    }

    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank() as f64
    }

    /// Dense `d_out × d_in` delta.
    pub fn effective(&self) -> DenseMatrix {
        let mut m = self
            .b
            .matmul_op(Op::N, &self.a, Op::N)
            .expect("low-rank factors conform");
        m.scale(self.scaling());
        m
    }

    fn check(&self, d: usize) -> Result<()> {
        let r = self.rank();
        if r == 0 || self.a.cols() != d || self.b.shape() != (d, r) {
            return Err(Error::config(format!(
                "low-rank delta for {} has shapes A {:?}, B {:?}; model width is {d}",
                self.module.name(),
                self.a.shape(),
                self.b.shape()
            )));
        }
        Ok(())
    }
}

/// Deltas attached to one transformer block, sorted by module.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerAdapter {
    pub deltas: Vec<LowRankDelta>,
}

impl LayerAdapter {
    pub fn get(&self, module: AdaptedModule) -> Option<&LowRankDelta> {
        self.deltas.iter().find(|d| d.module == module)
    }

    pub fn modules(&self) -> Vec<AdaptedModule> {
        self.deltas.iter().map(|d| d.module).collect()
    }
}

/// Per-author low-rank parameters: one entry per transformer block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuthorAdapter {
    pub author_id: String,
    pub layers: Vec<LayerAdapter>,
}

impl AuthorAdapter {
    /// Fresh adapter on the query and value projections of every block.
    pub fn init(
        author_id: impl Into<String>,
        config: &ModelConfig,
        rank: usize,
        alpha: f64,
        rng: &mut SeededRng,
    ) -> Self {
        let d = config.d_model;
        let layers = (0..config.n_layers)
            .map(|_| LayerAdapter {
                deltas: AdaptedModule::ALL
                    .iter()
                    .map(|&m| LowRankDelta::init(m, d, d, rank, alpha, rng))
                    .collect(),
            })
            .collect();
        Self {
            author_id: author_id.into(),
            layers,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Module layout per layer; equal layouts are mixable.
    pub fn structure(&self) -> Vec<Vec<AdaptedModule>> {
        self.layers.iter().map(LayerAdapter::modules).collect()
    }

    pub fn check_against(&self, model: &BaseModel) -> Result<()> {
        if self.layers.len() != model.config.n_layers {
            return Err(Error::config(format!(
                "adapter {} has {} layers, model has {}",
                self.author_id,
                self.layers.len(),
                model.config.n_layers
            )));
        }
        for layer in &self.layers {
            let mut modules = layer.modules();
            modules.sort();
            modules.dedup();
            if modules.len() != layer.deltas.len() {
                return Err(Error::config(format!(
                    "adapter {} repeats a module within a layer",
                    self.author_id
                )));
            }
            for d in &layer.deltas {
                d.check(model.config.d_model)?;
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| &l.deltas)
            .map(|d| d.a.data().len() + d.b.data().len())
            .sum()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for d in z.layers.iter_mut().flat_map(|l| l.deltas.iter_mut()) {
            d.a.fill(0.0);
            d.b.fill(0.0);
        }
        z
    }

    pub fn factors(&self) -> Vec<&DenseMatrix> {
        self.layers
            .iter()
            .flat_map(|l| &l.deltas)
            .flat_map(|d| [&d.a, &d.b])
            .collect()
    }

    pub fn factors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.deltas.iter_mut())
            .flat_map(|d| [&mut d.a, &mut d.b])
            .collect()
    }

    pub fn axpy(&mut self, alpha: f64, other: &AuthorAdapter) {
        let src = other.factors();
        for (dst, s) in self.factors_mut().into_iter().zip(src) {
            dst.axpy(alpha, s);
        }
    }
}

/// One adapter applied with a per-layer scale.
#[derive(Clone, Copy, Debug)]
pub struct ScaledAdapter<'a> {
    pub adapter: &'a AuthorAdapter,
    pub scales: &'a [f64],
}

impl<'a> ScaledAdapter<'a> {
    pub fn new(adapter: &'a AuthorAdapter, scales: &'a [f64]) -> Self {
        Self { adapter, scales }
    }
}

pub(crate) fn check_scaled(model: &BaseModel, adapters: &[ScaledAdapter<'_>]) -> Result<()> {
    for sa in adapters {
        sa.adapter.check_against(model)?;
        if sa.scales.len() != model.config.n_layers {
            return Err(Error::config(format!(
                "adapter {} has {} scales for {} layers",
                sa.adapter.author_id,
                sa.scales.len(),
                model.config.n_layers
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_adapter_is_a_zero_delta() {
        let cfg = ModelConfig::default();
        let a = AuthorAdapter::init("x", &cfg, DEFAULT_RANK, DEFAULT_ALPHA, &mut SeededRng::new(3));
        assert_eq!(a.n_layers(), 8);
        for l in &a.layers {
            assert_eq!(l.modules(), vec![AdaptedModule::Query, AdaptedModule::Value]);
            for d in &l.deltas {
                assert_eq!(d.rank(), 8);
                assert_eq!(d.scaling(), 2.0);
                assert_eq!(d.effective().max_abs(), 0.0);
                assert!(d.a.max_abs() > 0.0);
            }
        }
    }

    #[test]
    fn effective_delta_is_scaled_product() {
        let mut rng = SeededRng::new(4);
        let mut d = LowRankDelta::init(AdaptedModule::Value, 3, 2, 2, 4.0, &mut rng);
        d.b = DenseMatrix::from_fn(3, 2, |r, c| (r + c) as f64);
        let manual = DenseMatrix::from_fn(3, 2, |r, c| {
            2.0 * (0..2).map(|k| d.b.get(r, k) * d.a.get(k, c)).sum::<f64>()
        });
        assert!(d.effective().max_abs_diff(&manual) < 1e-15);
    }
}
