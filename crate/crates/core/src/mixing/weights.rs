use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::DenseMatrix;

/// Every mixing weight lies in `[-WEIGHT_BOUND, WEIGHT_BOUND]`.
pub const WEIGHT_BOUND: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// One free weight per (adapter, layer).
    Layer,
    /// One free weight per adapter, shared by all layers.
    Adapter,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Layer => "layer",
            Granularity::Adapter => "adapter",
        }
    }
}

#[derive(Serialize, Deserialize)]
struct WeightsFile {
    granularity: Granularity,
    adapter_ids: Vec<String>,
    layers: usize,
    weights: DenseMatrix,
}

/// `n adapters × L layers` matrix of mixing weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WeightsFile", into = "WeightsFile")]
pub struct MixWeights {
    granularity: Granularity,
    adapter_ids: Vec<String>,
    weights: DenseMatrix,
}

impl TryFrom<WeightsFile> for MixWeights {
    type Error = Error;

    fn try_from(f: WeightsFile) -> Result<Self> {
        if f.weights.cols() != f.layers {
            return Err(Error::format(format!(
                "weights file declares {} layers but stores {}",
                f.layers,
                f.weights.cols()
            )));
        }
        MixWeights::new(f.granularity, f.adapter_ids, f.weights)
    }
}

impl From<MixWeights> for WeightsFile {
    fn from(w: MixWeights) -> Self {
        WeightsFile {
            granularity: w.granularity,
            layers: w.weights.cols(),
            adapter_ids: w.adapter_ids,
            weights: w.weights,
        }
    }
}

impl MixWeights {
    /// Checks bounds, shape and, for adapter granularity, constant rows.
    pub fn new(granularity: Granularity, adapter_ids: Vec<String>, weights: DenseMatrix) -> Result<Self> {
        if weights.rows() != adapter_ids.len() || weights.rows() == 0 || weights.cols() == 0 {
            return Err(Error::config(format!(
                "weights of shape {:?} for {} adapters",
                weights.shape(),
                adapter_ids.len()
            )));
        }
        if let Some(v) = weights.data().iter().find(|v| !(v.abs() <= WEIGHT_BOUND)) {
            return Err(Error::config(format!(
                "mixing weight {v} outside [-{WEIGHT_BOUND}, {WEIGHT_BOUND}]"
            )));
        }
        if granularity == Granularity::Adapter {
            for i in 0..weights.rows() {
                let row = weights.row(i);
                if row.iter().any(|v| *v != row[0]) {
                    return Err(Error::config(format!(
                        "adapter-wise weights vary across layers in row {i}"
                    )));
                }
            }
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(id) = adapter_ids.iter().find(|id| !seen.insert(*id)) {
            return Err(Error::config(format!("adapter {id} listed twice")));
        }
        Ok(Self {
            granularity,
            adapter_ids,
            weights,
        })
    }

    pub fn zeros(adapter_ids: Vec<String>, n_layers: usize, granularity: Granularity) -> Self {
        let n = adapter_ids.len();
        Self::new(granularity, adapter_ids, DenseMatrix::zeros(n, n_layers)).expect("zero weights are valid")
    }

    /// Row `index` all ones, everything else zero.
    pub fn one_hot(adapter_ids: Vec<String>, n_layers: usize, index: usize, granularity: Granularity) -> Result<Self> {
        if index >= adapter_ids.len() {
            return Err(Error::config(format!("one-hot index {index} out of range")));
        }
        let n = adapter_ids.len();
        Self::new(
            granularity,
            adapter_ids,
            DenseMatrix::from_fn(n, n_layers, |i, _| if i == index { 1.0 } else { 0.0 }),
        )
    }

    /// Adapter-granularity weights from one scalar per adapter.
    pub fn adapterwise(adapter_ids: Vec<String>, n_layers: usize, per_adapter: &[f64]) -> Result<Self> {
        if per_adapter.len() != adapter_ids.len() {
            return Err(Error::config(format!(
                "{} adapter weights for {} adapters",
                per_adapter.len(),
                adapter_ids.len()
            )));
        }
        let n = adapter_ids.len();
        Self::new(
            Granularity::Adapter,
            adapter_ids,
            DenseMatrix::from_fn(n, n_layers, |i, _| per_adapter[i]),
        )
    }

    /// Builds weights from free parameters: `n × L` values for layer
    /// granularity, `n` values for adapter granularity. Values are clipped
    /// to the bounds.
    pub fn from_free(
        granularity: Granularity,
        adapter_ids: Vec<String>,
        n_layers: usize,
        free: &[f64],
    ) -> Result<Self> {
        let n = adapter_ids.len();
        let clip = |v: f64| v.clamp(-WEIGHT_BOUND, WEIGHT_BOUND);
        let m = match granularity {
            Granularity::Layer if free.len() == n * n_layers => {
                DenseMatrix::from_fn(n, n_layers, |i, j| clip(free[i * n_layers + j]))
            }
            Granularity::Adapter if free.len() == n => DenseMatrix::from_fn(n, n_layers, |i, _| clip(free[i])),
            _ => {
                return Err(Error::config(format!(
                    "{} free parameters for {n} adapters x {n_layers} layers at {} granularity",
                    free.len(),
                    granularity.as_str()
                )))
            }
        };
        Self::new(granularity, adapter_ids, m)
    }

    /// Free parameters in row-major order; see [`MixWeights::from_free`].
    pub fn free_params(&self) -> Vec<f64> {
        match self.granularity {
            Granularity::Layer => self.weights.data().to_vec(),
            Granularity::Adapter => (0..self.n_adapters()).map(|i| self.weights.get(i, 0)).collect(),
        }
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn adapter_ids(&self) -> &[String] {
        &self.adapter_ids
    }

    pub fn n_adapters(&self) -> usize {
        self.weights.rows()
    }

    pub fn n_layers(&self) -> usize {
        self.weights.cols()
    }

    pub fn get(&self, adapter: usize, layer: usize) -> f64 {
        self.weights.get(adapter, layer)
    }

    pub fn row(&self, adapter: usize) -> &[f64] {
        self.weights.row(adapter)
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.weights
    }

    /// Sum of absolute values over all `n × L` entries.
    pub fn l1_norm(&self) -> f64 {
        self.weights.data().iter().map(|v| v.abs()).sum()
    }

    /// Sum of absolute free parameters: equal to [`MixWeights::l1_norm`] for
    /// layer granularity, one value per adapter otherwise.
    pub fn free_l1_norm(&self) -> f64 {
        self.free_params().iter().map(|v| v.abs()).sum()
    }

    /// Heatmap rows `layer,adapter_id,weight` with CRLF line endings.
    pub fn heatmap_csv(&self) -> String {
        let mut out = String::from("layer,adapter_id,weight\r\n");
        for j in 0..self.n_layers() {
            for (i, id) in self.adapter_ids.iter().enumerate() {
                out.push_str(&format!("{j},{},{}\r\n", crate::metrics::csv_field(id), self.get(i, j)));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("hr{i:02}")).collect()
    }

    #[test]
    fn bounds_and_ties_are_enforced() {
        assert!(MixWeights::new(Granularity::Layer, ids(2), DenseMatrix::from_fn(2, 3, |_, _| 1.6)).is_err());
        assert!(MixWeights::new(Granularity::Layer, ids(2), DenseMatrix::from_fn(2, 3, |_, _| f64::NAN)).is_err());
        assert!(MixWeights::new(
            Granularity::Adapter,
            ids(2),
            DenseMatrix::from_fn(2, 3, |_, j| j as f64 * 0.1)
        )
        .is_err());
        assert!(MixWeights::new(
            Granularity::Layer,
            vec!["a".into(), "a".into()],
            DenseMatrix::zeros(2, 3)
        )
        .is_err());
        let w = MixWeights::adapterwise(ids(2), 3, &[1.5, -1.5]).unwrap();
        assert_eq!(w.row(1), &[-1.5, -1.5, -1.5]);
        assert_eq!(w.l1_norm(), 9.0);
        assert_eq!(w.free_l1_norm(), 3.0);
    }

    #[test]
    fn free_params_round_trip_and_clip() {
        let w = MixWeights::from_free(Granularity::Layer, ids(2), 2, &[0.1, 2.0, -3.0, 0.4]).unwrap();
        assert_eq!(w.free_params(), vec![0.1, 1.5, -1.5, 0.4]);
        let a = MixWeights::from_free(Granularity::Adapter, ids(2), 3, &[0.2, -0.7]).unwrap();
        assert_eq!(a.free_params(), vec![0.2, -0.7]);
        assert!(MixWeights::from_free(Granularity::Adapter, ids(2), 3, &[0.2]).is_err());
    }

    #[test]
    fn json_stores_a_row_major_tensor() {
        let w = MixWeights::new(
            Granularity::Layer,
            ids(2),
            DenseMatrix::from_fn(2, 2, |i, j| (i * 2 + j) as f64 / 4.0),
        )
        .unwrap();
        let json = serde_json::to_value(&w).unwrap();
        assert_eq!(json["granularity"], "layer");
        assert_eq!(json["layers"], 2);
        assert_eq!(json["weights"]["shape"], serde_json::json!([2, 2]));
        let back: MixWeights = serde_json::from_value(json.clone()).unwrap();
        assert_eq!(back, w);
        let mut bad = json;
        bad["weights"] = serde_json::to_value(DenseMatrix::from_fn(2, 2, |_, _| 2.0)).unwrap();
        assert!(serde_json::from_value::<MixWeights>(bad.clone()).is_err());
        bad["weights"] = serde_json::to_value(DenseMatrix::zeros(2, 3)).unwrap();
        assert!(serde_json::from_value::<MixWeights>(bad).is_err());
    }

    #[test]
    fn heatmap_of_one_hot_has_one_nonzero_column() {
        let w = MixWeights::one_hot(ids(3), 4, 1, Granularity::Layer).unwrap();
        let csv = w.heatmap_csv();
        let nonzero: Vec<&str> = csv.lines().skip(1).filter(|l| !l.ends_with(",0")).collect();
        assert_eq!(nonzero.len(), 4);
        assert!(nonzero.iter().all(|l| l.contains(",hr01,")));
    }
}
