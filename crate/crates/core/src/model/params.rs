use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::math::{DenseMatrix, SeededRng};
use crate::model::ModelConfig;

const INIT_STD: f64 = 0.02;

/// Parameters of one pre-norm transformer block. Linear weights are stored
/// `[out, in]` and applied as `x · Wᵀ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub ln1_g: DenseMatrix,
    pub ln1_b: DenseMatrix,
    pub wq: DenseMatrix,
    pub wk: DenseMatrix,
    pub wv: DenseMatrix,
    pub wo: DenseMatrix,
    pub ln2_g: DenseMatrix,
    pub ln2_b: DenseMatrix,
    pub w_up: DenseMatrix,
    pub w_down: DenseMatrix,
}

/// The frozen base language model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseModel {
    pub config: ModelConfig,
    pub tok_emb: DenseMatrix,
    pub pos_emb: DenseMatrix,
    pub blocks: Vec<BlockParams>,
    pub lnf_g: DenseMatrix,
    pub lnf_b: DenseMatrix,
    pub head: DenseMatrix,
}

fn gaussian(rng: &mut SeededRng, rows: usize, cols: usize, std: f64) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.normal(0.0, std))
}

fn ones(n: usize) -> DenseMatrix {
    DenseMatrix::from_fn(1, n, |_, _| 1.0)
}

impl BlockParams {
    fn zeros(c: &ModelConfig) -> Self {
        let d = c.d_model;
        Self {
            ln1_g: DenseMatrix::zeros(1, d),
            ln1_b: DenseMatrix::zeros(1, d),
            wq: DenseMatrix::zeros(d, d),
            wk: DenseMatrix::zeros(d, d),
            wv: DenseMatrix::zeros(d, d),
            wo: DenseMatrix::zeros(d, d),
            ln2_g: DenseMatrix::zeros(1, d),
            ln2_b: DenseMatrix::zeros(1, d),
            w_up: DenseMatrix::zeros(c.d_ff, d),
            w_down: DenseMatrix::zeros(d, c.d_ff),
        }
    }

    fn tensors(&self) -> [(&'static str, &DenseMatrix); 10] {
        [
            ("ln1_g", &self.ln1_g),
            ("ln1_b", &self.ln1_b),
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
            ("ln2_g", &self.ln2_g),
            ("ln2_b", &self.ln2_b),
            ("w_up", &self.w_up),
            ("w_down", &self.w_down),
        ]
    }

    fn tensors_mut(&mut self) -> [(&'static str, &mut DenseMatrix); 10] {
        [
            ("ln1_g", &mut self.ln1_g),
            ("ln1_b", &mut self.ln1_b),
            ("wq", &mut self.wq),
            ("wk", &mut self.wk),
            ("wv", &mut self.wv),
            ("wo", &mut self.wo),
            ("ln2_g", &mut self.ln2_g),
            ("ln2_b", &mut self.ln2_b),
            ("w_up", &mut self.w_up),
            ("w_down", &mut self.w_down),
        ]
    }
}

impl BaseModel {
    /// GPT-2 style initialization: N(0, 0.02) weights with residual output
    /// projections scaled by `1/sqrt(2L)`, unit norm gains.
    pub fn init(config: ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let resid_std = INIT_STD / ((2 * config.n_layers) as f64).sqrt();
        let tok_emb = gaussian(rng, config.vocab_size, d, INIT_STD);
        let pos_emb = gaussian(rng, config.context_len, d, INIT_STD);
        let blocks = (0..config.n_layers)
            .map(|_| BlockParams {
                ln1_g: ones(d),
                ln1_b: DenseMatrix::zeros(1, d),
                wq: gaussian(rng, d, d, INIT_STD),
                wk: gaussian(rng, d, d, INIT_STD),
                wv: gaussian(rng, d, d, INIT_STD),
                wo: gaussian(rng, d, d, resid_std),
                ln2_g: ones(d),
                ln2_b: DenseMatrix::zeros(1, d),
                w_up: gaussian(rng, config.d_ff, d, INIT_STD),
                w_down: gaussian(rng, d, config.d_ff, resid_std),
            })
            .collect();
        let head = gaussian(rng, config.vocab_size, d, INIT_STD);
        Ok(Self {
            tok_emb,
            pos_emb,
            blocks,
            lnf_g: ones(d),
            lnf_b: DenseMatrix::zeros(1, d),
            head,
            config,
        })
    }

    /// Same shapes, every entry zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let c = &self.config;
        Self {
            config: c.clone(),
            tok_emb: DenseMatrix::zeros(c.vocab_size, c.d_model),
            pos_emb: DenseMatrix::zeros(c.context_len, c.d_model),
            blocks: (0..c.n_layers).map(|_| BlockParams::zeros(c)).collect(),
            lnf_g: DenseMatrix::zeros(1, c.d_model),
            lnf_b: DenseMatrix::zeros(1, c.d_model),
            head: DenseMatrix::zeros(c.vocab_size, c.d_model),
        }
    }

    /// Every parameter tensor with a stable name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &DenseMatrix)> {
        let mut out = vec![
            ("tok_emb".to_string(), &self.tok_emb),
            ("pos_emb".to_string(), &self.pos_emb),
        ];
        for (j, b) in self.blocks.iter().enumerate() {
            out.extend(b.tensors().into_iter().map(|(n, t)| (format!("blocks.{j}.{n}"), t)));
        }
        out.push(("lnf_g".into(), &self.lnf_g));
        out.push(("lnf_b".into(), &self.lnf_b));
        out.push(("head".into(), &self.head));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut DenseMatrix)> {
        let mut out = vec![
            ("tok_emb".to_string(), &mut self.tok_emb),
            ("pos_emb".to_string(), &mut self.pos_emb),
        ];
        for (j, b) in self.blocks.iter_mut().enumerate() {
            out.extend(b.tensors_mut().into_iter().map(|(n, t)| (format!("blocks.{j}.{n}"), t)));
        }
        out.push(("lnf_g".into(), &mut self.lnf_g));
        out.push(("lnf_b".into(), &mut self.lnf_b));
        out.push(("head".into(), &mut self.head));
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.data().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn axpy(&mut self, alpha: f64, other: &BaseModel) {
        let src = other.tensors();
        for ((_, dst), (_, s)) in self.tensors_mut().into_iter().zip(src) {
            dst.axpy(alpha, s);
        }
    }

    /// SHA-256 over config and little-endian parameter bytes, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for (name, t) in self.tensors() {
            h.update(name.as_bytes());
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }

    pub fn check_same_shape(&self, other: &BaseModel) -> Result<()> {
        if self.config != other.config {
            return Err(Error::config("models have different configurations"));
        }
        Ok(())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
