use crate::error::{Error, Result};
use crate::math::{gemm, DenseMatrix, Op};
use crate::model::lora::{check_scaled, ScaledAdapter};
use crate::model::BaseModel;

pub(crate) const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

pub(crate) struct LnCache {
    pub xhat: DenseMatrix,
    pub rstd: Vec<f64>,
}

pub(crate) struct BlockCache {
    pub ln1: LnCache,
    pub h1: DenseMatrix,
    pub q: DenseMatrix,
    pub k: DenseMatrix,
    pub v: DenseMatrix,
    /// `h1 · Aᵀ` per adapter, per delta of that layer; `None` when the scale is zero.
    pub lora_z: Vec<Vec<Option<DenseMatrix>>>,
    /// Attention probabilities, one `T × T` matrix per head.
    pub probs: Vec<DenseMatrix>,
    pub attn: DenseMatrix,
    pub ln2: LnCache,
    pub h2: DenseMatrix,
    pub u: DenseMatrix,
    pub act: DenseMatrix,
}

/// Activations retained for the backward pass.
pub struct ForwardCache {
    pub(crate) tokens: Vec<usize>,
    pub(crate) blocks: Vec<BlockCache>,
    pub(crate) lnf: LnCache,
    pub(crate) hf: DenseMatrix,
    pub logits: DenseMatrix,
}

impl ForwardCache {
    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }
}

pub(crate) fn check_tokens(model: &BaseModel, tokens: &[usize]) -> Result<()> {
    let c = &model.config;
    if tokens.is_empty() {
        return Err(Error::domain("empty token sequence"));
    }
    if tokens.len() > c.context_len {
        return Err(Error::domain(format!(
            "sequence of {} tokens exceeds context length {}",
            tokens.len(),
            c.context_len
        )));
    }
    if let Some(&t) = tokens.iter().find(|&&t| t >= c.vocab_size) {
        return Err(Error::Vocab(format!(
            "token id {t} outside vocabulary of size {}",
            c.vocab_size
        )));
    }
    Ok(())
}

/// `y = x · Wᵀ` for weights stored `[out, in]`.
pub(crate) fn linear(x: &DenseMatrix, w: &DenseMatrix) -> DenseMatrix {
    let mut y = DenseMatrix::zeros(x.rows(), w.rows());
    gemm(1.0, x.view(Op::N), w.view(Op::T), 0.0, y.view_mut());
    y
}

/// `y += alpha · x · Wᵀ`.
pub(crate) fn linear_acc(alpha: f64, x: &DenseMatrix, w: &DenseMatrix, y: &mut DenseMatrix) {
    gemm(alpha, x.view(Op::N), w.view(Op::T), 1.0, y.view_mut());
}

pub(crate) fn layer_norm(x: &DenseMatrix, g: &DenseMatrix, b: &DenseMatrix) -> (DenseMatrix, LnCache) {
    let (t, d) = x.shape();
    let mut xhat = DenseMatrix::zeros(t, d);
    let mut out = DenseMatrix::zeros(t, d);
    let mut rstd = Vec::with_capacity(t);
    let (g, b) = (g.data(), b.data());
    for r in 0..t {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd.push(rs);
        let xh = xhat.row_mut(r);
        for c in 0..d {
            xh[c] = (row[c] - mean) * rs;
        }
        let o = out.row_mut(r);
        for c in 0..d {
            o[c] = xhat.get(r, c) * g[c] + b[c];
        }
    }
    (out, LnCache { xhat, rstd })
}

pub(crate) fn gelu(u: f64) -> f64 {
    let t = (GELU_C * (u + GELU_K * u * u * u)).tanh();
    0.5 * u * (1.0 + t)
}

pub(crate) fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + GELU_K * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * u * u)
}

/// Row-wise causal softmax of `scale · S` in place.
pub(crate) fn causal_softmax(s: &mut DenseMatrix, scale: f64) {
    let t = s.rows();
    for i in 0..t {
        let row = s.row_mut(i);
        let mut max = f64::NEG_INFINITY;
        for v in row.iter_mut().take(i + 1) {
            *v *= scale;
            max = max.max(*v);
        }
        let mut total = 0.0;
        for v in row.iter_mut().take(i + 1) {
            *v = (*v - max).exp();
            total += *v;
        }
        for (j, v) in row.iter_mut().enumerate() {
            if j <= i {
                *v /= total;
            } else {
                *v = 0.0;
            }
        }
    }
}

/// Full forward pass with dynamically applied low-rank adapters.
///
/// Adapter `a` contributes `scales[j] · (alpha/r) · (h · Aᵀ) · Bᵀ` to the
/// adapted projection of block `j`.
pub fn forward(model: &BaseModel, adapters: &[ScaledAdapter<'_>], tokens: &[usize]) -> Result<ForwardCache> {
    check_tokens(model, tokens)?;
    check_scaled(model, adapters)?;
    let c = &model.config;
    let (t, d) = (tokens.len(), c.d_model);
    let dh = c.head_dim();
    let attn_scale = 1.0 / (dh as f64).sqrt();

    let mut x = DenseMatrix::zeros(t, d);
    for (p, &tok) in tokens.iter().enumerate() {
        let e = model.tok_emb.row(tok);
        let pe = model.pos_emb.row(p);
        for (o, (a, b)) in x.row_mut(p).iter_mut().zip(e.iter().zip(pe)) {
            *o = a + b;
        }
    }

    let mut blocks = Vec::with_capacity(c.n_layers);
    for (j, blk) in model.blocks.iter().enumerate() {
        let (h1, ln1) = layer_norm(&x, &blk.ln1_g, &blk.ln1_b);
        let mut q = linear(&h1, &blk.wq);
        let k = linear(&h1, &blk.wk);
        let mut v = linear(&h1, &blk.wv);

        let mut lora_z = Vec::with_capacity(adapters.len());
        for sa in adapters {
            let s = sa.scales[j];
            let layer = &sa.adapter.layers[j];
            let mut zs = Vec::with_capacity(layer.deltas.len());
            for delta in &layer.deltas {
                if s == 0.0 {
                    zs.push(None);
                    continue;
                }
                let z = linear(&h1, &delta.a);
                let target = match delta.module {
                    crate::model::AdaptedModule::Query => &mut q,
                    crate::model::AdaptedModule::Value => &mut v,
                };
                linear_acc(s * delta.scaling(), &z, &delta.b, target);
                zs.push(Some(z));
            }
            lora_z.push(zs);
        }

        let mut attn = DenseMatrix::zeros(t, d);
        let mut probs = Vec::with_capacity(c.n_heads);
        for h in 0..c.n_heads {
            let mut s = DenseMatrix::zeros(t, t);
            gemm(
                1.0,
                q.view(Op::N).cols_range(h * dh, dh),
                k.view(Op::N).cols_range(h * dh, dh).t(),
                0.0,
                s.view_mut(),
            );
            causal_softmax(&mut s, attn_scale);
            gemm(
                1.0,
                s.view(Op::N),
                v.view(Op::N).cols_range(h * dh, dh),
                0.0,
                attn.view_mut().cols_range(h * dh, dh),
            );
            probs.push(s);
        }
        linear_acc(1.0, &attn, &blk.wo, &mut x);

        let (h2, ln2) = layer_norm(&x, &blk.ln2_g, &blk.ln2_b);
        let u = linear(&h2, &blk.w_up);
        let mut act = u.clone();
        act.data_mut().iter_mut().for_each(|a| *a = gelu(*a));
        linear_acc(1.0, &act, &blk.w_down, &mut x);

        blocks.push(BlockCache {
            ln1,
            h1,
            q,
            k,
            v,
            lora_z,
            probs,
            attn,
            ln2,
            h2,
            u,
            act,
        });
    }

    let (hf, lnf) = layer_norm(&x, &model.lnf_g, &model.lnf_b);
    let logits = linear(&hf, &model.head);
    Ok(ForwardCache {
        tokens: tokens.to_vec(),
        blocks,
        lnf,
        hf,
        logits,
    })
}

/// Logit rows for every position.
pub fn forward_logits(model: &BaseModel, adapters: &[ScaledAdapter<'_>], tokens: &[usize]) -> Result<DenseMatrix> {
    Ok(forward(model, adapters, tokens)?.logits)
}

/// Log-softmax of one row.
pub(crate) fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// Incremental decoder state over a model with all adapters merged in.
///
/// Keys and values of past positions are cached so each step costs one row.
/// Cloning the state forks the decode, which lets a group of samples share
/// one pass over their common prompt.
#[derive(Clone)]
pub struct DecodeState<'m> {
    model: &'m BaseModel,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    pos: usize,
}

fn ln_row(x: &[f64], g: &[f64], b: &[f64], out: &mut [f64]) {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let rs = 1.0 / (var + LN_EPS).sqrt();
    for i in 0..x.len() {
        out[i] = (x[i] - mean) * rs * g[i] + b[i];
    }
}

/// `out = W · x` for `W` stored `[out, in]`.
fn matvec(w: &DenseMatrix, x: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(w.data().chunks_exact(w.cols())) {
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

fn matvec_acc(w: &DenseMatrix, x: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(w.data().chunks_exact(w.cols())) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

impl<'m> DecodeState<'m> {
    pub fn new(model: &'m BaseModel) -> Self {
        let c = &model.config;
        Self {
            model,
            keys: vec![Vec::with_capacity(c.context_len * c.d_model); c.n_layers],
            values: vec![Vec::with_capacity(c.context_len * c.d_model); c.n_layers],
            pos: 0,
        }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn context_len(&self) -> usize {
        self.model.config.context_len
    }

    /// Feeds one token and returns the logits for the next position.
    pub fn step(&mut self, token: usize) -> Result<Vec<f64>> {
        let model = self.model;
        let c = &model.config;
        if token >= c.vocab_size {
            return Err(Error::Vocab(format!("token id {token} outside vocabulary")));
        }
        if self.pos >= c.context_len {
            return Err(Error::domain("decoder ran past the context length"));
        }
        let (d, dh) = (c.d_model, c.head_dim());
        let scale = 1.0 / (dh as f64).sqrt();
        let p = self.pos;
        let n = p + 1;
        let mut x: Vec<f64> = model
            .tok_emb
            .row(token)
            .iter()
            .zip(model.pos_emb.row(p))
            .map(|(a, b)| a + b)
            .collect();
        let mut h = vec![0.0; d];
        let mut q = vec![0.0; d];
        let mut kv = vec![0.0; d];
        let mut attn = vec![0.0; d];
        let mut scores = vec![0.0; n];
        let mut up = vec![0.0; c.d_ff];
        for (j, blk) in model.blocks.iter().enumerate() {
            ln_row(&x, blk.ln1_g.data(), blk.ln1_b.data(), &mut h);
            matvec(&blk.wq, &h, &mut q);
            matvec(&blk.wk, &h, &mut kv);
            self.keys[j].extend_from_slice(&kv);
            matvec(&blk.wv, &h, &mut kv);
            self.values[j].extend_from_slice(&kv);
            let (keys, values) = (&self.keys[j], &self.values[j]);
            for hd in 0..c.n_heads {
                let cols = hd * dh..(hd + 1) * dh;
                let qh = &q[cols.clone()];
                let mut max = f64::NEG_INFINITY;
                for (t, s) in scores.iter_mut().enumerate() {
                    let kh = &keys[t * d + hd * dh..t * d + (hd + 1) * dh];
                    *s = scale * qh.iter().zip(kh).map(|(a, b)| a * b).sum::<f64>();
                    max = max.max(*s);
                }
                let mut total = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    total += *s;
                }
                let out = &mut attn[cols];
                out.iter_mut().for_each(|o| *o = 0.0);
                for (t, s) in scores.iter().enumerate() {
                    let w = s / total;
                    let vh = &values[t * d + hd * dh..t * d + (hd + 1) * dh];
                    for (o, v) in out.iter_mut().zip(vh) {
                        *o += w * v;
                    }
                }
            }
            matvec_acc(&blk.wo, &attn, &mut x);
            ln_row(&x, blk.ln2_g.data(), blk.ln2_b.data(), &mut h);
            matvec(&blk.w_up, &h, &mut up);
            up.iter_mut().for_each(|a| *a = gelu(*a));
            matvec_acc(&blk.w_down, &up, &mut x);
        }
        ln_row(&x, model.lnf_g.data(), model.lnf_b.data(), &mut h);
        let mut logits = vec![0.0; c.vocab_size];
        matvec(&model.head, &h, &mut logits);
        self.pos += 1;
        Ok(logits)
    }
}
