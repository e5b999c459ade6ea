use crate::error::{Error, Result};
use crate::math::{gemm, DenseMatrix, Op};
use crate::model::forward::{forward, gelu_grad, log_softmax, ForwardCache, LnCache};
use crate::model::lora::ScaledAdapter;
use crate::model::{AdaptedModule, AuthorAdapter, BaseModel};

/// Which base-model gradients a backward pass accumulates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaseGrad {
    /// Activation gradients only; nothing is written to the base accumulator.
    None,
    /// Only the effective query and value projections of every block.
    QueryValue,
    /// Every base parameter.
    All,
}

/// `dW += dyᵀ · x` for `y = x · Wᵀ`.
fn weight_grad(dy: &DenseMatrix, x: &DenseMatrix, dw: &mut DenseMatrix) {
    gemm(1.0, dy.view(Op::T), x.view(Op::N), 1.0, dw.view_mut());
}

/// `dx += dy · W`.
fn input_grad(dy: &DenseMatrix, w: &DenseMatrix, dx: &mut DenseMatrix) {
    gemm(1.0, dy.view(Op::N), w.view(Op::N), 1.0, dx.view_mut());
}

fn layer_norm_backward(
    dout: &DenseMatrix,
    cache: &LnCache,
    g: &DenseMatrix,
    param_grads: Option<(&mut DenseMatrix, &mut DenseMatrix)>,
) -> DenseMatrix {
    let (t, d) = dout.shape();
    let g = g.data();
    if let Some((dg, db)) = param_grads {
        let (dg, db) = (dg.data_mut(), db.data_mut());
        for r in 0..t {
            let (dr, xr) = (dout.row(r), cache.xhat.row(r));
            for c in 0..d {
                dg[c] += dr[c] * xr[c];
                db[c] += dr[c];
            }
        }
    }
    let mut dx = DenseMatrix::zeros(t, d);
    let mut dxhat = vec![0.0; d];
    for r in 0..t {
        let (dr, xr) = (dout.row(r), cache.xhat.row(r));
        let mut mean_d = 0.0;
        let mut mean_dx = 0.0;
        for c in 0..d {
            dxhat[c] = dr[c] * g[c];
            mean_d += dxhat[c];
            mean_dx += dxhat[c] * xr[c];
        }
        mean_d /= d as f64;
        mean_dx /= d as f64;
        let rs = cache.rstd[r];
        let out = dx.row_mut(r);
        for c in 0..d {
            out[c] = rs * (dxhat[c] - mean_d - xr[c] * mean_dx);
        }
    }
    dx
}

/// Reverse-mode pass from `dlogits` through a cached forward pass.
///
/// Gradients are *added* to `base_grad` (per `mode`) and to `adapter_grads`
/// (one accumulator per applied adapter, same order).
pub fn backward(
    model: &BaseModel,
    adapters: &[ScaledAdapter<'_>],
    cache: &ForwardCache,
    dlogits: &DenseMatrix,
    mode: BaseGrad,
    mut base_grad: Option<&mut BaseModel>,
    mut adapter_grads: Option<&mut [AuthorAdapter]>,
) -> Result<()> {
    let c = &model.config;
    let t = cache.tokens.len();
    let d = c.d_model;
    let dh = c.head_dim();
    let attn_scale = 1.0 / (dh as f64).sqrt();
    if dlogits.shape() != (t, c.vocab_size) {
        return Err(Error::config("dlogits shape does not match the forward pass"));
    }
    if mode != BaseGrad::None && base_grad.is_none() {
        return Err(Error::config("base gradients requested without an accumulator"));
    }
    if let Some(ag) = adapter_grads.as_deref() {
        if ag.len() != adapters.len() {
            return Err(Error::config("one adapter accumulator per adapter is required"));
        }
    }
    let all = mode == BaseGrad::All;

    let mut dhf = DenseMatrix::zeros(t, d);
    input_grad(dlogits, &model.head, &mut dhf);
    if all {
        let g = base_grad.as_deref_mut().expect("checked above");
        weight_grad(dlogits, &cache.hf, &mut g.head);
    }
    let mut dx = if all {
        let g = base_grad.as_deref_mut().expect("checked above");
        layer_norm_backward(&dhf, &cache.lnf, &model.lnf_g, Some((&mut g.lnf_g, &mut g.lnf_b)))
    } else {
        layer_norm_backward(&dhf, &cache.lnf, &model.lnf_g, None)
    };

    for j in (0..c.n_layers).rev() {
        let blk = &model.blocks[j];
        let bc = &cache.blocks[j];

        // MLP
        let mut dact = DenseMatrix::zeros(t, c.d_ff);
        input_grad(&dx, &blk.w_down, &mut dact);
        let mut du = dact;
        for (g, &u) in du.data_mut().iter_mut().zip(bc.u.data()) {
            *g *= gelu_grad(u);
        }
        let mut dh2 = DenseMatrix::zeros(t, d);
        input_grad(&du, &blk.w_up, &mut dh2);
        let dx_mlp = if all {
            let gb = &mut base_grad.as_deref_mut().expect("checked above").blocks[j];
            weight_grad(&dx, &bc.act, &mut gb.w_down);
            weight_grad(&du, &bc.h2, &mut gb.w_up);
            layer_norm_backward(&dh2, &bc.ln2, &blk.ln2_g, Some((&mut gb.ln2_g, &mut gb.ln2_b)))
        } else {
            layer_norm_backward(&dh2, &bc.ln2, &blk.ln2_g, None)
        };
        dx.axpy(1.0, &dx_mlp);

        // attention
        let mut dattn = DenseMatrix::zeros(t, d);
        input_grad(&dx, &blk.wo, &mut dattn);
        if all {
            let gb = &mut base_grad.as_deref_mut().expect("checked above").blocks[j];
            weight_grad(&dx, &bc.attn, &mut gb.wo);
        }
        let mut dq = DenseMatrix::zeros(t, d);
        let mut dk = DenseMatrix::zeros(t, d);
        let mut dv = DenseMatrix::zeros(t, d);
        let mut dp = DenseMatrix::zeros(t, t);
        for h in 0..c.n_heads {
            let p = &bc.probs[h];
            let cols = h * dh;
            // dP = dO_h · V_hᵀ
            gemm(
                1.0,
                dattn.view(Op::N).cols_range(cols, dh),
                bc.v.view(Op::N).cols_range(cols, dh).t(),
                0.0,
                dp.view_mut(),
            );
            // dV_h = Pᵀ · dO_h
            gemm(
                1.0,
                p.view(Op::T),
                dattn.view(Op::N).cols_range(cols, dh),
                0.0,
                dv.view_mut().cols_range(cols, dh),
            );
            // dS = P ⊙ (dP - rowsum(dP ⊙ P)), folded with the score scale
            for i in 0..t {
                let (pr, dr) = (p.row(i), dp.row_mut(i));
                let dotp: f64 = pr[..=i].iter().zip(&dr[..=i]).map(|(a, b)| a * b).sum();
                for jj in 0..t {
                    dr[jj] = if jj <= i {
                        pr[jj] * (dr[jj] - dotp) * attn_scale
                    } else {
                        0.0
                    };
                }
            }
            gemm(
                1.0,
                dp.view(Op::N),
                bc.k.view(Op::N).cols_range(cols, dh),
                0.0,
                dq.view_mut().cols_range(cols, dh),
            );
            gemm(
                1.0,
                dp.view(Op::T),
                bc.q.view(Op::N).cols_range(cols, dh),
                0.0,
                dk.view_mut().cols_range(cols, dh),
            );
        }

        let mut dh1 = DenseMatrix::zeros(t, d);
        input_grad(&dq, &blk.wq, &mut dh1);
        input_grad(&dk, &blk.wk, &mut dh1);
        input_grad(&dv, &blk.wv, &mut dh1);

        for (ai, sa) in adapters.iter().enumerate() {
            let s = sa.scales[j];
            if s == 0.0 {
                continue;
            }
            let layer = &sa.adapter.layers[j];
            for (di, delta) in layer.deltas.iter().enumerate() {
                let z = bc.lora_z[ai][di].as_ref().expect("cached for nonzero scale");
                let dy = match delta.module {
                    AdaptedModule::Query => &dq,
                    AdaptedModule::Value => &dv,
                };
                let cs = s * delta.scaling();
                // y += cs · z · Bᵀ, z = h1 · Aᵀ
                let mut dz = DenseMatrix::zeros(t, delta.rank());
                gemm(cs, dy.view(Op::N), delta.b.view(Op::N), 0.0, dz.view_mut());
                input_grad(&dz, &delta.a, &mut dh1);
                if let Some(ag) = adapter_grads.as_deref_mut() {
                    let gd = &mut ag[ai].layers[j].deltas[di];
                    gemm(cs, dy.view(Op::T), z.view(Op::N), 1.0, gd.b.view_mut());
                    weight_grad(&dz, &bc.h1, &mut gd.a);
                }
            }
        }

        match mode {
            BaseGrad::None => {}
            BaseGrad::QueryValue | BaseGrad::All => {
                let gb = &mut base_grad.as_deref_mut().expect("checked above").blocks[j];
                weight_grad(&dq, &bc.h1, &mut gb.wq);
                weight_grad(&dv, &bc.h1, &mut gb.wv);
                if all {
                    weight_grad(&dk, &bc.h1, &mut gb.wk);
                }
            }
        }
        let dx_attn = if all {
            let gb = &mut base_grad.as_deref_mut().expect("checked above").blocks[j];
            layer_norm_backward(&dh1, &bc.ln1, &blk.ln1_g, Some((&mut gb.ln1_g, &mut gb.ln1_b)))
        } else {
            layer_norm_backward(&dh1, &bc.ln1, &blk.ln1_g, None)
        };
        dx.axpy(1.0, &dx_attn);
    }

    if all {
        let g = base_grad.expect("checked above");
        for (p, &tok) in cache.tokens.iter().enumerate() {
            let src = dx.row(p);
            for (a, b) in g.tok_emb.row_mut(tok).iter_mut().zip(src) {
                *a += b;
            }
            for (a, b) in g.pos_emb.row_mut(p).iter_mut().zip(src) {
                *a += b;
            }
        }
    }
    Ok(())
}

/// Negative log-likelihood of `tokens[start..]` given everything before it,
/// and its gradient with respect to the logits, scaled by `weight`.
pub fn completion_nll(logits: &DenseMatrix, tokens: &[usize], start: usize, weight: f64) -> Result<(f64, DenseMatrix)> {
    if start == 0 || start >= tokens.len() {
        return Err(Error::domain(
            "completion must be nonempty and follow a nonempty prompt",
        ));
    }
    let mut dlogits = DenseMatrix::zeros(logits.rows(), logits.cols());
    let mut nll = 0.0;
    for pos in start..tokens.len() {
        let row = pos - 1;
        let lp = log_softmax(logits.row(row));
        let target = tokens[pos];
        nll -= lp[target];
        let dr = dlogits.row_mut(row);
        for (g, l) in dr.iter_mut().zip(&lp) {
            *g = weight * l.exp();
        }
        dr[target] -= weight;
    }
    Ok((nll, dlogits))
}

/// Gradients of `-log p(completion | prompt)` with respect to every base
/// parameter, evaluated at the model with `adapters` applied.
///
/// Because the adapters add to the query and value projections, the query and
/// value entries equal the gradient with respect to the *effective* weights.
pub fn param_gradients(
    model: &BaseModel,
    adapters: &[ScaledAdapter<'_>],
    prompt: &[usize],
    completion: &[usize],
    mode: BaseGrad,
) -> Result<(f64, BaseModel)> {
    if completion.is_empty() {
        return Err(Error::domain("empty completion"));
    }
    let mut tokens = prompt.to_vec();
    tokens.extend_from_slice(completion);
    let cache = forward(model, adapters, &tokens)?;
    let (nll, dlogits) = completion_nll(&cache.logits, &tokens, prompt.len(), 1.0)?;
    let mut grad = model.zeros_like();
    backward(model, adapters, &cache, &dlogits, mode, Some(&mut grad), None)?;
    Ok((nll, grad))
}
