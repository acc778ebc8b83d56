//! Forward pass, MSE loss and hand-written backward pass.
//!
//! Activations are `rows x dim` row-major matrices where rows enumerate
//! `(sample, token)`; token 0 of every sample is the class token.

use rayon::prelude::*;

use super::{BlockLayout, ModelConfig, ModelParams, Prediction, LN_EPS};
use crate::error::{Error, Result};
use crate::scalar::{matmul_ab, matmul_abt, matmul_atb};
use crate::signal::features::SpectrogramTensor;
use crate::Scalar;

/// Samples per gradient work unit. Chunk results are reduced in a fixed
/// order, so gradients do not depend on the number of worker threads.
pub const GRAD_CHUNK: usize = 16;

struct BlockTape<T> {
    ln1_xhat: Vec<T>,
    ln1_rstd: Vec<T>,
    a1: Vec<T>,
    qkv: Vec<T>,
    probs: Vec<T>,
    attn: Vec<T>,
    ln2_xhat: Vec<T>,
    ln2_rstd: Vec<T>,
    a2: Vec<T>,
    h_pre: Vec<T>,
    h_act: Vec<T>,
}

struct Tape<T> {
    batch: usize,
    patches: Vec<T>,
    blocks: Vec<BlockTape<T>>,
    lnf_xhat: Vec<T>,
    lnf_rstd: Vec<T>,
    z: Vec<T>,
    pred: Vec<T>,
}

fn linear<T: Scalar>(x: &[T], rows: usize, n_in: usize, w: &[T], b: &[T], n_out: usize) -> Vec<T> {
    let mut y = vec![T::zero(); rows * n_out];
    matmul_abt(rows, n_in, n_out, x, w, &mut y, false);
    for row in y.chunks_exact_mut(n_out) {
        for (v, &bias) in row.iter_mut().zip(b) {
            *v += bias;
        }
    }
    y
}

/// Accumulates `dw += dy^T x`, `db += colsum(dy)`; overwrites `dx = dy w` if given.
#[allow(clippy::too_many_arguments)]
fn linear_back<T: Scalar>(
    x: &[T],
    dy: &[T],
    rows: usize,
    n_in: usize,
    n_out: usize,
    w: &[T],
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    matmul_atb(n_out, rows, n_in, dy, x, dw, true);
    for row in dy.chunks_exact(n_out) {
        for (g, &v) in db.iter_mut().zip(row) {
            *g += v;
        }
    }
    if let Some(dx) = dx {
        matmul_ab(rows, n_out, n_in, dy, w, dx, false);
    }
}

/// Returns `(y, xhat, rstd)`.
fn layer_norm<T: Scalar>(x: &[T], d: usize, g: &[T], b: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = x.len() / d;
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    let inv_d = T::one() / T::from_usize(d).unwrap();
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().copied().sum::<T>() * inv_d;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let s = T::one() / (var + T::lit(LN_EPS)).sqrt();
        rstd[r] = s;
        for k in 0..d {
            let h = (xr[k] - mean) * s;
            xhat[r * d + k] = h;
            y[r * d + k] = h * g[k] + b[k];
        }
    }
    (y, xhat, rstd)
}

/// Accumulates parameter grads and adds the input gradient into `dx`.
#[allow(clippy::too_many_arguments)]
fn layer_norm_back<T: Scalar>(
    dy: &[T],
    xhat: &[T],
    rstd: &[T],
    d: usize,
    g: &[T],
    dg: &mut [T],
    db: &mut [T],
    dx: &mut [T],
) {
    let inv_d = T::one() / T::from_usize(d).unwrap();
    let mut dxhat = vec![T::zero(); d];
    for (r, &s) in rstd.iter().enumerate() {
        let o = r * d;
        let (mut m1, mut m2) = (T::zero(), T::zero());
        for k in 0..d {
            let dyk = dy[o + k];
            dg[k] += dyk * xhat[o + k];
            db[k] += dyk;
            dxhat[k] = dyk * g[k];
            m1 += dxhat[k];
            m2 += dxhat[k] * xhat[o + k];
        }
        m1 *= inv_d;
        m2 *= inv_d;
        for k in 0..d {
            dx[o + k] += s * (dxhat[k] - m1 - xhat[o + k] * m2);
        }
    }
}

// tanh approximation of GELU
const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044_715;

fn gelu<T: Scalar>(x: T) -> T {
    let u = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    T::lit(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let u = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    let th = u.tanh();
    let du = T::lit(GELU_C) * (T::one() + T::lit(3.0 * GELU_A) * x * x);
    T::lit(0.5) * (T::one() + th) + T::lit(0.5) * x * (T::one() - th * th) * du
}

fn softmax_rows<T: Scalar>(s: &mut [T], n: usize) {
    for row in s.chunks_exact_mut(n) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        let inv = T::one() / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

/// Multi-head self-attention over `qkv` (`batch*n x 3d`); returns the
/// concatenated head outputs (`batch*n x d`) and the probabilities
/// (`batch x heads x n x n`).
fn attention<T: Scalar>(cfg: &ModelConfig, qkv: &[T], batch: usize) -> (Vec<T>, Vec<T>) {
    let (n, d, h, dh) = (cfg.tokens(), cfg.embed_dim, cfg.heads, cfg.head_dim());
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let (rs_qkv, d3) = (3 * d as isize, 3 * d);
    let mut out = vec![T::zero(); batch * n * d];
    let mut probs = vec![T::zero(); batch * h * n * n];
    for b in 0..batch {
        let base = b * n * d3;
        for head in 0..h {
            let q = &qkv[base + head * dh..];
            let k = &qkv[base + d + head * dh..];
            let v = &qkv[base + 2 * d + head * dh..];
            let p = &mut probs[(b * h + head) * n * n..(b * h + head + 1) * n * n];
            // P = softmax(scale * Q K^T)
            T::gemm(n, dh, n, scale, q, rs_qkv, 1, k, 1, rs_qkv, T::zero(), p, n as isize, 1);
            softmax_rows(p, n);
            let o = &mut out[b * n * d + head * dh..];
            T::gemm(n, n, dh, T::one(), p, n as isize, 1, v, rs_qkv, 1, T::zero(), o, d as isize, 1);
        }
    }
    (out, probs)
}

fn attention_back<T: Scalar>(cfg: &ModelConfig, qkv: &[T], probs: &[T], dout: &[T], batch: usize) -> Vec<T> {
    let (n, d, h, dh) = (cfg.tokens(), cfg.embed_dim, cfg.heads, cfg.head_dim());
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let (rs_qkv, d3, ni) = (3 * d as isize, 3 * d, n as isize);
    let mut dqkv = vec![T::zero(); qkv.len()];
    let mut dp = vec![T::zero(); n * n];
    for b in 0..batch {
        let base = b * n * d3;
        for head in 0..h {
            let q = &qkv[base + head * dh..];
            let k = &qkv[base + d + head * dh..];
            let v = &qkv[base + 2 * d + head * dh..];
            let p = &probs[(b * h + head) * n * n..(b * h + head + 1) * n * n];
            let go = &dout[b * n * d + head * dh..];
            // dP = dO V^T
            T::gemm(n, dh, n, T::one(), go, d as isize, 1, v, 1, rs_qkv, T::zero(), &mut dp, ni, 1);
            // dV = P^T dO
            T::gemm(n, n, dh, T::one(), p, 1, ni, go, d as isize, 1, T::zero(), &mut dqkv[base + 2 * d + head * dh..], rs_qkv, 1);
            // dS = P * (dP - rowsum(dP * P))
            for (prow, dprow) in p.chunks_exact(n).zip(dp.chunks_exact_mut(n)) {
                let dot = prow.iter().zip(dprow.iter()).map(|(&a, &b)| a * b).sum::<T>();
                for (g, &pv) in dprow.iter_mut().zip(prow) {
                    *g = pv * (*g - dot);
                }
            }
            // dQ = scale dS K, dK = scale dS^T Q
            T::gemm(n, n, dh, scale, &dp, ni, 1, k, rs_qkv, 1, T::zero(), &mut dqkv[base + head * dh..], rs_qkv, 1);
            T::gemm(n, n, dh, scale, &dp, 1, ni, q, rs_qkv, 1, T::zero(), &mut dqkv[base + d + head * dh..], rs_qkv, 1);
        }
    }
    dqkv
}

fn check_input<T: Scalar>(cfg: &ModelConfig, x: &SpectrogramTensor<T>) -> Result<()> {
    let want = (cfg.channels, cfg.input_t, cfg.input_f);
    if x.shape() != want {
        return Err(Error::Shape(format!("input {:?} but model expects {want:?}", x.shape())));
    }
    Ok(())
}

/// Patch matrix `(batch * n_patches) x (channels * kernel^2)`.
fn im2col<T: Scalar>(cfg: &ModelConfig, xs: &[&SpectrogramTensor<T>]) -> Vec<T> {
    let (nt, nf) = cfg.grid();
    let (k, s, pd) = (cfg.kernel, cfg.stride, cfg.patch_dim());
    let mut out = vec![T::zero(); xs.len() * nt * nf * pd];
    let mut row = 0;
    for x in xs {
        for it in 0..nt {
            for jf in 0..nf {
                let dst = &mut out[row * pd..(row + 1) * pd];
                for c in 0..cfg.channels {
                    for dt in 0..k {
                        let src = (c * x.frames + it * s + dt) * x.bins + jf * s;
                        dst[(c * k + dt) * k..(c * k + dt + 1) * k].copy_from_slice(&x.data[src..src + k]);
                    }
                }
                row += 1;
            }
        }
    }
    out
}

fn embed<T: Scalar>(params: &ModelParams<T>, patches: &[T], batch: usize) -> Vec<T> {
    let cfg = &params.config;
    let l = params.layout();
    let (n, np, d) = (cfg.tokens(), cfg.num_patches(), cfg.embed_dim);
    let w = &params.data;
    let e = linear(patches, batch * np, cfg.patch_dim(), &w[l.patch_w.clone()], &w[l.patch_b.clone()], d);
    let (cls, pos) = (&w[l.cls.clone()], &w[l.pos.clone()]);
    let mut x = vec![T::zero(); batch * n * d];
    for b in 0..batch {
        for t in 0..n {
            let dst = &mut x[(b * n + t) * d..(b * n + t + 1) * d];
            let src = if t == 0 { cls } else { &e[(b * np + t - 1) * d..(b * np + t) * d] };
            for k in 0..d {
                dst[k] = src[k] + pos[t * d + k];
            }
        }
    }
    x
}

fn block_forward<T: Scalar>(params: &ModelParams<T>, bl: &BlockLayout, x_in: Vec<T>, batch: usize) -> (BlockTape<T>, Vec<T>) {
    let cfg = &params.config;
    let w = &params.data;
    let (d, hid) = (cfg.embed_dim, cfg.hidden());
    let rows = batch * cfg.tokens();
    let (a1, ln1_xhat, ln1_rstd) = layer_norm(&x_in, d, &w[bl.ln1_g.clone()], &w[bl.ln1_b.clone()]);
    let qkv = linear(&a1, rows, d, &w[bl.qkv_w.clone()], &w[bl.qkv_b.clone()], 3 * d);
    let (attn, probs) = attention(cfg, &qkv, batch);
    let proj = linear(&attn, rows, d, &w[bl.proj_w.clone()], &w[bl.proj_b.clone()], d);
    let x_mid: Vec<T> = x_in.iter().zip(&proj).map(|(&a, &b)| a + b).collect();
    let (a2, ln2_xhat, ln2_rstd) = layer_norm(&x_mid, d, &w[bl.ln2_g.clone()], &w[bl.ln2_b.clone()]);
    let h_pre = linear(&a2, rows, d, &w[bl.fc1_w.clone()], &w[bl.fc1_b.clone()], hid);
    let h_act: Vec<T> = h_pre.iter().map(|&v| gelu(v)).collect();
    let m = linear(&h_act, rows, hid, &w[bl.fc2_w.clone()], &w[bl.fc2_b.clone()], d);
    let x_out = x_mid.iter().zip(&m).map(|(&a, &b)| a + b).collect();
    let tape = BlockTape {
        ln1_xhat,
        ln1_rstd,
        a1,
        qkv,
        probs,
        attn,
        ln2_xhat,
        ln2_rstd,
        a2,
        h_pre,
        h_act,
    };
    (tape, x_out)
}

fn forward_tape<T: Scalar>(params: &ModelParams<T>, xs: &[&SpectrogramTensor<T>]) -> Result<Tape<T>> {
    let cfg = &params.config;
    for x in xs {
        check_input(cfg, x)?;
    }
    let l = params.layout();
    let w = &params.data;
    let (batch, n, d) = (xs.len(), cfg.tokens(), cfg.embed_dim);
    let patches = im2col(cfg, xs);
    let mut x = embed(params, &patches, batch);
    let mut blocks = Vec::with_capacity(cfg.depth);
    for bl in &l.blocks {
        let (tape, next) = block_forward(params, bl, x, batch);
        blocks.push(tape);
        x = next;
    }
    let cls: Vec<T> = (0..batch).flat_map(|b| x[b * n * d..(b * n + 1) * d].iter().copied()).collect();
    let (z, lnf_xhat, lnf_rstd) = layer_norm(&cls, d, &w[l.lnf_g.clone()], &w[l.lnf_b.clone()]);
    let pred = linear(&z, batch, d, &w[l.head_w.clone()], &w[l.head_b.clone()], cfg.head_out);
    if pred.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite model output".into()));
    }
    Ok(Tape { batch, patches, blocks, lnf_xhat, lnf_rstd, z, pred })
}

fn backward<T: Scalar>(params: &ModelParams<T>, tape: &Tape<T>, dpred: &[T], grads: &mut ModelParams<T>) {
    let cfg = &params.config;
    let l = params.layout().clone();
    let w = &params.data;
    let g = &mut grads.data;
    let (batch, n, np, d, hid) = (tape.batch, cfg.tokens(), cfg.num_patches(), cfg.embed_dim, cfg.hidden());
    let rows = batch * n;

    let mut dz = vec![T::zero(); batch * d];
    {
        let (dw, db) = split2(g, &l.head_w, &l.head_b);
        linear_back(&tape.z, dpred, batch, d, cfg.head_out, &w[l.head_w.clone()], dw, db, Some(&mut dz));
    }
    let mut dcls = vec![T::zero(); batch * d];
    {
        let (dg, db) = split2(g, &l.lnf_g, &l.lnf_b);
        layer_norm_back(&dz, &tape.lnf_xhat, &tape.lnf_rstd, d, &w[l.lnf_g.clone()], dg, db, &mut dcls);
    }
    let mut dx = vec![T::zero(); rows * d];
    for b in 0..batch {
        dx[b * n * d..(b * n + 1) * d].copy_from_slice(&dcls[b * d..(b + 1) * d]);
    }

    let mut dh = vec![T::zero(); rows * hid];
    let mut dtmp = vec![T::zero(); rows * d];
    for (bl, t) in l.blocks.iter().zip(&tape.blocks).rev() {
        // MLP branch
        {
            let (dw, db) = split2(g, &bl.fc2_w, &bl.fc2_b);
            linear_back(&t.h_act, &dx, rows, hid, d, &w[bl.fc2_w.clone()], dw, db, Some(&mut dh));
        }
        for (v, &x) in dh.iter_mut().zip(&t.h_pre) {
            *v *= gelu_grad(x);
        }
        {
            let (dw, db) = split2(g, &bl.fc1_w, &bl.fc1_b);
            linear_back(&t.a2, &dh, rows, d, hid, &w[bl.fc1_w.clone()], dw, db, Some(&mut dtmp));
        }
        {
            let (dg, db) = split2(g, &bl.ln2_g, &bl.ln2_b);
            layer_norm_back(&dtmp, &t.ln2_xhat, &t.ln2_rstd, d, &w[bl.ln2_g.clone()], dg, db, &mut dx);
        }
        // dx is now d(x_mid); attention branch
        {
            let (dw, db) = split2(g, &bl.proj_w, &bl.proj_b);
            linear_back(&t.attn, &dx, rows, d, d, &w[bl.proj_w.clone()], dw, db, Some(&mut dtmp));
        }
        let dqkv = attention_back(cfg, &t.qkv, &t.probs, &dtmp, batch);
        {
            let (dw, db) = split2(g, &bl.qkv_w, &bl.qkv_b);
            linear_back(&t.a1, &dqkv, rows, d, 3 * d, &w[bl.qkv_w.clone()], dw, db, Some(&mut dtmp));
        }
        {
            let (dg, db) = split2(g, &bl.ln1_g, &bl.ln1_b);
            layer_norm_back(&dtmp, &t.ln1_xhat, &t.ln1_rstd, d, &w[bl.ln1_g.clone()], dg, db, &mut dx);
        }
    }

    // embedding
    let mut de = vec![T::zero(); batch * np * d];
    for b in 0..batch {
        for tkn in 0..n {
            let src = &dx[(b * n + tkn) * d..(b * n + tkn + 1) * d];
            for k in 0..d {
                g[l.pos.start + tkn * d + k] += src[k];
            }
            if tkn == 0 {
                for k in 0..d {
                    g[l.cls.start + k] += src[k];
                }
            } else {
                de[(b * np + tkn - 1) * d..(b * np + tkn) * d].copy_from_slice(src);
            }
        }
    }
    let (dw, db) = split2(g, &l.patch_w, &l.patch_b);
    linear_back(&tape.patches, &de, batch * np, cfg.patch_dim(), d, &w[l.patch_w.clone()], dw, db, None);
}

/// Two disjoint mutable ranges of the gradient buffer; `a` precedes `b`.
fn split2<'a, T>(g: &'a mut [T], a: &std::ops::Range<usize>, b: &std::ops::Range<usize>) -> (&'a mut [T], &'a mut [T]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = g.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}

/// Class token plus positional embeddings and projected patches for one
/// input: `(n_patches + 1) x embed_dim`, row-major.
pub fn patch_embed<T: Scalar>(x: &SpectrogramTensor<T>, params: &ModelParams<T>) -> Result<Vec<T>> {
    check_input(&params.config, x)?;
    let patches = im2col(&params.config, &[x]);
    Ok(embed(params, &patches, 1))
}

/// Normalized-space outputs, one per input.
pub fn forward<T: Scalar>(params: &ModelParams<T>, xs: &[&SpectrogramTensor<T>]) -> Result<Vec<[T; 3]>> {
    let parts: Vec<Vec<[T; 3]>> = xs
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let tape = forward_tape(params, chunk)?;
            Ok(tape.pred.chunks_exact(3).map(|r| [r[0], r[1], r[2]]).collect())
        })
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().flatten().collect())
}

pub fn predict<T: Scalar>(params: &ModelParams<T>, xs: &[&SpectrogramTensor<T>]) -> Result<Vec<Prediction>> {
    Ok(forward(params, xs)?
        .into_iter()
        .map(|p| {
            let normalized = p.map(|v| v.to_f64().unwrap());
            Prediction { normalized, position_mm: params.target_norm.denormalize(&normalized) }
        })
        .collect())
}

/// Mean over batch and coordinates of the squared difference.
pub fn mse_loss<T: Scalar>(preds: &[[T; 3]], targets: &[[T; 3]]) -> Result<T> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::Shape(format!("{} predictions for {} targets", preds.len(), targets.len())));
    }
    let sum: T = preds
        .iter()
        .zip(targets)
        .flat_map(|(p, t)| (0..3).map(move |k| (p[k] - t[k]) * (p[k] - t[k])))
        .sum();
    Ok(sum / T::from_usize(3 * preds.len()).unwrap())
}

/// MSE loss over the batch and its exact gradient for every parameter.
pub fn loss_and_grad<T: Scalar>(
    params: &ModelParams<T>,
    xs: &[&SpectrogramTensor<T>],
    targets: &[[T; 3]],
) -> Result<(T, ModelParams<T>)> {
    if xs.len() != targets.len() || xs.is_empty() {
        return Err(Error::Shape(format!("{} inputs for {} targets", xs.len(), targets.len())));
    }
    let denom = T::from_usize(3 * xs.len()).unwrap();
    let parts: Vec<(T, ModelParams<T>)> = xs
        .par_chunks(GRAD_CHUNK)
        .zip(targets.par_chunks(GRAD_CHUNK))
        .map(|(xc, tc)| {
            let tape = forward_tape(params, xc)?;
            let mut sq = T::zero();
            let mut dpred = vec![T::zero(); tape.pred.len()];
            for (i, t) in tc.iter().enumerate() {
                for k in 0..3 {
                    let e = tape.pred[i * 3 + k] - t[k];
                    sq += e * e;
                    dpred[i * 3 + k] = T::lit(2.0) * e / denom;
                }
            }
            let mut grads = params.zeros_like();
            backward(params, &tape, &dpred, &mut grads);
            Ok((sq, grads))
        })
        .collect::<Result<_>>()?;
    let mut iter = parts.into_iter();
    let (mut sq, mut grads) = iter.next().expect("non-empty batch");
    for (s, g) in iter {
        sq += s;
        for (a, b) in grads.data.iter_mut().zip(&g.data) {
            *a += *b;
        }
    }
    let loss = sq / denom;
    if !loss.is_finite() || !grads.all_finite() {
        return Err(Error::Numeric("non-finite loss or gradient".into()));
    }
    Ok((loss, grads))
}

/// Attention probabilities of every block for one input, each
/// `heads x tokens x tokens`.
pub fn attention_maps<T: Scalar>(params: &ModelParams<T>, x: &SpectrogramTensor<T>) -> Result<Vec<Vec<T>>> {
    Ok(forward_tape(params, &[x])?.blocks.into_iter().map(|b| b.probs).collect())
}
