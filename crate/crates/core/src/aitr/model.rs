use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{AitrParams, LayerSlots, PoolSlots};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::features::{compute_muse, RankedEvidence};
use crate::tabular::{bce_with_logits, gelu, gelu_grad, sigmoid};

const LN_EPS: f64 = 1e-5;

/// Claim pair, re-ranked evidence and similarity vector of one sample, ready
/// to be turned into a token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct AitrInput {
    /// Five fusion tokens followed by the image and text evidence tokens (7 x d).
    pub tokens: Array2<f64>,
    pub muse: [f64; 6],
}

/// `(a, b, a + b, a - b, a * b)` element-wise.
pub fn fuse_modalities(image: &[f64], text: &[f64]) -> Result<[Vec<f64>; 5]> {
    if image.len() != text.len() {
        return Err(Error::DimMismatch {
            expected: image.len(),
            found: text.len(),
        });
    }
    let zip = |f: fn(f64, f64) -> f64| image.iter().zip(text).map(|(&a, &b)| f(a, b)).collect();
    Ok([
        image.to_vec(),
        text.to_vec(),
        zip(|a, b| a + b),
        zip(|a, b| a - b),
        zip(|a, b| a * b),
    ])
}

fn unit(v: &[f32]) -> Vec<f64> {
    let x: Vec<f64> = v.iter().map(|&a| a as f64).collect();
    let n = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n < crate::features::ZERO_NORM {
        return x;
    }
    x.into_iter().map(|a| a / n).collect()
}

impl AitrInput {
    /// Embeddings are scaled to unit length before fusion. Missing evidence
    /// becomes a zero token and masked similarity entries stay zero.
    pub fn from_sample(sample: &Sample, ranked: &RankedEvidence) -> Result<Self> {
        let d = sample.dim();
        let muse = compute_muse(sample, ranked)?.to_array();
        let image = unit(sample.image.values());
        let text = unit(sample.text.values());
        let fused = fuse_modalities(&image, &text)?;
        let mut tokens = Array2::zeros((7, d));
        for (row, v) in fused.iter().enumerate() {
            tokens.row_mut(row).assign(&ArrayView1::from(&v[..]));
        }
        if let Some(i) = ranked.image_index {
            tokens.row_mut(5).assign(&Array1::from(unit(sample.image_evidence[i].values())));
        }
        if let Some(i) = ranked.text_index {
            tokens.row_mut(6).assign(&Array1::from(unit(sample.text_evidence[i].values())));
        }
        Ok(Self { tokens, muse })
    }

    pub fn dim(&self) -> usize {
        self.tokens.ncols()
    }
}

/// The input sequence `x_0` of one sample: class token, fusion tokens,
/// evidence tokens and, when enabled, the projected similarity token.
pub fn build_input(input: &AitrInput, params: &AitrParams) -> Result<Array2<f64>> {
    let cfg = &params.config;
    if input.tokens.nrows() != 7 {
        return Err(Error::ShapeError(format!("expected 7 content tokens, found {}", input.tokens.nrows())));
    }
    if input.dim() != cfg.dim {
        return Err(Error::DimMismatch {
            expected: cfg.dim,
            found: input.dim(),
        });
    }
    let l = &params.layout;
    let mut x = Array2::zeros((cfg.seq_len(), cfg.dim));
    x.row_mut(0).assign(&params.vec(l.cls));
    x.slice_mut(s![1..8, ..]).assign(&input.tokens);
    if let Some((w, b)) = l.muse {
        let m = ArrayView1::from(&input.muse[..]);
        let token = params.mat(w).dot(&m) + params.vec(b);
        x.row_mut(8).assign(&token);
    }
    if let Some(pos) = l.pos {
        x += &params.mat(pos);
    }
    Ok(x)
}

/// Everything the forward pass exposes for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub logits: Vec<f64>,
    /// Per sample, the normalized class token after each layer (n x d).
    pub intermediate_cls: Vec<Array2<f64>>,
    /// Pooled vector per sample (B x d).
    pub pooled: Array2<f64>,
    /// `encoder_attention[layer][sample * heads + head]` is a T x T row-stochastic map.
    pub encoder_attention: Vec<Vec<Array2<f64>>>,
    /// Per sample n x n pooling attention (attention pooling only).
    pub pool_attention: Vec<Array2<f64>>,
    /// Softmax layer weights (weighted pooling only).
    pub layer_weights: Option<Vec<f64>>,
}

struct Dropout<'a> {
    p: f64,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl Dropout<'_> {
    fn mask(&mut self, rows: usize, cols: usize) -> Option<Array2<f64>> {
        let rng = self.rng.as_mut()?;
        if self.p == 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - self.p);
        let p = self.p;
        Some(Array2::from_shape_simple_fn((rows, cols), || {
            if rng.random::<f64>() < p {
                0.0
            } else {
                keep
            }
        }))
    }
}

fn apply(x: Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => x * m,
        None => x,
    }
}

struct NormCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, g: ArrayView1<f64>, b: ArrayView1<f64>) -> (Array2<f64>, NormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        let rs = *r;
        row.mapv_inplace(|v| (v - mean) * rs);
    }
    let y = &xhat * &g + &b;
    (y, NormCache { xhat, rstd })
}

fn add_into(dst: &mut [f64], src: ArrayView1<f64>) {
    dst.iter_mut().zip(src.iter()).for_each(|(a, b)| *a += b);
}

fn layer_norm_back(
    dy: &Array2<f64>,
    c: &NormCache,
    params: &AitrParams,
    grads: &mut AitrParams,
    (gi, bi): (usize, usize),
) -> Array2<f64> {
    add_into(grads.data_mut(gi), (dy * &c.xhat).sum_axis(Axis(0)).view());
    add_into(grads.data_mut(bi), dy.sum_axis(Axis(0)).view());
    let mut dx = dy * &params.vec(gi);
    let d = dx.ncols() as f64;
    for ((mut row, xh), &r) in dx.rows_mut().into_iter().zip(c.xhat.rows()).zip(&c.rstd) {
        let m1 = row.sum() / d;
        let m2 = row.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d;
        row.zip_mut_with(&xh, |v, &h| *v = r * (*v - m1 - h * m2));
    }
    dx
}

fn linear(x: &Array2<f64>, params: &AitrParams, w: usize, b: Option<usize>) -> Array2<f64> {
    let y = x.dot(&params.mat(w).t());
    match b {
        Some(b) => y + &params.vec(b),
        None => y,
    }
}

fn linear_back(
    dy: &Array2<f64>,
    x: &Array2<f64>,
    params: &AitrParams,
    grads: &mut AitrParams,
    w: usize,
    b: Option<usize>,
) -> Array2<f64> {
    let mut gw = grads.mat_mut(w);
    gw += &dy.t().dot(x);
    if let Some(b) = b {
        add_into(grads.data_mut(b), dy.sum_axis(Axis(0)).view());
    }
    dy.dot(&params.mat(w))
}

fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

fn softmax_back(p: &Array2<f64>, dp: &Array2<f64>) -> Array2<f64> {
    let dot = (p * dp).sum_axis(Axis(1)).insert_axis(Axis(1));
    p * &(dp - &dot)
}

struct LayerCache {
    n1: NormCache,
    h1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    a: Array2<f64>,
    mask1: Option<Array2<f64>>,
    n2: NormCache,
    h2: Array2<f64>,
    u: Array2<f64>,
    g: Array2<f64>,
    mask2: Option<Array2<f64>>,
    mask3: Option<Array2<f64>>,
}

/// Pre-norm encoder block over a stacked batch of `b` sequences of length `t`.
fn encoder_layer(
    p: &AitrParams,
    l: &LayerSlots,
    heads: usize,
    x: &Array2<f64>,
    t: usize,
    drop: &mut Dropout,
) -> (Array2<f64>, LayerCache) {
    let (rows, d) = x.dim();
    let b = rows / t;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (h1, n1) = layer_norm(x, p.vec(l.ln1_g), p.vec(l.ln1_b));
    let q = linear(&h1, p, l.q_w, Some(l.q_b));
    let k = linear(&h1, p, l.k_w, Some(l.k_b));
    let v = linear(&h1, p, l.v_w, Some(l.v_b));
    let mut a = Array2::zeros((rows, d));
    let mut probs = Vec::with_capacity(b * heads);
    for bi in 0..b {
        let (r0, r1) = (bi * t, (bi + 1) * t);
        for j in 0..heads {
            let (c0, c1) = (j * dh, (j + 1) * dh);
            let qs = q.slice(s![r0..r1, c0..c1]);
            let ks = k.slice(s![r0..r1, c0..c1]);
            let mut sc = qs.dot(&ks.t()) * scale;
            softmax_rows(&mut sc);
            a.slice_mut(s![r0..r1, c0..c1]).assign(&sc.dot(&v.slice(s![r0..r1, c0..c1])));
            probs.push(sc);
        }
    }
    let mask1 = drop.mask(rows, d);
    let x1 = x + &apply(linear(&a, p, l.o_w, Some(l.o_b)), &mask1);
    let (h2, n2) = layer_norm(&x1, p.vec(l.ln2_g), p.vec(l.ln2_b));
    let u = linear(&h2, p, l.ff1_w, Some(l.ff1_b));
    let mask2 = drop.mask(rows, u.ncols());
    let g = apply(u.mapv(gelu), &mask2);
    let mask3 = drop.mask(rows, d);
    let out = &x1 + &apply(linear(&g, p, l.ff2_w, Some(l.ff2_b)), &mask3);
    let cache = LayerCache {
        n1,
        h1,
        q,
        k,
        v,
        probs,
        a,
        mask1,
        n2,
        h2,
        u,
        g,
        mask2,
        mask3,
    };
    (out, cache)
}

fn encoder_layer_back(
    p: &AitrParams,
    l: &LayerSlots,
    heads: usize,
    c: &LayerCache,
    t: usize,
    dout: Array2<f64>,
    grads: &mut AitrParams,
) -> Array2<f64> {
    let (rows, d) = dout.dim();
    let b = rows / t;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let df = apply(dout.clone(), &c.mask3);
    let dg = apply(linear_back(&df, &c.g, p, grads, l.ff2_w, Some(l.ff2_b)), &c.mask2);
    let du = dg * &c.u.mapv(gelu_grad);
    let dh2 = linear_back(&du, &c.h2, p, grads, l.ff1_w, Some(l.ff1_b));
    let dx1 = dout + &layer_norm_back(&dh2, &c.n2, p, grads, (l.ln2_g, l.ln2_b));
    let dattn = apply(dx1.clone(), &c.mask1);
    let da = linear_back(&dattn, &c.a, p, grads, l.o_w, Some(l.o_b));
    let mut dq = Array2::zeros((rows, d));
    let mut dk = Array2::zeros((rows, d));
    let mut dv = Array2::zeros((rows, d));
    for bi in 0..b {
        let (r0, r1) = (bi * t, (bi + 1) * t);
        for j in 0..heads {
            let (c0, c1) = (j * dh, (j + 1) * dh);
            let pm = &c.probs[bi * heads + j];
            let dout_h = da.slice(s![r0..r1, c0..c1]);
            let dp = dout_h.dot(&c.v.slice(s![r0..r1, c0..c1]).t());
            dv.slice_mut(s![r0..r1, c0..c1]).assign(&pm.t().dot(&dout_h));
            let ds = softmax_back(pm, &dp) * scale;
            dq.slice_mut(s![r0..r1, c0..c1]).assign(&ds.dot(&c.k.slice(s![r0..r1, c0..c1])));
            dk.slice_mut(s![r0..r1, c0..c1]).assign(&ds.t().dot(&c.q.slice(s![r0..r1, c0..c1])));
        }
    }
    let mut dh1 = linear_back(&dq, &c.h1, p, grads, l.q_w, Some(l.q_b));
    dh1 += &linear_back(&dk, &c.h1, p, grads, l.k_w, Some(l.k_b));
    dh1 += &linear_back(&dv, &c.h1, p, grads, l.v_w, Some(l.v_b));
    dx1 + &layer_norm_back(&dh1, &c.n1, p, grads, (l.ln1_g, l.ln1_b))
}

enum PoolCache {
    Attention {
        q: Array2<f64>,
        k: Array2<f64>,
        v: Array2<f64>,
        probs: Array2<f64>,
    },
    Max(Vec<usize>),
    Weighted(Array1<f64>),
    Last,
}

/// Pools one sample's stacked class tokens (n x d) into a single vector.
fn pool(p: &AitrParams, cs: &Array2<f64>) -> (Array1<f64>, PoolCache) {
    let n = cs.nrows();
    match (&p.layout.pool, p.config.pooling) {
        (PoolSlots::Attention { q, k, v }, _) => {
            let qm = linear(cs, p, *q, None);
            let km = linear(cs, p, *k, None);
            let vm = linear(cs, p, *v, None);
            let mut probs = qm.dot(&km.t()) / (cs.ncols() as f64).sqrt();
            softmax_rows(&mut probs);
            let pooled = probs.dot(&vm).mean_axis(Axis(0)).expect("non-empty");
            (pooled, PoolCache::Attention { q: qm, k: km, v: vm, probs })
        }
        (PoolSlots::Weighted { logits }, _) => {
            let alpha = layer_softmax(p, *logits);
            (alpha.dot(cs), PoolCache::Weighted(alpha))
        }
        (PoolSlots::Plain, super::Pooling::Max) => {
            let arg: Vec<usize> = cs
                .columns()
                .into_iter()
                .map(|col| {
                    (0..n).fold(0, |best, i| if col[i] > col[best] { i } else { best })
                })
                .collect();
            let pooled = Array1::from_iter(arg.iter().enumerate().map(|(j, &i)| cs[[i, j]]));
            (pooled, PoolCache::Max(arg))
        }
        (PoolSlots::Plain, _) => (cs.row(n - 1).to_owned(), PoolCache::Last),
    }
}

fn layer_softmax(p: &AitrParams, logits: usize) -> Array1<f64> {
    let mut w = p.vec(logits).to_owned().insert_axis(Axis(0));
    softmax_rows(&mut w);
    w.remove_axis(Axis(0))
}

fn pool_back(
    p: &AitrParams,
    cs: &Array2<f64>,
    cache: &PoolCache,
    dpooled: ArrayView1<f64>,
    grads: &mut AitrParams,
) -> Array2<f64> {
    let (n, d) = cs.dim();
    let mut dcs = Array2::zeros((n, d));
    match (cache, &p.layout.pool) {
        (PoolCache::Attention { q, k, v, probs }, PoolSlots::Attention { q: wq, k: wk, v: wv }) => {
            let dca = Array2::from_shape_fn((n, d), |(_, j)| dpooled[j] / n as f64);
            let dp = dca.dot(&v.t());
            let dvm = probs.t().dot(&dca);
            let ds = softmax_back(probs, &dp) / (d as f64).sqrt();
            let dqm = ds.dot(k);
            let dkm = ds.t().dot(q);
            dcs += &linear_back(&dqm, cs, p, grads, *wq, None);
            dcs += &linear_back(&dkm, cs, p, grads, *wk, None);
            dcs += &linear_back(&dvm, cs, p, grads, *wv, None);
        }
        (PoolCache::Weighted(alpha), PoolSlots::Weighted { logits }) => {
            for i in 0..n {
                dcs.row_mut(i).assign(&(&dpooled * alpha[i]));
            }
            let dalpha = cs.dot(&dpooled);
            let mix = alpha.dot(&dalpha);
            let dw = alpha * &(dalpha - mix);
            add_into(grads.data_mut(*logits), dw.view());
        }
        (PoolCache::Max(arg), _) => {
            for (j, &i) in arg.iter().enumerate() {
                dcs[[i, j]] = dpooled[j];
            }
        }
        (PoolCache::Last, _) => dcs.row_mut(n - 1).assign(&dpooled),
        _ => unreachable!("pool cache does not match layout"),
    }
    dcs
}

struct HeadCache {
    pooled: Array2<f64>,
    a0: Array2<f64>,
    h0: Array2<f64>,
}

fn head(p: &AitrParams, pooled: Array2<f64>) -> (Vec<f64>, HeadCache) {
    let l = &p.layout;
    let a0 = linear(&pooled, p, l.w0, Some(l.b0));
    let h0 = a0.mapv(gelu);
    let logits = linear(&h0, p, l.w1, Some(l.b1)).column(0).to_vec();
    (logits, HeadCache { pooled, a0, h0 })
}

fn check_finite(logits: &[f64]) -> Result<()> {
    match logits.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFiniteActivation(format!("logit of batch row {i} is {}", logits[i]))),
        None => Ok(()),
    }
}

/// Pooling plus classification head applied to given per-sample class-token
/// stacks (each n x d). Useful for probing what the head sees.
pub fn pool_and_classify(params: &AitrParams, cls: &[Array2<f64>]) -> Result<Vec<f64>> {
    let d = params.config.dim;
    let mut pooled = Array2::zeros((cls.len(), d));
    for (bi, cs) in cls.iter().enumerate() {
        if cs.dim() != (params.config.n_layers, d) {
            return Err(Error::ShapeError(format!(
                "class-token stack {:?}, expected ({}, {d})",
                cs.dim(),
                params.config.n_layers
            )));
        }
        pooled.row_mut(bi).assign(&pool(params, cs).0);
    }
    let (logits, _) = head(params, pooled);
    check_finite(&logits)?;
    Ok(logits)
}

pub(crate) struct Cache {
    t: usize,
    layers: Vec<LayerCache>,
    cls_norm: Vec<NormCache>,
    pools: Vec<PoolCache>,
    head: HeadCache,
    muse: Vec<[f64; 6]>,
}

fn run(params: &AitrParams, batch: &[AitrInput], mut drop: Dropout) -> Result<(ForwardTrace, Cache)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput);
    }
    let cfg = &params.config;
    let (t, d, n, b) = (cfg.seq_len(), cfg.dim, cfg.n_layers, batch.len());
    let mut x = Array2::zeros((b * t, d));
    for (bi, input) in batch.iter().enumerate() {
        x.slice_mut(s![bi * t..(bi + 1) * t, ..]).assign(&build_input(input, params)?);
    }
    let mut layers = Vec::with_capacity(n);
    let mut cls_hat = Vec::with_capacity(n);
    let mut cls_norm = Vec::with_capacity(n);
    let mut encoder_attention = Vec::with_capacity(n);
    for (slots, &h) in params.layout.layers.iter().zip(&cfg.heads) {
        let (out, cache) = encoder_layer(params, slots, h, &x, t, &mut drop);
        x = out;
        let raw = x.slice(s![..;t, ..]).to_owned();
        let (hat, nc) = layer_norm(&raw, params.vec(params.layout.norm_g), params.vec(params.layout.norm_b));
        cls_hat.push(hat);
        cls_norm.push(nc);
        encoder_attention.push(cache.probs.clone());
        layers.push(cache);
    }
    let intermediate_cls: Vec<Array2<f64>> = (0..b)
        .map(|bi| Array2::from_shape_fn((n, d), |(i, j)| cls_hat[i][[bi, j]]))
        .collect();
    let mut pooled = Array2::zeros((b, d));
    let mut pools = Vec::with_capacity(b);
    let mut pool_attention = Vec::new();
    for (bi, cs) in intermediate_cls.iter().enumerate() {
        let (v, pc) = pool(params, cs);
        pooled.row_mut(bi).assign(&v);
        if let PoolCache::Attention { probs, .. } = &pc {
            pool_attention.push(probs.clone());
        }
        pools.push(pc);
    }
    let layer_weights = match params.layout.pool {
        PoolSlots::Weighted { logits } => Some(layer_softmax(params, logits).to_vec()),
        _ => None,
    };
    let (logits, head_cache) = head(params, pooled.clone());
    check_finite(&logits)?;
    let trace = ForwardTrace {
        logits,
        intermediate_cls,
        pooled,
        encoder_attention,
        pool_attention,
        layer_weights,
    };
    let cache = Cache {
        t,
        layers,
        cls_norm,
        pools,
        head: head_cache,
        muse: batch.iter().map(|i| i.muse).collect(),
    };
    Ok((trace, cache))
}

/// Inference-mode forward pass (no dropout); a pure function of its inputs.
pub fn forward(params: &AitrParams, batch: &[AitrInput]) -> Result<ForwardTrace> {
    run(params, batch, Dropout { p: 0.0, rng: None }).map(|(t, _)| t)
}

pub(crate) fn backward(params: &AitrParams, trace: &ForwardTrace, cache: &Cache, dlogits: &[f64]) -> AitrParams {
    let l = &params.layout;
    let cfg = &params.config;
    let (t, n) = (cache.t, cfg.n_layers);
    let b = dlogits.len();
    let mut grads = params.zeros_like();
    let dlog = Array2::from_shape_vec((b, 1), dlogits.to_vec()).expect("logit shape");
    let dh0 = linear_back(&dlog, &cache.head.h0, params, &mut grads, l.w1, Some(l.b1));
    let da0 = dh0 * &cache.head.a0.mapv(gelu_grad);
    let dpooled = linear_back(&da0, &cache.head.pooled, params, &mut grads, l.w0, Some(l.b0));

    let mut dcls_hat: Vec<Array2<f64>> = (0..n).map(|_| Array2::zeros((b, cfg.dim))).collect();
    for bi in 0..b {
        let dcs = pool_back(params, &trace.intermediate_cls[bi], &cache.pools[bi], dpooled.row(bi), &mut grads);
        for (i, row) in dcs.rows().into_iter().enumerate() {
            dcls_hat[i].row_mut(bi).assign(&row);
        }
    }

    let mut dx = Array2::zeros((b * t, cfg.dim));
    for i in (0..n).rev() {
        let draw = layer_norm_back(&dcls_hat[i], &cache.cls_norm[i], params, &mut grads, (l.norm_g, l.norm_b));
        let mut cls_rows = dx.slice_mut(s![..;t, ..]);
        cls_rows += &draw;
        dx = encoder_layer_back(params, &l.layers[i], cfg.heads[i], &cache.layers[i], t, dx, &mut grads);
    }

    add_into(grads.data_mut(l.cls), dx.slice(s![..;t, ..]).sum_axis(Axis(0)).view());
    if let Some(pos) = l.pos {
        let mut gp = grads.mat_mut(pos);
        for bi in 0..b {
            gp += &dx.slice(s![bi * t..(bi + 1) * t, ..]);
        }
    }
    if let Some((w, bias)) = l.muse {
        let dtok = dx.slice(s![8..;t, ..]).to_owned();
        let m = Array2::from_shape_fn((b, 6), |(bi, j)| cache.muse[bi][j]);
        let mut gw = grads.mat_mut(w);
        gw += &dtok.t().dot(&m);
        add_into(grads.data_mut(bias), dtok.sum_axis(Axis(0)).view());
    }
    grads
}

/// Mean binary cross-entropy of the batch, its logits, and the gradient
/// with respect to every parameter. Dropout is active when `rng` is given.
pub fn loss_and_grad(
    params: &AitrParams,
    batch: &[AitrInput],
    labels: &[u8],
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Vec<f64>, AitrParams)> {
    if labels.len() != batch.len() {
        return Err(Error::ShapeError(format!("{} labels for {} samples", labels.len(), batch.len())));
    }
    let drop = Dropout {
        p: params.config.dropout,
        rng,
    };
    let (trace, cache) = run(params, batch, drop)?;
    let b = batch.len() as f64;
    let mut loss = 0.0;
    let mut dlogits = Vec::with_capacity(batch.len());
    for (&z, &y) in trace.logits.iter().zip(labels) {
        let y = y as f64;
        loss += bce_with_logits(z, y);
        dlogits.push((sigmoid(z) - y) / b);
    }
    let grads = backward(params, &trace, &cache, &dlogits);
    Ok((loss / b, trace.logits, grads))
}
