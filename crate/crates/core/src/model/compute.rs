//! Forward and backward passes, generic over the scalar type so the same code
//! runs in f32 (training, analysis) and f64 (gradient checking).
//!
//! Every reduction runs in a fixed order on a single thread, so results are
//! bit-stable for a given build and machine.

use std::fmt::Debug;
use std::ops::AddAssign;

use ndarray::linalg::general_mat_mul;
use ndarray::{
    s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, LinalgScalar, ScalarOperand, Zip,
};
use num_traits::{Float, FromPrimitive};

use super::config::{FfnKind, ModelConfig};
use super::layout::Layout;
use crate::tokenize::TokenId;

pub trait Real:
    Float + LinalgScalar + ScalarOperand + FromPrimitive + AddAssign + Send + Sync + Debug + std::iter::Sum + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

const LN_EPS: f64 = 1e-5;

fn cst<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("representable constant")
}

/// Borrowed view of a parameter buffer plus its layout.
#[derive(Clone, Copy)]
pub(crate) struct Weights<'a, T> {
    pub cfg: &'a ModelConfig,
    pub layout: &'a Layout,
    pub data: &'a [T],
}

impl<'a, T: Real> Weights<'a, T> {
    pub fn mat(&self, slot: usize) -> ArrayView2<'a, T> {
        let spec = &self.layout.tensors[slot];
        ArrayView2::from_shape((spec.shape[0], spec.shape[1]), &self.data[spec.range()]).expect("layout shape")
    }

    pub fn vec(&self, slot: usize) -> ArrayView1<'a, T> {
        let spec = &self.layout.tensors[slot];
        ArrayView1::from(&self.data[spec.range()])
    }
}

fn grad_mat<'g, T: Real>(layout: &Layout, grad: &'g mut [T], slot: usize) -> ArrayViewMut2<'g, T> {
    let spec = &layout.tensors[slot];
    ArrayViewMut2::from_shape((spec.shape[0], spec.shape[1]), &mut grad[spec.range()]).expect("layout shape")
}

fn grad_vec<'g, T: Real>(layout: &Layout, grad: &'g mut [T], slot: usize) -> ArrayViewMut1<'g, T> {
    let spec = &layout.tensors[slot];
    ArrayViewMut1::from(&mut grad[spec.range()])
}

pub(crate) struct NormCache<T> {
    pub xhat: Array2<T>,
    pub rstd: Array1<T>,
}

pub(crate) fn layer_norm<T: Real>(
    x: ArrayView2<T>,
    gain: ArrayView1<T>,
    bias: ArrayView1<T>,
) -> (Array2<T>, NormCache<T>) {
    let (rows, d) = x.dim();
    let inv_d = T::one() / cst::<T>(d as f64);
    let eps = cst::<T>(LN_EPS);
    let mut xhat = Array2::zeros((rows, d));
    let mut rstd = Array1::zeros(rows);
    let mut out = Array2::zeros((rows, d));
    for r in 0..rows {
        let row = x.row(r);
        let mut mean = T::zero();
        for &v in row.iter() {
            mean += v;
        }
        mean = mean * inv_d;
        let mut var = T::zero();
        for &v in row.iter() {
            let c = v - mean;
            var += c * c;
        }
        var = var * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for c in 0..d {
            let h = (row[c] - mean) * rs;
            xhat[[r, c]] = h;
            out[[r, c]] = h * gain[c] + bias[c];
        }
    }
    (out, NormCache { xhat, rstd })
}

/// Backward through layer norm; accumulates gain/bias grads, returns dx.
fn layer_norm_backward<T: Real>(
    dy: ArrayView2<T>,
    cache: &NormCache<T>,
    gain: ArrayView1<T>,
    mut dgain: ArrayViewMut1<T>,
    mut dbias: ArrayViewMut1<T>,
) -> Array2<T> {
    let (rows, d) = dy.dim();
    let inv_d = T::one() / cst::<T>(d as f64);
    let mut dx = Array2::zeros((rows, d));
    for r in 0..rows {
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for c in 0..d {
            let g = dy[[r, c]];
            let xh = cache.xhat[[r, c]];
            dgain[c] += g * xh;
            dbias[c] += g;
            let dxh = g * gain[c];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xh;
        }
        mean_dxhat = mean_dxhat * inv_d;
        mean_dxhat_xhat = mean_dxhat_xhat * inv_d;
        let rs = cache.rstd[r];
        for c in 0..d {
            let dxh = dy[[r, c]] * gain[c];
            dx[[r, c]] = rs * (dxh - mean_dxhat - cache.xhat[[r, c]] * mean_dxhat_xhat);
        }
    }
    dx
}

/// `x · Wᵀ` for a `[out, in]` weight matrix.
fn linear<T: Real>(x: ArrayView2<T>, w: ArrayView2<T>) -> Array2<T> {
    x.dot(&w.t())
}

fn add_bias<T: Real>(x: &mut Array2<T>, b: ArrayView1<T>) {
    for mut row in x.rows_mut() {
        row += &b;
    }
}

pub(crate) fn softmax_rows<T: Real>(logits: &mut Array2<T>) {
    for mut row in logits.rows_mut() {
        softmax_in_place(row.view_mut());
    }
}

fn softmax_in_place<T: Real>(mut row: ArrayViewMut1<T>) {
    let mut max = T::neg_infinity();
    for &v in row.iter() {
        if v > max {
            max = v;
        }
    }
    // Normalize in f64 so f32 rows still sum to 1 within a few ulps.
    let mut sum = 0.0f64;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += v.to_f64().unwrap_or(0.0);
    }
    for v in row.iter_mut() {
        *v = T::from_f64(v.to_f64().unwrap_or(0.0) / sum).unwrap_or_else(T::zero);
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub(crate) struct BlockCache<T> {
    pub ln1: NormCache<T>,
    pub a: Array2<T>,
    pub q: Array2<T>,
    pub k: Array2<T>,
    pub v: Array2<T>,
    pub attn: Vec<Array2<T>>,
    pub o: Array2<T>,
    pub ln2: NormCache<T>,
    pub c: Array2<T>,
    /// FFN pre-activation (`u` for relu, gate pre-activation for gated-silu).
    pub pre: Array2<T>,
    /// Post-nonlinearity activation: `relu(u)` or `silu(g)`.
    pub act: Array2<T>,
    /// Up-projection branch (gated-silu only).
    pub up: Option<Array2<T>>,
    /// Vector fed to the output projection.
    pub inner: Array2<T>,
    /// Residual stream at block exit.
    pub x_out: Array2<T>,
}

pub(crate) struct ForwardCache<T> {
    pub tokens: Vec<TokenId>,
    /// Residual stream after the embedding (snapshot 0).
    pub x0: Array2<T>,
    pub blocks: Vec<BlockCache<T>>,
    pub lnf: NormCache<T>,
    /// Post-final-norm hidden states.
    pub y: Array2<T>,
    pub probs: Array2<T>,
}

/// Unembedding probabilities for a batch of hidden rows.
pub(crate) fn unembed_probs<T: Real>(w: &Weights<T>, h: ArrayView2<T>) -> Array2<T> {
    let u = w.mat(w.layout.unembed_slot());
    let mut logits = linear(h, u);
    add_bias(&mut logits, w.vec(w.layout.unembed_bias));
    softmax_rows(&mut logits);
    logits
}

pub(crate) fn forward<T: Real>(w: &Weights<T>, tokens: &[TokenId]) -> ForwardCache<T> {
    let cfg = w.cfg;
    let layout = w.layout;
    let seq = tokens.len();
    let d = cfg.d_model;
    let tok = w.mat(layout.tok_embed);
    let pos = w.mat(layout.pos_embed);
    let mut x = Array2::zeros((seq, d));
    for (t, &id) in tokens.iter().enumerate() {
        let mut row = x.row_mut(t);
        row.assign(&tok.row(id as usize));
        row += &pos.row(t);
    }
    let x0 = x.clone();

    let dh = cfg.head_dim();
    let scale = T::one() / cst::<T>(dh as f64).sqrt();
    let mut blocks = Vec::with_capacity(cfg.n_layers);
    for slots in &layout.blocks {
        let (a, ln1) = layer_norm(x.view(), w.vec(slots.ln1_gain), w.vec(slots.ln1_bias));
        let q = linear(a.view(), w.mat(slots.wq));
        let k = linear(a.view(), w.mat(slots.wk));
        let v = linear(a.view(), w.mat(slots.wv));
        let mut o = Array2::zeros((seq, d));
        let mut attn = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let vh = v.slice(cols);
            let mut scores = qh.dot(&kh.t()) * scale;
            for i in 0..seq {
                for j in (i + 1)..seq {
                    scores[[i, j]] = T::neg_infinity();
                }
            }
            softmax_rows(&mut scores);
            let oh = scores.dot(&vh);
            o.slice_mut(cols).assign(&oh);
            attn.push(scores);
        }
        let attn_out = linear(o.view(), w.mat(slots.wo));
        x += &attn_out;

        let (c, ln2) = layer_norm(x.view(), w.vec(slots.ln2_gain), w.vec(slots.ln2_bias));
        let mut pre = linear(c.view(), w.mat(slots.w_in));
        add_bias(&mut pre, w.vec(slots.b_in));
        let (act, up, inner) = match cfg.ffn_kind {
            FfnKind::Relu => {
                let act = pre.mapv(|u| if u > T::zero() { u } else { T::zero() });
                (act.clone(), None, act)
            }
            FfnKind::GatedSilu => {
                let act = pre.mapv(|g| g * sigmoid(g));
                let up = linear(c.view(), w.mat(slots.w_up.expect("gated layout")));
                let inner = &act * &up;
                (act, Some(up), inner)
            }
        };
        let mut ffn_out = linear(inner.view(), w.mat(slots.w_out));
        add_bias(&mut ffn_out, w.vec(slots.b_out));
        x += &ffn_out;

        blocks.push(BlockCache {
            ln1,
            a,
            q,
            k,
            v,
            attn,
            o,
            ln2,
            c,
            pre,
            act,
            up,
            inner,
            x_out: x.clone(),
        });
    }

    let (y, lnf) = layer_norm(x.view(), w.vec(layout.final_gain), w.vec(layout.final_bias));
    let probs = unembed_probs(w, y.view());
    ForwardCache {
        tokens: tokens.to_vec(),
        x0,
        blocks,
        lnf,
        y,
        probs,
    }
}

/// Summed next-token negative log-likelihood over all positions that have a
/// target. Returns `(loss_sum, n_targets)`.
pub(crate) fn nll_sum<T: Real>(cache: &ForwardCache<T>) -> (T, usize) {
    let n = cache.tokens.len().saturating_sub(1);
    let mut total = T::zero();
    for t in 0..n {
        let target = cache.tokens[t + 1] as usize;
        total = total - cache.probs[[t, target]].ln();
    }
    (total, n)
}

/// Gradient of `loss_scale · Σ_t −log p(x_{t+1} | x_{≤t})`, accumulated into
/// `grad` (same layout as the parameters).
pub(crate) fn backward<T: Real>(w: &Weights<T>, cache: &ForwardCache<T>, loss_scale: T, grad: &mut [T]) {
    let cfg = w.cfg;
    let layout = w.layout;
    let seq = cache.tokens.len();
    if seq < 2 {
        return;
    }
    let vocab = cfg.vocab_size;

    // d logits = (p − onehot) · scale, zero on the final position (no target).
    let mut dlogits = Array2::zeros((seq, vocab));
    for t in 0..seq - 1 {
        let target = cache.tokens[t + 1] as usize;
        for j in 0..vocab {
            dlogits[[t, j]] = cache.probs[[t, j]] * loss_scale;
        }
        dlogits[[t, target]] = dlogits[[t, target]] - loss_scale;
    }

    let u_slot = layout.unembed_slot();
    general_mat_mul(
        T::one(),
        &dlogits.t(),
        &cache.y,
        T::one(),
        &mut grad_mat(layout, grad, u_slot),
    );
    {
        let mut db = grad_vec(layout, grad, layout.unembed_bias);
        db += &dlogits.sum_axis(Axis(0));
    }
    let dy = dlogits.dot(&w.mat(u_slot));

    let mut dx = {
        let (head, tail) = split_two(grad, layout, layout.final_gain, layout.final_bias);
        layer_norm_backward(dy.view(), &cache.lnf, w.vec(layout.final_gain), head, tail)
    };

    let dh = cfg.head_dim();
    let scale = T::one() / cst::<T>(dh as f64).sqrt();
    for (li, slots) in layout.blocks.iter().enumerate().rev() {
        let bc = &cache.blocks[li];

        // FFN branch: x_out = x_mid + W_out · inner + b_out
        general_mat_mul(
            T::one(),
            &dx.t(),
            &bc.inner,
            T::one(),
            &mut grad_mat(layout, grad, slots.w_out),
        );
        {
            let mut db = grad_vec(layout, grad, slots.b_out);
            db += &dx.sum_axis(Axis(0));
        }
        let dinner = dx.dot(&w.mat(slots.w_out));
        let dc = match cfg.ffn_kind {
            FfnKind::Relu => {
                let mut dpre = dinner;
                Zip::from(&mut dpre).and(&bc.pre).for_each(|g, &u| {
                    if u <= T::zero() {
                        *g = T::zero();
                    }
                });
                general_mat_mul(
                    T::one(),
                    &dpre.t(),
                    &bc.c,
                    T::one(),
                    &mut grad_mat(layout, grad, slots.w_in),
                );
                {
                    let mut db = grad_vec(layout, grad, slots.b_in);
                    db += &dpre.sum_axis(Axis(0));
                }
                dpre.dot(&w.mat(slots.w_in))
            }
            FfnKind::GatedSilu => {
                let up = bc.up.as_ref().expect("gated cache");
                let w_up = slots.w_up.expect("gated layout");
                let dup = &dinner * &bc.act;
                let mut dpre = &dinner * up;
                Zip::from(&mut dpre).and(&bc.pre).for_each(|g, &x| {
                    let sg = sigmoid(x);
                    *g = *g * sg * (T::one() + x * (T::one() - sg));
                });
                general_mat_mul(
                    T::one(),
                    &dpre.t(),
                    &bc.c,
                    T::one(),
                    &mut grad_mat(layout, grad, slots.w_in),
                );
                {
                    let mut db = grad_vec(layout, grad, slots.b_in);
                    db += &dpre.sum_axis(Axis(0));
                }
                general_mat_mul(T::one(), &dup.t(), &bc.c, T::one(), &mut grad_mat(layout, grad, w_up));
                let mut dc = dpre.dot(&w.mat(slots.w_in));
                dc += &dup.dot(&w.mat(w_up));
                dc
            }
        };
        let dmid = {
            let (g, b) = split_two(grad, layout, slots.ln2_gain, slots.ln2_bias);
            layer_norm_backward(dc.view(), &bc.ln2, w.vec(slots.ln2_gain), g, b)
        };
        dx += &dmid;

        // Attention branch: x_mid = x_in + W_o · concat_h(P_h V_h)
        general_mat_mul(
            T::one(),
            &dx.t(),
            &bc.o,
            T::one(),
            &mut grad_mat(layout, grad, slots.wo),
        );
        let d_o = dx.dot(&w.mat(slots.wo));
        let mut dq = Array2::zeros((seq, cfg.d_model));
        let mut dk = Array2::zeros((seq, cfg.d_model));
        let mut dv = Array2::zeros((seq, cfg.d_model));
        for h in 0..cfg.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let p = &bc.attn[h];
            let doh = d_o.slice(cols);
            let dp = doh.dot(&bc.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&doh));
            let mut ds = Array2::zeros((seq, seq));
            for i in 0..seq {
                let mut dot = T::zero();
                for j in 0..=i {
                    dot += dp[[i, j]] * p[[i, j]];
                }
                for j in 0..=i {
                    ds[[i, j]] = p[[i, j]] * (dp[[i, j]] - dot) * scale;
                }
            }
            dq.slice_mut(cols).assign(&ds.dot(&bc.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&bc.q.slice(cols)));
        }
        general_mat_mul(
            T::one(),
            &dq.t(),
            &bc.a,
            T::one(),
            &mut grad_mat(layout, grad, slots.wq),
        );
        general_mat_mul(
            T::one(),
            &dk.t(),
            &bc.a,
            T::one(),
            &mut grad_mat(layout, grad, slots.wk),
        );
        general_mat_mul(
            T::one(),
            &dv.t(),
            &bc.a,
            T::one(),
            &mut grad_mat(layout, grad, slots.wv),
        );
        let mut da = dq.dot(&w.mat(slots.wq));
        da += &dk.dot(&w.mat(slots.wk));
        da += &dv.dot(&w.mat(slots.wv));
        let din = {
            let (g, b) = split_two(grad, layout, slots.ln1_gain, slots.ln1_bias);
            layer_norm_backward(da.view(), &bc.ln1, w.vec(slots.ln1_gain), g, b)
        };
        dx += &din;
    }

    // Embeddings.
    {
        let mut dtok = grad_mat(layout, grad, layout.tok_embed);
        for (t, &id) in cache.tokens.iter().enumerate() {
            let mut row = dtok.row_mut(id as usize);
            row += &dx.row(t);
        }
    }
    let mut dpos = grad_mat(layout, grad, layout.pos_embed);
    for t in 0..seq {
        let mut row = dpos.row_mut(t);
        row += &dx.row(t);
    }
}

/// Two disjoint mutable vector views into the gradient buffer. `first` must
/// precede `second` in the layout.
fn split_two<'g, T: Real>(
    grad: &'g mut [T],
    layout: &Layout,
    first: usize,
    second: usize,
) -> (ArrayViewMut1<'g, T>, ArrayViewMut1<'g, T>) {
    let a = layout.tensors[first].range();
    let b = layout.tensors[second].range();
    assert!(a.end <= b.start, "split_two requires ordered, disjoint slots");
    let (lo, hi) = grad.split_at_mut(b.start);
    (
        ArrayViewMut1::from(&mut lo[a]),
        ArrayViewMut1::from(&mut hi[..b.end - b.start]),
    )
}
