use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::vocab::{CLS, PAD, SEP};
use super::{Architecture, AttentionInput};
use crate::error::{Error, Result};
use crate::params::ParamSet;

const LN_EPS: f64 = 1e-5;
const EMB: &str = "attn/embeddings";

pub(super) fn param_shapes(arch: &Architecture) -> BTreeMap<String, Vec<usize>> {
    let a = &arch.config.attention;
    let d = a.model_dimension;
    let f = a.feedforward_dimension();
    let mut shapes = BTreeMap::new();
    shapes.insert(format!("{EMB}/token"), vec![arch.dims.vocabulary, d]);
    shapes.insert(format!("{EMB}/position"), vec![a.max_sequence_length, d]);
    shapes.insert(format!("{EMB}/segment"), vec![2, d]);
    shapes.insert(format!("{EMB}/ln_gamma"), vec![d]);
    shapes.insert(format!("{EMB}/ln_beta"), vec![d]);
    for l in 0..a.layers {
        let p = format!("attn/layer{l}");
        shapes.insert(format!("{p}/qkv"), vec![d, 3 * d]);
        shapes.insert(format!("{p}/qkv_b"), vec![3 * d]);
        shapes.insert(format!("{p}/out"), vec![d, d]);
        shapes.insert(format!("{p}/out_b"), vec![d]);
        shapes.insert(format!("{p}/ln1_gamma"), vec![d]);
        shapes.insert(format!("{p}/ln1_beta"), vec![d]);
        shapes.insert(format!("{p}/ff1"), vec![d, f]);
        shapes.insert(format!("{p}/ff1_b"), vec![f]);
        shapes.insert(format!("{p}/ff2"), vec![f, d]);
        shapes.insert(format!("{p}/ff2_b"), vec![d]);
        shapes.insert(format!("{p}/ln2_gamma"), vec![d]);
        shapes.insert(format!("{p}/ln2_beta"), vec![d]);
    }
    shapes.insert("head/W_final".into(), vec![d, arch.config.num_classes]);
    shapes.insert("head/b_final".into(), vec![arch.config.num_classes]);
    shapes
}

/// A framed token sequence: ids, segment ids and an attention mask
/// (`false` marks padding).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedSequence {
    pub ids: Vec<usize>,
    pub segments: Vec<usize>,
    pub mask: Vec<bool>,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Appends masked `[PAD]` positions up to `len`.
    pub fn pad_to(&mut self, len: usize) {
        while self.ids.len() < len {
            self.ids.push(PAD);
            self.segments.push(0);
            self.mask.push(false);
        }
    }
}

/// `[CLS] topic [SEP] sentence [SEP]` with segment 0 up to and including the
/// first `[SEP]`; topic-blind models get `[CLS] sentence [SEP]` in segment 0.
pub fn build_sequence(
    topic: &[usize],
    sentence: &[usize],
    use_topic: bool,
    max_len: usize,
) -> Result<EncodedSequence> {
    let topic_len = if use_topic { topic.len() } else { 0 };
    let framing = if use_topic { 3 } else { 2 };
    if topic_len + sentence.len() + framing > max_len {
        return Err(Error::SequenceTooLong {
            topic: topic_len,
            sentence: sentence.len(),
            limit: max_len,
        });
    }
    let mut ids = Vec::with_capacity(topic_len + sentence.len() + framing);
    let mut segments = Vec::with_capacity(ids.capacity());
    ids.push(CLS);
    if use_topic {
        ids.extend_from_slice(topic);
        ids.push(SEP);
        segments.resize(ids.len(), 0);
        ids.extend_from_slice(sentence);
        ids.push(SEP);
        segments.resize(ids.len(), 1);
    } else {
        ids.extend_from_slice(sentence);
        ids.push(SEP);
        segments.resize(ids.len(), 0);
    }
    let mask = vec![true; ids.len()];
    Ok(EncodedSequence {
        ids,
        segments,
        mask,
    })
}

pub(super) fn sequence_for(arch: &Architecture, input: &AttentionInput) -> Result<EncodedSequence> {
    build_sequence(
        &input.topic,
        &input.sentence,
        arch.config.use_topic,
        arch.config.attention.max_sequence_length,
    )
}

struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn layer_norm(
    x: &Array2<f64>,
    gamma: ArrayView1<'_, f64>,
    beta: ArrayView1<'_, f64>,
) -> (Array2<f64>, LayerNormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.dot(&row) / d;
        *s = 1.0 / (var + LN_EPS).sqrt();
        row *= *s;
    }
    let y = &xhat * &gamma + beta;
    (y, LayerNormCache { xhat, inv_std })
}

/// Returns dx and accumulates gamma/beta gradients.
fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LayerNormCache,
    gamma: ArrayView1<'_, f64>,
    grad: &mut ParamSet,
    gamma_name: &str,
    beta_name: &str,
) -> Array2<f64> {
    {
        let mut gg = grad.vector_mut(gamma_name);
        gg += &(dy * &cache.xhat).sum_axis(Axis(0));
    }
    {
        let mut gb = grad.vector_mut(beta_name);
        gb += &dy.sum_axis(Axis(0));
    }
    let d = dy.ncols() as f64;
    let dxhat = dy * &gamma;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dxh = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let sum = dxh.sum();
        let dot = dxh.dot(&xh);
        let scale = cache.inv_std[i] / d;
        let mut out = dx.row_mut(i);
        out.assign(&((&dxh * d - sum - &(&xh * dot)) * scale));
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

struct LayerCache {
    input: Array2<f64>,
    qkv: Array2<f64>,
    probs: Vec<Array2<f64>>,
    context: Array2<f64>,
    ln1: LayerNormCache,
    x1: Array2<f64>,
    pre_act: Array2<f64>,
    act: Array2<f64>,
    ln2: LayerNormCache,
}

pub(super) struct Cache {
    ln0: LayerNormCache,
    layers: Vec<LayerCache>,
    cls: Array1<f64>,
}

fn self_attention(
    qkv: &Array2<f64>,
    mask: &[bool],
    heads: usize,
    d: usize,
) -> (Vec<Array2<f64>>, Array2<f64>) {
    let n = qkv.nrows();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut probs = Vec::with_capacity(heads);
    let mut context = Array2::zeros((n, d));
    for h in 0..heads {
        let q = qkv.slice(s![.., h * dh..(h + 1) * dh]);
        let k = qkv.slice(s![.., d + h * dh..d + (h + 1) * dh]);
        let v = qkv.slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
        let mut p = q.dot(&k.t()) * scale;
        for mut row in p.rows_mut() {
            let max = row
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(x, _)| *x)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (x, &m) in row.iter_mut().zip(mask) {
                *x = if m { (*x - max).exp() } else { 0.0 };
                sum += *x;
            }
            row /= sum;
        }
        context
            .slice_mut(s![.., h * dh..(h + 1) * dh])
            .assign(&p.dot(&v));
        probs.push(p);
    }
    (probs, context)
}

fn check_sequence(arch: &Architecture, seq: &EncodedSequence) -> Result<()> {
    let a = &arch.config.attention;
    if seq.is_empty() || !seq.mask.first().copied().unwrap_or(false) {
        return Err(Error::invalid("sequence must start with an unmasked [CLS]"));
    }
    if seq.segments.len() != seq.len() || seq.mask.len() != seq.len() {
        return Err(Error::invalid("ids, segments and mask differ in length"));
    }
    if seq.len() > a.max_sequence_length {
        return Err(Error::invalid(format!(
            "sequence of {} positions exceeds max_sequence_length {}",
            seq.len(),
            a.max_sequence_length
        )));
    }
    if let Some(&id) = seq.ids.iter().find(|&&id| id >= arch.dims.vocabulary) {
        return Err(Error::invalid(format!("token id {id} outside vocabulary")));
    }
    if seq.segments.iter().any(|&s| s > 1) {
        return Err(Error::invalid("segment ids must be 0 or 1"));
    }
    Ok(())
}

pub(super) fn forward(
    arch: &Architecture,
    params: &ParamSet,
    seq: &EncodedSequence,
) -> Result<(Array1<f64>, Cache)> {
    check_sequence(arch, seq)?;
    let a = &arch.config.attention;
    let d = a.model_dimension;
    let n = seq.len();

    let tok = params.mat(&format!("{EMB}/token"));
    let pos = params.mat(&format!("{EMB}/position"));
    let seg = params.mat(&format!("{EMB}/segment"));
    let mut x0 = Array2::zeros((n, d));
    for (i, mut row) in x0.rows_mut().into_iter().enumerate() {
        row.assign(&(&tok.row(seq.ids[i]) + &pos.row(i) + seg.row(seq.segments[i])));
    }
    let (mut x, ln0) = layer_norm(
        &x0,
        params.vector(&format!("{EMB}/ln_gamma")),
        params.vector(&format!("{EMB}/ln_beta")),
    );

    let mut layers = Vec::with_capacity(a.layers);
    for l in 0..a.layers {
        let p = format!("attn/layer{l}");
        let qkv = x.dot(&params.mat(&format!("{p}/qkv"))) + params.vector(&format!("{p}/qkv_b"));
        let (probs, context) = self_attention(&qkv, &seq.mask, a.heads, d);
        let attn_out =
            context.dot(&params.mat(&format!("{p}/out"))) + params.vector(&format!("{p}/out_b"));
        let (x1, ln1) = layer_norm(
            &(&x + &attn_out),
            params.vector(&format!("{p}/ln1_gamma")),
            params.vector(&format!("{p}/ln1_beta")),
        );
        let pre_act =
            x1.dot(&params.mat(&format!("{p}/ff1"))) + params.vector(&format!("{p}/ff1_b"));
        let act = pre_act.mapv(gelu);
        let ff = act.dot(&params.mat(&format!("{p}/ff2"))) + params.vector(&format!("{p}/ff2_b"));
        let (x2, ln2) = layer_norm(
            &(&x1 + &ff),
            params.vector(&format!("{p}/ln2_gamma")),
            params.vector(&format!("{p}/ln2_beta")),
        );
        layers.push(LayerCache {
            input: std::mem::replace(&mut x, x2),
            qkv,
            probs,
            context,
            ln1,
            x1,
            pre_act,
            act,
            ln2,
        });
    }
    let cls = x.row(0).to_owned();
    let logits = cls.dot(&params.mat("head/W_final")) + params.vector("head/b_final");
    Ok((logits, Cache { ln0, layers, cls }))
}

fn add_mat(grad: &mut ParamSet, name: &str, delta: &Array2<f64>) {
    let mut g = grad.mat_mut(name);
    g += delta;
}

fn add_vec(grad: &mut ParamSet, name: &str, delta: &Array1<f64>) {
    let mut g = grad.vector_mut(name);
    g += delta;
}

fn attention_backward(
    d_context: &Array2<f64>,
    cache: &LayerCache,
    heads: usize,
    d: usize,
) -> Array2<f64> {
    let n = d_context.nrows();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dqkv = Array2::zeros((n, 3 * d));
    for h in 0..heads {
        let q = cache.qkv.slice(s![.., h * dh..(h + 1) * dh]);
        let k = cache.qkv.slice(s![.., d + h * dh..d + (h + 1) * dh]);
        let v = cache
            .qkv
            .slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
        let p = &cache.probs[h];
        let dc = d_context.slice(s![.., h * dh..(h + 1) * dh]);
        let dp = dc.dot(&v.t());
        let dv = p.t().dot(&dc);
        // softmax backward, row-wise; masked entries have p = 0
        let row_dot = (&dp * p).sum_axis(Axis(1)).insert_axis(Axis(1));
        let ds = (&dp - &row_dot) * p * scale;
        let dq = ds.dot(&k);
        let dk = ds.t().dot(&q);
        dqkv.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&dq);
        dqkv.slice_mut(s![.., d + h * dh..d + (h + 1) * dh])
            .assign(&dk);
        dqkv.slice_mut(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh])
            .assign(&dv);
    }
    dqkv
}

pub(super) fn backward(
    arch: &Architecture,
    params: &ParamSet,
    seq: &EncodedSequence,
    cache: &Cache,
    dlogits: ArrayView1<'_, f64>,
    grad: &mut ParamSet,
) {
    let a = &arch.config.attention;
    let d = a.model_dimension;
    let n = seq.len();

    let w_final = params.mat("head/W_final");
    {
        let mut gw = grad.mat_mut("head/W_final");
        for (mut row, &c) in gw.rows_mut().into_iter().zip(&cache.cls) {
            row.scaled_add(c, &dlogits);
        }
    }
    add_vec(grad, "head/b_final", &dlogits.to_owned());

    let mut dx = Array2::<f64>::zeros((n, d));
    dx.row_mut(0).assign(&w_final.dot(&dlogits));

    for (l, lc) in cache.layers.iter().enumerate().rev() {
        let p = format!("attn/layer{l}");
        let ds2 = layer_norm_backward(
            &dx,
            &lc.ln2,
            params.vector(&format!("{p}/ln2_gamma")),
            grad,
            &format!("{p}/ln2_gamma"),
            &format!("{p}/ln2_beta"),
        );
        // feed-forward
        let ff2 = params.mat(&format!("{p}/ff2"));
        add_mat(grad, &format!("{p}/ff2"), &lc.act.t().dot(&ds2));
        add_vec(grad, &format!("{p}/ff2_b"), &ds2.sum_axis(Axis(0)));
        let d_act = ds2.dot(&ff2.t());
        let d_pre = &d_act * &lc.pre_act.mapv(gelu_grad);
        let ff1 = params.mat(&format!("{p}/ff1"));
        add_mat(grad, &format!("{p}/ff1"), &lc.x1.t().dot(&d_pre));
        add_vec(grad, &format!("{p}/ff1_b"), &d_pre.sum_axis(Axis(0)));
        let dx1 = &ds2 + &d_pre.dot(&ff1.t());

        let ds1 = layer_norm_backward(
            &dx1,
            &lc.ln1,
            params.vector(&format!("{p}/ln1_gamma")),
            grad,
            &format!("{p}/ln1_gamma"),
            &format!("{p}/ln1_beta"),
        );
        // attention output projection
        let out = params.mat(&format!("{p}/out"));
        add_mat(grad, &format!("{p}/out"), &lc.context.t().dot(&ds1));
        add_vec(grad, &format!("{p}/out_b"), &ds1.sum_axis(Axis(0)));
        let d_context = ds1.dot(&out.t());
        let dqkv = attention_backward(&d_context, lc, a.heads, d);
        let qkv = params.mat(&format!("{p}/qkv"));
        add_mat(grad, &format!("{p}/qkv"), &lc.input.t().dot(&dqkv));
        add_vec(grad, &format!("{p}/qkv_b"), &dqkv.sum_axis(Axis(0)));
        dx = &ds1 + &dqkv.dot(&qkv.t());
    }

    let dx0 = layer_norm_backward(
        &dx,
        &cache.ln0,
        params.vector(&format!("{EMB}/ln_gamma")),
        grad,
        &format!("{EMB}/ln_gamma"),
        &format!("{EMB}/ln_beta"),
    );
    scatter_rows(grad, &format!("{EMB}/token"), &seq.ids, dx0.view());
    scatter_rows(
        grad,
        &format!("{EMB}/position"),
        &(0..n).collect::<Vec<_>>(),
        dx0.view(),
    );
    scatter_rows(grad, &format!("{EMB}/segment"), &seq.segments, dx0.view());
}

fn scatter_rows(grad: &mut ParamSet, name: &str, rows: &[usize], delta: ArrayView2<'_, f64>) {
    let mut g = grad.mat_mut(name);
    for (i, &r) in rows.iter().enumerate() {
        let mut row = g.row_mut(r);
        row += &delta.row(i);
    }
}
