use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, EmbeddedSequence, Mat};
use crate::params::{join, ParamGroups};
use crate::rng::{self, ChaCha8Rng};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Row-wise `softmax(Q Kᵀ / √d_k)` with masked key columns excluded.
pub fn attention_weights(q: &Mat, k: &Mat, mask: &[bool]) -> Result<Mat> {
    if q.cols() != k.cols() {
        return Err(Error::shape("attention key dim", q.cols(), k.cols()));
    }
    if mask.len() != k.rows() {
        return Err(Error::shape("attention mask", k.rows(), mask.len()));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::AllMasked);
    }
    let scale = 1.0 / math::sqrt(q.cols() as f64);
    let mut scores = q.matmul_t(k);
    for i in 0..scores.rows() {
        let row = scores.row_mut(i);
        for (s, &valid) in row.iter_mut().zip(mask) {
            *s = if valid { *s * scale } else { f64::NEG_INFINITY };
        }
        let p = math::softmax(row);
        row.copy_from_slice(&p);
    }
    Ok(scores)
}

/// Scaled dot-product attention, `softmax(Q Kᵀ / √d_k) V`, with PAD key
/// positions (`mask[j] == false`) excluded.
pub fn attention(q: &Mat, k: &Mat, v: &Mat, mask: &[bool]) -> Result<Mat> {
    if v.rows() != k.rows() {
        return Err(Error::shape("attention value rows", k.rows(), v.rows()));
    }
    Ok(attention_weights(q, k, mask)?.matmul(v))
}

/// `γ ⊙ (x − mean) / √(var + ε) + β` with population variance.
pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Vec<f64> {
    layer_norm_cached(x, gain, bias, eps).0
}

/// Also returns the normalized vector and `1/√(var + ε)` for the backward pass.
fn layer_norm_cached(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> (Vec<f64>, Vec<f64>, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / math::sqrt(var + eps);
    let xhat: Vec<f64> = x.iter().map(|v| (v - mean) * inv).collect();
    let y = xhat.iter().zip(gain).zip(bias).map(|((h, g), b)| g * h + b).collect();
    (y, xhat, inv)
}

fn layer_norm_backward(dy: &[f64], xhat: &[f64], inv: f64, gain: &[f64], dgain: &mut [f64], dbias: &mut [f64]) -> Vec<f64> {
    let n = dy.len() as f64;
    let dxhat: Vec<f64> = dy.iter().zip(gain).map(|(d, g)| d * g).collect();
    for i in 0..dy.len() {
        dgain[i] += dy[i] * xhat[i];
        dbias[i] += dy[i];
    }
    let sum: f64 = dxhat.iter().sum();
    let sum_x: f64 = math::dot(&dxhat, xhat);
    dxhat
        .iter()
        .zip(xhat)
        .map(|(d, h)| inv / n * (n * d - sum - h * sum_x))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerLayer {
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Mat,
    /// `d_ff × d_model`
    pub w1: Mat,
    pub b1: Vec<f64>,
    /// `d_model × d_ff`
    pub w2: Mat,
    pub b2: Vec<f64>,
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
}

impl TransformerLayer {
    fn init(d: usize, d_ff: usize, rng: &mut ChaCha8Rng) -> Self {
        let mat = |rng: &mut ChaCha8Rng, rows: usize, cols: usize| {
            Mat::from_vec(rows, cols, rng::uniform_vec(rng, rows * cols, 1.0 / math::sqrt(cols as f64))).unwrap()
        };
        TransformerLayer {
            wq: mat(rng, d, d),
            wk: mat(rng, d, d),
            wv: mat(rng, d, d),
            wo: mat(rng, d, d),
            w1: mat(rng, d_ff, d),
            b1: vec![0.0; d_ff],
            w2: mat(rng, d, d_ff),
            b2: vec![0.0; d],
            ln1_gain: vec![1.0; d],
            ln1_bias: vec![0.0; d],
            ln2_gain: vec![1.0; d],
            ln2_bias: vec![0.0; d],
        }
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (name, m) in [("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv), ("wo", &self.wo), ("w1", &self.w1)] {
            f(&join(prefix, name), &[m.rows(), m.cols()], m.as_slice());
        }
        f(&join(prefix, "b1"), &[self.b1.len()], &self.b1);
        f(&join(prefix, "w2"), &[self.w2.rows(), self.w2.cols()], self.w2.as_slice());
        for (name, v) in [
            ("b2", &self.b2),
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
        ] {
            f(&join(prefix, name), &[v.len()], v);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        for (name, m) in [
            ("wq", &mut self.wq),
            ("wk", &mut self.wk),
            ("wv", &mut self.wv),
            ("wo", &mut self.wo),
            ("w1", &mut self.w1),
        ] {
            let shape = [m.rows(), m.cols()];
            f(&join(prefix, name), &shape, m.as_mut_slice());
        }
        let n = [self.b1.len()];
        f(&join(prefix, "b1"), &n, &mut self.b1);
        let shape = [self.w2.rows(), self.w2.cols()];
        f(&join(prefix, "w2"), &shape, self.w2.as_mut_slice());
        for (name, v) in [
            ("b2", &mut self.b2),
            ("ln1_gain", &mut self.ln1_gain),
            ("ln1_bias", &mut self.ln1_bias),
            ("ln2_gain", &mut self.ln2_gain),
            ("ln2_bias", &mut self.ln2_bias),
        ] {
            let n = [v.len()];
            f(&join(prefix, name), &n, v);
        }
    }
}

/// Optional `D → d_model` input projection with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct InputProjection {
    pub weight: Mat,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerEncoderParams {
    pub input_dim: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub projection: Option<InputProjection>,
    /// `max_len × d_model`
    pub positional: Mat,
    pub layers: Vec<TransformerLayer>,
}

impl TransformerEncoderParams {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        input_dim: usize,
        d_model: usize,
        n_heads: usize,
        n_layers: usize,
        d_ff: usize,
        max_len: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if input_dim == 0 || d_model == 0 || n_heads == 0 || d_ff == 0 || max_len == 0 {
            return Err(Error::InvalidConfig("transformer dims, heads and max_len must be ≥ 1".into()));
        }
        if d_model % n_heads != 0 {
            return Err(Error::InvalidConfig(format!("d_model {d_model} is not divisible by {n_heads} heads")));
        }
        let projection = (input_dim != d_model).then(|| InputProjection {
            weight: Mat::from_vec(
                d_model,
                input_dim,
                rng::uniform_vec(rng, d_model * input_dim, 1.0 / math::sqrt(input_dim as f64)),
            )
            .unwrap(),
            bias: vec![0.0; d_model],
        });
        let positional = Mat::from_vec(max_len, d_model, rng::uniform_vec(rng, max_len * d_model, 0.1)).unwrap();
        let layers = (0..n_layers).map(|_| TransformerLayer::init(d_model, d_ff, rng)).collect();
        Ok(TransformerEncoderParams {
            input_dim,
            d_model,
            n_heads,
            d_ff,
            projection,
            positional,
            layers,
        })
    }

    pub fn max_len(&self) -> usize {
        self.positional.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.d_model
    }
}

impl ParamGroups for TransformerEncoderParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        if let Some(p) = &self.projection {
            f(&join(prefix, "proj.w"), &[p.weight.rows(), p.weight.cols()], p.weight.as_slice());
            f(&join(prefix, "proj.b"), &[p.bias.len()], &p.bias);
        }
        f(&join(prefix, "positional"), &[self.positional.rows(), self.positional.cols()], self.positional.as_slice());
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("layer{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        if let Some(p) = &mut self.projection {
            let shape = [p.weight.rows(), p.weight.cols()];
            f(&join(prefix, "proj.w"), &shape, p.weight.as_mut_slice());
            let n = [p.bias.len()];
            f(&join(prefix, "proj.b"), &n, &mut p.bias);
        }
        let shape = [self.positional.rows(), self.positional.cols()];
        f(&join(prefix, "positional"), &shape, self.positional.as_mut_slice());
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("layer{i}")), f);
        }
    }
}

fn columns(m: &Mat, start: usize, width: usize) -> Mat {
    let rows: Vec<&[f64]> = (0..m.rows()).map(|i| &m.row(i)[start..start + width]).collect();
    Mat::from_rows(&rows).unwrap_or_else(|_| Mat::zeros(0, width))
}

fn add_columns(dst: &mut Mat, src: &Mat, start: usize) {
    for i in 0..src.rows() {
        math::add_acc(&mut dst.row_mut(i)[start..start + src.cols()], src.row(i));
    }
}

fn add_bias(m: &mut Mat, b: &[f64]) {
    for i in 0..m.rows() {
        math::add_acc(m.row_mut(i), b);
    }
}

fn column_sums_acc(m: &Mat, acc: &mut [f64]) {
    for i in 0..m.rows() {
        math::add_acc(acc, m.row(i));
    }
}

struct LayerCache {
    x: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    probs: Vec<Mat>,
    concat: Mat,
    ln1_xhat: Mat,
    ln1_inv: Vec<f64>,
    y1: Mat,
    ff_pre: Mat,
    ff_act: Mat,
    ln2_xhat: Mat,
    ln2_inv: Vec<f64>,
}

fn layer_forward(layer: &TransformerLayer, n_heads: usize, x: &Mat) -> (Mat, LayerCache) {
    let (t, d) = (x.rows(), x.cols());
    let dk = d / n_heads;
    let q = x.matmul_t(&layer.wq);
    let k = x.matmul_t(&layer.wk);
    let v = x.matmul_t(&layer.wv);
    let mask = vec![true; t];
    let mut concat = Mat::zeros(t, d);
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (qh, kh, vh) = (columns(&q, h * dk, dk), columns(&k, h * dk, dk), columns(&v, h * dk, dk));
        let p = attention_weights(&qh, &kh, &mask).expect("valid rows are never all masked");
        add_columns(&mut concat, &p.matmul(&vh), h * dk);
        probs.push(p);
    }
    let mut r1 = concat.matmul_t(&layer.wo);
    r1.add_assign(x);
    let mut y1 = Mat::zeros(t, d);
    let mut ln1_xhat = Mat::zeros(t, d);
    let mut ln1_inv = vec![0.0; t];
    for i in 0..t {
        let (y, xhat, inv) = layer_norm_cached(r1.row(i), &layer.ln1_gain, &layer.ln1_bias, LAYER_NORM_EPS);
        y1.row_mut(i).copy_from_slice(&y);
        ln1_xhat.row_mut(i).copy_from_slice(&xhat);
        ln1_inv[i] = inv;
    }
    let mut ff_pre = y1.matmul_t(&layer.w1);
    add_bias(&mut ff_pre, &layer.b1);
    let mut ff_act = ff_pre.clone();
    ff_act.as_mut_slice().iter_mut().for_each(|a| *a = a.max(0.0));
    let mut r2 = ff_act.matmul_t(&layer.w2);
    add_bias(&mut r2, &layer.b2);
    r2.add_assign(&y1);
    let mut out = Mat::zeros(t, d);
    let mut ln2_xhat = Mat::zeros(t, d);
    let mut ln2_inv = vec![0.0; t];
    for i in 0..t {
        let (y, xhat, inv) = layer_norm_cached(r2.row(i), &layer.ln2_gain, &layer.ln2_bias, LAYER_NORM_EPS);
        out.row_mut(i).copy_from_slice(&y);
        ln2_xhat.row_mut(i).copy_from_slice(&xhat);
        ln2_inv[i] = inv;
    }
    let cache = LayerCache {
        x: x.clone(),
        q,
        k,
        v,
        probs,
        concat,
        ln1_xhat,
        ln1_inv,
        y1,
        ff_pre,
        ff_act,
        ln2_xhat,
        ln2_inv,
    };
    (out, cache)
}

fn layer_backward(layer: &TransformerLayer, n_heads: usize, c: &LayerCache, d_out: &Mat, g: &mut TransformerLayer) -> Mat {
    let (t, d) = (c.x.rows(), c.x.cols());
    let dk = d / n_heads;

    let mut d_r2 = Mat::zeros(t, d);
    for i in 0..t {
        let dx = layer_norm_backward(d_out.row(i), c.ln2_xhat.row(i), c.ln2_inv[i], &layer.ln2_gain, &mut g.ln2_gain, &mut g.ln2_bias);
        d_r2.row_mut(i).copy_from_slice(&dx);
    }
    // r2 = relu(y1 W1ᵀ + b1) W2ᵀ + b2 + y1
    column_sums_acc(&d_r2, &mut g.b2);
    d_r2.t_matmul_acc(&c.ff_act, g.w2.as_mut_slice());
    let mut d_ff = d_r2.matmul(&layer.w2);
    for (dv, &pre) in d_ff.as_mut_slice().iter_mut().zip(c.ff_pre.as_slice()) {
        if pre <= 0.0 {
            *dv = 0.0;
        }
    }
    column_sums_acc(&d_ff, &mut g.b1);
    d_ff.t_matmul_acc(&c.y1, g.w1.as_mut_slice());
    let mut d_y1 = d_ff.matmul(&layer.w1);
    d_y1.add_assign(&d_r2);

    let mut d_r1 = Mat::zeros(t, d);
    for i in 0..t {
        let dx = layer_norm_backward(d_y1.row(i), c.ln1_xhat.row(i), c.ln1_inv[i], &layer.ln1_gain, &mut g.ln1_gain, &mut g.ln1_bias);
        d_r1.row_mut(i).copy_from_slice(&dx);
    }
    // r1 = concat Woᵀ + x
    d_r1.t_matmul_acc(&c.concat, g.wo.as_mut_slice());
    let d_concat = d_r1.matmul(&layer.wo);
    let mut dq = Mat::zeros(t, d);
    let mut dkm = Mat::zeros(t, d);
    let mut dv = Mat::zeros(t, d);
    let scale = 1.0 / math::sqrt(dk as f64);
    for h in 0..n_heads {
        let p = &c.probs[h];
        let (qh, kh, vh) = (columns(&c.q, h * dk, dk), columns(&c.k, h * dk, dk), columns(&c.v, h * dk, dk));
        let d_oh = columns(&d_concat, h * dk, dk);
        let dp = d_oh.matmul_t(&vh);
        let mut dvh = vec![0.0; t * dk];
        p.t_matmul_acc(&d_oh, &mut dvh);
        let mut ds = Mat::zeros(t, t);
        for i in 0..t {
            let row = math::softmax_backward(p.row(i), dp.row(i));
            for (o, v) in ds.row_mut(i).iter_mut().zip(row) {
                *o = v * scale;
            }
        }
        add_columns(&mut dq, &ds.matmul(&kh), h * dk);
        let mut dkh = vec![0.0; t * dk];
        ds.t_matmul_acc(&qh, &mut dkh);
        add_columns(&mut dkm, &Mat::from_vec(t, dk, dkh).unwrap(), h * dk);
        add_columns(&mut dv, &Mat::from_vec(t, dk, dvh).unwrap(), h * dk);
    }
    dq.t_matmul_acc(&c.x, g.wq.as_mut_slice());
    dkm.t_matmul_acc(&c.x, g.wk.as_mut_slice());
    dv.t_matmul_acc(&c.x, g.wv.as_mut_slice());
    let mut dx = d_r1;
    dx.add_assign(&dq.matmul(&layer.wq));
    dx.add_assign(&dkm.matmul(&layer.wk));
    dx.add_assign(&dv.matmul(&layer.wv));
    dx
}

fn check_input(params: &TransformerEncoderParams, seq: &EmbeddedSequence) -> Result<()> {
    if seq.valid_length == 0 {
        return Err(Error::Empty("transformer input (valid_length = 0)"));
    }
    if seq.dim() != params.input_dim {
        return Err(Error::shape("transformer input dim", params.input_dim, seq.dim()));
    }
    if seq.len() > params.max_len() {
        return Err(Error::SequenceTooLong {
            len: seq.len(),
            max: params.max_len(),
        });
    }
    Ok(())
}

struct EncodeCache {
    input: Mat,
    layers: Vec<LayerCache>,
}

/// Runs only over the valid rows: PAD keys are masked out of attention and
/// PAD rows are excluded from pooling, so dropping them up front is exact.
fn encode_cached(params: &TransformerEncoderParams, seq: &EmbeddedSequence) -> Result<(Vec<f64>, EncodeCache)> {
    check_input(params, seq)?;
    let v = seq.valid_length;
    let input = seq.values.top_rows(v);
    let mut x = match &params.projection {
        Some(p) => {
            let mut x = input.matmul_t(&p.weight);
            add_bias(&mut x, &p.bias);
            x
        }
        None => input.clone(),
    };
    x.add_assign(&params.positional.top_rows(v));
    let mut caches = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (out, cache) = layer_forward(layer, params.n_heads, &x);
        caches.push(cache);
        x = out;
    }
    let mut pooled = vec![0.0; params.d_model];
    column_sums_acc(&x, &mut pooled);
    pooled.iter_mut().for_each(|p| *p /= v as f64);
    Ok((pooled, EncodeCache { input, layers: caches }))
}

/// Input projection (when `D ≠ d_model`), learned positions, post-norm
/// encoder layers and mean pooling over the valid positions.
pub fn transformer_encode(params: &TransformerEncoderParams, seq: &EmbeddedSequence) -> Result<Vec<f64>> {
    encode_cached(params, seq).map(|(out, _)| out)
}

pub fn transformer_backward(
    params: &TransformerEncoderParams,
    seq: &EmbeddedSequence,
    d_out: &[f64],
    grad: &mut TransformerEncoderParams,
) -> Result<Mat> {
    if d_out.len() != params.d_model {
        return Err(Error::shape("transformer output gradient", params.d_model, d_out.len()));
    }
    let (_, cache) = encode_cached(params, seq)?;
    let v = seq.valid_length;
    let mut dx = Mat::zeros(v, params.d_model);
    for i in 0..v {
        for (o, g) in dx.row_mut(i).iter_mut().zip(d_out) {
            *o = g / v as f64;
        }
    }
    for ((layer, c), g) in params.layers.iter().zip(&cache.layers).zip(grad.layers.iter_mut()).rev() {
        dx = layer_backward(layer, params.n_heads, c, &dx, g);
    }
    for i in 0..v {
        math::add_acc(grad.positional.row_mut(i), dx.row(i));
    }
    let d_input = match (&params.projection, &mut grad.projection) {
        (Some(p), Some(gp)) => {
            column_sums_acc(&dx, &mut gp.bias);
            dx.t_matmul_acc(&cache.input, gp.weight.as_mut_slice());
            dx.matmul(&p.weight)
        }
        _ => dx,
    };
    Ok(d_input.resized_rows(seq.len()))
}
