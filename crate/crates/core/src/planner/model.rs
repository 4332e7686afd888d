//! Post-norm transformer encoder with hand-written backpropagation.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;
use rand::Rng;

use crate::song::Axis;

use super::context::{Context, TokenVocab, COND_DIM};
use super::PlannerConfig;

pub trait Scalar: Float + Sum + Send + Sync + Debug + Default + 'static {}
impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
fn c<T: Scalar>(x: f64) -> T {
    T::from(x).unwrap()
}

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    fn zeros(name: String, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { name, shape, data: vec![T::zero(); n] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct BlockIds {
    wq: usize,
    bq: usize,
    wk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln1_g: usize,
    ln1_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    ln2_g: usize,
    ln2_b: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    embed: Vec<usize>,
    blocks: Vec<BlockIds>,
    wz: usize,
    heads: Vec<(usize, usize)>,
}

/// Six categorical distributions, one per style axis.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SlotDistributions(pub [Vec<f64>; 6]);

impl SlotDistributions {
    pub fn axis(&self, a: Axis) -> &[f64] {
        &self.0[a.index()]
    }

    pub fn uniform() -> Self {
        SlotDistributions(Axis::ALL.map(|a| vec![1.0 / a.size() as f64; a.size()]))
    }

    pub fn argmax(&self) -> [u8; 6] {
        let mut out = [0u8; 6];
        for (j, d) in self.0.iter().enumerate() {
            out[j] = (0..d.len()).fold(0, |best, i| if d[i] > d[best] { i } else { best }) as u8;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerModel<T> {
    pub config: PlannerConfig,
    pub vocab: TokenVocab,
    pub params: Vec<Tensor<T>>,
    layout: Layout,
}

fn build_layout<T: Scalar>(cfg: &PlannerConfig, vocab: &TokenVocab) -> (Layout, Vec<Tensor<T>>) {
    let d = cfg.d_model;
    let mut params = Vec::new();
    let mut add = |name: String, shape: Vec<usize>| {
        params.push(Tensor::zeros(name, shape));
        params.len() - 1
    };
    let embed = vocab.sizes.iter().map(|(f, n)| add(format!("embed.{f:?}"), vec![*n, d])).collect();
    let blocks = (0..cfg.layers)
        .map(|l| {
            let mut p = |s: &str, shape: Vec<usize>| add(format!("block{l}.{s}"), shape);
            BlockIds {
                wq: p("wq", vec![d, d]),
                bq: p("bq", vec![d]),
                wk: p("wk", vec![d, d]),
                wv: p("wv", vec![d, d]),
                bv: p("bv", vec![d]),
                wo: p("wo", vec![d, d]),
                bo: p("bo", vec![d]),
                ln1_g: p("ln1.gamma", vec![d]),
                ln1_b: p("ln1.beta", vec![d]),
                w1: p("w1", vec![d, cfg.d_ff]),
                b1: p("b1", vec![cfg.d_ff]),
                w2: p("w2", vec![cfg.d_ff, d]),
                b2: p("b2", vec![d]),
                ln2_g: p("ln2.gamma", vec![d]),
                ln2_b: p("ln2.beta", vec![d]),
            }
        })
        .collect();
    let wz = add("wz".into(), vec![COND_DIM, d]);
    let heads = Axis::ALL
        .iter()
        .map(|a| (add(format!("head.{}.w", a.name()), vec![d, a.size()]), add(format!("head.{}.b", a.name()), vec![a.size()])))
        .collect();
    (Layout { embed, blocks, wz, heads }, params)
}

/// Sinusoidal position code.
fn position_code<T: Scalar>(pos: usize, d: usize, out: &mut [T]) {
    for i in 0..d {
        let k = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * k / d as f64);
        out[i] = c(if i % 2 == 0 { angle.sin() } else { angle.cos() });
    }
}

/// y[n×m] = x[n×k] · w[k×m] + b
fn linear<T: Scalar>(x: &[T], n: usize, k: usize, w: &[T], b: Option<&[T]>, m: usize) -> Vec<T> {
    let mut y = vec![T::zero(); n * m];
    for r in 0..n {
        let yr = &mut y[r * m..(r + 1) * m];
        if let Some(b) = b {
            yr.copy_from_slice(b);
        }
        let xr = &x[r * k..(r + 1) * k];
        for (i, xv) in xr.iter().enumerate() {
            if xv.is_zero() {
                continue;
            }
            let wr = &w[i * m..(i + 1) * m];
            for (yv, wv) in yr.iter_mut().zip(wr) {
                *yv = *yv + *xv * *wv;
            }
        }
    }
    y
}

/// Accumulates weight and bias gradients and returns dx.
#[allow(clippy::too_many_arguments)]
fn linear_back<T: Scalar>(x: &[T], n: usize, k: usize, w: &[T], m: usize, gy: &[T], gw: &mut [T], gb: Option<&mut [T]>) -> Vec<T> {
    let mut gx = vec![T::zero(); n * k];
    for r in 0..n {
        let gyr = &gy[r * m..(r + 1) * m];
        let xr = &x[r * k..(r + 1) * k];
        let gxr = &mut gx[r * k..(r + 1) * k];
        for i in 0..k {
            let wr = &w[i * m..(i + 1) * m];
            let gwr = &mut gw[i * m..(i + 1) * m];
            let mut acc = T::zero();
            let xv = xr[i];
            for j in 0..m {
                acc = acc + gyr[j] * wr[j];
                gwr[j] = gwr[j] + xv * gyr[j];
            }
            gxr[i] = acc;
        }
    }
    if let Some(gb) = gb {
        for r in 0..n {
            for j in 0..m {
                gb[j] = gb[j] + gy[r * m + j];
            }
        }
    }
    gx
}

struct LnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

fn layer_norm<T: Scalar>(x: &[T], n: usize, d: usize, g: &[T], b: &[T]) -> (Vec<T>, LnCache<T>) {
    let mut y = vec![T::zero(); n * d];
    let mut xhat = vec![T::zero(); n * d];
    let mut inv_std = vec![T::zero(); n];
    let dn: T = c(d as f64);
    for r in 0..n {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().copied().sum::<T>() / dn;
        let var = xr.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / dn;
        let is = T::one() / (var + c(LN_EPS)).sqrt();
        inv_std[r] = is;
        for i in 0..d {
            let h = (xr[i] - mean) * is;
            xhat[r * d + i] = h;
            y[r * d + i] = h * g[i] + b[i];
        }
    }
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_back<T: Scalar>(cache: &LnCache<T>, n: usize, d: usize, g: &[T], gy: &[T], gg: &mut [T], gb: &mut [T]) -> Vec<T> {
    let mut gx = vec![T::zero(); n * d];
    let dn: T = c(d as f64);
    for r in 0..n {
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let gyr = &gy[r * d..(r + 1) * d];
        let mut mean_g = T::zero();
        let mut mean_gx = T::zero();
        for i in 0..d {
            gg[i] = gg[i] + gyr[i] * xh[i];
            gb[i] = gb[i] + gyr[i];
            let gh = gyr[i] * g[i];
            mean_g = mean_g + gh;
            mean_gx = mean_gx + gh * xh[i];
        }
        mean_g = mean_g / dn;
        mean_gx = mean_gx / dn;
        for i in 0..d {
            let gh = gyr[i] * g[i];
            gx[r * d + i] = cache.inv_std[r] * (gh - mean_g - xh[i] * mean_gx);
        }
    }
    gx
}

const GELU_C: f64 = 0.7978845608028654;

fn gelu<T: Scalar>(x: T) -> T {
    let inner = c::<T>(GELU_C) * (x + c::<T>(0.044715) * x * x * x);
    c::<T>(0.5) * x * (T::one() + inner.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let inner = c::<T>(GELU_C) * (x + c::<T>(0.044715) * x * x * x);
    let t = inner.tanh();
    c::<T>(0.5) * (T::one() + t)
        + c::<T>(0.5) * x * (T::one() - t * t) * c::<T>(GELU_C) * (T::one() + c::<T>(3.0 * 0.044715) * x * x)
}

struct BlockCache<T> {
    x_in: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<Vec<T>>,
    attn: Vec<T>,
    drop1: Option<Vec<T>>,
    ln1: LnCache<T>,
    x1: Vec<T>,
    f_pre: Vec<T>,
    f_act: Vec<T>,
    drop2: Option<Vec<T>>,
    ln2: LnCache<T>,
}

/// Everything the backward pass needs from one forward pass.
pub struct Cache<T> {
    rows: Vec<usize>,
    span: Vec<usize>,
    blocks: Vec<BlockCache<T>>,
    h_tilde: Vec<T>,
    cond: Vec<T>,
    pub(crate) log_probs: Vec<Vec<T>>,
}

fn dropout_mask<T: Scalar, R: Rng>(n: usize, p: f64, rng: &mut R) -> Vec<T> {
    let keep: T = c(1.0 / (1.0 - p));
    (0..n).map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep }).collect()
}

fn log_softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = m + z.iter().map(|v| (*v - m).exp()).sum::<T>().ln();
    z.iter().map(|v| *v - lse).collect()
}

impl<T: Scalar> PlannerModel<T> {
    /// Zero-initialized model.
    pub fn zeros(config: &PlannerConfig) -> Self {
        let vocab = TokenVocab::new(config);
        let (layout, params) = build_layout(config, &vocab);
        PlannerModel { config: config.clone(), vocab, params, layout }
    }

    pub fn init<R: Rng>(config: &PlannerConfig, rng: &mut R) -> Self {
        let mut m = Self::zeros(config);
        for t in m.params.iter_mut() {
            let name = t.name.as_str();
            let is_bias = name.ends_with(".beta") || name.rsplit('.').next().is_some_and(|s| s.starts_with('b'));
            if name.ends_with(".gamma") {
                t.data.iter_mut().for_each(|v| *v = T::one());
            } else if is_bias {
                continue;
            } else {
                let std = if name.starts_with("embed.") { 0.1 } else { 1.0 / (t.shape[0] as f64).sqrt() };
                let a = std * 3f64.sqrt();
                t.data.iter_mut().for_each(|v| *v = c(rng.gen_range(-a..a)));
            }
        }
        m
    }

    pub(crate) fn from_parts(config: PlannerConfig, params: Vec<Tensor<T>>) -> Result<Self, String> {
        let mut m = Self::zeros(&config);
        if m.params.len() != params.len() {
            return Err(format!("expected {} tensors, found {}", m.params.len(), params.len()));
        }
        for (dst, src) in m.params.iter_mut().zip(params) {
            if dst.name != src.name || dst.shape != src.shape {
                return Err(format!("tensor {} does not match {} {:?}", src.name, dst.name, dst.shape));
            }
            dst.data = src.data;
        }
        Ok(m)
    }

    pub fn cast<U: Scalar>(&self) -> PlannerModel<U> {
        PlannerModel {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            layout: self.layout.clone(),
            params: self
                .params
                .iter()
                .map(|t| Tensor { name: t.name.clone(), shape: t.shape.clone(), data: t.data.iter().map(|v| U::from(*v).unwrap()).collect() })
                .collect(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|t| t.data.len()).sum()
    }

    pub fn zero_grads(&self) -> Vec<Vec<T>> {
        self.params.iter().map(|t| vec![T::zero(); t.data.len()]).collect()
    }

    fn p(&self, i: usize) -> &[T] {
        &self.params[i].data
    }

    pub fn forward(&self, ctx: &Context) -> SlotDistributions {
        let cache = self.forward_cached::<rand::rngs::ThreadRng>(ctx, None);
        SlotDistributions(std::array::from_fn(|j| cache.log_probs[j].iter().map(|v| v.to_f64().unwrap().exp()).collect()))
    }

    /// Runs the encoder over the unmasked tokens. Dropout applies only when an rng is given.
    pub(crate) fn forward_cached<R: Rng>(&self, ctx: &Context, mut rng: Option<&mut R>) -> Cache<T> {
        let d = self.config.d_model;
        let rows: Vec<usize> = (0..ctx.tokens.len()).filter(|i| !ctx.tokens[*i].masked).collect();
        let n = rows.len();
        let span: Vec<usize> = (0..n).filter(|r| ctx.tokens[rows[*r]].target).collect();
        let mut x = vec![T::zero(); n * d];
        let mut pe = vec![T::zero(); d];
        for (r, &ti) in rows.iter().enumerate() {
            let xr = &mut x[r * d..(r + 1) * d];
            position_code(ti, d, &mut pe);
            xr.copy_from_slice(&pe);
            for (f, id) in &ctx.tokens[ti].features {
                let table = self.p(self.layout.embed[*f as usize]);
                let row = &table[*id as usize * d..(*id as usize + 1) * d];
                for (a, b) in xr.iter_mut().zip(row) {
                    *a = *a + *b;
                }
            }
        }
        let p_drop = self.config.dropout;
        let mut blocks = Vec::with_capacity(self.layout.blocks.len());
        for ids in &self.layout.blocks {
            let heads = self.config.heads;
            let dh = d / heads;
            let scale: T = c(1.0 / (dh as f64).sqrt());
            let q = linear(&x, n, d, self.p(ids.wq), Some(self.p(ids.bq)), d);
            let k = linear(&x, n, d, self.p(ids.wk), None, d);
            let v = linear(&x, n, d, self.p(ids.wv), Some(self.p(ids.bv)), d);
            let mut probs = Vec::with_capacity(heads);
            let mut attn = vec![T::zero(); n * d];
            for h in 0..heads {
                let mut pm = vec![T::zero(); n * n];
                for i in 0..n {
                    let qi = &q[i * d + h * dh..i * d + (h + 1) * dh];
                    let row = &mut pm[i * n..(i + 1) * n];
                    for j in 0..n {
                        let kj = &k[j * d + h * dh..j * d + (h + 1) * dh];
                        row[j] = qi.iter().zip(kj).map(|(a, b)| *a * *b).sum::<T>() * scale;
                    }
                    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
                    let mut s = T::zero();
                    for v in row.iter_mut() {
                        *v = (*v - m).exp();
                        s = s + *v;
                    }
                    for v in row.iter_mut() {
                        *v = *v / s;
                    }
                    let out = &mut attn[i * d + h * dh..i * d + (h + 1) * dh];
                    for j in 0..n {
                        let pij = row[j];
                        let vj = &v[j * d + h * dh..j * d + (h + 1) * dh];
                        for (o, vv) in out.iter_mut().zip(vj) {
                            *o = *o + pij * *vv;
                        }
                    }
                }
                probs.push(pm);
            }
            let mut o = linear(&attn, n, d, self.p(ids.wo), Some(self.p(ids.bo)), d);
            let drop1 = rng.as_mut().filter(|_| p_drop > 0.0).map(|r| dropout_mask::<T, _>(n * d, p_drop, *r));
            if let Some(m) = &drop1 {
                o.iter_mut().zip(m).for_each(|(a, b)| *a = *a * *b);
            }
            let r1: Vec<T> = x.iter().zip(&o).map(|(a, b)| *a + *b).collect();
            let (x1, ln1) = layer_norm(&r1, n, d, self.p(ids.ln1_g), self.p(ids.ln1_b));
            let ff = self.config.d_ff;
            let f_pre = linear(&x1, n, d, self.p(ids.w1), Some(self.p(ids.b1)), ff);
            let f_act: Vec<T> = f_pre.iter().map(|v| gelu(*v)).collect();
            let mut f2 = linear(&f_act, n, ff, self.p(ids.w2), Some(self.p(ids.b2)), d);
            let drop2 = rng.as_mut().filter(|_| p_drop > 0.0).map(|r| dropout_mask::<T, _>(n * d, p_drop, *r));
            if let Some(m) = &drop2 {
                f2.iter_mut().zip(m).for_each(|(a, b)| *a = *a * *b);
            }
            let r2: Vec<T> = x1.iter().zip(&f2).map(|(a, b)| *a + *b).collect();
            let (x2, ln2) = layer_norm(&r2, n, d, self.p(ids.ln2_g), self.p(ids.ln2_b));
            blocks.push(BlockCache { x_in: x, q, k, v, probs, attn, drop1, ln1, x1, f_pre, f_act, drop2, ln2 });
            x = x2;
        }
        let mut pooled = vec![T::zero(); d];
        if !span.is_empty() {
            let inv: T = c(1.0 / span.len() as f64);
            for r in &span {
                for i in 0..d {
                    pooled[i] = pooled[i] + x[r * d + i] * inv;
                }
            }
        }
        let cond: Vec<T> = ctx.cond.iter().map(|v| c(*v)).collect();
        let proj = linear(&cond, 1, COND_DIM, self.p(self.layout.wz), None, d);
        let h_tilde: Vec<T> = pooled.iter().zip(&proj).map(|(a, b)| *a + *b).collect();
        let log_probs = self
            .layout
            .heads
            .iter()
            .zip(Axis::ALL)
            .map(|((w, b), a)| log_softmax(&linear(&h_tilde, 1, d, self.p(*w), Some(self.p(*b)), a.size())))
            .collect();
        Cache { rows, span, blocks, h_tilde, cond, log_probs }
    }

    /// Backpropagates gradients of the loss with respect to each head's logits.
    pub(crate) fn backward(&self, ctx: &Context, cache: &Cache<T>, d_logits: &[Vec<T>], grads: &mut [Vec<T>]) {
        let d = self.config.d_model;
        let n = cache.rows.len();
        let mut dh = vec![T::zero(); d];
        for (j, (w, b)) in self.layout.heads.iter().enumerate() {
            let m = d_logits[j].len();
            let (gw, gb) = two_mut(grads, *w, *b);
            let g = linear_back(&cache.h_tilde, 1, d, self.p(*w), m, &d_logits[j], gw, Some(gb));
            dh.iter_mut().zip(g).for_each(|(a, b)| *a = *a + b);
        }
        linear_back(&cache.cond, 1, COND_DIM, self.p(self.layout.wz), d, &dh, &mut grads[self.layout.wz], None);
        let mut dx = vec![T::zero(); n * d];
        if !cache.span.is_empty() {
            let inv: T = c(1.0 / cache.span.len() as f64);
            for r in &cache.span {
                for i in 0..d {
                    dx[r * d + i] = dh[i] * inv;
                }
            }
        }
        for (ids, bc) in self.layout.blocks.iter().zip(&cache.blocks).rev() {
            let heads = self.config.heads;
            let dh_sz = d / heads;
            let scale: T = c(1.0 / (dh_sz as f64).sqrt());
            let ff = self.config.d_ff;
            let (gg, gb) = two_mut(grads, ids.ln2_g, ids.ln2_b);
            let dr2 = layer_norm_back(&bc.ln2, n, d, self.p(ids.ln2_g), &dx, gg, gb);
            let mut df2 = dr2.clone();
            if let Some(m) = &bc.drop2 {
                df2.iter_mut().zip(m).for_each(|(a, b)| *a = *a * *b);
            }
            let (gw, gb) = two_mut(grads, ids.w2, ids.b2);
            let mut dact = linear_back(&bc.f_act, n, ff, self.p(ids.w2), d, &df2, gw, Some(gb));
            dact.iter_mut().zip(&bc.f_pre).for_each(|(g, x)| *g = *g * gelu_grad(*x));
            let (gw, gb) = two_mut(grads, ids.w1, ids.b1);
            let dx1_ff = linear_back(&bc.x1, n, d, self.p(ids.w1), ff, &dact, gw, Some(gb));
            let dx1: Vec<T> = dr2.iter().zip(&dx1_ff).map(|(a, b)| *a + *b).collect();
            let (gg, gb) = two_mut(grads, ids.ln1_g, ids.ln1_b);
            let dr1 = layer_norm_back(&bc.ln1, n, d, self.p(ids.ln1_g), &dx1, gg, gb);
            let mut do_ = dr1.clone();
            if let Some(m) = &bc.drop1 {
                do_.iter_mut().zip(m).for_each(|(a, b)| *a = *a * *b);
            }
            let (gw, gb) = two_mut(grads, ids.wo, ids.bo);
            let dattn = linear_back(&bc.attn, n, d, self.p(ids.wo), d, &do_, gw, Some(gb));
            let mut dq = vec![T::zero(); n * d];
            let mut dk = vec![T::zero(); n * d];
            let mut dv = vec![T::zero(); n * d];
            let mut dp = vec![T::zero(); n];
            for h in 0..heads {
                let pm = &bc.probs[h];
                let lo = h * dh_sz;
                for i in 0..n {
                    let da = &dattn[i * d + lo..i * d + lo + dh_sz];
                    let prow = &pm[i * n..(i + 1) * n];
                    let mut dot = T::zero();
                    for j in 0..n {
                        let vj = &bc.v[j * d + lo..j * d + lo + dh_sz];
                        dp[j] = da.iter().zip(vj).map(|(a, b)| *a * *b).sum();
                        dot = dot + dp[j] * prow[j];
                        let dvj = &mut dv[j * d + lo..j * d + lo + dh_sz];
                        for (g, a) in dvj.iter_mut().zip(da) {
                            *g = *g + prow[j] * *a;
                        }
                    }
                    for j in 0..n {
                        let ds = prow[j] * (dp[j] - dot) * scale;
                        if ds.is_zero() {
                            continue;
                        }
                        for e in 0..dh_sz {
                            dq[i * d + lo + e] = dq[i * d + lo + e] + ds * bc.k[j * d + lo + e];
                            dk[j * d + lo + e] = dk[j * d + lo + e] + ds * bc.q[i * d + lo + e];
                        }
                    }
                }
            }
            let mut dx_in = dr1;
            for (wi, bi, g) in [(ids.wq, ids.bq, &dq), (ids.wv, ids.bv, &dv)] {
                let (gw, gb) = two_mut(grads, wi, bi);
                let part = linear_back(&bc.x_in, n, d, self.p(wi), d, g, gw, Some(gb));
                dx_in.iter_mut().zip(part).for_each(|(a, b)| *a = *a + b);
            }
            // Keys carry no bias: softmax rows are invariant to it.
            let part = linear_back(&bc.x_in, n, d, self.p(ids.wk), d, &dk, &mut grads[ids.wk], None);
            dx_in.iter_mut().zip(part).for_each(|(a, b)| *a = *a + b);
            dx = dx_in;
        }
        for (r, &ti) in cache.rows.iter().enumerate() {
            let g = &dx[r * d..(r + 1) * d];
            for (f, id) in &ctx.tokens[ti].features {
                let table = &mut grads[self.layout.embed[*f as usize]];
                let row = &mut table[*id as usize * d..(*id as usize + 1) * d];
                row.iter_mut().zip(g).for_each(|(a, b)| *a = *a + *b);
            }
        }
    }
}

fn two_mut<T>(v: &mut [Vec<T>], a: usize, b: usize) -> (&mut [T], &mut [T]) {
    assert!(a < b);
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::context::{encode_context, Feature, Token};
    use crate::prompt::PromptVector;
    use crate::testutil::random_song;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx(seed: u64) -> (PlannerConfig, Context) {
        let cfg = PlannerConfig::tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let song = random_song(&mut rng, 8);
        let styles = vec![StyleVectorOpt::default(); song.measures.len()];
        let t = song.measures.len() / 2;
        (cfg.clone(), encode_context(&song, &styles, t, &cfg, &PromptVector::auto_only()).unwrap())
    }

    type StyleVectorOpt = Option<crate::song::StyleVector>;

    #[test]
    fn zero_weights_give_uniform() {
        let (cfg, c) = ctx(1);
        let m = PlannerModel::<f64>::zeros(&cfg);
        let d = m.forward(&c);
        for (j, a) in Axis::ALL.iter().enumerate() {
            for p in &d.0[j] {
                assert!((p - 1.0 / a.size() as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn distributions_normalized() {
        for seed in 0..100 {
            let (cfg, c) = ctx(seed);
            let m = PlannerModel::<f32>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
            let d = m.forward(&c);
            for dist in &d.0 {
                let s: f64 = dist.iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
                assert!(dist.iter().all(|p| *p >= 0.0));
            }
        }
    }

    #[test]
    fn masked_token_content_is_ignored() {
        let (cfg, mut c) = ctx(5);
        let m = PlannerModel::<f64>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(2));
        let before = m.forward(&c);
        for t in c.tokens.iter_mut().filter(|t| t.masked) {
            *t = Token { features: vec![(Feature::Kind, 6), (Feature::StyleTexture, 3)], masked: true, target: t.target };
        }
        assert_eq!(before, m.forward(&c));
    }
}
