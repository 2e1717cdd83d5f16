//! Small spatio-temporal encoder from a clip of frame descriptors to a relaxed
//! hash code.
//!
//! The network is, per clip `X` of shape `T x D`:
//!
//! ```text
//! Z = X We + be                         per-frame embedding, T x E
//! A = softmax(Z Wq (Z Wk)^T / sqrt(E))  single-head temporal attention, T x T
//! Y = Z + A (Z Wv)                      residual
//! p = mean over frames of Y             E
//! a = phi(p W1 + b1)                    E
//! y = phi(a W2 + b2)                    k, the relaxed code
//! ```
//!
//! where `phi` is the configured activation, used both mid-network and at the
//! output. Gradients are computed by hand in [`backward`] and checked against
//! central differences in [`gradcheck`].

pub mod checkpoint;
pub mod gradcheck;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rayon::prelude::*;

use crate::code::{Activation, RelaxedCode};
use crate::dataset::FeatureSequence;
use crate::error::{Error, Result};
use crate::seed;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{grad_check, GradCheckReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    /// Descriptor dimension.
    pub d: usize,
    /// Embedding dimension.
    pub e: usize,
    /// Hash bits.
    pub k: usize,
    /// Clip length.
    pub t: usize,
    pub activation: Activation,
    pub init_seed: u32,
}

impl EncoderConfig {
    pub fn new(d: usize, k: usize, t: usize, activation: Activation) -> Self {
        EncoderConfig {
            d,
            e: 64,
            k,
            t,
            activation,
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.e == 0 || self.k == 0 || self.t == 0 {
            return Err(Error::invalid(format!("encoder dimensions must be positive: {self:?}")));
        }
        if self.k % 8 != 0 {
            return Err(Error::InvalidBits(self.k));
        }
        Ok(())
    }
}

/// All trainable tensors. The same type doubles as a gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub cfg: EncoderConfig,
    pub embed_w: Array2<f64>,
    pub embed_b: Array1<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub head_w1: Array2<f64>,
    pub head_b1: Array1<f64>,
    pub head_w2: Array2<f64>,
    pub head_b2: Array1<f64>,
}

impl EncoderParams {
    pub fn zeros(cfg: EncoderConfig) -> Self {
        let EncoderConfig { d, e, k, .. } = cfg;
        EncoderParams {
            cfg,
            embed_w: Array2::zeros((d, e)),
            embed_b: Array1::zeros(e),
            wq: Array2::zeros((e, e)),
            wk: Array2::zeros((e, e)),
            wv: Array2::zeros((e, e)),
            head_w1: Array2::zeros((e, e)),
            head_b1: Array1::zeros(e),
            head_w2: Array2::zeros((e, k)),
            head_b2: Array1::zeros(k),
        }
    }

    /// Tensors in declaration order, flattened row-major.
    pub fn tensors(&self) -> [&[f64]; 9] {
        [
            self.embed_w.as_slice().expect("standard layout"),
            self.embed_b.as_slice().expect("standard layout"),
            self.wq.as_slice().expect("standard layout"),
            self.wk.as_slice().expect("standard layout"),
            self.wv.as_slice().expect("standard layout"),
            self.head_w1.as_slice().expect("standard layout"),
            self.head_b1.as_slice().expect("standard layout"),
            self.head_w2.as_slice().expect("standard layout"),
            self.head_b2.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 9] {
        [
            self.embed_w.as_slice_mut().expect("standard layout"),
            self.embed_b.as_slice_mut().expect("standard layout"),
            self.wq.as_slice_mut().expect("standard layout"),
            self.wk.as_slice_mut().expect("standard layout"),
            self.wv.as_slice_mut().expect("standard layout"),
            self.head_w1.as_slice_mut().expect("standard layout"),
            self.head_b1.as_slice_mut().expect("standard layout"),
            self.head_w2.as_slice_mut().expect("standard layout"),
            self.head_b2.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn get_flat(&self, mut i: usize) -> f64 {
        for t in self.tensors() {
            if i < t.len() {
                return t[i];
            }
            i -= t.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_flat(&mut self, mut i: usize, v: f64) {
        for t in self.tensors_mut() {
            if i < t.len() {
                t[i] = v;
                return;
            }
            i -= t.len();
        }
        panic!("parameter index out of range");
    }

    pub fn add_assign(&mut self, other: &EncoderParams) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Glorot-uniform weights from the config's seed; biases zero. Head layers
/// feeding a sigmoid get the usual 4x wider range to make up for its 1/4 slope.
pub fn init_params(cfg: &EncoderConfig) -> Result<EncoderParams> {
    cfg.validate()?;
    let mut p = EncoderParams::zeros(*cfg);
    let mut rng = seed::rng(u64::from(cfg.init_seed), &[0x5EED]);
    let mut fill = |w: &mut Array2<f64>, gain: f64| {
        let (fan_in, fan_out) = w.dim();
        let a = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
        w.iter_mut().for_each(|v| *v = rng.gen_range(-a..=a));
    };
    let head_gain = if cfg.activation == Activation::Sigmoid { 4.0 } else { 1.0 };
    fill(&mut p.embed_w, 1.0);
    fill(&mut p.wq, 1.0);
    fill(&mut p.wk, 1.0);
    fill(&mut p.wv, 1.0);
    fill(&mut p.head_w1, head_gain);
    fill(&mut p.head_w2, head_gain);
    Ok(p)
}

/// Folds per-dimension input standardization `(x - mean) / std` into the
/// embedding, so the network sees unit-scale inputs without a separate
/// preprocessing step. Dimensions with `std` below `1e-6` are only centered.
pub fn fold_input_scaling(p: &mut EncoderParams, mean: &[f64], std: &[f64]) -> Result<()> {
    let d = p.cfg.d;
    if mean.len() != d || std.len() != d {
        return Err(Error::shape(format!(
            "input scaling has {} means and {} stds for {d} dims",
            mean.len(),
            std.len()
        )));
    }
    for (i, (&m, &s)) in mean.iter().zip(std).enumerate() {
        let inv = if s > 1e-6 { 1.0 / s } else { 1.0 };
        let mut row = p.embed_w.row_mut(i);
        row.mapv_inplace(|w| w * inv);
        p.embed_b.scaled_add(-m, &row);
    }
    Ok(())
}

/// Shifts the output bias so every bit's pre-activation has median zero over
/// `clips`. Each bit then splits the clips in half, whatever offset the hidden
/// nonlinearity leaves behind (sigmoid and relu hidden units are never
/// centered, which otherwise gives every input the same code).
pub fn center_output_bias(p: &mut EncoderParams, clips: &[FeatureSequence]) -> Result<()> {
    if clips.is_empty() {
        return Err(Error::Empty("center_output_bias: no clips"));
    }
    let pre = clips
        .iter()
        .map(|x| Ok(forward_cached(p, x)?.out_pre))
        .collect::<Result<Vec<_>>>()?;
    let mut column = Vec::with_capacity(pre.len());
    for j in 0..p.cfg.k {
        column.clear();
        column.extend(pre.iter().map(|o| o[j]));
        column.sort_unstable_by(f64::total_cmp);
        let n = column.len();
        let median = if n % 2 == 1 {
            column[n / 2]
        } else {
            0.5 * (column[n / 2 - 1] + column[n / 2])
        };
        p.head_b2[j] -= median;
    }
    Ok(())
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    x: Array2<f64>,
    z: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Array2<f64>,
    pooled: Array1<f64>,
    /// Mid-layer pre-activation and output.
    pub hidden_pre: Array1<f64>,
    hidden: Array1<f64>,
    /// Output pre-activation and output.
    pub out_pre: Array1<f64>,
    pub out: Array1<f64>,
}

fn check_input(p: &EncoderParams, x: &FeatureSequence) -> Result<()> {
    if x.d() != p.cfg.d {
        return Err(Error::shape(format!(
            "clip descriptor dimension {} does not match encoder D = {}",
            x.d(),
            p.cfg.d
        )));
    }
    if x.t() == 0 {
        return Err(Error::shape("empty clip"));
    }
    Ok(())
}

fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Runs the encoder and keeps what backward needs.
pub fn forward_cached(p: &EncoderParams, x: &FeatureSequence) -> Result<ForwardCache> {
    check_input(p, x)?;
    let act = p.cfg.activation;
    let t = x.t() as f64;
    let scale = 1.0 / (p.cfg.e as f64).sqrt();

    let z = x.frames.dot(&p.embed_w) + &p.embed_b;
    let q = z.dot(&p.wq);
    let k = z.dot(&p.wk);
    let v = z.dot(&p.wv);
    let mut attn = q.dot(&k.t()) * scale;
    softmax_rows(&mut attn);
    let y = &z + &attn.dot(&v);
    let pooled = y.sum_axis(Axis(0)) / t;
    let hidden_pre = pooled.dot(&p.head_w1) + &p.head_b1;
    let hidden = hidden_pre.mapv(|u| act.apply(u));
    let out_pre = hidden.dot(&p.head_w2) + &p.head_b2;
    let out = out_pre.mapv(|o| act.apply(o));
    Ok(ForwardCache {
        x: x.frames.clone(),
        z,
        q,
        k,
        v,
        attn,
        pooled,
        hidden_pre,
        hidden,
        out_pre,
        out,
    })
}

pub fn forward(p: &EncoderParams, x: &FeatureSequence) -> Result<RelaxedCode> {
    let cache = forward_cached(p, x)?;
    Ok(RelaxedCode::new(cache.out.to_vec(), p.cfg.activation))
}

fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut m = Array2::zeros((a.len(), b.len()));
    for (mut row, &ai) in m.rows_mut().into_iter().zip(a.iter()) {
        row.zip_mut_with(&b, |dst, &bj| *dst = ai * bj);
    }
    m
}

/// Gradients of `upstream . forward(p, x)` with respect to every parameter.
pub fn backward(p: &EncoderParams, x: &FeatureSequence, upstream: &[f64]) -> Result<EncoderParams> {
    let cache = forward_cached(p, x)?;
    backward_cached(p, &cache, upstream)
}

/// Backward pass reusing a cache from [`forward_cached`] on the same params.
pub fn backward_cached(
    p: &EncoderParams,
    c: &ForwardCache,
    upstream: &[f64],
) -> Result<EncoderParams> {
    if upstream.len() != p.cfg.k {
        return Err(Error::shape(format!(
            "upstream gradient has {} entries, encoder outputs {}",
            upstream.len(),
            p.cfg.k
        )));
    }
    let act = p.cfg.activation;
    let t = c.x.nrows();
    let scale = 1.0 / (p.cfg.e as f64).sqrt();
    let mut g = EncoderParams::zeros(p.cfg);

    let g_out_pre = Array1::from_iter(
        upstream
            .iter()
            .zip(c.out_pre.iter().zip(&c.out))
            .map(|(&u, (&o, &y))| u * act.derivative(o, y)),
    );
    g.head_w2 = outer(c.hidden.view(), g_out_pre.view());
    g.head_b2 = g_out_pre.clone();
    let g_hidden = p.head_w2.dot(&g_out_pre);
    let g_hidden_pre = Array1::from_iter(
        g_hidden
            .iter()
            .zip(c.hidden_pre.iter().zip(&c.hidden))
            .map(|(&gh, (&u, &a))| gh * act.derivative(u, a)),
    );
    g.head_w1 = outer(c.pooled.view(), g_hidden_pre.view());
    g.head_b1 = g_hidden_pre.clone();
    let g_pooled = p.head_w1.dot(&g_hidden_pre) / t as f64;

    // Every row of dL/dY equals g_pooled.
    let g_y = g_pooled
        .broadcast((t, p.cfg.e))
        .expect("broadcast pooled gradient")
        .to_owned();
    let g_attn = g_y.dot(&c.v.t());
    let g_v = c.attn.t().dot(&g_y);
    let row_dots = (&g_attn * &c.attn).sum_axis(Axis(1));
    let mut g_scores = g_attn;
    for ((mut row, a_row), &dot) in g_scores
        .rows_mut()
        .into_iter()
        .zip(c.attn.rows())
        .zip(row_dots.iter())
    {
        row.zip_mut_with(&a_row, |gs, &a| *gs = a * (*gs - dot));
    }
    let g_q = g_scores.dot(&c.k) * scale;
    let g_k = g_scores.t().dot(&c.q) * scale;

    g.wq = c.z.t().dot(&g_q);
    g.wk = c.z.t().dot(&g_k);
    g.wv = c.z.t().dot(&g_v);
    let g_z = g_y + g_q.dot(&p.wq.t()) + g_k.dot(&p.wk.t()) + g_v.dot(&p.wv.t());
    g.embed_w = c.x.t().dot(&g_z);
    g.embed_b = g_z.sum_axis(Axis(0));
    Ok(g)
}

/// Forward over many clips in parallel; results keep input order.
pub fn forward_batch(p: &EncoderParams, clips: &[FeatureSequence]) -> Result<Vec<ForwardCache>> {
    clips.par_iter().map(|x| forward_cached(p, x)).collect()
}

/// Sum of per-clip gradients, reduced in input order so the result does not
/// depend on scheduling.
pub fn backward_batch(
    p: &EncoderParams,
    caches: &[ForwardCache],
    upstreams: &[Vec<f64>],
) -> Result<EncoderParams> {
    if caches.len() != upstreams.len() {
        return Err(Error::shape("one upstream gradient per clip required"));
    }
    let grads = caches
        .par_iter()
        .zip(upstreams.par_iter())
        .map(|(c, u)| backward_cached(p, c, u))
        .collect::<Result<Vec<_>>>()?;
    let mut total = EncoderParams::zeros(p.cfg);
    for g in &grads {
        total.add_assign(g);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::binarize;

    fn clip(t: usize, d: usize, seed: u64) -> FeatureSequence {
        let mut rng = seed::rng(seed, &[1]);
        FeatureSequence::new(Array2::from_shape_fn((t, d), |_| rng.gen_range(0.0..1.0))).unwrap()
    }

    fn cfg(act: Activation) -> EncoderConfig {
        EncoderConfig { d: 12, e: 8, k: 16, t: 5, activation: act, init_seed: 3 }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let c = cfg(Activation::Tanh);
        let a = init_params(&c).unwrap();
        assert_eq!(a, init_params(&c).unwrap());
        assert!(a.embed_b.iter().chain(&a.head_b1).chain(&a.head_b2).all(|&b| b == 0.0));
        for w in [&a.embed_w, &a.wq, &a.wk, &a.wv, &a.head_w1, &a.head_w2] {
            let (i, o) = w.dim();
            let bound = (6.0 / (i + o) as f64).sqrt();
            assert!(w.iter().all(|v| v.abs() <= bound));
            assert!(w.iter().any(|v| *v != 0.0));
        }
        let other = init_params(&EncoderConfig { init_seed: 4, ..c }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn zero_params_give_zero_code() {
        let p = EncoderParams::zeros(cfg(Activation::Tanh));
        let out = forward(&p, &clip(5, 12, 0)).unwrap();
        assert!(out.values.iter().all(|&v| v == 0.0));
        let p = EncoderParams::zeros(cfg(Activation::Sigmoid));
        assert!(forward(&p, &clip(5, 12, 0)).unwrap().values.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn identical_frames_match_single_frame() {
        for act in Activation::ALL {
            let p = init_params(&cfg(act)).unwrap();
            let one = clip(1, 12, 9);
            let repeated = FeatureSequence::new(
                one.frames.broadcast((6, 12)).unwrap().to_owned(),
            )
            .unwrap();
            let a = forward(&p, &one).unwrap();
            let b = forward(&p, &repeated).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() < 1e-12, "{act}");
            }
        }
    }

    #[test]
    fn output_ranges() {
        for seed in 0..5 {
            let x = clip(5, 12, seed);
            for act in Activation::ALL {
                let p = init_params(&EncoderConfig { init_seed: seed as u32, ..cfg(act) }).unwrap();
                let out = forward(&p, &x).unwrap();
                assert_eq!(out.len(), 16);
                let ok = |v: f64| match act {
                    Activation::Tanh => (-1.0..=1.0).contains(&v),
                    Activation::Sigmoid => v > 0.0 && v < 1.0,
                    Activation::Relu => v >= 0.0,
                };
                assert!(out.values.iter().all(|&v| ok(v)), "{act}");
                assert_eq!(binarize(&out).unwrap().len(), 16);
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let p = init_params(&cfg(Activation::Tanh)).unwrap();
        assert!(forward(&p, &clip(5, 11, 0)).is_err());
        assert!(backward(&p, &clip(5, 12, 0), &[0.0; 15]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let p = init_params(&cfg(Activation::Sigmoid)).unwrap();
        let g = backward(&p, &clip(5, 12, 2), &[0.0; 16]).unwrap();
        assert_eq!(g.norm(), 0.0);
    }

    /// Single frame, D = E = k = 8, identity embedding and attention,
    /// tanh head. With one frame attention is exactly 1, so
    /// p = x + x Wv and everything downstream is a plain 2-layer MLP whose
    /// chain rule is written out by hand here.
    #[test]
    fn single_frame_matches_hand_chain_rule() {
        let n = 8;
        let c = EncoderConfig { d: n, e: n, k: n, t: 1, activation: Activation::Tanh, init_seed: 0 };
        let mut p = init_params(&c).unwrap();
        p.embed_w = Array2::eye(n);
        p.wv = Array2::eye(n) * 0.5;
        p.head_b1 = Array1::linspace(-0.2, 0.3, n);
        let x = clip(1, n, 4);
        let up: Vec<f64> = (0..n).map(|i| (i as f64 - 3.0) / 4.0).collect();
        let g = backward(&p, &x, &up).unwrap();

        let xr = x.frames.row(0).to_owned();
        let pooled = &xr * 1.5;
        let u = pooled.dot(&p.head_w1) + &p.head_b1;
        let a = u.mapv(f64::tanh);
        let o = a.dot(&p.head_w2) + &p.head_b2;
        let y = o.mapv(f64::tanh);
        let go: Vec<f64> = (0..n).map(|j| up[j] * (1.0 - y[j] * y[j])).collect();
        for i in 0..n {
            for j in 0..n {
                assert!((g.head_w2[[i, j]] - a[i] * go[j]).abs() < 1e-12);
            }
        }
        let ga: Vec<f64> = (0..n).map(|i| (0..n).map(|j| p.head_w2[[i, j]] * go[j]).sum()).collect();
        let gu: Vec<f64> = (0..n).map(|i| ga[i] * (1.0 - a[i] * a[i])).collect();
        for i in 0..n {
            assert!((g.head_b1[i] - gu[i]).abs() < 1e-12);
            for j in 0..n {
                assert!((g.head_w1[[i, j]] - pooled[i] * gu[j]).abs() < 1e-12);
            }
        }
        // dL/dWv[i][j] = x_i * dL/dp_j with dL/dp = W1 gu.
        let gp: Vec<f64> = (0..n).map(|i| (0..n).map(|j| p.head_w1[[i, j]] * gu[j]).sum()).collect();
        for i in 0..n {
            for j in 0..n {
                assert!((g.wv[[i, j]] - xr[i] * gp[j]).abs() < 1e-12);
            }
        }
        // Softmax over one position is constant, so queries and keys get nothing.
        assert!(g.wq.iter().chain(g.wk.iter()).all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn batch_gradient_is_sum_of_parts() {
        let p = init_params(&cfg(Activation::Tanh)).unwrap();
        let clips: Vec<_> = (0..4).map(|s| clip(5, 12, s)).collect();
        let ups: Vec<Vec<f64>> = (0..4).map(|s| (0..16).map(|i| ((i + s) % 3) as f64 - 1.0).collect()).collect();
        let caches = forward_batch(&p, &clips).unwrap();
        let total = backward_batch(&p, &caches, &ups).unwrap();
        let mut manual = EncoderParams::zeros(p.cfg);
        for (x, u) in clips.iter().zip(&ups) {
            manual.add_assign(&backward(&p, x, u).unwrap());
        }
        assert_eq!(total, manual);
    }

    #[test]
    fn centered_bias_splits_every_bit() {
        let clips: Vec<_> = (0..9).map(|s| clip(5, 12, s)).collect();
        for act in Activation::ALL {
            let mut p = init_params(&cfg(act)).unwrap();
            center_output_bias(&mut p, &clips).unwrap();
            let codes: Vec<_> = clips.iter().map(|x| binarize(&forward(&p, x).unwrap()).unwrap()).collect();
            for j in 0..16 {
                let ones = codes.iter().filter(|c| c.get(j)).count();
                // The median clip sits exactly on the threshold; tanh and
                // sigmoid count it as 1, relu as 0.
                let expected = if act == Activation::Relu { 4 } else { 5 };
                assert_eq!(ones, expected, "{act} bit {j}");
            }
        }
        let mut p = init_params(&cfg(Activation::Tanh)).unwrap();
        assert!(center_output_bias(&mut p, &[]).is_err());
    }
}
