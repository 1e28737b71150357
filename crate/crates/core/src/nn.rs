//! Transformer building blocks on top of [`Graph`].

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::graph::{Graph, ParamId, ParamStore, Var};
use crate::tensor::Mat;

pub(crate) fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Mat {
    let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    Mat::from_vec(fan_in, fan_out, (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect())
}

pub(crate) fn normal_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Mat {
    let n = Normal::new(0.0, std).expect("valid std");
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| n.sample(rng)).collect())
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Self {
        let w = store.add(format!("{name}.weight"), xavier(rng, fan_in, fan_out));
        let b = bias.then(|| store.add(format!("{name}.bias"), Mat::zeros(1, fan_out)));
        Linear { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.w);
        let b = self.b.map(|b| g.param(b));
        g.linear(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), Mat::filled(1, dim, 1.0)),
            bias: store.add(format!("{name}.bias"), Mat::zeros(1, dim)),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let (a, b) = (g.param(self.gain), g.param(self.bias));
        g.layer_norm(x, a, b)
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, dim: usize, heads: usize) -> Self {
        MultiHeadAttention {
            q: Linear::new(store, rng, &format!("{name}.q"), dim, dim, true),
            k: Linear::new(store, rng, &format!("{name}.k"), dim, dim, true),
            v: Linear::new(store, rng, &format!("{name}.v"), dim, dim, true),
            out: Linear::new(store, rng, &format!("{name}.out"), dim, dim, true),
            heads,
        }
    }

    pub fn forward(&self, g: &mut Graph, query: Var, memory: Var, causal: bool) -> Var {
        let q = self.q.forward(g, query);
        let k = self.k.forward(g, memory);
        let v = self.v.forward(g, memory);
        let a = g.attention(q, k, v, self.heads, causal);
        self.out.forward(g, a)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, dim: usize, hidden: usize) -> Self {
        FeedForward {
            up: Linear::new(store, rng, &format!("{name}.up"), dim, hidden, true),
            down: Linear::new(store, rng, &format!("{name}.down"), hidden, dim, true),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, dropout: f64) -> Var {
        let h = self.up.forward(g, x);
        let h = g.relu(h);
        let h = g.dropout(h, dropout);
        self.down.forward(g, h)
    }
}

/// Pre-norm self-attention + feed-forward block.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attn_norm: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ffn_norm: LayerNorm,
    pub ffn: FeedForward,
}

impl EncoderLayer {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, dim: usize, ffn: usize, heads: usize) -> Self {
        EncoderLayer {
            attn_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), dim),
            attn: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), dim, heads),
            ffn_norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), dim),
            ffn: FeedForward::new(store, rng, &format!("{name}.ffn"), dim, ffn),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, dropout: f64) -> Var {
        let h = self.attn_norm.forward(g, x);
        let h = self.attn.forward(g, h, h, false);
        let h = g.dropout(h, dropout);
        let x = g.add(x, h);
        let h = self.ffn_norm.forward(g, x);
        let h = self.ffn.forward(g, h, dropout);
        let h = g.dropout(h, dropout);
        g.add(x, h)
    }
}

/// Pre-norm causal self-attention, cross-attention and feed-forward block.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_norm: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub cross_norm: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub ffn_norm: LayerNorm,
    pub ffn: FeedForward,
}

impl DecoderLayer {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, dim: usize, ffn: usize, heads: usize) -> Self {
        DecoderLayer {
            self_norm: LayerNorm::new(store, &format!("{name}.self_norm"), dim),
            self_attn: MultiHeadAttention::new(store, rng, &format!("{name}.self_attn"), dim, heads),
            cross_norm: LayerNorm::new(store, &format!("{name}.cross_norm"), dim),
            cross_attn: MultiHeadAttention::new(store, rng, &format!("{name}.cross_attn"), dim, heads),
            ffn_norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), dim),
            ffn: FeedForward::new(store, rng, &format!("{name}.ffn"), dim, ffn),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, memory: Var, dropout: f64) -> Var {
        let h = self.self_norm.forward(g, x);
        let h = self.self_attn.forward(g, h, h, true);
        let h = g.dropout(h, dropout);
        let x = g.add(x, h);
        let h = self.cross_norm.forward(g, x);
        let h = self.cross_attn.forward(g, h, memory, false);
        let h = g.dropout(h, dropout);
        let x = g.add(x, h);
        let h = self.ffn_norm.forward(g, x);
        let h = self.ffn.forward(g, h, dropout);
        let h = g.dropout(h, dropout);
        g.add(x, h)
    }
}

/// 1-D convolution over time as unfold + linear.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub proj: Linear,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        Conv1d { kernel, stride, pad: kernel / 2, proj: Linear::new(store, rng, name, kernel * in_ch, out_ch, true) }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let u = g.unfold(x, self.kernel, self.stride, self.pad);
        self.proj.forward(g, u)
    }
}

/// Sinusoidal position table: sines in the first half of the columns,
/// cosines in the second.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Mat {
    let half = dim / 2;
    let step = if half > 1 { libm::log(10_000.0) / (half - 1) as f64 } else { 0.0 };
    let freqs: Vec<f64> = (0..half).map(|i| libm::exp(-(i as f64) * step)).collect();
    let mut m = Mat::zeros(len, dim);
    for p in 0..len {
        for (i, f) in freqs.iter().enumerate() {
            m.set(p, i, libm::sin(p as f64 * f));
            m.set(p, half + i, libm::cos(p as f64 * f));
        }
    }
    m
}
