//! Inference benchmark bookkeeping: subset selection, analytic FLOP counts
//! and per-stage report accounting. Timing and memory probes live with the
//! caller.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{domain, Result};
use crate::model::{decode_steps, encoder_len, Mode, ModelConfig};
use crate::units::UnitSequence;
use crate::vocoder::DurationConfig;

/// Ops charged per element of softmax, layer normalization and gating.
pub const NONLINEAR_OPS: u64 = 5;

/// Convention line written at the top of every report.
pub const FLOP_CONVENTION: &str = "dense m x n over L rows = 2*L*m*n; attention = 2*Lq*Lk*dh per matmul per head; \
conv = 2*Lout*Cin*Cout*k; softmax/layernorm/glu/relu/sine = 5 per element; decoder counted incrementally with cached keys, \
beam search charged beam x decoder; codec steps (duration expansion, synthesis) counted";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subsets {
    pub random: Vec<usize>,
    pub shortest: Vec<usize>,
    pub longest: Vec<usize>,
}

/// Three index subsets of size `n`: a seeded random draw and the `n`
/// shortest and longest utterances by `lengths` (ties by index).
pub fn select_subsets(lengths: &[usize], n: usize, seed: u64) -> Result<Subsets> {
    if n > lengths.len() {
        return Err(domain(format!("subset size {n} exceeds corpus size {}", lengths.len())));
    }
    let mut by_len: Vec<usize> = (0..lengths.len()).collect();
    by_len.sort_by_key(|&i| (lengths[i], i));
    let shortest = by_len[..n].to_vec();
    let mut longest = by_len[lengths.len() - n..].to_vec();
    longest.reverse();
    let mut random: Vec<usize> = (0..lengths.len()).collect();
    random.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    random.truncate(n);
    Ok(Subsets { random, shortest, longest })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlopCount {
    pub subsampler: u64,
    pub encoder: u64,
    /// One hypothesis decoded for the given number of steps.
    pub decoder: u64,
    pub ctc: u64,
}

impl FlopCount {
    pub fn total(&self) -> u64 {
        self.subsampler + self.encoder + self.decoder + self.ctc
    }
}

fn dense(l: u64, m: u64, n: u64) -> u64 {
    2 * l * m * n
}

fn attention(lq: u64, lk: u64, d: u64, heads: u64) -> u64 {
    // QK^T and PV per head, plus the softmax over scores
    2 * 2 * lq * lk * d + NONLINEAR_OPS * heads * lq * lk
}

/// Analytic FLOPs of encoding `input_len` frames and decoding `output_len`
/// steps.
pub fn count_flops(config: &ModelConfig, input_len: usize, output_len: usize) -> FlopCount {
    let d = config.embed_dim as u64;
    let f = config.ffn_dim as u64;
    let mut out = FlopCount::default();

    let mut t = input_len;
    for i in 0..config.conv_layers {
        let c_in = if i == 0 { config.input_dim } else { config.conv_channels / 2 } as u64;
        let c_out = if i + 1 == config.conv_layers { 2 * config.embed_dim } else { config.conv_channels } as u64;
        t = crate::graph::conv_out_len(t, config.conv_kernel, config.conv_stride, config.conv_kernel / 2);
        out.subsampler += dense(t as u64, c_in * config.conv_kernel as u64, c_out) + NONLINEAR_OPS * t as u64 * c_out / 2;
    }
    let le = encoder_len(config, input_len) as u64;
    let enc_layer = 2 * NONLINEAR_OPS * le * d
        + 4 * dense(le, d, d)
        + attention(le, le, d, config.enc_heads as u64)
        + dense(le, d, f)
        + dense(le, f, d);
    out.encoder = config.enc_layers as u64 * enc_layer + NONLINEAR_OPS * le * d;

    let v_out = (config.group() * (config.units + 1)) as u64;
    let h = config.dec_heads as u64;
    let cross_kv = 2 * dense(le, d, d);
    let mut dec = config.dec_layers as u64 * cross_kv;
    for step in 1..=output_len as u64 {
        let layer = 3 * NONLINEAR_OPS * d
            + 4 * dense(1, d, d)
            + attention(1, step, d, h)
            + 2 * dense(1, d, d)
            + attention(1, le, d, h)
            + dense(1, d, f)
            + dense(1, f, d);
        dec += config.dec_layers as u64 * layer + NONLINEAR_OPS * d + dense(1, d, v_out) + NONLINEAR_OPS * v_out;
    }
    out.decoder = dec;
    if config.ctc_attach_layer > 0 {
        let v = config.tgt_vocab as u64 + 1;
        out.ctc = output_len as u64 * (NONLINEAR_OPS * d + dense(1, d, v) + NONLINEAR_OPS * v);
    }
    out
}

/// Duration predictor over `n` reduced units.
pub fn duration_flops(config: &DurationConfig, n: usize) -> u64 {
    let (l, c, k) = (n as u64, config.channels as u64, config.kernel as u64);
    2 * (dense(l, c * k, c) + 2 * NONLINEAR_OPS * l * c) + dense(l, c, 1)
}

/// Template synthesis charged one nonlinear evaluation per output sample.
pub fn synthesis_flops(samples: usize) -> u64 {
    NONLINEAR_OPS * samples as u64
}

/// Decoder steps needed for `units` in reduced, stacked (`r`) and r1 modes.
pub fn step_counts(units: &UnitSequence, r: usize) -> Result<(usize, usize, usize)> {
    let mut c = ModelConfig::desk();
    c.units = units.0.iter().max().map_or(1, |m| m + 1);
    c.mode = Mode::Reduced;
    let reduced = decode_steps(&c, units)?;
    c.mode = Mode::Stacked;
    c.r = r;
    let stacked = decode_steps(&c, units)?;
    c.mode = Mode::R1;
    c.r = 1;
    let r1 = decode_steps(&c, units)?;
    Ok((reduced, stacked, r1))
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StageReport {
    pub name: String,
    pub seconds: f64,
    pub flops: u64,
    pub peak_bytes: u64,
    /// Samples on which the stage failed.
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BenchReport {
    pub system: String,
    pub subset: String,
    pub samples: usize,
    pub warmup: usize,
    pub memory_method: String,
    pub stages: Vec<StageReport>,
    pub total_seconds: f64,
    pub total_flops: u64,
    pub peak_bytes: u64,
    pub seconds_per_sample: f64,
    pub flops_per_sample: f64,
}

impl BenchReport {
    /// Totals are sums over stages, the peak is the largest stage peak and
    /// averages divide totals by the sample count.
    pub fn new(system: &str, subset: &str, samples: usize, warmup: usize, memory_method: &str, stages: Vec<StageReport>) -> Result<Self> {
        if samples == 0 {
            return Err(domain("benchmark needs at least one sample"));
        }
        let total_seconds = stages.iter().map(|s| s.seconds).sum::<f64>();
        let total_flops = stages.iter().map(|s| s.flops).sum::<u64>();
        let peak_bytes = stages.iter().map(|s| s.peak_bytes).max().unwrap_or(0);
        Ok(BenchReport {
            system: system.into(),
            subset: subset.into(),
            samples,
            warmup,
            memory_method: memory_method.into(),
            total_seconds,
            total_flops,
            peak_bytes,
            seconds_per_sample: total_seconds / samples as f64,
            flops_per_sample: total_flops as f64 / samples as f64,
            stages,
        })
    }

    /// Whether the stored totals and averages agree exactly with the stages.
    pub fn accounting_holds(&self) -> bool {
        let secs = self.stages.iter().map(|s| s.seconds).sum::<f64>();
        let flops = self.stages.iter().map(|s| s.flops).sum::<u64>();
        let peak = self.stages.iter().map(|s| s.peak_bytes).max().unwrap_or(0);
        secs == self.total_seconds
            && flops == self.total_flops
            && peak == self.peak_bytes
            && self.seconds_per_sample == secs / self.samples as f64
            && self.flops_per_sample == flops as f64 / self.samples as f64
    }

    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut s = format!("# flops: {FLOP_CONVENTION}\n");
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("system", self.system.clone());
        kv("subset", self.subset.clone());
        kv("samples", format!("{}", self.samples));
        kv("warmup", format!("{}", self.warmup));
        kv("memory_method", self.memory_method.clone());
        for st in &self.stages {
            kv(&format!("stage.{}.seconds", st.name), format!("{:?}", st.seconds));
            kv(&format!("stage.{}.flops", st.name), format!("{}", st.flops));
            kv(&format!("stage.{}.peak_bytes", st.name), format!("{}", st.peak_bytes));
            kv(&format!("stage.{}.failures", st.name), format!("{}", st.failures));
        }
        kv("total.seconds", format!("{:?}", self.total_seconds));
        kv("total.flops", format!("{}", self.total_flops));
        kv("total.peak_bytes", format!("{}", self.peak_bytes));
        kv("per_sample.seconds", format!("{:?}", self.seconds_per_sample));
        kv("per_sample.flops", format!("{:?}", self.flops_per_sample));
        s
    }
}
