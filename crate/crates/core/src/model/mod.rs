//! Speech-to-unit translation transformer: a convolutional subsampler and
//! encoder over source frames, an autoregressive unit decoder, training-only
//! auxiliary text decoders and a CTC text head on a decoder layer.

mod config;
mod train;

pub use config::{AuxSpec, AuxTarget, Mode, ModelConfig};
pub use train::{batch_indices, train, StepRecord, TrainConfig, TrainState};

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ctc::{ctc_greedy_decode, min_frames};
use crate::error::{config as config_err, domain, Error, Result};
use crate::graph::{Gradients, Graph, ParamId, ParamStore, Var};
use crate::nn::{normal_init, sinusoidal_positions, Conv1d, DecoderLayer, EncoderLayer, LayerNorm, Linear};
use crate::tensor::{log_softmax, log_softmax_row, Mat};
use crate::units::{reduce, stack, UnitSequence};

/// Sequence length after the strided convolution stack.
pub fn encoder_len(config: &ModelConfig, frames: usize) -> usize {
    (0..config.conv_layers).fold(frames, |t, _| {
        crate::graph::conv_out_len(t, config.conv_kernel, config.conv_stride, config.conv_kernel / 2)
    })
}

/// Teacher-forcing targets of the unit decoder, one group per step. The
/// last group holds the end marker: EOS in reduced and r1 modes, and in
/// stacked mode a group with a pad suffix (an all-pad group is appended
/// when `r` divides the stream length).
pub fn unit_targets(config: &ModelConfig, units: &UnitSequence) -> Result<Vec<Vec<usize>>> {
    units.validate(config.units)?;
    let pad = config.unit_pad();
    let mut groups: Vec<Vec<usize>> = match config.mode {
        Mode::R1 => units.0.iter().map(|&u| vec![u]).collect(),
        Mode::Reduced => reduce(units)?.units.into_iter().map(|u| vec![u]).collect(),
        Mode::Stacked => stack(units, config.r, pad)?.groups,
    };
    let g = config.group();
    if groups.last().is_none_or(|l| !l.contains(&pad)) {
        groups.push(vec![pad; g]);
    }
    Ok(groups)
}

/// Number of decoder steps needed to emit `units` in the configured mode.
pub fn decode_steps(config: &ModelConfig, units: &UnitSequence) -> Result<usize> {
    Ok(unit_targets(config, units)?.len())
}

/// Decoder inputs for teacher forcing: a BOS group then all targets but the
/// last.
pub fn shift_right(config: &ModelConfig, targets: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut inputs = vec![vec![config.unit_pad(); config.group()]];
    inputs.extend(targets[..targets.len().saturating_sub(1)].iter().cloned());
    inputs
}

/// One training utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    /// `T x input_dim` normalized source features.
    pub source: Mat,
    pub units: UnitSequence,
    pub src_text: Vec<usize>,
    pub tgt_text: Vec<usize>,
    pub src_units: Option<Vec<usize>>,
}

/// An example in model-ready form. Tensors may carry trailing padding
/// beyond the recorded lengths; padding never reaches a loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub id: String,
    pub source: Mat,
    pub source_len: usize,
    pub unit_inputs: Vec<Vec<usize>>,
    pub unit_targets: Vec<Vec<usize>>,
    pub unit_len: usize,
    /// Per aux task: `(inputs, targets, len)`.
    pub aux: Vec<(Vec<usize>, Vec<usize>, usize)>,
    pub ctc_target: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub items: Vec<Prepared>,
}

impl Batch {
    /// Prepares and right-pads every example to the batch maxima.
    pub fn new(config: &ModelConfig, examples: &[Example]) -> Result<Batch> {
        let mut items = examples.iter().map(|e| prepare(config, e)).collect::<Result<Vec<_>>>()?;
        let max_src = items.iter().map(|p| p.source_len).max().unwrap_or(0);
        let max_units = items.iter().map(|p| p.unit_len).max().unwrap_or(0);
        for p in &mut items {
            pad_item(config, p, max_src - p.source_len, max_units - p.unit_len);
        }
        Ok(Batch { items })
    }

    /// Appends `frames` zero frames and `steps` pad steps to every item.
    pub fn pad_extra(&mut self, config: &ModelConfig, frames: usize, steps: usize) {
        for p in &mut self.items {
            pad_item(config, p, frames, steps);
        }
    }
}

fn pad_item(config: &ModelConfig, p: &mut Prepared, frames: usize, steps: usize) {
    let cols = p.source.cols;
    p.source.data.extend(core::iter::repeat_n(0.0, frames * cols));
    p.source.rows += frames;
    let pad = vec![config.unit_pad(); config.group()];
    for _ in 0..steps {
        p.unit_inputs.push(pad.clone());
        p.unit_targets.push(pad.clone());
    }
    for (i, (inp, tgt, _)) in p.aux.iter_mut().enumerate() {
        let eos = config.aux_vocab(config.aux[i].target);
        inp.extend(core::iter::repeat_n(eos, steps));
        tgt.extend(core::iter::repeat_n(eos, steps));
    }
}

pub fn prepare(config: &ModelConfig, e: &Example) -> Result<Prepared> {
    if e.source.cols != config.input_dim {
        return Err(Error::Shape { expected: format!("{} input features", config.input_dim), got: format!("{}", e.source.cols) });
    }
    if e.source.rows == 0 {
        return Err(domain(format!("utterance {} has no source frames", e.id)));
    }
    let targets = unit_targets(config, &e.units)?;
    let inputs = shift_right(config, &targets);
    let mut aux = Vec::with_capacity(config.aux.len());
    for spec in &config.aux {
        let vocab = config.aux_vocab(spec.target);
        let text: &[usize] = match spec.target {
            AuxTarget::SourceChars => &e.src_text,
            AuxTarget::TargetChars => &e.tgt_text,
            AuxTarget::SourceUnits => e
                .src_units
                .as_deref()
                .ok_or_else(|| domain(format!("utterance {} lacks source units for the aux task", e.id)))?,
        };
        if let Some(&bad) = text.iter().find(|&&t| t >= vocab) {
            return Err(Error::Vocabulary { id: bad, size: vocab });
        }
        let mut inp = vec![vocab];
        inp.extend_from_slice(text);
        let mut tgt = text.to_vec();
        tgt.push(vocab);
        let len = tgt.len();
        aux.push((inp, tgt, len));
    }
    if let Some(&bad) = e.tgt_text.iter().find(|&&t| t >= config.tgt_vocab) {
        return Err(Error::Vocabulary { id: bad, size: config.tgt_vocab });
    }
    Ok(Prepared {
        id: e.id.clone(),
        source: e.source.clone(),
        source_len: e.source.rows,
        unit_len: targets.len(),
        unit_inputs: inputs,
        unit_targets: targets,
        aux,
        ctc_target: e.tgt_text.clone(),
    })
}

/// Per-token averaged losses of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub unit_loss: f64,
    pub aux_losses: Vec<f64>,
    pub ctc_loss: f64,
    pub total: f64,
    /// Utterances whose CTC target could not fit the decoder length.
    pub ctc_skipped: usize,
}

impl LossBreakdown {
    /// `(name, value)` of every component in reporting order.
    pub fn components(&self, config: &ModelConfig) -> Vec<(String, f64)> {
        let mut out = vec![(String::from("unit"), self.unit_loss)];
        for (spec, l) in config.aux.iter().zip(&self.aux_losses) {
            out.push((format!("aux:{}", spec.target.name()), *l));
        }
        out.push((String::from("ctc"), self.ctc_loss));
        out
    }
}

#[derive(Clone, Debug)]
struct AuxDecoder {
    embed: ParamId,
    layers: Vec<DecoderLayer>,
    norm: LayerNorm,
    head: Linear,
}

#[derive(Clone, Debug)]
pub struct S2UTModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    convs: Vec<Conv1d>,
    encoder: Vec<EncoderLayer>,
    enc_norm: LayerNorm,
    unit_embed: ParamId,
    decoder: Vec<DecoderLayer>,
    dec_norm: LayerNorm,
    unit_head: Linear,
    aux: Vec<AuxDecoder>,
    ctc: Option<(LayerNorm, Linear)>,
}

struct Encoded {
    out: Var,
    layers: Vec<Var>,
}

impl S2UTModel {
    /// Builds and initializes a model from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        if config.conv_layers == 0 {
            return Err(config_err("at least one convolution layer is required"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = ParamStore::new();
        let d = config.embed_dim;
        let convs = (0..config.conv_layers)
            .map(|i| {
                let c_in = if i == 0 { config.input_dim } else { config.conv_channels / 2 };
                let c_out = if i + 1 == config.conv_layers { 2 * d } else { config.conv_channels };
                Conv1d::new(&mut p, &mut rng, &format!("conv{i}"), c_in, c_out, config.conv_kernel, config.conv_stride)
            })
            .collect();
        let encoder = (0..config.enc_layers)
            .map(|i| EncoderLayer::new(&mut p, &mut rng, &format!("enc{i}"), d, config.ffn_dim, config.enc_heads))
            .collect();
        let enc_norm = LayerNorm::new(&mut p, "enc.norm", d);
        let emb_std = libm::sqrt(1.0 / d as f64);
        let unit_embed = p.add("dec.embed", normal_init(&mut rng, config.units + 1, d, emb_std));
        let decoder = (0..config.dec_layers)
            .map(|i| DecoderLayer::new(&mut p, &mut rng, &format!("dec{i}"), d, config.ffn_dim, config.dec_heads))
            .collect();
        let dec_norm = LayerNorm::new(&mut p, "dec.norm", d);
        let unit_head = Linear::new(&mut p, &mut rng, "dec.head", d, config.group() * (config.units + 1), true);
        let aux = config
            .aux
            .iter()
            .enumerate()
            .map(|(j, spec)| {
                let v = config.aux_vocab(spec.target) + 1;
                let name = format!("aux{j}");
                AuxDecoder {
                    embed: p.add(format!("{name}.embed"), normal_init(&mut rng, v, d, emb_std)),
                    layers: (0..config.aux_layers)
                        .map(|i| DecoderLayer::new(&mut p, &mut rng, &format!("{name}.dec{i}"), d, config.ffn_dim, config.aux_heads))
                        .collect(),
                    norm: LayerNorm::new(&mut p, &format!("{name}.norm"), d),
                    head: Linear::new(&mut p, &mut rng, &format!("{name}.head"), d, v, true),
                }
            })
            .collect();
        let ctc = (config.ctc_attach_layer > 0).then(|| {
            (LayerNorm::new(&mut p, "ctc.norm", d), Linear::new(&mut p, &mut rng, "ctc.head", d, config.tgt_vocab + 1, true))
        });
        Ok(S2UTModel { config, params: p, convs, encoder, enc_norm, unit_embed, decoder, dec_norm, unit_head, aux, ctc })
    }

    /// Rebuilds the layer layout of `config` around stored parameters.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut model = S2UTModel::new(config)?;
        let same = params.len() == model.params.len()
            && params.iter().zip(model.params.iter()).all(|(a, b)| a.1 == b.1 && a.2.rows == b.2.rows && a.2.cols == b.2.cols);
        if !same {
            return Err(domain("parameter layout does not match the model config"));
        }
        model.params = params;
        Ok(model)
    }

    pub fn has_ctc(&self) -> bool {
        self.ctc.is_some()
    }

    fn embed_with_positions(&self, g: &mut Graph, x: Var) -> Var {
        let rows = g.value(x).rows;
        let d = self.config.embed_dim;
        let x = g.scale(x, libm::sqrt(d as f64));
        let pos = g.input(sinusoidal_positions(rows, d));
        let x = g.add(x, pos);
        g.dropout(x, self.config.dropout)
    }

    fn encode(&self, g: &mut Graph, source: &Mat) -> Encoded {
        let mut x = g.input(source.clone());
        for conv in &self.convs {
            x = conv.forward(g, x);
            x = g.glu(x);
        }
        x = self.embed_with_positions(g, x);
        let mut layers = Vec::with_capacity(self.encoder.len());
        for layer in &self.encoder {
            x = layer.forward(g, x, self.config.dropout);
            layers.push(x);
        }
        let out = self.enc_norm.forward(g, x);
        Encoded { out, layers }
    }

    /// Unit-decoder logits (`steps x group*(K+1)`) and every layer output.
    fn decode(&self, g: &mut Graph, memory: Var, inputs: &[Vec<usize>]) -> (Var, Vec<Var>) {
        let table = g.param(self.unit_embed);
        let x = g.embed(table, inputs.to_vec());
        let mut x = self.embed_with_positions(g, x);
        let mut layers = Vec::with_capacity(self.decoder.len());
        for layer in &self.decoder {
            x = layer.forward(g, x, memory, self.config.dropout);
            layers.push(x);
        }
        let h = self.dec_norm.forward(g, x);
        (self.unit_head.forward(g, h), layers)
    }

    fn ctc_logits(&self, g: &mut Graph, state: Var) -> Option<Var> {
        let (norm, head) = self.ctc.as_ref()?;
        let h = norm.forward(g, state);
        Some(head.forward(g, h))
    }

    /// Builds the loss graph of one item. Returns the graph root (already
    /// weighted by `weights`) and the unweighted sums `(unit, aux..., ctc)`.
    fn item_loss(&self, g: &mut Graph, item: &Prepared, weights: &ItemWeights) -> (Var, f64, Vec<f64>, Option<f64>) {
        let cfg = &self.config;
        let source = item.source.head_rows(item.source_len);
        let enc = self.encode(g, &source);
        let inputs = &item.unit_inputs[..item.unit_len];
        let (logits, layers) = self.decode(g, enc.out, inputs);
        let v = cfg.units + 1;
        let flat = g.reshape(logits, item.unit_len * cfg.group(), v);
        let targets: Vec<Option<usize>> = item.unit_targets[..item.unit_len].iter().flatten().map(|&t| Some(t)).collect();
        let unit = g.smoothed_ce(flat, &targets, cfg.label_smoothing);
        let mut terms = vec![(unit, weights.unit)];
        let mut aux_sums = Vec::with_capacity(self.aux.len());
        for (j, (dec, spec)) in self.aux.iter().zip(&cfg.aux).enumerate() {
            let (inp, tgt, len) = &item.aux[j];
            let memory = enc.layers[spec.attach_layer - 1];
            let table = g.param(dec.embed);
            let x = g.embed(table, inp[..*len].iter().map(|&t| vec![t]).collect());
            let mut x = self.embed_with_positions(g, x);
            for layer in &dec.layers {
                x = layer.forward(g, x, memory, cfg.dropout);
            }
            let h = dec.norm.forward(g, x);
            let logits = dec.head.forward(g, h);
            let t: Vec<Option<usize>> = tgt[..*len].iter().map(|&t| Some(t)).collect();
            let loss = g.smoothed_ce(logits, &t, cfg.label_smoothing);
            aux_sums.push(g.scalar(loss));
            terms.push((loss, weights.aux[j]));
        }
        let mut ctc_sum = None;
        if cfg.ctc_attach_layer > 0 && weights.ctc_feasible {
            let state = layers[cfg.ctc_attach_layer - 1];
            if let Some(logits) = self.ctc_logits(g, state) {
                if let Some(loss) = g.ctc(logits, &item.ctc_target, cfg.ctc_blank()) {
                    ctc_sum = Some(g.scalar(loss));
                    terms.push((loss, weights.ctc));
                }
            }
        }
        let unit_sum = g.scalar(unit);
        (g.weighted_sum(terms), unit_sum, aux_sums, ctc_sum)
    }

    fn ctc_feasible(&self, item: &Prepared) -> bool {
        self.config.ctc_attach_layer > 0 && !item.ctc_target.is_empty() && min_frames(&item.ctc_target) <= item.unit_len
    }

    /// Per-token averaged losses of `batch`. With `grads`, gradients of the
    /// total are accumulated into it. `dropout_seed` selects training mode;
    /// item `i` draws its dropout masks from `mix(seed, i)`.
    pub fn forward_train(&self, batch: &Batch, dropout_seed: Option<u64>, mut grads: Option<&mut Gradients>) -> Result<LossBreakdown> {
        let cfg = &self.config;
        if batch.items.is_empty() {
            return Err(domain("empty batch"));
        }
        let n_unit: usize = batch.items.iter().map(|p| p.unit_len * cfg.group()).sum();
        let n_aux: Vec<usize> = (0..cfg.aux.len()).map(|j| batch.items.iter().map(|p| p.aux[j].2).sum()).collect();
        let feasible: Vec<bool> = batch.items.iter().map(|p| self.ctc_feasible(p)).collect();
        if cfg.ctc_attach_layer > 0 {
            for (p, ok) in batch.items.iter().zip(&feasible) {
                if !ok {
                    log::warn!("skipping CTC for {}: target of {} tokens does not fit {} decoder steps", p.id, p.ctc_target.len(), p.unit_len);
                }
            }
        }
        let n_ctc: usize = batch.items.iter().zip(&feasible).filter(|(_, &f)| f).map(|(p, _)| p.ctc_target.len()).sum();
        let weights_for = |ok: bool| ItemWeights {
            unit: 1.0 / n_unit as f64,
            aux: n_aux.iter().map(|&n| cfg.lambda_aux / n.max(1) as f64).collect(),
            ctc: cfg.lambda_ctc / n_ctc.max(1) as f64,
            ctc_feasible: ok,
        };
        let mut unit = 0.0;
        let mut aux = vec![0.0; cfg.aux.len()];
        let mut ctc = 0.0;
        let mut skipped = 0;
        for (i, item) in batch.items.iter().enumerate() {
            let mut g = match dropout_seed {
                Some(s) => Graph::training(&self.params, crate::corpus::mix(s, i as u64)),
                None => Graph::new(&self.params),
            };
            let (root, u, a, c) = self.item_loss(&mut g, item, &weights_for(feasible[i]));
            unit += u;
            for (acc, v) in aux.iter_mut().zip(a) {
                *acc += v;
            }
            match c {
                Some(c) => ctc += c,
                None if cfg.ctc_attach_layer > 0 => skipped += 1,
                None => {}
            }
            if let Some(gr) = grads.as_deref_mut() {
                g.backward(root, 1.0, gr);
            }
        }
        let unit_loss = unit / n_unit as f64;
        let aux_losses: Vec<f64> = aux.iter().zip(&n_aux).map(|(s, &n)| s / n.max(1) as f64).collect();
        let ctc_loss = if n_ctc == 0 { 0.0 } else { ctc / n_ctc as f64 };
        let total = unit_loss + cfg.lambda_aux * aux_losses.iter().sum::<f64>() + cfg.lambda_ctc * ctc_loss;
        Ok(LossBreakdown { unit_loss, aux_losses, ctc_loss, total, ctc_skipped: skipped })
    }

    /// Final encoder states for a source utterance.
    pub fn encode_source(&self, source: &Mat) -> Result<Mat> {
        if source.cols != self.config.input_dim || source.rows == 0 {
            return Err(Error::Shape {
                expected: format!("non-empty T x {} source", self.config.input_dim),
                got: format!("{} x {}", source.rows, source.cols),
            });
        }
        let mut g = Graph::new(&self.params);
        let enc = self.encode(&mut g, source);
        Ok(g.value(enc.out).clone())
    }

    /// Log-probabilities of the next group given decoder `inputs`
    /// (`group x (K+1)`), plus the CTC-layer state of the last position.
    pub fn next_step(&self, memory: &Mat, inputs: &[Vec<usize>]) -> (Mat, Vec<f64>) {
        let mut g = Graph::new(&self.params);
        let mem = g.input(memory.clone());
        let (logits, layers) = self.decode(&mut g, mem, inputs);
        let v = self.config.units + 1;
        let last = g.value(logits).row(inputs.len() - 1);
        let mut lp = Mat::from_vec(self.config.group(), v, last.to_vec());
        for r in 0..lp.rows {
            log_softmax_row(lp.row_mut(r));
        }
        let state = match self.config.ctc_attach_layer {
            0 => Vec::new(),
            l => g.value(layers[l - 1]).row(inputs.len() - 1).to_vec(),
        };
        (lp, state)
    }

    /// Teacher-forced log-probability of emitting `groups` in order.
    pub fn score_groups(&self, memory: &Mat, groups: &[Vec<usize>]) -> f64 {
        if groups.is_empty() {
            return 0.0;
        }
        let inputs = shift_right(&self.config, groups);
        let mut g = Graph::new(&self.params);
        let mem = g.input(memory.clone());
        let (logits, _) = self.decode(&mut g, mem, &inputs);
        let v = self.config.units + 1;
        let flat = Mat::from_vec(groups.len() * self.config.group(), v, g.value(logits).data.clone());
        let lp = log_softmax(&flat);
        groups.iter().flatten().enumerate().map(|(i, &t)| lp.get(i, t)).sum()
    }

    /// Greedy CTC text from per-step CTC-layer states (`steps x d`).
    pub fn ctc_text(&self, states: &Mat) -> Result<Vec<usize>> {
        if self.ctc.is_none() {
            return Err(config_err("model has no CTC head"));
        }
        if states.rows == 0 {
            return Ok(Vec::new());
        }
        let mut g = Graph::new(&self.params);
        let s = g.input(states.clone());
        let logits = self.ctc_logits(&mut g, s).expect("ctc head present");
        Ok(ctc_greedy_decode(&log_softmax(g.value(logits)), self.config.ctc_blank()))
    }
}

struct ItemWeights {
    unit: f64,
    aux: Vec<f64>,
    ctc: f64,
    ctc_feasible: bool,
}

/// Uniform-smoothed cross-entropy of one logit row:
/// `(1 - eps) * nll(target) + eps * mean_c nll(c)`.
pub fn label_smoothed_ce(logits: &[f64], target: usize, eps: f64) -> Result<f64> {
    if target >= logits.len() {
        return Err(Error::Vocabulary { id: target, size: logits.len() });
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(domain("label smoothing must lie in [0, 1)"));
    }
    let mut lp = logits.to_vec();
    log_softmax_row(&mut lp);
    let mean = -lp.iter().sum::<f64>() / lp.len() as f64;
    Ok((1.0 - eps) * -lp[target] + eps * mean)
}

#[cfg(test)]
mod tests;
