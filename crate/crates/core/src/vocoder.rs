//! Units to waveform: a log-domain duration predictor for reduced units and
//! a sinusoid-per-unit template synthesizer.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::mix;
use crate::error::{config, domain, Error, Result};
use crate::graph::{Gradients, Graph, ParamId, ParamStore, Var};
use crate::nn::{normal_init, Conv1d, LayerNorm, Linear};
use crate::optim::{inverse_sqrt_lr, Adam, AdamConfig};
use crate::units::{expand, ReducedUnits, UnitSequence};

/// Maps unit `k` to a sinusoid at `base_hz + spacing_hz * k`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UnitAudioSpec {
    pub units: usize,
    pub sample_rate: u32,
    pub samples_per_frame: usize,
    pub base_hz: f64,
    pub spacing_hz: f64,
    pub amplitude: f64,
}

impl UnitAudioSpec {
    /// 16 kHz, 20 ms frames, frequencies on the 50 Hz analysis grid spread
    /// as widely as the band allows (at most 200 Hz apart).
    pub fn new(units: usize) -> Result<Self> {
        let bin = 50.0;
        let (base, top) = (200.0, 7_800.0);
        let spacing = (libm::floor((top - base) / units.max(1) as f64 / bin) * bin).min(200.0);
        let spec = UnitAudioSpec {
            units,
            sample_rate: 16_000,
            samples_per_frame: 320,
            base_hz: base,
            spacing_hz: spacing,
            amplitude: 0.5,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.units == 0 || self.samples_per_frame == 0 || self.sample_rate == 0 {
            return Err(config("audio spec needs units, sample rate and frame size"));
        }
        if self.spacing_hz < 50.0 {
            return Err(config(format!("unit frequencies {} Hz apart, need >= 50", self.spacing_hz)));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if self.base_hz <= 0.0 || self.frequency(self.units - 1) >= nyquist {
            return Err(config("unit frequencies must lie in (0, nyquist)"));
        }
        let bin = self.sample_rate as f64 / self.samples_per_frame as f64;
        let on_grid = |f: f64| libm::fabs(f / bin - libm::round(f / bin)) < 1e-9;
        if !on_grid(self.base_hz) || !on_grid(self.spacing_hz) {
            return Err(config(format!("unit frequencies must be multiples of the {bin} Hz frame bin")));
        }
        Ok(())
    }

    pub fn frequency(&self, unit: usize) -> f64 {
        self.base_hz + self.spacing_hz * unit as f64
    }
}

/// Renders a frame-rate unit stream. The phase runs continuously across
/// frames.
pub fn synthesize_units(units: &[usize], spec: &UnitAudioSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(units.len() * spec.samples_per_frame);
    let mut phase = 0.0f64;
    let sr = spec.sample_rate as f64;
    for &u in units {
        if u >= spec.units {
            return Err(Error::Vocabulary { id: u, size: spec.units });
        }
        let step = 2.0 * core::f64::consts::PI * spec.frequency(u) / sr;
        for _ in 0..spec.samples_per_frame {
            out.push(spec.amplitude * libm::sin(phase));
            phase += step;
            if phase >= 2.0 * core::f64::consts::PI {
                phase -= 2.0 * core::f64::consts::PI;
            }
        }
    }
    Ok(out)
}

/// What to synthesize.
#[derive(Clone, Copy, Debug)]
pub enum SynthesisInput<'a> {
    /// A frame-rate stream, used as is.
    Full(&'a UnitSequence),
    /// Reduced units with known durations.
    Reduced(&'a ReducedUnits),
    /// Duplicate-free units whose durations come from a duration model.
    Predict(&'a [usize]),
}

pub fn synthesize(input: SynthesisInput<'_>, spec: &UnitAudioSpec, durations: Option<&DurationModel>) -> Result<Vec<f64>> {
    match input {
        SynthesisInput::Full(seq) => synthesize_units(&seq.0, spec),
        SynthesisInput::Reduced(red) => synthesize_units(&expand(red)?.0, spec),
        SynthesisInput::Predict(units) => {
            let model = durations.ok_or_else(|| domain("reduced units need a duration model"))?;
            let d = model.predict(units)?;
            synthesize_units(&expand(&ReducedUnits { units: units.to_vec(), durations: d })?.0, spec)
        }
    }
}

/// Mean over positions of `(pred - ln d)^2`.
pub fn duration_loss(predicted: &[f64], durations: &[usize]) -> Result<f64> {
    let targets = log_durations(predicted.len(), durations)?;
    Ok(predicted.iter().zip(&targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / targets.len() as f64)
}

fn log_durations(n: usize, durations: &[usize]) -> Result<Vec<f64>> {
    if n != durations.len() {
        return Err(domain("prediction and duration counts differ"));
    }
    if durations.is_empty() {
        return Err(domain("empty duration sequence"));
    }
    if durations.contains(&0) {
        return Err(domain("durations must be >= 1"));
    }
    Ok(durations.iter().map(|&d| libm::log(d as f64)).collect())
}

/// `max(1, round(exp(p)))` per position.
pub fn durations_from_log(predicted: &[f64]) -> Vec<usize> {
    predicted
        .iter()
        .map(|&p| {
            let d = libm::round(libm::exp(p));
            if d.is_finite() && d >= 1.0 { d as usize } else { 1 }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DurationConfig {
    pub units: usize,
    pub channels: usize,
    pub kernel: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl DurationConfig {
    pub fn new(units: usize) -> Self {
        DurationConfig { units, channels: 128, kernel: 3, dropout: 0.5, seed: 1 }
    }
}

#[derive(Clone, Debug)]
struct DurationBlock {
    conv: Conv1d,
    norm: LayerNorm,
}

/// Embedding, two conv/ReLU/LayerNorm/dropout blocks and a scalar head.
#[derive(Clone, Debug)]
pub struct DurationModel {
    pub config: DurationConfig,
    pub params: ParamStore,
    embed: ParamId,
    blocks: Vec<DurationBlock>,
    head: Linear,
}

impl DurationModel {
    pub fn new(config: DurationConfig) -> Result<Self> {
        if config.units == 0 || config.channels == 0 || config.kernel.is_multiple_of(2) {
            return Err(self::config("duration model needs units, channels and an odd kernel"));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(self::config("dropout must lie in [0, 1)"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let c = config.channels;
        let embed = params.add("dur.embed", normal_init(&mut rng, config.units, c, libm::sqrt(1.0 / c as f64)));
        let blocks = (0..2)
            .map(|i| DurationBlock {
                conv: Conv1d::new(&mut params, &mut rng, &format!("dur.conv{i}"), c, c, config.kernel, 1),
                norm: LayerNorm::new(&mut params, &format!("dur.norm{i}"), c),
            })
            .collect();
        let head = Linear::new(&mut params, &mut rng, "dur.head", c, 1, true);
        Ok(DurationModel { config, params, embed, blocks, head })
    }

    /// Rebuilds the layer layout around an existing parameter store.
    pub fn from_params(config: DurationConfig, params: ParamStore) -> Result<Self> {
        let mut model = DurationModel::new(config)?;
        if params.len() != model.params.len()
            || params.iter().zip(model.params.iter()).any(|(a, b)| a.1 != b.1 || a.2.rows != b.2.rows || a.2.cols != b.2.cols)
        {
            return Err(domain("parameter layout does not match the duration config"));
        }
        model.params = params;
        Ok(model)
    }

    /// Log-duration prediction, one row per unit.
    pub fn forward(&self, g: &mut Graph, units: &[usize]) -> Var {
        let table = g.param(self.embed);
        let mut x = g.embed(table, units.iter().map(|&u| vec![u]).collect());
        for b in &self.blocks {
            x = b.conv.forward(g, x);
            x = g.relu(x);
            x = b.norm.forward(g, x);
            x = g.dropout(x, self.config.dropout);
        }
        self.head.forward(g, x)
    }

    fn check(&self, units: &[usize]) -> Result<()> {
        if units.is_empty() {
            return Err(domain("empty unit sequence"));
        }
        match units.iter().find(|&&u| u >= self.config.units) {
            Some(&u) => Err(Error::Vocabulary { id: u, size: self.config.units }),
            None => Ok(()),
        }
    }

    pub fn predict_log(&self, units: &[usize]) -> Result<Vec<f64>> {
        self.check(units)?;
        let mut g = Graph::new(&self.params);
        let y = self.forward(&mut g, units);
        Ok(g.value(y).data.clone())
    }

    pub fn predict(&self, units: &[usize]) -> Result<Vec<usize>> {
        Ok(durations_from_log(&self.predict_log(units)?))
    }

    /// Per-position mean log-domain MSE and its gradient, accumulated into
    /// `grads` with weight `scale`.
    pub fn loss_and_grad(
        &self,
        red: &ReducedUnits,
        dropout_seed: Option<u64>,
        scale: f64,
        grads: &mut Gradients,
    ) -> Result<f64> {
        self.check(&red.units)?;
        let targets = log_durations(red.units.len(), &red.durations)?;
        let mut g = match dropout_seed {
            Some(s) => Graph::training(&self.params, s),
            None => Graph::new(&self.params),
        };
        let y = self.forward(&mut g, &red.units);
        let se = g.squared_error(y, &targets);
        let n = targets.len() as f64;
        let loss = g.scale(se, 1.0 / n);
        g.backward(loss, scale, grads);
        Ok(g.scalar(loss))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DurationTrainConfig {
    pub steps: u64,
    pub batch: usize,
    pub lr: f64,
    pub warmup: u64,
    pub seed: u64,
}

impl Default for DurationTrainConfig {
    fn default() -> Self {
        DurationTrainConfig { steps: 300, batch: 16, lr: 2e-3, warmup: 50, seed: 1 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DurationReport {
    /// Mean training loss of each step.
    pub losses: Vec<f64>,
    /// Fraction of held-out unit segments whose predicted duration is exact.
    pub heldout_accuracy: f64,
    pub heldout_mse: f64,
}

/// Mean log-domain MSE and exact-duration rate over a set of sequences.
pub fn evaluate_durations(model: &DurationModel, data: &[ReducedUnits]) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(domain("empty evaluation set"));
    }
    let (mut hits, mut total, mut mse) = (0usize, 0usize, 0.0);
    for red in data {
        let pred = model.predict_log(&red.units)?;
        mse += duration_loss(&pred, &red.durations)?;
        for (p, d) in durations_from_log(&pred).iter().zip(&red.durations) {
            hits += usize::from(p == d);
            total += 1;
        }
    }
    Ok((hits as f64 / total as f64, mse / data.len() as f64))
}

/// Adam training on `(units, durations)` pairs. Batches are drawn from a
/// per-epoch shuffle of `train`.
pub fn train_duration_model(
    config: DurationConfig,
    train: &[ReducedUnits],
    heldout: &[ReducedUnits],
    opts: &DurationTrainConfig,
) -> Result<(DurationModel, DurationReport)> {
    if train.is_empty() {
        return Err(domain("duration training set is empty"));
    }
    if opts.batch == 0 {
        return Err(self::config("batch size must be positive"));
    }
    let mut model = DurationModel::new(config)?;
    let mut adam = Adam::new(AdamConfig::default(), &model.params);
    let mut grads = Gradients::zeros_like(&model.params);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0u64;
    let mut losses = Vec::with_capacity(opts.steps as usize);
    for step in 1..=opts.steps {
        grads.zero();
        let mut batch_loss = 0.0;
        for b in 0..opts.batch {
            if cursor == order.len() {
                order = (0..train.len()).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(opts.seed, epoch)));
                epoch += 1;
                cursor = 0;
            }
            let idx = order[cursor];
            cursor += 1;
            let seed = mix(mix(opts.seed, step), b as u64);
            batch_loss += model.loss_and_grad(&train[idx], Some(seed), 1.0 / opts.batch as f64, &mut grads)?;
        }
        let batch_loss = batch_loss / opts.batch as f64;
        if !batch_loss.is_finite() {
            return Err(Error::NonFinite { component: "duration".into(), step });
        }
        losses.push(batch_loss);
        adam.update(&mut model.params, &grads, inverse_sqrt_lr(step, opts.lr, opts.warmup));
    }
    let (heldout_accuracy, heldout_mse) = if heldout.is_empty() { (0.0, 0.0) } else { evaluate_durations(&model, heldout)? };
    Ok((model, DurationReport { losses, heldout_accuracy, heldout_mse }))
}
