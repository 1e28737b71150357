//! Flat `section.key = value` run configuration with presets.

use std::path::Path;

use s2ut_core::corpus::CorpusConfig;
use s2ut_core::decode::SearchConfig;
use s2ut_core::model::{Mode, ModelConfig, TrainConfig};
use s2ut_core::optim::AdamConfig;
use s2ut_core::units::MaskPolicy;
use s2ut_core::vocoder::{DurationConfig, DurationTrainConfig};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Paper,
}

impl Preset {
    pub fn parse(s: &str) -> Option<Preset> {
        match s {
            "desk" => Some(Preset::Desk),
            "paper" => Some(Preset::Paper),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnitsSettings {
    pub kmeans_iters: usize,
    /// Training utterances whose target frames feed k-means; 0 uses all.
    pub kmeans_utterances: usize,
    /// Utterances whose resynthesized target transcribes worse are dropped.
    pub wer_threshold: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub lr: f64,
    pub warmup: u64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub adam: AdamConfig,
    pub specaugment: bool,
    pub save_every: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DurationSettings {
    pub channels: usize,
    pub kernel: usize,
    pub dropout: f64,
    pub steps: u64,
    pub batch: usize,
    pub lr: f64,
    pub warmup: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeSettings {
    pub split: String,
    pub beam: usize,
    pub max_len: usize,
    /// 0 disables length normalization.
    pub length_penalty: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub bootstrap_resamples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchSettings {
    pub subset: String,
    pub n: usize,
    pub warmup: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub units: UnitsSettings,
    pub model: ModelConfig,
    pub train: TrainSettings,
    pub duration: DurationSettings,
    pub decode: DecodeSettings,
    pub eval: EvalSettings,
    pub bench: BenchSettings,
}

const DOCS: &[(&str, &str)] = &[
    ("seed", "global seed for corpus, k-means, initialization, batching and sampling"),
    ("corpus.src_vocab", "source vocabulary size"),
    ("corpus.tgt_vocab", "target vocabulary size"),
    ("corpus.feature_dim", "frame feature dimension"),
    ("corpus.min_len", "shortest sentence in tokens"),
    ("corpus.max_len", "longest sentence in tokens"),
    ("corpus.src_frames_per_token", "source frames rendered per token"),
    ("corpus.tgt_frames_per_token", "target frames rendered per token"),
    ("corpus.src_hop_ms", "source frame hop in ms"),
    ("corpus.tgt_hop_ms", "target frame hop in ms"),
    ("corpus.noise", "Gaussian noise std added to rendered frames"),
    ("corpus.n_train", "train split size"),
    ("corpus.n_dev", "dev split size"),
    ("corpus.n_dev2", "dev2 split size"),
    ("corpus.n_test", "test split size"),
    ("units.kmeans_iters", "maximum Lloyd iterations"),
    ("units.kmeans_utterances", "train utterances used to fit the codebook (0 = all)"),
    ("units.wer_threshold", "drop utterances whose resynthesized target WER (percent) exceeds this"),
    ("model.input_dim", "source feature dimension"),
    ("model.conv_layers", "strided GLU convolution layers"),
    ("model.conv_kernel", "convolution kernel width"),
    ("model.conv_channels", "convolution channels"),
    ("model.conv_stride", "convolution stride"),
    ("model.enc_layers", "encoder layers"),
    ("model.dec_layers", "unit decoder layers"),
    ("model.embed_dim", "model width"),
    ("model.ffn_dim", "feed-forward width"),
    ("model.enc_heads", "encoder attention heads"),
    ("model.dec_heads", "decoder attention heads"),
    ("model.aux", "auxiliary tasks as target@encoder_layer, comma separated"),
    ("model.aux_layers", "layers per auxiliary decoder"),
    ("model.aux_heads", "heads per auxiliary decoder"),
    ("model.ctc_attach_layer", "decoder layer feeding the CTC head (0 = no CTC)"),
    ("model.units", "discrete units K (also the k-means cluster count)"),
    ("model.r", "stacking factor"),
    ("model.mode", "stacked, reduced or r1"),
    ("model.src_vocab", "source text vocabulary"),
    ("model.tgt_vocab", "target text vocabulary"),
    ("model.src_units", "source unit inventory for source-units aux tasks"),
    ("model.dropout", "dropout rate"),
    ("model.label_smoothing", "label smoothing"),
    ("model.lambda_aux", "weight of each auxiliary loss"),
    ("model.lambda_ctc", "weight of the CTC loss"),
    ("model.lambda_dur", "weight of the duration loss"),
    ("train.lr", "peak learning rate"),
    ("train.warmup", "warmup steps of the inverse square-root schedule"),
    ("train.batch_size", "utterances per step"),
    ("train.max_steps", "optimizer steps"),
    ("train.adam_beta1", "Adam beta1"),
    ("train.adam_beta2", "Adam beta2"),
    ("train.adam_eps", "Adam epsilon"),
    ("train.specaugment", "apply LibriSpeech basic masking to source frames"),
    ("train.save_every", "checkpoint interval in steps (0 = only at the end)"),
    ("duration.channels", "duration predictor channels"),
    ("duration.kernel", "duration predictor kernel"),
    ("duration.dropout", "duration predictor dropout"),
    ("duration.steps", "duration predictor steps"),
    ("duration.batch", "duration predictor batch size"),
    ("duration.lr", "duration predictor peak learning rate"),
    ("duration.warmup", "duration predictor warmup steps"),
    ("decode.split", "split to decode, synthesize and evaluate"),
    ("decode.beam", "beam size"),
    ("decode.max_len", "maximum decoder steps"),
    ("decode.length_penalty", "length normalization exponent (0 = off)"),
    ("eval.bootstrap_resamples", "paired bootstrap resamples"),
    ("bench.subset", "random, shortest or longest"),
    ("bench.n", "utterances per subset"),
    ("bench.warmup", "untimed warmup utterances"),
];

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let corpus = CorpusConfig::default();
        let desk = RunConfig {
            seed: corpus.seed,
            corpus,
            units: UnitsSettings { kmeans_iters: 50, kmeans_utterances: 500, wer_threshold: 80.0 },
            model: ModelConfig::desk(),
            train: TrainSettings {
                lr: 2e-3,
                warmup: 200,
                batch_size: 16,
                max_steps: 2000,
                adam: AdamConfig::default(),
                specaugment: false,
                save_every: 250,
            },
            duration: DurationSettings { channels: 32, kernel: 3, dropout: 0.1, steps: 600, batch: 16, lr: 1e-2, warmup: 50 },
            decode: DecodeSettings { split: "test".into(), beam: 10, max_len: 100, length_penalty: 0.0 },
            eval: EvalSettings { bootstrap_resamples: 1000 },
            bench: BenchSettings { subset: "random".into(), n: 50, warmup: 1 },
        };
        match preset {
            Preset::Desk => desk,
            Preset::Paper => {
                let model = ModelConfig::paper();
                let duration = DurationConfig::new(model.units);
                RunConfig {
                    corpus: CorpusConfig { feature_dim: model.input_dim, noise: 0.3, ..desk.corpus.clone() },
                    units: UnitsSettings { kmeans_iters: 100, kmeans_utterances: 0, wer_threshold: 80.0 },
                    model,
                    train: TrainSettings {
                        lr: 5e-4,
                        warmup: 10_000,
                        batch_size: 64,
                        max_steps: 400_000,
                        adam: AdamConfig::default(),
                        specaugment: true,
                        save_every: 5000,
                    },
                    duration: DurationSettings {
                        channels: duration.channels,
                        kernel: duration.kernel,
                        dropout: duration.dropout,
                        steps: 20_000,
                        batch: 32,
                        lr: 2e-4,
                        warmup: 1000,
                    },
                    decode: DecodeSettings { max_len: 400, ..desk.decode.clone() },
                    ..desk
                }
            }
        }
    }

    pub fn keys() -> Vec<&'static str> {
        DOCS.iter().map(|(k, _)| *k).collect()
    }

    pub fn doc(key: &str) -> Option<&'static str> {
        DOCS.iter().find(|(k, _)| *k == key).map(|(_, d)| *d)
    }

    /// Every key with its current value, in documentation order.
    pub fn pairs(&self) -> Vec<(String, String)> {
        let model: Vec<(String, String)> = self.model.to_pairs();
        DOCS.iter()
            .map(|(k, _)| {
                let v = match *k {
                    "seed" => self.seed.to_string(),
                    k if k.starts_with("model.") => model.iter().find(|(m, _)| m == &k[6..]).map(|(_, v)| v.clone()).unwrap_or_default(),
                    k => self.scalar(k),
                };
                (k.to_string(), v)
            })
            .collect()
    }

    fn scalar(&self, key: &str) -> String {
        let c = &self.corpus;
        match key {
            "corpus.src_vocab" => c.src_vocab.to_string(),
            "corpus.tgt_vocab" => c.tgt_vocab.to_string(),
            "corpus.feature_dim" => c.feature_dim.to_string(),
            "corpus.min_len" => c.min_len.to_string(),
            "corpus.max_len" => c.max_len.to_string(),
            "corpus.src_frames_per_token" => c.src_frames_per_token.to_string(),
            "corpus.tgt_frames_per_token" => c.tgt_frames_per_token.to_string(),
            "corpus.src_hop_ms" => c.src_hop_ms.to_string(),
            "corpus.tgt_hop_ms" => c.tgt_hop_ms.to_string(),
            "corpus.noise" => format!("{:?}", c.noise),
            "corpus.n_train" => c.n_train.to_string(),
            "corpus.n_dev" => c.n_dev.to_string(),
            "corpus.n_dev2" => c.n_dev2.to_string(),
            "corpus.n_test" => c.n_test.to_string(),
            "units.kmeans_iters" => self.units.kmeans_iters.to_string(),
            "units.kmeans_utterances" => self.units.kmeans_utterances.to_string(),
            "units.wer_threshold" => format!("{:?}", self.units.wer_threshold),
            "train.lr" => format!("{:?}", self.train.lr),
            "train.warmup" => self.train.warmup.to_string(),
            "train.batch_size" => self.train.batch_size.to_string(),
            "train.max_steps" => self.train.max_steps.to_string(),
            "train.adam_beta1" => format!("{:?}", self.train.adam.beta1),
            "train.adam_beta2" => format!("{:?}", self.train.adam.beta2),
            "train.adam_eps" => format!("{:?}", self.train.adam.eps),
            "train.specaugment" => self.train.specaugment.to_string(),
            "train.save_every" => self.train.save_every.to_string(),
            "duration.channels" => self.duration.channels.to_string(),
            "duration.kernel" => self.duration.kernel.to_string(),
            "duration.dropout" => format!("{:?}", self.duration.dropout),
            "duration.steps" => self.duration.steps.to_string(),
            "duration.batch" => self.duration.batch.to_string(),
            "duration.lr" => format!("{:?}", self.duration.lr),
            "duration.warmup" => self.duration.warmup.to_string(),
            "decode.split" => self.decode.split.clone(),
            "decode.beam" => self.decode.beam.to_string(),
            "decode.max_len" => self.decode.max_len.to_string(),
            "decode.length_penalty" => format!("{:?}", self.decode.length_penalty),
            "eval.bootstrap_resamples" => self.eval.bootstrap_resamples.to_string(),
            "bench.subset" => self.bench.subset.clone(),
            "bench.n" => self.bench.n.to_string(),
            "bench.warmup" => self.bench.warmup.to_string(),
            _ => unreachable!("undocumented key {key}"),
        }
    }

    /// Sets one key; unknown keys and malformed values are usage errors.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let bad = |what: &str| Error::Usage(format!("invalid value {value:?} for {key}: {what}"));
        let uint = || value.parse::<usize>().map_err(|_| bad("expected an unsigned integer"));
        let u64v = || value.parse::<u64>().map_err(|_| bad("expected an unsigned integer"));
        let float = || value.parse::<f64>().map_err(|_| bad("expected a number"));
        let c = &mut self.corpus;
        match key {
            "seed" => self.seed = u64v()?,
            "corpus.src_vocab" => c.src_vocab = uint()?,
            "corpus.tgt_vocab" => c.tgt_vocab = uint()?,
            "corpus.feature_dim" => c.feature_dim = uint()?,
            "corpus.min_len" => c.min_len = uint()?,
            "corpus.max_len" => c.max_len = uint()?,
            "corpus.src_frames_per_token" => c.src_frames_per_token = uint()?,
            "corpus.tgt_frames_per_token" => c.tgt_frames_per_token = uint()?,
            "corpus.src_hop_ms" => c.src_hop_ms = value.parse().map_err(|_| bad("expected an unsigned integer"))?,
            "corpus.tgt_hop_ms" => c.tgt_hop_ms = value.parse().map_err(|_| bad("expected an unsigned integer"))?,
            "corpus.noise" => c.noise = float()?,
            "corpus.n_train" => c.n_train = uint()?,
            "corpus.n_dev" => c.n_dev = uint()?,
            "corpus.n_dev2" => c.n_dev2 = uint()?,
            "corpus.n_test" => c.n_test = uint()?,
            "units.kmeans_iters" => self.units.kmeans_iters = uint()?,
            "units.kmeans_utterances" => self.units.kmeans_utterances = uint()?,
            "units.wer_threshold" => self.units.wer_threshold = float()?,
            "model.seed" => return Err(Error::Usage("unknown key \"model.seed\"; use the global seed".into())),
            k if k.starts_with("model.") => self.model.apply(&k[6..], value).map_err(|e| Error::Usage(e.to_string()))?,
            "train.lr" => self.train.lr = float()?,
            "train.warmup" => self.train.warmup = u64v()?,
            "train.batch_size" => self.train.batch_size = uint()?,
            "train.max_steps" => self.train.max_steps = u64v()?,
            "train.adam_beta1" => self.train.adam.beta1 = float()?,
            "train.adam_beta2" => self.train.adam.beta2 = float()?,
            "train.adam_eps" => self.train.adam.eps = float()?,
            "train.specaugment" => self.train.specaugment = value.parse().map_err(|_| bad("expected true or false"))?,
            "train.save_every" => self.train.save_every = u64v()?,
            "duration.channels" => self.duration.channels = uint()?,
            "duration.kernel" => self.duration.kernel = uint()?,
            "duration.dropout" => self.duration.dropout = float()?,
            "duration.steps" => self.duration.steps = u64v()?,
            "duration.batch" => self.duration.batch = uint()?,
            "duration.lr" => self.duration.lr = float()?,
            "duration.warmup" => self.duration.warmup = u64v()?,
            "decode.split" => self.decode.split = value.to_string(),
            "decode.beam" => self.decode.beam = uint()?,
            "decode.max_len" => self.decode.max_len = uint()?,
            "decode.length_penalty" => self.decode.length_penalty = float()?,
            "eval.bootstrap_resamples" => self.eval.bootstrap_resamples = uint()?,
            "bench.subset" => self.bench.subset = value.to_string(),
            "bench.n" => self.bench.n = uint()?,
            "bench.warmup" => self.bench.warmup = uint()?,
            _ => return Err(Error::Usage(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("{}: line {}: expected key = value", origin.display(), i + 1)))?;
            self.apply(k.trim(), v).map_err(|e| Error::Usage(format!("{}: line {}: {e}", origin.display(), i + 1)))?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let usage = |e: s2ut_core::Error| Error::Usage(e.to_string());
        self.corpus.validate().map_err(usage)?;
        self.model_config().validate().map_err(usage)?;
        self.train_config().validate().map_err(usage)?;
        if !["random", "shortest", "longest"].contains(&self.bench.subset.as_str()) {
            return Err(Error::Usage(format!("bench.subset must be random, shortest or longest, not {:?}", self.bench.subset)));
        }
        if s2ut_core::corpus::Split::parse(&self.decode.split).is_none() {
            return Err(Error::Usage(format!("unknown split {:?}", self.decode.split)));
        }
        if self.decode.beam == 0 || self.decode.max_len == 0 {
            return Err(Error::Usage("decode.beam and decode.max_len must be positive".into()));
        }
        if self.model.mode == Mode::R1 && self.model.r != 1 {
            return Err(Error::Usage("mode r1 requires model.r = 1".into()));
        }
        Ok(())
    }

    /// Corpus configuration with the global seed.
    pub fn corpus_config(&self) -> CorpusConfig {
        CorpusConfig { seed: self.seed, ..self.corpus.clone() }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig { seed: self.seed, ..self.model.clone() }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.train.lr,
            warmup: self.train.warmup,
            batch_size: self.train.batch_size,
            max_steps: self.train.max_steps,
            seed: self.seed,
            adam: self.train.adam,
            specaugment: self.train.specaugment.then_some(MaskPolicy::LIBRISPEECH_BASIC),
        }
    }

    pub fn duration_config(&self) -> DurationConfig {
        DurationConfig {
            units: self.model.units,
            channels: self.duration.channels,
            kernel: self.duration.kernel,
            dropout: self.duration.dropout,
            seed: self.seed,
        }
    }

    pub fn duration_train_config(&self) -> DurationTrainConfig {
        DurationTrainConfig {
            steps: self.duration.steps,
            batch: self.duration.batch,
            lr: self.duration.lr,
            warmup: self.duration.warmup,
            seed: self.seed,
        }
    }

    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            length_penalty: (self.decode.length_penalty != 0.0).then_some(self.decode.length_penalty),
            ..SearchConfig::new(self.decode.beam, self.decode.max_len)
        }
    }

    /// Key/doc/default lines for the given key prefixes.
    pub fn help_for(&self, prefixes: &[&str]) -> String {
        let mut s = String::from("Accepted keys (set with --set key=value or a --config file):\n");
        for (k, v) in self.pairs() {
            if k == "seed" || prefixes.iter().any(|p| k.starts_with(p)) {
                s.push_str(&format!("  {k:<30} {} [default: {v}]\n", RunConfig::doc(&k).unwrap_or("")));
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_documented_and_roundtrips() {
        for preset in [Preset::Desk, Preset::Paper] {
            let cfg = RunConfig::preset(preset);
            let mut back = RunConfig::preset(if preset == Preset::Desk { Preset::Paper } else { Preset::Desk });
            back.apply_text(&cfg.to_text(), Path::new("test")).unwrap();
            assert_eq!(back, cfg);
            cfg.validate().unwrap();
        }
        let model_keys: Vec<String> = ModelConfig::keys().into_iter().filter(|k| k != "seed").map(|k| format!("model.{k}")).collect();
        for k in model_keys {
            assert!(RunConfig::doc(&k).is_some(), "{k}");
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut cfg = RunConfig::preset(Preset::Desk);
        for k in ["nope", "train.nope", "model.nope", "model.seed"] {
            assert_eq!(cfg.apply(k, "1").unwrap_err().exit_code(), 2, "{k}");
        }
        assert!(cfg.apply("train.lr", "fast").is_err());
    }

    #[test]
    fn paper_preset_values() {
        let cfg = RunConfig::preset(Preset::Paper);
        assert_eq!((cfg.model.units, cfg.model.r), (100, 5));
        assert_eq!((cfg.model.lambda_aux, cfg.model.lambda_ctc, cfg.model.label_smoothing), (8.0, 1.6, 0.2));
        assert_eq!(cfg.train.warmup, 10_000);
        assert_eq!((cfg.train.adam.beta1, cfg.train.adam.beta2, cfg.train.adam.eps), (0.9, 0.98, 1e-8));
    }
}
