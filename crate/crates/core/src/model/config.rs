use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{config, Error, Result};

/// Target encoding of the unit decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Mode {
    /// `r` units per step from `r` parallel softmaxes.
    Stacked,
    /// Duplicate-free units, one per step.
    Reduced,
    /// The full frame-rate stream, one unit per step.
    R1,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Stacked => "stacked",
            Mode::Reduced => "reduced",
            Mode::R1 => "r1",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "stacked" => Some(Mode::Stacked),
            "reduced" => Some(Mode::Reduced),
            "r1" => Some(Mode::R1),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum AuxTarget {
    SourceChars,
    TargetChars,
    SourceUnits,
}

impl AuxTarget {
    pub fn name(self) -> &'static str {
        match self {
            AuxTarget::SourceChars => "source-chars",
            AuxTarget::TargetChars => "target-chars",
            AuxTarget::SourceUnits => "source-units",
        }
    }

    pub fn parse(s: &str) -> Option<AuxTarget> {
        match s {
            "source-chars" => Some(AuxTarget::SourceChars),
            "target-chars" => Some(AuxTarget::TargetChars),
            "source-units" => Some(AuxTarget::SourceUnits),
            _ => None,
        }
    }
}

/// An auxiliary decoder reading the output of encoder layer `attach_layer`
/// (1-based).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AuxSpec {
    pub target: AuxTarget,
    pub attach_layer: usize,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub input_dim: usize,
    pub conv_layers: usize,
    pub conv_kernel: usize,
    pub conv_channels: usize,
    pub conv_stride: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub embed_dim: usize,
    pub ffn_dim: usize,
    pub enc_heads: usize,
    pub dec_heads: usize,
    pub aux: Vec<AuxSpec>,
    pub aux_layers: usize,
    pub aux_heads: usize,
    /// 1-based unit-decoder layer feeding the CTC head; 0 disables it.
    pub ctc_attach_layer: usize,
    /// Number of discrete units `K`.
    pub units: usize,
    pub r: usize,
    pub mode: Mode,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    /// Source-side unit inventory, used only by `source-units` aux tasks.
    pub src_units: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    pub lambda_aux: f64,
    pub lambda_ctc: f64,
    pub lambda_dur: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// Full-size configuration: 12/6 layers of width 256, two kernel-5
    /// convolutions with 1024 channels, K = 100.
    pub fn paper() -> Self {
        ModelConfig {
            input_dim: 80,
            conv_layers: 2,
            conv_kernel: 5,
            conv_channels: 1024,
            conv_stride: 2,
            enc_layers: 12,
            dec_layers: 6,
            embed_dim: 256,
            ffn_dim: 2048,
            enc_heads: 4,
            dec_heads: 8,
            aux: alloc::vec![
                AuxSpec { target: AuxTarget::SourceChars, attach_layer: 6 },
                AuxSpec { target: AuxTarget::TargetChars, attach_layer: 8 },
            ],
            aux_layers: 2,
            aux_heads: 4,
            ctc_attach_layer: 3,
            units: 100,
            r: 5,
            mode: Mode::Reduced,
            src_vocab: 32,
            tgt_vocab: 32,
            src_units: 0,
            dropout: 0.1,
            label_smoothing: 0.2,
            lambda_aux: 8.0,
            lambda_ctc: 1.6,
            lambda_dur: 1.0,
            seed: 1,
        }
    }

    /// Small configuration for the synthetic corpus.
    pub fn desk() -> Self {
        ModelConfig {
            input_dim: 16,
            conv_layers: 2,
            conv_kernel: 5,
            conv_channels: 128,
            conv_stride: 2,
            enc_layers: 4,
            dec_layers: 2,
            embed_dim: 64,
            ffn_dim: 256,
            enc_heads: 4,
            dec_heads: 4,
            aux: alloc::vec![AuxSpec { target: AuxTarget::TargetChars, attach_layer: 3 }],
            aux_layers: 2,
            aux_heads: 4,
            ctc_attach_layer: 1,
            units: 20,
            r: 5,
            mode: Mode::Reduced,
            src_vocab: 20,
            tgt_vocab: 20,
            src_units: 0,
            dropout: 0.1,
            label_smoothing: 0.2,
            lambda_aux: 8.0,
            lambda_ctc: 1.6,
            lambda_dur: 1.0,
            seed: 1,
        }
    }

    /// Reduction factor actually used by the unit decoder.
    pub fn group(&self) -> usize {
        match self.mode {
            Mode::Stacked => self.r,
            Mode::Reduced | Mode::R1 => 1,
        }
    }

    /// Id shared by padding, BOS and EOS in the unit vocabulary.
    pub fn unit_pad(&self) -> usize {
        self.units
    }

    pub fn ctc_blank(&self) -> usize {
        self.tgt_vocab
    }

    pub fn aux_vocab(&self, target: AuxTarget) -> usize {
        match target {
            AuxTarget::SourceChars => self.src_vocab,
            AuxTarget::TargetChars => self.tgt_vocab,
            AuxTarget::SourceUnits => self.src_units,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_dim", self.input_dim),
            ("conv_kernel", self.conv_kernel),
            ("conv_channels", self.conv_channels),
            ("conv_stride", self.conv_stride),
            ("enc_layers", self.enc_layers),
            ("dec_layers", self.dec_layers),
            ("embed_dim", self.embed_dim),
            ("ffn_dim", self.ffn_dim),
            ("enc_heads", self.enc_heads),
            ("dec_heads", self.dec_heads),
            ("units", self.units),
            ("r", self.r),
            ("src_vocab", self.src_vocab),
            ("tgt_vocab", self.tgt_vocab),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(config(format!("{name} must be positive")));
            }
        }
        for (name, h) in [("enc_heads", self.enc_heads), ("dec_heads", self.dec_heads)] {
            if !self.embed_dim.is_multiple_of(h) {
                return Err(config(format!("embed_dim {} not divisible by {name} {h}", self.embed_dim)));
            }
        }
        if !self.conv_channels.is_multiple_of(2) {
            return Err(config("conv_channels must be even for the gated linear unit"));
        }
        if self.mode == Mode::R1 && self.r != 1 {
            return Err(config("mode r1 requires r = 1"));
        }
        if self.ctc_attach_layer > self.dec_layers {
            return Err(config(format!(
                "ctc_attach_layer {} outside decoder depth {}",
                self.ctc_attach_layer, self.dec_layers
            )));
        }
        if !self.aux.is_empty() {
            if self.aux_layers == 0 || self.aux_heads == 0 || !self.embed_dim.is_multiple_of(self.aux_heads) {
                return Err(config("aux decoders need layers and heads dividing embed_dim"));
            }
            for a in &self.aux {
                if a.attach_layer == 0 || a.attach_layer > self.enc_layers {
                    return Err(config(format!(
                        "aux {} attach layer {} outside encoder depth {}",
                        a.target.name(),
                        a.attach_layer,
                        self.enc_layers
                    )));
                }
                if self.aux_vocab(a.target) == 0 {
                    return Err(config(format!("aux {} has an empty vocabulary", a.target.name())));
                }
            }
        }
        for (name, v) in [("lambda_aux", self.lambda_aux), ("lambda_ctc", self.lambda_ctc), ("lambda_dur", self.lambda_dur)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config(format!("{name} must be finite and >= 0")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(config("dropout must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(config("label_smoothing must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Flat `key = value` pairs covering every field.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let aux: Vec<String> = self.aux.iter().map(|a| format!("{}@{}", a.target.name(), a.attach_layer)).collect();
        let p = |k: &str, v: String| (k.to_string(), v);
        alloc::vec![
            p("input_dim", self.input_dim.to_string()),
            p("conv_layers", self.conv_layers.to_string()),
            p("conv_kernel", self.conv_kernel.to_string()),
            p("conv_channels", self.conv_channels.to_string()),
            p("conv_stride", self.conv_stride.to_string()),
            p("enc_layers", self.enc_layers.to_string()),
            p("dec_layers", self.dec_layers.to_string()),
            p("embed_dim", self.embed_dim.to_string()),
            p("ffn_dim", self.ffn_dim.to_string()),
            p("enc_heads", self.enc_heads.to_string()),
            p("dec_heads", self.dec_heads.to_string()),
            p("aux", aux.join(",")),
            p("aux_layers", self.aux_layers.to_string()),
            p("aux_heads", self.aux_heads.to_string()),
            p("ctc_attach_layer", self.ctc_attach_layer.to_string()),
            p("units", self.units.to_string()),
            p("r", self.r.to_string()),
            p("mode", self.mode.name().to_string()),
            p("src_vocab", self.src_vocab.to_string()),
            p("tgt_vocab", self.tgt_vocab.to_string()),
            p("src_units", self.src_units.to_string()),
            p("dropout", format!("{:?}", self.dropout)),
            p("label_smoothing", format!("{:?}", self.label_smoothing)),
            p("lambda_aux", format!("{:?}", self.lambda_aux)),
            p("lambda_ctc", format!("{:?}", self.lambda_ctc)),
            p("lambda_dur", format!("{:?}", self.lambda_dur)),
            p("seed", self.seed.to_string()),
        ]
    }

    pub fn keys() -> Vec<String> {
        ModelConfig::desk().to_pairs().into_iter().map(|(k, _)| k).collect()
    }

    /// Overrides fields from `key = value` pairs; unknown keys are rejected.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("invalid value {value:?} for {key}: {what}"));
        let uint = || value.trim().parse::<usize>().map_err(|_| bad("expected an unsigned integer"));
        let float = || value.trim().parse::<f64>().map_err(|_| bad("expected a number"));
        match key {
            "input_dim" => self.input_dim = uint()?,
            "conv_layers" => self.conv_layers = uint()?,
            "conv_kernel" => self.conv_kernel = uint()?,
            "conv_channels" => self.conv_channels = uint()?,
            "conv_stride" => self.conv_stride = uint()?,
            "enc_layers" => self.enc_layers = uint()?,
            "dec_layers" => self.dec_layers = uint()?,
            "embed_dim" => self.embed_dim = uint()?,
            "ffn_dim" => self.ffn_dim = uint()?,
            "enc_heads" => self.enc_heads = uint()?,
            "dec_heads" => self.dec_heads = uint()?,
            "aux" => {
                self.aux = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        let (t, l) = s.split_once('@').ok_or_else(|| bad("expected target@layer"))?;
                        let target = AuxTarget::parse(t).ok_or_else(|| bad("unknown aux target"))?;
                        let attach_layer = l.parse().map_err(|_| bad("attach layer must be an integer"))?;
                        Ok(AuxSpec { target, attach_layer })
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            "aux_layers" => self.aux_layers = uint()?,
            "aux_heads" => self.aux_heads = uint()?,
            "ctc_attach_layer" => self.ctc_attach_layer = uint()?,
            "units" => self.units = uint()?,
            "r" => self.r = uint()?,
            "mode" => self.mode = Mode::parse(value.trim()).ok_or_else(|| bad("expected stacked, reduced or r1"))?,
            "src_vocab" => self.src_vocab = uint()?,
            "tgt_vocab" => self.tgt_vocab = uint()?,
            "src_units" => self.src_units = uint()?,
            "dropout" => self.dropout = float()?,
            "label_smoothing" => self.label_smoothing = float()?,
            "lambda_aux" => self.lambda_aux = float()?,
            "lambda_ctc" => self.lambda_ctc = float()?,
            "lambda_dur" => self.lambda_dur = float()?,
            "seed" => self.seed = value.trim().parse().map_err(|_| bad("expected an unsigned integer"))?,
            _ => return Err(Error::Config(format!("unknown model key {key:?}"))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_pairs() {
            s.push_str(&k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    /// Parses [`to_text`](Self::to_text) output. Every key must be present.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::desk();
        let mut seen = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: i + 1, msg: "expected key = value".to_string() })?;
            let k = k.trim();
            cfg.apply(k, v.trim()).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
            seen.push(k.to_string());
        }
        if let Some(missing) = ModelConfig::keys().into_iter().find(|k| !seen.contains(k)) {
            return Err(Error::Parse { line: 0, msg: format!("missing key {missing}") });
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        ModelConfig::paper().validate().unwrap();
        ModelConfig::desk().validate().unwrap();
        let p = ModelConfig::paper();
        assert_eq!((p.units, p.r, p.lambda_aux, p.lambda_ctc, p.label_smoothing), (100, 5, 8.0, 1.6, 0.2));
    }

    #[test]
    fn text_roundtrip_and_rejection() {
        let mut c = ModelConfig::paper();
        c.dropout = 0.123;
        c.mode = Mode::Stacked;
        assert_eq!(ModelConfig::from_text(&c.to_text()).unwrap(), c);
        let mut d = ModelConfig::desk();
        assert!(d.apply("nonsense", "1").is_err());
        assert!(d.apply("mode", "fast").is_err());
        assert!(ModelConfig::from_text("units = 3\n").is_err());
    }

    #[test]
    fn attach_layers_are_checked() {
        let mut c = ModelConfig::desk();
        c.ctc_attach_layer = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk();
        c.aux[0].attach_layer = 5;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk();
        c.mode = Mode::R1;
        assert!(c.validate().is_err());
        c.r = 1;
        c.validate().unwrap();
    }
}
