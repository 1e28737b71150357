use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::bleu::{bleu, BleuConfig};
use crate::corpus::Vocabulary;
use crate::error::{domain, Error, Result};
use crate::tensor::Mat;
use crate::units::Codebook;
use crate::vocoder::UnitAudioSpec;

/// Marker emitted for audio that matches no unit template.
pub const UNKNOWN: &str = "<unk>";

/// Speech recognizer over mono waveforms.
pub trait Recognizer {
    fn recognize(&self, waveform: &[f64]) -> Result<String>;
}

/// Unit to token-name correspondence plus the frame count of one token.
#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    pub unit_tokens: Vec<String>,
    pub frames_per_token: usize,
}

impl Lexicon {
    /// Labels each centroid with the token whose rendering template lies
    /// nearest to it.
    pub fn from_codebook(codebook: &Codebook, templates: &Mat, vocab: &Vocabulary, frames_per_token: usize) -> Result<Self> {
        if templates.cols != codebook.dim() {
            return Err(Error::Shape {
                expected: alloc::format!("{} template columns", codebook.dim()),
                got: alloc::format!("{}", templates.cols),
            });
        }
        if templates.rows != vocab.len() || templates.rows == 0 {
            return Err(domain("one template per vocabulary entry required"));
        }
        if frames_per_token == 0 {
            return Err(domain("frames per token must be positive"));
        }
        let unit_tokens = codebook
            .centroids
            .rows_iter()
            .map(|c| {
                let mut best = (0, f64::INFINITY);
                for (t, row) in templates.rows_iter().enumerate() {
                    let d: f64 = row.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                    if d < best.1 {
                        best = (t, d);
                    }
                }
                vocab.name(best.0).to_string()
            })
            .collect();
        Ok(Lexicon { unit_tokens, frames_per_token })
    }
}

/// Template-matching recognizer for [`UnitAudioSpec`] audio.
#[derive(Clone, Debug, PartialEq)]
pub struct RuleRecognizer {
    pub spec: UnitAudioSpec,
    pub lexicon: Lexicon,
}

impl RuleRecognizer {
    pub fn new(spec: UnitAudioSpec, lexicon: Lexicon) -> Result<Self> {
        spec.validate()?;
        if lexicon.unit_tokens.len() != spec.units {
            return Err(domain("lexicon and audio spec disagree on the unit count"));
        }
        Ok(RuleRecognizer { spec, lexicon })
    }

    /// Unit of one analysis window, or `None` when the window is silent or
    /// no template clearly dominates.
    pub fn window_unit(&self, window: &[f64]) -> Option<usize> {
        let n = window.len() as f64;
        let energy: f64 = window.iter().map(|x| x * x).sum();
        if energy / n < 1e-6 {
            return None;
        }
        let sr = self.spec.sample_rate as f64;
        let (mut best, mut second) = ((0, -1.0), -1.0);
        for u in 0..self.spec.units {
            let w = 2.0 * core::f64::consts::PI * self.spec.frequency(u) / sr;
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &x) in window.iter().enumerate() {
                re += x * libm::cos(w * i as f64);
                im -= x * libm::sin(w * i as f64);
            }
            let power = 2.0 * (re * re + im * im) / n;
            if power > best.1 {
                second = best.1;
                best = (u, power);
            } else if power > second {
                second = power;
            }
        }
        (best.1 >= 0.5 * energy && second <= 0.5 * best.1).then_some(best.0)
    }
}

impl Recognizer for RuleRecognizer {
    fn recognize(&self, waveform: &[f64]) -> Result<String> {
        rule_recognizer(waveform, self)
    }
}

/// Classifies every full 20 ms window, collapses runs of equal labels and
/// emits `max(1, round(run / frames_per_token))` tokens per run.
pub fn rule_recognizer(waveform: &[f64], recognizer: &RuleRecognizer) -> Result<String> {
    if waveform.iter().any(|x| !x.is_finite()) {
        return Err(domain("waveform contains non-finite samples"));
    }
    let labels: Vec<Option<&str>> = waveform
        .chunks_exact(recognizer.spec.samples_per_frame)
        .map(|w| recognizer.window_unit(w).map(|u| recognizer.lexicon.unit_tokens[u].as_str()))
        .collect();
    let f = recognizer.lexicon.frames_per_token as f64;
    let mut words: Vec<&str> = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        let mut j = i;
        while j < labels.len() && labels[j] == labels[i] {
            j += 1;
        }
        match labels[i] {
            Some(tok) => {
                let count = libm::round((j - i) as f64 / f).max(1.0) as usize;
                words.extend(core::iter::repeat_n(tok, count));
            }
            None => words.push(UNKNOWN),
        }
        i = j;
    }
    Ok(words.join(" "))
}

/// Recognizes every waveform; failures become empty hypotheses.
pub fn transcribe_all(waveforms: &[Vec<f64>], recognizer: &dyn Recognizer) -> Vec<String> {
    waveforms
        .iter()
        .enumerate()
        .map(|(i, w)| {
            recognizer.recognize(w).unwrap_or_else(|e| {
                log::warn!("recognition of utterance {i} failed: {e}");
                String::new()
            })
        })
        .collect()
}

/// Corpus BLEU of recognized speech against reference translations.
pub fn asr_bleu(waveforms: &[Vec<f64>], refs: &[Vec<String>], recognizer: &dyn Recognizer, cfg: &BleuConfig) -> Result<f64> {
    bleu(&transcribe_all(waveforms, recognizer), refs, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Language;
    use crate::vocoder::synthesize_units;
    use alloc::vec;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    fn identity_recognizer(k: usize, f: usize) -> RuleRecognizer {
        let vocab = Vocabulary::new(Language::Target, k);
        let lex = Lexicon { unit_tokens: (0..k).map(|i| vocab.name(i).to_string()).collect(), frames_per_token: f };
        RuleRecognizer::new(UnitAudioSpec::new(k).unwrap(), lex).unwrap()
    }

    #[test]
    fn recovers_unit_runs() {
        let r = identity_recognizer(20, 2);
        let w = synthesize_units(&[3, 3, 0, 0, 0, 0, 19, 3], &r.spec).unwrap();
        assert_eq!(r.recognize(&w).unwrap(), "d a a t d");
    }

    #[test]
    fn every_unit_is_separable() {
        let r = identity_recognizer(100, 1);
        for u in 0..100 {
            let w = synthesize_units(&[u, u], &r.spec).unwrap();
            assert_eq!(r.window_unit(&w[320..]), Some(u));
        }
    }

    #[test]
    fn noise_and_silence_are_unknown() {
        let r = identity_recognizer(20, 1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let noise: Vec<f64> = (0..320 * 6).map(|_| rng.random_range(-0.5..0.5)).collect();
        let out = r.recognize(&noise).unwrap();
        assert!(out.split(' ').all(|t| t == UNKNOWN), "{out}");
        assert_eq!(r.recognize(&vec![0.0; 640]).unwrap(), UNKNOWN);
        assert_eq!(r.recognize(&[]).unwrap(), "");
    }

    #[test]
    fn asr_bleu_identity_channel() {
        let r = identity_recognizer(20, 1);
        let waves = vec![synthesize_units(&[1, 2, 3, 4], &r.spec).unwrap()];
        let refs = vec![vec!["b c d e".to_string()]];
        assert_eq!(asr_bleu(&waves, &refs, &r, &BleuConfig::default()).unwrap(), 100.0);
        let bad = vec![vec![f64::NAN; 320]];
        assert_eq!(asr_bleu(&bad, &refs, &r, &BleuConfig::default()).unwrap(), 0.0);
    }
}
