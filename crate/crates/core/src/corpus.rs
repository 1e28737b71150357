//! Synthetic parallel corpus: token sentences in two toy languages related by
//! a fixed translation, rendered into frame features through per-token
//! templates.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{config, Error, Result};
use crate::eval::wer;
use crate::tensor::Mat;
use crate::units::UnitSequence;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Language {
    Source,
    Target,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub tokens: Vec<usize>,
    pub language: Language,
}

impl TokenSequence {
    pub fn new(tokens: Vec<usize>, language: Language, vocab: usize) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Domain("empty token sequence".to_string()));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t >= vocab) {
            return Err(Error::Vocabulary { id: t, size: vocab });
        }
        Ok(TokenSequence { tokens, language })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// `T x D` features at a fixed hop.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameMatrix {
    pub frames: Mat,
    pub hop_ms: u32,
}

impl FrameMatrix {
    pub fn len(&self) -> usize {
        self.frames.rows
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Split {
    Train,
    Dev,
    Dev2,
    Test,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Dev, Split::Dev2, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Dev2 => "dev2",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|sp| sp.name() == s)
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

/// Everything needed to regenerate a corpus bit for bit.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CorpusConfig {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub feature_dim: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub src_frames_per_token: usize,
    pub tgt_frames_per_token: usize,
    pub src_hop_ms: u32,
    pub tgt_hop_ms: u32,
    pub noise: f64,
    pub seed: u64,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_dev2: usize,
    pub n_test: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            src_vocab: 20,
            tgt_vocab: 20,
            feature_dim: 16,
            min_len: 3,
            max_len: 8,
            src_frames_per_token: 8,
            tgt_frames_per_token: 8,
            src_hop_ms: 10,
            tgt_hop_ms: 20,
            noise: 0.0,
            seed: 7,
            n_train: 2000,
            n_dev: 200,
            n_dev2: 200,
            n_test: 200,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.src_vocab < 2 || self.tgt_vocab < 2 {
            return Err(config("vocabularies need at least 2 tokens"));
        }
        if self.tgt_vocab < self.src_vocab {
            return Err(config("target vocabulary must be at least as large as the source"));
        }
        if self.feature_dim == 0 {
            return Err(config("feature_dim must be positive"));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(config("need 1 <= min_len <= max_len"));
        }
        if self.src_frames_per_token == 0 || self.tgt_frames_per_token == 0 {
            return Err(config("frames per token must be positive"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(config("noise must be finite and >= 0"));
        }
        if self.n_train == 0 || self.n_dev == 0 || self.n_dev2 == 0 || self.n_test == 0 {
            return Err(config("every split needs at least one sample"));
        }
        Ok(())
    }

    pub fn split_size(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Dev => self.n_dev,
            Split::Dev2 => self.n_dev2,
            Split::Test => self.n_test,
        }
    }

    /// Token-wise dictionary: an injective map from source to target ids.
    pub fn dictionary(&self) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..self.tgt_vocab).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(self.seed, 0xd1c7)));
        perm.truncate(self.src_vocab);
        perm
    }

    pub fn render_spec(&self, language: Language) -> RenderSpec {
        let (vocab, f, hop, stream) = match language {
            Language::Source => (self.src_vocab, self.src_frames_per_token, self.src_hop_ms, 0x5a),
            Language::Target => (self.tgt_vocab, self.tgt_frames_per_token, self.tgt_hop_ms, 0x7a),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, stream));
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let templates = Mat::from_vec(
            vocab,
            self.feature_dim,
            (0..vocab * self.feature_dim).map(|_| normal.sample(&mut rng)).collect(),
        );
        RenderSpec { templates, frames_per_token: f, noise: self.noise, hop_ms: hop }
    }

    pub fn translate(&self, source: &[usize]) -> Vec<usize> {
        translate(&self.dictionary(), source)
    }
}

/// Dictionary map followed by full reversal.
pub fn translate(dictionary: &[usize], source: &[usize]) -> Vec<usize> {
    source.iter().rev().map(|&t| dictionary[t]).collect()
}

/// Inverse of [`translate`] for sequences in its image.
pub fn untranslate(dictionary: &[usize], target: &[usize]) -> Option<Vec<usize>> {
    target
        .iter()
        .rev()
        .map(|&t| dictionary.iter().position(|&d| d == t))
        .collect()
}

/// Per-language rendering parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderSpec {
    /// One `D`-dim template row per token.
    pub templates: Mat,
    pub frames_per_token: usize,
    pub noise: f64,
    pub hop_ms: u32,
}

/// Emits `frames_per_token` copies of each token's template plus Gaussian
/// noise.
pub fn render_frames(text: &TokenSequence, spec: &RenderSpec, seed: u64) -> Result<FrameMatrix> {
    let (vocab, d, f) = (spec.templates.rows, spec.templates.cols, spec.frames_per_token);
    let mut frames = Mat::zeros(text.len() * f, d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = if spec.noise > 0.0 { Some(Normal::new(0.0, spec.noise).map_err(|e| config(e.to_string()))?) } else { None };
    for (i, &tok) in text.tokens.iter().enumerate() {
        if tok >= vocab {
            return Err(Error::Vocabulary { id: tok, size: vocab });
        }
        for j in 0..f {
            let row = frames.row_mut(i * f + j);
            row.copy_from_slice(spec.templates.row(tok));
            if let Some(n) = &normal {
                for v in row.iter_mut() {
                    *v += n.sample(&mut rng);
                }
            }
        }
    }
    Ok(FrameMatrix { frames, hop_ms: spec.hop_ms })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub source_text: TokenSequence,
    pub target_text: TokenSequence,
    pub source_frames: FrameMatrix,
    pub target_frames: FrameMatrix,
    pub target_units: Option<UnitSequence>,
}

/// One split of the corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub split: Split,
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Builds a corpus from `(id, source ids, target ids)` records, rendering
    /// frames from the configuration. Ids must be unique.
    pub fn from_records(
        config: CorpusConfig,
        split: Split,
        records: Vec<(String, Vec<usize>, Vec<usize>)>,
    ) -> Result<Corpus> {
        config.validate()?;
        let src_spec = config.render_spec(Language::Source);
        let tgt_spec = config.render_spec(Language::Target);
        let mut seen = BTreeSet::new();
        let mut utterances = Vec::with_capacity(records.len());
        for (id, src, tgt) in records {
            if !seen.insert(id.clone()) {
                return Err(Error::Domain(format!("duplicate utterance id {id}")));
            }
            let source_text = TokenSequence::new(src, Language::Source, config.src_vocab)?;
            let target_text = TokenSequence::new(tgt, Language::Target, config.tgt_vocab)?;
            let useed = utterance_seed(config.seed, &id);
            let source_frames = render_frames(&source_text, &src_spec, useed)?;
            let target_frames = render_frames(&target_text, &tgt_spec, useed ^ 0x9e37_79b9_7f4a_7c15)?;
            utterances.push(Utterance {
                id,
                source_text,
                target_text,
                source_frames,
                target_frames,
                target_units: None,
            });
        }
        Ok(Corpus { config, split, utterances })
    }

    pub fn records(&self) -> Vec<(String, Vec<usize>, Vec<usize>)> {
        self.utterances
            .iter()
            .map(|u| (u.id.clone(), u.source_text.tokens.clone(), u.target_text.tokens.clone()))
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            config: self.config.clone(),
            split: self.split,
            utterances: indices.iter().map(|&i| self.utterances[i].clone()).collect(),
        }
    }
}

/// Generates one split. Sentences never repeat a token in adjacent
/// positions, so every target token renders to a single run of frames.
pub fn gen_split(config: &CorpusConfig, split: Split) -> Result<Corpus> {
    config.validate()?;
    let dict = config.dictionary();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, 0x5000 + split.tag()));
    let n = config.split_size(split);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let len = rng.random_range(config.min_len..=config.max_len);
        let mut src: Vec<usize> = Vec::with_capacity(len);
        while src.len() < len {
            let t = rng.random_range(0..config.src_vocab);
            if src.last() != Some(&t) {
                src.push(t);
            }
        }
        let tgt = translate(&dict, &src);
        records.push((format!("{}-{:05}", split.name(), i), src, tgt));
    }
    Corpus::from_records(config.clone(), split, records)
}

/// All four splits in the order train, dev, dev2, test.
pub fn gen_corpus(config: &CorpusConfig) -> Result<Vec<Corpus>> {
    Split::ALL.iter().map(|&s| gen_split(config, s)).collect()
}

/// Keeps utterances whose transcription WER (percent) is at most
/// `threshold`. A failed transcription counts as WER 100.
pub fn filter_corpus<F, E>(corpus: &Corpus, mut transcribe: F, threshold: f64) -> Result<Corpus>
where
    F: FnMut(&Utterance) -> core::result::Result<String, E>,
    E: core::fmt::Display,
{
    if !(0.0..=100.0).contains(&threshold) {
        return Err(config("WER threshold must lie in [0, 100]"));
    }
    let vocab = Vocabulary::new(Language::Target, corpus.config.tgt_vocab);
    let mut kept = Vec::new();
    for utt in &corpus.utterances {
        let reference = vocab.decode(&utt.target_text.tokens);
        let rate = match transcribe(utt) {
            Ok(hyp) => wer(&hyp, &reference)? * 100.0,
            Err(e) => {
                log::warn!("transcription of {} failed: {e}", utt.id);
                100.0
            }
        };
        if rate <= threshold {
            kept.push(utt.clone());
        } else {
            log::info!("filtering {} (WER {rate:.1})", utt.id);
        }
    }
    Ok(Corpus { config: corpus.config.clone(), split: corpus.split, utterances: kept })
}

/// Display names for token ids. Names are single letters for the first 26
/// ids (lowercase on the target side), so token and character granularity
/// coincide for small vocabularies.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    names: Vec<String>,
}

impl Vocabulary {
    pub fn new(language: Language, size: usize) -> Self {
        let base = match language {
            Language::Source => b'A',
            Language::Target => b'a',
        };
        let names = (0..size)
            .map(|i| {
                if i < 26 {
                    char::from(base + i as u8).to_string()
                } else {
                    format!("{}{}", char::from(base + (i % 26) as u8), i / 26)
                }
            })
            .collect();
        Vocabulary { names }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        let parts: Vec<&str> = ids.iter().map(|&i| self.names[i].as_str()).collect();
        parts.join(" ")
    }

    /// Whitespace-separated names to ids; unknown words map to `None`.
    pub fn encode(&self, text: &str) -> Vec<Option<usize>> {
        text.split_whitespace().map(|w| self.names.iter().position(|n| n == w)).collect()
    }
}

pub(crate) fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Noise seed of one utterance, derived from its id.
pub fn utterance_seed(seed: u64, id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    mix(seed, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn small() -> CorpusConfig {
        CorpusConfig { n_train: 30, n_dev: 5, n_dev2: 5, n_test: 5, ..CorpusConfig::default() }
    }

    #[test]
    fn generation_is_deterministic() {
        let c = CorpusConfig { noise: 0.3, ..small() };
        assert_eq!(gen_corpus(&c).unwrap(), gen_corpus(&c).unwrap());
    }

    #[test]
    fn translation_is_dictionary_then_reversal() {
        let c = small();
        let d = c.dictionary();
        assert_eq!(c.translate(&[3, 1, 4]), vec![d[4], d[1], d[3]]);
        assert_eq!(untranslate(&d, &c.translate(&[3, 1, 4])).unwrap(), vec![3, 1, 4]);
    }

    #[test]
    fn render_lengths_and_noiseless_rows() {
        let c = small();
        let spec = c.render_spec(Language::Source);
        let one = TokenSequence::new(vec![5], Language::Source, 20).unwrap();
        let spec4 = RenderSpec { frames_per_token: 4, ..spec.clone() };
        let fm = render_frames(&one, &spec4, 1).unwrap();
        assert_eq!(fm.len(), 4);
        for r in 0..4 {
            assert_eq!(fm.frames.row(r), spec.templates.row(5));
        }
        let two = TokenSequence { tokens: vec![1, 2], language: Language::Source };
        let spec3 = RenderSpec { frames_per_token: 3, ..spec.clone() };
        assert_eq!(render_frames(&two, &spec3, 1).unwrap().len(), 6);
        assert_eq!(render_frames(&two, &spec3, 1).unwrap(), render_frames(&two, &spec3, 99).unwrap());
        let bad = TokenSequence { tokens: vec![25], language: Language::Source };
        assert!(matches!(render_frames(&bad, &spec, 0), Err(Error::Vocabulary { .. })));
    }

    #[test]
    fn length_law_holds() {
        let c = CorpusConfig { noise: 0.1, ..small() };
        for corpus in gen_corpus(&c).unwrap() {
            for u in &corpus.utterances {
                assert_eq!(u.source_frames.len(), c.src_frames_per_token * u.source_text.len());
                assert_eq!(u.target_frames.len(), c.tgt_frames_per_token * u.target_text.len());
                assert_eq!(u.target_text.tokens, c.translate(&u.source_text.tokens));
            }
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(gen_corpus(&CorpusConfig { src_vocab: 1, ..small() }).is_err());
        assert!(gen_corpus(&CorpusConfig { n_dev: 0, ..small() }).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let recs = vec![("a".to_string(), vec![1], vec![2]), ("a".to_string(), vec![1], vec![2])];
        assert!(Corpus::from_records(small(), Split::Dev, recs).is_err());
    }

    #[test]
    fn filter_examples() {
        let c = gen_split(&small(), Split::Dev).unwrap();
        let vocab = Vocabulary::new(Language::Target, 20);
        let perfect = |u: &Utterance| Ok::<_, String>(vocab.decode(&u.target_text.tokens));
        assert_eq!(filter_corpus(&c, perfect, 80.0).unwrap(), c);
        assert_eq!(filter_corpus(&c, perfect, 0.0).unwrap(), c);

        let bad_id = c.utterances[2].id.clone();
        let one_bad = |u: &Utterance| {
            if u.id == bad_id { Ok(String::new()) } else { perfect(u) }
        };
        let filtered = filter_corpus(&c, one_bad, 80.0).unwrap();
        assert_eq!(filtered.len(), c.len() - 1);
        assert!(filtered.utterances.iter().all(|u| u.id != bad_id));
        // idempotent
        assert_eq!(filter_corpus(&filtered, one_bad, 80.0).unwrap(), filtered);

        let failing = |u: &Utterance| if u.id == bad_id { Err("boom") } else { Ok(vocab.decode(&u.target_text.tokens)) };
        assert_eq!(filter_corpus(&c, failing, 80.0).unwrap(), filtered);
    }

    #[test]
    fn vocabulary_names_roundtrip() {
        let v = Vocabulary::new(Language::Target, 30);
        assert_eq!(v.decode(&[0, 1, 27]), "a b b1");
        assert_eq!(v.encode("a b1 zz"), vec![Some(0), Some(27), None]);
    }
}
