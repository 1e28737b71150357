use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{domain, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Smoothing {
    None,
    /// Halve the pseudo-count for each successive zero-match order.
    Exp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tokenizer {
    Whitespace,
    /// mteval-v13a rules.
    Thirteen,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BleuConfig {
    pub max_order: usize,
    pub smoothing: Smoothing,
    pub tokenizer: Tokenizer,
    pub lowercase: bool,
}

impl Default for BleuConfig {
    /// `case:lc|eff:no|tok:13a|smooth:exp`
    fn default() -> Self {
        BleuConfig { max_order: 4, smoothing: Smoothing::Exp, tokenizer: Tokenizer::Thirteen, lowercase: true }
    }
}

/// Sufficient statistics of one or more sentences.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BleuStats {
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    fn zeros(order: usize) -> Self {
        BleuStats { matches: vec![0; order], totals: vec![0; order], hyp_len: 0, ref_len: 0 }
    }

    pub fn add(&mut self, other: &BleuStats) {
        for (a, b) in self.matches.iter_mut().zip(&other.matches) {
            *a += b;
        }
        for (a, b) in self.totals.iter_mut().zip(&other.totals) {
            *a += b;
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    /// Corpus BLEU in `[0, 100]` from accumulated statistics.
    pub fn score(&self, smoothing: Smoothing) -> f64 {
        let order = self.matches.len();
        if self.matches.iter().all(|&m| m == 0) {
            return 0.0;
        }
        let mut smooth = 1.0;
        let mut log_sum = 0.0;
        for n in 0..order {
            let p = if self.totals[n] == 0 {
                0.0
            } else if self.matches[n] == 0 {
                match smoothing {
                    Smoothing::Exp => {
                        smooth *= 2.0;
                        1.0 / (smooth * self.totals[n] as f64)
                    }
                    Smoothing::None => 0.0,
                }
            } else {
                self.matches[n] as f64 / self.totals[n] as f64
            };
            if p == 0.0 {
                return 0.0;
            }
            log_sum += libm::log(p);
        }
        let bp = if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len < self.ref_len {
            libm::exp(1.0 - self.ref_len as f64 / self.hyp_len as f64)
        } else {
            1.0
        };
        (100.0 * bp * libm::exp(log_sum / order as f64)).clamp(0.0, 100.0)
    }
}

/// Tokenization of the mteval-v13a script.
pub fn tokenize_13a(line: &str) -> Vec<String> {
    let mut s = String::from(line);
    s = s.replace("<skipped>", "").replace("-\n", "").replace('\n', " ");
    if s.contains('&') {
        s = s.replace("&quot;", "\"").replace("&amp;", "&").replace("&lt;", "<").replace("&gt;", ">");
    }
    let chars: Vec<char> = {
        let mut v = vec![' '];
        v.extend(s.chars());
        v.push(' ');
        v
    };
    let is_punct = |c: char| {
        matches!(c, '{'..='~' | '['..='`' | ' '..='&' | '('..='+' | ':'..='@' | '/')
    };
    let chars = sub1(&chars, is_punct);
    let chars = sub2(&chars, |a, b| !a.is_ascii_digit() && (b == '.' || b == ','), |a, b| vec![a, ' ', b, ' ']);
    let chars = sub2(&chars, |a, b| (a == '.' || a == ',') && !b.is_ascii_digit(), |a, b| vec![' ', a, ' ', b]);
    let chars = sub2(&chars, |a, b| a.is_ascii_digit() && b == '-', |a, b| vec![a, ' ', b, ' ']);
    let out: String = chars.into_iter().collect();
    out.split_whitespace().map(String::from).collect()
}

/// Left-to-right non-overlapping replacement of single characters with
/// ` c `.
fn sub1(chars: &[char], pred: impl Fn(char) -> bool) -> Vec<char> {
    let mut out = Vec::with_capacity(chars.len() * 2);
    for &c in chars {
        if pred(c) {
            out.extend([' ', c, ' ']);
        } else {
            out.push(c);
        }
    }
    out
}

/// Left-to-right non-overlapping replacement of two-character matches.
fn sub2(
    chars: &[char],
    pred: impl Fn(char, char) -> bool,
    rep: impl Fn(char, char) -> Vec<char>,
) -> Vec<char> {
    let mut out = Vec::with_capacity(chars.len() * 2);
    let mut i = 0;
    while i < chars.len() {
        if i + 1 < chars.len() && pred(chars[i], chars[i + 1]) {
            out.extend(rep(chars[i], chars[i + 1]));
            i += 2;
        } else {
            out.push(chars[i]);
            i += 1;
        }
    }
    out
}

fn prepare(text: &str, cfg: &BleuConfig) -> Vec<String> {
    let text = if cfg.lowercase { text.to_lowercase() } else { String::from(text) };
    match cfg.tokenizer {
        Tokenizer::Whitespace => text.split_whitespace().map(String::from).collect(),
        Tokenizer::Thirteen => tokenize_13a(&text),
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut m = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Statistics of one hypothesis against its reference set. The effective
/// reference length is the closest one, shorter on ties.
pub fn sentence_stats(hyp: &str, refs: &[String], cfg: &BleuConfig) -> Result<BleuStats> {
    if refs.is_empty() {
        return Err(domain("reference set is empty"));
    }
    let h = prepare(hyp, cfg);
    let rs: Vec<Vec<String>> = refs.iter().map(|r| prepare(r, cfg)).collect();
    let mut st = BleuStats::zeros(cfg.max_order);
    st.hyp_len = h.len();
    st.ref_len = rs
        .iter()
        .map(|r| r.len())
        .min_by_key(|&l| (l.abs_diff(h.len()), l))
        .unwrap_or(0);
    for n in 1..=cfg.max_order {
        let hc = ngram_counts(&h, n);
        let mut max_ref: BTreeMap<&[String], usize> = BTreeMap::new();
        for r in &rs {
            for (g, c) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        st.totals[n - 1] = h.len().saturating_sub(n - 1);
        st.matches[n - 1] = hc.iter().map(|(g, &c)| c.min(*max_ref.get(g).unwrap_or(&0))).sum();
    }
    Ok(st)
}

/// Corpus-level BLEU of `hyps` against per-hypothesis reference sets.
pub fn bleu(hyps: &[String], refs: &[Vec<String>], cfg: &BleuConfig) -> Result<f64> {
    if hyps.is_empty() {
        return Err(domain("empty hypothesis corpus"));
    }
    if hyps.len() != refs.len() {
        return Err(domain("hypothesis and reference counts differ"));
    }
    if cfg.max_order == 0 {
        return Err(domain("BLEU order must be >= 1"));
    }
    let mut total = BleuStats::zeros(cfg.max_order);
    for (h, r) in hyps.iter().zip(refs) {
        total.add(&sentence_stats(h, r, cfg)?);
    }
    Ok(total.score(cfg.smoothing))
}
