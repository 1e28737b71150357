//! Translation-quality metrics: word error rate, corpus BLEU, ASR-BLEU over
//! synthesized audio and paired bootstrap significance.

mod bleu;
mod bootstrap;
mod recognizer;

pub use bleu::{bleu, sentence_stats, tokenize_13a, BleuConfig, BleuStats, Smoothing, Tokenizer};
pub use bootstrap::paired_bootstrap;
pub use recognizer::{asr_bleu, rule_recognizer, transcribe_all, Lexicon, Recognizer, RuleRecognizer, UNKNOWN};

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{domain, Result};

/// Levenshtein distance between token slices.
pub fn edit_distance<T: PartialEq>(hyp: &[T], reference: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=reference.len()).collect();
    let mut cur = vec![0; reference.len() + 1];
    for (i, h) in hyp.iter().enumerate() {
        cur[0] = i + 1;
        for (j, r) in reference.iter().enumerate() {
            let sub = prev[j] + usize::from(h != r);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[reference.len()]
}

/// Word error rate as a fraction of the reference length (may exceed 1).
pub fn wer(hyp: &str, reference: &str) -> Result<f64> {
    let r: Vec<&str> = reference.split_whitespace().collect();
    if r.is_empty() {
        return Err(domain("WER needs a non-empty reference"));
    }
    let h: Vec<&str> = hyp.split_whitespace().collect();
    Ok(edit_distance(&h, &r) as f64 / r.len() as f64)
}

/// Character error rate over non-space characters.
pub fn cer(hyp: &str, reference: &str) -> Result<f64> {
    let r: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    if r.is_empty() {
        return Err(domain("CER needs a non-empty reference"));
    }
    let h: Vec<char> = hyp.chars().filter(|c| !c.is_whitespace()).collect();
    Ok(edit_distance(&h, &r) as f64 / r.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wer_examples() {
        assert_eq!(wer("a b c", "a b c").unwrap(), 0.0);
        assert!((wer("a b c", "a x c").unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(wer("", "a b c d").unwrap(), 1.0);
        assert!(wer("a", "  ").is_err());
    }

    #[test]
    fn one_insertion_adds_one_edit() {
        let r = ["a", "b", "c", "d"];
        let h = ["a", "b", "c", "d"];
        let h2 = ["a", "b", "z", "c", "d"];
        assert_eq!(edit_distance(&h, &r), 0);
        assert_eq!(edit_distance(&h2, &r), 1);
    }

    #[test]
    fn cer_counts_characters() {
        assert!((cer("ab c", "abcd").unwrap() - 0.25).abs() < 1e-15);
    }
}
