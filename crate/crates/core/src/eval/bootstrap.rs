use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::bleu::{sentence_stats, BleuConfig, BleuStats};
use crate::corpus::mix;
use crate::error::{domain, Result};

/// Paired bootstrap resampling of corpus BLEU between systems A and B.
///
/// Each resample draws utterance indices with replacement (resample `i`
/// uses its own seed derived from `seed` and `i`) and records
/// `BLEU(B) - BLEU(A)`. The p-value counts resamples whose centered delta is
/// at least as extreme as the observed delta, ties included, with add-one
/// smoothing: `p = (count + 1) / (n_resamples + 1)`.
pub fn paired_bootstrap(
    hyps_a: &[String],
    hyps_b: &[String],
    refs: &[Vec<String>],
    n_resamples: usize,
    seed: u64,
    cfg: &BleuConfig,
) -> Result<f64> {
    if hyps_a.len() != hyps_b.len() || hyps_a.len() != refs.len() {
        return Err(domain("paired bootstrap needs aligned hypothesis and reference lists"));
    }
    if hyps_a.is_empty() {
        return Err(domain("paired bootstrap needs at least one utterance"));
    }
    if n_resamples < 100 {
        return Err(domain("paired bootstrap needs at least 100 resamples"));
    }
    let stats = |hyps: &[String]| -> Result<Vec<BleuStats>> {
        hyps.iter().zip(refs).map(|(h, r)| sentence_stats(h, r, cfg)).collect()
    };
    let (sa, sb) = (stats(hyps_a)?, stats(hyps_b)?);
    let corpus = |s: &[BleuStats], idx: &mut dyn Iterator<Item = usize>| {
        let mut acc = BleuStats { matches: alloc::vec![0; cfg.max_order], totals: alloc::vec![0; cfg.max_order], ..Default::default() };
        for i in idx {
            acc.add(&s[i]);
        }
        acc.score(cfg.smoothing)
    };
    let n = sa.len();
    let observed = corpus(&sb, &mut (0..n)) - corpus(&sa, &mut (0..n));
    let deltas: Vec<f64> = (0..n_resamples)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, i as u64 + 1));
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            corpus(&sb, &mut idx.iter().copied()) - corpus(&sa, &mut idx.iter().copied())
        })
        .collect();
    Ok(p_value(&deltas, observed))
}

pub(crate) fn p_value(deltas: &[f64], observed: f64) -> f64 {
    let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
    let count = deltas.iter().filter(|&&d| (d - mean).abs() >= observed.abs()).count();
    (count + 1) as f64 / (deltas.len() + 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    fn corpus() -> (Vec<String>, Vec<String>, Vec<Vec<String>>) {
        let refs: Vec<Vec<String>> =
            (0..40).map(|i| vec![format!("w{} x{} y{} z{} q", i % 7, i % 5, i % 3, i)]).collect();
        let good: Vec<String> = refs.iter().map(|r| r[0].clone()).collect();
        let bad: Vec<String> = (0..40).map(|i| format!("w{} nope y{} other", i % 7, i % 3)).collect();
        (bad, good, refs)
    }

    #[test]
    fn identical_systems_give_one() {
        let (a, _, refs) = corpus();
        let p = paired_bootstrap(&a, &a, &refs, 1000, 3, &BleuConfig::default()).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn strict_dominance_gives_minimum() {
        let (a, b, refs) = corpus();
        let p = paired_bootstrap(&a, &b, &refs, 1000, 3, &BleuConfig::default()).unwrap();
        assert_eq!(p, 1.0 / 1001.0);
    }

    #[test]
    fn deterministic_and_validated() {
        let (a, b, refs) = corpus();
        let mut mixed = a.clone();
        mixed[..20].clone_from_slice(&b[..20]);
        let cfg = BleuConfig::default();
        let p1 = paired_bootstrap(&a, &mixed, &refs, 200, 11, &cfg).unwrap();
        let p2 = paired_bootstrap(&a, &mixed, &refs, 200, 11, &cfg).unwrap();
        assert_eq!(p1, p2);
        assert!(paired_bootstrap(&a, &b[..3], &refs, 200, 1, &cfg).is_err());
        assert!(paired_bootstrap(&a, &b, &refs, 50, 1, &cfg).is_err());
    }

    #[test]
    fn p_decreases_with_observed_delta() {
        let deltas = [0.5, -1.0, 2.0, 0.1, -0.3, 1.2, 0.0, 0.7];
        let mut last = f64::INFINITY;
        for k in 0..40 {
            let p = p_value(&deltas, k as f64 * 0.1);
            assert!(p <= last);
            last = p;
        }
    }
}
