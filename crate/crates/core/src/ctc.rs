//! Connectionist temporal classification: loss via the forward-backward
//! recursion, greedy collapse decoding, and an exhaustive reference for small
//! instances.
//!
//! Inputs are `T x C` matrices of per-step log-probabilities (or
//! probabilities for the brute-force route). The blank class is passed
//! explicitly and is conventionally the last class.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{argmax, log_add, Mat};

/// Loss value reported when no alignment of the target fits in the input.
pub const INFEASIBLE: f64 = f64::INFINITY;

/// Log-alpha table over (time step, extended-label position). The extended
/// label interleaves the target with blanks: `_ l1 _ l2 _ ... lL _`.
#[derive(Clone, Debug)]
pub struct CtcTable {
    pub log_alpha: Mat,
    pub extended: Vec<usize>,
}

impl CtcTable {
    /// Log-likelihood of the target; `-inf` when infeasible.
    pub fn log_likelihood(&self) -> f64 {
        let t = self.log_alpha.rows;
        let s = self.extended.len();
        if t == 0 {
            return f64::NEG_INFINITY;
        }
        let last = self.log_alpha.get(t - 1, s - 1);
        if s >= 2 {
            log_add(last, self.log_alpha.get(t - 1, s - 2))
        } else {
            last
        }
    }
}

/// Minimum number of frames needed to emit `target`: one per label plus a
/// separating blank between each pair of equal neighbours.
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check_inputs(classes: usize, target: &[usize], blank: usize) -> Result<()> {
    if blank >= classes {
        return Err(Error::Vocabulary { id: blank, size: classes });
    }
    for &l in target {
        if l >= classes || l == blank {
            return Err(Error::Vocabulary { id: l, size: classes });
        }
    }
    Ok(())
}

fn extend(target: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(blank);
    for &l in target {
        ext.push(l);
        ext.push(blank);
    }
    ext
}

/// Forward recursion in log space.
pub fn forward_table(log_probs: &Mat, target: &[usize], blank: usize) -> Result<CtcTable> {
    check_inputs(log_probs.cols, target, blank)?;
    let ext = extend(target, blank);
    let (t_len, s_len) = (log_probs.rows, ext.len());
    let mut alpha = Mat::filled(t_len, s_len, f64::NEG_INFINITY);
    if t_len == 0 {
        return Ok(CtcTable { log_alpha: alpha, extended: ext });
    }
    alpha.set(0, 0, log_probs.get(0, ext[0]));
    if s_len > 1 {
        alpha.set(0, 1, log_probs.get(0, ext[1]));
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut acc = alpha.get(t - 1, s);
            if s >= 1 {
                acc = log_add(acc, alpha.get(t - 1, s - 1));
            }
            if s >= 2 && ext[s] != blank && ext[s] != ext[s - 2] {
                acc = log_add(acc, alpha.get(t - 1, s - 2));
            }
            if acc != f64::NEG_INFINITY {
                alpha.set(t, s, acc + log_probs.get(t, ext[s]));
            }
        }
    }
    Ok(CtcTable { log_alpha: alpha, extended: ext })
}

/// Negative log-likelihood of `target`, or [`INFEASIBLE`].
pub fn ctc_loss(log_probs: &Mat, target: &[usize], blank: usize) -> Result<f64> {
    let table = forward_table(log_probs, target, blank)?;
    let ll = table.log_likelihood();
    Ok(if ll == f64::NEG_INFINITY { INFEASIBLE } else { -ll })
}

/// Loss together with its gradient with respect to every entry of
/// `log_probs` (treated as free inputs). The gradient is the negated
/// per-step label occupancy. Infeasible targets yield a zero gradient.
pub fn ctc_loss_and_grad(log_probs: &Mat, target: &[usize], blank: usize) -> Result<(f64, Mat)> {
    let table = forward_table(log_probs, target, blank)?;
    let ll = table.log_likelihood();
    let (t_len, classes) = (log_probs.rows, log_probs.cols);
    let mut grad = Mat::zeros(t_len, classes);
    if ll == f64::NEG_INFINITY {
        return Ok((INFEASIBLE, grad));
    }
    let ext = &table.extended;
    let s_len = ext.len();
    // beta[t][s]: log-probability of finishing from (t, s), excluding the
    // emission at t.
    let mut beta = Mat::filled(t_len, s_len, f64::NEG_INFINITY);
    beta.set(t_len - 1, s_len - 1, 0.0);
    if s_len >= 2 {
        beta.set(t_len - 1, s_len - 2, 0.0);
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut acc = beta.get(t + 1, s) + log_probs.get(t + 1, ext[s]);
            if s + 1 < s_len {
                acc = log_add(acc, beta.get(t + 1, s + 1) + log_probs.get(t + 1, ext[s + 1]));
            }
            if s + 2 < s_len && ext[s + 2] != blank && ext[s + 2] != ext[s] {
                acc = log_add(acc, beta.get(t + 1, s + 2) + log_probs.get(t + 1, ext[s + 2]));
            }
            beta.set(t, s, acc);
        }
    }
    for t in 0..t_len {
        for s in 0..s_len {
            let lp = table.log_alpha.get(t, s) + beta.get(t, s);
            if lp != f64::NEG_INFINITY {
                let k = ext[s];
                let g = grad.get(t, k) - libm::exp(lp - ll);
                grad.set(t, k, g);
            }
        }
    }
    Ok((-ll, grad))
}

/// Enumerates every frame-level path, collapses it and sums the
/// probabilities of those matching `target`. `probs` holds plain
/// probabilities. Refuses instances with more than 10^6 paths.
pub fn ctc_brute_force(probs: &Mat, target: &[usize], blank: usize) -> Result<f64> {
    check_inputs(probs.cols, target, blank)?;
    let (t_len, classes) = (probs.rows, probs.cols);
    let space = (classes as u128).checked_pow(t_len as u32).unwrap_or(u128::MAX);
    if space > 1_000_000 {
        return Err(Error::SearchSpace(space));
    }
    let mut path = vec![0usize; t_len];
    let mut total = 0.0;
    let mut collapsed = Vec::with_capacity(t_len);
    loop {
        collapse_into(&path, blank, &mut collapsed);
        if collapsed == target {
            total += path.iter().enumerate().map(|(t, &k)| probs.get(t, k)).product::<f64>();
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == t_len {
                return Ok(if total > 0.0 { -libm::log(total) } else { INFEASIBLE });
            }
            path[i] += 1;
            if path[i] < classes {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

fn collapse_into(path: &[usize], blank: usize, out: &mut Vec<usize>) {
    out.clear();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != blank {
            out.push(k);
        }
        prev = Some(k);
    }
}

/// Removes repeats, then blanks, from a frame-level label path.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    collapse_into(path, blank, &mut out);
    out
}

/// Per-step argmax followed by the collapse rule.
pub fn ctc_greedy_decode(log_probs: &Mat, blank: usize) -> Vec<usize> {
    let path: Vec<usize> = log_probs.rows_iter().map(argmax).collect();
    collapse(&path, blank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::log_softmax;

    fn ln_mat(p: &Mat) -> Mat {
        Mat::from_vec(p.rows, p.cols, p.data.iter().map(|&v| libm::log(v)).collect())
    }

    #[test]
    fn single_frame_single_label() {
        let p = Mat::from_rows(&[vec![0.5, 0.5]]);
        let loss = ctc_loss(&ln_mat(&p), &[0], 1).unwrap();
        assert!((loss - -libm::log(0.5)).abs() < 1e-12);
    }

    #[test]
    fn two_frames_three_alignments() {
        // aa, a_, _a
        let p = Mat::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]);
        let loss = ctc_loss(&ln_mat(&p), &[0], 1).unwrap();
        assert!((loss - -libm::log(0.75)).abs() < 1e-12);
        let bf = ctc_brute_force(&p, &[0], 1).unwrap();
        assert!((bf - -libm::log(0.75)).abs() < 1e-12);
    }

    #[test]
    fn infeasible_is_marked_not_nan() {
        let p = Mat::from_rows(&[vec![0.4, 0.6], vec![0.4, 0.6]]);
        // "aa" needs a blank in between: 3 frames
        let loss = ctc_loss(&ln_mat(&p), &[0, 0], 1).unwrap();
        assert_eq!(loss, INFEASIBLE);
        assert_eq!(ctc_brute_force(&p, &[0, 0], 1).unwrap(), INFEASIBLE);
        let (l, g) = ctc_loss_and_grad(&ln_mat(&p), &[0, 0], 1).unwrap();
        assert_eq!(l, INFEASIBLE);
        assert!(g.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_path_when_lengths_match() {
        let p = Mat::from_rows(&[vec![0.7, 0.2, 0.1], vec![0.3, 0.6, 0.1]]);
        let bf = ctc_brute_force(&p, &[0, 1], 2).unwrap();
        assert!((bf - -libm::log(0.7 * 0.6)).abs() < 1e-12);
    }

    #[test]
    fn brute_force_refuses_large_space() {
        let p = Mat::filled(13, 4, 0.25);
        assert!(matches!(ctc_brute_force(&p, &[0], 3), Err(Error::SearchSpace(_))));
    }

    #[test]
    fn greedy_collapse_rules() {
        let blank = 2;
        let mk = |path: &[usize]| {
            let mut m = Mat::filled(path.len(), 3, -5.0);
            for (t, &k) in path.iter().enumerate() {
                m.set(t, k, -0.01);
            }
            m
        };
        assert_eq!(ctc_greedy_decode(&mk(&[0, 0, blank, 1]), blank), vec![0, 1]);
        assert_eq!(ctc_greedy_decode(&mk(&[blank, blank]), blank), Vec::<usize>::new());
        assert_eq!(ctc_greedy_decode(&mk(&[0, blank, 0]), blank), vec![0, 0]);
    }

    #[test]
    fn grad_sums_to_minus_one_per_frame() {
        let logits = Mat::from_rows(&[
            vec![0.1, 0.5, -0.3],
            vec![0.2, -0.1, 0.4],
            vec![-0.6, 0.3, 0.0],
            vec![0.9, 0.2, -0.2],
        ]);
        let lp = log_softmax(&logits);
        let (_, g) = ctc_loss_and_grad(&lp, &[0, 1], 2).unwrap();
        for r in 0..g.rows {
            let s: f64 = g.row(r).iter().sum();
            assert!((s + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_blank_in_target() {
        let p = Mat::filled(2, 3, -1.0);
        assert!(ctc_loss(&p, &[2], 2).is_err());
    }
}
