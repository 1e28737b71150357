//! Discrete-unit extraction from frame features and the target encodings
//! built on top of it: the run-length `reduced` form and the grouped
//! `stacked` form.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use alloc::format;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::FrameMatrix;
use crate::error::{domain, Error, Result};
use crate::tensor::Mat;

const VAR_FLOOR: f64 = 1e-8;

/// k-means centroids plus fit metadata.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Codebook {
    /// `K x D`
    pub centroids: Mat,
    pub seed: u64,
    pub iterations: usize,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
}

impl Codebook {
    pub fn k(&self) -> usize {
        self.centroids.rows
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols
    }

    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }

    /// Index of the nearest centroid; ties resolve to the smallest index.
    pub fn nearest(&self, frame: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (k, c) in self.centroids.rows_iter().enumerate() {
            let d = sq_dist(frame, c);
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    }
}

/// A frame-rate stream of unit ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UnitSequence(pub Vec<usize>);

impl UnitSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.0.is_empty() {
            return Err(domain("empty unit sequence"));
        }
        match self.0.iter().find(|&&u| u >= k) {
            Some(&u) => Err(Error::Vocabulary { id: u, size: k }),
            None => Ok(()),
        }
    }
}

/// Duplicate-free units with the run length of each.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReducedUnits {
    pub units: Vec<usize>,
    pub durations: Vec<usize>,
}

impl ReducedUnits {
    pub fn new(units: Vec<usize>, durations: Vec<usize>) -> Result<Self> {
        let r = ReducedUnits { units, durations };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.units.len() != self.durations.len() {
            return Err(domain("units and durations differ in length"));
        }
        if self.units.is_empty() {
            return Err(domain("empty reduced sequence"));
        }
        if self.durations.contains(&0) {
            return Err(domain("zero duration"));
        }
        if self.units.windows(2).any(|w| w[0] == w[1]) {
            return Err(domain("adjacent duplicate units in reduced sequence"));
        }
        Ok(())
    }

    pub fn total_frames(&self) -> usize {
        self.durations.iter().sum()
    }
}

/// Fixed-size groups of `r` unit ids; only the final group may carry a pad
/// suffix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StackedUnits {
    pub groups: Vec<Vec<usize>>,
    pub r: usize,
    pub pad: usize,
}

/// Per-utterance mean and variance normalization of every feature column.
/// A single frame is only mean-centered.
pub fn cmvn(frames: &FrameMatrix) -> FrameMatrix {
    let m = &frames.frames;
    let (t, d) = (m.rows, m.cols);
    let mut out = m.clone();
    if t == 0 {
        return frames.clone();
    }
    for c in 0..d {
        let mean = (0..t).map(|r| m.get(r, c)).sum::<f64>() / t as f64;
        let std = if t >= 2 {
            let var = (0..t).map(|r| { let e = m.get(r, c) - mean; e * e }).sum::<f64>() / t as f64;
            libm::sqrt(var.max(VAR_FLOOR))
        } else {
            1.0
        };
        for r in 0..t {
            out.set(r, c, (m.get(r, c) - mean) / std);
        }
    }
    FrameMatrix { frames: out, hop_ms: frames.hop_ms }
}

/// Frequency and time masking policy.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MaskPolicy {
    pub freq_masks: usize,
    /// Maximum frequency-mask width.
    pub freq_width: usize,
    pub time_masks: usize,
    /// Maximum time-mask width.
    pub time_width: usize,
}

impl MaskPolicy {
    /// LibriSpeech basic policy: one frequency mask up to 27 bins, one time
    /// mask up to 100 frames.
    pub const LIBRISPEECH_BASIC: MaskPolicy =
        MaskPolicy { freq_masks: 1, freq_width: 27, time_masks: 1, time_width: 100 };

    pub const NONE: MaskPolicy =
        MaskPolicy { freq_masks: 0, freq_width: 0, time_masks: 0, time_width: 0 };
}

/// Masks random frequency bands and time spans, filling them with the
/// per-column mean of the utterance. Mask widths larger than the matrix are
/// clipped.
pub fn specaugment(frames: &FrameMatrix, policy: &MaskPolicy, seed: u64) -> FrameMatrix {
    let m = &frames.frames;
    let (t, d) = (m.rows, m.cols);
    let mut out = m.clone();
    if t == 0 || d == 0 {
        return frames.clone();
    }
    let means: Vec<f64> =
        (0..d).map(|c| (0..t).map(|r| m.get(r, c)).sum::<f64>() / t as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fw = if policy.freq_width > d {
        log::warn!("frequency mask width {} clipped to {}", policy.freq_width, d);
        d
    } else {
        policy.freq_width
    };
    let tw = if policy.time_width > t {
        log::debug!("time mask width {} clipped to {}", policy.time_width, t);
        t
    } else {
        policy.time_width
    };
    for _ in 0..policy.freq_masks {
        let w = rng.random_range(0..=fw);
        let f0 = rng.random_range(0..=d - w);
        for r in 0..t {
            for c in f0..f0 + w {
                out.set(r, c, means[c]);
            }
        }
    }
    for _ in 0..policy.time_masks {
        let w = rng.random_range(0..=tw);
        let t0 = rng.random_range(0..=t - w);
        for r in t0..t0 + w {
            out.row_mut(r).copy_from_slice(&means);
        }
    }
    FrameMatrix { frames: out, hop_ms: frames.hop_ms }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// An empty cluster is re-seeded at the point currently farthest from its
/// assigned centroid. Stops after `max_iters` assignment steps or once the
/// assignment is stable.
pub fn kmeans_fit<'a, I>(rows: I, k: usize, max_iters: usize, seed: u64) -> Result<Codebook>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut data = Vec::new();
    let mut dim = None;
    for row in rows {
        match dim {
            None => dim = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(Error::Shape { expected: format!("{d} columns"), got: format!("{}", row.len()) })
            }
            _ => {}
        }
        data.extend_from_slice(row);
    }
    let d = dim.unwrap_or(0);
    if k < 2 {
        return Err(Error::Init("k-means needs K >= 2".to_string()));
    }
    if d == 0 {
        return Err(Error::Init("no frames to cluster".to_string()));
    }
    let points = Mat::from_vec(data.len() / d, d, data);
    let n = points.rows;
    let distinct = count_distinct(&points);
    if distinct < k {
        return Err(Error::Init(format!("{distinct} distinct points for K = {k}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Mat::zeros(k, d);
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut closest: Vec<f64> = points.rows_iter().map(|p| sq_dist(p, centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = closest.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = None;
        for (i, &w) in closest.iter().enumerate() {
            if w > 0.0 {
                pick = Some(i);
                if target < w {
                    break;
                }
                target -= w;
            }
        }
        let pick = pick.ok_or_else(|| Error::Init("k-means++ ran out of distinct points".to_string()))?;
        centroids.row_mut(c).copy_from_slice(points.row(pick));
        for (i, p) in points.rows_iter().enumerate() {
            closest[i] = closest[i].min(sq_dist(p, centroids.row(c)));
        }
    }

    let mut assign = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut book = Codebook { centroids, seed, iterations: 0, inertia_history: Vec::new() };
    while iterations < max_iters {
        iterations += 1;
        let mut changed = false;
        let mut inertia = 0.0;
        let mut dists = vec![0.0; n];
        for (i, p) in points.rows_iter().enumerate() {
            let (best, dist) = book.nearest(p);
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
            dists[i] = dist;
            inertia += dist;
        }
        history.push(inertia);
        if !changed {
            break;
        }
        let mut sums = Mat::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, p) in points.rows_iter().enumerate() {
            counts[assign[i]] += 1;
            for (s, v) in sums.row_mut(assign[i]).iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in book.centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            } else {
                let far = (0..n)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .unwrap_or(0);
                log::debug!("re-seeding empty cluster {c} at point {far}");
                book.centroids.row_mut(c).copy_from_slice(points.row(far));
                dists[far] = 0.0;
            }
        }
    }
    book.iterations = iterations;
    book.inertia_history = history;
    Ok(book)
}

fn count_distinct(points: &Mat) -> usize {
    let mut rows: Vec<&[f64]> = points.rows_iter().collect();
    rows.sort_by(|a, b| {
        a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(core::cmp::Ordering::Equal)
    });
    rows.dedup_by(|a, b| a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    rows.len()
}

/// Nearest-centroid unit for every frame.
pub fn quantize(frames: &FrameMatrix, codebook: &Codebook) -> Result<UnitSequence> {
    if frames.frames.cols != codebook.dim() {
        return Err(Error::Shape {
            expected: format!("{} feature columns", codebook.dim()),
            got: format!("{}", frames.frames.cols),
        });
    }
    Ok(UnitSequence(frames.frames.rows_iter().map(|f| codebook.nearest(f).0).collect()))
}

/// Run-length encoding of a unit stream.
pub fn reduce(seq: &UnitSequence) -> Result<ReducedUnits> {
    if seq.0.is_empty() {
        return Err(domain("cannot reduce an empty unit sequence"));
    }
    let mut units: Vec<usize> = Vec::new();
    let mut durations: Vec<usize> = Vec::new();
    for &u in &seq.0 {
        match units.last() {
            Some(&last) if last == u => *durations.last_mut().unwrap() += 1,
            _ => {
                units.push(u);
                durations.push(1);
            }
        }
    }
    Ok(ReducedUnits { units, durations })
}

/// Inverse of [`reduce`]: repeats each unit by its duration.
pub fn expand(red: &ReducedUnits) -> Result<UnitSequence> {
    if red.units.len() != red.durations.len() {
        return Err(domain("units and durations differ in length"));
    }
    if red.durations.contains(&0) {
        return Err(domain("zero duration"));
    }
    let mut out = Vec::with_capacity(red.total_frames());
    for (&u, &d) in red.units.iter().zip(&red.durations) {
        out.extend(core::iter::repeat_n(u, d));
    }
    Ok(UnitSequence(out))
}

/// Splits the stream into `ceil(T / r)` groups, right-padding the last one.
pub fn stack(seq: &UnitSequence, r: usize, pad: usize) -> Result<StackedUnits> {
    if r < 1 {
        return Err(domain("reduction factor must be >= 1"));
    }
    let groups = seq
        .0
        .chunks(r)
        .map(|c| {
            let mut g = c.to_vec();
            g.resize(r, pad);
            g
        })
        .collect();
    Ok(StackedUnits { groups, r, pad })
}

/// Concatenates groups and strips the trailing pad run.
pub fn unstack(stacked: &StackedUnits) -> UnitSequence {
    let mut out: Vec<usize> = stacked.groups.iter().flatten().copied().collect();
    while out.last() == Some(&stacked.pad) {
        out.pop();
    }
    UnitSequence(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fm(rows: &[Vec<f64>]) -> FrameMatrix {
        FrameMatrix { frames: Mat::from_rows(rows), hop_ms: 10 }
    }

    #[test]
    fn cmvn_examples() {
        let out = cmvn(&fm(&[vec![0.0, 3.0], vec![2.0, 3.0]]));
        assert_eq!(out.frames.data, vec![-1.0, 0.0, 1.0, 0.0]);

        let single = cmvn(&fm(&[vec![4.0, -2.0]]));
        assert_eq!(single.frames.data, vec![0.0, 0.0]);
    }

    #[test]
    fn cmvn_is_idempotent_on_standardized_data() {
        let x = fm(&[vec![1.0, 5.0], vec![-2.0, 7.0], vec![0.5, 6.5], vec![3.0, 2.0]]);
        let once = cmvn(&x);
        let twice = cmvn(&once);
        for (a, b) in once.frames.data.iter().zip(&twice.frames.data) {
            assert!((a - b).abs() < 1e-6);
        }
        for c in 0..2 {
            let col: Vec<f64> = (0..4).map(|r| once.frames.get(r, c)).collect();
            let mean = col.iter().sum::<f64>() / 4.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn specaugment_identity_and_determinism() {
        let x = fm(&(0..12).map(|i| vec![i as f64, (i * i) as f64, 1.0]).collect::<Vec<_>>());
        assert_eq!(specaugment(&x, &MaskPolicy::NONE, 5), x);
        let policy = MaskPolicy { freq_masks: 1, freq_width: 2, time_masks: 2, time_width: 4 };
        assert_eq!(specaugment(&x, &policy, 5), specaugment(&x, &policy, 5));
        // oversized masks are clipped rather than rejected
        let big = MaskPolicy { freq_masks: 1, freq_width: 50, time_masks: 1, time_width: 500 };
        assert_eq!(specaugment(&x, &big, 1).frames.rows, 12);
    }

    #[test]
    fn full_time_mask_fills_with_column_means() {
        let x = fm(&[vec![1.0, 10.0], vec![3.0, 20.0]]);
        let policy = MaskPolicy { freq_masks: 0, freq_width: 0, time_masks: 1, time_width: 2 };
        // find a seed that draws the full-width span
        let seed = (0..100)
            .find(|&s| {
                let out = specaugment(&x, &policy, s);
                out.frames.data == vec![2.0, 15.0, 2.0, 15.0]
            })
            .expect("some seed masks the whole utterance");
        let out = specaugment(&x, &policy, seed);
        assert_eq!(out.frames.row(0), &[2.0, 15.0]);
    }

    /// Best inertia over every assignment of points to two clusters.
    fn best_two_partition(points: &[f64]) -> (f64, f64) {
        let n = points.len();
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for mask in 1..(1u32 << n) - 1 {
            let (a, b): (Vec<f64>, Vec<f64>) = {
                let mut a = Vec::new();
                let mut b = Vec::new();
                for (i, &p) in points.iter().enumerate() {
                    if mask >> i & 1 == 1 { a.push(p) } else { b.push(p) }
                }
                (a, b)
            };
            let ma = a.iter().sum::<f64>() / a.len() as f64;
            let mb = b.iter().sum::<f64>() / b.len() as f64;
            let inertia: f64 =
                a.iter().map(|p| (p - ma).powi(2)).sum::<f64>() + b.iter().map(|p| (p - mb).powi(2)).sum::<f64>();
            if inertia < best.0 {
                best = (inertia, ma.min(mb), ma.max(mb));
            }
        }
        (best.1, best.2)
    }

    #[test]
    fn kmeans_matches_exhaustive_partition() {
        let pts = [0.0, 0.1, 10.0, 10.1];
        let (lo, hi) = best_two_partition(&pts);
        assert!((lo - 0.05).abs() < 1e-12 && (hi - 10.05).abs() < 1e-12);
        let rows: Vec<Vec<f64>> = pts.iter().map(|&p| vec![p]).collect();
        let book = kmeans_fit(rows.iter().map(|r| r.as_slice()), 2, 50, 1).unwrap();
        let mut c = [book.centroids.get(0, 0), book.centroids.get(1, 0)];
        c.sort_by(f64::total_cmp);
        assert!((c[0] - lo).abs() < 1e-12 && (c[1] - hi).abs() < 1e-12, "{c:?}");
    }

    #[test]
    fn kmeans_k_equals_distinct_points_has_zero_inertia() {
        let rows: Vec<Vec<f64>> = vec![vec![0.0, 1.0], vec![5.0, 5.0], vec![-3.0, 2.0], vec![5.0, 5.0]];
        let book = kmeans_fit(rows.iter().map(|r| r.as_slice()), 3, 50, 9).unwrap();
        assert_eq!(book.inertia(), 0.0);
        let again = kmeans_fit(rows.iter().map(|r| r.as_slice()), 3, 50, 9).unwrap();
        assert_eq!(book, again);
    }

    #[test]
    fn kmeans_rejects_too_few_distinct_points() {
        let rows: Vec<Vec<f64>> = vec![vec![1.0], vec![1.0], vec![2.0]];
        let err = kmeans_fit(rows.iter().map(|r| r.as_slice()), 3, 10, 0).unwrap_err();
        assert!(matches!(err, Error::Init(_)));
    }

    #[test]
    fn quantize_tie_break_and_shape() {
        let mut centroids = Mat::zeros(8, 1);
        for k in 0..8 {
            centroids.set(k, 0, k as f64 * 10.0);
        }
        centroids.set(0, 0, 100.0);
        centroids.set(2, 0, -1.0);
        centroids.set(5, 0, 1.0);
        let book = Codebook { centroids, seed: 0, iterations: 0, inertia_history: vec![] };
        let frames = fm(&[vec![70.0], vec![0.0]]);
        assert_eq!(quantize(&frames, &book).unwrap().0, vec![7, 2]);
        assert!(matches!(quantize(&fm(&[vec![0.0, 1.0]]), &book), Err(Error::Shape { .. })));
    }

    #[test]
    fn reduce_expand_examples() {
        let r = reduce(&UnitSequence(vec![7, 7, 7, 2, 2, 9])).unwrap();
        assert_eq!(r.units, vec![7, 2, 9]);
        assert_eq!(r.durations, vec![3, 2, 1]);
        assert_eq!(expand(&r).unwrap().0, vec![7, 7, 7, 2, 2, 9]);
        assert_eq!(reduce(&UnitSequence(vec![5])).unwrap(), ReducedUnits { units: vec![5], durations: vec![1] });
        assert_eq!(reduce(&UnitSequence(vec![1, 2, 3])).unwrap().durations, vec![1, 1, 1]);
        assert!(reduce(&UnitSequence(vec![])).is_err());
        assert!(expand(&ReducedUnits { units: vec![4], durations: vec![0] }).is_err());
        assert_eq!(expand(&ReducedUnits { units: vec![4], durations: vec![1] }).unwrap().0, vec![4]);
    }

    #[test]
    fn stack_examples() {
        let u = UnitSequence((0..12).collect());
        let s = stack(&u, 5, 99).unwrap();
        assert_eq!(s.groups.len(), 3);
        assert_eq!(s.groups[2], vec![10, 11, 99, 99, 99]);
        assert_eq!(stack(&u, 1, 99).unwrap().groups.len(), 12);
        assert!(stack(&u, 0, 99).is_err());
    }

    proptest! {
        #[test]
        fn reduce_invariants(units in proptest::collection::vec(0usize..4, 1..60)) {
            let seq = UnitSequence(units);
            let r = reduce(&seq).unwrap();
            prop_assert!(r.validate().is_ok());
            prop_assert_eq!(r.total_frames(), seq.len());
            prop_assert_eq!(expand(&r).unwrap(), seq);
        }

        #[test]
        fn stack_roundtrip(units in proptest::collection::vec(0usize..5, 1..60), r in 1usize..=6) {
            let seq = UnitSequence(units);
            let s = stack(&seq, r, 5).unwrap();
            prop_assert_eq!(s.groups.len(), seq.len().div_ceil(r));
            prop_assert!(s.groups.iter().all(|g| g.len() == r));
            prop_assert_eq!(unstack(&s), seq);
        }
    }
}
