//! Beam search over unit groups with CTC text read off the best
//! hypothesis, plus an exhaustive-search reference for tiny problems.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{domain, Error, Result};
use crate::model::S2UTModel;
use crate::tensor::Mat;

/// One way to extend a prefix by a decoder step.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    /// Ids fed back to the decoder at the next step.
    pub group: Vec<usize>,
    /// Units this step contributes to the output stream.
    pub units: Vec<usize>,
    pub logp: f64,
    /// The group carries the end marker.
    pub ends: bool,
}

/// An autoregressive model seen one step at a time.
pub trait StepModel {
    /// The best `k` continuations of `prefix` (best first) and the state the
    /// model recorded for this step.
    fn expand(&self, prefix: &[Vec<usize>], k: usize) -> Result<(Vec<Candidate>, Vec<f64>)>;
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Hypothesis {
    pub groups: Vec<Vec<usize>>,
    pub units: Vec<usize>,
    /// Sum of the chosen per-step log-probabilities.
    pub score: f64,
    pub step_scores: Vec<f64>,
    /// Per-step decoder states at the CTC layer.
    pub states: Vec<Vec<f64>>,
    pub finished: bool,
}

impl Hypothesis {
    fn empty() -> Self {
        Hypothesis { groups: Vec::new(), units: Vec::new(), score: 0.0, step_scores: Vec::new(), states: Vec::new(), finished: false }
    }

    pub fn steps(&self) -> usize {
        self.groups.len()
    }

    fn extend(&self, c: &Candidate, state: &[f64]) -> Self {
        let mut h = self.clone();
        h.groups.push(c.group.clone());
        h.units.extend_from_slice(&c.units);
        h.score += c.logp;
        h.step_scores.push(c.logp);
        h.states.push(state.to_vec());
        h.finished = c.ends;
        h
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchConfig {
    pub beam: usize,
    pub max_len: usize,
    /// Rank finished hypotheses by `score / steps^alpha` when set.
    pub length_penalty: Option<f64>,
}

impl SearchConfig {
    pub fn new(beam: usize, max_len: usize) -> Self {
        SearchConfig { beam, max_len, length_penalty: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    /// Best first.
    pub hypotheses: Vec<Hypothesis>,
    /// No hypothesis finished within `max_len`.
    pub truncated: bool,
}

impl SearchResult {
    pub fn best(&self) -> &Hypothesis {
        &self.hypotheses[0]
    }
}

fn rank_key(h: &Hypothesis, penalty: Option<f64>) -> f64 {
    match penalty {
        Some(a) if !h.groups.is_empty() => h.score / libm::pow(h.groups.len() as f64, a),
        _ => h.score,
    }
}

/// Standard beam search with a pool of finished hypotheses. Every live
/// hypothesis proposes its best `beam` continuations, which are ranked
/// together; the best `beam` unfinished ones survive, and finished ones
/// ranked above the last survivor enter the pool, which keeps the `beam`
/// best. Without a length penalty scores never increase, so live
/// hypotheses that cannot beat a full pool are dropped. Search stops when
/// nothing is alive, when the pool is full under a length penalty, or after
/// `max_len` steps.
pub fn beam_search<M: StepModel + ?Sized>(model: &M, cfg: &SearchConfig) -> Result<SearchResult> {
    if cfg.beam == 0 || cfg.max_len == 0 {
        return Err(domain("beam and max_len must be >= 1"));
    }
    let key = |h: &Hypothesis| rank_key(h, cfg.length_penalty);
    let mut live = vec![Hypothesis::empty()];
    let mut pool: Vec<Hypothesis> = Vec::new();
    for _ in 0..cfg.max_len {
        let mut exts: Vec<(usize, usize, Candidate, Vec<f64>)> = Vec::new();
        for (hi, h) in live.iter().enumerate() {
            let (cands, state) = model.expand(&h.groups, cfg.beam)?;
            for (ci, c) in cands.into_iter().enumerate() {
                exts.push((hi, ci, c, state.clone()));
            }
        }
        exts.sort_by(|a, b| {
            let sa = live[a.0].score + a.2.logp;
            let sb = live[b.0].score + b.2.logp;
            sb.total_cmp(&sa).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1))
        });
        let mut next = Vec::with_capacity(cfg.beam);
        for (hi, _, c, state) in &exts {
            if next.len() == cfg.beam {
                break;
            }
            let h = live[*hi].extend(c, state);
            if c.ends {
                pool.push(h);
            } else {
                next.push(h);
            }
        }
        pool.sort_by(|a, b| key(b).total_cmp(&key(a)));
        pool.truncate(cfg.beam);
        live = next;
        if pool.len() == cfg.beam {
            if cfg.length_penalty.is_some() {
                break;
            }
            let worst = pool[pool.len() - 1].score;
            live.retain(|h| h.score > worst);
        }
        if live.is_empty() {
            break;
        }
    }
    if pool.is_empty() {
        if live.is_empty() {
            return Err(domain("search produced no hypotheses"));
        }
        log::warn!("no hypothesis finished within {} steps", cfg.max_len);
        live.sort_by(|a, b| b.score.total_cmp(&a.score));
        return Ok(SearchResult { hypotheses: live, truncated: true });
    }
    Ok(SearchResult { hypotheses: pool, truncated: false })
}

/// Best finished sequence of at most `max_len` steps by full enumeration.
/// Refuses spaces larger than `10^6` sequences.
pub fn exhaustive_search<M: StepModel + ?Sized>(model: &M, max_len: usize) -> Result<Option<Hypothesis>> {
    let (first, _) = model.expand(&[], usize::MAX)?;
    let width = first.len().max(1) as u128;
    let space: u128 = (1..=max_len as u32).map(|t| width.saturating_pow(t)).sum();
    if space > 1_000_000 {
        return Err(Error::SearchSpace(space));
    }
    let mut best: Option<Hypothesis> = None;
    let mut stack = vec![Hypothesis::empty()];
    while let Some(h) = stack.pop() {
        if h.steps() == max_len {
            continue;
        }
        let (cands, state) = model.expand(&h.groups, usize::MAX)?;
        for c in &cands {
            let e = h.extend(c, &state);
            if e.finished {
                if best.as_ref().is_none_or(|b| e.score > b.score) {
                    best = Some(e);
                }
            } else {
                stack.push(e);
            }
        }
    }
    Ok(best)
}

/// The `k` best index tuples of a sum of independent per-position scores,
/// best first. Ties resolve to lexicographically smaller tuples.
pub fn k_best_product(lists: &[Vec<f64>], k: usize) -> Vec<(Vec<usize>, f64)> {
    let mut cur: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
    for list in lists {
        let mut order: Vec<usize> = (0..list.len()).collect();
        order.sort_by(|&a, &b| list[b].total_cmp(&list[a]).then(a.cmp(&b)));
        order.truncate(k);
        let mut next = Vec::with_capacity(cur.len() * order.len());
        for (tuple, s) in &cur {
            for &i in &order {
                let mut t = tuple.clone();
                t.push(i);
                next.push((t, s + list[i]));
            }
        }
        next.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        next.truncate(k);
        cur = next;
    }
    cur
}

/// [`StepModel`] view of a trained model on one source utterance.
pub struct UnitStepper<'a> {
    pub model: &'a S2UTModel,
    pub memory: Mat,
}

impl<'a> UnitStepper<'a> {
    pub fn new(model: &'a S2UTModel, source: &Mat) -> Result<Self> {
        Ok(UnitStepper { model, memory: model.encode_source(source)? })
    }
}

impl StepModel for UnitStepper<'_> {
    fn expand(&self, prefix: &[Vec<usize>], k: usize) -> Result<(Vec<Candidate>, Vec<f64>)> {
        let cfg = &self.model.config;
        let pad = cfg.unit_pad();
        let mut inputs = vec![vec![pad; cfg.group()]];
        inputs.extend(prefix.iter().cloned());
        let (lp, state) = self.model.next_step(&self.memory, &inputs);
        let lists: Vec<Vec<f64>> = lp.rows_iter().map(|r| r.to_vec()).collect();
        let cands = k_best_product(&lists, k)
            .into_iter()
            .map(|(group, logp)| {
                let units: Vec<usize> = group.iter().copied().take_while(|&u| u != pad).collect();
                let ends = units.len() < group.len();
                Candidate { group, units, logp, ends }
            })
            .collect();
        Ok((cands, state))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointOutput {
    pub hypothesis: Hypothesis,
    pub units: Vec<usize>,
    /// Greedy CTC text ids of the best hypothesis.
    pub text: Vec<usize>,
    pub truncated: bool,
}

/// Unit beam search followed by CTC text decoding of the best hypothesis.
pub fn joint_decode(model: &S2UTModel, source: &Mat, cfg: &SearchConfig) -> Result<JointOutput> {
    if !model.has_ctc() {
        return Err(crate::error::config("model has no CTC head"));
    }
    let result = beam_search(&UnitStepper::new(model, source)?, cfg)?;
    let best = result.best().clone();
    let d = model.config.embed_dim;
    let states = Mat::from_vec(best.states.len(), d, best.states.iter().flatten().copied().collect());
    let text = model.ctc_text(&states)?;
    Ok(JointOutput { units: best.units.clone(), text, hypothesis: best, truncated: result.truncated })
}

/// Per-utterance decode output.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DecodeRecord {
    pub id: String,
    pub units: Vec<usize>,
    pub text: String,
    pub score: f64,
    pub steps: usize,
    pub beam: usize,
    pub truncated: bool,
}
