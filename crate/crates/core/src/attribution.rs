// SPDX-License-Identifier: MIT OR Apache-2.0

//! Leave-one-sentence-out attribution scored by Jensen–Shannon divergence.
//!
//! For a context of `n` sentences the response is produced (or scored) once
//! under the full prompt, then re-scored under each of the `n` prompts with
//! one sentence removed. A sentence's score is the per-token JSD between the
//! full and ablated next-token distributions, summed over response positions.
//! That is exactly `n + 1` backend calls.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, Distribution, ScoreRequest};
use crate::error::{Error, Result};
use crate::segmenter::SegmentedContext;

/// Logarithm base for divergences. Nats bound JSD by `ln 2`, bits by 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    #[default]
    Nats,
    Bits,
}

impl LogBase {
    pub fn upper_bound(self) -> f64 {
        match self {
            LogBase::Nats => std::f64::consts::LN_2,
            LogBase::Bits => 1.0,
        }
    }
}

/// A divergence plus whether a sparse tail had to be approximated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JsdScore {
    pub value: f64,
    pub approximate: bool,
}

fn check(p: &Distribution, q: &Distribution) -> Result<()> {
    p.validate().map_err(Error::InvalidDistribution)?;
    q.validate().map_err(Error::InvalidDistribution)?;
    if p.vocab_size() != q.vocab_size() {
        return Err(Error::LengthMismatch {
            left: p.vocab_size(),
            right: q.vocab_size(),
        });
    }
    Ok(())
}

/// `a ln(a / m)` with `0 ln 0 = 0`.
fn term(a: f64, m: f64) -> f64 {
    if a > 0.0 {
        a * (a / m).ln()
    } else {
        0.0
    }
}

/// JSD in nats of two already-aligned mass vectors, renormalized by their sums.
fn jsd_aligned(p: impl Iterator<Item = f64> + Clone, q: impl Iterator<Item = f64> + Clone) -> f64 {
    let sp: f64 = p.clone().sum();
    let sq: f64 = q.clone().sum();
    let mut acc = 0.0;
    for (a, b) in p.zip(q) {
        let (a, b) = (a / sp, b / sq);
        let m = 0.5 * (a + b);
        acc += term(a, m) + term(b, m);
    }
    (0.5 * acc).clamp(0.0, std::f64::consts::LN_2)
}

/// Jensen–Shannon divergence with the sparse-tail flag.
///
/// Dense pairs are compared token by token. When either side is sparse the
/// comparison runs over the union of listed tokens, each unlisted side using
/// its evenly spread tail, and everything outside the union is lumped into
/// one paired remainder bucket; the result is then flagged approximate.
pub fn jsd_scored(p: &Distribution, q: &Distribution, base: LogBase) -> Result<JsdScore> {
    check(p, q)?;
    let (value, approximate) = match (p, q) {
        (Distribution::Dense { probs: a }, Distribution::Dense { probs: b }) => (
            jsd_aligned(a.iter().map(|&x| x as f64), b.iter().map(|&x| x as f64)),
            false,
        ),
        _ => {
            let (sp, tp) = p.support();
            let (sq, tq) = q.support();
            let mut union: Vec<u32> = sp.iter().chain(&sq).map(|&(t, _)| t).collect();
            union.sort_unstable();
            union.dedup();
            let mut pa: Vec<f64> = union.iter().map(|&t| p.prob(t)).collect();
            let mut qa: Vec<f64> = union.iter().map(|&t| q.prob(t)).collect();
            pa.push((p.mass() - pa.iter().sum::<f64>()).max(0.0));
            qa.push((q.mass() - qa.iter().sum::<f64>()).max(0.0));
            (
                jsd_aligned(pa.iter().copied(), qa.iter().copied()),
                tp > 0.0 || tq > 0.0,
            )
        }
    };
    let value = match base {
        LogBase::Nats => value,
        LogBase::Bits => (value / std::f64::consts::LN_2).min(1.0),
    };
    Ok(JsdScore { value, approximate })
}

/// Jensen–Shannon divergence in nats.
pub fn jsd(p: &Distribution, q: &Distribution) -> Result<f64> {
    jsd_in(p, q, LogBase::Nats)
}

pub fn jsd_in(p: &Distribution, q: &Distribution, base: LogBase) -> Result<f64> {
    Ok(jsd_scored(p, q, base)?.value)
}

/// Sum of per-position JSD between two aligned distribution streams.
pub fn response_jsd(full: &[Distribution], ablated: &[Distribution]) -> Result<JsdScore> {
    if full.len() != ablated.len() {
        return Err(Error::LengthMismatch {
            left: full.len(),
            right: ablated.len(),
        });
    }
    let mut out = JsdScore {
        value: 0.0,
        approximate: false,
    };
    for (p, q) in full.iter().zip(ablated) {
        let s = jsd_scored(p, q, LogBase::Nats)?;
        out.value += s.value;
        out.approximate |= s.approximate;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionConfig {
    /// Generation budget when no response is supplied.
    pub max_new_tokens: usize,
    /// Concurrent ablation passes; `None` uses the backend's advertised limit.
    pub parallelism: Option<usize>,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        Self {
            max_new_tokens: 32,
            parallelism: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceScore {
    pub index: usize,
    pub doc_index: usize,
    pub text: String,
    pub jsd: f64,
    pub approximate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub query: String,
    pub response: String,
    pub response_tokens: Vec<u32>,
    pub scores: Vec<SentenceScore>,
    /// Index of the highest-scoring sentence; ties go to the lowest index.
    pub top: usize,
    pub backend_calls: usize,
}

impl AttributionResult {
    /// The `k` highest-scoring sentences, ties broken by lower index.
    pub fn top_k(&self, k: usize) -> Vec<&SentenceScore> {
        let mut v: Vec<&SentenceScore> = self.scores.iter().collect();
        v.sort_by(|a, b| b.jsd.total_cmp(&a.jsd).then(a.index.cmp(&b.index)));
        v.truncate(k);
        v
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("attribution results serialize")
    }
}

/// Index of the largest value; the first wins ties.
pub fn argmax_lowest(values: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Response tokens and their full-context distributions.
pub(crate) struct Reference {
    pub tokens: Vec<u32>,
    pub distributions: Vec<Distribution>,
}

/// One backend call: score `response` if given, otherwise generate it.
pub(crate) fn reference_pass<B: Backend + ?Sized>(
    backend: &B,
    prompt: &[u32],
    response: Option<&str>,
    max_new_tokens: usize,
) -> Result<Reference> {
    let reference = match response {
        Some(text) => {
            let tokens = backend.tokenize(text)?;
            let scored = backend.score(&ScoreRequest::final_only(prompt.to_vec(), tokens.clone()))?;
            Reference {
                tokens,
                distributions: scored.distributions,
            }
        }
        None => {
            let g = backend.generate(prompt, max_new_tokens)?;
            Reference {
                tokens: g.tokens,
                distributions: g.distributions,
            }
        }
    };
    if reference.tokens.is_empty() {
        return Err(Error::InvalidArgument("response is empty".into()));
    }
    if reference.distributions.len() != reference.tokens.len() {
        return Err(Error::LengthMismatch {
            left: reference.distributions.len(),
            right: reference.tokens.len(),
        });
    }
    Ok(reference)
}

/// Run `job(i)` for `i in 0..n` on up to `workers` threads, keeping order.
pub(crate) fn run_indexed<T: Send>(
    n: usize,
    workers: usize,
    job: impl Fn(usize) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        return (0..n).map(job).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = job(i);
                slots.lock().expect("result slots")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|r| r.expect("every index ran"))
        .collect()
}

/// Attribute `response` (or the model's own greedy response) to the
/// sentences of `ctx`.
pub fn attribute<B: Backend + ?Sized>(
    backend: &B,
    ctx: &SegmentedContext,
    query: &str,
    response: Option<&str>,
    config: &AttributionConfig,
) -> Result<AttributionResult> {
    if ctx.is_empty() {
        return Err(Error::EmptyContext);
    }
    let full = ctx.render_full(query)?;
    let prompt = backend.tokenize(&full.rendered)?;
    let reference = reference_pass(backend, &prompt, response, config.max_new_tokens)?;
    let workers = config.parallelism.unwrap_or(backend.info().max_parallelism);

    let ablated = run_indexed(ctx.len(), workers, |i| {
        let p = ctx.render_without(query, i)?;
        let tokens = backend.tokenize(&p.rendered)?;
        let scored = backend.score(&ScoreRequest::final_only(tokens, reference.tokens.clone()))?;
        response_jsd(&reference.distributions, &scored.distributions)
    })?;

    let scores: Vec<SentenceScore> = ctx
        .sentences
        .iter()
        .zip(&ablated)
        .map(|(s, j)| SentenceScore {
            index: s.index,
            doc_index: s.doc_index,
            text: s.text.clone(),
            jsd: j.value,
            approximate: j.approximate,
        })
        .collect();
    let top = argmax_lowest(scores.iter().map(|s| s.jsd)).expect("non-empty context");
    Ok(AttributionResult {
        query: query.to_string(),
        response: backend.detokenize(&reference.tokens)?,
        response_tokens: reference.tokens,
        scores,
        top,
        backend_calls: ctx.len() + 1,
    })
}
