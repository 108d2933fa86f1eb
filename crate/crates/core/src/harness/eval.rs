// SPDX-License-Identifier: MIT OR Apache-2.0

//! Attribution accuracy and efficiency runs over a dataset.

use std::io::Write;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::dataset::QaSample;
use crate::attribution::{attribute, AttributionConfig};
use crate::backend::{Backend, CountingBackend};
use crate::error::{Error, Result};
use crate::surrogate::{surrogate_attribute, LassoOptions, SurrogateConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ArcJsd,
    Surrogate,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::ArcJsd => "arc-jsd",
            Method::Surrogate => "surrogate",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "arc-jsd" | "arcjsd" => Ok(Method::ArcJsd),
            "surrogate" => Ok(Method::Surrogate),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub max_new_tokens: usize,
    pub n_masks: usize,
    pub seed: u64,
    pub lambda: f64,
    /// Attribute the gold answer instead of the model's own greedy response.
    pub score_gold_answer: bool,
    /// Samples processed concurrently.
    pub workers: usize,
    /// Concurrent ablation calls within one sample.
    pub ablation_parallelism: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            max_new_tokens: 32,
            n_masks: 256,
            seed: 0,
            lambda: LassoOptions::default().lambda,
            score_gold_answer: false,
            workers: 1,
            ablation_parallelism: None,
        }
    }
}

/// Evidence for one sample under one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub method: Method,
    pub top1: usize,
    pub top1_text: String,
    pub correct: bool,
    /// Neither gold support nor an answer-bearing sentence was available.
    pub unscorable: bool,
    pub gold_sentences: Vec<usize>,
    pub scores: Vec<f64>,
    pub response: String,
    pub calls: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub samples: usize,
    pub accuracy: f64,
    pub mean_calls: f64,
    pub total_ms: f64,
    pub mean_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<SampleRecord>,
    pub summaries: Vec<MethodSummary>,
    /// Set when a backend error stopped the run early.
    pub incomplete: bool,
    pub error: Option<String>,
}

impl EvalReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    /// Accuracy of `method` over its records.
    pub fn accuracy(&self, method: Method) -> f64 {
        self.summary(method).map_or(0.0, |s| s.accuracy)
    }

    /// One JSON object per record. Wall times are zeroed unless
    /// `include_timing`, so fixed inputs give identical bytes.
    pub fn write_jsonl<W: Write>(&self, mut w: W, include_timing: bool) -> Result<()> {
        for r in &self.records {
            let mut r = r.clone();
            if !include_timing {
                r.wall_ms = 0.0;
            }
            serde_json::to_writer(&mut w, &r).map_err(|e| Error::Io(e.into()))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    fn summarize(records: &[SampleRecord]) -> Vec<MethodSummary> {
        let mut methods: Vec<Method> = records.iter().map(|r| r.method).collect();
        methods.sort();
        methods.dedup();
        methods
            .into_iter()
            .map(|m| {
                let rs: Vec<&SampleRecord> = records.iter().filter(|r| r.method == m).collect();
                let n = rs.len() as f64;
                let total_ms: f64 = rs.iter().map(|r| r.wall_ms).sum();
                MethodSummary {
                    method: m,
                    samples: rs.len(),
                    accuracy: rs.iter().filter(|r| r.correct).count() as f64 / n,
                    mean_calls: rs.iter().map(|r| r.calls as f64).sum::<f64>() / n,
                    total_ms,
                    mean_ms: total_ms / n,
                }
            })
            .collect()
    }
}

/// Correctness of a top-1 pick: gold-support membership when the sample has
/// resolvable support, otherwise case-insensitive containment of the gold
/// answer. Returns `(correct, unscorable)`.
pub fn judge(sample: &QaSample, sentences: &[crate::segmenter::Sentence], top1: usize) -> (bool, bool) {
    let gold = sample.gold_sentences(sentences);
    if !gold.is_empty() {
        return (gold.contains(&top1), false);
    }
    let answer = sample.gold_answer.trim().to_lowercase();
    if answer.is_empty() {
        return (false, true);
    }
    let holds = |s: &crate::segmenter::Sentence| s.text.to_lowercase().contains(&answer);
    if !sentences.iter().any(holds) {
        return (false, true);
    }
    (sentences.get(top1).is_some_and(holds), false)
}

fn run_one<B: Backend + ?Sized>(
    backend: &B,
    sample: &QaSample,
    method: Method,
    opts: &EvalOptions,
) -> Result<SampleRecord> {
    let ctx = sample.context()?;
    let counting = CountingBackend::new(backend);
    let response = opts.score_gold_answer.then_some(sample.gold_answer.as_str());
    let started = Instant::now();
    let (top1, scores, response_text, reported_calls) = match method {
        Method::ArcJsd => {
            let cfg = AttributionConfig {
                max_new_tokens: opts.max_new_tokens,
                parallelism: opts.ablation_parallelism,
            };
            let r = attribute(&counting, &ctx, &sample.query, response, &cfg)?;
            (r.top, r.scores.iter().map(|s| s.jsd).collect(), r.response, r.backend_calls)
        }
        Method::Surrogate => {
            let cfg = SurrogateConfig {
                n_masks: opts.n_masks,
                seed: opts.seed,
                lasso: LassoOptions {
                    lambda: opts.lambda,
                    ..Default::default()
                },
                max_new_tokens: opts.max_new_tokens,
                parallelism: opts.ablation_parallelism,
            };
            let r = surrogate_attribute(&counting, &ctx, &sample.query, response, &cfg)?;
            let text = backend.detokenize(&r.response_tokens)?;
            (r.top, r.weights, text, r.backend_calls)
        }
    };
    let wall_ms = started.elapsed().as_secs_f64() * 1e3;
    let calls = counting.calls();
    if calls != reported_calls {
        return Err(Error::CallCount {
            method: method.as_str(),
            expected: reported_calls,
            measured: calls,
        });
    }
    let (correct, unscorable) = judge(sample, &ctx.sentences, top1);
    Ok(SampleRecord {
        sample_id: sample.id.clone(),
        method,
        top1,
        top1_text: ctx.sentences[top1].text.clone(),
        correct,
        unscorable,
        gold_sentences: sample.gold_sentences(&ctx.sentences),
        scores,
        response: response_text,
        calls,
        wall_ms,
    })
}

/// Run every method on every sample with a bounded pool of sample workers.
/// A backend error stops dispatch and yields the finished records flagged
/// incomplete; other errors are returned.
pub fn evaluate<B: Backend + ?Sized>(
    samples: &[QaSample],
    methods: &[Method],
    backend: &B,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let records: Mutex<Vec<(usize, SampleRecord)>> = Mutex::new(Vec::new());
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let workers = opts.workers.clamp(1, samples.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= samples.len() {
                    break;
                }
                for &m in methods {
                    match run_one(backend, &samples[i], m, opts) {
                        Ok(r) => records.lock().expect("records").push((i, r)),
                        Err(e) => {
                            stop.store(true, Ordering::SeqCst);
                            failure.lock().expect("failure").get_or_insert(e);
                            return;
                        }
                    }
                }
            });
        }
    });
    let mut records = records.into_inner().expect("records");
    records.sort_by(|(ia, a), (ib, b)| a.sample_id.cmp(&b.sample_id).then(ia.cmp(ib)).then(a.method.cmp(&b.method)));
    let records: Vec<SampleRecord> = records.into_iter().map(|(_, r)| r).collect();
    let (incomplete, error) = match failure.into_inner().expect("failure") {
        None => (false, None),
        Some(Error::Backend(e)) => (true, Some(e.to_string())),
        Some(other) => return Err(other),
    };
    Ok(EvalReport {
        summaries: EvalReport::summarize(&records),
        records,
        incomplete,
        error,
    })
}

pub fn evaluate_accuracy<B: Backend + ?Sized>(
    samples: &[QaSample],
    method: Method,
    backend: &B,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    evaluate(samples, &[method], backend, opts)
}

/// Call and wall-time comparison of the two methods, one sample at a time so
/// timings do not overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub report: EvalReport,
    /// Mean surrogate calls over mean attribution calls.
    pub call_ratio: f64,
    /// Surrogate wall time over attribution wall time.
    pub time_ratio: f64,
}

pub fn benchmark<B: Backend + ?Sized>(samples: &[QaSample], backend: &B, opts: &EvalOptions) -> Result<Benchmark> {
    let serial = EvalOptions {
        workers: 1,
        ..opts.clone()
    };
    let report = evaluate(samples, &[Method::ArcJsd, Method::Surrogate], backend, &serial)?;
    if let Some(e) = &report.error {
        return Err(Error::InvalidArgument(format!("benchmark aborted: {e}")));
    }
    for r in &report.records {
        let ctx = samples
            .iter()
            .find(|s| s.id == r.sample_id)
            .expect("record of a known sample")
            .context()?;
        let expected = match r.method {
            Method::ArcJsd => ctx.len() + 1,
            Method::Surrogate => opts.n_masks + 1,
        };
        if r.calls != expected {
            return Err(Error::CallCount {
                method: r.method.as_str(),
                expected,
                measured: r.calls,
            });
        }
    }
    let arc = report.summary(Method::ArcJsd).expect("arc-jsd ran");
    let sur = report.summary(Method::Surrogate).expect("surrogate ran");
    Ok(Benchmark {
        call_ratio: sur.mean_calls / arc.mean_calls,
        time_ratio: sur.total_ms / arc.total_ms,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::dataset::GoldRef;
    use crate::segmenter::{ContextDoc, SegmentedContext};

    fn sample(answer: &str, support: Vec<GoldRef>) -> QaSample {
        QaSample {
            id: "s".into(),
            docs: vec![ContextDoc::untitled("Paris is in France. Rome is in Italy.")],
            query: "Where?".into(),
            gold_answer: answer.into(),
            gold_support: support,
        }
    }

    #[test]
    fn judge_prefers_support_then_answer() {
        let ctx = SegmentedContext::new(sample("", vec![]).docs).unwrap();
        let s = sample("italy", vec![GoldRef::SentenceIndex { index: 0 }]);
        assert_eq!(judge(&s, &ctx.sentences, 0), (true, false));
        assert_eq!(judge(&s, &ctx.sentences, 1), (false, false));
        let s = sample("ITALY", vec![]);
        assert_eq!(judge(&s, &ctx.sentences, 1), (true, false));
        let s = sample("Spain", vec![]);
        assert_eq!(judge(&s, &ctx.sentences, 1), (false, true));
    }

    #[test]
    fn method_names() {
        assert_eq!("arc-jsd".parse::<Method>().unwrap(), Method::ArcJsd);
        assert!("loo".parse::<Method>().is_err());
        assert_eq!(serde_json::to_string(&Method::ArcJsd).unwrap(), "\"arc-jsd\"");
    }
}
