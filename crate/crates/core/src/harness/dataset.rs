// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dataset loaders.
//!
//! | format    | layout | fields |
//! |-----------|--------|--------|
//! | `generic` | JSON Lines | `id`?, `context` (string) or `docs` (`[{title?, text}]`), `question`, `answer`?, `supporting_sentences`? (sentence indices or sentence texts) |
//! | `tydi`    | JSON Lines | `id`, `title`?, `context`, `question`, `answers.text[]` or `answer` |
//! | `hotpot`  | JSON array or JSON Lines | `_id`, `question`, `answer`, `context` (`[[title, [sentence, ...]], ...]`), `supporting_facts` (`[[title, sentence_index], ...]`) |
//! | `musique` | JSON Lines | `id`, `question`, `answer`, `paragraphs` (`[{title, paragraph_text, is_supporting}]`) |
//!
//! Blank lines in JSON Lines files are skipped. Records missing an id get
//! `line-<n>`.

use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::segmenter::{ContextDoc, SegmentedContext, Sentence};

/// Upper bound on evaluated samples per dataset.
pub const MAX_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    Generic,
    Tydi,
    Hotpot,
    Musique,
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "generic" => Ok(DatasetFormat::Generic),
            "tydi" | "tydiqa" => Ok(DatasetFormat::Tydi),
            "hotpot" | "hotpotqa" => Ok(DatasetFormat::Hotpot),
            "musique" => Ok(DatasetFormat::Musique),
            other => Err(Error::InvalidArgument(format!("unknown dataset format {other:?}"))),
        }
    }
}

/// A gold supporting reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GoldRef {
    /// Global sentence index under this crate's segmentation.
    SentenceIndex { index: usize },
    /// Sentence text, optionally pinned to one document.
    Text { doc_index: Option<usize>, text: String },
    /// Every sentence of a supporting document.
    Doc { doc_index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaSample {
    pub id: String,
    pub docs: Vec<ContextDoc>,
    pub query: String,
    pub gold_answer: String,
    pub gold_support: Vec<GoldRef>,
}

impl QaSample {
    pub fn context(&self) -> Result<SegmentedContext> {
        SegmentedContext::new(self.docs.clone())
    }

    /// Global indices of sentences matched by the gold support, ascending.
    pub fn gold_sentences(&self, sentences: &[Sentence]) -> Vec<usize> {
        let norm = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
        let mut out: Vec<usize> = sentences
            .iter()
            .filter(|s| {
                self.gold_support.iter().any(|g| match g {
                    GoldRef::SentenceIndex { index } => *index == s.index,
                    GoldRef::Doc { doc_index } => *doc_index == s.doc_index,
                    GoldRef::Text { doc_index, text } => {
                        let (a, b) = (norm(&s.text), norm(text));
                        doc_index.is_none_or(|d| d == s.doc_index)
                            && !b.is_empty()
                            && (a.contains(&b) || b.contains(&a))
                    }
                })
            })
            .map(|s| s.index)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

pub fn load_dataset(path: impl AsRef<Path>, format: DatasetFormat) -> Result<Vec<QaSample>> {
    let text = std::fs::read_to_string(path)?;
    parse_dataset(&text, format)
}

/// Parse dataset text. Order follows the file.
pub fn parse_dataset(text: &str, format: DatasetFormat) -> Result<Vec<QaSample>> {
    if format == DatasetFormat::Hotpot && text.trim_start().starts_with('[') {
        let records: Vec<Value> = serde_json::from_str(text).map_err(|e| Error::Format {
            line: e.line(),
            message: e.to_string(),
        })?;
        // the array form carries no per-record line numbers; report element positions
        return records
            .iter()
            .enumerate()
            .map(|(i, v)| parse_record(v, format, i + 1))
            .collect();
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(line).map_err(|e| Error::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(parse_record(&v, format, i + 1)?);
    }
    Ok(out)
}

/// Keep at most `max` samples chosen by `seed`, preserving file order.
pub fn subsample(samples: Vec<QaSample>, max: usize, seed: u64) -> Vec<QaSample> {
    if samples.len() <= max {
        return samples;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = sample(&mut rng, samples.len(), max).into_vec();
    keep.sort_unstable();
    let mut keep = keep.into_iter().peekable();
    samples
        .into_iter()
        .enumerate()
        .filter_map(|(i, s)| {
            if keep.peek() == Some(&i) {
                keep.next();
                Some(s)
            } else {
                None
            }
        })
        .collect()
}

struct Rec<'a> {
    v: &'a Value,
    line: usize,
}

impl<'a> Rec<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format {
            line: self.line,
            message: message.into(),
        }
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        self.v.get(key).filter(|v| !v.is_null())
    }

    fn str(&self, key: &str) -> Result<String> {
        self.get(key)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| self.err(format!("missing string field {key:?}")))
    }

    fn opt_str(&self, key: &str) -> Option<String> {
        self.get(key).and_then(Value::as_str).map(str::to_string)
    }

    fn array(&self, key: &str) -> Result<&'a Vec<Value>> {
        self.get(key)
            .and_then(Value::as_array)
            .ok_or_else(|| self.err(format!("missing array field {key:?}")))
    }

    fn id(&self, keys: &[&str]) -> String {
        keys.iter()
            .find_map(|k| match self.get(k) {
                Some(Value::String(s)) => Some(s.clone()),
                Some(Value::Number(n)) => Some(n.to_string()),
                _ => None,
            })
            .unwrap_or_else(|| format!("line-{}", self.line))
    }
}

/// Join pre-split sentences, adding a space only where neither side has one.
fn join_sentences(parts: &[&str]) -> String {
    let mut out = String::new();
    for p in parts {
        if !out.is_empty() && !out.ends_with(char::is_whitespace) && !p.starts_with(char::is_whitespace) {
            out.push(' ');
        }
        out.push_str(p);
    }
    out
}

fn parse_record(v: &Value, format: DatasetFormat, line: usize) -> Result<QaSample> {
    let r = Rec { v, line };
    if !v.is_object() {
        return Err(r.err("record is not an object"));
    }
    let sample = match format {
        DatasetFormat::Generic => parse_generic(&r)?,
        DatasetFormat::Tydi => parse_tydi(&r)?,
        DatasetFormat::Hotpot => parse_hotpot(&r)?,
        DatasetFormat::Musique => parse_musique(&r)?,
    };
    if sample.query.trim().is_empty() {
        return Err(r.err("empty question"));
    }
    if sample.docs.is_empty() || sample.docs.iter().all(|d| d.body.trim().is_empty()) {
        return Err(r.err("empty context"));
    }
    Ok(sample)
}

fn parse_generic(r: &Rec) -> Result<QaSample> {
    let docs = match (r.get("docs"), r.opt_str("context")) {
        (Some(Value::Array(items)), _) => items
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let text = d
                    .get("text")
                    .and_then(Value::as_str)
                    .ok_or_else(|| r.err(format!("docs[{i}] has no text")))?;
                let title = d.get("title").and_then(Value::as_str).map(str::to_string);
                Ok(ContextDoc::new(i, title, text))
            })
            .collect::<Result<Vec<_>>>()?,
        (_, Some(c)) => vec![ContextDoc::untitled(c)],
        _ => return Err(r.err("need \"docs\" or \"context\"")),
    };
    let gold_support = match r.get("supporting_sentences") {
        None => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .map(|g| match g {
                Value::Number(n) => n
                    .as_u64()
                    .map(|index| GoldRef::SentenceIndex { index: index as usize })
                    .ok_or_else(|| r.err("sentence index must be a non-negative integer")),
                Value::String(text) => Ok(GoldRef::Text {
                    doc_index: None,
                    text: text.clone(),
                }),
                _ => Err(r.err("supporting_sentences entries must be integers or strings")),
            })
            .collect::<Result<Vec<_>>>()?,
        Some(_) => return Err(r.err("supporting_sentences must be an array")),
    };
    Ok(QaSample {
        id: r.id(&["id"]),
        docs,
        query: r.str("question")?,
        gold_answer: r.opt_str("answer").unwrap_or_default(),
        gold_support,
    })
}

fn parse_tydi(r: &Rec) -> Result<QaSample> {
    let answer = r
        .get("answers")
        .and_then(|a| a.get("text"))
        .and_then(Value::as_array)
        .and_then(|t| t.first())
        .and_then(Value::as_str)
        .map(str::to_string)
        .or_else(|| r.opt_str("answer"))
        .unwrap_or_default();
    Ok(QaSample {
        id: r.id(&["id"]),
        docs: vec![ContextDoc::untitled(r.str("context")?)],
        query: r.str("question")?,
        gold_answer: answer,
        gold_support: Vec::new(),
    })
}

fn parse_hotpot(r: &Rec) -> Result<QaSample> {
    let mut docs = Vec::new();
    let mut sentences_by_doc = Vec::new();
    for (i, entry) in r.array("context")?.iter().enumerate() {
        let pair = entry.as_array().filter(|p| p.len() == 2);
        let (title, sents) = pair
            .and_then(|p| Some((p[0].as_str()?, p[1].as_array()?)))
            .ok_or_else(|| r.err(format!("context[{i}] is not [title, [sentences]]")))?;
        let sents: Vec<&str> = sents
            .iter()
            .map(|s| s.as_str().ok_or_else(|| r.err(format!("context[{i}] has a non-string sentence"))))
            .collect::<Result<_>>()?;
        docs.push(ContextDoc::new(i, Some(title.to_string()), join_sentences(&sents)));
        sentences_by_doc.push((title.to_string(), sents.iter().map(|s| s.to_string()).collect::<Vec<_>>()));
    }
    let mut gold_support = Vec::new();
    if let Some(Value::Array(facts)) = r.get("supporting_facts") {
        for (k, f) in facts.iter().enumerate() {
            let (title, idx) = f
                .as_array()
                .filter(|p| p.len() == 2)
                .and_then(|p| Some((p[0].as_str()?, p[1].as_u64()?)))
                .ok_or_else(|| r.err(format!("supporting_facts[{k}] is not [title, index]")))?;
            // facts pointing at missing titles or sentences are dropped, as in the official scorer
            if let Some((d, (_, sents))) = sentences_by_doc.iter().enumerate().find(|(_, (t, _))| t == title) {
                if let Some(text) = sents.get(idx as usize) {
                    gold_support.push(GoldRef::Text {
                        doc_index: Some(d),
                        text: text.trim().to_string(),
                    });
                }
            }
        }
    }
    Ok(QaSample {
        id: r.id(&["_id", "id"]),
        docs,
        query: r.str("question")?,
        gold_answer: r.opt_str("answer").unwrap_or_default(),
        gold_support,
    })
}

fn parse_musique(r: &Rec) -> Result<QaSample> {
    let mut docs = Vec::new();
    let mut gold_support = Vec::new();
    for (i, p) in r.array("paragraphs")?.iter().enumerate() {
        let text = p
            .get("paragraph_text")
            .and_then(Value::as_str)
            .ok_or_else(|| r.err(format!("paragraphs[{i}] has no paragraph_text")))?;
        let title = p.get("title").and_then(Value::as_str).map(str::to_string);
        docs.push(ContextDoc::new(i, title, text));
        if p.get("is_supporting").and_then(Value::as_bool) == Some(true) {
            gold_support.push(GoldRef::Doc { doc_index: i });
        }
    }
    Ok(QaSample {
        id: r.id(&["id"]),
        docs,
        query: r.str("question")?,
        gold_answer: r.opt_str("answer").unwrap_or_default(),
        gold_support,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generic_two_samples() {
        let text = r#"{"id": "a", "context": "One fact. Two fact.", "question": "Q?", "answer": "two", "supporting_sentences": [1]}

{"docs": [{"title": "T", "text": "X is y."}, {"text": "Z."}], "question": "W?"}
"#;
        let s = parse_dataset(text, DatasetFormat::Generic).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].gold_support, vec![GoldRef::SentenceIndex { index: 1 }]);
        assert_eq!(s[1].id, "line-3");
        assert_eq!(s[1].docs[0].title.as_deref(), Some("T"));
    }

    #[test]
    fn format_error_reports_line() {
        let text = "{\"context\": \"A.\", \"question\": \"Q\"}\n{not json}\n";
        match parse_dataset(text, DatasetFormat::Generic) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let missing = "{\"context\": \"A.\"}\n";
        assert!(matches!(
            parse_dataset(missing, DatasetFormat::Generic),
            Err(Error::Format { line: 1, .. })
        ));
    }

    #[test]
    fn hotpot_supporting_facts_resolve() {
        let text = r#"[{"_id": "h1", "question": "Who?", "answer": "Ann",
            "context": [["Doc A", ["Ann wrote it.", " It sold well."]], ["Doc B", ["Bob read it."]]],
            "supporting_facts": [["Doc A", 0], ["Doc B", 0], ["Doc C", 3]]}]"#;
        let s = parse_dataset(text, DatasetFormat::Hotpot).unwrap();
        assert_eq!(s[0].docs[0].body, "Ann wrote it. It sold well.");
        let ctx = s[0].context().unwrap();
        assert_eq!(s[0].gold_sentences(&ctx.sentences), vec![0, 2]);
    }

    #[test]
    fn musique_supporting_paragraphs() {
        let text = r#"{"id": "m1", "question": "Q?", "answer": "a", "paragraphs": [{"title": "P0", "paragraph_text": "A one. A two.", "is_supporting": false}, {"title": "P1", "paragraph_text": "B one. B two.", "is_supporting": true}]}"#;
        let s = parse_dataset(text, DatasetFormat::Musique).unwrap();
        let ctx = s[0].context().unwrap();
        assert_eq!(s[0].gold_sentences(&ctx.sentences), vec![2, 3]);
    }

    #[test]
    fn tydi_answers() {
        let text = r#"{"id": "t", "context": "Paris is big.", "question": "Where?", "answers": {"text": ["Paris"], "answer_start": [0]}}"#;
        let s = parse_dataset(text, DatasetFormat::Tydi).unwrap();
        assert_eq!(s[0].gold_answer, "Paris");
    }

    #[test]
    fn subsample_is_seeded_and_ordered() {
        let text: String = (0..20)
            .map(|i| format!("{{\"id\": \"{i:02}\", \"context\": \"A.\", \"question\": \"Q\"}}\n"))
            .collect();
        let all = parse_dataset(&text, DatasetFormat::Generic).unwrap();
        let a = subsample(all.clone(), 5, 1);
        assert_eq!(a, subsample(all.clone(), 5, 1));
        assert_eq!(a.len(), 5);
        assert!(a.windows(2).all(|w| w[0].id < w[1].id));
        assert_eq!(subsample(all.clone(), 50, 1), all);
    }

    #[test]
    fn format_names_parse() {
        assert_eq!("HotpotQA".parse::<DatasetFormat>().unwrap(), DatasetFormat::Hotpot);
        assert!("csv".parse::<DatasetFormat>().is_err());
    }
}
