// SPDX-License-Identifier: MIT OR Apache-2.0

//! Sentence segmentation, leave-one-out context ablation and prompt rendering.
//!
//! Boundary rules (fixed, version 1):
//!
//! 1. A run of `.`, `!` or `?` may end a sentence.
//! 2. The run absorbs trailing closers (quotes, `)` and `]`) and any bracketed
//!    numeric citation markers such as `[3]`, with or without a leading space.
//! 3. A boundary is placed only if whitespace follows and the next visible
//!    character is an upper-case letter, a digit or an opening quote.
//! 4. A period ending a known abbreviation (`Dr.`, `e.g.`, `U.S.`, ...) or a
//!    single-capital initial (`J.`) never ends a sentence.
//!
//! Spans are byte offsets into the owning document body.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version tag of the boundary rules above. Bump on any behavioural change.
pub const SEGMENTER_RULES_VERSION: u32 = 1;

/// Abbreviations whose final period never terminates a sentence.
pub const ABBREVIATIONS: &[&str] = &[
    "Mr.", "Mrs.", "Ms.", "Dr.", "Prof.", "Sr.", "Jr.", "St.", "Mt.", "Ft.", "Gen.", "Col.",
    "Lt.", "Sgt.", "Capt.", "Gov.", "Sen.", "Rep.", "Rev.", "Hon.", "vs.", "etc.", "e.g.", "i.e.",
    "cf.", "al.", "approx.", "ca.", "Inc.", "Ltd.", "Co.", "Corp.", "Bros.", "No.", "Nos.", "Vol.",
    "Fig.", "Eq.", "p.", "pp.", "Jan.", "Feb.", "Mar.", "Apr.", "Jun.", "Jul.", "Aug.", "Sep.",
    "Sept.", "Oct.", "Nov.", "Dec.", "U.S.", "U.K.", "U.N.", "E.U.", "U.S.A.", "D.C.", "a.m.",
    "p.m.", "Ph.D.", "B.A.", "M.A.", "B.Sc.", "M.Sc.",
];

/// One context document. `doc_index` is its position within the sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextDoc {
    pub title: Option<String>,
    pub body: String,
    pub doc_index: usize,
}

impl ContextDoc {
    pub fn new(doc_index: usize, title: Option<String>, body: impl Into<String>) -> Self {
        Self {
            title,
            body: body.into(),
            doc_index,
        }
    }

    /// A single untitled document.
    pub fn untitled(body: impl Into<String>) -> Self {
        Self::new(0, None, body)
    }
}

/// Half-open byte range `[start, end)` into a document body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// A sentence: the unit removed by one ablation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    /// Global 0-based index across every document of a sample.
    pub index: usize,
    pub doc_index: usize,
    pub text: String,
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    /// `Context: {context}\n\nQuery: {question}`
    SingleContext,
    /// Repeated `Title: {t}\nContent: {d}` blocks, a blank line, then `Query: {q}`.
    MultiDoc,
}

impl TemplateId {
    /// The template that matches a document count.
    pub fn for_doc_count(docs: usize) -> Self {
        if docs == 1 {
            TemplateId::SingleContext
        } else {
            TemplateId::MultiDoc
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TemplateId::SingleContext => "single_context",
            TemplateId::MultiDoc => "multi_doc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub rendered: String,
    pub template_id: TemplateId,
    pub query: String,
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201D}' | '\u{2019}' | '\u{00BB}')
}

fn is_opening_quote(c: char) -> bool {
    matches!(c, '"' | '\'' | '\u{201C}' | '\u{2018}' | '\u{00AB}')
}

fn starts_sentence(c: char) -> bool {
    c.is_uppercase() || c.is_numeric() || is_opening_quote(c)
}

/// Length in bytes of a `[digits]` citation marker at the start of `s`.
fn citation_len(s: &str) -> Option<usize> {
    let rest = s.strip_prefix('[')?;
    let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
    if (1..=3).contains(&digits) && rest.as_bytes().get(digits) == Some(&b']') {
        Some(digits + 2)
    } else {
        None
    }
}

/// True when the period at byte `dot` closes an abbreviation or an initial.
fn is_abbreviation(body: &str, word_start: usize, dot: usize) -> bool {
    let word = &body[word_start..=dot];
    let word = word.trim_start_matches(['(', '[', '"', '\'', '\u{201C}']);
    if ABBREVIATIONS.contains(&word) {
        return true;
    }
    let mut chars = word.chars();
    matches!((chars.next(), chars.next(), chars.next()), (Some(c), Some('.'), None) if c.is_uppercase())
}

/// Byte offset just past the terminal run starting at `pos`, including closers
/// and citation markers, or `None` when no boundary may follow it.
fn boundary_end(body: &str, word_start: usize, pos: usize) -> Option<(usize, usize)> {
    let mut end = pos;
    let mut last_terminal = pos;
    for (i, c) in body[pos..].char_indices() {
        if is_terminal(c) {
            last_terminal = pos + i;
            end = pos + i + c.len_utf8();
        } else {
            break;
        }
    }
    if &body[pos..end] == "." && is_abbreviation(body, word_start, last_terminal) {
        return None;
    }
    while let Some(c) = body[end..].chars().next().filter(|c| is_closer(*c)) {
        end += c.len_utf8();
    }
    loop {
        let rest = &body[end..];
        let ws = rest.len() - rest.trim_start().len();
        match citation_len(&rest[ws..]) {
            Some(n) => end += ws + n,
            None => break,
        }
    }
    let rest = &body[end..];
    let trimmed = rest.trim_start();
    let ws = rest.len() - trimmed.len();
    if ws == 0 {
        return None;
    }
    match trimmed.chars().next() {
        Some(c) if starts_sentence(c) => Some((end, end + ws)),
        _ => None,
    }
}

/// Split one document body into sentences, indexed from 0.
pub fn segment(doc: &ContextDoc) -> Result<Vec<Sentence>> {
    let body = doc.body.as_str();
    if body.trim().is_empty() {
        return Err(Error::EmptyContext);
    }
    let mut spans = Vec::new();
    let mut start = body.len() - body.trim_start().len();
    let mut word_start = start;
    let mut cursor = start;
    while cursor < body.len() {
        let c = body[cursor..].chars().next().expect("cursor on char boundary");
        if c.is_whitespace() {
            cursor += c.len_utf8();
            word_start = cursor;
            continue;
        }
        if is_terminal(c) {
            if let Some((end, next)) = boundary_end(body, word_start, cursor) {
                spans.push(Span { start, end });
                start = next;
                word_start = next;
                cursor = next;
                continue;
            }
        }
        cursor += c.len_utf8();
    }
    let tail_end = body.trim_end().len();
    if start < tail_end {
        spans.push(Span {
            start,
            end: tail_end,
        });
    }
    Ok(spans
        .into_iter()
        .enumerate()
        .map(|(index, span)| Sentence {
            index,
            doc_index: doc.doc_index,
            text: body[span.start..span.end].to_string(),
            span,
        })
        .collect())
}

/// Segment every document, numbering sentences globally in document order.
pub fn segment_docs(docs: &[ContextDoc]) -> Result<Vec<Sentence>> {
    if docs.is_empty() {
        return Err(Error::EmptyContext);
    }
    let mut all = Vec::new();
    for doc in docs {
        let offset = all.len();
        all.extend(segment(doc)?.into_iter().map(|mut s| {
            s.index += offset;
            s
        }));
    }
    Ok(all)
}

/// All sentences except the one at position `i`. The input is left untouched.
pub fn ablate(sentences: &[Sentence], i: usize) -> Result<Vec<Sentence>> {
    if i >= sentences.len() {
        return Err(Error::BadIndex {
            index: i,
            len: sentences.len(),
        });
    }
    Ok(sentences
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, s)| s.clone())
        .collect())
}

/// The body of `doc` restricted to `kept` sentences. Original whitespace is
/// kept between sentences that were adjacent; a removal site collapses to one
/// space, or to nothing at either end of the body.
fn doc_content(doc: &ContextDoc, kept: &[&Sentence]) -> Result<String> {
    let body = doc.body.as_str();
    let mut out = String::with_capacity(body.len());
    let mut prev_end: Option<usize> = None;
    for s in kept {
        let Span { start, end } = s.span;
        if end > body.len() || start > end || body.get(start..end) != Some(s.text.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "sentence {} does not match document {}",
                s.index, doc.doc_index
            )));
        }
        let gap_from = prev_end.unwrap_or(0);
        if start < gap_from {
            return Err(Error::InvalidArgument(
                "kept sentences must be ordered and non-overlapping".into(),
            ));
        }
        let gap = &body[gap_from..start];
        let removed = !gap.trim().is_empty();
        match (prev_end, removed) {
            (_, false) => out.push_str(gap),
            (Some(_), true) => out.push(' '),
            (None, true) => {}
        }
        out.push_str(&s.text);
        prev_end = Some(end);
    }
    if let Some(end) = prev_end {
        let tail = &body[end..];
        if tail.trim().is_empty() {
            out.push_str(tail);
        }
    }
    Ok(out)
}

/// Render the prompt for the kept sentences of `docs`.
pub fn render_prompt(
    docs: &[ContextDoc],
    sentences_kept: &[Sentence],
    query: &str,
    template_id: TemplateId,
) -> Result<Prompt> {
    let expected = TemplateId::for_doc_count(docs.len());
    if docs.is_empty() || template_id != expected {
        return Err(Error::TemplateMismatch {
            template: template_id.as_str(),
            docs: docs.len(),
        });
    }
    if query.trim().is_empty() {
        return Err(Error::QueryCollision);
    }
    let mut contents = Vec::with_capacity(docs.len());
    for doc in docs {
        let kept: Vec<&Sentence> = sentences_kept
            .iter()
            .filter(|s| s.doc_index == doc.doc_index)
            .collect();
        contents.push(doc_content(doc, &kept)?);
    }
    let rendered = match template_id {
        TemplateId::SingleContext => format!("Context: {}\n\nQuery: {}", contents[0], query),
        TemplateId::MultiDoc => {
            let blocks: Vec<String> = docs
                .iter()
                .zip(&contents)
                .map(|(doc, content)| {
                    format!(
                        "Title: {}\nContent: {}",
                        doc.title.as_deref().unwrap_or(""),
                        content
                    )
                })
                .collect();
            format!("{}\n\nQuery: {}", blocks.join("\n"), query)
        }
    };
    if rendered.matches(query).count() != 1 {
        return Err(Error::QueryCollision);
    }
    Ok(Prompt {
        rendered,
        template_id,
        query: query.to_string(),
    })
}

/// A sample's documents with their global segmentation, ready for ablation.
#[derive(Debug, Clone)]
pub struct SegmentedContext {
    pub docs: Vec<ContextDoc>,
    pub sentences: Vec<Sentence>,
}

impl SegmentedContext {
    pub fn new(docs: Vec<ContextDoc>) -> Result<Self> {
        let sentences = segment_docs(&docs)?;
        Ok(Self { docs, sentences })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn template(&self) -> TemplateId {
        TemplateId::for_doc_count(self.docs.len())
    }

    pub fn render_full(&self, query: &str) -> Result<Prompt> {
        render_prompt(&self.docs, &self.sentences, query, self.template())
    }

    /// Prompt with sentence `i` removed.
    pub fn render_without(&self, query: &str, i: usize) -> Result<Prompt> {
        let kept = ablate(&self.sentences, i)?;
        render_prompt(&self.docs, &kept, query, self.template())
    }

    /// Prompt keeping only the sentences whose mask bit is set.
    pub fn render_masked(&self, query: &str, keep: &[bool]) -> Result<Prompt> {
        if keep.len() != self.sentences.len() {
            return Err(Error::LengthMismatch {
                left: keep.len(),
                right: self.sentences.len(),
            });
        }
        let kept: Vec<Sentence> = self
            .sentences
            .iter()
            .zip(keep)
            .filter(|(_, k)| **k)
            .map(|(s, _)| s.clone())
            .collect();
        render_prompt(&self.docs, &kept, query, self.template())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MOSQUITO: &str = "Mosquitoes are members of a family of nematocerid flies: the Culicidae (from the Latin culex meaning \"gnat\"). The word \"mosquito\" (formed by mosca and diminutive -ito)[2] is Spanish for \"little fly\". [3] Mosquitoes have a slender segmented body, a pair of wings, three pairs of long hair-like legs, feathery antennae, and elongated mouthparts.";

    fn texts(body: &str) -> Vec<String> {
        segment(&ContextDoc::untitled(body))
            .unwrap()
            .into_iter()
            .map(|s| s.text)
            .collect()
    }

    #[test]
    fn two_plain_sentences() {
        assert_eq!(texts("A b. C d."), vec!["A b.", "C d."]);
    }

    #[test]
    fn abbreviation_is_not_a_boundary() {
        assert_eq!(texts("Dr. Smith ran. He won."), vec!["Dr. Smith ran.", "He won."]);
        assert_eq!(
            texts("Troops of the U.S. Army left. They went home."),
            vec!["Troops of the U.S. Army left.", "They went home."]
        );
        assert_eq!(texts("Fruit, e.g. Apples. Fine."), vec!["Fruit, e.g. Apples.", "Fine."]);
        assert_eq!(texts("By J. K. Rowling. Yes."), vec!["By J. K. Rowling.", "Yes."]);
    }

    #[test]
    fn lowercase_continuation_is_not_a_boundary() {
        assert_eq!(texts("It cost 3.5 dollars. ok then."), vec!["It cost 3.5 dollars. ok then."]);
    }

    #[test]
    fn question_exclamation_and_quotes() {
        assert_eq!(
            texts("Why? \"Because!\" She said so! 42 is it"),
            vec!["Why?", "\"Because!\"", "She said so!", "42 is it"]
        );
    }

    #[test]
    fn mosquito_paragraph_keeps_wings_sentence_whole() {
        let got = texts(MOSQUITO);
        assert_eq!(got.len(), 3);
        assert!(got.contains(&"Mosquitoes have a slender segmented body, a pair of wings, three pairs of long hair-like legs, feathery antennae, and elongated mouthparts.".to_string()));
        assert!(got[1].ends_with("\"little fly\". [3]"));
    }

    #[test]
    fn empty_body_is_rejected() {
        assert!(matches!(
            segment(&ContextDoc::untitled(" \n\t ")),
            Err(Error::EmptyContext)
        ));
    }

    #[test]
    fn global_indices_span_documents() {
        let docs = vec![
            ContextDoc::new(0, Some("A".into()), "One. Two."),
            ContextDoc::new(1, Some("B".into()), "Three."),
        ];
        let s = segment_docs(&docs).unwrap();
        assert_eq!(s.iter().map(|s| s.index).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(s[2].doc_index, 1);
    }

    #[test]
    fn ablate_examples() {
        let s = segment(&ContextDoc::untitled("A a. B b. C c.")).unwrap();
        let out = ablate(&s, 1).unwrap();
        assert_eq!(out.iter().map(|s| s.index).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(s.len(), 3);
        let one = &s[..1];
        assert!(ablate(one, 0).unwrap().is_empty());
        assert!(matches!(ablate(&s, 3), Err(Error::BadIndex { index: 3, len: 3 })));
    }

    #[test]
    fn ablated_render_drops_sentence_and_collapses_space() {
        let doc = ContextDoc::untitled("A a.  B b.\n C c.");
        let s = segment(&doc).unwrap();
        let kept = ablate(&s, 1).unwrap();
        let p = render_prompt(std::slice::from_ref(&doc), &kept, "Q?", TemplateId::SingleContext).unwrap();
        assert_eq!(p.rendered, "Context: A a. C c.\n\nQuery: Q?");
        assert!(!p.rendered.contains(&s[1].text));
        let first = ablate(&s, 0).unwrap();
        let p = render_prompt(&[doc], &first, "Q?", TemplateId::SingleContext).unwrap();
        assert_eq!(p.rendered, "Context: B b.\n C c.\n\nQuery: Q?");
    }

    #[test]
    fn single_context_layout() {
        let doc = ContextDoc::untitled("Some text here.");
        let s = segment(&doc).unwrap();
        let p = render_prompt(&[doc], &s, "Q?", TemplateId::SingleContext).unwrap();
        assert_eq!(p.rendered, "Context: Some text here.\n\nQuery: Q?");
    }

    #[test]
    fn multi_doc_layout() {
        let docs = vec![
            ContextDoc::new(0, Some("Albertsons".into()), "It is a grocer. It is big."),
            ContextDoc::new(1, Some("Tom Thumb".into()), "A store."),
        ];
        let ctx = SegmentedContext::new(docs).unwrap();
        let p = ctx.render_full("Where?").unwrap();
        assert_eq!(
            p.rendered,
            "Title: Albertsons\nContent: It is a grocer. It is big.\nTitle: Tom Thumb\nContent: A store.\n\nQuery: Where?"
        );
        let p = ctx.render_without("Where?", 2).unwrap();
        assert!(p.rendered.ends_with("Title: Tom Thumb\nContent: \n\nQuery: Where?"));
    }

    #[test]
    fn template_mismatch_and_query_collision() {
        let doc = ContextDoc::untitled("Where is it? Here.");
        let s = segment(&doc).unwrap();
        assert!(matches!(
            render_prompt(std::slice::from_ref(&doc), &s, "Q", TemplateId::MultiDoc),
            Err(Error::TemplateMismatch { .. })
        ));
        assert!(matches!(
            render_prompt(std::slice::from_ref(&doc), &s, "Where is it?", TemplateId::SingleContext),
            Err(Error::QueryCollision)
        ));
        assert!(matches!(
            render_prompt(&[doc], &s, "  ", TemplateId::SingleContext),
            Err(Error::QueryCollision)
        ));
    }

    fn sentence_strategy() -> impl Strategy<Value = String> {
        (
            prop::sample::select(vec!["The", "A", "Dr.", "It", "3", "\"Yes", "U.S.", "Mosquitoes"]),
            prop::collection::vec(
                prop::sample::select(vec![
                    "cat", "ran", "e.g.", "3.5", "Dr.", "(big)", "x", "Z.", "wings", "etc.", "--",
                ]),
                0..6,
            ),
            prop::sample::select(vec![".", "!", "?", ".\"", ". [4]", "...", ""]),
        )
            .prop_map(|(head, words, end)| {
                let mut s = head.to_string();
                for w in words {
                    s.push(' ');
                    s.push_str(w);
                }
                s.push_str(end);
                s
            })
    }

    fn body_strategy() -> impl Strategy<Value = String> {
        prop::collection::vec(
            (sentence_strategy(), prop::sample::select(vec![" ", "  ", "\n", " \n\t"])),
            1..8,
        )
        .prop_map(|parts| {
            let mut body = String::from(" ");
            for (s, ws) in parts {
                body.push_str(&s);
                body.push_str(ws);
            }
            body
        })
    }

    proptest! {
        #[test]
        fn spans_cover_all_visible_text(body in body_strategy()) {
            let doc = ContextDoc::untitled(body.clone());
            let sents = segment(&doc).unwrap();
            let mut covered = vec![false; body.len()];
            let mut prev_end = 0;
            for s in &sents {
                prop_assert!(s.span.start >= prev_end);
                prop_assert_eq!(&body[s.span.start..s.span.end], s.text.as_str());
                prop_assert!(body[prev_end..s.span.start].trim().is_empty());
                for c in covered.iter_mut().take(s.span.end).skip(s.span.start) {
                    *c = true;
                }
                prev_end = s.span.end;
            }
            prop_assert!(body[prev_end..].trim().is_empty());
            for (i, c) in body.char_indices() {
                if !c.is_whitespace() {
                    prop_assert!(covered[i]);
                }
            }
            prop_assert_eq!(segment(&doc).unwrap(), sents);
        }

        #[test]
        fn segmentation_is_idempotent(body in body_strategy()) {
            let first = segment(&ContextDoc::untitled(body)).unwrap();
            let joined = first.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" ");
            let second = segment(&ContextDoc::untitled(joined.clone())).unwrap();
            let again = segment(&ContextDoc::untitled(
                second.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" "),
            )).unwrap();
            let t1: Vec<_> = first.iter().map(|s| &s.text).collect();
            let t2: Vec<_> = second.iter().map(|s| &s.text).collect();
            prop_assert_eq!(t1, t2);
            prop_assert_eq!(second, again);
        }

        #[test]
        fn ablate_and_render_properties(body in body_strategy(), pick in 0usize..16) {
            let doc = ContextDoc::untitled(body.clone());
            let sents = segment(&doc).unwrap();
            let i = pick % sents.len();
            let before = sents.clone();
            let out = ablate(&sents, i).unwrap();
            prop_assert_eq!(out.len(), sents.len() - 1);
            prop_assert_eq!(&before, &sents);
            let query = "QUERY-TOKEN?";
            let full = render_prompt(std::slice::from_ref(&doc), &sents, query, TemplateId::SingleContext).unwrap();
            prop_assert_eq!(&full.rendered, &format!("Context: {}\n\nQuery: {}", body, query));
            for s in &sents {
                prop_assert!(full.rendered.contains(&s.text));
            }
            let ablated = render_prompt(&[doc], &out, query, TemplateId::SingleContext).unwrap();
            prop_assert!(!ablated.rendered.contains("  ") || full.rendered.contains("  "));
            prop_assert_eq!(ablated.rendered.matches(query).count(), 1);
        }
    }
}
