// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded synthetic QA samples with a known supporting sentence.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{GoldRef, QaSample};
use crate::segmenter::ContextDoc;

const SUBJECTS: &[&str] = &[
    "The harbor", "A lighthouse", "The old mill", "The library", "A glacier", "The market", "The observatory",
    "A canal", "The orchard", "The bridge", "A quarry", "The monastery",
];
const VERBS: &[&str] = &[
    "stands near", "was built beside", "overlooks", "lies north of", "faces", "was moved to", "borders",
    "was painted in",
];
const OBJECTS: &[&str] = &[
    "the river", "a quiet village", "the eastern hills", "the coast", "an iron gate", "the town square",
    "a pine forest", "the railway",
];
const ANSWERS: &[&str] = &["Aldermoor", "Brightwater", "Cindervale", "Dunmarsh", "Elmstead", "Foxhollow"];

/// `n` samples of `sentences` sentences each. Each sample's gold sentence
/// names the answer and, when `marker` is given, also contains it.
pub fn synthetic_suite(n: usize, sentences: usize, marker: Option<&str>, seed: u64) -> Vec<QaSample> {
    let sentences = sentences.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let gold = rng.gen_range(0..sentences);
            let answer = *ANSWERS.choose(&mut rng).expect("non-empty");
            let parts: Vec<String> = (0..sentences)
                .map(|i| {
                    if i == gold {
                        match marker {
                            Some(m) => format!("The founder of {m} was {answer}."),
                            None => format!("The founder was {answer}."),
                        }
                    } else {
                        format!(
                            "{} {} {}.",
                            SUBJECTS.choose(&mut rng).expect("non-empty"),
                            VERBS.choose(&mut rng).expect("non-empty"),
                            OBJECTS.choose(&mut rng).expect("non-empty")
                        )
                    }
                })
                .collect();
            QaSample {
                id: format!("syn-{k:04}"),
                docs: vec![ContextDoc::untitled(parts.join(" "))],
                query: "Who was the founder?".into(),
                gold_answer: answer.into(),
                gold_support: vec![GoldRef::SentenceIndex { index: gold }],
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_is_seeded_and_segments_cleanly() {
        let a = synthetic_suite(5, 10, Some("KEY"), 3);
        assert_eq!(a, synthetic_suite(5, 10, Some("KEY"), 3));
        for s in &a {
            let ctx = s.context().unwrap();
            assert_eq!(ctx.len(), 10);
            let gold = s.gold_sentences(&ctx.sentences);
            assert_eq!(gold.len(), 1);
            assert!(ctx.sentences[gold[0]].text.contains("KEY"));
        }
    }
}
