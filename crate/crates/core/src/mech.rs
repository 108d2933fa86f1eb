// SPDX-License-Identifier: MIT OR Apache-2.0

//! Component-level JSD: which attention heads and MLPs react when the top
//! attributed sentence is removed, plus the head-masking ablation study.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attribution::{response_jsd, run_indexed, AttributionResult};
use crate::backend::{Backend, ComponentSelector, HeadId, ScoreRequest};
use crate::error::{Error, Result};
use crate::segmenter::SegmentedContext;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentScore {
    pub selector: ComponentSelector,
    pub score: f64,
}

impl ComponentScore {
    /// Tie-break order: lower layer, attention before MLP, lower head.
    fn order_key(&self) -> (usize, u8, usize) {
        match self.selector {
            ComponentSelector::AttnHead { layer, head } => (layer, 0, head),
            ComponentSelector::Mlp { layer } => (layer, 1, 0),
            ComponentSelector::Residual { layer, .. } => (layer, 2, 0),
            ComponentSelector::Final => (usize::MAX, 3, 0),
        }
    }
}

/// Per-selector response JSD between the full and ablated prompts, for the
/// given selectors. Issues exactly two scoring calls.
pub fn component_jsd_for<B: Backend + ?Sized>(
    backend: &B,
    full_prompt: &[u32],
    ablated_prompt: &[u32],
    response: &[u32],
    selectors: &[ComponentSelector],
) -> Result<Vec<ComponentScore>> {
    backend.info().check_selectors(selectors)?;
    let prompts = [full_prompt, ablated_prompt];
    let workers = backend.info().max_parallelism.min(2);
    let mut runs = run_indexed(2, workers, |i| {
        let req = ScoreRequest::new(prompts[i].to_vec(), response.to_vec(), selectors.to_vec());
        Ok(backend.score(&req)?)
    })?;
    let ablated = runs.pop().expect("two runs");
    let full = runs.pop().expect("two runs");
    full.check_shape()?;
    ablated.check_shape()?;
    selectors
        .iter()
        .enumerate()
        .map(|(k, &selector)| {
            Ok(ComponentScore {
                selector,
                score: response_jsd(full.stream(k), ablated.stream(k))?.value,
            })
        })
        .collect()
}

/// Scores for every attention head and MLP of the backend.
pub fn component_jsd<B: Backend + ?Sized>(
    backend: &B,
    full_prompt: &[u32],
    ablated_prompt: &[u32],
    response: &[u32],
) -> Result<Vec<ComponentScore>> {
    let info = backend.info();
    let selectors = ComponentSelector::all_components(info.layers, info.heads);
    component_jsd_for(backend, full_prompt, ablated_prompt, response, &selectors)
}

/// Component scores for an attribution: the full prompt against the prompt
/// without the top-1 sentence, on the attributed response.
pub fn analyze_components<B: Backend + ?Sized>(
    backend: &B,
    ctx: &SegmentedContext,
    attribution: &AttributionResult,
) -> Result<Vec<ComponentScore>> {
    let full = backend.tokenize(&ctx.render_full(&attribution.query)?.rendered)?;
    let ablated = backend.tokenize(&ctx.render_without(&attribution.query, attribution.top)?.rendered)?;
    component_jsd(backend, &full, &ablated, &attribution.response_tokens)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRanking {
    pub ordered: Vec<ComponentScore>,
    pub top_n: usize,
}

impl ComponentRanking {
    pub fn top(&self) -> &[ComponentScore] {
        &self.ordered[..self.top_n]
    }

    /// Heads among the top `n`, in rank order.
    pub fn top_heads(&self) -> Vec<HeadId> {
        self.top()
            .iter()
            .filter_map(|c| match c.selector {
                ComponentSelector::AttnHead { layer, head } => Some(HeadId::new(layer, head)),
                _ => None,
            })
            .collect()
    }
}

/// Sort descending by score with a deterministic tie-break.
pub fn rank_components(scores: &[ComponentScore], n: usize) -> Result<ComponentRanking> {
    if n > scores.len() {
        return Err(Error::InvalidArgument(format!(
            "top {n} requested from {} components",
            scores.len()
        )));
    }
    let mut ordered = scores.to_vec();
    ordered.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.order_key().cmp(&b.order_key())));
    Ok(ComponentRanking { ordered, top_n: n })
}

/// Heads only, ranked.
pub fn rank_heads(scores: &[ComponentScore]) -> Vec<HeadId> {
    let heads: Vec<ComponentScore> = scores
        .iter()
        .filter(|c| matches!(c.selector, ComponentSelector::AttnHead { .. }))
        .copied()
        .collect();
    let n = heads.len();
    rank_components(&heads, n).expect("n is the length").top_heads()
}

/// Layers x heads matrix of head scores plus one MLP column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub layers: usize,
    pub heads: usize,
    /// `[layer][head]`
    pub attn: Vec<f64>,
    pub mlp: Vec<f64>,
}

impl Heatmap {
    pub fn from_scores(layers: usize, heads: usize, scores: &[ComponentScore]) -> Result<Self> {
        let mut map = Heatmap {
            layers,
            heads,
            attn: vec![0.0; layers * heads],
            mlp: vec![0.0; layers],
        };
        let mut seen = vec![false; layers * (heads + 1)];
        for c in scores {
            let slot = match c.selector {
                ComponentSelector::AttnHead { layer, head } if layer < layers && head < heads => {
                    map.attn[layer * heads + head] = c.score;
                    layer * heads + head
                }
                ComponentSelector::Mlp { layer } if layer < layers => {
                    map.mlp[layer] = c.score;
                    layers * heads + layer
                }
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "selector {other} does not fit a {layers}x{heads} heatmap"
                    )))
                }
            };
            seen[slot] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidArgument(format!("heatmap cell {missing} has no score")));
        }
        Ok(map)
    }

    /// Cell-wise mean over several samples.
    pub fn mean(maps: &[Heatmap]) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::InvalidArgument("no heatmaps to average".into()))?;
        if maps.iter().any(|m| m.layers != first.layers || m.heads != first.heads) {
            return Err(Error::InvalidArgument("heatmap shapes differ".into()));
        }
        let n = maps.len() as f64;
        let avg = |get: &dyn Fn(&Heatmap) -> &Vec<f64>| -> Vec<f64> {
            (0..get(first).len())
                .map(|i| maps.iter().map(|m| get(m)[i]).sum::<f64>() / n)
                .collect()
        };
        Ok(Heatmap {
            layers: first.layers,
            heads: first.heads,
            attn: avg(&|m| &m.attn),
            mlp: avg(&|m| &m.mlp),
        })
    }

    pub fn head(&self, layer: usize, head: usize) -> f64 {
        self.attn[layer * self.heads + head]
    }

    /// Tab-separated matrix: one row per layer, one column per head, then MLP.
    pub fn to_text(&self) -> String {
        let mut out = String::from("layer");
        for h in 0..self.heads {
            let _ = write!(out, "\tH{h}");
        }
        out.push_str("\tMLP\n");
        for l in 0..self.layers {
            let _ = write!(out, "L{l}");
            for h in 0..self.heads {
                let _ = write!(out, "\t{:.6}", self.head(l, h));
            }
            let _ = writeln!(out, "\t{:.6}", self.mlp[l]);
        }
        out
    }
}

/// One prompt/response pair and the heads ranked most relevant for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskingCase {
    pub prompt: Vec<u32>,
    pub response: Vec<u32>,
    pub top_heads: Vec<HeadId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return MeanStd { mean: 0.0, std: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskingStudy {
    pub top: MeanStd,
    pub random: MeanStd,
    /// One value per case.
    pub top_values: Vec<f64>,
    /// `trials` values per case, case-major.
    pub random_values: Vec<f64>,
}

/// Response JSD between unmasked and masked runs, for each case's top heads
/// and for `trials` equally sized random head sets drawn outside the top set.
pub fn head_masking_study<B: Backend + ?Sized>(
    backend: &B,
    cases: &[MaskingCase],
    trials: usize,
    seed: u64,
) -> Result<MaskingStudy> {
    let info = backend.info();
    let all: Vec<HeadId> = (0..info.layers)
        .flat_map(|l| (0..info.heads).map(move |h| HeadId::new(l, h)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut top_values = Vec::with_capacity(cases.len());
    let mut random_values = Vec::with_capacity(cases.len() * trials);
    for case in cases {
        let score = |masked: &[HeadId]| {
            let req = ScoreRequest::final_only(case.prompt.clone(), case.response.clone())
                .with_masked_heads(masked.to_vec());
            backend.score(&req)
        };
        let baseline = score(&[])?;
        top_values.push(response_jsd(&baseline.distributions, &score(&case.top_heads)?.distributions)?.value);
        let pool: Vec<HeadId> = all.iter().filter(|h| !case.top_heads.contains(h)).copied().collect();
        let k = case.top_heads.len();
        if pool.len() < k {
            return Err(Error::InvalidArgument(format!(
                "{} heads outside the top set, need {k}",
                pool.len()
            )));
        }
        for _ in 0..trials {
            let pick: Vec<HeadId> = pool.choose_multiple(&mut rng, k).copied().collect();
            random_values.push(response_jsd(&baseline.distributions, &score(&pick)?.distributions)?.value);
        }
    }
    Ok(MaskingStudy {
        top: MeanStd::of(&top_values),
        random: MeanStd::of(&random_values),
        top_values,
        random_values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn head(layer: usize, head: usize, score: f64) -> ComponentScore {
        ComponentScore {
            selector: ComponentSelector::AttnHead { layer, head },
            score,
        }
    }

    #[test]
    fn ranking_is_descending_with_layer_tie_break() {
        let scores = vec![head(5, 0, 0.4), head(2, 1, 0.4), head(0, 0, 0.9)];
        let r = rank_components(&scores, 2).unwrap();
        assert_eq!(r.top_heads(), vec![HeadId::new(0, 0), HeadId::new(2, 1)]);
        assert!(rank_components(&scores, 4).is_err());
    }

    #[test]
    fn strictly_decreasing_keeps_order() {
        let scores = vec![head(0, 0, 3.0), head(0, 1, 2.0), head(1, 0, 1.0)];
        assert_eq!(rank_components(&scores, 3).unwrap().ordered, scores);
    }

    #[test]
    fn heatmap_text_layout() {
        let scores = vec![
            head(0, 0, 0.5),
            head(0, 1, 0.25),
            ComponentScore {
                selector: ComponentSelector::Mlp { layer: 0 },
                score: 1.0,
            },
        ];
        let map = Heatmap::from_scores(1, 2, &scores).unwrap();
        assert_eq!(map.to_text(), "layer\tH0\tH1\tMLP\nL0\t0.500000\t0.250000\t1.000000\n");
        assert!(Heatmap::from_scores(1, 2, &scores[..2]).is_err());
        let avg = Heatmap::mean(&[map.clone(), map.clone()]).unwrap();
        assert_eq!(avg, map);
    }

    #[test]
    fn mean_std_uses_sample_denominator() {
        let m = MeanStd::of(&[1.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert!((m.std - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(MeanStd::of(&[4.0]).std, 0.0);
    }
}
