// SPDX-License-Identifier: MIT OR Apache-2.0

//! Component-level scores and semantic gains on the mini model, checked
//! against slower one-thing-at-a-time routes.

use arcjsd::attribution::{attribute, AttributionConfig};
use arcjsd::backend::{byte_tokenize, Backend, ComponentSelector, CountingBackend, Distribution, HeadId, ScoreRequest};
use arcjsd::consensus::{attn_layer_scores, consensus_fusion, mlp_layer_scores, topn_overlap_rho};
use arcjsd::mech::{analyze_components, component_jsd, component_jsd_for, head_masking_study, MaskingCase};
use arcjsd::mini_lm::{MiniBackend, MiniLm, ModelConfig, Params};
use arcjsd::semantic_gain::{gains, mini_gains, rank_gains};
use arcjsd::segmenter::{ContextDoc, SegmentedContext};

fn model() -> MiniLm {
    MiniLm::from_config(ModelConfig {
        layers: 3,
        heads: 2,
        d_model: 16,
        d_mlp: 32,
        ..ModelConfig::default()
    })
    .unwrap()
}

fn dense(d: &Distribution) -> Vec<f64> {
    match d.to_dense().distribution {
        Distribution::Dense { probs } => {
            let s: f64 = probs.iter().map(|&p| p as f64).sum();
            probs.iter().map(|&p| p as f64 / s).collect()
        }
        Distribution::Sparse { .. } => unreachable!(),
    }
}

fn kl_half(p: &[f64], m: &[f64]) -> f64 {
    p.iter().zip(m).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / b).ln()).sum::<f64>() / 2.0
}

fn jsd_oracle(p: &Distribution, q: &Distribution) -> f64 {
    let (p, q) = (dense(p), dense(q));
    let m: Vec<f64> = p.iter().zip(&q).map(|(a, b)| (a + b) / 2.0).collect();
    kl_half(&p, &m) + kl_half(&q, &m)
}

fn prompts() -> (Vec<u32>, Vec<u32>, Vec<u32>) {
    let full = byte_tokenize("Context: Ann reads. Bo sings. Cy runs.\n\nQuery: Who sings?");
    let ablated = byte_tokenize("Context: Ann reads. Cy runs.\n\nQuery: Who sings?");
    (full, ablated, byte_tokenize(" Bo."))
}

#[test]
fn batched_scores_match_one_selector_per_call() {
    let backend = MiniBackend::new(model());
    let (full, ablated, response) = prompts();
    let counting = CountingBackend::new(&backend);
    let batched = component_jsd(&counting, &full, &ablated, &response).unwrap();
    assert_eq!(counting.calls(), 2);
    assert_eq!(batched.len(), 3 * 2 + 3);
    for c in &batched {
        let one = |prompt: &[u32]| {
            backend
                .score(&ScoreRequest::new(prompt.to_vec(), response.clone(), vec![c.selector]))
                .unwrap()
                .distributions
        };
        let (a, b) = (one(&full), one(&ablated));
        let oracle: f64 = a.iter().zip(&b).map(|(p, q)| jsd_oracle(p, q)).sum();
        assert!((c.score - oracle).abs() <= 1e-9, "{}: {} vs {oracle}", c.selector, c.score);
        assert!(c.score >= 0.0 && c.score <= response.len() as f64 * std::f64::consts::LN_2);
    }
}

#[test]
fn selector_order_does_not_change_scores() {
    let backend = MiniBackend::new(model());
    let (full, ablated, response) = prompts();
    let forward = ComponentSelector::all_components(3, 2);
    let mut reversed = forward.clone();
    reversed.reverse();
    let a = component_jsd_for(&backend, &full, &ablated, &response, &forward).unwrap();
    let mut b = component_jsd_for(&backend, &full, &ablated, &response, &reversed).unwrap();
    b.reverse();
    assert_eq!(a, b);
}

#[test]
fn identical_prompts_score_zero() {
    let backend = MiniBackend::new(model());
    let (full, _, response) = prompts();
    for c in component_jsd(&backend, &full, &full, &response).unwrap() {
        assert_eq!(c.score, 0.0, "{}", c.selector);
    }
}

#[test]
fn analysis_pipeline_from_attribution_to_overlap() {
    let backend = MiniBackend::new(model());
    let ctx = SegmentedContext::new(vec![ContextDoc::untitled("Ann reads. Bo sings. Cy runs.")]).unwrap();
    let res = attribute(&backend, &ctx, "Who sings?", Some(" Bo."), &AttributionConfig::default()).unwrap();
    let scores = analyze_components(&backend, &ctx, &res).unwrap();
    let attn = attn_layer_scores(3, 2, &scores).unwrap();
    let mlp = mlp_layer_scores(3, &scores).unwrap();
    let prompt = byte_tokenize(&ctx.render_full("Who sings?").unwrap().rendered);
    let profile = gains(&backend, &prompt, &res.response_tokens).unwrap();
    let fused = consensus_fusion(&attn, &profile.attn_gain).unwrap();
    assert_eq!(fused.len(), 3);
    assert!(fused.iter().all(|&v| v > 0.0 && v <= 1.0));
    // all three layers overlap when N equals the layer count
    let rho = topn_overlap_rho(&mlp, &consensus_fusion(&mlp, &profile.mlp_gain).unwrap(), 3).unwrap();
    assert_eq!(rho.layers, vec![0, 1, 2]);
    assert!(rho.spearman.rho.abs() <= 1.0);
}

#[test]
fn backend_route_gains_match_trace_route() {
    let m = model();
    let backend = MiniBackend::new(m.clone());
    let (full, _, response) = prompts();
    let counting = CountingBackend::new(&backend);
    let via_backend = gains(&counting, &full, &response).unwrap();
    assert_eq!(counting.calls(), 1, "one scoring call; unembedding is not a forward pass");
    let via_trace = mini_gains(&m, &full, &response).unwrap();
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-6);
    assert!(close(&via_backend.attn_gain, &via_trace.attn_gain));
    assert!(close(&via_backend.mlp_gain, &via_trace.mlp_gain));
    assert_eq!(
        via_backend.decoded.iter().map(|c| c.token).collect::<Vec<_>>(),
        via_trace.decoded.iter().map(|c| c.token).collect::<Vec<_>>()
    );
    let (attn_top, mlp_top) = rank_gains(&via_trace, 2);
    assert_eq!(attn_top.len(), 2);
    assert_eq!(mlp_top.len(), 2);
}

#[test]
fn masking_a_silent_head_changes_nothing() {
    let mut params = Params::init(model().config().with_seed(0)).unwrap();
    params.scale_head_output(1, 1, 0.0);
    let backend = MiniBackend::new(MiniLm::new(params));
    let (full, _, response) = prompts();
    let plain = backend.score(&ScoreRequest::final_only(full.clone(), response.clone())).unwrap();
    let masked = backend
        .score(&ScoreRequest::final_only(full.clone(), response.clone()).with_masked_heads(vec![HeadId::new(1, 1)]))
        .unwrap();
    assert_eq!(plain, masked);

    let case = MaskingCase {
        prompt: full,
        response,
        top_heads: vec![],
    };
    let study = head_masking_study(&backend, &[case], 3, 0).unwrap();
    assert_eq!(study.top.mean, 0.0);
    assert_eq!(study.random.mean, 0.0);
}

#[test]
fn masking_study_rejects_oversized_top_sets() {
    let backend = MiniBackend::new(model());
    let (full, _, response) = prompts();
    let all: Vec<HeadId> = (0..3).flat_map(|l| (0..2).map(move |h| HeadId::new(l, h))).collect();
    let case = MaskingCase {
        prompt: full,
        response,
        top_heads: all[..4].to_vec(),
    };
    assert!(head_masking_study(&backend, &[case], 1, 0).is_err());
}
