// SPDX-License-Identifier: MIT OR Apache-2.0

//! Out-of-process backends: a served mini model must answer exactly like the
//! in-process one, and errors must cross the wire intact.

use std::net::TcpListener;
use std::sync::Arc;

use arcjsd::attribution::{attribute, AttributionConfig};
use arcjsd::backend::planted::PlantedBackend;
use arcjsd::backend::remote::{serve_tcp, RemoteBackend};
use arcjsd::backend::{Backend, BackendError, ComponentSelector, HeadId, ScoreRequest};
use arcjsd::harness::{evaluate, synthetic_suite, EvalOptions, Method};
use arcjsd::mini_lm::{MiniBackend, MiniLm, ModelConfig};
use arcjsd::segmenter::{ContextDoc, SegmentedContext};

fn small_model() -> MiniLm {
    MiniLm::from_config(ModelConfig {
        layers: 2,
        heads: 2,
        d_model: 16,
        d_mlp: 32,
        ..ModelConfig::default()
    })
    .unwrap()
}

fn spawn_server<B: Backend + 'static>(backend: B) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let backend = Arc::new(backend);
    std::thread::spawn(move || serve_tcp(backend, listener));
    addr
}

#[test]
fn handshake_reports_the_served_model() {
    let local = MiniBackend::new(small_model());
    let addr = spawn_server(MiniBackend::new(small_model()));
    let remote = RemoteBackend::connect_tcp(&addr).unwrap();
    assert_eq!(remote.info(), local.info());
    assert_eq!(remote.info().layers, 2);
    assert_eq!(remote.info().d_model, 16);
}

#[test]
fn remote_scores_match_in_process_bitwise() {
    let local = MiniBackend::new(small_model());
    let remote = RemoteBackend::connect_tcp(spawn_server(MiniBackend::new(small_model()))).unwrap();
    let prompt = remote.tokenize("Context: a b c\n\nQuery: q").unwrap();
    assert_eq!(prompt, local.tokenize("Context: a b c\n\nQuery: q").unwrap());
    let gen_local = local.generate(&prompt, 5).unwrap();
    let gen_remote = remote.generate(&prompt, 5).unwrap();
    assert_eq!(gen_local, gen_remote);

    let mut selectors = ComponentSelector::all_components(2, 2);
    selectors.extend(ComponentSelector::all_residuals(2));
    selectors.push(ComponentSelector::Final);
    let req = ScoreRequest::new(prompt.clone(), vec![65, 66, 67], selectors).with_masked_heads(vec![HeadId::new(1, 0)]);
    assert_eq!(local.score(&req).unwrap(), remote.score(&req).unwrap());
    assert_eq!(local.unembed(&[1, 7]).unwrap(), remote.unembed(&[1, 7]).unwrap());
    assert_eq!(remote.detokenize(&[72, 105]).unwrap(), "Hi");
}

#[test]
fn remote_attribution_matches_in_process() {
    let local = MiniBackend::new(small_model());
    let remote = RemoteBackend::connect_tcp(spawn_server(MiniBackend::new(small_model()))).unwrap();
    let ctx = SegmentedContext::new(vec![ContextDoc::untitled("Ann reads. Bo sings. Cy runs.")]).unwrap();
    let cfg = AttributionConfig {
        max_new_tokens: 4,
        parallelism: Some(1),
    };
    let a = attribute(&local, &ctx, "Who sings?", None, &cfg).unwrap();
    let b = attribute(&remote, &ctx, "Who sings?", None, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn unsupported_selector_crosses_the_wire() {
    let remote = RemoteBackend::connect_tcp(spawn_server(PlantedBackend::new("x", 0))).unwrap();
    let req = ScoreRequest::new(vec![1, 2], vec![3], vec![ComponentSelector::Mlp { layer: 0 }]);
    match remote.score(&req) {
        Err(BackendError::Unsupported(_)) => {}
        other => panic!("expected a rejection, got {other:?}"),
    }
    // the connection stays usable after an error frame
    assert!(remote.score(&ScoreRequest::final_only(vec![1, 2], vec![3])).is_ok());
}

#[test]
fn context_limit_error_keeps_its_numbers() {
    let remote = RemoteBackend::connect_tcp(spawn_server(MiniBackend::new(small_model()))).unwrap();
    let long = vec![5u32; 600];
    match remote.score(&ScoreRequest::final_only(long, vec![6])) {
        Err(BackendError::ContextTooLong { len, max }) => {
            assert!(len > max);
            assert_eq!(max, 512);
        }
        other => panic!("expected ContextTooLong, got {other:?}"),
    }
}

#[test]
fn harness_runs_over_the_wire() {
    let samples = synthetic_suite(3, 4, Some("KEY"), 2);
    let ctx = samples[0].context().unwrap();
    let gold = ctx.sentences[samples[0].gold_sentences(&ctx.sentences)[0]].text.clone();
    let remote = RemoteBackend::connect_tcp(spawn_server(PlantedBackend::new(&gold, 0))).unwrap();
    let opts = EvalOptions {
        n_masks: 16,
        ..EvalOptions::default()
    };
    let report = evaluate(&samples[..1], &[Method::ArcJsd, Method::Surrogate], &remote, &opts).unwrap();
    assert!(!report.incomplete);
    assert_eq!(report.accuracy(Method::ArcJsd), 1.0);
    let calls: Vec<usize> = report.records.iter().map(|r| r.calls).collect();
    assert!(calls.contains(&5) && calls.contains(&17), "{calls:?}");
}
