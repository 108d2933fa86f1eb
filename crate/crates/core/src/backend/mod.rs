// SPDX-License-Identifier: MIT OR Apache-2.0

//! The scoring-oracle contract implemented by every model backend.
//!
//! A backend tokenizes text, generates greedily, and scores a fixed response
//! under a prompt by teacher forcing. Scoring returns one distribution per
//! response position for each requested [`ComponentSelector`]: the model's
//! own next-token distribution for [`ComponentSelector::Final`], and the logit
//! lens of an internal vector for every other selector.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

mod distribution;
pub mod planted;
pub mod protocol;
pub mod remote;

pub use distribution::{DenseExpansion, Distribution, MASS_TOLERANCE};

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("sequence of {len} tokens exceeds the context limit of {max}")]
    ContextTooLong { len: usize, max: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("framing error: {0}")]
    Framing(String),
    #[error("backend failure: {0}")]
    Failure(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type BackendResult<T> = std::result::Result<T, BackendError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualStage {
    Pre,
    Mid,
    Post,
}

impl ResidualStage {
    pub const ALL: [ResidualStage; 3] = [ResidualStage::Pre, ResidualStage::Mid, ResidualStage::Post];

    pub fn as_str(&self) -> &'static str {
        match self {
            ResidualStage::Pre => "pre",
            ResidualStage::Mid => "mid",
            ResidualStage::Post => "post",
        }
    }
}

/// An attention head, addressed by layer and head index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HeadId {
    pub layer: usize,
    pub head: usize,
}

impl HeadId {
    pub fn new(layer: usize, head: usize) -> Self {
        Self { layer, head }
    }
}

/// Which vector a distribution stream is read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ComponentSelector {
    Final,
    AttnHead { layer: usize, head: usize },
    Mlp { layer: usize },
    Residual { layer: usize, stage: ResidualStage },
}

impl ComponentSelector {
    pub fn layer(&self) -> Option<usize> {
        match *self {
            ComponentSelector::Final => None,
            ComponentSelector::AttnHead { layer, .. }
            | ComponentSelector::Mlp { layer }
            | ComponentSelector::Residual { layer, .. } => Some(layer),
        }
    }

    /// Every attention head followed by every MLP, layer-major.
    pub fn all_components(layers: usize, heads: usize) -> Vec<ComponentSelector> {
        let mut out = Vec::with_capacity(layers * (heads + 1));
        for layer in 0..layers {
            for head in 0..heads {
                out.push(ComponentSelector::AttnHead { layer, head });
            }
        }
        for layer in 0..layers {
            out.push(ComponentSelector::Mlp { layer });
        }
        out
    }

    /// Pre, mid and post residual selectors for every layer, layer-major.
    pub fn all_residuals(layers: usize) -> Vec<ComponentSelector> {
        (0..layers)
            .flat_map(|layer| {
                ResidualStage::ALL
                    .into_iter()
                    .map(move |stage| ComponentSelector::Residual { layer, stage })
            })
            .collect()
    }
}

impl fmt::Display for ComponentSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ComponentSelector::Final => write!(f, "final"),
            ComponentSelector::AttnHead { layer, head } => write!(f, "attn_head(L{layer},H{head})"),
            ComponentSelector::Mlp { layer } => write!(f, "mlp(L{layer})"),
            ComponentSelector::Residual { layer, stage } => {
                write!(f, "residual(L{layer},{})", stage.as_str())
            }
        }
    }
}

/// Handshake metadata describing a backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub model_name: String,
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub vocab_size: usize,
    pub max_context: usize,
    pub max_parallelism: usize,
    pub eos_token: Option<u32>,
}

impl ModelInfo {
    /// Reject selectors that address layers or heads the model does not have.
    pub fn check_selectors(&self, selectors: &[ComponentSelector]) -> BackendResult<()> {
        for sel in selectors {
            let ok = match *sel {
                ComponentSelector::Final => true,
                ComponentSelector::AttnHead { layer, head } => {
                    layer < self.layers && head < self.heads
                }
                ComponentSelector::Mlp { layer } | ComponentSelector::Residual { layer, .. } => {
                    layer < self.layers
                }
            };
            if !ok {
                return Err(BackendError::InvalidRequest(format!(
                    "selector {sel} is out of range for L={} H={}",
                    self.layers, self.heads
                )));
            }
        }
        Ok(())
    }
}

/// A teacher-forced scoring job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub prompt_tokens: Vec<u32>,
    pub response_tokens: Vec<u32>,
    pub selectors: Vec<ComponentSelector>,
    /// Heads whose contribution is zeroed for this pass. Empty for a plain run.
    #[serde(default)]
    pub masked_heads: Vec<HeadId>,
}

impl ScoreRequest {
    pub fn new(prompt_tokens: Vec<u32>, response_tokens: Vec<u32>, selectors: Vec<ComponentSelector>) -> Self {
        Self {
            prompt_tokens,
            response_tokens,
            selectors,
            masked_heads: Vec::new(),
        }
    }

    /// Request for the model's own next-token distributions only.
    pub fn final_only(prompt_tokens: Vec<u32>, response_tokens: Vec<u32>) -> Self {
        Self::new(prompt_tokens, response_tokens, vec![ComponentSelector::Final])
    }

    pub fn with_masked_heads(mut self, heads: Vec<HeadId>) -> Self {
        self.masked_heads = heads;
        self
    }
}

/// Distributions for a [`ScoreRequest`], selector-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub selectors: Vec<ComponentSelector>,
    pub positions: usize,
    pub distributions: Vec<Distribution>,
}

impl ScoreResponse {
    /// Distributions for the `k`-th requested selector, one per position.
    pub fn stream(&self, k: usize) -> &[Distribution] {
        &self.distributions[k * self.positions..(k + 1) * self.positions]
    }

    /// Stream for the first occurrence of `sel`.
    pub fn stream_for(&self, sel: &ComponentSelector) -> Option<&[Distribution]> {
        self.selectors.iter().position(|s| s == sel).map(|k| self.stream(k))
    }

    pub fn check_shape(&self) -> BackendResult<()> {
        if self.distributions.len() != self.selectors.len() * self.positions {
            return Err(BackendError::Protocol(format!(
                "{} distributions for {} selectors x {} positions",
                self.distributions.len(),
                self.selectors.len(),
                self.positions
            )));
        }
        Ok(())
    }
}

/// Greedy generation output: emitted tokens and the final distribution each
/// one was selected from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub tokens: Vec<u32>,
    pub distributions: Vec<Distribution>,
}

/// A model that can be scored. Implementations must be deterministic: the same
/// request yields bit-identical dense distributions.
pub trait Backend: Send + Sync {
    fn info(&self) -> &ModelInfo;

    fn tokenize(&self, text: &str) -> BackendResult<Vec<u32>>;

    fn detokenize(&self, tokens: &[u32]) -> BackendResult<String>;

    /// Greedy decoding from `prompt` until end-of-sequence or `max_len` tokens.
    fn generate(&self, prompt: &[u32], max_len: usize) -> BackendResult<Generation>;

    /// Teacher-forced scoring of `req.response_tokens` after `req.prompt_tokens`.
    fn score(&self, req: &ScoreRequest) -> BackendResult<ScoreResponse>;

    /// Unembedding vectors (the columns of `W_U`) for `tokens`.
    fn unembed(&self, _tokens: &[u32]) -> BackendResult<Vec<Vec<f32>>> {
        Err(BackendError::Unsupported("unembedding access".into()))
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn info(&self) -> &ModelInfo {
        (**self).info()
    }
    fn tokenize(&self, text: &str) -> BackendResult<Vec<u32>> {
        (**self).tokenize(text)
    }
    fn detokenize(&self, tokens: &[u32]) -> BackendResult<String> {
        (**self).detokenize(tokens)
    }
    fn generate(&self, prompt: &[u32], max_len: usize) -> BackendResult<Generation> {
        (**self).generate(prompt, max_len)
    }
    fn score(&self, req: &ScoreRequest) -> BackendResult<ScoreResponse> {
        (**self).score(req)
    }
    fn unembed(&self, tokens: &[u32]) -> BackendResult<Vec<Vec<f32>>> {
        (**self).unembed(tokens)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn info(&self) -> &ModelInfo {
        (**self).info()
    }
    fn tokenize(&self, text: &str) -> BackendResult<Vec<u32>> {
        (**self).tokenize(text)
    }
    fn detokenize(&self, tokens: &[u32]) -> BackendResult<String> {
        (**self).detokenize(tokens)
    }
    fn generate(&self, prompt: &[u32], max_len: usize) -> BackendResult<Generation> {
        (**self).generate(prompt, max_len)
    }
    fn score(&self, req: &ScoreRequest) -> BackendResult<ScoreResponse> {
        (**self).score(req)
    }
    fn unembed(&self, tokens: &[u32]) -> BackendResult<Vec<Vec<f32>>> {
        (**self).unembed(tokens)
    }
}

/// Wraps a backend and counts `generate` and `score` calls.
pub struct CountingBackend<B> {
    inner: B,
    calls: AtomicUsize,
}

impl<B: Backend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: Backend> Backend for CountingBackend<B> {
    fn info(&self) -> &ModelInfo {
        self.inner.info()
    }
    fn tokenize(&self, text: &str) -> BackendResult<Vec<u32>> {
        self.inner.tokenize(text)
    }
    fn detokenize(&self, tokens: &[u32]) -> BackendResult<String> {
        self.inner.detokenize(tokens)
    }
    fn generate(&self, prompt: &[u32], max_len: usize) -> BackendResult<Generation> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.generate(prompt, max_len)
    }
    fn score(&self, req: &ScoreRequest) -> BackendResult<ScoreResponse> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.score(req)
    }
    fn unembed(&self, tokens: &[u32]) -> BackendResult<Vec<Vec<f32>>> {
        self.inner.unembed(tokens)
    }
}

/// Byte-level tokenization: one token per UTF-8 byte.
pub fn byte_tokenize(text: &str) -> Vec<u32> {
    text.bytes().map(u32::from).collect()
}

pub fn byte_detokenize(tokens: &[u32]) -> BackendResult<String> {
    let bytes = tokens
        .iter()
        .map(|&t| {
            u8::try_from(t).map_err(|_| BackendError::InvalidRequest(format!("token {t} is not a byte")))
        })
        .collect::<BackendResult<Vec<u8>>>()?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}
