// SPDX-License-Identifier: MIT OR Apache-2.0

use std::sync::Arc;

use super::forward::Session;
use super::{MiniLm, EOS_TOKEN};
use crate::backend::{
    byte_detokenize, byte_tokenize, Backend, BackendError, BackendResult, ComponentSelector, Distribution,
    Generation, ModelInfo, ScoreRequest, ScoreResponse,
};

/// [`Backend`] over an in-process [`MiniLm`].
#[derive(Clone)]
pub struct MiniBackend {
    model: Arc<MiniLm>,
    info: ModelInfo,
}

impl MiniBackend {
    pub fn new(model: MiniLm) -> Self {
        let c = *model.config();
        let info = ModelInfo {
            model_name: format!("mini-lm-L{}H{}d{}-s{}", c.layers, c.heads, c.d_model, c.seed),
            layers: c.layers,
            heads: c.heads,
            d_model: c.d_model,
            vocab_size: c.vocab_size,
            max_context: c.max_seq,
            max_parallelism: std::thread::available_parallelism().map_or(1, |n| n.get()),
            eos_token: Some(EOS_TOKEN),
        };
        Self {
            model: Arc::new(model),
            info,
        }
    }

    pub fn with_parallelism(mut self, n: usize) -> Self {
        self.info.max_parallelism = n.max(1);
        self
    }

    pub fn model(&self) -> &MiniLm {
        &self.model
    }
}

impl Backend for MiniBackend {
    fn info(&self) -> &ModelInfo {
        &self.info
    }

    fn tokenize(&self, text: &str) -> BackendResult<Vec<u32>> {
        Ok(byte_tokenize(text))
    }

    fn detokenize(&self, tokens: &[u32]) -> BackendResult<String> {
        byte_detokenize(tokens)
    }

    fn generate(&self, prompt: &[u32], max_len: usize) -> BackendResult<Generation> {
        if prompt.is_empty() {
            return Err(BackendError::InvalidRequest("empty prompt".into()));
        }
        let max_seq = self.model.config().max_seq;
        if prompt.len() > max_seq {
            return Err(BackendError::ContextTooLong {
                len: prompt.len(),
                max: max_seq,
            });
        }
        let mut session = Session::new(self.model.params(), &[])?;
        let mut last = Vec::new();
        for &tok in prompt {
            last = session.step(tok, false)?.0;
        }
        let mut out = Generation {
            tokens: Vec::new(),
            distributions: Vec::new(),
        };
        for step in 0..max_len {
            let dist = self.model.logit_lens(&last);
            let tok = dist.argmax();
            if tok == EOS_TOKEN {
                break;
            }
            out.tokens.push(tok);
            out.distributions.push(dist);
            // the final emitted token never needs to be fed back
            if step + 1 == max_len || prompt.len() + out.tokens.len() >= max_seq {
                break;
            }
            last = session.step(tok, false)?.0;
        }
        Ok(out)
    }

    fn score(&self, req: &ScoreRequest) -> BackendResult<ScoreResponse> {
        self.info.check_selectors(&req.selectors)?;
        if req.prompt_tokens.is_empty() {
            return Err(BackendError::InvalidRequest("empty prompt".into()));
        }
        let positions = req.response_tokens.len();
        let total = req.prompt_tokens.len() + positions.saturating_sub(1);
        if total > self.info.max_context {
            return Err(BackendError::ContextTooLong {
                len: total,
                max: self.info.max_context,
            });
        }
        if positions == 0 {
            return Ok(ScoreResponse {
                selectors: req.selectors.clone(),
                positions,
                distributions: Vec::new(),
            });
        }
        // response token j is predicted at absolute position prompt_len - 1 + j
        let start = req.prompt_tokens.len() - 1;
        let mut input = req.prompt_tokens.clone();
        input.extend_from_slice(&req.response_tokens[..positions - 1]);
        let trace = self.model.trace_from(&input, start, &req.masked_heads)?;
        let mut distributions: Vec<Distribution> = Vec::with_capacity(req.selectors.len() * positions);
        for sel in &req.selectors {
            for j in 0..positions {
                let pos = start + j;
                let v = match *sel {
                    ComponentSelector::Final => trace.final_residual(pos),
                    ComponentSelector::AttnHead { layer, head } => trace.head(layer, head, pos),
                    ComponentSelector::Mlp { layer } => trace.mlp(layer, pos),
                    ComponentSelector::Residual { layer, stage } => trace.residual(layer, stage, pos),
                };
                distributions.push(self.model.logit_lens(v));
            }
        }
        Ok(ScoreResponse {
            selectors: req.selectors.clone(),
            positions,
            distributions,
        })
    }

    fn unembed(&self, tokens: &[u32]) -> BackendResult<Vec<Vec<f32>>> {
        let vocab = self.info.vocab_size;
        tokens
            .iter()
            .map(|&t| {
                if (t as usize) < vocab {
                    Ok(self.model.params().unembedding_column(t))
                } else {
                    Err(BackendError::InvalidRequest(format!("token {t} outside vocabulary")))
                }
            })
            .collect()
    }
}
