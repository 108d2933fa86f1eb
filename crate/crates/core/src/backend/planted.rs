// SPDX-License-Identifier: MIT OR Apache-2.0

//! A synthetic backend whose output depends only on whether one planted
//! sentence appears in the prompt. Used to check attribution end to end.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    byte_detokenize, byte_tokenize, Backend, BackendError, BackendResult, ComponentSelector,
    Distribution, Generation, ModelInfo, ScoreRequest, ScoreResponse,
};

const VOCAB: usize = 256;

pub struct PlantedBackend {
    info: ModelInfo,
    needle: Vec<u32>,
    seed: u64,
    spread: f32,
}

impl PlantedBackend {
    /// Backend keyed on the exact text of `planted_sentence`.
    pub fn new(planted_sentence: &str, seed: u64) -> Self {
        Self {
            info: ModelInfo {
                model_name: "planted-synthetic".into(),
                layers: 0,
                heads: 0,
                d_model: 0,
                vocab_size: VOCAB,
                max_context: 1 << 20,
                max_parallelism: 8,
                eos_token: None,
            },
            needle: byte_tokenize(planted_sentence),
            seed,
            spread: 3.0,
        }
    }

    pub fn contains_planted(&self, prompt: &[u32]) -> bool {
        !self.needle.is_empty() && prompt.windows(self.needle.len()).any(|w| w == self.needle.as_slice())
    }

    fn distribution(&self, present: bool, position: usize) -> Distribution {
        let stream = (position as u64) << 1 | u64::from(present);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let logits: Vec<f32> = (0..VOCAB).map(|_| rng.gen_range(-self.spread..self.spread)).collect();
        Distribution::from_logits(&logits)
    }
}

impl Backend for PlantedBackend {
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
        if prompt.is_empty() || max_len == 0 {
            return Err(BackendError::InvalidRequest("empty prompt or zero max_len".into()));
        }
        let present = self.contains_planted(prompt);
        let distributions: Vec<Distribution> =
            (0..max_len).map(|j| self.distribution(present, j)).collect();
        Ok(Generation {
            tokens: distributions.iter().map(Distribution::argmax).collect(),
            distributions,
        })
    }

    fn score(&self, req: &ScoreRequest) -> BackendResult<ScoreResponse> {
        if let Some(sel) = req.selectors.iter().find(|s| **s != ComponentSelector::Final) {
            return Err(BackendError::Unsupported(format!("selector {sel}")));
        }
        if !req.masked_heads.is_empty() {
            return Err(BackendError::Unsupported("head masking".into()));
        }
        let present = self.contains_planted(&req.prompt_tokens);
        let positions = req.response_tokens.len();
        let stream: Vec<Distribution> = (0..positions).map(|j| self.distribution(present, j)).collect();
        let distributions = req.selectors.iter().flat_map(|_| stream.iter().cloned()).collect();
        Ok(ScoreResponse {
            selectors: req.selectors.clone(),
            positions,
            distributions,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_depends_only_on_presence() {
        let b = PlantedBackend::new("Needle here.", 7);
        let with = byte_tokenize("Context: A. Needle here. B.");
        let other = byte_tokenize("Context: C. Needle here.");
        let without = byte_tokenize("Context: A. B.");
        let r = vec![1, 2, 3];
        let s = |p: &[u32]| b.score(&ScoreRequest::final_only(p.to_vec(), r.clone())).unwrap();
        assert_eq!(s(&with), s(&other));
        assert_ne!(s(&with), s(&without));
        let g = b.generate(&with, 3).unwrap();
        assert_eq!(g.distributions, s(&with).distributions);
    }

    #[test]
    fn component_selectors_are_unsupported() {
        let b = PlantedBackend::new("x", 0);
        let req = ScoreRequest::new(vec![1], vec![2], vec![ComponentSelector::Mlp { layer: 0 }]);
        assert!(matches!(b.score(&req), Err(BackendError::Unsupported(_))));
    }
}
