// SPDX-License-Identifier: MIT OR Apache-2.0

//! Incremental forward pass, residual traces, and the logit lens.
//!
//! Positions are processed one at a time against per-layer key/value caches,
//! so a full-sequence pass and token-by-token generation run the same
//! arithmetic in the same order and agree bit for bit.

use super::{MiniLm, Params};
use crate::backend::{BackendError, BackendResult, Distribution, HeadId, ResidualStage};

const NORM_EPS: f32 = 1e-6;

/// Everything one layer wrote at one position.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub pre: Vec<f32>,
    pub mid: Vec<f32>,
    pub post: Vec<f32>,
    /// `[head][d_model]`: each head's write into the residual stream.
    pub heads: Vec<f32>,
    pub mlp: Vec<f32>,
}

/// Per-position, per-layer record of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSnapshot {
    tokens: Vec<u32>,
    start: usize,
    d_model: usize,
    positions: Vec<Vec<LayerTrace>>,
}

impl TraceSnapshot {
    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    /// Absolute positions covered by this trace.
    pub fn positions(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.positions.len()
    }

    pub fn layers(&self) -> usize {
        self.positions.first().map_or(0, Vec::len)
    }

    pub fn layer(&self, layer: usize, position: usize) -> &LayerTrace {
        &self.positions[position - self.start][layer]
    }

    pub fn residual(&self, layer: usize, stage: ResidualStage, position: usize) -> &[f32] {
        let t = self.layer(layer, position);
        match stage {
            ResidualStage::Pre => &t.pre,
            ResidualStage::Mid => &t.mid,
            ResidualStage::Post => &t.post,
        }
    }

    pub fn head(&self, layer: usize, head: usize, position: usize) -> &[f32] {
        let d = self.d_model;
        &self.layer(layer, position).heads[head * d..(head + 1) * d]
    }

    pub fn mlp(&self, layer: usize, position: usize) -> &[f32] {
        &self.layer(layer, position).mlp
    }

    /// Residual stream after the last layer.
    pub fn final_residual(&self, position: usize) -> &[f32] {
        &self.positions[position - self.start].last().expect("at least one layer").post
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rms_norm(x: &[f32], gain: &[f32]) -> Vec<f32> {
    let ms = x.iter().map(|v| v * v).sum::<f32>() / x.len() as f32;
    let inv = 1.0 / (ms + NORM_EPS).sqrt();
    x.iter().zip(gain).map(|(v, g)| v * inv * g).collect()
}

fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

/// `x (len n) @ w (n x m, row-major)`.
fn vec_mat(x: &[f32], w: &[f32], m: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m];
    for (xi, row) in x.iter().zip(w.chunks_exact(m)) {
        for (o, wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
    out
}

/// Incremental decoder state for one sequence.
pub(crate) struct Session<'a> {
    params: &'a Params,
    masked: Vec<bool>,
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    len: usize,
}

impl<'a> Session<'a> {
    pub(crate) fn new(params: &'a Params, masked_heads: &[HeadId]) -> BackendResult<Self> {
        let c = &params.config;
        let mut masked = vec![false; c.layers * c.heads];
        for h in masked_heads {
            if h.layer >= c.layers || h.head >= c.heads {
                return Err(BackendError::InvalidRequest(format!(
                    "masked head L{}H{} is out of range",
                    h.layer, h.head
                )));
            }
            masked[h.layer * c.heads + h.head] = true;
        }
        Ok(Self {
            params,
            masked,
            keys: vec![Vec::new(); c.layers],
            values: vec![Vec::new(); c.layers],
            len: 0,
        })
    }

    /// Feed one token; returns the final residual at its position and
    /// optionally the full layer trace.
    pub(crate) fn step(&mut self, token: u32, record: bool) -> BackendResult<(Vec<f32>, Option<Vec<LayerTrace>>)> {
        let p = self.params;
        let c = &p.config;
        if token as usize >= c.vocab_size {
            return Err(BackendError::InvalidRequest(format!("token {token} outside vocabulary")));
        }
        if self.len >= c.max_seq {
            return Err(BackendError::ContextTooLong {
                len: self.len + 1,
                max: c.max_seq,
            });
        }
        let d = c.d_model;
        let dh = c.head_dim();
        let scale = 1.0 / (dh as f32).sqrt();
        let mut x = p.embedding(token).to_vec();
        let mut trace = record.then(|| Vec::with_capacity(c.layers));

        for (li, lp) in p.layers.iter().enumerate() {
            let pre = x.clone();
            let h = rms_norm(&x, &lp.attn_norm);
            let t = self.len;
            let mut head_out = vec![0.0f32; c.heads * d];
            for hi in 0..c.heads {
                let w = hi * d * dh..(hi + 1) * d * dh;
                let q = vec_mat(&h, &lp.w_q[w.clone()], dh);
                let k = vec_mat(&h, &lp.w_k[w.clone()], dh);
                let v = vec_mat(&h, &lp.w_v[w], dh);
                // cache layout: [position][head][head_dim]
                self.keys[li].extend_from_slice(&k);
                self.values[li].extend_from_slice(&v);
                let key_at = |s: usize| &self.keys[li][(s * c.heads + hi) * dh..(s * c.heads + hi + 1) * dh];
                let val_at = |s: usize| &self.values[li][(s * c.heads + hi) * dh..(s * c.heads + hi + 1) * dh];
                let keys_so_far = t + 1;
                let scores: Vec<f32> = (0..keys_so_far).map(|s| dot(&q, key_at(s)) * scale).collect();
                let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let weights: Vec<f32> = scores.iter().map(|s| (s - max).exp()).collect();
                let total: f32 = weights.iter().sum();
                let mut z = vec![0.0f32; dh];
                for (s, a) in weights.iter().enumerate() {
                    let a = a / total;
                    for (zi, vi) in z.iter_mut().zip(val_at(s)) {
                        *zi += a * vi;
                    }
                }
                if !self.masked[li * c.heads + hi] {
                    let o = vec_mat(&z, &lp.w_o[hi * dh * d..(hi + 1) * dh * d], d);
                    head_out[hi * d..(hi + 1) * d].copy_from_slice(&o);
                }
            }
            let mut mid = pre.clone();
            for hi in 0..c.heads {
                for (m, o) in mid.iter_mut().zip(&head_out[hi * d..(hi + 1) * d]) {
                    *m += o;
                }
            }
            let h2 = rms_norm(&mid, &lp.mlp_norm);
            let mut mlp = vec![0.0f32; d];
            for (key, value) in lp.w_in.chunks_exact(d).zip(lp.w_out.chunks_exact(d)) {
                let a = gelu(dot(key, &h2));
                for (m, w) in mlp.iter_mut().zip(value) {
                    *m += a * w;
                }
            }
            let post: Vec<f32> = mid.iter().zip(&mlp).map(|(a, b)| a + b).collect();
            if !post.iter().all(|v| v.is_finite()) {
                return Err(BackendError::Numerical(format!("non-finite residual at layer {li}")));
            }
            x = post.clone();
            if let Some(tr) = trace.as_mut() {
                tr.push(LayerTrace {
                    pre,
                    mid,
                    post,
                    heads: head_out,
                    mlp,
                });
            }
        }
        self.len += 1;
        Ok((x, trace))
    }
}

impl MiniLm {
    /// Run `tokens` and record every position.
    pub fn forward_trace(&self, tokens: &[u32], masked_heads: &[HeadId]) -> BackendResult<TraceSnapshot> {
        self.trace_from(tokens, 0, masked_heads)
    }

    /// Run `tokens`, recording only positions `start..`.
    pub(crate) fn trace_from(
        &self,
        tokens: &[u32],
        start: usize,
        masked_heads: &[HeadId],
    ) -> BackendResult<TraceSnapshot> {
        if tokens.is_empty() {
            return Err(BackendError::InvalidRequest("empty token sequence".into()));
        }
        let mut session = Session::new(&self.params, masked_heads)?;
        let mut positions = Vec::with_capacity(tokens.len().saturating_sub(start));
        for (i, &tok) in tokens.iter().enumerate() {
            let (_, trace) = session.step(tok, i >= start)?;
            if let Some(t) = trace {
                positions.push(t);
            }
        }
        Ok(TraceSnapshot {
            tokens: tokens.to_vec(),
            start,
            d_model: self.params.config.d_model,
            positions,
        })
    }

    /// Logits `W_U^T (rmsnorm(v) * g_final)`.
    pub fn lens_logits(&self, v: &[f32]) -> Vec<f32> {
        let normed = rms_norm(v, &self.params.final_norm);
        vec_mat(&normed, &self.params.unembed, self.params.config.vocab_size)
    }

    /// Project any residual-space vector through the final norm and
    /// unembedding. Applied to the last layer's output this is exactly the
    /// model's next-token distribution.
    pub fn logit_lens(&self, v: &[f32]) -> Distribution {
        Distribution::from_logits(&self.lens_logits(v))
    }

    /// Next-token distribution after `tokens`.
    pub fn next_token_distribution(&self, tokens: &[u32]) -> BackendResult<Distribution> {
        let mut session = Session::new(&self.params, &[])?;
        let mut last = Vec::new();
        for &tok in tokens {
            last = session.step(tok, false)?.0;
        }
        if last.is_empty() {
            return Err(BackendError::InvalidRequest("empty token sequence".into()));
        }
        Ok(self.logit_lens(&last))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mini_lm::ModelConfig;

    fn t(s: &str) -> Vec<u32> {
        crate::backend::byte_tokenize(s)
    }

    fn model() -> MiniLm {
        MiniLm::from_config(ModelConfig {
            layers: 2,
            heads: 2,
            d_model: 16,
            d_mlp: 32,
            vocab_size: 256,
            max_seq: 64,
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_192).abs() < 1e-5);
        assert!((gelu(-1.0) + 0.158_808).abs() < 1e-5);
    }

    #[test]
    fn rms_norm_has_unit_rms() {
        let g = vec![1.0; 4];
        let y = rms_norm(&[1.0, -2.0, 3.0, 0.5], &g);
        let ms: f32 = y.iter().map(|v| v * v).sum::<f32>() / 4.0;
        assert!((ms - 1.0).abs() < 1e-5);
    }

    #[test]
    fn causal_prefix_invariance() {
        let m = model();
        let a = m.forward_trace(&t("hello world"), &[]).unwrap();
        let b = m.forward_trace(&t("hello there"), &[]).unwrap();
        for pos in 0..6 {
            assert_eq!(a.final_residual(pos), b.final_residual(pos));
        }
        assert_ne!(a.final_residual(7), b.final_residual(7));
    }

    #[test]
    fn masked_head_writes_zero() {
        let m = model();
        let tr = m.forward_trace(&t("abc"), &[HeadId::new(1, 0)]).unwrap();
        assert!(tr.head(1, 0, 2).iter().all(|&v| v == 0.0));
        assert!(tr.head(1, 1, 2).iter().any(|&v| v != 0.0));
        assert!(m.forward_trace(&t("abc"), &[HeadId::new(2, 0)]).is_err());
    }

    #[test]
    fn final_lens_matches_next_token_distribution() {
        let m = model();
        let tr = m.forward_trace(&t("The cat"), &[]).unwrap();
        let lens = m.logit_lens(tr.final_residual(6));
        assert_eq!(lens, m.next_token_distribution(&t("The cat")).unwrap());
    }

    #[test]
    fn partial_trace_agrees_with_full() {
        let m = model();
        let full = m.forward_trace(&t("abcdef"), &[]).unwrap();
        let part = m.trace_from(&t("abcdef"), 3, &[]).unwrap();
        assert_eq!(part.positions(), 3..6);
        assert_eq!(full.layer(1, 4), part.layer(1, 4));
    }

    #[test]
    fn context_limit_enforced() {
        let m = model();
        let long = vec![b'a' as u32; 65];
        assert!(matches!(
            m.forward_trace(&long, &[]),
            Err(BackendError::ContextTooLong { .. })
        ));
    }
}
