// SPDX-License-Identifier: MIT OR Apache-2.0

//! A small deterministic decoder-only transformer with full instrumentation.
//!
//! Architecture: byte-level tokens, pre-norm blocks with RMS normalization,
//! causal multi-head attention without positional encoding, and a tanh-GELU
//! MLP. Each layer records its pre/mid/post residual vectors, every head's
//! write into the residual stream, and the MLP output.
//!
//! # Parameter initialization
//!
//! One ChaCha8 stream seeded with `config.seed` produces every weight in the
//! order of [`Params::tensors`]. Each draw takes `next_u32() >> 8` as a 24-bit
//! integer `k`, forms `u = k / 2^24` in `[0, 1)`, and maps it to
//! `(2u - 1) / sqrt(d)`. Normalization gains are `1 + (2u - 1) / sqrt(d)`.
//!
//! # Parameter file
//!
//! `"ARCM"`, version `u32`, then `layers heads d_model d_mlp vocab_size max_seq`
//! as `u32` and `seed` as `u64`, followed by every tensor of
//! [`Params::tensors`] as little-endian `f32`, in that order.

use std::io::{Read, Write};
use std::path::Path;

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod backend;
mod forward;

pub use backend::MiniBackend;
pub use forward::TraceSnapshot;

/// Byte-level vocabulary: token id = byte value. Byte 0 doubles as end-of-sequence.
pub const EOS_TOKEN: u32 = 0;

const FILE_MAGIC: &[u8; 4] = b"ARCM";
const FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_mlp: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            heads: 4,
            d_model: 64,
            d_mlp: 256,
            vocab_size: 256,
            max_seq: 512,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.layers,
            self.heads,
            self.d_model,
            self.d_mlp,
            self.vocab_size,
            self.max_seq,
        ];
        if counts.contains(&0) {
            return Err(Error::InvalidArgument("model dimensions must be >= 1".into()));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::InvalidArgument(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.vocab_size < 256 {
            return Err(Error::InvalidArgument("byte-level vocabulary needs 256 tokens".into()));
        }
        Ok(())
    }
}

/// Weights of one transformer block. Matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub attn_norm: Vec<f32>,
    /// `[head][d_model][head_dim]`
    pub w_q: Vec<f32>,
    pub w_k: Vec<f32>,
    pub w_v: Vec<f32>,
    /// `[head][head_dim][d_model]`
    pub w_o: Vec<f32>,
    pub mlp_norm: Vec<f32>,
    /// `[d_mlp][d_model]`: row `n` is the key read by hidden unit `n`.
    pub w_in: Vec<f32>,
    /// `[d_mlp][d_model]`: row `n` is the value written by hidden unit `n`.
    pub w_out: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub config: ModelConfig,
    /// `[vocab][d_model]`
    pub embed: Vec<f32>,
    pub layers: Vec<LayerParams>,
    pub final_norm: Vec<f32>,
    /// `[d_model][vocab]`: column `t` is the unembedding of token `t`.
    pub unembed: Vec<f32>,
}

struct WeightStream {
    rng: ChaCha8Rng,
    scale: f32,
}

impl WeightStream {
    fn unit(&mut self) -> f32 {
        (self.rng.next_u32() >> 8) as f32 / (1u32 << 24) as f32
    }
    fn weights(&mut self, n: usize) -> Vec<f32> {
        (0..n).map(|_| (2.0 * self.unit() - 1.0) * self.scale).collect()
    }
    fn gains(&mut self, n: usize) -> Vec<f32> {
        (0..n).map(|_| 1.0 + (2.0 * self.unit() - 1.0) * self.scale).collect()
    }
}

impl Params {
    /// Deterministic initialization from `config.seed`.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut s = WeightStream {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            scale: 1.0 / (d as f32).sqrt(),
        };
        let embed = s.weights(config.vocab_size * d);
        let layers = (0..config.layers)
            .map(|_| LayerParams {
                attn_norm: s.gains(d),
                w_q: s.weights(d * d),
                w_k: s.weights(d * d),
                w_v: s.weights(d * d),
                w_o: s.weights(d * d),
                mlp_norm: s.gains(d),
                w_in: s.weights(config.d_mlp * d),
                w_out: s.weights(config.d_mlp * d),
            })
            .collect();
        let final_norm = s.gains(d);
        let unembed = s.weights(d * config.vocab_size);
        Ok(Self {
            config,
            embed,
            layers,
            final_norm,
            unembed,
        })
    }

    /// Every tensor in initialization and file order.
    pub fn tensors(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = vec![&self.embed];
        for l in &self.layers {
            out.extend([
                &l.attn_norm[..],
                &l.w_q,
                &l.w_k,
                &l.w_v,
                &l.w_o,
                &l.mlp_norm,
                &l.w_in,
                &l.w_out,
            ]);
        }
        out.push(&self.final_norm);
        out.push(&self.unembed);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Vec<f32>> {
        let mut out = vec![&mut self.embed];
        for l in &mut self.layers {
            out.extend([
                &mut l.attn_norm,
                &mut l.w_q,
                &mut l.w_k,
                &mut l.w_v,
                &mut l.w_o,
                &mut l.mlp_norm,
                &mut l.w_in,
                &mut l.w_out,
            ]);
        }
        out.push(&mut self.final_norm);
        out.push(&mut self.unembed);
        out
    }

    /// Embedding row of `token`.
    pub fn embedding(&self, token: u32) -> &[f32] {
        let d = self.config.d_model;
        &self.embed[token as usize * d..(token as usize + 1) * d]
    }

    /// Unembedding column of `token` (`W_U[:, token]`).
    pub fn unembedding_column(&self, token: u32) -> Vec<f32> {
        let v = self.config.vocab_size;
        (0..self.config.d_model)
            .map(|i| self.unembed[i * v + token as usize])
            .collect()
    }

    /// Multiply one head's output map by `factor`.
    pub fn scale_head_output(&mut self, layer: usize, head: usize, factor: f32) {
        let d = self.config.d_model;
        let dh = self.config.head_dim();
        let w_o = &mut self.layers[layer].w_o[head * dh * d..(head + 1) * dh * d];
        w_o.iter_mut().for_each(|w| *w *= factor);
    }

    /// Multiply one head's query map by `factor`, sharpening its attention.
    pub fn scale_head_query(&mut self, layer: usize, head: usize, factor: f32) {
        let d = self.config.d_model;
        let dh = self.config.head_dim();
        let w_q = &mut self.layers[layer].w_q;
        for i in 0..d {
            let row = &mut w_q[head * d * dh + i * dh..head * d * dh + (i + 1) * dh];
            row.iter_mut().for_each(|w| *w *= factor);
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let c = &self.config;
        w.write_all(FILE_MAGIC)?;
        w.write_all(&FILE_VERSION.to_le_bytes())?;
        for v in [c.layers, c.heads, c.d_model, c.d_mlp, c.vocab_size, c.max_seq] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&c.seed.to_le_bytes())?;
        for t in self.tensors() {
            for x in t {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let bad = |m: &str| Error::InvalidArgument(format!("parameter file: {m}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != FILE_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut u32buf = [0u8; 4];
        let mut next_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut u32buf)?;
            Ok(u32::from_le_bytes(u32buf))
        };
        if next_u32(r)? != FILE_VERSION {
            return Err(bad("unsupported version"));
        }
        let mut dims = [0usize; 6];
        for slot in &mut dims {
            *slot = next_u32(r)? as usize;
        }
        let mut seed = [0u8; 8];
        r.read_exact(&mut seed)?;
        let config = ModelConfig {
            layers: dims[0],
            heads: dims[1],
            d_model: dims[2],
            d_mlp: dims[3],
            vocab_size: dims[4],
            max_seq: dims[5],
            seed: u64::from_le_bytes(seed),
        };
        config.validate()?;
        // shapes come from init; contents are overwritten below
        let mut params = Params::init(config)?;
        for t in params.tensors_mut() {
            let mut bytes = vec![0u8; t.len() * 4];
            r.read_exact(&mut bytes)?;
            for (x, b) in t.iter_mut().zip(bytes.chunks_exact(4)) {
                *x = f32::from_le_bytes(b.try_into().unwrap());
            }
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(bad("trailing bytes"));
        }
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

/// A model ready to run: parameters plus the forward pass and logit lens.
#[derive(Debug, Clone)]
pub struct MiniLm {
    params: Params,
}

impl MiniLm {
    pub fn new(params: Params) -> Self {
        Self { params }
    }

    pub fn from_config(config: ModelConfig) -> Result<Self> {
        Ok(Self::new(Params::init(config)?))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.params.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }
}
