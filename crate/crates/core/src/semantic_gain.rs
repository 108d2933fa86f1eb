// SPDX-License-Identifier: MIT OR Apache-2.0

//! Layer-wise semantic gain.
//!
//! At every response position the pre, mid and post residual vectors of each
//! layer are decoded greedily through the logit lens. Each decoded token and
//! the actual response token are mapped to their unembedding columns, and a
//! layer's attention (MLP) gain is how much the cosine to the response token
//! rises from pre to mid (mid to post). Gains are averaged over positions.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, ComponentSelector, ResidualStage, ScoreRequest};
use crate::error::{Error, Result};
use crate::mini_lm::{MiniLm, TraceSnapshot};

/// Gains for one response position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionGain {
    pub attn: Vec<f64>,
    pub mlp: Vec<f64>,
    /// Cosine of the first layer's pre-residual token to the response token.
    pub start_cos: f64,
    /// Cosine of the last layer's post-residual token to the response token.
    pub end_cos: f64,
}

/// One greedy logit-lens readout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LensCell {
    pub position: usize,
    pub layer: usize,
    pub stage: ResidualStage,
    pub token: u32,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainProfile {
    pub attn_gain: Vec<f64>,
    pub mlp_gain: Vec<f64>,
    pub per_token: Vec<PositionGain>,
    pub decoded: Vec<LensCell>,
}

impl GainProfile {
    /// Tab-separated logit-lens table with a header row. Tokens are rendered
    /// by `show`.
    pub fn lens_table(&self, show: impl Fn(u32) -> String) -> String {
        let mut out = String::from("position\tlayer\tstage\ttoken\tprob\n");
        for c in &self.decoded {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:.6}",
                c.position,
                c.layer,
                c.stage.as_str(),
                show(c.token),
                c.prob
            );
        }
        out
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 || !(aa.is_finite() && bb.is_finite()) {
        return Err(Error::Numerical("cosine of a zero or non-finite vector".into()));
    }
    Ok(ab / (aa.sqrt() * bb.sqrt()))
}

/// Greedy lens decode of a residual-space vector; ties go to the lowest id.
pub fn greedy_lens_token(model: &MiniLm, v: &[f32]) -> Result<u32> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite residual vector".into()));
    }
    Ok(model.logit_lens(v).argmax())
}

/// Decoded (token, prob) per position, layer and stage, position-major.
type Decoded = Vec<Vec<[(u32, f64); 3]>>;

fn profile_from_decoded(
    decoded: &Decoded,
    response: &[u32],
    embed: &dyn Fn(u32) -> Result<Vec<f32>>,
) -> Result<GainProfile> {
    let layers = decoded.first().map_or(0, Vec::len);
    if decoded.is_empty() || layers == 0 {
        return Err(Error::InvalidArgument("need at least one position and layer".into()));
    }
    let mut per_token = Vec::with_capacity(decoded.len());
    let mut cells = Vec::new();
    for (j, (stages, &r)) in decoded.iter().zip(response).enumerate() {
        let e_r = embed(r)?;
        let cos = |t: u32| -> Result<f64> { cosine(&embed(t)?, &e_r) };
        let mut attn = Vec::with_capacity(layers);
        let mut mlp = Vec::with_capacity(layers);
        let mut first = None;
        let mut last = 0.0;
        for (l, s) in stages.iter().enumerate() {
            let [pre, mid, post] = [cos(s[0].0)?, cos(s[1].0)?, cos(s[2].0)?];
            attn.push(mid - pre);
            mlp.push(post - mid);
            first.get_or_insert(pre);
            last = post;
            for (stage, &(token, prob)) in ResidualStage::ALL.into_iter().zip(s) {
                cells.push(LensCell {
                    position: j,
                    layer: l,
                    stage,
                    token,
                    prob,
                });
            }
        }
        per_token.push(PositionGain {
            attn,
            mlp,
            start_cos: first.expect("at least one layer"),
            end_cos: last,
        });
    }
    let n = per_token.len() as f64;
    let mean = |f: &dyn Fn(&PositionGain) -> &Vec<f64>| -> Vec<f64> {
        (0..layers)
            .map(|l| per_token.iter().map(|p| f(p)[l]).sum::<f64>() / n)
            .collect()
    };
    Ok(GainProfile {
        attn_gain: mean(&|p| &p.attn),
        mlp_gain: mean(&|p| &p.mlp),
        per_token,
        decoded: cells,
    })
}

/// Gains read directly from a mini model trace. `start` is the absolute
/// position predicting `response[0]`.
pub fn gains_from_trace(
    model: &MiniLm,
    trace: &TraceSnapshot,
    start: usize,
    response: &[u32],
) -> Result<GainProfile> {
    if response.is_empty() {
        return Err(Error::InvalidArgument("response is empty".into()));
    }
    let layers = trace.layers();
    let mut decoded: Decoded = Vec::with_capacity(response.len());
    for j in 0..response.len() {
        let pos = start + j;
        if !trace.positions().contains(&pos) {
            return Err(Error::BadIndex {
                index: pos,
                len: trace.positions().end,
            });
        }
        let mut per_layer = Vec::with_capacity(layers);
        for l in 0..layers {
            let mut stages = [(0u32, 0.0f64); 3];
            for (slot, stage) in stages.iter_mut().zip(ResidualStage::ALL) {
                let v = trace.residual(l, stage, pos);
                let token = greedy_lens_token(model, v)?;
                *slot = (token, model.logit_lens(v).prob(token));
            }
            per_layer.push(stages);
        }
        decoded.push(per_layer);
    }
    let params = model.params();
    let vocab = model.config().vocab_size;
    profile_from_decoded(&decoded, response, &|t| {
        if (t as usize) < vocab {
            Ok(params.unembedding_column(t))
        } else {
            Err(Error::BadIndex {
                index: t as usize,
                len: vocab,
            })
        }
    })
}

/// Gains for a mini model from token sequences.
pub fn mini_gains(model: &MiniLm, prompt: &[u32], response: &[u32]) -> Result<GainProfile> {
    if prompt.is_empty() || response.is_empty() {
        return Err(Error::InvalidArgument("prompt and response must be non-empty".into()));
    }
    let mut input = prompt.to_vec();
    input.extend_from_slice(&response[..response.len() - 1]);
    let trace = model.forward_trace(&input, &[])?;
    gains_from_trace(model, &trace, prompt.len() - 1, response)
}

/// Gains through any backend that serves residual selectors and unembedding
/// columns. One scoring call and one unembedding call.
pub fn gains<B: Backend + ?Sized>(backend: &B, prompt: &[u32], response: &[u32]) -> Result<GainProfile> {
    if response.is_empty() {
        return Err(Error::InvalidArgument("response is empty".into()));
    }
    let layers = backend.info().layers;
    let selectors = ComponentSelector::all_residuals(layers);
    let scored = backend.score(&ScoreRequest::new(prompt.to_vec(), response.to_vec(), selectors.clone()))?;
    scored.check_shape()?;
    let mut decoded: Decoded = vec![vec![[(0, 0.0); 3]; layers]; response.len()];
    for (k, sel) in selectors.iter().enumerate() {
        let ComponentSelector::Residual { layer, stage } = *sel else {
            unreachable!("residual selectors only")
        };
        let s = ResidualStage::ALL.iter().position(|x| *x == stage).expect("known stage");
        for (j, d) in scored.stream(k).iter().enumerate() {
            let t = d.argmax();
            decoded[j][layer][s] = (t, d.prob(t));
        }
    }
    let mut wanted: Vec<u32> = decoded
        .iter()
        .flat_map(|p| p.iter().flat_map(|s| s.iter().map(|c| c.0)))
        .chain(response.iter().copied())
        .collect();
    wanted.sort_unstable();
    wanted.dedup();
    let columns = backend.unembed(&wanted)?;
    if columns.len() != wanted.len() {
        return Err(Error::LengthMismatch {
            left: columns.len(),
            right: wanted.len(),
        });
    }
    profile_from_decoded(&decoded, response, &|t| {
        let i = wanted.binary_search(&t).expect("requested above");
        Ok(columns[i].clone())
    })
}

/// Layer indices by descending gain, lower layer first on ties, for the
/// attention and MLP gains.
pub fn rank_gains(profile: &GainProfile, n: usize) -> (Vec<usize>, Vec<usize>) {
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
        idx.truncate(n);
        idx
    };
    (rank(&profile.attn_gain), rank(&profile.mlp_gain))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mini_lm::ModelConfig;

    fn model() -> MiniLm {
        MiniLm::from_config(ModelConfig {
            layers: 3,
            heads: 2,
            d_model: 16,
            d_mlp: 32,
            vocab_size: 256,
            max_seq: 64,
            seed: 21,
        })
        .unwrap()
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine(&[1.0, 0.0], &[2.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap().abs() < 1e-15);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::Numerical(_))));
    }

    #[test]
    fn lens_decode_is_scale_invariant_and_hits_constructed_token() {
        let m = model();
        let v: Vec<f32> = (0..16).map(|i| (i as f32 * 0.37).sin()).collect();
        let doubled: Vec<f32> = v.iter().map(|x| 2.0 * x).collect();
        assert_eq!(greedy_lens_token(&m, &v).unwrap(), greedy_lens_token(&m, &doubled).unwrap());
        assert!(greedy_lens_token(&m, &[f32::NAN; 16]).is_err());
    }

    #[test]
    fn telescoping_and_ranges() {
        let m = model();
        let p = mini_gains(&m, &[67, 97, 116, 58, 32], &[100, 111, 103]).unwrap();
        assert_eq!(p.attn_gain.len(), 3);
        for t in &p.per_token {
            let sum: f64 = t.attn.iter().zip(&t.mlp).map(|(a, b)| a + b).sum();
            assert!((sum - (t.end_cos - t.start_cos)).abs() < 1e-12);
            assert!(t.attn.iter().chain(&t.mlp).all(|g| (-2.0..=2.0).contains(g)));
        }
        assert_eq!(p.decoded.len(), 3 * 3 * 3);
    }

    #[test]
    fn ranking_breaks_ties_low() {
        let p = GainProfile {
            attn_gain: vec![0.1, 0.3, 0.3],
            mlp_gain: vec![0.0, -1.0, 2.0],
            per_token: vec![],
            decoded: vec![],
        };
        assert_eq!(rank_gains(&p, 2), (vec![1, 2], vec![2, 0]));
    }
}
