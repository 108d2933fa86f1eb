// SPDX-License-Identifier: MIT OR Apache-2.0

//! Rank fusion of layer scores and Spearman agreement checks.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::mech::ComponentScore;
use crate::backend::ComponentSelector;

/// Largest sample size for which p-values are computed by full enumeration.
pub const EXACT_P_MAX_N: usize = 8;

const RHO_EPS: f64 = 1e-12;

/// Fractional ranks, 1 for the largest value, ties averaged.
pub fn fractional_ranks_desc(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Each layer's rank divided by the number of layers; the largest raw score
/// maps to `1/L`.
pub fn normalized_ranking(raw: &[f64]) -> Vec<f64> {
    let l = raw.len() as f64;
    fractional_ranks_desc(raw).into_iter().map(|r| r / l).collect()
}

/// Mean of the two normalized rankings; smaller means jointly more important.
pub fn consensus_fusion(j_raw: &[f64], g_raw: &[f64]) -> Result<Vec<f64>> {
    if j_raw.len() != g_raw.len() {
        return Err(Error::LengthMismatch {
            left: j_raw.len(),
            right: g_raw.len(),
        });
    }
    Ok(normalized_ranking(j_raw)
        .into_iter()
        .zip(normalized_ranking(g_raw))
        .map(|(a, b)| 0.5 * (a + b))
        .collect())
}

/// Mean head score per layer.
pub fn attn_layer_scores(layers: usize, heads: usize, scores: &[ComponentScore]) -> Result<Vec<f64>> {
    let mut sums = vec![0.0; layers];
    let mut counts = vec![0usize; layers];
    for c in scores {
        if let ComponentSelector::AttnHead { layer, head } = c.selector {
            if layer >= layers || head >= heads {
                return Err(Error::BadIndex {
                    index: layer,
                    len: layers,
                });
            }
            sums[layer] += c.score;
            counts[layer] += 1;
        }
    }
    if counts.iter().any(|&c| c != heads) {
        return Err(Error::InvalidArgument(format!("expected {heads} head scores per layer")));
    }
    Ok(sums.into_iter().map(|s| s / heads as f64).collect())
}

/// MLP score per layer.
pub fn mlp_layer_scores(layers: usize, scores: &[ComponentScore]) -> Result<Vec<f64>> {
    let mut out = vec![None; layers];
    for c in scores {
        if let ComponentSelector::Mlp { layer } = c.selector {
            *out.get_mut(layer).ok_or(Error::BadIndex { index: layer, len: layers })? = Some(c.score);
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(l, s)| s.ok_or_else(|| Error::InvalidArgument(format!("no MLP score for layer {l}"))))
        .collect()
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Next lexicographic permutation in place; false after the last one.
fn next_permutation(v: &mut [usize]) -> bool {
    let Some(i) = (1..v.len()).rev().find(|&i| v[i - 1] < v[i]) else {
        return false;
    };
    let j = (i..v.len()).rev().find(|&j| v[j] > v[i - 1]).expect("pivot exists");
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpearmanResult {
    pub rho: f64,
    pub p_value: f64,
    /// True when the p-value came from full permutation enumeration.
    pub exact: bool,
}

/// Spearman rank correlation with a two-sided p-value.
///
/// For `n <= 8` the p-value is the fraction of all `n!` reorderings of `y`'s
/// ranks whose |rho| reaches the observed |rho|. Larger samples use the
/// Student-t approximation with `n - 2` degrees of freedom.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<SpearmanResult> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::DegenerateInput(format!("need at least 3 points, got {n}")));
    }
    let rx = fractional_ranks_desc(x);
    let ry = fractional_ranks_desc(y);
    let rho = pearson(&rx, &ry).ok_or_else(|| Error::DegenerateInput("constant input".into()))?;
    if n <= EXACT_P_MAX_N {
        let mut perm: Vec<usize> = (0..n).collect();
        let mut permuted = vec![0.0; n];
        let (mut hits, mut total) = (0u64, 0u64);
        loop {
            for (slot, &k) in permuted.iter_mut().zip(&perm) {
                *slot = ry[k];
            }
            let r = pearson(&rx, &permuted).expect("ranks of a non-constant input");
            total += 1;
            if r.abs() >= rho.abs() - RHO_EPS {
                hits += 1;
            }
            if !next_permutation(&mut perm) {
                break;
            }
        }
        return Ok(SpearmanResult {
            rho,
            p_value: hits as f64 / total as f64,
            exact: true,
        });
    }
    let df = (n - 2) as f64;
    let p_value = if (1.0 - rho.abs()) < RHO_EPS {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Numerical(e.to_string()))?;
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(SpearmanResult {
        rho,
        p_value,
        exact: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Significance {
    None,
    P05,
    P01,
}

impl Significance {
    pub fn of(p: f64) -> Self {
        if p < 0.01 {
            Significance::P01
        } else if p < 0.05 {
            Significance::P05
        } else {
            Significance::None
        }
    }

    pub fn marker(self) -> &'static str {
        match self {
            Significance::None => "",
            Significance::P05 => "*",
            Significance::P01 => "**",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapRho {
    /// Layers in both top-N sets, ascending.
    pub layers: Vec<usize>,
    pub spearman: SpearmanResult,
    pub significance: Significance,
}

fn top_n_layers(values: &[f64], n: usize, descending: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        let o = values[a].total_cmp(&values[b]);
        if descending { o.reverse() } else { o }.then(a.cmp(&b))
    });
    idx.truncate(n);
    idx
}

/// Spearman agreement between a raw layer metric (larger is more important)
/// and the consensus score (smaller is more important), restricted to layers
/// in both top-N sets. The consensus is negated so agreement gives rho = +1.
pub fn topn_overlap_rho(metric_raw: &[f64], consensus: &[f64], n: usize) -> Result<OverlapRho> {
    if metric_raw.len() != consensus.len() {
        return Err(Error::LengthMismatch {
            left: metric_raw.len(),
            right: consensus.len(),
        });
    }
    if n > metric_raw.len() {
        return Err(Error::InvalidArgument(format!(
            "top {n} requested from {} layers",
            metric_raw.len()
        )));
    }
    let a = top_n_layers(metric_raw, n, true);
    let b = top_n_layers(consensus, n, false);
    let mut layers: Vec<usize> = a.into_iter().filter(|l| b.contains(l)).collect();
    layers.sort_unstable();
    if layers.len() < 3 {
        return Err(Error::InsufficientOverlap { found: layers.len() });
    }
    let x: Vec<f64> = layers.iter().map(|&l| metric_raw[l]).collect();
    let y: Vec<f64> = layers.iter().map(|&l| -consensus[l]).collect();
    let s = spearman(&x, &y)?;
    Ok(OverlapRho {
        layers,
        significance: Significance::of(s.p_value),
        spearman: s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranking_examples() {
        assert_eq!(normalized_ranking(&[5.0, 3.0, 1.0]), vec![1.0 / 3.0, 2.0 / 3.0, 1.0]);
        assert_eq!(normalized_ranking(&[2.0, 2.0, 2.0]), vec![2.0 / 3.0; 3]);
    }

    #[test]
    fn fusion_is_symmetric_and_idempotent() {
        let a = [0.3, 0.9, 0.1, 0.5];
        let b = [1.0, 0.2, 0.4, 0.3];
        assert_eq!(consensus_fusion(&a, &b).unwrap(), consensus_fusion(&b, &a).unwrap());
        assert_eq!(consensus_fusion(&a, &a).unwrap(), normalized_ranking(&a));
        assert!(consensus_fusion(&a, &b[..3]).is_err());
    }

    #[test]
    fn attn_layer_mean() {
        let s = |layer, head, score| ComponentScore {
            selector: ComponentSelector::AttnHead { layer, head },
            score,
        };
        let scores = [s(0, 0, 0.2), s(0, 1, 0.4), s(1, 0, 0.0), s(1, 1, 0.0)];
        let out = attn_layer_scores(2, 2, &scores).unwrap();
        assert!((out[0] - 0.3).abs() < 1e-15);
        assert_eq!(out[1], 0.0);
        assert!(attn_layer_scores(2, 2, &scores[..3]).is_err());
    }

    #[test]
    fn spearman_extremes_and_errors() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((spearman(&x, &x).unwrap().rho - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &neg).unwrap().rho + 1.0).abs() < 1e-12);
        assert!((spearman(&x, &x).unwrap().p_value - 2.0 / 120.0).abs() < 1e-12);
        assert!(matches!(spearman(&x, &[1.0; 5]), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn large_n_uses_t_approximation() {
        let x: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let y: Vec<f64> = (0..30).map(|i| ((i * 7) % 30) as f64).collect();
        let s = spearman(&x, &y).unwrap();
        assert!(!s.exact);
        assert!((0.0..=1.0).contains(&s.p_value));
    }

    #[test]
    fn overlap_agreement_and_disjoint_sets() {
        let metric = [0.9, 0.8, 0.7, 0.1, 0.05];
        let cons = consensus_fusion(&metric, &metric).unwrap();
        let r = topn_overlap_rho(&metric, &cons, 3).unwrap();
        assert_eq!(r.layers, vec![0, 1, 2]);
        assert!((r.spearman.rho - 1.0).abs() < 1e-12);
        let reversed = [0.1, 0.2, 0.3, 0.8, 0.9];
        let c2 = normalized_ranking(&reversed);
        assert!(matches!(
            topn_overlap_rho(&metric, &c2, 2),
            Err(Error::InsufficientOverlap { .. })
        ));
    }

    #[test]
    fn permutation_iterator_visits_all() {
        let mut v = vec![0, 1, 2, 3];
        let mut count = 1;
        while next_permutation(&mut v) {
            count += 1;
        }
        assert_eq!(count, 24);
    }
}
