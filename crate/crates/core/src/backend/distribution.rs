// SPDX-License-Identifier: MIT OR Apache-2.0

//! Next-token probability distributions, dense or sparse with a tail bucket.

use serde::{Deserialize, Serialize};

/// Tolerance on total probability mass.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// A probability vector over a vocabulary at one response position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Distribution {
    /// Full vector; `probs.len()` is the vocabulary size.
    Dense { probs: Vec<f32> },
    /// Top-K entries plus the mass of every unlisted token lumped together.
    Sparse {
        vocab_size: u32,
        entries: Vec<(u32, f32)>,
        tail_mass: f32,
    },
}

/// Result of expanding a sparse distribution to dense form.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseExpansion {
    pub distribution: Distribution,
    /// True when a non-zero tail was spread uniformly over unlisted tokens.
    pub tail_spread: bool,
}

impl Distribution {
    pub fn dense(probs: Vec<f32>) -> Self {
        Distribution::Dense { probs }
    }

    /// Softmax of `logits`, evaluated in f64 and stored as f32.
    pub fn from_logits(logits: &[f32]) -> Self {
        let max = logits.iter().fold(f32::NEG_INFINITY, |m, &x| m.max(x)) as f64;
        let exps: Vec<f64> = logits.iter().map(|&x| (x as f64 - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Distribution::Dense {
            probs: exps.iter().map(|e| (e / total) as f32).collect(),
        }
    }

    /// Keep the `k` most probable tokens (ties by lower id) and a tail bucket.
    pub fn to_sparse(&self, k: usize) -> Self {
        match self {
            Distribution::Dense { probs } => {
                let mut order: Vec<usize> = (0..probs.len()).collect();
                order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
                order.truncate(k.max(1));
                order.sort_unstable();
                let entries: Vec<(u32, f32)> =
                    order.iter().map(|&t| (t as u32, probs[t])).collect();
                let listed: f64 = entries.iter().map(|&(_, p)| p as f64).sum();
                Distribution::Sparse {
                    vocab_size: probs.len() as u32,
                    entries,
                    tail_mass: (1.0 - listed).max(0.0) as f32,
                }
            }
            sparse => sparse.clone(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            Distribution::Dense { probs } => probs.len(),
            Distribution::Sparse { vocab_size, .. } => *vocab_size as usize,
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, Distribution::Sparse { .. })
    }

    /// Total mass, including the tail bucket.
    pub fn mass(&self) -> f64 {
        match self {
            Distribution::Dense { probs } => probs.iter().map(|&p| p as f64).sum(),
            Distribution::Sparse {
                entries, tail_mass, ..
            } => entries.iter().map(|&(_, p)| p as f64).sum::<f64>() + *tail_mass as f64,
        }
    }

    /// Check the mass and non-negativity invariants.
    pub fn validate(&self) -> Result<(), String> {
        let bad = |p: f32| !p.is_finite() || p < 0.0;
        match self {
            Distribution::Dense { probs } => {
                if probs.is_empty() {
                    return Err("empty distribution".into());
                }
                if let Some(p) = probs.iter().find(|&&p| bad(p)) {
                    return Err(format!("invalid probability {p}"));
                }
            }
            Distribution::Sparse {
                vocab_size,
                entries,
                tail_mass,
            } => {
                if *vocab_size == 0 || entries.is_empty() {
                    return Err("empty sparse distribution".into());
                }
                if bad(*tail_mass) {
                    return Err(format!("invalid tail mass {tail_mass}"));
                }
                let mut prev: Option<u32> = None;
                for &(t, p) in entries {
                    if bad(p) {
                        return Err(format!("invalid probability {p} for token {t}"));
                    }
                    if t >= *vocab_size {
                        return Err(format!("token {t} outside vocabulary of {vocab_size}"));
                    }
                    if prev.is_some_and(|q| q >= t) {
                        return Err("sparse entries must be strictly increasing by token".into());
                    }
                    prev = Some(t);
                }
            }
        }
        let mass = self.mass();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(format!("mass {mass} deviates from 1"));
        }
        Ok(())
    }

    /// Probability of `token`. Unlisted sparse tokens share the tail evenly.
    pub fn prob(&self, token: u32) -> f64 {
        match self {
            Distribution::Dense { probs } => probs.get(token as usize).map_or(0.0, |&p| p as f64),
            Distribution::Sparse {
                vocab_size,
                entries,
                tail_mass,
            } => match entries.binary_search_by_key(&token, |&(t, _)| t) {
                Ok(i) => entries[i].1 as f64,
                Err(_) if token < *vocab_size => {
                    let unlisted = (*vocab_size as usize).saturating_sub(entries.len());
                    if unlisted == 0 {
                        0.0
                    } else {
                        *tail_mass as f64 / unlisted as f64
                    }
                }
                Err(_) => 0.0,
            },
        }
    }

    /// Most probable token; ties go to the lowest id. Sparse forms consider
    /// listed entries only.
    pub fn argmax(&self) -> u32 {
        let mut best = (0u32, f32::NEG_INFINITY);
        let mut consider = |t: u32, p: f32| {
            if p > best.1 {
                best = (t, p);
            }
        };
        match self {
            Distribution::Dense { probs } => {
                for (t, &p) in probs.iter().enumerate() {
                    consider(t as u32, p);
                }
            }
            Distribution::Sparse { entries, .. } => {
                for &(t, p) in entries {
                    consider(t, p);
                }
            }
        }
        best.0
    }

    /// Dense form. Sparse tails are spread uniformly over unlisted tokens and
    /// the expansion is flagged; with no unlisted tokens the tail is dropped.
    pub fn to_dense(&self) -> DenseExpansion {
        match self {
            Distribution::Dense { .. } => DenseExpansion {
                distribution: self.clone(),
                tail_spread: false,
            },
            Distribution::Sparse {
                vocab_size,
                entries,
                tail_mass,
            } => {
                let n = *vocab_size as usize;
                let unlisted = n.saturating_sub(entries.len());
                let share = if unlisted == 0 {
                    0.0
                } else {
                    *tail_mass / unlisted as f32
                };
                let mut probs = vec![share; n];
                for &(t, p) in entries {
                    if let Some(slot) = probs.get_mut(t as usize) {
                        *slot = p;
                    }
                }
                DenseExpansion {
                    distribution: Distribution::Dense { probs },
                    tail_spread: unlisted > 0 && *tail_mass > 0.0,
                }
            }
        }
    }

    /// (token, probability) pairs on the support, plus the tail bucket.
    pub(crate) fn support(&self) -> (Vec<(u32, f64)>, f64) {
        match self {
            Distribution::Dense { probs } => (
                probs
                    .iter()
                    .enumerate()
                    .map(|(t, &p)| (t as u32, p as f64))
                    .collect(),
                0.0,
            ),
            Distribution::Sparse {
                entries, tail_mass, ..
            } => (
                entries.iter().map(|&(t, p)| (t, p as f64)).collect(),
                *tail_mass as f64,
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_is_normalized() {
        let d = Distribution::from_logits(&[1.0, 2.0, 3.0, -50.0]);
        assert!(d.validate().is_ok());
        assert_eq!(d.argmax(), 2);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(Distribution::dense(vec![0.25; 4]).argmax(), 0);
    }

    #[test]
    fn validate_rejects_bad_mass_and_entries() {
        assert!(Distribution::dense(vec![0.5, 0.4]).validate().is_err());
        assert!(Distribution::dense(vec![1.5, -0.5]).validate().is_err());
        let s = Distribution::Sparse {
            vocab_size: 4,
            entries: vec![(2, 0.5), (1, 0.3)],
            tail_mass: 0.2,
        };
        assert!(s.validate().is_err());
        let s = Distribution::Sparse {
            vocab_size: 4,
            entries: vec![(1, 0.3), (2, 0.5)],
            tail_mass: 0.2,
        };
        assert!(s.validate().is_ok());
        assert!((s.prob(0) - 0.1).abs() < 1e-7);
    }

    #[test]
    fn full_support_sparse_drops_nothing() {
        let s = Distribution::dense(vec![0.5, 0.5]).to_sparse(2);
        let e = s.to_dense();
        assert!(!e.tail_spread);
        assert_eq!(e.distribution, Distribution::dense(vec![0.5, 0.5]));
    }

    proptest! {
        #[test]
        fn sparse_expansion_never_exceeds_unit_mass(
            logits in prop::collection::vec(-8.0f32..8.0, 2..300),
            k in 1usize..64,
        ) {
            let dense = Distribution::from_logits(&logits);
            let sparse = dense.to_sparse(k);
            prop_assert!(sparse.validate().is_ok());
            let expanded = sparse.to_dense();
            prop_assert!(expanded.distribution.mass() <= 1.0 + MASS_TOLERANCE);
            prop_assert_eq!(expanded.distribution.argmax(), dense.argmax());
            prop_assert_eq!(expanded.tail_spread, k < logits.len());
        }
    }
}
