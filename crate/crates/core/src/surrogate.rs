// SPDX-License-Identifier: MIT OR Apache-2.0

//! Sparse linear surrogate baseline.
//!
//! Random subsets of the context sentences are kept, the response is scored
//! under each subset, and an L1-penalized linear model maps the keep-mask to
//! the response log-likelihood. Sentence weights are the attribution scores.
//! With `n` random masks plus the full context this costs `n + 1` backend
//! calls.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attribution::{argmax_lowest, reference_pass, run_indexed};
use crate::backend::{Backend, Distribution, ScoreRequest};
use crate::error::{Error, Result};
use crate::segmenter::SegmentedContext;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoOptions {
    pub lambda: f64,
    /// Scale every column to unit variance before fitting.
    pub standardize: bool,
    pub max_sweeps: usize,
    /// Stop when no coefficient moves by more than this in a sweep.
    pub tolerance: f64,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            standardize: true,
            max_sweeps: 10_000,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    /// Coefficients on the original column scale.
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub sweeps: usize,
    pub converged: bool,
    /// Penalized objective after each sweep, in the fitting parametrization.
    pub objective_trace: Vec<f64>,
}

impl LassoFit {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.intercept + row.iter().zip(&self.weights).map(|(x, w)| x * w).sum::<f64>()
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

struct Prepared {
    /// Column-major centered (and possibly scaled) design.
    cols: Vec<Vec<f64>>,
    means: Vec<f64>,
    scales: Vec<f64>,
    y_mean: f64,
    y_centered: Vec<f64>,
}

fn prepare(x: &[Vec<f64>], y: &[f64], standardize: bool) -> Result<Prepared> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::SingularFit(format!("{} observations", x.len())));
    }
    let p = x[0].len();
    if x.iter().any(|r| r.len() != p) {
        return Err(Error::InvalidArgument("ragged design matrix".into()));
    }
    let n = x.len() as f64;
    let mut cols = Vec::with_capacity(p);
    let mut means = Vec::with_capacity(p);
    let mut scales = Vec::with_capacity(p);
    for k in 0..p {
        let mean = x.iter().map(|r| r[k]).sum::<f64>() / n;
        let centered: Vec<f64> = x.iter().map(|r| r[k] - mean).collect();
        let sd = (centered.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        let scale = if standardize && sd > 0.0 { sd } else { 1.0 };
        cols.push(centered.iter().map(|v| if sd > 0.0 { v / scale } else { 0.0 }).collect());
        means.push(mean);
        scales.push(scale);
    }
    if cols.iter().all(|c: &Vec<f64>| c.iter().all(|&v| v == 0.0)) {
        return Err(Error::SingularFit("every column is constant".into()));
    }
    let y_mean = y.iter().sum::<f64>() / n;
    Ok(Prepared {
        cols,
        means,
        scales,
        y_mean,
        y_centered: y.iter().map(|v| v - y_mean).collect(),
    })
}

/// Smallest penalty at which every coefficient is zero.
pub fn lambda_max(x: &[Vec<f64>], y: &[f64], standardize: bool) -> Result<f64> {
    let p = prepare(x, y, standardize)?;
    Ok(p.cols
        .iter()
        .map(|c| c.iter().zip(&p.y_centered).map(|(a, b)| a * b).sum::<f64>().abs())
        .fold(0.0, f64::max))
}

/// Minimize `1/2 sum (w.x + b - y)^2 + lambda ||w||_1` by cyclic coordinate
/// descent with soft thresholding. The intercept is unpenalized.
pub fn fit_lasso(x: &[Vec<f64>], y: &[f64], opts: &LassoOptions) -> Result<LassoFit> {
    if opts.lambda.is_nan() || opts.lambda < 0.0 {
        return Err(Error::InvalidArgument(format!("lambda {} must be >= 0", opts.lambda)));
    }
    let prep = prepare(x, y, opts.standardize)?;
    let p = prep.cols.len();
    let norms: Vec<f64> = prep.cols.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
    let mut w = vec![0.0f64; p];
    let mut r = prep.y_centered.clone();
    let objective = |r: &[f64], w: &[f64]| {
        0.5 * r.iter().map(|v| v * v).sum::<f64>() + opts.lambda * w.iter().map(|v| v.abs()).sum::<f64>()
    };
    let mut trace = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let mut max_delta = 0.0f64;
        for k in 0..p {
            if norms[k] == 0.0 {
                continue;
            }
            let col = &prep.cols[k];
            let rho = col.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() + w[k] * norms[k];
            let new = soft_threshold(rho, opts.lambda) / norms[k];
            let delta = new - w[k];
            if delta != 0.0 {
                for (ri, ci) in r.iter_mut().zip(col) {
                    *ri -= delta * ci;
                }
                w[k] = new;
            }
            max_delta = max_delta.max(delta.abs());
        }
        trace.push(objective(&r, &w));
        if max_delta < opts.tolerance {
            converged = true;
            break;
        }
    }
    let weights: Vec<f64> = w.iter().zip(&prep.scales).map(|(w, s)| w / s).collect();
    let intercept = prep.y_mean - weights.iter().zip(&prep.means).map(|(w, m)| w * m).sum::<f64>();
    Ok(LassoFit {
        weights,
        intercept,
        sweeps,
        converged,
        objective_trace: trace,
    })
}

/// `n` keep-masks over `sentences` items, each bit an independent fair coin,
/// followed by the all-ones mask.
pub fn sample_masks(sentences: usize, n: usize, seed: u64) -> Vec<Vec<bool>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masks: Vec<Vec<bool>> = (0..n)
        .map(|_| (0..sentences).map(|_| rng.gen_bool(0.5)).collect())
        .collect();
    masks.push(vec![true; sentences]);
    masks
}

/// Masks as a 0/1 design matrix.
pub fn design_matrix(masks: &[Vec<bool>]) -> Vec<Vec<f64>> {
    masks
        .iter()
        .map(|m| m.iter().map(|&b| f64::from(u8::from(b))).collect())
        .collect()
}

/// Fit the surrogate to masks and their response log-likelihoods with the
/// default options at penalty `lambda`.
pub fn fit_surrogate(masks: &[Vec<bool>], targets: &[f64], lambda: f64) -> Result<LassoFit> {
    fit_lasso(
        &design_matrix(masks),
        targets,
        &LassoOptions {
            lambda,
            ..Default::default()
        },
    )
}

/// Log-likelihood of `tokens` under aligned per-position distributions.
pub fn log_likelihood(distributions: &[Distribution], tokens: &[u32]) -> Result<f64> {
    if distributions.len() != tokens.len() {
        return Err(Error::LengthMismatch {
            left: distributions.len(),
            right: tokens.len(),
        });
    }
    let ll: f64 = distributions.iter().zip(tokens).map(|(d, &t)| d.prob(t).ln()).sum();
    if ll.is_nan() {
        return Err(Error::Numerical("log-likelihood is NaN".into()));
    }
    // a zero-probability token would poison the fit; floor it like the smallest f32
    Ok(ll.max(tokens.len() as f64 * (f32::MIN_POSITIVE as f64).ln()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub n_masks: usize,
    pub seed: u64,
    pub lasso: LassoOptions,
    pub max_new_tokens: usize,
    pub parallelism: Option<usize>,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            n_masks: 256,
            seed: 0,
            lasso: LassoOptions::default(),
            max_new_tokens: 32,
            parallelism: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateResult {
    pub response_tokens: Vec<u32>,
    pub weights: Vec<f64>,
    pub top: usize,
    pub fit: LassoFit,
    pub backend_calls: usize,
}

/// Fit the surrogate for one sample.
pub fn surrogate_attribute<B: Backend + ?Sized>(
    backend: &B,
    ctx: &SegmentedContext,
    query: &str,
    response: Option<&str>,
    config: &SurrogateConfig,
) -> Result<SurrogateResult> {
    if ctx.is_empty() {
        return Err(Error::EmptyContext);
    }
    let full = ctx.render_full(query)?;
    let prompt = backend.tokenize(&full.rendered)?;
    let reference = reference_pass(backend, &prompt, response, config.max_new_tokens)?;
    let full_ll = log_likelihood(&reference.distributions, &reference.tokens)?;

    // the trailing all-ones mask is the reference pass already made
    let masks = sample_masks(ctx.len(), config.n_masks, config.seed);
    let workers = config.parallelism.unwrap_or(backend.info().max_parallelism);
    let mut y = run_indexed(config.n_masks, workers, |i| {
        let p = ctx.render_masked(query, &masks[i])?;
        let tokens = backend.tokenize(&p.rendered)?;
        let scored = backend.score(&ScoreRequest::final_only(tokens, reference.tokens.clone()))?;
        log_likelihood(&scored.distributions, &reference.tokens)
    })?;

    y.push(full_ll);
    let fit = fit_lasso(&design_matrix(&masks), &y, &config.lasso)?;
    let top = argmax_lowest(fit.weights.iter().copied()).expect("non-empty context");
    Ok(SurrogateResult {
        response_tokens: reference.tokens,
        weights: fit.weights.clone(),
        top,
        fit,
        backend_calls: config.n_masks + 1,
    })
}
