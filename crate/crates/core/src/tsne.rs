//! Exact t-SNE.
//!
//! Per-point Gaussian bandwidths are found by bisection on the precision so
//! that each conditional distribution has the requested perplexity. The
//! symmetrized affinities `P` are matched by a Student-t kernel in two
//! dimensions through gradient descent with momentum and per-coordinate
//! gains. All pairwise work is O(n^2) and parallelized over rows.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Largest allowed deviation between achieved and requested perplexity.
pub const PERPLEXITY_TOLERANCE: f64 = 1e-5;
const MAX_BISECTION_STEPS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    /// Iterations run with exaggerated `P` and the initial momentum.
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            seed: 0,
        }
    }
}

/// Symmetrized affinity matrix plus the perplexity reached for every row.
#[derive(Debug, Clone)]
pub struct Affinities {
    pub n: usize,
    /// Row-major `n x n`, symmetric, zero diagonal, sums to one.
    pub p: Vec<f64>,
    pub row_perplexity: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TsneResult {
    /// `n x 2` coordinates.
    pub embedding: Tensor,
    /// Final KL(P || Q) without exaggeration.
    pub kl_divergence: f64,
}

pub fn squared_distances(x: &Tensor) -> Vec<f64> {
    let n = x.rows();
    let mut d = vec![0.0; n * n];
    d.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
        let xi = x.row(i);
        for (j, out) in row.iter_mut().enumerate() {
            *out = xi
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
        }
    });
    d
}

/// Conditional distribution `p_{j|i}` for one row of squared distances at
/// precision `beta`; returns the probabilities and their Shannon entropy.
fn conditional(dist: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let d_min = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    let mut weighted = 0.0;
    for (j, (&d, o)) in dist.iter().zip(out.iter_mut()).enumerate() {
        if j == i {
            *o = 0.0;
            continue;
        }
        let shifted = d - d_min;
        let e = (-beta * shifted).exp();
        *o = e;
        sum += e;
        weighted += shifted * e;
    }
    out.iter_mut().for_each(|o| *o /= sum);
    sum.ln() + beta * weighted / sum
}

/// Bisection on the precision of row `i`; returns the achieved perplexity.
fn calibrate_row(dist: &[f64], i: usize, perplexity: f64, out: &mut [f64]) -> f64 {
    let n = dist.len();
    let mean = dist.iter().sum::<f64>() / (n - 1) as f64;
    let mut beta = if mean > 0.0 { 1.0 / mean } else { 1.0 };
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut achieved = f64::NAN;
    for _ in 0..MAX_BISECTION_STEPS {
        let entropy = conditional(dist, i, beta, out);
        achieved = entropy.exp();
        if (achieved - perplexity).abs() <= PERPLEXITY_TOLERANCE {
            break;
        }
        if achieved > perplexity {
            // Too flat: sharpen.
            lo = beta;
            beta = if hi.is_finite() {
                0.5 * (beta + hi)
            } else {
                beta * 2.0
            };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
    }
    achieved
}

pub fn joint_probabilities(x: &Tensor, perplexity: f64) -> Result<Affinities> {
    let n = x.rows();
    if n < 3 {
        return Err(Error::EmptyData(format!(
            "t-SNE needs at least 3 points, got {n}"
        )));
    }
    if !(perplexity > 1.0 && perplexity < n as f64) {
        return Err(Error::BadPerplexity {
            perplexity,
            n_points: n,
        });
    }
    let d = squared_distances(x);
    let mut cond = vec![0.0; n * n];
    let row_perplexity: Vec<f64> = cond
        .par_chunks_mut(n)
        .enumerate()
        .map(|(i, row)| calibrate_row(&d[i * n..(i + 1) * n], i, perplexity, row))
        .collect();
    let mut p = vec![0.0; n * n];
    let scale = 1.0 / (2.0 * n as f64);
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) * scale;
        }
    }
    Ok(Affinities {
        n,
        p,
        row_perplexity,
    })
}

fn student_t_sum(y: &[f64], n: usize) -> f64 {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let (yi0, yi1) = (y[2 * i], y[2 * i + 1]);
            (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let (a, b) = (yi0 - y[2 * j], yi1 - y[2 * j + 1]);
                    1.0 / (1.0 + a * a + b * b)
                })
                .sum::<f64>()
        })
        .collect::<Vec<_>>()
        .iter()
        .sum()
}

/// KL(P || Q) for coordinates `y` (interleaved x, y pairs).
pub fn kl_divergence(aff: &Affinities, y: &[f64]) -> f64 {
    let n = aff.n;
    let z = student_t_sum(y, n);
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.0;
            for j in 0..n {
                let pij = aff.p[i * n + j];
                if j == i || pij <= 0.0 {
                    continue;
                }
                let (a, b) = (y[2 * i] - y[2 * j], y[2 * i + 1] - y[2 * j + 1]);
                let q = 1.0 / (1.0 + a * a + b * b) / z;
                acc += pij * (pij / q.max(f64::MIN_POSITIVE)).ln();
            }
            acc
        })
        .collect::<Vec<_>>()
        .iter()
        .sum()
}

pub fn tsne_embed(x: &Tensor, cfg: &TsneConfig) -> Result<TsneResult> {
    let aff = joint_probabilities(x, cfg.perplexity)?;
    tsne_from_affinities(&aff, cfg)
}

pub fn tsne_from_affinities(aff: &Affinities, cfg: &TsneConfig) -> Result<TsneResult> {
    if !(cfg.learning_rate > 0.0) || !(cfg.early_exaggeration >= 1.0) {
        return Err(Error::BadConfig(format!("invalid t-SNE settings {cfg:?}")));
    }
    let n = aff.n;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1e-2).expect("valid normal");
    let mut y: Vec<f64> = (0..2 * n).map(|_| normal.sample(&mut rng)).collect();
    let mut update = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let mut grad = vec![0.0; 2 * n];

    for iter in 0..cfg.iterations {
        let early = iter < cfg.exaggeration_iterations;
        let exaggeration = if early { cfg.early_exaggeration } else { 1.0 };
        let momentum = if early {
            cfg.initial_momentum
        } else {
            cfg.final_momentum
        };
        let z = student_t_sum(&y, n);
        let y_ref = &y;
        grad.par_chunks_mut(2).enumerate().for_each(|(i, g)| {
            let (yi0, yi1) = (y_ref[2 * i], y_ref[2 * i + 1]);
            let (mut g0, mut g1) = (0.0, 0.0);
            for j in 0..n {
                if j == i {
                    continue;
                }
                let (a, b) = (yi0 - y_ref[2 * j], yi1 - y_ref[2 * j + 1]);
                let num = 1.0 / (1.0 + a * a + b * b);
                let coeff = (exaggeration * aff.p[i * n + j] - num / z) * num;
                g0 += coeff * a;
                g1 += coeff * b;
            }
            g[0] = 4.0 * g0;
            g[1] = 4.0 * g1;
        });
        for k in 0..2 * n {
            let same_sign = (grad[k] > 0.0) == (update[k] > 0.0);
            gains[k] = if same_sign {
                gains[k] * 0.8
            } else {
                gains[k] + 0.2
            };
            gains[k] = gains[k].max(0.01);
            update[k] = momentum * update[k] - cfg.learning_rate * gains[k] * grad[k];
            y[k] += update[k];
        }
        for c in 0..2 {
            let mean = (0..n).map(|i| y[2 * i + c]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[2 * i + c] -= mean);
        }
    }
    let kl = kl_divergence(aff, &y);
    Ok(TsneResult {
        embedding: Tensor::from_parts(vec![n, 2], y),
        kl_divergence: kl,
    })
}
