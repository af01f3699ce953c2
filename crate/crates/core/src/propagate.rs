//! Monte-Carlo uncertainty propagation: pushes independent uniform input
//! distributions through an evaluator and reports per-output means, standard
//! deviations, a doubling convergence trace and density-normalized
//! histograms.
//!
//! The trace reuses nested sample prefixes (the first 100 rows, the first
//! 200, ...), so successive levels are monotone refinements of the same
//! draw; statistics use Welford accumulation with the unbiased (N−1)
//! divisor.

use ndarray::Array2;
use thiserror::Error;

use crate::evaluator::{BatchEvaluator, EvaluatorError};
use crate::rng::Prng;

#[derive(Debug, Error)]
pub enum PropagateError {
    #[error("invalid distribution range in component {component}: lo {lo} must be < hi {hi}")]
    InvalidRange { component: usize, lo: f64, hi: f64 },
    #[error("n_final {0} must be n_start (100) times a power of two")]
    InvalidSchedule(usize),
    #[error("histogram needs at least one sample")]
    EmptySamples,
    #[error("evaluator failed: {source}")]
    Evaluator {
        #[source]
        source: EvaluatorError,
    },
}

pub const TRACE_START: usize = 100;

/// Density-normalized histogram with mean / mean±std annotations.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Histogram {
    /// `n_bins + 1` monotone edges.
    pub bin_edges: Vec<f64>,
    /// Densities such that Σ density·width = 1.
    pub densities: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// One convergence level of the trace.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct UqLevel {
    pub n: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Full uncertainty-propagation result.
#[derive(Debug)]
pub struct UqResult {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub levels: Vec<UqLevel>,
    pub histograms: Vec<Histogram>,
}

/// Equal-width histogram over `[min, max]` with `count/(N·width)` densities.
/// A degenerate sample set (all values equal) falls back to one bin of
/// width `max(1e-12, |value|·1e-9)` centred on the value.
pub fn histogram(samples: &[f64], n_bins: usize) -> Result<Histogram, PropagateError> {
    if samples.is_empty() || n_bins == 0 {
        return Err(PropagateError::EmptySamples);
    }
    let n = samples.len();
    let (mean, std) = mean_std(samples);
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        let width = (lo.abs() * 1e-9).max(1e-12);
        let edges = vec![lo - width / 2.0, lo + width / 2.0];
        // Density from the realized edge gap, so the area is exactly one
        // even after rounding of the edges.
        let realized = edges[1] - edges[0];
        return Ok(Histogram {
            bin_edges: edges,
            densities: vec![1.0 / realized],
            mean,
            std,
        });
    }
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    for &v in samples {
        let idx = (((v - lo) / width) as usize).min(n_bins - 1);
        counts[idx] += 1;
    }
    let mut bin_edges = Vec::with_capacity(n_bins + 1);
    for k in 0..=n_bins {
        bin_edges.push(lo + width * k as f64);
    }
    let densities = counts
        .iter()
        .map(|&c| c as f64 / (n as f64 * width))
        .collect();
    Ok(Histogram {
        bin_edges,
        densities,
        mean,
        std,
    })
}

/// One-pass Welford mean and unbiased standard deviation.
fn mean_std(samples: &[f64]) -> (f64, f64) {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &v) in samples.iter().enumerate() {
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    let std = if samples.len() > 1 {
        (m2 / (samples.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Draws `n_final` rows once, evaluates them in a single batch, and reports
/// statistics over the doubling prefixes `100, 200, ..., n_final`.
pub fn propagate(
    dists: &[(f64, f64)],
    evaluator: &dyn BatchEvaluator,
    n_final: usize,
    n_bins: usize,
    seed: u64,
) -> Result<UqResult, PropagateError> {
    for (j, &(lo, hi)) in dists.iter().enumerate() {
        if !(lo < hi) {
            return Err(PropagateError::InvalidRange {
                component: j,
                lo,
                hi,
            });
        }
    }
    let mut levels_n = Vec::new();
    let mut n = TRACE_START;
    while n < n_final {
        levels_n.push(n);
        n *= 2;
    }
    if n != n_final {
        return Err(PropagateError::InvalidSchedule(n_final));
    }
    levels_n.push(n_final);

    let d = dists.len();
    let mut rng = Prng::from_seed(seed);
    let mut data = Vec::with_capacity(n_final * d);
    for _ in 0..n_final {
        for &(lo, hi) in dists {
            data.push(rng.uniform(lo, hi));
        }
    }
    let inputs = Array2::from_shape_vec((n_final, d), data).expect("shape matches fill");
    let outputs = evaluator
        .evaluate(&inputs)
        .map_err(|source| PropagateError::Evaluator { source })?;
    let n_out = outputs.ncols();

    let mut levels = Vec::with_capacity(levels_n.len());
    for &level_n in &levels_n {
        let mut mean = Vec::with_capacity(n_out);
        let mut std = Vec::with_capacity(n_out);
        for j in 0..n_out {
            let col: Vec<f64> = (0..level_n).map(|i| outputs[(i, j)]).collect();
            let (m, s) = mean_std(&col);
            mean.push(m);
            std.push(s);
        }
        levels.push(UqLevel {
            n: level_n,
            mean,
            std,
        });
    }
    let final_level = levels.last().expect("at least one level").clone();

    let mut histograms = Vec::with_capacity(n_out);
    for j in 0..n_out {
        let col: Vec<f64> = (0..n_final).map(|i| outputs[(i, j)]).collect();
        histograms.push(histogram(&col, n_bins)?);
    }
    Ok(UqResult {
        mean: final_level.mean,
        std: final_level.std,
        levels,
        histograms,
    })
}

/// Σ density·width over all bins; exposed for the unit-area checks.
pub fn histogram_area(h: &Histogram) -> f64 {
    h.densities
        .iter()
        .zip(h.bin_edges.windows(2))
        .map(|(d, e)| d * (e[1] - e[0]))
        .sum()
}
