//! Variance-based global sensitivity analysis: first-order and total Sobol
//! indices over the Saltelli sampling scheme, with an exponential
//! sample-size doubling protocol.
//!
//! Estimators: Saltelli-2010 for first-order indices,
//! `S_i = mean(f_B ⊙ (f_ABi − f_A)) / V`, and Jansen for total effects,
//! `S_Ti = mean((f_A − f_ABi)²) / (2V)`, with `V` the population variance of
//! the pooled `f_A`/`f_B` evaluations. Each doubling level draws fresh
//! matrices from a level-derived seed; the reported index is the mean of the
//! last three levels.

use ndarray::Array2;
use thiserror::Error;

use crate::evaluator::{BatchEvaluator, EvaluatorError};
use crate::rng::Prng;

#[derive(Debug, Error)]
pub enum SobolError {
    #[error("invalid distribution range in component {component}: lo {lo} must be < hi {hi}")]
    InvalidRange { component: usize, lo: f64, hi: f64 },
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("output {output} has (near-)zero variance; Sobol indices are undefined")]
    ZeroVariance { output: usize },
    #[error("invalid convergence schedule: n_start {n_start}, n_max {n_max}")]
    InvalidSchedule { n_start: usize, n_max: usize },
    #[error("evaluator failed at level n = {n}: {source}")]
    Evaluator {
        n: usize,
        #[source]
        source: EvaluatorError,
    },
}

/// The Saltelli design: two independent sample matrices plus the `d` hybrid
/// matrices `AB_i` (columns of `A` with column `i` taken from `B`), for a
/// total of `N (d + 2)` model evaluations.
#[derive(Debug)]
pub struct SaltelliMatrices {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub ab: Vec<Array2<f64>>,
}

pub fn saltelli_matrices(
    n: usize,
    dists: &[(f64, f64)],
    seed: u64,
) -> Result<SaltelliMatrices, SobolError> {
    if n < 2 {
        return Err(SobolError::TooFewSamples(n));
    }
    for (j, &(lo, hi)) in dists.iter().enumerate() {
        if !(lo < hi) {
            return Err(SobolError::InvalidRange {
                component: j,
                lo,
                hi,
            });
        }
    }
    let d = dists.len();
    let mut rng = Prng::from_seed(seed);
    let fill = |rng: &mut Prng| {
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            for &(lo, hi) in dists {
                data.push(rng.uniform(lo, hi));
            }
        }
        Array2::from_shape_vec((n, d), data).expect("shape matches fill")
    };
    let a = fill(&mut rng);
    let b = fill(&mut rng);
    let mut ab = Vec::with_capacity(d);
    for i in 0..d {
        let mut m = a.clone();
        m.column_mut(i).assign(&b.column(i));
        ab.push(m);
    }
    Ok(SaltelliMatrices { a, b, ab })
}

/// First-order and total indices for every output column, as `d × n_out`
/// matrices.
#[derive(Debug)]
pub struct IndexEstimate {
    pub first: Array2<f64>,
    pub total: Array2<f64>,
}

pub fn estimate_indices(
    f_a: &Array2<f64>,
    f_b: &Array2<f64>,
    f_ab: &[Array2<f64>],
) -> Result<IndexEstimate, SobolError> {
    let n = f_a.nrows();
    let n_out = f_a.ncols();
    let d = f_ab.len();
    let mut first = Array2::zeros((d, n_out));
    let mut total = Array2::zeros((d, n_out));
    for j in 0..n_out {
        // Population variance of the pooled A and B evaluations.
        let mut sum = 0.0;
        for i in 0..n {
            sum += f_a[(i, j)] + f_b[(i, j)];
        }
        let mean = sum / (2 * n) as f64;
        let mut var = 0.0;
        for i in 0..n {
            var += (f_a[(i, j)] - mean).powi(2) + (f_b[(i, j)] - mean).powi(2);
        }
        let var = var / (2 * n) as f64;
        if var < 1e-30 {
            return Err(SobolError::ZeroVariance { output: j });
        }
        for (k, fab) in f_ab.iter().enumerate() {
            let mut s_acc = 0.0;
            let mut t_acc = 0.0;
            for i in 0..n {
                s_acc += f_b[(i, j)] * (fab[(i, j)] - f_a[(i, j)]);
                let diff = f_a[(i, j)] - fab[(i, j)];
                t_acc += diff * diff;
            }
            first[(k, j)] = s_acc / n as f64 / var;
            total[(k, j)] = t_acc / (2.0 * n as f64) / var;
        }
    }
    Ok(IndexEstimate { first, total })
}

/// One convergence level: estimates at sample size `n`.
#[derive(Debug)]
pub struct LevelEstimate {
    pub n: usize,
    pub first: Array2<f64>,
    pub total: Array2<f64>,
}

/// Full convergence run: the per-level trace and the final averaged indices.
#[derive(Debug)]
pub struct SobolResult {
    pub levels: Vec<LevelEstimate>,
    /// Mean of the last (up to) three level estimates, reported as-is.
    pub first: Array2<f64>,
    pub total: Array2<f64>,
    /// (input, output) pairs whose final estimate is negative; flagged,
    /// never clamped.
    pub negative_final: Vec<(usize, usize)>,
}

/// Doubling sample sizes `n_start, 2 n_start, ...` up to `n_max` inclusive.
pub fn doubling_schedule(n_start: usize, n_max: usize) -> Result<Vec<usize>, SobolError> {
    if n_start < 2 || n_max < n_start {
        return Err(SobolError::InvalidSchedule { n_start, n_max });
    }
    let mut levels = Vec::new();
    let mut n = n_start;
    while n <= n_max {
        levels.push(n);
        match n.checked_mul(2) {
            Some(next) => n = next,
            None => break,
        }
    }
    Ok(levels)
}

/// Runs the doubling protocol: at each level fresh Saltelli matrices are
/// drawn with seed `seed + level_index` and evaluated in one batch.
pub fn run_convergence(
    dists: &[(f64, f64)],
    n_start: usize,
    n_max: usize,
    seed: u64,
    evaluator: &dyn BatchEvaluator,
) -> Result<SobolResult, SobolError> {
    let schedule = doubling_schedule(n_start, n_max)?;
    let d = dists.len();
    let n_out = evaluator.output_dim();
    let mut levels = Vec::with_capacity(schedule.len());
    for (k, &n) in schedule.iter().enumerate() {
        let m = saltelli_matrices(n, dists, seed.wrapping_add(k as u64))?;
        // Stack A, B, AB_1..AB_d into one evaluator call.
        let mut stacked = Array2::zeros(((d + 2) * n, d));
        stacked.slice_mut(ndarray::s![0..n, ..]).assign(&m.a);
        stacked.slice_mut(ndarray::s![n..2 * n, ..]).assign(&m.b);
        for (i, ab) in m.ab.iter().enumerate() {
            stacked
                .slice_mut(ndarray::s![(2 + i) * n..(3 + i) * n, ..])
                .assign(ab);
        }
        let f = evaluator
            .evaluate(&stacked)
            .map_err(|source| SobolError::Evaluator { n, source })?;
        let f_a = f.slice(ndarray::s![0..n, ..]).to_owned();
        let f_b = f.slice(ndarray::s![n..2 * n, ..]).to_owned();
        let f_ab: Vec<Array2<f64>> = (0..d)
            .map(|i| f.slice(ndarray::s![(2 + i) * n..(3 + i) * n, ..]).to_owned())
            .collect();
        let est = estimate_indices(&f_a, &f_b, &f_ab)?;
        levels.push(LevelEstimate {
            n,
            first: est.first,
            total: est.total,
        });
    }

    let tail = levels.len().min(3);
    let mut first = Array2::zeros((d, n_out));
    let mut total = Array2::zeros((d, n_out));
    for level in &levels[levels.len() - tail..] {
        first += &level.first;
        total += &level.total;
    }
    first /= tail as f64;
    total /= tail as f64;
    let mut negative_final = Vec::new();
    for i in 0..d {
        for j in 0..n_out {
            if first[(i, j)] < 0.0 || total[(i, j)] < 0.0 {
                negative_final.push((i, j));
            }
        }
    }
    Ok(SobolResult {
        levels,
        first,
        total,
        negative_final,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::FnEvaluator;

    #[test]
    fn ab_matrices_differ_in_exactly_one_column() {
        let dists = vec![(0.0, 1.0); 4];
        let m = saltelli_matrices(64, &dists, 3).unwrap();
        assert_eq!(m.ab.len(), 4);
        for (i, ab) in m.ab.iter().enumerate() {
            for row in 0..64 {
                for col in 0..4 {
                    if col == i {
                        assert_eq!(ab[(row, col)], m.b[(row, col)]);
                    } else {
                        assert_eq!(ab[(row, col)], m.a[(row, col)]);
                    }
                }
            }
        }
    }

    #[test]
    fn saltelli_deterministic_and_distinct() {
        let dists = vec![(2.0, 5.0); 4];
        let m1 = saltelli_matrices(32, &dists, 9).unwrap();
        let m2 = saltelli_matrices(32, &dists, 9).unwrap();
        assert_eq!(m1.a, m2.a);
        assert_eq!(m1.b, m2.b);
        assert_ne!(m1.a, m1.b);
    }

    #[test]
    fn saltelli_rejects_bad_input() {
        assert!(matches!(
            saltelli_matrices(1, &[(0.0, 1.0)], 0),
            Err(SobolError::TooFewSamples(1))
        ));
        assert!(matches!(
            saltelli_matrices(8, &[(1.0, 1.0)], 0),
            Err(SobolError::InvalidRange { .. })
        ));
    }

    #[test]
    fn constant_output_is_rejected() {
        let dists = vec![(0.0, 1.0); 2];
        let ev = FnEvaluator {
            f: |_x: &[f64]| vec![3.25],
            outputs: 1,
        };
        let err = run_convergence(&dists, 64, 64, 1, &ev).unwrap_err();
        assert!(matches!(err, SobolError::ZeroVariance { output: 0 }));
    }

    #[test]
    fn single_input_function_has_unit_indices() {
        let dists = vec![(0.0, 1.0); 3];
        let ev = FnEvaluator {
            f: |x: &[f64]| vec![x[0]],
            outputs: 1,
        };
        let n = 1 << 14;
        let m = saltelli_matrices(n, &dists, 10).unwrap();
        let f_a = ev.evaluate(&m.a).unwrap();
        let f_b = ev.evaluate(&m.b).unwrap();
        let f_ab: Vec<_> = m.ab.iter().map(|ab| ev.evaluate(ab).unwrap()).collect();
        let est = estimate_indices(&f_a, &f_b, &f_ab).unwrap();
        assert!((est.first[(0, 0)] - 1.0).abs() < 0.02, "{}", est.first[(0, 0)]);
        assert!((est.total[(0, 0)] - 1.0).abs() < 0.02, "{}", est.total[(0, 0)]);
        for i in 1..3 {
            assert!(est.first[(i, 0)].abs() < 0.02);
            assert!(est.total[(i, 0)].abs() < 0.02);
        }
    }

    #[test]
    fn additive_two_input_function_variance_split() {
        let dists = vec![(0.0, 1.0); 2];
        let ev = FnEvaluator {
            f: |x: &[f64]| vec![x[0] + 2.0 * x[1]],
            outputs: 1,
        };
        let n = 1 << 14;
        let m = saltelli_matrices(n, &dists, 10).unwrap();
        let f_a = ev.evaluate(&m.a).unwrap();
        let f_b = ev.evaluate(&m.b).unwrap();
        let f_ab: Vec<_> = m.ab.iter().map(|ab| ev.evaluate(ab).unwrap()).collect();
        let est = estimate_indices(&f_a, &f_b, &f_ab).unwrap();
        // Var splits 1/12 : 4/12.
        assert!((est.total[(0, 0)] - 0.2).abs() < 0.02, "{}", est.total[(0, 0)]);
        assert!((est.total[(1, 0)] - 0.8).abs() < 0.02, "{}", est.total[(1, 0)]);
        // Additive function: first-order equals total within MC noise.
        for i in 0..2 {
            assert!((est.first[(i, 0)] - est.total[(i, 0)]).abs() < 0.02);
        }
        let sum_first = est.first[(0, 0)] + est.first[(1, 0)];
        assert!(sum_first <= 1.05, "sum of first-order {sum_first}");
    }

    #[test]
    fn schedule_lengths() {
        assert_eq!(doubling_schedule(100, 200_000).unwrap().len(), 11);
        assert_eq!(
            doubling_schedule(100, 200_000).unwrap().last().copied(),
            Some(102_400)
        );
        assert_eq!(doubling_schedule(100, 100).unwrap(), vec![100]);
        assert!(doubling_schedule(100, 50).is_err());
    }

    #[test]
    fn convergence_trace_and_final_average() {
        let dists = vec![(0.0, 1.0); 2];
        let ev = FnEvaluator {
            f: |x: &[f64]| vec![x[0] + 2.0 * x[1]],
            outputs: 1,
        };
        let result = run_convergence(&dists, 100, 1600, 5, &ev).unwrap();
        assert_eq!(result.levels.len(), 5);
        let tail = &result.levels[2..];
        let manual: f64 = tail.iter().map(|l| l.total[(0, 0)]).sum::<f64>() / 3.0;
        assert!((result.total[(0, 0)] - manual).abs() < 1e-15);
        assert!(result.negative_final.len() <= 2);
    }
}
