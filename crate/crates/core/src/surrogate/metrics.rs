//! Accuracy and error metrics of a trained surrogate.

use ndarray::Array2;

use super::network::{forward, Network};
use super::SurrogateError;
use crate::dataset::Dataset;

/// Which half of the split to score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Test,
}

/// Pooled and per-output coefficients of determination plus percent errors,
/// all computed in standardized units.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Metrics {
    pub r2: f64,
    pub r2_per_output: Vec<f64>,
    pub avg_pct_err: f64,
    pub max_pct_err: f64,
}

/// Computes metrics from targets and predictions (standardized units).
///
/// The pooled R² flattens all (sample, output) pairs against the grand mean;
/// percent errors use the per-sample Euclidean norm over the output vector,
/// normalized by the largest target norm in the split.
pub fn metrics_from_predictions(
    y: &Array2<f64>,
    y_hat: &Array2<f64>,
) -> Result<Metrics, SurrogateError> {
    if y.dim() != y_hat.dim() {
        return Err(SurrogateError::DimensionMismatch {
            context: "metrics".into(),
            expected: y.len(),
            got: y_hat.len(),
        });
    }
    if y.nrows() == 0 {
        return Err(SurrogateError::EmptySplit);
    }
    let grand_mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_res: f64 = y
        .iter()
        .zip(y_hat.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let ss_tot: f64 = y.iter().map(|a| (a - grand_mean) * (a - grand_mean)).sum();
    let r2 = 1.0 - ss_res / ss_tot;

    let mut r2_per_output = Vec::with_capacity(y.ncols());
    for j in 0..y.ncols() {
        let col_mean: f64 = (0..y.nrows()).map(|i| y[(i, j)]).sum::<f64>() / y.nrows() as f64;
        let res: f64 = (0..y.nrows())
            .map(|i| (y[(i, j)] - y_hat[(i, j)]).powi(2))
            .sum();
        let tot: f64 = (0..y.nrows())
            .map(|i| (y[(i, j)] - col_mean).powi(2))
            .sum();
        r2_per_output.push(1.0 - res / tot);
    }

    let row_norm = |m: &Array2<f64>, i: usize| -> f64 {
        (0..m.ncols()).map(|j| m[(i, j)] * m[(i, j)]).sum::<f64>().sqrt()
    };
    let mut err_sum = 0.0;
    let mut err_max: f64 = 0.0;
    let mut target_max: f64 = 0.0;
    for i in 0..y.nrows() {
        let mut e = 0.0;
        for j in 0..y.ncols() {
            let d = y[(i, j)] - y_hat[(i, j)];
            e += d * d;
        }
        let e = e.sqrt();
        err_sum += e;
        err_max = err_max.max(e);
        target_max = target_max.max(row_norm(y, i));
    }
    let (avg_pct_err, max_pct_err) = if target_max > 0.0 {
        (
            100.0 * (err_sum / y.nrows() as f64) / target_max,
            100.0 * err_max / target_max,
        )
    } else if err_max == 0.0 {
        (0.0, 0.0)
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    Ok(Metrics {
        r2,
        r2_per_output,
        avg_pct_err,
        max_pct_err,
    })
}

/// Scores a trained network on one half of the dataset split.
pub fn evaluate(net: &Network, ds: &Dataset, which: SplitKind) -> Result<Metrics, SurrogateError> {
    let rows = match which {
        SplitKind::Train => ds.train_rows()?,
        SplitKind::Test => ds.test_rows()?,
    };
    if rows.is_empty() {
        return Err(SurrogateError::EmptySplit);
    }
    let x = ds.standardized_inputs(rows)?;
    let y = ds.standardized_outputs(rows)?;
    let y_hat = forward(net, &x, false, 0)?;
    metrics_from_predictions(&y, &y_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;
    use approx::assert_relative_eq;

    #[test]
    fn perfect_predictor_scores_one() {
        let mut rng = Prng::from_seed(2);
        let y = Array2::from_shape_fn((20, 6), |_| rng.uniform(-2.0, 2.0));
        let m = metrics_from_predictions(&y, &y.clone()).unwrap();
        assert_eq!(m.r2, 1.0);
        assert_eq!(m.avg_pct_err, 0.0);
        assert_eq!(m.max_pct_err, 0.0);
        assert!(m.r2_per_output.iter().all(|&r| r == 1.0));
    }

    #[test]
    fn grand_mean_predictor_scores_zero() {
        let mut rng = Prng::from_seed(3);
        let y = Array2::from_shape_fn((50, 4), |_| rng.uniform(-1.0, 3.0));
        let grand = y.iter().sum::<f64>() / y.len() as f64;
        let y_hat = Array2::from_elem(y.dim(), grand);
        let m = metrics_from_predictions(&y, &y_hat).unwrap();
        assert_relative_eq!(m.r2, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn avg_never_exceeds_max() {
        let mut rng = Prng::from_seed(4);
        for _ in 0..20 {
            let y = Array2::from_shape_fn((30, 5), |_| rng.uniform(-1.0, 1.0));
            let y_hat = Array2::from_shape_fn((30, 5), |_| rng.uniform(-1.0, 1.0));
            let m = metrics_from_predictions(&y, &y_hat).unwrap();
            assert!(m.avg_pct_err <= m.max_pct_err);
        }
    }

    #[test]
    fn r2_is_one_iff_exact() {
        let mut rng = Prng::from_seed(5);
        let y = Array2::from_shape_fn((10, 3), |_| rng.uniform(-1.0, 1.0));
        let mut y_hat = y.clone();
        y_hat[(3, 1)] += 1e-6;
        let m = metrics_from_predictions(&y, &y_hat).unwrap();
        assert!(m.r2 < 1.0);
    }

    #[test]
    fn empty_split_is_rejected() {
        let y = Array2::zeros((0, 3));
        assert!(matches!(
            metrics_from_predictions(&y, &y.clone()),
            Err(SurrogateError::EmptySplit)
        ));
    }
}
