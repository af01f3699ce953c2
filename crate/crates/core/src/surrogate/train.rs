//! Training loop and raw-unit prediction.

use ndarray::Array2;

use super::network::{backward_with_loss, forward, init, Adam, Network, NetworkConfig};
use super::SurrogateError;
use crate::dataset::{destandardize, Dataset};
use crate::rng::{derive_seed, Prng};

/// Per-epoch loss record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug)]
pub struct TrainResult {
    pub network: Network,
    pub history: Vec<EpochStats>,
}

fn gather_rows(data: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), data.ncols()));
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&data.row(r));
    }
    out
}

/// Trains a freshly initialized network on the standardized training split.
///
/// Protocol: a run-level seeded shuffle carves the last `validation_split`
/// fraction of the training rows into a validation set that stays fixed
/// across epochs; the remaining rows are reshuffled every epoch and consumed
/// in mini-batches, each batch's dropout masks drawn from a per-batch seed.
/// No early stopping; the network after the last epoch is returned.
pub fn train(ds: &Dataset, config: &NetworkConfig) -> Result<TrainResult, SurrogateError> {
    config.validate()?;
    let train_rows = ds.train_rows()?;
    let x_all = ds.standardized_inputs(train_rows)?;
    let y_all = ds.standardized_outputs(train_rows)?;
    if x_all.ncols() != config.input_dim || y_all.ncols() != config.output_dim {
        return Err(SurrogateError::DimensionMismatch {
            context: "dataset columns vs network config".into(),
            expected: config.input_dim + config.output_dim,
            got: x_all.ncols() + y_all.ncols(),
        });
    }

    let n = x_all.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut carve_rng = Prng::from_seed(derive_seed(config.seed, 1));
    carve_rng.shuffle(&mut order);
    let n_val = ((config.validation_split * n as f64).round() as usize).clamp(1, n - 1);
    let val_rows = order.split_off(n - n_val);
    let mut sgd_rows = order;

    let x_val = gather_rows(&x_all, &val_rows);
    let y_val = gather_rows(&y_all, &val_rows);

    let mut net = init(config)?;
    net.norm = Some(ds.norm_ref()?.clone());
    let mut adam = Adam::new(&net, config.learning_rate);
    let mut shuffle_rng = Prng::from_seed(derive_seed(config.seed, 2));
    let mut dropout_seeds = Prng::from_seed(derive_seed(config.seed, 3));

    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        shuffle_rng.shuffle(&mut sgd_rows);
        let mut weighted_loss = 0.0;
        for batch in sgd_rows.chunks(config.batch_size) {
            let bx = gather_rows(&x_all, batch);
            let by = gather_rows(&y_all, batch);
            let seed = dropout_seeds.next_u64();
            let (grads, loss) = backward_with_loss(&net, &bx, &by, seed)?;
            if !loss.is_finite() {
                return Err(SurrogateError::NonFiniteLoss { epoch });
            }
            adam.step(&mut net, &grads);
            weighted_loss += loss * batch.len() as f64;
        }
        let train_loss = weighted_loss / sgd_rows.len() as f64;
        let val_pred = forward(&net, &x_val, false, 0)?;
        let val_loss = super::network::mse(&y_val, &val_pred)?;
        if !val_loss.is_finite() {
            return Err(SurrogateError::NonFiniteLoss { epoch });
        }
        if net
            .layers
            .iter()
            .any(|l| l.w.iter().chain(l.b.iter()).any(|v| !v.is_finite()))
        {
            return Err(SurrogateError::NonFiniteLoss { epoch });
        }
        history.push(EpochStats {
            train_loss,
            val_loss,
        });
    }
    Ok(TrainResult {
        network: net,
        history,
    })
}

/// Raw-unit prediction: standardize with the stored statistics, run the
/// dropout-free forward pass, destandardize the outputs.
pub fn predict(net: &Network, x_raw: &Array2<f64>) -> Result<Array2<f64>, SurrogateError> {
    let norm = net.norm.as_ref().ok_or(SurrogateError::MissingNormStats)?;
    if x_raw.ncols() != net.config.input_dim {
        return Err(SurrogateError::DimensionMismatch {
            context: "predict".into(),
            expected: net.config.input_dim,
            got: x_raw.ncols(),
        });
    }
    let mut x = x_raw.clone();
    for mut row in x.rows_mut() {
        for j in 0..row.len() {
            row[j] = (row[j] - norm.input_mean[j]) / norm.input_std[j];
        }
    }
    let y_std = forward(net, &x, false, 0)?;
    Ok(destandardize(&y_std, &norm.output_mean, &norm.output_std))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{NormStats, Split};
    use approx::assert_relative_eq;

    /// Builds a dataset for the linear map y = A x with standardized splits.
    fn linear_dataset(n: usize, seed: u64) -> Dataset {
        let mut rng = Prng::from_seed(seed);
        let a = [
            [0.8, -0.4, 0.2],
            [0.1, 0.9, -0.3],
            [-0.5, 0.25, 0.7],
            [0.3, 0.3, 0.3],
        ];
        let inputs = Array2::from_shape_fn((n, 4), |_| rng.uniform(-1.0, 1.0));
        let mut outputs = Array2::zeros((n, 3));
        for i in 0..n {
            for j in 0..3 {
                outputs[(i, j)] = (0..4).map(|k| inputs[(i, k)] * a[k][j]).sum();
            }
        }
        let mut ds = Dataset {
            inputs,
            outputs,
            split: None,
            norm: None,
        };
        ds.split_fraction(0.9, 3).unwrap();
        // Bypass the 24-label standardize helper: compute stats directly.
        let train = ds.split.as_ref().unwrap().train_idx.clone();
        let stats = |data: &Array2<f64>| {
            let m = train.len() as f64;
            let mut mean = vec![0.0; data.ncols()];
            let mut std = vec![0.0; data.ncols()];
            for j in 0..data.ncols() {
                mean[j] = train.iter().map(|&r| data[(r, j)]).sum::<f64>() / m;
                std[j] = (train
                    .iter()
                    .map(|&r| (data[(r, j)] - mean[j]).powi(2))
                    .sum::<f64>()
                    / m)
                    .sqrt();
            }
            (mean, std)
        };
        let (im, is) = stats(&ds.inputs);
        let (om, os) = stats(&ds.outputs);
        ds.norm = Some(NormStats {
            input_mean: im,
            input_std: is,
            output_mean: om,
            output_std: os,
        });
        ds
    }

    fn small_net_config(seed: u64) -> NetworkConfig {
        NetworkConfig {
            input_dim: 4,
            output_dim: 3,
            hidden_layers: 2,
            hidden_width: 32,
            dropout: 0.0,
            learning_rate: 0.01,
            epochs: 200,
            batch_size: 32,
            validation_split: 0.1,
            seed,
        }
    }

    #[test]
    fn train_fits_linear_map() {
        let ds = linear_dataset(200, 11);
        // Constant-rate Adam bounces around a noise floor; small batches at
        // a reduced rate keep the floor well under the 1e-3 target.
        let cfg = NetworkConfig {
            hidden_layers: 1,
            batch_size: 8,
            learning_rate: 0.005,
            ..small_net_config(2)
        };
        let result = train(&ds, &cfg).unwrap();
        assert_eq!(result.history.len(), 200);
        // Final train MSE of the returned network, standardized units.
        let rows = ds.train_rows().unwrap();
        let x = ds.standardized_inputs(rows).unwrap();
        let y = ds.standardized_outputs(rows).unwrap();
        let y_hat = forward(&result.network, &x, false, 0).unwrap();
        let final_mse = super::super::network::mse(&y, &y_hat).unwrap();
        assert!(final_mse < 1e-3, "final train MSE {final_mse}");
    }

    #[test]
    fn train_is_deterministic() {
        let ds = linear_dataset(80, 4);
        let cfg = NetworkConfig {
            epochs: 20,
            dropout: 0.2,
            ..small_net_config(7)
        };
        let a = train(&ds, &cfg).unwrap();
        let b = train(&ds, &cfg).unwrap();
        for (la, lb) in a.network.layers.iter().zip(&b.network.layers) {
            for (x, y) in la.w.iter().zip(lb.w.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        for (ha, hb) in a.history.iter().zip(&b.history) {
            assert_eq!(ha.train_loss.to_bits(), hb.train_loss.to_bits());
            assert_eq!(ha.val_loss.to_bits(), hb.val_loss.to_bits());
        }
    }

    #[test]
    fn train_rejects_unsplit_dataset() {
        let mut ds = linear_dataset(50, 9);
        ds.split = None;
        assert!(train(&ds, &small_net_config(1)).is_err());
    }

    #[test]
    fn train_detects_divergence() {
        let ds = linear_dataset(60, 5);
        // One Adam step of this size overflows the activations on the next
        // forward pass, so the loss must be reported as non-finite.
        let cfg = NetworkConfig {
            learning_rate: 1e60,
            epochs: 50,
            ..small_net_config(3)
        };
        match train(&ds, &cfg) {
            Err(SurrogateError::NonFiniteLoss { .. }) => {}
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }

    #[test]
    fn predict_batch_equals_row_by_row() {
        let ds = linear_dataset(120, 21);
        let cfg = NetworkConfig {
            epochs: 30,
            ..small_net_config(5)
        };
        let net = train(&ds, &cfg).unwrap().network;
        let x = ds.inputs.slice(ndarray::s![..7, ..]).to_owned();
        let batch = predict(&net, &x).unwrap();
        for i in 0..7 {
            let row = x.slice(ndarray::s![i..i + 1, ..]).to_owned();
            let single = predict(&net, &row).unwrap();
            for j in 0..3 {
                assert_eq!(batch[(i, j)].to_bits(), single[(0, j)].to_bits());
            }
        }
        // Same input twice gives the same output.
        let again = predict(&net, &x).unwrap();
        assert_eq!(batch, again);
    }

    #[test]
    fn predict_close_to_training_targets() {
        let ds = linear_dataset(200, 13);
        let cfg = small_net_config(6);
        let net = train(&ds, &cfg).unwrap().network;
        let r = ds.split.as_ref().unwrap().train_idx[0];
        let x = ds.inputs.slice(ndarray::s![r..r + 1, ..]).to_owned();
        let y = predict(&net, &x).unwrap();
        for j in 0..3 {
            assert_relative_eq!(y[(0, j)], ds.outputs[(r, j)], epsilon = 0.1);
        }
    }

    #[test]
    fn predict_requires_norm_stats() {
        let cfg = small_net_config(2);
        let net = init(&cfg).unwrap();
        let x = Array2::zeros((1, 4));
        assert!(matches!(
            predict(&net, &x),
            Err(SurrogateError::MissingNormStats)
        ));
    }

    #[test]
    fn validation_carve_is_fixed_and_disjoint() {
        let ds = linear_dataset(100, 17);
        let cfg = NetworkConfig {
            epochs: 2,
            validation_split: 0.25,
            ..small_net_config(8)
        };
        // 90 train rows, 25% of 90 rounds to 22 validation rows.
        let result = train(&ds, &cfg).unwrap();
        assert_eq!(result.history.len(), 2);
        let _ = Split {
            train_idx: vec![],
            test_idx: vec![],
        };
    }
}
