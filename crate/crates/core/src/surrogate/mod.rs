//! From-scratch dense neural-network surrogate: ReLU hidden layers, linear
//! output, inverted dropout, Adam, and JSON model persistence.

mod metrics;
mod network;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, NormStats};

pub use metrics::{evaluate, metrics_from_predictions, Metrics, SplitKind};
pub use network::{
    backward, backward_with_loss, forward, forward_cached, init, mse, Adam, ForwardCache,
    Gradients, Layer, Network, NetworkConfig,
};
pub use train::{predict, train, EpochStats, TrainResult};

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },
    #[error("loss became non-finite at epoch {epoch} (learning rate too high?)")]
    NonFiniteLoss { epoch: usize },
    #[error("network carries no normalization statistics; train it or load a full model first")]
    MissingNormStats,
    #[error("requested split is empty")]
    EmptySplit,
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("model file {path}: {message}")]
    ModelFile { path: String, message: String },
    #[error("unsupported model file version {0}")]
    UnsupportedVersion(u32),
}

const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    rows: usize,
    cols: usize,
    /// Row-major `rows × cols` weight entries.
    w: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    config: NetworkConfig,
    norm: Option<NormStats>,
    layers: Vec<LayerFile>,
}

/// Persists the network (config, normalization, parameters) as JSON at full
/// float precision.
pub fn save_model(net: &Network, path: &Path) -> Result<(), SurrogateError> {
    let file = ModelFile {
        version: MODEL_VERSION,
        config: net.config.clone(),
        norm: net.norm.clone(),
        layers: net
            .layers
            .iter()
            .map(|l| LayerFile {
                rows: l.w.nrows(),
                cols: l.w.ncols(),
                w: l.w.iter().copied().collect(),
                b: l.b.to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_string(&file).expect("model serializes");
    std::fs::write(path, json).map_err(|e| SurrogateError::ModelFile {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load_model(path: &Path) -> Result<Network, SurrogateError> {
    let err = |message: String| SurrogateError::ModelFile {
        path: path.display().to_string(),
        message,
    };
    let raw = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let file: ModelFile = serde_json::from_str(&raw).map_err(|e| err(e.to_string()))?;
    if file.version != MODEL_VERSION {
        return Err(SurrogateError::UnsupportedVersion(file.version));
    }
    let dims = file.config.dims();
    if file.layers.len() != dims.len() - 1 {
        return Err(err(format!(
            "expected {} layers, found {}",
            dims.len() - 1,
            file.layers.len()
        )));
    }
    let mut layers = Vec::with_capacity(file.layers.len());
    for (i, lf) in file.layers.into_iter().enumerate() {
        if lf.rows != dims[i] || lf.cols != dims[i + 1] || lf.w.len() != lf.rows * lf.cols {
            return Err(err(format!("layer {i} has inconsistent dimensions")));
        }
        if lf.b.len() != lf.cols {
            return Err(err(format!("layer {i} bias length mismatch")));
        }
        layers.push(Layer {
            w: ndarray::Array2::from_shape_vec((lf.rows, lf.cols), lf.w)
                .expect("shape checked above"),
            b: ndarray::Array1::from_vec(lf.b),
        });
    }
    Ok(Network {
        config: file.config,
        layers,
        norm: file.norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;
    use ndarray::Array2;
    use tempfile::tempdir;

    #[test]
    fn model_roundtrip_is_bit_exact() {
        let cfg = NetworkConfig {
            input_dim: 4,
            output_dim: 6,
            hidden_layers: 2,
            hidden_width: 9,
            seed: 42,
            ..NetworkConfig::default()
        };
        let mut net = init(&cfg).unwrap();
        net.norm = Some(NormStats {
            input_mean: vec![1.0; 4],
            input_std: vec![0.5; 4],
            output_mean: vec![0.1; 6],
            output_std: vec![2.0; 6],
        });
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&net, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.config, net.config);
        assert_eq!(loaded.norm, net.norm);
        for (a, b) in net.layers.iter().zip(&loaded.layers) {
            for (x, y) in a.w.iter().zip(b.w.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            for (x, y) in a.b.iter().zip(b.b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        // Predictions identical through the roundtrip.
        let x = Array2::from_shape_fn((3, 4), |(i, j)| 0.3 * i as f64 - 0.1 * j as f64);
        let a = forward(&net, &x, false, 0).unwrap();
        let b = forward(&loaded, &x, false, 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn model_version_is_checked() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.json");
        let cfg = NetworkConfig {
            input_dim: 2,
            output_dim: 2,
            hidden_layers: 1,
            hidden_width: 3,
            seed: 1,
            ..NetworkConfig::default()
        };
        let net = init(&cfg).unwrap();
        save_model(&net, &path).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"version\":1", "\"version\":99");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            load_model(&path),
            Err(SurrogateError::UnsupportedVersion(99))
        ));
    }

    #[test]
    fn dropout_mean_matches_dropout_free_pass() {
        // Inverted dropout: averaging many masked passes approximates the
        // mask-free activations, layer by layer.
        let cfg = NetworkConfig {
            input_dim: 3,
            output_dim: 4,
            hidden_layers: 1,
            hidden_width: 8,
            dropout: 0.3,
            seed: 6,
            ..NetworkConfig::default()
        };
        let net = init(&cfg).unwrap();
        let x = Array2::from_shape_vec((1, 3), vec![0.7, -0.4, 1.2]).unwrap();
        let reference = forward_cached(&net, &x, None).unwrap();
        let ref_hidden = reference.activations[1].clone();
        let ref_out = reference.activations[2].clone();

        let n_passes = 10_000;
        let mut sum_hidden = Array2::<f64>::zeros(ref_hidden.dim());
        let mut sum_out = Array2::<f64>::zeros(ref_out.dim());
        let mut sumsq_hidden = Array2::<f64>::zeros(ref_hidden.dim());
        let mut sumsq_out = Array2::<f64>::zeros(ref_out.dim());
        for seed in 0..n_passes {
            let mut rng = Prng::from_seed(seed);
            let cache = forward_cached(&net, &x, Some(&mut rng)).unwrap();
            let h = &cache.activations[1];
            let o = &cache.activations[2];
            sum_hidden += h;
            sum_out += o;
            sumsq_hidden += &h.mapv(|v| v * v);
            sumsq_out += &o.mapv(|v| v * v);
        }
        let n = n_passes as f64;
        let check = |sum: &Array2<f64>, sumsq: &Array2<f64>, reference: &Array2<f64>, what: &str| {
            for j in 0..reference.ncols() {
                let mean = sum[(0, j)] / n;
                let var = (sumsq[(0, j)] / n - mean * mean).max(0.0);
                let se = (var / n).sqrt();
                let diff = (mean - reference[(0, j)]).abs();
                assert!(
                    diff <= 3.0 * se + 1e-12,
                    "{what} unit {j}: |{mean} - {}| > 3*{se}",
                    reference[(0, j)]
                );
            }
        };
        check(&sum_hidden, &sumsq_hidden, &ref_hidden, "hidden");
        check(&sum_out, &sumsq_out, &ref_out, "output");
    }
}
