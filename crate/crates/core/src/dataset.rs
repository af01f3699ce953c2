//! Sampling, forward-model evaluation, splitting, standardization and
//! persistence of input/output datasets.
//!
//! A [`Dataset`] keeps the raw values in micrometres; [`Dataset::standardize`]
//! computes per-column statistics on the training split only and the
//! standardized views are produced on demand, so the CSV artifact stays in
//! physical units while the surrogate consumes zero-mean/unit-variance data.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{
    evaluate_assembly, AssemblyError, AssemblyParams, InterferenceVector, INPUT_LABELS,
    NUM_OUTPUTS, OUTPUT_LABELS,
};
use crate::rng::{Prng, GENERATOR_NAME};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid sampling range in component {component}: lo {lo} must be < hi {hi}")]
    InvalidRange { component: usize, lo: f64, hi: f64 },
    #[error("too few samples: {n} rows (need at least {min})")]
    TooFewSamples { n: usize, min: usize },
    #[error("degenerate column '{label}': training standard deviation is zero")]
    DegenerateColumn { label: String },
    #[error("forward model failed at row {row}: {source}")]
    Generation {
        row: usize,
        #[source]
        source: AssemblyError,
    },
    #[error("dataset has no split; call split() first")]
    MissingSplit,
    #[error("dataset has no normalization statistics; call standardize() first")]
    MissingNorm,
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("schema mismatch in {path}: {message}")]
    SchemaMismatch { path: String, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Train/test row partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// Per-column standardization statistics, computed on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub output_mean: Vec<f64>,
    pub output_std: Vec<f64>,
}

/// Paired input/output samples with optional split and normalization.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// N×4 clearances, μm.
    pub inputs: Array2<f64>,
    /// N×24 deformations, μm.
    pub outputs: Array2<f64>,
    pub split: Option<Split>,
    pub norm: Option<NormStats>,
}

/// Sidecar metadata persisted next to the CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub version: u32,
    pub generator: String,
    pub seed: u64,
    pub params_hash: String,
    pub split: Option<Split>,
    pub norm: Option<NormStats>,
}

/// Result of [`load`]: the dataset plus provenance from the sidecar.
#[derive(Debug)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub seed: u64,
    pub params_hash: String,
    /// Set when the caller passed an expected params hash and it differs
    /// from the one stored in the sidecar.
    pub params_hash_mismatch: bool,
}

/// Draws `n` i.i.d. rows, uniform per column over `[lo_j, hi_j)`.
/// Row-major draw order; deterministic for a fixed seed.
pub fn sample_inputs(
    n: usize,
    range_lo: &[f64; 4],
    range_hi: &[f64; 4],
    seed: u64,
) -> Result<Array2<f64>, DatasetError> {
    for j in 0..4 {
        if !(range_lo[j] < range_hi[j]) {
            return Err(DatasetError::InvalidRange {
                component: j,
                lo: range_lo[j],
                hi: range_hi[j],
            });
        }
    }
    let mut rng = Prng::from_seed(seed);
    let mut data = Vec::with_capacity(n * 4);
    for _ in 0..n {
        for j in 0..4 {
            data.push(rng.uniform(range_lo[j], range_hi[j]));
        }
    }
    Ok(Array2::from_shape_vec((n, 4), data).expect("shape matches fill"))
}

/// Evaluates the forward model for every input row, fanning rows out to
/// `workers` threads over contiguous chunks. Row order is preserved and the
/// result is independent of the worker count.
pub fn evaluate_rows(
    inputs: &Array2<f64>,
    params: &AssemblyParams,
    workers: usize,
) -> Result<Array2<f64>, DatasetError> {
    let n = inputs.nrows();
    let workers = workers.max(1).min(n.max(1));
    let mut outputs = Array2::zeros((n, NUM_OUTPUTS));

    let chunk_rows = n.div_ceil(workers);
    let failure = std::sync::Mutex::new(None::<(usize, AssemblyError)>);
    std::thread::scope(|scope| {
        let mut row0 = 0;
        for out_chunk in outputs.axis_chunks_iter_mut(Axis(0), chunk_rows) {
            let rows = out_chunk.nrows();
            let failure = &failure;
            let inputs = &inputs;
            scope.spawn(move || {
                let mut chunk = out_chunk;
                for local in 0..rows {
                    let row = row0 + local;
                    let x = InterferenceVector::from_array([
                        inputs[(row, 0)],
                        inputs[(row, 1)],
                        inputs[(row, 2)],
                        inputs[(row, 3)],
                    ]);
                    match evaluate_assembly(&x, params) {
                        Ok(d) => {
                            for (k, v) in d.0.iter().enumerate() {
                                chunk[(local, k)] = *v;
                            }
                        }
                        Err(e) => {
                            let mut slot = failure.lock().unwrap();
                            // Keep the earliest failing row for a stable report.
                            if slot.as_ref().map_or(true, |(r, _)| row < *r) {
                                *slot = Some((row, e));
                            }
                            return;
                        }
                    }
                }
            });
            row0 += rows;
        }
    });
    if let Some((row, source)) = failure.into_inner().unwrap() {
        return Err(DatasetError::Generation { row, source });
    }
    Ok(outputs)
}

/// Pairs the inputs with their forward-model outputs as an unsplit dataset.
pub fn generate(
    inputs: &Array2<f64>,
    params: &AssemblyParams,
    workers: usize,
) -> Result<Dataset, DatasetError> {
    let outputs = evaluate_rows(inputs, params, workers)?;
    Ok(Dataset {
        inputs: inputs.clone(),
        outputs,
        split: None,
        norm: None,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Random split with exactly `n_train` training rows (seeded permutation,
    /// first `n_train` entries go to train).
    pub fn split_counts(&mut self, n_train: usize, seed: u64) -> Result<(), DatasetError> {
        let n = self.len();
        if n < 10 {
            return Err(DatasetError::TooFewSamples { n, min: 10 });
        }
        if n_train == 0 || n_train >= n {
            return Err(DatasetError::TooFewSamples {
                n: n_train.min(n - n_train),
                min: 1,
            });
        }
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = Prng::from_seed(seed);
        rng.shuffle(&mut perm);
        let train_idx = perm[..n_train].to_vec();
        let test_idx = perm[n_train..].to_vec();
        self.split = Some(Split {
            train_idx,
            test_idx,
        });
        self.norm = None;
        Ok(())
    }

    /// Random split by fraction: `round(train_fraction * N)` rows to train.
    pub fn split_fraction(&mut self, train_fraction: f64, seed: u64) -> Result<(), DatasetError> {
        let n_train = (train_fraction * self.len() as f64).round() as usize;
        self.split_counts(n_train, seed)
    }

    fn split_ref(&self) -> Result<&Split, DatasetError> {
        self.split.as_ref().ok_or(DatasetError::MissingSplit)
    }

    pub fn norm_ref(&self) -> Result<&NormStats, DatasetError> {
        self.norm.as_ref().ok_or(DatasetError::MissingNorm)
    }

    /// Computes per-column mean/std on the training split. A column whose
    /// training standard deviation vanishes (relative to its mean scale) is
    /// rejected as degenerate.
    pub fn standardize(&mut self) -> Result<(), DatasetError> {
        let split = self.split_ref()?.clone();
        let (input_mean, input_std) =
            column_stats(&self.inputs.view(), &split.train_idx, INPUT_LABELS.iter())?;
        let (output_mean, output_std) =
            column_stats(&self.outputs.view(), &split.train_idx, OUTPUT_LABELS.iter())?;
        self.norm = Some(NormStats {
            input_mean,
            input_std,
            output_mean,
            output_std,
        });
        Ok(())
    }

    /// Standardized (zero-mean, unit-std in training statistics) inputs for
    /// the given rows.
    pub fn standardized_inputs(&self, rows: &[usize]) -> Result<Array2<f64>, DatasetError> {
        let norm = self.norm_ref()?;
        Ok(standardize_rows(
            &self.inputs.view(),
            rows,
            &norm.input_mean,
            &norm.input_std,
        ))
    }

    pub fn standardized_outputs(&self, rows: &[usize]) -> Result<Array2<f64>, DatasetError> {
        let norm = self.norm_ref()?;
        Ok(standardize_rows(
            &self.outputs.view(),
            rows,
            &norm.output_mean,
            &norm.output_std,
        ))
    }

    pub fn train_rows(&self) -> Result<&[usize], DatasetError> {
        Ok(&self.split_ref()?.train_idx)
    }

    pub fn test_rows(&self) -> Result<&[usize], DatasetError> {
        Ok(&self.split_ref()?.test_idx)
    }
}

/// Exact inverse of the standardization map.
pub fn destandardize(values: &Array2<f64>, mean: &[f64], std: &[f64]) -> Array2<f64> {
    let mut out = values.clone();
    for (mut row, _) in out.axis_iter_mut(Axis(0)).zip(0..) {
        for j in 0..row.len() {
            row[j] = row[j] * std[j] + mean[j];
        }
    }
    out
}

fn column_stats<'a>(
    data: &ArrayView2<f64>,
    rows: &[usize],
    labels: impl Iterator<Item = &'a &'a str>,
) -> Result<(Vec<f64>, Vec<f64>), DatasetError> {
    let m = rows.len() as f64;
    let ncols = data.ncols();
    let mut means = vec![0.0; ncols];
    let mut stds = vec![0.0; ncols];
    for j in 0..ncols {
        let mut sum = 0.0;
        for &r in rows {
            sum += data[(r, j)];
        }
        means[j] = sum / m;
        let mut ss = 0.0;
        for &r in rows {
            let d = data[(r, j)] - means[j];
            ss += d * d;
        }
        // Population std, matching the convention used by the surrogate.
        stds[j] = (ss / m).sqrt();
    }
    for (j, label) in labels.enumerate().take(ncols) {
        if stds[j] <= 1e-12 * means[j].abs().max(1.0) {
            return Err(DatasetError::DegenerateColumn {
                label: label.to_string(),
            });
        }
    }
    Ok((means, stds))
}

fn standardize_rows(
    data: &ArrayView2<f64>,
    rows: &[usize],
    mean: &[f64],
    std: &[f64],
) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), data.ncols()));
    for (i, &r) in rows.iter().enumerate() {
        for j in 0..data.ncols() {
            out[(i, j)] = (data[(r, j)] - mean[j]) / std[j];
        }
    }
    out
}

/// Serializes a float with 17 significant digits so that parsing recovers
/// the exact bit pattern.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

const SIDECAR_VERSION: u32 = 1;

pub fn sidecar_path(csv_path: &Path) -> std::path::PathBuf {
    let mut p = csv_path.as_os_str().to_owned();
    p.push(".sidecar.json");
    std::path::PathBuf::from(p)
}

/// Writes the dataset CSV (header + 17-significant-digit values) and the
/// JSON sidecar holding split, normalization, seed and params hash.
pub fn save(
    ds: &Dataset,
    csv_path: &Path,
    seed: u64,
    params_hash: &str,
) -> Result<(), DatasetError> {
    let mut file = std::io::BufWriter::new(
        std::fs::File::create(csv_path).map_err(|e| io_err(csv_path, e))?,
    );
    let header: Vec<&str> = INPUT_LABELS
        .iter()
        .chain(OUTPUT_LABELS.iter())
        .copied()
        .collect();
    writeln!(file, "{}", header.join(",")).map_err(|e| io_err(csv_path, e))?;
    for i in 0..ds.len() {
        let mut fields = Vec::with_capacity(4 + NUM_OUTPUTS);
        for j in 0..4 {
            fields.push(format_float(ds.inputs[(i, j)]));
        }
        for j in 0..NUM_OUTPUTS {
            fields.push(format_float(ds.outputs[(i, j)]));
        }
        writeln!(file, "{}", fields.join(",")).map_err(|e| io_err(csv_path, e))?;
    }
    file.flush().map_err(|e| io_err(csv_path, e))?;

    let sidecar = Sidecar {
        version: SIDECAR_VERSION,
        generator: GENERATOR_NAME.to_string(),
        seed,
        params_hash: params_hash.to_string(),
        split: ds.split.clone(),
        norm: ds.norm.clone(),
    };
    let sc_path = sidecar_path(csv_path);
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    std::fs::write(&sc_path, json).map_err(|e| io_err(&sc_path, e))?;
    Ok(())
}

/// Reads a dataset CSV plus sidecar. When `expected_params_hash` is given
/// and differs from the stored hash, loading still succeeds with
/// `params_hash_mismatch` set.
pub fn load(
    csv_path: &Path,
    expected_params_hash: Option<&str>,
) -> Result<LoadedDataset, DatasetError> {
    let parse_err = |message: String| DatasetError::Parse {
        path: csv_path.display().to_string(),
        message,
    };
    let schema_err = |message: String| DatasetError::SchemaMismatch {
        path: csv_path.display().to_string(),
        message,
    };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(csv_path)
        .map_err(|e| parse_err(e.to_string()))?;
    let expected_header: Vec<&str> = INPUT_LABELS
        .iter()
        .chain(OUTPUT_LABELS.iter())
        .copied()
        .collect();
    {
        let headers = reader.headers().map_err(|e| parse_err(e.to_string()))?;
        if headers.len() != expected_header.len() {
            return Err(schema_err(format!(
                "expected {} columns, found {}",
                expected_header.len(),
                headers.len()
            )));
        }
        for (got, want) in headers.iter().zip(&expected_header) {
            if got != *want {
                return Err(schema_err(format!(
                    "unexpected column label '{got}' (expected '{want}')"
                )));
            }
        }
    }
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    let mut n = 0;
    for record in reader.records() {
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        if record.len() != expected_header.len() {
            return Err(schema_err(format!(
                "row {} has {} fields, expected {}",
                n + 1,
                record.len(),
                expected_header.len()
            )));
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|e| parse_err(format!("row {}, column {}: {e}", n + 1, j + 1)))?;
            if j < 4 {
                inputs.push(v);
            } else {
                outputs.push(v);
            }
        }
        n += 1;
    }
    let inputs = Array2::from_shape_vec((n, 4), inputs).expect("shape matches fill");
    let outputs = Array2::from_shape_vec((n, NUM_OUTPUTS), outputs).expect("shape matches fill");

    let sc_path = sidecar_path(csv_path);
    let raw = std::fs::read_to_string(&sc_path).map_err(|e| io_err(&sc_path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&raw).map_err(|e| DatasetError::Parse {
        path: sc_path.display().to_string(),
        message: e.to_string(),
    })?;
    if sidecar.version != SIDECAR_VERSION {
        return Err(schema_err(format!(
            "unsupported sidecar version {}",
            sidecar.version
        )));
    }
    if let Some(split) = &sidecar.split {
        let mut seen = vec![false; n];
        for &i in split.train_idx.iter().chain(&split.test_idx) {
            if i >= n || seen[i] {
                return Err(schema_err(
                    "split indices do not form a partition of the rows".into(),
                ));
            }
            seen[i] = true;
        }
        if !seen.iter().all(|&s| s) {
            return Err(schema_err(
                "split indices do not cover all rows".into(),
            ));
        }
    }
    let params_hash_mismatch =
        expected_params_hash.is_some_and(|expected| expected != sidecar.params_hash);
    Ok(LoadedDataset {
        dataset: Dataset {
            inputs,
            outputs,
            split: sidecar.split,
            norm: sidecar.norm,
        },
        seed: sidecar.seed,
        params_hash: sidecar.params_hash,
        params_hash_mismatch,
    })
}

/// Sum of per-column standardized values; helper shared by tests.
pub fn column_mean_std(data: &ArrayView2<f64>) -> (Array1<f64>, Array1<f64>) {
    let m = data.nrows() as f64;
    let mean = data.sum_axis(Axis(0)) / m;
    let mut var = Array1::zeros(data.ncols());
    for row in data.axis_iter(Axis(0)) {
        for j in 0..row.len() {
            let d = row[j] - mean[j];
            var[j] += d * d;
        }
    }
    (mean, (var / m).mapv(f64::sqrt))
}
