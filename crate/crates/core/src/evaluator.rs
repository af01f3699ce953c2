//! Batch evaluators: the common interface through which the Sobol and
//! uncertainty-propagation stages consume either the contact-chain model
//! directly or the trained surrogate.

use ndarray::Array2;
use thiserror::Error;

use crate::assembly::AssemblyParams;
use crate::dataset::{evaluate_rows, DatasetError};
use crate::surrogate::{predict, Network, SurrogateError};

#[derive(Debug, Error)]
pub enum EvaluatorError {
    #[error(transparent)]
    Model(#[from] DatasetError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
}

/// Maps an `N×d` input batch to an `N×output_dim` output batch.
pub trait BatchEvaluator: Sync {
    fn output_dim(&self) -> usize;
    fn evaluate(&self, inputs: &Array2<f64>) -> Result<Array2<f64>, EvaluatorError>;
}

/// Runs the nonlinear assembly solve for every row.
pub struct DirectModelEvaluator {
    pub params: AssemblyParams,
    pub workers: usize,
}

impl BatchEvaluator for DirectModelEvaluator {
    fn output_dim(&self) -> usize {
        crate::assembly::NUM_OUTPUTS
    }

    fn evaluate(&self, inputs: &Array2<f64>) -> Result<Array2<f64>, EvaluatorError> {
        Ok(evaluate_rows(inputs, &self.params, self.workers)?)
    }
}

/// Runs the trained network in raw (micrometre) units.
pub struct SurrogateEvaluator {
    pub network: Network,
}

impl BatchEvaluator for SurrogateEvaluator {
    fn output_dim(&self) -> usize {
        self.network.config.output_dim
    }

    fn evaluate(&self, inputs: &Array2<f64>) -> Result<Array2<f64>, EvaluatorError> {
        Ok(predict(&self.network, inputs)?)
    }
}

/// Wraps a scalar-per-row closure; used by the analytic benchmark functions
/// in tests and by the estimator oracles.
pub struct FnEvaluator<F>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    pub f: F,
    pub outputs: usize,
}

impl<F> BatchEvaluator for FnEvaluator<F>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    fn output_dim(&self) -> usize {
        self.outputs
    }

    fn evaluate(&self, inputs: &Array2<f64>) -> Result<Array2<f64>, EvaluatorError> {
        let mut out = Array2::zeros((inputs.nrows(), self.outputs));
        for (i, row) in inputs.rows().into_iter().enumerate() {
            let vals = (self.f)(row.as_slice().expect("contiguous row"));
            debug_assert_eq!(vals.len(), self.outputs);
            for (j, v) in vals.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        Ok(out)
    }
}
