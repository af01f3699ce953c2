//! Press-fit lens-barrel assembly analysis pipeline.
//!
//! The crate chains five pieces: a nonlinear contact-chain forward model
//! ([`assembly`]), dataset generation and persistence ([`dataset`]), a dense
//! neural-network surrogate trained from scratch ([`surrogate`]),
//! variance-based global sensitivity analysis ([`sobol`]) and Monte-Carlo
//! uncertainty propagation ([`propagate`]). The [`pipeline`] module wires the
//! stages into the CLI commands; everything stochastic is driven by explicit
//! seeds through [`rng`].

pub mod assembly;
pub mod dataset;
pub mod evaluator;
pub mod propagate;
pub mod sobol;
pub mod surrogate;
pub mod rng;

pub use assembly::{
    evaluate_assembly, observe, residual, solve_assembly, tangent, AssemblyError, AssemblyParams,
    AssemblyState, ContactLaw, DeformationVector, InterferenceVector, NewtonSettings,
    INPUT_LABELS, NUM_LENSES, NUM_OUTPUTS, OUTPUT_LABELS,
};
