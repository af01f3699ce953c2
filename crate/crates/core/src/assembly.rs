//! Nonlinear contact-chain model of the four-lens press-fit assembly.
//!
//! Four clearances (barrel-lens1, barrel-lens3, barrel-lens4, lens1-lens2)
//! drive a softened exponential contact law. Each lens carries a radial
//! expansion `w` and an axial shift `z`; equilibrium is found by a damped
//! Newton iteration over a four-stage assembly sequence that activates one
//! lens at a time, each stage warm-started from the previous one. A
//! converged state maps to 24 named surface deformations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of lenses in the assembly.
pub const NUM_LENSES: usize = 4;
/// Number of observed surface deformations.
pub const NUM_OUTPUTS: usize = 24;

/// Canonical input column labels, in the order used everywhere in the
/// pipeline (CSV headers, Sobol/UQ matrices, plots).
pub const INPUT_LABELS: [&str; 4] = [
    "barrel_lens1",
    "barrel_lens3",
    "barrel_lens4",
    "lens1_lens2",
];

/// Canonical output column labels: lens-major, bottom surface before top,
/// and within a surface `[dr_rmax, dz_rmin, dz_rmax]`.
pub const OUTPUT_LABELS: [&str; NUM_OUTPUTS] = [
    "lens1_bottom_dr_rmax",
    "lens1_bottom_dz_rmin",
    "lens1_bottom_dz_rmax",
    "lens1_top_dr_rmax",
    "lens1_top_dz_rmin",
    "lens1_top_dz_rmax",
    "lens2_bottom_dr_rmax",
    "lens2_bottom_dz_rmin",
    "lens2_bottom_dz_rmax",
    "lens2_top_dr_rmax",
    "lens2_top_dz_rmin",
    "lens2_top_dz_rmax",
    "lens3_bottom_dr_rmax",
    "lens3_bottom_dz_rmin",
    "lens3_bottom_dz_rmax",
    "lens3_top_dr_rmax",
    "lens3_top_dz_rmin",
    "lens3_top_dz_rmax",
    "lens4_bottom_dr_rmax",
    "lens4_bottom_dz_rmin",
    "lens4_bottom_dz_rmax",
    "lens4_top_dr_rmax",
    "lens4_top_dz_rmin",
    "lens4_top_dz_rmax",
];

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("Newton iteration did not converge at stage {stage} after {iterations} iterations (residual inf-norm {residual_norm:.3e})")]
    NonConvergence {
        stage: usize,
        iterations: usize,
        residual_norm: f64,
    },
    #[error("observation requested on a non-converged state (residual inf-norm {residual_norm:.3e} > tol {tol:.3e}, {active} active lenses)")]
    StateNotConverged {
        residual_norm: f64,
        tol: f64,
        active: usize,
    },
    #[error("invalid assembly parameters: {0}")]
    InvalidParams(String),
}

/// The four sampled clearances, in micrometres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterferenceVector {
    /// Clearance between barrel and lens 1.
    pub barrel_lens1: f64,
    /// Clearance between barrel and lens 3.
    pub barrel_lens3: f64,
    /// Clearance between barrel and lens 4.
    pub barrel_lens4: f64,
    /// Mutual clearance between lenses 1 and 2.
    pub lens1_lens2: f64,
}

impl InterferenceVector {
    pub fn from_array(x: [f64; 4]) -> Self {
        InterferenceVector {
            barrel_lens1: x[0],
            barrel_lens3: x[1],
            barrel_lens4: x[2],
            lens1_lens2: x[3],
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [
            self.barrel_lens1,
            self.barrel_lens3,
            self.barrel_lens4,
            self.lens1_lens2,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Softened exponential contact law: zero pressure at clearance `c0`,
/// `p0` at zero clearance, and unbounded exponential growth into
/// overclosure (negative clearance).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactLaw {
    pub p0: f64,
    pub c0: f64,
}

impl ContactLaw {
    /// Contact pressure at clearance `g`. Total function, continuous at `c0`.
    pub fn pressure(&self, g: f64) -> f64 {
        if g >= self.c0 {
            0.0
        } else {
            self.p0 * (((self.c0 - g) / self.c0).exp() - 1.0) / (std::f64::consts::E - 1.0)
        }
    }

    /// dP/dg. One-sided: the value 0 is used at `g == c0` exactly.
    pub fn dpressure_dg(&self, g: f64) -> f64 {
        if g >= self.c0 {
            0.0
        } else {
            -(self.p0 / (self.c0 * (std::f64::consts::E - 1.0))) * ((self.c0 - g) / self.c0).exp()
        }
    }

    pub fn validate(&self) -> Result<(), AssemblyError> {
        if !(self.p0 > 0.0 && self.p0.is_finite()) {
            return Err(AssemblyError::InvalidParams(format!(
                "contact.p0 must be positive, got {}",
                self.p0
            )));
        }
        if !(self.c0 > 0.0 && self.c0.is_finite()) {
            return Err(AssemblyError::InvalidParams(format!(
                "contact.c0 must be positive, got {}",
                self.c0
            )));
        }
        Ok(())
    }
}

/// Newton iteration controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewtonSettings {
    pub max_iters: usize,
    pub tol: f64,
    pub max_line_search_halvings: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        NewtonSettings {
            max_iters: 50,
            tol: 1e-10,
            max_line_search_halvings: 25,
        }
    }
}

/// Stiffness, coupling and observation coefficients of the contact chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssemblyParams {
    pub contact: ContactLaw,
    /// Radial stiffness.
    pub k_r: f64,
    /// Cubic radial stiffening.
    pub q_r: f64,
    /// Axial stiffness.
    pub k_z: f64,
    /// Cubic axial stiffening.
    pub q_z: f64,
    /// Barrel cross-compliance coupling between barrel-seated lenses.
    pub gamma: f64,
    /// Lens1-to-lens2 seat coupling.
    pub kappa: f64,
    /// Radial-to-axial coupling.
    pub nu: f64,
    /// Lens-on-lens axial stacking coupling.
    pub rho: f64,
    /// Observable nonlinearity coefficient on radial outputs.
    pub a_obs: f64,
    /// Observable nonlinearity coefficient on axial outputs.
    pub b_obs: f64,
    pub newton: NewtonSettings,
}

impl Default for AssemblyParams {
    fn default() -> Self {
        AssemblyParams {
            contact: ContactLaw { p0: 5.0, c0: 3.5 },
            k_r: 1.0,
            q_r: 0.05,
            k_z: 1.0,
            q_z: 0.02,
            gamma: 0.08,
            kappa: 0.3,
            nu: 0.8,
            rho: 0.25,
            a_obs: 0.15,
            b_obs: 0.1,
            newton: NewtonSettings::default(),
        }
    }
}

impl AssemblyParams {
    pub fn validate(&self) -> Result<(), AssemblyError> {
        self.contact.validate()?;
        let positive = [("k_r", self.k_r), ("k_z", self.k_z)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(AssemblyError::InvalidParams(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        let nonneg = [
            ("q_r", self.q_r),
            ("q_z", self.q_z),
            ("nu", self.nu),
            ("rho", self.rho),
            ("a_obs", self.a_obs),
            ("b_obs", self.b_obs),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(AssemblyError::InvalidParams(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        if !(0.0..0.5).contains(&self.gamma) {
            return Err(AssemblyError::InvalidParams(format!(
                "gamma must lie in [0, 0.5), got {}",
                self.gamma
            )));
        }
        if !(0.0..1.0).contains(&self.kappa) {
            return Err(AssemblyError::InvalidParams(format!(
                "kappa must lie in [0, 1), got {}",
                self.kappa
            )));
        }
        if !(self.newton.tol > 0.0 && self.newton.tol.is_finite()) {
            return Err(AssemblyError::InvalidParams(format!(
                "newton.tol must be positive, got {}",
                self.newton.tol
            )));
        }
        if self.newton.max_iters == 0 {
            return Err(AssemblyError::InvalidParams(
                "newton.max_iters must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Displacement state of the (partially assembled) lens stack.
///
/// Lenses `1..=active` are assembled; inactive lenses contribute zero
/// displacement to every coupling term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblyState {
    /// Radial expansion per lens, μm.
    pub w: [f64; NUM_LENSES],
    /// Axial shift per lens, μm.
    pub z: [f64; NUM_LENSES],
    /// Number of assembled lenses, activated in index order.
    pub active: usize,
    /// Residual inf-norm at the last evaluation of this state.
    pub residual_norm: f64,
}

impl AssemblyState {
    pub fn new(active: usize) -> Self {
        AssemblyState {
            w: [0.0; NUM_LENSES],
            z: [0.0; NUM_LENSES],
            active,
            residual_norm: f64::INFINITY,
        }
    }
}

/// The 24 surface deformations in canonical order (see [`OUTPUT_LABELS`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeformationVector(pub [f64; NUM_OUTPUTS]);

impl DeformationVector {
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Contact gap seen by each lens interface, given the current radial state.
///
/// A lens's own expansion opens its gap (relieving the press fit), while the
/// barrel cross-compliance `gamma` closes the gaps of the other barrel-seated
/// lenses and the seat coupling `kappa` opens the lens1-lens2 gap.
/// Inactive lenses contribute zero displacement.
fn gaps(state: &AssemblyState, x: &InterferenceVector, p: &AssemblyParams) -> [f64; NUM_LENSES] {
    let mut w = [0.0; NUM_LENSES];
    w[..state.active].copy_from_slice(&state.w[..state.active]);
    [
        x.barrel_lens1 + w[0] - p.gamma * (w[2] + w[3]),
        x.lens1_lens2 + w[1] + p.kappa * w[0],
        x.barrel_lens3 + w[2] - p.gamma * (w[0] + w[3]),
        x.barrel_lens4 + w[3] - p.gamma * (w[0] + w[2]),
    ]
}

/// ∂gap_i/∂w_j for the active lenses.
fn gap_jacobian(p: &AssemblyParams) -> [[f64; NUM_LENSES]; NUM_LENSES] {
    let g = p.gamma;
    [
        [1.0, 0.0, -g, -g],
        [p.kappa, 1.0, 0.0, 0.0],
        [-g, 0.0, 1.0, -g],
        [-g, 0.0, -g, 1.0],
    ]
}

/// Out-of-balance residual for the active lenses, interleaved as
/// `[R_1^r, R_1^z, R_2^r, R_2^z, ...]` (length `2 * active`).
pub fn residual(state: &AssemblyState, x: &InterferenceVector, p: &AssemblyParams) -> Vec<f64> {
    let k = state.active;
    assert!(k >= 1 && k <= NUM_LENSES, "active lens count out of range");
    let g = gaps(state, x, p);
    let mut r = vec![0.0; 2 * k];
    for i in 0..k {
        let wi = state.w[i];
        let zi = state.z[i];
        let pres = p.contact.pressure(g[i]);
        let z_prev = if i == 0 { 0.0 } else { state.z[i - 1] };
        r[2 * i] = p.k_r * wi + p.q_r * wi.powi(3) - pres;
        r[2 * i + 1] =
            p.k_z * zi + p.q_z * zi.powi(3) - p.nu * pres - p.rho * z_prev * z_prev.abs();
    }
    r
}

/// Analytic Jacobian of [`residual`] with respect to the interleaved
/// unknowns `[w_1, z_1, w_2, z_2, ...]` of the active lenses.
pub fn tangent(state: &AssemblyState, x: &InterferenceVector, p: &AssemblyParams) -> DMatrix<f64> {
    let k = state.active;
    assert!(k >= 1 && k <= NUM_LENSES, "active lens count out of range");
    let g = gaps(state, x, p);
    let dg = gap_jacobian(p);
    let mut jac = DMatrix::zeros(2 * k, 2 * k);
    for i in 0..k {
        let dp = p.contact.dpressure_dg(g[i]);
        for j in 0..k {
            // ∂R_i^r/∂w_j and ∂R_i^z/∂w_j through the shared gap.
            let mut d_r_dw = -dp * dg[i][j];
            if i == j {
                d_r_dw += p.k_r + 3.0 * p.q_r * state.w[i] * state.w[i];
            }
            jac[(2 * i, 2 * j)] = d_r_dw;
            jac[(2 * i + 1, 2 * j)] = -p.nu * dp * dg[i][j];
        }
        // ∂R_i^z/∂z_i and the stacking subdiagonal.
        jac[(2 * i + 1, 2 * i + 1)] = p.k_z + 3.0 * p.q_z * state.z[i] * state.z[i];
        if i > 0 {
            jac[(2 * i + 1, 2 * (i - 1) + 1)] = -p.rho * 2.0 * state.z[i - 1].abs();
        }
    }
    jac
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Damped Newton solve for a fixed set of active lenses, warm-started from
/// `state`. Backtracking halves the step until the residual inf-norm
/// decreases; if no halving succeeds the smallest trial step is taken so
/// the iteration cannot stall at the contact-onset kink.
fn solve_stage(
    state: &mut AssemblyState,
    x: &InterferenceVector,
    p: &AssemblyParams,
    stage: usize,
) -> Result<(), AssemblyError> {
    let k = state.active;
    for iter in 0..=p.newton.max_iters {
        let r = residual(state, x, p);
        let norm = inf_norm(&r);
        state.residual_norm = norm;
        if norm <= p.newton.tol {
            return Ok(());
        }
        if iter == p.newton.max_iters {
            return Err(AssemblyError::NonConvergence {
                stage,
                iterations: iter,
                residual_norm: norm,
            });
        }
        let jac = tangent(state, x, p);
        let rhs = DVector::from_iterator(2 * k, r.iter().map(|v| -v));
        let delta = jac
            .lu()
            .solve(&rhs)
            .ok_or(AssemblyError::NonConvergence {
                stage,
                iterations: iter,
                residual_norm: norm,
            })?;

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=p.newton.max_line_search_halvings {
            let mut trial = *state;
            for i in 0..k {
                trial.w[i] = state.w[i] + step * delta[2 * i];
                trial.z[i] = state.z[i] + step * delta[2 * i + 1];
            }
            let trial_norm = inf_norm(&residual(&trial, x, p));
            if trial_norm < norm {
                accepted = Some(trial);
                break;
            }
            accepted = Some(trial);
            step *= 0.5;
        }
        *state = accepted.expect("line search produced at least one trial");
    }
    unreachable!("loop returns or errors before falling through")
}

/// Solves the multistep assembly: four sequential equilibria with
/// `active = 1, 2, 3, 4`, each warm-started from the previous stage.
pub fn solve_assembly(
    x: &InterferenceVector,
    p: &AssemblyParams,
) -> Result<AssemblyState, AssemblyError> {
    let mut state = AssemblyState::new(1);
    for stage in 1..=NUM_LENSES {
        state.active = stage;
        solve_stage(&mut state, x, p, stage)?;
    }
    Ok(state)
}

/// Maps a converged all-active state to the 24 canonical surface
/// deformations.
pub fn observe(
    state: &AssemblyState,
    p: &AssemblyParams,
) -> Result<DeformationVector, AssemblyError> {
    if state.active != NUM_LENSES || !(state.residual_norm <= p.newton.tol) {
        return Err(AssemblyError::StateNotConverged {
            residual_norm: state.residual_norm,
            tol: p.newton.tol,
            active: state.active,
        });
    }
    let mut out = [0.0; NUM_OUTPUTS];
    for i in 0..NUM_LENSES {
        let w = state.w[i];
        let z = state.z[i];
        let w2 = w * w;
        let base = 6 * i;
        // Bottom surface.
        out[base] = w * (1.0 + p.a_obs * z);
        out[base + 1] = z - p.b_obs * w2;
        out[base + 2] = z + p.b_obs * w2;
        // Top surface.
        out[base + 3] = w * (1.0 - p.a_obs * z);
        out[base + 4] = z + p.b_obs * w2;
        out[base + 5] = z + 2.0 * p.b_obs * w2;
    }
    Ok(DeformationVector(out))
}

/// Convenience wrapper: solve and observe in one call.
pub fn evaluate_assembly(
    x: &InterferenceVector,
    p: &AssemblyParams,
) -> Result<DeformationVector, AssemblyError> {
    let state = solve_assembly(x, p)?;
    observe(&state, p)
}
