//! Centralized numerical tolerances.
//!
//! Every threshold used by the solvers lives here so that no module invents
//! its own magic numbers. The defaults are what the test suite pins.

use serde::{Deserialize, Serialize};

/// Tolerance record shared by all solvers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tolerances {
    /// Residual for inverse-branch / preimage Newton solves, in lift units.
    pub preimage_residual: f64,
    /// Newton iteration cap; exceeding it is a hard error.
    pub newton_max_iter: usize,
    /// Newton switches to plain bisection after this many steps.
    pub newton_bisect_after: usize,
    /// Re-closure residual for periodic orbits, circle distance.
    pub orbit_residual: f64,
    /// Relative error allowed between analytic and finite-difference DT.
    pub deriv_check_rel: f64,
    /// Sup-norm residual for the conjugacy relation `π∘S0 = S∘π`.
    pub conjugacy_residual: f64,
    /// Distance to an itinerary arc boundary below which coding is ambiguous.
    pub boundary_ambiguity: f64,
    /// Allowed defect when checking that a point set is forward-invariant.
    pub e_invariance: f64,
    /// Fixed-point iteration for orbit location stops at this step size.
    pub contraction_step: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            preimage_residual: 1e-12,
            newton_max_iter: 100,
            newton_bisect_after: 50,
            orbit_residual: 1e-12,
            deriv_check_rel: 1e-5,
            conjugacy_residual: 1e-8,
            boundary_ambiguity: 1e-12,
            e_invariance: 1e-3,
            contraction_step: 1e-13,
        }
    }
}
