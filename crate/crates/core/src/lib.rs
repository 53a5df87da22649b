//! Lyapunov-minimizing measures of expanding circle maps.
//!
//! The crate builds, at desk scale, the full constructive pipeline that turns
//! an expanding self-map `T` of the circle into a nearby map `S0 = T + h`
//! whose Lyapunov minimizing measure is uniquely supported on a periodic
//! orbit, together with a numerical certificate that the property persists on
//! an open neighborhood of `S0`:
//!
//! 1. [`circle_map`] — trigonometric lifts plus compactly supported bump
//!    layers, with exact first/second derivative data and inverse branches;
//! 2. [`orbits`] — periodic orbit enumeration by symbolic coding, orbit gaps
//!    and Lyapunov averages, large-gap orbit search;
//! 3. [`subaction`] — a min-plus (Lax–Oleinik) solver for sub-actions `f`
//!    with `F = f∘T − f + log DT ≥ α` and equality on the minimizing set;
//! 4. [`perturbation`] — the constants ledger, the explicit piecewise-cubic
//!    bump `h`, its mollification, and plan assembly;
//! 5. [`conjugacy`] — itinerary coding, pointwise conjugacies to nearby maps,
//!    and continuation of periodic orbits;
//! 6. [`verifier`] — far-region bounds, escape-sum positivity, and exhaustive
//!    orbit comparison certifying unique minimality over a sampled ball.

pub mod circle_map;
pub mod conjugacy;
pub mod orbits;
pub mod perturbation;
pub mod subaction;
pub mod tol;
pub mod verifier;

pub use circle_map::{BumpKind, BumpLayer, ExpandingMap, ExpansionProfile, MapError, TrigLift};
pub use orbits::{OrbitCatalog, PeriodicOrbit};
pub use perturbation::{ConstantsLedger, PerturbationPlan, PlanOptions, Regime};
pub use subaction::{GridFunction, SubAction};
pub use tol::Tolerances;
pub use verifier::VerificationReport;
