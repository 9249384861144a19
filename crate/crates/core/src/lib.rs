//! Numerical laboratory for containment and avoidance of time-dependent
//! convex sets under reaction-diffusion dynamics.
//!
//! The crate is organized around one question: given a family of closed
//! convex sets K(t) in fiber dimension k <= 4, a reaction field F, and a
//! semi-discrete parabolic evolution on a circle or torus, does the state
//! stay inside K(t) (and outside a declared avoidance family)? Modules:
//!
//! - [`geometry`]: time-dependent convex sets, distances, projections,
//!   support gaps, tangent-cone membership tests.
//! - [`dynamics`]: reaction fields, fiber ODE integration, boundary
//!   hypothesis and preservation checks.
//! - [`field`]: periodic grids, discrete Laplacian and gradient terms,
//!   the semi-discrete PDE stepper.
//! - [`monitor`]: sup-distance series, forward Dini derivatives, the
//!   Gronwall check, and the combined verdict.
//! - [`scenarios`]: the built-in catalog S1..S6 with expected verdicts.

pub mod dynamics;
pub mod error;
pub mod expr;
pub mod fiber;
pub mod field;
pub mod geometry;
pub mod monitor;
pub mod scenarios;
pub mod timefn;

pub use dynamics::{
    check_ode_hypothesis, check_ode_preservation, integrate_fiber, FieldKind, HypothesisReport,
    PreservationReport, ReactionField, Trajectory,
};
pub use error::{Error, Result};
pub use field::{
    gradient_term, laplacian, run_simulation, step_pde, GradientCoeffs, ManifoldGrid,
    NoopObserver, Observer, PdeConfig, Section, Topology,
};
pub use expr::Expression;
pub use geometry::{
    cone_member_spacetime, cone_member_static, AvoidanceFamily, ConeMembership, ConeProbe,
    ConeVerdict, ConvexFamily, ConvexSetSpec, HalfSpace, RealizedSet, SpaceTimeTrack,
};
pub use monitor::{
    avoidance_margin, check_gronwall, dini_forward, dini_of_sup, run_monitored,
    semicontinuity_probe, sup_distance, theorem_verdict, MonitorSeries, SemicontinuityExpectation,
    SemicontinuityReport, TheoremVerdict, TrackMonitor,
};
pub use scenarios::{
    cap_polytope, catalog, find, run_pipeline, AvoidanceConfig, EvolutionConfig, ExpectedVerdict,
    PipelineOptions, PipelineOutcome, Scenario, TrackConfig, PRESERVATION_STARTS,
};
pub use timefn::TimeFn;
