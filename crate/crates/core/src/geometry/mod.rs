//! Time-dependent convex sets in fiber dimension 1 through 4.
//!
//! A [`ConvexSetSpec`] describes a closed bounded convex set whose defining
//! numbers are [`TimeFn`] coefficients; realizing it at a time t yields a
//! [`RealizedSet`] with concrete geometry. A [`ConvexFamily`] pairs a spec
//! with a horizon and validates it; a [`SpaceTimeTrack`] is the main family
//! plus an optional avoidance family contained in it.
//!
//! Two membership tests live here. The static test asks whether v + F leaves
//! the set's tangent cone at a boundary point v, via outward normals. The
//! space-time test probes the forward tangent cone of the track itself: it
//! measures q_k = distance(K(t + s_k), v + s_k W) / s_k on a dyadic schedule
//! s_k and classifies the limit behavior as Member, NonMember, or
//! Inconclusive, keeping the quotients as evidence.

mod cone;
mod family;
pub mod random;
mod realized;
pub mod sample;

pub use cone::{cone_member_spacetime, cone_member_static, ConeMembership, ConeProbe, ConeVerdict};
pub use family::{AvoidanceFamily, ConvexFamily, SpaceTimeTrack};
pub use realized::RealizedSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timefn::TimeFn;

/// Scale-free geometric tolerance: boundary activity is resolved at
/// EPS_GEO * diameter, cone dot products at EPS_GEO * (|F| + 1).
pub const EPS_GEO: f64 = 1e-9;

/// Iterative projections certify the returned point to this tolerance.
pub const EPS_PROJ: f64 = 1e-10;

/// One linear constraint n(t) . v <= b(t).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfSpace {
    pub normal: Vec<TimeFn>,
    pub offset: TimeFn,
}

/// Closed bounded convex set with time-dependent coefficients.
///
/// The ellipsoid is { v : (v - c)' Q (v - c) <= 1 } with Q symmetric
/// positive definite, so shape = diag(1, 4) has semi-axes (1, 1/2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ConvexSetSpec {
    Ball {
        center: Vec<TimeFn>,
        radius: TimeFn,
    },
    Box {
        lower: Vec<TimeFn>,
        upper: Vec<TimeFn>,
    },
    Polytope {
        constraints: Vec<HalfSpace>,
    },
    Ellipsoid {
        center: Vec<TimeFn>,
        shape: Vec<Vec<TimeFn>>,
    },
}

impl ConvexSetSpec {
    /// Fiber dimension, validated for internal consistency (1 <= k <= 4,
    /// every coefficient vector the same length, square shape matrix).
    pub fn fiber_dim(&self) -> Result<usize> {
        let k = match self {
            ConvexSetSpec::Ball { center, .. } => center.len(),
            ConvexSetSpec::Box { lower, upper } => {
                if lower.len() != upper.len() {
                    return Err(Error::invalid(
                        "box",
                        format!(
                            "lower has {} coordinates, upper has {}",
                            lower.len(),
                            upper.len()
                        ),
                    ));
                }
                lower.len()
            }
            ConvexSetSpec::Polytope { constraints } => {
                let k = constraints
                    .first()
                    .map(|c| c.normal.len())
                    .ok_or_else(|| Error::invalid("polytope", "needs at least one constraint"))?;
                for (i, c) in constraints.iter().enumerate() {
                    if c.normal.len() != k {
                        return Err(Error::invalid(
                            "polytope",
                            format!("constraint {i} has {} coordinates, expected {k}", c.normal.len()),
                        ));
                    }
                }
                k
            }
            ConvexSetSpec::Ellipsoid { center, shape } => {
                let k = center.len();
                if shape.len() != k || shape.iter().any(|row| row.len() != k) {
                    return Err(Error::invalid(
                        "ellipsoid",
                        format!("shape matrix must be {k} x {k}"),
                    ));
                }
                k
            }
        };
        if !(1..=4).contains(&k) {
            return Err(Error::invalid(
                "set",
                format!("fiber dimension {k} outside 1..=4"),
            ));
        }
        Ok(k)
    }

    /// Every time coefficient in the description.
    pub(crate) fn time_fns(&self) -> Vec<&TimeFn> {
        let mut out = Vec::new();
        match self {
            ConvexSetSpec::Ball { center, radius } => {
                out.extend(center.iter());
                out.push(radius);
            }
            ConvexSetSpec::Box { lower, upper } => {
                out.extend(lower.iter());
                out.extend(upper.iter());
            }
            ConvexSetSpec::Polytope { constraints } => {
                for c in constraints {
                    out.extend(c.normal.iter());
                    out.push(&c.offset);
                }
            }
            ConvexSetSpec::Ellipsoid { center, shape } => {
                out.extend(center.iter());
                for row in shape {
                    out.extend(row.iter());
                }
            }
        }
        out
    }

    /// Concrete geometry at time t. Fails if the numbers at t do not
    /// describe a nonempty bounded convex set.
    pub fn realize(&self, t: f64) -> Result<RealizedSet> {
        let k = self.fiber_dim()?;
        match self {
            ConvexSetSpec::Ball { center, radius } => {
                let c: Vec<f64> = center.iter().map(|f| f.eval(t)).collect();
                let r = radius.eval(t);
                RealizedSet::ball(c, r)
            }
            ConvexSetSpec::Box { lower, upper } => {
                let l: Vec<f64> = lower.iter().map(|f| f.eval(t)).collect();
                let u: Vec<f64> = upper.iter().map(|f| f.eval(t)).collect();
                RealizedSet::boxed(l, u)
            }
            ConvexSetSpec::Polytope { constraints } => {
                let normals: Vec<Vec<f64>> = constraints
                    .iter()
                    .map(|c| c.normal.iter().map(|f| f.eval(t)).collect())
                    .collect();
                let offsets: Vec<f64> = constraints.iter().map(|c| c.offset.eval(t)).collect();
                RealizedSet::polytope(normals, offsets, k)
            }
            ConvexSetSpec::Ellipsoid { center, shape } => {
                let c: Vec<f64> = center.iter().map(|f| f.eval(t)).collect();
                let q: Vec<Vec<f64>> = shape
                    .iter()
                    .map(|row| row.iter().map(|f| f.eval(t)).collect())
                    .collect();
                RealizedSet::ellipsoid(c, q)
            }
        }
    }
}
