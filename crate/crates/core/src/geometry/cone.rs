//! Static and forward-in-time tangent cone membership.
//!
//! The static test is the polar characterization: a direction F sits in the
//! tangent cone of a convex set at a boundary point v exactly when n . F <= 0
//! for every outward normal generator n at v.
//!
//! The forward test asks whether a fiber velocity W keeps a point inside a
//! moving family: it samples the quotients
//!
//! ```text
//! q_k = distance(K(t + s_k), v + s_k W) / s_k,   s_k = s_max 2^(-k)
//! ```
//!
//! for k = 0..=20 and turns the tail behavior into a three-valued verdict.
//! A finite procedure can only bound the limit, so an Inconclusive outcome
//! carries the whole quotient sequence as evidence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fiber;

use super::family::{ConvexFamily, SpaceTimeTrack};
use super::realized::RealizedSet;
use super::EPS_GEO;

/// Number of dyadic shrinkings of the initial step.
const SCHEDULE_LEN: usize = 21;
/// Largest forward step probed.
const S_CAP: f64 = 1e-2;
/// Tail start for the NonMember rule.
const TAIL_START: usize = 10;
/// Absolute floor of the Member threshold.
const EPS_ABS_MEMBER: f64 = 1e-8;
/// NonMember floor: the quotients must stay above this on the whole tail.
const DELTA_MIN: f64 = 1e-4;
/// Distance evaluations carry a few ulps of absolute rounding error, and the
/// final quotient divides that by a step near 1e-8. Below that floor a
/// measured quotient is indistinguishable from one converging to zero, so
/// the Member threshold must absorb it. 64 ulps covers every representation
/// (the curved ones evaluate their defining form in floats) with room to
/// spare while staying far under DELTA_MIN.
const NOISE_ULPS: f64 = 64.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConeMembership {
    Member,
    NonMember,
    Inconclusive,
}

/// Outcome of the forward cone test, with the sampled quotient sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConeVerdict {
    pub value: ConeMembership,
    pub evidence: Vec<f64>,
}

/// True iff v + F points into the tangent cone of the realized set at the
/// boundary point v: every outward normal generator satisfies
/// n . F <= eps_cone with eps_cone = 1e-9 (|F| + 1).
pub fn cone_member_static(
    family: &ConvexFamily,
    t: f64,
    v: &[f64],
    f: &[f64],
) -> Result<bool> {
    let normals = family.outward_normals(t, v)?;
    Ok(static_member_from_normals(&normals, f))
}

pub(crate) fn static_member_from_normals(normals: &[Vec<f64>], f: &[f64]) -> bool {
    let eps_cone = EPS_GEO * (fiber::norm(f) + 1.0);
    normals.iter().all(|n| fiber::dot(n, f) <= eps_cone)
}

/// Realizations of the main family along the dyadic schedule anchored at a
/// fixed base time. Building one probe and reusing it amortizes the set
/// realizations over many (v, W) queries at the same time.
pub struct ConeProbe {
    offsets: Vec<f64>,
    sets: Vec<RealizedSet>,
    now: RealizedSet,
    eps_act: f64,
    member_threshold: f64,
}

impl ConeProbe {
    pub fn new(track: &SpaceTimeTrack, t: f64) -> Result<Self> {
        let [t0, t1] = track.horizon();
        if !t.is_finite() || t < t0 || t > t1 {
            return Err(Error::domain(format!(
                "time {t} outside the track horizon [{t0}, {t1}]"
            )));
        }
        if t >= t1 {
            return Err(Error::domain(format!(
                "no forward direction exists at the horizon end t = {t}"
            )));
        }
        let s_max = S_CAP.min(t1 - t);
        let mut offsets = Vec::with_capacity(SCHEDULE_LEN);
        let mut sets = Vec::with_capacity(SCHEDULE_LEN);
        for k in 0..SCHEDULE_LEN {
            let s = s_max * 0.5_f64.powi(k as i32);
            offsets.push(s);
            sets.push(track.main().realize(t + s)?);
        }
        let now = track.main().realize(t)?;
        let eps_act = EPS_GEO * now.diameter();
        let c_lin = 10.0 * track.main().lipschitz_rate();
        let member_threshold = EPS_ABS_MEMBER.max(c_lin * offsets[SCHEDULE_LEN - 1]);
        Ok(ConeProbe {
            offsets,
            sets,
            now,
            eps_act,
            member_threshold,
        })
    }

    /// Forward cone verdict for velocity w at the probe's base point time.
    pub fn verdict(&self, v: &[f64], w: &[f64]) -> Result<ConeVerdict> {
        if self.now.distance(v)? > self.eps_act {
            return Err(Error::domain("base point is not on the space-time track"));
        }
        let mut evidence = Vec::with_capacity(self.offsets.len());
        for (s, set) in self.offsets.iter().zip(&self.sets) {
            let moved = fiber::add_scaled(v, *s, w);
            evidence.push(set.distance(&moved)? / s);
        }
        let s_last = self.offsets[self.offsets.len() - 1];
        let scale = 1.0 + self.now.diameter() + fiber::norm(v);
        let noise_floor = (NOISE_ULPS * f64::EPSILON * scale / s_last).min(DELTA_MIN / 10.0);
        let threshold = self.member_threshold.max(noise_floor);
        let last = evidence[evidence.len() - 1];
        let value = if last <= threshold {
            ConeMembership::Member
        } else if evidence[TAIL_START..].iter().all(|&q| q >= DELTA_MIN) {
            ConeMembership::NonMember
        } else {
            ConeMembership::Inconclusive
        };
        Ok(ConeVerdict { value, evidence })
    }
}

/// Forward cone membership of the fiber velocity W at a track point (v, t).
pub fn cone_member_spacetime(
    track: &SpaceTimeTrack,
    v: &[f64],
    t: f64,
    w: &[f64],
) -> Result<ConeVerdict> {
    ConeProbe::new(track, t)?.verdict(v, w)
}
