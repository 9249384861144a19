//! Fiber dynamics: reaction fields, trajectory integration, and the two
//! ODE-level checks behind the containment theorem.
//!
//! A reaction field F(x, v, t) drives the fiber ODE dv/dt = F(x*, v, t) at a
//! frozen spatial point. The hypothesis check asks whether F points into the
//! forward cone of the track at sampled boundary points; the preservation
//! check integrates actual trajectories and measures how far they stray.
//! The two are linked: if the hypothesis holds everywhere, trajectories
//! started inside the track should stay inside up to integration error.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::fiber;
use crate::geometry::sample;
use crate::geometry::{ConeMembership, ConeProbe, ConeVerdict, ConvexFamily, SpaceTimeTrack};
use crate::timefn::TimeFn;

/// Distance beyond which a trajectory counts as having left the track.
pub const TOL_ODE: f64 = 1e-5;

/// Default spatial budget for boundary sampling in the hypothesis check.
pub const DEFAULT_HYPOTHESIS_SPACE: usize = 256;

/// Default number of time samples in the hypothesis check.
pub const DEFAULT_HYPOTHESIS_TIME: usize = 64;

const LIPSCHITZ_TIME_SAMPLES: usize = 9;
const LIPSCHITZ_LATTICE: usize = 4;

/// Spatial point at which fiber-level checks evaluate the field. Fields used
/// in the ODE-level checks are typically spatially homogeneous; expression
/// fields that do reference x or y are probed at the origin.
const REP_X: [f64; 2] = [0.0, 0.0];

/// Parametric form of a reaction term.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldKind {
    /// F = 0.
    Zero,
    /// Componentwise square: F_i = v_i^2.
    Square,
    /// F = A(t) v for a square matrix of time functions.
    Linear { matrix: Vec<Vec<TimeFn>> },
    /// Planar rotation F = rate * (-v_2, v_1); fiber dimension 2 only.
    Rotation { rate: f64 },
    /// Radial push that switches on past a threshold along a direction:
    /// F = strength * ramp((v . d - threshold) / width) * v, where ramp is
    /// the cubic smoothstep (0 below 0, 1 above 1) and d is the unit
    /// normalization of `direction`.
    RadialBump {
        strength: f64,
        direction: Vec<f64>,
        threshold: f64,
        width: f64,
    },
    /// One expression per fiber component, over x, y, s1..s4, t.
    Expression { components: Vec<Expression> },
}

/// Cubic ramp: 0 for u <= 0, 3u^2 - 2u^3 on (0, 1), 1 for u >= 1.
fn smoothstep(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        u * u * (3.0 - 2.0 * u)
    }
}

fn eval_kind_into(kind: &FieldKind, x: &[f64], v: &[f64], t: f64, out: &mut [f64]) {
    match kind {
        FieldKind::Zero => out.fill(0.0),
        FieldKind::Square => {
            for (o, &a) in out.iter_mut().zip(v) {
                *o = a * a;
            }
        }
        FieldKind::Linear { matrix } => {
            for (o, row) in out.iter_mut().zip(matrix) {
                *o = row.iter().zip(v).map(|(f, &vi)| f.eval(t) * vi).sum();
            }
        }
        FieldKind::Rotation { rate } => {
            out[0] = -rate * v[1];
            out[1] = rate * v[0];
        }
        FieldKind::RadialBump {
            strength,
            direction,
            threshold,
            width,
        } => {
            let along = fiber::dot(direction, v);
            let gain = strength * smoothstep((along - threshold) / width);
            for (o, &vi) in out.iter_mut().zip(v) {
                *o = gain * vi;
            }
        }
        FieldKind::Expression { components } => {
            for (o, e) in out.iter_mut().zip(components) {
                *o = e.eval(x, v, t);
            }
        }
    }
}

fn eval_kind(kind: &FieldKind, x: &[f64], v: &[f64], t: f64) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    eval_kind_into(kind, x, v, t, &mut out);
    out
}

/// A validated reaction field tied to a family's neighborhood and horizon.
///
/// Construction checks dimensional consistency against the family, samples
/// the field for finiteness on the padded bounding box (family box widened
/// by twice its maximal diameter) over the horizon, and estimates a fiber
/// Lipschitz constant from difference quotients on that lattice.
#[derive(Debug, Clone)]
pub struct ReactionField {
    kind: FieldKind,
    fiber_dim: usize,
    horizon: [f64; 2],
    lipschitz: f64,
}

impl ReactionField {
    pub fn new(kind: FieldKind, family: &ConvexFamily) -> Result<Self> {
        let k = family.fiber_dim();
        match &kind {
            FieldKind::Zero | FieldKind::Square => {}
            FieldKind::Linear { matrix } => {
                if matrix.len() != k || matrix.iter().any(|row| row.len() != k) {
                    return Err(Error::invalid(
                        "reaction",
                        format!("linear matrix is not {k} x {k}"),
                    ));
                }
                for f in matrix.iter().flatten() {
                    f.validate_on(family.horizon())?;
                }
            }
            FieldKind::Rotation { rate } => {
                if k != 2 {
                    return Err(Error::invalid(
                        "reaction",
                        "rotation field needs fiber dimension 2",
                    ));
                }
                if !rate.is_finite() {
                    return Err(Error::invalid("reaction", "rotation rate is not finite"));
                }
            }
            FieldKind::RadialBump {
                strength,
                direction,
                threshold,
                width,
            } => {
                if direction.len() != k {
                    return Err(Error::invalid(
                        "reaction",
                        format!("bump direction has {} entries, fiber needs {k}", direction.len()),
                    ));
                }
                if !fiber::all_finite(direction) || fiber::norm(direction) <= 0.0 {
                    return Err(Error::invalid("reaction", "bump direction is degenerate"));
                }
                if !strength.is_finite() || !threshold.is_finite() {
                    return Err(Error::invalid("reaction", "bump parameters are not finite"));
                }
                if !width.is_finite() || *width <= 0.0 {
                    return Err(Error::invalid("reaction", "bump width must be positive"));
                }
            }
            FieldKind::Expression { components } => {
                if components.len() != k {
                    return Err(Error::invalid(
                        "reaction",
                        format!("{} expressions given, fiber needs {k}", components.len()),
                    ));
                }
                for e in components {
                    if e.max_fiber_component() > k {
                        return Err(Error::invalid(
                            "reaction",
                            format!("expression references s{} beyond fiber dimension {k}",
                                e.max_fiber_component()),
                        ));
                    }
                }
            }
        }
        // Normalize the bump direction once so the threshold is a length
        // along a unit direction.
        let kind = match kind {
            FieldKind::RadialBump {
                strength,
                direction,
                threshold,
                width,
            } => {
                let unit = fiber::normalized(&direction)
                    .ok_or_else(|| Error::invalid("reaction", "bump direction is degenerate"))?;
                FieldKind::RadialBump {
                    strength,
                    direction: unit,
                    threshold,
                    width,
                }
            }
            other => other,
        };
        let lipschitz = estimate_lipschitz(&kind, family)?;
        Ok(ReactionField {
            kind,
            fiber_dim: k,
            horizon: family.horizon(),
            lipschitz,
        })
    }

    pub fn kind(&self) -> &FieldKind {
        &self.kind
    }

    pub fn fiber_dim(&self) -> usize {
        self.fiber_dim
    }

    pub fn horizon(&self) -> [f64; 2] {
        self.horizon
    }

    /// Difference-quotient estimate of the fiber Lipschitz constant on the
    /// padded neighborhood, computed at construction.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn eval(&self, x: &[f64], v: &[f64], t: f64) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.fiber_dim);
        eval_kind(&self.kind, x, v, t)
    }

    /// Allocation-free variant for hot loops; `out` must have the fiber
    /// dimension.
    pub fn eval_into(&self, x: &[f64], v: &[f64], t: f64, out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.fiber_dim);
        debug_assert_eq!(out.len(), self.fiber_dim);
        eval_kind_into(&self.kind, x, v, t, out);
    }
}

/// Max difference quotient |F(v + h e) - F(v)| / h over a lattice covering
/// the family's padded bounding box and horizon. Doubles as the finiteness
/// check: any non-finite sample is a construction error.
fn estimate_lipschitz(kind: &FieldKind, family: &ConvexFamily) -> Result<f64> {
    let k = family.fiber_dim();
    let (lo, hi) = family.bounding_box();
    let pad = 2.0 * family.max_diameter();
    let lower: Vec<f64> = lo.iter().map(|a| a - pad).collect();
    let upper: Vec<f64> = hi.iter().map(|b| b + pad).collect();
    let extent = lower
        .iter()
        .zip(&upper)
        .map(|(a, b)| b - a)
        .fold(0.0_f64, f64::max);
    let h = 1e-4 * (1.0 + extent);
    let [t0, t1] = family.horizon();
    let mut rate = 0.0_f64;
    let mut idx = vec![0usize; k];
    loop {
        let v: Vec<f64> = (0..k)
            .map(|i| {
                let s = idx[i] as f64 / (LIPSCHITZ_LATTICE - 1) as f64;
                lower[i] + s * (upper[i] - lower[i])
            })
            .collect();
        for j in 0..LIPSCHITZ_TIME_SAMPLES {
            let t = t0 + (t1 - t0) * j as f64 / (LIPSCHITZ_TIME_SAMPLES - 1) as f64;
            let f0 = eval_kind(kind, &REP_X, &v, t);
            if !fiber::all_finite(&f0) {
                return Err(Error::invalid(
                    "reaction",
                    format!("field is not finite near v = {v:?} at t = {t}"),
                ));
            }
            for axis in 0..k {
                // Probe inward at the top edge to stay in the neighborhood.
                let step = if idx[axis] + 1 == LIPSCHITZ_LATTICE { -h } else { h };
                let mut v1 = v.clone();
                v1[axis] += step;
                let f1 = eval_kind(kind, &REP_X, &v1, t);
                if !fiber::all_finite(&f1) {
                    return Err(Error::invalid(
                        "reaction",
                        format!("field is not finite near v = {v1:?} at t = {t}"),
                    ));
                }
                rate = rate.max(fiber::dist(&f1, &f0) / h);
            }
        }
        // Odometer over the lattice.
        let mut carry = 0;
        loop {
            if carry == k {
                return Ok(rate);
            }
            idx[carry] += 1;
            if idx[carry] < LIPSCHITZ_LATTICE {
                break;
            }
            idx[carry] = 0;
            carry += 1;
        }
    }
}

/// A fixed-step integration record.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    /// Strictly increasing sample times from t0 to t1.
    pub times: Vec<f64>,
    /// Fiber state at each time; every entry is finite.
    pub values: Vec<Vec<f64>>,
    pub dt: f64,
    /// Richardson estimate from the final step (full step vs two halves).
    pub error_estimate: f64,
}

fn rk4_step(field: &ReactionField, x: &[f64], v: &[f64], t: f64, h: f64) -> Vec<f64> {
    let k1 = field.eval(x, v, t);
    let k2 = field.eval(x, &fiber::add_scaled(v, 0.5 * h, &k1), t + 0.5 * h);
    let k3 = field.eval(x, &fiber::add_scaled(v, 0.5 * h, &k2), t + 0.5 * h);
    let k4 = field.eval(x, &fiber::add_scaled(v, h, &k3), t + h);
    let mut out = v.to_vec();
    for i in 0..out.len() {
        out[i] += h / 6.0 * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
    }
    out
}

/// Integration that keeps whatever prefix stayed finite. Returns the partial
/// trajectory and, on blow-up, the last finite time.
fn integrate_partial(
    field: &ReactionField,
    x: &[f64],
    v0: &[f64],
    t0: f64,
    t1: f64,
    dt: f64,
) -> Result<(Trajectory, Option<f64>)> {
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::invalid("dt", format!("{dt} must be positive")));
    }
    if !t0.is_finite() || !t1.is_finite() || t0 >= t1 {
        return Err(Error::invalid(
            "time span",
            format!("[{t0}, {t1}] is not a nondegenerate interval"),
        ));
    }
    let [h0, h1] = field.horizon;
    let slack = 1e-9 * (1.0 + h1.abs().max(h0.abs()));
    if t0 < h0 - slack || t1 > h1 + slack {
        return Err(Error::domain(format!(
            "integration span [{t0}, {t1}] leaves the field horizon [{h0}, {h1}]"
        )));
    }
    if v0.len() != field.fiber_dim {
        return Err(Error::invalid(
            "initial state",
            format!("has {} components, fiber needs {}", v0.len(), field.fiber_dim),
        ));
    }
    if !fiber::all_finite(v0) {
        return Err(Error::invalid("initial state", "contains non-finite entries"));
    }
    let span = t1 - t0;
    let n_steps = ((span / dt - 1e-9).ceil().max(1.0)) as usize;
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut values = Vec::with_capacity(n_steps + 1);
    times.push(t0);
    values.push(v0.to_vec());
    let mut t = t0;
    let mut v = v0.to_vec();
    let mut last_start: (f64, Vec<f64>, f64) = (t0, v0.to_vec(), dt);
    for i in 0..n_steps {
        let t_next = if i + 1 == n_steps {
            t1
        } else {
            t0 + (i as f64 + 1.0) * dt
        };
        let h = t_next - t;
        let v_next = rk4_step(field, x, &v, t, h);
        if !fiber::all_finite(&v_next) {
            let traj = Trajectory {
                times,
                values,
                dt,
                error_estimate: f64::INFINITY,
            };
            return Ok((traj, Some(t)));
        }
        last_start = (t, v.clone(), h);
        v = v_next;
        t = t_next;
        times.push(t);
        values.push(v.clone());
    }
    // Redo the final step at half width; the scaled gap estimates the local
    // error of the fourth-order step.
    let (ts, vs, h) = last_start;
    let mid = rk4_step(field, x, &vs, ts, 0.5 * h);
    let fine = rk4_step(field, x, &mid, ts + 0.5 * h, 0.5 * h);
    let error_estimate = if fiber::all_finite(&fine) {
        fiber::dist(&v, &fine) / 15.0
    } else {
        f64::INFINITY
    };
    let traj = Trajectory {
        times,
        values,
        dt,
        error_estimate,
    };
    Ok((traj, None))
}

/// Classical fixed-step fourth-order integration of the fiber equation
/// dv/dt = F(x, v, t) from t0 to t1. The last step is shortened to land on
/// t1 exactly. A non-finite state aborts with a blow-up error carrying the
/// last finite time.
pub fn integrate_fiber(
    field: &ReactionField,
    x: &[f64],
    v0: &[f64],
    t0: f64,
    t1: f64,
    dt: f64,
) -> Result<Trajectory> {
    let (traj, blow) = integrate_partial(field, x, v0, t0, t1, dt)?;
    match blow {
        Some(time) => Err(Error::BlowUp { time }),
        None => Ok(traj),
    }
}

/// One sampled point of a hypothesis check.
#[derive(Debug, Clone, Serialize)]
pub struct HypothesisSample {
    pub point: Vec<f64>,
    pub time: f64,
    /// None when the sample was excluded by the avoidance buffer.
    pub verdict: Option<ConeVerdict>,
    pub excluded_by_avoidance: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisSummary {
    /// True when every non-excluded sample was a member.
    pub holds_everywhere_tested: bool,
    /// Indices of the non-member samples.
    pub failure_locus: Vec<usize>,
    pub n_inconclusive: usize,
}

/// Outcome of sampling the forward-cone hypothesis over a track.
#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub samples: Vec<HypothesisSample>,
    pub summary: HypothesisSummary,
    pub n_space: usize,
    pub n_time: usize,
    /// Lipschitz estimate of the field that was checked, for downstream
    /// growth bounds.
    pub c_lipschitz: f64,
    pub jitter: Option<u64>,
}

/// Samples the track boundary on a time lattice and asks, at each point,
/// whether the field direction lies in the forward cone. Samples within
/// twice the avoidance epsilon of the avoidance realization are recorded
/// but excluded from the verdict. With `jitter`, time samples move within
/// their lattice cell and boundary points are nudged along the boundary,
/// seeded deterministically.
pub fn check_ode_hypothesis(
    track: &SpaceTimeTrack,
    field: &ReactionField,
    n_space: usize,
    n_time: usize,
    jitter: Option<u64>,
) -> Result<HypothesisReport> {
    if n_space == 0 || n_time == 0 {
        return Err(Error::invalid("sampling", "need at least one sample per axis"));
    }
    if track.fiber_dim() != field.fiber_dim() {
        return Err(Error::invalid(
            "reaction",
            "field and track fiber dimensions differ",
        ));
    }
    let [t0, t1] = track.horizon();
    let [f0, f1] = field.horizon();
    let slack = 1e-9 * (1.0 + t1.abs().max(t0.abs()));
    if t0 < f0 - slack || t1 > f1 + slack {
        return Err(Error::domain(
            "track horizon leaves the field horizon".to_string(),
        ));
    }
    let mut rng = jitter.map(ChaCha8Rng::seed_from_u64);
    let span = t1 - t0;
    let mut samples = Vec::new();
    for j in 0..n_time {
        // Left-closed lattice: the horizon end has no forward direction, so
        // it is never a sample time.
        let offset = match &mut rng {
            Some(r) => j as f64 + r.gen_range(0.0..0.9),
            None => j as f64,
        };
        let t = t0 + span * offset / n_time as f64;
        let main_set = track.main().realize(t)?;
        let probe = ConeProbe::new(track, t)?;
        let avoid = match track.avoidance() {
            Some(av) => Some((av.family.realize(t)?, av.epsilon)),
            None => None,
        };
        let mut points = sample::boundary_samples(&main_set, n_space);
        if let Some(r) = &mut rng {
            let anchor = sample::anchor_point(&main_set);
            let scale = 0.02 * (1.0 + main_set.diameter());
            for p in points.iter_mut() {
                let mut z = p.clone();
                for zi in z.iter_mut() {
                    *zi += scale * r.gen_range(-1.0..1.0);
                }
                if fiber::dist(&z, &anchor) < 1e-12 {
                    continue;
                }
                // Push strictly outside, then drop back onto the boundary.
                let outside = fiber::add_scaled(&anchor, 3.0, &fiber::sub(&z, &anchor));
                *p = main_set.project(&outside)?;
            }
        }
        for p in points {
            let excluded = match &avoid {
                Some((set, eps)) => set.distance(&p)? <= 2.0 * eps,
                None => false,
            };
            let verdict = if excluded {
                None
            } else {
                let w = field.eval(&REP_X, &p, t);
                Some(probe.verdict(&p, &w)?)
            };
            samples.push(HypothesisSample {
                point: p,
                time: t,
                verdict,
                excluded_by_avoidance: excluded,
            });
        }
    }
    let mut failure_locus = Vec::new();
    let mut n_inconclusive = 0;
    let mut holds = true;
    for (i, s) in samples.iter().enumerate() {
        match s.verdict.as_ref().map(|v| v.value) {
            Some(ConeMembership::Member) | None => {}
            Some(ConeMembership::NonMember) => {
                failure_locus.push(i);
                holds = false;
            }
            Some(ConeMembership::Inconclusive) => {
                n_inconclusive += 1;
                holds = false;
            }
        }
    }
    Ok(HypothesisReport {
        samples,
        summary: HypothesisSummary {
            holds_everywhere_tested: holds,
            failure_locus,
            n_inconclusive,
        },
        n_space,
        n_time,
        c_lipschitz: field.lipschitz(),
        jitter,
    })
}

/// Outcome of integrating a bundle of trajectories against the track.
#[derive(Debug, Clone, Serialize)]
pub struct PreservationReport {
    /// Sup over starts and measured times of the distance to the main
    /// realization.
    pub max_excursion: f64,
    /// First (start index, time) with distance beyond the exit tolerance.
    pub first_exit: Option<(usize, f64)>,
    /// First (start index, time) at which a trajectory touched the
    /// avoidance set; None when the track has no avoidance region.
    pub first_avoidance_entry: Option<(usize, f64)>,
    /// Earliest (start index, last finite time) among blown-up starts.
    pub blow_up: Option<(usize, f64)>,
    pub starts: Vec<Vec<f64>>,
    pub dt: f64,
    pub tol: f64,
}

/// Integrates the fiber equation from boundary and interior starts at the
/// initial time and measures every trajectory against the evolving track.
/// Starts within twice the avoidance epsilon of the avoidance realization
/// are skipped. Blow-ups truncate the affected trajectory; the rest of the
/// report still covers its finite prefix.
pub fn check_ode_preservation(
    track: &SpaceTimeTrack,
    field: &ReactionField,
    n_starts: usize,
    dt: f64,
) -> Result<PreservationReport> {
    if n_starts == 0 {
        return Err(Error::invalid("sampling", "need at least one start"));
    }
    if track.fiber_dim() != field.fiber_dim() {
        return Err(Error::invalid(
            "reaction",
            "field and track fiber dimensions differ",
        ));
    }
    let [t0, t1] = track.horizon();
    let start_set = track.main().realize(t0)?;
    let mut starts = sample::boundary_samples(&start_set, n_starts.div_ceil(2));
    starts.extend(sample::interior_samples(&start_set, n_starts / 2));
    if let Some(av) = track.avoidance() {
        // Same exclusion buffer as the hypothesis sampler: the guarantee
        // only covers trajectories clear of the avoidance region, so starts
        // inside the buffer prove nothing about it.
        let av_set = av.family.realize(t0)?;
        let mut kept = Vec::with_capacity(starts.len());
        for p in starts {
            if av_set.distance(&p)? > 2.0 * av.epsilon {
                kept.push(p);
            }
        }
        starts = kept;
    }
    if starts.is_empty() {
        return Err(Error::domain(
            "every candidate start lies inside the avoidance set".to_string(),
        ));
    }
    let mut trajectories = Vec::with_capacity(starts.len());
    let mut blow_up: Option<(usize, f64)> = None;
    for (i, p) in starts.iter().enumerate() {
        let (traj, blew) = integrate_partial(field, &REP_X, p, t0, t1, dt)?;
        if let Some(time) = blew {
            let earlier = match blow_up {
                Some((_, t_prev)) => time < t_prev,
                None => true,
            };
            if earlier {
                blow_up = Some((i, time));
            }
        }
        trajectories.push(traj);
    }
    let n_times = trajectories.iter().map(|tr| tr.times.len()).max().unwrap();
    let mut max_excursion = 0.0_f64;
    let mut first_exit: Option<(usize, f64)> = None;
    let mut first_avoidance_entry: Option<(usize, f64)> = None;
    // Time-major sweep so each realization is built once per measured time
    // and "first" means earliest time, then lowest start index.
    for j in 0..n_times {
        let t = trajectories
            .iter()
            .find(|tr| j < tr.times.len())
            .map(|tr| tr.times[j])
            .unwrap();
        let main_set = track.main().realize(t)?;
        let avoid_set = match track.avoidance() {
            Some(av) => Some(av.family.realize(t)?),
            None => None,
        };
        for (i, tr) in trajectories.iter().enumerate() {
            if j >= tr.times.len() {
                continue;
            }
            let v = &tr.values[j];
            let d = main_set.distance(v)?;
            max_excursion = max_excursion.max(d);
            if d > TOL_ODE && first_exit.is_none() {
                first_exit = Some((i, t));
            }
            if let Some(av) = &avoid_set {
                if first_avoidance_entry.is_none() && av.support_gap(v)? <= 0.0 {
                    first_avoidance_entry = Some((i, t));
                }
            }
        }
    }
    Ok(PreservationReport {
        max_excursion,
        first_exit,
        first_avoidance_entry,
        blow_up,
        starts,
        dt,
        tol: TOL_ODE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{AvoidanceFamily, ConvexSetSpec};

    fn constant_box(lo: f64, hi: f64, horizon: [f64; 2]) -> ConvexFamily {
        let spec = ConvexSetSpec::Box {
            lower: vec![TimeFn::Constant(lo)],
            upper: vec![TimeFn::Constant(hi)],
        };
        ConvexFamily::new(spec, horizon).unwrap()
    }

    fn unit_ball_2d(horizon: [f64; 2]) -> ConvexFamily {
        let spec = ConvexSetSpec::Ball {
            center: vec![TimeFn::Constant(0.0), TimeFn::Constant(0.0)],
            radius: TimeFn::Constant(1.0),
        };
        ConvexFamily::new(spec, horizon).unwrap()
    }

    fn blow_up_box(horizon: [f64; 2]) -> ConvexFamily {
        // [-10, 1/(1 - t)]: the upper face rides the square-field solution.
        let spec = ConvexSetSpec::Box {
            lower: vec![TimeFn::Constant(-10.0)],
            upper: vec![TimeFn::Reciprocal {
                scale: 1.0,
                t_star: 1.0,
            }],
        };
        ConvexFamily::new(spec, horizon).unwrap()
    }

    fn expr(src: &str) -> Expression {
        Expression::parse(src).unwrap()
    }

    #[test]
    fn zero_field_is_stationary() {
        let fam = unit_ball_2d([0.0, 1.0]);
        let field = ReactionField::new(FieldKind::Zero, &fam).unwrap();
        let traj = integrate_fiber(&field, &REP_X, &[3.0, -1.0], 0.0, 1.0, 0.01).unwrap();
        assert_eq!(traj.times.len(), 101);
        for v in &traj.values {
            assert_eq!(v, &vec![3.0, -1.0]);
        }
        for w in traj.times.windows(2) {
            assert!(w[1] > w[0]);
        }
        assert_eq!(traj.error_estimate, 0.0);
        assert_eq!(field.lipschitz(), 0.0);
    }

    #[test]
    fn square_field_hits_the_reciprocal_endpoint() {
        // dv/dt = v^2 from v(0) = 1 has v(t) = 1/(1 - t), so v(0.9) = 10.
        let fam = constant_box(-1.0, 1.0, [0.0, 0.9]);
        let field = ReactionField::new(FieldKind::Square, &fam).unwrap();
        let traj = integrate_fiber(&field, &REP_X, &[1.0], 0.0, 0.9, 1e-4).unwrap();
        let end = traj.values.last().unwrap()[0];
        assert!((end - 10.0).abs() <= 1e-6, "endpoint {end}");
        assert!(traj.error_estimate < 1e-8);
    }

    #[test]
    fn linear_decay_matches_the_exponential() {
        let fam = unit_ball_2d([0.0, 1.0]);
        let kind = FieldKind::Linear {
            matrix: vec![
                vec![TimeFn::Constant(-1.0), TimeFn::Constant(0.0)],
                vec![TimeFn::Constant(0.0), TimeFn::Constant(-1.0)],
            ],
        };
        let field = ReactionField::new(kind, &fam).unwrap();
        let traj = integrate_fiber(&field, &REP_X, &[1.0, 0.0], 0.0, 1.0, 1e-3).unwrap();
        let end = traj.values.last().unwrap();
        assert!((end[0] - (-1.0_f64).exp()).abs() <= 1e-8, "end {end:?}");
        assert!(end[1].abs() <= 1e-12);
    }

    #[test]
    fn halving_dt_divides_the_error_fourth_order() {
        let fam = constant_box(-1.0, 1.0, [0.0, 0.9]);
        let field = ReactionField::new(FieldKind::Square, &fam).unwrap();
        let endpoint = |dt: f64| {
            integrate_fiber(&field, &REP_X, &[1.0], 0.0, 0.9, dt)
                .unwrap()
                .values
                .last()
                .unwrap()[0]
        };
        let coarse = (endpoint(1e-3) - 10.0).abs();
        let fine = (endpoint(5e-4) - 10.0).abs();
        let factor = coarse / fine;
        assert!(
            (12.0..=20.0).contains(&factor),
            "factor {factor} (coarse {coarse:e}, fine {fine:e})"
        );
    }

    #[test]
    fn square_field_blow_up_reports_last_finite_time() {
        // v(0) = 2 has a pole at t = 0.5.
        let fam = constant_box(-1.0, 1.0, [0.0, 0.9]);
        let field = ReactionField::new(FieldKind::Square, &fam).unwrap();
        match integrate_fiber(&field, &REP_X, &[2.0], 0.0, 0.9, 1e-3) {
            Err(Error::BlowUp { time }) => {
                assert!(time > 0.3 && time < 0.9, "blow-up at {time}");
            }
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn integration_rejects_bad_inputs() {
        let fam = unit_ball_2d([0.0, 1.0]);
        let field = ReactionField::new(FieldKind::Zero, &fam).unwrap();
        assert!(integrate_fiber(&field, &REP_X, &[0.0, 0.0], 0.0, 2.0, 1e-2).is_err());
        assert!(integrate_fiber(&field, &REP_X, &[0.0, 0.0], 0.5, 0.5, 1e-2).is_err());
        assert!(integrate_fiber(&field, &REP_X, &[0.0], 0.0, 1.0, 1e-2).is_err());
        assert!(integrate_fiber(&field, &REP_X, &[0.0, 0.0], 0.0, 1.0, 0.0).is_err());
        assert!(integrate_fiber(&field, &REP_X, &[f64::NAN, 0.0], 0.0, 1.0, 1e-2).is_err());
    }

    #[test]
    fn field_construction_rejects_mismatches() {
        let fam = unit_ball_2d([0.0, 1.0]);
        assert!(ReactionField::new(
            FieldKind::Linear {
                matrix: vec![vec![TimeFn::Constant(1.0)]],
            },
            &fam
        )
        .is_err());
        assert!(ReactionField::new(
            FieldKind::RadialBump {
                strength: 1.0,
                direction: vec![1.0],
                threshold: 0.5,
                width: 0.1,
            },
            &fam
        )
        .is_err());
        assert!(ReactionField::new(
            FieldKind::RadialBump {
                strength: 1.0,
                direction: vec![0.0, 0.0],
                threshold: 0.5,
                width: 0.1,
            },
            &fam
        )
        .is_err());
        assert!(ReactionField::new(
            FieldKind::Expression {
                components: vec![expr("s1")],
            },
            &fam
        )
        .is_err());
        assert!(ReactionField::new(
            FieldKind::Expression {
                components: vec![expr("s3"), expr("s1")],
            },
            &fam
        )
        .is_err());
        let one_d = constant_box(-1.0, 1.0, [0.0, 1.0]);
        assert!(ReactionField::new(FieldKind::Rotation { rate: 1.0 }, &one_d).is_err());
    }

    #[test]
    fn bump_gates_on_the_threshold() {
        let fam = unit_ball_2d([0.0, 1.0]);
        let field = ReactionField::new(
            FieldKind::RadialBump {
                strength: 2.0,
                direction: vec![1.0, 0.0],
                threshold: 0.5,
                width: 0.25,
            },
            &fam,
        )
        .unwrap();
        assert_eq!(field.eval(&REP_X, &[0.4, 0.3], 0.0), vec![0.0, 0.0]);
        assert_eq!(field.eval(&REP_X, &[0.8, 0.0], 0.0), vec![1.6, 0.0]);
        // Halfway up the ramp the cubic equals 1/2 exactly.
        let mid = field.eval(&REP_X, &[0.625, 0.0], 0.0);
        assert!((mid[0] - 0.625).abs() < 1e-12);
    }

    #[test]
    fn lipschitz_estimates_are_in_range() {
        let fam = constant_box(-1.0, 1.0, [0.0, 1.0]);
        // Padded box is [-5, 5], so the square field quotient peaks near 10.
        let square = ReactionField::new(FieldKind::Square, &fam).unwrap();
        assert!(
            square.lipschitz() > 8.0 && square.lipschitz() < 12.0,
            "C = {}",
            square.lipschitz()
        );
        let fam2 = unit_ball_2d([0.0, 1.0]);
        let rot = ReactionField::new(FieldKind::Rotation { rate: 1.0 }, &fam2).unwrap();
        assert!((rot.lipschitz() - 1.0).abs() < 0.1, "C = {}", rot.lipschitz());
    }

    #[test]
    fn endpoints_vary_continuously_in_the_start() {
        let ball = unit_ball_2d([0.0, 1.0]);
        let rot = ReactionField::new(FieldKind::Rotation { rate: 1.0 }, &ball).unwrap();
        let boxed = constant_box(-1.0, 1.0, [0.0, 0.9]);
        let sq = ReactionField::new(FieldKind::Square, &boxed).unwrap();
        let delta = 1e-6;
        let dt = 1e-3;
        let cases: Vec<(&ReactionField, Vec<f64>, f64)> = vec![
            (&rot, vec![0.3, -0.4], 1.0),
            (&sq, vec![0.5], 0.9),
        ];
        for (field, v0, t1) in cases {
            let mut shifted = v0.clone();
            shifted[0] += delta;
            let a = integrate_fiber(field, &REP_X, &v0, 0.0, t1, dt).unwrap();
            let b = integrate_fiber(field, &REP_X, &shifted, 0.0, t1, dt).unwrap();
            let gap = fiber::dist(a.values.last().unwrap(), b.values.last().unwrap());
            let bound = (field.lipschitz() * t1).exp() * delta * (1.0 + 10.0 * dt);
            assert!(gap <= bound, "gap {gap:e} vs bound {bound:e}");
            assert!(gap >= delta / 2.0, "perturbation vanished: {gap:e}");
        }
    }

    #[test]
    fn integration_is_bitwise_deterministic() {
        let fam = constant_box(-1.0, 1.0, [0.0, 0.9]);
        let field = ReactionField::new(FieldKind::Square, &fam).unwrap();
        let a = integrate_fiber(&field, &REP_X, &[0.7], 0.0, 0.9, 1e-3).unwrap();
        let b = integrate_fiber(&field, &REP_X, &[0.7], 0.0, 0.9, 1e-3).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.times, b.times);
    }

    #[test]
    fn hypothesis_holds_on_the_expanding_box() {
        // The upper face grows exactly as fast as the square field pushes.
        let fam = blow_up_box([0.0, 0.9]);
        let track = SpaceTimeTrack::new(fam, None).unwrap();
        let field = ReactionField::new(FieldKind::Square, track.main()).unwrap();
        let report = check_ode_hypothesis(&track, &field, 4, 12, None).unwrap();
        assert!(report.summary.holds_everywhere_tested);
        assert!(report.summary.failure_locus.is_empty());
        assert_eq!(report.summary.n_inconclusive, 0);
        assert_eq!(report.samples.len(), 24);
        assert!(report.samples.iter().all(|s| !s.excluded_by_avoidance));
    }

    #[test]
    fn hypothesis_fails_exactly_at_the_pushed_face() {
        let fam = constant_box(-1.0, 1.0, [0.0, 0.5]);
        let track = SpaceTimeTrack::new(fam, None).unwrap();
        let field = ReactionField::new(
            FieldKind::Expression {
                components: vec![expr("1")],
            },
            track.main(),
        )
        .unwrap();
        let report = check_ode_hypothesis(&track, &field, 4, 8, None).unwrap();
        assert!(!report.summary.holds_everywhere_tested);
        assert_eq!(report.summary.failure_locus.len(), 8);
        for &i in &report.summary.failure_locus {
            assert!((report.samples[i].point[0] - 1.0).abs() < 1e-12);
        }
        assert_eq!(report.summary.n_inconclusive, 0);
    }

    #[test]
    fn hypothesis_report_serialization_is_deterministic() {
        let fam = blow_up_box([0.0, 0.9]);
        let track = SpaceTimeTrack::new(fam, None).unwrap();
        let field = ReactionField::new(FieldKind::Square, track.main()).unwrap();
        let a = check_ode_hypothesis(&track, &field, 4, 6, Some(7)).unwrap();
        let b = check_ode_hypothesis(&track, &field, 4, 6, Some(7)).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let c = check_ode_hypothesis(&track, &field, 4, 6, Some(8)).unwrap();
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&c).unwrap()
        );
    }

    #[test]
    fn jittered_samples_stay_on_the_boundary_and_agree() {
        let fam = unit_ball_2d([0.0, 1.0]);
        let track = SpaceTimeTrack::new(fam, None).unwrap();
        let field = ReactionField::new(FieldKind::Zero, track.main()).unwrap();
        let report = check_ode_hypothesis(&track, &field, 16, 4, Some(42)).unwrap();
        assert!(report.summary.holds_everywhere_tested);
        for s in &report.samples {
            let r = fiber::norm(&s.point);
            assert!((r - 1.0).abs() < 1e-9, "|p| = {r}");
        }
    }

    #[test]
    fn preservation_is_exact_for_the_zero_field() {
        let fam = unit_ball_2d([0.0, 1.0]);
        let track = SpaceTimeTrack::new(fam, None).unwrap();
        let field = ReactionField::new(FieldKind::Zero, track.main()).unwrap();
        let report = check_ode_preservation(&track, &field, 8, 1e-2).unwrap();
        assert!(report.max_excursion <= 1e-12);
        assert!(report.first_exit.is_none());
        assert!(report.first_avoidance_entry.is_none());
        assert!(report.blow_up.is_none());
    }

    #[test]
    fn preservation_tracks_the_expanding_box() {
        let fam = blow_up_box([0.0, 0.9]);
        let track = SpaceTimeTrack::new(fam, None).unwrap();
        let field = ReactionField::new(FieldKind::Square, track.main()).unwrap();
        let report = check_ode_preservation(&track, &field, 8, 1e-4).unwrap();
        // The boundary start rides the upper face; everything else stays
        // interior. Integration error is the only excursion.
        assert!(report.max_excursion <= 1e-6, "excursion {}", report.max_excursion);
        assert!(report.first_exit.is_none());
        assert!(report.blow_up.is_none());
    }

    #[test]
    fn preservation_flags_the_escaping_face() {
        let fam = constant_box(-1.0, 1.0, [0.0, 0.5]);
        let track = SpaceTimeTrack::new(fam, None).unwrap();
        let field = ReactionField::new(
            FieldKind::Expression {
                components: vec![expr("1")],
            },
            track.main(),
        )
        .unwrap();
        let report = check_ode_preservation(&track, &field, 6, 1e-3).unwrap();
        let (start, time) = report.first_exit.expect("an exit");
        assert!((report.starts[start][0] - 1.0).abs() < 1e-12);
        assert!(time <= 2e-3, "exit at {time}");
        assert!((report.max_excursion - 0.5).abs() < 1e-6);
    }

    #[test]
    fn preservation_records_blow_up_and_keeps_the_prefix() {
        let fam = constant_box(-1.0, 1.0, [0.0, 2.0]);
        let track = SpaceTimeTrack::new(fam, None).unwrap();
        let field = ReactionField::new(FieldKind::Square, track.main()).unwrap();
        let report = check_ode_preservation(&track, &field, 4, 1e-3).unwrap();
        let (start, time) = report.blow_up.expect("a blow-up");
        assert!((report.starts[start][0] - 1.0).abs() < 1e-12);
        assert!(time > 0.9 && time < 1.2, "blow-up at {time}");
        assert!(report.first_exit.is_some());
        assert!(report.max_excursion > 10.0 * TOL_ODE);
    }

    #[test]
    fn preservation_skips_and_detects_avoidance() {
        let horizon = [0.0, 1.0];
        let main = unit_ball_2d(horizon);
        let inner = ConvexFamily::new(
            ConvexSetSpec::Ball {
                center: vec![TimeFn::Constant(0.7), TimeFn::Constant(0.0)],
                radius: TimeFn::Constant(0.25),
            },
            horizon,
        )
        .unwrap();
        let track = SpaceTimeTrack::new(
            main,
            Some(AvoidanceFamily::new(inner, 0.02).unwrap()),
        )
        .unwrap();
        let field = ReactionField::new(
            FieldKind::Expression {
                components: vec![expr("0.5"), expr("0")],
            },
            track.main(),
        )
        .unwrap();
        let report = check_ode_preservation(&track, &field, 8, 1e-3).unwrap();
        // Boundary cover of 4 plus anchor and four contractions, minus the
        // one start inside the avoidance buffer.
        assert_eq!(report.starts.len(), 8);
        assert!(report
            .starts
            .iter()
            .all(|p| !(p[0] > 0.45 && p[0] < 0.55 && p[1].abs() < 1e-9)));
        let (exit_start, exit_time) = report.first_exit.expect("the rightmost point exits");
        assert!((report.starts[exit_start][0] - 1.0).abs() < 1e-12);
        assert!(exit_time <= 2e-3);
        let (entry_start, entry_time) = report.first_avoidance_entry.expect("the anchor drifts in");
        assert!(fiber::norm(&report.starts[entry_start]) < 1e-12);
        assert!(entry_time > 0.89 && entry_time < 0.92, "entry at {entry_time}");
        assert!((report.max_excursion - 0.5).abs() < 1e-6);
    }

    #[test]
    fn field_kind_serde_round_trips() {
        let kinds = vec![
            r#""zero""#.to_string(),
            r#""square""#.to_string(),
            r#"{"rotation":{"rate":1.5}}"#.to_string(),
            r#"{"radial_bump":{"strength":1.0,"direction":[1.0,0.0],"threshold":0.8,"width":0.1}}"#
                .to_string(),
            r#"{"linear":{"matrix":[[-1.0,{"sinusoid":{"offset":0.0,"amplitude":1.0,"angular":2.0,"phase":0.0}}],[0.0,-1.0]]}}"#.to_string(),
            r#"{"expression":{"components":["s1 * t","cos(x) - s2"]}}"#.to_string(),
        ];
        for src in kinds {
            let kind: FieldKind = serde_json::from_str(&src).unwrap();
            let back = serde_json::to_string(&kind).unwrap();
            let again: FieldKind = serde_json::from_str(&back).unwrap();
            assert_eq!(back, serde_json::to_string(&again).unwrap());
        }
        assert!(serde_json::from_str::<FieldKind>(r#"{"rotation":{"speed":1.0}}"#).is_err());
    }
}
