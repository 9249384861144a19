//! Time-dependent convex families and their space-time tracks.
//!
//! A family is a set-valued curve t -> K(t) given by a parametric spec over
//! a closed horizon. Construction realizes the spec on a 33-point validation
//! grid, which checks nonemptiness, boundedness, and convexity-parameter
//! validity at every grid time, estimates the Hausdorff rate of change, and
//! spot-checks continuity. A track couples a main family with an optional
//! avoidance family that must stay inside it.

use crate::error::{Error, Result};

use super::realized::RealizedSet;
use super::sample;
use super::{ConvexSetSpec, EPS_GEO};

const VALIDATION_GRID: usize = 33;
const HAUSDORFF_BUDGET: usize = 64;
const CONTAINMENT_BUDGET: usize = 48;

#[derive(Debug, Clone)]
pub struct ConvexFamily {
    spec: ConvexSetSpec,
    horizon: [f64; 2],
    fiber_dim: usize,
    /// Grid estimate of sup_t hd(K(t), K(t+dt))/dt.
    lipschitz_rate: f64,
    max_diameter: f64,
    bounding_lower: Vec<f64>,
    bounding_upper: Vec<f64>,
    /// Single realization cached when the spec is time-constant.
    frozen: Option<Box<RealizedSet>>,
}

impl ConvexFamily {
    pub fn new(spec: ConvexSetSpec, horizon: [f64; 2]) -> Result<Self> {
        let [t0, t1] = horizon;
        if !t0.is_finite() || !t1.is_finite() || t0 >= t1 {
            return Err(Error::invalid(
                "horizon",
                format!("[{t0}, {t1}] is not a nondegenerate finite interval"),
            ));
        }
        let fiber_dim = spec.fiber_dim()?;
        for f in spec.time_fns() {
            f.validate_on(horizon)?;
        }
        // A time-constant spec realizes identically everywhere: one
        // realization settles validity, and the rate is exactly zero.
        if spec.time_fns().iter().all(|f| f.is_constant()) {
            let set = spec.realize(t0)?;
            let (bounding_lower, bounding_upper) = set.bounding_box();
            return Ok(ConvexFamily {
                max_diameter: set.diameter(),
                spec,
                horizon,
                fiber_dim,
                lipschitz_rate: 0.0,
                bounding_lower,
                bounding_upper,
                frozen: Some(Box::new(set)),
            });
        }
        let span = t1 - t0;
        let step = span / (VALIDATION_GRID - 1) as f64;
        let mut realizations = Vec::with_capacity(VALIDATION_GRID);
        for j in 0..VALIDATION_GRID {
            let t = t0 + j as f64 * step;
            realizations.push(spec.realize(t)?);
        }
        let mut lipschitz_rate = 0.0_f64;
        for pair in realizations.windows(2) {
            let h = sample::hausdorff_estimate(&pair[0], &pair[1], HAUSDORFF_BUDGET)?;
            lipschitz_rate = lipschitz_rate.max(h / step);
        }
        let mut max_diameter = 0.0_f64;
        let mut bounding_lower = vec![f64::INFINITY; fiber_dim];
        let mut bounding_upper = vec![f64::NEG_INFINITY; fiber_dim];
        for set in &realizations {
            max_diameter = max_diameter.max(set.diameter());
            let (lo, hi) = set.bounding_box();
            for i in 0..fiber_dim {
                bounding_lower[i] = bounding_lower[i].min(lo[i]);
                bounding_upper[i] = bounding_upper[i].max(hi[i]);
            }
        }
        // Continuity spot check: shrinking the time offset by 4 must shrink
        // the Hausdorff distance (up to a floor), otherwise the family jumps.
        let probe_scale = 1e-7 * (1.0 + max_diameter);
        for &frac in &[0.25, 0.5, 0.75] {
            let t = t0 + frac * span;
            let s = span / 64.0;
            let here = spec.realize(t)?;
            let h_full = sample::hausdorff_estimate(&here, &spec.realize(t + s)?, HAUSDORFF_BUDGET)?;
            let h_quarter =
                sample::hausdorff_estimate(&here, &spec.realize(t + s / 4.0)?, HAUSDORFF_BUDGET)?;
            if h_quarter > 0.9 * h_full + probe_scale {
                return Err(Error::invalid(
                    "family",
                    format!("realizations are discontinuous near t = {t}"),
                ));
            }
        }
        Ok(ConvexFamily {
            spec,
            horizon,
            fiber_dim,
            lipschitz_rate,
            max_diameter,
            bounding_lower,
            bounding_upper,
            frozen: None,
        })
    }

    pub fn spec(&self) -> &ConvexSetSpec {
        &self.spec
    }

    pub fn horizon(&self) -> [f64; 2] {
        self.horizon
    }

    pub fn fiber_dim(&self) -> usize {
        self.fiber_dim
    }

    pub fn lipschitz_rate(&self) -> f64 {
        self.lipschitz_rate
    }

    pub fn max_diameter(&self) -> f64 {
        self.max_diameter
    }

    /// Axis-aligned box containing every realization on the horizon grid.
    pub fn bounding_box(&self) -> (&[f64], &[f64]) {
        (&self.bounding_lower, &self.bounding_upper)
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let [t0, t1] = self.horizon;
        if !t.is_finite() || t < t0 || t > t1 {
            return Err(Error::domain(format!(
                "time {t} outside the family horizon [{t0}, {t1}]"
            )));
        }
        Ok(())
    }

    pub fn realize(&self, t: f64) -> Result<RealizedSet> {
        self.check_time(t)?;
        match &self.frozen {
            Some(set) => Ok((**set).clone()),
            None => self.spec.realize(t),
        }
    }

    pub fn distance(&self, t: f64, p: &[f64]) -> Result<f64> {
        self.realize(t)?.distance(p)
    }

    pub fn project(&self, t: f64, p: &[f64]) -> Result<Vec<f64>> {
        self.realize(t)?.project(p)
    }

    pub fn support_gap(&self, t: f64, p: &[f64]) -> Result<f64> {
        self.realize(t)?.support_gap(p)
    }

    pub fn outward_normals(&self, t: f64, v: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.realize(t)?.outward_normals(v)
    }

    pub fn contains(&self, t: f64, p: &[f64], tol: f64) -> Result<bool> {
        Ok(self.realize(t)?.support_gap(p)? <= tol)
    }
}

/// A region to stay clear of, with its exclusion radius: trajectories are
/// expected to keep distance >= 3 * epsilon from the region, and boundary
/// samples within 2 * epsilon of it are excluded from hypothesis checks.
#[derive(Debug, Clone)]
pub struct AvoidanceFamily {
    pub family: ConvexFamily,
    pub epsilon: f64,
}

impl AvoidanceFamily {
    pub fn new(family: ConvexFamily, epsilon: f64) -> Result<Self> {
        if !epsilon.is_finite() || epsilon <= 0.0 {
            return Err(Error::invalid("epsilon", format!("{epsilon} must be > 0")));
        }
        Ok(AvoidanceFamily { family, epsilon })
    }
}

/// The graph of a main family over its horizon, with an optional avoidance
/// region inside it.
#[derive(Debug, Clone)]
pub struct SpaceTimeTrack {
    main: ConvexFamily,
    avoidance: Option<AvoidanceFamily>,
}

impl SpaceTimeTrack {
    pub fn new(main: ConvexFamily, avoidance: Option<AvoidanceFamily>) -> Result<Self> {
        if let Some(av) = &avoidance {
            let fam = &av.family;
            if fam.horizon() != main.horizon() {
                return Err(Error::invalid(
                    "avoidance",
                    "avoidance horizon differs from the main horizon",
                ));
            }
            if fam.fiber_dim() != main.fiber_dim() {
                return Err(Error::invalid(
                    "avoidance",
                    "avoidance fiber dimension differs from the main set",
                ));
            }
            // Convex containment: checking the avoidance boundary suffices.
            let [t0, t1] = main.horizon();
            let step = (t1 - t0) / (VALIDATION_GRID - 1) as f64;
            for j in 0..VALIDATION_GRID {
                let t = t0 + j as f64 * step;
                let main_set = main.realize(t)?;
                let av_set = fam.realize(t)?;
                for p in sample::boundary_samples(&av_set, CONTAINMENT_BUDGET) {
                    let gap = main_set.support_gap(&p)?;
                    if gap > EPS_GEO {
                        return Err(Error::invalid(
                            "avoidance",
                            format!(
                                "avoidance set leaves the main set at t = {t} (gap {gap:e})"
                            ),
                        ));
                    }
                }
            }
        }
        Ok(SpaceTimeTrack { main, avoidance })
    }

    pub fn main(&self) -> &ConvexFamily {
        &self.main
    }

    pub fn avoidance(&self) -> Option<&AvoidanceFamily> {
        self.avoidance.as_ref()
    }

    pub fn horizon(&self) -> [f64; 2] {
        self.main.horizon()
    }

    pub fn fiber_dim(&self) -> usize {
        self.main.fiber_dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timefn::TimeFn;

    fn growing_box() -> ConvexFamily {
        // [-1, 1 + t] in one fiber dimension.
        let spec = ConvexSetSpec::Box {
            lower: vec![TimeFn::Constant(-1.0)],
            upper: vec![TimeFn::Linear {
                intercept: 1.0,
                slope: 1.0,
            }],
        };
        ConvexFamily::new(spec, [0.0, 1.0]).unwrap()
    }

    #[test]
    fn family_estimates_unit_growth_rate() {
        let fam = growing_box();
        assert!((fam.lipschitz_rate() - 1.0).abs() < 1e-9, "rate = {}", fam.lipschitz_rate());
        assert!((fam.max_diameter() - 3.0).abs() < 1e-12);
        let (lo, hi) = fam.bounding_box();
        assert_eq!(lo, &[-1.0]);
        assert_eq!(hi, &[2.0]);
    }

    #[test]
    fn family_rejects_queries_off_horizon() {
        let fam = growing_box();
        assert!(fam.distance(2.0, &[0.0]).is_err());
        assert!(fam.distance(-0.1, &[0.0]).is_err());
        assert!((fam.distance(1.0, &[3.0]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn family_rejects_emptying_spec() {
        // Upper bound crosses below the lower bound at t = 0.5.
        let spec = ConvexSetSpec::Box {
            lower: vec![TimeFn::Constant(0.0)],
            upper: vec![TimeFn::Linear {
                intercept: 0.25,
                slope: -0.5,
            }],
        };
        assert!(ConvexFamily::new(spec, [0.0, 1.0]).is_err());
    }

    #[test]
    fn shrinking_ball_rate() {
        let spec = ConvexSetSpec::Ball {
            center: vec![TimeFn::Constant(0.0), TimeFn::Constant(0.0)],
            radius: TimeFn::Linear {
                intercept: 1.0,
                slope: -0.5,
            },
        };
        let fam = ConvexFamily::new(spec, [0.0, 1.0]).unwrap();
        assert!((fam.lipschitz_rate() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn track_requires_containment() {
        let main = growing_box();
        let inner = ConvexFamily::new(
            ConvexSetSpec::Box {
                lower: vec![TimeFn::Constant(-0.5)],
                upper: vec![TimeFn::Constant(0.5)],
            },
            [0.0, 1.0],
        )
        .unwrap();
        let ok = SpaceTimeTrack::new(
            main.clone(),
            Some(AvoidanceFamily::new(inner, 0.1).unwrap()),
        );
        assert!(ok.is_ok());

        let outer = ConvexFamily::new(
            ConvexSetSpec::Box {
                lower: vec![TimeFn::Constant(-2.0)],
                upper: vec![TimeFn::Constant(0.0)],
            },
            [0.0, 1.0],
        )
        .unwrap();
        let bad = SpaceTimeTrack::new(main, Some(AvoidanceFamily::new(outer, 0.1).unwrap()));
        assert!(bad.is_err());
    }

    #[test]
    fn track_requires_matching_horizons() {
        let main = growing_box();
        let other = ConvexFamily::new(
            ConvexSetSpec::Box {
                lower: vec![TimeFn::Constant(-0.5)],
                upper: vec![TimeFn::Constant(0.5)],
            },
            [0.0, 2.0],
        )
        .unwrap();
        let bad = SpaceTimeTrack::new(main, Some(AvoidanceFamily::new(other, 0.1).unwrap()));
        assert!(bad.is_err());
    }
}
