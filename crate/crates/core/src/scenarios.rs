//! Built-in catalog of fully specified runs, each with the verdicts it is
//! expected to produce.
//!
//! Every entry is a complete, serializable description: grid, track,
//! reaction, first-order coefficients, initial data, sampling resolution.
//! The catalog doubles as the regression surface: running a scenario end to
//! end must reproduce its expected verdict exactly.

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    check_ode_hypothesis, check_ode_preservation, FieldKind, HypothesisReport,
    PreservationReport, ReactionField, DEFAULT_HYPOTHESIS_SPACE, DEFAULT_HYPOTHESIS_TIME,
};
use crate::error::Result;
use crate::expr::Expression;
use crate::field::{GradientCoeffs, ManifoldGrid, PdeConfig, Section, Topology};
use crate::geometry::{AvoidanceFamily, ConvexFamily, ConvexSetSpec, HalfSpace, SpaceTimeTrack};
use crate::monitor::{run_monitored, theorem_verdict, MonitorSeries, TheoremVerdict};
use crate::timefn::TimeFn;

/// Fiber starts used by the trajectory preservation check.
pub const PRESERVATION_STARTS: usize = 24;

/// Serializable description of a space-time track.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackConfig {
    pub main: ConvexSetSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avoidance: Option<AvoidanceConfig>,
    pub horizon: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AvoidanceConfig {
    pub set: ConvexSetSpec,
    pub epsilon: f64,
}

impl TrackConfig {
    pub fn build(&self) -> Result<SpaceTimeTrack> {
        let main = ConvexFamily::new(self.main.clone(), self.horizon)?;
        let avoidance = match &self.avoidance {
            Some(a) => Some(AvoidanceFamily::new(
                ConvexFamily::new(a.set.clone(), self.horizon)?,
                a.epsilon,
            )?),
            None => None,
        };
        SpaceTimeTrack::new(main, avoidance)
    }
}

/// Serializable description of the semi-discrete evolution.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    pub topology: Topology,
    pub metric_scale: TimeFn,
    pub reaction: FieldKind,
    /// One first-order coefficient expression per grid direction.
    pub gradient: Vec<Expression>,
    /// One initial-data expression per fiber component.
    pub initial: Vec<Expression>,
    /// None selects the stability bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_every: Option<usize>,
}

/// The four booleans a run is expected to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedVerdict {
    pub hypothesis_ok: bool,
    pub containment_ok: bool,
    pub avoidance_ok: bool,
    pub gronwall_ok: bool,
}

impl ExpectedVerdict {
    pub fn all_pass() -> Self {
        ExpectedVerdict {
            hypothesis_ok: true,
            containment_ok: true,
            avoidance_ok: true,
            gronwall_ok: true,
        }
    }

    pub fn matches(&self, v: &TheoremVerdict) -> bool {
        self.hypothesis_ok == v.hypothesis_ok
            && self.containment_ok == v.containment_ok
            && self.avoidance_ok == v.avoidance_ok
            && self.gronwall_ok == v.gronwall_ok
    }
}

/// A fully specified run plus its expected outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    /// True for configurations that exercise only the fiber equation.
    pub ode_only: bool,
    pub track: TrackConfig,
    pub evolution: EvolutionConfig,
    /// Boundary samples per time for the cone hypothesis check.
    pub n_space: usize,
    /// Time samples for the cone hypothesis check.
    pub n_time: usize,
    /// Step size for fiber trajectory checks.
    pub dt_ode: f64,
    pub expected: ExpectedVerdict,
    /// Containment tolerance; None means 10 * (h^2 + dt) of the built run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_contain: Option<f64>,
}

impl Scenario {
    pub fn build_grid(&self) -> Result<ManifoldGrid> {
        ManifoldGrid::new(self.evolution.topology, self.evolution.metric_scale.clone())
    }

    pub fn build_track(&self) -> Result<SpaceTimeTrack> {
        self.track.build()
    }

    pub fn build_field(&self, track: &SpaceTimeTrack) -> Result<ReactionField> {
        ReactionField::new(self.evolution.reaction.clone(), track.main())
    }

    pub fn build_pde(&self) -> Result<PdeConfig> {
        let grid = self.build_grid()?;
        let track = self.build_track()?;
        let field = self.build_field(&track)?;
        let u = GradientCoeffs::new(self.evolution.gradient.clone())?;
        PdeConfig::new(
            grid,
            track,
            field,
            u,
            self.evolution.initial.clone(),
            self.evolution.dt,
            self.evolution.record_every,
        )
    }

    /// Margin the avoidance check must maintain: three times the declared
    /// exclusion radius, or zero without an avoidance family.
    pub fn margin_floor(&self) -> f64 {
        self.track.avoidance.as_ref().map_or(0.0, |a| 3.0 * a.epsilon)
    }
}

/// Inscribed polygonal model of the spherical cap
/// {v in Ball(0, 1) : v . e1 >= c}: the chord halfspace plus sixteen chords
/// of the arc, vertices on the unit circle.
pub fn cap_polytope(c: f64) -> ConvexSetSpec {
    let phi = c.acos();
    let mut constraints = vec![HalfSpace {
        normal: vec![TimeFn::Constant(-1.0), TimeFn::Constant(0.0)],
        offset: TimeFn::Constant(-c),
    }];
    let step = 2.0 * phi / 16.0;
    for j in 0..16 {
        let mid = -phi + (j as f64 + 0.5) * step;
        constraints.push(HalfSpace {
            normal: vec![TimeFn::Constant(mid.cos()), TimeFn::Constant(mid.sin())],
            offset: TimeFn::Constant((step / 2.0).cos()),
        });
    }
    ConvexSetSpec::Polytope { constraints }
}

fn e(src: &str) -> Expression {
    Expression::parse(src).expect("catalog expression parses")
}

fn c(v: f64) -> TimeFn {
    TimeFn::Constant(v)
}

fn s1() -> Scenario {
    Scenario {
        name: "S1".to_string(),
        description: "Static interval under pure diffusion: values stay in the hull of the \
                      initial data, so the distance never leaves zero."
            .to_string(),
        ode_only: false,
        track: TrackConfig {
            main: ConvexSetSpec::Box {
                lower: vec![c(-1.0)],
                upper: vec![c(1.0)],
            },
            avoidance: None,
            horizon: [0.0, 0.5],
        },
        evolution: EvolutionConfig {
            topology: Topology::Circle { n: 256 },
            metric_scale: c(1.0),
            reaction: FieldKind::Zero,
            gradient: vec![e("0")],
            initial: vec![e("0.9*cos(x)")],
            dt: None,
            record_every: None,
        },
        n_space: DEFAULT_HYPOTHESIS_SPACE,
        n_time: DEFAULT_HYPOTHESIS_TIME,
        dt_ode: 1e-4,
        expected: ExpectedVerdict::all_pass(),
        tol_contain: Some(1e-8),
    }
}

fn s2() -> Scenario {
    Scenario {
        name: "S2".to_string(),
        description: "Componentwise squaring against an upper edge that blows up at t = 1: \
                      the edge grows exactly as fast as the worst fiber trajectory, so the \
                      run stays inside through t = 0.9."
            .to_string(),
        ode_only: false,
        track: TrackConfig {
            main: ConvexSetSpec::Box {
                lower: vec![c(-10.0)],
                upper: vec![TimeFn::Reciprocal {
                    scale: 1.0,
                    t_star: 1.0,
                }],
            },
            avoidance: None,
            horizon: [0.0, 0.9],
        },
        evolution: EvolutionConfig {
            topology: Topology::Circle { n: 256 },
            metric_scale: c(1.0),
            reaction: FieldKind::Square,
            gradient: vec![e("0")],
            initial: vec![e("0.5 + 0.3*cos(x)")],
            dt: None,
            record_every: None,
        },
        n_space: DEFAULT_HYPOTHESIS_SPACE,
        n_time: DEFAULT_HYPOTHESIS_TIME,
        dt_ode: 1e-4,
        expected: ExpectedVerdict::all_pass(),
        tol_contain: None,
    }
}

fn s3() -> Scenario {
    // The ellipsoid {v : v' diag(1, 4) v <= 1} rotated by angle t has shape
    // matrix R(t) diag(1, 4) R(t)', whose entries are the sinusoids below.
    let q11 = TimeFn::Sinusoid {
        offset: 2.5,
        amplitude: -1.5,
        angular: 2.0,
        phase: std::f64::consts::FRAC_PI_2,
    };
    let q12 = TimeFn::Sinusoid {
        offset: 0.0,
        amplitude: -1.5,
        angular: 2.0,
        phase: 0.0,
    };
    let q22 = TimeFn::Sinusoid {
        offset: 2.5,
        amplitude: 1.5,
        angular: 2.0,
        phase: std::f64::consts::FRAC_PI_2,
    };
    Scenario {
        name: "S3".to_string(),
        description: "Rigid rotation of the fiber inside an ellipsoid that rotates at the \
                      same rate: boundary points ride the boundary, interior points stay \
                      interior."
            .to_string(),
        ode_only: false,
        track: TrackConfig {
            main: ConvexSetSpec::Ellipsoid {
                center: vec![c(0.0), c(0.0)],
                shape: vec![vec![q11, q12.clone()], vec![q12, q22]],
            },
            avoidance: None,
            horizon: [0.0, 1.0],
        },
        evolution: EvolutionConfig {
            topology: Topology::Circle { n: 256 },
            metric_scale: c(1.0),
            reaction: FieldKind::Rotation { rate: 1.0 },
            gradient: vec![e("0")],
            initial: vec![e("0.8*cos(x/2)"), e("0.32*sin(x/2)")],
            dt: None,
            record_every: None,
        },
        n_space: DEFAULT_HYPOTHESIS_SPACE,
        n_time: DEFAULT_HYPOTHESIS_TIME,
        dt_ode: 1e-4,
        expected: ExpectedVerdict::all_pass(),
        tol_contain: None,
    }
}

fn s4() -> Scenario {
    Scenario {
        name: "S4".to_string(),
        description: "Radial push that only activates on the cap the run must avoid: the \
                      state starts on the far side, the push never fires, and the margin \
                      stays above three exclusion radii."
            .to_string(),
        ode_only: false,
        track: TrackConfig {
            main: ConvexSetSpec::Ball {
                center: vec![c(0.0), c(0.0)],
                radius: c(1.0),
            },
            avoidance: Some(AvoidanceConfig {
                set: cap_polytope(0.8),
                epsilon: 0.1,
            }),
            horizon: [0.0, 0.5],
        },
        evolution: EvolutionConfig {
            topology: Topology::Circle { n: 256 },
            metric_scale: c(1.0),
            reaction: FieldKind::RadialBump {
                strength: 1.0,
                direction: vec![1.0, 0.0],
                threshold: 0.8,
                width: 0.1,
            },
            gradient: vec![e("0")],
            initial: vec![e("0.8*cos(pi/2 + x/2)"), e("0.8*sin(pi/2 + x/2)")],
            dt: None,
            record_every: None,
        },
        n_space: DEFAULT_HYPOTHESIS_SPACE,
        n_time: DEFAULT_HYPOTHESIS_TIME,
        dt_ode: 1e-4,
        expected: ExpectedVerdict::all_pass(),
        tol_contain: None,
    }
}

fn s5() -> Scenario {
    Scenario {
        name: "S5".to_string(),
        description: "Constant outward push from the upper edge of a static interval: the \
                      cone condition fails there, and the solution 1 + t leaves on schedule."
            .to_string(),
        ode_only: false,
        track: TrackConfig {
            main: ConvexSetSpec::Box {
                lower: vec![c(-1.0)],
                upper: vec![c(1.0)],
            },
            avoidance: None,
            horizon: [0.0, 0.1],
        },
        evolution: EvolutionConfig {
            topology: Topology::Circle { n: 128 },
            metric_scale: c(1.0),
            reaction: FieldKind::Expression {
                components: vec![e("1")],
            },
            gradient: vec![e("0")],
            initial: vec![e("1")],
            dt: None,
            record_every: None,
        },
        n_space: DEFAULT_HYPOTHESIS_SPACE,
        n_time: DEFAULT_HYPOTHESIS_TIME,
        dt_ode: 1e-4,
        expected: ExpectedVerdict {
            hypothesis_ok: false,
            containment_ok: false,
            avoidance_ok: true,
            gronwall_ok: false,
        },
        tol_contain: None,
    }
}

fn s6() -> Scenario {
    Scenario {
        name: "S6".to_string(),
        description: "The static interval again, now with a breathing metric scale and a \
                      small constant transport term: diffusion plus transport still keeps \
                      values inside the hull."
            .to_string(),
        ode_only: false,
        track: TrackConfig {
            main: ConvexSetSpec::Box {
                lower: vec![c(-1.0)],
                upper: vec![c(1.0)],
            },
            avoidance: None,
            horizon: [0.0, 0.5],
        },
        evolution: EvolutionConfig {
            topology: Topology::Circle { n: 256 },
            metric_scale: TimeFn::Sinusoid {
                offset: 1.0,
                amplitude: 0.5,
                angular: 1.0,
                phase: 0.0,
            },
            reaction: FieldKind::Zero,
            gradient: vec![e("0.1")],
            initial: vec![e("0.9*cos(x)")],
            dt: None,
            record_every: None,
        },
        n_space: DEFAULT_HYPOTHESIS_SPACE,
        n_time: DEFAULT_HYPOTHESIS_TIME,
        dt_ode: 1e-4,
        expected: ExpectedVerdict::all_pass(),
        tol_contain: None,
    }
}

/// The six built-in scenarios, in a fixed deterministic order.
pub fn catalog() -> Vec<Scenario> {
    vec![s1(), s2(), s3(), s4(), s5(), s6()]
}

pub fn find(name: &str) -> Option<Scenario> {
    catalog().into_iter().find(|s| s.name == name)
}

/// Knobs a caller may override without editing the scenario.
#[derive(Debug, Clone, Default)]
pub struct PipelineOptions {
    /// Seed for jittered hypothesis sampling; None keeps the lattice.
    pub jitter: Option<u64>,
    pub tol_contain: Option<f64>,
    pub record_every: Option<usize>,
    pub n_space: Option<usize>,
    pub n_time: Option<usize>,
    pub skip_preservation: bool,
}

/// Everything one end-to-end run produces.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineOutcome {
    pub scenario: String,
    pub verdict: TheoremVerdict,
    pub hypothesis: HypothesisReport,
    pub preservation: Option<PreservationReport>,
    pub series: MonitorSeries,
    pub final_section: Option<Section>,
    /// Present when the evolution aborted (blow-up); the series then covers
    /// the recorded prefix.
    pub sim_error: Option<String>,
    pub tol_contain: f64,
    pub margin_floor: f64,
}

/// Runs a scenario end to end: boundary hypothesis check, fiber
/// preservation check, monitored evolution, combined verdict.
pub fn run_pipeline(scenario: &Scenario, opts: &PipelineOptions) -> Result<PipelineOutcome> {
    let grid = scenario.build_grid()?;
    let track = scenario.build_track()?;
    let field = scenario.build_field(&track)?;
    let u = GradientCoeffs::new(scenario.evolution.gradient.clone())?;
    let record_every = opts.record_every.or(scenario.evolution.record_every);
    let config = PdeConfig::new(
        grid,
        track,
        field,
        u,
        scenario.evolution.initial.clone(),
        scenario.evolution.dt,
        record_every,
    )?;
    let n_space = opts.n_space.unwrap_or(scenario.n_space);
    let n_time = opts.n_time.unwrap_or(scenario.n_time);
    let hypothesis =
        check_ode_hypothesis(config.track(), config.field(), n_space, n_time, opts.jitter)?;
    let preservation = if opts.skip_preservation {
        None
    } else {
        Some(check_ode_preservation(
            config.track(),
            config.field(),
            PRESERVATION_STARTS,
            scenario.dt_ode,
        )?)
    };
    let (series, outcome) = run_monitored(&config);
    let (final_section, sim_error) = match outcome {
        Ok(s) => (Some(s), None),
        Err(err) => (None, Some(err.to_string())),
    };
    let h = config.grid().min_spacing();
    let tol_contain = opts
        .tol_contain
        .or(scenario.tol_contain)
        .unwrap_or(10.0 * (h * h + config.dt()));
    let margin_floor = scenario.margin_floor();
    let mut verdict = theorem_verdict(&hypothesis, &series, tol_contain, margin_floor);
    if let Some(err) = &sim_error {
        verdict.containment_ok = false;
        verdict.details.push_str("; evolution aborted: ");
        verdict.details.push_str(err);
    }
    Ok(PipelineOutcome {
        scenario: scenario.name.clone(),
        verdict,
        hypothesis,
        preservation,
        series,
        final_section,
        sim_error,
        tol_contain,
        margin_floor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::integrate_fiber;

    #[test]
    fn catalog_order_is_fixed() {
        let names: Vec<String> = catalog().into_iter().map(|s| s.name).collect();
        assert_eq!(names, ["S1", "S2", "S3", "S4", "S5", "S6"]);
        assert_eq!(find("S3").unwrap().name, "S3");
        assert!(find("S9").is_none());
    }

    #[test]
    fn every_scenario_builds_and_expectations_are_consistent() {
        for s in catalog() {
            let config = s.build_pde().unwrap_or_else(|e| {
                panic!("{} failed to build: {e}", s.name);
            });
            assert!(config.dt() <= config.dt_bound() * (1.0 + 1e-12), "{}", s.name);
            if !s.expected.hypothesis_ok {
                assert!(
                    !s.expected.containment_ok,
                    "{}: a failing hypothesis cannot require containment",
                    s.name
                );
            }
        }
    }

    #[test]
    fn scenarios_serialize_round_trip() {
        for s in catalog() {
            let json = serde_json::to_string_pretty(&s).unwrap();
            let back: Scenario = serde_json::from_str(&json).unwrap();
            assert_eq!(
                serde_json::to_value(&s).unwrap(),
                serde_json::to_value(&back).unwrap(),
                "{} drifts through serialization",
                s.name
            );
        }
    }

    #[test]
    fn cap_polytope_stays_close_to_the_true_cap() {
        let fam = ConvexFamily::new(cap_polytope(0.8), [0.0, 1.0]).unwrap();
        let set = fam.realize(0.0).unwrap();
        // Probes whose nearest true-cap point is a polytope vertex or chord
        // point, so inscribed and exact distances coincide.
        let cases = [
            ([-0.5, 0.0], 1.3),
            ([1.2, 0.0], 0.2),
            ([0.0, 1.0], (0.64_f64 + 0.16).sqrt()),
        ];
        for (p, want) in cases {
            let d = set.distance(&p).unwrap();
            assert!((d - want).abs() <= 1e-9, "{p:?}: {d} vs {want}");
        }
        // Interior of the cap.
        assert_eq!(set.distance(&[0.9, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn constant_start_oracle_for_the_blow_up_box() {
        // A spatially constant start c follows v(t) = c / (1 - c t), which
        // stays under the box edge 1 / (1 - t) whenever c < 1.
        let s = find("S2").unwrap();
        let track = s.build_track().unwrap();
        let field = s.build_field(&track).unwrap();
        let traj = integrate_fiber(&field, &[0.0, 0.0], &[0.5], 0.0, 0.9, 1e-4).unwrap();
        let got = traj.values.last().unwrap()[0];
        let want = 0.5 / (1.0 - 0.5 * 0.9);
        assert!((got - want).abs() <= 1e-8, "{got} vs {want}");
        let edge = 1.0 / (1.0 - 0.9);
        assert!(got < edge);
    }

    #[test]
    fn s5_leaves_on_schedule() {
        let s = find("S5").unwrap();
        let out = run_pipeline(&s, &PipelineOptions::default()).unwrap();
        assert!(s.expected.matches(&out.verdict), "{}", out.verdict.details);
        let last_f = *out.series.f_values.last().unwrap();
        assert!((last_f - 0.1).abs() <= 1e-4, "f(0.1) = {last_f}");
        // One failing sample per time slice, always the upper edge.
        assert_eq!(out.hypothesis.summary.failure_locus.len(), s.n_time);
        for &idx in &out.hypothesis.summary.failure_locus {
            let sample = &out.hypothesis.samples[idx];
            assert!((sample.point[0] - 1.0).abs() <= 1e-12);
        }
        let pres = out.preservation.unwrap();
        assert!(pres.first_exit.is_some(), "the upper-edge start must exit");
    }

    #[test]
    fn catalog_reproduces_expected_verdicts() {
        for s in catalog() {
            let out = run_pipeline(&s, &PipelineOptions::default()).unwrap();
            assert!(
                s.expected.matches(&out.verdict),
                "{}: hypothesis {} containment {} avoidance {} gronwall {} ({})",
                s.name,
                out.verdict.hypothesis_ok,
                out.verdict.containment_ok,
                out.verdict.avoidance_ok,
                out.verdict.gronwall_ok,
                out.verdict.details
            );
            if s.name == "S1" {
                assert!(out.series.max_f() <= 1e-8);
            }
            if s.name == "S4" {
                let margin = out.series.min_margin().unwrap();
                assert!(margin >= 0.3, "margin {margin}");
                assert!(out.hypothesis.summary.failure_locus.is_empty());
            }
            if s.name != "S5" {
                let pres = out.preservation.as_ref().unwrap();
                assert!(pres.first_exit.is_none(), "{}: {:?}", s.name, pres.first_exit);
                assert!(pres.blow_up.is_none(), "{}", s.name);
            }
        }
    }
}
