//! Containment diagnostics along a simulated evolution: the sup-distance
//! series, forward Dini derivative estimates, the discrete growth-bound
//! check, avoidance margins, and the combined verdict.
//!
//! All series here live on the recording lattice of the simulation, so
//! every estimate is a finite surrogate: the Dini derivative becomes a max
//! over a short forward window, which biases upward and keeps the growth
//! check conservative.

use serde::Serialize;

use crate::dynamics::HypothesisReport;
use crate::error::{Error, Result};
use crate::field::{run_simulation, Observer, PdeConfig, Section};
use crate::geometry::{SpaceTimeTrack, EPS_GEO};

/// Forward window length for Dini derivative estimates.
pub const DINI_WINDOW: usize = 8;

/// Values this close to zero from below still count as nonnegative when
/// deciding which indices the growth check constrains.
const GRONWALL_EPS: f64 = 1e-9;

/// Largest supremum distance of the state from the main set, per recorded
/// time, along with where it was attained and how fast it grew.
#[derive(Debug, Clone, Serialize)]
pub struct MonitorSeries {
    pub times: Vec<f64>,
    /// Max over grid nodes of the distance to the main set.
    pub f_values: Vec<f64>,
    /// Node attaining the max, smallest index on ties.
    pub argmax_nodes: Vec<usize>,
    /// Min over grid nodes of the distance to the avoidance set, when one
    /// is declared.
    pub margins: Option<Vec<f64>>,
    /// Forward-window difference quotients; one entry per time except the
    /// last.
    pub dini_estimates: Vec<f64>,
    /// Nominal spacing of the recording lattice.
    pub record_dt: f64,
    /// Free-form per-row annotations (semicontinuity flags and the like).
    pub flags: Vec<String>,
}

impl MonitorSeries {
    pub fn from_records(
        times: Vec<f64>,
        f_values: Vec<f64>,
        argmax_nodes: Vec<usize>,
        margins: Option<Vec<f64>>,
        record_dt: f64,
    ) -> Result<Self> {
        let n = times.len();
        if f_values.len() != n || argmax_nodes.len() != n {
            return Err(Error::domain("monitor series columns differ in length"));
        }
        if let Some(m) = &margins {
            if m.len() != n {
                return Err(Error::domain("monitor margins differ in length"));
            }
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("monitor times must increase"));
        }
        let mut dini_estimates = Vec::new();
        if n >= 2 {
            for j in 0..n - 1 {
                dini_estimates.push(dini_forward(&times, &f_values, j)?);
            }
        }
        Ok(MonitorSeries {
            flags: vec![String::new(); n],
            times,
            f_values,
            argmax_nodes,
            margins,
            dini_estimates,
            record_dt,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn max_f(&self) -> f64 {
        self.f_values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_margin(&self) -> Option<f64> {
        self.margins
            .as_ref()
            .map(|m| m.iter().copied().fold(f64::INFINITY, f64::min))
    }

    /// Marks rows flagged by a semicontinuity probe: R for a right
    /// continuity violation, L for a left lower semicontinuity violation.
    pub fn annotate(&mut self, report: &SemicontinuityReport) {
        for &j in &report.right_violations {
            if j < self.flags.len() {
                self.flags[j].push('R');
            }
        }
        for &j in &report.left_violations {
            if j < self.flags.len() {
                self.flags[j].push('L');
            }
        }
    }

    /// Renders the series as CSV with columns t, f, argmax_node, margin,
    /// dini, flags. The margin column is empty without an avoidance family
    /// and the dini column is empty on the final row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,f,argmax_node,margin,dini,flags\n");
        for j in 0..self.len() {
            let margin = match &self.margins {
                Some(m) => m[j].to_string(),
                None => String::new(),
            };
            let dini = if j + 1 < self.len() {
                self.dini_estimates[j].to_string()
            } else {
                String::new()
            };
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.times[j], self.f_values[j], self.argmax_nodes[j], margin, dini, self.flags[j]
            ));
        }
        out
    }
}

/// Max over grid nodes of the distance from the node value to the main set
/// at time t, with the attaining node (smallest index on ties).
pub fn sup_distance(s: &Section, track: &SpaceTimeTrack, t: f64) -> Result<(f64, usize)> {
    if s.n_nodes == 0 {
        return Err(Error::domain("section has no nodes"));
    }
    let set = track.main().realize(t)?;
    let mut best = f64::NEG_INFINITY;
    let mut argmax = 0usize;
    for i in 0..s.n_nodes {
        let d = set.distance(s.node(i))?;
        if d > best {
            best = d;
            argmax = i;
        }
    }
    Ok((best, argmax))
}

/// Min over grid nodes of the distance from the node value to the
/// avoidance set at time t.
pub fn avoidance_margin(s: &Section, track: &SpaceTimeTrack, t: f64) -> Result<f64> {
    let av = track
        .avoidance()
        .ok_or_else(|| Error::domain("track has no avoidance family".to_string()))?;
    let set = av.family.realize(t)?;
    let mut best = f64::INFINITY;
    for i in 0..s.n_nodes {
        best = best.min(set.distance(s.node(i))?);
    }
    Ok(best)
}

/// Forward difference-quotient surrogate for the upper Dini derivative at
/// index j: the max quotient over a window of up to eight steps ahead.
pub fn dini_forward(times: &[f64], values: &[f64], j: usize) -> Result<f64> {
    if times.len() != values.len() {
        return Err(Error::domain("series columns differ in length"));
    }
    let n = times.len();
    if j + 1 >= n {
        return Err(Error::domain(format!(
            "forward derivative needs a successor, index {j} of {n}"
        )));
    }
    let mut best = f64::NEG_INFINITY;
    for w in 1..=DINI_WINDOW.min(n - 1 - j) {
        let q = (values[j + w] - values[j]) / (times[j + w] - times[j]);
        best = best.max(q);
    }
    Ok(best)
}

/// Discrete growth-bound check: at every index where f is (numerically)
/// nonnegative, the forward quotient must not exceed C * f plus a slack of
/// 10 * dt * (1 + C). With a nonpositive start the series must additionally
/// stay under the slack-scaled exponential envelope.
pub fn check_gronwall(
    times: &[f64],
    values: &[f64],
    c: f64,
    f_start_nonpositive: bool,
) -> Result<bool> {
    if times.len() != values.len() {
        return Err(Error::domain("series columns differ in length"));
    }
    if times.len() < 2 {
        return Err(Error::domain("growth check needs at least two samples"));
    }
    if !c.is_finite() || c < 0.0 {
        return Err(Error::invalid("growth constant", format!("{c} must be finite and >= 0")));
    }
    let dt = times[1] - times[0];
    let slack = 10.0 * dt * (1.0 + c);
    for j in 0..times.len() - 1 {
        if values[j] < -GRONWALL_EPS {
            continue;
        }
        if dini_forward(times, values, j)? > c * values[j] + slack {
            return Ok(false);
        }
    }
    if f_start_nonpositive {
        let t0 = times[0];
        for j in 0..times.len() {
            if values[j] > slack * (c * (times[j] - t0)).exp() {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// One time row of the exchange between "derivative of the max" and "max of
/// the derivatives over the argmax set".
#[derive(Debug, Clone, Serialize)]
pub struct DiniOfSupRow {
    pub t: f64,
    /// Max of g over the sample set at this time.
    pub f: f64,
    /// Forward-window quotient of that max.
    pub dini: f64,
    /// Largest time rate of g over the samples attaining the max.
    pub argmax_rate: f64,
}

/// Computes f(t) = max over samples of g(s, t), its forward quotients, and
/// the max time rate over the argmax set (ties within 1e-9 of the max,
/// scaled). Rates come from `dgdt` when supplied, otherwise from central
/// differences of g. One row per time except the last.
pub fn dini_of_sup(
    times: &[f64],
    g: &[Vec<f64>],
    dgdt: Option<&[Vec<f64>]>,
) -> Result<Vec<DiniOfSupRow>> {
    let n = times.len();
    if g.len() != n {
        return Err(Error::domain("sample table and time grid differ in length"));
    }
    if n < 2 {
        return Err(Error::domain("need at least two times"));
    }
    let s_count = g[0].len();
    if s_count == 0 {
        return Err(Error::domain("sample set is empty"));
    }
    if g.iter().any(|row| row.len() != s_count) {
        return Err(Error::domain("ragged sample table"));
    }
    if let Some(d) = dgdt {
        if d.len() != n || d.iter().any(|row| row.len() != s_count) {
            return Err(Error::domain("rate table shape differs from the sample table"));
        }
    }
    let scale = g
        .iter()
        .flat_map(|row| row.iter())
        .fold(0.0_f64, |a, &v| a.max(v.abs()));
    let eps_tie = 1e-9 * (1.0 + scale);
    let f: Vec<f64> = g
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let rate_at = |j: usize, s: usize| -> f64 {
        match dgdt {
            Some(d) => d[j][s],
            None => {
                if j == 0 {
                    (g[1][s] - g[0][s]) / (times[1] - times[0])
                } else if j + 1 == n {
                    (g[n - 1][s] - g[n - 2][s]) / (times[n - 1] - times[n - 2])
                } else {
                    (g[j + 1][s] - g[j - 1][s]) / (times[j + 1] - times[j - 1])
                }
            }
        }
    };
    let mut rows = Vec::with_capacity(n - 1);
    for j in 0..n - 1 {
        let mut rate = f64::NEG_INFINITY;
        for s in 0..s_count {
            if g[j][s] >= f[j] - eps_tie {
                rate = rate.max(rate_at(j, s));
            }
        }
        rows.push(DiniOfSupRow {
            t: times[j],
            f: f[j],
            dini: dini_forward(times, &f, j)?,
            argmax_rate: rate,
        });
    }
    Ok(rows)
}

/// What a recorded series is expected to look like.
#[derive(Debug, Clone, Copy)]
pub struct SemicontinuityExpectation {
    pub right_continuous: bool,
    pub left_lsc: bool,
}

/// Indices where the series jumps against the expected one-sided behavior.
#[derive(Debug, Clone, Serialize)]
pub struct SemicontinuityReport {
    /// Indices j where the next value drops by more than the jump
    /// tolerance (the forward limit disagrees with the value).
    pub right_violations: Vec<usize>,
    /// Indices j where the previous value sits below f_j by more than the
    /// jump tolerance (the backward lower limit misses the value).
    pub left_violations: Vec<usize>,
    pub jump_tol: f64,
    pub matches_expectation: bool,
}

/// Scans a recorded series for one-sided jumps larger than a tolerance of
/// 100 * dt * (90th percentile speed), so smooth variation never flags.
pub fn semicontinuity_probe(
    times: &[f64],
    values: &[f64],
    expected: SemicontinuityExpectation,
) -> Result<SemicontinuityReport> {
    if times.len() != values.len() {
        return Err(Error::domain("series columns differ in length"));
    }
    let n = times.len();
    if n < 2 {
        return Err(Error::domain("probe needs at least two samples"));
    }
    let dt = (times[n - 1] - times[0]) / (n - 1) as f64;
    let mut speeds: Vec<f64> = Vec::with_capacity(n - 1);
    for j in 0..n - 1 {
        speeds.push(((values[j + 1] - values[j]) / (times[j + 1] - times[j])).abs());
    }
    speeds.sort_by(|a, b| a.partial_cmp(b).expect("finite speeds"));
    let idx = ((0.9 * speeds.len() as f64).ceil() as usize).clamp(1, speeds.len()) - 1;
    let scale = values.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
    let jump_tol = 100.0 * dt * speeds[idx] + 1e-12 * (1.0 + scale);
    let mut right_violations = Vec::new();
    let mut left_violations = Vec::new();
    for j in 0..n {
        if j + 1 < n && values[j + 1] < values[j] - jump_tol {
            right_violations.push(j);
        }
        if j > 0 && values[j - 1] < values[j] - jump_tol {
            left_violations.push(j);
        }
    }
    let matches_expectation = (right_violations.is_empty() == expected.right_continuous)
        && (left_violations.is_empty() == expected.left_lsc);
    Ok(SemicontinuityReport {
        right_violations,
        left_violations,
        jump_tol,
        matches_expectation,
    })
}

/// The four conclusions assembled from one run.
#[derive(Debug, Clone, Serialize)]
pub struct TheoremVerdict {
    /// The boundary cone condition held at every non-excluded sample.
    pub hypothesis_ok: bool,
    /// f stayed at or under the containment tolerance at every record.
    pub containment_ok: bool,
    /// The avoidance margin stayed at or above the floor; vacuously true
    /// without an avoidance family.
    pub avoidance_ok: bool,
    /// The recorded series obeys the discrete growth bound with the
    /// field's Lipschitz constant.
    pub gronwall_ok: bool,
    pub details: String,
}

impl TheoremVerdict {
    pub fn all_ok(&self) -> bool {
        self.hypothesis_ok && self.containment_ok && self.avoidance_ok && self.gronwall_ok
    }
}

/// Combines a hypothesis report and a monitored series into the final
/// verdict. The growth check uses the field's stored Lipschitz constant and
/// treats the start as nonpositive when f(t0) is within geometric epsilon
/// of zero.
pub fn theorem_verdict(
    hyp: &HypothesisReport,
    series: &MonitorSeries,
    tol_contain: f64,
    margin_floor: f64,
) -> TheoremVerdict {
    if series.is_empty() {
        return TheoremVerdict {
            hypothesis_ok: false,
            containment_ok: false,
            avoidance_ok: false,
            gronwall_ok: false,
            details: "empty series".to_string(),
        };
    }
    let hypothesis_ok = hyp.summary.holds_everywhere_tested;
    let max_f = series.max_f();
    let containment_ok = max_f <= tol_contain;
    let (avoidance_ok, margin_note) = match series.min_margin() {
        Some(m) => (m >= margin_floor, format!("min margin {m:.6e} vs floor {margin_floor:.6e}")),
        None => (true, "no avoidance family".to_string()),
    };
    let f_start_nonpositive = series.f_values[0] <= EPS_GEO;
    let gronwall_ok = if series.len() >= 2 {
        check_gronwall(
            &series.times,
            &series.f_values,
            hyp.c_lipschitz,
            f_start_nonpositive,
        )
        .unwrap_or(false)
    } else {
        true
    };
    let details = format!(
        "max f {max_f:.6e} vs tol {tol_contain:.6e}; {margin_note}; growth constant {:.6e}; {} failures, {} inconclusive of {} samples",
        hyp.c_lipschitz,
        hyp.summary.failure_locus.len(),
        hyp.summary.n_inconclusive,
        hyp.samples.len()
    );
    TheoremVerdict {
        hypothesis_ok,
        containment_ok,
        avoidance_ok,
        gronwall_ok,
        details,
    }
}

/// Observer that measures distance and margin at every recorded step.
pub struct TrackMonitor<'a> {
    track: &'a SpaceTimeTrack,
    record_dt: f64,
    times: Vec<f64>,
    f_values: Vec<f64>,
    argmax_nodes: Vec<usize>,
    margins: Option<Vec<f64>>,
}

impl<'a> TrackMonitor<'a> {
    pub fn new(track: &'a SpaceTimeTrack, record_dt: f64) -> Self {
        let margins = track.avoidance().map(|_| Vec::new());
        TrackMonitor {
            track,
            record_dt,
            times: Vec::new(),
            f_values: Vec::new(),
            argmax_nodes: Vec::new(),
            margins,
        }
    }

    pub fn into_series(self) -> Result<MonitorSeries> {
        MonitorSeries::from_records(
            self.times,
            self.f_values,
            self.argmax_nodes,
            self.margins,
            self.record_dt,
        )
    }
}

impl Observer for TrackMonitor<'_> {
    fn record(&mut self, _step: usize, section: &Section) -> Result<()> {
        let t = section.time;
        let (f, argmax) = sup_distance(section, self.track, t)?;
        self.times.push(t);
        self.f_values.push(f);
        self.argmax_nodes.push(argmax);
        if let Some(margins) = &mut self.margins {
            margins.push(avoidance_margin(section, self.track, t)?);
        }
        Ok(())
    }
}

/// Runs the evolution with a track monitor attached. The series covers
/// whatever prefix was recorded, so a blow-up still yields usable history
/// next to its error.
pub fn run_monitored(config: &PdeConfig) -> (MonitorSeries, Result<Section>) {
    let record_dt = config.dt() * config.record_every() as f64;
    let mut monitor = TrackMonitor::new(config.track(), record_dt);
    let outcome = run_simulation(config, &mut monitor);
    let series = monitor.into_series().unwrap_or_else(|_| MonitorSeries {
        times: Vec::new(),
        f_values: Vec::new(),
        argmax_nodes: Vec::new(),
        margins: None,
        dini_estimates: Vec::new(),
        record_dt,
        flags: Vec::new(),
    });
    (series, outcome)
}
