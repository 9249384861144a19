//! Method-of-lines discretization of the reaction-diffusion evolution on a
//! circle or flat torus.
//!
//! The metric is a time-dependent conformal scaling rho(t)^2 of the flat
//! one, so the Laplacian is the periodic central stencil divided by
//! rho(t)^2 and the first-order term uses the metric-consistent spacing
//! rho(t) * h. Time stepping is classical RK4 under an explicit stability
//! bound; everything is sequential and deterministic.

use serde::{Deserialize, Serialize};

use crate::dynamics::ReactionField;
use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::geometry::{SpaceTimeTrack, EPS_GEO};
use crate::timefn::TimeFn;

const MIN_NODES: usize = 8;
const METRIC_SAMPLES: usize = 129;
const DEFAULT_RECORD_EVERY: usize = 10;

/// Periodic spatial domains with period 2 pi per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Circle { n: usize },
    Torus { nx: usize, ny: usize },
}

/// A periodic grid with a spatially homogeneous conformal metric scale.
#[derive(Debug, Clone)]
pub struct ManifoldGrid {
    topology: Topology,
    metric_scale: TimeFn,
}

impl ManifoldGrid {
    pub fn new(topology: Topology, metric_scale: TimeFn) -> Result<Self> {
        match topology {
            Topology::Circle { n } => {
                if n < MIN_NODES {
                    return Err(Error::invalid(
                        "grid",
                        format!("circle needs at least {MIN_NODES} nodes, got {n}"),
                    ));
                }
            }
            Topology::Torus { nx, ny } => {
                if nx < MIN_NODES || ny < MIN_NODES {
                    return Err(Error::invalid(
                        "grid",
                        format!("torus needs at least {MIN_NODES} nodes per axis, got {nx} x {ny}"),
                    ));
                }
            }
        }
        Ok(ManifoldGrid {
            topology,
            metric_scale,
        })
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn metric_scale(&self) -> &TimeFn {
        &self.metric_scale
    }

    pub fn dims(&self) -> usize {
        match self.topology {
            Topology::Circle { .. } => 1,
            Topology::Torus { .. } => 2,
        }
    }

    pub fn n_nodes(&self) -> usize {
        match self.topology {
            Topology::Circle { n } => n,
            Topology::Torus { nx, ny } => nx * ny,
        }
    }

    /// Node spacing per axis; the second entry is meaningful only on the
    /// torus.
    pub fn spacing(&self) -> [f64; 2] {
        let tau = 2.0 * std::f64::consts::PI;
        match self.topology {
            Topology::Circle { n } => [tau / n as f64, 0.0],
            Topology::Torus { nx, ny } => [tau / nx as f64, tau / ny as f64],
        }
    }

    pub fn min_spacing(&self) -> f64 {
        let [hx, hy] = self.spacing();
        match self.topology {
            Topology::Circle { .. } => hx,
            Topology::Torus { .. } => hx.min(hy),
        }
    }

    /// Spatial coordinates of a node; y is 0 on the circle.
    pub fn coords(&self, node: usize) -> [f64; 2] {
        let [hx, hy] = self.spacing();
        match self.topology {
            Topology::Circle { .. } => [node as f64 * hx, 0.0],
            Topology::Torus { nx, .. } => {
                let ix = node % nx;
                let iy = node / nx;
                [ix as f64 * hx, iy as f64 * hy]
            }
        }
    }

    pub fn rho(&self, t: f64) -> f64 {
        self.metric_scale.eval(t)
    }

    /// Minimum sampled metric scale over the horizon; errors if the scale
    /// is not strictly positive everywhere sampled.
    pub fn rho_min(&self, horizon: [f64; 2]) -> Result<f64> {
        self.metric_scale.validate_on(horizon)?;
        let [t0, t1] = horizon;
        let mut lo = f64::INFINITY;
        for j in 0..METRIC_SAMPLES {
            let t = t0 + (t1 - t0) * j as f64 / (METRIC_SAMPLES - 1) as f64;
            let r = self.metric_scale.eval(t);
            if !r.is_finite() || r <= 0.0 {
                return Err(Error::invalid(
                    "grid",
                    format!("metric scale is {r} at t = {t}, must stay positive"),
                ));
            }
            lo = lo.min(r);
        }
        Ok(lo)
    }
}

/// First-order coefficient functions, one per grid direction, over x, y, t.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GradientCoeffs {
    components: Vec<Expression>,
}

impl GradientCoeffs {
    pub fn new(components: Vec<Expression>) -> Result<Self> {
        if components.is_empty() || components.len() > 2 {
            return Err(Error::invalid(
                "gradient",
                format!("{} coefficient functions, need 1 or 2", components.len()),
            ));
        }
        for e in &components {
            if e.max_fiber_component() > 0 {
                return Err(Error::invalid(
                    "gradient",
                    "coefficient functions may not reference fiber components",
                ));
            }
        }
        Ok(GradientCoeffs { components })
    }

    /// The Ricci-flow default u = 0.
    pub fn zero(dims: usize) -> Self {
        let zero = Expression::parse("0").expect("literal zero parses");
        GradientCoeffs {
            components: vec![zero; dims],
        }
    }

    pub fn components(&self) -> &[Expression] {
        &self.components
    }
}

/// Fiber values on a grid at one time, stored node-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Section {
    /// Flat layout: entry for component c of node i at i * fiber_dim + c.
    pub values: Vec<f64>,
    pub n_nodes: usize,
    pub fiber_dim: usize,
    pub time: f64,
}

impl Section {
    pub fn new(values: Vec<f64>, n_nodes: usize, fiber_dim: usize, time: f64) -> Result<Self> {
        if values.len() != n_nodes * fiber_dim {
            return Err(Error::invalid(
                "section",
                format!(
                    "{} values for {} nodes x {} components",
                    values.len(),
                    n_nodes,
                    fiber_dim
                ),
            ));
        }
        Ok(Section {
            values,
            n_nodes,
            fiber_dim,
            time,
        })
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.values[i * self.fiber_dim..(i + 1) * self.fiber_dim]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn check_grid(&self, grid: &ManifoldGrid) -> Result<()> {
        if self.n_nodes != grid.n_nodes() {
            return Err(Error::domain(format!(
                "section has {} nodes, grid has {}",
                self.n_nodes,
                grid.n_nodes()
            )));
        }
        Ok(())
    }

    /// CSV rows of the section: circle grids index rows by node, torus grids
    /// by (ix, iy); one column per fiber component, shortest round-trip
    /// float formatting.
    pub fn to_csv(&self, topology: &Topology) -> Result<String> {
        let n_topo = match topology {
            Topology::Circle { n } => *n,
            Topology::Torus { nx, ny } => nx * ny,
        };
        if n_topo != self.n_nodes {
            return Err(Error::domain(format!(
                "section has {} nodes, topology has {n_topo}",
                self.n_nodes
            )));
        }
        let mut out = String::new();
        match topology {
            Topology::Circle { .. } => out.push_str("node"),
            Topology::Torus { .. } => out.push_str("ix,iy"),
        }
        for c in 1..=self.fiber_dim {
            out.push_str(&format!(",s{c}"));
        }
        out.push('\n');
        for i in 0..self.n_nodes {
            match topology {
                Topology::Circle { .. } => out.push_str(&i.to_string()),
                Topology::Torus { nx, .. } => {
                    out.push_str(&format!("{},{}", i % nx, i / nx));
                }
            }
            for v in self.node(i) {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        Ok(out)
    }
}

fn laplacian_flat(grid: &ManifoldGrid, vals: &[f64], k: usize, rho: f64, out: &mut [f64]) {
    let [hx, hy] = grid.spacing();
    match grid.topology() {
        Topology::Circle { n } => {
            let inv = 1.0 / (rho * rho * hx * hx);
            for i in 0..n {
                let ip = (i + 1) % n;
                let im = (i + n - 1) % n;
                for c in 0..k {
                    out[i * k + c] =
                        (vals[ip * k + c] - 2.0 * vals[i * k + c] + vals[im * k + c]) * inv;
                }
            }
        }
        Topology::Torus { nx, ny } => {
            let inv_x = 1.0 / (rho * rho * hx * hx);
            let inv_y = 1.0 / (rho * rho * hy * hy);
            for iy in 0..ny {
                for ix in 0..nx {
                    let i = iy * nx + ix;
                    let xp = iy * nx + (ix + 1) % nx;
                    let xm = iy * nx + (ix + nx - 1) % nx;
                    let yp = ((iy + 1) % ny) * nx + ix;
                    let ym = ((iy + ny - 1) % ny) * nx + ix;
                    for c in 0..k {
                        let center = vals[i * k + c];
                        out[i * k + c] = (vals[xp * k + c] - 2.0 * center + vals[xm * k + c])
                            * inv_x
                            + (vals[yp * k + c] - 2.0 * center + vals[ym * k + c]) * inv_y;
                    }
                }
            }
        }
    }
}

/// Accumulates sum_i u^i(x, t) * (central difference along i) / (rho h).
fn gradient_flat(
    grid: &ManifoldGrid,
    u: &GradientCoeffs,
    vals: &[f64],
    k: usize,
    t: f64,
    rho: f64,
    out: &mut [f64],
) {
    let [hx, hy] = grid.spacing();
    let empty: [f64; 0] = [];
    match grid.topology() {
        Topology::Circle { n } => {
            let coeff = &u.components[0];
            for i in 0..n {
                let x = grid.coords(i);
                let scale = coeff.eval(&x, &empty, t) / (2.0 * rho * hx);
                let ip = (i + 1) % n;
                let im = (i + n - 1) % n;
                for c in 0..k {
                    out[i * k + c] += (vals[ip * k + c] - vals[im * k + c]) * scale;
                }
            }
        }
        Topology::Torus { nx, ny } => {
            let ux = &u.components[0];
            let uy = &u.components[1];
            for iy in 0..ny {
                for ix in 0..nx {
                    let i = iy * nx + ix;
                    let x = grid.coords(i);
                    let sx = ux.eval(&x, &empty, t) / (2.0 * rho * hx);
                    let sy = uy.eval(&x, &empty, t) / (2.0 * rho * hy);
                    let xp = iy * nx + (ix + 1) % nx;
                    let xm = iy * nx + (ix + nx - 1) % nx;
                    let yp = ((iy + 1) % ny) * nx + ix;
                    let ym = ((iy + ny - 1) % ny) * nx + ix;
                    for c in 0..k {
                        out[i * k + c] += (vals[xp * k + c] - vals[xm * k + c]) * sx
                            + (vals[yp * k + c] - vals[ym * k + c]) * sy;
                    }
                }
            }
        }
    }
}

/// Second-order periodic central stencil scaled by rho(t)^-2, componentwise
/// over the fiber.
pub fn laplacian(grid: &ManifoldGrid, t: f64, s: &Section) -> Result<Section> {
    s.check_grid(grid)?;
    let mut out = vec![0.0; s.values.len()];
    laplacian_flat(grid, &s.values, s.fiber_dim, grid.rho(t), &mut out);
    Section::new(out, s.n_nodes, s.fiber_dim, s.time)
}

/// First-order term sum_i u^i(x, t) * (central difference in direction i)
/// over the metric-consistent spacing rho(t) * h.
pub fn gradient_term(u: &GradientCoeffs, grid: &ManifoldGrid, t: f64, s: &Section) -> Result<Section> {
    s.check_grid(grid)?;
    if u.components.len() != grid.dims() {
        return Err(Error::domain(format!(
            "{} coefficient functions for a {}-dimensional grid",
            u.components.len(),
            grid.dims()
        )));
    }
    let mut out = vec![0.0; s.values.len()];
    gradient_flat(grid, u, &s.values, s.fiber_dim, t, grid.rho(t), &mut out);
    Section::new(out, s.n_nodes, s.fiber_dim, s.time)
}

/// A validated semi-discrete evolution problem.
///
/// Construction resolves the step size (the stability bound when not given),
/// samples the gradient coefficients for finiteness, builds the initial
/// section from the component expressions, and checks that it starts inside
/// the main set and outside the avoidance set.
#[derive(Debug, Clone)]
pub struct PdeConfig {
    grid: ManifoldGrid,
    track: SpaceTimeTrack,
    field: ReactionField,
    u: GradientCoeffs,
    u_nonzero: bool,
    initial_exprs: Vec<Expression>,
    initial: Section,
    dt: f64,
    dt_bound: f64,
    record_every: usize,
    rho_min: f64,
}

impl PdeConfig {
    pub fn new(
        grid: ManifoldGrid,
        track: SpaceTimeTrack,
        field: ReactionField,
        u: GradientCoeffs,
        initial: Vec<Expression>,
        dt: Option<f64>,
        record_every: Option<usize>,
    ) -> Result<Self> {
        let k = track.fiber_dim();
        if field.fiber_dim() != k {
            return Err(Error::invalid(
                "reaction",
                "field and track fiber dimensions differ",
            ));
        }
        let horizon = track.horizon();
        let [t0, t1] = horizon;
        let [f0, f1] = field.horizon();
        let slack = 1e-9 * (1.0 + t0.abs().max(t1.abs()));
        if t0 < f0 - slack || t1 > f1 + slack {
            return Err(Error::invalid(
                "reaction",
                "field horizon does not cover the track horizon",
            ));
        }
        if u.components.len() != grid.dims() {
            return Err(Error::invalid(
                "gradient",
                format!(
                    "{} coefficient functions for a {}-dimensional grid",
                    u.components.len(),
                    grid.dims()
                ),
            ));
        }
        if initial.len() != k {
            return Err(Error::invalid(
                "initial",
                format!("{} component expressions, fiber needs {k}", initial.len()),
            ));
        }
        for e in &initial {
            if e.max_fiber_component() > 0 {
                return Err(Error::invalid(
                    "initial",
                    "initial expressions may not reference fiber components",
                ));
            }
        }
        let record_every = record_every.unwrap_or(DEFAULT_RECORD_EVERY);
        if record_every == 0 {
            return Err(Error::invalid("record_every", "must be at least 1"));
        }
        let rho_min = grid.rho_min(horizon)?;
        // Sample the coefficients over nodes and times: finiteness, and
        // whether the first-order term is present at all.
        let mut u_nonzero = false;
        let empty: [f64; 0] = [];
        for j in 0..9 {
            let t = t0 + (t1 - t0) * j as f64 / 8.0;
            for node in 0..grid.n_nodes() {
                let x = grid.coords(node);
                for e in &u.components {
                    let val = e.eval(&x, &empty, t);
                    if !val.is_finite() {
                        return Err(Error::invalid(
                            "gradient",
                            format!("coefficient is {val} at x = {:?}, t = {t}", x),
                        ));
                    }
                    if val != 0.0 {
                        u_nonzero = true;
                    }
                }
            }
        }
        let h = grid.min_spacing();
        let mut dt_bound = 0.5 * rho_min * rho_min * h * h / (2.0 * grid.dims() as f64);
        if u_nonzero {
            dt_bound *= 0.8;
        }
        let dt = dt.unwrap_or(dt_bound);
        if !dt.is_finite() || dt <= 0.0 {
            return Err(Error::invalid("dt", format!("{dt} must be positive")));
        }
        if dt > dt_bound * (1.0 + 1e-12) {
            return Err(Error::invalid(
                "dt",
                format!("{dt} exceeds the stability bound {dt_bound:.6e}"),
            ));
        }
        // Build and vet the initial section.
        let n = grid.n_nodes();
        let mut values = vec![0.0; n * k];
        for node in 0..n {
            let x = grid.coords(node);
            for (c, e) in initial.iter().enumerate() {
                let v = e.eval(&x, &empty, t0);
                if !v.is_finite() {
                    return Err(Error::invalid(
                        "initial",
                        format!("component {c} is {v} at node {node}"),
                    ));
                }
                values[node * k + c] = v;
            }
        }
        let section = Section::new(values, n, k, t0)?;
        let main0 = track.main().realize(t0)?;
        let tol = EPS_GEO * (1.0 + main0.diameter());
        let avoid0 = match track.avoidance() {
            Some(av) => Some((av.family.realize(t0)?, av.epsilon)),
            None => None,
        };
        for node in 0..n {
            let v = section.node(node);
            let gap = main0.support_gap(v)?;
            if gap > tol {
                return Err(Error::invalid(
                    "initial",
                    format!("node {node} starts outside the main set (gap {gap:e})"),
                ));
            }
            if let Some((av_set, _)) = &avoid0 {
                if av_set.support_gap(v)? < -tol {
                    return Err(Error::invalid(
                        "initial",
                        format!("node {node} starts inside the avoidance set"),
                    ));
                }
            }
        }
        Ok(PdeConfig {
            grid,
            track,
            field,
            u,
            u_nonzero,
            initial_exprs: initial,
            initial: section,
            dt,
            dt_bound,
            record_every,
            rho_min,
        })
    }

    pub fn grid(&self) -> &ManifoldGrid {
        &self.grid
    }

    pub fn track(&self) -> &SpaceTimeTrack {
        &self.track
    }

    pub fn field(&self) -> &ReactionField {
        &self.field
    }

    pub fn gradient(&self) -> &GradientCoeffs {
        &self.u
    }

    pub fn initial_exprs(&self) -> &[Expression] {
        &self.initial_exprs
    }

    pub fn initial_section(&self) -> &Section {
        &self.initial
    }

    pub fn horizon(&self) -> [f64; 2] {
        self.track.horizon()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dt_bound(&self) -> f64 {
        self.dt_bound
    }

    pub fn record_every(&self) -> usize {
        self.record_every
    }

    pub fn rho_min(&self) -> f64 {
        self.rho_min
    }

    fn rhs_into(&self, vals: &[f64], t: f64, out: &mut [f64]) {
        let k = self.track.fiber_dim();
        let rho = self.grid.rho(t);
        laplacian_flat(&self.grid, vals, k, rho, out);
        if self.u_nonzero {
            gradient_flat(&self.grid, &self.u, vals, k, t, rho, out);
        }
        let mut fbuf = [0.0_f64; 4];
        for node in 0..self.grid.n_nodes() {
            let x = self.grid.coords(node);
            self.field
                .eval_into(&x, &vals[node * k..(node + 1) * k], t, &mut fbuf[..k]);
            for c in 0..k {
                out[node * k + c] += fbuf[c];
            }
        }
    }
}

struct Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    stage: Vec<f64>,
}

impl Scratch {
    fn new(len: usize) -> Self {
        Scratch {
            k1: vec![0.0; len],
            k2: vec![0.0; len],
            k3: vec![0.0; len],
            k4: vec![0.0; len],
            stage: vec![0.0; len],
        }
    }
}

/// One RK4 step of width h; arithmetic mirrors the fiber integrator so that
/// spatially constant states reproduce it bitwise.
fn rk4_flat(config: &PdeConfig, vals: &[f64], t: f64, h: f64, s: &mut Scratch, out: &mut [f64]) {
    config.rhs_into(vals, t, &mut s.k1);
    for i in 0..vals.len() {
        s.stage[i] = vals[i] + 0.5 * h * s.k1[i];
    }
    config.rhs_into(&s.stage, t + 0.5 * h, &mut s.k2);
    for i in 0..vals.len() {
        s.stage[i] = vals[i] + 0.5 * h * s.k2[i];
    }
    config.rhs_into(&s.stage, t + 0.5 * h, &mut s.k3);
    for i in 0..vals.len() {
        s.stage[i] = vals[i] + h * s.k3[i];
    }
    config.rhs_into(&s.stage, t + h, &mut s.k4);
    for i in 0..vals.len() {
        out[i] = vals[i] + h / 6.0 * (s.k1[i] + 2.0 * (s.k2[i] + s.k3[i]) + s.k4[i]);
    }
}

/// Advances the state by one step of the configured width. A non-finite
/// result is a blow-up error carrying the time of the (finite) input state.
pub fn step_pde(config: &PdeConfig, state: &Section) -> Result<Section> {
    state.check_grid(config.grid())?;
    if state.fiber_dim != config.track().fiber_dim() {
        return Err(Error::domain(format!(
            "section fiber dimension {} does not match the track ({})",
            state.fiber_dim,
            config.track().fiber_dim()
        )));
    }
    let mut scratch = Scratch::new(state.values.len());
    let mut out = vec![0.0; state.values.len()];
    rk4_flat(config, &state.values, state.time, config.dt(), &mut scratch, &mut out);
    if !out.iter().all(|v| v.is_finite()) {
        return Err(Error::BlowUp { time: state.time });
    }
    Section::new(out, state.n_nodes, state.fiber_dim, state.time + config.dt())
}

/// Callback invoked on recorded steps of a simulation.
pub trait Observer {
    fn record(&mut self, step: usize, section: &Section) -> Result<()>;
}

/// Observer that ignores everything.
pub struct NoopObserver;

impl Observer for NoopObserver {
    fn record(&mut self, _step: usize, _section: &Section) -> Result<()> {
        Ok(())
    }
}

/// Runs the evolution across the track horizon, recording the initial
/// state, every `record_every`-th step, and the final state. On blow-up the
/// last finite state is recorded before the error propagates, so observers
/// retain the partial history.
pub fn run_simulation(config: &PdeConfig, observer: &mut dyn Observer) -> Result<Section> {
    let [t0, t1] = config.horizon();
    let dt = config.dt();
    let span = t1 - t0;
    let n_steps = ((span / dt - 1e-9).ceil().max(1.0)) as usize;
    let mut state = config.initial_section().clone();
    observer.record(0, &state)?;
    let mut last_recorded = 0usize;
    let mut scratch = Scratch::new(state.values.len());
    let mut next = vec![0.0; state.values.len()];
    for i in 0..n_steps {
        let t_next = if i + 1 == n_steps {
            t1
        } else {
            t0 + (i as f64 + 1.0) * dt
        };
        let h = t_next - state.time;
        rk4_flat(config, &state.values, state.time, h, &mut scratch, &mut next);
        if !next.iter().all(|v| v.is_finite()) {
            if last_recorded != i {
                observer.record(i, &state)?;
            }
            return Err(Error::BlowUp { time: state.time });
        }
        std::mem::swap(&mut state.values, &mut next);
        state.time = t_next;
        let step = i + 1;
        if step % config.record_every() == 0 || step == n_steps {
            observer.record(step, &state)?;
            last_recorded = step;
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate_fiber, FieldKind};
    use crate::geometry::{ConvexFamily, ConvexSetSpec};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn circle(n: usize) -> ManifoldGrid {
        ManifoldGrid::new(Topology::Circle { n }, TimeFn::Constant(1.0)).unwrap()
    }

    fn cosine_section(grid: &ManifoldGrid) -> Section {
        let n = grid.n_nodes();
        let vals: Vec<f64> = (0..n).map(|i| grid.coords(i)[0].cos()).collect();
        Section::new(vals, n, 1, 0.0).unwrap()
    }

    fn box_track(lo: f64, hi: f64, horizon: [f64; 2]) -> SpaceTimeTrack {
        let fam = ConvexFamily::new(
            ConvexSetSpec::Box {
                lower: vec![TimeFn::Constant(lo)],
                upper: vec![TimeFn::Constant(hi)],
            },
            horizon,
        )
        .unwrap();
        SpaceTimeTrack::new(fam, None).unwrap()
    }

    fn expr(src: &str) -> Expression {
        Expression::parse(src).unwrap()
    }

    #[test]
    fn grid_rejects_small_axes() {
        assert!(ManifoldGrid::new(Topology::Circle { n: 4 }, TimeFn::Constant(1.0)).is_err());
        assert!(
            ManifoldGrid::new(Topology::Torus { nx: 16, ny: 4 }, TimeFn::Constant(1.0)).is_err()
        );
        assert!(ManifoldGrid::new(Topology::Circle { n: 8 }, TimeFn::Constant(1.0)).is_ok());
    }

    #[test]
    fn metric_scale_must_stay_positive() {
        let grid = ManifoldGrid::new(
            Topology::Circle { n: 16 },
            TimeFn::Linear {
                intercept: 1.0,
                slope: -2.0,
            },
        )
        .unwrap();
        assert!(grid.rho_min([0.0, 1.0]).is_err());
        assert!((grid.rho_min([0.0, 0.25]).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn laplacian_annihilates_constants() {
        let grid = circle(32);
        let s = Section::new(vec![0.7; 64], 32, 2, 0.0).unwrap();
        let lap = laplacian(&grid, 0.0, &s).unwrap();
        assert!(lap.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn laplacian_reproduces_the_cosine_eigenmode() {
        let grid = circle(256);
        let s = cosine_section(&grid);
        let lap = laplacian(&grid, 0.0, &s).unwrap();
        for i in 0..256 {
            let expected = -grid.coords(i)[0].cos();
            assert!(
                (lap.values[i] - expected).abs() <= 1e-3,
                "node {i}: {} vs {expected}",
                lap.values[i]
            );
        }
    }

    #[test]
    fn laplacian_scales_with_the_conformal_factor() {
        let grid = ManifoldGrid::new(Topology::Circle { n: 256 }, TimeFn::Constant(2.0)).unwrap();
        let s = cosine_section(&grid);
        let lap = laplacian(&grid, 0.3, &s).unwrap();
        for i in 0..256 {
            let expected = -grid.coords(i)[0].cos() / 4.0;
            assert!((lap.values[i] - expected).abs() <= 2.5e-4);
        }
    }

    #[test]
    fn torus_laplacian_matches_separable_modes() {
        let grid = ManifoldGrid::new(Topology::Torus { nx: 32, ny: 32 }, TimeFn::Constant(1.0))
            .unwrap();
        let n = grid.n_nodes();
        let vals: Vec<f64> = (0..n)
            .map(|i| {
                let [x, y] = grid.coords(i);
                x.cos() * y.cos()
            })
            .collect();
        let s = Section::new(vals, n, 1, 0.0).unwrap();
        let lap = laplacian(&grid, 0.0, &s).unwrap();
        for i in 0..n {
            let [x, y] = grid.coords(i);
            let expected = -2.0 * x.cos() * y.cos();
            assert!(
                (lap.values[i] - expected).abs() <= 0.05,
                "node {i}: {} vs {expected}",
                lap.values[i]
            );
        }
    }

    #[test]
    fn operations_reject_shape_mismatches() {
        let grid = circle(16);
        let s = Section::new(vec![0.0; 8], 8, 1, 0.0).unwrap();
        assert!(laplacian(&grid, 0.0, &s).is_err());
        let u = GradientCoeffs::new(vec![expr("1")]).unwrap();
        assert!(gradient_term(&u, &grid, 0.0, &s).is_err());
    }

    #[test]
    fn gradient_term_is_exactly_zero_on_constants() {
        let grid = circle(64);
        let u = GradientCoeffs::new(vec![expr("sin(x) + t")]).unwrap();
        let s = Section::new(vec![1.3; 64], 64, 1, 0.0).unwrap();
        let g = gradient_term(&u, &grid, 0.7, &s).unwrap();
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_term_differentiates_the_sine() {
        let grid = circle(256);
        let n = 256;
        let vals: Vec<f64> = (0..n).map(|i| grid.coords(i)[0].sin()).collect();
        let s = Section::new(vals, n, 1, 0.0).unwrap();
        let unit = GradientCoeffs::new(vec![expr("1")]).unwrap();
        let g = gradient_term(&unit, &grid, 0.0, &s).unwrap();
        for i in 0..n {
            let expected = grid.coords(i)[0].cos();
            assert!((g.values[i] - expected).abs() <= 1e-3);
        }
        // Linearity in the coefficient: u = t at t = 2 doubles the result.
        let timed = GradientCoeffs::new(vec![expr("t")]).unwrap();
        let g2 = gradient_term(&timed, &grid, 2.0, &s).unwrap();
        for i in 0..n {
            let expected = 2.0 * grid.coords(i)[0].cos();
            assert!((g2.values[i] - expected).abs() <= 2e-3);
        }
    }

    #[test]
    fn gradient_coeffs_reject_fiber_references() {
        assert!(GradientCoeffs::new(vec![expr("s1")]).is_err());
        assert!(GradientCoeffs::new(vec![]).is_err());
    }

    /// RK4 heat step driven directly through the stencil, for the eigenmode
    /// examples that run above the config stability bound (still inside the
    /// RK4 stability region).
    fn heat_endpoint_error(n: usize, t_end: f64) -> f64 {
        let grid = circle(n);
        let h = grid.min_spacing();
        let dt = 0.5 * h * h;
        let mut s = cosine_section(&grid);
        let n_steps = ((t_end / dt - 1e-9).ceil()) as usize;
        for i in 0..n_steps {
            let t_next = if i + 1 == n_steps {
                t_end
            } else {
                (i as f64 + 1.0) * dt
            };
            let hstep = t_next - s.time;
            let k1 = laplacian(&grid, s.time, &s).unwrap();
            let mut stage = s.clone();
            for j in 0..n {
                stage.values[j] = s.values[j] + 0.5 * hstep * k1.values[j];
            }
            let k2 = laplacian(&grid, s.time + 0.5 * hstep, &stage).unwrap();
            for j in 0..n {
                stage.values[j] = s.values[j] + 0.5 * hstep * k2.values[j];
            }
            let k3 = laplacian(&grid, s.time + 0.5 * hstep, &stage).unwrap();
            for j in 0..n {
                stage.values[j] = s.values[j] + hstep * k3.values[j];
            }
            let k4 = laplacian(&grid, s.time + hstep, &stage).unwrap();
            for j in 0..n {
                s.values[j] += hstep / 6.0
                    * (k1.values[j] + 2.0 * (k2.values[j] + k3.values[j]) + k4.values[j]);
            }
            s.time = t_next;
        }
        (0..n)
            .map(|i| (s.values[i] - (-t_end).exp() * grid.coords(i)[0].cos()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn heat_mode_decays_exponentially() {
        let err = heat_endpoint_error(256, 1.0);
        assert!(err <= 1e-3, "error {err:e}");
    }

    #[test]
    fn doubling_the_grid_quarters_the_heat_error() {
        let coarse = heat_endpoint_error(128, 1.0);
        let fine = heat_endpoint_error(256, 1.0);
        let factor = coarse / fine;
        assert!(
            (3.5..=4.5).contains(&factor),
            "factor {factor} (coarse {coarse:e}, fine {fine:e})"
        );
    }

    #[test]
    fn laplacian_is_nonpositive_along_the_maximizing_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let circle_grid = circle(64);
        let torus_grid =
            ManifoldGrid::new(Topology::Torus { nx: 16, ny: 16 }, TimeFn::Constant(1.3)).unwrap();
        for case in 0..100 {
            let (grid, k) = if case % 2 == 0 {
                (&circle_grid, 2)
            } else {
                (&torus_grid, 3)
            };
            let n = grid.n_nodes();
            let vals: Vec<f64> = (0..n * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let s = Section::new(vals, n, k, 0.0).unwrap();
            let mut dir: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
            if norm < 1e-6 {
                continue;
            }
            for d in dir.iter_mut() {
                *d /= norm;
            }
            let score = |node: usize| -> f64 {
                s.node(node).iter().zip(&dir).map(|(v, d)| v * d).sum()
            };
            let argmax = (0..n)
                .max_by(|&a, &b| score(a).partial_cmp(&score(b)).unwrap())
                .unwrap();
            let lap = laplacian(grid, 0.5, &s).unwrap();
            let along: f64 = lap.node(argmax).iter().zip(&dir).map(|(v, d)| v * d).sum();
            assert!(along <= 1e-12, "case {case}: n . lap = {along:e}");
        }
    }

    fn small_config(
        n: usize,
        kind: FieldKind,
        init: &str,
        horizon: [f64; 2],
        hi: f64,
        dt: Option<f64>,
    ) -> PdeConfig {
        let grid = circle(n);
        let track = box_track(-10.0, hi, horizon);
        let field = ReactionField::new(kind, track.main()).unwrap();
        PdeConfig::new(
            grid,
            track,
            field,
            GradientCoeffs::zero(1),
            vec![expr(init)],
            dt,
            None,
        )
        .unwrap()
    }

    #[test]
    fn constant_sections_are_fixed_points_of_the_heat_flow() {
        let config = small_config(16, FieldKind::Zero, "0.3", [0.0, 0.5], 1.0, None);
        let s1 = step_pde(&config, config.initial_section()).unwrap();
        assert!(s1.values.iter().all(|&v| v == 0.3));
        let final_state = run_simulation(&config, &mut NoopObserver).unwrap();
        assert!(final_state.values.iter().all(|&v| v == 0.3));
        assert!((final_state.time - 0.5).abs() < 1e-12);
    }

    #[test]
    fn spatially_constant_run_reduces_to_the_fiber_integrator() {
        let config = small_config(8, FieldKind::Square, "0.5", [0.0, 0.9], 1.0, Some(1e-3));
        let final_state = run_simulation(&config, &mut NoopObserver).unwrap();
        let oracle = integrate_fiber(
            config.field(),
            &[0.0, 0.0],
            &[0.5],
            0.0,
            0.9,
            config.dt(),
        )
        .unwrap();
        let expected = oracle.values.last().unwrap()[0];
        assert!((expected - 0.5 / 0.55).abs() < 1e-5, "oracle {expected}");
        for &v in &final_state.values {
            assert!((v - expected).abs() <= 1e-8, "{v} vs {expected}");
        }
    }

    #[test]
    fn first_order_term_transports_the_profile() {
        // Pure advection at speed 1 for a short time: the profile shifts
        // left by t for u > 0 with the centered difference convention.
        let grid = circle(256);
        let track = box_track(-2.0, 2.0, [0.0, 0.2]);
        let field = ReactionField::new(FieldKind::Zero, track.main()).unwrap();
        let config = PdeConfig::new(
            grid,
            track,
            field,
            GradientCoeffs::new(vec![expr("1")]).unwrap(),
            vec![expr("cos(x)")],
            None,
            None,
        )
        .unwrap();
        let final_state = run_simulation(&config, &mut NoopObserver).unwrap();
        let t = 0.2;
        let mut worst = 0.0_f64;
        for i in 0..256 {
            let x = config.grid().coords(i)[0];
            // Advection plus diffusion: e^{-t} damping of the mode.
            let expected = (-t as f64).exp() * (x + t).cos();
            worst = worst.max((final_state.values[i] - expected).abs());
        }
        assert!(worst <= 5e-3, "worst {worst:e}");
    }

    #[test]
    fn config_rejects_unstable_dt() {
        let grid = circle(32);
        let track = box_track(-1.0, 1.0, [0.0, 0.5]);
        let field = ReactionField::new(FieldKind::Zero, track.main()).unwrap();
        let h = grid.min_spacing();
        let err = PdeConfig::new(
            grid,
            track,
            field,
            GradientCoeffs::zero(1),
            vec![expr("0")],
            Some(h * h),
            None,
        )
        .unwrap_err();
        match err {
            Error::Invalid { what, .. } => assert_eq!(what, "dt"),
            other => panic!("expected an invalid-dt error, got {other:?}"),
        }
    }

    #[test]
    fn config_tightens_the_bound_when_u_is_present() {
        let grid = circle(32);
        let h = grid.min_spacing();
        let base = 0.25 * h * h;
        let track = box_track(-2.0, 2.0, [0.0, 0.5]);
        let field = ReactionField::new(FieldKind::Zero, track.main()).unwrap();
        let with_u = PdeConfig::new(
            grid.clone(),
            track.clone(),
            field.clone(),
            GradientCoeffs::new(vec![expr("0.1")]).unwrap(),
            vec![expr("0")],
            None,
            None,
        )
        .unwrap();
        assert!((with_u.dt_bound() - 0.8 * base).abs() < 1e-15);
        let without = PdeConfig::new(
            grid,
            track,
            field,
            GradientCoeffs::new(vec![expr("0")]).unwrap(),
            vec![expr("0")],
            None,
            None,
        )
        .unwrap();
        assert!((without.dt_bound() - base).abs() < 1e-15);
    }

    #[test]
    fn config_rejects_initial_data_off_the_track() {
        let grid = circle(16);
        let track = box_track(-1.0, 1.0, [0.0, 0.5]);
        let field = ReactionField::new(FieldKind::Zero, track.main()).unwrap();
        let err = PdeConfig::new(
            grid,
            track,
            field,
            GradientCoeffs::zero(1),
            vec![expr("5")],
            None,
            None,
        )
        .unwrap_err();
        match err {
            Error::Invalid { what, .. } => assert_eq!(what, "initial"),
            other => panic!("expected an invalid-initial error, got {other:?}"),
        }
    }

    #[test]
    fn blow_up_keeps_the_partial_history() {
        struct Collect(Vec<(usize, f64)>);
        impl Observer for Collect {
            fn record(&mut self, step: usize, section: &Section) -> Result<()> {
                self.0.push((step, section.time));
                Ok(())
            }
        }
        // v' = v^2 from 2 has a pole at t = 0.5, inside the horizon.
        let config = small_config(16, FieldKind::Square, "2", [0.0, 0.9], 3.0, None);
        let mut obs = Collect(Vec::new());
        match run_simulation(&config, &mut obs) {
            Err(Error::BlowUp { time }) => {
                assert!(time > 0.3 && time < 0.9, "blow-up at {time}");
                let last = obs.0.last().unwrap();
                assert!((last.1 - time).abs() <= config.dt() * 10.0 + 1e-12);
                assert!(obs.0.len() >= 3, "only {} records kept", obs.0.len());
            }
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn recording_cadence_includes_endpoints() {
        struct Steps(Vec<usize>);
        impl Observer for Steps {
            fn record(&mut self, step: usize, _section: &Section) -> Result<()> {
                self.0.push(step);
                Ok(())
            }
        }
        let grid = circle(16);
        let track = box_track(-1.0, 1.0, [0.0, 0.01]);
        let field = ReactionField::new(FieldKind::Zero, track.main()).unwrap();
        let config = PdeConfig::new(
            grid,
            track,
            field,
            GradientCoeffs::zero(1),
            vec![expr("0.1")],
            Some(2e-4),
            Some(7),
        )
        .unwrap();
        let mut obs = Steps(Vec::new());
        run_simulation(&config, &mut obs).unwrap();
        let n_steps = (0.01_f64 / 2e-4).ceil() as usize;
        assert_eq!(obs.0.first(), Some(&0));
        assert_eq!(obs.0.last(), Some(&n_steps));
        for w in obs.0.windows(2) {
            assert!(w[1] - w[0] <= 7);
        }
    }

    #[test]
    fn circle_relabeling_commutes_with_the_step() {
        let n = 32;
        let config = small_config(n, FieldKind::Square, "0.2", [0.0, 0.5], 1.0, None);
        let vals: Vec<f64> = (0..n).map(|i| 0.3 * (config.grid().coords(i)[0]).cos()).collect();
        let s = Section::new(vals.clone(), n, 1, 0.0).unwrap();
        let shift = 5usize;
        let shifted_vals: Vec<f64> = (0..n).map(|i| vals[(i + shift) % n]).collect();
        let shifted = Section::new(shifted_vals, n, 1, 0.0).unwrap();
        let stepped = step_pde(&config, &s).unwrap();
        let stepped_shifted = step_pde(&config, &shifted).unwrap();
        for i in 0..n {
            assert_eq!(
                stepped_shifted.values[i],
                stepped.values[(i + shift) % n],
                "node {i} differs after relabeling"
            );
        }
    }

    #[test]
    fn section_csv_layouts() {
        let circle = Section::new(vec![0.5, -1.0, 0.25, 2.0], 2, 2, 0.0).unwrap();
        assert_eq!(
            circle.to_csv(&Topology::Circle { n: 2 }).unwrap(),
            "node,s1,s2\n0,0.5,-1\n1,0.25,2\n"
        );
        let torus = Section::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 6, 1, 0.0).unwrap();
        let csv = torus.to_csv(&Topology::Torus { nx: 3, ny: 2 }).unwrap();
        assert_eq!(csv.lines().next(), Some("ix,iy,s1"));
        // Node 4 sits at (ix, iy) = (1, 1) in row-major layout.
        assert!(csv.lines().any(|l| l == "1,1,5"));
        assert!(circle.to_csv(&Topology::Circle { n: 3 }).is_err());
    }
}
