//! Concrete convex sets at a fixed time.
//!
//! Projections run on the nearest-point route (closed forms, face
//! enumeration, or a Newton iteration), while support gaps run on the
//! support-function route, so the two can cross-check each other. For a
//! point p and a set K the support gap is
//!
//! ```text
//! gap(p) = sup { n . (p - v) : v on the boundary of K, n an outward unit
//!                normal of K at v }
//! ```
//!
//! which equals distance(p, K) outside and is <= 0 inside. At a polytope
//! vertex the normals form a cone, so the sup is taken over vertex normal
//! cones via Moreau projection, not just over facet normals.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fiber;

use super::{EPS_GEO, EPS_PROJ};

const NEWTON_MAX_ITERS: usize = 100;
const DYKSTRA_MAX_PASSES: usize = 5000;

#[derive(Debug, Clone)]
pub struct PolytopeData {
    /// Unit outward normals, one row per constraint.
    pub normals: Vec<Vec<f64>>,
    /// Offsets rescaled to the unit normals: constraint is n . v <= b.
    pub offsets: Vec<f64>,
    pub vertices: Vec<Vec<f64>>,
    /// Counterclockwise vertex order (k = 2 only, else empty).
    cycle: Vec<usize>,
    k: usize,
}

#[derive(Debug, Clone)]
pub struct EllipsoidData {
    pub center: Vec<f64>,
    /// Symmetrized quadratic form Q.
    pub shape: Vec<Vec<f64>>,
    /// Orthonormal eigenvectors of Q (columns u_i).
    axes: Vec<Vec<f64>>,
    /// Eigenvalues of Q, all > 0.
    eigvals: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum RealizedSet {
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    Polytope(PolytopeData),
    Ellipsoid(EllipsoidData),
}

impl RealizedSet {
    // --- constructors -----------------------------------------------------

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !fiber::all_finite(&center) || !radius.is_finite() {
            return Err(Error::invalid("ball", "non-finite center or radius"));
        }
        if radius <= 0.0 {
            return Err(Error::invalid("ball", format!("radius {radius} must be > 0")));
        }
        Ok(RealizedSet::Ball { center, radius })
    }

    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if !fiber::all_finite(&lower) || !fiber::all_finite(&upper) {
            return Err(Error::invalid("box", "non-finite bound"));
        }
        for i in 0..lower.len() {
            if lower[i] > upper[i] {
                return Err(Error::invalid(
                    "box",
                    format!("lower[{i}] = {} exceeds upper[{i}] = {}", lower[i], upper[i]),
                ));
            }
        }
        Ok(RealizedSet::Box { lower, upper })
    }

    pub fn polytope(normals: Vec<Vec<f64>>, offsets: Vec<f64>, k: usize) -> Result<Self> {
        let mut unit_normals = Vec::with_capacity(normals.len());
        let mut unit_offsets = Vec::with_capacity(offsets.len());
        for (i, n) in normals.iter().enumerate() {
            if !fiber::all_finite(n) || !offsets[i].is_finite() {
                return Err(Error::invalid("polytope", format!("constraint {i} not finite")));
            }
            let len = fiber::norm(n);
            if len <= 0.0 {
                return Err(Error::invalid("polytope", format!("constraint {i} has zero normal")));
            }
            unit_normals.push(fiber::scale(n, 1.0 / len));
            unit_offsets.push(offsets[i] / len);
        }
        let vertices = enumerate_vertices(&unit_normals, &unit_offsets, k);
        if vertices.is_empty() {
            return Err(Error::invalid("polytope", "no feasible vertex: set is empty"));
        }
        if !positively_spans(&unit_normals, k) {
            return Err(Error::invalid(
                "polytope",
                "normals do not positively span the fiber space: set is unbounded",
            ));
        }
        let cycle = if k == 2 { polygon_cycle(&vertices) } else { Vec::new() };
        Ok(RealizedSet::Polytope(PolytopeData {
            normals: unit_normals,
            offsets: unit_offsets,
            vertices,
            cycle,
            k,
        }))
    }

    pub fn ellipsoid(center: Vec<f64>, shape: Vec<Vec<f64>>) -> Result<Self> {
        let k = center.len();
        if !fiber::all_finite(&center) || shape.iter().any(|row| !fiber::all_finite(row)) {
            return Err(Error::invalid("ellipsoid", "non-finite center or shape"));
        }
        let scale = shape
            .iter()
            .flatten()
            .fold(0.0_f64, |acc, v| acc.max(v.abs()));
        for i in 0..k {
            for j in (i + 1)..k {
                if (shape[i][j] - shape[j][i]).abs() > 1e-9 * (scale + 1.0) {
                    return Err(Error::invalid("ellipsoid", "shape matrix is not symmetric"));
                }
            }
        }
        let sym = DMatrix::from_fn(k, k, |i, j| 0.5 * (shape[i][j] + shape[j][i]));
        let (eigvals, axes) = if k == 2 {
            eigen_symmetric_2x2(sym[(0, 0)], sym[(0, 1)], sym[(1, 1)])
        } else {
            let eigen = sym.clone().symmetric_eigen();
            let vals: Vec<f64> = eigen.eigenvalues.iter().copied().collect();
            let vecs: Vec<Vec<f64>> = (0..k)
                .map(|i| eigen.eigenvectors.column(i).iter().copied().collect())
                .collect();
            (vals, vecs)
        };
        for lam in &eigvals {
            if *lam <= 0.0 || !lam.is_finite() {
                return Err(Error::invalid(
                    "ellipsoid",
                    format!("shape matrix is not positive definite (eigenvalue {lam})"),
                ));
            }
        }
        let shape_sym: Vec<Vec<f64>> = (0..k)
            .map(|i| (0..k).map(|j| sym[(i, j)]).collect())
            .collect();
        Ok(RealizedSet::Ellipsoid(EllipsoidData {
            center,
            shape: shape_sym,
            axes,
            eigvals,
        }))
    }

    // --- basic queries ----------------------------------------------------

    pub fn fiber_dim(&self) -> usize {
        match self {
            RealizedSet::Ball { center, .. } => center.len(),
            RealizedSet::Box { lower, .. } => lower.len(),
            RealizedSet::Polytope(p) => p.k,
            RealizedSet::Ellipsoid(e) => e.center.len(),
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            RealizedSet::Ball { radius, .. } => 2.0 * radius,
            RealizedSet::Box { lower, upper } => fiber::dist(upper, lower),
            RealizedSet::Polytope(p) => {
                let mut d = 0.0_f64;
                for i in 0..p.vertices.len() {
                    for j in (i + 1)..p.vertices.len() {
                        d = d.max(fiber::dist(&p.vertices[i], &p.vertices[j]));
                    }
                }
                d
            }
            RealizedSet::Ellipsoid(e) => {
                let lam_min = e.eigvals.iter().copied().fold(f64::INFINITY, f64::min);
                2.0 / lam_min.sqrt()
            }
        }
    }

    /// Smallest axis-aligned box containing the set.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            RealizedSet::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            RealizedSet::Box { lower, upper } => (lower.clone(), upper.clone()),
            RealizedSet::Polytope(p) => {
                let k = p.k;
                let mut lo = vec![f64::INFINITY; k];
                let mut hi = vec![f64::NEG_INFINITY; k];
                for v in &p.vertices {
                    for i in 0..k {
                        lo[i] = lo[i].min(v[i]);
                        hi[i] = hi[i].max(v[i]);
                    }
                }
                (lo, hi)
            }
            RealizedSet::Ellipsoid(e) => {
                // Half-width along axis i is sqrt of the (i,i) entry of the
                // inverse shape matrix.
                let k = e.center.len();
                let half: Vec<f64> = (0..k)
                    .map(|i| {
                        e.axes
                            .iter()
                            .zip(&e.eigvals)
                            .map(|(u, lam)| u[i] * u[i] / lam)
                            .sum::<f64>()
                            .sqrt()
                    })
                    .collect();
                (
                    e.center.iter().zip(&half).map(|(c, h)| c - h).collect(),
                    e.center.iter().zip(&half).map(|(c, h)| c + h).collect(),
                )
            }
        }
    }

    /// Vertices for polytopes, corner points for boxes, empty otherwise.
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        match self {
            RealizedSet::Polytope(p) => p.vertices.clone(),
            RealizedSet::Box { lower, upper } => {
                let k = lower.len();
                (0..(1usize << k))
                    .map(|mask| {
                        (0..k)
                            .map(|i| if mask & (1 << i) != 0 { upper[i] } else { lower[i] })
                            .collect()
                    })
                    .collect()
            }
            _ => Vec::new(),
        }
    }

    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        match self.support_gap(p) {
            Ok(gap) => gap <= tol,
            Err(_) => false,
        }
    }

    // --- nearest-point route ----------------------------------------------

    pub fn distance(&self, p: &[f64]) -> Result<f64> {
        Ok(self.project_with_distance(p)?.1)
    }

    pub fn project(&self, p: &[f64]) -> Result<Vec<f64>> {
        Ok(self.project_with_distance(p)?.0)
    }

    pub fn project_with_distance(&self, p: &[f64]) -> Result<(Vec<f64>, f64)> {
        if !fiber::all_finite(p) {
            return Err(Error::domain("projection of a non-finite point"));
        }
        match self {
            RealizedSet::Ball { center, radius } => {
                let d = fiber::dist(p, center);
                if d <= *radius {
                    Ok((p.to_vec(), 0.0))
                } else {
                    let q = fiber::add_scaled(center, radius / d, &fiber::sub(p, center));
                    Ok((q, d - radius))
                }
            }
            RealizedSet::Box { lower, upper } => {
                let q: Vec<f64> = p
                    .iter()
                    .zip(lower.iter().zip(upper))
                    .map(|(&v, (&l, &u))| v.max(l).min(u))
                    .collect();
                let d = fiber::dist(p, &q);
                Ok((q, d))
            }
            RealizedSet::Polytope(data) => data.project(p),
            RealizedSet::Ellipsoid(e) => e.project(p),
        }
    }

    // --- support route ----------------------------------------------------

    pub fn support_gap(&self, p: &[f64]) -> Result<f64> {
        if !fiber::all_finite(p) {
            return Err(Error::domain("support gap of a non-finite point"));
        }
        match self {
            RealizedSet::Ball { center, radius } => Ok(fiber::dist(p, center) - radius),
            RealizedSet::Box { lower, upper } => {
                let mut sum_sq = 0.0;
                let mut any_positive = false;
                let mut max_slack = f64::NEG_INFINITY;
                for i in 0..lower.len() {
                    let slack = (p[i] - upper[i]).max(lower[i] - p[i]);
                    max_slack = max_slack.max(slack);
                    if slack > 0.0 {
                        any_positive = true;
                        sum_sq += slack * slack;
                    }
                }
                Ok(if any_positive { sum_sq.sqrt() } else { max_slack })
            }
            RealizedSet::Polytope(data) => Ok(data.support_gap(p)),
            RealizedSet::Ellipsoid(e) => e.support_gap(p),
        }
    }

    // --- outward normals --------------------------------------------------

    /// Unit generators of the outward normal set at a boundary point v.
    /// v must lie within eps_act = EPS_GEO * diameter of the boundary.
    pub fn outward_normals(&self, v: &[f64]) -> Result<Vec<Vec<f64>>> {
        let eps_act = EPS_GEO * self.diameter();
        let gap = self.support_gap(v)?;
        if gap.abs() > eps_act {
            return Err(Error::domain(format!(
                "point is not on the boundary (support gap {gap:e}, activity window {eps_act:e})"
            )));
        }
        match self {
            RealizedSet::Ball { center, .. } => {
                let n = fiber::normalized(&fiber::sub(v, center)).ok_or_else(|| {
                    Error::domain("outward normal undefined at the ball center")
                })?;
                Ok(vec![n])
            }
            RealizedSet::Box { lower, upper } => {
                let k = lower.len();
                let mut out = Vec::new();
                for i in 0..k {
                    if v[i] >= upper[i] - eps_act {
                        let mut n = vec![0.0; k];
                        n[i] = 1.0;
                        out.push(n);
                    }
                    if v[i] <= lower[i] + eps_act {
                        let mut n = vec![0.0; k];
                        n[i] = -1.0;
                        out.push(n);
                    }
                }
                Ok(out)
            }
            RealizedSet::Polytope(data) => {
                let mut out = Vec::new();
                for (n, b) in data.normals.iter().zip(&data.offsets) {
                    if fiber::dot(n, v) >= b - eps_act {
                        out.push(n.clone());
                    }
                }
                Ok(out)
            }
            RealizedSet::Ellipsoid(e) => {
                let grad = e.apply_shape(&fiber::sub(v, &e.center));
                let n = fiber::normalized(&grad).ok_or_else(|| {
                    Error::domain("outward normal undefined at the ellipsoid center")
                })?;
                Ok(vec![n])
            }
        }
    }
}

// --- polytope internals ---------------------------------------------------

impl PolytopeData {
    pub(crate) fn max_slack(&self, p: &[f64]) -> f64 {
        self.normals
            .iter()
            .zip(&self.offsets)
            .map(|(n, b)| fiber::dot(n, p) - b)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn scale(&self) -> f64 {
        1.0 + self
            .vertices
            .iter()
            .map(|v| fiber::norm(v))
            .fold(0.0, f64::max)
    }

    fn project(&self, p: &[f64]) -> Result<(Vec<f64>, f64)> {
        if self.max_slack(p) <= 0.0 {
            return Ok((p.to_vec(), 0.0));
        }
        match self.k {
            2 => Ok(self.project_polygon(p)),
            4 => self.project_dykstra(p),
            _ => Ok(self.project_faces(p)),
        }
    }

    /// k = 2: exact nearest point over the ordered edge cycle.
    fn project_polygon(&self, p: &[f64]) -> (Vec<f64>, f64) {
        let verts = &self.vertices;
        if verts.len() == 1 {
            return (verts[0].clone(), fiber::dist(p, &verts[0]));
        }
        let mut best = (verts[0].clone(), fiber::dist(p, &verts[0]));
        let m = self.cycle.len();
        for i in 0..m {
            let a = &verts[self.cycle[i]];
            let b = &verts[self.cycle[(i + 1) % m]];
            let e = fiber::sub(b, a);
            let len_sq = fiber::dot(&e, &e);
            let t = if len_sq > 0.0 {
                (fiber::dot(&fiber::sub(p, a), &e) / len_sq).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let q = fiber::add_scaled(a, t, &e);
            let d = fiber::dist(p, &q);
            if d < best.1 {
                best = (q, d);
            }
        }
        best
    }

    /// k = 1 or 3: enumerate faces as constraint subsets, project onto each
    /// affine hull, keep the nearest feasible candidate. The true nearest
    /// point appears among the candidates because p minus it spans the
    /// active normals.
    fn project_faces(&self, p: &[f64]) -> (Vec<f64>, f64) {
        let m = self.normals.len();
        let feas_tol = 1e-9 * self.scale();
        let mut best: Option<(Vec<f64>, f64)> = None;
        for size in 1..=self.k.min(m) {
            for subset in k_subsets(m, size) {
                let a = DMatrix::from_fn(size, self.k, |r, c| self.normals[subset[r]][c]);
                let rhs = DVector::from_fn(size, |r, _| {
                    fiber::dot(&self.normals[subset[r]], p) - self.offsets[subset[r]]
                });
                let gram = &a * a.transpose();
                let Some(y) = gram.clone().full_piv_lu().solve(&rhs) else {
                    continue;
                };
                // A subset with dependent normals (a box keeps both bounds of
                // an axis) has a singular gram matrix; the solver then hands
                // back a vector that fails the normal equations, and its
                // null-space part can cancel in the correction, parking the
                // candidate on p itself. Only a verified solution counts.
                let residual = (&gram * &y - &rhs).amax();
                if residual > 1e-10 * (1.0 + rhs.amax()) {
                    continue;
                }
                let correction = a.transpose() * y;
                let x: Vec<f64> = (0..self.k).map(|i| p[i] - correction[i]).collect();
                if !fiber::all_finite(&x) || self.max_slack(&x) > feas_tol {
                    continue;
                }
                let d = fiber::dist(p, &x);
                if best.as_ref().map_or(true, |(_, bd)| d < *bd) {
                    best = Some((x, d));
                }
            }
        }
        // A bounded nonempty polytope always yields at least the vertex
        // candidates, so best is present.
        best.unwrap_or_else(|| {
            let v = self.vertices[0].clone();
            let d = fiber::dist(p, &v);
            (v, d)
        })
    }

    /// k = 4: cyclic Dykstra projections, then a primal-dual sandwich
    /// certificate (upper bound |p - x|, lower bound from the support
    /// function in the approach direction).
    fn project_dykstra(&self, p: &[f64]) -> Result<(Vec<f64>, f64)> {
        let m = self.normals.len();
        let scale = self.scale();
        let mut x = p.to_vec();
        let mut corrections = vec![vec![0.0; self.k]; m];
        for _pass in 0..DYKSTRA_MAX_PASSES {
            let mut moved = 0.0_f64;
            for a in 0..m {
                let y = fiber::add(&x, &corrections[a]);
                let slack = fiber::dot(&self.normals[a], &y) - self.offsets[a];
                let x_new = if slack > 0.0 {
                    fiber::add_scaled(&y, -slack, &self.normals[a])
                } else {
                    y.clone()
                };
                corrections[a] = fiber::sub(&y, &x_new);
                moved = moved.max(fiber::dist(&x, &x_new));
                x = x_new;
            }
            if moved <= 1e-14 * scale {
                break;
            }
        }
        let d = fiber::dist(p, &x);
        let viol = self.max_slack(&x).max(0.0);
        let ub = d + viol;
        let lb = match fiber::normalized(&fiber::sub(p, &x)) {
            Some(nhat) => {
                let h = self
                    .vertices
                    .iter()
                    .map(|w| fiber::dot(&nhat, w))
                    .fold(f64::NEG_INFINITY, f64::max);
                fiber::dot(&nhat, p) - h
            }
            None => 0.0,
        };
        let gap = ub - lb;
        if gap > EPS_PROJ * (1.0 + d) {
            return Err(Error::Numeric {
                message: "alternating projections did not certify the nearest point".into(),
                residual: gap,
            });
        }
        Ok((x, d))
    }

    /// Support gap as the max over vertex normal cones: at each vertex w the
    /// best unit normal direction for p - w is the Moreau projection onto
    /// the cone of active constraint normals (or the best single generator
    /// when that projection is zero, i.e. p - w points into the polar cone).
    fn support_gap(&self, p: &[f64]) -> f64 {
        let eps_act = EPS_GEO * self.scale();
        let mut best = f64::NEG_INFINITY;
        for w in &self.vertices {
            let active: Vec<usize> = (0..self.normals.len())
                .filter(|&a| fiber::dot(&self.normals[a], w) >= self.offsets[a] - eps_act)
                .collect();
            if active.is_empty() {
                continue;
            }
            let d = fiber::sub(p, w);
            let gens: Vec<&[f64]> = active.iter().map(|&a| self.normals[a].as_slice()).collect();
            let proj = project_onto_cone(&d, &gens, self.k);
            let value = match proj {
                Some(q) if fiber::norm(&q) > 1e-14 * (1.0 + fiber::norm(&d)) => fiber::norm(&q),
                _ => gens
                    .iter()
                    .map(|g| fiber::dot(g, &d))
                    .fold(f64::NEG_INFINITY, f64::max),
            };
            best = best.max(value);
        }
        best
    }
}

/// Moreau projection of d onto cone{generators} by support-set enumeration:
/// the projection is a nonnegative combination of at most k linearly
/// independent generators, with the residual polar to every generator.
fn project_onto_cone(d: &[f64], gens: &[&[f64]], k: usize) -> Option<Vec<f64>> {
    let m = gens.len();
    let tol = 1e-12 * (1.0 + fiber::norm(d));
    // Empty support: valid iff d is already polar to all generators.
    if gens.iter().all(|g| fiber::dot(g, d) <= tol) {
        return Some(vec![0.0; k]);
    }
    for size in 1..=k.min(m) {
        for subset in k_subsets(m, size) {
            let g = DMatrix::from_fn(k, size, |r, c| gens[subset[c]][r]);
            let gram = g.transpose() * &g;
            let rhs = g.transpose() * DVector::from_column_slice(d);
            let Some(lambda) = gram.full_piv_lu().solve(&rhs) else {
                continue;
            };
            if lambda.iter().any(|&l| l < -tol || !l.is_finite()) {
                continue;
            }
            let q = &g * &lambda;
            let qv: Vec<f64> = q.iter().copied().collect();
            let r = fiber::sub(d, &qv);
            if gens.iter().all(|gen| fiber::dot(gen, &r) <= tol) {
                return Some(qv);
            }
        }
    }
    None
}

// --- ellipsoid internals ----------------------------------------------------

impl EllipsoidData {
    fn eigen_coords(&self, d: &[f64]) -> Vec<f64> {
        self.axes.iter().map(|u| fiber::dot(u, d)).collect()
    }

    fn from_eigen_coords(&self, w: &[f64]) -> Vec<f64> {
        let k = self.center.len();
        let mut out = vec![0.0; k];
        for (i, u) in self.axes.iter().enumerate() {
            for j in 0..k {
                out[j] += w[i] * u[j];
            }
        }
        out
    }

    pub(crate) fn apply_shape(&self, d: &[f64]) -> Vec<f64> {
        let k = self.center.len();
        (0..k)
            .map(|i| fiber::dot(&self.shape[i], d))
            .collect()
    }

    /// Image of a unit sphere direction on the ellipsoid boundary:
    /// c + sum_i (d_i / sqrt(lam_i)) u_i.
    pub(crate) fn sphere_to_boundary(&self, d: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = d
            .iter()
            .zip(&self.eigvals)
            .map(|(di, lam)| di / lam.sqrt())
            .collect();
        fiber::add(&self.center, &self.from_eigen_coords(&scaled))
    }

    /// Level of the quadratic form: <= 1 inside, 1 on the boundary.
    fn level(&self, p: &[f64]) -> f64 {
        let w = self.eigen_coords(&fiber::sub(p, &self.center));
        w.iter()
            .zip(&self.eigvals)
            .map(|(wi, lam)| lam * wi * wi)
            .sum()
    }

    /// Newton on the Lagrange multiplier: the nearest boundary point to an
    /// exterior p is x(mu) = c + sum_i w_i / (1 + mu lam_i) u_i where mu
    /// solves phi(mu) = sum_i lam_i w_i^2 / (1 + mu lam_i)^2 = 1. phi is
    /// convex and decreasing for mu >= 0, so Newton from 0 converges
    /// monotonically.
    fn project(&self, p: &[f64]) -> Result<(Vec<f64>, f64)> {
        if self.level(p) <= 1.0 {
            return Ok((p.to_vec(), 0.0));
        }
        let w = self.eigen_coords(&fiber::sub(p, &self.center));
        let mut mu = 0.0_f64;
        let mut residual = f64::INFINITY;
        for _ in 0..NEWTON_MAX_ITERS {
            let mut phi = -1.0;
            let mut dphi = 0.0;
            for (wi, lam) in w.iter().zip(&self.eigvals) {
                let den = 1.0 + mu * lam;
                phi += lam * wi * wi / (den * den);
                dphi -= 2.0 * lam * lam * wi * wi / (den * den * den);
            }
            residual = phi.abs();
            if residual <= 1e-13 {
                break;
            }
            let step = phi / dphi;
            mu -= step;
            if step.abs() <= 1e-16 * (1.0 + mu.abs()) {
                break;
            }
        }
        if residual > 1e-10 {
            return Err(Error::Numeric {
                message: "ellipsoid projection did not converge".into(),
                residual,
            });
        }
        let wq: Vec<f64> = w
            .iter()
            .zip(&self.eigvals)
            .map(|(wi, lam)| wi / (1.0 + mu * lam))
            .collect();
        let q = fiber::add(&self.center, &self.from_eigen_coords(&wq));
        let d = fiber::dist(p, &q);
        Ok((q, d))
    }

    /// Support gap via the boundary normal: outside, n . (p - q) at the
    /// projected point q; inside, the same expression at the radial boundary
    /// point, which is <= 0.
    fn support_gap(&self, p: &[f64]) -> Result<f64> {
        let rho_sq = self.level(p);
        if rho_sq > 1.0 {
            let (q, _) = self.project(p)?;
            let grad = self.apply_shape(&fiber::sub(&q, &self.center));
            let n = fiber::normalized(&grad)
                .ok_or_else(|| Error::domain("degenerate normal on the ellipsoid boundary"))?;
            return Ok(fiber::dot(&n, &fiber::sub(p, &q)));
        }
        let rho = rho_sq.sqrt();
        if rho <= 1e-12 {
            // Center: the least negative gap is along the most curved axis.
            let lam_max = self.eigvals.iter().copied().fold(0.0_f64, f64::max);
            return Ok(-1.0 / lam_max.sqrt());
        }
        let d = fiber::sub(p, &self.center);
        let boundary = fiber::add_scaled(&self.center, 1.0 / rho, &d);
        let grad = self.apply_shape(&fiber::sub(&boundary, &self.center));
        let n = fiber::normalized(&grad)
            .ok_or_else(|| Error::domain("degenerate normal on the ellipsoid boundary"))?;
        Ok(fiber::dot(&n, &fiber::sub(p, &boundary)))
    }
}

/// Closed-form eigendecomposition of [[a, b], [b, c]]. Writing the matrix as
/// half_tr I + r (reflection across the direction phi) gives eigenpairs
/// (half_tr + r, (cos phi, sin phi)) and (half_tr - r, (-sin phi, cos phi)).
/// The iterative solver loses the axis angle to cancellation when the
/// off-diagonal is tiny against the eigenvalue gap; atan2 keeps it to a few
/// ulps uniformly, which the forward-cone quotients at steps near 1e-8 need.
fn eigen_symmetric_2x2(a: f64, b: f64, c: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let half_tr = 0.5 * (a + c);
    let half_diff = 0.5 * (a - c);
    let r = half_diff.hypot(b);
    let phi = 0.5 * b.atan2(half_diff);
    let (sin, cos) = phi.sin_cos();
    (
        vec![half_tr + r, half_tr - r],
        vec![vec![cos, sin], vec![-sin, cos]],
    )
}

// --- combinatorial helpers --------------------------------------------------

/// All size-`size` subsets of 0..m in lexicographic order.
pub(crate) fn k_subsets(m: usize, size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(size);
    fn rec(start: usize, m: usize, size: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == size {
            out.push(current.clone());
            return;
        }
        for i in start..m {
            current.push(i);
            rec(i + 1, m, size, current, out);
            current.pop();
        }
    }
    rec(0, m, size, &mut current, &mut out);
    out
}

/// Feasible intersections of k constraint hyperplanes, deduplicated.
fn enumerate_vertices(normals: &[Vec<f64>], offsets: &[f64], k: usize) -> Vec<Vec<f64>> {
    let m = normals.len();
    let scale = 1.0
        + offsets
            .iter()
            .fold(0.0_f64, |acc, b| acc.max(b.abs()));
    let feas_tol = 1e-9 * scale;
    let mut vertices: Vec<Vec<f64>> = Vec::new();
    for subset in k_subsets(m, k.min(m)) {
        if subset.len() < k {
            continue;
        }
        let a = DMatrix::from_fn(k, k, |r, c| normals[subset[r]][c]);
        let b = DVector::from_fn(k, |r, _| offsets[subset[r]]);
        let Some(x) = a.clone().full_piv_lu().solve(&b) else {
            continue;
        };
        let xv: Vec<f64> = x.iter().copied().collect();
        if !fiber::all_finite(&xv) || fiber::norm(&xv) > 1e12 * scale {
            continue;
        }
        let residual = (&a * &x - &b).amax();
        if residual > 1e-9 * scale {
            continue;
        }
        let feasible = normals
            .iter()
            .zip(offsets)
            .all(|(n, b)| fiber::dot(n, &xv) <= b + feas_tol);
        if !feasible {
            continue;
        }
        if !vertices.iter().any(|v| fiber::dist(v, &xv) <= 1e-9 * scale) {
            vertices.push(xv);
        }
    }
    // k = 1 vertices are single-constraint points.
    if k == 1 && vertices.is_empty() {
        for (n, b) in normals.iter().zip(offsets) {
            let x = vec![b / n[0]];
            let feasible = normals
                .iter()
                .zip(offsets)
                .all(|(nn, bb)| fiber::dot(nn, &x) <= bb + feas_tol);
            if feasible && !vertices.iter().any(|v| fiber::dist(v, &x) <= 1e-9 * scale) {
                vertices.push(x);
            }
        }
    }
    vertices
}

/// True iff cone{normals} = R^k, i.e. +-e_i lies in the cone for every
/// axis, via Caratheodory enumeration. Equivalent to a trivial recession
/// cone, hence boundedness.
fn positively_spans(normals: &[Vec<f64>], k: usize) -> bool {
    for i in 0..k {
        for sign in [1.0, -1.0] {
            let mut target = vec![0.0; k];
            target[i] = sign;
            let gens: Vec<&[f64]> = normals.iter().map(|n| n.as_slice()).collect();
            match project_onto_cone(&target, &gens, k) {
                Some(q) if fiber::dist(&q, &target) <= 1e-9 => {}
                _ => return false,
            }
        }
    }
    true
}

/// Counterclockwise order of 2D vertices around their mean.
fn polygon_cycle(vertices: &[Vec<f64>]) -> Vec<usize> {
    let n = vertices.len();
    let cx = vertices.iter().map(|v| v[0]).sum::<f64>() / n as f64;
    let cy = vertices.iter().map(|v| v[1]).sum::<f64>() / n as f64;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let ta = (vertices[a][1] - cy).atan2(vertices[a][0] - cx);
        let tb = (vertices[b][1] - cy).atan2(vertices[b][0] - cx);
        ta.partial_cmp(&tb).unwrap()
    });
    order
}
