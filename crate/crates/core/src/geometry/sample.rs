//! Deterministic point covers of realized sets.
//!
//! Boundary covers drive the Lipschitz-rate estimate for time-dependent
//! families and the spatial sampling in the hypothesis checker, so they are
//! deterministic by construction: closed-form lattices per representation,
//! no randomness.

use crate::error::Result;
use crate::fiber;

use super::realized::RealizedSet;

/// Deterministic near-uniform cover of the unit sphere in R^k.
pub fn sphere_directions(k: usize, budget: usize) -> Vec<Vec<f64>> {
    let n = budget.max(2);
    match k {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..n)
            .map(|j| {
                let theta = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
                vec![theta.cos(), theta.sin()]
            })
            .collect(),
        3 => {
            // Fibonacci sphere.
            let golden = (1.0 + 5.0_f64.sqrt()) / 2.0;
            (0..n)
                .map(|j| {
                    let z = 1.0 - 2.0 * (j as f64 + 0.5) / n as f64;
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    let theta = 2.0 * std::f64::consts::PI * j as f64 / golden;
                    vec![r * theta.cos(), r * theta.sin(), z]
                })
                .collect()
        }
        _ => {
            // Hopf-coordinate grid on S^3: (cos(eta) e^{i phi}, sin(eta) e^{i psi}).
            let per_axis = ((n as f64).powf(1.0 / 3.0).ceil() as usize).max(2);
            let mut out = Vec::new();
            for a in 0..per_axis {
                let eta = std::f64::consts::FRAC_PI_2 * (a as f64 + 0.5) / per_axis as f64;
                for b in 0..per_axis {
                    let phi = 2.0 * std::f64::consts::PI * b as f64 / per_axis as f64;
                    for c in 0..per_axis {
                        let psi = 2.0 * std::f64::consts::PI * (c as f64 + 0.5) / per_axis as f64;
                        out.push(vec![
                            eta.cos() * phi.cos(),
                            eta.cos() * phi.sin(),
                            eta.sin() * psi.cos(),
                            eta.sin() * psi.sin(),
                        ]);
                    }
                }
            }
            out
        }
    }
}

/// A point in the relative interior of the set.
pub fn anchor_point(set: &RealizedSet) -> Vec<f64> {
    match set {
        RealizedSet::Ball { center, .. } => center.clone(),
        RealizedSet::Box { lower, upper } => lower
            .iter()
            .zip(upper)
            .map(|(&l, &u)| 0.5 * (l + u))
            .collect(),
        RealizedSet::Polytope(_) => {
            let verts = set.vertices();
            let k = verts[0].len();
            let mut g = vec![0.0; k];
            for v in &verts {
                for i in 0..k {
                    g[i] += v[i];
                }
            }
            fiber::scale(&g, 1.0 / verts.len() as f64)
        }
        RealizedSet::Ellipsoid(e) => e.center.clone(),
    }
}

/// Deterministic cover of the boundary with roughly `budget` points.
pub fn boundary_samples(set: &RealizedSet, budget: usize) -> Vec<Vec<f64>> {
    let raw = match set {
        RealizedSet::Ball { center, radius } => sphere_directions(center.len(), budget)
            .into_iter()
            .map(|d| fiber::add_scaled(center, *radius, &d))
            .collect(),
        RealizedSet::Box { lower, upper } => box_boundary(lower, upper, budget),
        RealizedSet::Polytope(_) => polytope_boundary(set, budget),
        RealizedSet::Ellipsoid(_) => ellipsoid_boundary(set, budget),
    };
    dedup_points(raw, 1e-12 * (1.0 + set.diameter()))
}

/// Points strictly inside (relative interior for degenerate sets): the
/// anchor plus contractions of the boundary cover toward it.
pub fn interior_samples(set: &RealizedSet, budget: usize) -> Vec<Vec<f64>> {
    let anchor = anchor_point(set);
    let boundary = boundary_samples(set, budget);
    let fractions = [0.5, 0.25, 0.75];
    let mut out = vec![anchor.clone()];
    for (j, b) in boundary.iter().enumerate() {
        if out.len() > budget {
            break;
        }
        let s = fractions[j % fractions.len()];
        out.push(fiber::add_scaled(&anchor, s, &fiber::sub(b, &anchor)));
    }
    dedup_points(out, 1e-12 * (1.0 + set.diameter()))
}

/// Symmetric Hausdorff distance estimated over boundary covers. For convex
/// compacts the sup of the distance function over a set is attained on its
/// boundary, so covering the two boundaries suffices.
pub fn hausdorff_estimate(a: &RealizedSet, b: &RealizedSet, budget: usize) -> Result<f64> {
    let mut h = 0.0_f64;
    for p in boundary_samples(a, budget) {
        h = h.max(b.distance(&p)?);
    }
    for p in boundary_samples(b, budget) {
        h = h.max(a.distance(&p)?);
    }
    Ok(h)
}

fn box_boundary(lower: &[f64], upper: &[f64], budget: usize) -> Vec<Vec<f64>> {
    let k = lower.len();
    if k == 1 {
        return vec![vec![lower[0]], vec![upper[0]]];
    }
    let faces = 2 * k;
    let per_face = (budget / faces).max(1);
    let q = ((per_face as f64).powf(1.0 / (k - 1) as f64).round() as usize).max(2);
    let mut out = Vec::new();
    for axis in 0..k {
        for &fixed in &[lower[axis], upper[axis]] {
            // Lattice over the remaining axes, endpoints included.
            let free: Vec<usize> = (0..k).filter(|&i| i != axis).collect();
            let mut idx = vec![0usize; free.len()];
            loop {
                let mut point = vec![0.0; k];
                point[axis] = fixed;
                for (slot, &i) in free.iter().enumerate() {
                    let t = idx[slot] as f64 / (q - 1) as f64;
                    point[i] = lower[i] + t * (upper[i] - lower[i]);
                }
                out.push(point);
                // Odometer increment.
                let mut carry = 0;
                loop {
                    if carry == idx.len() {
                        break;
                    }
                    idx[carry] += 1;
                    if idx[carry] < q {
                        break;
                    }
                    idx[carry] = 0;
                    carry += 1;
                }
                if carry == idx.len() {
                    break;
                }
            }
        }
    }
    out
}

fn polytope_boundary(set: &RealizedSet, budget: usize) -> Vec<Vec<f64>> {
    let RealizedSet::Polytope(data) = set else {
        unreachable!("polytope_boundary on a non-polytope");
    };
    let verts = &data.vertices;
    let k = verts[0].len();
    let mut out: Vec<Vec<f64>> = verts.clone();
    match k {
        1 => out,
        2 => {
            // Subdivide the edge cycle.
            let order = polygon_order(verts);
            let m = order.len();
            if m < 2 {
                return out;
            }
            let per_edge = (budget / m).max(1);
            for i in 0..m {
                let a = &verts[order[i]];
                let b = &verts[order[(i + 1) % m]];
                for j in 1..=per_edge {
                    let t = j as f64 / (per_edge + 1) as f64;
                    out.push(fiber::add_scaled(a, t, &fiber::sub(b, a)));
                }
            }
            out
        }
        3 => {
            // Ring fans on each facet polygon.
            let eps = 1e-9 * (1.0 + set.diameter());
            let facets = data.normals.len();
            let per_facet = (budget / facets.max(1)).max(3);
            for (n, &b) in data.normals.iter().zip(&data.offsets) {
                let on_facet: Vec<&Vec<f64>> = verts
                    .iter()
                    .filter(|v| fiber::dot(n, v) >= b - eps)
                    .collect();
                if on_facet.len() < 3 {
                    for pair in on_facet.windows(2) {
                        out.push(fiber::add_scaled(pair[0], 0.5, &fiber::sub(pair[1], pair[0])));
                    }
                    continue;
                }
                let mut g = vec![0.0; 3];
                for v in &on_facet {
                    for i in 0..3 {
                        g[i] += v[i];
                    }
                }
                let g = fiber::scale(&g, 1.0 / on_facet.len() as f64);
                // Order facet vertices by angle in the facet plane.
                let e1 = match fiber::normalized(&fiber::sub(on_facet[0], &g)) {
                    Some(e) => e,
                    None => continue,
                };
                let e2 = vec![
                    n[1] * e1[2] - n[2] * e1[1],
                    n[2] * e1[0] - n[0] * e1[2],
                    n[0] * e1[1] - n[1] * e1[0],
                ];
                let mut order: Vec<usize> = (0..on_facet.len()).collect();
                order.sort_by(|&a, &c| {
                    let da = fiber::sub(on_facet[a], &g);
                    let dc = fiber::sub(on_facet[c], &g);
                    let ta = fiber::dot(&da, &e2).atan2(fiber::dot(&da, &e1));
                    let tc = fiber::dot(&dc, &e2).atan2(fiber::dot(&dc, &e1));
                    ta.partial_cmp(&tc).unwrap()
                });
                out.push(g.clone());
                let rings = [1.0 / 3.0, 2.0 / 3.0, 1.0];
                let per_ring = (per_facet / rings.len()).max(on_facet.len());
                for &r in &rings {
                    let steps = (per_ring / on_facet.len()).max(1);
                    for w in 0..order.len() {
                        let a = on_facet[order[w]];
                        let c = on_facet[order[(w + 1) % order.len()]];
                        for j in 0..steps {
                            let t = j as f64 / steps as f64;
                            let edge_pt = fiber::add_scaled(a, t, &fiber::sub(c, a));
                            out.push(fiber::add_scaled(&g, r, &fiber::sub(&edge_pt, &g)));
                        }
                    }
                }
            }
            out
        }
        _ => {
            // Vertices, boundary edge midpoints, facet centroids.
            let eps = 1e-9 * (1.0 + set.diameter());
            for i in 0..verts.len() {
                for j in (i + 1)..verts.len() {
                    let mid = fiber::add_scaled(&verts[i], 0.5, &fiber::sub(&verts[j], &verts[i]));
                    let on_boundary = data
                        .normals
                        .iter()
                        .zip(&data.offsets)
                        .any(|(n, &b)| fiber::dot(n, &mid) >= b - eps);
                    if on_boundary {
                        out.push(mid);
                    }
                }
            }
            for (n, &b) in data.normals.iter().zip(&data.offsets) {
                let on_facet: Vec<&Vec<f64>> = verts
                    .iter()
                    .filter(|v| fiber::dot(n, v) >= b - eps)
                    .collect();
                if on_facet.is_empty() {
                    continue;
                }
                let mut g = vec![0.0; k];
                for v in &on_facet {
                    for i in 0..k {
                        g[i] += v[i];
                    }
                }
                out.push(fiber::scale(&g, 1.0 / on_facet.len() as f64));
            }
            out
        }
    }
}

fn ellipsoid_boundary(set: &RealizedSet, budget: usize) -> Vec<Vec<f64>> {
    let RealizedSet::Ellipsoid(e) = set else {
        unreachable!("ellipsoid_boundary on a non-ellipsoid");
    };
    let k = set.fiber_dim();
    sphere_directions(k, budget)
        .into_iter()
        .map(|d| e.sphere_to_boundary(&d))
        .collect()
}

fn polygon_order(vertices: &[Vec<f64>]) -> Vec<usize> {
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

fn dedup_points(points: Vec<Vec<f64>>, tol: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(points.len());
    for p in points {
        if !out.iter().any(|q| fiber::dist(q, &p) <= tol) {
            out.push(p);
        }
    }
    out
}
