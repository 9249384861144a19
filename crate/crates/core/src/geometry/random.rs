//! Seeded random set instances for stress tests and benchmarks.
//!
//! Everything takes the RNG by argument, so callers control determinism.
//! Generated specs are time-constant and always describe valid (nonempty,
//! bounded) sets by construction; `ConvexFamily::new` re-validates anyway.

use rand::Rng;

use crate::timefn::TimeFn;

use super::{ConvexSetSpec, HalfSpace};

/// Uniform direction on the unit sphere via rejection from the cube.
pub fn unit_vector<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.2 && n <= 1.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn ball_spec<R: Rng>(rng: &mut R, k: usize) -> ConvexSetSpec {
    ConvexSetSpec::Ball {
        center: (0..k)
            .map(|_| TimeFn::Constant(rng.gen_range(-1.0..1.0)))
            .collect(),
        radius: TimeFn::Constant(rng.gen_range(0.3..1.5)),
    }
}

pub fn box_spec<R: Rng>(rng: &mut R, k: usize) -> ConvexSetSpec {
    let lower: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.5..-0.2)).collect();
    let upper: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..1.5)).collect();
    ConvexSetSpec::Box {
        lower: lower.into_iter().map(TimeFn::Constant).collect(),
        upper: upper.into_iter().map(TimeFn::Constant).collect(),
    }
}

/// Axis constraints at random offsets plus a few random facets: bounded and
/// containing the origin by construction.
pub fn polytope_spec<R: Rng>(rng: &mut R, k: usize) -> ConvexSetSpec {
    let mut constraints = Vec::new();
    for i in 0..k {
        for sign in [1.0, -1.0] {
            let mut n = vec![0.0; k];
            n[i] = sign;
            constraints.push(HalfSpace {
                normal: n.into_iter().map(TimeFn::Constant).collect(),
                offset: TimeFn::Constant(rng.gen_range(0.5..1.5)),
            });
        }
    }
    let extra = rng.gen_range(1..=2 * k);
    for _ in 0..extra {
        let n = unit_vector(rng, k);
        constraints.push(HalfSpace {
            normal: n.into_iter().map(TimeFn::Constant).collect(),
            offset: TimeFn::Constant(rng.gen_range(0.3..1.2)),
        });
    }
    ConvexSetSpec::Polytope { constraints }
}

/// Random SPD form Q = A'A + 0.2 I with a random center.
pub fn ellipsoid_spec<R: Rng>(rng: &mut R, k: usize) -> ConvexSetSpec {
    let a: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut q = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            let mut s = 0.0;
            for (row, _) in a.iter().enumerate() {
                s += a[row][i] * a[row][j];
            }
            q[i][j] = s + if i == j { 0.2 } else { 0.0 };
        }
    }
    ConvexSetSpec::Ellipsoid {
        center: (0..k)
            .map(|_| TimeFn::Constant(rng.gen_range(-0.5..0.5)))
            .collect(),
        shape: q
            .into_iter()
            .map(|row| row.into_iter().map(TimeFn::Constant).collect())
            .collect(),
    }
}
