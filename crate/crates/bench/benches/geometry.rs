use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tracklab_core::geometry::random::{ball_spec, box_spec, ellipsoid_spec, polytope_spec};
use tracklab_core::{
    cone_member_spacetime, ConvexFamily, ConvexSetSpec, RealizedSet, SpaceTimeTrack, TimeFn,
};

const FIBER_DIM: usize = 3;
const N_POINTS: usize = 64;

fn realized(spec: ConvexSetSpec) -> RealizedSet {
    ConvexFamily::new(spec, [0.0, 1.0])
        .unwrap()
        .realize(0.5)
        .unwrap()
}

fn representations(rng: &mut ChaCha8Rng) -> Vec<(&'static str, RealizedSet)> {
    vec![
        ("ball", realized(ball_spec(rng, FIBER_DIM))),
        ("box", realized(box_spec(rng, FIBER_DIM))),
        ("polytope", realized(polytope_spec(rng, FIBER_DIM))),
        ("ellipsoid", realized(ellipsoid_spec(rng, FIBER_DIM))),
    ]
}

/// Points strictly outside the set, drawn from its inflated bounding box.
fn exterior_points(rng: &mut ChaCha8Rng, set: &RealizedSet) -> Vec<Vec<f64>> {
    let (lo, hi) = set.bounding_box();
    let pad = set.diameter();
    let mut points = Vec::with_capacity(N_POINTS);
    while points.len() < N_POINTS {
        let p: Vec<f64> = lo
            .iter()
            .zip(&hi)
            .map(|(&l, &h)| rng.gen_range(l - pad..h + pad))
            .collect();
        if set.support_gap(&p).unwrap() > 1e-6 {
            points.push(p);
        }
    }
    points
}

fn bench_distance(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut group = c.benchmark_group("distance");
    for (name, set) in representations(&mut rng) {
        let points = exterior_points(&mut rng, &set);
        group.bench_with_input(BenchmarkId::from_parameter(name), &points, |b, points| {
            let mut i = 0;
            b.iter(|| {
                let p = &points[i % points.len()];
                i += 1;
                black_box(set.distance(black_box(p)).unwrap())
            });
        });
    }
    group.finish();
}

fn bench_projection(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut group = c.benchmark_group("projection");
    for (name, set) in representations(&mut rng) {
        let points = exterior_points(&mut rng, &set);
        group.bench_with_input(BenchmarkId::from_parameter(name), &points, |b, points| {
            let mut i = 0;
            b.iter(|| {
                let p = &points[i % points.len()];
                i += 1;
                black_box(set.project(black_box(p)).unwrap())
            });
        });
    }
    group.finish();
}

fn bench_support_gap(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let set = realized(polytope_spec(&mut rng, FIBER_DIM));
    let points = exterior_points(&mut rng, &set);
    c.bench_function("support_gap/polytope", |b| {
        let mut i = 0;
        b.iter(|| {
            let p = &points[i % points.len()];
            i += 1;
            black_box(set.support_gap(black_box(p)).unwrap())
        });
    });
}

fn bench_cone_probe(c: &mut Criterion) {
    // Full dyadic schedule from a boundary point with an inward drift.
    let spec = ConvexSetSpec::Ball {
        center: vec![TimeFn::Constant(0.0), TimeFn::Constant(0.0)],
        radius: TimeFn::Constant(1.0),
    };
    let family = ConvexFamily::new(spec, [0.0, 1.0]).unwrap();
    let track = SpaceTimeTrack::new(family, None).unwrap();
    let v = vec![1.0, 0.0];
    let w = vec![-0.5, 0.2];
    c.bench_function("cone_probe/ball", |b| {
        b.iter(|| {
            black_box(cone_member_spacetime(&track, black_box(&v), 0.3, black_box(&w)).unwrap())
        })
    });
}

criterion_group!(
    benches,
    bench_distance,
    bench_projection,
    bench_support_gap,
    bench_cone_probe
);
criterion_main!(benches);
