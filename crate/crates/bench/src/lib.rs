//! Seeded fixtures shared by the benchmarks.

use nalgebra::{Point2, Point3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semantic_sfm::features::{Feature, Match, MatchSet};
use semantic_sfm::geometry::{project, CameraIntrinsics, Pose};
use semantic_sfm::imaging::ClassId;
use semantic_sfm::semantics::LabeledPoint;

pub fn intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::centered(800.0, 800, 600).expect("valid intrinsics")
}

fn feature(index: usize, label: u8, dim: usize, rng: &mut ChaCha8Rng) -> Feature {
    Feature {
        index,
        pixel: Point2::new(rng.random_range(0.0..800.0), rng.random_range(0.0..600.0)),
        descriptor: (0..dim).map(|_| rng.random_range(-1.0..1.0f32)).collect(),
        label: ClassId(label),
        response: 1.0,
    }
}

/// `n` one-to-one matches over 6 classes, about `agree` of them label-equal.
pub fn match_set(n: usize, agree: f64, seed: u64) -> (MatchSet, Vec<Feature>, Vec<Feature>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fi = Vec::with_capacity(n);
    let mut fj = Vec::with_capacity(n);
    for k in 0..n {
        let a = rng.random_range(0..6u8);
        let b = if rng.random_bool(agree) { a } else { (a + rng.random_range(1..6u8)) % 6 };
        fi.push(feature(k, a, 0, &mut rng));
        fj.push(feature(k, b, 0, &mut rng));
    }
    let matches = (0..n).map(|k| Match { i: k, j: k, distance: 0.0 }).collect();
    (MatchSet::new(0, 1, matches), fi, fj)
}

/// Two images' worth of random descriptors, `n` features each.
pub fn descriptor_sets(n: usize, dim: usize, seed: u64) -> (Vec<Feature>, Vec<Feature>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<Feature> = (0..n).map(|k| feature(k, 1, dim, &mut rng)).collect();
    // half the second set are perturbed copies so the ratio test has work
    let b = (0..n)
        .map(|k| {
            let mut f = feature(k, 1, dim, &mut rng);
            if k % 2 == 0 {
                f.descriptor = a[k].descriptor.iter().map(|v| v + rng.random_range(-0.05..0.05f32)).collect();
            }
            f
        })
        .collect();
    (a, b)
}

/// Corresponding pixels of `n` points seen by two cameras, with a share of
/// the second view replaced by random pixels.
pub fn two_view(n: usize, outliers: f64, seed: u64) -> (Vec<Point2<f64>>, Vec<Point2<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = intrinsics();
    let second = Pose::new(Rotation3::new(Vector3::new(0.02, -0.03, 0.05)).into_inner(), Vector3::new(-1.0, 0.1, 0.05));
    let (mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n));
    while a.len() < n {
        let p = Point3::new(rng.random_range(-6.0..6.0), rng.random_range(-4.0..4.0), rng.random_range(8.0..14.0));
        let (Some(u), Some(v)) = (project(&p, &Pose::identity(), &k), project(&p, &second, &k)) else { continue };
        if !(k.contains(&u) && k.contains(&v)) {
            continue;
        }
        a.push(u);
        b.push(if rng.random_bool(outliers) {
            Point2::new(rng.random_range(0.0..800.0), rng.random_range(0.0..600.0))
        } else {
            v
        });
    }
    (a, b)
}

pub fn labeled_cloud(n: usize, seed: u64) -> Vec<LabeledPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let views = rng.random_range(1..=10usize);
            LabeledPoint {
                position: Point3::new(
                    rng.random_range(0.0..200.0),
                    rng.random_range(0.0..200.0),
                    rng.random_range(0.0..20.0),
                ),
                color: [rng.random(), rng.random(), rng.random()],
                label: ClassId(rng.random_range(0..6)),
                confidence: rng.random_range(1..=views) as f64 / views as f64,
                views,
                track_id: None,
            }
        })
        .collect()
}

/// Vote sequences of the given length over 5 classes.
pub fn vote_sequences(count: usize, len: usize, seed: u64) -> Vec<Vec<ClassId>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..len).map(|_| ClassId(rng.random_range(0..5))).collect()).collect()
}
