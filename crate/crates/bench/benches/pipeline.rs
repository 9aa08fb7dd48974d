use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use semantic_sfm::features::{match_pair, semantic_filter, MIN_INLIER_FRACTION};
use semantic_sfm::geometry::{relative_pose_from_points, RansacParams};
use semantic_sfm::io::{decode_ply, encode_ply, PlyCloud, PlyEncoding};
use semantic_sfm::semantics::{confidence_histogram, point_label};
use semantic_sfm_bench::{descriptor_sets, intrinsics, labeled_cloud, match_set, two_view, vote_sequences};

fn semantics(c: &mut Criterion) {
    let (ms, fi, fj) = match_set(500, 0.6, 1);
    c.bench_function("semantic_filter/500", |b| {
        b.iter(|| semantic_filter(black_box(&ms), &fi, &fj, MIN_INLIER_FRACTION))
    });

    let votes = vote_sequences(1000, 12, 2);
    c.bench_function("point_label/1000x12", |b| {
        b.iter(|| votes.iter().map(|v| point_label(black_box(v)).unwrap().0 as usize).sum::<usize>())
    });

    let cloud = labeled_cloud(100_000, 3);
    c.bench_function("confidence_histogram/100k", |b| b.iter(|| confidence_histogram(black_box(&cloud), 10)));
}

fn matching(c: &mut Criterion) {
    let (a, b) = descriptor_sets(1000, 32, 4);
    c.bench_function("match_pair/1000x1000", |bench| bench.iter(|| match_pair(0, black_box(&a), 1, &b, 0.8)));
}

fn geometry(c: &mut Criterion) {
    let (a, b) = two_view(500, 0.3, 5);
    let k = intrinsics();
    let params = RansacParams::default();
    c.bench_function("relative_pose/500_30pct_outliers", |bench| {
        bench.iter(|| relative_pose_from_points(black_box(&a), &b, &k, &params).unwrap())
    });
}

fn ply(c: &mut Criterion) {
    let cloud = PlyCloud::new(labeled_cloud(100_000, 6), vec!["bench".into()]);
    let bytes = encode_ply(&cloud, PlyEncoding::BinaryLittleEndian);
    c.bench_function("ply_encode/100k", |b| b.iter(|| encode_ply(black_box(&cloud), PlyEncoding::BinaryLittleEndian)));
    c.bench_function("ply_decode/100k", |b| {
        b.iter_batched(|| bytes.clone(), |bytes| decode_ply(&bytes).unwrap(), BatchSize::LargeInput)
    });
}

criterion_group!(benches, semantics, matching, geometry, ply);
criterion_main!(benches);
