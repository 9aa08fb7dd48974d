use nalgebra::Point3;
use rayon::prelude::*;

use super::Reconstruction;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams {
    /// Tracks whose worst reprojection exceeds this are removed, pixels.
    pub max_reproj_px: f64,
    pub knn: usize,
    /// Statistical cutoff is `mean + std_multiplier * std` of the per-point
    /// mean neighbour distance.
    pub std_multiplier: f64,
    /// Repeat the statistical stage until it removes nothing.
    pub until_stable: bool,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self { max_reproj_px: 4.0, knn: 8, std_multiplier: 2.0, until_stable: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterReport {
    pub removed_reprojection: usize,
    pub removed_statistical: usize,
    /// Set when there were too few points for the neighbour statistics.
    pub statistical_skipped: bool,
}

/// Mean distance from each point to its `k` nearest other points. Sweeps
/// along x from each point and stops once the x gap alone exceeds the
/// current k-th best.
pub fn mean_knn_distances(points: &[Point3<f64>], k: usize) -> Vec<f64> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].x.total_cmp(&points[b].x).then(a.cmp(&b)));
    let xs: Vec<f64> = order.iter().map(|&i| points[i].x).collect();
    let mut rank = vec![0; points.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            let p = points[i];
            let mut best: Vec<f64> = Vec::with_capacity(k + 1);
            let consider = |best: &mut Vec<f64>, j: usize| {
                let d2 = (points[j] - p).norm_squared();
                if best.len() < k || d2 < best[k - 1] {
                    let pos = best.partition_point(|&b| b <= d2);
                    best.insert(pos, d2);
                    best.truncate(k);
                }
            };
            let r = rank[i];
            let (mut lo, mut hi) = (r, r + 1);
            loop {
                let bound = if best.len() < k { f64::INFINITY } else { best[k - 1] };
                let left_ok = lo > 0 && (p.x - xs[lo - 1]).powi(2) <= bound;
                let right_ok = hi < xs.len() && (xs[hi] - p.x).powi(2) <= bound;
                if !left_ok && !right_ok {
                    break;
                }
                if left_ok {
                    lo -= 1;
                    consider(&mut best, order[lo]);
                }
                if right_ok {
                    consider(&mut best, order[hi]);
                    hi += 1;
                }
            }
            best.iter().map(|d| d.sqrt()).sum::<f64>() / best.len().max(1) as f64
        })
        .collect()
}

/// Flags points whose mean neighbour distance exceeds the global cutoff.
/// `None` when there are fewer than `k + 1` points.
pub fn statistical_outliers(points: &[Point3<f64>], k: usize, std_multiplier: f64) -> Option<Vec<bool>> {
    if k == 0 || points.len() < k + 1 {
        return None;
    }
    let d = mean_knn_distances(points, k);
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let std = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let cutoff = mean + std_multiplier * std;
    Some(d.iter().map(|&x| x > cutoff).collect())
}

/// Remove tracks with a large reprojection error, then statistical
/// outliers. Remaining tracks, cameras and every other field are untouched.
pub fn filter_points(rec: &Reconstruction, params: &FilterParams) -> (Reconstruction, FilterReport) {
    let mut report = FilterReport::default();
    let mut out = rec.clone();
    out.tracks.retain(|t| {
        if t.point.is_none() {
            return true;
        }
        let keep = rec.track_errors(t).iter().all(|&e| e <= params.max_reproj_px);
        if !keep {
            report.removed_reprojection += 1;
        }
        keep
    });
    loop {
        let idx: Vec<usize> =
            out.tracks.iter().enumerate().filter(|(_, t)| t.point.is_some()).map(|(k, _)| k).collect();
        let pts: Vec<Point3<f64>> = idx.iter().map(|&k| out.tracks[k].point.unwrap()).collect();
        let Some(flags) = statistical_outliers(&pts, params.knn, params.std_multiplier) else {
            log::warn!("{} points, need at least {} for outlier statistics; skipping", pts.len(), params.knn + 1);
            report.statistical_skipped = true;
            break;
        };
        let removed = flags.iter().filter(|&&f| f).count();
        if removed == 0 {
            break;
        }
        let mut drop = vec![false; out.tracks.len()];
        for (&k, &f) in idx.iter().zip(&flags) {
            drop[k] = f;
        }
        let mut it = drop.iter();
        out.tracks.retain(|_| !*it.next().unwrap());
        report.removed_statistical += removed;
        if !params.until_stable {
            break;
        }
    }
    (out, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, Observation, Pose};
    use crate::imaging::ClassId;
    use crate::reconstruct::Track;
    use nalgebra::Point2;
    use proptest::prelude::*;

    fn cloud(points: Vec<Point3<f64>>) -> Reconstruction {
        let intr = CameraIntrinsics::centered(800.0, 800, 600).unwrap();
        let mut rec = Reconstruction::new(intr);
        let pose = Pose::nadir(Point3::new(0.0, 0.0, 1000.0));
        rec.cameras.insert(0, pose);
        rec.tracks = points
            .into_iter()
            .enumerate()
            .map(|(k, p)| {
                let uv = crate::geometry::project(&p, &pose, &intr).unwrap_or(Point2::origin());
                Track {
                    id: k as u32,
                    observations: vec![Observation { image: 0, uv, label: ClassId::GROUND }],
                    point: Some(p),
                }
            })
            .collect();
        rec
    }

    fn brute_knn(points: &[Point3<f64>], k: usize) -> Vec<f64> {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut d: Vec<f64> =
                    points.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, q)| (q - p).norm()).collect();
                d.sort_by(f64::total_cmp);
                d[..k].iter().sum::<f64>() / k as f64
            })
            .collect()
    }

    #[test]
    fn lattice_outlier_is_the_only_removal() {
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                for k in 0..10 {
                    pts.push(Point3::new(i as f64, j as f64, k as f64));
                }
            }
        }
        pts.push(Point3::new(104.5, 4.5, 4.5));
        let (out, report) = filter_points(&cloud(pts.clone()), &FilterParams::default());
        assert_eq!(report.removed_statistical, 1);
        assert_eq!(report.removed_reprojection, 0);
        assert_eq!(out.tracks.len(), 1000);
        assert!(out.tracks.iter().all(|t| t.id != 1000));
    }

    #[test]
    fn too_few_points_skips_statistics() {
        let pts: Vec<_> = (0..5).map(|k| Point3::new(k as f64, 0.0, 0.0)).collect();
        let (out, report) = filter_points(&cloud(pts), &FilterParams::default());
        assert!(report.statistical_skipped);
        assert_eq!(out.tracks.len(), 5);
    }

    #[test]
    fn large_reprojection_error_removed() {
        let pts: Vec<_> = (0..3).map(|k| Point3::new(k as f64, 0.0, 0.0)).collect();
        let mut rec = cloud(pts);
        rec.tracks[1].observations[0].uv.x += 10.0;
        let (out, report) = filter_points(&rec, &FilterParams::default());
        assert_eq!(report.removed_reprojection, 1);
        assert_eq!(out.tracks.iter().map(|t| t.id).collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn sweep_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<_> = (0..400)
            .map(|_| Point3::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0), rng.random_range(0.0..1.0)))
            .collect();
        let a = mean_knn_distances(&pts, 8);
        let b = brute_knn(&pts, 8);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn monotone_and_stable_filter_is_idempotent(
            raw in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0, -5.0f64..5.0), 0..120)
        ) {
            let pts: Vec<_> = raw.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect();
            let rec = cloud(pts);
            let params = FilterParams { until_stable: true, ..FilterParams::default() };
            let (once, _) = filter_points(&rec, &params);
            let ids: Vec<u32> = rec.tracks.iter().map(|t| t.id).collect();
            prop_assert!(once.tracks.iter().all(|t| ids.contains(&t.id)));
            let (twice, _) = filter_points(&once, &params);
            prop_assert_eq!(once, twice);
        }
    }
}
