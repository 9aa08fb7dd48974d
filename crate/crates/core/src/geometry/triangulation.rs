//! Multi-view linear (DLT) triangulation with a short Gauss-Newton polish and
//! parallax / cheirality / reprojection gates.

use nalgebra::{DMatrix, Matrix3, Point2, Point3, Vector2, Vector3};

use super::camera::{project_with_jacobian, CameraIntrinsics, Pose};
use super::GeometryError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangulationParams {
    /// Maximum reprojection error over all views, pixels.
    pub max_reproj_px: f64,
    /// Minimum of the largest pairwise ray angle at the point, degrees.
    pub min_parallax_deg: f64,
}

impl Default for TriangulationParams {
    fn default() -> Self {
        Self { max_reproj_px: 4.0, min_parallax_deg: 1.0 }
    }
}

/// Homogeneous DLT on normalized image coordinates.
pub(crate) fn dlt_normalized(views: &[(Vector2<f64>, &Pose)]) -> Option<Point3<f64>> {
    if views.len() < 2 {
        return None;
    }
    let mut a = DMatrix::<f64>::zeros(2 * views.len(), 4);
    for (k, (x, pose)) in views.iter().enumerate() {
        let r = &pose.rotation;
        let t = &pose.translation;
        let p = |i: usize| [r[(i, 0)], r[(i, 1)], r[(i, 2)], t[i]];
        let (p0, p1, p2) = (p(0), p(1), p(2));
        for (row, (coef, pr)) in [(x.x, p0), (x.y, p1)].into_iter().enumerate() {
            let vals: [f64; 4] = std::array::from_fn(|c| coef * p2[c] - pr[c]);
            let norm = vals.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
            for c in 0..4 {
                a[(2 * k + row, c)] = vals[c] / norm;
            }
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let k = svd.singular_values.imin();
    let h = v_t.row(k);
    if h[3].abs() < 1e-12 * h.norm() {
        return None;
    }
    let x = Point3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]);
    x.coords.iter().all(|c| c.is_finite()).then_some(x)
}

/// Largest angle (radians) subtended at `x` by any two camera centers.
pub fn max_parallax(x: &Point3<f64>, poses: &[&Pose]) -> f64 {
    let rays: Vec<Vector3<f64>> = poses.iter().map(|p| (p.center() - x).normalize()).collect();
    let mut best = 0.0f64;
    for a in 0..rays.len() {
        for b in a + 1..rays.len() {
            best = best.max(rays[a].dot(&rays[b]).clamp(-1.0, 1.0).acos());
        }
    }
    best
}

fn reproj_cost(x: &Point3<f64>, views: &[(Point2<f64>, Pose)], intr: &CameraIntrinsics) -> f64 {
    views
        .iter()
        .map(|(uv, pose)| {
            let j = project_with_jacobian(x, pose, intr);
            (j.uv - uv).norm_squared()
        })
        .sum()
}

fn refine(mut x: Point3<f64>, views: &[(Point2<f64>, Pose)], intr: &CameraIntrinsics) -> Point3<f64> {
    let mut cost = reproj_cost(&x, views, intr);
    for _ in 0..10 {
        let mut h = Matrix3::zeros();
        let mut g = Vector3::zeros();
        for (uv, pose) in views {
            let j = project_with_jacobian(&x, pose, intr);
            if j.depth <= 0.0 {
                return x;
            }
            let r = j.uv - uv;
            h += j.d_point.transpose() * j.d_point;
            g += j.d_point.transpose() * r;
        }
        let Some(step) = h.cholesky().map(|c| c.solve(&(-g))) else { break };
        let cand = x + step;
        let c = reproj_cost(&cand, views, intr);
        if !(c < cost) {
            break;
        }
        let done = cost - c <= 1e-12 * cost.max(1e-300);
        x = cand;
        cost = c;
        if done {
            break;
        }
    }
    x
}

/// Triangulate one point from `(pixel, pose)` pairs.
pub fn triangulate(
    views: &[(Point2<f64>, Pose)],
    intr: &CameraIntrinsics,
    params: &TriangulationParams,
) -> Result<Point3<f64>, GeometryError> {
    if views.len() < 2 {
        return Err(GeometryError::TooFewCorrespondences { need: 2, got: views.len() });
    }
    let normalized: Vec<_> = views.iter().map(|(uv, pose)| (intr.normalize(uv), pose)).collect();
    let x = dlt_normalized(&normalized).ok_or(GeometryError::LowParallax { degrees: 0.0 })?;
    let poses: Vec<&Pose> = views.iter().map(|(_, p)| p).collect();
    let parallax = max_parallax(&x, &poses).to_degrees();
    if !(parallax >= params.min_parallax_deg) {
        return Err(GeometryError::LowParallax { degrees: parallax });
    }
    if views.iter().any(|(_, pose)| pose.transform(&x).z <= 0.0) {
        return Err(GeometryError::BehindCamera);
    }
    let x = refine(x, views, intr);
    let mut max_err = 0.0f64;
    for (uv, pose) in views {
        if pose.transform(&x).z <= 0.0 {
            return Err(GeometryError::BehindCamera);
        }
        let j = project_with_jacobian(&x, pose, intr);
        max_err = max_err.max((j.uv - uv).norm());
    }
    if max_err > params.max_reproj_px {
        return Err(GeometryError::ReprojectionGate { max_px: max_err });
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::camera::project;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::centered(800.0, 800, 600).unwrap()
    }

    fn views_of(x: &Point3<f64>, centers: &[Point3<f64>]) -> Vec<(Point2<f64>, Pose)> {
        centers
            .iter()
            .map(|c| {
                let pose = Pose::nadir(*c);
                (project(x, &pose, &intr()).unwrap(), pose)
            })
            .collect()
    }

    #[test]
    fn two_noise_free_views_recover_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let x =
                Point3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(0.0..25.0));
            let views = views_of(&x, &[Point3::new(0.0, 0.0, 100.0), Point3::new(15.0, 3.0, 100.0)]);
            let est = triangulate(&views, &intr(), &TriangulationParams::default()).unwrap();
            assert!((est - x).norm() / x.coords.norm().max(1.0) < 1e-6);
            for (uv, pose) in &views {
                assert!((project(&est, pose, &intr()).unwrap() - uv).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn identical_poses_are_low_parallax() {
        let x = Point3::new(1.0, 2.0, 3.0);
        let c = Point3::new(0.0, 0.0, 100.0);
        let views = views_of(&x, &[c, c]);
        assert!(matches!(
            triangulate(&views, &intr(), &TriangulationParams::default()),
            Err(GeometryError::LowParallax { .. })
        ));
    }

    #[test]
    fn gross_outlier_trips_reprojection_gate() {
        let x = Point3::new(3.0, -4.0, 10.0);
        let centers: Vec<_> = (0..5).map(|k| Point3::new(8.0 * k as f64, (k % 2) as f64 * 10.0, 100.0)).collect();
        let mut views = views_of(&x, &centers);
        assert!(triangulate(&views, &intr(), &TriangulationParams::default()).is_ok());
        views[2].0.x += 50.0;
        assert!(matches!(
            triangulate(&views, &intr(), &TriangulationParams::default()),
            Err(GeometryError::ReprojectionGate { .. })
        ));
    }

    #[test]
    fn single_view_is_rejected() {
        let views = views_of(&Point3::origin(), &[Point3::new(0.0, 0.0, 10.0)]);
        assert!(matches!(
            triangulate(&views, &intr(), &TriangulationParams::default()),
            Err(GeometryError::TooFewCorrespondences { .. })
        ));
    }
}
