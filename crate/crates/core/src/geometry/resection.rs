//! Camera resection: 6-point DLT inside RANSAC, then Levenberg-Marquardt on
//! the reprojection error of the consensus set.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4, Matrix6, Point2, Point3, Vector2, Vector3, Vector4, Vector6};

use super::camera::{nearest_rotation, project_with_jacobian, CameraIntrinsics, Pose};
use super::ransac::{required_iterations, sample, RansacParams};
use super::GeometryError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResectionParams {
    pub ransac: RansacParams,
    pub lm_iterations: usize,
}

impl Default for ResectionParams {
    fn default() -> Self {
        Self {
            ransac: RansacParams { threshold_px: 4.0, min_inliers: 6, ..RansacParams::default() },
            lm_iterations: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resection {
    pub pose: Pose,
    pub inliers: Vec<bool>,
    pub inlier_count: usize,
    /// RMS reprojection error over the inliers, pixels.
    pub rms_px: f64,
}

/// Linear pose from >= 6 correspondences in normalized image coordinates.
pub(crate) fn dlt_pose(world: &[Point3<f64>], image: &[Vector2<f64>]) -> Option<Pose> {
    let n = world.len();
    if n < 6 {
        return None;
    }
    let c3 = world.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n as f64;
    let d3 = world.iter().map(|p| (p.coords - c3).norm()).sum::<f64>() / n as f64;
    let c2 = image.iter().fold(Vector2::zeros(), |a, p| a + p) / n as f64;
    let d2 = image.iter().map(|p| (p - c2).norm()).sum::<f64>() / n as f64;
    if d3 < 1e-300 || d2 < 1e-300 {
        return None;
    }
    let s3 = 3f64.sqrt() / d3;
    let s2 = 2f64.sqrt() / d2;
    let t3 =
        Matrix4::new(s3, 0.0, 0.0, -s3 * c3.x, 0.0, s3, 0.0, -s3 * c3.y, 0.0, 0.0, s3, -s3 * c3.z, 0.0, 0.0, 0.0, 1.0);
    let t2 = Matrix3::new(s2, 0.0, -s2 * c2.x, 0.0, s2, -s2 * c2.y, 0.0, 0.0, 1.0);

    let mut a = DMatrix::<f64>::zeros((2 * n).max(12), 12);
    for (k, (w, x)) in world.iter().zip(image).enumerate() {
        let xw = (w.coords - c3) * s3;
        let xh = Vector4::new(xw.x, xw.y, xw.z, 1.0);
        let xi = (x - c2) * s2;
        for c in 0..4 {
            a[(2 * k, 4 + c)] = -xh[c];
            a[(2 * k, 8 + c)] = xi.y * xh[c];
            a[(2 * k + 1, c)] = xh[c];
            a[(2 * k + 1, 8 + c)] = -xi.x * xh[c];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let mut order: Vec<usize> = (0..12).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let largest = svd.singular_values[order[0]];
    if !(largest > 0.0) || svd.singular_values[order[10]] < 1e-8 * largest {
        return None;
    }
    let h = v_t.row(order[11]);
    let ph = Matrix3x4::from_row_slice(&h.iter().copied().collect::<Vec<_>>());
    let mut p = t2.try_inverse()? * ph * t3;
    let mut m: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0).into_owned();
    if m.determinant() < 0.0 {
        p = -p;
        m = -m;
    }
    let sv = m.svd(false, false).singular_values;
    let scale = sv.mean();
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    let r = nearest_rotation(&m);
    let t: Vector3<f64> = p.column(3).into_owned() / scale;
    Some(Pose::new(r, t))
}

fn reprojection_errors(
    pose: &Pose,
    world: &[Point3<f64>],
    pixels: &[Point2<f64>],
    intr: &CameraIntrinsics,
) -> Vec<f64> {
    world
        .iter()
        .zip(pixels)
        .map(|(w, uv)| {
            let j = project_with_jacobian(w, pose, intr);
            if j.depth <= 0.0 {
                f64::INFINITY
            } else {
                (j.uv - uv).norm()
            }
        })
        .collect()
}

fn pose_cost(pose: &Pose, world: &[Point3<f64>], pixels: &[Point2<f64>], intr: &CameraIntrinsics) -> f64 {
    reprojection_errors(pose, world, pixels, intr).iter().map(|e| e * e).sum()
}

/// Levenberg-Marquardt over the 6 pose parameters.
pub(crate) fn refine_pose(
    mut pose: Pose,
    world: &[Point3<f64>],
    pixels: &[Point2<f64>],
    intr: &CameraIntrinsics,
    iterations: usize,
) -> Pose {
    let mut cost = pose_cost(&pose, world, pixels, intr);
    let mut lambda = 1e-3;
    for _ in 0..iterations {
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for (w, uv) in world.iter().zip(pixels) {
            let j = project_with_jacobian(w, &pose, intr);
            let r = j.uv - uv;
            h += j.d_pose.transpose() * j.d_pose;
            g += j.d_pose.transpose() * r;
        }
        let mut improved = false;
        for _ in 0..10 {
            let mut damped = h;
            for d in 0..6 {
                damped[(d, d)] += lambda * h[(d, d)].max(1e-9);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-g))) else {
                lambda *= 10.0;
                continue;
            };
            let cand = pose.perturbed(&step.fixed_rows::<3>(0).into_owned(), &step.fixed_rows::<3>(3).into_owned());
            let c = pose_cost(&cand, world, pixels, intr);
            if c < cost {
                let rel = (cost - c) / cost.max(1e-300);
                pose = cand;
                cost = c;
                lambda = (lambda / 10.0).max(1e-12);
                improved = rel > 1e-12;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    pose
}

/// Robust camera pose from 3D-2D correspondences.
pub fn resect(
    world: &[Point3<f64>],
    pixels: &[Point2<f64>],
    intr: &CameraIntrinsics,
    params: &ResectionParams,
) -> Result<Resection, GeometryError> {
    let n = world.len().min(pixels.len());
    let min_inliers = params.ransac.min_inliers.max(6);
    if n < 6 {
        return Err(GeometryError::TooFewCorrespondences { need: 6, got: n });
    }
    let world = &world[..n];
    let pixels = &pixels[..n];
    let normalized: Vec<_> = pixels.iter().map(|p| intr.normalize(p)).collect();
    let thr = params.ransac.threshold_px;

    let mut rng = params.ransac.rng();
    let mut best: Option<(Pose, usize)> = None;
    let mut budget = params.ransac.iterations;
    let mut iter = 0;
    let (mut sw, mut si) = (Vec::with_capacity(6), Vec::with_capacity(6));
    while iter < budget {
        iter += 1;
        sw.clear();
        si.clear();
        for k in sample(&mut rng, n, 6) {
            sw.push(world[k]);
            si.push(normalized[k]);
        }
        let Some(pose) = dlt_pose(&sw, &si) else { continue };
        let count = reprojection_errors(&pose, world, pixels, intr).iter().filter(|&&e| e < thr).count();
        if best.as_ref().is_none_or(|b| count > b.1) {
            best = Some((pose, count));
            budget = budget.min(required_iterations(count as f64 / n as f64, 6, params.ransac.confidence));
        }
    }
    let Some((mut pose, count)) = best else {
        return Err(GeometryError::ResectionFailed { inliers: 0 });
    };
    if count < min_inliers {
        return Err(GeometryError::ResectionFailed { inliers: count });
    }

    let select = |pose: &Pose| -> Vec<bool> {
        reprojection_errors(pose, world, pixels, intr).iter().map(|&e| e < thr).collect()
    };
    let mut mask = select(&pose);
    for _ in 0..3 {
        let (iw, ip): (Vec<_>, Vec<_>) =
            world.iter().zip(pixels).zip(&mask).filter(|(_, &m)| m).map(|((w, p), _)| (*w, *p)).unzip();
        if iw.len() < 6 {
            break;
        }
        pose = refine_pose(pose, &iw, &ip, intr, params.lm_iterations);
        let next = select(&pose);
        if next == mask {
            break;
        }
        mask = next;
    }
    let errors = reprojection_errors(&pose, world, pixels, intr);
    let inlier_count = mask.iter().filter(|&&m| m).count();
    if inlier_count < min_inliers {
        return Err(GeometryError::ResectionFailed { inliers: inlier_count });
    }
    let sq: f64 = errors.iter().zip(&mask).filter(|(_, &m)| m).map(|(e, _)| e * e).sum();
    Ok(Resection { pose, inliers: mask, inlier_count, rms_px: (sq / inlier_count as f64).sqrt() })
}
