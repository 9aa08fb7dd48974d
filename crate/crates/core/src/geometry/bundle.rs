//! Levenberg-Marquardt bundle adjustment over camera poses and points.
//!
//! Cameras are parameterized by a left-multiplied rotation increment and a
//! translation increment (see [`Pose::perturbed`]). The normal equations are
//! reduced to the camera block with the Schur complement; the reduced system
//! is dense, which is fine for survey-sized problems (tens of cameras).

use nalgebra::{
    DMatrix, DVector, Matrix2x3, Matrix2x6, Matrix3, Matrix6, Matrix6x3, Point2, Point3, Vector2, Vector3, Vector6,
};
use rayon::prelude::*;

use super::camera::{project_with_jacobian, CameraIntrinsics, Pose};
use super::GeometryError;
use crate::reconstruct::Reconstruction;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BundleConfig {
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the cost by less than
    /// `tolerance * (1 + cost)`.
    pub tolerance: f64,
}

impl Default for BundleConfig {
    fn default() -> Self {
        Self { max_iterations: 50, tolerance: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BundleObservation {
    pub camera: usize,
    pub point: usize,
    pub uv: Point2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundleReport {
    pub iterations: usize,
    /// Sum of squared reprojection errors after each accepted step, starting
    /// with the initial cost.
    pub cost_history: Vec<f64>,
    pub converged: bool,
    pub observations: usize,
}

impl BundleReport {
    pub fn initial_cost(&self) -> f64 {
        self.cost_history[0]
    }

    pub fn final_cost(&self) -> f64 {
        *self.cost_history.last().unwrap()
    }

    pub fn final_rms_px(&self) -> f64 {
        if self.observations == 0 {
            0.0
        } else {
            (self.final_cost() / self.observations as f64).sqrt()
        }
    }
}

/// Flat bundle adjustment problem independent of the reconstruction types.
#[derive(Debug, Clone)]
pub struct BundleProblem {
    pub intrinsics: CameraIntrinsics,
    pub poses: Vec<Pose>,
    /// Cameras held constant (gauge).
    pub fixed: Vec<bool>,
    pub points: Vec<Point3<f64>>,
    pub observations: Vec<BundleObservation>,
}

struct Linearization {
    residual: Vector2<f64>,
    d_pose: Matrix2x6<f64>,
    d_point: Matrix2x3<f64>,
}

impl BundleProblem {
    pub fn cost(&self) -> f64 {
        cost_of(&self.intrinsics, &self.poses, &self.points, &self.observations)
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.observations
            .iter()
            .map(|o| {
                let j = project_with_jacobian(&self.points[o.point], &self.poses[o.camera], &self.intrinsics);
                (j.uv - o.uv).norm()
            })
            .collect()
    }

    fn linearize(&self) -> Vec<Linearization> {
        self.observations
            .par_iter()
            .map(|o| {
                let j = project_with_jacobian(&self.points[o.point], &self.poses[o.camera], &self.intrinsics);
                Linearization { residual: j.uv - o.uv, d_pose: j.d_pose, d_point: j.d_point }
            })
            .collect()
    }

    pub fn solve(&mut self, config: &BundleConfig) -> Result<BundleReport, GeometryError> {
        let n_obs = self.observations.len();
        let mut cam_var = vec![None; self.poses.len()];
        let mut nc = 0;
        for (c, slot) in cam_var.iter_mut().enumerate() {
            if !self.fixed.get(c).copied().unwrap_or(false) {
                *slot = Some(nc);
                nc += 1;
            }
        }
        let mut point_obs: Vec<Vec<usize>> = vec![Vec::new(); self.points.len()];
        for (k, o) in self.observations.iter().enumerate() {
            point_obs[o.point].push(k);
        }

        let mut cost = self.cost();
        if !cost.is_finite() {
            return Err(GeometryError::NumericalFailure { iteration: 0 });
        }
        let mut history = vec![cost];
        let mut lambda = 1e-4;
        let mut converged = false;
        let mut iterations = 0;

        while iterations < config.max_iterations {
            iterations += 1;
            let lin = self.linearize();
            let mut u = vec![Matrix6::<f64>::zeros(); nc];
            let mut gc = vec![Vector6::<f64>::zeros(); nc];
            let mut v = vec![Matrix3::<f64>::zeros(); self.points.len()];
            let mut gp = vec![Vector3::<f64>::zeros(); self.points.len()];
            let mut w = vec![Matrix6x3::<f64>::zeros(); n_obs];
            for (k, (o, l)) in self.observations.iter().zip(&lin).enumerate() {
                v[o.point] += l.d_point.transpose() * l.d_point;
                gp[o.point] += l.d_point.transpose() * l.residual;
                if let Some(c) = cam_var[o.camera] {
                    u[c] += l.d_pose.transpose() * l.d_pose;
                    gc[c] += l.d_pose.transpose() * l.residual;
                    w[k] = l.d_pose.transpose() * l.d_point;
                }
            }
            let gradient_max = gc.iter().map(|g| g.amax()).chain(gp.iter().map(|g| g.amax())).fold(0.0f64, f64::max);
            if gradient_max < 1e-14 {
                converged = true;
                break;
            }

            let mut accepted = false;
            while lambda < 1e16 {
                let Some((new_poses, new_points)) =
                    self.damped_step(lambda, &cam_var, nc, &u, &gc, &v, &gp, &w, &point_obs)
                else {
                    lambda *= 10.0;
                    continue;
                };
                let new_cost = cost_of(&self.intrinsics, &new_poses, &new_points, &self.observations);
                if !new_cost.is_finite() {
                    return Err(GeometryError::NumericalFailure { iteration: iterations });
                }
                if new_cost < cost {
                    let decrease = cost - new_cost;
                    self.poses = new_poses;
                    self.points = new_points;
                    cost = new_cost;
                    history.push(cost);
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    if decrease <= config.tolerance * (1.0 + cost) {
                        converged = true;
                    }
                    break;
                }
                lambda *= 10.0;
            }
            if !accepted {
                converged = true;
            }
            if converged {
                break;
            }
        }
        Ok(BundleReport { iterations, cost_history: history, converged, observations: n_obs })
    }

    #[allow(clippy::too_many_arguments)]
    fn damped_step(
        &self,
        lambda: f64,
        cam_var: &[Option<usize>],
        nc: usize,
        u: &[Matrix6<f64>],
        gc: &[Vector6<f64>],
        v: &[Matrix3<f64>],
        gp: &[Vector3<f64>],
        w: &[Matrix6x3<f64>],
        point_obs: &[Vec<usize>],
    ) -> Option<(Vec<Pose>, Vec<Point3<f64>>)> {
        let dim = 6 * nc;
        let mut s = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        for c in 0..nc {
            let mut block = u[c];
            for d in 0..6 {
                block[(d, d)] += lambda * u[c][(d, d)].max(1e-6);
            }
            s.fixed_view_mut::<6, 6>(6 * c, 6 * c).copy_from(&block);
            rhs.fixed_rows_mut::<6>(6 * c).copy_from(&(-gc[c]));
        }
        let mut v_inv = vec![Matrix3::<f64>::zeros(); v.len()];
        for (p, obs) in point_obs.iter().enumerate() {
            if obs.is_empty() {
                continue;
            }
            let mut vd = v[p];
            for d in 0..3 {
                vd[(d, d)] += lambda * v[p][(d, d)].max(1e-6);
            }
            v_inv[p] = vd.try_inverse()?;
            let cams: Vec<(usize, Matrix6x3<f64>)> =
                obs.iter().filter_map(|&k| cam_var[self.observations[k].camera].map(|c| (c, w[k]))).collect();
            for &(ca, wa) in &cams {
                let t = wa * v_inv[p];
                let mut r = rhs.fixed_rows_mut::<6>(6 * ca);
                r += t * gp[p];
                for &(cb, wb) in &cams {
                    let mut blk = s.fixed_view_mut::<6, 6>(6 * ca, 6 * cb);
                    blk -= t * wb.transpose();
                }
            }
        }
        let dc = if dim > 0 { s.cholesky()?.solve(&rhs) } else { DVector::zeros(0) };
        if dc.iter().any(|x| !x.is_finite()) {
            return None;
        }

        let mut poses = self.poses.clone();
        for (cam, slot) in cam_var.iter().enumerate() {
            if let Some(c) = slot {
                let step = dc.fixed_rows::<6>(6 * c);
                poses[cam] = self.poses[cam]
                    .perturbed(&Vector3::new(step[0], step[1], step[2]), &Vector3::new(step[3], step[4], step[5]));
            }
        }
        let mut points = self.points.clone();
        for (p, obs) in point_obs.iter().enumerate() {
            if obs.is_empty() {
                continue;
            }
            let mut b = -gp[p];
            for &k in obs {
                if let Some(c) = cam_var[self.observations[k].camera] {
                    b -= w[k].transpose() * dc.fixed_rows::<6>(6 * c);
                }
            }
            points[p] += v_inv[p] * b;
        }
        Some((poses, points))
    }
}

fn cost_of(intr: &CameraIntrinsics, poses: &[Pose], points: &[Point3<f64>], obs: &[BundleObservation]) -> f64 {
    let per_obs: Vec<f64> = obs
        .par_iter()
        .map(|o| {
            let pose = &poses[o.camera];
            let pc = pose.transform(&points[o.point]);
            if pc.z <= 0.0 {
                // behind the camera: penalize instead of wrapping through infinity
                return 1e12;
            }
            let u = intr.focal * pc.x / pc.z + intr.cx;
            let v = intr.focal * pc.y / pc.z + intr.cy;
            (u - o.uv.x).powi(2) + (v - o.uv.y).powi(2)
        })
        .collect();
    per_obs.iter().sum()
}

/// Joint refinement of all posed cameras and triangulated points of a
/// reconstruction. The reference camera (or the smallest image id) is held
/// fixed.
pub fn bundle_adjust(
    rec: &Reconstruction,
    config: &BundleConfig,
) -> Result<(Reconstruction, BundleReport), GeometryError> {
    let triangulated = rec.tracks.iter().filter(|t| t.point.is_some()).count();
    if rec.cameras.len() < 2 || triangulated == 0 {
        return Err(GeometryError::InvalidProblem(format!(
            ">= 2 posed cameras and >= 1 point, got {} cameras and {} points",
            rec.cameras.len(),
            triangulated
        )));
    }
    let image_ids: Vec<u32> = rec.cameras.keys().copied().collect();
    let gauge = rec.reference_image.filter(|id| rec.cameras.contains_key(id)).unwrap_or(image_ids[0]);
    let cam_index = |id: u32| image_ids.binary_search(&id).ok();

    let mut problem = BundleProblem {
        intrinsics: rec.intrinsics,
        poses: image_ids.iter().map(|id| rec.cameras[id]).collect(),
        fixed: image_ids.iter().map(|&id| id == gauge).collect(),
        points: Vec::with_capacity(triangulated),
        observations: Vec::new(),
    };
    let mut track_of_point = Vec::with_capacity(triangulated);
    for (t, track) in rec.tracks.iter().enumerate() {
        let Some(x) = track.point else { continue };
        let p = problem.points.len();
        problem.points.push(x);
        track_of_point.push(t);
        for o in &track.observations {
            if let Some(c) = cam_index(o.image) {
                problem.observations.push(BundleObservation { camera: c, point: p, uv: o.uv });
            }
        }
    }
    let report = problem.solve(config)?;
    let mut out = rec.clone();
    for (id, pose) in image_ids.iter().zip(&problem.poses) {
        out.cameras.insert(*id, pose.orthonormalized());
    }
    for (p, &t) in track_of_point.iter().enumerate() {
        out.tracks[t].point = Some(problem.points[p]);
    }
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::camera::project;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    pub(crate) fn synthetic_problem(seed: u64, noise_px: f64) -> (BundleProblem, Vec<Pose>, Vec<Point3<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let intr = CameraIntrinsics::centered(800.0, 800, 600).unwrap();
        let poses: Vec<Pose> =
            (0..5).map(|k| Pose::nadir(Point3::new(12.0 * (k % 3) as f64, 18.0 * (k / 3) as f64, 100.0))).collect();
        let points: Vec<Point3<f64>> = (0..150)
            .map(|_| {
                Point3::new(rng.random_range(-10.0..35.0), rng.random_range(-10.0..30.0), rng.random_range(0.0..20.0))
            })
            .collect();
        let noise = Normal::new(0.0, noise_px.max(1e-300)).unwrap();
        let mut observations = Vec::new();
        for (p, x) in points.iter().enumerate() {
            for (c, pose) in poses.iter().enumerate() {
                let uv = project(x, pose, &intr).unwrap();
                if intr.contains(&uv) {
                    let jitter = if noise_px > 0.0 {
                        Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng))
                    } else {
                        Vector2::zeros()
                    };
                    observations.push(BundleObservation { camera: c, point: p, uv: uv + jitter });
                }
            }
        }
        let mut fixed = vec![false; poses.len()];
        fixed[0] = true;
        let problem =
            BundleProblem { intrinsics: intr, poses: poses.clone(), fixed, points: points.clone(), observations };
        (problem, poses, points)
    }

    #[test]
    fn optimal_problem_is_a_fixed_point() {
        let (mut problem, _, _) = synthetic_problem(1, 0.0);
        let report = problem.solve(&BundleConfig::default()).unwrap();
        assert!(report.iterations <= 2, "{report:?}");
        assert!((report.initial_cost() - report.final_cost()).abs() < 1e-8);
    }

    #[test]
    fn noisy_problem_reaches_noise_floor_monotonically() {
        let (mut problem, _, _) = synthetic_problem(2, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for pose in problem.poses.iter_mut().skip(1) {
            *pose = pose.perturbed(
                &Vector3::new(
                    rng.random_range(-0.01..0.01),
                    rng.random_range(-0.01..0.01),
                    rng.random_range(-0.01..0.01),
                ),
                &Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)),
            );
        }
        for p in problem.points.iter_mut() {
            *p += Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
        }
        let report = problem.solve(&BundleConfig::default()).unwrap();
        assert!(report.cost_history.windows(2).all(|w| w[1] <= w[0]));
        assert!(report.final_rms_px() < 0.5, "rms {}", report.final_rms_px());
        assert!(report.final_cost() < report.initial_cost());
    }

    #[test]
    fn fixed_camera_does_not_move() {
        let (mut problem, truth, _) = synthetic_problem(3, 0.3);
        problem.solve(&BundleConfig::default()).unwrap();
        assert_eq!(problem.poses[0], truth[0]);
    }

    #[test]
    fn non_finite_input_is_reported() {
        let (mut problem, _, _) = synthetic_problem(4, 0.0);
        problem.points[0] = Point3::new(f64::NAN, 0.0, 0.0);
        assert_eq!(problem.solve(&BundleConfig::default()), Err(GeometryError::NumericalFailure { iteration: 0 }));
    }
}
