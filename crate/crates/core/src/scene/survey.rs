use nalgebra::Point3;

use super::{SceneDescription, SceneError};
use crate::geometry::{CameraIntrinsics, Pose};

/// Serpentine grid of nadir poses. Flight lines run along world +y, which
/// is the image v axis of a nadir camera; lines are stepped along x.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyPlan {
    pub altitude: f64,
    pub overlap_forward: f64,
    pub overlap_side: f64,
    pub intrinsics: CameraIntrinsics,
    /// Ground footprint along and across track, meters.
    pub footprint_forward: f64,
    pub footprint_side: f64,
    pub spacing_forward: f64,
    pub spacing_side: f64,
    pub lines: usize,
    pub per_line: usize,
    pub poses: Vec<Pose>,
}

fn axis_positions(extent: f64, footprint: f64, spacing: f64) -> Vec<f64> {
    let n = if extent <= footprint { 1 } else { ((extent - footprint) / spacing - 1e-9).ceil() as usize + 1 };
    let span = (n - 1) as f64 * spacing;
    let start = 0.5 * extent - 0.5 * span;
    (0..n).map(|k| start + k as f64 * spacing).collect()
}

/// Lay out a nadir survey over the scene at `altitude` meters above the mean
/// ground so that consecutive footprints overlap by the requested fractions
/// and the union of footprints covers the scene extent.
pub fn plan_survey(
    scene: &SceneDescription,
    altitude: f64,
    overlap_forward: f64,
    overlap_side: f64,
    intrinsics: &CameraIntrinsics,
) -> Result<SurveyPlan, SceneError> {
    intrinsics.validate().map_err(|e| SceneError::InvalidParameter(e.to_string()))?;
    for (name, o) in [("forward overlap", overlap_forward), ("side overlap", overlap_side)] {
        if !(0.0..1.0).contains(&o) {
            return Err(SceneError::InvalidParameter(format!("{name} must lie in [0, 1), got {o}")));
        }
    }
    let z = scene.mean_ground_height() + altitude;
    if !(altitude > 0.0) || z <= scene.max_height() {
        return Err(SceneError::InvalidParameter(format!(
            "altitude {altitude} m does not clear the tallest surface at {:.2} m",
            scene.max_height()
        )));
    }
    let footprint_forward = intrinsics.height as f64 * altitude / intrinsics.focal;
    let footprint_side = intrinsics.width as f64 * altitude / intrinsics.focal;
    let spacing_forward = footprint_forward * (1.0 - overlap_forward);
    let spacing_side = footprint_side * (1.0 - overlap_side);
    let xs = axis_positions(scene.extent, footprint_side, spacing_side);
    let ys = axis_positions(scene.extent, footprint_forward, spacing_forward);

    let mut poses = Vec::with_capacity(xs.len() * ys.len());
    for (line, &x) in xs.iter().enumerate() {
        let along: Box<dyn Iterator<Item = &f64>> =
            if line % 2 == 0 { Box::new(ys.iter()) } else { Box::new(ys.iter().rev()) };
        for &y in along {
            poses.push(Pose::nadir(Point3::new(x, y, z)));
        }
    }
    Ok(SurveyPlan {
        altitude,
        overlap_forward,
        overlap_side,
        intrinsics: *intrinsics,
        footprint_forward,
        footprint_side,
        spacing_forward,
        spacing_side,
        lines: xs.len(),
        per_line: ys.len(),
        poses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, SceneParams};

    fn camera() -> CameraIntrinsics {
        CameraIntrinsics::centered(800.0, 800, 600).unwrap()
    }

    #[test]
    fn default_survey_has_expected_grid() {
        let scene = generate_scene(1, &SceneParams::default()).unwrap();
        let plan = plan_survey(&scene, 100.0, 0.85, 0.80, &camera()).unwrap();
        assert!((plan.footprint_forward - 75.0).abs() < 1e-12);
        assert!((plan.footprint_side - 100.0).abs() < 1e-12);
        assert!((plan.spacing_forward - 11.25).abs() < 1e-9);
        assert!((plan.spacing_side - 20.0).abs() < 1e-9);
        assert_eq!((plan.lines, plan.per_line), (5, 9));
        assert!(plan.poses.len() >= 40);
    }

    #[test]
    fn consecutive_overlap_and_coverage() {
        let scene = generate_scene(1, &SceneParams::default()).unwrap();
        let plan = plan_survey(&scene, 100.0, 0.85, 0.80, &camera()).unwrap();
        let c: Vec<_> = plan.poses.iter().map(|p| p.center()).collect();
        for k in 1..plan.per_line {
            let d = (c[k].y - c[k - 1].y).abs();
            assert!((1.0 - d / plan.footprint_forward - 0.85).abs() < 1e-9);
        }
        let d = (c[plan.per_line].x - c[0].x).abs();
        assert!((1.0 - d / plan.footprint_side - 0.80).abs() < 1e-9);
        let xmin = c.iter().map(|p| p.x).fold(f64::INFINITY, f64::min) - plan.footprint_side / 2.0;
        let xmax = c.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max) + plan.footprint_side / 2.0;
        let ymin = c.iter().map(|p| p.y).fold(f64::INFINITY, f64::min) - plan.footprint_forward / 2.0;
        let ymax = c.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max) + plan.footprint_forward / 2.0;
        assert!(xmin <= 0.0 && ymin <= 0.0 && xmax >= scene.extent && ymax >= scene.extent);
        for p in &plan.poses {
            assert!(p.orthonormality_residual() < 1e-12);
        }
    }

    #[test]
    fn zero_overlap_abuts_and_low_altitude_fails() {
        let scene = generate_scene(1, &SceneParams::default()).unwrap();
        let plan = plan_survey(&scene, 100.0, 0.0, 0.0, &camera()).unwrap();
        assert!((plan.spacing_forward - plan.footprint_forward).abs() < 1e-12);
        assert!(plan_survey(&scene, 5.0, 0.85, 0.8, &camera()).is_err());
        assert!(plan_survey(&scene, 100.0, 1.0, 0.8, &camera()).is_err());
    }

    #[test]
    fn small_scene_single_image() {
        let scene =
            generate_scene(1, &SceneParams { extent: 40.0, tree_count: 2, bush_count: 0, ..SceneParams::default() })
                .unwrap();
        let plan = plan_survey(&scene, 100.0, 0.5, 0.5, &camera()).unwrap();
        assert_eq!(plan.poses.len(), 1);
        assert!((plan.poses[0].center().x - 20.0).abs() < 1e-12);
    }
}
