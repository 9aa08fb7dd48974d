use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use super::texture::{fbm, unit_hash};
use super::{Hit, SceneDescription, SurfaceKind, SurveyPlan};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::imaging::{ClassId, LabelImage, RgbImage};

/// One rendered survey image with its dense label raster and true pose.
#[derive(Debug, Clone)]
pub struct RenderedFrame {
    pub image_id: u32,
    pub rgb: RgbImage,
    pub labels: LabelImage,
    pub pose: Pose,
}

const SKY: [u8; 3] = [150, 180, 220];

fn sun() -> Vector3<f64> {
    Vector3::new(0.35, 0.25, 1.0).normalize()
}

fn tint(seed: u64, kind: i64, index: usize) -> [f64; 3] {
    std::array::from_fn(|ch| 0.85 + 0.3 * unit_hash(seed ^ 0x7417, kind, index as i64, ch as i64))
}

fn albedo(scene: &SceneDescription, hit: &Hit) -> [f64; 3] {
    let p = [hit.point.x, hit.point.y, hit.point.z];
    let seed = scene.seed;
    let mix = |a: [f64; 3], b: [f64; 3], t: f64| -> [f64; 3] { std::array::from_fn(|c| a[c] + (b[c] - a[c]) * t) };
    let scale = |a: [f64; 3], s: f64, t: [f64; 3]| -> [f64; 3] { std::array::from_fn(|c| a[c] * s * t[c]) };
    match hit.kind {
        SurfaceKind::Ground => {
            let patch = fbm(seed ^ 1, [p[0], p[1], 0.0], 9.0);
            let base = mix([120.0, 100.0, 72.0], [88.0, 118.0, 58.0], patch);
            scale(base, 0.45 + 1.1 * fbm(seed ^ 2, [p[0], p[1], 0.0], 2.0), [1.0; 3])
        }
        SurfaceKind::Marker(_) => [235.0, 35.0, 30.0],
        SurfaceKind::Trunk(k) => scale([95.0, 70.0, 48.0], 0.5 + fbm(seed ^ 3, p, 0.8), tint(seed, 1, k)),
        SurfaceKind::Canopy(k) => scale([48.0, 112.0, 44.0], 0.4 + 1.2 * fbm(seed ^ 4, p, 1.6), tint(seed, 2, k)),
        SurfaceKind::Bush(k) => scale([78.0, 128.0, 62.0], 0.45 + 1.1 * fbm(seed ^ 5, p, 1.2), tint(seed, 3, k)),
    }
}

fn shade(scene: &SceneDescription, hit: &Hit) -> [u8; 3] {
    let a = albedo(scene, hit);
    let lambert = 0.4 + 0.6 * hit.normal.dot(&sun()).max(0.0);
    std::array::from_fn(|c| (a[c] * lambert).round().clamp(0.0, 255.0) as u8)
}

/// Ray direction in world coordinates through pixel `(u, v)`.
pub fn pixel_ray(pose: &Pose, intr: &CameraIntrinsics, u: f64, v: f64) -> Vector3<f64> {
    let cam = Vector3::new((u - intr.cx) / intr.focal, (v - intr.cy) / intr.focal, 1.0);
    (pose.rotation.transpose() * cam).normalize()
}

/// Ray-cast one pinhole view, one ray through each pixel center.
pub fn render_frame(scene: &SceneDescription, image_id: u32, pose: &Pose, intr: &CameraIntrinsics) -> RenderedFrame {
    let (w, h) = (intr.width, intr.height);
    let origin: Point3<f64> = pose.center();
    let rows: Vec<(Vec<u8>, Vec<ClassId>)> = (0..h)
        .into_par_iter()
        .map(|v| {
            let mut rgb = Vec::with_capacity(3 * w);
            let mut lab = Vec::with_capacity(w);
            for u in 0..w {
                let dir = pixel_ray(pose, intr, u as f64, v as f64);
                match scene.cast_ray(&origin, &dir) {
                    Some(hit) => {
                        rgb.extend_from_slice(&shade(scene, &hit));
                        lab.push(SceneDescription::class_of(hit.kind));
                    }
                    None => {
                        rgb.extend_from_slice(&SKY);
                        lab.push(ClassId::UNLABELED);
                    }
                }
            }
            (rgb, lab)
        })
        .collect();
    let mut raw = Vec::with_capacity(3 * w * h);
    let mut classes = Vec::with_capacity(w * h);
    for (r, l) in rows {
        raw.extend(r);
        classes.extend(l);
    }
    RenderedFrame {
        image_id,
        rgb: RgbImage::from_raw(w, h, raw).expect("row sizes are consistent"),
        labels: LabelImage::from_classes(w, h, classes).expect("row sizes are consistent"),
        pose: *pose,
    }
}

/// Render every pose of a survey plan; image ids follow plan order.
pub fn render_survey(scene: &SceneDescription, plan: &SurveyPlan) -> Vec<RenderedFrame> {
    plan.poses.iter().enumerate().map(|(k, pose)| render_frame(scene, k as u32, pose, &plan.intrinsics)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project;
    use crate::scene::{generate_scene, SceneParams};
    use nalgebra::Point2;

    fn small_camera() -> CameraIntrinsics {
        CameraIntrinsics::centered(120.0, 160, 120).unwrap()
    }

    #[test]
    fn flat_empty_scene_renders_ground_everywhere() {
        let params = SceneParams {
            tree_count: 0,
            bush_count: 0,
            ground_amplitude: 0.0,
            extent: 100.0,
            ..SceneParams::default()
        };
        let scene = generate_scene(7, &params).unwrap();
        let f = render_frame(&scene, 0, &Pose::nadir(Point3::new(50.0, 50.0, 30.0)), &small_camera());
        assert!(f.labels.data().iter().all(|&c| c == ClassId::GROUND));
    }

    #[test]
    fn labels_agree_with_brute_force_hits() {
        let params = SceneParams { extent: 60.0, tree_count: 15, bush_count: 20, ..SceneParams::default() };
        let scene = generate_scene(5, &params).unwrap();
        let intr = small_camera();
        let pose = Pose::nadir(Point3::new(30.0, 30.0, 40.0));
        let f = render_frame(&scene, 3, &pose, &intr);
        assert_eq!(f.image_id, 3);
        for v in (0..intr.height).step_by(7) {
            for u in (0..intr.width).step_by(7) {
                let hit =
                    scene.cast_ray_brute_force(&pose.center(), &pixel_ray(&pose, &intr, u as f64, v as f64)).unwrap();
                assert_eq!(f.labels.get(u, v), SceneDescription::class_of(hit.kind));
                // the hit reprojects onto the pixel it was cast from
                let uv = project(&hit.point, &pose, &intr).unwrap();
                assert!((uv - Point2::new(u as f64, v as f64)).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let scene = generate_scene(2, &SceneParams { extent: 50.0, tree_count: 8, ..SceneParams::default() }).unwrap();
        let pose = Pose::nadir(Point3::new(25.0, 25.0, 35.0));
        let a = render_frame(&scene, 0, &pose, &small_camera());
        let b = render_frame(&scene, 0, &pose, &small_camera());
        assert_eq!(a.rgb, b.rgb);
        assert_eq!(a.labels, b.labels);
    }
}
