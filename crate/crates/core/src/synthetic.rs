//! Exact-correspondence fixtures: scene surface points projected through
//! known poses, each with a descriptor unique to its point. Used to exercise
//! the reconstruction stages without detector noise, and to inject controlled
//! descriptor mismatches.

use nalgebra::{Point2, Point3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::features::Feature;
use crate::geometry::{project, CameraIntrinsics, Pose};
use crate::imaging::ClassId;
use crate::scene::{pixel_ray, SceneDescription};

const DESCRIPTOR_DIM: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkParams {
    /// Surface points sampled per frame.
    pub per_frame: usize,
    /// Standard deviation of pixel noise added to every observation.
    pub pixel_noise: f64,
    /// Fraction of observations whose descriptor is swapped for that of
    /// another landmark. Labels stay those of the true surface.
    pub contamination: f64,
    pub seed: u64,
}

impl Default for LandmarkParams {
    fn default() -> Self {
        Self { per_frame: 300, pixel_noise: 0.0, contamination: 0.0, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    pub position: Point3<f64>,
    pub class: ClassId,
}

#[derive(Debug, Clone)]
pub struct Correspondences {
    pub landmarks: Vec<Landmark>,
    /// Per image: features whose `index` is their position in the list.
    pub features: Vec<(u32, Vec<Feature>)>,
    /// Per image, parallel to `features`: the landmark each feature images.
    pub truth: Vec<Vec<usize>>,
    /// Per image, parallel to `features`: the landmark whose descriptor the
    /// feature carries (differs from `truth` for contaminated features).
    pub descriptor_of: Vec<Vec<usize>>,
}

fn descriptor(seed: u64, landmark: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (landmark as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let v: Vec<f32> = (0..DESCRIPTOR_DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn visible(scene: &SceneDescription, pose: &Pose, p: &Point3<f64>) -> bool {
    let c = pose.center();
    let d = p - c;
    let dist = d.norm();
    scene.cast_ray(&c, &(d / dist)).is_some_and(|h| (h.t - dist).abs() < 1e-6 * dist + 1e-6)
}

/// Sample visible surface points from every frame and observe each in every
/// frame that sees it.
pub fn landmark_correspondences(
    scene: &SceneDescription,
    frames: &[(u32, Pose)],
    intr: &CameraIntrinsics,
    params: &LandmarkParams,
) -> Correspondences {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut landmarks = Vec::new();
    for (_, pose) in frames {
        for _ in 0..params.per_frame {
            let u = rng.random_range(0.0..intr.width as f64 - 1.0);
            let v = rng.random_range(0.0..intr.height as f64 - 1.0);
            if let Some(hit) = scene.cast_ray(&pose.center(), &pixel_ray(pose, intr, u, v)) {
                landmarks.push(Landmark { position: hit.point, class: SceneDescription::class_of(hit.kind) });
            }
        }
    }
    let noise = Normal::new(0.0, params.pixel_noise.max(0.0)).expect("finite sigma");
    let mut features = Vec::with_capacity(frames.len());
    let mut truth = Vec::with_capacity(frames.len());
    let mut descriptor_of = Vec::with_capacity(frames.len());
    for (id, pose) in frames {
        let mut feats = Vec::new();
        let mut seen = Vec::new();
        for (k, l) in landmarks.iter().enumerate() {
            let Some(uv) = project(&l.position, pose, intr) else { continue };
            if !intr.contains(&uv) || !visible(scene, pose, &l.position) {
                continue;
            }
            let uv = if params.pixel_noise > 0.0 {
                Point2::new(uv.x + noise.sample(&mut rng), uv.y + noise.sample(&mut rng))
            } else {
                uv
            };
            seen.push(k);
            feats.push(Feature {
                index: feats.len(),
                pixel: uv,
                descriptor: Vec::new(),
                label: l.class,
                response: 1.0,
            });
        }
        let mut desc: Vec<usize> = seen.clone();
        let swaps = (params.contamination.clamp(0.0, 1.0) * seen.len() as f64).round() as usize;
        let mut slots: Vec<usize> = (0..seen.len()).collect();
        slots.shuffle(&mut rng);
        for &s in slots.iter().take(swaps) {
            let mut other = rng.random_range(0..landmarks.len());
            if other == seen[s] {
                other = (other + 1) % landmarks.len();
            }
            desc[s] = other;
        }
        for (f, &d) in feats.iter_mut().zip(&desc) {
            f.descriptor = descriptor(params.seed, d);
        }
        features.push((*id, feats));
        truth.push(seen);
        descriptor_of.push(desc);
    }
    Correspondences { landmarks, features, truth, descriptor_of }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::match_pair;
    use crate::scene::{generate_scene, SceneParams};

    #[test]
    fn clean_matches_are_true_correspondences() {
        let params = SceneParams { extent: 60.0, tree_count: 8, bush_count: 8, ..SceneParams::default() };
        let scene = generate_scene(2, &params).unwrap();
        let intr = CameraIntrinsics::centered(300.0, 160, 120).unwrap();
        let frames =
            vec![(0, Pose::nadir(Point3::new(28.0, 30.0, 40.0))), (1, Pose::nadir(Point3::new(32.0, 30.0, 40.0)))];
        let c =
            landmark_correspondences(&scene, &frames, &intr, &LandmarkParams { per_frame: 100, ..Default::default() });
        let ms = match_pair(0, &c.features[0].1, 1, &c.features[1].1, 0.8);
        assert!(ms.len() > 100);
        for m in &ms.matches {
            assert_eq!(c.truth[0][m.i], c.truth[1][m.j]);
        }
        for (k, f) in c.features[0].1.iter().enumerate() {
            let l = &c.landmarks[c.truth[0][k]];
            assert!((project(&l.position, &frames[0].1, &intr).unwrap() - f.pixel).norm() < 1e-9);
            assert_eq!(f.label, l.class);
        }
    }

    #[test]
    fn contamination_swaps_requested_share() {
        let scene =
            generate_scene(2, &SceneParams { extent: 60.0, tree_count: 8, bush_count: 8, ..SceneParams::default() })
                .unwrap();
        let intr = CameraIntrinsics::centered(300.0, 160, 120).unwrap();
        let frames = vec![(0, Pose::nadir(Point3::new(30.0, 30.0, 40.0)))];
        let c = landmark_correspondences(
            &scene,
            &frames,
            &intr,
            &LandmarkParams { per_frame: 200, contamination: 0.3, ..Default::default() },
        );
        let n = c.truth[0].len();
        let swapped = c.truth[0].iter().zip(&c.descriptor_of[0]).filter(|(a, b)| a != b).count();
        assert_eq!(swapped, (0.3 * n as f64).round() as usize);
    }
}
