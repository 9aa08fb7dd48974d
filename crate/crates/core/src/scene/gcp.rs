use nalgebra::{Point2, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GcpMarker, SceneDescription, SceneError, SurfaceKind};
use crate::geometry::{project, CameraIntrinsics, Pose};

/// Marker disk radius, meters.
pub const GCP_RADIUS: f64 = 0.6;
const MIN_SEPARATION: f64 = 6.0;
const EDGE_MARGIN: f64 = 5.0;

/// A surveyed ground point and the pixels where it is visible.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundControlPoint {
    pub id: u32,
    pub world: Point3<f64>,
    /// `(image id, pixel)`, sorted by image id.
    pub observations: Vec<(u32, Point2<f64>)>,
}

fn open_sky_above(scene: &SceneDescription, x: f64, y: f64) -> bool {
    let top = scene.max_height() + 10.0;
    let down = -Vector3::z();
    let hits_ground = |x: f64, y: f64| matches!(scene.cast_ray(&Point3::new(x, y, top), &down), Some(h) if h.kind == SurfaceKind::Ground);
    if !hits_ground(x, y) {
        return false;
    }
    let r = GCP_RADIUS + 0.3;
    (0..8).all(|k| {
        let a = k as f64 * std::f64::consts::FRAC_PI_4;
        hits_ground(x + r * a.cos(), y + r * a.sin())
    })
}

/// Sample `count` GCP positions on ground that is open to the sky, with a
/// minimum spacing between markers. Fails if the scene does not have enough
/// open ground.
pub fn place_gcps(scene: &SceneDescription, count: usize, seed: u64) -> Result<Vec<GroundControlPoint>, SceneError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c70_6763);
    let (lo, hi) = (EDGE_MARGIN.min(scene.extent / 2.0), (scene.extent - EDGE_MARGIN).max(scene.extent / 2.0));
    let mut out: Vec<GroundControlPoint> = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count && attempts < 2000 * count.max(1) {
        attempts += 1;
        let x = rng.random_range(lo..=hi);
        let y = rng.random_range(lo..=hi);
        if out.iter().any(|g| (g.world.x - x).powi(2) + (g.world.y - y).powi(2) < MIN_SEPARATION * MIN_SEPARATION) {
            continue;
        }
        if !open_sky_above(scene, x, y) {
            continue;
        }
        out.push(GroundControlPoint {
            id: out.len() as u32,
            world: Point3::new(x, y, scene.ground.height(x, y)),
            observations: Vec::new(),
        });
    }
    if out.len() < count {
        return Err(SceneError::GcpPlacement { placed: out.len(), requested: count });
    }
    Ok(out)
}

impl SceneDescription {
    /// Paint a red marker disk under each GCP.
    pub fn with_gcps(self, gcps: &[GroundControlPoint]) -> Self {
        let markers = gcps.iter().map(|g| GcpMarker { id: g.id, center: g.world, radius: GCP_RADIUS }).collect();
        self.with_markers(markers)
    }
}

/// Record the exact projection of each GCP into every view where it lands
/// inside the image and is not hidden behind vegetation.
pub fn observe_gcps(
    gcps: &mut [GroundControlPoint],
    scene: &SceneDescription,
    views: &[(u32, Pose)],
    intr: &CameraIntrinsics,
) {
    for g in gcps.iter_mut() {
        g.observations.clear();
        for (id, pose) in views {
            let Some(uv) = project(&g.world, pose, intr) else { continue };
            if !intr.contains(&uv) {
                continue;
            }
            let c = pose.center();
            let dir = (g.world - c).normalize();
            let visible = scene.cast_ray(&c, &dir).is_some_and(|h| (h.point - g.world).norm() < 1e-3);
            if visible {
                g.observations.push((*id, uv));
            }
        }
        g.observations.sort_by_key(|o| o.0);
    }
}
