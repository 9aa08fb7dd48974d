//! Procedural labeled forest scenes, nadir survey planning, a CPU ray-cast
//! renderer producing RGB + label frames, ground control points, and the
//! on-disk dataset layout.

mod dataset;
mod gcp;
mod raycast;
mod render;
mod survey;
mod synth;
mod texture;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::imaging::ClassId;

pub use dataset::{
    export_dataset, image_name, load_dataset, load_ground_truth_poses, parse_camera, parse_gcp_list, parse_poses,
    poses_to_text, Dataset, DatasetFrame, GcpRow, GCP_HEADER,
};
pub use gcp::{observe_gcps, place_gcps, GroundControlPoint, GCP_RADIUS};
pub use raycast::{Hit, SurfaceKind};
pub use render::{pixel_ray, render_frame, render_survey, RenderedFrame};
pub use survey::{plan_survey, SurveyPlan};
pub use synth::{synthesize_survey, SurveySpec, SyntheticSurvey};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene parameter: {0}")]
    InvalidParameter(String),
    #[error("could only place {placed} of {requested} GCPs on open ground")]
    GcpPlacement { placed: usize, requested: usize },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
    #[error(transparent)]
    Image(#[from] crate::imaging::ImageError),
}

/// Closed interval used for primitive size ranges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    fn check(&self, name: &str) -> Result<(), SceneError> {
        if !(self.min > 0.0 && self.max >= self.min && self.max.is_finite()) {
            return Err(SceneError::InvalidParameter(format!(
                "{name} range [{}, {}] must be positive",
                self.min, self.max
            )));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.max > self.min {
            rng.random_range(self.min..=self.max)
        } else {
            self.min
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    /// Side of the square scene `[0, extent]^2`, meters.
    pub extent: f64,
    pub tree_count: usize,
    pub bush_count: usize,
    pub trunk_radius: Range,
    pub trunk_height: Range,
    pub canopy_radius: Range,
    pub canopy_half_height: Range,
    pub bush_radius: Range,
    /// Peak deviation of the ground from its mean, meters. Zero is flat.
    pub ground_amplitude: f64,
    /// Heightfield node spacing, meters.
    pub ground_spacing: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            extent: 165.0,
            tree_count: 60,
            bush_count: 90,
            trunk_radius: Range::new(0.25, 0.5),
            trunk_height: Range::new(8.0, 16.0),
            canopy_radius: Range::new(2.5, 5.0),
            canopy_half_height: Range::new(2.0, 4.5),
            bush_radius: Range::new(0.6, 1.5),
            ground_amplitude: 1.5,
            ground_spacing: 5.0,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return Err(SceneError::InvalidParameter(format!("extent must be positive, got {}", self.extent)));
        }
        if !(self.ground_spacing > 0.0) {
            return Err(SceneError::InvalidParameter("ground spacing must be positive".into()));
        }
        if !(self.ground_amplitude >= 0.0) {
            return Err(SceneError::InvalidParameter("ground amplitude must be non-negative".into()));
        }
        self.trunk_radius.check("trunk radius")?;
        self.trunk_height.check("trunk height")?;
        self.canopy_radius.check("canopy radius")?;
        self.canopy_half_height.check("canopy half height")?;
        self.bush_radius.check("bush radius")?;
        let widest = self.canopy_radius.max.max(self.bush_radius.max);
        if self.tree_count + self.bush_count > 0 && 2.0 * widest >= self.extent {
            return Err(SceneError::InvalidParameter("primitives do not fit inside the extent".into()));
        }
        Ok(())
    }
}

/// Ground elevation on a regular grid, bilinearly interpolated and clamped
/// beyond the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Heightfield {
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
    pub heights: Vec<f64>,
    pub min: f64,
    pub max: f64,
}

impl Heightfield {
    pub fn flat(extent: f64, spacing: f64) -> Self {
        let n = (extent / spacing).ceil() as usize + 1;
        Self { spacing, nx: n, ny: n, heights: vec![0.0; n * n], min: 0.0, max: 0.0 }
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        let fx = (x / self.spacing).clamp(0.0, (self.nx - 1) as f64);
        let fy = (y / self.spacing).clamp(0.0, (self.ny - 1) as f64);
        let x0 = (fx.floor() as usize).min(self.nx.saturating_sub(2));
        let y0 = (fy.floor() as usize).min(self.ny.saturating_sub(2));
        let x1 = (x0 + 1).min(self.nx - 1);
        let y1 = (y0 + 1).min(self.ny - 1);
        let tx = fx - x0 as f64;
        let ty = fy - y0 as f64;
        let h = |i: usize, j: usize| self.heights[j * self.nx + i];
        let top = h(x0, y0) * (1.0 - tx) + h(x1, y0) * tx;
        let bottom = h(x0, y1) * (1.0 - tx) + h(x1, y1) * tx;
        top * (1.0 - ty) + bottom * ty
    }

    /// Surface normal from central differences of the interpolant.
    pub fn normal(&self, x: f64, y: f64) -> Vector3<f64> {
        let e = 0.05;
        let dx = (self.height(x + e, y) - self.height(x - e, y)) / (2.0 * e);
        let dy = (self.height(x, y + e) - self.height(x, y - e)) / (2.0 * e);
        Vector3::new(-dx, -dy, 1.0).normalize()
    }
}

/// Vertical cylinder from `base_z` to `top_z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trunk {
    pub center_x: f64,
    pub center_y: f64,
    pub radius: f64,
    pub base_z: f64,
    pub top_z: f64,
}

/// Axis-aligned ellipsoid with equal horizontal semi-axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Canopy {
    pub center: Point3<f64>,
    pub semi_axes: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tree {
    pub trunk: Trunk,
    pub canopy: Canopy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bush {
    pub center: Point3<f64>,
    pub radius: f64,
}

/// Flat red disk lying on the ground.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcpMarker {
    pub id: u32,
    pub center: Point3<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneDescription {
    pub seed: u64,
    pub extent: f64,
    pub ground: Heightfield,
    pub trees: Vec<Tree>,
    pub bushes: Vec<Bush>,
    pub markers: Vec<GcpMarker>,
    index: raycast::PrimitiveGrid,
}

impl SceneDescription {
    /// Rebuild with new GCP markers.
    pub fn with_markers(mut self, markers: Vec<GcpMarker>) -> Self {
        self.markers = markers;
        self
    }

    /// Highest point of any surface in the scene.
    pub fn max_height(&self) -> f64 {
        let trees = self.trees.iter().map(|t| t.canopy.center.z + t.canopy.semi_axes.z);
        let bushes = self.bushes.iter().map(|b| b.center.z + b.radius);
        trees.chain(bushes).fold(self.ground.max, f64::max)
    }

    pub fn mean_ground_height(&self) -> f64 {
        self.ground.heights.iter().sum::<f64>() / self.ground.heights.len() as f64
    }

    /// Class of each primitive, by the primitive kind.
    pub fn class_of(kind: SurfaceKind) -> ClassId {
        match kind {
            SurfaceKind::Ground => ClassId::GROUND,
            SurfaceKind::Marker(_) => ClassId::GCP_MARKER,
            SurfaceKind::Trunk(_) => ClassId::TRUNK,
            SurfaceKind::Canopy(_) => ClassId::CANOPY,
            SurfaceKind::Bush(_) => ClassId::UNDERSTOREY,
        }
    }

    /// Nearest positive-depth hit along a ray, using the spatial index.
    pub fn cast_ray(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        raycast::cast(self, origin, dir, true)
    }

    /// Same as [`Self::cast_ray`] but testing every primitive.
    pub fn cast_ray_brute_force(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        raycast::cast(self, origin, dir, false)
    }

    /// Classes of every surface within `tolerance` of the closest surface to
    /// `p` (distance-based ground truth for reconstructed points).
    pub fn surface_classes_near(&self, p: &Point3<f64>, tolerance: f64) -> Vec<ClassId> {
        raycast::surface_classes_near(self, p, tolerance)
    }
}

fn ground_heights(rng: &mut ChaCha8Rng, params: &SceneParams) -> Heightfield {
    let mut field = Heightfield::flat(params.extent, params.ground_spacing);
    if params.ground_amplitude == 0.0 {
        return field;
    }
    // a few long-wavelength undulations
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|k| {
            let wavelength = params.extent / (1.0 + k as f64 + rng.random_range(0.0..1.0));
            (
                wavelength,
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
                1.0 / (1.0 + k as f64),
            )
        })
        .collect();
    let norm: f64 = waves.iter().map(|w| w.3).sum();
    for j in 0..field.ny {
        for i in 0..field.nx {
            let (x, y) = (i as f64 * field.spacing, j as f64 * field.spacing);
            let h: f64 = waves
                .iter()
                .map(|&(l, px, py, a)| {
                    a * (std::f64::consts::TAU * x / l + px).sin() * (std::f64::consts::TAU * y / l + py).cos()
                })
                .sum();
            field.heights[j * field.nx + i] = params.ground_amplitude * h / norm;
        }
    }
    let mean = field.heights.iter().sum::<f64>() / field.heights.len() as f64;
    field.heights.iter_mut().for_each(|h| *h -= mean);
    field.min = field.heights.iter().copied().fold(f64::INFINITY, f64::min);
    field.max = field.heights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    field
}

/// Deterministic forest scene for `(seed, params)`.
pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<SceneDescription, SceneError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ground = ground_heights(&mut rng, params);
    let e = params.extent;

    let mut trees = Vec::with_capacity(params.tree_count);
    for _ in 0..params.tree_count {
        let radius = params.canopy_radius.sample(&mut rng);
        let half_height = params.canopy_half_height.sample(&mut rng);
        let cx = rng.random_range(radius..=e - radius);
        let cy = rng.random_range(radius..=e - radius);
        let height = params.trunk_height.sample(&mut rng);
        let trunk_radius = params.trunk_radius.sample(&mut rng).min(0.5 * radius);
        let base = ground.height(cx, cy);
        let trunk =
            Trunk { center_x: cx, center_y: cy, radius: trunk_radius, base_z: base - 0.5, top_z: base + height };
        let canopy =
            Canopy { center: Point3::new(cx, cy, base + height), semi_axes: Vector3::new(radius, radius, half_height) };
        trees.push(Tree { trunk, canopy });
    }
    let mut bushes = Vec::with_capacity(params.bush_count);
    for _ in 0..params.bush_count {
        let r = params.bush_radius.sample(&mut rng);
        let x = rng.random_range(r..=e - r);
        let y = rng.random_range(r..=e - r);
        // partially sunk into the ground
        let z = ground.height(x, y) + 0.3 * r;
        bushes.push(Bush { center: Point3::new(x, y, z), radius: r });
    }
    let mut scene = SceneDescription {
        seed,
        extent: e,
        ground,
        trees,
        bushes,
        markers: Vec::new(),
        index: raycast::PrimitiveGrid::default(),
    };
    scene.index = raycast::PrimitiveGrid::build(&scene);
    Ok(scene)
}
