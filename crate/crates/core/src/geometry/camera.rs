use nalgebra::{Matrix2x3, Matrix2x6, Matrix3, Point2, Point3, Rotation3, Vector2, Vector3};

use super::GeometryError;
use crate::imaging::ClassId;

/// Pinhole intrinsics without distortion. Pixel centers are at integer
/// coordinates, so a centered principal point is `((w - 1) / 2, (h - 1) / 2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(focal: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self, GeometryError> {
        let intr = Self { focal, cx, cy, width, height };
        intr.validate()?;
        Ok(intr)
    }

    pub fn centered(focal: f64, width: usize, height: usize) -> Result<Self, GeometryError> {
        Self::new(focal, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.focal.is_finite() && self.focal > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!("focal must be positive, got {}", self.focal)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidIntrinsics("image size must be non-zero".into()));
        }
        let inside = |c: f64, n: usize| c.is_finite() && c >= -0.5 && c <= n as f64 - 0.5;
        if !inside(self.cx, self.width) || !inside(self.cy, self.height) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.focal, 0.0, self.cx, 0.0, self.focal, self.cy, 0.0, 0.0, 1.0)
    }

    /// Pixel to normalized image plane coordinates.
    pub fn normalize(&self, uv: &Point2<f64>) -> Vector2<f64> {
        Vector2::new((uv.x - self.cx) / self.focal, (uv.y - self.cy) / self.focal)
    }

    pub fn denormalize(&self, xy: &Vector2<f64>) -> Point2<f64> {
        Point2::new(self.focal * xy.x + self.cx, self.focal * xy.y + self.cy)
    }

    /// Whether a pixel coordinate falls on the raster (pixel footprints included).
    pub fn contains(&self, uv: &Point2<f64>) -> bool {
        uv.x >= -0.5 && uv.y >= -0.5 && uv.x < self.width as f64 - 0.5 && uv.y < self.height as f64 - 0.5
    }
}

/// Rigid world-to-camera transform: `x_cam = R * x_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Camera at `center` looking straight down. Image `u` runs along world
    /// +x and image `v` along world -y.
    pub fn nadir(center: Point3<f64>) -> Self {
        let rotation = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        Self::from_center(rotation, center)
    }

    pub fn from_center(rotation: Matrix3<f64>, center: Point3<f64>) -> Self {
        Self { rotation, translation: -(rotation * center.coords) }
    }

    pub fn center(&self) -> Point3<f64> {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }

    pub fn transform(&self, p: &Point3<f64>) -> Vector3<f64> {
        self.rotation * p.coords + self.translation
    }

    /// `self * other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Left-multiplied update: `R <- exp(omega) R`, `t <- t + dt`.
    pub fn perturbed(&self, omega: &Vector3<f64>, dt: &Vector3<f64>) -> Pose {
        let dr = Rotation3::new(*omega).into_inner();
        Pose { rotation: dr * self.rotation, translation: self.translation + dt }
    }

    /// Max absolute entry of `R Rᵀ - I`.
    pub fn orthonormality_residual(&self) -> f64 {
        (self.rotation * self.rotation.transpose() - Matrix3::identity()).abs().max()
    }

    /// Re-orthonormalize the rotation through its SVD.
    pub fn orthonormalized(&self) -> Pose {
        Pose { rotation: nearest_rotation(&self.rotation), translation: self.translation }
    }

    /// Direction of the optical axis in world coordinates.
    pub fn optical_axis(&self) -> Vector3<f64> {
        self.rotation.transpose() * Vector3::z()
    }
}

pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * vt;
    }
    r
}

/// Angle in radians of the relative rotation `a * bᵀ`.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let r = a * b.transpose();
    ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// A detection or reprojection of a 3D point in one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub image: u32,
    pub uv: Point2<f64>,
    pub label: ClassId,
}

/// Pinhole projection. `None` when the point is not in front of the camera.
pub fn project(point: &Point3<f64>, pose: &Pose, intr: &CameraIntrinsics) -> Option<Point2<f64>> {
    let pc = pose.transform(point);
    if pc.z <= 0.0 {
        return None;
    }
    Some(Point2::new(intr.focal * pc.x / pc.z + intr.cx, intr.focal * pc.y / pc.z + intr.cy))
}

/// Projection with Jacobians with respect to the pose update
/// `(omega, dt)` of [`Pose::perturbed`] and the world point.
pub(crate) struct ProjectionJacobian {
    pub uv: Point2<f64>,
    pub depth: f64,
    pub d_pose: Matrix2x6<f64>,
    pub d_point: Matrix2x3<f64>,
}

pub(crate) fn project_with_jacobian(point: &Point3<f64>, pose: &Pose, intr: &CameraIntrinsics) -> ProjectionJacobian {
    let rx = pose.rotation * point.coords;
    let pc = rx + pose.translation;
    let (x, y, z) = (pc.x, pc.y, pc.z);
    let f = intr.focal;
    let iz = 1.0 / z;
    let d_pc = Matrix2x3::new(f * iz, 0.0, -f * x * iz * iz, 0.0, f * iz, -f * y * iz * iz);
    // d(exp(w) R X)/dw at w = 0 is -[R X]x
    let skew = Matrix3::new(0.0, -rx.z, rx.y, rx.z, 0.0, -rx.x, -rx.y, rx.x, 0.0);
    let d_omega = d_pc * (-skew);
    let mut d_pose = Matrix2x6::zeros();
    d_pose.fixed_view_mut::<2, 3>(0, 0).copy_from(&d_omega);
    d_pose.fixed_view_mut::<2, 3>(0, 3).copy_from(&d_pc);
    let d_point = d_pc * pose.rotation;
    ProjectionJacobian { uv: Point2::new(f * x * iz + intr.cx, f * y * iz + intr.cy), depth: z, d_pose, d_point }
}
