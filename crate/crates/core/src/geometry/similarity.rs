//! Closed-form least-squares similarity (Umeyama) and georeferencing of a
//! reconstruction through ground control points.

use nalgebra::{Matrix3, Point3, Vector3};

use super::camera::Pose;
use super::triangulation::{triangulate, TriangulationParams};
use super::GeometryError;
use crate::reconstruct::{Frame, Reconstruction};
use crate::scene::GroundControlPoint;

/// `x -> scale * R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn identity() -> Self {
        Self { scale: 1.0, rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.scale * (self.rotation * p.coords) + self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { scale: 1.0 / self.scale, rotation: rt, translation: -(rt * self.translation) / self.scale }
    }

    /// World-to-camera pose expressed in the transformed frame. The camera
    /// frame is rescaled with the world, which leaves projections unchanged.
    pub fn apply_to_pose(&self, pose: &Pose) -> Pose {
        let rotation = pose.rotation * self.rotation.transpose();
        let translation = self.scale * pose.translation - rotation * self.translation;
        Pose::new(rotation, translation)
    }
}

/// Least-squares similarity mapping `src` onto `dst`. `None` when fewer
/// than three points or when either set is (numerically) collinear.
pub fn umeyama(src: &[Point3<f64>], dst: &[Point3<f64>]) -> Option<Similarity> {
    let n = src.len();
    if n < 3 || dst.len() != n {
        return None;
    }
    let nf = n as f64;
    let ms = src.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / nf;
    let md = dst.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / nf;
    let mut cov = Matrix3::zeros();
    let mut scatter_s = Matrix3::zeros();
    let mut scatter_d = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let (a, b) = (s.coords - ms, d.coords - md);
        cov += b * a.transpose();
        scatter_s += a * a.transpose();
        scatter_d += b * b.transpose();
        var_s += a.norm_squared();
    }
    cov /= nf;
    var_s /= nf;
    let rank2 = |m: &Matrix3<f64>| {
        let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev[0] > 0.0 && ev[1] > 1e-10 * ev[0]
    };
    if !rank2(&scatter_s) || !rank2(&scatter_d) {
        return None;
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let mut signs = Vector3::new(1.0, 1.0, 1.0);
    if u.determinant() * v_t.determinant() < 0.0 {
        signs[svd.singular_values.imin()] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&signs) * v_t;
    let scale = svd.singular_values.component_mul(&signs).sum() / var_s;
    let translation = md - scale * (rotation * ms);
    Some(Similarity { scale, rotation, translation })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcpResidual {
    pub id: u32,
    /// Distance between the aligned triangulated GCP and its surveyed position, meters.
    pub residual_m: f64,
    pub views: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcpAlignment {
    pub similarity: Similarity,
    pub residuals: Vec<GcpResidual>,
}

impl GcpAlignment {
    pub fn mean_residual_m(&self) -> f64 {
        if self.residuals.is_empty() {
            return 0.0;
        }
        self.residuals.iter().map(|r| r.residual_m).sum::<f64>() / self.residuals.len() as f64
    }
}

/// Triangulate every GCP seen by at least two posed cameras, fit the
/// similarity to the surveyed positions and apply it to the reconstruction.
pub fn align_to_gcps(
    rec: &Reconstruction,
    gcps: &[GroundControlPoint],
    params: &TriangulationParams,
) -> Result<(Reconstruction, GcpAlignment), GeometryError> {
    let mut src = Vec::new();
    let mut dst = Vec::new();
    let mut used = Vec::new();
    for gcp in gcps {
        let views: Vec<_> =
            gcp.observations.iter().filter_map(|(image, uv)| rec.cameras.get(image).map(|pose| (*uv, *pose))).collect();
        if views.len() < 2 {
            continue;
        }
        if let Ok(x) = triangulate(&views, &rec.intrinsics, params) {
            src.push(x);
            dst.push(gcp.world);
            used.push((gcp.id, views.len()));
        }
    }
    if src.len() < 3 {
        return Err(GeometryError::AlignmentFailed(format!("{} usable GCPs, need 3", src.len())));
    }
    let similarity =
        umeyama(&src, &dst).ok_or_else(|| GeometryError::AlignmentFailed("collinear GCP configuration".into()))?;

    let mut out = rec.clone();
    for pose in out.cameras.values_mut() {
        *pose = similarity.apply_to_pose(pose);
    }
    for track in &mut out.tracks {
        if let Some(x) = track.point.as_mut() {
            *x = similarity.apply(x);
        }
    }
    out.frame = Frame::GcpAligned;
    let residuals = src
        .iter()
        .zip(&dst)
        .zip(&used)
        .map(|((s, d), &(id, views))| GcpResidual { id, residual_m: (similarity.apply(s) - d).norm(), views })
        .collect();
    Ok((out, GcpAlignment { similarity, residuals }))
}
