use std::collections::BTreeMap;

use nalgebra::Point3;

use super::{ReconstructError, Track};
use crate::geometry::{project, CameraIntrinsics, Observation, Pose};
use crate::imaging::{label_at, LabelImage};

/// One line of a visibility file: `x y z n img_1 ... img_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityRow {
    pub line: usize,
    pub position: Point3<f64>,
    pub images: Vec<u32>,
}

pub fn parse_visibility(text: &str) -> Result<Vec<VisibilityRow>, ReconstructError> {
    let mut rows = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let bad = |reason: String| ReconstructError::Parse { line, reason };
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() < 4 {
            return Err(bad(format!("expected 'x y z n img_1 .. img_n', found {} fields", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad coordinate '{s}'")));
        let position = Point3::new(num(f[0])?, num(f[1])?, num(f[2])?);
        let n: usize = f[3].parse().map_err(|_| bad(format!("bad view count '{}'", f[3])))?;
        if f.len() != 4 + n {
            return Err(bad(format!("view count {n} but {} image ids", f.len() - 4)));
        }
        let images = f[4..]
            .iter()
            .map(|s| s.parse::<u32>().map_err(|_| bad(format!("bad image id '{s}'"))))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(VisibilityRow { line, position, images });
    }
    Ok(rows)
}

/// Turn an externally densified cloud into tracks: each point is projected
/// into its listed images and labeled from their rasters. Projections behind
/// a camera are left out; repeated image ids count once.
pub fn ingest_external_cloud(
    rows: &[VisibilityRow],
    poses: &BTreeMap<u32, Pose>,
    intr: &CameraIntrinsics,
    labels: &BTreeMap<u32, LabelImage>,
) -> Result<Vec<Track>, ReconstructError> {
    let mut tracks = Vec::with_capacity(rows.len());
    for (k, row) in rows.iter().enumerate() {
        let mut observations: Vec<Observation> = Vec::with_capacity(row.images.len());
        for &image in &row.images {
            let (Some(pose), Some(raster)) = (poses.get(&image), labels.get(&image)) else {
                return Err(ReconstructError::Parse { line: row.line, reason: format!("unknown image id {image}") });
            };
            if observations.iter().any(|o| o.image == image) {
                continue;
            }
            if let Some(uv) = project(&row.position, pose, intr) {
                observations.push(Observation { image, uv, label: label_at(raster, uv.x, uv.y) });
            }
        }
        observations.sort_by_key(|o| o.image);
        tracks.push(Track { id: k as u32, observations, point: Some(row.position) });
    }
    Ok(tracks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::ClassId;
    use crate::scene::{generate_scene, render_frame, SceneDescription, SceneParams};

    #[test]
    fn parse_errors_name_the_line() {
        assert!(matches!(parse_visibility("1 2 3 1 0\n1 2 3 2 0\n"), Err(ReconstructError::Parse { line: 2, .. })));
        assert!(matches!(parse_visibility("# c\n\n1 2 x 0\n"), Err(ReconstructError::Parse { line: 3, .. })));
        let rows = parse_visibility("1 2 3 0\n").unwrap();
        assert!(rows[0].images.is_empty());
    }

    #[test]
    fn unknown_image_rejected_and_empty_visibility_kept() {
        let intr = CameraIntrinsics::centered(100.0, 64, 48).unwrap();
        let poses = BTreeMap::from([(0, Pose::nadir(Point3::new(0.0, 0.0, 10.0)))]);
        let labels = BTreeMap::from([(0, LabelImage::filled(64, 48, ClassId::GROUND))]);
        let rows = parse_visibility("0 0 0 0\n0 0 0 1 0\n0 0 0 1 7\n").unwrap();
        match ingest_external_cloud(&rows, &poses, &intr, &labels) {
            Err(ReconstructError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let t = ingest_external_cloud(&rows[..2], &poses, &intr, &labels).unwrap();
        assert!(t[0].observations.is_empty());
        assert_eq!(t[1].observations[0].label, ClassId::GROUND);
    }

    #[test]
    fn labels_match_renderer_ground_truth() {
        let params = SceneParams { extent: 60.0, tree_count: 10, bush_count: 10, ..SceneParams::default() };
        let scene = generate_scene(8, &params).unwrap();
        let intr = CameraIntrinsics::centered(200.0, 200, 150).unwrap();
        let frames: Vec<_> = (0..5)
            .map(|k| render_frame(&scene, k, &Pose::nadir(Point3::new(24.0 + 3.0 * k as f64, 30.0, 45.0)), &intr))
            .collect();
        let poses: BTreeMap<u32, Pose> = frames.iter().map(|f| (f.image_id, f.pose)).collect();
        let labels: BTreeMap<u32, LabelImage> = frames.iter().map(|f| (f.image_id, f.labels.clone())).collect();
        // surface points visible from the middle view
        let mid = &frames[2];
        let mut rows = Vec::new();
        for v in (10..140).step_by(13) {
            for u in (10..190).step_by(13) {
                let dir = crate::scene::pixel_ray(&mid.pose, &intr, u as f64, v as f64);
                let hit = scene.cast_ray(&mid.pose.center(), &dir).unwrap();
                rows.push((hit, VisibilityRow { line: rows.len() + 1, position: hit.point, images: (0..5).collect() }));
            }
        }
        let vis: Vec<_> = rows.iter().map(|r| r.1.clone()).collect();
        let tracks = ingest_external_cloud(&vis, &poses, &intr, &labels).unwrap();
        let mut good = 0;
        for ((hit, _), t) in rows.iter().zip(&tracks) {
            assert_eq!(t.observations.len(), 5);
            let truth = SceneDescription::class_of(hit.kind);
            let votes: Vec<ClassId> = t.observations.iter().map(|o| o.label).collect();
            if crate::semantics::point_label(&votes).unwrap() == truth {
                good += 1;
            }
        }
        assert!(good as f64 >= 0.9 * tracks.len() as f64, "{good} of {}", tracks.len());
    }
}
