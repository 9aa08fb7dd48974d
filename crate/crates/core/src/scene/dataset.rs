//! Dataset directory layout:
//!
//! ```text
//! images/NNNN.ppm     RGB frames
//! labels/NNNN.pgm     label rasters, palette grays
//! camera.txt          focal cx cy width height
//! gcp_list.txt        gcp_id wx wy wz image_filename u v
//! poses_gt.txt        image_filename r11 .. r33 tx ty tz (ground truth only)
//! palette.csv         class table
//! ```
//!
//! Image ids are the ordinal positions of the image file names in sorted
//! order.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Point2, Point3, Vector3};

use super::{GroundControlPoint, RenderedFrame, SceneError};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::imaging::{read_label_pgm, read_ppm, write_label_pgm, write_ppm, LabelImage, LabelPalette, RgbImage};

pub const GCP_HEADER: &str = "#semantic-sfm gcp v1";

#[derive(Debug, Clone)]
pub struct DatasetFrame {
    pub id: u32,
    /// File name inside `images/`.
    pub name: String,
    pub rgb: RgbImage,
    pub labels: LabelImage,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub intrinsics: Option<CameraIntrinsics>,
    pub frames: Vec<DatasetFrame>,
    pub gcps: Vec<GroundControlPoint>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SceneError + '_ {
    move |source| SceneError::Io { path: path.display().to_string(), source }
}

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> SceneError {
    SceneError::Parse { path: path.display().to_string(), line, reason: reason.into() }
}

pub fn image_name(id: u32) -> String {
    format!("{id:04}.ppm")
}

fn write_text(path: &Path, text: &str) -> Result<(), SceneError> {
    fs::write(path, text).map_err(io_err(path))
}

/// Poses as `image_filename r11 r12 r13 r21 r22 r23 r31 r32 r33 tx ty tz` lines.
pub fn poses_to_text(poses: &[(String, Pose)]) -> String {
    let mut out = String::from("# image_filename r11 r12 r13 r21 r22 r23 r31 r32 r33 tx ty tz\n");
    for (name, pose) in poses {
        let r = &pose.rotation;
        let t = &pose.translation;
        let _ = write!(out, "{name}");
        for row in 0..3 {
            for col in 0..3 {
                let _ = write!(out, " {}", r[(row, col)]);
            }
        }
        let _ = writeln!(out, " {} {} {}", t.x, t.y, t.z);
    }
    out
}

/// Write frames, GCP observations, intrinsics and ground-truth poses.
pub fn export_dataset(
    dir: &Path,
    frames: &[RenderedFrame],
    gcps: &[GroundControlPoint],
    intrinsics: &CameraIntrinsics,
    palette: &LabelPalette,
) -> Result<(), SceneError> {
    let images = dir.join("images");
    let labels = dir.join("labels");
    for d in [dir, &images, &labels] {
        fs::create_dir_all(d).map_err(io_err(d))?;
    }
    let mut named = Vec::with_capacity(frames.len());
    for f in frames {
        let name = image_name(f.image_id);
        write_ppm(&images.join(&name), &f.rgb)?;
        write_label_pgm(&labels.join(format!("{:04}.pgm", f.image_id)), &f.labels, palette)?;
        named.push((name, f.pose));
    }
    let poses = poses_to_text(&named);
    let mut list = format!("{GCP_HEADER}\n# gcp_id wx wy wz image_filename u v\n");
    for g in gcps {
        for (image, uv) in &g.observations {
            let _ = writeln!(
                list,
                "{} {} {} {} {} {} {}",
                g.id,
                g.world.x,
                g.world.y,
                g.world.z,
                image_name(*image),
                uv.x,
                uv.y
            );
        }
    }
    let camera = format!(
        "# focal cx cy width height\n{} {} {} {} {}\n",
        intrinsics.focal, intrinsics.cx, intrinsics.cy, intrinsics.width, intrinsics.height
    );
    write_text(&dir.join("poses_gt.txt"), &poses)?;
    write_text(&dir.join("gcp_list.txt"), &list)?;
    write_text(&dir.join("camera.txt"), &camera)?;
    write_text(&dir.join("palette.csv"), &palette.to_csv())
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(k, l)| (k, l.split_whitespace().collect()))
}

fn number<T: std::str::FromStr>(path: &Path, line: usize, field: &str, what: &str) -> Result<T, SceneError> {
    field.parse().map_err(|_| parse_err(path, line, format!("bad {what} '{field}'")))
}

/// One row of a GCP list.
#[derive(Debug, Clone, PartialEq)]
pub struct GcpRow {
    pub gcp_id: u32,
    pub world: Point3<f64>,
    pub image: String,
    pub uv: Point2<f64>,
}

pub fn parse_gcp_list(text: &str, path: &Path) -> Result<Vec<GcpRow>, SceneError> {
    if text.lines().next().map(str::trim) != Some(GCP_HEADER) {
        return Err(parse_err(path, 1, format!("expected header '{GCP_HEADER}'")));
    }
    let mut rows = Vec::new();
    for (line, f) in data_lines(text) {
        if f.len() != 7 {
            return Err(parse_err(path, line, format!("expected 7 fields, found {}", f.len())));
        }
        let v = |k: usize, what: &str| number::<f64>(path, line, f[k], what);
        rows.push(GcpRow {
            gcp_id: number(path, line, f[0], "gcp id")?,
            world: Point3::new(v(1, "wx")?, v(2, "wy")?, v(3, "wz")?),
            image: f[4].to_string(),
            uv: Point2::new(v(5, "u")?, v(6, "v")?),
        });
    }
    Ok(rows)
}

pub fn parse_poses(text: &str, path: &Path) -> Result<Vec<(String, Pose)>, SceneError> {
    let mut out = Vec::new();
    for (line, f) in data_lines(text) {
        if f.len() != 13 {
            return Err(parse_err(path, line, format!("expected 13 fields, found {}", f.len())));
        }
        let mut v = [0.0; 12];
        for (k, x) in v.iter_mut().enumerate() {
            *x = number(path, line, f[k + 1], "pose value")?;
        }
        let r = Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
        out.push((f[0].to_string(), Pose::new(r, Vector3::new(v[9], v[10], v[11]))));
    }
    Ok(out)
}

pub fn parse_camera(text: &str, path: &Path) -> Result<CameraIntrinsics, SceneError> {
    let (line, f) = data_lines(text).next().ok_or_else(|| parse_err(path, 1, "no intrinsics row"))?;
    if f.len() != 5 {
        return Err(parse_err(path, line, "expected focal cx cy width height"));
    }
    CameraIntrinsics::new(
        number(path, line, f[0], "focal")?,
        number(path, line, f[1], "cx")?,
        number(path, line, f[2], "cy")?,
        number(path, line, f[3], "width")?,
        number(path, line, f[4], "height")?,
    )
    .map_err(|e| parse_err(path, line, e.to_string()))
}

fn image_names(dir: &Path) -> Result<Vec<String>, SceneError> {
    let images = dir.join("images");
    let mut names = Vec::new();
    for entry in fs::read_dir(&images).map_err(io_err(&images))? {
        let entry = entry.map_err(io_err(&images))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".ppm") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn name_to_id(names: &[String]) -> HashMap<&str, u32> {
    names.iter().enumerate().map(|(k, n)| (n.as_str(), k as u32)).collect()
}

/// Load frames, label rasters, GCPs and (if present) intrinsics. Ground
/// truth poses are not read.
pub fn load_dataset(dir: &Path, palette: &LabelPalette) -> Result<Dataset, SceneError> {
    let names = image_names(dir)?;
    let ids = name_to_id(&names);
    let mut frames = Vec::with_capacity(names.len());
    for (k, name) in names.iter().enumerate() {
        let rgb = read_ppm(&dir.join("images").join(name))?;
        let label_path = dir.join("labels").join(name.replace(".ppm", ".pgm"));
        let labels = read_label_pgm(&label_path, palette)?;
        if (labels.width(), labels.height()) != (rgb.width(), rgb.height()) {
            return Err(parse_err(
                &label_path,
                0,
                format!(
                    "label raster is {}x{}, image is {}x{}",
                    labels.width(),
                    labels.height(),
                    rgb.width(),
                    rgb.height()
                ),
            ));
        }
        frames.push(DatasetFrame { id: k as u32, name: name.clone(), rgb, labels });
    }
    let camera_path = dir.join("camera.txt");
    let intrinsics = match fs::read_to_string(&camera_path) {
        Ok(text) => Some(parse_camera(&text, &camera_path)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(io_err(&camera_path)(e)),
    };
    let gcp_path = dir.join("gcp_list.txt");
    let mut gcps: BTreeMap<u32, GroundControlPoint> = BTreeMap::new();
    match fs::read_to_string(&gcp_path) {
        Ok(text) => {
            for row in parse_gcp_list(&text, &gcp_path)? {
                let Some(&image) = ids.get(row.image.as_str()) else {
                    log::warn!("{}: GCP {} refers to unknown image {}", gcp_path.display(), row.gcp_id, row.image);
                    continue;
                };
                let g = gcps.entry(row.gcp_id).or_insert_with(|| GroundControlPoint {
                    id: row.gcp_id,
                    world: row.world,
                    observations: Vec::new(),
                });
                g.observations.push((image, row.uv));
            }
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(io_err(&gcp_path)(e)),
    }
    let mut gcps: Vec<_> = gcps.into_values().collect();
    gcps.iter_mut().for_each(|g| g.observations.sort_by_key(|o| o.0));
    Ok(Dataset { root: dir.to_path_buf(), intrinsics, frames, gcps })
}

/// Ground-truth poses keyed by image id, for evaluation only.
pub fn load_ground_truth_poses(dir: &Path) -> Result<BTreeMap<u32, Pose>, SceneError> {
    let names = image_names(dir)?;
    let ids = name_to_id(&names);
    let path = dir.join("poses_gt.txt");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let mut out = BTreeMap::new();
    for (name, pose) in parse_poses(&text, &path)? {
        if let Some(&id) = ids.get(name.as_str()) {
            out.insert(id, pose);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, observe_gcps, place_gcps, plan_survey, render_survey, SceneParams};

    #[test]
    fn export_and_reload_round_trip() {
        let params = SceneParams { extent: 40.0, tree_count: 3, bush_count: 4, ..SceneParams::default() };
        let scene = generate_scene(9, &params).unwrap();
        let intr = CameraIntrinsics::centered(100.0, 64, 48).unwrap();
        let plan = plan_survey(&scene, 60.0, 0.6, 0.6, &intr).unwrap();
        let mut gcps = place_gcps(&scene, 3, 9).unwrap();
        let scene = scene.with_gcps(&gcps);
        let frames = render_survey(&scene, &plan);
        let views: Vec<_> = frames.iter().map(|f| (f.image_id, f.pose)).collect();
        observe_gcps(&mut gcps, &scene, &views, &intr);
        let dir = tempfile::tempdir().unwrap();
        let palette = LabelPalette::forest();
        export_dataset(dir.path(), &frames, &gcps, &intr, &palette).unwrap();

        let ds = load_dataset(dir.path(), &palette).unwrap();
        assert_eq!(ds.intrinsics, Some(intr));
        assert_eq!(ds.frames.len(), frames.len());
        for (a, b) in ds.frames.iter().zip(&frames) {
            assert_eq!(a.id, b.image_id);
            assert_eq!(a.rgb, b.rgb);
            assert_eq!(a.labels, b.labels);
        }
        let seen: Vec<_> = gcps.iter().filter(|g| !g.observations.is_empty()).cloned().collect();
        assert_eq!(ds.gcps, seen);

        let gt = load_ground_truth_poses(dir.path()).unwrap();
        for f in &frames {
            let p = gt[&f.image_id];
            assert_eq!(p, f.pose);
            assert!(p.orthonormality_residual() < 1e-9);
        }
    }

    #[test]
    fn gcp_list_errors_carry_line_numbers() {
        let p = Path::new("gcp_list.txt");
        let text = format!("{GCP_HEADER}\n0 1 2 3 0000.ppm 4 5\n1 1 2 x 0000.ppm 4 5\n");
        match parse_gcp_list(&text, p) {
            Err(SceneError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_gcp_list("0 1 2 3 a 4 5\n", p).is_err());
    }
}
