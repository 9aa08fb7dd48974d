//! Incremental reconstruction: track building, seed-pair initialization,
//! registration by resection, periodic bundle adjustment, point filtering
//! and ingestion of externally densified clouds.

mod external;
mod filter;
mod pipeline;
mod tracks;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{Point2, Point3};
use thiserror::Error;

use crate::geometry::{project, CameraIntrinsics, GeometryError, Observation, Pose};
use crate::imaging::ClassId;

pub use external::{ingest_external_cloud, parse_visibility, VisibilityRow};
pub use filter::{filter_points, FilterParams, FilterReport};
pub use pipeline::{
    extract_features, reconstruct_from_matches, registered_fraction, run_sfm, verify_pairs, PairStats, SfmOutput,
    SfmReport, VerifiedPair,
};
pub use tracks::build_tracks;

pub const TRACKS_HEADER: &str = "#semantic-sfm tracks v1";

#[derive(Debug, Error)]
pub enum ReconstructError {
    #[error("reconstruction failed: {0}")]
    Failed(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Coordinate frame of a reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Frame {
    /// Gauge fixed by the seed pair, unit baseline.
    #[default]
    Arbitrary,
    /// Similarity-aligned to surveyed ground control points, meters.
    GcpAligned,
}

/// The views of one 3D point, at most one per image.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u32,
    pub observations: Vec<Observation>,
    pub point: Option<Point3<f64>>,
}

impl Track {
    pub fn observation_in(&self, image: u32) -> Option<&Observation> {
        self.observations.iter().find(|o| o.image == image)
    }

    pub fn has_unique_images(&self) -> bool {
        let mut ids: Vec<u32> = self.observations.iter().map(|o| o.image).collect();
        ids.sort_unstable();
        ids.windows(2).all(|w| w[0] != w[1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub intrinsics: CameraIntrinsics,
    pub cameras: BTreeMap<u32, Pose>,
    pub tracks: Vec<Track>,
    pub frame: Frame,
    /// Camera held fixed during bundle adjustment.
    pub reference_image: Option<u32>,
}

impl Reconstruction {
    pub fn new(intrinsics: CameraIntrinsics) -> Self {
        Self {
            intrinsics,
            cameras: BTreeMap::new(),
            tracks: Vec::new(),
            frame: Frame::Arbitrary,
            reference_image: None,
        }
    }

    pub fn triangulated(&self) -> impl Iterator<Item = &Track> {
        self.tracks.iter().filter(|t| t.point.is_some())
    }

    pub fn point_count(&self) -> usize {
        self.triangulated().count()
    }

    /// Reprojection errors of one track over its posed observations.
    pub fn track_errors(&self, track: &Track) -> Vec<f64> {
        let Some(x) = track.point else { return Vec::new() };
        track
            .observations
            .iter()
            .filter_map(|o| {
                let pose = self.cameras.get(&o.image)?;
                Some(project(&x, pose, &self.intrinsics).map_or(f64::INFINITY, |uv| (uv - o.uv).norm()))
            })
            .collect()
    }

    /// RMS reprojection error over all posed observations of triangulated tracks.
    pub fn rms_reprojection_px(&self) -> f64 {
        let (mut sq, mut n) = (0.0, 0usize);
        for t in self.triangulated() {
            for e in self.track_errors(t) {
                sq += e * e;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            (sq / n as f64).sqrt()
        }
    }

    /// Serialize tracks and points as `#semantic-sfm tracks v1` text.
    pub fn tracks_to_text(&self) -> String {
        let mut out = format!("{TRACKS_HEADER}\n# track_id image_id u v label | point track_id x y z\n");
        for t in &self.tracks {
            for o in &t.observations {
                let _ = writeln!(out, "{} {} {} {} {}", t.id, o.image, o.uv.x, o.uv.y, o.label.0);
            }
        }
        for t in &self.tracks {
            if let Some(x) = t.point {
                let _ = writeln!(out, "point {} {} {} {}", t.id, x.x, x.y, x.z);
            }
        }
        out
    }
}

/// Parse the text written by [`Reconstruction::tracks_to_text`]. Tracks come
/// back in order of first appearance.
pub fn tracks_from_text(text: &str) -> Result<Vec<Track>, ReconstructError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TRACKS_HEADER => {}
        _ => return Err(ReconstructError::Parse { line: 1, reason: format!("expected header '{TRACKS_HEADER}'") }),
    }
    let mut order: Vec<u32> = Vec::new();
    let mut tracks: BTreeMap<u32, Track> = BTreeMap::new();
    let bad = |line: usize, reason: &str| ReconstructError::Parse { line, reason: reason.to_string() };
    for (k, raw) in lines {
        let line = k + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = l.split_whitespace().collect();
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(line, &format!("bad number '{s}'")));
        let id = |s: &str| s.parse::<u32>().map_err(|_| bad(line, &format!("bad id '{s}'")));
        let entry = |tracks: &mut BTreeMap<u32, Track>, order: &mut Vec<u32>, tid: u32| {
            if let std::collections::btree_map::Entry::Vacant(slot) = tracks.entry(tid) {
                order.push(tid);
                slot.insert(Track { id: tid, observations: Vec::new(), point: None });
            }
            tid
        };
        if f[0] == "point" {
            if f.len() != 5 {
                return Err(bad(line, "expected 'point track_id x y z'"));
            }
            let p = Point3::new(num(f[2])?, num(f[3])?, num(f[4])?);
            let tid = entry(&mut tracks, &mut order, id(f[1])?);
            tracks.get_mut(&tid).unwrap().point = Some(p);
        } else {
            if f.len() != 5 {
                return Err(bad(line, "expected 'track_id image_id u v label'"));
            }
            let label = f[4].parse::<u8>().map_err(|_| bad(line, "bad label"))?;
            let obs = Observation { image: id(f[1])?, uv: Point2::new(num(f[2])?, num(f[3])?), label: ClassId(label) };
            let tid = entry(&mut tracks, &mut order, id(f[0])?);
            let t = tracks.get_mut(&tid).unwrap();
            if t.observation_in(obs.image).is_some() {
                return Err(bad(line, "second observation of a track in one image"));
            }
            t.observations.push(obs);
        }
    }
    Ok(order.into_iter().map(|id| tracks.remove(&id).expect("inserted above")).collect())
}
