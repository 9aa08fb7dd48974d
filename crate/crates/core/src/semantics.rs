//! Per-point labels by majority vote over the views of a point, agreement
//! confidence, confidence filtering and histogram analytics.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::Point3;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{project, CameraIntrinsics, Pose};
use crate::imaging::{label_at, rgb_at, ClassId, LabelImage, LabelPalette, RgbImage};
use crate::reconstruct::{Reconstruction, Track};

#[derive(Debug, Error, PartialEq)]
pub enum SemanticsError {
    #[error("point has no views to vote")]
    NoVisibility,
    #[error("no label raster for image {0}")]
    MissingLabels(u32),
    #[error("no pose for image {0}")]
    MissingPose(u32),
}

/// How reprojections that fall outside the image take part in the vote.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OobVotes {
    /// Sample the nearest border pixel.
    #[default]
    Clamp,
    /// Leave the view out of the vote.
    Drop,
}

impl fmt::Display for OobVotes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OobVotes::Clamp => "clamp",
            OobVotes::Drop => "drop",
        })
    }
}

impl FromStr for OobVotes {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "clamp" => Ok(OobVotes::Clamp),
            "drop" => Ok(OobVotes::Drop),
            other => Err(format!("expected 'clamp' or 'drop', got '{other}'")),
        }
    }
}

/// A labeled cloud point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint {
    pub position: Point3<f64>,
    pub color: [u8; 3],
    pub label: ClassId,
    /// Share of votes held by `label`; zero marks a point without votes.
    pub confidence: f64,
    /// Number of votes.
    pub views: usize,
    /// Track the point came from, when known.
    pub track_id: Option<u32>,
}

fn class_counts(labels: &[ClassId]) -> [u32; 256] {
    let mut counts = [0u32; 256];
    for l in labels {
        counts[l.index()] += 1;
    }
    counts
}

/// Most frequent class; ties go to the smallest class id.
pub fn point_label(labels: &[ClassId]) -> Result<ClassId, SemanticsError> {
    if labels.is_empty() {
        return Err(SemanticsError::NoVisibility);
    }
    let counts = class_counts(labels);
    let mut best = 0;
    for c in 1..256 {
        if counts[c] > counts[best] {
            best = c;
        }
    }
    Ok(ClassId(best as u8))
}

/// Fraction of `labels` equal to `chosen`.
pub fn point_confidence(labels: &[ClassId], chosen: ClassId) -> Result<f64, SemanticsError> {
    if labels.is_empty() {
        return Err(SemanticsError::NoVisibility);
    }
    let agree = labels.iter().filter(|&&l| l == chosen).count();
    Ok(agree as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelingReport {
    pub labeled: usize,
    /// Triangulated tracks with views but no vote in front of a camera.
    pub dropped_behind: usize,
    /// Tracks that listed no views at all; kept with label 0 and confidence 0.
    pub unlabeled: usize,
}

/// Vote each triangulated track's label from fresh reprojections of its
/// point into the images of its views. Colors are the mean of the sampled
/// pixels when `images` is given, else the display color of the label.
pub fn label_tracks(
    tracks: &[Track],
    cameras: &BTreeMap<u32, Pose>,
    intr: &CameraIntrinsics,
    labels: &BTreeMap<u32, LabelImage>,
    images: Option<&BTreeMap<u32, RgbImage>>,
    oob: OobVotes,
) -> Result<(Vec<LabeledPoint>, LabelingReport), SemanticsError> {
    for t in tracks.iter().filter(|t| t.point.is_some()) {
        for o in &t.observations {
            if !labels.contains_key(&o.image) {
                return Err(SemanticsError::MissingLabels(o.image));
            }
            if !cameras.contains_key(&o.image) {
                return Err(SemanticsError::MissingPose(o.image));
            }
        }
    }
    let palette = LabelPalette::forest();
    let voted: Vec<Option<LabeledPoint>> = tracks
        .par_iter()
        .filter(|t| t.point.is_some())
        .map(|t| {
            let x = t.point.unwrap();
            if t.observations.is_empty() {
                return Some(LabeledPoint {
                    position: x,
                    color: [0, 0, 0],
                    label: ClassId::UNLABELED,
                    confidence: 0.0,
                    views: 0,
                    track_id: Some(t.id),
                });
            }
            let mut votes = Vec::with_capacity(t.observations.len());
            let mut rgb_sum = [0u64; 3];
            for o in &t.observations {
                let Some(uv) = project(&x, &cameras[&o.image], intr) else { continue };
                if oob == OobVotes::Drop && !intr.contains(&uv) {
                    continue;
                }
                votes.push(label_at(&labels[&o.image], uv.x, uv.y));
                if let Some(img) = images.and_then(|m| m.get(&o.image)) {
                    let c = rgb_at(img, uv.x, uv.y);
                    for ch in 0..3 {
                        rgb_sum[ch] += c[ch] as u64;
                    }
                }
            }
            let label = point_label(&votes).ok()?;
            let confidence = point_confidence(&votes, label).ok()?;
            let color = if images.is_some() {
                let n = votes.len() as u64;
                std::array::from_fn(|ch| ((rgb_sum[ch] + n / 2) / n) as u8)
            } else {
                palette.entry(label).map_or([0, 0, 0], |e| e.display_rgb)
            };
            Some(LabeledPoint { position: x, color, label, confidence, views: votes.len(), track_id: Some(t.id) })
        })
        .collect();
    let mut report = LabelingReport::default();
    let mut out = Vec::with_capacity(voted.len());
    for p in voted {
        match p {
            Some(p) if p.views == 0 => {
                report.unlabeled += 1;
                out.push(p);
            }
            Some(p) => {
                report.labeled += 1;
                out.push(p);
            }
            None => report.dropped_behind += 1,
        }
    }
    if report.dropped_behind > 0 {
        log::info!("{} points had no view in front of a camera and were dropped", report.dropped_behind);
    }
    Ok((out, report))
}

/// [`label_tracks`] over a reconstruction's own cameras.
pub fn label_reconstruction(
    rec: &Reconstruction,
    labels: &BTreeMap<u32, LabelImage>,
    images: Option<&BTreeMap<u32, RgbImage>>,
    oob: OobVotes,
) -> Result<(Vec<LabeledPoint>, LabelingReport), SemanticsError> {
    label_tracks(&rec.tracks, &rec.cameras, &rec.intrinsics, labels, images, oob)
}

/// Points with confidence of at least `tau`, in input order.
pub fn confidence_filter(points: &[LabeledPoint], tau: f64) -> Vec<LabeledPoint> {
    points.iter().filter(|p| p.confidence >= tau).copied().collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Bin index of a confidence among `bins` right-closed bins over (0, 1].
/// Values at or below zero land in the first bin.
pub fn confidence_bin(confidence: f64, bins: usize) -> usize {
    let k = (confidence * bins as f64 - 1e-9).ceil() as i64 - 1;
    k.clamp(0, bins as i64 - 1) as usize
}

/// Uniform right-closed bins over (0, 1]; confidence 1 is in the last bin.
pub fn confidence_histogram(points: &[LabeledPoint], bins: usize) -> Vec<HistogramBin> {
    let bins = bins.max(1);
    let mut counts = vec![0usize; bins];
    for p in points {
        counts[confidence_bin(p.confidence, bins)] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| HistogramBin { lo: k as f64 / bins as f64, hi: (k + 1) as f64 / bins as f64, count })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSummary {
    pub class: ClassId,
    pub name: String,
    pub points: usize,
    pub mean_confidence: f64,
}

/// Point count and mean confidence for every class present, by class id.
pub fn class_summary(points: &[LabeledPoint], palette: &LabelPalette) -> Vec<ClassSummary> {
    let mut acc: BTreeMap<ClassId, (usize, f64)> = BTreeMap::new();
    for p in points {
        let e = acc.entry(p.label).or_default();
        e.0 += 1;
        e.1 += p.confidence;
    }
    acc.into_iter()
        .map(|(class, (n, sum))| ClassSummary {
            class,
            name: palette.name(class).to_string(),
            points: n,
            mean_confidence: sum / n as f64,
        })
        .collect()
}
