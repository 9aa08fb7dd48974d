use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::IoError;
use crate::geometry::similarity::GcpResidual;
use crate::imaging::LabelPalette;
use crate::reconstruct::{Frame, Reconstruction, SfmReport};
use crate::semantics::{class_summary, confidence_histogram, HistogramBin, LabeledPoint};

pub const HISTOGRAM_FILE: &str = "confidence_histogram.csv";
pub const CLASS_SUMMARY_FILE: &str = "class_summary.csv";
pub const STATS_FILE: &str = "reconstruction_stats.txt";
pub const PALETTE_FILE: &str = "palette.csv";

/// Summary numbers of one reconstruction run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReconstructionStats {
    pub images: usize,
    pub registered_images: usize,
    pub point_count: usize,
    pub rms_reprojection_px: f64,
    pub frame: Frame,
    pub gcp_residuals: Vec<GcpResidual>,
    /// Extra `key value` lines, e.g. the config hash.
    pub notes: Vec<(String, String)>,
}

impl ReconstructionStats {
    pub fn from_run(rec: &Reconstruction, report: &SfmReport, labeled_points: usize) -> Self {
        Self {
            images: report.images,
            registered_images: report.registered.len(),
            point_count: labeled_points,
            rms_reprojection_px: rec.rms_reprojection_px(),
            frame: rec.frame,
            gcp_residuals: report.gcp.as_ref().map(|g| g.residuals.clone()).unwrap_or_default(),
            notes: Vec::new(),
        }
    }

    pub fn mean_gcp_residual_m(&self) -> Option<f64> {
        if self.gcp_residuals.is_empty() {
            return None;
        }
        Some(self.gcp_residuals.iter().map(|r| r.residual_m).sum::<f64>() / self.gcp_residuals.len() as f64)
    }

    /// `key value` lines; floats are written with round-trip precision.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "images {}", self.images);
        let _ = writeln!(out, "registered_images {}", self.registered_images);
        let _ = writeln!(out, "point_count {}", self.point_count);
        let _ = writeln!(out, "rms_reprojection_px {}", self.rms_reprojection_px);
        let frame = match self.frame {
            Frame::Arbitrary => "arbitrary",
            Frame::GcpAligned => "gcp_aligned",
        };
        let _ = writeln!(out, "frame {frame}");
        match self.mean_gcp_residual_m() {
            Some(m) => {
                let _ = writeln!(out, "gcp_mean_residual_m {m}");
            }
            None => out.push_str("gcp_mean_residual_m none\n"),
        }
        for r in &self.gcp_residuals {
            let _ = writeln!(out, "gcp {} residual_m {} views {}", r.id, r.residual_m, r.views);
        }
        for (k, v) in &self.notes {
            let _ = writeln!(out, "{k} {v}");
        }
        out
    }
}

pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for b in bins {
        let _ = writeln!(out, "{},{},{}", b.lo, b.hi, b.count);
    }
    out
}

pub fn class_summary_csv(points: &[LabeledPoint], palette: &LabelPalette) -> String {
    let mut out = String::from("class_id,name,points,mean_confidence\n");
    for s in class_summary(points, palette) {
        let _ = writeln!(out, "{},{},{},{}", s.class.0, s.name, s.points, s.mean_confidence);
    }
    out
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf, IoError> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|source| IoError::Io { path: path.clone(), source })?;
    Ok(path)
}

/// Write the confidence histogram, class summary and palette CSVs, plus the
/// stats file when `stats` is given. Returns the paths written.
pub fn write_report(
    points: &[LabeledPoint],
    stats: Option<&ReconstructionStats>,
    bins: usize,
    palette: &LabelPalette,
    dir: &Path,
) -> Result<Vec<PathBuf>, IoError> {
    std::fs::create_dir_all(dir).map_err(|source| IoError::Io { path: dir.to_path_buf(), source })?;
    let mut written = vec![
        write(dir, HISTOGRAM_FILE, &histogram_csv(&confidence_histogram(points, bins)))?,
        write(dir, CLASS_SUMMARY_FILE, &class_summary_csv(points, palette))?,
        write(dir, PALETTE_FILE, &palette.to_csv())?,
    ];
    if let Some(s) = stats {
        written.push(write(dir, STATS_FILE, &s.to_text())?);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::ClassId;
    use nalgebra::Point3;

    fn pt(label: ClassId, confidence: f64) -> LabeledPoint {
        LabeledPoint { position: Point3::origin(), color: [0; 3], label, confidence, views: 2, track_id: None }
    }

    #[test]
    fn csv_files_partition_the_cloud() {
        let cloud: Vec<_> = (0..37)
            .map(|k| pt(if k % 3 == 0 { ClassId::TRUNK } else { ClassId::CANOPY }, [0.5, 2.0 / 3.0, 1.0][k % 3]))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let stats = ReconstructionStats {
            gcp_residuals: vec![GcpResidual { id: 1, residual_m: 0.001234567891, views: 4 }],
            ..Default::default()
        };
        let files = write_report(&cloud, Some(&stats), 20, &LabelPalette::forest(), dir.path()).unwrap();
        assert_eq!(files.len(), 4);
        let hist = std::fs::read_to_string(dir.path().join(HISTOGRAM_FILE)).unwrap();
        let rows: Vec<&str> = hist.lines().skip(1).collect();
        assert_eq!(rows.len(), 20);
        let total: usize = rows.iter().map(|r| r.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
        assert_eq!(total, 37);
        let summary = std::fs::read_to_string(dir.path().join(CLASS_SUMMARY_FILE)).unwrap();
        let ids: Vec<&str> = summary.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(ids, vec!["2", "3"]);
        let text = std::fs::read_to_string(dir.path().join(STATS_FILE)).unwrap();
        let mean: f64 = text.lines().find_map(|l| l.strip_prefix("gcp_mean_residual_m ")).unwrap().parse().unwrap();
        assert_eq!(mean, 0.001234567891);
    }
}
