//! Labeled PLY files and text reports.

mod ply;
mod report;

use std::path::PathBuf;

use thiserror::Error;

pub use ply::{decode_ply, encode_ply, read_ply, write_ply, PlyCloud, PlyEncoding};
pub use report::{
    class_summary_csv, histogram_csv, write_report, ReconstructionStats, CLASS_SUMMARY_FILE, HISTOGRAM_FILE,
    PALETTE_FILE, STATS_FILE,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed PLY at byte {offset}: {reason}")]
    Ply { offset: usize, reason: String },
}
