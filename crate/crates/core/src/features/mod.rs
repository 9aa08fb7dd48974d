//! Keypoints, descriptor matching over image pairs, and label-agreement
//! filtering of putative matches.

mod detect;
mod matching;
mod semantic;

use nalgebra::Point2;

use crate::imaging::ClassId;

pub use detect::{detect_features, DetectorParams};
pub use matching::{match_all_pairs, match_pair};
pub use semantic::{match_debug_csv, semantic_filter, MIN_INLIER_FRACTION};

/// A keypoint with its unit-norm descriptor and the class sampled under it.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub index: usize,
    pub pixel: Point2<f64>,
    pub descriptor: Vec<f32>,
    pub label: ClassId,
    pub response: f32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    /// Feature index in the first image.
    pub i: usize,
    /// Feature index in the second image.
    pub j: usize,
    pub distance: f64,
}

/// Matches between one image pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchSet {
    pub image_i: u32,
    pub image_j: u32,
    pub matches: Vec<Match>,
    pub semantic_filter_applied: bool,
}

impl MatchSet {
    pub fn new(image_i: u32, image_j: u32, matches: Vec<Match>) -> Self {
        Self { image_i, image_j, matches, semantic_filter_applied: false }
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    /// Keep only the matches whose flag is set.
    pub fn retain_mask(&mut self, mask: &[bool]) {
        let mut k = 0;
        self.matches.retain(|_| {
            let keep = mask[k];
            k += 1;
            keep
        });
    }
}
