use std::collections::{BTreeSet, HashMap};

use nalgebra::Point3;
use rayon::prelude::*;

use super::{build_tracks, ReconstructError, Reconstruction, Track};
use crate::config::PipelineConfig;
use crate::features::{detect_features, match_all_pairs, semantic_filter, Feature, MatchSet};
use crate::geometry::{
    align_to_gcps, bundle_adjust, estimate_relative_pose, project, resect, triangulate, CameraIntrinsics, GcpAlignment,
    GeometryError, Pose, RelativePose,
};
use crate::scene::{Dataset, GroundControlPoint};

/// Match statistics of one image pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairStats {
    pub image_i: u32,
    pub image_j: u32,
    /// Mutual nearest-neighbour matches passing the ratio test.
    pub putative: usize,
    /// Matches handed to geometric verification.
    pub verified_input: usize,
    pub semantic_filter_applied: bool,
    /// Essential-matrix RANSAC inliers (best consensus, also for rejected pairs).
    pub inliers: usize,
    pub accepted: bool,
}

impl PairStats {
    /// RANSAC inliers over the matches handed to RANSAC; zero when empty.
    pub fn inlier_fraction(&self) -> f64 {
        if self.verified_input == 0 {
            0.0
        } else {
            self.inliers as f64 / self.verified_input as f64
        }
    }
}

/// A geometrically verified pair: inlier matches and the relative pose.
#[derive(Debug, Clone)]
pub struct VerifiedPair {
    pub matches: MatchSet,
    pub relative: RelativePose,
}

#[derive(Debug, Clone, Default)]
pub struct SfmReport {
    pub images: usize,
    pub registered: Vec<u32>,
    pub unregistered: Vec<u32>,
    pub seed_pair: Option<(u32, u32)>,
    pub pair_stats: Vec<PairStats>,
    pub bundle_runs: usize,
    pub final_rms_px: f64,
    pub gcp: Option<GcpAlignment>,
    /// Why GCP alignment was skipped or failed, if it was.
    pub gcp_note: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SfmOutput {
    pub reconstruction: Reconstruction,
    pub report: SfmReport,
}

/// Detect features on every frame, in parallel.
pub fn extract_features(dataset: &Dataset, config: &PipelineConfig) -> Vec<(u32, Vec<Feature>)> {
    let det = config.detector();
    dataset.frames.par_iter().map(|f| (f.id, detect_features(&f.rgb, &f.labels, config.max_features, &det))).collect()
}

fn pair_stream(i: u32, j: u32) -> u64 {
    ((i as u64) << 32) | j as u64
}

/// Match all pairs, apply the label-agreement filter if enabled, then
/// essential-matrix RANSAC per pair.
pub fn verify_pairs(
    features: &[(u32, Vec<Feature>)],
    intr: &CameraIntrinsics,
    config: &PipelineConfig,
) -> (Vec<VerifiedPair>, Vec<PairStats>) {
    let by_id: HashMap<u32, &Vec<Feature>> = features.iter().map(|(id, f)| (*id, f)).collect();
    let putative = match_all_pairs(features, config.ratio_test);
    verify_match_sets(&putative, &by_id, intr, config)
}

pub(crate) fn verify_match_sets(
    putative: &[MatchSet],
    by_id: &HashMap<u32, &Vec<Feature>>,
    intr: &CameraIntrinsics,
    config: &PipelineConfig,
) -> (Vec<VerifiedPair>, Vec<PairStats>) {
    let ransac = config.pair_ransac();
    let results: Vec<(Option<VerifiedPair>, PairStats)> = putative
        .par_iter()
        .map(|ms| {
            let (fi, fj) = (by_id[&ms.image_i], by_id[&ms.image_j]);
            let input = if config.semantic_filter {
                semantic_filter(ms, fi, fj, config.min_inlier_fraction)
            } else {
                ms.clone()
            };
            let mut stats = PairStats {
                image_i: ms.image_i,
                image_j: ms.image_j,
                putative: ms.len(),
                verified_input: input.len(),
                semantic_filter_applied: input.semantic_filter_applied,
                inliers: 0,
                accepted: false,
            };
            let params = ransac.for_stream(pair_stream(ms.image_i, ms.image_j));
            match estimate_relative_pose(&input, fi, fj, intr, &params) {
                Ok(rel) => {
                    stats.inliers = rel.inlier_count;
                    stats.accepted = true;
                    let mut kept = input.clone();
                    kept.retain_mask(&rel.inliers);
                    (Some(VerifiedPair { matches: kept, relative: rel }), stats)
                }
                Err(GeometryError::PairRejected { inliers }) => {
                    stats.inliers = inliers;
                    (None, stats)
                }
                Err(_) => (None, stats),
            }
        })
        .collect();
    let mut pairs = Vec::new();
    let mut stats = Vec::with_capacity(results.len());
    for (p, s) in results {
        pairs.extend(p);
        stats.push(s);
    }
    (pairs, stats)
}

/// Full pipeline on a dataset directory's contents.
pub fn run_sfm(dataset: &Dataset, config: &PipelineConfig) -> Result<SfmOutput, ReconstructError> {
    config.validate().map_err(|e| ReconstructError::InvalidInput(e.to_string()))?;
    if dataset.frames.len() < 2 {
        return Err(ReconstructError::InvalidInput(format!("need at least 2 images, found {}", dataset.frames.len())));
    }
    let intr = dataset.intrinsics.unwrap_or_else(|| config.intrinsics());
    for f in &dataset.frames {
        if (f.rgb.width(), f.rgb.height()) != (intr.width, intr.height) {
            return Err(ReconstructError::InvalidInput(format!(
                "{} is {}x{}, intrinsics expect {}x{}",
                f.name,
                f.rgb.width(),
                f.rgb.height(),
                intr.width,
                intr.height
            )));
        }
    }
    let features = extract_features(dataset, config);
    log::info!(
        "detected {} features over {} images",
        features.iter().map(|f| f.1.len()).sum::<usize>(),
        features.len()
    );
    let (pairs, stats) = verify_pairs(&features, &intr, config);
    log::info!("{} of {} image pairs verified", pairs.len(), stats.len());
    let gcps = if config.use_gcps { dataset.gcps.as_slice() } else { &[] };
    let (reconstruction, mut report) = reconstruct_from_matches(&features, &pairs, &intr, gcps, config)?;
    report.pair_stats = stats;
    Ok(SfmOutput { reconstruction, report })
}

/// Median ray angle over the inlier correspondences of a pair, degrees.
fn median_parallax_deg(pair: &VerifiedPair, fi: &[Feature], fj: &[Feature], intr: &CameraIntrinsics) -> f64 {
    let first = Pose::identity();
    let second = pair.relative.pose;
    let c2 = second.center();
    let mut angles: Vec<f64> = pair
        .matches
        .matches
        .iter()
        .filter_map(|m| {
            let a = intr.normalize(&fi[m.i].pixel);
            let b = intr.normalize(&fj[m.j].pixel);
            let x = crate::geometry::triangulation::dlt_normalized(&[(a, &first), (b, &second)])?;
            let r1 = (Point3::origin() - x).normalize();
            let r2 = (c2 - x).normalize();
            Some(r1.dot(&r2).clamp(-1.0, 1.0).acos().to_degrees())
        })
        .collect();
    if angles.is_empty() {
        return 0.0;
    }
    angles.sort_by(f64::total_cmp);
    angles[angles.len() / 2]
}

struct Incremental<'a> {
    rec: Reconstruction,
    intr: CameraIntrinsics,
    config: &'a PipelineConfig,
    /// Track indices observed in each image.
    by_image: HashMap<u32, Vec<usize>>,
    bundle_runs: usize,
}

impl Incremental<'_> {
    fn index_tracks(&mut self) {
        self.by_image.clear();
        for (k, t) in self.rec.tracks.iter().enumerate() {
            for o in &t.observations {
                self.by_image.entry(o.image).or_default().push(k);
            }
        }
    }

    /// Triangulate a track from its posed views, dropping the worst view
    /// while the reprojection gate fails.
    fn triangulate_track(&mut self, k: usize) {
        let params = self.config.triangulation();
        let track = &self.rec.tracks[k];
        let mut views: Vec<(u32, nalgebra::Point2<f64>, Pose)> = track
            .observations
            .iter()
            .filter_map(|o| self.rec.cameras.get(&o.image).map(|p| (o.image, o.uv, *p)))
            .collect();
        while views.len() >= 2 {
            let plain: Vec<_> = views.iter().map(|v| (v.1, v.2)).collect();
            match triangulate(&plain, &self.intr, &params) {
                Ok(x) => {
                    let keep: BTreeSet<u32> = views.iter().map(|v| v.0).collect();
                    let posed = &self.rec.cameras;
                    let t = &mut self.rec.tracks[k];
                    t.observations.retain(|o| keep.contains(&o.image) || !posed.contains_key(&o.image));
                    t.point = Some(x);
                    return;
                }
                Err(GeometryError::ReprojectionGate { .. }) if views.len() > 2 => {
                    let norm: Vec<_> = views.iter().map(|v| (self.intr.normalize(&v.1), &v.2)).collect();
                    let Some(x) = crate::geometry::triangulation::dlt_normalized(&norm) else { return };
                    let worst = views
                        .iter()
                        .enumerate()
                        .map(|(i, v)| (i, project(&x, &v.2, &self.intr).map_or(f64::INFINITY, |uv| (uv - v.1).norm())))
                        .max_by(|a, b| a.1.total_cmp(&b.1))
                        .map(|w| w.0)
                        .unwrap();
                    views.remove(worst);
                }
                Err(_) => return,
            }
        }
    }

    fn triangulate_new(&mut self, image: u32) {
        let ids = self.by_image.get(&image).cloned().unwrap_or_default();
        for k in ids {
            if self.rec.tracks[k].point.is_none() {
                self.triangulate_track(k);
            }
        }
    }

    /// Drop posed observations that reproject worse than the gate; tracks
    /// left with fewer than two posed views lose their point.
    fn cull(&mut self) -> usize {
        let gate = self.config.triangulation_max_reproj_px;
        let mut removed = 0;
        for t in &mut self.rec.tracks {
            let Some(x) = t.point else { continue };
            let before = t.observations.len();
            let cameras = &self.rec.cameras;
            let intr = &self.intr;
            t.observations.retain(|o| match cameras.get(&o.image) {
                Some(pose) => project(&x, pose, intr).is_some_and(|uv| (uv - o.uv).norm() <= gate),
                None => true,
            });
            removed += before - t.observations.len();
            if t.observations.iter().filter(|o| cameras.contains_key(&o.image)).count() < 2 {
                t.point = None;
            }
        }
        if removed > 0 {
            self.index_tracks();
        }
        removed
    }

    fn bundle(&mut self, max_iterations: usize) {
        let cfg = crate::geometry::BundleConfig { max_iterations, ..self.config.bundle() };
        match bundle_adjust(&self.rec, &cfg) {
            Ok((rec, report)) => {
                log::debug!(
                    "bundle adjustment over {} cameras: rms {:.4} -> {:.4} px in {} iterations",
                    rec.cameras.len(),
                    (report.initial_cost() / report.observations.max(1) as f64).sqrt(),
                    report.final_rms_px(),
                    report.iterations
                );
                self.rec = rec;
                self.bundle_runs += 1;
            }
            Err(e) => log::warn!("bundle adjustment skipped: {e}"),
        }
    }

    fn correspondences(&self, image: u32) -> (Vec<usize>, Vec<Point3<f64>>, Vec<nalgebra::Point2<f64>>) {
        let mut idx = Vec::new();
        let mut world = Vec::new();
        let mut pixels = Vec::new();
        for &k in self.by_image.get(&image).map(Vec::as_slice).unwrap_or(&[]) {
            let t = &self.rec.tracks[k];
            if let (Some(x), Some(o)) = (t.point, t.observation_in(image)) {
                idx.push(k);
                world.push(x);
                pixels.push(o.uv);
            }
        }
        (idx, world, pixels)
    }
}

/// Incremental reconstruction from verified pairs: seed pair, then
/// resection of the best-connected image, triangulation, and periodic bundle
/// adjustment; finally GCP alignment when GCPs are given.
pub fn reconstruct_from_matches(
    features: &[(u32, Vec<Feature>)],
    pairs: &[VerifiedPair],
    intr: &CameraIntrinsics,
    gcps: &[GroundControlPoint],
    config: &PipelineConfig,
) -> Result<(Reconstruction, SfmReport), ReconstructError> {
    let by_id: HashMap<u32, &Vec<Feature>> = features.iter().map(|(id, f)| (*id, f)).collect();
    let match_sets: Vec<MatchSet> = pairs.iter().map(|p| p.matches.clone()).collect();
    let tracks = build_tracks(&match_sets, features);
    log::info!("{} tracks from {} verified pairs", tracks.len(), pairs.len());

    let mut order: Vec<&VerifiedPair> = pairs.iter().collect();
    order.sort_by(|a, b| {
        b.relative
            .inlier_count
            .cmp(&a.relative.inlier_count)
            .then((a.matches.image_i, a.matches.image_j).cmp(&(b.matches.image_i, b.matches.image_j)))
    });
    let seed = order
        .iter()
        .find(|p| {
            median_parallax_deg(p, by_id[&p.matches.image_i], by_id[&p.matches.image_j], intr)
                >= config.seed_pair_min_parallax_deg
        })
        .ok_or_else(|| {
            ReconstructError::Failed("no image pair with enough inliers and parallax to start from".into())
        })?;
    let (a, b) = (seed.matches.image_i, seed.matches.image_j);

    let mut inc =
        Incremental { rec: Reconstruction::new(*intr), intr: *intr, config, by_image: HashMap::new(), bundle_runs: 0 };
    inc.rec.tracks = tracks;
    inc.rec.reference_image = Some(a);
    inc.rec.cameras.insert(a, Pose::identity());
    inc.rec.cameras.insert(b, seed.relative.pose);
    inc.index_tracks();
    inc.triangulate_new(a);
    if inc.rec.point_count() < 8 {
        return Err(ReconstructError::Failed(format!(
            "seed pair ({a}, {b}) triangulated only {} points",
            inc.rec.point_count()
        )));
    }
    inc.bundle(config.ba_intermediate_iterations);
    inc.cull();

    let all_images: Vec<u32> = features.iter().map(|f| f.0).collect();
    let mut failed_at: HashMap<u32, usize> = HashMap::new();
    let mut since_ba = 0;
    let resection = config.resection();
    loop {
        let mut best: Option<(u32, usize)> = None;
        for &img in &all_images {
            if inc.rec.cameras.contains_key(&img) {
                continue;
            }
            let count = inc
                .by_image
                .get(&img)
                .map_or(0, |ks| ks.iter().filter(|&&k| inc.rec.tracks[k].point.is_some()).count());
            if count < config.min_resection_inliers {
                continue;
            }
            // retry a failed image only once it has noticeably more support
            if failed_at.get(&img).is_some_and(|&c| count < c + c / 5 + 1) {
                continue;
            }
            if best.is_none_or(|b| count > b.1) {
                best = Some((img, count));
            }
        }
        let Some((img, count)) = best else { break };
        let (idx, world, pixels) = inc.correspondences(img);
        let params = crate::geometry::ResectionParams {
            ransac: resection.ransac.for_stream((1u64 << 40) | img as u64),
            ..resection
        };
        match resect(&world, &pixels, intr, &params) {
            Ok(res) => {
                inc.rec.cameras.insert(img, res.pose);
                for (&k, &inlier) in idx.iter().zip(&res.inliers) {
                    if !inlier {
                        inc.rec.tracks[k].observations.retain(|o| o.image != img);
                    }
                }
                inc.index_tracks();
                inc.triangulate_new(img);
                log::debug!("registered image {img} from {count} correspondences ({} inliers)", res.inlier_count);
                since_ba += 1;
                if since_ba >= config.ba_every {
                    inc.bundle(config.ba_intermediate_iterations);
                    inc.cull();
                    since_ba = 0;
                }
            }
            Err(e) => {
                log::debug!("image {img} not registered yet: {e}");
                failed_at.insert(img, count);
            }
        }
    }

    inc.bundle(config.ba_max_iterations);
    if inc.cull() > 0 {
        inc.bundle(config.ba_max_iterations);
        inc.cull();
    }

    // keep triangulated tracks and only their posed observations
    let mut rec = inc.rec;
    let cameras = rec.cameras.clone();
    rec.tracks.retain_mut(|t| {
        t.observations.retain(|o| cameras.contains_key(&o.image));
        t.point.is_some() && t.observations.len() >= 2
    });
    debug_assert!(rec.tracks.iter().all(Track::has_unique_images));

    let mut report = SfmReport {
        images: all_images.len(),
        registered: rec.cameras.keys().copied().collect(),
        unregistered: all_images.iter().copied().filter(|i| !rec.cameras.contains_key(i)).collect(),
        seed_pair: Some((a, b)),
        bundle_runs: inc.bundle_runs,
        final_rms_px: rec.rms_reprojection_px(),
        ..SfmReport::default()
    };
    log::info!(
        "registered {} of {} images, {} points, rms {:.3} px",
        report.registered.len(),
        report.images,
        rec.point_count(),
        report.final_rms_px
    );

    if gcps.is_empty() {
        report.gcp_note = Some("no GCPs".into());
    } else {
        match align_to_gcps(&rec, gcps, &config.triangulation()) {
            Ok((aligned, alignment)) => {
                log::info!(
                    "aligned to {} GCPs, mean residual {:.4} m",
                    alignment.residuals.len(),
                    alignment.mean_residual_m()
                );
                rec = aligned;
                report.gcp = Some(alignment);
            }
            Err(e) => {
                log::warn!("GCP alignment failed, keeping the arbitrary frame: {e}");
                report.gcp_note = Some(e.to_string());
            }
        }
    }
    Ok((rec, report))
}

/// Share of input images that were registered.
pub fn registered_fraction(report: &SfmReport) -> f64 {
    if report.images == 0 {
        0.0
    } else {
        report.registered.len() as f64 / report.images as f64
    }
}
