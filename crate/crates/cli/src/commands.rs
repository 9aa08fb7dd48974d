use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use semantic_sfm::imaging::{read_label_pgm, read_ppm};
use semantic_sfm::io::{decode_ply, encode_ply, write_report, PlyCloud, PlyEncoding, ReconstructionStats};
use semantic_sfm::reconstruct::{
    filter_points, ingest_external_cloud, parse_visibility, run_sfm, Frame, ReconstructError, SfmReport,
};
use semantic_sfm::scene::{
    load_dataset, parse_camera, parse_poses, poses_to_text, synthesize_survey, SceneError, SceneParams, SurveySpec,
};
use semantic_sfm::semantics::{confidence_filter, label_reconstruction, label_tracks, OobVotes};
use semantic_sfm::{CameraIntrinsics, LabelImage, LabelPalette, PipelineConfig, Pose, RgbImage, VERSION};

use crate::staging::{write_file, StagedDir};
use crate::{CliError, FilterArgs, LabelArgs, ReportArgs, SfmArgs, SynthArgs};

const SEED_ENV: &str = "SEMANTIC_SFM_SEED";
const DEFAULT_SEED: u64 = 42;

fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| CliError::Usage(format!("{SEED_ENV}: '{v}' is not a seed"))),
        Err(_) => Ok(None),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn parse_encoding(s: &str) -> Result<PlyEncoding, CliError> {
    s.parse().map_err(|e| CliError::Usage(format!("--encoding: {e}")))
}

fn scene_error(e: SceneError) -> CliError {
    match e {
        SceneError::InvalidParameter(m) => CliError::Usage(m),
        other => CliError::Data(other.to_string()),
    }
}

fn read_cloud(path: &Path) -> Result<PlyCloud, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    decode_ply(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let seed = match a.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(DEFAULT_SEED),
    };
    let positive = |flag: &str, v: f64| {
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(CliError::Usage(format!("{flag} must be positive, got {v}")))
        }
    };
    positive("--extent", a.extent)?;
    positive("--altitude", a.altitude)?;
    positive("--focal", a.focal)?;
    for (flag, v) in [("--overlap-fwd", a.overlap_fwd), ("--overlap-side", a.overlap_side)] {
        if !(0.0..1.0).contains(&v) {
            return Err(CliError::Usage(format!("{flag} must be in [0, 1), got {v}")));
        }
    }
    if a.width < 2 || a.height < 2 {
        return Err(CliError::Usage(format!("--width and --height must be at least 2, got {}x{}", a.width, a.height)));
    }
    let intrinsics =
        CameraIntrinsics::centered(a.focal, a.width, a.height).map_err(|e| CliError::Usage(e.to_string()))?;
    let spec = SurveySpec {
        seed,
        scene: SceneParams { extent: a.extent, tree_count: a.trees, bush_count: a.bushes, ..SceneParams::default() },
        altitude: a.altitude,
        overlap_forward: a.overlap_fwd,
        overlap_side: a.overlap_side,
        gcp_count: a.gcps,
        intrinsics,
    };
    let survey = synthesize_survey(&spec).map_err(scene_error)?;
    let stage = StagedDir::new(&a.out)?;
    survey.export(stage.path(), &LabelPalette::forest()).map_err(scene_error)?;
    let plan = &survey.plan;
    let mut info = String::new();
    let _ = writeln!(info, "generator semantic-sfm {VERSION}");
    for (k, v) in [
        ("seed", seed.to_string()),
        ("trees", a.trees.to_string()),
        ("bushes", a.bushes.to_string()),
        ("extent", a.extent.to_string()),
        ("altitude", a.altitude.to_string()),
        ("overlap_fwd", a.overlap_fwd.to_string()),
        ("overlap_side", a.overlap_side.to_string()),
        ("gcps", survey.gcps.len().to_string()),
        ("flight_lines", plan.lines.to_string()),
        ("images_per_line", plan.per_line.to_string()),
        ("images", survey.frames.len().to_string()),
        ("footprint_forward_m", plan.footprint_forward.to_string()),
        ("footprint_side_m", plan.footprint_side.to_string()),
    ] {
        let _ = writeln!(info, "{k} {v}");
    }
    fs::write(stage.path().join("survey.txt"), &info).map_err(|e| CliError::Data(e.to_string()))?;
    stage.commit()?;
    println!(
        "wrote {} images ({} lines x {}) and {} GCPs to {}",
        survey.frames.len(),
        plan.lines,
        plan.per_line,
        survey.gcps.len(),
        a.out.display()
    );
    Ok(())
}

fn resolve_config(a: &SfmArgs) -> Result<PipelineConfig, CliError> {
    let mut cfg = PipelineConfig::default();
    if let Some(seed) = env_seed()? {
        cfg.seed = seed;
    }
    if let Some(path) = &a.config {
        cfg.apply_text(&read_text(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    }
    for kv in &a.set {
        let (k, v) =
            kv.split_once('=').ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim()).map_err(|e| CliError::Usage(format!("--set: {e}")))?;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if a.no_semantic_filter {
        cfg.semantic_filter = false;
    }
    if a.no_gcp {
        cfg.use_gcps = false;
    }
    cfg.validate().map_err(|e| CliError::Usage(format!("config: {e}")))?;
    Ok(cfg)
}

fn provenance(cfg: &PipelineConfig) -> Vec<String> {
    let mut out = vec![format!("generator semantic-sfm {VERSION}"), format!("config_hash {}", cfg.hash())];
    out.extend(cfg.to_text().lines().map(|l| format!("config {l}")));
    out
}

fn pair_stats_csv(report: &SfmReport) -> String {
    let mut out = String::from(
        "image_i,image_j,putative,verified_input,semantic_filter_applied,inliers,inlier_fraction,accepted\n",
    );
    for p in &report.pair_stats {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            p.image_i,
            p.image_j,
            p.putative,
            p.verified_input,
            p.semantic_filter_applied,
            p.inliers,
            p.inlier_fraction(),
            p.accepted
        );
    }
    out
}

pub fn sfm(a: &SfmArgs) -> Result<(), CliError> {
    let cfg = resolve_config(a)?;
    let encoding = parse_encoding(&a.encoding)?;
    if a.bins == 0 {
        return Err(CliError::Usage("--bins must be at least 1".into()));
    }
    let palette = LabelPalette::forest();
    let dataset = load_dataset(&a.dataset, &palette).map_err(scene_error)?;
    if dataset.frames.is_empty() {
        return Err(CliError::Data(format!("{}: no images found", a.dataset.display())));
    }
    let out = run_sfm(&dataset, &cfg).map_err(|e| match e {
        ReconstructError::InvalidInput(m) => CliError::Data(m),
        other => CliError::Reconstruction(other.to_string()),
    })?;
    let (rec, report) = (out.reconstruction, out.report);
    let (filtered, filter_report) = filter_points(&rec, &cfg.filter());
    let labels: BTreeMap<u32, LabelImage> = dataset.frames.iter().map(|f| (f.id, f.labels.clone())).collect();
    let images: BTreeMap<u32, RgbImage> = dataset.frames.iter().map(|f| (f.id, f.rgb.clone())).collect();
    let (points, labeling) = label_reconstruction(&filtered, &labels, Some(&images), cfg.oob_votes)
        .map_err(|e| CliError::Data(e.to_string()))?;

    let mut comments = provenance(&cfg);
    comments.push(format!("frame {}", if filtered.frame == Frame::GcpAligned { "gcp_aligned" } else { "arbitrary" }));
    let cloud = PlyCloud::new(points, comments);
    let mut stats = ReconstructionStats::from_run(&filtered, &report, cloud.points.len());
    stats.notes.push(("config_hash".into(), cfg.hash()));
    stats.notes.push(("removed_reprojection".into(), filter_report.removed_reprojection.to_string()));
    stats.notes.push(("removed_statistical".into(), filter_report.removed_statistical.to_string()));
    stats.notes.push(("dropped_behind_camera".into(), labeling.dropped_behind.to_string()));
    let unregistered: Vec<String> = report.unregistered.iter().map(|id| id.to_string()).collect();
    stats
        .notes
        .push(("unregistered".into(), if unregistered.is_empty() { "none".into() } else { unregistered.join(",") }));
    if let Some(note) = &report.gcp_note {
        stats.notes.push(("gcp_note".into(), note.replace('\n', " ")));
    }

    let stage = StagedDir::new(&a.out)?;
    let dir = stage.path();
    let write =
        |name: &str, bytes: &[u8]| fs::write(dir.join(name), bytes).map_err(|e| CliError::Data(format!("{name}: {e}")));
    write("cloud.ply", &encode_ply(&cloud, encoding))?;
    write("config.txt", format!("# hash {}\n{}", cfg.hash(), cfg.to_text()).as_bytes())?;
    write("tracks.txt", filtered.tracks_to_text().as_bytes())?;
    let names: BTreeMap<u32, &str> = dataset.frames.iter().map(|f| (f.id, f.name.as_str())).collect();
    let cams: Vec<(String, Pose)> = filtered.cameras.iter().map(|(id, p)| (names[id].to_string(), *p)).collect();
    write("cameras.txt", poses_to_text(&cams).as_bytes())?;
    write("pair_stats.csv", pair_stats_csv(&report).as_bytes())?;
    write_report(&cloud.points, Some(&stats), a.bins, &palette, dir).map_err(|e| CliError::Data(e.to_string()))?;
    stage.commit()?;

    println!(
        "registered {}/{} images, {} labeled points, RMS reprojection {:.3} px",
        report.registered.len(),
        report.images,
        cloud.points.len(),
        stats.rms_reprojection_px
    );
    match (stats.mean_gcp_residual_m(), &report.gcp_note) {
        (Some(m), _) => println!("GCP mean residual {m:.4} m over {} GCPs", stats.gcp_residuals.len()),
        (None, Some(note)) => println!("no GCP alignment: {note}"),
        (None, None) => {}
    }
    Ok(())
}

type LabelDir = (BTreeMap<u32, LabelImage>, BTreeMap<String, u32>);

/// Image ids are the sorted order of the `.pgm` names; returns rasters and
/// the id of every file stem.
fn load_label_dir(dir: &Path) -> Result<LabelDir, CliError> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    names.sort();
    let palette = LabelPalette::forest();
    let mut rasters = BTreeMap::new();
    let mut ids = BTreeMap::new();
    for (k, path) in names.iter().enumerate() {
        let img = read_label_pgm(path, &palette).map_err(|e| CliError::Data(e.to_string()))?;
        rasters.insert(k as u32, img);
        ids.insert(stem(path), k as u32);
    }
    Ok((rasters, ids))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn label(a: &LabelArgs) -> Result<(), CliError> {
    let encoding = parse_encoding(&a.encoding)?;
    let oob: OobVotes = a.oob_votes.parse().map_err(|e| CliError::Usage(format!("--oob-votes: {e}")))?;
    let vis_text = read_text(&a.visibility)?;
    let mut rows =
        parse_visibility(&vis_text).map_err(|e| CliError::Data(format!("{}: {e}", a.visibility.display())))?;
    if let Some(path) = &a.cloud {
        let empty = fs::metadata(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?.len() == 0;
        let positions: Vec<_> =
            if empty { Vec::new() } else { read_cloud(path)?.points.iter().map(|p| p.position).collect() };
        if positions.len() != rows.len() {
            return Err(CliError::Data(format!(
                "{} has {} points but {} lists {}",
                path.display(),
                positions.len(),
                a.visibility.display(),
                rows.len()
            )));
        }
        for (row, p) in rows.iter_mut().zip(positions) {
            row.position = p;
        }
    }
    let (labels, ids) = load_label_dir(&a.labels)?;
    let pose_rows = parse_poses(&read_text(&a.poses)?, &a.poses).map_err(scene_error)?;
    let mut poses = BTreeMap::new();
    for (name, pose) in pose_rows {
        match ids.get(&stem(Path::new(&name))) {
            Some(&id) => {
                poses.insert(id, pose);
            }
            None => log::warn!("pose for {name} has no label raster; ignored"),
        }
    }
    let camera_path = a.camera.clone().unwrap_or_else(|| a.poses.with_file_name("camera.txt"));
    let intr = if camera_path.exists() {
        parse_camera(&read_text(&camera_path)?, &camera_path).map_err(scene_error)?
    } else {
        log::warn!("no intrinsics file at {}; using defaults", camera_path.display());
        PipelineConfig::default().intrinsics()
    };
    let tracks = ingest_external_cloud(&rows, &poses, &intr, &labels)
        .map_err(|e| CliError::Data(format!("{}: {e}", a.visibility.display())))?;
    let images = match &a.images {
        Some(dir) => {
            let mut m = BTreeMap::new();
            for (s, &id) in &ids {
                let path = dir.join(format!("{s}.ppm"));
                if path.exists() {
                    m.insert(id, read_ppm(&path).map_err(|e| CliError::Data(e.to_string()))?);
                }
            }
            Some(m)
        }
        None => None,
    };
    let (points, report) = label_tracks(&tracks, &poses, &intr, &labels, images.as_ref(), oob)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let comments = vec![
        format!("generator semantic-sfm {VERSION}"),
        format!("labeled from {}", a.visibility.display()),
        format!("oob_votes {oob}"),
    ];
    write_file(&a.out, &encode_ply(&PlyCloud::new(points, comments), encoding))?;
    println!(
        "labeled {} points, {} without views, {} dropped behind cameras",
        report.labeled, report.unlabeled, report.dropped_behind
    );
    Ok(())
}

pub fn filter(a: &FilterArgs) -> Result<(), CliError> {
    let encoding = parse_encoding(&a.encoding)?;
    if !(0.0..=1.0).contains(&a.tau) {
        return Err(CliError::Usage(format!("--tau must be in [0, 1], got {}", a.tau)));
    }
    let cloud = read_cloud(&a.input)?;
    if !cloud.has_confidence {
        return Err(CliError::Data(format!("{} has no confidence property", a.input.display())));
    }
    let kept = confidence_filter(&cloud.points, a.tau);
    let mut comments = cloud.comments.clone();
    comments.push(format!("confidence_filter tau {}", a.tau));
    let out = PlyCloud { points: kept, comments, has_labels: cloud.has_labels, has_confidence: true };
    write_file(&a.out, &encode_ply(&out, encoding))?;
    println!("kept {} of {} points", out.points.len(), cloud.points.len());
    Ok(())
}

pub fn report(a: &ReportArgs) -> Result<(), CliError> {
    if a.bins == 0 {
        return Err(CliError::Usage("--bins must be at least 1".into()));
    }
    let cloud = read_cloud(&a.input)?;
    if !cloud.has_labels || !cloud.has_confidence {
        log::warn!("{} lacks labels or confidences; they read as 0", a.input.display());
    }
    let stage = StagedDir::new(&a.out)?;
    write_report(&cloud.points, None, a.bins, &LabelPalette::forest(), stage.path())
        .map_err(|e| CliError::Data(e.to_string()))?;
    stage.commit()?;
    println!("reported {} points in {} bins", cloud.points.len(), a.bins);
    Ok(())
}
