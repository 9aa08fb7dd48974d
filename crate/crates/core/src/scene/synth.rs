use std::path::{Path, PathBuf};

use super::{
    export_dataset, generate_scene, image_name, observe_gcps, place_gcps, plan_survey, render_survey, Dataset,
    DatasetFrame, GroundControlPoint, RenderedFrame, SceneDescription, SceneError, SceneParams, SurveyPlan,
};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::imaging::LabelPalette;

/// Everything needed to synthesize one survey dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveySpec {
    pub seed: u64,
    pub scene: SceneParams,
    pub altitude: f64,
    pub overlap_forward: f64,
    pub overlap_side: f64,
    pub gcp_count: usize,
    pub intrinsics: CameraIntrinsics,
}

impl Default for SurveySpec {
    fn default() -> Self {
        Self {
            seed: 42,
            scene: SceneParams::default(),
            altitude: 100.0,
            overlap_forward: 0.85,
            overlap_side: 0.80,
            gcp_count: 6,
            intrinsics: CameraIntrinsics { focal: 800.0, cx: 399.5, cy: 299.5, width: 800, height: 600 },
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSurvey {
    pub scene: SceneDescription,
    pub plan: SurveyPlan,
    pub frames: Vec<RenderedFrame>,
    pub gcps: Vec<GroundControlPoint>,
}

/// Generate the scene, place and paint GCPs, plan the survey, render every
/// frame and record where each GCP is visible.
pub fn synthesize_survey(spec: &SurveySpec) -> Result<SyntheticSurvey, SceneError> {
    let bare = generate_scene(spec.seed, &spec.scene)?;
    let mut gcps = if spec.gcp_count > 0 { place_gcps(&bare, spec.gcp_count, spec.seed)? } else { Vec::new() };
    let scene = bare.with_gcps(&gcps);
    let plan = plan_survey(&scene, spec.altitude, spec.overlap_forward, spec.overlap_side, &spec.intrinsics)?;
    let frames = render_survey(&scene, &plan);
    let views: Vec<(u32, Pose)> = frames.iter().map(|f| (f.image_id, f.pose)).collect();
    observe_gcps(&mut gcps, &scene, &views, &spec.intrinsics);
    Ok(SyntheticSurvey { scene, plan, frames, gcps })
}

impl SyntheticSurvey {
    /// The in-memory equivalent of exporting and reloading the dataset.
    pub fn to_dataset(&self) -> Dataset {
        Dataset {
            root: PathBuf::new(),
            intrinsics: Some(self.plan.intrinsics),
            frames: self
                .frames
                .iter()
                .map(|f| DatasetFrame {
                    id: f.image_id,
                    name: image_name(f.image_id),
                    rgb: f.rgb.clone(),
                    labels: f.labels.clone(),
                })
                .collect(),
            gcps: self.gcps.clone(),
        }
    }

    pub fn export(&self, dir: &Path, palette: &LabelPalette) -> Result<(), SceneError> {
        export_dataset(dir, &self.frames, &self.gcps, &self.plan.intrinsics, palette)
    }
}
