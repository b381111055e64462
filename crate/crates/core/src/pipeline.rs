//! End-to-end annotation: frames and poses in, semantic and cost grids out.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bki::BkiConfig;
use crate::costmap::{apply_step_mask, map_semantics_to_cost, CostMappingTable, DEFAULT_GROUND_BAND};
use crate::geomfeat::{build_elevation_map, compute_features, ElevationMap, GeomFeatures, NeighborhoodSpec};
use crate::grid::{GridConfig, VoxelGrid};
use crate::ingest::{aggregate_frames, count_votes, fov_mask, grid_from_votes, CameraModel, LabelRemap, PointCloudFrame, Pose};
use crate::labels::{default_ground_classes, LabelSet, LabelSpace, SemanticLabel};
use crate::mobility::{compute_step_mask, MaskStats, MaskThresholds, Overhead, StepMask, VehicleParams};
use crate::{Error, Result};

pub const DEFAULT_FRAME_WINDOW: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestOptions {
    /// Frames on each side of the key frame.
    pub frame_window: usize,
    /// Poses map world → sensor and must be inverted before use.
    pub invert_poses: bool,
    pub ground_classes: LabelSet,
    /// Unmapped raw label ids are errors instead of void.
    pub strict_labels: bool,
    /// Raw label id → class name; identity when absent.
    pub label_map: Option<BTreeMap<String, String>>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            frame_window: DEFAULT_FRAME_WINDOW,
            invert_poses: false,
            ground_classes: default_ground_classes(),
            strict_labels: false,
            label_map: None,
        }
    }
}

impl IngestOptions {
    pub fn remap(&self) -> Result<LabelRemap> {
        match &self.label_map {
            None => Ok(LabelRemap::identity()),
            Some(m) => LabelRemap::from_names(m),
        }
    }
}

/// Every tunable of the pipeline, loaded and validated as one unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub grid: GridConfig,
    pub neighborhood: NeighborhoodSpec,
    pub vehicle: VehicleParams,
    pub cost_table: CostMappingTable,
    pub bki: BkiConfig,
    pub ingest: IngestOptions,
    pub ground_band_m: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            grid: GridConfig::default(),
            neighborhood: NeighborhoodSpec::default(),
            vehicle: VehicleParams::default(),
            cost_table: CostMappingTable::default(),
            bki: BkiConfig::default(),
            ingest: IngestOptions::default(),
            ground_band_m: DEFAULT_GROUND_BAND,
        }
    }
}

impl PipelineConfig {
    /// Parses and validates; any violation rejects the whole config.
    pub fn from_json(json: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-component checks not covered by the component constructors.
    pub fn validate(&self) -> Result<()> {
        self.neighborhood.check_cell_size(self.grid.voxel_size())?;
        MaskThresholds::for_vehicle(&self.vehicle)?;
        if !(self.ground_band_m >= 0.0 && self.ground_band_m.is_finite()) {
            return Err(Error::Config(format!(
                "ground band must be non-negative, got {}",
                self.ground_band_m
            )));
        }
        if self.ingest.ground_classes.is_empty() {
            return Err(Error::Config("ground class set is empty".into()));
        }
        if self.ingest.ground_classes.contains(SemanticLabel::Void) {
            return Err(Error::Config("void cannot be a ground class".into()));
        }
        self.ingest.remap()?;
        Ok(())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationStats {
    pub frames: usize,
    pub points: usize,
    pub votes_in_range: u64,
    pub occupied_voxels: usize,
    pub valid_ground_cells: usize,
    pub max_step_height_m: f64,
    pub max_trench_width_m: f64,
    pub mask: MaskStats,
    /// Voxels kept by the camera mask, when one was applied.
    pub fov_voxels: Option<usize>,
    /// Cost grid voxel count per cost class name.
    pub cost_histogram: BTreeMap<String, usize>,
}

#[derive(Clone, Debug)]
pub struct Annotation {
    pub semantic: VoxelGrid,
    pub cost: VoxelGrid,
    pub elevation: ElevationMap,
    pub features: GeomFeatures,
    pub mask: StepMask,
    pub stats: AnnotationStats,
}

fn histogram(g: &VoxelGrid) -> BTreeMap<String, usize> {
    let mut counts = [0usize; 256];
    for &id in g.labels() {
        counts[id as usize] += 1;
    }
    g.space()
        .ids()
        .map(|id| (g.space().name_of(id).unwrap_or("?").to_owned(), counts[id as usize]))
        .collect()
}

/// Runs the annotation pipeline on a frame window.
///
/// All frames are carried into the coordinates of `frames[key]`. The camera
/// mask, when given, is applied last and marks both grids `unknown` outside
/// the image.
pub fn annotate(
    frames: &[PointCloudFrame],
    poses: &[Pose],
    key: usize,
    camera: Option<&CameraModel>,
    cfg: &PipelineConfig,
) -> Result<Annotation> {
    let inverted: Vec<Pose>;
    let poses = if cfg.ingest.invert_poses {
        inverted = poses.iter().map(Pose::inverse).collect();
        &inverted
    } else {
        poses
    };
    let cloud = aggregate_frames(frames, poses, key)?;
    let votes = count_votes(&cloud, &cfg.grid)?;
    let semantic = grid_from_votes(&votes, &cfg.grid);

    let elevation = build_elevation_map(&cloud, &cfg.grid, &cfg.ingest.ground_classes)?;
    let features = compute_features(&elevation, &cfg.neighborhood)?;
    let overhead = Overhead {
        semantic: &semantic,
        ground_classes: &cfg.ingest.ground_classes,
    };
    let mask = compute_step_mask(&features, &elevation, &cfg.vehicle, Some(overhead))?;
    let cost = map_semantics_to_cost(&semantic, &cfg.cost_table)?;
    let cost = apply_step_mask(&cost, &mask, &elevation, cfg.ground_band_m)?;

    let (semantic, cost, fov_voxels) = match camera {
        Some(cam) => {
            let s = fov_mask(&semantic, cam);
            let c = fov_mask(&cost, cam);
            let kept = s.labels().iter().filter(|&&id| id != crate::labels::UNKNOWN_ID).count();
            (s, c, Some(kept))
        }
        None => (semantic, cost, None),
    };
    debug_assert_eq!(cost.space(), LabelSpace::Cost);

    let th = MaskThresholds::for_vehicle(&cfg.vehicle)?;
    let stats = AnnotationStats {
        frames: frames.len(),
        points: cloud.len(),
        votes_in_range: votes.total(),
        occupied_voxels: semantic.occupied_count(),
        valid_ground_cells: elevation.valid_count(),
        max_step_height_m: th.max_step,
        max_trench_width_m: th.max_trench,
        mask: mask.stats(),
        fov_voxels,
        cost_histogram: histogram(&cost),
    };
    Ok(Annotation {
        semantic,
        cost,
        elevation,
        features,
        mask,
        stats,
    })
}
