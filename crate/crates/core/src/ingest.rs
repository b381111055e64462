//! Loading labeled LiDAR frames and turning a frame window into a semantic
//! voxel grid in the key frame's coordinate system.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::{GridConfig, VoxelGrid};
use crate::labels::{LabelSpace, SemanticLabel, UNKNOWN_ID};
use crate::{Error, Result};

/// Bytes per point record: f32 x, y, z, intensity.
pub const POINT_RECORD_LEN: usize = 16;
/// Tolerance on RᵀR − I and det R − 1.
pub const ROTATION_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub position: Point3<f64>,
    pub intensity: f32,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64, intensity: f32) -> Self {
        Point {
            position: Point3::new(x, y, z),
            intensity,
        }
    }
}

/// One LiDAR sweep with optional per-point semantic ids.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloudFrame {
    points: Vec<Point>,
    labels: Option<Vec<u8>>,
    frame_index: usize,
}

impl PointCloudFrame {
    pub fn new(points: Vec<Point>, labels: Option<Vec<u8>>, frame_index: usize) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != points.len() {
                return Err(Error::LengthMismatch(format!(
                    "{} labels for {} points",
                    l.len(),
                    points.len()
                )));
            }
            if let Some(&bad) = l.iter().find(|&&id| !LabelSpace::Semantic.is_valid(id)) {
                return Err(Error::InvalidLabel {
                    id: bad,
                    space: LabelSpace::Semantic,
                });
            }
        }
        if let Some(p) = points.iter().find(|p| !p.position.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite(format!("{:?}", p.position)));
        }
        Ok(PointCloudFrame {
            points,
            labels,
            frame_index,
        })
    }

    /// Convenience constructor for labeled positions.
    pub fn labeled(points: &[(Point3<f64>, SemanticLabel)], frame_index: usize) -> Result<Self> {
        let (pts, labels) = points
            .iter()
            .map(|(p, l)| (Point { position: *p, intensity: 0.0 }, l.id()))
            .unzip();
        PointCloudFrame::new(pts, Some(labels), frame_index)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Iterates (position, label id) pairs; `None` when the frame is unlabeled.
    pub fn labeled_points(&self) -> Option<impl Iterator<Item = (&Point3<f64>, u8)> + '_> {
        let labels = self.labels.as_ref()?;
        Some(self.points.iter().map(|p| &p.position).zip(labels.iter().copied()))
    }
}

/// Raw dataset label id → semantic class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelRemap {
    table: BTreeMap<u16, SemanticLabel>,
}

impl LabelRemap {
    /// Raw ids 0..=9 are already semantic ids.
    pub fn identity() -> Self {
        LabelRemap {
            table: (0..SemanticLabel::COUNT as u8)
                .filter_map(|id| SemanticLabel::from_id(id).map(|l| (id as u16, l)))
                .collect(),
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (u16, SemanticLabel)>) -> Result<Self> {
        let table: BTreeMap<_, _> = pairs.into_iter().collect();
        if table.values().any(|l| *l == SemanticLabel::Unknown) {
            return Err(Error::Config("raw labels cannot map to `unknown`".into()));
        }
        Ok(LabelRemap { table })
    }

    /// Parses `{ "<raw id>": "<class name>", ... }`.
    pub fn from_json(json: &str) -> Result<Self> {
        let raw: BTreeMap<String, String> = serde_json::from_str(json)?;
        Self::from_names(&raw)
    }

    pub fn from_names(raw: &BTreeMap<String, String>) -> Result<Self> {
        let pairs = raw
            .iter()
            .map(|(k, v)| {
                let id = k
                    .trim()
                    .parse::<u16>()
                    .map_err(|_| Error::Config(format!("raw label id {k:?} is not a u16")))?;
                Ok((id, v.parse::<SemanticLabel>()?))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_pairs(pairs)
    }

    pub fn get(&self, raw: u16) -> Option<SemanticLabel> {
        self.table.get(&raw).copied()
    }

    pub fn to_names(&self) -> BTreeMap<String, String> {
        self.table
            .iter()
            .map(|(k, v)| (k.to_string(), v.name().to_owned()))
            .collect()
    }
}

impl Default for LabelRemap {
    fn default() -> Self {
        LabelRemap::identity()
    }
}

/// Result of decoding one frame.
#[derive(Clone, Debug)]
pub struct FrameLoad {
    pub frame: PointCloudFrame,
    /// Label words whose raw id had no table entry and were mapped to void.
    pub unmapped_labels: usize,
}

/// Decodes a binary point cloud and optional label stream.
///
/// The semantic id is the low 16 bits of each label word; the high bits carry
/// instance ids and are discarded. With `strict`, an unmapped raw id is an
/// error instead of being mapped to void.
pub fn load_frame(
    cloud: &[u8],
    labels: Option<&[u8]>,
    remap: &LabelRemap,
    strict: bool,
    frame_index: usize,
) -> Result<FrameLoad> {
    if cloud.len() % POINT_RECORD_LEN != 0 {
        return Err(Error::LengthMismatch(format!(
            "cloud stream of {} bytes is not a multiple of {POINT_RECORD_LEN}",
            cloud.len()
        )));
    }
    let points: Vec<Point> = cloud
        .chunks_exact(POINT_RECORD_LEN)
        .map(|rec| {
            let f = |o: usize| f32::from_le_bytes(rec[o..o + 4].try_into().unwrap()) as f64;
            Point::new(f(0), f(4), f(8), f(12) as f32)
        })
        .collect();

    let mut unmapped = 0usize;
    let labels = match labels {
        None => None,
        Some(raw) => {
            if raw.len() != points.len() * 4 {
                return Err(Error::LengthMismatch(format!(
                    "label stream of {} bytes for {} points (expected {})",
                    raw.len(),
                    points.len(),
                    points.len() * 4
                )));
            }
            let mut ids = Vec::with_capacity(points.len());
            for word in raw.chunks_exact(4) {
                let word = u32::from_le_bytes(word.try_into().unwrap());
                let sem = (word & 0xFFFF) as u16;
                match remap.get(sem) {
                    Some(l) => ids.push(l.id()),
                    None if strict => return Err(Error::UnmappedLabel(sem as u32)),
                    None => {
                        unmapped += 1;
                        ids.push(SemanticLabel::Void.id());
                    }
                }
            }
            Some(ids)
        }
    };
    Ok(FrameLoad {
        frame: PointCloudFrame::new(points, labels, frame_index)?,
        unmapped_labels: unmapped,
    })
}

/// Rigid transform `p ↦ R·p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if !(ortho <= ROTATION_TOL && (det - 1.0).abs() <= ROTATION_TOL) {
            return Err(Error::Config(format!(
                "rotation is not proper orthonormal (|RᵀR−I|max = {ortho:.3e}, det = {det})"
            )));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("translation {translation:?}")));
        }
        Ok(Pose {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Parses 12 row-major values of a 3×4 `[R | t]` matrix.
    pub fn from_row_major_3x4(v: &[f64]) -> Result<Self> {
        if v.len() != 12 {
            return Err(Error::LengthMismatch(format!("{} values for a 3×4 pose", v.len())));
        }
        let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        Pose::new(r, Vector3::new(v[3], v[7], v[11]))
    }

    /// Parses a row-major homogeneous 4×4 matrix; the last row must be 0 0 0 1.
    pub fn from_homogeneous(m: &Matrix4<f64>) -> Result<Self> {
        let last = m.row(3);
        if (last[0].abs() + last[1].abs() + last[2].abs() + (last[3] - 1.0).abs()) > ROTATION_TOL {
            return Err(Error::Config(format!("4×4 transform has last row {last}")));
        }
        Pose::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn transform(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }
}

/// Parses a pose file: one frame per line, 12 whitespace-separated values.
/// Blank lines are skipped.
pub fn parse_poses(text: &str) -> Result<Vec<Pose>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let values = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Config(format!("pose line {}: {e}", n + 1)))?;
            Pose::from_row_major_3x4(&values).map_err(|e| match e {
                Error::Config(m) | Error::LengthMismatch(m) => {
                    Error::Config(format!("pose line {}: {m}", n + 1))
                }
                other => other,
            })
        })
        .collect()
}

/// Pin-hole camera with an ego→camera extrinsic. Camera frame: z forward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub extrinsic: Pose,
}

#[derive(Serialize, Deserialize)]
struct CalibrationJson {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    extrinsic: [[f64; 4]; 4],
}

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        extrinsic: Pose,
    ) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::Config(format!("focal lengths must be positive, got {fx}, {fy}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::Config("image size must be at least 1×1".into()));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::Config("principal point must be finite".into()));
        }
        Ok(CameraModel {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            extrinsic,
        })
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let c: CalibrationJson = serde_json::from_str(json)?;
        let m = Matrix4::from_fn(|r, col| c.extrinsic[r][col]);
        CameraModel::new(c.fx, c.fy, c.cx, c.cy, c.width, c.height, Pose::from_homogeneous(&m)?)
    }

    pub fn to_json(&self) -> String {
        let m = self.extrinsic;
        let mut ext = [[0.0; 4]; 4];
        for (r, row) in ext.iter_mut().enumerate().take(3) {
            for (c, v) in row.iter_mut().enumerate().take(3) {
                *v = m.rotation[(r, c)];
            }
            row[3] = m.translation[r];
        }
        ext[3][3] = 1.0;
        serde_json::to_string_pretty(&CalibrationJson {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            extrinsic: ext,
        })
        .expect("calibration serializes")
    }

    /// Pixel coordinates of an ego-frame point, `None` when it is at or
    /// behind the camera plane.
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64)> {
        let c = self.extrinsic.transform(p);
        (c.z > 0.0).then(|| (self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy))
    }

    pub fn sees(&self, p: &Point3<f64>) -> bool {
        self.project(p).is_some_and(|(u, v)| {
            u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64
        })
    }
}

/// Maps every frame into the coordinate system of `frames[reference]`.
///
/// Each pose maps its frame into a shared world frame, so frame i is carried
/// by `pose[reference]⁻¹ ∘ pose[i]`. Output labels are present only when all
/// inputs are labeled.
pub fn aggregate_frames(
    frames: &[PointCloudFrame],
    poses: &[Pose],
    reference: usize,
) -> Result<PointCloudFrame> {
    if frames.len() != poses.len() {
        return Err(Error::LengthMismatch(format!(
            "{} poses for {} frames",
            poses.len(),
            frames.len()
        )));
    }
    if reference >= frames.len() {
        return Err(Error::Domain(format!(
            "reference frame {reference} outside window of {} frames",
            frames.len()
        )));
    }
    let to_ref = poses[reference].inverse();
    let moved: Vec<Vec<Point>> = frames
        .par_iter()
        .zip(poses.par_iter())
        .enumerate()
        .map(|(i, (frame, pose))| {
            if i == reference {
                return frame.points.clone();
            }
            let rel = to_ref.compose(pose);
            frame
                .points
                .iter()
                .map(|p| Point {
                    position: rel.transform(&p.position),
                    intensity: p.intensity,
                })
                .collect()
        })
        .collect();

    let all_labeled = frames.iter().all(|f| f.labels.is_some());
    let labels = all_labeled.then(|| {
        frames
            .iter()
            .flat_map(|f| f.labels.as_ref().unwrap().iter().copied())
            .collect()
    });
    Ok(PointCloudFrame {
        points: moved.into_iter().flatten().collect(),
        labels,
        frame_index: frames[reference].frame_index,
    })
}

/// Per-voxel label vote tallies, sorted by (voxel, label).
#[derive(Clone, Debug, Default)]
pub struct Votes {
    /// (linear voxel index, label id, count)
    tallies: Vec<(usize, u8, u32)>,
}

impl Votes {
    pub fn total(&self) -> u64 {
        self.tallies.iter().map(|t| t.2 as u64).sum()
    }

    pub fn tallies(&self) -> &[(usize, u8, u32)] {
        &self.tallies
    }
}

/// Counts one vote per in-range labeled point.
pub fn count_votes(cloud: &PointCloudFrame, cfg: &GridConfig) -> Result<Votes> {
    let labels = cloud
        .labels
        .as_ref()
        .ok_or_else(|| Error::Config("voxelization needs a labeled cloud".into()))?;
    let mut keys: Vec<u64> = cloud
        .points
        .par_iter()
        .zip(labels.par_iter())
        .filter_map(|(p, &l)| {
            let idx = cfg.world_to_index(&p.position)?;
            Some(((cfg.linear(idx) as u64) << 8) | l as u64)
        })
        .collect();
    keys.par_sort_unstable();

    let mut tallies: Vec<(usize, u8, u32)> = Vec::new();
    for key in keys {
        let (voxel, label) = ((key >> 8) as usize, (key & 0xFF) as u8);
        match tallies.last_mut() {
            Some(last) if last.0 == voxel && last.1 == label => last.2 += 1,
            _ => tallies.push((voxel, label, 1)),
        }
    }
    Ok(Votes { tallies })
}

/// Majority vote per voxel among non-void points; ties go to the smallest
/// class id. Voxels without non-void votes stay empty.
pub fn voxelize_semantic(cloud: &PointCloudFrame, cfg: &GridConfig) -> Result<VoxelGrid> {
    let votes = count_votes(cloud, cfg)?;
    Ok(grid_from_votes(&votes, cfg))
}

pub fn grid_from_votes(votes: &Votes, cfg: &GridConfig) -> VoxelGrid {
    let mut grid = VoxelGrid::empty(*cfg, LabelSpace::Semantic);
    let labels = grid.labels_mut();
    let mut best: Option<(usize, u8, u32)> = None;
    let flush = |b: Option<(usize, u8, u32)>, labels: &mut [u8]| {
        if let Some((voxel, label, _)) = b {
            labels[voxel] = label;
        }
    };
    for &(voxel, label, count) in &votes.tallies {
        if label == SemanticLabel::Void.id() || label == UNKNOWN_ID {
            continue;
        }
        match best {
            Some(b) if b.0 == voxel => {
                // Tallies are sorted by label within a voxel, so a strict
                // comparison keeps the smallest id among equal counts.
                if count > b.2 {
                    best = Some((voxel, label, count));
                }
            }
            _ => {
                flush(best, labels);
                best = Some((voxel, label, count));
            }
        }
    }
    flush(best, labels);
    grid
}

/// Marks every voxel whose center does not project into the image as unknown.
pub fn fov_mask(grid: &VoxelGrid, cam: &CameraModel) -> VoxelGrid {
    let cfg = *grid.config();
    let labels: Vec<u8> = grid
        .labels()
        .par_iter()
        .enumerate()
        .map(|(lin, &id)| {
            if cam.sees(&cfg.center_unchecked(cfg.unravel(lin))) {
                id
            } else {
                UNKNOWN_ID
            }
        })
        .collect();
    VoxelGrid::from_labels(cfg, grid.space(), labels).expect("labels unchanged or unknown")
}

/// Number of voxels a FOV mask would keep.
pub fn fov_visible_count(cfg: &GridConfig, cam: &CameraModel) -> usize {
    (0..cfg.len())
        .into_par_iter()
        .filter(|&lin| cam.sees(&cfg.center_unchecked(cfg.unravel(lin))))
        .count()
}
