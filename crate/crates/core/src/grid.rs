//! Voxel grid geometry and dense label storage.
//!
//! Voxels are half-open cubes `[origin + i·size, origin + (i+1)·size)` per
//! axis. Labels are stored one byte per voxel with z varying fastest, then y,
//! then x (`linear = (x·ny + y)·nz + z`), so every (x, y) column is a
//! contiguous slice.

use std::ops::Range;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::labels::{LabelSpace, EMPTY_ID, UNKNOWN_ID};
use crate::{Error, Result};

/// Relative coordinates within this many cells of a face snap onto it, so
/// that e.g. 38.4 / 0.2 = 191.99999999999997 resolves to the face at 192.
const FACE_SNAP: f64 = 1e-9;

/// Geometry of a regular voxel lattice.
///
/// Origin and voxel size are kept at single precision (then widened) because
/// the on-disk header stores them as `f32`; this makes every config survive a
/// write/read cycle unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridConfigRepr", into = "GridConfigRepr")]
pub struct GridConfig {
    origin: [f64; 3],
    dims: [usize; 3],
    voxel_size: f64,
}

#[derive(Serialize, Deserialize)]
struct GridConfigRepr {
    origin: [f64; 3],
    dims: [usize; 3],
    voxel_size: f64,
}

impl TryFrom<GridConfigRepr> for GridConfig {
    type Error = Error;

    fn try_from(r: GridConfigRepr) -> Result<Self> {
        GridConfig::new(r.origin, r.dims, r.voxel_size)
    }
}

impl From<GridConfig> for GridConfigRepr {
    fn from(c: GridConfig) -> Self {
        GridConfigRepr {
            origin: c.origin,
            dims: c.dims,
            voxel_size: c.voxel_size,
        }
    }
}

/// Widens an `f32` to the `f64` with the same shortest decimal form, so
/// 0.2f32 becomes 0.2 rather than 0.20000000298023224.
pub(crate) fn widen_f32(v: f32) -> f64 {
    v.to_string().parse().unwrap_or(v as f64)
}

fn snap_to_f32(v: f64) -> f64 {
    widen_f32(v as f32)
}

impl GridConfig {
    pub fn new(origin: [f64; 3], dims: [usize; 3], voxel_size: f64) -> Result<Self> {
        if !(voxel_size.is_finite() && voxel_size > 0.0) {
            return Err(Error::Config(format!(
                "voxel size must be positive and finite, got {voxel_size}"
            )));
        }
        if dims.contains(&0) {
            return Err(Error::Config(format!("all grid dims must be >= 1, got {dims:?}")));
        }
        if dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::Config(format!("grid dims {dims:?} exceed u32 range")));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Config(format!("grid dims {dims:?} overflow")))?;
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Config(format!("grid origin must be finite, got {origin:?}")));
        }
        let voxel_size = snap_to_f32(voxel_size);
        if voxel_size <= 0.0 {
            return Err(Error::Config("voxel size underflows single precision".into()));
        }
        Ok(GridConfig {
            origin: origin.map(snap_to_f32),
            dims,
            voxel_size,
        })
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    /// Total voxel count.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Upper (excluded) bound per axis.
    pub fn upper(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] + self.dims[a] as f64 * self.voxel_size)
    }

    fn axis_index(&self, axis: usize, coord: f64) -> Option<usize> {
        let t = (coord - self.origin[axis]) / self.voxel_size;
        if !t.is_finite() {
            return None;
        }
        let nearest = t.round();
        let t = if (t - nearest).abs() <= FACE_SNAP { nearest } else { t };
        let cell = t.floor();
        (cell >= 0.0 && cell < self.dims[axis] as f64).then_some(cell as usize)
    }

    /// Index of the voxel containing `p`, or `None` when `p` is outside the
    /// half-open grid box.
    pub fn world_to_index(&self, p: &Point3<f64>) -> Option<[usize; 3]> {
        Some([
            self.axis_index(0, p.x)?,
            self.axis_index(1, p.y)?,
            self.axis_index(2, p.z)?,
        ])
    }

    /// Index of the (x, y) column containing the horizontal position.
    pub fn world_to_column(&self, x: f64, y: f64) -> Option<[usize; 2]> {
        Some([self.axis_index(0, x)?, self.axis_index(1, y)?])
    }

    /// Voxel layer along z containing height `z`.
    pub fn z_to_layer(&self, z: f64) -> Option<usize> {
        self.axis_index(2, z)
    }

    pub fn index_to_center(&self, i: [usize; 3]) -> Result<Point3<f64>> {
        self.check_index(i)?;
        Ok(self.center_unchecked(i))
    }

    pub(crate) fn center_unchecked(&self, i: [usize; 3]) -> Point3<f64> {
        let c = |a: usize| self.origin[a] + (i[a] as f64 + 0.5) * self.voxel_size;
        Point3::new(c(0), c(1), c(2))
    }

    /// Center of layer `k` along z.
    pub fn layer_center_z(&self, k: usize) -> f64 {
        self.origin[2] + (k as f64 + 0.5) * self.voxel_size
    }

    /// Horizontal center of column (ix, iy).
    pub fn column_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.origin[0] + (ix as f64 + 0.5) * self.voxel_size,
            self.origin[1] + (iy as f64 + 0.5) * self.voxel_size,
        )
    }

    pub fn check_index(&self, i: [usize; 3]) -> Result<()> {
        if (0..3).all(|a| i[a] < self.dims[a]) {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                index: i,
                dims: self.dims,
            })
        }
    }

    pub fn linear(&self, i: [usize; 3]) -> usize {
        (i[0] * self.dims[1] + i[1]) * self.dims[2] + i[2]
    }

    pub fn unravel(&self, lin: usize) -> [usize; 3] {
        let nz = self.dims[2];
        let ny = self.dims[1];
        [lin / (ny * nz), (lin / nz) % ny, lin % nz]
    }

    /// Linear index range of column (ix, iy).
    pub fn column(&self, ix: usize, iy: usize) -> Range<usize> {
        let start = self.linear([ix, iy, 0]);
        start..start + self.dims[2]
    }

    /// Same lattice in x and y.
    pub fn same_columns(&self, other: &GridConfig) -> bool {
        self.dims[0] == other.dims[0]
            && self.dims[1] == other.dims[1]
            && self.voxel_size == other.voxel_size
            && self.origin[0] == other.origin[0]
            && self.origin[1] == other.origin[1]
    }
}

impl Default for GridConfig {
    /// 38.4 m × 51.2 m × 8 m forward-facing volume at 0.2 m resolution.
    fn default() -> Self {
        GridConfig::new([0.0, -25.6, -2.0], [192, 256, 40], 0.2).expect("valid default grid")
    }
}

/// Dense voxel grid of label ids in one label space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VoxelGrid {
    config: GridConfig,
    space: LabelSpace,
    labels: Vec<u8>,
}

impl Eq for GridConfig {}

impl VoxelGrid {
    pub fn filled(config: GridConfig, space: LabelSpace, id: u8) -> Result<Self> {
        if !space.is_valid(id) {
            return Err(Error::InvalidLabel { id, space });
        }
        Ok(VoxelGrid {
            config,
            space,
            labels: vec![id; config.len()],
        })
    }

    /// All voxels empty.
    pub fn empty(config: GridConfig, space: LabelSpace) -> Self {
        VoxelGrid {
            config,
            space,
            labels: vec![EMPTY_ID; config.len()],
        }
    }

    pub fn from_labels(config: GridConfig, space: LabelSpace, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != config.len() {
            return Err(Error::LengthMismatch(format!(
                "{} labels for a grid of {} voxels",
                labels.len(),
                config.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&id| !space.is_valid(id)) {
            return Err(Error::InvalidLabel { id: bad, space });
        }
        Ok(VoxelGrid {
            config,
            space,
            labels,
        })
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn space(&self) -> LabelSpace {
        self.space
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<u8> {
        self.labels
    }

    pub fn get(&self, i: [usize; 3]) -> Result<u8> {
        self.config.check_index(i)?;
        Ok(self.labels[self.config.linear(i)])
    }

    pub fn set(&mut self, i: [usize; 3], id: u8) -> Result<()> {
        self.config.check_index(i)?;
        if !self.space.is_valid(id) {
            return Err(Error::InvalidLabel { id, space: self.space });
        }
        let lin = self.config.linear(i);
        self.labels[lin] = id;
        Ok(())
    }

    pub fn column(&self, ix: usize, iy: usize) -> &[u8] {
        &self.labels[self.config.column(ix, iy)]
    }

    /// Voxels holding a real class (neither empty nor unknown).
    pub fn occupied_count(&self) -> usize {
        self.labels.iter().filter(|&&id| is_occupied(id)).count()
    }

    pub(crate) fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }
}

/// True for ids that denote an occupied voxel in either space.
pub fn is_occupied(id: u8) -> bool {
    id != EMPTY_ID && id != UNKNOWN_ID
}
