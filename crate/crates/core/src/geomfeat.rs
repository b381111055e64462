//! 2.5D elevation map and per-cell terrain geometry.
//!
//! Every cell is described by three features over a circular neighborhood:
//! step height (largest elevation difference to a neighbor), slope (angle of
//! the PCA plane normal to +Z) and unevenness (log of the mean squared
//! vertical residual to that plane, floored at [`UNEVENNESS_FLOOR`]).

use std::io::Write;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::GridConfig;
use crate::ingest::PointCloudFrame;
use crate::labels::LabelSet;
use crate::{Error, Result};

/// Residual floor added inside the unevenness log, m².
pub const UNEVENNESS_FLOOR: f64 = 1e-6;
/// Two smallest covariance eigenvalues closer than this mean the cells are
/// collinear and the plane is undetermined.
pub const DEGENERACY_TOL: f64 = 1e-12;
const RADIUS_SLACK: f64 = 1e-9;

/// Horizontal lattice of ground cells with mean ground elevation per cell.
///
/// The per-cell point buckets (z values in input order) are kept in a
/// compressed layout: bucket `c` is `bucket_z[offsets[c]..offsets[c + 1]]`.
#[derive(Clone, Debug)]
pub struct ElevationMap {
    nx: usize,
    ny: usize,
    cell_size: f64,
    origin: [f64; 2],
    elevation: Vec<Option<f64>>,
    offsets: Vec<usize>,
    bucket_z: Vec<f64>,
}

impl ElevationMap {
    /// Map with explicit elevations and no point buckets, for synthetic fields.
    pub fn from_elevations(
        nx: usize,
        ny: usize,
        cell_size: f64,
        origin: [f64; 2],
        elevation: Vec<Option<f64>>,
    ) -> Result<Self> {
        if elevation.len() != nx * ny {
            return Err(Error::LengthMismatch(format!(
                "{} elevations for a {nx}×{ny} map",
                elevation.len()
            )));
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::Config(format!("cell size must be positive, got {cell_size}")));
        }
        if elevation.iter().flatten().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite("elevation".into()));
        }
        Ok(ElevationMap {
            nx,
            ny,
            cell_size,
            origin,
            elevation,
            offsets: vec![0; nx * ny + 1],
            bucket_z: Vec::new(),
        })
    }

    /// Same lattice as the x/y plane of a voxel grid.
    pub fn from_grid_elevations(cfg: &GridConfig, elevation: Vec<Option<f64>>) -> Result<Self> {
        let [nx, ny, _] = cfg.dims();
        let o = cfg.origin();
        Self::from_elevations(nx, ny, cfg.voxel_size(), [o[0], o[1]], elevation)
    }

    pub fn dims(&self) -> [usize; 2] {
        [self.nx, self.ny]
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell linear index, x-major.
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        ix * self.ny + iy
    }

    pub fn elevation(&self, ix: usize, iy: usize) -> Option<f64> {
        self.elevation[self.index(ix, iy)]
    }

    pub fn elevations(&self) -> &[Option<f64>] {
        &self.elevation
    }

    pub fn is_valid(&self, ix: usize, iy: usize) -> bool {
        self.elevation(ix, iy).is_some()
    }

    pub fn point_count(&self, ix: usize, iy: usize) -> usize {
        let c = self.index(ix, iy);
        self.offsets[c + 1] - self.offsets[c]
    }

    /// Heights of the ground points bucketed into this cell.
    pub fn bucket(&self, ix: usize, iy: usize) -> &[f64] {
        let c = self.index(ix, iy);
        &self.bucket_z[self.offsets[c]..self.offsets[c + 1]]
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.origin[0] + (ix as f64 + 0.5) * self.cell_size,
            self.origin[1] + (iy as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn valid_count(&self) -> usize {
        self.elevation.iter().filter(|e| e.is_some()).count()
    }

    pub fn matches_grid(&self, cfg: &GridConfig) -> bool {
        let [nx, ny, _] = cfg.dims();
        let o = cfg.origin();
        nx == self.nx
            && ny == self.ny
            && cfg.voxel_size() == self.cell_size
            && o[0] == self.origin[0]
            && o[1] == self.origin[1]
    }

    fn neighbor(&self, ix: usize, iy: usize, d: (isize, isize)) -> Option<(usize, usize)> {
        let x = ix.checked_add_signed(d.0)?;
        let y = iy.checked_add_signed(d.1)?;
        (x < self.nx && y < self.ny).then_some((x, y))
    }
}

/// Buckets ground-class points by (x, y) cell; cell elevation is the mean
/// bucket height. Points outside the grid's x/y range are ignored; z range is
/// not checked.
pub fn build_elevation_map(
    cloud: &PointCloudFrame,
    cfg: &GridConfig,
    ground_classes: &LabelSet,
) -> Result<ElevationMap> {
    let labeled = cloud
        .labeled_points()
        .ok_or_else(|| Error::Config("elevation map needs a labeled cloud".into()))?;
    let [nx, ny, _] = cfg.dims();
    let cells: Vec<(usize, f64)> = labeled
        .filter(|(_, l)| ground_classes.contains_id(*l))
        .filter_map(|(p, _)| {
            let [ix, iy] = cfg.world_to_column(p.x, p.y)?;
            Some((ix * ny + iy, p.z))
        })
        .collect();

    let n = nx * ny;
    let mut offsets = vec![0usize; n + 1];
    for &(c, _) in &cells {
        offsets[c + 1] += 1;
    }
    for c in 0..n {
        offsets[c + 1] += offsets[c];
    }
    let mut cursor = offsets.clone();
    let mut bucket_z = vec![0.0; cells.len()];
    for &(c, z) in &cells {
        bucket_z[cursor[c]] = z;
        cursor[c] += 1;
    }
    let elevation = (0..n)
        .into_par_iter()
        .map(|c| {
            let b = &bucket_z[offsets[c]..offsets[c + 1]];
            (!b.is_empty()).then(|| b.iter().sum::<f64>() / b.len() as f64)
        })
        .collect();
    let o = cfg.origin();
    Ok(ElevationMap {
        nx,
        ny,
        cell_size: cfg.voxel_size(),
        origin: [o[0], o[1]],
        elevation,
        offsets,
        bucket_z,
    })
}

/// Circular neighborhood Ω.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NeighborhoodJson", into = "NeighborhoodJson")]
pub struct NeighborhoodSpec {
    radius: f64,
    min_valid_cells: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NeighborhoodJson {
    radius_m: f64,
    min_valid_cells: usize,
}

impl TryFrom<NeighborhoodJson> for NeighborhoodSpec {
    type Error = Error;

    fn try_from(j: NeighborhoodJson) -> Result<Self> {
        NeighborhoodSpec::new(j.radius_m, j.min_valid_cells)
    }
}

impl From<NeighborhoodSpec> for NeighborhoodJson {
    fn from(n: NeighborhoodSpec) -> Self {
        NeighborhoodJson {
            radius_m: n.radius,
            min_valid_cells: n.min_valid_cells,
        }
    }
}

impl NeighborhoodSpec {
    pub fn new(radius: f64, min_valid_cells: usize) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Config(format!("neighborhood radius must be positive, got {radius}")));
        }
        if min_valid_cells < 3 {
            return Err(Error::Config(format!(
                "a plane fit needs at least 3 cells, got min_valid_cells = {min_valid_cells}"
            )));
        }
        Ok(NeighborhoodSpec {
            radius,
            min_valid_cells,
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn min_valid_cells(&self) -> usize {
        self.min_valid_cells
    }

    /// Cell offsets whose centers lie within the radius, center first.
    pub fn offsets(&self, cell_size: f64) -> Vec<(isize, isize)> {
        let reach = (self.radius / cell_size + RADIUS_SLACK).floor() as isize;
        let r2 = (self.radius / cell_size).powi(2) + RADIUS_SLACK;
        let mut out = vec![(0, 0)];
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                if (dx, dy) != (0, 0) && ((dx * dx + dy * dy) as f64) <= r2 {
                    out.push((dx, dy));
                }
            }
        }
        out
    }

    pub fn check_cell_size(&self, cell_size: f64) -> Result<()> {
        if self.radius + RADIUS_SLACK < cell_size {
            return Err(Error::Config(format!(
                "neighborhood radius {} m is smaller than one cell ({cell_size} m)",
                self.radius
            )));
        }
        Ok(())
    }
}

impl Default for NeighborhoodSpec {
    fn default() -> Self {
        NeighborhoodSpec {
            radius: 0.6,
            min_valid_cells: 3,
        }
    }
}

/// Plane `z = a0·x + a1·y + c` with upward unit normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneFit {
    pub a0: f64,
    pub a1: f64,
    pub c: f64,
    pub normal: Vector3<f64>,
    pub residual_mse: f64,
    pub cells: usize,
}

impl PlaneFit {
    /// Angle between the normal and +Z, radians in [0, π/2].
    pub fn slope(&self) -> f64 {
        let n = &self.normal;
        (n.x.hypot(n.y)).atan2(n.z)
    }

    /// Natural log of the residual MSE plus [`UNEVENNESS_FLOOR`].
    pub fn unevenness(&self) -> f64 {
        (self.residual_mse + UNEVENNESS_FLOOR).ln()
    }
}

fn samples(map: &ElevationMap, ix: usize, iy: usize, offsets: &[(isize, isize)]) -> Vec<[f64; 3]> {
    offsets
        .iter()
        .filter_map(|&d| {
            let (x, y) = map.neighbor(ix, iy, d)?;
            let z = map.elevation(x, y)?;
            let (cx, cy) = map.cell_center(x, y);
            Some([cx, cy, z])
        })
        .collect()
}

fn step_with(map: &ElevationMap, ix: usize, iy: usize, offsets: &[(isize, isize)]) -> Option<f64> {
    let z0 = map.elevation(ix, iy)?;
    offsets
        .iter()
        .filter(|&&d| d != (0, 0))
        .filter_map(|&d| {
            let (x, y) = map.neighbor(ix, iy, d)?;
            map.elevation(x, y)
        })
        .map(|z| (z0 - z).abs())
        .reduce(f64::max)
}

/// PCA plane through 3D samples.
pub fn fit_plane_to(points: &[[f64; 3]], min_cells: usize) -> Option<PlaneFit> {
    let m = points.len();
    if m < min_cells.max(3) {
        return None;
    }
    // centered at the first sample for conditioning
    let base = points[0];
    let local: Vec<Vector3<f64>> = points
        .iter()
        .map(|p| Vector3::new(p[0] - base[0], p[1] - base[1], p[2] - base[2]))
        .collect();
    let mean = local.iter().sum::<Vector3<f64>>() / m as f64;
    let cov = local
        .iter()
        .map(|p| {
            let d = p - mean;
            d * d.transpose()
        })
        .sum::<Matrix3<f64>>()
        / m as f64;

    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    if eig.eigenvalues[order[1]] - eig.eigenvalues[order[0]] <= DEGENERACY_TOL {
        return None;
    }
    let mut n: Vector3<f64> = eig.eigenvectors.column(order[0]).into_owned();
    n /= n.norm();
    if n.z < 0.0 {
        n = -n;
    }
    if n.z <= DEGENERACY_TOL {
        return None;
    }
    let a0 = -n.x / n.z;
    let a1 = -n.y / n.z;
    let residual_mse = local
        .iter()
        .map(|p| {
            let d = p - mean;
            let r = d.z - (a0 * d.x + a1 * d.y);
            r * r
        })
        .sum::<f64>()
        / m as f64;
    let mean_w = [mean.x + base[0], mean.y + base[1], mean.z + base[2]];
    Some(PlaneFit {
        a0,
        a1,
        c: mean_w[2] - a0 * mean_w[0] - a1 * mean_w[1],
        normal: n,
        residual_mse,
        cells: m,
    })
}

/// Largest |Δz| between the cell and any valid neighbor in Ω; `None` when the
/// cell is invalid or has no valid neighbor.
pub fn step_height(map: &ElevationMap, cell: (usize, usize), nb: &NeighborhoodSpec) -> Option<f64> {
    step_with(map, cell.0, cell.1, &nb.offsets(map.cell_size))
}

/// Least-squares (PCA) plane over the valid cell centers of Ω.
pub fn fit_plane(map: &ElevationMap, cell: (usize, usize), nb: &NeighborhoodSpec) -> Option<PlaneFit> {
    let pts = samples(map, cell.0, cell.1, &nb.offsets(map.cell_size));
    fit_plane_to(&pts, nb.min_valid_cells)
}

pub fn slope(map: &ElevationMap, cell: (usize, usize), nb: &NeighborhoodSpec) -> Option<f64> {
    fit_plane(map, cell, nb).map(|f| f.slope())
}

pub fn unevenness(map: &ElevationMap, cell: (usize, usize), nb: &NeighborhoodSpec) -> Option<f64> {
    fit_plane(map, cell, nb).map(|f| f.unevenness())
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CellFeatures {
    /// m
    pub step: Option<f64>,
    /// rad
    pub slope: Option<f64>,
    /// ln m²
    pub unevenness: Option<f64>,
}

impl CellFeatures {
    pub fn is_valid(&self) -> bool {
        self.step.is_some() && self.slope.is_some() && self.unevenness.is_some()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeomFeatures {
    dims: [usize; 2],
    cells: Vec<CellFeatures>,
}

impl GeomFeatures {
    pub fn dims(&self) -> [usize; 2] {
        self.dims
    }

    pub fn get(&self, ix: usize, iy: usize) -> &CellFeatures {
        &self.cells[ix * self.dims[1] + iy]
    }

    pub fn cells(&self) -> &[CellFeatures] {
        &self.cells
    }

    pub fn from_cells(dims: [usize; 2], cells: Vec<CellFeatures>) -> Result<Self> {
        if cells.len() != dims[0] * dims[1] {
            return Err(Error::LengthMismatch(format!(
                "{} feature cells for {dims:?}",
                cells.len()
            )));
        }
        Ok(GeomFeatures { dims, cells })
    }
}

/// Step, slope and unevenness for every cell, in parallel over cells.
pub fn compute_features(map: &ElevationMap, nb: &NeighborhoodSpec) -> Result<GeomFeatures> {
    nb.check_cell_size(map.cell_size)?;
    let offsets = nb.offsets(map.cell_size);
    let cells = (0..map.len())
        .into_par_iter()
        .map(|c| {
            let (ix, iy) = (c / map.ny, c % map.ny);
            if !map.is_valid(ix, iy) {
                return CellFeatures::default();
            }
            let fit = fit_plane_to(&samples(map, ix, iy, &offsets), nb.min_valid_cells);
            CellFeatures {
                step: step_with(map, ix, iy, &offsets),
                slope: fit.map(|f| f.slope()),
                unevenness: fit.map(|f| f.unevenness()),
            }
        })
        .collect();
    Ok(GeomFeatures {
        dims: [map.nx, map.ny],
        cells,
    })
}

/// Debug export: `ix,iy,elevation,h,s,u,valid` with empty fields for missing values.
pub fn write_features_csv<W: Write>(
    map: &ElevationMap,
    features: &GeomFeatures,
    mut out: W,
) -> std::io::Result<()> {
    fn opt(v: Option<f64>) -> String {
        v.map(|x| format!("{x}")).unwrap_or_default()
    }
    writeln!(out, "ix,iy,elevation,h,s,u,valid")?;
    for ix in 0..map.nx {
        for iy in 0..map.ny {
            let f = features.get(ix, iy);
            writeln!(
                out,
                "{ix},{iy},{},{},{},{},{}",
                opt(map.elevation(ix, iy)),
                opt(f.step),
                opt(f.slope),
                opt(f.unevenness),
                u8::from(f.is_valid())
            )?;
        }
    }
    Ok(())
}
