//! Vehicle obstacle-crossing conditions and the per-cell step mask.
//!
//! Four failure modes are checked against the elevation map: vertical steps
//! the front wheels cannot climb, trenches wider than the wheels can bridge,
//! overhanging obstacles lower than the sensor mast, and slopes steeper than
//! the climbing limit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geomfeat::{ElevationMap, GeomFeatures};
use crate::grid::{is_occupied, VoxelGrid};
use crate::labels::{LabelSet, LabelSpace};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VehicleJson", into = "VehicleJson")]
pub struct VehicleParams {
    wheel_radius: f64,
    wheelbase: f64,
    cg_front_dist: f64,
    friction: f64,
    lidar_height: f64,
    max_climb: f64,
    overhang_margin: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VehicleJson {
    wheel_radius_m: f64,
    wheelbase_m: f64,
    cg_front_dist_m: f64,
    friction: f64,
    lidar_height_m: f64,
    max_climb_deg: f64,
    #[serde(default)]
    overhang_margin_m: f64,
}

impl TryFrom<VehicleJson> for VehicleParams {
    type Error = Error;

    fn try_from(j: VehicleJson) -> Result<Self> {
        VehicleParams::new(
            j.wheel_radius_m,
            j.wheelbase_m,
            j.cg_front_dist_m,
            j.friction,
            j.lidar_height_m,
            j.max_climb_deg.to_radians(),
        )?
        .with_overhang_margin(j.overhang_margin_m)
    }
}

impl From<VehicleParams> for VehicleJson {
    fn from(v: VehicleParams) -> Self {
        VehicleJson {
            wheel_radius_m: v.wheel_radius,
            wheelbase_m: v.wheelbase,
            cg_front_dist_m: v.cg_front_dist,
            friction: v.friction,
            lidar_height_m: v.lidar_height,
            max_climb_deg: v.max_climb.to_degrees(),
            overhang_margin_m: v.overhang_margin,
        }
    }
}

impl VehicleParams {
    /// `max_climb` in radians.
    pub fn new(
        wheel_radius: f64,
        wheelbase: f64,
        cg_front_dist: f64,
        friction: f64,
        lidar_height: f64,
        max_climb: f64,
    ) -> Result<Self> {
        let all = [wheel_radius, wheelbase, cg_front_dist, friction, lidar_height, max_climb];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vehicle parameter".into()));
        }
        if wheel_radius <= 0.0 || wheelbase <= 0.0 {
            return Err(Error::Config(format!(
                "wheel radius and wheelbase must be positive, got r = {wheel_radius}, l = {wheelbase}"
            )));
        }
        if !(0.0 < cg_front_dist && cg_front_dist < wheelbase) {
            return Err(Error::Config(format!(
                "CG distance {cg_front_dist} m must lie strictly inside the wheelbase {wheelbase} m"
            )));
        }
        if friction <= 0.0 {
            return Err(Error::UndefinedCondition(format!(
                "friction coefficient must be positive, got {friction}"
            )));
        }
        if !(0.0 < max_climb && max_climb < std::f64::consts::FRAC_PI_2) {
            return Err(Error::Config(format!(
                "max climbing angle must lie in (0, π/2), got {max_climb} rad"
            )));
        }
        Ok(VehicleParams {
            wheel_radius,
            wheelbase,
            cg_front_dist,
            friction,
            lidar_height,
            max_climb,
            overhang_margin: 0.0,
        })
    }

    /// Height of obstacle points relative to the sensor that the clearance
    /// test adds on top of the sensor height.
    pub fn with_overhang_margin(mut self, margin: f64) -> Result<Self> {
        if !margin.is_finite() {
            return Err(Error::NonFinite("overhang margin".into()));
        }
        self.overhang_margin = margin;
        Ok(self)
    }

    pub fn wheel_radius(&self) -> f64 {
        self.wheel_radius
    }

    pub fn wheel_diameter(&self) -> f64 {
        2.0 * self.wheel_radius
    }

    pub fn wheelbase(&self) -> f64 {
        self.wheelbase
    }

    pub fn cg_front_dist(&self) -> f64 {
        self.cg_front_dist
    }

    pub fn friction(&self) -> f64 {
        self.friction
    }

    pub fn lidar_height(&self) -> f64 {
        self.lidar_height
    }

    /// rad
    pub fn max_climb(&self) -> f64 {
        self.max_climb
    }

    pub fn overhang_margin(&self) -> f64 {
        self.overhang_margin
    }

    pub fn with_max_climb(mut self, max_climb: f64) -> Result<Self> {
        self = VehicleParams::new(
            self.wheel_radius,
            self.wheelbase,
            self.cg_front_dist,
            self.friction,
            self.lidar_height,
            max_climb,
        )?
        .with_overhang_margin(self.overhang_margin)?;
        Ok(self)
    }
}

impl Default for VehicleParams {
    /// A mid-size off-road platform.
    fn default() -> Self {
        VehicleParams {
            wheel_radius: 0.4,
            wheelbase: 2.0,
            cg_front_dist: 1.0,
            friction: 0.6,
            lidar_height: 2.0,
            max_climb: 30f64.to_radians(),
            overhang_margin: 0.0,
        }
    }
}

/// Dimensionless climbable step height h/r from friction and the ratios r/l, a/l.
pub fn step_height_ratio(mu: f64, r_over_l: f64, a_over_l: f64) -> Result<f64> {
    if !(mu > 0.0) {
        return Err(Error::UndefinedCondition(format!(
            "friction coefficient {mu} leaves the climbing condition undefined"
        )));
    }
    let mr = mu * r_over_l;
    let eta = (1.0 - mr - (1.0 + mu * mu) * a_over_l) / mu;
    let eta2 = eta * eta;
    if !eta2.is_finite() {
        return Err(Error::UndefinedCondition(format!(
            "friction coefficient {mu} is too small for a finite climbing condition"
        )));
    }
    let radicand = 1.0 - 2.0 * mr + eta2;
    if radicand < 0.0 {
        return Err(Error::InfeasibleGeometry(format!(
            "negative radicand {radicand} in the step-climbing condition"
        )));
    }
    let ratio = (1.0 - mr + eta2 - eta * radicand.sqrt()) / ((1.0 + mr).powi(2) + eta2);
    if !ratio.is_finite() {
        return Err(Error::UndefinedCondition("step-climbing ratio is not finite".into()));
    }
    if ratio < 0.0 {
        return Err(Error::InfeasibleGeometry(format!(
            "vehicle cannot climb any step (h/r = {ratio})"
        )));
    }
    Ok(ratio)
}

/// Largest vertical obstacle the front wheels can climb, m.
pub fn max_step_height(v: &VehicleParams) -> Result<f64> {
    let l = v.wheelbase;
    Ok(v.wheel_radius * step_height_ratio(v.friction, v.wheel_radius / l, v.cg_front_dist / l)?)
}

/// Widest crossable trench for step-to-diameter ratio `h_over_d`, m.
pub fn max_trench_width(h_over_d: f64, d: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&h_over_d) {
        return Err(Error::Domain(format!("h/D = {h_over_d} is outside [0, 1]")));
    }
    Ok(d * 2.0 * (h_over_d * (1.0 - h_over_d)).sqrt())
}

pub fn overhang_passable(h_obj: f64, h_pc: f64, v: &VehicleParams) -> bool {
    h_obj > h_pc + v.lidar_height
}

pub fn slope_passable(alpha: f64, v: &VehicleParams) -> bool {
    v.max_climb > alpha
}

/// Failure reasons stored per cell.
pub mod reason {
    pub const STEP: u8 = 1;
    pub const SLOPE: u8 = 2;
    pub const TRENCH: u8 = 4;
    pub const OVERHANG: u8 = 8;
}

/// Occupancy used for the overhead-clearance condition.
#[derive(Clone, Copy, Debug)]
pub struct Overhead<'a> {
    pub semantic: &'a VoxelGrid,
    pub ground_classes: &'a LabelSet,
}

/// Thresholds derived from the vehicle once per mask.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskThresholds {
    pub max_step: f64,
    pub max_trench: f64,
    pub max_climb: f64,
}

impl MaskThresholds {
    pub fn for_vehicle(v: &VehicleParams) -> Result<Self> {
        let max_step = max_step_height(v)?;
        let d = v.wheel_diameter();
        Ok(MaskThresholds {
            max_step,
            max_trench: max_trench_width((max_step / d).clamp(0.0, 1.0), d)?,
            max_climb: v.max_climb,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepMask {
    dims: [usize; 2],
    reasons: Vec<u8>,
    unknown: Vec<bool>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskStats {
    pub cells: usize,
    pub masked: usize,
    pub unknown: usize,
    pub step: usize,
    pub slope: usize,
    pub trench: usize,
    pub overhang: usize,
}

impl StepMask {
    pub fn all_clear(dims: [usize; 2]) -> Self {
        StepMask {
            dims,
            reasons: vec![0; dims[0] * dims[1]],
            unknown: vec![false; dims[0] * dims[1]],
        }
    }

    pub fn dims(&self) -> [usize; 2] {
        self.dims
    }

    pub fn is_masked(&self, ix: usize, iy: usize) -> bool {
        self.reasons[ix * self.dims[1] + iy] != 0
    }

    pub fn reasons(&self, ix: usize, iy: usize) -> u8 {
        self.reasons[ix * self.dims[1] + iy]
    }

    /// Cells whose geometry could not be evaluated.
    pub fn is_unknown(&self, ix: usize, iy: usize) -> bool {
        self.unknown[ix * self.dims[1] + iy]
    }

    pub fn set(&mut self, ix: usize, iy: usize, reasons: u8) {
        self.reasons[ix * self.dims[1] + iy] = reasons;
    }

    pub fn masked_count(&self) -> usize {
        self.reasons.iter().filter(|&&r| r != 0).count()
    }

    pub fn stats(&self) -> MaskStats {
        let count = |bit: u8| self.reasons.iter().filter(|&&r| r & bit != 0).count();
        MaskStats {
            cells: self.reasons.len(),
            masked: self.masked_count(),
            unknown: self.unknown.iter().filter(|&&u| u).count(),
            step: count(reason::STEP),
            slope: count(reason::SLOPE),
            trench: count(reason::TRENCH),
            overhang: count(reason::OVERHANG),
        }
    }
}

const AXES: [(isize, isize); 4] = [(1, 0), (0, 1), (1, 1), (1, -1)];

/// Width of the depression around `(ix, iy)` along one axis, or `None` when
/// the cell is not enclosed by walls on both sides of that axis.
fn enclosed_extent(map: &ElevationMap, ix: usize, iy: usize, axis: (isize, isize), max_step: f64) -> Option<f64> {
    let z0 = map.elevation(ix, iy)?;
    let [nx, ny] = map.dims();
    let mut floor_cells = 1usize;
    for sign in [1isize, -1] {
        let (dx, dy) = (axis.0 * sign, axis.1 * sign);
        let (mut x, mut y, mut prev) = (ix, iy, z0);
        loop {
            x = x.checked_add_signed(dx).filter(|&v| v < nx)?;
            y = y.checked_add_signed(dy).filter(|&v| v < ny)?;
            let z = map.elevation(x, y)?;
            let rise = z - prev;
            if rise > max_step && z > z0 + max_step {
                break;
            }
            if rise.abs() > max_step {
                // drops further down or a wall the cell already sits above
                return None;
            }
            floor_cells += 1;
            prev = z;
        }
    }
    let spacing = map.cell_size() * ((axis.0 * axis.0 + axis.1 * axis.1) as f64).sqrt();
    Some(floor_cells as f64 * spacing)
}

/// Lowest point above the ground of the first non-ground occupied voxel,
/// scanning the column upward from the ground elevation.
fn overhead_clearance(oh: &Overhead<'_>, ix: usize, iy: usize, ground: f64) -> Option<f64> {
    let cfg = oh.semantic.config();
    let vs = cfg.voxel_size();
    oh.semantic
        .column(ix, iy)
        .iter()
        .enumerate()
        .filter(|&(k, _)| cfg.layer_center_z(k) > ground)
        .find(|&(_, &id)| is_occupied(id) && !oh.ground_classes.contains_id(id))
        .map(|(k, _)| cfg.layer_center_z(k) - 0.5 * vs - ground)
}

/// Evaluates all four crossing conditions per elevation cell.
///
/// Cells without valid features are never masked by the geometric conditions
/// and are flagged unknown. The overhead condition is skipped when no
/// occupancy is given; obstacles whose lowest point is within one voxel of the
/// ground are left to the semantic cost.
pub fn compute_step_mask(
    features: &GeomFeatures,
    map: &ElevationMap,
    v: &VehicleParams,
    overhead: Option<Overhead<'_>>,
) -> Result<StepMask> {
    if features.dims() != map.dims() {
        return Err(Error::DimensionMismatch(format!(
            "features {:?} vs elevation map {:?}",
            features.dims(),
            map.dims()
        )));
    }
    if let Some(oh) = &overhead {
        if oh.semantic.space() != LabelSpace::Semantic {
            return Err(Error::Config("overhead scan needs a semantic grid".into()));
        }
        if !map.matches_grid(oh.semantic.config()) {
            return Err(Error::DimensionMismatch(
                "semantic grid columns differ from the elevation map".into(),
            ));
        }
    }
    let th = MaskThresholds::for_vehicle(v)?;
    let ny = map.dims()[1];
    let (reasons, unknown): (Vec<u8>, Vec<bool>) = (0..map.len())
        .into_par_iter()
        .map(|c| {
            let (ix, iy) = (c / ny, c % ny);
            let Some(ground) = map.elevation(ix, iy) else {
                return (0, false);
            };
            let f = features.get(ix, iy);
            let mut r = 0u8;
            if f.step.is_some_and(|h| h > th.max_step) {
                r |= reason::STEP;
            }
            if f.slope.is_some_and(|s| !slope_passable(s, v)) {
                r |= reason::SLOPE;
            }
            let narrowest = AXES
                .iter()
                .filter_map(|&a| enclosed_extent(map, ix, iy, a, th.max_step))
                .reduce(f64::min);
            if narrowest.is_some_and(|w| w > th.max_trench) {
                r |= reason::TRENCH;
            }
            if let Some(oh) = &overhead {
                let vs = oh.semantic.config().voxel_size();
                if let Some(h_obj) = overhead_clearance(oh, ix, iy, ground) {
                    if h_obj > vs && !overhang_passable(h_obj, v.overhang_margin, v) {
                        r |= reason::OVERHANG;
                    }
                }
            }
            (r, !f.is_valid())
        })
        .unzip();
    Ok(StepMask {
        dims: map.dims(),
        reasons,
        unknown,
    })
}
