//! Semantic-to-cost mapping and the lethal override for masked columns.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geomfeat::ElevationMap;
use crate::grid::VoxelGrid;
use crate::labels::{CostLabel, LabelSpace, SemanticLabel, EMPTY_ID, UNKNOWN_ID};
use crate::mobility::StepMask;
use crate::{Error, Result};

/// Default vertical extent above ground elevation that a masked column
/// penalizes, m.
pub const DEFAULT_GROUND_BAND: f64 = 1.0;

/// Cost level for every occupied semantic class. `void` always maps to
/// `empty` and `unknown` to `unknown`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, CostLabel>", into = "BTreeMap<String, CostLabel>")]
pub struct CostMappingTable {
    table: [CostLabel; SemanticLabel::COUNT],
}

impl CostMappingTable {
    /// Builds a table from entries for all nine occupied classes.
    pub fn from_entries(entries: impl IntoIterator<Item = (SemanticLabel, CostLabel)>) -> Result<Self> {
        let mut table = [CostLabel::Empty; SemanticLabel::COUNT];
        let mut seen = [false; SemanticLabel::COUNT];
        seen[SemanticLabel::Void.id() as usize] = true;
        for (s, c) in entries {
            if s == SemanticLabel::Void {
                if c != CostLabel::Empty {
                    return Err(Error::Config("void always maps to empty".into()));
                }
                continue;
            }
            if s == SemanticLabel::Unknown || c == CostLabel::Empty || c == CostLabel::Unknown {
                return Err(Error::Config(format!("{s} cannot map to {c}")));
            }
            if std::mem::replace(&mut seen[s.id() as usize], true) {
                return Err(Error::Config(format!("duplicate cost entry for {s}")));
            }
            table[s.id() as usize] = c;
        }
        let missing: Vec<&str> = SemanticLabel::OCCUPIED
            .iter()
            .filter(|s| !seen[s.id() as usize])
            .map(|s| s.name())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!("cost table has no entry for {}", missing.join(", "))));
        }
        Ok(CostMappingTable { table })
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn cost_of(&self, s: SemanticLabel) -> CostLabel {
        self.table[s.id() as usize]
    }

    /// Cost id for a semantic id; `None` for ids outside the semantic space.
    pub fn map_id(&self, id: u8) -> Option<u8> {
        match id {
            UNKNOWN_ID => Some(CostLabel::Unknown.id()),
            _ => SemanticLabel::from_id(id).map(|s| self.cost_of(s).id()),
        }
    }

    /// Returns a copy with one entry replaced.
    pub fn with(mut self, s: SemanticLabel, c: CostLabel) -> Result<Self> {
        if matches!(s, SemanticLabel::Void | SemanticLabel::Unknown)
            || matches!(c, CostLabel::Empty | CostLabel::Unknown)
        {
            return Err(Error::Config(format!("{s} cannot map to {c}")));
        }
        self.table[s.id() as usize] = c;
        Ok(self)
    }
}

impl Default for CostMappingTable {
    fn default() -> Self {
        use CostLabel::*;
        use SemanticLabel as S;
        CostMappingTable::from_entries([
            (S::HardSurface, Free),
            (S::Grass, LowCost),
            (S::Bush, MediumCost),
            (S::Mud, MediumCost),
            (S::Rubble, MediumCost),
            (S::Tree, Lethal),
            (S::Object, Lethal),
            (S::Person, Lethal),
            (S::Water, Lethal),
        ])
        .expect("default table is total")
    }
}

impl TryFrom<BTreeMap<String, CostLabel>> for CostMappingTable {
    type Error = Error;

    fn try_from(m: BTreeMap<String, CostLabel>) -> Result<Self> {
        let entries = m
            .into_iter()
            .map(|(k, v)| Ok((k.parse::<SemanticLabel>()?, v)))
            .collect::<Result<Vec<_>>>()?;
        CostMappingTable::from_entries(entries)
    }
}

impl From<CostMappingTable> for BTreeMap<String, CostLabel> {
    fn from(t: CostMappingTable) -> Self {
        SemanticLabel::OCCUPIED
            .iter()
            .map(|&s| (s.name().to_owned(), t.cost_of(s)))
            .collect()
    }
}

/// Pointwise table lookup from a semantic grid to a cost grid.
pub fn map_semantics_to_cost(g: &VoxelGrid, t: &CostMappingTable) -> Result<VoxelGrid> {
    if g.space() != LabelSpace::Semantic {
        return Err(Error::Config("cost mapping needs a semantic grid".into()));
    }
    let labels = g
        .labels()
        .par_iter()
        .map(|&id| t.map_id(id).expect("semantic grid holds valid ids"))
        .collect();
    VoxelGrid::from_labels(*g.config(), LabelSpace::Cost, labels)
}

/// Marks occupied voxels lethal in every masked column, within
/// `[ground − voxel, ground + band]` around the column's ground elevation
/// (voxel centers tested).
///
/// The lower edge drops to the column's lowest ground point when that lies
/// below the mean elevation, so the foot of a wall-like column is included.
pub fn apply_step_mask(g: &VoxelGrid, mask: &StepMask, map: &ElevationMap, band: f64) -> Result<VoxelGrid> {
    if g.space() != LabelSpace::Cost {
        return Err(Error::Config("step mask applies to a cost grid".into()));
    }
    let cfg = *g.config();
    if mask.dims() != map.dims() || !map.matches_grid(&cfg) {
        return Err(Error::DimensionMismatch(format!(
            "grid columns {:?}, mask {:?}, elevation map {:?}",
            &cfg.dims()[..2],
            mask.dims(),
            map.dims()
        )));
    }
    if !(band >= 0.0 && band.is_finite()) {
        return Err(Error::Config(format!("ground band must be non-negative, got {band}")));
    }
    let nz = cfg.dims()[2];
    let ny = cfg.dims()[1];
    let vs = cfg.voxel_size();
    let lethal = CostLabel::Lethal.id();
    let mut labels = g.labels().to_vec();
    labels.par_chunks_mut(nz).enumerate().for_each(|(c, column)| {
        let (ix, iy) = (c / ny, c % ny);
        if !mask.is_masked(ix, iy) {
            return;
        }
        let Some(ground) = map.elevation(ix, iy) else {
            return;
        };
        let foot = map.bucket(ix, iy).iter().copied().fold(ground, f64::min);
        for (k, id) in column.iter_mut().enumerate() {
            let z = cfg.layer_center_z(k);
            if *id != EMPTY_ID && *id != UNKNOWN_ID && z >= foot - vs && z <= ground + band {
                *id = lethal;
            }
        }
    });
    VoxelGrid::from_labels(cfg, LabelSpace::Cost, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridConfig;
    use proptest::prelude::*;

    fn cfg() -> GridConfig {
        GridConfig::new([0.0, 0.0, 0.0], [2, 2, 10], 0.2).unwrap()
    }

    #[test]
    fn default_table_examples() {
        let t = CostMappingTable::default();
        assert_eq!(t.cost_of(SemanticLabel::Grass), CostLabel::LowCost);
        assert_eq!(t.cost_of(SemanticLabel::Tree), CostLabel::Lethal);
        assert_eq!(t.cost_of(SemanticLabel::HardSurface), CostLabel::Free);
        assert_eq!(t.map_id(EMPTY_ID), Some(CostLabel::Empty.id()));
        assert_eq!(t.map_id(UNKNOWN_ID), Some(CostLabel::Unknown.id()));
        assert_eq!(t.map_id(42), None);

        let void = VoxelGrid::empty(cfg(), LabelSpace::Semantic);
        let cost = map_semantics_to_cost(&void, &t).unwrap();
        assert!(cost.labels().iter().all(|&c| c == CostLabel::Empty.id()));
    }

    #[test]
    fn table_json_round_trip_and_totality() {
        let t = CostMappingTable::default();
        let json = serde_json::to_string(&t).unwrap();
        assert!(json.contains(r#""grass":"low_cost""#));
        assert_eq!(CostMappingTable::from_json(&json).unwrap(), t);

        let partial = r#"{"grass":"free"}"#;
        let err = CostMappingTable::from_json(partial).unwrap_err().to_string();
        assert!(err.contains("tree"), "{err}");
        assert!(CostMappingTable::from_json(&json.replace("low_cost", "empty")).is_err());
        assert!(CostMappingTable::from_json(&json.replace("grass", "gravel")).is_err());
        assert!(CostMappingTable::from_json(&json.replace("grass", "unknown")).is_err());
    }

    fn flat_map(z: f64) -> ElevationMap {
        ElevationMap::from_grid_elevations(&cfg(), vec![Some(z); 4]).unwrap()
    }

    fn column_grid(ids: &[(usize, CostLabel)]) -> VoxelGrid {
        let mut g = VoxelGrid::empty(cfg(), LabelSpace::Cost);
        for &(k, c) in ids {
            g.set([0, 0, k], c.id()).unwrap();
        }
        g
    }

    #[test]
    fn mask_override_examples() {
        use CostLabel::*;
        let g = column_grid(&[(0, Free), (2, LowCost), (9, MediumCost)]);
        let map = flat_map(0.1);
        let clear = StepMask::all_clear([2, 2]);
        assert_eq!(apply_step_mask(&g, &clear, &map, 1.0).unwrap(), g);

        let mut mask = StepMask::all_clear([2, 2]);
        mask.set(0, 0, crate::mobility::reason::STEP);
        let out = apply_step_mask(&g, &mask, &map, 1.0).unwrap();
        assert_eq!(out.get([0, 0, 0]).unwrap(), Lethal.id());
        assert_eq!(out.get([0, 0, 2]).unwrap(), Lethal.id());
        // 1.9 m is above the 1.0 m band
        assert_eq!(out.get([0, 0, 9]).unwrap(), MediumCost.id());
        assert_eq!(out.get([0, 0, 1]).unwrap(), Empty.id());

        let empty = VoxelGrid::empty(cfg(), LabelSpace::Cost);
        assert_eq!(apply_step_mask(&empty, &mask, &map, 1.0).unwrap(), empty);
    }

    #[test]
    fn band_edges() {
        use CostLabel::*;
        // ground 1.0: band covers centers in [0.8, 2.0]
        let g = column_grid(&[(3, Free), (4, Free), (9, Free)]);
        let mut mask = StepMask::all_clear([2, 2]);
        mask.set(0, 0, 1);
        let out = apply_step_mask(&g, &mask, &flat_map(1.0), 1.0).unwrap();
        assert_eq!(out.get([0, 0, 3]).unwrap(), Free.id()); // 0.7
        assert_eq!(out.get([0, 0, 4]).unwrap(), Lethal.id()); // 0.9
        assert_eq!(out.get([0, 0, 9]).unwrap(), Lethal.id()); // 1.9
    }

    #[test]
    fn wall_foot_is_inside_the_band() {
        use crate::geomfeat::build_elevation_map;
        use crate::ingest::PointCloudFrame;
        use crate::labels::default_ground_classes;
        use CostLabel::*;
        // rubble from 0.1 to 1.5 m over grass at 0.1: mean elevation 0.75
        let mut pts = vec![(nalgebra::Point3::new(0.1, 0.1, 0.1), SemanticLabel::Grass)];
        for k in 0..8 {
            pts.push((nalgebra::Point3::new(0.1, 0.1, 0.1 + 0.2 * k as f64), SemanticLabel::Rubble));
        }
        let cloud = PointCloudFrame::labeled(&pts, 0).unwrap();
        let map = build_elevation_map(&cloud, &cfg(), &default_ground_classes()).unwrap();
        assert!((map.elevation(0, 0).unwrap() - 0.7222222222222222).abs() < 1e-12);
        let g = column_grid(&(0..8).map(|k| (k, MediumCost)).collect::<Vec<_>>());
        let mut mask = StepMask::all_clear([2, 2]);
        mask.set(0, 0, 1);
        let out = apply_step_mask(&g, &mask, &map, 1.0).unwrap();
        for k in 0..8 {
            assert_eq!(out.get([0, 0, k]).unwrap(), Lethal.id(), "layer {k}");
        }
    }

    #[test]
    fn mismatches_are_errors() {
        let g = VoxelGrid::empty(cfg(), LabelSpace::Cost);
        let m3 = StepMask::all_clear([3, 2]);
        assert!(matches!(
            apply_step_mask(&g, &m3, &flat_map(0.0), 1.0),
            Err(Error::DimensionMismatch(_))
        ));
        let s = VoxelGrid::empty(cfg(), LabelSpace::Semantic);
        assert!(apply_step_mask(&s, &StepMask::all_clear([2, 2]), &flat_map(0.0), 1.0).is_err());
    }

    fn arb_cost_grid() -> impl Strategy<Value = VoxelGrid> {
        prop::collection::vec(prop::sample::select(vec![0u8, 1, 2, 3, 4, 255]), 40)
            .prop_map(|l| VoxelGrid::from_labels(cfg(), LabelSpace::Cost, l).unwrap())
    }

    proptest! {
        #[test]
        fn override_is_monotone_and_idempotent(
            g in arb_cost_grid(), bits in prop::collection::vec(any::<bool>(), 4), z in -0.5f64..2.0
        ) {
            let mut mask = StepMask::all_clear([2, 2]);
            for (c, &b) in bits.iter().enumerate() {
                mask.set(c / 2, c % 2, u8::from(b));
            }
            let map = flat_map(z);
            let once = apply_step_mask(&g, &mask, &map, 1.0).unwrap();
            let twice = apply_step_mask(&once, &mask, &map, 1.0).unwrap();
            prop_assert_eq!(&once, &twice);
            for (&a, &b) in g.labels().iter().zip(once.labels()) {
                let (sa, sb) = (CostLabel::from_id(a).unwrap(), CostLabel::from_id(b).unwrap());
                if a == UNKNOWN_ID {
                    prop_assert_eq!(b, UNKNOWN_ID);
                } else {
                    prop_assert!(sb.severity() >= sa.severity());
                }
            }
        }

        #[test]
        fn mapping_commutes_with_permutation(
            ids in prop::collection::vec(prop::sample::select(vec![0u8, 1, 2, 3, 4, 5, 6, 7, 8, 9, 255]), 40),
            rot in 0usize..40
        ) {
            let t = CostMappingTable::default();
            let g = VoxelGrid::from_labels(cfg(), LabelSpace::Semantic, ids.clone()).unwrap();
            let mut shifted = ids;
            shifted.rotate_left(rot);
            let gs = VoxelGrid::from_labels(cfg(), LabelSpace::Semantic, shifted).unwrap();
            let mut a = map_semantics_to_cost(&g, &t).unwrap().into_labels();
            a.rotate_left(rot);
            prop_assert_eq!(a, map_semantics_to_cost(&gs, &t).unwrap().into_labels());
        }
    }
}
