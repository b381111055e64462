//! Semantic and traversability-cost label spaces.
//!
//! Both spaces store one byte per voxel. Id 0 is the empty class of each
//! space (`void` for semantics, `empty` for cost) and id 255 is reserved for
//! `unknown`, which marks voxels outside the evaluation mask.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::Error;

/// Id of the empty class in either label space.
pub const EMPTY_ID: u8 = 0;
/// Id reserved for voxels outside the evaluation mask.
pub const UNKNOWN_ID: u8 = 255;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
#[repr(u8)]
pub enum SemanticLabel {
    Void = 0,
    Grass = 1,
    Tree = 2,
    HardSurface = 3,
    Object = 4,
    Bush = 5,
    Water = 6,
    Person = 7,
    Mud = 8,
    Rubble = 9,
    Unknown = UNKNOWN_ID,
}

impl SemanticLabel {
    /// Number of regular classes (void included, unknown excluded).
    pub const COUNT: usize = 10;

    /// The nine classes that can be observed as occupied.
    pub const OCCUPIED: [SemanticLabel; 9] = [
        SemanticLabel::Grass,
        SemanticLabel::Tree,
        SemanticLabel::HardSurface,
        SemanticLabel::Object,
        SemanticLabel::Bush,
        SemanticLabel::Water,
        SemanticLabel::Person,
        SemanticLabel::Mud,
        SemanticLabel::Rubble,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        use SemanticLabel::*;
        Some(match id {
            0 => Void,
            1 => Grass,
            2 => Tree,
            3 => HardSurface,
            4 => Object,
            5 => Bush,
            6 => Water,
            7 => Person,
            8 => Mud,
            9 => Rubble,
            UNKNOWN_ID => Unknown,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        use SemanticLabel::*;
        match self {
            Void => "void",
            Grass => "grass",
            Tree => "tree",
            HardSurface => "hard-surface",
            Object => "object",
            Bush => "bush",
            Water => "water",
            Person => "person",
            Mud => "mud",
            Rubble => "rubble",
            Unknown => "unknown",
        }
    }
}

impl fmt::Display for SemanticLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SemanticLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let normalized = s.trim().to_ascii_lowercase().replace('_', "-");
        (0..SemanticLabel::COUNT as u8)
            .chain(std::iter::once(UNKNOWN_ID))
            .filter_map(SemanticLabel::from_id)
            .find(|l| l.name() == normalized)
            .ok_or_else(|| Error::Config(format!("unknown semantic class name {s:?}")))
    }
}

/// Traversability cost, ordered by severity.
///
/// `Unknown` sorts last but is not a severity level; use [`CostLabel::severity`]
/// when comparing difficulty.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum CostLabel {
    Empty = 0,
    Free = 1,
    LowCost = 2,
    MediumCost = 3,
    Lethal = 4,
    Unknown = UNKNOWN_ID,
}

impl CostLabel {
    pub const COUNT: usize = 5;

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        use CostLabel::*;
        Some(match id {
            0 => Empty,
            1 => Free,
            2 => LowCost,
            3 => MediumCost,
            4 => Lethal,
            UNKNOWN_ID => Unknown,
            _ => return None,
        })
    }

    /// Severity rank, `None` for `Unknown`.
    pub fn severity(self) -> Option<u8> {
        match self {
            CostLabel::Unknown => None,
            other => Some(other as u8),
        }
    }

    pub fn name(self) -> &'static str {
        use CostLabel::*;
        match self {
            Empty => "empty",
            Free => "free",
            LowCost => "low_cost",
            MediumCost => "medium_cost",
            Lethal => "lethal",
            Unknown => "unknown",
        }
    }
}

impl fmt::Display for CostLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CostLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let normalized = s.trim().to_ascii_lowercase().replace('-', "_");
        (0..CostLabel::COUNT as u8)
            .chain(std::iter::once(UNKNOWN_ID))
            .filter_map(CostLabel::from_id)
            .find(|l| l.name() == normalized)
            .ok_or_else(|| Error::Config(format!("unknown cost level {s:?}")))
    }
}

/// Which label space a voxel grid stores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSpace {
    Semantic,
    Cost,
}

impl LabelSpace {
    /// Tag byte used in the grid file header.
    pub fn tag(self) -> u8 {
        match self {
            LabelSpace::Semantic => 0,
            LabelSpace::Cost => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(LabelSpace::Semantic),
            1 => Some(LabelSpace::Cost),
            _ => None,
        }
    }

    /// Number of regular classes, the empty class included.
    pub fn class_count(self) -> usize {
        match self {
            LabelSpace::Semantic => SemanticLabel::COUNT,
            LabelSpace::Cost => CostLabel::COUNT,
        }
    }

    pub fn is_valid(self, id: u8) -> bool {
        id == UNKNOWN_ID || (id as usize) < self.class_count()
    }

    pub fn name_of(self, id: u8) -> Option<&'static str> {
        match self {
            LabelSpace::Semantic => SemanticLabel::from_id(id).map(SemanticLabel::name),
            LabelSpace::Cost => CostLabel::from_id(id).map(CostLabel::name),
        }
    }

    /// All valid ids of the space, `unknown` last.
    pub fn ids(self) -> impl Iterator<Item = u8> {
        (0..self.class_count() as u8).chain(std::iter::once(UNKNOWN_ID))
    }

    pub fn name(self) -> &'static str {
        match self {
            LabelSpace::Semantic => "semantic",
            LabelSpace::Cost => "cost",
        }
    }
}

impl fmt::Display for LabelSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LabelSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "semantic" => Ok(LabelSpace::Semantic),
            "cost" => Ok(LabelSpace::Cost),
            other => Err(Error::Config(format!("unknown label space {other:?}"))),
        }
    }
}

impl From<SemanticLabel> for String {
    fn from(l: SemanticLabel) -> Self {
        l.name().to_owned()
    }
}

impl TryFrom<String> for SemanticLabel {
    type Error = Error;

    fn try_from(s: String) -> Result<Self, Error> {
        s.parse()
    }
}

/// A set of semantic classes, e.g. the classes treated as terrain surface.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "Vec<SemanticLabel>", from = "Vec<SemanticLabel>")]
pub struct LabelSet(u16);

impl From<LabelSet> for Vec<SemanticLabel> {
    fn from(s: LabelSet) -> Self {
        s.iter().collect()
    }
}

impl From<Vec<SemanticLabel>> for LabelSet {
    fn from(v: Vec<SemanticLabel>) -> Self {
        v.into_iter().collect()
    }
}

impl LabelSet {
    pub fn empty() -> Self {
        LabelSet(0)
    }

    pub fn insert(&mut self, label: SemanticLabel) {
        if let Some(bit) = Self::bit(label.id()) {
            self.0 |= bit;
        }
    }

    pub fn contains_id(&self, id: u8) -> bool {
        Self::bit(id).is_some_and(|b| self.0 & b != 0)
    }

    pub fn contains(&self, label: SemanticLabel) -> bool {
        self.contains_id(label.id())
    }

    pub fn iter(&self) -> impl Iterator<Item = SemanticLabel> + '_ {
        (0..SemanticLabel::COUNT as u8)
            .filter(|&id| self.contains_id(id))
            .filter_map(SemanticLabel::from_id)
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    fn bit(id: u8) -> Option<u16> {
        ((id as usize) < SemanticLabel::COUNT).then(|| 1u16 << id)
    }
}

impl FromIterator<SemanticLabel> for LabelSet {
    fn from_iter<I: IntoIterator<Item = SemanticLabel>>(iter: I) -> Self {
        let mut set = LabelSet::empty();
        for l in iter {
            set.insert(l);
        }
        set
    }
}

/// Terrain classes used to build the elevation map by default.
pub fn default_ground_classes() -> LabelSet {
    [
        SemanticLabel::Grass,
        SemanticLabel::HardSurface,
        SemanticLabel::Mud,
        SemanticLabel::Rubble,
    ]
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn semantic_ids_round_trip() {
        for id in LabelSpace::Semantic.ids() {
            let l = SemanticLabel::from_id(id).unwrap();
            assert_eq!(l.id(), id);
            assert_eq!(l.name().parse::<SemanticLabel>().unwrap(), l);
        }
        assert!(SemanticLabel::from_id(10).is_none());
        assert_eq!(
            "hard_surface".parse::<SemanticLabel>().unwrap(),
            SemanticLabel::HardSurface
        );
    }

    #[test]
    fn cost_severity_is_ordered() {
        use CostLabel::*;
        let levels = [Empty, Free, LowCost, MediumCost, Lethal];
        for w in levels.windows(2) {
            assert!(w[0].severity() < w[1].severity());
        }
        assert_eq!(Unknown.severity(), None);
        assert_eq!("medium-cost".parse::<CostLabel>().unwrap(), MediumCost);
    }

    #[test]
    fn label_space_validity() {
        assert!(LabelSpace::Cost.is_valid(4));
        assert!(!LabelSpace::Cost.is_valid(5));
        assert!(LabelSpace::Cost.is_valid(UNKNOWN_ID));
        assert!(LabelSpace::Semantic.is_valid(9));
        assert!(!LabelSpace::Semantic.is_valid(10));
    }

    #[test]
    fn label_set_membership() {
        let set = default_ground_classes();
        assert!(set.contains(SemanticLabel::Grass));
        assert!(!set.contains(SemanticLabel::Tree));
        assert!(!set.contains_id(UNKNOWN_ID));
        assert_eq!(set.iter().count(), 4);
    }
}
