//! Colored point export of occupied voxels in PLY format.

use std::collections::BTreeMap;
use std::io::Write;

use crate::grid::{is_occupied, VoxelGrid};
use crate::labels::LabelSpace;
use crate::{Error, Result};

/// Label id → RGB.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Palette(BTreeMap<u8, [u8; 3]>);

impl Palette {
    /// Fixed, arbitrary colors per class.
    pub fn default_for(space: LabelSpace) -> Self {
        let colors: &[(u8, [u8; 3])] = match space {
            LabelSpace::Semantic => &[
                (0, [0, 0, 0]),
                (1, [0, 102, 0]),
                (2, [0, 255, 0]),
                (3, [170, 170, 170]),
                (4, [255, 255, 0]),
                (5, [204, 153, 255]),
                (6, [0, 128, 255]),
                (7, [255, 0, 0]),
                (8, [139, 69, 19]),
                (9, [255, 153, 0]),
                (255, [255, 255, 255]),
            ],
            LabelSpace::Cost => &[
                (0, [0, 0, 0]),
                (1, [0, 200, 0]),
                (2, [200, 220, 0]),
                (3, [255, 140, 0]),
                (4, [220, 0, 0]),
                (255, [255, 255, 255]),
            ],
        };
        Palette(colors.iter().copied().collect())
    }

    /// Overrides from `{ "<class name>": [r, g, b], ... }` on top of the default.
    pub fn from_json(json: &str, space: LabelSpace) -> Result<Self> {
        let raw: BTreeMap<String, [u8; 3]> = serde_json::from_str(json)?;
        let mut p = Palette::default_for(space);
        for (name, rgb) in raw {
            let id = space
                .ids()
                .find(|&id| space.name_of(id) == Some(name.as_str()))
                .ok_or_else(|| Error::Config(format!("palette names unknown {space} class {name:?}")))?;
            p.0.insert(id, rgb);
        }
        Ok(p)
    }

    pub fn color(&self, id: u8) -> [u8; 3] {
        self.0.get(&id).copied().unwrap_or([255, 255, 255])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

/// One vertex per occupied voxel at its center, with color and label.
/// Returns the number of vertices written.
pub fn write_ply<W: Write>(grid: &VoxelGrid, palette: &Palette, encoding: PlyEncoding, mut out: W) -> Result<usize> {
    let cfg = grid.config();
    let occupied: Vec<usize> = grid
        .labels()
        .iter()
        .enumerate()
        .filter_map(|(i, &id)| is_occupied(id).then_some(i))
        .collect();
    let format = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    write!(
        out,
        "ply\nformat {format} 1.0\ncomment label space {}\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\n\
         property uchar label\nend_header\n",
        grid.space(),
        occupied.len()
    )?;
    for &lin in &occupied {
        let c = cfg.center_unchecked(cfg.unravel(lin));
        let id = grid.labels()[lin];
        let [r, g, b] = palette.color(id);
        match encoding {
            PlyEncoding::Ascii => writeln!(out, "{} {} {} {r} {g} {b} {id}", c.x as f32, c.y as f32, c.z as f32)?,
            PlyEncoding::BinaryLittleEndian => {
                for v in [c.x, c.y, c.z] {
                    out.write_all(&(v as f32).to_le_bytes())?;
                }
                out.write_all(&[r, g, b, id])?;
            }
        }
    }
    out.flush()?;
    Ok(occupied.len())
}
