//! Synthetic scene generators shared by the benchmarks and the CLI tests.
//!
//! Scenes are built in world coordinates and written as sequence
//! directories: `velodyne/%06d.bin`, `labels/%06d.label`, `poses.txt`.

use std::fs;
use std::io;
use std::path::Path;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ordocc_core::SemanticLabel;

pub type Labeled = (Point3<f64>, SemanticLabel);

/// Ground elevation of the obstacle course, at a layer center of the default grid.
pub const GROUND_Z: f64 = -1.7;
/// Rubble wall: one voxel thick in x, 1 m tall.
pub const WALL_X: [f64; 2] = [10.0, 10.2];
pub const WALL_HEIGHT: f64 = 1.0;
/// Object bar overhanging the field, lower face 1.5 m above ground.
pub const BAR_X: [f64; 2] = [20.0, 22.0];
pub const BAR_CLEARANCE: f64 = 1.5;
pub const FIELD_X: [f64; 2] = [0.0, 30.0];
pub const FIELD_Y: [f64; 2] = [-10.0, 10.0];

fn steps(lo: f64, hi: f64, step: f64) -> impl Iterator<Item = f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..n).map(move |i| lo + step * (i as f64 + 0.5))
}

/// Flat grass field, rubble wall and overhanging object bar.
pub fn obstacle_course() -> Vec<Labeled> {
    let mut pts = Vec::new();
    for x in steps(FIELD_X[0], FIELD_X[1], 0.1) {
        for y in steps(FIELD_Y[0], FIELD_Y[1], 0.1) {
            pts.push((Point3::new(x, y, GROUND_Z), SemanticLabel::Grass));
        }
    }
    for x in steps(WALL_X[0], WALL_X[1], 0.05) {
        for y in steps(FIELD_Y[0], FIELD_Y[1], 0.1) {
            for dz in steps(0.0, WALL_HEIGHT, 0.05) {
                pts.push((Point3::new(x, y, GROUND_Z + dz), SemanticLabel::Rubble));
            }
        }
    }
    for x in steps(BAR_X[0], BAR_X[1], 0.1) {
        for y in steps(FIELD_Y[0], FIELD_Y[1], 0.1) {
            // inside the voxel whose lower face sits at the clearance height
            pts.push((Point3::new(x, y, GROUND_Z + BAR_CLEARANCE + 0.1), SemanticLabel::Object));
        }
    }
    pts
}

/// Rolling terrain with scattered rocks, bushes and trees, `n` random points.
pub fn rough_terrain(n: usize, seed: u64) -> Vec<Labeled> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ground = |x: f64, y: f64| GROUND_Z + 0.3 * (x / 5.0).sin() * (y / 7.0).cos();
    (0..n)
        .map(|_| {
            let x = rng.gen_range(0.0..38.0);
            let y = rng.gen_range(-25.0..25.0);
            let g = ground(x, y);
            match rng.gen_range(0..20) {
                0 => (Point3::new(x, y, g + rng.gen_range(0.0..0.6)), SemanticLabel::Rubble),
                1 => (Point3::new(x, y, g + rng.gen_range(0.0..1.2)), SemanticLabel::Bush),
                2 => (Point3::new(x, y, g + rng.gen_range(0.5..4.0)), SemanticLabel::Tree),
                3 | 4 => (Point3::new(x, y, g + rng.gen_range(-0.02..0.02)), SemanticLabel::Mud),
                _ => (Point3::new(x, y, g + rng.gen_range(-0.02..0.02)), SemanticLabel::Grass),
            }
        })
        .collect()
}

/// Elevations of a smooth random surface on an `nx × ny` raster.
pub fn random_elevations(nx: usize, ny: usize, seed: u64) -> Vec<Option<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b, c): (f64, f64, f64) = (rng.gen_range(0.1..0.5), rng.gen_range(2.0..8.0), rng.gen_range(2.0..8.0));
    (0..nx * ny)
        .map(|i| {
            let (x, y) = ((i / ny) as f64 * 0.2, (i % ny) as f64 * 0.2);
            (rng.gen::<f64>() > 0.05).then(|| a * (x / b).sin() + a * (y / c).cos() + rng.gen_range(-0.05..0.05))
        })
        .collect()
}

fn encode(points: &[Labeled], sensor: &Vector3<f64>) -> (Vec<u8>, Vec<u8>) {
    let mut cloud = Vec::with_capacity(points.len() * 16);
    let mut labels = Vec::with_capacity(points.len() * 4);
    for (p, l) in points {
        let q = p - sensor;
        for v in [q.x as f32, q.y as f32, q.z as f32, 0.5] {
            cloud.extend_from_slice(&v.to_le_bytes());
        }
        labels.extend_from_slice(&(l.id() as u32).to_le_bytes());
    }
    (cloud, labels)
}

/// Writes one frame per sensor position; frame `i` holds `frames[i]` seen
/// from `sensors[i]` (translation-only poses).
pub fn write_sequence(dir: &Path, frames: &[Vec<Labeled>], sensors: &[Vector3<f64>]) -> io::Result<()> {
    assert_eq!(frames.len(), sensors.len());
    fs::create_dir_all(dir.join("velodyne"))?;
    fs::create_dir_all(dir.join("labels"))?;
    let mut poses = String::new();
    for (i, (pts, s)) in frames.iter().zip(sensors).enumerate() {
        let (cloud, labels) = encode(pts, s);
        fs::write(dir.join("velodyne").join(format!("{i:06}.bin")), cloud)?;
        fs::write(dir.join("labels").join(format!("{i:06}.label")), labels)?;
        poses.push_str(&format!("1 0 0 {} 0 1 0 {} 0 0 1 {}\n", s.x, s.y, s.z));
    }
    fs::write(dir.join("poses.txt"), poses)
}

/// Sensor positions `(i − key)·dx` along x, so the key frame sits at the world origin.
pub fn sensors_along_x(frames: usize, key: usize, dx: f64) -> Vec<Vector3<f64>> {
    (0..frames)
        .map(|i| Vector3::new((i as f64 - key as f64) * dx, 0.0, 0.0))
        .collect()
}
