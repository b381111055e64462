use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use ordocc_core::ingest::{load_frame, parse_poses};
use ordocc_core::{CameraModel, PipelineConfig, PointCloudFrame, Pose};

use crate::{input_err, CliError, ErrorKind, Kind};

/// `start:end`, end exclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameRange {
    pub start: usize,
    pub end: usize,
}

impl FromStr for FrameRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s.split_once(':').ok_or_else(|| format!("expected start:end, got {s:?}"))?;
        let start = a.trim().parse::<usize>().map_err(|e| format!("bad start {a:?}: {e}"))?;
        let end = b.trim().parse::<usize>().map_err(|e| format!("bad end {b:?}: {e}"))?;
        if start >= end {
            return Err(format!("empty frame range {start}:{end}"));
        }
        Ok(FrameRange { start, end })
    }
}

/// Frames `start..end` around `key`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
    pub end: usize,
    pub key: usize,
}

impl Window {
    pub fn key_offset(&self) -> usize {
        self.key - self.start
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// A sequence directory:
///
/// ```text
/// <seq>/velodyne/000000.bin
/// <seq>/labels/000000.label
/// <seq>/poses.txt
/// <seq>/calib.json        (optional camera model)
/// ```
#[derive(Clone, Debug)]
pub struct Sequence {
    pub root: PathBuf,
    pub poses: Vec<Pose>,
    pub camera: Option<CameraModel>,
}

pub struct Loaded {
    pub frames: Vec<PointCloudFrame>,
    pub poses: Vec<Pose>,
    pub unmapped_labels: usize,
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| input_err(format!("cannot read {}: {e}", path.display())))
}

impl Sequence {
    pub fn open(root: &Path, with_camera: bool) -> Result<Self, CliError> {
        if !root.is_dir() {
            return Err(input_err(format!("sequence directory {} does not exist", root.display())));
        }
        let poses_path = root.join("poses.txt");
        let text = String::from_utf8(read(&poses_path)?)
            .map_err(|_| input_err(format!("{} is not UTF-8", poses_path.display())))?;
        let poses = parse_poses(&text).map_err(|e| input_err(format!("{}: {e}", poses_path.display())))?;
        if poses.is_empty() {
            return Err(input_err(format!("{} holds no poses", poses_path.display())));
        }
        let calib = root.join("calib.json");
        let camera = if with_camera && calib.exists() {
            let text = String::from_utf8(read(&calib)?)
                .map_err(|_| input_err(format!("{} is not UTF-8", calib.display())))?;
            Some(CameraModel::from_json(&text).map_err(|e| input_err(format!("{}: {e}", calib.display())))?)
        } else {
            None
        };
        Ok(Sequence {
            root: root.to_owned(),
            poses,
            camera,
        })
    }

    pub fn cloud_path(&self, i: usize) -> PathBuf {
        self.root.join("velodyne").join(format!("{i:06}.bin"))
    }

    pub fn label_path(&self, i: usize) -> PathBuf {
        self.root.join("labels").join(format!("{i:06}.label"))
    }

    /// Explicit range, or `key ± half_width` clipped to the available poses.
    pub fn window(&self, key: usize, frames: Option<FrameRange>, half_width: usize) -> Result<Window, CliError> {
        let n = self.poses.len();
        if key >= n {
            return Err(input_err(format!("key frame {key} but only {n} poses")));
        }
        let (start, end) = match frames {
            Some(r) => {
                if r.end > n {
                    return Err(input_err(format!("frame range {}:{} exceeds {n} poses", r.start, r.end)));
                }
                if !(r.start..r.end).contains(&key) {
                    return Err(input_err(format!("key frame {key} outside range {}:{}", r.start, r.end)));
                }
                (r.start, r.end)
            }
            None => (key.saturating_sub(half_width), (key + half_width + 1).min(n)),
        };
        Ok(Window { start, end, key })
    }

    /// Decodes every frame of the window in parallel, in frame order.
    pub fn load_frames(&self, w: &Window, cfg: &PipelineConfig, labeled: bool) -> Result<Loaded, CliError> {
        let remap = cfg.ingest.remap().kind(ErrorKind::Config)?;
        let loads = (w.start..w.end)
            .into_par_iter()
            .map(|i| {
                let cloud_path = self.cloud_path(i);
                let cloud = read(&cloud_path)?;
                let labels = if labeled { Some(read(&self.label_path(i))?) } else { None };
                load_frame(&cloud, labels.as_deref(), &remap, cfg.ingest.strict_labels, i)
                    .map_err(|e| input_err(format!("frame {i} ({}): {e}", cloud_path.display())))
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let unmapped_labels = loads.iter().map(|l| l.unmapped_labels).sum();
        if unmapped_labels > 0 {
            log::warn!("{unmapped_labels} points carried label ids without a table entry; mapped to void");
        }
        Ok(Loaded {
            frames: loads.into_iter().map(|l| l.frame).collect(),
            poses: self.poses[w.start..w.end].to_vec(),
            unmapped_labels,
        })
    }
}
