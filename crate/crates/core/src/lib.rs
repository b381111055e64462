//! Dense traversability-cost occupancy grids from semantically labeled LiDAR
//! sequences.
//!
//! The pipeline aggregates labeled frames into the key frame, voxelizes them
//! into a semantic grid, derives ground geometry from a 2.5D elevation map,
//! checks vehicle passability and maps semantics to cost levels. Kernel-based
//! scene completion and scoring live in [`bki`] and [`eval`].

pub mod bki;
pub mod costmap;
pub mod error;
pub mod eval;
pub mod export;
pub mod format;
pub mod geomfeat;
pub mod grid;
pub mod ingest;
pub mod mobility;
pub mod labels;
pub mod pipeline;
pub mod spatial;

pub use bki::{BkiConfig, CompletionMode, DirichletGrid, Observation};
pub use costmap::CostMappingTable;
pub use error::{Error, Result};
pub use eval::{ConfusionMatrix, LossReport, MetricReport, ProbGrid};
pub use export::{write_ply, Palette, PlyEncoding};
pub use format::{read_grid, write_grid, DecodeError, Sidecar};
pub use geomfeat::{ElevationMap, GeomFeatures, NeighborhoodSpec, PlaneFit};
pub use grid::{GridConfig, VoxelGrid};
pub use ingest::{CameraModel, Point, PointCloudFrame, Pose};
pub use labels::{CostLabel, LabelSet, LabelSpace, SemanticLabel};
pub use mobility::{StepMask, VehicleParams};
pub use pipeline::{annotate, Annotation, AnnotationStats, PipelineConfig};

pub use nalgebra::{Matrix3, Point3, Vector3};
