//! Bayesian kernel inference over labeled points.
//!
//! Each voxel keeps a Dirichlet concentration over the nine occupied
//! semantic classes. Observations add their anisotropic kernel weight
//! `exp(−½ dᵀ S⁻¹ d)` to the class they carry; the voxel is occupied when
//! the accumulated mass passes a threshold.

use nalgebra::{Cholesky, Matrix3, Point3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::{GridConfig, VoxelGrid};
use crate::labels::{LabelSpace, SemanticLabel, EMPTY_ID};
use crate::spatial::KdTree;
use crate::{Error, Result};

/// Number of classes carried by the posterior (void excluded).
pub const CLASSES: usize = SemanticLabel::OCCUPIED.len();

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompletionMode {
    /// Occupancy and label from the posterior.
    #[default]
    KernelArgmax,
    /// Occupancy from the posterior, label from the nearest observation.
    KernelOccupancyThenNn,
}

impl std::str::FromStr for CompletionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "kernel_argmax" => Ok(CompletionMode::KernelArgmax),
            "kernel_occupancy_then_nn" => Ok(CompletionMode::KernelOccupancyThenNn),
            _ => Err(Error::Config(format!("unknown completion mode {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BkiJson", into = "BkiJson")]
pub struct BkiConfig {
    s: Matrix3<f64>,
    s_inv: Matrix3<f64>,
    prior_alpha: f64,
    support_radius: f64,
    k: Option<usize>,
    occupancy_threshold: f64,
    mode: CompletionMode,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BkiJson {
    #[serde(rename = "S")]
    s: [[f64; 3]; 3],
    prior_alpha: f64,
    /// `null` disables truncation.
    support_radius_m: Option<f64>,
    /// `null` disables the neighbor cap.
    k: Option<usize>,
    occupancy_threshold: f64,
    #[serde(default)]
    mode: CompletionMode,
}

impl TryFrom<BkiJson> for BkiConfig {
    type Error = Error;

    fn try_from(j: BkiJson) -> Result<Self> {
        let s = Matrix3::from_fn(|r, c| j.s[r][c]);
        BkiConfig::new(s, j.prior_alpha, j.support_radius_m.unwrap_or(f64::INFINITY))?
            .with_k(j.k)?
            .with_occupancy_threshold(j.occupancy_threshold)
            .map(|b| b.with_mode(j.mode))
    }
}

impl From<BkiConfig> for BkiJson {
    fn from(b: BkiConfig) -> Self {
        BkiJson {
            s: [0, 1, 2].map(|r| [0, 1, 2].map(|c| b.s[(r, c)])),
            prior_alpha: b.prior_alpha,
            support_radius_m: b.support_radius.is_finite().then_some(b.support_radius),
            k: b.k,
            occupancy_threshold: b.occupancy_threshold,
            mode: b.mode,
        }
    }
}

impl BkiConfig {
    /// Kernel metric `s` must be symmetric positive definite; `support_radius`
    /// may be infinite. The neighbor cap defaults to 8.
    pub fn new(s: Matrix3<f64>, prior_alpha: f64, support_radius: f64) -> Result<Self> {
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("kernel covariance".into()));
        }
        if (s - s.transpose()).abs().max() > 1e-12 * s.abs().max().max(1.0) {
            return Err(Error::Config("kernel covariance S is not symmetric".into()));
        }
        let chol = Cholesky::new(s)
            .ok_or_else(|| Error::Config("kernel covariance S is not positive definite".into()))?;
        if !(prior_alpha > 0.0 && prior_alpha.is_finite()) {
            return Err(Error::Config(format!("prior_alpha must be positive, got {prior_alpha}")));
        }
        if !(support_radius > 0.0) {
            return Err(Error::Config(format!("support radius must be positive, got {support_radius}")));
        }
        Ok(BkiConfig {
            s,
            s_inv: chol.inverse(),
            prior_alpha,
            support_radius,
            k: Some(8),
            occupancy_threshold: 0.1,
            mode: CompletionMode::KernelArgmax,
        })
    }

    /// `None` lets every observation within the support contribute.
    pub fn with_k(mut self, k: Option<usize>) -> Result<Self> {
        if k == Some(0) {
            return Err(Error::Config("k must be at least 1".into()));
        }
        self.k = k;
        Ok(self)
    }

    pub fn with_occupancy_threshold(mut self, t: f64) -> Result<Self> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::Config(format!("occupancy threshold must be non-negative, got {t}")));
        }
        self.occupancy_threshold = t;
        Ok(self)
    }

    pub fn with_mode(mut self, mode: CompletionMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn s(&self) -> &Matrix3<f64> {
        &self.s
    }

    pub fn prior_alpha(&self) -> f64 {
        self.prior_alpha
    }

    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    pub fn k(&self) -> Option<usize> {
        self.k
    }

    pub fn occupancy_threshold(&self) -> f64 {
        self.occupancy_threshold
    }

    pub fn mode(&self) -> CompletionMode {
        self.mode
    }

    pub fn kernel(&self, x: &Point3<f64>, x2: &Point3<f64>) -> f64 {
        kernel_with_inverse(x, x2, &self.s_inv)
    }
}

impl Default for BkiConfig {
    fn default() -> Self {
        BkiConfig::new(Matrix3::from_diagonal(&[0.09, 0.09, 0.04].into()), 0.001, 1.0)
            .expect("default kernel is valid")
    }
}

/// Squared Mahalanobis distance under the metric whose inverse is `s_inv`.
pub fn mahalanobis_sq(x: &Point3<f64>, x2: &Point3<f64>, s_inv: &Matrix3<f64>) -> f64 {
    let d = x - x2;
    d.dot(&(s_inv * d)).max(0.0)
}

fn kernel_with_inverse(x: &Point3<f64>, x2: &Point3<f64>, s_inv: &Matrix3<f64>) -> f64 {
    (-0.5 * mahalanobis_sq(x, x2, s_inv)).exp()
}

/// Anisotropic kernel between two points; `s` must be positive definite.
pub fn kernel(x: &Point3<f64>, x2: &Point3<f64>, s: &Matrix3<f64>) -> Result<f64> {
    let inv = Cholesky::new(*s)
        .ok_or_else(|| Error::Config("kernel covariance S is not positive definite".into()))?
        .inverse();
    Ok(kernel_with_inverse(x, x2, &inv))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub position: Point3<f64>,
    pub label: SemanticLabel,
}

impl Observation {
    pub fn new(position: Point3<f64>, label: SemanticLabel) -> Self {
        Observation { position, label }
    }
}

fn class_slot(label: SemanticLabel) -> Result<usize> {
    match label {
        SemanticLabel::Void | SemanticLabel::Unknown => Err(Error::InvalidLabel {
            id: label.id(),
            space: LabelSpace::Semantic,
        }),
        l => Ok(l.id() as usize - 1),
    }
}

fn slot_label(slot: usize) -> SemanticLabel {
    SemanticLabel::OCCUPIED[slot]
}

/// Posterior concentrations; voxels nobody contributed to sit at the prior.
#[derive(Clone, Debug, PartialEq)]
pub struct DirichletGrid {
    config: GridConfig,
    prior_alpha: f64,
    /// (voxel, accumulated kernel mass per class), ascending voxel
    mass: Vec<(usize, [f64; CLASSES])>,
}

impl DirichletGrid {
    pub fn prior(config: GridConfig, prior_alpha: f64) -> Self {
        DirichletGrid {
            config,
            prior_alpha,
            mass: Vec::new(),
        }
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn prior_alpha(&self) -> f64 {
        self.prior_alpha
    }

    /// Voxels that received any kernel mass.
    pub fn touched(&self) -> impl Iterator<Item = (usize, &[f64; CLASSES])> + '_ {
        self.mass.iter().map(|(v, m)| (*v, m))
    }

    /// Accumulated kernel mass per class at a voxel.
    pub fn mass(&self, voxel: usize) -> [f64; CLASSES] {
        match self.mass.binary_search_by_key(&voxel, |(v, _)| *v) {
            Ok(i) => self.mass[i].1,
            Err(_) => [0.0; CLASSES],
        }
    }

    /// Concentration vector at a voxel, indexed by class id − 1.
    pub fn alpha(&self, voxel: usize) -> [f64; CLASSES] {
        self.mass(voxel).map(|m| m + self.prior_alpha)
    }

    pub fn total_mass(&self, voxel: usize) -> f64 {
        self.mass(voxel).iter().sum()
    }
}

fn candidate_voxels(obs: &[Observation], cfg: &GridConfig, radius: f64) -> Vec<usize> {
    if !radius.is_finite() {
        return (0..cfg.len()).collect();
    }
    let dims = cfg.dims();
    let origin = cfg.origin();
    let vs = cfg.voxel_size();
    let mut mark = vec![false; cfg.len()];
    for o in obs {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut inside = true;
        for a in 0..3 {
            // centers c with |c − p| ≤ r on this axis
            let first = ((o.position[a] - radius - origin[a]) / vs - 0.5).ceil();
            let last = ((o.position[a] + radius - origin[a]) / vs - 0.5).floor();
            let first = first.max(0.0);
            let last = last.min(dims[a] as f64 - 1.0);
            if first > last {
                inside = false;
                break;
            }
            lo[a] = first as usize;
            hi[a] = last as usize;
        }
        if !inside {
            continue;
        }
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                let base = cfg.linear([x, y, 0]);
                mark[base + lo[2]..=base + hi[2]].fill(true);
            }
        }
    }
    mark.iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect()
}

/// Kernel-weighted Dirichlet update over every voxel within the support
/// radius of an observation. With a neighbor cap, only the `k` highest kernel
/// weights per voxel contribute (ties to the lower observation index).
pub fn bki_update(obs: &[Observation], cfg: &GridConfig, bk: &BkiConfig) -> Result<DirichletGrid> {
    let slots: Vec<usize> = obs.iter().map(|o| class_slot(o.label)).collect::<Result<_>>()?;
    if obs.iter().any(|o| !o.position.iter().all(|v| v.is_finite())) {
        return Err(Error::NonFinite("observation position".into()));
    }
    let positions: Vec<Point3<f64>> = obs.iter().map(|o| o.position).collect();
    let tree = KdTree::build(&positions);
    let r = bk.support_radius;
    let candidates = if obs.is_empty() {
        Vec::new()
    } else {
        candidate_voxels(obs, cfg, r)
    };

    let mass: Vec<(usize, [f64; CLASSES])> = candidates
        .into_par_iter()
        .filter_map(|v| {
            let center = cfg.center_unchecked(cfg.unravel(v));
            let near: Vec<usize> = if r.is_finite() {
                tree.within_radius(&center, r)
            } else {
                (0..obs.len()).collect()
            };
            if near.is_empty() {
                return None;
            }
            let mut weighted: Vec<(usize, f64)> = near
                .into_iter()
                .map(|i| (i, kernel_with_inverse(&center, &positions[i], &bk.s_inv)))
                .collect();
            if let Some(k) = bk.k {
                if weighted.len() > k {
                    weighted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                    weighted.truncate(k);
                    weighted.sort_by_key(|&(i, _)| i);
                }
            }
            let mut m = [0.0; CLASSES];
            for (i, w) in weighted {
                m[slots[i]] += w;
            }
            Some((v, m))
        })
        .collect();
    Ok(DirichletGrid {
        config: *cfg,
        prior_alpha: bk.prior_alpha,
        mass,
    })
}

fn argmax_class(mass: &[f64; CLASSES]) -> SemanticLabel {
    let mut best = 0;
    for c in 1..CLASSES {
        if mass[c] > mass[best] {
            best = c;
        }
    }
    slot_label(best)
}

/// Voxels whose accumulated mass exceeds the threshold, ascending.
pub fn occupied_voxels(dg: &DirichletGrid, occupancy_threshold: f64) -> Vec<usize> {
    dg.touched()
        .filter(|(_, m)| m.iter().sum::<f64>() > occupancy_threshold)
        .map(|(v, _)| v)
        .collect()
}

/// Occupied voxels take the posterior argmax (ties to the smaller class id).
pub fn classify(dg: &DirichletGrid, occupancy_threshold: f64) -> VoxelGrid {
    let mut labels = vec![EMPTY_ID; dg.config.len()];
    for (v, m) in dg.touched() {
        if m.iter().sum::<f64>() > occupancy_threshold {
            labels[v] = argmax_class(m).id();
        }
    }
    VoxelGrid::from_labels(dg.config, LabelSpace::Semantic, labels).expect("ids from the semantic space")
}

/// Label of the nearest observation to each voxel center, ties to the lower
/// observation index.
pub fn nn_assign(occupied: &[usize], cfg: &GridConfig, obs: &[Observation]) -> Result<Vec<SemanticLabel>> {
    if obs.is_empty() {
        return Err(Error::NoObservations);
    }
    if let Some(&v) = occupied.iter().find(|&&v| v >= cfg.len()) {
        return Err(Error::IndexOutOfRange {
            index: cfg.unravel(v),
            dims: cfg.dims(),
        });
    }
    let positions: Vec<Point3<f64>> = obs.iter().map(|o| o.position).collect();
    let tree = KdTree::build(&positions);
    Ok(occupied
        .par_iter()
        .map(|&v| {
            let (i, _) = tree
                .nearest(&cfg.center_unchecked(cfg.unravel(v)))
                .expect("tree is non-empty");
            obs[i].label
        })
        .collect())
}

/// Dense semantic occupancy from labeled points.
pub fn complete_scene(obs: &[Observation], cfg: &GridConfig, bk: &BkiConfig) -> Result<VoxelGrid> {
    let dg = bki_update(obs, cfg, bk)?;
    match bk.mode {
        CompletionMode::KernelArgmax => Ok(classify(&dg, bk.occupancy_threshold)),
        CompletionMode::KernelOccupancyThenNn => {
            let occupied = occupied_voxels(&dg, bk.occupancy_threshold);
            let mut labels = vec![EMPTY_ID; cfg.len()];
            if !occupied.is_empty() {
                for (v, l) in occupied.iter().zip(nn_assign(&occupied, cfg, obs)?) {
                    labels[*v] = l.id();
                }
            }
            VoxelGrid::from_labels(*cfg, LabelSpace::Semantic, labels)
        }
    }
}

/// Observations from a labeled cloud, skipping void and unknown points.
pub fn observations_from_cloud(cloud: &crate::ingest::PointCloudFrame) -> Result<Vec<Observation>> {
    let labeled = cloud
        .labeled_points()
        .ok_or_else(|| Error::Config("scene completion needs a labeled cloud".into()))?;
    Ok(labeled
        .filter_map(|(p, id)| {
            let l = SemanticLabel::from_id(id)?;
            class_slot(l).ok().map(|_| Observation::new(*p, l))
        })
        .collect())
}
