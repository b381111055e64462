//! Grid scoring: confusion counts, IoU, mIoU, occupancy IoU, and the
//! cross-entropy and scale losses evaluated as offline scores.
//!
//! Voxels whose ground truth is `unknown` are outside the evaluation set and
//! never counted. A prediction of `unknown` inside the set counts as empty.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::VoxelGrid;
use crate::labels::{LabelSpace, EMPTY_ID, UNKNOWN_ID};
use crate::{Error, Result};

/// Floor applied to every ratio inside the scale-loss logs.
pub const RATIO_FLOOR: f64 = 1e-8;
/// Tolerance on probability vectors summing to one.
pub const PROB_SUM_TOL: f64 = 1e-6;

/// Counts indexed `[gt][pred]` over the evaluated voxels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    space: LabelSpace,
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(space: LabelSpace) -> Self {
        let n = space.class_count();
        ConfusionMatrix {
            space,
            n,
            counts: vec![0; n * n],
        }
    }

    /// From explicit rows (ground truth) of predicted counts.
    pub fn from_rows(space: LabelSpace, rows: &[Vec<u64>]) -> Result<Self> {
        let n = space.class_count();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch(format!(
                "confusion matrix for the {space} space must be {n}×{n}"
            )));
        }
        Ok(ConfusionMatrix {
            space,
            n,
            counts: rows.concat(),
        })
    }

    pub fn space(&self) -> LabelSpace {
        self.space
    }

    pub fn classes(&self) -> usize {
        self.n
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.n + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn gt_count(&self, c: usize) -> u64 {
        (0..self.n).map(|p| self.get(c, p)).sum()
    }

    pub fn pred_count(&self, c: usize) -> u64 {
        (0..self.n).map(|g| self.get(g, c)).sum()
    }

    /// `TP / (TP + FP + FN)`; `None` when the class is absent from both sides.
    pub fn iou(&self, c: usize) -> Option<f64> {
        let tp = self.get(c, c);
        let fp = self.pred_count(c) - tp;
        let fn_ = self.gt_count(c) - tp;
        let denom = tp + fp + fn_;
        (denom > 0).then(|| tp as f64 / denom as f64)
    }

    /// Mean IoU over the occupied classes with a defined IoU.
    pub fn miou(&self) -> Option<f64> {
        let defined: Vec<f64> = (1..self.n).filter_map(|c| self.iou(c)).collect();
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
    }

    /// IoU of the occupied set, classes ignored.
    pub fn sc_iou(&self) -> Option<f64> {
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        for g in 0..self.n {
            for p in 0..self.n {
                let v = self.get(g, p);
                match (g != 0, p != 0) {
                    (true, true) => tp += v,
                    (false, true) => fp += v,
                    (true, false) => fn_ += v,
                    (false, false) => {}
                }
            }
        }
        let denom = tp + fp + fn_;
        (denom > 0).then(|| tp as f64 / denom as f64)
    }
}

fn check_pair(pred: &VoxelGrid, gt: &VoxelGrid) -> Result<()> {
    if pred.config() != gt.config() {
        return Err(Error::DimensionMismatch(
            "prediction and ground truth have different grid geometry".into(),
        ));
    }
    if pred.space() != gt.space() {
        return Err(Error::Config(format!(
            "prediction is in the {} space, ground truth in the {} space",
            pred.space(),
            gt.space()
        )));
    }
    Ok(())
}

const CHUNK: usize = 1 << 16;

pub fn confusion(pred: &VoxelGrid, gt: &VoxelGrid) -> Result<ConfusionMatrix> {
    check_pair(pred, gt)?;
    let mut cm = ConfusionMatrix::new(gt.space());
    let n = cm.n;
    cm.counts = pred
        .labels()
        .par_chunks(CHUNK)
        .zip(gt.labels().par_chunks(CHUNK))
        .map(|(p, g)| {
            let mut local = vec![0u64; n * n];
            for (&pi, &gi) in p.iter().zip(g) {
                if gi == UNKNOWN_ID {
                    continue;
                }
                let pi = if pi == UNKNOWN_ID { EMPTY_ID } else { pi };
                local[gi as usize * n + pi as usize] += 1;
            }
            local
        })
        .reduce(
            || vec![0u64; n * n],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Ok(cm)
}

pub fn sc_iou(pred: &VoxelGrid, gt: &VoxelGrid) -> Result<Option<f64>> {
    Ok(confusion(pred, gt)?.sc_iou())
}

/// Evaluation set Ω: voxels whose ground truth is not `unknown`, ascending.
pub fn valid_voxels(gt: &VoxelGrid) -> Vec<usize> {
    gt.labels()
        .iter()
        .enumerate()
        .filter_map(|(i, &id)| (id != UNKNOWN_ID).then_some(i))
        .collect()
}

/// Per-voxel class distributions over Ω, stored as log-probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbGrid {
    classes: usize,
    voxels: Vec<usize>,
    log_p: Vec<f64>,
}

impl ProbGrid {
    /// `probs` holds `classes` values per voxel, voxel-major.
    pub fn from_probs(voxels: Vec<usize>, probs: &[f64], classes: usize) -> Result<Self> {
        Self::check_shape(&voxels, probs.len(), classes)?;
        for (row, v) in probs.chunks(classes).zip(&voxels) {
            if row.iter().any(|p| !(0.0..=1.0 + PROB_SUM_TOL).contains(p)) {
                return Err(Error::Domain(format!("probability outside [0, 1] at voxel {v}")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(Error::Domain(format!("probabilities at voxel {v} sum to {sum}")));
            }
        }
        Ok(ProbGrid {
            classes,
            voxels,
            log_p: probs.iter().map(|p| p.ln()).collect(),
        })
    }

    /// Softmax of raw logits, kept in log form.
    pub fn from_logits(voxels: Vec<usize>, logits: &[f64], classes: usize) -> Result<Self> {
        Self::check_shape(&voxels, logits.len(), classes)?;
        if logits.iter().any(|y| !y.is_finite()) {
            return Err(Error::NonFinite("logit".into()));
        }
        let mut log_p = Vec::with_capacity(logits.len());
        for row in logits.chunks(classes) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|y| (y - max).exp()).sum::<f64>().ln();
            log_p.extend(row.iter().map(|y| y - lse));
        }
        Ok(ProbGrid {
            classes,
            voxels,
            log_p,
        })
    }

    fn check_shape(voxels: &[usize], values: usize, classes: usize) -> Result<()> {
        if classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
        }
        if values != voxels.len() * classes {
            return Err(Error::LengthMismatch(format!(
                "{values} values for {} voxels × {classes} classes",
                voxels.len()
            )));
        }
        if voxels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("voxel list must be strictly ascending".into()));
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn voxels(&self) -> &[usize] {
        &self.voxels
    }

    pub fn log_prob(&self, row: usize, c: usize) -> f64 {
        self.log_p[row * self.classes + c]
    }

    pub fn prob(&self, row: usize, c: usize) -> f64 {
        self.log_prob(row, c).exp()
    }

    fn check_against(&self, gt: &VoxelGrid) -> Result<()> {
        if self.classes != gt.space().class_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} probability classes for the {} space ({} classes)",
                self.classes,
                gt.space(),
                gt.space().class_count()
            )));
        }
        if self.voxels != valid_voxels(gt) {
            return Err(Error::DimensionMismatch(
                "probability voxels differ from the ground-truth evaluation set".into(),
            ));
        }
        if self.voxels.is_empty() {
            return Err(Error::Domain("evaluation set is empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::Config("class weights must be positive and finite".into()));
        }
        Ok(ClassWeights(w))
    }

    pub fn uniform(classes: usize) -> Self {
        ClassWeights(vec![1.0; classes])
    }

    pub fn get(&self, c: usize) -> f64 {
        self.0[c]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Sign convention for the cross-entropy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CeSign {
    /// Non-negative, zero for a perfect prediction.
    #[default]
    Standard,
    /// Sum of log-probabilities without the leading minus.
    AsPrinted,
}

/// Class-weighted mean negative log-probability of the true class over Ω.
pub fn weighted_ce(p: &ProbGrid, gt: &VoxelGrid, w: &ClassWeights, sign: CeSign) -> Result<f64> {
    p.check_against(gt)?;
    if w.len() != p.classes {
        return Err(Error::DimensionMismatch(format!(
            "{} class weights for {} classes",
            w.len(),
            p.classes
        )));
    }
    let labels = gt.labels();
    let sum: f64 = p
        .voxels
        .iter()
        .enumerate()
        .map(|(row, &v)| {
            let t = labels[v] as usize;
            w.get(t) * p.log_prob(row, t)
        })
        .sum();
    let mean = sum / p.voxels.len() as f64;
    Ok(match sign {
        CeSign::Standard => -mean,
        CeSign::AsPrinted => mean,
    })
}

fn log_ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        (num / den).max(RATIO_FLOOR).ln()
    } else {
        0.0
    }
}

/// `−(1/M) Σ_c (P_c + R_c + S_c)` for targets `tar` and probabilities
/// `prob(i, c)`. A term whose denominator is zero contributes nothing.
fn scal(tar: &[usize], classes: usize, prob: impl Fn(usize, usize) -> f64) -> f64 {
    let mut total = 0.0;
    for c in 0..classes {
        let (mut tp, mut p_sum, mut pos, mut tn, mut neg) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (i, &t) in tar.iter().enumerate() {
            let p = prob(i, c);
            p_sum += p;
            if t == c {
                tp += p;
                pos += 1.0;
            } else {
                tn += 1.0 - p;
                neg += 1.0;
            }
        }
        total += log_ratio(tp, p_sum) + log_ratio(tp, pos) + log_ratio(tn, neg);
    }
    -total / classes as f64
}

/// Scale loss on the semantic targets over all classes of the space.
pub fn scale_loss(p: &ProbGrid, gt: &VoxelGrid) -> Result<f64> {
    p.check_against(gt)?;
    let labels = gt.labels();
    let tar: Vec<usize> = p.voxels.iter().map(|&v| labels[v] as usize).collect();
    Ok(scal(&tar, p.classes, |i, c| p.prob(i, c)))
}

/// Scale loss on occupied/empty targets with `p_occ = 1 − p_empty`.
pub fn scale_loss_geo(p: &ProbGrid, gt: &VoxelGrid) -> Result<f64> {
    p.check_against(gt)?;
    let labels = gt.labels();
    let tar: Vec<usize> = p
        .voxels
        .iter()
        .map(|&v| usize::from(labels[v] != EMPTY_ID))
        .collect();
    Ok(scal(&tar, 2, |i, c| {
        let empty = p.prob(i, EMPTY_ID as usize);
        if c == 0 {
            empty
        } else {
            1.0 - empty
        }
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub ce: f64,
    pub scal_sem: f64,
    pub scal_geo: f64,
    pub total: f64,
}

pub fn total_loss(ce: f64, scal_sem: f64, scal_geo: f64) -> LossReport {
    LossReport {
        ce,
        scal_sem,
        scal_geo,
        total: ce + scal_sem + scal_geo,
    }
}

/// All three losses for one probability grid.
pub fn loss_report(p: &ProbGrid, gt: &VoxelGrid, w: &ClassWeights, sign: CeSign) -> Result<LossReport> {
    Ok(total_loss(
        weighted_ce(p, gt, w, sign)?,
        scale_loss(p, gt)?,
        scale_loss_geo(p, gt)?,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub id: u8,
    pub name: String,
    pub iou: Option<f64>,
    pub gt_voxels: u64,
    pub pred_voxels: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub label_space: LabelSpace,
    pub classes: Vec<ClassScore>,
    pub miou: Option<f64>,
    pub sc_iou: Option<f64>,
    pub evaluated_voxels: u64,
    pub excluded_voxels: u64,
    pub loss: Option<LossReport>,
}

impl MetricReport {
    pub fn from_confusion(cm: &ConfusionMatrix, grid_len: usize) -> Self {
        MetricReport {
            label_space: cm.space,
            classes: (0..cm.n)
                .map(|c| ClassScore {
                    id: c as u8,
                    name: cm.space.name_of(c as u8).unwrap_or("?").to_owned(),
                    iou: cm.iou(c),
                    gt_voxels: cm.gt_count(c),
                    pred_voxels: cm.pred_count(c),
                })
                .collect(),
            miou: cm.miou(),
            sc_iou: cm.sc_iou(),
            evaluated_voxels: cm.total(),
            excluded_voxels: grid_len as u64 - cm.total(),
            loss: None,
        }
    }
}
