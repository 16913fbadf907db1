//! Completion losses and evaluation metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{Frame, PointCloud};
use crate::error::{Error, Result};
use crate::geom::{principal_axes, Point3};
use crate::kdtree::KdIndex;
use crate::kernels::{gridding, GridNorm};

pub const METRICS_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_FSCORE_THRESHOLD: f64 = 0.01;
pub const LOSS_GRID: usize = 80;

fn check_pair(a: &PointCloud, b: &PointCloud) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("metrics need two non-empty clouds"));
    }
    if a.frame != b.frame {
        return Err(Error::FrameMismatch(format!("{} vs {}", a.frame.as_str(), b.frame.as_str())));
    }
    Ok(())
}

/// Squared distance from every point of `from` to its nearest neighbour in
/// `to`, in point order.
fn nn_sq(from: &[Point3], to: &KdIndex) -> Vec<f64> {
    from.par_iter().map(|p| to.nearest_sq(p).1).collect()
}

fn mean(v: &[f64]) -> f64 {
    // sequential so the result does not depend on the thread count
    v.iter().sum::<f64>() / v.len() as f64
}

/// Symmetric mean of squared nearest-neighbour distances.
pub fn chamfer(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    check_pair(p, q)?;
    let ip = KdIndex::build(&p.points)?;
    let iq = KdIndex::build(&q.points)?;
    Ok(mean(&nn_sq(&p.points, &iq)) + mean(&nn_sq(&q.points, &ip)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FScore {
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

fn fraction_within(d2: &[f64], d: f64) -> f64 {
    d2.iter().filter(|&&v| v.sqrt() < d).count() as f64 / d2.len() as f64
}

pub fn fscore(output: &PointCloud, gt: &PointCloud, d: f64) -> Result<FScore> {
    check_pair(output, gt)?;
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::invalid(format!("distance threshold must be positive, got {d}")));
    }
    let io = KdIndex::build(&output.points)?;
    let ig = KdIndex::build(&gt.points)?;
    let precision = fraction_within(&nn_sq(&output.points, &ig), d);
    let recall = fraction_within(&nn_sq(&gt.points, &io), d);
    let fscore = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(FScore { precision, recall, fscore })
}

/// Mean absolute difference of the two clouds' `80³` lattices.
pub fn gridding_loss(pred: &PointCloud, gt: &PointCloud) -> Result<f64> {
    let a = gridding(pred, LOSS_GRID, GridNorm::Sum)?;
    let b = gridding(gt, LOSS_GRID, GridNorm::Sum)?;
    let total: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).sum();
    Ok(total / a.values().len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub alpha: f64,
    /// 1: chamfer on the coarse cloud; 2: gridding loss on the coarse cloud.
    pub stage: u8,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { alpha: 0.01, stage: 1 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !matches!(self.stage, 1 | 2) {
            return Err(Error::invalid(format!("stage must be 1 or 2, got {}", self.stage)));
        }
        Ok(())
    }
}

pub fn staged_loss(coarse: &PointCloud, output: &PointCloud, gt: &PointCloud, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    let first = match cfg.stage {
        1 => chamfer(coarse, gt)?,
        _ => gridding_loss(coarse, gt)?,
    };
    Ok(first + cfg.alpha * chamfer(output, gt)?)
}

pub const PLANE_NEIGHBORS: usize = 15;
const HIST_BIN: f64 = 0.01;
const HIST_BINS: usize = 20;
// rms spread orthogonal to the main axis below which a neighbourhood is a line
const COLLINEAR_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneStats {
    pub k: usize,
    pub distances: Vec<f64>,
    /// Points whose neighbourhood was collinear; their distance is to the
    /// fitted line.
    pub line_fallback: Vec<usize>,
    pub within_5cm: f64,
    pub within_10cm: f64,
    /// Counts per 1 cm bin; the last bin also holds everything beyond.
    pub histogram: Vec<usize>,
    pub bin_width: f64,
}

/// Distance from every filled point to the plane through its `k` nearest
/// ground-truth points.
pub fn plane_stats(filled: &PointCloud, dense_gt: &PointCloud, k: usize) -> Result<PlaneStats> {
    check_pair(filled, dense_gt)?;
    if k < 3 {
        return Err(Error::invalid("a plane needs at least 3 neighbours"));
    }
    if dense_gt.len() < k {
        return Err(Error::InsufficientPoints { have: dense_gt.len(), need: k });
    }
    let index = KdIndex::build(&dense_gt.points)?;
    let per_point: Vec<(f64, bool)> = filled
        .points
        .par_iter()
        .map(|p| -> Result<(f64, bool)> {
            let nb: Vec<Point3> = index.nearest_k(p, k)?.iter().map(|n| dense_gt.points[n.id]).collect();
            let pa = principal_axes(&nb).expect("k ≥ 3 neighbours");
            let d = p - pa.centroid;
            if pa.eigenvalues[1].sqrt() <= COLLINEAR_TOL {
                let a = pa.axes[2];
                Ok(((d - a * d.dot(&a)).norm(), true))
            } else {
                Ok((d.dot(&pa.axes[0]).abs(), false))
            }
        })
        .collect::<Result<_>>()?;
    let distances: Vec<f64> = per_point.iter().map(|x| x.0).collect();
    let line_fallback = per_point.iter().enumerate().filter(|(_, x)| x.1).map(|(i, _)| i).collect();
    let n = distances.len() as f64;
    let mut histogram = vec![0; HIST_BINS];
    for &d in &distances {
        histogram[((d / HIST_BIN) as usize).min(HIST_BINS - 1)] += 1;
    }
    Ok(PlaneStats {
        k,
        within_5cm: distances.iter().filter(|&&d| d <= 0.05).count() as f64 / n,
        within_10cm: distances.iter().filter(|&&d| d <= 0.10).count() as f64 / n,
        distances,
        line_fallback,
        histogram,
        bin_width: HIST_BIN,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub frame: Frame,
    pub threshold: f64,
    pub cd: f64,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
    /// Only defined when both clouds lie in the normalized cube.
    pub gridding_loss: Option<f64>,
    pub pred_points: usize,
    pub gt_points: usize,
}

impl MetricsReport {
    /// Chamfer distance in the customary ×10⁴ display units.
    pub fn cd_display(&self) -> f64 {
        self.cd * 1e4
    }
}

pub fn evaluate(pred: &PointCloud, gt: &PointCloud, d: f64) -> Result<MetricsReport> {
    let f = fscore(pred, gt, d)?;
    let in_cube = |c: &PointCloud| c.points.iter().all(|p| p.iter().all(|v| v.abs() <= 1.0));
    let gridding_loss = if pred.frame == Frame::Normalized && in_cube(pred) && in_cube(gt) {
        Some(gridding_loss(pred, gt)?)
    } else {
        None
    };
    Ok(MetricsReport {
        schema_version: METRICS_SCHEMA_VERSION,
        frame: pred.frame,
        threshold: d,
        cd: chamfer(pred, gt)?,
        precision: f.precision,
        recall: f.recall,
        fscore: f.fscore,
        gridding_loss,
        pred_points: pred.len(),
        gt_points: gt.len(),
    })
}
