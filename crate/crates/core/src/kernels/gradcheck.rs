//! Central finite-difference checks of the analytic kernel gradients.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::folding::{folding_densify, folding_grad, FoldingConfig, FoldingParams};
use super::grid::{gridding, gridding_grad, gridding_reverse, gridding_reverse_grad, DenseGrid, GridNorm};
use super::sampling::{cubic_feature_sampling, cubic_feature_sampling_grad};
use super::tensor::FeatureMap;
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geom::{Point3, Vec3};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradKernel {
    Gridding,
    GriddingReverse,
    CubicFeatureSampling,
    Folding,
}

impl GradKernel {
    pub const ALL: [GradKernel; 4] = [
        GradKernel::Gridding,
        GradKernel::GriddingReverse,
        GradKernel::CubicFeatureSampling,
        GradKernel::Folding,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradKernel::Gridding => "gridding",
            GradKernel::GriddingReverse => "gridding_reverse",
            GradKernel::CubicFeatureSampling => "cubic_feature_sampling",
            GradKernel::Folding => "folding",
        }
    }
}

impl fmt::Display for GradKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GradKernel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        GradKernel::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown kernel {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub kernel: GradKernel,
    pub trials: usize,
    pub eps: f64,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    /// Gradient entries compared across all trials.
    pub entries: usize,
}

/// `max |a − f| / max(|a|, |f|)` over one gradient vector.
fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, f)| (a - f).abs())
        .fold(0.0, f64::max);
    let scale = analytic.iter().chain(numeric).map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn central(eps: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(eps) - f(-eps)) / (2.0 * eps)
}

fn uniform_vec(n: usize, rng: &mut SeededRng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Random point kept at least 1% of a cell away from every cell face.
fn interior_point(n: usize, rng: &mut SeededRng) -> Point3 {
    let h = 2.0 / (n - 1) as f64;
    let mut c = || -1.0 + (rng.gen_range(0..n - 1) as f64 + rng.gen_range(0.01..0.99)) * h;
    Point3::new(c(), c(), c())
}

fn trial_gridding(eps: f64, rng: &mut SeededRng) -> Result<(f64, usize)> {
    let n = rng.gen_range(4..=8);
    let norm = if rng.gen_bool(0.5) { GridNorm::Sum } else { GridNorm::Mean };
    let cloud = PointCloud::normalized((0..12).map(|_| interior_point(n, rng)).collect());
    let up = uniform_vec(n * n * n, rng);
    let analytic: Vec<f64> = gridding_grad(&cloud, n, norm, &up)?.iter().flat_map(|g| [g.x, g.y, g.z]).collect();
    let loss = |c: &PointCloud| -> Result<f64> { Ok(gridding(c, n, norm)?.values().iter().zip(&up).map(|(a, b)| a * b).sum()) };
    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..cloud.len() {
        for a in 0..3 {
            let mut err = None;
            numeric.push(central(eps, |e| {
                let mut c = cloud.clone();
                c.points[i][a] += e;
                loss(&c).unwrap_or_else(|x| {
                    err = Some(x);
                    0.0
                })
            }));
            if let Some(e) = err {
                return Err(e);
            }
        }
    }
    Ok((rel_error(&analytic, &numeric), analytic.len()))
}

fn trial_reverse(eps: f64, rng: &mut SeededRng) -> Result<(f64, usize)> {
    let n = rng.gen_range(3..=8);
    // strictly positive values keep every emitted point off the clamp at
    // the cube faces, where the map is not differentiable
    let values: Vec<f64> = (0..n * n * n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let grid = DenseGrid::from_values(n, values)?;
    let out = gridding_reverse(&grid);
    let up: Vec<Vec3> = (0..out.cells.len())
        .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let analytic = gridding_reverse_grad(&grid, &out, &up)?;
    let loss = |g: &DenseGrid| -> f64 {
        gridding_reverse(g)
            .cloud
            .points
            .iter()
            .zip(&up)
            .map(|(p, u)| u.dot(&p.coords))
            .sum()
    };
    let mut numeric = Vec::with_capacity(analytic.len());
    for v in 0..grid.values().len() {
        numeric.push(central(eps, |e| {
            let mut vals = grid.values().to_vec();
            vals[v] += e;
            loss(&DenseGrid::from_values(n, vals).expect("same shape"))
        }));
    }
    Ok((rel_error(&analytic, &numeric), analytic.len()))
}

fn trial_cubic(eps: f64, rng: &mut SeededRng) -> Result<(f64, usize)> {
    let shapes = [(3, 2), (4, 3), (5, 2)];
    let maps: Vec<FeatureMap> = shapes
        .iter()
        .map(|&(r, c)| FeatureMap::from_data(r, c, uniform_vec(r * r * r * c, rng)))
        .collect::<Result<_>>()?;
    let cloud = PointCloud::normalized((0..10).map(|_| interior_point(5, rng)).collect());
    let refs: Vec<&FeatureMap> = maps.iter().collect();
    let width = super::sampling::cubic_feature_len(&refs);
    let up = uniform_vec(cloud.len() * width, rng);
    let analytic: Vec<f64> = cubic_feature_sampling_grad(&cloud, &refs, &up)?
        .into_iter()
        .flat_map(|m| m.into_data())
        .collect();
    let mut numeric = Vec::with_capacity(analytic.len());
    for m in 0..maps.len() {
        for v in 0..maps[m].data().len() {
            numeric.push(central(eps, |e| {
                let mut ms = maps.clone();
                ms[m].data_mut()[v] += e;
                let refs: Vec<&FeatureMap> = ms.iter().collect();
                cubic_feature_sampling(&cloud, &refs)
                    .expect("valid instance")
                    .iter()
                    .zip(&up)
                    .map(|(a, b)| a * b)
                    .sum()
            }));
        }
    }
    Ok((rel_error(&analytic, &numeric), analytic.len()))
}

fn trial_folding(eps: f64, rng: &mut SeededRng) -> Result<(f64, usize)> {
    let f = 6;
    let params = FoldingParams::init(f, 8, &rng.derive("params"));
    let cfg = FoldingConfig::default();
    let coarse = PointCloud::normalized(
        (0..4)
            .map(|_| Point3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect(),
    );
    let feats = uniform_vec(coarse.len() * f, rng);
    let up = uniform_vec(coarse.len() * cfg.ratio() * 3, rng);
    let grads = folding_grad(&coarse, &feats, &params, &cfg, &up)?;
    let loss = |p: &FoldingParams| -> f64 {
        folding_densify(&coarse, &feats, p, &cfg)
            .expect("valid instance")
            .points
            .iter()
            .flat_map(|q| [q.x, q.y, q.z])
            .zip(&up)
            .map(|(a, b)| a * b)
            .sum()
    };
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for fold in 0..2 {
        let layer_grads = if fold == 0 { &grads.fold1 } else { &grads.fold2 };
        for (l, g) in layer_grads.iter().enumerate() {
            for (is_bias, values) in [(false, &g.weight), (true, &g.bias)] {
                for (i, &a) in values.iter().enumerate() {
                    analytic.push(a);
                    numeric.push(central(eps, |e| {
                        let mut p = params.clone();
                        let mlp = if fold == 0 { &mut p.fold1 } else { &mut p.fold2 };
                        let lin = &mut mlp.layers[l].linear;
                        if is_bias {
                            lin.bias[i] += e;
                        } else {
                            lin.weight[i] += e;
                        }
                        loss(&p)
                    }));
                }
            }
        }
    }
    Ok((rel_error(&analytic, &numeric), analytic.len()))
}

/// Runs `trials` random instances of one kernel and reports the worst
/// relative error between analytic and central-difference gradients.
pub fn grad_check(kernel: GradKernel, trials: usize, eps: f64, seed: u64) -> Result<KernelReport> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {eps}")));
    }
    if trials == 0 {
        return Err(Error::invalid("at least one trial is required"));
    }
    let root = SeededRng::new(seed).derive(format!("grad-check/{kernel}"));
    let mut errors = Vec::with_capacity(trials);
    let mut entries = 0;
    for t in 0..trials {
        let mut rng = root.derive(t);
        let (err, n) = match kernel {
            GradKernel::Gridding => trial_gridding(eps, &mut rng)?,
            GradKernel::GriddingReverse => trial_reverse(eps, &mut rng)?,
            GradKernel::CubicFeatureSampling => trial_cubic(eps, &mut rng)?,
            GradKernel::Folding => trial_folding(eps, &mut rng)?,
        };
        errors.push(err);
        entries += n;
    }
    Ok(KernelReport {
        kernel,
        trials,
        eps,
        max_rel_error: errors.iter().copied().fold(0.0, f64::max),
        mean_rel_error: errors.iter().sum::<f64>() / trials as f64,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_step_is_rejected() {
        assert!(grad_check(GradKernel::Gridding, 1, 0.0, 0).is_err());
        assert!(grad_check(GradKernel::Gridding, 1, f64::NAN, 0).is_err());
    }

    #[test]
    fn names_roundtrip() {
        for k in GradKernel::ALL {
            assert_eq!(k.name().parse::<GradKernel>().unwrap(), k);
        }
    }

    #[test]
    fn every_kernel_passes_a_few_trials() {
        for k in GradKernel::ALL {
            let r = grad_check(k, 3, 1e-6, 11).unwrap();
            assert!(r.max_rel_error < 1e-4, "{k}: {}", r.max_rel_error);
        }
    }
}
