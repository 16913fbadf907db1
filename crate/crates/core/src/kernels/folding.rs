use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{Activation, LinearGrad, Mlp, MlpCache};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geom::Point3;
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoldingConfig {
    /// Grid side; each coarse point becomes `u²` output points.
    pub u: usize,
    /// Half-extent of the 2D folding grid.
    pub extent: f64,
}

impl Default for FoldingConfig {
    fn default() -> Self {
        FoldingConfig { u: 3, extent: 0.05 }
    }
}

impl FoldingConfig {
    pub fn ratio(&self) -> usize {
        self.u * self.u
    }

    /// Grid coordinate for tile slot `j = a·u + b`.
    pub fn grid(&self, j: usize) -> [f64; 2] {
        let lin = |a: usize| {
            if self.u == 1 {
                0.0
            } else {
                -self.extent + 2.0 * self.extent * a as f64 / (self.u - 1) as f64
            }
        };
        [lin(j / self.u), lin(j % self.u)]
    }
}

/// The two shared per-row MLPs of the folding decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldingParams {
    pub fold1: Mlp,
    pub fold2: Mlp,
}

impl FoldingParams {
    /// Each fold is `in → hidden → hidden → 3` with batch norm and ReLU on
    /// the hidden layers.
    pub fn init(feature_len: usize, hidden: usize, rng: &SeededRng) -> FoldingParams {
        FoldingParams {
            fold1: Mlp::init(&[2 + 3 + feature_len, hidden, hidden, 3], Activation::Relu, Activation::Identity, true, &mut rng.derive("fold1")),
            fold2: Mlp::init(&[3 + 3 + feature_len, hidden, hidden, 3], Activation::Relu, Activation::Identity, true, &mut rng.derive("fold2")),
        }
    }

    pub fn feature_len(&self) -> usize {
        self.fold1.in_features() - 5
    }

    pub fn zero(&mut self) {
        for l in self.fold1.layers.iter_mut().chain(self.fold2.layers.iter_mut()) {
            l.linear.weight.fill(0.0);
            l.linear.bias.fill(0.0);
        }
    }
}

fn check(coarse: &PointCloud, feats: &[f64], params: &FoldingParams) -> Result<usize> {
    let f = params.feature_len();
    if params.fold2.in_features() != 6 + f {
        return Err(Error::shape("folding", "second fold input does not match the first"));
    }
    if params.fold1.out_features() != 3 || params.fold2.out_features() != 3 {
        return Err(Error::shape("folding", "folds must output 3 values"));
    }
    if feats.len() != coarse.len() * f {
        return Err(Error::shape(
            "folding",
            format!("{} feature values for {} points of width {f}", feats.len(), coarse.len()),
        ));
    }
    Ok(f)
}

struct FoldPass {
    out: Vec<f64>,
    c1: MlpCache,
    c2: MlpCache,
}

fn run(coarse: &PointCloud, feats: &[f64], params: &FoldingParams, cfg: &FoldingConfig) -> Result<FoldPass> {
    let f = check(coarse, feats, params)?;
    let r = cfg.ratio();
    let rows = coarse.len() * r;
    let w1 = 5 + f;
    let mut x1 = vec![0.0; rows * w1];
    x1.par_chunks_mut(w1).enumerate().for_each(|(row, x)| {
        let (i, j) = (row / r, row % r);
        let p = coarse.points[i];
        x[..2].copy_from_slice(&cfg.grid(j));
        x[2..5].copy_from_slice(&[p.x, p.y, p.z]);
        x[5..].copy_from_slice(&feats[i * f..(i + 1) * f]);
    });
    let (o1, c1) = params.fold1.forward_cached(&x1, "fold1")?;
    drop(x1);
    let w2 = 6 + f;
    let mut x2 = vec![0.0; rows * w2];
    x2.par_chunks_mut(w2).enumerate().for_each(|(row, x)| {
        let i = row / r;
        let p = coarse.points[i];
        x[..3].copy_from_slice(&o1[row * 3..row * 3 + 3]);
        x[3..6].copy_from_slice(&[p.x, p.y, p.z]);
        x[6..].copy_from_slice(&feats[i * f..(i + 1) * f]);
    });
    let (out, c2) = params.fold2.forward_cached(&x2, "fold2")?;
    Ok(FoldPass { out, c1, c2 })
}

/// Densifies `coarse` by `u²`: output row `i·u² + j` is the offset predicted
/// for coarse point `i` and grid slot `j`, plus that coarse point.
pub fn folding_densify(coarse: &PointCloud, feats: &[f64], params: &FoldingParams, cfg: &FoldingConfig) -> Result<PointCloud> {
    let pass = run(coarse, feats, params, cfg)?;
    let r = cfg.ratio();
    let points = pass
        .out
        .chunks(3)
        .enumerate()
        .map(|(row, m)| {
            let p = coarse.points[row / r];
            Point3::new(m[0] + p.x, m[1] + p.y, m[2] + p.z)
        })
        .collect();
    Ok(PointCloud::normalized(points))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldingGrad {
    pub fold1: Vec<LinearGrad>,
    pub fold2: Vec<LinearGrad>,
}

/// Gradient of `Σ upstream · output` with respect to every folding weight
/// and bias.
pub fn folding_grad(coarse: &PointCloud, feats: &[f64], params: &FoldingParams, cfg: &FoldingConfig, upstream: &[f64]) -> Result<FoldingGrad> {
    let pass = run(coarse, feats, params, cfg)?;
    if upstream.len() != pass.out.len() {
        return Err(Error::shape("folding_grad", "upstream size differs from the output"));
    }
    let (g2, dx2) = params.fold2.backward(&pass.c2, upstream);
    let w2 = params.fold2.in_features();
    let do1: Vec<f64> = dx2.chunks(w2).flat_map(|row| row[..3].to_vec()).collect();
    let (g1, _) = params.fold1.backward(&pass.c1, &do1);
    Ok(FoldingGrad { fold1: g1, fold2: g2 })
}

/// Tiles every coarse point `u²` times (the output with zero offsets).
pub fn tile(coarse: &PointCloud, cfg: &FoldingConfig) -> PointCloud {
    let r = cfg.ratio();
    PointCloud::normalized(coarse.points.iter().flat_map(|p| std::iter::repeat(*p).take(r)).collect())
}


#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn inputs(n: usize, f: usize, seed: u64) -> (PointCloud, Vec<f64>) {
        let mut rng = SeededRng::new(seed);
        let pts = (0..n)
            .map(|_| Point3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let feats = (0..n * f).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (PointCloud::normalized(pts), feats)
    }

    #[test]
    fn grid_layout() {
        let cfg = FoldingConfig::default();
        assert_eq!(cfg.grid(0), [-0.05, -0.05]);
        assert_eq!(cfg.grid(4), [0.0, 0.0]);
        assert_eq!(cfg.grid(5), [0.0, 0.05]);
        assert_eq!(cfg.ratio(), 9);
    }

    #[test]
    fn zero_params_tile_exactly() {
        let (c, f) = inputs(10, 4, 1);
        let mut p = FoldingParams::init(4, 8, &SeededRng::new(2));
        p.zero();
        let out = folding_densify(&c, &f, &p, &FoldingConfig::default()).unwrap();
        assert_eq!(out, tile(&c, &FoldingConfig::default()));
    }

    #[test]
    fn row_permutation_permutes_blocks() {
        let (c, f) = inputs(6, 4, 3);
        let p = FoldingParams::init(4, 8, &SeededRng::new(4));
        let cfg = FoldingConfig::default();
        let out = folding_densify(&c, &f, &p, &cfg).unwrap();
        let perm = [3, 0, 5, 1, 4, 2];
        let pc = c.select(&perm);
        let pf: Vec<f64> = perm.iter().flat_map(|&i| f[i * 4..i * 4 + 4].to_vec()).collect();
        let pout = folding_densify(&pc, &pf, &p, &cfg).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(pout.points[k * 9..k * 9 + 9], out.points[i * 9..i * 9 + 9]);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let (c, f) = inputs(3, 4, 5);
        let p = FoldingParams::init(5, 8, &SeededRng::new(6));
        assert!(matches!(folding_densify(&c, &f, &p, &FoldingConfig::default()), Err(Error::Shape { .. })));
    }
}
