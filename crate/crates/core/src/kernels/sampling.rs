use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use super::grid::check_in_cube;
use super::tensor::FeatureMap;
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geom::Point3;
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseSample {
    pub cloud: PointCloud,
    /// Set when the input had fewer than `n` points and draws were repeated.
    pub topped_up: bool,
}

/// `n` points chosen uniformly without replacement, or every point plus
/// uniform draws with replacement when the input is short.
pub fn sample_coarse(points: &PointCloud, n: usize, rng: &mut SeededRng) -> Result<CoarseSample> {
    if points.is_empty() {
        return Err(Error::EmptyInput("coarse sampling input"));
    }
    let len = points.len();
    if len >= n {
        let mut ids = index::sample(rng, len, n).into_vec();
        ids.sort_unstable();
        return Ok(CoarseSample {
            cloud: points.select(&ids),
            topped_up: false,
        });
    }
    let mut ids: Vec<usize> = (0..len).collect();
    ids.extend((len..n).map(|_| rng.gen_range(0..len)));
    Ok(CoarseSample {
        cloud: points.select(&ids),
        topped_up: true,
    })
}

/// Lower corner of the cell holding coordinate `c` on an `r`-vertex axis.
/// A point exactly on a shared face belongs to the lower cell.
fn cell_index(c: f64, r: usize) -> usize {
    let t = (c + 1.0) * (r - 1) as f64 / 2.0;
    let i = (t.ceil() as i64 - 1).max(0) as usize;
    i.min(r - 2)
}

fn corner_voxels(p: &Point3, r: usize) -> [usize; 8] {
    let (i, j, k) = (cell_index(p.x, r), cell_index(p.y, r), cell_index(p.z, r));
    let mut out = [0; 8];
    for (v, o) in out.iter_mut().enumerate() {
        *o = ((k + (v >> 2 & 1)) * r + (j + (v >> 1 & 1))) * r + (i + (v & 1));
    }
    out
}

pub fn cubic_feature_len(maps: &[&FeatureMap]) -> usize {
    maps.iter().map(|m| 8 * m.channels()).sum()
}

/// Concatenates, per map in the given order, the raw features of the 8
/// vertices around each point (corner order x fastest). Rows are points.
pub fn cubic_feature_sampling(points: &PointCloud, maps: &[&FeatureMap]) -> Result<Vec<f64>> {
    check_in_cube(&points.points)?;
    if let Some(m) = maps.iter().find(|m| m.resolution() < 2) {
        return Err(Error::shape("cubic_feature_sampling", format!("map resolution {} < 2", m.resolution())));
    }
    let width = cubic_feature_len(maps);
    let mut out = vec![0.0; points.len() * width];
    out.par_chunks_mut(width.max(1))
        .zip(points.points.par_iter())
        .for_each(|(row, p)| {
            let mut at = 0;
            for m in maps {
                let c = m.channels();
                for v in corner_voxels(p, m.resolution()) {
                    row[at..at + c].copy_from_slice(m.voxel(v));
                    at += c;
                }
            }
        });
    Ok(out)
}

/// Gradient of `Σ upstream · features` with respect to each map's values.
pub fn cubic_feature_sampling_grad(points: &PointCloud, maps: &[&FeatureMap], upstream: &[f64]) -> Result<Vec<FeatureMap>> {
    check_in_cube(&points.points)?;
    let width = cubic_feature_len(maps);
    if upstream.len() != points.len() * width {
        return Err(Error::shape("cubic_feature_sampling_grad", "upstream size differs from the feature matrix"));
    }
    let mut grads: Vec<FeatureMap> = maps.iter().map(|m| FeatureMap::zeros(m.resolution(), m.channels())).collect();
    for (p, row) in points.points.iter().zip(upstream.chunks(width.max(1))) {
        let mut at = 0;
        for (m, g) in maps.iter().zip(grads.iter_mut()) {
            let c = m.channels();
            for v in corner_voxels(p, m.resolution()) {
                for (a, b) in g.voxel_mut(v).iter_mut().zip(&row[at..at + c]) {
                    *a += b;
                }
                at += c;
            }
        }
    }
    Ok(grads)
}
