use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geom::{Point3, Vec3};

/// Scalar lattice over [−1, 1]³ with `n` vertices per axis, x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrid {
    n: usize,
    values: Vec<f64>,
}

impl DenseGrid {
    pub fn zeros(n: usize) -> Result<DenseGrid> {
        if n < 2 {
            return Err(Error::invalid("grid needs at least 2 vertices per axis"));
        }
        Ok(DenseGrid {
            n,
            values: vec![0.0; n * n * n],
        })
    }

    pub fn from_values(n: usize, values: Vec<f64>) -> Result<DenseGrid> {
        if n < 2 || values.len() != n * n * n {
            return Err(Error::shape("grid", format!("{} values for {n}³ vertices", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("grid values must be finite"));
        }
        Ok(DenseGrid { n, values })
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn spacing(&self) -> f64 {
        2.0 / (self.n - 1) as f64
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.n + j) * self.n + i
    }

    pub fn vertex(&self, i: usize, j: usize, k: usize) -> Point3 {
        let h = self.spacing();
        Point3::new(-1.0 + i as f64 * h, -1.0 + j as f64 * h, -1.0 + k as f64 * h)
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridNorm {
    /// Vertex value is the plain sum of point weights.
    #[default]
    Sum,
    /// Sum divided by the number of points that touch the vertex.
    Mean,
}

pub(crate) fn check_in_cube(points: &[Point3]) -> Result<()> {
    match points
        .iter()
        .position(|p| !(p.x.abs() <= 1.0 && p.y.abs() <= 1.0 && p.z.abs() <= 1.0))
    {
        Some(i) => {
            let p = points[i];
            Err(Error::OutsideCube { index: i, x: p.x, y: p.y, z: p.z })
        }
        None => Ok(()),
    }
}

/// Cell and local coordinate along one axis for gridding.
fn locate(c: f64, n: usize) -> (usize, f64) {
    let t = (c + 1.0) * (n - 1) as f64 / 2.0;
    let i = (t.floor() as usize).min(n - 2);
    (i, t - i as f64)
}

/// The 8 corner vertex ids of a point's cell with their trilinear weights
/// and the weights' derivatives (per unit coordinate), corner order x fastest.
pub(crate) struct Corners {
    pub ids: [usize; 8],
    pub w: [f64; 8],
    pub dw: [Vec3; 8],
}

pub(crate) fn corners(p: &Point3, n: usize) -> Corners {
    let (i, fx) = locate(p.x, n);
    let (j, fy) = locate(p.y, n);
    let (k, fz) = locate(p.z, n);
    let inv_h = (n - 1) as f64 / 2.0;
    let mut c = Corners {
        ids: [0; 8],
        w: [0.0; 8],
        dw: [Vec3::zeros(); 8],
    };
    for v in 0..8 {
        let (dx, dy, dz) = (v & 1, (v >> 1) & 1, (v >> 2) & 1);
        let wx = if dx == 1 { fx } else { 1.0 - fx };
        let wy = if dy == 1 { fy } else { 1.0 - fy };
        let wz = if dz == 1 { fz } else { 1.0 - fz };
        let sx = if dx == 1 { inv_h } else { -inv_h };
        let sy = if dy == 1 { inv_h } else { -inv_h };
        let sz = if dz == 1 { inv_h } else { -inv_h };
        c.ids[v] = ((k + dz) * n + (j + dy)) * n + (i + dx);
        c.w[v] = wx * wy * wz;
        c.dw[v] = Vec3::new(sx * wy * wz, wx * sy * wz, wx * wy * sz);
    }
    c
}

fn contributor_counts(points: &[Point3], n: usize) -> Vec<u32> {
    let mut counts = vec![0u32; n * n * n];
    for p in points {
        let c = corners(p, n);
        for v in 0..8 {
            if c.w[v] != 0.0 {
                counts[c.ids[v]] += 1;
            }
        }
    }
    counts
}

/// Scatters every point's trilinear weights onto an `n`³ lattice.
pub fn gridding(cloud: &PointCloud, n: usize, norm: GridNorm) -> Result<DenseGrid> {
    check_in_cube(&cloud.points)?;
    let mut grid = DenseGrid::zeros(n)?;
    for p in &cloud.points {
        let c = corners(p, n);
        for v in 0..8 {
            grid.values[c.ids[v]] += c.w[v];
        }
    }
    if norm == GridNorm::Mean {
        let counts = contributor_counts(&cloud.points, n);
        for (g, &c) in grid.values.iter_mut().zip(&counts) {
            if c > 0 {
                *g /= c as f64;
            }
        }
    }
    Ok(grid)
}

/// Gradient of `Σ upstream[v] · W[v]` with respect to every point.
pub fn gridding_grad(cloud: &PointCloud, n: usize, norm: GridNorm, upstream: &[f64]) -> Result<Vec<Vec3>> {
    check_in_cube(&cloud.points)?;
    if upstream.len() != n * n * n {
        return Err(Error::shape("gridding_grad", format!("upstream has {} values, grid {n}³", upstream.len())));
    }
    let scaled: Vec<f64> = match norm {
        GridNorm::Sum => upstream.to_vec(),
        GridNorm::Mean => {
            // counts are piecewise constant in the points
            let counts = contributor_counts(&cloud.points, n);
            upstream
                .iter()
                .zip(&counts)
                .map(|(u, &c)| if c > 0 { u / c as f64 } else { 0.0 })
                .collect()
        }
    };
    Ok(cloud
        .points
        .par_iter()
        .map(|p| {
            let c = corners(p, n);
            (0..8).fold(Vec3::zeros(), |acc, v| acc + c.dw[v] * scaled[c.ids[v]])
        })
        .collect())
}

/// Points emitted by `gridding_reverse`, with the cell each came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ReverseOutput {
    pub cloud: PointCloud,
    /// Cell id `(k·(n−1) + j)·(n−1) + i` per emitted point.
    pub cells: Vec<usize>,
}

fn cell_vertices(n: usize, cell: usize) -> [usize; 8] {
    let m = n - 1;
    let (i, j, k) = (cell % m, (cell / m) % m, cell / (m * m));
    let mut ids = [0; 8];
    for (v, id) in ids.iter_mut().enumerate() {
        let (dx, dy, dz) = (v & 1, (v >> 1) & 1, (v >> 2) & 1);
        *id = ((k + dz) * n + (j + dy)) * n + (i + dx);
    }
    ids
}

/// One point per cell whose vertex values do not sum to zero: the
/// value-weighted mean of the cell's 8 vertex positions.
pub fn gridding_reverse(grid: &DenseGrid) -> ReverseOutput {
    let n = grid.n;
    let m = n - 1;
    let emitted: Vec<(usize, Point3)> = (0..m * m * m)
        .into_par_iter()
        .filter_map(|cell| {
            let ids = cell_vertices(n, cell);
            let s: f64 = ids.iter().map(|&v| grid.values[v]).sum();
            if s == 0.0 {
                return None;
            }
            let mut acc = Vec3::zeros();
            for &v in &ids {
                let (i, j, k) = (v % n, (v / n) % n, v / (n * n));
                acc += grid.vertex(i, j, k).coords * grid.values[v];
            }
            // the weighted mean is inside the cube up to rounding
            let p = (acc / s).map(|c| c.clamp(-1.0, 1.0));
            Some((cell, Point3::from(p)))
        })
        .collect();
    let (cells, points) = emitted.into_iter().unzip();
    ReverseOutput {
        cloud: PointCloud::normalized(points),
        cells,
    }
}

/// Gradient of `Σ upstream_i · point_i` with respect to the grid values.
pub fn gridding_reverse_grad(grid: &DenseGrid, out: &ReverseOutput, upstream: &[Vec3]) -> Result<Vec<f64>> {
    if upstream.len() != out.cells.len() {
        return Err(Error::shape("gridding_reverse_grad", "upstream rows differ from emitted points"));
    }
    let n = grid.n;
    let mut g = vec![0.0; n * n * n];
    for ((&cell, p), u) in out.cells.iter().zip(&out.cloud.points).zip(upstream) {
        let ids = cell_vertices(n, cell);
        let s: f64 = ids.iter().map(|&v| grid.values[v]).sum();
        for &v in &ids {
            let (i, j, k) = (v % n, (v / n) % n, v / (n * n));
            g[v] += u.dot(&(grid.vertex(i, j, k) - p)) / s;
        }
    }
    Ok(g)
}
