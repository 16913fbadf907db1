//! Analytic street scanner used for fixtures and the end-to-end demo.
//!
//! The street is extruded along +x: every cross-section (y, z) is the same
//! set of horizontal and vertical line pieces, lifted by `slope * x`. The
//! scanner drives along y = `head_y` and sweeps one 3000-step profile per
//! column in the plane x = const, which is how the scan strip's rows and
//! columns arise.

use rand::Rng;

use crate::cloud::PointCloud;
use crate::error::Result;
use crate::geom::{Point3, Vec3};
use crate::rng::SeededRng;
use crate::scanstrip::{estimate_normals, filter_strip, strip_to_oriented_cloud, FilterConfig, ScanRecord, ScanStrip, STRIP_ROWS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProfileSurface {
    /// Surface at height `z` for `y_min <= y <= y_max`.
    Horizontal { z: f64, y_min: f64, y_max: f64 },
    /// Wall at `y` for `z_min <= z <= z_max`.
    Vertical { y: f64, z_min: f64, z_max: f64 },
}

impl ProfileSurface {
    fn intersect(&self, oy: f64, oz: f64, dy: f64, dz: f64) -> Option<f64> {
        match *self {
            ProfileSurface::Horizontal { z, y_min, y_max } => {
                if dz.abs() < 1e-12 {
                    return None;
                }
                let t = (z - oz) / dz;
                let y = oy + t * dy;
                (t > 0.0 && y >= y_min && y <= y_max).then_some(t)
            }
            ProfileSurface::Vertical { y, z_min, z_max } => {
                if dy.abs() < 1e-12 {
                    return None;
                }
                let t = (y - oy) / dy;
                let z = oz + t * dz;
                (t > 0.0 && z >= z_min && z <= z_max).then_some(t)
            }
        }
    }

    fn reflectance(&self) -> f64 {
        match self {
            ProfileSurface::Horizontal { .. } => 0.3,
            ProfileSurface::Vertical { .. } => 0.6,
        }
    }
}

/// Road between two curbs, raised sidewalks and building facades.
pub fn street_profile(curb_offset: f64, curb_height: f64, sidewalk_width: f64) -> Vec<ProfileSurface> {
    let facade = curb_offset + sidewalk_width;
    let mut s = vec![ProfileSurface::Horizontal {
        z: 0.0,
        y_min: -curb_offset,
        y_max: curb_offset,
    }];
    for sign in [-1.0, 1.0] {
        s.push(ProfileSurface::Vertical {
            y: sign * curb_offset,
            z_min: 0.0,
            z_max: curb_height,
        });
        let (a, b) = (sign * curb_offset, sign * facade);
        s.push(ProfileSurface::Horizontal {
            z: curb_height,
            y_min: a.min(b),
            y_max: a.max(b),
        });
        s.push(ProfileSurface::Vertical {
            y: sign * facade,
            z_min: curb_height,
            z_max: 10.0,
        });
    }
    s
}

#[derive(Debug, Clone)]
pub struct StreetScanner {
    pub surfaces: Vec<ProfileSurface>,
    pub head_y: f64,
    pub sensor_height: f64,
    pub column_spacing: f64,
    /// Ground rise per meter along x.
    pub slope: f64,
    /// Half-width of uniform range noise (meters).
    pub range_noise: f64,
    pub max_range: f64,
    pub seed: u64,
}

impl Default for StreetScanner {
    fn default() -> Self {
        StreetScanner {
            surfaces: street_profile(5.0, 0.15, 3.0),
            head_y: 0.0,
            sensor_height: 2.75,
            column_spacing: 0.05,
            slope: 0.0,
            range_noise: 0.0,
            max_range: 50.0,
            seed: 0,
        }
    }
}

impl StreetScanner {
    pub fn ground_z(&self, x: f64) -> f64 {
        self.slope * x
    }

    pub fn head_at(&self, x: f64) -> Point3 {
        Point3::new(x, self.head_y, self.ground_z(x) + self.sensor_height)
    }

    /// Row `r` points at angle `-pi/2 + 2 pi (r + 1/2) / 3000` in the yz-plane,
    /// so row 0 looks straight down.
    pub fn row_direction(row: usize) -> (f64, f64) {
        let theta = -std::f64::consts::FRAC_PI_2
            + std::f64::consts::TAU * (row as f64 + 0.5) / STRIP_ROWS as f64;
        (theta.cos(), theta.sin())
    }

    pub fn scan(&self, x_start: f64, cols: usize) -> Result<ScanStrip> {
        let mut records = vec![ScanRecord::INVALID; STRIP_ROWS * cols];
        let root = SeededRng::new(self.seed).derive("street-scan");
        for col in 0..cols {
            let x = x_start + col as f64 * self.column_spacing;
            let head = self.head_at(x);
            let g = self.ground_z(x);
            // noise stream keyed by the column's position, so overlapping
            // scans agree
            let mut rng = root.derive(format!("{:.6}", x));
            for row in 0..STRIP_ROWS {
                let (dy, dz) = Self::row_direction(row);
                let hit = self
                    .surfaces
                    .iter()
                    .filter_map(|s| s.intersect(self.head_y, self.sensor_height, dy, dz).map(|t| (t, s)))
                    .min_by(|a, b| a.0.total_cmp(&b.0));
                let noise = if self.range_noise > 0.0 {
                    rng.gen_range(-self.range_noise..self.range_noise)
                } else {
                    0.0
                };
                let Some((t, surface)) = hit else { continue };
                if t > self.max_range {
                    continue;
                }
                let t = t + noise;
                let p = Point3::new(x, self.head_y + t * dy, self.sensor_height + t * dz + g);
                let mut rec = ScanRecord::hit(p, head);
                rec.reflectance = Some(surface.reflectance());
                records[row * cols + col] = rec;
            }
        }
        ScanStrip::new(cols, records)
    }

    /// Scans `[x_start, x_start + cols * spacing)` in column chunks,
    /// estimating normals and applying the range/height filters per chunk.
    /// Keeps only oriented points.
    pub fn filtered_cloud(&self, x_start: f64, cols: usize, cfg: &FilterConfig) -> Result<PointCloud> {
        const CHUNK: usize = 128;
        let mut out: Option<PointCloud> = None;
        let mut done = 0;
        while done < cols {
            let n = CHUNK.min(cols - done);
            let strip = self.scan(x_start + done as f64 * self.column_spacing, n)?;
            let strip = filter_strip(&estimate_normals(&strip), cfg);
            let part = strip_to_oriented_cloud(&strip);
            out = Some(match out {
                None => part,
                Some(acc) => acc.concat(&part)?,
            });
            done += n;
        }
        Ok(out.unwrap_or_else(|| {
            let mut c = PointCloud::with_heads(Vec::new(), Vec::new());
            c.normals = Some(Vec::<Vec3>::new());
            c
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_ground_hits_lie_on_ground() {
        let scanner = StreetScanner {
            surfaces: vec![ProfileSurface::Horizontal { z: 0.0, y_min: -10.0, y_max: 10.0 }],
            ..StreetScanner::default()
        };
        let strip = scanner.scan(1.0, 3).unwrap();
        assert!(strip.valid_count() > 500);
        for r in strip.records().iter().filter(|r| r.valid) {
            assert!(r.p.z.abs() < 1e-9);
            assert!(r.p.y.abs() <= 10.0 + 1e-9);
            assert_eq!(r.h.z, 2.75);
        }
    }

    #[test]
    fn slope_lifts_everything() {
        let scanner = StreetScanner {
            slope: 0.1,
            ..StreetScanner::default()
        };
        let strip = scanner.scan(10.0, 1).unwrap();
        let r = strip.get(0, 0);
        assert!(r.valid);
        assert!((r.p.z - 1.0).abs() < 1e-9);
        assert!((r.h.z - 3.75).abs() < 1e-9);
    }

    #[test]
    fn noise_is_deterministic() {
        let scanner = StreetScanner {
            range_noise: 0.01,
            seed: 3,
            ..StreetScanner::default()
        };
        assert_eq!(scanner.scan(0.0, 2).unwrap(), scanner.scan(0.0, 2).unwrap());
    }
}
