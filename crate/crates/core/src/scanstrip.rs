//! Scan strips: the per-rotation image of a mobile-mapping scanner.
//!
//! Rows index the mirror angle (exactly 3000 returns per rotation), columns
//! index acquisition time. Records are stored row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geom::{is_finite, xy_distance, Point3, Vec3};

pub const STRIP_ROWS: usize = 3000;

const MAGIC: &[u8; 4] = b"SST1";

// plane bits of the SST1 header, in on-disk order
const PLANE_NAMES: [&str; 11] = ["px", "py", "pz", "hx", "hy", "hz", "nx", "ny", "nz", "reflectance", "valid"];
const REQUIRED_PLANES: u32 = 0b100_0011_1111;
const NORMAL_PLANES: u32 = 0b001_1100_0000;
const REFLECTANCE_PLANE: u32 = 1 << 9;
const ALL_PLANES: u32 = (1 << 11) - 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanRecord {
    pub p: Point3,
    pub h: Point3,
    pub normal: Option<Vec3>,
    pub reflectance: Option<f64>,
    pub valid: bool,
}

impl ScanRecord {
    pub const INVALID: ScanRecord = ScanRecord {
        p: Point3::new(0.0, 0.0, 0.0),
        h: Point3::new(0.0, 0.0, 0.0),
        normal: None,
        reflectance: None,
        valid: false,
    };

    pub fn hit(p: Point3, h: Point3) -> Self {
        ScanRecord {
            p,
            h,
            normal: None,
            reflectance: None,
            valid: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanStrip {
    cols: usize,
    records: Vec<ScanRecord>,
    /// Source identifier, carried into segments. Not serialized.
    pub id: u32,
}

impl ScanStrip {
    /// Builds a strip from `STRIP_ROWS * cols` row-major records.
    pub fn new(cols: usize, records: Vec<ScanRecord>) -> Result<Self> {
        if cols == 0 {
            return Err(Error::invalid("scan strip needs at least one column"));
        }
        if records.len() != STRIP_ROWS * cols {
            return Err(Error::invalid(format!(
                "expected {} records for {STRIP_ROWS}x{cols}, got {}",
                STRIP_ROWS * cols,
                records.len()
            )));
        }
        for (i, r) in records.iter().enumerate() {
            if r.valid && (!is_finite(&r.p) || !is_finite(&r.h)) {
                return Err(Error::invalid(format!("record {i} is valid but not finite")));
            }
        }
        Ok(ScanStrip {
            cols,
            records,
            id: 0,
        })
    }

    pub fn invalid(cols: usize) -> Result<Self> {
        Self::new(cols, vec![ScanRecord::INVALID; STRIP_ROWS * cols])
    }

    pub fn rows(&self) -> usize {
        STRIP_ROWS
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> &ScanRecord {
        &self.records[row * self.cols + col]
    }

    #[inline]
    pub fn get_mut(&mut self, row: usize, col: usize) -> &mut ScanRecord {
        let i = row * self.cols + col;
        &mut self.records[i]
    }

    pub fn records(&self) -> &[ScanRecord] {
        &self.records
    }

    pub fn records_mut(&mut self) -> &mut [ScanRecord] {
        &mut self.records
    }

    pub fn valid_count(&self) -> usize {
        self.records.iter().filter(|r| r.valid).count()
    }

    /// 4-neighborhood in strip space (no wrap-around).
    pub fn neighbors4(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let (row, col) = (idx / self.cols, idx % self.cols);
        let up = (row > 0).then(|| idx - self.cols);
        let down = (row + 1 < STRIP_ROWS).then(|| idx + self.cols);
        let left = (col > 0).then(|| idx - 1);
        let right = (col + 1 < self.cols).then(|| idx + 1);
        [up, down, left, right].into_iter().flatten()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub max_range: f64,
    pub sensor_height: f64,
    pub h_min: f64,
    pub h_max: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            max_range: 15.0,
            sensor_height: 2.75,
            h_min: -0.35,
            h_max: 2.0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_range > 0.0) {
            return Err(Error::invalid("max_range must be positive"));
        }
        if !(self.h_min < self.h_max) {
            return Err(Error::invalid("h_min must be below h_max"));
        }
        Ok(())
    }

    /// Horizontal measurement distance within `max_range`.
    pub fn passes_range(&self, p: &Point3, h: &Point3) -> bool {
        xy_distance(p, h) <= self.max_range
    }

    /// Height above ground, `z_p - z_h + sensor_height`.
    pub fn height_above_ground(&self, p: &Point3, h: &Point3) -> f64 {
        p.z - h.z + self.sensor_height
    }

    /// Strictly inside the `(h_min, h_max)` band.
    pub fn passes_height(&self, p: &Point3, h: &Point3) -> bool {
        let height = self.height_above_ground(p, h);
        self.h_min < height && height < self.h_max
    }
}

fn invalidate_where(strip: &ScanStrip, reject: impl Fn(&ScanRecord) -> bool) -> ScanStrip {
    let mut out = strip.clone();
    for r in out.records.iter_mut() {
        if r.valid && reject(r) {
            r.valid = false;
        }
    }
    out
}

/// Invalidates returns whose horizontal distance to the head exceeds
/// `cfg.max_range`.
pub fn filter_by_range(strip: &ScanStrip, cfg: &FilterConfig) -> ScanStrip {
    invalidate_where(strip, |r| !cfg.passes_range(&r.p, &r.h))
}

/// Keeps returns strictly inside the height band above the per-record
/// ground reference.
pub fn filter_by_height(strip: &ScanStrip, cfg: &FilterConfig) -> ScanStrip {
    invalidate_where(strip, |r| !cfg.passes_height(&r.p, &r.h))
}

/// Range then height filter.
pub fn filter_strip(strip: &ScanStrip, cfg: &FilterConfig) -> ScanStrip {
    invalidate_where(strip, |r| {
        !(cfg.passes_range(&r.p, &r.h) && cfg.passes_height(&r.p, &r.h))
    })
}

/// Same predicates applied to an unstructured cloud with heads.
pub fn filter_cloud(cloud: &PointCloud, cfg: &FilterConfig) -> Result<PointCloud> {
    let heads = cloud
        .heads
        .as_ref()
        .ok_or_else(|| Error::invalid("range/height filtering needs sensor heads"))?;
    Ok(cloud.filter(|i| {
        let (p, h) = (&cloud.points[i], &heads[i]);
        cfg.passes_range(p, h) && cfg.passes_height(p, h)
    }))
}

// Difference along one strip direction: central when both neighbors are
// usable, otherwise one-sided. Across a depth jump the shorter one-sided
// difference wins so foreground normals do not smear into the background.
fn strip_difference(center: &Point3, prev: Option<&Point3>, next: Option<&Point3>) -> Option<Vec3> {
    match (prev, next) {
        (Some(a), Some(b)) => {
            let back = center - a;
            let fwd = b - center;
            let (lb, lf) = (back.norm(), fwd.norm());
            if lb > 2.0 * lf {
                Some(fwd)
            } else if lf > 2.0 * lb {
                Some(back)
            } else {
                Some(b - a)
            }
        }
        (Some(a), None) => Some(center - a),
        (None, Some(b)) => Some(b - center),
        (None, None) => None,
    }
}

/// Per-pixel normals from strip-space differences, oriented toward the
/// sensor head. Pixels lacking a usable neighbor in either strip direction
/// get no normal.
pub fn estimate_normals(strip: &ScanStrip) -> ScanStrip {
    let mut out = strip.clone();
    let cols = strip.cols;
    let valid_p = |row: isize, col: isize| -> Option<&Point3> {
        if row < 0 || col < 0 || row as usize >= STRIP_ROWS || col as usize >= cols {
            return None;
        }
        let r = strip.get(row as usize, col as usize);
        r.valid.then_some(&r.p)
    };
    for row in 0..STRIP_ROWS {
        for col in 0..cols {
            let rec = strip.get(row, col);
            let slot = &mut out.records[row * cols + col];
            slot.normal = None;
            if !rec.valid {
                continue;
            }
            let (r, c) = (row as isize, col as isize);
            let d_row = strip_difference(&rec.p, valid_p(r - 1, c), valid_p(r + 1, c));
            let d_col = strip_difference(&rec.p, valid_p(r, c - 1), valid_p(r, c + 1));
            let (Some(a), Some(b)) = (d_row, d_col) else {
                continue;
            };
            let n = a.cross(&b);
            let len = n.norm();
            if !(len > 1e-12) {
                continue;
            }
            let mut n = n / len;
            if n.dot(&(rec.h - rec.p)) < 0.0 {
                n = -n;
            }
            slot.normal = Some(n);
        }
    }
    out
}

/// One point per valid pixel in row-major order, with heads. Normals and
/// reflectance are attached only when every emitted pixel has them.
pub fn strip_to_cloud(strip: &ScanStrip) -> PointCloud {
    let valid: Vec<&ScanRecord> = strip.records.iter().filter(|r| r.valid).collect();
    records_to_cloud(&valid)
}

/// Like [`strip_to_cloud`] but drops valid pixels that carry no normal, so
/// the output always has normals.
pub fn strip_to_oriented_cloud(strip: &ScanStrip) -> PointCloud {
    let valid: Vec<&ScanRecord> = strip
        .records
        .iter()
        .filter(|r| r.valid && r.normal.is_some())
        .collect();
    let mut cloud = records_to_cloud(&valid);
    if cloud.normals.is_none() {
        cloud.normals = Some(Vec::new());
    }
    cloud
}

fn records_to_cloud(records: &[&ScanRecord]) -> PointCloud {
    let mut cloud = PointCloud::with_heads(
        records.iter().map(|r| r.p).collect(),
        records.iter().map(|r| r.h).collect(),
    );
    if !records.is_empty() && records.iter().all(|r| r.normal.is_some()) {
        cloud.normals = Some(records.iter().map(|r| r.normal.unwrap()).collect());
    }
    if !records.is_empty() && records.iter().all(|r| r.reflectance.is_some()) {
        cloud.reflectance = Some(records.iter().map(|r| r.reflectance.unwrap()).collect());
    }
    cloud
}

pub fn write_strip(path: impl AsRef<Path>, strip: &ScanStrip) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_strip_to(&mut out, strip)?;
    out.flush()?;
    Ok(())
}

/// Writes the SST1 container. Normal and reflectance planes are written only
/// if at least one valid record carries them; absent values are NaN.
pub fn write_strip_to(out: &mut impl Write, strip: &ScanStrip) -> Result<()> {
    let mut mask = REQUIRED_PLANES;
    if strip.records.iter().any(|r| r.normal.is_some()) {
        mask |= NORMAL_PLANES;
    }
    if strip.records.iter().any(|r| r.reflectance.is_some()) {
        mask |= REFLECTANCE_PLANE;
    }
    out.write_all(MAGIC)?;
    out.write_all(&(STRIP_ROWS as u32).to_le_bytes())?;
    out.write_all(&(strip.cols as u32).to_le_bytes())?;
    out.write_all(&mask.to_le_bytes())?;
    for plane in 0..10 {
        if mask & (1 << plane) == 0 {
            continue;
        }
        for r in &strip.records {
            let v = match plane {
                0 => r.p.x,
                1 => r.p.y,
                2 => r.p.z,
                3 => r.h.x,
                4 => r.h.y,
                5 => r.h.z,
                6..=8 => r.normal.map_or(f64::NAN, |n| n[plane - 6]),
                _ => r.reflectance.unwrap_or(f64::NAN),
            };
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    let valid: Vec<u8> = strip.records.iter().map(|r| r.valid as u8).collect();
    out.write_all(&valid)?;
    Ok(())
}

pub fn load_strip(path: impl AsRef<Path>) -> Result<ScanStrip> {
    let mut input = BufReader::new(File::open(path)?);
    read_strip_from(&mut input)
}

pub fn read_strip_from(input: &mut impl Read) -> Result<ScanStrip> {
    let mut header = [0u8; 16];
    input.read_exact(&mut header)?;
    if &header[..4] != MAGIC {
        return Err(Error::format("bad SST1 magic"));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let (rows, cols, mask) = (word(4) as usize, word(8) as usize, word(12));
    if rows != STRIP_ROWS {
        return Err(Error::format(format!("strip has {rows} rows, expected {STRIP_ROWS}")));
    }
    if cols == 0 {
        return Err(Error::format("strip has zero columns"));
    }
    if mask & !ALL_PLANES != 0 {
        return Err(Error::format(format!("unknown plane bits in mask {mask:#x}")));
    }
    if mask & REQUIRED_PLANES != REQUIRED_PLANES {
        let missing: Vec<&str> = (0..11)
            .filter(|b| REQUIRED_PLANES & (1 << b) != 0 && mask & (1 << b) == 0)
            .map(|b| PLANE_NAMES[b])
            .collect();
        return Err(Error::format(format!("missing required planes {missing:?}")));
    }
    let normals = mask & NORMAL_PLANES;
    if normals != 0 && normals != NORMAL_PLANES {
        return Err(Error::format("normal planes must be all present or all absent"));
    }
    let n = rows * cols;
    let mut planes: [Vec<f32>; 10] = Default::default();
    let mut buf = vec![0u8; n * 4];
    for (plane, slot) in planes.iter_mut().enumerate() {
        if mask & (1 << plane) == 0 {
            continue;
        }
        input.read_exact(&mut buf)?;
        *slot = buf
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
    }
    let mut valid = vec![0u8; n];
    input.read_exact(&mut valid)?;

    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let f = |plane: usize| planes[plane][i] as f64;
        let normal = if normals != 0 && !planes[6][i].is_nan() {
            Some(Vec3::new(f(6), f(7), f(8)))
        } else {
            None
        };
        let reflectance = (mask & REFLECTANCE_PLANE != 0 && !planes[9][i].is_nan()).then(|| f(9));
        let flag = match valid[i] {
            0 => false,
            1 => true,
            v => return Err(Error::format(format!("valid flag {v} at pixel {i}"))),
        };
        records.push(ScanRecord {
            p: Point3::new(f(0), f(1), f(2)),
            h: Point3::new(f(3), f(4), f(5)),
            normal,
            reflectance,
            valid: flag,
        });
    }
    ScanStrip::new(cols, records).map_err(|e| Error::format(e.to_string()))
}
