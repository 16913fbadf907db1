//! Road-boundary (curb) extraction and parking-candidate selection.
//!
//! Vertical surfaces are grown into segments, screened by three shape
//! rules (low, elongated, at ground level), turned into bird's-eye
//! polylines, and finally sampled for places where a parked car fits.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geom::{median, principal_direction_2d, quantile, Aabb, Point2, Point3, Vec2, Vec3};
use crate::kdtree::KdIndex;
use crate::rng::SeededRng;
use crate::scanstrip::ScanStrip;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrowConfig {
    /// Maximum deviation of a normal from horizontal, and maximum angle
    /// between neighboring normals (degrees).
    pub angle_tol_deg: f64,
    pub min_points: usize,
    /// Largest 3D step between strip neighbors that still connects them.
    pub max_neighbor_gap: f64,
    /// Neighborhood radius when growing over an unstructured cloud.
    pub cloud_radius: f64,
}

impl Default for GrowConfig {
    fn default() -> Self {
        GrowConfig {
            angle_tol_deg: 30.0,
            min_points: 20,
            max_neighbor_gap: 0.3,
            cloud_radius: 0.15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurbRuleConfig {
    pub raster_cell: f64,
    pub max_median_height_diff: f64,
    pub min_elongation: f64,
    pub ground_band: f64,
    pub min_boundary_length: f64,
    pub min_endpoint_clearance: f64,
}

impl Default for CurbRuleConfig {
    fn default() -> Self {
        CurbRuleConfig {
            raster_cell: 0.33,
            max_median_height_diff: 0.30,
            min_elongation: 5.0,
            ground_band: 0.5,
            min_boundary_length: 7.0,
            min_endpoint_clearance: 3.5,
        }
    }
}

impl CurbRuleConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.raster_cell,
            self.max_median_height_diff,
            self.min_elongation,
            self.ground_band,
            self.min_boundary_length,
            self.min_endpoint_clearance,
        ];
        if all.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("curb rule parameters must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// Pixel indices (strip) or point ids (cloud) of the members.
    pub members: Vec<usize>,
    pub points: Vec<Point3>,
    pub mean_normal: Vec3,
    pub footprint: Aabb,
    pub source: u32,
}

impl Segment {
    fn from_members(members: Vec<usize>, points: Vec<Point3>, normals: &[Vec3], source: u32) -> Segment {
        let sum: Vec3 = normals.iter().sum();
        let mean_normal = if sum.norm() > 0.0 { sum.normalize() } else { Vec3::zeros() };
        let footprint = Aabb::from_points(&points);
        Segment {
            members,
            points,
            mean_normal,
            footprint,
            source,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

fn is_vertical_surface(n: &Vec3, max_tilt: f64) -> bool {
    // elevation of the normal above the horizontal plane
    n.z.abs().asin() < max_tilt
}

/// Strip-space region growing of surfaces roughly perpendicular to the
/// ground. Components are 4-connected; neighbors must also be within
/// `max_neighbor_gap` in 3D and have normals within the angle tolerance.
pub fn grow_vertical_segments(strip: &ScanStrip, cfg: &GrowConfig) -> Vec<Segment> {
    let tol = cfg.angle_tol_deg.to_radians();
    let cos_tol = tol.cos();
    let recs = strip.records();
    let candidate: Vec<bool> = recs
        .iter()
        .map(|r| r.valid && r.normal.is_some_and(|n| is_vertical_surface(&n, tol)))
        .collect();
    let mut visited = vec![false; recs.len()];
    let mut segments = Vec::new();
    let mut queue = VecDeque::new();
    // column-major seeding keeps segment order aligned with travel direction
    for col in 0..strip.cols() {
        for row in 0..strip.rows() {
            let seed = strip.index(row, col);
            if !candidate[seed] || visited[seed] {
                continue;
            }
            visited[seed] = true;
            queue.push_back(seed);
            let mut members = Vec::new();
            while let Some(i) = queue.pop_front() {
                members.push(i);
                let (pi, ni) = (recs[i].p, recs[i].normal.unwrap());
                for j in strip.neighbors4(i) {
                    if visited[j] || !candidate[j] {
                        continue;
                    }
                    let nj = recs[j].normal.unwrap();
                    if (recs[j].p - pi).norm() <= cfg.max_neighbor_gap && ni.dot(&nj) >= cos_tol {
                        visited[j] = true;
                        queue.push_back(j);
                    }
                }
            }
            if members.len() >= cfg.min_points {
                members.sort_unstable();
                let points = members.iter().map(|&i| recs[i].p).collect();
                let normals: Vec<Vec3> = members.iter().map(|&i| recs[i].normal.unwrap()).collect();
                segments.push(Segment::from_members(members, points, &normals, strip.id));
            }
        }
    }
    segments
}

/// Region growing over an unstructured cloud with normals, connecting
/// points within `cloud_radius`.
pub fn grow_vertical_segments_cloud(cloud: &PointCloud, cfg: &GrowConfig) -> Result<Vec<Segment>> {
    let normals = cloud
        .normals
        .as_ref()
        .ok_or_else(|| Error::invalid("segment growing needs normals"))?;
    let tol = cfg.angle_tol_deg.to_radians();
    let cos_tol = tol.cos();
    let ids: Vec<usize> = (0..cloud.len()).filter(|&i| is_vertical_surface(&normals[i], tol)).collect();
    if ids.is_empty() {
        return Ok(Vec::new());
    }
    let pts: Vec<Point3> = ids.iter().map(|&i| cloud.points[i]).collect();
    let index = KdIndex::build(&pts)?;
    let mut visited = vec![false; ids.len()];
    let mut segments = Vec::new();
    let mut queue = VecDeque::new();
    for seed in 0..ids.len() {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        queue.push_back(seed);
        let mut local = Vec::new();
        while let Some(i) = queue.pop_front() {
            local.push(i);
            let ni = normals[ids[i]];
            for nb in index.within_radius(&pts[i], cfg.cloud_radius) {
                if !visited[nb.id] && ni.dot(&normals[ids[nb.id]]) >= cos_tol {
                    visited[nb.id] = true;
                    queue.push_back(nb.id);
                }
            }
        }
        if local.len() >= cfg.min_points {
            local.sort_unstable();
            let members: Vec<usize> = local.iter().map(|&i| ids[i]).collect();
            let points = local.iter().map(|&i| pts[i]).collect();
            let seg_normals: Vec<Vec3> = members.iter().map(|&i| normals[i]).collect();
            segments.push(Segment::from_members(members, points, &seg_normals, 0));
        }
    }
    Ok(segments)
}

/// Measured quantities behind the three curb rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurbMeasures {
    pub median_cell_height: f64,
    pub length: f64,
    pub height: f64,
    pub min_z: f64,
    pub max_z: f64,
}

impl CurbMeasures {
    pub fn elongation(&self) -> f64 {
        if self.height > 0.0 {
            self.length / self.height
        } else {
            f64::INFINITY
        }
    }
}

pub fn curb_measures(segment: &Segment, cell: f64) -> Option<CurbMeasures> {
    if segment.points.is_empty() {
        return None;
    }
    // rule (a): per raster cell height extent
    let mut cells: Vec<((i64, i64), f64, f64)> = segment
        .points
        .iter()
        .map(|p| (((p.x / cell).floor() as i64, (p.y / cell).floor() as i64), p.z, p.z))
        .collect();
    cells.sort_by(|a, b| a.0.cmp(&b.0));
    let mut extents = Vec::new();
    let mut i = 0;
    while i < cells.len() {
        let (key, mut lo, mut hi) = cells[i];
        let mut j = i + 1;
        while j < cells.len() && cells[j].0 == key {
            lo = lo.min(cells[j].1);
            hi = hi.max(cells[j].2);
            j += 1;
        }
        extents.push(hi - lo);
        i = j;
    }
    let median_cell_height = median(&extents)?;

    // rule (b): bird's-eye length along the principal direction vs height
    let xy: Vec<Point2> = segment.points.iter().map(|p| Point2::new(p.x, p.y)).collect();
    let length = match principal_direction_2d(&xy) {
        Some(dir) => {
            let (lo, hi) = xy.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                let t = p.coords.dot(&dir);
                (lo.min(t), hi.max(t))
            });
            hi - lo
        }
        None => 0.0,
    };
    let (min_z, max_z) = segment
        .points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.z), hi.max(p.z)));
    Some(CurbMeasures {
        median_cell_height,
        length,
        height: max_z - min_z,
        min_z,
        max_z,
    })
}

/// True iff the segment is low, elongated and at ground level.
pub fn classify_curb(segment: &Segment, ground_height: f64, cfg: &CurbRuleConfig) -> bool {
    let Some(m) = curb_measures(segment, cfg.raster_cell) else {
        return false;
    };
    let low = m.median_cell_height < cfg.max_median_height_diff;
    let elongated = m.elongation() >= cfg.min_elongation;
    let near_ground = m.min_z >= ground_height - cfg.ground_band && m.max_z <= ground_height + cfg.ground_band;
    low && elongated && near_ground
}

/// 5th percentile of z over points within `margin` (xy) of the footprint.
pub fn local_ground_height(points: &[Point3], footprint: &Aabb, margin: f64) -> Option<f64> {
    let region = footprint.expanded_xy(margin);
    let zs: Vec<f64> = points.iter().filter(|p| region.contains_xy(p)).map(|p| p.z).collect();
    quantile(&zs, 0.05)
}

/// Grows segments over `cloud` and keeps those passing the curb rules.
pub fn extract_curbs(cloud: &PointCloud, grow: &GrowConfig, rules: &CurbRuleConfig) -> Result<Vec<Segment>> {
    let segments = grow_vertical_segments_cloud(cloud, grow)?;
    Ok(segments
        .into_iter()
        .filter(|s| {
            local_ground_height(&cloud.points, &s.footprint, 1.0)
                .is_some_and(|g| classify_curb(s, g, rules))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPolyline {
    pub vertices: Vec<Point2>,
    /// Curb-top height per vertex.
    pub heights: Vec<f64>,
    pub mean_top_height: f64,
    pub tangents: Vec<Vec2>,
    /// +1 when the left normal of the tangent points at the sidewalk (high
    /// side), -1 when the right normal does.
    pub sidewalk_sign: f64,
}

const RESAMPLE_STEP: f64 = 0.5;
const MAX_VERTEX_GAP: f64 = 1.0;
const CHAIN_DISTANCE: f64 = 0.5;
const CHAIN_ANGLE_DEG: f64 = 15.0;

fn left_normal(t: &Vec2) -> Vec2 {
    Vec2::new(-t.y, t.x)
}

impl BoundaryPolyline {
    fn from_vertices(vertices: Vec<Point2>, heights: Vec<f64>, sidewalk_sign: f64) -> Self {
        let n = vertices.len();
        let tangents = (0..n)
            .map(|i| {
                let a = vertices[i.saturating_sub(1)];
                let b = vertices[(i + 1).min(n - 1)];
                (b - a).normalize()
            })
            .collect();
        let mean_top_height = heights.iter().sum::<f64>() / n as f64;
        BoundaryPolyline {
            vertices,
            heights,
            mean_top_height,
            tangents,
            sidewalk_sign,
        }
    }

    pub fn length(&self) -> f64 {
        self.vertices.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    pub fn direction(&self) -> Vec2 {
        (self.vertices[self.vertices.len() - 1] - self.vertices[0]).normalize()
    }

    fn reversed(&self) -> Self {
        let mut v = self.vertices.clone();
        let mut h = self.heights.clone();
        v.reverse();
        h.reverse();
        // reversing flips the tangent, so the sidewalk flips sides
        BoundaryPolyline::from_vertices(v, h, -self.sidewalk_sign)
    }

    /// Position, height and unit tangent at arc length `s`.
    pub fn at_arc(&self, s: f64) -> (Point2, f64, Vec2) {
        let mut acc = 0.0;
        for (i, w) in self.vertices.windows(2).enumerate() {
            let len = (w[1] - w[0]).norm();
            if s <= acc + len || i + 2 == self.vertices.len() {
                let f = if len > 0.0 { ((s - acc) / len).clamp(0.0, 1.0) } else { 0.0 };
                let p = w[0] + (w[1] - w[0]) * f;
                let h = self.heights[i] + (self.heights[i + 1] - self.heights[i]) * f;
                return (p, h, (w[1] - w[0]).normalize());
            }
            acc += len;
        }
        unreachable!("polyline has at least two vertices")
    }

    /// Unit sidewalk direction for a given tangent.
    pub fn sidewalk_normal(&self, tangent: &Vec2) -> Vec2 {
        left_normal(tangent) * self.sidewalk_sign
    }
}

// Sign of the sidewalk side relative to `dir`'s left normal: ground height
// step first, curb-face normal (which faces the road) as fallback.
fn sidewalk_sign(vertices: &[Point2], dir: &Vec2, face_normal: &Vec3, ground: &[Point3]) -> f64 {
    let left = left_normal(dir);
    let (mut zl, mut zr) = (Vec::new(), Vec::new());
    if !ground.is_empty() {
        let lo = vertices
            .iter()
            .map(|v| v.coords.dot(dir))
            .fold(f64::INFINITY, f64::min);
        let hi = vertices
            .iter()
            .map(|v| v.coords.dot(dir))
            .fold(f64::NEG_INFINITY, f64::max);
        for p in ground {
            let q = Vec2::new(p.x, p.y);
            let along = q.dot(dir);
            if along < lo || along > hi {
                continue;
            }
            // lateral offset relative to the nearest vertex
            let nearest = vertices
                .iter()
                .min_by(|a, b| (a.coords - q).norm_squared().total_cmp(&(b.coords - q).norm_squared()))
                .unwrap();
            let off = (q - nearest.coords).dot(&left);
            if (0.3..1.5).contains(&off) {
                zl.push(p.z);
            } else if (-1.5..-0.3).contains(&off) {
                zr.push(p.z);
            }
        }
    }
    if zl.len() >= 5 && zr.len() >= 5 {
        let (ml, mr) = (median(&zl).unwrap(), median(&zr).unwrap());
        if (ml - mr).abs() > 0.02 {
            return if ml > mr { 1.0 } else { -1.0 };
        }
    }
    let face = Vec2::new(face_normal.x, face_normal.y);
    if face.dot(&left) > 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn segment_polylines(segment: &Segment, ground: &[Point3]) -> Vec<BoundaryPolyline> {
    let xy: Vec<Point2> = segment.points.iter().map(|p| Point2::new(p.x, p.y)).collect();
    let Some(dir) = principal_direction_2d(&xy) else {
        return Vec::new();
    };
    let mut order: Vec<(f64, usize)> = xy.iter().enumerate().map(|(i, p)| (p.coords.dot(&dir), i)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let (t_min, t_max) = (order[0].0, order[order.len() - 1].0);

    // bin means every RESAMPLE_STEP along the principal direction
    let bins = (((t_max - t_min) / RESAMPLE_STEP).floor() as usize) + 1;
    let mut sum = vec![(Vec2::zeros(), f64::NEG_INFINITY, 0usize); bins];
    for &(t, i) in &order {
        let b = (((t - t_min) / RESAMPLE_STEP) as usize).min(bins - 1);
        sum[b].0 += xy[i].coords;
        sum[b].1 = sum[b].1.max(segment.points[i].z);
        sum[b].2 += 1;
    }
    let mut verts: Vec<(Point2, f64)> = sum
        .iter()
        .filter(|b| b.2 > 0)
        .map(|b| (Point2::from(b.0 / b.2 as f64), b.1))
        .collect();
    if verts.len() < 2 {
        return Vec::new();
    }
    // stretch the end vertices out to the data extent
    let first_t = verts[0].0.coords.dot(&dir);
    verts[0].0 += dir * (t_min - first_t);
    let last = verts.len() - 1;
    let last_t = verts[last].0.coords.dot(&dir);
    verts[last].0 += dir * (t_max - last_t);

    let mut pieces: Vec<Vec<(Point2, f64)>> = vec![Vec::new()];
    for v in verts {
        let cur = pieces.last_mut().unwrap();
        if let Some(prev) = cur.last() {
            if (v.0 - prev.0).norm() > MAX_VERTEX_GAP {
                pieces.push(Vec::new());
            }
        }
        pieces.last_mut().unwrap().push(v);
    }
    pieces
        .into_iter()
        .filter(|p| p.len() >= 2)
        .map(|p| {
            let (v, h): (Vec<Point2>, Vec<f64>) = p.into_iter().unzip();
            let d = (v[v.len() - 1] - v[0]).normalize();
            let sign = sidewalk_sign(&v, &d, &segment.mean_normal, ground);
            BoundaryPolyline::from_vertices(v, h, sign)
        })
        .collect()
}

fn undirected_angle(a: &Vec2, b: &Vec2) -> f64 {
    a.dot(b).abs().min(1.0).acos()
}

// Orients `a` and `b` so a's end meets b's start; None if no endpoint pair
// is close enough.
fn chain_pair(a: &BoundaryPolyline, b: &BoundaryPolyline) -> Option<BoundaryPolyline> {
    if undirected_angle(&a.direction(), &b.direction()) >= CHAIN_ANGLE_DEG.to_radians() {
        return None;
    }
    let ends = |p: &BoundaryPolyline| (p.vertices[0], p.vertices[p.vertices.len() - 1]);
    let (a0, a1) = ends(a);
    let (b0, b1) = ends(b);
    let options = [
        ((a1 - b0).norm(), false, false),
        ((a1 - b1).norm(), false, true),
        ((a0 - b1).norm(), true, true),
        ((a0 - b0).norm(), true, false),
    ];
    let (d, rev_a, rev_b) = options
        .iter()
        .copied()
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .unwrap();
    if d > CHAIN_DISTANCE {
        return None;
    }
    let a = if rev_a { a.reversed() } else { a.clone() };
    let b = if rev_b { b.reversed() } else { b.clone() };
    let mut v = a.vertices.clone();
    let mut h = a.heights.clone();
    v.extend_from_slice(&b.vertices);
    h.extend_from_slice(&b.heights);
    Some(BoundaryPolyline::from_vertices(v, h, a.sidewalk_sign))
}

/// Turns curb segments into ordered bird's-eye polylines, chaining
/// near-collinear pieces whose endpoints nearly touch. `ground` provides
/// the height step used to tell the sidewalk side from the road side.
pub fn build_boundary_map(segments: &[Segment], ground: &[Point3]) -> Vec<BoundaryPolyline> {
    let mut lines: Vec<BoundaryPolyline> = segments.iter().flat_map(|s| segment_polylines(s, ground)).collect();
    'outer: loop {
        for i in 0..lines.len() {
            for j in i + 1..lines.len() {
                if let Some(merged) = chain_pair(&lines[i], &lines[j]) {
                    lines[i] = merged;
                    lines.remove(j);
                    continue 'outer;
                }
            }
        }
        break;
    }
    lines
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParkingCandidate {
    pub anchor: Point3,
    pub road_direction: Vec2,
    /// Unit normal pointing away from the road.
    pub sidewalk_side: Vec2,
    pub polyline: usize,
    /// Arc length of the anchor along its polyline.
    pub arc_position: f64,
}

/// Samples `per_polyline` anchors uniformly on the admissible sub-arc of
/// every polyline longer than the minimum boundary length.
pub fn select_parking_candidates(
    polylines: &[BoundaryPolyline],
    cfg: &CurbRuleConfig,
    per_polyline: usize,
    rng: &SeededRng,
) -> Vec<ParkingCandidate> {
    let mut out = Vec::new();
    for (id, line) in polylines.iter().enumerate() {
        let len = line.length();
        if len <= cfg.min_boundary_length {
            continue;
        }
        let lo = cfg.min_endpoint_clearance;
        let hi = len - cfg.min_endpoint_clearance;
        if hi < lo {
            continue;
        }
        let mut stream = rng.derive(format!("polyline-{id}"));
        for _ in 0..per_polyline {
            let s = if hi > lo { stream.gen_range(lo..=hi) } else { lo };
            let (p, z, tangent) = line.at_arc(s);
            let candidate = ParkingCandidate {
                anchor: Point3::new(p.x, p.y, z),
                road_direction: tangent,
                sidewalk_side: line.sidewalk_normal(&tangent),
                polyline: id,
                arc_position: s,
            };
            debug_assert!(candidate.arc_position >= lo && candidate.arc_position <= hi);
            out.push(candidate);
        }
    }
    out
}

/// GeoJSON-style feature collection, one LineString per polyline with
/// per-vertex z.
pub fn boundaries_to_geojson(polylines: &[BoundaryPolyline]) -> Value {
    let features: Vec<Value> = polylines
        .iter()
        .enumerate()
        .map(|(id, l)| {
            let coords: Vec<[f64; 3]> = l
                .vertices
                .iter()
                .zip(&l.heights)
                .map(|(v, z)| [v.x, v.y, *z])
                .collect();
            json!({
                "type": "Feature",
                "geometry": { "type": "LineString", "coordinates": coords },
                "properties": {
                    "id": id,
                    "length": l.length(),
                    "mean_top_height": l.mean_top_height,
                    "sidewalk_sign": l.sidewalk_sign,
                }
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

pub fn boundaries_from_geojson(doc: &Value) -> Result<Vec<BoundaryPolyline>> {
    let bad = |m: &str| Error::format(format!("boundary map: {m}"));
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing features array"))?;
    features
        .iter()
        .map(|f| {
            let coords = f
                .pointer("/geometry/coordinates")
                .and_then(Value::as_array)
                .ok_or_else(|| bad("feature without coordinates"))?;
            let mut v = Vec::new();
            let mut h = Vec::new();
            for c in coords {
                let xyz: Vec<f64> = c
                    .as_array()
                    .map(|a| a.iter().filter_map(Value::as_f64).collect())
                    .unwrap_or_default();
                if xyz.len() != 3 {
                    return Err(bad("coordinates must be [x, y, z]"));
                }
                v.push(Point2::new(xyz[0], xyz[1]));
                h.push(xyz[2]);
            }
            if v.len() < 2 {
                return Err(bad("polyline needs two vertices"));
            }
            let sign = f
                .pointer("/properties/sidewalk_sign")
                .and_then(Value::as_f64)
                .unwrap_or(1.0);
            Ok(BoundaryPolyline::from_vertices(v, h, sign.signum()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scanstrip::{estimate_normals, filter_strip, FilterConfig, ScanRecord, STRIP_ROWS};
    use crate::synthetic::StreetScanner;

    // Vertical face along x at y = `y`, from z0 to z0 + height.
    fn face(x0: f64, length: f64, y: f64, z0: f64, height: f64, step: f64) -> Segment {
        let mut points = Vec::new();
        let nx = (length / step).round() as usize + 1;
        let nz = ((height / 0.02).round() as usize).max(1) + 1;
        for i in 0..nx {
            for k in 0..nz {
                points.push(Point3::new(
                    x0 + length * i as f64 / (nx - 1) as f64,
                    y,
                    z0 + height * k as f64 / (nz - 1) as f64,
                ));
            }
        }
        let normals = vec![Vec3::new(0.0, 1.0, 0.0); points.len()];
        Segment::from_members((0..points.len()).collect(), points, &normals, 0)
    }

    fn synthetic_strip() -> ScanStrip {
        let strip = StreetScanner::default().scan(0.0, 60).unwrap();
        filter_strip(&estimate_normals(&strip), &FilterConfig::default())
    }

    #[test]
    fn one_curb_face_gives_one_segment_per_side() {
        let strip = synthetic_strip();
        let segs = grow_vertical_segments(&strip, &GrowConfig::default());
        let cloud_pts: Vec<Point3> = strip.records().iter().filter(|r| r.valid).map(|r| r.p).collect();
        let rules = CurbRuleConfig::default();
        let curbs: Vec<&Segment> = segs
            .iter()
            .filter(|s| classify_curb(s, local_ground_height(&cloud_pts, &s.footprint, 1.0).unwrap(), &rules))
            .collect();
        // one curb on each side of the road
        assert_eq!(curbs.len(), 2);
        for c in curbs {
            let y = c.points[0].y;
            assert!((y.abs() - 5.0).abs() < 0.05, "curb at y = {y}");
            assert!(c.points.iter().all(|p| (p.y - y).abs() < 0.05 && p.z > -0.05 && p.z < 0.2));
        }
    }

    #[test]
    fn flat_ground_has_no_segments() {
        let scanner = StreetScanner {
            surfaces: vec![crate::synthetic::ProfileSurface::Horizontal { z: 0.0, y_min: -20.0, y_max: 20.0 }],
            ..StreetScanner::default()
        };
        let strip = estimate_normals(&scanner.scan(0.0, 20).unwrap());
        assert!(grow_vertical_segments(&strip, &GrowConfig::default()).is_empty());
    }

    #[test]
    fn invalid_gap_splits_segments() {
        let mut strip = synthetic_strip();
        let before = grow_vertical_segments(&strip, &GrowConfig::default());
        for row in 0..STRIP_ROWS {
            for col in 28..31 {
                *strip.get_mut(row, col) = ScanRecord::INVALID;
            }
        }
        let after = grow_vertical_segments(&strip, &GrowConfig::default());
        let near_curb = |segs: &[Segment]| {
            segs.iter()
                .filter(|s| s.points.iter().all(|p| (p.y + 5.0).abs() < 0.05))
                .count()
        };
        assert_eq!(near_curb(&before), 1);
        assert_eq!(near_curb(&after), 2);
    }

    #[test]
    fn cloud_growing_finds_the_same_curbs() {
        let strip = synthetic_strip();
        let cloud = crate::scanstrip::strip_to_oriented_cloud(&strip);
        let curbs = extract_curbs(&cloud, &GrowConfig::default(), &CurbRuleConfig::default()).unwrap();
        assert_eq!(curbs.len(), 2);
    }

    #[test]
    fn curb_rules_on_synthetic_shapes() {
        let cfg = CurbRuleConfig::default();
        assert!(classify_curb(&face(0.0, 10.0, 0.0, 0.0, 0.15, 0.05), 0.0, &cfg));
        // tall wall fails the height and ground rules
        let wall = face(0.0, 10.0, 0.0, 0.0, 2.0, 0.05);
        let m = curb_measures(&wall, cfg.raster_cell).unwrap();
        assert!(m.median_cell_height >= 0.3);
        assert!(m.max_z > 0.5);
        assert!(!classify_curb(&wall, 0.0, &cfg));
        // short fragment: 0.5 / 0.15 = 3.3 < 5
        let frag = face(0.0, 0.5, 0.0, 0.0, 0.15, 0.05);
        let m = curb_measures(&frag, cfg.raster_cell).unwrap();
        assert!((m.elongation() - 0.5 / 0.15).abs() < 1e-9);
        assert!(!classify_curb(&frag, 0.0, &cfg));
        // off the ground
        assert!(!classify_curb(&face(0.0, 10.0, 0.0, 1.0, 0.15, 0.05), 0.0, &cfg));
    }

    #[test]
    fn stretching_never_breaks_a_curb() {
        let cfg = CurbRuleConfig::default();
        for len in [1.0, 2.0, 5.0, 10.0, 30.0] {
            let base = classify_curb(&face(0.0, len, 0.0, 0.0, 0.15, 0.05), 0.0, &cfg);
            let longer = classify_curb(&face(0.0, len * 1.7, 0.0, 0.0, 0.15, 0.05), 0.0, &cfg);
            assert!(!base || longer, "len {len}");
        }
    }

    #[test]
    fn straight_curb_fits_a_line() {
        let seg = face(2.0, 12.0, -5.0, 0.0, 0.15, 0.05);
        let lines = build_boundary_map(&[seg], &[]);
        assert_eq!(lines.len(), 1);
        let l = &lines[0];
        let rms = (l.vertices.iter().map(|v| (v.y + 5.0).powi(2)).sum::<f64>() / l.vertices.len() as f64).sqrt();
        assert!(rms < 0.03);
        assert!((l.length() - 12.0).abs() < 1e-9);
        assert!(l.vertices.windows(2).all(|w| (w[1] - w[0]).norm() <= 1.0));
        assert!((l.mean_top_height - 0.15).abs() < 1e-9);
    }

    #[test]
    fn collinear_pieces_are_chained() {
        let a = face(0.0, 5.0, 0.0, 0.0, 0.15, 0.05);
        let b = face(5.3, 5.0, 0.0, 0.0, 0.15, 0.05);
        let lines = build_boundary_map(&[b, a], &[]);
        assert_eq!(lines.len(), 1);
        assert!((lines[0].length() - 10.3).abs() < 1e-6);
    }

    #[test]
    fn corner_pieces_stay_separate() {
        let a = face(0.0, 5.0, 0.0, 0.0, 0.15, 0.05);
        // perpendicular piece starting at a's end
        let mut b = face(0.0, 5.0, 0.0, 0.0, 0.15, 0.05);
        for p in b.points.iter_mut() {
            *p = Point3::new(5.0, p.x, p.z);
        }
        let lines = build_boundary_map(&[a, b], &[]);
        assert_eq!(lines.len(), 2);
    }

    #[test]
    fn sidewalk_side_follows_the_height_step() {
        let seg = face(0.0, 10.0, 0.0, 0.0, 0.15, 0.05);
        let mut ground = Vec::new();
        for i in 0..100 {
            for j in 0..20 {
                let x = i as f64 * 0.1;
                let y = -2.0 + j as f64 * 0.2;
                ground.push(Point3::new(x, y, if y > 0.0 { 0.15 } else { 0.0 }));
            }
        }
        let lines = build_boundary_map(&[seg], &ground);
        let (_, _, t) = lines[0].at_arc(5.0);
        let side = lines[0].sidewalk_normal(&t);
        assert!((side - Vec2::new(0.0, 1.0)).norm() < 1e-9, "{side:?}");
    }

    fn straight(len: f64) -> BoundaryPolyline {
        let n = (len / 0.5).round() as usize;
        let v: Vec<Point2> = (0..=n).map(|i| Point2::new(i as f64 * len / n as f64, 0.0)).collect();
        let h = vec![0.15; v.len()];
        BoundaryPolyline::from_vertices(v, h, 1.0)
    }

    #[test]
    fn short_boundaries_yield_nothing() {
        let rng = SeededRng::new(1);
        assert!(select_parking_candidates(&[straight(6.0)], &CurbRuleConfig::default(), 10, &rng).is_empty());
    }

    #[test]
    fn admissible_interval_is_central() {
        let rng = SeededRng::new(2);
        let c = select_parking_candidates(&[straight(8.0)], &CurbRuleConfig::default(), 200, &rng);
        assert_eq!(c.len(), 200);
        for cand in &c {
            assert!(cand.arc_position >= 3.5 && cand.arc_position <= 4.5);
            assert!((cand.anchor.x - cand.arc_position).abs() < 1e-9);
            assert!(cand.anchor.y.abs() < 0.01);
            assert!(cand.road_direction.dot(&cand.sidewalk_side).abs() < 1e-12);
        }
    }

    #[test]
    fn candidates_are_deterministic() {
        let lines = [straight(20.0)];
        let cfg = CurbRuleConfig::default();
        let a = select_parking_candidates(&lines, &cfg, 5, &SeededRng::new(9));
        let b = select_parking_candidates(&lines, &cfg, 5, &SeededRng::new(9));
        assert_eq!(a, b);
        let c = select_parking_candidates(&lines, &cfg, 5, &SeededRng::new(10));
        assert_ne!(a, c);
    }

    #[test]
    fn geojson_round_trip() {
        let lines = vec![straight(8.0), straight(3.0)];
        let back = boundaries_from_geojson(&boundaries_to_geojson(&lines)).unwrap();
        assert_eq!(back, lines);
    }
}
