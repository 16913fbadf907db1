use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{is_finite, Aabb, Point3, Vec3};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[u32; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleDims {
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for VehicleDims {
    fn default() -> Self {
        VehicleDims {
            length: 4.5,
            width: 1.8,
            height: 1.5,
        }
    }
}

impl VehicleDims {
    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.width > 0.0 && self.height > 0.0) {
            return Err(Error::invalid("vehicle dimensions must be positive"));
        }
        if self.length <= self.width {
            return Err(Error::invalid("vehicle length must exceed its width"));
        }
        Ok(())
    }
}

fn triangle_area2(a: &Point3, b: &Point3, c: &Point3) -> f64 {
    (b - a).cross(&(c - a)).norm()
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len() as u32;
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::invalid(format!("triangle {t:?} indexes past {n} vertices")));
        }
        if vertices.iter().any(|v| !is_finite(v)) {
            return Err(Error::invalid("mesh has non-finite vertices"));
        }
        Ok(TriangleMesh {
            vertices,
            triangles,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(&self.vertices)
    }

    pub fn triangle(&self, i: usize) -> [Point3; 3] {
        let t = self.triangles[i];
        [
            self.vertices[t[0] as usize],
            self.vertices[t[1] as usize],
            self.vertices[t[2] as usize],
        ]
    }

    /// Merges vertices closer than `tol` per axis, drops zero-area and
    /// index-degenerate triangles, and removes unreferenced vertices.
    pub fn cleaned(&self, tol: f64) -> TriangleMesh {
        let mut remap = Vec::with_capacity(self.vertices.len());
        let mut seen: HashMap<[i64; 3], u32> = HashMap::new();
        let mut verts: Vec<Point3> = Vec::new();
        for v in &self.vertices {
            let key = [
                (v.x / tol).round() as i64,
                (v.y / tol).round() as i64,
                (v.z / tol).round() as i64,
            ];
            let id = *seen.entry(key).or_insert_with(|| {
                verts.push(*v);
                (verts.len() - 1) as u32
            });
            remap.push(id);
        }
        let tris: Vec<[u32; 3]> = self
            .triangles
            .iter()
            .map(|t| t.map(|i| remap[i as usize]))
            .filter(|t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2])
            .filter(|t| {
                triangle_area2(&verts[t[0] as usize], &verts[t[1] as usize], &verts[t[2] as usize]) > 0.0
            })
            .collect();
        // compact
        let mut used = vec![u32::MAX; verts.len()];
        let mut out_v = Vec::new();
        let out_t = tris
            .iter()
            .map(|t| {
                t.map(|i| {
                    if used[i as usize] == u32::MAX {
                        used[i as usize] = out_v.len() as u32;
                        out_v.push(verts[i as usize]);
                    }
                    used[i as usize]
                })
            })
            .collect();
        TriangleMesh {
            vertices: out_v,
            triangles: out_t,
        }
    }

    pub fn transformed(&self, f: impl Fn(&Point3) -> Point3) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(f).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Appends another mesh's triangles.
    pub fn merge(&mut self, other: &TriangleMesh) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles
            .extend(other.triangles.iter().map(|t| t.map(|i| i + base)));
    }

    /// Closed axis-aligned box with 12 outward-wound triangles.
    pub fn axis_box(min: Point3, max: Point3) -> TriangleMesh {
        let v = (0..8)
            .map(|i| {
                Point3::new(
                    if i & 1 == 0 { min.x } else { max.x },
                    if i & 2 == 0 { min.y } else { max.y },
                    if i & 4 == 0 { min.z } else { max.z },
                )
            })
            .collect();
        let t = vec![
            [0, 2, 1], [1, 2, 3], // -z
            [4, 5, 6], [5, 7, 6], // +z
            [0, 1, 4], [1, 5, 4], // -y
            [2, 6, 3], [3, 6, 7], // +y
            [0, 4, 2], [2, 4, 6], // -x
            [1, 3, 5], [3, 7, 5], // +x
        ];
        TriangleMesh {
            vertices: v,
            triangles: t,
        }
    }

    pub fn write_obj(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = String::new();
        for v in &self.vertices {
            s.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
        }
        for t in &self.triangles {
            s.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
        }
        fs::write(path, s)?;
        Ok(())
    }
}

/// Parses a triangulated Wavefront OBJ (positions and faces only).
pub fn parse_obj(text: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::format(format!("OBJ line {}: bad vertex", lineno + 1)))?;
                if c.len() != 3 {
                    return Err(Error::format(format!("OBJ line {}: vertex needs 3 coordinates", lineno + 1)));
                }
                vertices.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<&str> = it.collect();
                if idx.len() != 3 {
                    return Err(Error::format(format!(
                        "OBJ line {}: face with {} vertices; triangulate the mesh before loading",
                        lineno + 1,
                        idx.len()
                    )));
                }
                let mut tri = [0u32; 3];
                for (slot, tok) in tri.iter_mut().zip(idx) {
                    let first = tok.split('/').next().unwrap_or("");
                    let i: i64 = first
                        .parse()
                        .map_err(|_| Error::format(format!("OBJ line {}: bad index {tok:?}", lineno + 1)))?;
                    let resolved = if i < 0 { vertices.len() as i64 + i } else { i - 1 };
                    if resolved < 0 || resolved >= vertices.len() as i64 {
                        return Err(Error::format(format!("OBJ line {}: index {i} out of range", lineno + 1)));
                    }
                    *slot = resolved as u32;
                }
                triangles.push(tri);
            }
            _ => {}
        }
    }
    let mesh = TriangleMesh::new(vertices, triangles)?.cleaned(1e-9);
    if mesh.is_empty() {
        return Err(Error::EmptyInput("mesh has no non-degenerate triangles"));
    }
    Ok(mesh)
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    parse_obj(&fs::read_to_string(path)?)
}

/// Explicit model-frame axes for meshes whose extents are ambiguous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisHints {
    /// Model axis (0, 1, 2) that becomes +x (driving direction).
    pub forward: usize,
    /// Model axis that becomes +z (up).
    pub up: usize,
}

/// Rotates the mesh so its longest extent is +x and its shortest is +z,
/// scales uniformly to `dims.length`, and puts the bottom center of the box
/// at the origin.
pub fn canonicalize_vehicle(mesh: &TriangleMesh, dims: &VehicleDims, hints: Option<AxisHints>) -> Result<TriangleMesh> {
    if mesh.is_empty() {
        return Err(Error::EmptyInput("mesh"));
    }
    let b = mesh.bounds();
    let e = b.extent();
    let ext = [e.x, e.y, e.z];
    let (forward, up) = match hints {
        Some(h) => {
            if h.forward > 2 || h.up > 2 || h.forward == h.up {
                return Err(Error::invalid("axis hints must name two distinct axes"));
            }
            (h.forward, h.up)
        }
        None => {
            for i in 0..3 {
                for j in i + 1..3 {
                    let (a, c) = (ext[i], ext[j]);
                    if (a - c).abs() <= 0.01 * a.max(c) {
                        return Err(Error::invalid(format!(
                            "ambiguous axes: extents {:.4} and {:.4} agree within 1%; pass axis hints",
                            a, c
                        )));
                    }
                }
            }
            let mut order = [0usize, 1, 2];
            order.sort_by(|&a, &c| ext[c].total_cmp(&ext[a]));
            (order[0], order[2])
        }
    };
    let side = 3 - forward - up;
    let scale = dims.length / ext[forward];
    let center = b.center();
    let axis = |i: usize| {
        let mut v = Vec3::zeros();
        v[i] = 1.0;
        v
    };
    // right-handed: new y = up x forward
    let fwd = axis(forward);
    let upv = axis(up);
    let mut sidev = axis(side);
    if upv.cross(&fwd).dot(&sidev) < 0.0 {
        sidev = -sidev;
    }
    let bottom = b.min[up];
    Ok(mesh.transformed(|v| {
        let d = v - center;
        Point3::new(
            d.dot(&fwd) * scale,
            d.dot(&sidev) * scale,
            (v[up] - bottom) * scale,
        )
    }))
}

/// Two stacked boxes (body and cabin) spanning exactly the requested
/// dimensions, bottom center at the origin, +x forward.
pub fn procedural_car(dims: &VehicleDims, rng: &mut SeededRng) -> Result<TriangleMesh> {
    dims.validate()?;
    let (l, w, h) = (dims.length, dims.width, dims.height);
    let body_h = h * rng.gen_range(0.45..0.6);
    let cabin_len = l * rng.gen_range(0.45..0.6);
    let cabin_w = w * rng.gen_range(0.85..0.95);
    let cabin_x0 = -l / 2.0 + (l - cabin_len) * rng.gen_range(0.35..0.65);
    let mut car = TriangleMesh::axis_box(Point3::new(-l / 2.0, -w / 2.0, 0.0), Point3::new(l / 2.0, w / 2.0, body_h));
    car.merge(&TriangleMesh::axis_box(
        Point3::new(cabin_x0, -cabin_w / 2.0, body_h),
        Point3::new(cabin_x0 + cabin_len, cabin_w / 2.0, h),
    ));
    Ok(car)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CUBE_OBJ: &str = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nv 0 0 1\nv 1 0 1\nv 0 1 1\nv 1 1 1\n\
        f 1 3 2\nf 2 3 4\nf 5 6 7\nf 6 8 7\nf 1 2 5\nf 2 6 5\nf 3 7 4\nf 4 7 8\nf 1 5 3\nf 3 5 7\nf 2 4 6\nf 4 8 6\n";

    #[test]
    fn unit_cube_loads() {
        let m = parse_obj(CUBE_OBJ).unwrap();
        assert_eq!(m.vertices.len(), 8);
        assert_eq!(m.triangles.len(), 12);
    }

    #[test]
    fn quads_are_rejected() {
        let err = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n").unwrap_err();
        assert!(err.to_string().contains("triangulate"));
    }

    #[test]
    fn duplicate_vertices_are_merged() {
        // two triangles sharing an edge, written with separate vertex copies
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3\nf 4 6 5\n";
        let m = parse_obj(text).unwrap();
        assert_eq!(m.vertices.len(), 4);
        assert_eq!(m.triangles.len(), 2);
    }

    #[test]
    fn slash_and_negative_indices() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1/1 2//2 -1\n").unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2]]);
    }

    #[test]
    fn empty_or_degenerate_mesh_errors() {
        assert!(parse_obj("v 0 0 0\n").is_err());
        assert!(parse_obj("v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n").is_err());
    }

    #[test]
    fn canonicalize_scales_and_seats_a_box() {
        // 0.8 along x, 2 along y (longest), 1 along z
        let m = TriangleMesh::axis_box(Point3::new(3.0, -1.0, 5.0), Point3::new(3.8, 1.0, 6.0));
        let c = canonicalize_vehicle(&m, &VehicleDims::default(), None).unwrap();
        let e = c.bounds().extent();
        assert!((e.x - 4.5).abs() < 1e-12);
        assert!((e.y - 2.25).abs() < 1e-12);
        assert!((e.z - 1.8).abs() < 1e-12);
        let b = c.bounds();
        assert!(b.min.z.abs() < 1e-12);
        assert!((b.min.x + b.max.x).abs() < 1e-12 && (b.min.y + b.max.y).abs() < 1e-12);
    }

    #[test]
    fn canonicalize_is_idempotent() {
        let car = procedural_car(&VehicleDims::default(), &mut SeededRng::new(1)).unwrap();
        let again = canonicalize_vehicle(&car, &VehicleDims::default(), None).unwrap();
        for (a, b) in car.vertices.iter().zip(&again.vertices) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn cube_is_ambiguous() {
        let m = parse_obj(CUBE_OBJ).unwrap();
        assert!(canonicalize_vehicle(&m, &VehicleDims::default(), None).is_err());
        let hinted = canonicalize_vehicle(&m, &VehicleDims::default(), Some(AxisHints { forward: 0, up: 2 })).unwrap();
        assert!((hinted.bounds().extent().x - 4.5).abs() < 1e-12);
    }

    #[test]
    fn procedural_car_shape() {
        let car = procedural_car(&VehicleDims::default(), &mut SeededRng::new(5)).unwrap();
        assert_eq!(car.triangles.len(), 24);
        let b = car.bounds();
        assert_eq!(b.extent(), Vec3::new(4.5, 1.8, 1.5));
        assert_eq!(b.min.z, 0.0);
    }

    #[test]
    fn procedural_car_is_watertight() {
        let car = procedural_car(&VehicleDims::default(), &mut SeededRng::new(6)).unwrap();
        let mut edges: HashMap<(u32, u32), usize> = HashMap::new();
        for t in &car.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        assert!(edges.values().all(|&c| c == 2));
        // outward winding: signed volume positive
        let vol: f64 = car
            .triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| car.vertices[i as usize].coords);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum();
        assert!(vol > 0.0);
    }
}
