//! Occlusion synthesis: a BVH over the posed vehicle mesh and head-to-point
//! segment tests that decide which points the vehicle would have hidden.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geom::{Aabb, Point3, Vec3};
use crate::placement::{PoseRecord, TriangleMesh, VehiclePose};
use crate::rng::SeededRng;

pub const SEGMENT_EPS: f64 = 1e-6;
const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point3,
    pub target: Point3,
}

impl Ray {
    pub fn new(origin: Point3, target: Point3) -> Result<Ray> {
        if origin == target {
            return Err(Error::invalid("ray origin equals its target"));
        }
        Ok(Ray { origin, target })
    }

    pub fn direction(&self) -> Vec3 {
        self.target - self.origin
    }
}

/// Watertight segment/triangle test: returns the hit parameter when the
/// triangle crosses the open segment `t ∈ (eps, 1 − eps)`. Edges and
/// vertices count as hits, so a segment crossing a shared edge is never
/// missed by both neighbours.
pub fn segment_triangle(origin: &Point3, dir: &Vec3, tri: &[Point3; 3], eps: f64) -> Option<f64> {
    let kz = dir.iamax();
    let mut kx = (kz + 1) % 3;
    let mut ky = (kx + 1) % 3;
    if dir[kz] < 0.0 {
        std::mem::swap(&mut kx, &mut ky);
    }
    let sx = dir[kx] / dir[kz];
    let sy = dir[ky] / dir[kz];
    let sz = 1.0 / dir[kz];
    let a = tri[0] - origin;
    let b = tri[1] - origin;
    let c = tri[2] - origin;
    let ax = a[kx] - sx * a[kz];
    let ay = a[ky] - sy * a[kz];
    let bx = b[kx] - sx * b[kz];
    let by = b[ky] - sy * b[kz];
    let cx = c[kx] - sx * c[kz];
    let cy = c[ky] - sy * c[kz];
    let u = cx * by - cy * bx;
    let v = ax * cy - ay * cx;
    let w = bx * ay - by * ax;
    if (u < 0.0 || v < 0.0 || w < 0.0) && (u > 0.0 || v > 0.0 || w > 0.0) {
        return None;
    }
    let det = u + v + w;
    if det == 0.0 {
        return None;
    }
    let t = (u * sz * a[kz] + v * sz * b[kz] + w * sz * c[kz]) / det;
    (t > eps && t < 1.0 - eps).then_some(t)
}

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf { start: usize, count: usize },
    Inner { left: usize, right: usize },
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    kind: NodeKind,
}

/// Bounding-volume hierarchy over triangle ids (median split, leaves of at
/// most four triangles).
#[derive(Debug, Clone)]
pub struct Bvh {
    tris: Vec<[Point3; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl Bvh {
    pub fn build(mesh: &TriangleMesh) -> Result<Bvh> {
        if mesh.is_empty() {
            return Err(Error::EmptyInput("mesh"));
        }
        let tris: Vec<[Point3; 3]> = (0..mesh.triangles.len()).map(|i| mesh.triangle(i)).collect();
        let centroids: Vec<Point3> = tris
            .iter()
            .map(|t| Point3::from((t[0].coords + t[1].coords + t[2].coords) / 3.0))
            .collect();
        let mut bvh = Bvh {
            order: (0..tris.len()).collect(),
            tris,
            nodes: Vec::new(),
        };
        let n = bvh.order.len();
        bvh.build_node(&centroids, 0, n);
        Ok(bvh)
    }

    fn build_node(&mut self, centroids: &[Point3], start: usize, end: usize) -> usize {
        let bounds = Aabb::from_points(self.order[start..end].iter().flat_map(|&i| self.tris[i].iter()));
        let id = self.nodes.len();
        self.nodes.push(Node {
            bounds,
            kind: NodeKind::Leaf {
                start,
                count: end - start,
            },
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let cb = Aabb::from_points(self.order[start..end].iter().map(|&i| &centroids[i]));
        let axis = cb.longest_axis();
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b))
        });
        let left = self.build_node(centroids, start, mid);
        let right = self.build_node(centroids, mid, end);
        self.nodes[id].kind = NodeKind::Inner { left, right };
        id
    }

    pub fn triangle_count(&self) -> usize {
        self.tris.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn root_bounds(&self) -> Aabb {
        self.nodes[0].bounds
    }

    /// Checks the structural invariants: every triangle in exactly one leaf,
    /// leaves of at most four, parents containing children.
    pub fn validate(&self) -> bool {
        let mut seen = vec![0usize; self.tris.len()];
        for node in &self.nodes {
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    if count > LEAF_SIZE {
                        return false;
                    }
                    for &t in &self.order[start..start + count] {
                        seen[t] += 1;
                        if !self.tris[t].iter().all(|p| node.bounds.contains(p)) {
                            return false;
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    if !node.bounds.contains_box(&self.nodes[left].bounds) || !node.bounds.contains_box(&self.nodes[right].bounds) {
                        return false;
                    }
                }
            }
        }
        let leaves_only_reachable = {
            let mut count = 0;
            let mut stack = vec![0];
            while let Some(i) = stack.pop() {
                count += 1;
                if let NodeKind::Inner { left, right } = self.nodes[i].kind {
                    stack.push(left);
                    stack.push(right);
                }
            }
            count == self.nodes.len()
        };
        leaves_only_reachable && seen.iter().all(|&c| c == 1)
    }

    pub fn segment_hits(&self, ray: &Ray) -> bool {
        self.segment_hits_counted(ray).0
    }

    /// Same as `segment_hits`, also returning how many nodes were visited.
    pub fn segment_hits_counted(&self, ray: &Ray) -> (bool, usize) {
        let dir = ray.direction();
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut visits = 0;
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i];
            visits += 1;
            if !segment_box(&ray.origin, &dir, &inv, &node.bounds) {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    if self.order[start..start + count]
                        .iter()
                        .any(|&t| segment_triangle(&ray.origin, &dir, &self.tris[t], SEGMENT_EPS).is_some())
                    {
                        return (true, visits);
                    }
                }
                NodeKind::Inner { left, right } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        (false, visits)
    }
}

/// Conservative slab test of the closed segment against a box, padded by a
/// relative tolerance so rounding never rejects a true hit.
fn segment_box(o: &Point3, d: &Vec3, inv: &Vec3, b: &Aabb) -> bool {
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for k in 0..3 {
        let pad = 1e-9 * (1.0 + b.min[k].abs().max(b.max[k].abs()));
        let (lo, hi) = (b.min[k] - pad, b.max[k] + pad);
        if d[k] == 0.0 {
            if o[k] < lo || o[k] > hi {
                return false;
            }
            continue;
        }
        let mut a = (lo - o[k]) * inv[k];
        let mut c = (hi - o[k]) * inv[k];
        if a > c {
            std::mem::swap(&mut a, &mut c);
        }
        t0 = t0.max(a);
        t1 = t1.min(c);
        if t0 > t1 * (1.0 + 1e-12) + 1e-12 {
            return false;
        }
    }
    true
}

/// Exhaustive reference used by tests and diagnostics.
pub fn segment_hits_brute(mesh: &TriangleMesh, ray: &Ray) -> bool {
    let dir = ray.direction();
    (0..mesh.triangles.len()).any(|i| segment_triangle(&ray.origin, &dir, &mesh.triangle(i), SEGMENT_EPS).is_some())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CropConfig {
    pub half_size: f64,
    pub jitter_radius: f64,
    pub min_points: usize,
}

impl Default for CropConfig {
    fn default() -> Self {
        CropConfig {
            half_size: 4.0,
            jitter_radius: 0.2,
            min_points: 5000,
        }
    }
}

pub fn jittered_center(location: &Point3, radius: f64, rng: &mut SeededRng) -> Point3 {
    let r = radius * rng.gen::<f64>().sqrt();
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    Point3::new(location.x + r * theta.cos(), location.y + r * theta.sin(), location.z)
}

/// Square crop around a jittered center; z is left unrestricted.
pub fn crop_scene(cloud: &PointCloud, location: &Point3, cfg: &CropConfig, rng: &mut SeededRng) -> Result<(Point3, PointCloud)> {
    if cloud.heads.is_none() {
        return Err(Error::invalid("cropping for synthesis requires per-point sensor heads"));
    }
    let center = jittered_center(location, cfg.jitter_radius, rng);
    let crop = cloud.filter(|i| {
        let p = &cloud.points[i];
        (p.x - center.x).abs() <= cfg.half_size && (p.y - center.y).abs() <= cfg.half_size
    });
    if crop.len() < cfg.min_points {
        return Err(Error::InsufficientPoints {
            have: crop.len(),
            need: cfg.min_points,
        });
    }
    Ok((center, crop))
}

/// Per-point occlusion by the posed mesh; `true` means the head-to-point
/// segment crosses the vehicle.
pub fn occlusion_mask(cloud: &PointCloud, bvh: &Bvh) -> Result<Vec<bool>> {
    let heads = cloud
        .heads
        .as_ref()
        .ok_or_else(|| Error::invalid("occlusion needs per-point sensor heads"))?;
    Ok(cloud
        .points
        .par_iter()
        .zip(heads.par_iter())
        .map(|(p, h)| h != p && bvh.segment_hits(&Ray { origin: *h, target: *p }))
        .collect())
}

#[derive(Debug, Clone)]
pub struct ScenePairRaw {
    pub complete: PointCloud,
    pub gapped: PointCloud,
    pub center: Point3,
    pub pose: VehiclePose,
    pub removed: usize,
    /// Set when the vehicle occluded nothing.
    pub flagged: bool,
}

/// Removes every point of `complete` hidden by `posed_mesh`.
pub fn synthesize_pair(complete: PointCloud, posed_mesh: &TriangleMesh, center: Point3, pose: VehiclePose) -> Result<ScenePairRaw> {
    let bvh = Bvh::build(posed_mesh)?;
    let mask = occlusion_mask(&complete, &bvh)?;
    let gapped = complete.filter(|i| !mask[i]);
    let removed = complete.len() - gapped.len();
    if removed == 0 {
        log::warn!("vehicle {} occluded no points near ({:.2}, {:.2})", pose.mesh_id, center.x, center.y);
    }
    Ok(ScenePairRaw {
        complete,
        gapped,
        center,
        pose,
        removed,
        flagged: removed == 0,
    })
}

/// Metadata written next to each raw scene pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSceneMeta {
    pub scene_id: String,
    pub center: [f64; 3],
    pub pose: PoseRecord,
    pub removed: usize,
    pub complete_points: usize,
    pub gap_points: usize,
    pub flagged: bool,
    pub seed_path: String,
}

impl ScenePairRaw {
    pub fn meta(&self, scene_id: &str, seed_path: &str) -> RawSceneMeta {
        RawSceneMeta {
            scene_id: scene_id.to_string(),
            center: [self.center.x, self.center.y, self.center.z],
            pose: self.pose.to_record(),
            removed: self.removed,
            complete_points: self.complete.len(),
            gap_points: self.gapped.len(),
            flagged: self.flagged,
            seed_path: seed_path.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::placement::{procedural_car, ParkingMode, VehicleDims};
    use nalgebra::Matrix3;

    fn cube() -> TriangleMesh {
        TriangleMesh::axis_box(Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 1.0, 1.0))
    }

    fn ray(a: [f64; 3], b: [f64; 3]) -> Ray {
        Ray::new(Point3::from(a), Point3::from(b)).unwrap()
    }

    fn identity_pose() -> VehiclePose {
        VehiclePose {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
            mesh_id: "m".into(),
            mode: ParkingMode::OnRoad,
            lateral_offset: 0.0,
        }
    }

    #[test]
    fn single_triangle_is_one_leaf() {
        let m = TriangleMesh::new(
            vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let bvh = Bvh::build(&m).unwrap();
        assert_eq!(bvh.node_count(), 1);
        assert!(bvh.validate());
    }

    #[test]
    fn cube_segments() {
        let bvh = Bvh::build(&cube()).unwrap();
        assert!(bvh.segment_hits(&ray([-1.0, 0.5, 0.5], [2.0, 0.5, 0.5])));
        assert!(bvh.segment_hits(&ray([0.5, 0.5, 3.0], [0.5, 0.5, 0.5])));
        // 1 mm outside the +y face
        assert!(!bvh.segment_hits(&ray([-1.0, 1.001, 0.5], [2.0, 1.001, 0.5])));
        // target exactly on the surface
        assert!(!bvh.segment_hits(&ray([0.5, 0.5, 3.0], [0.5, 0.5, 1.0])));
        // stops short of the cube
        assert!(!bvh.segment_hits(&ray([0.5, 0.5, 3.0], [0.5, 0.5, 1.5])));
    }

    #[test]
    fn shared_edges_are_not_leaky() {
        // aim straight through the diagonal edge of every face
        let bvh = Bvh::build(&cube()).unwrap();
        assert!(bvh.segment_hits(&ray([0.3, 0.3, 5.0], [0.3, 0.3, -5.0])));
        assert!(bvh.segment_hits(&ray([0.5, 0.5, 5.0], [0.5, 0.5, -5.0])));
        assert!(bvh.segment_hits(&ray([1.0, 1.0, 5.0], [1.0, 1.0, -5.0])));
    }

    #[test]
    fn outside_root_box_visits_only_root() {
        let bvh = Bvh::build(&procedural_car(&VehicleDims::default(), &mut SeededRng::new(0)).unwrap()).unwrap();
        let (hit, visits) = bvh.segment_hits_counted(&ray([10.0, 10.0, 0.0], [12.0, 11.0, 3.0]));
        assert!(!hit);
        assert_eq!(visits, 1);
    }

    fn random_soup(n: usize, rng: &mut SeededRng) -> TriangleMesh {
        let mut v = Vec::new();
        let mut t = Vec::new();
        for i in 0..n {
            let c = Point3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(0.0..3.0));
            for _ in 0..3 {
                v.push(c + Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)));
            }
            t.push([3 * i as u32, 3 * i as u32 + 1, 3 * i as u32 + 2]);
        }
        TriangleMesh::new(v, t).unwrap()
    }

    #[test]
    fn bvh_matches_brute_force() {
        let mut rng = SeededRng::new(77);
        let mesh = random_soup(2000, &mut rng);
        let bvh = Bvh::build(&mesh).unwrap();
        assert!(bvh.validate());
        let mut hits = 0;
        for _ in 0..2000 {
            let a = [rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0), rng.gen_range(-1.0..4.0)];
            let b = [rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0), rng.gen_range(-1.0..4.0)];
            let r = ray(a, b);
            let expect = segment_hits_brute(&mesh, &r);
            hits += expect as usize;
            assert_eq!(bvh.segment_hits(&r), expect);
        }
        assert!(hits > 100 && hits < 1900);
    }

    #[test]
    fn crop_jitter_and_density() {
        let mut pts = Vec::new();
        for i in 0..200 {
            for j in 0..200 {
                pts.push(Point3::new(i as f64 * 0.1 - 10.0 + 0.05, j as f64 * 0.1 - 10.0 + 0.05, 0.0));
            }
        }
        let heads = vec![Point3::new(0.0, 0.0, 2.75); pts.len()];
        let cloud = PointCloud::with_heads(pts, heads);
        let (c, crop) = crop_scene(&cloud, &Point3::origin(), &CropConfig::default(), &mut SeededRng::new(3)).unwrap();
        // density 100/m², 64 m², at most one grid row/column of slack per side
        assert!((crop.len() as i64 - 6400).abs() <= 160, "{}", crop.len());
        let (c2, _) = crop_scene(&cloud, &Point3::origin(), &CropConfig::default(), &mut SeededRng::new(3)).unwrap();
        assert_eq!(c, c2);
        let mut rng = SeededRng::new(4);
        for _ in 0..10_000 {
            let j = jittered_center(&Point3::new(1.0, 2.0, 3.0), 0.2, &mut rng);
            assert!(((j.x - 1.0).powi(2) + (j.y - 2.0).powi(2)).sqrt() <= 0.2);
        }
        let strict = CropConfig {
            min_points: 7000,
            ..Default::default()
        };
        assert!(matches!(
            crop_scene(&cloud, &Point3::origin(), &strict, &mut SeededRng::new(3)),
            Err(Error::InsufficientPoints { .. })
        ));
    }

    #[test]
    fn no_and_total_occlusion() {
        let pts: Vec<Point3> = (0..100).map(|i| Point3::new(i as f64 * 0.1, 5.0, 0.0)).collect();
        let heads = vec![Point3::new(5.0, 0.0, 0.5); 100];
        let cloud = PointCloud::with_heads(pts, heads);
        let far = TriangleMesh::axis_box(Point3::new(50.0, 50.0, 0.0), Point3::new(51.0, 51.0, 1.0));
        let pair = synthesize_pair(cloud.clone(), &far, Point3::origin(), identity_pose()).unwrap();
        assert_eq!(pair.gapped.len(), 100);
        assert!(pair.flagged);
        let wall = TriangleMesh::axis_box(Point3::new(-100.0, 2.0, -100.0), Point3::new(100.0, 2.1, 100.0));
        let pair = synthesize_pair(cloud, &wall, Point3::origin(), identity_pose()).unwrap();
        assert!(pair.gapped.is_empty());
        assert_eq!(pair.removed, 100);
    }

    #[test]
    fn mask_ignores_point_order() {
        let mut rng = SeededRng::new(9);
        let mesh = random_soup(50, &mut rng);
        let bvh = Bvh::build(&mesh).unwrap();
        let pts: Vec<Point3> = (0..500)
            .map(|_| Point3::new(rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0), 0.0))
            .collect();
        let cloud = PointCloud::with_heads(pts.clone(), vec![Point3::new(0.0, 0.0, 3.0); 500]);
        let mask = occlusion_mask(&cloud, &bvh).unwrap();
        let rev: Vec<Point3> = pts.iter().rev().copied().collect();
        let rcloud = PointCloud::with_heads(rev, vec![Point3::new(0.0, 0.0, 3.0); 500]);
        let rmask = occlusion_mask(&rcloud, &bvh).unwrap();
        let back: Vec<bool> = rmask.into_iter().rev().collect();
        assert_eq!(mask, back);
    }
}
