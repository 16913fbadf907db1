//! Vehicle meshes, local ground fitting and vehicle posing at parking
//! candidates.

mod mesh;

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Rotation3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::boundary::ParkingCandidate;
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geom::{principal_axes, rotation_between, xy_distance, Point3, Vec2, Vec3};
use crate::rng::SeededRng;

pub use mesh::{canonicalize_vehicle, load_mesh, parse_obj, procedural_car, AxisHints, TriangleMesh, VehicleDims};

/// Per-model dimension overrides, keyed by mesh id (file stem).
pub fn load_dims_table(path: impl AsRef<Path>) -> Result<HashMap<String, VehicleDims>> {
    let table: HashMap<String, VehicleDims> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    for (k, d) in &table {
        d.validate().map_err(|e| Error::invalid(format!("dims for {k}: {e}")))?;
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundPlane {
    pub normal: Vec3,
    pub d: f64,
    pub inliers: usize,
    pub rms: f64,
}

impl GroundPlane {
    pub fn signed_distance(&self, p: &Point3) -> f64 {
        self.normal.dot(&p.coords) - self.d
    }

    /// Height of the plane above (x, y).
    pub fn z_at(&self, x: f64, y: f64) -> f64 {
        (self.d - self.normal.x * x - self.normal.y * y) / self.normal.z
    }

    pub fn inclination_deg(&self) -> f64 {
        self.normal.z.clamp(-1.0, 1.0).acos().to_degrees()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundFitConfig {
    pub radius: f64,
    pub inlier_threshold: f64,
    pub iterations: usize,
    pub min_points: usize,
    pub min_inlier_ratio: f64,
}

impl Default for GroundFitConfig {
    fn default() -> Self {
        GroundFitConfig {
            radius: 2.0,
            inlier_threshold: 0.03,
            iterations: 200,
            min_points: 50,
            min_inlier_ratio: 0.4,
        }
    }
}

fn plane_through(a: &Point3, b: &Point3, c: &Point3) -> Option<(Vec3, f64)> {
    let n = (b - a).cross(&(c - a));
    let len = n.norm();
    if len < 1e-12 {
        return None;
    }
    let mut n = n / len;
    if n.z < 0.0 {
        n = -n;
    }
    Some((n, n.dot(&a.coords)))
}

/// RANSAC ground plane over the points within `radius` (xy) of `center`,
/// refit by least squares on the inliers.
pub fn fit_ground_plane(cloud: &PointCloud, center: &Point3, cfg: &GroundFitConfig, rng: &mut SeededRng) -> Result<GroundPlane> {
    let local: Vec<Point3> = cloud
        .points
        .iter()
        .filter(|p| xy_distance(p, center) <= cfg.radius)
        .copied()
        .collect();
    if local.len() < cfg.min_points {
        return Err(Error::NoReliableGround(format!(
            "{} points within {} m, need {}",
            local.len(),
            cfg.radius,
            cfg.min_points
        )));
    }
    let count = |n: &Vec3, d: f64| local.iter().filter(|p| (n.dot(&p.coords) - d).abs() <= cfg.inlier_threshold).count();
    let mut best: Option<(usize, Vec3, f64)> = None;
    for _ in 0..cfg.iterations {
        let i = rng.gen_range(0..local.len());
        let j = rng.gen_range(0..local.len());
        let k = rng.gen_range(0..local.len());
        if i == j || j == k || i == k {
            continue;
        }
        let Some((n, d)) = plane_through(&local[i], &local[j], &local[k]) else {
            continue;
        };
        let c = count(&n, d);
        if best.map_or(true, |b| c > b.0) {
            best = Some((c, n, d));
        }
    }
    let Some((_, n, d)) = best else {
        return Err(Error::NoReliableGround("no non-degenerate sample".into()));
    };
    let inliers: Vec<Point3> = local
        .iter()
        .filter(|p| (n.dot(&p.coords) - d).abs() <= cfg.inlier_threshold)
        .copied()
        .collect();
    let ratio = inliers.len() as f64 / local.len() as f64;
    if ratio < cfg.min_inlier_ratio {
        return Err(Error::NoReliableGround(format!("inlier ratio {ratio:.2} below {}", cfg.min_inlier_ratio)));
    }
    let pa = principal_axes(&inliers).ok_or_else(|| Error::NoReliableGround("inliers are degenerate".into()))?;
    let mut normal = pa.axes[0];
    if normal.z < 0.0 {
        normal = -normal;
    }
    if normal.z.abs() < 1e-9 {
        return Err(Error::NoReliableGround("fitted plane is vertical".into()));
    }
    let d = normal.dot(&pa.centroid.coords);
    let rms = (inliers.iter().map(|p| (normal.dot(&p.coords) - d).powi(2)).sum::<f64>() / inliers.len() as f64).sqrt();
    Ok(GroundPlane {
        normal,
        d,
        inliers: inliers.len(),
        rms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParkingMode {
    OnRoad,
    /// `fraction` of the body width sits on the sidewalk side.
    Sidewalk { fraction: f64 },
    Perpendicular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlacementConfig {
    pub p_on_road: f64,
    pub p_sidewalk: f64,
    pub p_perpendicular: f64,
    /// Upper bound of the random gap between body and boundary.
    pub max_gap: f64,
    pub ground: GroundFitConfig,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        PlacementConfig {
            p_on_road: 0.7,
            p_sidewalk: 0.25,
            p_perpendicular: 0.05,
            max_gap: 0.3,
            ground: GroundFitConfig::default(),
        }
    }
}

impl PlacementConfig {
    pub fn validate(&self) -> Result<()> {
        let ps = [self.p_on_road, self.p_sidewalk, self.p_perpendicular];
        if ps.iter().any(|p| !(0.0..=1.0).contains(p)) || (ps.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("mode probabilities must be in [0,1] and sum to 1"));
        }
        if !(self.max_gap > 0.0) {
            return Err(Error::invalid("max_gap must be positive"));
        }
        Ok(())
    }
}

/// Horizontal placement decided before the ground is known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacementPlan {
    pub mode: ParkingMode,
    /// Distance from the anchor toward the road.
    pub lateral_offset: f64,
    pub center_xy: Vec2,
    /// World direction of model +x.
    pub heading: Vec2,
}

pub fn plan_placement(candidate: &ParkingCandidate, dims: &VehicleDims, cfg: &PlacementConfig, rng: &mut SeededRng) -> PlacementPlan {
    let u: f64 = rng.gen();
    let gap = rng.gen_range(0.0..cfg.max_gap);
    let (mode, offset, heading) = if u < cfg.p_on_road {
        (ParkingMode::OnRoad, dims.width / 2.0 + gap, candidate.road_direction)
    } else if u < cfg.p_on_road + cfg.p_sidewalk {
        let f = rng.gen_range(0.25..0.75);
        (
            ParkingMode::Sidewalk { fraction: f },
            dims.width / 2.0 - f * dims.width,
            candidate.road_direction,
        )
    } else {
        (ParkingMode::Perpendicular, dims.length / 2.0 + gap, candidate.sidewalk_side)
    };
    let anchor = Vec2::new(candidate.anchor.x, candidate.anchor.y);
    PlacementPlan {
        mode,
        lateral_offset: offset,
        center_xy: anchor - candidate.sidewalk_side * offset,
        heading: heading.normalize(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehiclePose {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
    pub mesh_id: String,
    pub mode: ParkingMode,
    pub lateral_offset: f64,
}

impl VehiclePose {
    pub fn from_plan(plan: &PlacementPlan, plane: &GroundPlane, mesh_id: impl Into<String>) -> VehiclePose {
        let yaw = plan.heading.y.atan2(plan.heading.x);
        let r_yaw = Rotation3::from_axis_angle(&Vec3::z_axis(), yaw).into_inner();
        let r_tilt = rotation_between(&Vec3::z(), &plane.normal);
        let (cx, cy) = (plan.center_xy.x, plan.center_xy.y);
        VehiclePose {
            rotation: r_tilt * r_yaw,
            translation: Vec3::new(cx, cy, plane.z_at(cx, cy)),
            mesh_id: mesh_id.into(),
            mode: plan.mode,
            lateral_offset: plan.lateral_offset,
        }
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_mesh(&self, mesh: &TriangleMesh) -> TriangleMesh {
        mesh.transformed(|p| self.apply(p))
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn yaw(&self) -> f64 {
        let x = self.rotation * Vec3::x();
        x.y.atan2(x.x)
    }

    pub fn to_record(&self) -> PoseRecord {
        let m = self.matrix();
        let mut matrix = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                matrix[r * 4 + c] = m[(r, c)];
            }
        }
        PoseRecord {
            matrix,
            mesh_id: self.mesh_id.clone(),
            mode: self.mode,
            lateral_offset: self.lateral_offset,
        }
    }
}

/// JSON form: 4×4 row-major model-to-world matrix plus metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub matrix: [f64; 16],
    pub mesh_id: String,
    pub mode: ParkingMode,
    pub lateral_offset: f64,
}

impl PoseRecord {
    pub fn to_pose(&self) -> Result<VehiclePose> {
        let m = &self.matrix;
        if m[12..15].iter().any(|&v| v != 0.0) || m[15] != 1.0 {
            return Err(Error::format("pose matrix is not affine"));
        }
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        if (rotation.determinant() - 1.0).abs() > 1e-9 || (rotation.transpose() * rotation - Matrix3::identity()).abs().max() > 1e-9 {
            return Err(Error::format("pose rotation is not orthonormal"));
        }
        Ok(VehiclePose {
            rotation,
            translation: Vec3::new(m[3], m[7], m[11]),
            mesh_id: self.mesh_id.clone(),
            mode: self.mode,
            lateral_offset: self.lateral_offset,
        })
    }
}

/// Draws the placement and poses the vehicle on the given plane.
pub fn pose_vehicle(
    candidate: &ParkingCandidate,
    plane: &GroundPlane,
    mesh_id: &str,
    dims: &VehicleDims,
    cfg: &PlacementConfig,
    rng: &mut SeededRng,
) -> VehiclePose {
    let plan = plan_placement(candidate, dims, cfg, rng);
    VehiclePose::from_plan(&plan, plane, mesh_id)
}

/// Full placement: shift, fit the ground under the shifted center from the
/// cloud, then pose.
pub fn place_vehicle(
    cloud: &PointCloud,
    candidate: &ParkingCandidate,
    mesh_id: &str,
    dims: &VehicleDims,
    cfg: &PlacementConfig,
    rng: &SeededRng,
) -> Result<(VehiclePose, GroundPlane)> {
    let plan = plan_placement(candidate, dims, cfg, &mut rng.derive("lateral"));
    let center = Point3::new(plan.center_xy.x, plan.center_xy.y, 0.0);
    let plane = fit_ground_plane(cloud, &center, &cfg.ground, &mut rng.derive("ransac"))?;
    Ok((VehiclePose::from_plan(&plan, &plane, mesh_id), plane))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(z: f64) -> GroundPlane {
        GroundPlane {
            normal: Vec3::z(),
            d: z,
            inliers: 0,
            rms: 0.0,
        }
    }

    fn candidate() -> ParkingCandidate {
        ParkingCandidate {
            anchor: Point3::new(10.0, 5.0, 0.15),
            road_direction: Vec2::new(1.0, 0.0),
            sidewalk_side: Vec2::new(0.0, 1.0),
            polyline: 0,
            arc_position: 10.0,
        }
    }

    fn inclined_cloud(deg: f64, outliers: f64, seed: u64) -> (PointCloud, Vec3, f64) {
        let mut rng = SeededRng::new(seed);
        let n = Vec3::new(deg.to_radians().sin(), 0.0, deg.to_radians().cos());
        let d = 5.0;
        let mut pts = Vec::new();
        for i in 0..1000 {
            let x = rng.gen_range(-2.0..2.0);
            let y = rng.gen_range(-2.0..2.0);
            let mut z = (d - n.x * x - n.y * y) / n.z;
            if (i as f64) < outliers * 1000.0 {
                z += rng.gen_range(-1.0..1.0);
            }
            pts.push(Point3::new(x, y, z));
        }
        (PointCloud::new(pts), n, d)
    }

    #[test]
    fn flat_plane_with_outliers() {
        let (cloud, _, _) = inclined_cloud(0.0, 0.1, 1);
        let g = fit_ground_plane(&cloud, &Point3::origin(), &GroundFitConfig::default(), &mut SeededRng::new(2)).unwrap();
        assert!(g.inclination_deg() < 0.5);
        assert!((g.d - 5.0).abs() < 0.01);
        assert!(g.normal.z > 0.0);
    }

    #[test]
    fn inclined_plane() {
        let (cloud, _, _) = inclined_cloud(10.0, 0.1, 3);
        let g = fit_ground_plane(&cloud, &Point3::origin(), &GroundFitConfig::default(), &mut SeededRng::new(4)).unwrap();
        assert!((g.inclination_deg() - 10.0).abs() < 0.5);
    }

    #[test]
    fn noiseless_refit_is_exact() {
        let (cloud, n, d) = inclined_cloud(7.0, 0.0, 5);
        let g = fit_ground_plane(&cloud, &Point3::origin(), &GroundFitConfig::default(), &mut SeededRng::new(6)).unwrap();
        assert!((g.normal - n).norm() < 1e-12);
        assert!((g.d - d).abs() < 1e-12);
        assert_eq!(g.inliers, cloud.points.iter().filter(|p| p.x.hypot(p.y) <= 2.0).count());
    }

    #[test]
    fn too_few_points() {
        let pts = (0..30).map(|i| Point3::new(i as f64 * 0.01, 0.0, 0.0)).collect();
        let err = fit_ground_plane(&PointCloud::new(pts), &Point3::origin(), &GroundFitConfig::default(), &mut SeededRng::new(0));
        assert!(matches!(err, Err(Error::NoReliableGround(_))));
    }

    #[test]
    fn mostly_outliers_is_rejected() {
        let (cloud, _, _) = inclined_cloud(0.0, 0.8, 7);
        let err = fit_ground_plane(&cloud, &Point3::origin(), &GroundFitConfig::default(), &mut SeededRng::new(0));
        assert!(matches!(err, Err(Error::NoReliableGround(_))));
    }

    #[test]
    fn on_road_offset_arithmetic() {
        let plan = PlacementPlan {
            mode: ParkingMode::OnRoad,
            lateral_offset: 0.9 + 0.12,
            center_xy: Vec2::new(10.0, 5.0 - 1.02),
            heading: Vec2::new(1.0, 0.0),
        };
        let pose = VehiclePose::from_plan(&plan, &flat(0.0), "car");
        assert!((pose.translation - Vec3::new(10.0, 3.98, 0.0)).norm() < 1e-12);
        assert!(pose.yaw().abs() < 1e-12);
        // sampled plans follow the same arithmetic
        let cfg = PlacementConfig {
            p_on_road: 1.0,
            p_sidewalk: 0.0,
            p_perpendicular: 0.0,
            ..Default::default()
        };
        for s in 0..50 {
            let p = plan_placement(&candidate(), &VehicleDims::default(), &cfg, &mut SeededRng::new(s));
            let gap = p.lateral_offset - 0.9;
            assert!((0.0..0.3).contains(&gap));
            assert!((p.center_xy.y - (5.0 - p.lateral_offset)).abs() < 1e-12);
        }
    }

    #[test]
    fn sidewalk_and_perpendicular_modes() {
        let dims = VehicleDims::default();
        let side = PlacementConfig {
            p_on_road: 0.0,
            p_sidewalk: 1.0,
            p_perpendicular: 0.0,
            ..Default::default()
        };
        let p = plan_placement(&candidate(), &dims, &side, &mut SeededRng::new(1));
        let ParkingMode::Sidewalk { fraction } = p.mode else { panic!() };
        assert!((0.25..0.75).contains(&fraction));
        // the body edge on the sidewalk side lies fraction*width beyond the anchor
        let far_edge = p.center_xy.y + dims.width / 2.0;
        assert!((far_edge - 5.0 - fraction * dims.width).abs() < 1e-12);
        let perp = PlacementConfig {
            p_on_road: 0.0,
            p_sidewalk: 0.0,
            p_perpendicular: 1.0,
            ..Default::default()
        };
        let p = plan_placement(&candidate(), &dims, &perp, &mut SeededRng::new(1));
        assert_eq!(p.mode, ParkingMode::Perpendicular);
        let pose = VehiclePose::from_plan(&p, &flat(0.0), "car");
        assert!((pose.yaw() - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn sloped_pose_seats_on_plane() {
        let (cloud, _, _) = inclined_cloud(10.0, 0.0, 9);
        let plane = fit_ground_plane(&cloud, &Point3::origin(), &GroundFitConfig::default(), &mut SeededRng::new(1)).unwrap();
        let dims = VehicleDims::default();
        let car = procedural_car(&dims, &mut SeededRng::new(2)).unwrap();
        let mut c = candidate();
        c.anchor = Point3::new(0.0, 1.0, 0.0);
        for s in 0..20 {
            let pose = pose_vehicle(&c, &plane, "car", &dims, &PlacementConfig::default(), &mut SeededRng::new(s));
            assert!((pose.rotation.determinant() - 1.0).abs() < 1e-9);
            assert!((pose.rotation.transpose() * pose.rotation - Matrix3::identity()).abs().max() < 1e-12);
            for v in car.vertices.iter().filter(|v| v.z == 0.0) {
                assert!(plane.signed_distance(&pose.apply(v)).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn place_vehicle_is_deterministic_and_roundtrips() {
        let (cloud, _, _) = inclined_cloud(3.0, 0.05, 11);
        let mut c = candidate();
        c.anchor = Point3::new(0.0, 1.0, 0.0);
        let dims = VehicleDims::default();
        let cfg = PlacementConfig::default();
        let a = place_vehicle(&cloud, &c, "m", &dims, &cfg, &SeededRng::new(42)).unwrap();
        let b = place_vehicle(&cloud, &c, "m", &dims, &cfg, &SeededRng::new(42)).unwrap();
        assert_eq!(a, b);
        let json = serde_json::to_string(&a.0.to_record()).unwrap();
        let back: PoseRecord = serde_json::from_str(&json).unwrap();
        let pose = back.to_pose().unwrap();
        assert!((pose.rotation - a.0.rotation).abs().max() < 1e-15);
        assert_eq!(pose.translation, a.0.translation);
    }
}
