//! Fixed-size, normalized, augmented training samples and their
//! geographic train/test/val split.

mod io;
mod split;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{Frame, PointCloud};
use crate::error::{Error, Result};
use crate::geom::{quantile, Point3};
use crate::raycast::ScenePairRaw;
use crate::rng::SeededRng;

pub use io::{read_dataset, read_raw_scenes, write_dataset, write_raw_scene, RawScene, SceneMeta};
pub use split::{split_geographic, DatasetManifest, Region, Shape, Split, SplitCounts, SplitSpec};

pub const COMPLETE_POINTS: usize = 27_648;
pub const GAP_POINTS: usize = 18_500;

/// Uniform sample of `n` distinct points, kept in input order.
pub fn subsample(cloud: &PointCloud, n: usize, rng: &mut SeededRng) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("cloud"));
    }
    if cloud.len() < n {
        return Err(Error::InsufficientPoints { have: cloud.len(), need: n });
    }
    let mut ids = index::sample(rng, cloud.len(), n).into_vec();
    ids.sort_unstable();
    Ok(cloud.select(&ids))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormConfig {
    /// Horizontal half-extent mapped to 1.
    pub scale: f64,
    /// Vertical stretch applied before scaling.
    pub z_scale: f64,
    pub z_ref_quantile: f64,
    /// Added to the z quantile so the kept height band is centered.
    pub z_ref_offset: f64,
    pub complete_points: usize,
    pub gap_points: usize,
}

impl Default for NormConfig {
    fn default() -> Self {
        NormConfig {
            scale: 4.0,
            z_scale: 3.0,
            z_ref_quantile: 0.05,
            z_ref_offset: 0.825,
            complete_points: COMPLETE_POINTS,
            gap_points: GAP_POINTS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormTransform {
    pub cx: f64,
    pub cy: f64,
    pub z_ref: f64,
    pub scale: f64,
    pub z_scale: f64,
}

impl NormTransform {
    pub fn forward(&self, p: &Point3) -> Point3 {
        Point3::new(
            (p.x - self.cx) / self.scale,
            (p.y - self.cy) / self.scale,
            self.z_scale * (p.z - self.z_ref) / self.scale,
        )
    }

    pub fn inverse(&self, q: &Point3) -> Point3 {
        Point3::new(
            q.x * self.scale + self.cx,
            q.y * self.scale + self.cy,
            q.z * self.scale / self.z_scale + self.z_ref,
        )
    }

    /// Positions only, in the normalized frame.
    pub fn forward_cloud(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud::normalized(cloud.points.iter().map(|p| self.forward(p)).collect())
    }

    pub fn inverse_cloud(&self, cloud: &PointCloud) -> PointCloud {
        let mut out = PointCloud::new(cloud.points.iter().map(|p| self.inverse(p)).collect());
        out.frame = Frame::World;
        out
    }
}

fn check_cube(cloud: &PointCloud) -> Result<()> {
    const TOL: f64 = 1e-9;
    match cloud.points.iter().position(|p| p.iter().any(|c| c.abs() > 1.0 + TOL)) {
        Some(i) => {
            let p = cloud.points[i];
            Err(Error::OutsideCube { index: i, x: p.x, y: p.y, z: p.z })
        }
        None => Ok(()),
    }
}

/// Shared transform for a scene: centered on `center`, z reference from the
/// complete cloud.
pub fn scene_transform(complete: &PointCloud, center: &Point3, cfg: &NormConfig) -> Result<NormTransform> {
    let zs: Vec<f64> = complete.points.iter().map(|p| p.z).collect();
    let q = quantile(&zs, cfg.z_ref_quantile).ok_or(Error::EmptyInput("complete scene"))?;
    Ok(NormTransform {
        cx: center.x,
        cy: center.y,
        z_ref: q + cfg.z_ref_offset,
        scale: cfg.scale,
        z_scale: cfg.z_scale,
    })
}

/// Applies one transform to both clouds and checks the unit cube.
pub fn normalize_pair(complete: &PointCloud, gapped: &PointCloud, t: &NormTransform) -> Result<(PointCloud, PointCloud)> {
    let c = t.forward_cloud(complete);
    let g = t.forward_cloud(gapped);
    check_cube(&c)?;
    check_cube(&g)?;
    Ok((c, g))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flip {
    None,
    X,
    Y,
}

/// Rotation about z by `quarter_turns · 90°`, then an optional axis flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Augmentation {
    pub quarter_turns: u8,
    pub flip: Flip,
}

impl Augmentation {
    pub const IDENTITY: Augmentation = Augmentation {
        quarter_turns: 0,
        flip: Flip::None,
    };

    pub fn sample(rng: &mut SeededRng) -> Augmentation {
        let quarter_turns = rng.gen_range(0..4u8);
        let flip = match rng.gen_range(0..3) {
            0 => Flip::None,
            1 => Flip::X,
            _ => Flip::Y,
        };
        Augmentation { quarter_turns, flip }
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        let (x, y) = match self.quarter_turns % 4 {
            0 => (p.x, p.y),
            1 => (-p.y, p.x),
            2 => (-p.x, -p.y),
            _ => (p.y, -p.x),
        };
        let (x, y) = match self.flip {
            Flip::None => (x, y),
            Flip::X => (-x, y),
            Flip::Y => (x, -y),
        };
        Point3::new(x, y, p.z)
    }

    pub fn invert(&self, q: &Point3) -> Point3 {
        let (x, y) = match self.flip {
            Flip::None => (q.x, q.y),
            Flip::X => (-q.x, q.y),
            Flip::Y => (q.x, -q.y),
        };
        let (x, y) = match self.quarter_turns % 4 {
            0 => (x, y),
            1 => (y, -x),
            2 => (-x, -y),
            _ => (-y, x),
        };
        Point3::new(x, y, q.z)
    }

    /// The 2×2 integer matrix acting on (x, y), row-major.
    pub fn matrix(&self) -> [i8; 4] {
        let e1 = self.apply(&Point3::new(1.0, 0.0, 0.0));
        let e2 = self.apply(&Point3::new(0.0, 1.0, 0.0));
        [e1.x as i8, e2.x as i8, e1.y as i8, e2.y as i8]
    }

    pub fn apply_cloud(&self, cloud: &PointCloud) -> PointCloud {
        let mut out = cloud.clone();
        out.points = cloud.points.iter().map(|p| self.apply(p)).collect();
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenePair {
    pub scene_id: String,
    pub seed_path: String,
    pub world_center: Point3,
    pub complete: PointCloud,
    pub gapped: PointCloud,
    pub transform: NormTransform,
    pub augmentation: Option<Augmentation>,
}

impl ScenePair {
    /// Maps a cloud in this sample's (possibly augmented) normalized frame
    /// back to world coordinates.
    pub fn to_world(&self, cloud: &PointCloud) -> PointCloud {
        let aug = self.augmentation.unwrap_or(Augmentation::IDENTITY);
        let mut out = PointCloud::new(
            cloud
                .points
                .iter()
                .map(|p| self.transform.inverse(&aug.invert(p)))
                .collect(),
        );
        out.frame = Frame::World;
        out
    }

    pub fn augmented(&self, aug: Augmentation) -> ScenePair {
        let base = self.augmentation.unwrap_or(Augmentation::IDENTITY);
        assert_eq!(base, Augmentation::IDENTITY, "pair is already augmented");
        ScenePair {
            complete: aug.apply_cloud(&self.complete),
            gapped: aug.apply_cloud(&self.gapped),
            augmentation: Some(aug),
            ..self.clone()
        }
    }
}

pub fn augment(pair: &ScenePair, rng: &mut SeededRng) -> ScenePair {
    pair.augmented(Augmentation::sample(rng))
}

/// Subsamples in the world frame, then normalizes. The z reference comes
/// from the full complete crop.
pub fn build_sample(raw: &ScenePairRaw, scene_id: &str, cfg: &NormConfig, rng: &SeededRng) -> Result<ScenePair> {
    let t = scene_transform(&raw.complete, &raw.center, cfg)?;
    let c = subsample(&raw.complete, cfg.complete_points, &mut rng.derive("complete"))?;
    let g = subsample(&raw.gapped, cfg.gap_points, &mut rng.derive("gap"))?;
    let (complete, gapped) = normalize_pair(&c, &g, &t)?;
    Ok(ScenePair {
        scene_id: scene_id.to_string(),
        seed_path: rng.path_string(),
        world_center: raw.center,
        complete,
        gapped,
        transform: t,
        augmentation: None,
    })
}

/// Builds every sample in parallel; rejected scenes come back as errors in
/// their slot.
pub fn build_samples(raws: &[(String, ScenePairRaw)], cfg: &NormConfig, augment_samples: bool, root: &SeededRng) -> Vec<Result<ScenePair>> {
    raws.par_iter()
        .map(|(id, raw)| {
            let rng = root.derive(id);
            let pair = build_sample(raw, id, cfg, &rng)?;
            Ok(if augment_samples {
                augment(&pair, &mut rng.derive("augment"))
            } else {
                pair
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::dist2;

    fn grid_cloud(n: usize) -> PointCloud {
        PointCloud::new((0..n).map(|i| Point3::new(i as f64, (i % 7) as f64, 0.0)).collect())
    }

    #[test]
    fn subsample_counts_and_membership() {
        let c = grid_cloud(30_000);
        let s = subsample(&c, COMPLETE_POINTS, &mut SeededRng::new(1)).unwrap();
        assert_eq!(s.len(), COMPLETE_POINTS);
        let mut xs: Vec<i64> = s.points.iter().map(|p| p.x as i64).collect();
        xs.dedup();
        assert_eq!(xs.len(), COMPLETE_POINTS);
        assert!(s.points.iter().all(|p| p.x < 30_000.0 && p.y == (p.x as usize % 7) as f64));
        assert_eq!(s, subsample(&c, COMPLETE_POINTS, &mut SeededRng::new(1)).unwrap());
        assert_eq!(subsample(&c, 30_000, &mut SeededRng::new(2)).unwrap(), c);
        assert!(matches!(subsample(&c, 30_001, &mut SeededRng::new(2)), Err(Error::InsufficientPoints { .. })));
    }

    fn transform() -> NormTransform {
        NormTransform { cx: 10.0, cy: -3.0, z_ref: 1.5, scale: 4.0, z_scale: 3.0 }
    }

    #[test]
    fn map_arithmetic() {
        let t = transform();
        assert_eq!(t.forward(&Point3::new(14.0, 1.0, 1.5)), Point3::new(1.0, 1.0, 0.0));
        assert_eq!(t.forward(&Point3::new(10.0, -3.0, 2.5)).z, 0.75);
        let p = Point3::new(12.345678, -6.54321, 0.123);
        assert!((t.inverse(&t.forward(&p)) - p).norm() < 1e-12);
    }

    #[test]
    fn out_of_cube_is_an_error() {
        let t = transform();
        let ok = PointCloud::new(vec![Point3::new(12.0, -3.0, 1.5)]);
        let bad = PointCloud::new(vec![Point3::new(10.0, -3.0, 4.0)]);
        assert!(normalize_pair(&ok, &ok, &t).is_ok());
        assert!(matches!(normalize_pair(&ok, &bad, &t), Err(Error::OutsideCube { .. })));
    }

    #[test]
    fn rotation_arithmetic() {
        let a = Augmentation { quarter_turns: 2, flip: Flip::None };
        assert_eq!(a.apply(&Point3::new(0.5, -0.25, 0.3)), Point3::new(-0.5, 0.25, 0.3));
        let p = Point3::new(0.3, 0.7, -0.2);
        assert_eq!(Augmentation::IDENTITY.apply(&p), p);
    }

    #[test]
    fn augmentations_form_the_dihedral_group() {
        let mut mats = std::collections::BTreeSet::new();
        for q in 0..4 {
            for f in [Flip::None, Flip::X, Flip::Y] {
                let a = Augmentation { quarter_turns: q, flip: f };
                mats.insert(a.matrix());
                let p = Point3::new(0.1, -0.7, 0.4);
                assert_eq!(a.invert(&a.apply(&p)), p);
            }
        }
        assert_eq!(mats.len(), 8);
    }

    #[test]
    fn augmentation_preserves_distances() {
        let mut rng = SeededRng::new(3);
        let pts: Vec<Point3> = (0..50)
            .map(|_| Point3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        for _ in 0..20 {
            let a = Augmentation::sample(&mut rng);
            for i in 0..pts.len() {
                for j in 0..pts.len() {
                    assert_eq!(dist2(&pts[i], &pts[j]), dist2(&a.apply(&pts[i]), &a.apply(&pts[j])));
                }
            }
        }
    }

    #[test]
    fn to_world_undoes_everything() {
        let t = transform();
        let world = PointCloud::new(vec![Point3::new(11.0, -2.0, 1.9), Point3::new(9.0, -4.5, 1.2)]);
        let (c, g) = normalize_pair(&world, &world, &t).unwrap();
        let pair = ScenePair {
            scene_id: "scene0000".into(),
            seed_path: String::new(),
            world_center: Point3::new(10.0, -3.0, 0.0),
            complete: c,
            gapped: g,
            transform: t,
            augmentation: None,
        };
        let aug = pair.augmented(Augmentation { quarter_turns: 3, flip: Flip::Y });
        let back = aug.to_world(&aug.complete);
        for (a, b) in back.points.iter().zip(&world.points) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
