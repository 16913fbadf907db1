use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Augmentation, DatasetManifest, NormTransform, ScenePair};
use crate::digest::sha256_file;
use crate::error::{Error, Result};
use crate::geom::Point3;
use crate::ply::{read_ply, write_ply, WriteOptions};
use crate::raycast::{RawSceneMeta, ScenePairRaw};

const MANIFEST: &str = "manifest.json";

fn paths(dir: &Path, id: &str) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(format!("{id}_complete.ply")),
        dir.join(format!("{id}_gap.ply")),
        dir.join(format!("{id}_meta.json")),
    )
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn meta_ids(dir: &Path) -> Result<BTreeSet<String>> {
    let mut ids = BTreeSet::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix("_meta.json") {
            ids.insert(id.to_string());
        }
    }
    Ok(ids)
}

/// Writes a world-frame scene pair (with heads) and its metadata.
pub fn write_raw_scene(dir: impl AsRef<Path>, scene_id: &str, pair: &ScenePairRaw, seed_path: &str) -> Result<RawSceneMeta> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let (c, g, m) = paths(dir, scene_id);
    write_ply(&c, &pair.complete, WriteOptions::default())?;
    write_ply(&g, &pair.gapped, WriteOptions::default())?;
    let meta = pair.meta(scene_id, seed_path);
    write_json(&m, &meta)?;
    Ok(meta)
}

#[derive(Debug, Clone)]
pub struct RawScene {
    pub meta: RawSceneMeta,
    pub pair: ScenePairRaw,
}

/// Loads every raw scene in `dir`, ordered by id.
pub fn read_raw_scenes(dir: impl AsRef<Path>) -> Result<Vec<RawScene>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for id in meta_ids(dir)? {
        let (c, g, m) = paths(dir, &id);
        let meta: RawSceneMeta = serde_json::from_str(&fs::read_to_string(&m)?)?;
        let complete = read_ply(&c).map_err(|e| Error::Corrupt(format!("{id}: complete cloud: {e}")))?;
        let gapped = read_ply(&g).map_err(|e| Error::Corrupt(format!("{id}: gap cloud: {e}")))?;
        if complete.len() != meta.complete_points || gapped.len() != meta.gap_points {
            return Err(Error::Corrupt(format!("{id}: point counts disagree with metadata")));
        }
        let pose = meta.pose.to_pose()?;
        out.push(RawScene {
            pair: ScenePairRaw {
                removed: meta.removed,
                flagged: meta.flagged,
                center: Point3::from(meta.center),
                pose,
                complete,
                gapped,
            },
            meta,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneMeta {
    pub scene_id: String,
    pub seed_path: String,
    pub world_center: [f64; 3],
    pub transform: NormTransform,
    pub augmentation: Option<Augmentation>,
    pub complete_points: usize,
    pub gap_points: usize,
    pub complete_sha256: String,
    pub gap_sha256: String,
}

/// Writes normalized pairs (float32 on disk), per-scene metadata with
/// checksums, and the manifest.
pub fn write_dataset(pairs: &[ScenePair], manifest: &DatasetManifest, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let listed: BTreeSet<&String> = manifest.all_ids().collect();
    let given: BTreeSet<&String> = pairs.iter().map(|p| &p.scene_id).collect();
    if listed != given || given.len() != pairs.len() {
        return Err(Error::invalid("manifest scene ids do not match the pairs being written"));
    }
    fs::create_dir_all(dir)?;
    for pair in pairs {
        let (c, g, m) = paths(dir, &pair.scene_id);
        write_ply(&c, &pair.complete, WriteOptions::default())?;
        write_ply(&g, &pair.gapped, WriteOptions::default())?;
        let meta = SceneMeta {
            scene_id: pair.scene_id.clone(),
            seed_path: pair.seed_path.clone(),
            world_center: [pair.world_center.x, pair.world_center.y, pair.world_center.z],
            transform: pair.transform,
            augmentation: pair.augmentation,
            complete_points: pair.complete.len(),
            gap_points: pair.gapped.len(),
            complete_sha256: sha256_file(&c)?,
            gap_sha256: sha256_file(&g)?,
        };
        write_json(&m, &meta)?;
    }
    write_json(&dir.join(MANIFEST), manifest)
}

/// Reads and verifies a dataset directory.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<(DatasetManifest, Vec<ScenePair>)> {
    let dir = dir.as_ref();
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?;
    let listed: BTreeSet<String> = manifest.all_ids().cloned().collect();
    let counts = manifest.counts;
    if counts.train != manifest.train.len() || counts.test != manifest.test.len() || counts.val != manifest.val.len() {
        return Err(Error::Corrupt("manifest counts disagree with its scene lists".into()));
    }
    if listed.len() != counts.train + counts.test + counts.val {
        return Err(Error::Corrupt("manifest lists a scene in more than one split".into()));
    }
    let on_disk = meta_ids(dir)?;
    if on_disk.len() != listed.len() {
        return Err(Error::Corrupt(format!(
            "manifest lists {} scenes but {} metadata files exist",
            listed.len(),
            on_disk.len()
        )));
    }
    let mut pairs = Vec::with_capacity(listed.len());
    for id in manifest.all_ids() {
        let (c, g, m) = paths(dir, id);
        if !m.exists() {
            return Err(Error::Corrupt(format!("metadata for scene {id} is missing")));
        }
        let meta: SceneMeta = serde_json::from_str(&fs::read_to_string(&m)?)?;
        for (path, want) in [(&c, &meta.complete_sha256), (&g, &meta.gap_sha256)] {
            let have = sha256_file(path).map_err(|e| Error::Corrupt(format!("scene {id}: {}: {e}", path.display())))?;
            if &have != want {
                return Err(Error::Corrupt(format!("scene {id}: checksum mismatch for {}", path.display())));
            }
        }
        let complete = read_ply(&c)?;
        let gapped = read_ply(&g)?;
        if complete.len() != meta.complete_points || gapped.len() != meta.gap_points {
            return Err(Error::Corrupt(format!("scene {id}: point counts disagree with metadata")));
        }
        pairs.push(ScenePair {
            scene_id: meta.scene_id,
            seed_path: meta.seed_path,
            world_center: Point3::from(meta.world_center),
            complete,
            gapped,
            transform: meta.transform,
            augmentation: meta.augmentation,
        });
    }
    Ok((manifest, pairs))
}

#[cfg(test)]
mod tests {
    use super::super::{split_geographic, Flip, SplitSpec};
    use super::*;
    use crate::cloud::PointCloud;
    use crate::geom::Point2;
    use crate::rng::SeededRng;
    use rand::Rng;

    fn pairs(n: usize) -> Vec<ScenePair> {
        let mut rng = SeededRng::new(5);
        (0..n)
            .map(|i| {
                let mut pts = || -> PointCloud {
                    PointCloud::normalized(
                        (0..200)
                            .map(|_| Point3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                            .collect(),
                    )
                };
                let (complete, gapped) = (pts(), pts());
                ScenePair {
                    scene_id: format!("scene{i:04}"),
                    seed_path: format!("5/scene{i:04}"),
                    world_center: Point3::new(i as f64 * 10.0, 0.0, 0.0),
                    complete,
                    gapped,
                    transform: NormTransform { cx: i as f64 * 10.0, cy: 0.0, z_ref: 1.0, scale: 4.0, z_scale: 3.0 },
                    augmentation: (i % 2 == 0).then_some(Augmentation { quarter_turns: 1, flip: Flip::X }),
                }
            })
            .collect()
    }

    fn manifest(p: &[ScenePair]) -> DatasetManifest {
        let scenes: Vec<(String, Point2)> = p.iter().map(|s| (s.scene_id.clone(), Point2::new(s.world_center.x, 0.0))).collect();
        split_geographic(&scenes, &SplitSpec { regions: vec![], val_size: 1 }, 3).unwrap()
    }

    #[test]
    fn roundtrip_is_float32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = pairs(5);
        let m = manifest(&p);
        write_dataset(&p, &m, dir.path()).unwrap();
        let (m2, back) = read_dataset(dir.path()).unwrap();
        assert_eq!(m, m2);
        for b in &back {
            let a = p.iter().find(|x| x.scene_id == b.scene_id).unwrap();
            assert_eq!(a.transform, b.transform);
            assert_eq!(a.augmentation, b.augmentation);
            for (x, y) in a.complete.points.iter().zip(&b.complete.points) {
                for k in 0..3 {
                    assert_eq!((x[k] as f32).to_bits(), (y[k] as f32).to_bits());
                }
            }
        }
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = pairs(3);
        write_dataset(&p, &manifest(&p), dir.path()).unwrap();
        let f = dir.path().join("scene0001_gap.ply");
        let mut bytes = fs::read(&f).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        fs::write(&f, bytes).unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Corrupt(ref s) if s.contains("checksum")), "{err}");
    }

    #[test]
    fn missing_meta_names_the_scene() {
        let dir = tempfile::tempdir().unwrap();
        let p = pairs(3);
        write_dataset(&p, &manifest(&p), dir.path()).unwrap();
        fs::remove_file(dir.path().join("scene0002_meta.json")).unwrap();
        // count check fires first; restore the count with an unrelated file
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Corrupt(_)));
        fs::write(dir.path().join("stray_meta.json"), "{}").unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("scene0002"), "{err}");
    }

    #[test]
    fn manifest_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = pairs(3);
        let mut m = manifest(&p);
        write_dataset(&p, &m, dir.path()).unwrap();
        m.counts.train += 1;
        fs::write(dir.path().join(MANIFEST), serde_json::to_string(&m).unwrap()).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Corrupt(_))));
    }
}
