//! Merging generated completion points into the measured scene.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{ExtraProperty, PointCloud, ScalarKind};
use crate::error::{Error, Result};
use crate::kdtree::KdIndex;

pub const PROVENANCE: &str = "provenance";
pub const MEASURED: f64 = 0.0;
pub const GENERATED: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeConfig {
    /// Generated points closer than this to any input point are dropped.
    pub threshold: f64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig { threshold: 0.08 }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::invalid(format!("merge threshold must be positive, got {}", self.threshold)));
        }
        Ok(())
    }
}

fn provenance_of(cloud: &PointCloud) -> Vec<f64> {
    match cloud.extra(PROVENANCE) {
        Some(e) => e.values.clone(),
        None => vec![MEASURED; cloud.len()],
    }
}

/// Input points (verbatim, in order) followed by every generated point at
/// least `threshold` away from all of them. A `provenance` property marks
/// each point measured (0) or generated (1).
///
/// An input that already carries provenance keeps it, so merging a merged
/// cloud again with the same generated points changes nothing.
pub fn merge_completion(input: &PointCloud, generated: &PointCloud, cfg: &MergeConfig) -> Result<PointCloud> {
    cfg.validate()?;
    if !generated.is_empty() && input.frame != generated.frame {
        return Err(Error::FrameMismatch(format!(
            "input is {}, generated is {}",
            input.frame.as_str(),
            generated.frame.as_str()
        )));
    }
    let keep: Vec<usize> = if input.is_empty() {
        (0..generated.len()).collect()
    } else if generated.is_empty() {
        Vec::new()
    } else {
        let index = KdIndex::build(&input.points)?;
        let t2 = cfg.threshold * cfg.threshold;
        let far: Vec<bool> = generated.points.par_iter().map(|g| index.nearest_sq(g).1 >= t2).collect();
        far.iter().enumerate().filter(|(_, &f)| f).map(|(i, _)| i).collect()
    };

    let mut out = input.clone();
    let mut prov = provenance_of(input);
    out.extras.retain(|e| e.name != PROVENANCE);
    // attributes are only kept when every appended point can supply them
    let added = generated.select(&keep);
    out.points.extend_from_slice(&added.points);
    prov.extend(std::iter::repeat(GENERATED).take(keep.len()));
    if !keep.is_empty() {
        out.heads = None;
        out.normals = match (out.normals.take(), added.normals) {
            (Some(mut a), Some(b)) => {
                a.extend(b);
                Some(a)
            }
            _ => None,
        };
        out.reflectance = match (out.reflectance.take(), added.reflectance) {
            (Some(mut a), Some(b)) => {
                a.extend(b);
                Some(a)
            }
            _ => None,
        };
        out.extras.clear();
    }
    out.extras.push(ExtraProperty {
        name: PROVENANCE.into(),
        kind: ScalarKind::U8,
        values: prov,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point3;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect())
    }

    #[test]
    fn full_overlap_keeps_input() {
        let input = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let gen = cloud(&[[0.05, 0.0, 0.0], [1.0, 0.07, 0.0]]);
        let out = merge_completion(&input, &gen, &MergeConfig::default()).unwrap();
        assert_eq!(out.points, input.points);
        assert_eq!(out.extra(PROVENANCE).unwrap().values, vec![0.0, 0.0]);
    }

    #[test]
    fn far_point_is_appended() {
        let input = cloud(&[[0.0, 0.0, 0.0]]);
        let gen = cloud(&[[0.1, 0.0, 0.0]]);
        let out = merge_completion(&input, &gen, &MergeConfig::default()).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out.extra(PROVENANCE).unwrap().values, vec![0.0, 1.0]);
    }

    #[test]
    fn exact_threshold_is_kept() {
        let input = cloud(&[[0.0, 0.0, 0.0]]);
        let gen = cloud(&[[0.5, 0.0, 0.0]]);
        let out = merge_completion(&input, &gen, &MergeConfig { threshold: 0.5 }).unwrap();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn empty_generated_and_frames() {
        let input = cloud(&[[0.0, 0.0, 0.0]]);
        let out = merge_completion(&input, &PointCloud::default(), &MergeConfig::default()).unwrap();
        assert_eq!(out.points, input.points);
        let gen = PointCloud::normalized(vec![Point3::new(1.0, 0.0, 0.0)]);
        assert!(matches!(
            merge_completion(&input, &gen, &MergeConfig::default()),
            Err(Error::FrameMismatch(_))
        ));
        assert!(merge_completion(&input, &input, &MergeConfig { threshold: 0.0 }).is_err());
    }

    #[test]
    fn idempotent() {
        let input = cloud(&[[0.0, 0.0, 0.0], [0.3, 0.0, 0.0]]);
        let gen = cloud(&[[0.0, 0.5, 0.0], [0.31, 0.0, 0.0], [2.0, 2.0, 2.0]]);
        let cfg = MergeConfig::default();
        let once = merge_completion(&input, &gen, &cfg).unwrap();
        assert_eq!(merge_completion(&once, &gen, &cfg).unwrap(), once);
    }
}
