use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point2, Vec2};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Shape {
    /// Convex polygon, either winding.
    Polygon { vertices: Vec<[f64; 2]> },
    /// Points with `normal · p < offset`.
    Halfplane { normal: [f64; 2], offset: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub split: Split,
    #[serde(flatten)]
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub regions: Vec<Region>,
    /// Cap on the validation set drawn from unassigned scenes.
    #[serde(default)]
    pub val_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
    pub val: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub split: SplitSpec,
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub val: Vec<String>,
    pub counts: SplitCounts,
}

impl DatasetManifest {
    pub fn all_ids(&self) -> impl Iterator<Item = &String> {
        self.train.iter().chain(&self.test).chain(&self.val)
    }

    pub fn split_of(&self, id: &str) -> Option<Split> {
        if self.train.iter().any(|s| s == id) {
            Some(Split::Train)
        } else if self.test.iter().any(|s| s == id) {
            Some(Split::Test)
        } else if self.val.iter().any(|s| s == id) {
            Some(Split::Val)
        } else {
            None
        }
    }
}

fn cross(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

fn polygon(vertices: &[[f64; 2]]) -> Result<Vec<Point2>> {
    if vertices.len() < 3 {
        return Err(Error::invalid("split polygon needs at least 3 vertices"));
    }
    let pts: Vec<Point2> = vertices.iter().map(|v| Point2::new(v[0], v[1])).collect();
    let n = pts.len();
    let mut sign = 0.0;
    for i in 0..n {
        let c = cross(pts[(i + 1) % n] - pts[i], pts[(i + 2) % n] - pts[(i + 1) % n]);
        if c != 0.0 {
            if sign != 0.0 && c.signum() != sign {
                return Err(Error::invalid("split polygon is not convex"));
            }
            sign = c.signum();
        }
    }
    if sign == 0.0 {
        return Err(Error::invalid("split polygon is degenerate"));
    }
    Ok(pts)
}

impl Shape {
    fn validate(&self) -> Result<()> {
        match self {
            Shape::Polygon { vertices } => polygon(vertices).map(|_| ()),
            Shape::Halfplane { normal, .. } => {
                if normal[0] == 0.0 && normal[1] == 0.0 {
                    Err(Error::invalid("halfplane normal is zero"))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Boundary-inclusive membership for polygons, strict for halfplanes.
    pub fn contains(&self, p: &Point2) -> bool {
        match self {
            Shape::Polygon { vertices } => {
                let Ok(pts) = polygon(vertices) else { return false };
                let n = pts.len();
                let (mut pos, mut neg) = (false, false);
                for i in 0..n {
                    let c = cross(pts[(i + 1) % n] - pts[i], p - pts[i]);
                    pos |= c > 0.0;
                    neg |= c < 0.0;
                }
                !(pos && neg)
            }
            Shape::Halfplane { normal, offset } => normal[0] * p.x + normal[1] * p.y < *offset,
        }
    }
}

/// Interval of `axis · v` over the polygon.
fn project(pts: &[Point2], axis: Vec2) -> (f64, f64) {
    pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let d = axis.dot(&p.coords);
        (lo.min(d), hi.max(d))
    })
}

/// True when the two regions share interior area.
fn overlaps(a: &Shape, b: &Shape) -> Result<bool> {
    Ok(match (a, b) {
        (Shape::Polygon { vertices: va }, Shape::Polygon { vertices: vb }) => {
            let (pa, pb) = (polygon(va)?, polygon(vb)?);
            let mut separated = false;
            for pts in [&pa, &pb] {
                let n = pts.len();
                for i in 0..n {
                    let e = pts[(i + 1) % n] - pts[i];
                    let axis = Vec2::new(-e.y, e.x);
                    let (a0, a1) = project(&pa, axis);
                    let (b0, b1) = project(&pb, axis);
                    if a1 <= b0 || b1 <= a0 {
                        separated = true;
                    }
                }
            }
            !separated
        }
        (Shape::Polygon { vertices }, Shape::Halfplane { normal, offset })
        | (Shape::Halfplane { normal, offset }, Shape::Polygon { vertices }) => {
            let pts = polygon(vertices)?;
            let (lo, _) = project(&pts, Vec2::new(normal[0], normal[1]));
            lo < *offset
        }
        (Shape::Halfplane { normal: na, offset: ca }, Shape::Halfplane { normal: nb, offset: cb }) => {
            let (a, b) = (Vec2::new(na[0], na[1]), Vec2::new(nb[0], nb[1]));
            let antiparallel = cross(a, b) == 0.0 && a.dot(&b) < 0.0;
            if !antiparallel {
                true
            } else {
                // {a·p < ca} ∩ {-λa·p < cb} with b = -λa
                let lambda = b.norm() / a.norm();
                -cb / lambda < *ca
            }
        }
    })
}

/// Assigns each scene by its world center. Scenes outside every region
/// form the validation pool (a seeded subset of at most `val_size`); the
/// rest of that pool goes to train.
pub fn split_geographic(scenes: &[(String, Point2)], spec: &SplitSpec, seed: u64) -> Result<DatasetManifest> {
    for r in &spec.regions {
        r.shape.validate()?;
    }
    for i in 0..spec.regions.len() {
        for j in i + 1..spec.regions.len() {
            if overlaps(&spec.regions[i].shape, &spec.regions[j].shape)? {
                return Err(Error::invalid(format!("split regions {i} and {j} overlap")));
            }
        }
    }
    let (mut train, mut test, mut val, mut pool) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (id, c) in scenes {
        match spec.regions.iter().find(|r| r.shape.contains(c)).map(|r| r.split) {
            Some(Split::Train) => train.push(id.clone()),
            Some(Split::Test) => test.push(id.clone()),
            Some(Split::Val) => val.push(id.clone()),
            None => pool.push(id.clone()),
        }
    }
    let take = spec.val_size.saturating_sub(val.len()).min(pool.len());
    let mut rng = SeededRng::new(seed).derive("val-pool");
    let mut chosen = index::sample(&mut rng, pool.len(), take).into_vec();
    chosen.sort_unstable();
    let mut is_val = vec![false; pool.len()];
    for &i in &chosen {
        is_val[i] = true;
    }
    for (i, id) in pool.into_iter().enumerate() {
        if is_val[i] {
            val.push(id);
        } else {
            train.push(id);
        }
    }
    let counts = SplitCounts {
        train: train.len(),
        test: test.len(),
        val: val.len(),
    };
    Ok(DatasetManifest {
        version: 1,
        seed,
        split: spec.clone(),
        train,
        test,
        val,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x0: f64, y0: f64, s: f64) -> Shape {
        Shape::Polygon {
            vertices: vec![[x0, y0], [x0 + s, y0], [x0 + s, y0 + s], [x0, y0 + s]],
        }
    }

    fn scenes(n: usize) -> Vec<(String, Point2)> {
        (0..n).map(|i| (format!("scene{i:04}"), Point2::new(i as f64, (i % 5) as f64))).collect()
    }

    #[test]
    fn all_in_train_polygon() {
        let spec = SplitSpec {
            regions: vec![Region { split: Split::Train, shape: square(-1.0, -1.0, 100.0) }],
            val_size: 0,
        };
        let m = split_geographic(&scenes(20), &spec, 1).unwrap();
        assert!(m.test.is_empty());
        assert_eq!(m.counts.train, 20);
    }

    #[test]
    fn halfplane_test_region() {
        let spec = SplitSpec {
            regions: vec![Region { split: Split::Test, shape: Shape::Halfplane { normal: [1.0, 0.0], offset: 7.0 } }],
            val_size: 2,
        };
        let s = scenes(20);
        let m = split_geographic(&s, &spec, 1).unwrap();
        for id in &m.train {
            let c = s.iter().find(|(i, _)| i == id).unwrap().1;
            assert!(c.x >= 7.0);
        }
        assert_eq!(m.counts, SplitCounts { train: 11, test: 7, val: 2 });
    }

    #[test]
    fn scaled_table_proportions() {
        let spec = SplitSpec {
            regions: vec![Region { split: Split::Test, shape: Shape::Halfplane { normal: [1.0, 0.0], offset: 24.5 } }],
            val_size: 3,
        };
        let m = split_geographic(&scenes(138), &spec, 7).unwrap();
        assert_eq!(m.counts, SplitCounts { train: 110, test: 25, val: 3 });
        let mut all: Vec<&String> = m.all_ids().collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 138);
        assert_eq!(m, split_geographic(&scenes(138), &spec, 7).unwrap());
    }

    #[test]
    fn overlap_detection() {
        assert!(overlaps(&square(0.0, 0.0, 2.0), &square(1.0, 1.0, 2.0)).unwrap());
        assert!(!overlaps(&square(0.0, 0.0, 2.0), &square(2.0, 0.0, 2.0)).unwrap());
        let hp = Shape::Halfplane { normal: [1.0, 0.0], offset: 1.0 };
        assert!(overlaps(&square(0.0, 0.0, 2.0), &hp).unwrap());
        assert!(!overlaps(&square(1.0, 0.0, 2.0), &hp).unwrap());
        let opposite = Shape::Halfplane { normal: [-2.0, 0.0], offset: -2.0 };
        assert!(!overlaps(&hp, &opposite).unwrap());
        let opposite_close = Shape::Halfplane { normal: [-2.0, 0.0], offset: -1.0 };
        assert!(overlaps(&hp, &opposite_close).unwrap());
        assert!(overlaps(&hp, &Shape::Halfplane { normal: [0.0, 1.0], offset: 0.0 }).unwrap());
        let spec = SplitSpec {
            regions: vec![
                Region { split: Split::Train, shape: square(0.0, 0.0, 2.0) },
                Region { split: Split::Test, shape: square(1.0, 1.0, 2.0) },
            ],
            val_size: 0,
        };
        assert!(split_geographic(&scenes(3), &spec, 0).is_err());
    }

    #[test]
    fn spec_json_roundtrip() {
        let json = r#"{"regions":[{"split":"test","type":"halfplane","normal":[1,0],"offset":5},
            {"split":"train","type":"polygon","vertices":[[5,0],[9,0],[9,9]]}],"val_size":3}"#;
        let spec: SplitSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.regions.len(), 2);
        let back: SplitSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(spec, back);
    }
}
