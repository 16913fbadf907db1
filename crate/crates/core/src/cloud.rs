use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{is_finite, Aabb, Point3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    #[default]
    World,
    Normalized,
}

impl Frame {
    pub fn as_str(self) -> &'static str {
        match self {
            Frame::World => "world",
            Frame::Normalized => "normalized",
        }
    }

    pub fn parse(s: &str) -> Option<Frame> {
        match s {
            "world" => Some(Frame::World),
            "normalized" => Some(Frame::Normalized),
            _ => None,
        }
    }
}

/// Scalar type of a per-point property as stored on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarKind {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarKind {
    pub fn size(self) -> usize {
        match self {
            ScalarKind::I8 | ScalarKind::U8 => 1,
            ScalarKind::I16 | ScalarKind::U16 => 2,
            ScalarKind::I32 | ScalarKind::U32 | ScalarKind::F32 => 4,
            ScalarKind::F64 => 8,
        }
    }
}

/// A per-point property this crate has no dedicated field for. Kept so it
/// survives a read/write cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtraProperty {
    pub name: String,
    pub kind: ScalarKind,
    pub values: Vec<f64>,
}

/// Unordered point set with optional per-point sensor heads and normals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub heads: Option<Vec<Point3>>,
    pub normals: Option<Vec<Vec3>>,
    pub reflectance: Option<Vec<f64>>,
    pub extras: Vec<ExtraProperty>,
    pub frame: Frame,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        PointCloud {
            points,
            ..Default::default()
        }
    }

    pub fn with_heads(points: Vec<Point3>, heads: Vec<Point3>) -> Self {
        PointCloud {
            points,
            heads: Some(heads),
            ..Default::default()
        }
    }

    pub fn normalized(points: Vec<Point3>) -> Self {
        PointCloud {
            points,
            frame: Frame::Normalized,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(&self.points)
    }

    pub fn extra(&self, name: &str) -> Option<&ExtraProperty> {
        self.extras.iter().find(|e| e.name == name)
    }

    /// Checks the structural invariants: finite coordinates, optional
    /// arrays aligned with `points`, unit normals.
    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        if let Some(i) = self.points.iter().position(|p| !is_finite(p)) {
            return Err(Error::invalid(format!("point {i} is not finite")));
        }
        if let Some(h) = &self.heads {
            if h.len() != n {
                return Err(Error::invalid(format!("heads: {} entries for {n} points", h.len())));
            }
        }
        if let Some(normals) = &self.normals {
            if normals.len() != n {
                return Err(Error::invalid(format!(
                    "normals: {} entries for {n} points",
                    normals.len()
                )));
            }
            if let Some(i) = normals.iter().position(|v| (v.norm() - 1.0).abs() > 1e-6) {
                return Err(Error::invalid(format!("normal {i} is not unit length")));
            }
        }
        if let Some(r) = &self.reflectance {
            if r.len() != n {
                return Err(Error::invalid("reflectance length mismatch"));
            }
        }
        for e in &self.extras {
            if e.values.len() != n {
                return Err(Error::invalid(format!("property {} length mismatch", e.name)));
            }
        }
        Ok(())
    }

    /// New cloud holding the given points (by index) with all per-point
    /// attributes carried along.
    pub fn select(&self, ids: &[usize]) -> PointCloud {
        PointCloud {
            points: ids.iter().map(|&i| self.points[i]).collect(),
            heads: self.heads.as_ref().map(|h| ids.iter().map(|&i| h[i]).collect()),
            normals: self.normals.as_ref().map(|v| ids.iter().map(|&i| v[i]).collect()),
            reflectance: self
                .reflectance
                .as_ref()
                .map(|v| ids.iter().map(|&i| v[i]).collect()),
            extras: self
                .extras
                .iter()
                .map(|e| ExtraProperty {
                    name: e.name.clone(),
                    kind: e.kind,
                    values: ids.iter().map(|&i| e.values[i]).collect(),
                })
                .collect(),
            frame: self.frame,
        }
    }

    pub fn filter(&self, mut keep: impl FnMut(usize) -> bool) -> PointCloud {
        let ids: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        self.select(&ids)
    }

    /// Appends `other`; attributes present on only one side are dropped.
    pub fn concat(&self, other: &PointCloud) -> Result<PointCloud> {
        if self.frame != other.frame {
            return Err(Error::FrameMismatch(format!(
                "{} vs {}",
                self.frame.as_str(),
                other.frame.as_str()
            )));
        }
        fn join<T: Clone>(a: &Option<Vec<T>>, b: &Option<Vec<T>>) -> Option<Vec<T>> {
            match (a, b) {
                (Some(a), Some(b)) => Some(a.iter().chain(b).cloned().collect()),
                _ => None,
            }
        }
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        Ok(PointCloud {
            points,
            heads: join(&self.heads, &other.heads),
            normals: join(&self.normals, &other.normals),
            reflectance: join(&self.reflectance, &other.reflectance),
            extras: Vec::new(),
            frame: self.frame,
        })
    }

    /// Drops every optional attribute, keeping coordinates and frame.
    pub fn positions_only(&self) -> PointCloud {
        PointCloud {
            points: self.points.clone(),
            frame: self.frame,
            ..Default::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_catches_misaligned_heads() {
        let mut c = PointCloud::new(vec![Point3::origin(); 3]);
        assert!(c.validate().is_ok());
        c.heads = Some(vec![Point3::origin(); 2]);
        assert!(c.validate().is_err());
    }

    #[test]
    fn validate_catches_non_unit_normals() {
        let mut c = PointCloud::new(vec![Point3::origin()]);
        c.normals = Some(vec![Vec3::new(0.0, 0.0, 2.0)]);
        assert!(c.validate().is_err());
    }

    #[test]
    fn select_carries_attributes() {
        let pts: Vec<Point3> = (0..4).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let heads: Vec<Point3> = (0..4).map(|i| Point3::new(i as f64, 1.0, 0.0)).collect();
        let c = PointCloud::with_heads(pts, heads);
        let s = c.select(&[3, 1]);
        assert_eq!(s.points[0].x, 3.0);
        assert_eq!(s.heads.unwrap()[1], Point3::new(1.0, 1.0, 0.0));
    }

    #[test]
    fn concat_rejects_frame_mismatch() {
        let a = PointCloud::new(vec![Point3::origin()]);
        let b = PointCloud::normalized(vec![Point3::origin()]);
        assert!(matches!(a.concat(&b), Err(Error::FrameMismatch(_))));
    }
}
