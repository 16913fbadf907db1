use crate::error::{Error, Result};

/// Cubic feature volume: `r`³ voxels × `c` channels, channels innermost,
/// voxels ordered x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    r: usize,
    c: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(r: usize, c: usize) -> FeatureMap {
        FeatureMap {
            r,
            c,
            data: vec![0.0; r * r * r * c],
        }
    }

    pub fn from_data(r: usize, c: usize, data: Vec<f64>) -> Result<FeatureMap> {
        if data.len() != r * r * r * c {
            return Err(Error::shape("feature map", format!("{} values for {r}³×{c}", data.len())));
        }
        Ok(FeatureMap { r, c, data })
    }

    pub fn resolution(&self) -> usize {
        self.r
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn voxels(&self) -> usize {
        self.r * self.r * self.r
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn voxel(&self, v: usize) -> &[f64] {
        &self.data[v * self.c..(v + 1) * self.c]
    }

    pub fn voxel_mut(&mut self, v: usize) -> &mut [f64] {
        &mut self.data[v * self.c..(v + 1) * self.c]
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.r + y) * self.r + x
    }

    /// Element-wise sum; shapes must agree.
    pub fn add_assign(&mut self, other: &FeatureMap, layer: &str) -> Result<()> {
        if self.r != other.r || self.c != other.c {
            return Err(Error::shape(
                layer,
                format!("cannot add {}³×{} to {}³×{}", other.r, other.c, self.r, self.c),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.r, self.c)
    }
}
