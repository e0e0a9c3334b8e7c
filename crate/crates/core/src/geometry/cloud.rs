use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Tolerance on the unit-sphere bound for normalized clouds.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// An ordered, non-empty set of 3D points with finite coordinates.
///
/// The cardinality is fixed at construction; there is no way to push or pop
/// points on an existing cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("point cloud must not be empty".into()));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidInput(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { points })
    }

    /// Builds a cloud from `[x0, y0, z0, x1, ...]`.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if !flat.len().is_multiple_of(3) {
            return Err(Error::InvalidInput(format!(
                "flat coordinate buffer of length {} is not a multiple of 3",
                flat.len()
            )));
        }
        Self::new(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }

    pub fn into_points(self) -> Vec<Vec3> {
        self.points
    }

    pub fn max_norm(&self) -> f64 {
        self.points
            .iter()
            .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn is_normalized(&self) -> bool {
        self.max_norm() <= 1.0 + NORM_TOLERANCE
    }

    /// Centre and scale factor that map this cloud into the unit sphere:
    /// bounding-box centre to the origin, farthest point to radius 1.
    pub fn normalization(&self) -> (Vec3, f64) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.points {
            for d in 0..3 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, (lo[2] + hi[2]) / 2.0];
        let radius = self
            .points
            .iter()
            .map(|p| super::dist(p, &center))
            .fold(0.0, f64::max);
        let scale = if radius > 0.0 { 1.0 / radius } else { 1.0 };
        (center, scale)
    }

    pub fn transformed(&self, center: &Vec3, scale: f64) -> Self {
        let points = self
            .points
            .iter()
            .map(|p| {
                [(p[0] - center[0]) * scale, (p[1] - center[1]) * scale, (p[2] - center[2]) * scale]
            })
            .collect();
        Self { points }
    }

    pub fn normalized(&self) -> Self {
        let (center, scale) = self.normalization();
        self.transformed(&center, scale)
    }

    pub fn translated(&self, offset: &Vec3) -> Self {
        let points =
            self.points.iter().map(|p| [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]]).collect();
        Self { points }
    }

    /// Points at the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.points[i]).collect())
    }

    pub fn concat(clouds: &[&PointCloud]) -> Result<Self> {
        Self::new(clouds.iter().flat_map(|c| c.points.iter().copied()).collect())
    }
}
