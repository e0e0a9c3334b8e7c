use chull::ConvexHullWrapper;
use rand_distr::{Distribution, StandardNormal};

use super::resample;
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};
use crate::rng::Rng;

/// Camera placement for a virtual scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPose {
    /// Unit direction from the object centre towards the camera.
    view: Vec3,
    /// Unit camera up vector, orthogonal to `view`.
    up: Vec3,
}

fn norm(v: &Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn unit(v: Vec3) -> Vec3 {
    let n = norm(&v);
    [v[0] / n, v[1] / n, v[2] / n]
}

impl ScanPose {
    pub fn new(view: Vec3, up: Vec3) -> Result<Self> {
        if (norm(&view) - 1.0).abs() > 1e-9 || (norm(&up) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput("scan pose vectors must be unit length".into()));
        }
        if dot(&view, &up).abs() > 1e-9 {
            return Err(Error::InvalidInput("scan up vector must be orthogonal to the view".into()));
        }
        Ok(Self { view, up })
    }

    /// Looks from direction `view` (normalized here); the up vector is the
    /// world axis least aligned with it, orthogonalized.
    pub fn looking_from(view: Vec3) -> Result<Self> {
        if !(norm(&view) > 0.0) {
            return Err(Error::InvalidInput("zero view direction".into()));
        }
        let v = unit(view);
        let axis = (0..3).min_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).expect("three axes");
        let mut e = [0.0; 3];
        e[axis] = 1.0;
        let d = dot(&e, &v);
        let up = unit([e[0] - d * v[0], e[1] - d * v[1], e[2] - d * v[2]]);
        Self::new(v, up)
    }

    /// Uniformly random direction on the sphere.
    pub fn random(rng: &mut Rng) -> Result<Self> {
        loop {
            let v: Vec3 = [
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
            ];
            if norm(&v) > 1e-6 {
                return Self::looking_from(v);
            }
        }
    }

    pub fn view(&self) -> Vec3 {
        self.view
    }

    pub fn up(&self) -> Vec3 {
        self.up
    }
}

/// Hidden-point-removal parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanConfig {
    /// Camera distance from the origin, in normalized units.
    pub camera_distance: f64,
    /// Inversion sphere radius as a multiple of the cloud's bounding radius.
    pub radius_factor: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self { camera_distance: 2.5, radius_factor: 100.0 }
    }
}

/// Six axis views for small counts; otherwise a Fibonacci lattice of `count`
/// directions.
pub fn uniform_views(count: usize) -> Vec<ScanPose> {
    if count == 6 {
        let axes = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, -1.0]];
        return axes.into_iter().map(|a| ScanPose::looking_from(a).expect("unit axis")).collect();
    }
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - y * y).sqrt();
            let t = golden * i as f64;
            ScanPose::looking_from([r * t.cos(), y, r * t.sin()]).expect("non-zero direction")
        })
        .collect()
}

/// Indices of the points of `cloud` visible from `pose`, ascending.
///
/// Points are spherically flipped about the camera; the visible ones are
/// those on the convex hull of the flipped set plus the camera itself.
pub fn visible_indices(cloud: &PointCloud, pose: &ScanPose, cfg: &ScanConfig) -> Vec<usize> {
    let eye = pose.view.map(|c| c * cfg.camera_distance);
    let rel: Vec<Vec3> = cloud.points().iter().map(|p| [p[0] - eye[0], p[1] - eye[1], p[2] - eye[2]]).collect();
    let far = rel.iter().map(norm).fold(0.0, f64::max);
    if cloud.len() < 4 || far == 0.0 {
        return (0..cloud.len()).collect();
    }
    let bound = cloud.max_norm().max(1e-6);
    let radius = (cfg.radius_factor * bound).max(2.0 * far);
    let mut flipped: Vec<Vec<f64>> = rel
        .iter()
        .map(|q| {
            let n = norm(q);
            if n == 0.0 {
                return q.to_vec();
            }
            let s = 1.0 + 2.0 * (radius - n) / n;
            q.iter().map(|c| c * s).collect()
        })
        .collect();
    flipped.push(vec![0.0; 3]);
    let Ok(hull) = ConvexHullWrapper::try_new(&flipped, None) else {
        // degenerate configurations (all points coplanar with the camera)
        return (0..cloud.len()).collect();
    };
    let (vertices, _) = hull.vertices_indices();
    // Hull vertices come back in input order with coordinates round-tripped
    // through a fixed-point representation; match them with a forward scan.
    let tol = 1e-9 * radius.max(1.0);
    let mut visible = Vec::with_capacity(vertices.len());
    let mut cursor = 0;
    for v in &vertices {
        while cursor < cloud.len() {
            let f = &flipped[cursor];
            cursor += 1;
            if (0..3).all(|d| (f[d] - v[d]).abs() <= tol) {
                visible.push(cursor - 1);
                break;
            }
        }
    }
    // exact duplicates of a visible point are visible too
    let mut mark = vec![false; cloud.len()];
    visible.iter().for_each(|&i| mark[i] = true);
    let pts = cloud.points();
    for &i in &visible {
        for (j, q) in pts.iter().enumerate() {
            if !mark[j] && *q == pts[i] {
                mark[j] = true;
            }
        }
    }
    (0..cloud.len()).filter(|&i| mark[i]).collect()
}

/// Single-view scan of `cloud` resampled to `points`.
pub fn virtual_scan(cloud: &PointCloud, pose: &ScanPose, points: usize, cfg: &ScanConfig, rng: &mut Rng) -> Result<PointCloud> {
    let idx = visible_indices(cloud, pose, cfg);
    if idx.is_empty() {
        return Err(Error::DegenerateScan);
    }
    resample(&cloud.select(&idx)?, points, rng)
}

/// Union of the visible sets over `views`, resampled to `points`.
pub fn scan_union(cloud: &PointCloud, views: &[ScanPose], points: usize, cfg: &ScanConfig, rng: &mut Rng) -> Result<PointCloud> {
    let mut mark = vec![false; cloud.len()];
    for pose in views {
        for i in visible_indices(cloud, pose, cfg) {
            mark[i] = true;
        }
    }
    let idx: Vec<usize> = (0..cloud.len()).filter(|&i| mark[i]).collect();
    if idx.is_empty() {
        return Err(Error::DegenerateScan);
    }
    resample(&cloud.select(&idx)?, points, rng)
}

#[cfg(test)]
fn sphere(n: usize, rng: &mut Rng) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| {
                let v: Vec3 = [StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng)];
                unit(v)
            })
            .collect(),
    )
    .unwrap()
}
