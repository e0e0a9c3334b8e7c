use super::{dist2, KdTree, PointCloud, Vec3};

/// Target sizes up to this use a linear scan instead of a k-d tree.
pub const BRUTE_FORCE_LIMIT: usize = 64;

/// Symmetric Chamfer distance: mean squared nearest-neighbour distance in
/// each direction, the two directions summed.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> f64 {
    mean_nearest(a.points(), b.points()) + mean_nearest(b.points(), a.points())
}

/// Same quantity computed with plain double loops.
pub fn chamfer_brute_force(a: &PointCloud, b: &PointCloud) -> f64 {
    brute_mean_nearest(a.points(), b.points()) + brute_mean_nearest(b.points(), a.points())
}

fn mean_nearest(from: &[Vec3], to: &[Vec3]) -> f64 {
    if to.len() <= BRUTE_FORCE_LIMIT {
        return brute_mean_nearest(from, to);
    }
    let tree = KdTree::new(to);
    let total: f64 = from.iter().map(|p| tree.nearest(p).map_or(0.0, |(d, _)| d)).sum();
    total / from.len() as f64
}

fn brute_mean_nearest(from: &[Vec3], to: &[Vec3]) -> f64 {
    let total: f64 =
        from.iter().map(|p| to.iter().map(|q| dist2(p, q)).fold(f64::INFINITY, f64::min)).sum();
    total / from.len() as f64
}
