use rand::seq::index;
use rand::Rng as _;

use super::PartedShape;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::rng::Rng;

/// Exactly `target` points drawn from `cloud`: a sorted random subset when
/// there are enough, otherwise every point plus uniform draws with
/// replacement.
pub fn resample(cloud: &PointCloud, target: usize, rng: &mut Rng) -> Result<PointCloud> {
    if target == 0 {
        return Err(Error::InvalidInput("cannot resample to zero points".into()));
    }
    let n = cloud.len();
    let picks: Vec<usize> = if n >= target {
        let mut idx = index::sample(rng, n, target).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).chain((0..target - n).map(|_| rng.random_range(0..n))).collect()
    };
    cloud.select(&picks)
}

/// Tiles the points of `p` in order until there are `n`; the last copy is
/// truncated.
pub fn duplicate_to_n(p: &PointCloud, n: usize) -> Result<PointCloud> {
    if p.len() > n {
        return Err(Error::InvalidInput(format!("cannot tile {} points down to {n}", p.len())));
    }
    let pts = p.points();
    PointCloud::new((0..n).map(|i| pts[i % pts.len()]).collect())
}

/// Deletes a uniformly drawn number `j` in `[1, k-1]` of the `k` parts and
/// resamples the survivors to `points`. Returns the removed labels in part
/// order.
pub fn remove_parts(shape: &PartedShape, points: usize, rng: &mut Rng) -> Result<(PointCloud, Vec<String>)> {
    let k = shape.parts().len();
    let j = rng.random_range(1..k);
    remove_n_parts(shape, j, points, rng)
}

/// As [`remove_parts`] with a fixed count `j`.
pub fn remove_n_parts(shape: &PartedShape, j: usize, points: usize, rng: &mut Rng) -> Result<(PointCloud, Vec<String>)> {
    let (kept, labels) = strip_parts(shape, j, rng)?;
    Ok((resample(&kept, points, rng)?, labels))
}

/// Union of the parts left after deleting `j` random ones, with the removed
/// labels.
pub(crate) fn strip_parts(shape: &PartedShape, j: usize, rng: &mut Rng) -> Result<(PointCloud, Vec<String>)> {
    let k = shape.parts().len();
    if j == 0 || j >= k {
        return Err(Error::InvalidInput(format!("can remove between 1 and {} of {k} parts, not {j}", k - 1)));
    }
    let mut removed = index::sample(rng, k, j).into_vec();
    removed.sort_unstable();
    let kept = shape.union_without(&removed)?;
    let labels = removed.iter().map(|&i| shape.parts()[i].label.clone()).collect();
    Ok((kept, labels))
}
