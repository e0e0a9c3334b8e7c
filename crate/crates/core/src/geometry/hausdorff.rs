use super::{dist2, KdTree, PointCloud, Vec3};

/// Worst-covered source point and its nearest target: `(i*, j*, distance)`.
fn extremal_pair(p: &PointCloud, c: &PointCloud) -> (usize, usize, f64) {
    let (src, dst) = (p.points(), c.points());
    let tree = (dst.len() > super::BRUTE_FORCE_LIMIT).then(|| KdTree::new(dst));
    let mut worst = (0usize, 0usize, f64::NEG_INFINITY);
    for (i, x) in src.iter().enumerate() {
        let (d2, j) = match &tree {
            Some(t) => t.nearest(x).expect("non-empty cloud"),
            None => nearest_linear(x, dst),
        };
        // strict: the lowest source index keeps the maximum on ties
        if d2 > worst.2 {
            worst = (i, j, d2);
        }
    }
    (worst.0, worst.1, worst.2.sqrt())
}

fn nearest_linear(x: &Vec3, dst: &[Vec3]) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0usize);
    for (j, y) in dst.iter().enumerate() {
        let d = dist2(x, y);
        if d < best.0 {
            best = (d, j);
        }
    }
    best
}

/// One-sided Hausdorff distance `max_{x in p} min_{y in c} |x - y|`, measuring
/// how well `c` covers `p`.
pub fn hausdorff_uni(p: &PointCloud, c: &PointCloud) -> f64 {
    extremal_pair(p, c).2
}

/// Gradient of [`hausdorff_uni`] with respect to the points of `c`. Only the
/// nearest neighbour of the worst-covered point of `p` receives gradient.
pub fn hausdorff_uni_grad(p: &PointCloud, c: &PointCloud) -> Vec<Vec3> {
    hausdorff_uni_with_grad(p, c).1
}

pub fn hausdorff_uni_with_grad(p: &PointCloud, c: &PointCloud) -> (f64, Vec<Vec3>) {
    let (i, j, d) = extremal_pair(p, c);
    let mut grad = vec![[0.0; 3]; c.len()];
    if d > 0.0 {
        let (x, y) = (p.points()[i], c.points()[j]);
        for k in 0..3 {
            grad[j][k] = -(x[k] - y[k]) / d;
        }
    }
    (d, grad)
}
