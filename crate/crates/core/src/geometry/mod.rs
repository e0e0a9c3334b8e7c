//! Point sets and exact distances between them.
//!
//! Everything here is double precision and pure: no function mutates its
//! inputs or holds shared state, so batches can be evaluated from any thread.
//! Ties are broken towards the lowest index throughout.

mod chamfer;
mod cloud;
mod emd;
mod hausdorff;
mod kdtree;

pub use chamfer::{chamfer, chamfer_brute_force, BRUTE_FORCE_LIMIT};
pub use cloud::{PointCloud, Vec3};
pub use emd::{emd, emd_grad, emd_with_cap, Matching, DEFAULT_EMD_CAP};
pub use hausdorff::{hausdorff_uni, hausdorff_uni_grad, hausdorff_uni_with_grad};
pub use kdtree::KdTree;

#[inline]
pub(crate) fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
pub(crate) fn dist(a: &Vec3, b: &Vec3) -> f64 {
    dist2(a, b).sqrt()
}
