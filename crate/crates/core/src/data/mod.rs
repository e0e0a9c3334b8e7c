//! Synthetic part-labelled shapes and the two incompleteness protocols.
//!
//! Complete shapes are unions of labelled primitive parts, surface-sampled
//! and normalized into the unit sphere. Partial shapes come either from
//! deleting whole parts or from a single-view virtual scan. Every partial is
//! drawn from its source's points, so partiality never invents geometry.

mod dataset;
mod io;
mod partial;
mod scan;
mod shapes;

pub use dataset::{
    generate_dataset, generate_samples, is_test_id, DatasetManifest, DatasetSpec, ManifestEntry, PartialEntry, Protocol,
    Provenance, ShapeSample, Split, MANIFEST_VERSION,
};
pub use io::{format_cloud, read_cloud, read_parted, read_vectors, write_cloud, write_parted, write_vectors};
pub use partial::{duplicate_to_n, remove_n_parts, remove_parts, resample};
pub use scan::{scan_union, uniform_views, virtual_scan, visible_indices, ScanConfig, ScanPose};
pub use shapes::{gen_shape, Category, Part, PartedShape};
