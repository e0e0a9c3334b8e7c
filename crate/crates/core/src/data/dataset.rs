//! Dataset generation and the JSON manifest.
//!
//! Layout under the output root:
//!
//! ```text
//! manifest.json
//! complete/<id>.xyz         labelled complete shape (`x y z label`)
//! partial/<id>_<n>.xyz      partial clouds
//! ```
//!
//! The manifest records, per shape: id, category, split, the complete file,
//! the part labels and every partial with its provenance (removed labels and,
//! for scans, the camera pose). Paths are relative to the manifest.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::partial::strip_parts;
use super::{gen_shape, read_cloud, read_parted, resample, scan_union, uniform_views, virtual_scan, write_cloud,
            write_parted, Category, PartedShape, ScanConfig, ScanPose};
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};
use crate::rng::stream;

pub const MANIFEST_VERSION: u32 = 1;

/// How partial shapes are made.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Delete random parts.
    Parts,
    /// Delete random parts, then keep what one camera sees.
    Scan,
    /// One partial of each kind.
    Both,
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parts" => Ok(Protocol::Parts),
            "scan" => Ok(Protocol::Scan),
            "both" => Ok(Protocol::Both),
            _ => Err(Error::InvalidInput(format!("unknown protocol {s:?} (expected parts, scan or both)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Roughly one id in five lands in the test split, decided by a hash of the
/// id alone.
pub fn is_test_id(id: &str) -> bool {
    Sha256::digest(id.as_bytes())[0] % 5 == 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    PartsRemoved { removed: Vec<String> },
    Scan { view: Vec3, up: Vec3, removed: Vec<String> },
}

impl Provenance {
    pub fn removed(&self) -> &[String] {
        match self {
            Provenance::PartsRemoved { removed } | Provenance::Scan { removed, .. } => removed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub categories: Vec<Category>,
    /// Shapes per category.
    pub count: usize,
    pub seed: u64,
    pub preset: String,
    /// Points per complete cloud.
    pub points: usize,
    /// Points per partial cloud.
    pub partial_points: usize,
    pub protocol: Protocol,
    /// Scan partials per shape.
    pub scan_views: usize,
    /// Views whose union forms the complete cloud under the scan protocol.
    pub complete_views: usize,
    pub scan: ScanConfig,
}

impl DatasetSpec {
    pub fn new(categories: Vec<Category>, count: usize, seed: u64) -> Self {
        Self {
            categories,
            count,
            seed,
            preset: "desk".into(),
            points: 256,
            partial_points: 128,
            protocol: Protocol::Parts,
            scan_views: 1,
            complete_views: 6,
            scan: ScanConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.categories.is_empty() || self.count == 0 {
            return Err(Error::InvalidInput("dataset needs at least one category and one shape".into()));
        }
        if self.partial_points == 0 || self.partial_points > self.points {
            return Err(Error::InvalidInput(format!(
                "partial size {} must be in 1..={}",
                self.partial_points, self.points
            )));
        }
        if self.scan_views == 0 || self.complete_views == 0 {
            return Err(Error::InvalidInput("view counts must be positive".into()));
        }
        Ok(())
    }
}

/// One generated shape with its partials.
#[derive(Debug, Clone)]
pub struct ShapeSample {
    pub id: String,
    pub split: Split,
    pub shape: PartedShape,
    pub complete: PointCloud,
    pub partials: Vec<(PointCloud, Provenance)>,
}

fn scan_partial(
    shape: &PartedShape,
    spec: &DatasetSpec,
    rng: &mut crate::rng::Rng,
) -> Result<(PointCloud, Provenance)> {
    let k = shape.parts().len();
    let j = rng.random_range(1..k);
    let (kept, removed) = strip_parts(shape, j, rng)?;
    for _ in 0..16 {
        let pose = ScanPose::random(rng)?;
        match virtual_scan(&kept, &pose, spec.partial_points, &spec.scan, rng) {
            Ok(p) => return Ok((p, Provenance::Scan { view: pose.view(), up: pose.up(), removed })),
            Err(Error::DegenerateScan) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::DegenerateScan)
}

fn make_sample(spec: &DatasetSpec, category: Category, i: usize) -> Result<ShapeSample> {
    let id = format!("{category}_{i:04}");
    let mut rng = stream(spec.seed, &format!("shape/{category}"), i as u64);
    let shape = gen_shape(category, spec.points, &mut rng)?;
    let union = shape.union();
    let mut partials = Vec::new();
    if matches!(spec.protocol, Protocol::Parts | Protocol::Both) {
        let k = shape.parts().len();
        let j = rng.random_range(1..k);
        let (kept, removed) = strip_parts(&shape, j, &mut rng)?;
        partials.push((resample(&kept, spec.partial_points, &mut rng)?, Provenance::PartsRemoved { removed }));
    }
    let complete = if matches!(spec.protocol, Protocol::Scan | Protocol::Both) {
        for _ in 0..spec.scan_views {
            partials.push(scan_partial(&shape, spec, &mut rng)?);
        }
        scan_union(&union, &uniform_views(spec.complete_views), spec.points, &spec.scan, &mut rng)?
    } else {
        union
    };
    let split = if is_test_id(&id) { Split::Test } else { Split::Train };
    Ok(ShapeSample { id, split, shape, complete, partials })
}

/// Generates every shape in memory. Each shape draws from its own stream, so
/// the result does not depend on thread scheduling.
pub fn generate_samples(spec: &DatasetSpec) -> Result<Vec<ShapeSample>> {
    spec.validate()?;
    let jobs: Vec<(Category, usize)> =
        spec.categories.iter().flat_map(|&c| (0..spec.count).map(move |i| (c, i))).collect();
    jobs.into_par_iter().map(|(c, i)| make_sample(spec, c, i)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialEntry {
    pub file: PathBuf,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub category: Category,
    pub split: Split,
    pub complete: PathBuf,
    pub parts: Vec<String>,
    pub partials: Vec<PartialEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub preset: String,
    pub points: usize,
    pub partial_points: usize,
    pub protocol: Protocol,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Parses a manifest without touching the files it references.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.line(), e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::format(path, 0, format!("unsupported manifest version {}", m.version)));
        }
        Ok(m)
    }

    /// Checks ids are unique and every referenced file exists, parses and has
    /// the declared cardinality. `root` is the manifest's directory.
    pub fn validate(&self, root: &Path) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate id {}", e.id)));
            }
            let bad = |what: String| Error::InvalidInput(format!("entry {}: {what}", e.id));
            let shape = read_parted(root.join(&e.complete)).map_err(|err| bad(err.to_string()))?;
            if shape.num_points() != self.points || shape.category() != e.category {
                return Err(bad(format!("complete file {} does not match the manifest", e.complete.display())));
            }
            for p in &e.partials {
                let c = read_cloud(root.join(&p.file)).map_err(|err| bad(err.to_string()))?;
                if c.len() != self.partial_points {
                    return Err(bad(format!("{} has {} points, expected {}", p.file.display(), c.len(), self.partial_points)));
                }
            }
        }
        Ok(())
    }

    /// Loads every shape and partial. Under the scan protocol the stored
    /// complete cloud is the labelled union itself.
    pub fn read_samples(&self, root: &Path) -> Result<Vec<ShapeSample>> {
        self.entries
            .iter()
            .map(|e| {
                let shape = read_parted(root.join(&e.complete))?;
                let partials = e
                    .partials
                    .iter()
                    .map(|p| Ok((read_cloud(root.join(&p.file))?, p.provenance.clone())))
                    .collect::<Result<Vec<_>>>()?;
                Ok(ShapeSample { id: e.id.clone(), split: e.split, complete: shape.union(), shape, partials })
            })
            .collect()
    }
}

/// Generates the dataset and writes it under `out`, returning the manifest.
pub fn generate_dataset(spec: &DatasetSpec, out: &Path) -> Result<DatasetManifest> {
    let samples = generate_samples(spec)?;
    let mut entries = Vec::with_capacity(samples.len());
    for s in &samples {
        let complete = PathBuf::from("complete").join(format!("{}.xyz", s.id));
        write_parted(out.join(&complete), &s.shape)?;
        let mut partials = Vec::new();
        for (n, (cloud, prov)) in s.partials.iter().enumerate() {
            let file = PathBuf::from("partial").join(format!("{}_{n}.xyz", s.id));
            write_cloud(out.join(&file), cloud)?;
            partials.push(PartialEntry { file, provenance: prov.clone() });
        }
        entries.push(ManifestEntry {
            id: s.id.clone(),
            category: s.shape.category(),
            split: s.split,
            complete,
            parts: s.shape.labels().iter().map(|l| l.to_string()).collect(),
            partials,
        });
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        seed: spec.seed,
        preset: spec.preset.clone(),
        points: spec.points,
        partial_points: spec.partial_points,
        protocol: spec.protocol,
        entries,
    };
    manifest.save(out.join("manifest.json"))?;
    Ok(manifest)
}
