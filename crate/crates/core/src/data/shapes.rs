use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Table,
    Chair,
    Lamp,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Table, Category::Chair, Category::Lamp];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Table => "table",
            Category::Chair => "chair",
            Category::Lamp => "lamp",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown category {s:?} (expected table, chair or lamp)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Part {
    pub label: String,
    pub cloud: PointCloud,
}

/// A shape as labelled parts. At least two parts, labels unique.
#[derive(Debug, Clone, PartialEq)]
pub struct PartedShape {
    category: Category,
    parts: Vec<Part>,
}

impl PartedShape {
    pub fn new(category: Category, parts: Vec<Part>) -> Result<Self> {
        if parts.len() < 2 {
            return Err(Error::InvalidInput(format!("a parted shape needs at least 2 parts, got {}", parts.len())));
        }
        for (i, p) in parts.iter().enumerate() {
            if parts[..i].iter().any(|q| q.label == p.label) {
                return Err(Error::InvalidInput(format!("duplicate part label {:?}", p.label)));
            }
        }
        Ok(Self { category, parts })
    }

    pub fn category(&self) -> Category {
        self.category
    }

    pub fn parts(&self) -> &[Part] {
        &self.parts
    }

    pub fn labels(&self) -> Vec<&str> {
        self.parts.iter().map(|p| p.label.as_str()).collect()
    }

    pub fn num_points(&self) -> usize {
        self.parts.iter().map(|p| p.cloud.len()).sum()
    }

    /// All points, parts in order.
    pub fn union(&self) -> PointCloud {
        let clouds: Vec<&PointCloud> = self.parts.iter().map(|p| &p.cloud).collect();
        PointCloud::concat(&clouds).expect("parts are non-empty")
    }

    /// Union of the parts whose index is not in `removed`.
    pub(crate) fn union_without(&self, removed: &[usize]) -> Result<PointCloud> {
        let kept: Vec<&PointCloud> =
            self.parts.iter().enumerate().filter(|(i, _)| !removed.contains(i)).map(|(_, p)| &p.cloud).collect();
        PointCloud::concat(&kept)
    }
}

#[derive(Debug, Clone, Copy)]
enum Primitive {
    /// Axis-aligned box.
    Cuboid { center: Vec3, half: Vec3 },
    /// Cylinder along the y axis; `caps` adds the two discs.
    Cylinder { center: Vec3, radius: f64, half_height: f64, caps: bool },
}

impl Primitive {
    fn area(&self) -> f64 {
        match *self {
            Primitive::Cuboid { half: [a, b, c], .. } => 8.0 * (a * b + b * c + c * a),
            Primitive::Cylinder { radius, half_height, caps, .. } => {
                let side = 2.0 * std::f64::consts::PI * radius * 2.0 * half_height;
                side + if caps { 2.0 * std::f64::consts::PI * radius * radius } else { 0.0 }
            }
        }
    }

    fn sample(&self, rng: &mut Rng) -> Vec3 {
        match *self {
            Primitive::Cuboid { center, half } => {
                // pick a face pair by area, then a side
                let areas = [half[1] * half[2], half[0] * half[2], half[0] * half[1]];
                let mut pick = rng.random::<f64>() * (areas[0] + areas[1] + areas[2]);
                let mut axis = 2;
                for (d, a) in areas.iter().enumerate() {
                    if pick < *a {
                        axis = d;
                        break;
                    }
                    pick -= a;
                }
                let mut p = [0.0; 3];
                for d in 0..3 {
                    p[d] = if d == axis {
                        if rng.random::<bool>() { half[d] } else { -half[d] }
                    } else {
                        rng.random_range(-half[d]..=half[d])
                    };
                }
                [center[0] + p[0], center[1] + p[1], center[2] + p[2]]
            }
            Primitive::Cylinder { center, radius, half_height, caps } => {
                let side = 2.0 * half_height;
                let cap = if caps { radius / 2.0 } else { 0.0 };
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                if rng.random::<f64>() * (side + 2.0 * cap) < side {
                    let y = rng.random_range(-half_height..=half_height);
                    [center[0] + radius * theta.cos(), center[1] + y, center[2] + radius * theta.sin()]
                } else {
                    let r = radius * rng.random::<f64>().sqrt();
                    let y = if rng.random::<bool>() { half_height } else { -half_height };
                    [center[0] + r * theta.cos(), center[1] + y, center[2] + r * theta.sin()]
                }
            }
        }
    }
}

fn cuboid(center: Vec3, size: Vec3) -> Primitive {
    Primitive::Cuboid { center, half: [size[0] / 2.0, size[1] / 2.0, size[2] / 2.0] }
}

fn table(rng: &mut Rng) -> Vec<(String, Vec<Primitive>)> {
    let w = rng.random_range(0.9..1.6);
    let d = rng.random_range(0.5..1.0);
    let t = rng.random_range(0.03..0.08);
    let h = rng.random_range(0.5..1.0);
    let leg = rng.random_range(0.03..0.08);
    let inset = rng.random_range(0.0..0.15);
    let mut parts = vec![("top".to_string(), vec![cuboid([0.0, h - t / 2.0, 0.0], [w, t, d])])];
    let lx = w / 2.0 - inset - leg / 2.0;
    let lz = d / 2.0 - inset - leg / 2.0;
    let leg_h = h - t;
    for (i, (sx, sz)) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)].into_iter().enumerate() {
        parts.push((format!("leg{i}"), vec![cuboid([sx * lx, leg_h / 2.0, sz * lz], [leg, leg_h, leg])]));
    }
    parts
}

fn chair(rng: &mut Rng) -> Vec<(String, Vec<Primitive>)> {
    let w = rng.random_range(0.45..0.75);
    let d = rng.random_range(0.45..0.7);
    let t = rng.random_range(0.04..0.1);
    let h = rng.random_range(0.35..0.55);
    let back_h = rng.random_range(0.3..0.8);
    let back_t = rng.random_range(0.03..0.08);
    let leg = rng.random_range(0.03..0.07);
    let arm_h = rng.random_range(0.12..0.3);
    let arm_w = rng.random_range(0.03..0.07);
    let seat_top = h;
    let seat = vec![cuboid([0.0, h - t / 2.0, 0.0], [w, t, d])];
    let back = vec![cuboid([0.0, seat_top + back_h / 2.0, -d / 2.0 + back_t / 2.0], [w, back_h, back_t])];
    let leg_h = h - t;
    let (lx, lz) = (w / 2.0 - leg / 2.0, d / 2.0 - leg / 2.0);
    let base = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
        .into_iter()
        .map(|(sx, sz)| cuboid([sx * lx, leg_h / 2.0, sz * lz], [leg, leg_h, leg]))
        .collect();
    let arm = |side: f64| {
        let x = side * (w / 2.0 - arm_w / 2.0);
        let rest_len = d - back_t;
        vec![
            cuboid([x, seat_top + arm_h + arm_w / 2.0, back_t / 2.0], [arm_w, arm_w, rest_len]),
            cuboid([x, seat_top + arm_h / 2.0, d / 2.0 - arm_w / 2.0], [arm_w, arm_h, arm_w]),
        ]
    };
    vec![
        ("seat".to_string(), seat),
        ("back".to_string(), back),
        ("base".to_string(), base),
        ("arm0".to_string(), arm(-1.0)),
        ("arm1".to_string(), arm(1.0)),
    ]
}

fn lamp(rng: &mut Rng) -> Vec<(String, Vec<Primitive>)> {
    let base_r = rng.random_range(0.15..0.3);
    let base_h = rng.random_range(0.03..0.08);
    let pole_r = rng.random_range(0.015..0.04);
    let pole_h = rng.random_range(0.5..1.2);
    let shade_r = rng.random_range(0.15..0.35);
    let shade_h = rng.random_range(0.15..0.35);
    let cyl = |y: f64, radius: f64, height: f64, caps: bool| Primitive::Cylinder {
        center: [0.0, y, 0.0],
        radius,
        half_height: height / 2.0,
        caps,
    };
    vec![
        ("base".to_string(), vec![cyl(base_h / 2.0, base_r, base_h, true)]),
        ("pole".to_string(), vec![cyl(base_h + pole_h / 2.0, pole_r, pole_h, false)]),
        ("shade".to_string(), vec![cyl(base_h + pole_h, shade_r, shade_h, false)]),
    ]
}

/// Largest-remainder split of `total` proportional to `weights`.
fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let short = total - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

/// A random shape of `category` with `points` surface samples spread over
/// its parts by area, normalized into the unit sphere.
pub fn gen_shape(category: Category, points: usize, rng: &mut Rng) -> Result<PartedShape> {
    let spec = match category {
        Category::Table => table(rng),
        Category::Chair => chair(rng),
        Category::Lamp => lamp(rng),
    };
    if points < spec.len() {
        return Err(Error::InvalidInput(format!("{points} points cannot cover {} parts", spec.len())));
    }
    let part_areas: Vec<f64> = spec.iter().map(|(_, prims)| prims.iter().map(Primitive::area).sum()).collect();
    let mut counts = apportion(&part_areas, points);
    // every part keeps at least one point
    while let Some(i) = counts.iter().position(|&c| c == 0) {
        let donor = (0..counts.len()).max_by_key(|&j| (counts[j], usize::MAX - j)).expect("non-empty");
        counts[donor] -= 1;
        counts[i] += 1;
    }
    let mut raw = Vec::with_capacity(spec.len());
    for ((label, prims), count) in spec.into_iter().zip(counts) {
        let areas: Vec<f64> = prims.iter().map(Primitive::area).collect();
        let per_prim = apportion(&areas, count);
        let mut pts = Vec::with_capacity(count);
        for (prim, n) in prims.iter().zip(per_prim) {
            pts.extend((0..n).map(|_| prim.sample(rng)));
        }
        raw.push((label, PointCloud::new(pts)?));
    }
    let clouds: Vec<&PointCloud> = raw.iter().map(|(_, c)| c).collect();
    let (center, scale) = PointCloud::concat(&clouds)?.normalization();
    let parts = raw
        .into_iter()
        .map(|(label, cloud)| Part { label, cloud: cloud.transformed(&center, scale) })
        .collect();
    PartedShape::new(category, parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn table_has_top_and_four_legs() {
        for seed in 0..20 {
            let s = gen_shape(Category::Table, 256, &mut rng::seeded(seed)).unwrap();
            assert_eq!(s.labels(), vec!["top", "leg0", "leg1", "leg2", "leg3"]);
            assert_eq!(s.num_points(), 256);
            assert!(s.union().is_normalized());
        }
    }

    #[test]
    fn every_category_is_valid() {
        for c in Category::ALL {
            for seed in 0..10 {
                let s = gen_shape(c, 256, &mut rng::seeded(seed)).unwrap();
                assert!(s.parts().len() >= 2);
                assert_eq!(s.num_points(), 256);
                assert!(s.union().is_normalized());
                assert!(s.parts().iter().all(|p| !p.cloud.is_empty()));
            }
        }
        let chair = gen_shape(Category::Chair, 256, &mut rng::seeded(1)).unwrap();
        assert_eq!(chair.parts().len(), 5);
    }

    #[test]
    fn apportion_sums_to_total() {
        assert_eq!(apportion(&[1.0, 1.0, 1.0], 10), vec![4, 3, 3]);
        assert_eq!(apportion(&[3.0, 1.0], 8).iter().sum::<usize>(), 8);
    }

    #[test]
    fn category_parsing() {
        assert_eq!("chair".parse::<Category>().unwrap(), Category::Chair);
        assert!("sofa".parse::<Category>().is_err());
    }
}
