//! Plain-text point formats.
//!
//! A cloud file holds one point per line as `x y z`, a parted file appends a
//! part label (`x y z label`) and starts with a `# category: <name>` header.
//! Blank lines and lines starting with `#` are ignored otherwise. Coordinates
//! are written with nine significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Category, Part, PartedShape};
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};

fn push_point(out: &mut String, p: &Vec3) {
    let _ = write!(out, "{:.8e} {:.8e} {:.8e}", p[0], p[1], p[2]);
}

pub fn format_cloud(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 48);
    for p in cloud.points() {
        push_point(&mut out, p);
        out.push('\n');
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    write_text(path.as_ref(), &format_cloud(cloud))
}

pub fn write_parted(path: impl AsRef<Path>, shape: &PartedShape) -> Result<()> {
    let mut out = format!("# category: {}\n", shape.category());
    for part in shape.parts() {
        for p in part.cloud.points() {
            push_point(&mut out, p);
            let _ = writeln!(out, " {}", part.label);
        }
    }
    write_text(path.as_ref(), &out)
}

/// One vector per line, space separated.
pub fn write_vectors(path: impl AsRef<Path>, vectors: &[Vec<f64>]) -> Result<()> {
    let mut out = String::new();
    for v in vectors {
        let line: Vec<String> = v.iter().map(|x| format!("{x:.8e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    write_text(path.as_ref(), &out)
}

struct Row<'a> {
    line: usize,
    values: Vec<f64>,
    label: Option<&'a str>,
}

#[derive(Clone, Copy, PartialEq)]
enum Columns {
    /// `x y z` with an optional ignored label.
    Cloud,
    /// `x y z label`.
    Labelled,
    /// Any number of values.
    Free,
}

fn rows<'a>(path: &Path, text: &'a str, columns: Columns) -> Result<Vec<Row<'a>>> {
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields: Vec<&str> = line.split_whitespace().collect();
        let label = match columns {
            Columns::Labelled if fields.len() != 4 => {
                return Err(Error::format(path, i + 1, format!("expected `x y z label`, got {} fields", fields.len())));
            }
            Columns::Labelled => fields.pop(),
            Columns::Cloud if fields.len() == 4 => fields.pop().and(None),
            _ => None,
        };
        let values = fields
            .iter()
            .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| Error::format(path, i + 1, format!("invalid number in `{line}`")))?;
        rows.push(Row { line: i + 1, values, label });
    }
    if rows.is_empty() {
        return Err(Error::format(path, 0, "no points"));
    }
    Ok(rows)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn to_point(path: &Path, row: &Row) -> Result<Vec3> {
    match row.values[..] {
        [x, y, z] => Ok([x, y, z]),
        _ => Err(Error::format(path, row.line, format!("expected 3 coordinates, got {}", row.values.len()))),
    }
}

/// Reads an XYZ file. A fourth label column, if present, is ignored.
pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut pts = Vec::new();
    for row in rows(path, &text, Columns::Cloud)? {
        pts.push(to_point(path, &row)?);
    }
    PointCloud::new(pts)
}

pub fn read_parted(path: impl AsRef<Path>) -> Result<PartedShape> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let category = text
        .lines()
        .find_map(|l| l.trim().strip_prefix("# category:"))
        .ok_or_else(|| Error::format(path, 1, "missing `# category:` header"))?
        .trim()
        .parse::<Category>()
        .map_err(|e| Error::format(path, 1, e.to_string()))?;
    let mut groups: Vec<(String, Vec<Vec3>)> = Vec::new();
    for row in rows(path, &text, Columns::Labelled)? {
        let p = to_point(path, &row)?;
        let label = row.label.expect("labelled row");
        match groups.iter_mut().find(|(l, _)| l == label) {
            Some((_, pts)) => pts.push(p),
            None => groups.push((label.to_string(), vec![p])),
        }
    }
    let parts = groups
        .into_iter()
        .map(|(label, pts)| Ok(Part { label, cloud: PointCloud::new(pts)? }))
        .collect::<Result<Vec<_>>>()?;
    PartedShape::new(category, parts)
}

pub fn read_vectors(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    Ok(rows(path, &text, Columns::Free)?.into_iter().map(|r| r.values).collect())
}
